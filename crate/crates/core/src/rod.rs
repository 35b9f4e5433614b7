//! Discrete Cosserat rod.
//!
//! A rod of `n_elem` cylindrical elements is carried by `n_elem + 1` center-line
//! nodes (lab frame) and one director frame per element. Director frames are
//! stored as matrices whose rows are `d1, d2, d3`, so `Q * v_lab` gives local
//! components. Curvature lives on the `n_elem - 1` interior (Voronoi) nodes.
//!
//! Discrete elastic energy
//!
//! ```text
//! E = 1/2 sum_i l0_i eps_i . S_i eps_i  +  1/2 sum_k D_k kappa_k . B_k kappa_k
//! eps_i   = Q_i (x_{i+1} - x_i) / l0_i - e3
//! kappa_k = log(Q_k Q_{k+1}^T) / D_k
//! ```
//!
//! Nodal forces are the exact gradient of the shear/stretch term; element couples
//! follow the standard `dtau + kappa x tau + Q x_s x n` form. Time stepping is the
//! position-Verlet scheme: half drift, kick at the midpoint, half drift.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::so3;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Safety factor applied to [`RodState::stability_bound`].
pub const DEFAULT_CFL_SAFETY: f64 = 0.3;

/// Element lengths below this are treated as collapsed.
pub const MIN_ELEMENT_LENGTH: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RodError {
    #[error("invalid rod parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("n_elem too small: got {0}, need at least 2")]
    TooFewElements(usize),
    #[error("singular geometry: element {element} has length {length:e} m")]
    SingularGeometry { element: usize, length: f64 },
    #[error("rod state diverged (non-finite values) at step {step}")]
    Divergence { step: u64 },
    #[error("load field shape does not match rod: {0}")]
    ShapeMismatch(String),
}

/// Cross-section radius along the rod.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusProfile {
    Uniform(f64),
    /// Linear taper from `start` (s = 0) to `end` (s = L), sampled at element centers.
    Linear {
        start: f64,
        end: f64,
    },
    PerElement(Vec<f64>),
}

impl RadiusProfile {
    fn element_radii(&self, n_elem: usize) -> Vec<f64> {
        match self {
            RadiusProfile::Uniform(r) => vec![*r; n_elem],
            RadiusProfile::Linear { start, end } => (0..n_elem)
                .map(|i| {
                    let s = (i as f64 + 0.5) / n_elem as f64;
                    start + (end - start) * s
                })
                .collect(),
            RadiusProfile::PerElement(r) => r.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RodGeometry {
    pub length: f64,
    pub radius: RadiusProfile,
    pub n_elem: usize,
    /// Position of node 0.
    #[serde(default)]
    pub origin: [f64; 3],
    /// Rod axis; becomes `d3` of every element.
    #[serde(default = "default_direction")]
    pub direction: [f64; 3],
    /// Reference normal; orthogonalized against `direction` to give `d1`.
    #[serde(default = "default_normal")]
    pub normal: [f64; 3],
}

fn default_direction() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn default_normal() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

impl RodGeometry {
    pub fn straight(length: f64, radius: f64, n_elem: usize) -> Self {
        Self {
            length,
            radius: RadiusProfile::Uniform(radius),
            n_elem,
            origin: [0.0; 3],
            direction: default_direction(),
            normal: default_normal(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// kg/m^3
    pub density: f64,
    /// Pa
    pub youngs_modulus: f64,
    /// Pa
    pub shear_modulus: f64,
    /// Timoshenko shear correction factor.
    pub shear_correction: f64,
    /// Rayleigh damping rate, 1/s.
    pub damping: f64,
}

impl Material {
    /// Isotropic material with shear modulus from Poisson's ratio.
    pub fn isotropic(density: f64, youngs_modulus: f64, poisson: f64, damping: f64) -> Self {
        Self {
            density,
            youngs_modulus,
            shear_modulus: youngs_modulus / (2.0 * (1.0 + poisson)),
            shear_correction: 4.0 / 3.0,
            damping,
        }
    }
}

/// Zero-displacement / zero-rotation anchor at the base.
///
/// Node 0 is held at `position`. The base cross-section (s = 0) is held at
/// `director` through a boundary curvature over the half Voronoi domain
/// `l0 / 2` between the clamp frame and element 0, which keeps the discrete
/// cantilever second-order accurate.
#[derive(Debug, Clone, PartialEq)]
pub struct Clamp {
    pub position: Vec3,
    pub director: Mat3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RodState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub directors: Vec<Mat3>,
    /// Local frame.
    pub angular_velocities: Vec<Vec3>,
    pub ref_lengths: Vec<f64>,
    pub radii: Vec<f64>,
    pub areas: Vec<f64>,
    /// Diagonal of the second area moment (I1, I2, I3) per element.
    pub second_moments: Vec<Vec3>,
    pub material: Material,
    /// Rest Voronoi lengths at interior nodes.
    pub voronoi_lengths: Vec<f64>,
    pub node_masses: Vec<f64>,
    /// Diagonal of rho * I * l0 per element.
    pub element_inertia: Vec<Vec3>,
    pub clamp: Option<Clamp>,
    pub step_count: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StrainField {
    /// Local frame, one per element.
    pub shear_strain: Vec<Vec3>,
    /// Local frame, one per interior node.
    pub curvature: Vec<Vec3>,
    /// Current length over rest length, per element.
    pub stretch: Vec<f64>,
    /// Curvature between the clamp frame and element 0, when clamped.
    pub base_curvature: Option<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadField {
    /// Local frame, per element.
    pub internal_forces: Vec<Vec3>,
    /// Local frame, per interior node.
    pub internal_torques: Vec<Vec3>,
    /// Lab frame, per node.
    pub external_forces: Vec<Vec3>,
    /// Lab frame, per element.
    pub external_couples: Vec<Vec3>,
}

/// External forces (per node) and couples (per element), lab frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalLoads {
    pub forces: Vec<Vec3>,
    pub couples: Vec<Vec3>,
}

impl ExternalLoads {
    pub fn zeros(n_elem: usize) -> Self {
        Self { forces: vec![Vec3::zeros(); n_elem + 1], couples: vec![Vec3::zeros(); n_elem] }
    }

    pub fn for_rod(rod: &RodState) -> Self {
        Self::zeros(rod.n_elem())
    }

    /// Uniform body force `m_i * g` on every node.
    pub fn gravity(rod: &RodState, g: Vec3) -> Self {
        let mut loads = Self::for_rod(rod);
        loads.add_gravity(rod, g);
        loads
    }

    pub fn add_gravity(&mut self, rod: &RodState, g: Vec3) {
        for (f, m) in self.forces.iter_mut().zip(&rod.node_masses) {
            *f += *m * g;
        }
    }

    pub fn add(&mut self, other: &ExternalLoads) {
        for (a, b) in self.forces.iter_mut().zip(&other.forces) {
            *a += b;
        }
        for (a, b) in self.couples.iter_mut().zip(&other.couples) {
            *a += b;
        }
    }

    pub fn clear(&mut self) {
        self.forces.iter_mut().for_each(|f| *f = Vec3::zeros());
        self.couples.iter_mut().for_each(|c| *c = Vec3::zeros());
    }

    pub fn net_force(&self) -> Vec3 {
        self.forces.iter().sum()
    }
}

impl LoadField {
    pub fn zeros(n_elem: usize) -> Self {
        Self {
            internal_forces: vec![Vec3::zeros(); n_elem],
            internal_torques: vec![Vec3::zeros(); n_elem.saturating_sub(1)],
            external_forces: vec![Vec3::zeros(); n_elem + 1],
            external_couples: vec![Vec3::zeros(); n_elem],
        }
    }

    pub fn add_external(&mut self, ext: &ExternalLoads) {
        for (a, b) in self.external_forces.iter_mut().zip(&ext.forces) {
            *a += b;
        }
        for (a, b) in self.external_couples.iter_mut().zip(&ext.couples) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RodEnergies {
    /// Translational, 1/2 int rho A v.v ds.
    pub kinetic: f64,
    /// 1/2 sum omega . J omega.
    pub rotational: f64,
    /// 1/2 int kappa . tau ds.
    pub bending: f64,
    pub shear_stretch: f64,
}

impl RodEnergies {
    pub fn total(&self) -> f64 {
        self.kinetic + self.rotational + self.bending + self.shear_stretch
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), RodError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(RodError::InvalidParameter { field, reason: format!("must be finite and > 0, got {v}") })
    }
}

/// Director frame with rows `d1, d2, d3`.
pub fn frame_from_axis(direction: Vec3, normal: Vec3) -> Result<Mat3, RodError> {
    let d3 = direction
        .try_normalize(1e-12)
        .ok_or_else(|| RodError::InvalidParameter { field: "direction", reason: "zero vector".into() })?;
    let d1 = (normal - normal.dot(&d3) * d3)
        .try_normalize(1e-12)
        .ok_or_else(|| RodError::InvalidParameter { field: "normal", reason: "parallel to direction".into() })?;
    let d2 = d3.cross(&d1);
    Ok(Mat3::from_rows(&[d1.transpose(), d2.transpose(), d3.transpose()]))
}

/// Straight rod at rest along `geometry.direction`.
pub fn build_rod(geometry: &RodGeometry, material: &Material) -> Result<RodState, RodError> {
    let n = geometry.n_elem;
    if n < 2 {
        return Err(RodError::TooFewElements(n));
    }
    positive("length", geometry.length)?;
    positive("density", material.density)?;
    positive("youngs_modulus", material.youngs_modulus)?;
    positive("shear_modulus", material.shear_modulus)?;
    positive("shear_correction", material.shear_correction)?;
    if !(material.damping.is_finite() && material.damping >= 0.0) {
        return Err(RodError::InvalidParameter {
            field: "damping",
            reason: format!("must be finite and >= 0, got {}", material.damping),
        });
    }
    let radii = geometry.radius.element_radii(n);
    if radii.len() != n {
        return Err(RodError::InvalidParameter {
            field: "radius",
            reason: format!("expected {n} per-element radii, got {}", radii.len()),
        });
    }
    for &r in &radii {
        positive("radius", r)?;
    }

    let dir = Vec3::from(geometry.direction);
    let frame = frame_from_axis(dir, Vec3::from(geometry.normal))?;
    let tangent = dir.normalize();
    let origin = Vec3::from(geometry.origin);
    let l0 = geometry.length / n as f64;

    let positions: Vec<Vec3> = (0..=n).map(|i| origin + tangent * (l0 * i as f64)).collect();
    let ref_lengths = vec![l0; n];
    let areas: Vec<f64> = radii.iter().map(|r| std::f64::consts::PI * r * r).collect();
    let second_moments: Vec<Vec3> = radii
        .iter()
        .map(|r| {
            let i1 = std::f64::consts::PI * r.powi(4) / 4.0;
            Vec3::new(i1, i1, 2.0 * i1)
        })
        .collect();

    Ok(RodState::from_parts(positions, vec![frame; n], ref_lengths, radii, areas, second_moments, *material))
}

impl RodState {
    /// Assemble a rod from explicit rest geometry. Velocities start at zero.
    pub fn from_parts(
        positions: Vec<Vec3>,
        directors: Vec<Mat3>,
        ref_lengths: Vec<f64>,
        radii: Vec<f64>,
        areas: Vec<f64>,
        second_moments: Vec<Vec3>,
        material: Material,
    ) -> Self {
        let n = directors.len();
        debug_assert_eq!(positions.len(), n + 1);
        let rho = material.density;
        let mut node_masses = vec![0.0; n + 1];
        for i in 0..n {
            let m = rho * areas[i] * ref_lengths[i];
            node_masses[i] += 0.5 * m;
            node_masses[i + 1] += 0.5 * m;
        }
        let element_inertia = (0..n).map(|i| rho * ref_lengths[i] * second_moments[i]).collect();
        let voronoi_lengths = (0..n.saturating_sub(1)).map(|k| 0.5 * (ref_lengths[k] + ref_lengths[k + 1])).collect();
        Self {
            velocities: vec![Vec3::zeros(); n + 1],
            angular_velocities: vec![Vec3::zeros(); n],
            positions,
            directors,
            ref_lengths,
            radii,
            areas,
            second_moments,
            material,
            voronoi_lengths,
            node_masses,
            element_inertia,
            clamp: None,
            step_count: 0,
        }
    }

    pub fn n_elem(&self) -> usize {
        self.directors.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn rest_length(&self) -> f64 {
        self.ref_lengths.iter().sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.node_masses.iter().sum()
    }

    pub fn tip(&self) -> Vec3 {
        *self.positions.last().expect("rod has nodes")
    }

    pub fn center_of_mass(&self) -> Vec3 {
        let m = self.total_mass();
        self.positions.iter().zip(&self.node_masses).map(|(x, mi)| *mi * x).sum::<Vec3>() / m
    }

    pub fn linear_momentum(&self) -> Vec3 {
        self.velocities.iter().zip(&self.node_masses).map(|(v, m)| *m * v).sum()
    }

    /// Anchor node 0 and the base cross-section at their current placement.
    pub fn clamp_base(&mut self) {
        self.clamp = Some(Clamp { position: self.positions[0], director: self.directors[0] });
        self.velocities[0] = Vec3::zeros();
    }

    /// Half Voronoi length of the base boundary domain.
    pub fn base_voronoi_length(&self) -> f64 {
        0.5 * self.ref_lengths[0]
    }

    pub fn release_base(&mut self) {
        self.clamp = None;
    }

    /// Shear stiffness diagonal `(alpha G A, alpha G A, E A)` of element `i`.
    pub fn shear_stiffness(&self, i: usize) -> Vec3 {
        let m = &self.material;
        let a = self.areas[i];
        Vec3::new(
            m.shear_correction * m.shear_modulus * a,
            m.shear_correction * m.shear_modulus * a,
            m.youngs_modulus * a,
        )
    }

    pub fn element_bend_stiffness(&self, i: usize) -> Vec3 {
        let m = &self.material;
        let inertia = self.second_moments[i];
        Vec3::new(m.youngs_modulus * inertia.x, m.youngs_modulus * inertia.y, m.shear_modulus * inertia.z)
    }

    /// Bend/twist stiffness at interior node `k`, length-weighted from the two
    /// neighbouring elements.
    pub fn bend_stiffness(&self, k: usize) -> Vec3 {
        let (la, lb) = (self.ref_lengths[k], self.ref_lengths[k + 1]);
        (self.element_bend_stiffness(k) * la + self.element_bend_stiffness(k + 1) * lb) / (la + lb)
    }

    /// Safety factor times [`RodState::stability_bound`].
    pub fn stable_time_step(&self) -> f64 {
        self.stability_bound() * DEFAULT_CFL_SAFETY
    }

    /// Critical explicit time step, the smaller of the axial limit
    /// `l0 * sqrt(rho / E)` and the limit of the highest coupled
    /// shear-rotation mode, minimized over elements. The second one governs
    /// once elements are longer than about one radius.
    pub fn stability_bound(&self) -> f64 {
        let m = &self.material;
        let shear = m.shear_correction * m.shear_modulus;
        (0..self.n_elem())
            .map(|i| {
                let l0 = self.ref_lengths[i];
                let axial = l0 * (m.density / m.youngs_modulus).sqrt();
                let i_min = self.second_moments[i].x.min(self.second_moments[i].y);
                let omega_sq =
                    (4.0 * (m.youngs_modulus + shear) / (l0 * l0) + shear * self.areas[i] / i_min) / m.density;
                axial.min(2.0 / omega_sq.sqrt())
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest `|Q^T Q - I|` entry over all frames.
    pub fn max_orthonormality_error(&self) -> f64 {
        self.directors.iter().map(|q| (q.transpose() * q - Mat3::identity()).abs().max()).fold(0.0, f64::max)
    }

    /// Drift positions and rotate directors by `h` with the current velocities.
    pub fn kinematic_update(&mut self, h: f64) {
        for (x, v) in self.positions.iter_mut().zip(&self.velocities) {
            *x += h * v;
        }
        for (q, w) in self.directors.iter_mut().zip(&self.angular_velocities) {
            *q = so3::orthonormalize(&(so3::exp(&(-h * w)) * *q));
        }
        self.enforce_clamp_positions();
    }

    fn enforce_clamp_positions(&mut self) {
        if let Some(c) = &self.clamp {
            self.positions[0] = c.position;
        }
    }

    fn enforce_clamp_velocities(&mut self) {
        if self.clamp.is_some() {
            self.velocities[0] = Vec3::zeros();
        }
    }

    /// Net nodal forces (lab) and element couples (local) for the given loads,
    /// including Rayleigh damping but not the gyroscopic term, which the kick
    /// treats implicitly.
    pub fn generalized_forces(&self, loads: &LoadField, strains: &StrainField) -> (Vec<Vec3>, Vec<Vec3>) {
        let mut forces = Vec::new();
        let mut couples = Vec::new();
        self.generalized_forces_into(loads, strains, &mut forces, &mut couples);
        (forces, couples)
    }

    pub fn generalized_forces_into(
        &self,
        loads: &LoadField,
        strains: &StrainField,
        forces: &mut Vec<Vec3>,
        couples: &mut Vec<Vec3>,
    ) {
        let n = self.n_elem();
        let gamma = self.material.damping;
        forces.clear();
        forces.extend(
            loads
                .external_forces
                .iter()
                .zip(&self.velocities)
                .zip(&self.node_masses)
                .map(|((f, v), m)| f - gamma * m * v),
        );
        for i in 0..n {
            let lab = self.directors[i].transpose() * loads.internal_forces[i];
            forces[i] += lab;
            forces[i + 1] -= lab;
        }

        couples.clear();
        for i in 0..n {
            let q = &self.directors[i];
            let right = if i + 1 < n {
                let k = i;
                loads.internal_torques[k]
                    + 0.5 * self.voronoi_lengths[k] * strains.curvature[k].cross(&loads.internal_torques[k])
            } else {
                Vec3::zeros()
            };
            let left = if i > 0 {
                let k = i - 1;
                -loads.internal_torques[k]
                    + 0.5 * self.voronoi_lengths[k] * strains.curvature[k].cross(&loads.internal_torques[k])
            } else if let Some(kappa) = strains.base_curvature {
                let tau = self.element_bend_stiffness(0).component_mul(&kappa);
                -tau + 0.5 * self.base_voronoi_length() * kappa.cross(&tau)
            } else {
                Vec3::zeros()
            };
            let chord = q * (self.positions[i + 1] - self.positions[i]);
            let shear_couple = chord.cross(&loads.internal_forces[i]);
            let jw = self.element_inertia[i].component_mul(&self.angular_velocities[i]);
            couples.push(right + left + shear_couple + q * loads.external_couples[i] - gamma * jw);
        }
    }

    /// Kick: update velocities by `dt` from the given loads.
    pub fn dynamic_update(&mut self, loads: &LoadField, strains: &StrainField, dt: f64) {
        let (forces, couples) = self.generalized_forces(loads, strains);
        for ((v, f), m) in self.velocities.iter_mut().zip(&forces).zip(&self.node_masses) {
            *v += (dt / m) * f;
        }
        self.kick_angular(&couples, dt);
        self.enforce_clamp_velocities();
    }

    /// Kick with an additional axial dashpot per element, treated linearly
    /// implicitly. `axial_damping[i] = dn3/d(stretch rate) / l0` (N s/m) is the
    /// linearization of a velocity-dependent axial force already contained in
    /// `loads`; the update solves `(M + dt C) dv = dt F` with
    /// `C = sum_i c_i d3 d3^T` acting on the relative velocity of the element
    /// end nodes. Stiff dashpots then remain stable at the elastic time step.
    pub fn dynamic_update_damped(&mut self, loads: &LoadField, strains: &StrainField, dt: f64, axial_damping: &[f64]) {
        let mut ws = RodWorkspace::new(self);
        ws.loads.clone_from(loads);
        ws.strains.clone_from(strains);
        self.kick(&mut ws, dt, Some(axial_damping));
    }

    /// Kick using the strains and loads held in `ws`, optionally with the
    /// implicit axial dashpot of [`RodState::dynamic_update_damped`].
    pub fn kick(&mut self, ws: &mut RodWorkspace, dt: f64, axial_damping: Option<&[f64]>) {
        self.generalized_forces_into(&ws.loads, &ws.strains, &mut ws.forces, &mut ws.couples);
        match axial_damping {
            None => {
                for ((v, f), m) in self.velocities.iter_mut().zip(&ws.forces).zip(&self.node_masses) {
                    *v += (dt / m) * f;
                }
            }
            Some(damping) => self.solve_damped_kick(ws, dt, damping),
        }
        self.kick_angular(&ws.couples, dt);
        self.enforce_clamp_velocities();
    }

    /// Block Thomas algorithm on the symmetric block-tridiagonal system.
    fn solve_damped_kick(&mut self, ws: &mut RodWorkspace, dt: f64, damping: &[f64]) {
        let n = self.n_elem();
        let fixed_base = self.clamp.is_some();
        let coupling = &mut ws.coupling;
        coupling.clear();
        coupling.extend((0..n).map(|i| {
            let d3 = self.directors[i].row(2).transpose();
            dt * damping[i] * d3 * d3.transpose()
        }));
        let solve = &mut ws.solve;
        let gain = &mut ws.gain;
        solve.clear();
        gain.clear();
        let mut prev_gain = Mat3::zeros();
        let mut prev_solve = Vec3::zeros();
        for j in 0..=n {
            let mut diag = Mat3::identity() * self.node_masses[j];
            if j > 0 {
                diag += coupling[j - 1];
            }
            if j < n {
                diag += coupling[j];
            }
            let mut rhs = dt * ws.forces[j];
            // Off-diagonal blocks are -coupling; the base row is Dirichlet.
            let lower = if j == 0 || (j == 1 && fixed_base) { Mat3::zeros() } else { -coupling[j - 1] };
            let upper = if j == n || (j == 0 && fixed_base) { Mat3::zeros() } else { -coupling[j] };
            if j == 0 && fixed_base {
                diag = Mat3::identity();
                rhs = Vec3::zeros();
            }
            let denom = diag - lower * prev_gain;
            let inv = denom.try_inverse().unwrap_or_else(Mat3::identity);
            prev_gain = inv * upper;
            prev_solve = inv * (rhs - lower * prev_solve);
            gain.push(prev_gain);
            solve.push(prev_solve);
        }
        for j in (0..n).rev() {
            let next = solve[j + 1];
            solve[j] -= gain[j] * next;
        }
        for (v, d) in self.velocities.iter_mut().zip(solve.iter()) {
            *v += d;
        }
    }

    fn kick_angular(&mut self, couples: &[Vec3], dt: f64) {
        for ((w, c), j) in self.angular_velocities.iter_mut().zip(couples).zip(&self.element_inertia) {
            *w = gyroscopic_midpoint_kick(w, c, j, dt);
        }
    }

    /// A collapsed element with non-finite length is a divergence, not geometry.
    pub fn classify(&self, err: RodError) -> RodError {
        match err {
            RodError::SingularGeometry { length, .. } if !length.is_finite() => {
                RodError::Divergence { step: self.step_count }
            }
            other => other,
        }
    }

    pub fn check_finite(&self) -> Result<(), RodError> {
        let ok = self.positions.iter().all(|x| x.iter().all(|c| c.is_finite()))
            && self.velocities.iter().all(|x| x.iter().all(|c| c.is_finite()))
            && self.angular_velocities.iter().all(|x| x.iter().all(|c| c.is_finite()))
            && self.directors.iter().all(|q| q.iter().all(|c| c.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(RodError::Divergence { step: self.step_count })
        }
    }
}

/// Solves `J (w1 - w0) = dt (c + (J wm) x wm)` with `wm = (w0 + w1) / 2` by
/// fixed-point iteration. The gyroscopic term then does no work, whereas an
/// explicit evaluation pumps energy into spinning elements.
fn gyroscopic_midpoint_kick(w0: &Vec3, couple: &Vec3, inertia: &Vec3, dt: f64) -> Vec3 {
    let base = w0 + dt * couple.component_div(inertia);
    let mut w1 = base;
    for _ in 0..16 {
        let wm = 0.5 * (w0 + w1);
        let next = base + dt * inertia.component_mul(&wm).cross(&wm).component_div(inertia);
        let change = (next - w1).norm();
        w1 = next;
        if change <= 1e-15 * (1.0 + w1.norm()) {
            break;
        }
    }
    w1
}

pub fn compute_strains(rod: &RodState) -> Result<StrainField, RodError> {
    let mut out = StrainField::default();
    compute_strains_into(rod, &mut out)?;
    Ok(out)
}

/// As [`compute_strains`], reusing the buffers of `out`.
pub fn compute_strains_into(rod: &RodState, out: &mut StrainField) -> Result<(), RodError> {
    let n = rod.n_elem();
    out.shear_strain.clear();
    out.stretch.clear();
    out.curvature.clear();
    let e3 = Vec3::z();
    for i in 0..n {
        let dx = rod.positions[i + 1] - rod.positions[i];
        let len = dx.norm();
        if !(len >= MIN_ELEMENT_LENGTH) {
            return Err(RodError::SingularGeometry { element: i, length: len });
        }
        let x_s = dx / rod.ref_lengths[i];
        out.shear_strain.push(rod.directors[i] * x_s - e3);
        out.stretch.push(len / rod.ref_lengths[i]);
    }
    out.curvature.extend((0..n.saturating_sub(1)).map(|k| {
        let rel = rod.directors[k] * rod.directors[k + 1].transpose();
        so3::log(&rel) / rod.voronoi_lengths[k]
    }));
    out.base_curvature =
        rod.clamp.as_ref().map(|c| so3::log(&(c.director * rod.directors[0].transpose())) / rod.base_voronoi_length());
    Ok(())
}

/// Linear constitutive laws `n = S eps`, `tau = B kappa`; external loads zero.
pub fn internal_loads(rod: &RodState, strains: &StrainField) -> LoadField {
    let mut loads = LoadField::zeros(rod.n_elem());
    internal_loads_into(rod, strains, &mut loads);
    loads
}

/// As [`internal_loads`], reusing the buffers of `out`.
pub fn internal_loads_into(rod: &RodState, strains: &StrainField, out: &mut LoadField) {
    let n = rod.n_elem();
    out.internal_forces.clear();
    out.internal_forces.extend((0..n).map(|i| rod.shear_stiffness(i).component_mul(&strains.shear_strain[i])));
    out.internal_torques.clear();
    out.internal_torques
        .extend((0..n.saturating_sub(1)).map(|k| rod.bend_stiffness(k).component_mul(&strains.curvature[k])));
    out.external_forces.clear();
    out.external_forces.resize(n + 1, Vec3::zeros());
    out.external_couples.clear();
    out.external_couples.resize(n, Vec3::zeros());
}

/// Reusable buffers for one rod's force evaluation and kick.
#[derive(Debug, Clone, Default)]
pub struct RodWorkspace {
    pub strains: StrainField,
    pub loads: LoadField,
    forces: Vec<Vec3>,
    couples: Vec<Vec3>,
    coupling: Vec<Mat3>,
    gain: Vec<Mat3>,
    solve: Vec<Vec3>,
}

impl RodWorkspace {
    pub fn new(rod: &RodState) -> Self {
        let n = rod.n_elem();
        Self {
            strains: StrainField::default(),
            loads: LoadField::zeros(n),
            forces: Vec::with_capacity(n + 1),
            couples: Vec::with_capacity(n),
            coupling: Vec::with_capacity(n),
            gain: Vec::with_capacity(n + 1),
            solve: Vec::with_capacity(n + 1),
        }
    }
}

/// One position-Verlet step of an isolated rod under fixed external loads.
pub fn verlet_step(rod: &mut RodState, external: &ExternalLoads, dt: f64) -> Result<(), RodError> {
    if external.forces.len() != rod.n_nodes() || external.couples.len() != rod.n_elem() {
        return Err(RodError::ShapeMismatch(format!(
            "{} forces / {} couples for {} nodes / {} elements",
            external.forces.len(),
            external.couples.len(),
            rod.n_nodes(),
            rod.n_elem()
        )));
    }
    verlet_step_with(rod, dt, |_, loads| loads.clone_from(external))
}

/// Position Verlet step whose external loads depend on the state. `external`
/// fills zeroed loads from the half-step configuration, where the internal
/// loads are evaluated too; a lagged evaluation would act as negative damping
/// on stiff penalty springs.
pub fn verlet_step_with<F>(rod: &mut RodState, dt: f64, mut external: F) -> Result<(), RodError>
where
    F: FnMut(&RodState, &mut ExternalLoads),
{
    if !(dt.is_finite() && dt > 0.0) {
        return Err(RodError::InvalidParameter { field: "dt", reason: format!("must be finite and > 0, got {dt}") });
    }
    rod.step_count += 1;
    rod.kinematic_update(0.5 * dt);
    let mut applied = ExternalLoads::for_rod(rod);
    external(rod, &mut applied);
    let strains = compute_strains(rod).map_err(|e| rod.classify(e))?;
    let mut loads = internal_loads(rod, &strains);
    loads.add_external(&applied);
    rod.dynamic_update(&loads, &strains, dt);
    rod.kinematic_update(0.5 * dt);
    rod.check_finite()
}

/// Trapezoidal quadrature of the kinetic and elastic energy densities.
pub fn rod_energies(rod: &RodState, strains: &StrainField) -> RodEnergies {
    let kinetic = 0.5 * rod.velocities.iter().zip(&rod.node_masses).map(|(v, m)| m * v.norm_squared()).sum::<f64>();
    let rotational = 0.5
        * rod.angular_velocities.iter().zip(&rod.element_inertia).map(|(w, j)| w.dot(&j.component_mul(w))).sum::<f64>();
    let base = strains.base_curvature.map_or(0.0, |kappa| {
        rod.base_voronoi_length() * kappa.dot(&rod.element_bend_stiffness(0).component_mul(&kappa))
    });
    let bending = 0.5
        * (base
            + strains
                .curvature
                .iter()
                .enumerate()
                .map(|(k, kappa)| rod.voronoi_lengths[k] * kappa.dot(&rod.bend_stiffness(k).component_mul(kappa)))
                .sum::<f64>());
    let shear_stretch = 0.5
        * strains
            .shear_strain
            .iter()
            .enumerate()
            .map(|(i, eps)| rod.ref_lengths[i] * eps.dot(&rod.shear_stiffness(i).component_mul(eps)))
            .sum::<f64>();
    RodEnergies { kinetic, rotational, bending, shear_stretch }
}
