//! Muscular arm: an elastic backbone with 16 muscle-tendon rods patterned on
//! its surface in four overlapping layers.
//!
//! Muscles attach to the backbone at both ends through stiff penalty springs
//! (enthesis pins) and along their length through soft spring-dampers
//! (fascia). Both kinds of link pull toward a point on the backbone surface
//! that is carried by a backbone element frame, and the reaction is applied to
//! the backbone as a force split over the element's nodes plus the couple of
//! that force about the center-line.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rod::{
    build_rod, compute_strains, compute_strains_into, internal_loads_into, rod_energies, ExternalLoads, Material,
    RadiusProfile, RodEnergies, RodError, RodGeometry, RodState, RodWorkspace, Vec3, DEFAULT_CFL_SAFETY,
};

pub const N_MUSCLES: usize = 16;
/// Stretch at which nonlinear axial tangents enter the time-step estimate.
const DESIGN_STRETCH: f64 = 1.1;

/// Identifies one of the 17 rods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RodId {
    Backbone,
    Muscle(usize),
}

impl fmt::Display for RodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RodId::Backbone => write!(f, "backbone"),
            RodId::Muscle(i) => write!(f, "muscle {i}"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ArmError {
    #[error("layout error: {0}")]
    Layout(String),
    #[error("activation {index} = {value} outside [0, 1]")]
    InvalidActivation { index: usize, value: f64 },
    #[error("expected {expected} activations, got {got}")]
    ActivationCount { expected: usize, got: usize },
    #[error("invalid stretch {0}: must be > 0")]
    InvalidStretch(f64),
    #[error("invalid arm parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("{rod}: {source}")]
    Rod { rod: RodId, source: RodError },
}

/// J-curve `k (exp(b (lambda - 1)) - 1)` for `lambda > 1`, zero otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassiveLaw {
    /// Pa.
    pub stiffness_scale: f64,
    pub exponent: f64,
}

impl PassiveLaw {
    pub fn stress(&self, stretch: f64) -> f64 {
        if stretch <= 1.0 {
            0.0
        } else {
            self.stiffness_scale * (self.exponent * (stretch - 1.0)).exp_m1()
        }
    }

    /// d(stress)/d(stretch).
    pub fn tangent(&self, stretch: f64) -> f64 {
        if stretch <= 1.0 {
            0.0
        } else {
            self.stiffness_scale * self.exponent * (self.exponent * (stretch - 1.0)).exp()
        }
    }
}

/// Hill force-velocity relation in terms of the stretch rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForceVelocity {
    /// 1/s; shortening rate at which active force vanishes.
    pub max_shortening_rate: f64,
    /// Hill curvature `a / F0`.
    pub curvature: f64,
    /// Eccentric plateau `f_v_max`.
    pub eccentric_max: f64,
}

impl Default for ForceVelocity {
    fn default() -> Self {
        Self { max_shortening_rate: 10.0, curvature: 0.25, eccentric_max: 1.2 }
    }
}

impl ForceVelocity {
    /// `f_v` in `[0, eccentric_max]`; 1 at zero rate.
    pub fn factor(&self, stretch_rate: f64) -> f64 {
        self.factor_and_slope(stretch_rate).0
    }

    /// `(f_v, d f_v / d stretch_rate)`.
    pub fn factor_and_slope(&self, stretch_rate: f64) -> (f64, f64) {
        let vmax = self.max_shortening_rate;
        let k = self.curvature;
        if stretch_rate <= 0.0 {
            let x = -stretch_rate / vmax;
            if x >= 1.0 {
                return (0.0, 0.0);
            }
            let f = (1.0 - x) / (1.0 + x / k);
            // df/dx = -(1 + 1/k) / (1 + x/k)^2 and dx/drate = -1/vmax.
            let slope = (1.0 + 1.0 / k) / ((1.0 + x / k).powi(2) * vmax);
            (f, slope)
        } else {
            let y = stretch_rate / vmax;
            let rise = self.eccentric_max - 1.0;
            let f = 1.0 + rise * y / (y + k);
            let slope = rise * k / ((y + k).powi(2) * vmax);
            (f.clamp(0.0, self.eccentric_max), slope)
        }
    }

    /// Largest slope `d f_v / d rate`, attained at zero rate from below.
    pub fn max_slope(&self) -> f64 {
        let shortening = (1.0 + 1.0 / self.curvature) / self.max_shortening_rate;
        let lengthening = (self.eccentric_max - 1.0) / (self.curvature * self.max_shortening_rate);
        shortening.max(lengthening)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MuscleParams {
    /// Peak isometric active stress, Pa.
    pub sigma_max: f64,
    pub optimal_stretch: f64,
    pub fl_width: f64,
    pub force_velocity: ForceVelocity,
    pub passive_muscle: PassiveLaw,
    pub passive_tendon: PassiveLaw,
}

impl Default for MuscleParams {
    fn default() -> Self {
        Self {
            sigma_max: 200e3,
            optimal_stretch: 1.0,
            fl_width: 0.4,
            force_velocity: ForceVelocity::default(),
            passive_muscle: PassiveLaw { stiffness_scale: 1e4, exponent: 6.0 },
            passive_tendon: PassiveLaw { stiffness_scale: 4e4, exponent: 6.0 },
        }
    }
}

impl MuscleParams {
    /// Gaussian force-length factor, 1 at the optimal stretch.
    pub fn force_length(&self, stretch: f64) -> f64 {
        let z = (stretch - self.optimal_stretch) / self.fl_width;
        (-z * z).exp()
    }

    pub fn active_stress(&self, activation: f64, stretch: f64, stretch_rate: f64) -> f64 {
        activation * self.sigma_max * self.force_length(stretch) * self.force_velocity.factor(stretch_rate)
    }

    /// Upper bound on the belly axial tangent modulus for stretches up to
    /// `stretch`, used for the explicit stability estimate.
    pub fn belly_tangent_bound(&self, stretch: f64) -> f64 {
        let active_slope = self.sigma_max * self.force_velocity.eccentric_max * std::f64::consts::SQRT_2
            / self.fl_width
            * (-0.5f64).exp();
        active_slope + self.passive_muscle.tangent(stretch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub length: f64,
    pub radius: f64,
    pub n_elem: usize,
    pub density: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Velocity damping rate, 1/s.
    pub damping: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            length: 0.2,
            radius: 0.01,
            n_elem: 16,
            density: 1000.0,
            youngs_modulus: 125e3,
            poisson_ratio: 0.5,
            damping: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MuscleConfig {
    pub length: f64,
    pub radius: f64,
    pub n_elem: usize,
    /// Elements in each tendon end.
    pub tendon_elements: usize,
    /// Tendon tip radius relative to the belly radius; the tendon tapers
    /// linearly from the belly.
    pub tendon_tip_ratio: f64,
    pub density: f64,
    /// Linear modulus for shear and bending; also sets the pin stiffness.
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub damping: f64,
    pub params: MuscleParams,
}

impl Default for MuscleConfig {
    fn default() -> Self {
        Self {
            length: 0.08,
            radius: 0.003,
            n_elem: 6,
            tendon_elements: 1,
            tendon_tip_ratio: 0.6,
            density: 1000.0,
            youngs_modulus: 50e3,
            poisson_ratio: 0.5,
            damping: 2.0,
            params: MuscleParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmConfig {
    pub backbone: BackboneConfig,
    pub muscle: MuscleConfig,
    pub layers: usize,
    pub units_per_layer: usize,
    /// Fraction of a unit's length shared with the next layer.
    pub layer_overlap: f64,
    pub layer_twist_deg: f64,
    /// Pin stiffness as a multiple of muscle `E A / L`.
    pub pin_stiffness_factor: f64,
    /// Fascia stiffness as a fraction of the pin stiffness.
    pub fascia_fraction: f64,
    pub cfl_safety: f64,
    /// Lab-frame gravity, m/s^2.
    pub gravity: [f64; 3],
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            muscle: MuscleConfig::default(),
            layers: 4,
            units_per_layer: 4,
            layer_overlap: 0.5,
            layer_twist_deg: 45.0,
            pin_stiffness_factor: 100.0,
            fascia_fraction: 0.01,
            cfl_safety: DEFAULT_CFL_SAFETY,
            gravity: [0.0; 3],
        }
    }
}

impl ArmConfig {
    pub fn with_backbone_modulus(mut self, youngs_modulus: f64) -> Self {
        self.backbone.youngs_modulus = youngs_modulus;
        self
    }

    pub fn pin_stiffness(&self) -> f64 {
        let m = &self.muscle;
        self.pin_stiffness_factor * m.youngs_modulus * std::f64::consts::PI * m.radius * m.radius / m.length
    }
}

/// A point on the backbone fixed in the frame of one element: the center-line
/// point at `fraction` along `element`, offset by `offset` (local frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceAnchor {
    pub element: usize,
    pub fraction: f64,
    pub offset: Vec3,
}

impl SurfaceAnchor {
    fn at(backbone: &RodState, arc_length: f64, offset: Vec3) -> Self {
        let n = backbone.n_elem();
        let mut s = arc_length;
        let mut element = 0;
        while element + 1 < n && s > backbone.ref_lengths[element] {
            s -= backbone.ref_lengths[element];
            element += 1;
        }
        let fraction = (s / backbone.ref_lengths[element]).clamp(0.0, 1.0);
        Self { element, fraction, offset }
    }

    pub fn centerline(&self, backbone: &RodState) -> Vec3 {
        let (k, w) = (self.element, self.fraction);
        (1.0 - w) * backbone.positions[k] + w * backbone.positions[k + 1]
    }

    /// Lab-frame lever arm from the center-line point to the anchor.
    pub fn lever(&self, backbone: &RodState) -> Vec3 {
        backbone.directors[self.element].transpose() * self.offset
    }

    pub fn position(&self, backbone: &RodState) -> Vec3 {
        self.centerline(backbone) + self.lever(backbone)
    }

    pub fn velocity(&self, backbone: &RodState) -> Vec3 {
        let (k, w) = (self.element, self.fraction);
        let q_t = backbone.directors[k].transpose();
        let omega_lab = q_t * backbone.angular_velocities[k];
        (1.0 - w) * backbone.velocities[k] + w * backbone.velocities[k + 1] + omega_lab.cross(&(q_t * self.offset))
    }

    /// Apply lab-frame force `f` at the anchor: split over the element nodes
    /// plus the couple about the center-line.
    fn apply(&self, backbone: &RodState, loads: &mut ExternalLoads, f: Vec3) {
        let (k, w) = (self.element, self.fraction);
        loads.forces[k] += (1.0 - w) * f;
        loads.forces[k + 1] += w * f;
        loads.couples[k] += self.lever(backbone).cross(&f);
    }
}

/// Stiff spring holding a muscle end node on its backbone anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnthesisPin {
    pub muscle_node: usize,
    pub anchor: SurfaceAnchor,
    pub stiffness: f64,
}

/// Soft spring-damper gluing an interior muscle node to the backbone surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FasciaLink {
    pub muscle_node: usize,
    pub anchor: SurfaceAnchor,
    pub stiffness: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuscleTendonUnit {
    pub rod: RodState,
    pub belly_range: Range<usize>,
    pub tendon_ranges: [Range<usize>; 2],
    pub params: MuscleParams,
    /// In [0, 1].
    pub activation: f64,
    pub layer: usize,
    /// Radians about the backbone axis, measured from the backbone `d1`.
    pub azimuth: f64,
}

impl MuscleTendonUnit {
    pub fn is_belly(&self, element: usize) -> bool {
        self.belly_range.contains(&element)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// Arc length along the backbone where the layer starts, m.
    pub offset: f64,
    /// Azimuth of the layer's first unit, degrees.
    pub azimuth_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmAssembly {
    pub config: ArmConfig,
    pub backbone: RodState,
    pub muscles: Vec<MuscleTendonUnit>,
    pub enthesis_pins: Vec<[EnthesisPin; 2]>,
    pub fascia_links: Vec<Vec<FasciaLink>>,
    pub layer_layout: Vec<LayerSpec>,
    /// Inner integration step, s.
    pub dt: f64,
    pub time: f64,
}

/// Lab-frame loads for all 17 rods.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmLoads {
    pub backbone: ExternalLoads,
    pub muscles: Vec<ExternalLoads>,
}

impl ArmLoads {
    pub fn zeros(arm: &ArmAssembly) -> Self {
        Self {
            backbone: ExternalLoads::for_rod(&arm.backbone),
            muscles: arm.muscles.iter().map(|m| ExternalLoads::for_rod(&m.rod)).collect(),
        }
    }

    pub fn add(&mut self, other: &ArmLoads) {
        self.backbone.add(&other.backbone);
        for (a, b) in self.muscles.iter_mut().zip(&other.muscles) {
            a.add(b);
        }
    }

    pub fn clear(&mut self) {
        self.backbone.clear();
        self.muscles.iter_mut().for_each(ExternalLoads::clear);
    }
}

fn check_positive(field: &'static str, v: f64) -> Result<(), ArmError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ArmError::InvalidParameter { field, reason: format!("must be finite and > 0, got {v}") })
    }
}

pub fn assemble_arm(config: &ArmConfig) -> Result<ArmAssembly, ArmError> {
    let bb = &config.backbone;
    let mc = &config.muscle;
    check_positive("backbone.youngs_modulus", bb.youngs_modulus)?;
    check_positive("muscle.length", mc.length)?;
    check_positive("muscle.radius", mc.radius)?;
    check_positive("muscle.youngs_modulus", mc.youngs_modulus)?;
    check_positive("muscle.params.sigma_max", mc.params.sigma_max)?;
    check_positive("muscle.params.fl_width", mc.params.fl_width)?;
    check_positive("muscle.params.force_velocity.max_shortening_rate", mc.params.force_velocity.max_shortening_rate)?;
    check_positive("muscle.params.force_velocity.curvature", mc.params.force_velocity.curvature)?;
    check_positive("cfl_safety", config.cfl_safety)?;
    if !(0.0..1.0).contains(&config.layer_overlap) {
        return Err(ArmError::InvalidParameter {
            field: "layer_overlap",
            reason: format!("must lie in [0, 1), got {}", config.layer_overlap),
        });
    }
    if config.layers == 0 || config.units_per_layer == 0 {
        return Err(ArmError::Layout("need at least one layer and one unit per layer".into()));
    }
    if 2 * mc.tendon_elements >= mc.n_elem {
        return Err(ArmError::Layout(format!(
            "{} tendon elements per end leave no belly in a {}-element unit",
            mc.tendon_elements, mc.n_elem
        )));
    }
    let stride = mc.length * (1.0 - config.layer_overlap);
    let span = stride * (config.layers - 1) as f64 + mc.length;
    if span > bb.length * (1.0 + 1e-12) {
        return Err(ArmError::Layout(format!(
            "{} layers of {} m units need {span} m of backbone, only {} m available",
            config.layers, mc.length, bb.length
        )));
    }

    let backbone_material = Material::isotropic(bb.density, bb.youngs_modulus, bb.poisson_ratio, bb.damping);
    let mut backbone = build_rod(&RodGeometry::straight(bb.length, bb.radius, bb.n_elem), &backbone_material)
        .map_err(|source| ArmError::Rod { rod: RodId::Backbone, source })?;
    backbone.clamp_base();

    let muscle_material = Material::isotropic(mc.density, mc.youngs_modulus, mc.poisson_ratio, mc.damping);
    let radii = muscle_radii(mc);
    let k_pin = config.pin_stiffness();
    let k_fascia = config.fascia_fraction * k_pin;

    let mut muscles = Vec::with_capacity(config.layers * config.units_per_layer);
    let mut pins = Vec::with_capacity(muscles.capacity());
    let mut fascia = Vec::with_capacity(muscles.capacity());
    let mut layer_layout = Vec::with_capacity(config.layers);
    for layer in 0..config.layers {
        let offset = stride * layer as f64;
        let layer_azimuth = config.layer_twist_deg * layer as f64;
        layer_layout.push(LayerSpec { offset, azimuth_deg: layer_azimuth });
        for unit in 0..config.units_per_layer {
            let azimuth = (layer_azimuth + 360.0 * unit as f64 / config.units_per_layer as f64).to_radians();
            let radial_local = Vec3::new(azimuth.cos(), azimuth.sin(), 0.0) * bb.radius;
            let radial_lab = backbone.directors[0].transpose() * radial_local;
            let axis = backbone.directors[0].row(2).transpose();
            let d1 = backbone.directors[0].row(0).transpose();
            let origin = backbone.positions[0] + axis * offset + radial_lab;
            let geometry = RodGeometry {
                length: mc.length,
                radius: RadiusProfile::PerElement(radii.clone()),
                n_elem: mc.n_elem,
                origin: origin.into(),
                direction: axis.into(),
                normal: d1.into(),
            };
            let id = RodId::Muscle(muscles.len());
            let rod = build_rod(&geometry, &muscle_material).map_err(|source| ArmError::Rod { rod: id, source })?;
            let n = mc.n_elem;
            let t = mc.tendon_elements;
            pins.push([
                EnthesisPin {
                    muscle_node: 0,
                    anchor: SurfaceAnchor::at(&backbone, offset, radial_local),
                    stiffness: k_pin,
                },
                EnthesisPin {
                    muscle_node: n,
                    anchor: SurfaceAnchor::at(&backbone, offset + mc.length, radial_local),
                    stiffness: k_pin,
                },
            ]);
            fascia.push(
                (1..n)
                    .map(|node| {
                        let mass = rod.node_masses[node];
                        FasciaLink {
                            muscle_node: node,
                            anchor: SurfaceAnchor::at(
                                &backbone,
                                offset + mc.length * node as f64 / n as f64,
                                radial_local,
                            ),
                            stiffness: k_fascia,
                            damping: 2.0 * (k_fascia * mass).sqrt(),
                        }
                    })
                    .collect(),
            );
            muscles.push(MuscleTendonUnit {
                rod,
                belly_range: t..n - t,
                tendon_ranges: [0..t, n - t..n],
                params: mc.params,
                activation: 0.0,
                layer,
                azimuth,
            });
        }
    }

    let mut arm = ArmAssembly {
        config: *config,
        backbone,
        muscles,
        enthesis_pins: pins,
        fascia_links: fascia,
        layer_layout,
        dt: 0.0,
        time: 0.0,
    };
    arm.dt = arm.stable_time_step();
    Ok(arm)
}

/// Belly radius in the middle, tendons tapering linearly to the tip ratio,
/// sampled at element centers.
fn muscle_radii(mc: &MuscleConfig) -> Vec<f64> {
    let n = mc.n_elem;
    let t = mc.tendon_elements;
    (0..n)
        .map(|i| {
            // Distance into the tendon from its free end, in elements.
            let depth = if i < t {
                i as f64 + 0.5
            } else if i >= n - t {
                (n - i) as f64 - 0.5
            } else {
                return mc.radius;
            };
            let ratio = mc.tendon_tip_ratio + (1.0 - mc.tendon_tip_ratio) * depth / t as f64;
            mc.radius * ratio
        })
        .collect()
}

/// Axial stress of `element` at the given stretch and stretch rate.
pub fn muscle_stress(
    unit: &MuscleTendonUnit,
    element: usize,
    stretch: f64,
    stretch_rate: f64,
) -> Result<f64, ArmError> {
    if !(stretch > 0.0) {
        return Err(ArmError::InvalidStretch(stretch));
    }
    let p = &unit.params;
    Ok(if unit.is_belly(element) {
        p.active_stress(unit.activation, stretch, stretch_rate) + p.passive_muscle.stress(stretch)
    } else {
        p.passive_tendon.stress(stretch)
    })
}

/// `(tanh(a) + 1) / 2` component-wise.
pub fn action_to_activation(action: &[f64]) -> Vec<f64> {
    action.iter().map(|a| 0.5 * (a.tanh() + 1.0)).collect()
}

pub fn apply_activations(arm: &mut ArmAssembly, activations: &[f64]) -> Result<(), ArmError> {
    if activations.len() != arm.muscles.len() {
        return Err(ArmError::ActivationCount { expected: arm.muscles.len(), got: activations.len() });
    }
    if let Some((index, &value)) = activations.iter().enumerate().find(|(_, a)| !(0.0..=1.0).contains(*a)) {
        return Err(ArmError::InvalidActivation { index, value });
    }
    for (m, &a) in arm.muscles.iter_mut().zip(activations) {
        m.activation = a;
    }
    Ok(())
}

/// Pin and fascia loads on all rods; equal and opposite within each pair.
pub fn constraint_loads(arm: &ArmAssembly) -> ArmLoads {
    let mut loads = ArmLoads::zeros(arm);
    add_constraint_loads(arm, &mut loads);
    loads
}

fn add_constraint_loads(arm: &ArmAssembly, loads: &mut ArmLoads) {
    let bb = &arm.backbone;
    for (i, unit) in arm.muscles.iter().enumerate() {
        let rod = &unit.rod;
        let out = &mut loads.muscles[i];
        for pin in &arm.enthesis_pins[i] {
            let f = pin.stiffness * (pin.anchor.position(bb) - rod.positions[pin.muscle_node]);
            out.forces[pin.muscle_node] += f;
            pin.anchor.apply(bb, &mut loads.backbone, -f);
        }
        for link in &arm.fascia_links[i] {
            let gap = link.anchor.position(bb) - rod.positions[link.muscle_node];
            let closing = link.anchor.velocity(bb) - rod.velocities[link.muscle_node];
            let f = link.stiffness * gap + link.damping * closing;
            out.forces[link.muscle_node] += f;
            link.anchor.apply(bb, &mut loads.backbone, -f);
        }
    }
}

/// Muscle internal loads into `ws.loads`: linear shear and bending, axial
/// tension from the muscle/tendon stress law along each element chord.
/// `damping` receives the per-element axial dashpot linearization for the
/// implicit kick.
fn muscle_internal_loads(unit: &MuscleTendonUnit, ws: &mut RodWorkspace, damping: &mut Vec<f64>) {
    let rod = &unit.rod;
    internal_loads_into(rod, &ws.strains, &mut ws.loads);
    damping.clear();
    damping.resize(rod.n_elem(), 0.0);
    let p = &unit.params;
    for i in 0..rod.n_elem() {
        let dx = rod.positions[i + 1] - rod.positions[i];
        let dv = rod.velocities[i + 1] - rod.velocities[i];
        let len = dx.norm();
        let l0 = rod.ref_lengths[i];
        let stretch = ws.strains.stretch[i];
        let area = rod.areas[i];
        let stress = if unit.is_belly(i) {
            let rate = dx.dot(&dv) / (len * l0);
            let (fv, slope) = p.force_velocity.factor_and_slope(rate);
            let active = unit.activation * p.sigma_max * p.force_length(stretch);
            damping[i] = area * active * slope / l0;
            active * fv + p.passive_muscle.stress(stretch)
        } else {
            p.passive_tendon.stress(stretch)
        };
        // The stress law depends on the chord stretch, so its conjugate force
        // acts along the chord (local components), adding no couple.
        let chord_local = rod.directors[i] * dx / len;
        let force = &mut ws.loads.internal_forces[i];
        force.z = 0.0;
        *force += area * stress * chord_local;
    }
}

/// Reusable buffers for stepping one assembly.
#[derive(Debug, Clone)]
pub struct ArmWorkspace {
    pub loads: ArmLoads,
    backbone: RodWorkspace,
    muscles: Vec<RodWorkspace>,
    damping: Vec<f64>,
}

impl ArmWorkspace {
    pub fn new(arm: &ArmAssembly) -> Self {
        Self {
            loads: ArmLoads::zeros(arm),
            backbone: RodWorkspace::new(&arm.backbone),
            muscles: arm.muscles.iter().map(|m| RodWorkspace::new(&m.rod)).collect(),
            damping: Vec::new(),
        }
    }
}

impl ArmAssembly {
    pub fn activations(&self) -> Vec<f64> {
        self.muscles.iter().map(|m| m.activation).collect()
    }

    pub fn n_rods(&self) -> usize {
        1 + self.muscles.len()
    }

    pub fn tip(&self) -> Vec3 {
        self.backbone.tip()
    }

    pub fn base(&self) -> Vec3 {
        self.backbone.positions[0]
    }

    /// Safety factor times the smallest critical step over all rods, the
    /// muscle axial laws and the pin/fascia springs.
    pub fn stable_time_step(&self) -> f64 {
        let mut bound = self.backbone.stability_bound();
        let spring_bound = |k: f64, m: f64| 2.0 * (m / k).sqrt();
        for (i, unit) in self.muscles.iter().enumerate() {
            let rod = &unit.rod;
            bound = bound.min(rod.stability_bound());
            for (e, &l0) in rod.ref_lengths.iter().enumerate() {
                let tangent = if unit.is_belly(e) {
                    unit.params.belly_tangent_bound(DESIGN_STRETCH)
                } else {
                    unit.params.passive_tendon.tangent(DESIGN_STRETCH)
                };
                if tangent > 0.0 {
                    bound = bound.min(l0 * (rod.material.density / tangent).sqrt());
                }
            }
            for pin in &self.enthesis_pins[i] {
                bound = bound.min(spring_bound(pin.stiffness, rod.node_masses[pin.muscle_node]));
            }
            for link in &self.fascia_links[i] {
                bound = bound.min(spring_bound(link.stiffness, rod.node_masses[link.muscle_node]));
            }
        }
        self.config.cfl_safety * bound
    }

    pub fn release_base(&mut self) {
        self.backbone.release_base();
    }

    /// Total linear momentum of all 17 rods.
    pub fn linear_momentum(&self) -> Vec3 {
        self.backbone.linear_momentum() + self.muscles.iter().map(|m| m.rod.linear_momentum()).sum::<Vec3>()
    }

    pub fn backbone_energies(&self) -> Result<RodEnergies, ArmError> {
        let strains =
            compute_strains(&self.backbone).map_err(|source| ArmError::Rod { rod: RodId::Backbone, source })?;
        Ok(rod_energies(&self.backbone, &strains))
    }

    fn rods_mut(&mut self) -> impl Iterator<Item = (RodId, &mut RodState)> {
        std::iter::once((RodId::Backbone, &mut self.backbone))
            .chain(self.muscles.iter_mut().enumerate().map(|(i, m)| (RodId::Muscle(i), &mut m.rod)))
    }

    /// One inner position-Verlet step of the coupled assembly. `external`
    /// receives the mid-step configuration and adds loads to the buffer.
    pub fn substep<F>(&mut self, dt: f64, ws: &mut ArmWorkspace, external: &mut F) -> Result<(), ArmError>
    where
        F: FnMut(&ArmAssembly, &mut ArmLoads),
    {
        for (_, rod) in self.rods_mut() {
            rod.step_count += 1;
            rod.kinematic_update(0.5 * dt);
        }
        let loads = &mut ws.loads;
        loads.clear();
        add_constraint_loads(self, loads);
        let g = Vec3::from(self.config.gravity);
        if g != Vec3::zeros() {
            loads.backbone.add_gravity(&self.backbone, g);
            for (l, m) in loads.muscles.iter_mut().zip(&self.muscles) {
                l.add_gravity(&m.rod, g);
            }
        }
        external(self, loads);

        let bb = &mut self.backbone;
        let bws = &mut ws.backbone;
        compute_strains_into(bb, &mut bws.strains)
            .map_err(|e| ArmError::Rod { rod: RodId::Backbone, source: bb.classify(e) })?;
        internal_loads_into(bb, &bws.strains, &mut bws.loads);
        bws.loads.add_external(&ws.loads.backbone);
        bb.kick(bws, dt, None);

        for (i, unit) in self.muscles.iter_mut().enumerate() {
            let mws = &mut ws.muscles[i];
            compute_strains_into(&unit.rod, &mut mws.strains)
                .map_err(|e| ArmError::Rod { rod: RodId::Muscle(i), source: unit.rod.classify(e) })?;
            muscle_internal_loads(unit, mws, &mut ws.damping);
            mws.loads.add_external(&ws.loads.muscles[i]);
            unit.rod.kick(mws, dt, Some(&ws.damping));
        }

        for (id, rod) in self.rods_mut() {
            rod.kinematic_update(0.5 * dt);
            rod.check_finite().map_err(|source| ArmError::Rod { rod: id, source })?;
        }
        self.time += dt;
        Ok(())
    }
}

/// Advance by `dt_control` in equal inner steps no longer than `arm.dt`,
/// with no external loads beyond gravity.
pub fn arm_step(arm: &mut ArmAssembly, dt_control: f64) -> Result<(), ArmError> {
    arm_step_with(arm, dt_control, |_, _| {})
}

/// As [`arm_step`], with `external` adding loads (e.g. contact) at every inner
/// step.
pub fn arm_step_with<F>(arm: &mut ArmAssembly, dt_control: f64, mut external: F) -> Result<(), ArmError>
where
    F: FnMut(&ArmAssembly, &mut ArmLoads),
{
    if !(dt_control.is_finite() && dt_control > 0.0) {
        return Err(ArmError::InvalidParameter {
            field: "dt_control",
            reason: format!("must be finite and > 0, got {dt_control}"),
        });
    }
    let substeps = (dt_control / arm.dt).ceil().max(1.0) as usize;
    let dt = dt_control / substeps as f64;
    let mut ws = ArmWorkspace::new(arm);
    for _ in 0..substeps {
        arm.substep(dt, &mut ws, &mut external)?;
    }
    Ok(())
}
