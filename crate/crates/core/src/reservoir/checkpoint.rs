//! Binary weight checkpoints.
//!
//! Layout, every field little-endian:
//!
//! | field            | type            | notes                                   |
//! |------------------|-----------------|-----------------------------------------|
//! | magic            | `[u8; 4]`       | `b"RSVW"`                               |
//! | format version   | `u32`           | currently 1                             |
//! | kind             | `u32`           | 1 = echo-state, 2 = spiking             |
//! | n                | `u64`           | reservoir size                          |
//! | s                | `u64`           | analog input dimension                  |
//! | density          | `f64`           |                                         |
//! | weight std       | `f64`           |                                         |
//! | rho target       | `f64`           | NaN for spiking reservoirs              |
//! | seed             | `u64`           |                                         |
//! | nnz              | `u64`           | recurrent entries that follow           |
//! | triplets         | nnz x (`u32`, `u32`, `f64`) | row, column, value, row-major |
//! | W_in rows, cols  | `u64`, `u64`    |                                         |
//! | W_in             | rows*cols `f64` | row-major                               |
//! | parameter count  | `u64`           | 0 for echo-state                        |
//! | parameters       | count `f64`     | see [`SPIKING_PARAMETERS`]              |
//!
//! Spiking parameters are followed by the encoder ranges as a flat list of
//! `[lo, hi]` pairs, preceded by their pair count as `u64`.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use super::{CsrMatrix, EchoStateReservoir, EsnConfig, LifParams, ReservoirError, SpikingConfig, SpikingReservoir};

const MAGIC: &[u8; 4] = b"RSVW";
pub const FORMAT_VERSION: u32 = 1;
const KIND_ECHO_STATE: u32 = 1;
const KIND_SPIKING: u32 = 2;

/// Order of the spiking parameter block.
pub const SPIKING_PARAMETERS: [&str; 11] = [
    "tau_m",
    "resistance",
    "v_reset",
    "v_threshold",
    "tau_ref",
    "dt",
    "window",
    "encoder_current",
    "input_gain",
    "recurrent_gain",
    "bias_current",
];

pub enum Checkpoint {
    EchoState(EchoStateReservoir),
    Spiking(SpikingReservoir),
}

struct Header {
    kind: u32,
    n: usize,
    s: usize,
    density: f64,
    weight_std: f64,
    rho_target: f64,
    seed: u64,
}

fn write_common<W: Write>(out: &mut W, header: &Header, w_rec: &CsrMatrix, w_in: &DMatrix<f64>) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&header.kind.to_le_bytes())?;
    out.write_all(&(header.n as u64).to_le_bytes())?;
    out.write_all(&(header.s as u64).to_le_bytes())?;
    out.write_all(&header.density.to_le_bytes())?;
    out.write_all(&header.weight_std.to_le_bytes())?;
    out.write_all(&header.rho_target.to_le_bytes())?;
    out.write_all(&header.seed.to_le_bytes())?;
    out.write_all(&(w_rec.nnz() as u64).to_le_bytes())?;
    for (r, c, v) in w_rec.triplets() {
        out.write_all(&(r as u32).to_le_bytes())?;
        out.write_all(&(c as u32).to_le_bytes())?;
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&(w_in.nrows() as u64).to_le_bytes())?;
    out.write_all(&(w_in.ncols() as u64).to_le_bytes())?;
    for r in 0..w_in.nrows() {
        for c in 0..w_in.ncols() {
            out.write_all(&w_in[(r, c)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_esn<W: Write>(out: &mut W, res: &EchoStateReservoir) -> Result<(), ReservoirError> {
    let cfg = res.config();
    let header = Header {
        kind: KIND_ECHO_STATE,
        n: cfg.size,
        s: cfg.input_dim,
        density: cfg.density,
        weight_std: cfg.weight_std,
        rho_target: cfg.spectral_radius_target,
        seed: res.seed(),
    };
    write_common(out, &header, res.recurrent_weights(), res.input_weights())?;
    out.write_all(&0u64.to_le_bytes())?;
    Ok(())
}

pub fn write_spiking<W: Write>(out: &mut W, res: &SpikingReservoir) -> Result<(), ReservoirError> {
    let cfg = res.config();
    let header = Header {
        kind: KIND_SPIKING,
        n: cfg.size,
        s: cfg.input_dim,
        density: cfg.density,
        weight_std: cfg.weight_std,
        rho_target: f64::NAN,
        seed: res.seed(),
    };
    write_common(out, &header, res.recurrent_weights(), res.input_weights())?;
    let l = &cfg.lif;
    let params = [
        l.tau_m,
        l.resistance,
        l.v_reset,
        l.v_threshold,
        l.tau_ref,
        l.dt,
        l.window,
        cfg.encoder_current,
        cfg.input_gain,
        cfg.recurrent_gain,
        cfg.bias_current,
    ];
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params {
        out.write_all(&p.to_le_bytes())?;
    }
    out.write_all(&(cfg.input_ranges.len() as u64).to_le_bytes())?;
    for [lo, hi] in &cfg.input_ranges {
        out.write_all(&lo.to_le_bytes())?;
        out.write_all(&hi.to_le_bytes())?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], ReservoirError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, ReservoirError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64, ReservoirError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn len(&mut self, limit: usize, what: &str) -> Result<usize, ReservoirError> {
        let v = self.u64()?;
        if v > limit as u64 {
            return Err(ReservoirError::Format(format!("{what} = {v} exceeds {limit}")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64, ReservoirError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

/// Reads either kind of checkpoint. Reservoir state starts from rest.
pub fn read_checkpoint<R: Read>(input: R) -> Result<Checkpoint, ReservoirError> {
    let mut rd = Reader { inner: input };
    if &rd.bytes::<4>()? != MAGIC {
        return Err(ReservoirError::Format("bad magic".into()));
    }
    let version = rd.u32()?;
    if version != FORMAT_VERSION {
        return Err(ReservoirError::Format(format!("unsupported format version {version}")));
    }
    let kind = rd.u32()?;
    let n = rd.len(1 << 24, "n")?;
    let s = rd.len(1 << 20, "s")?;
    let density = rd.f64()?;
    let weight_std = rd.f64()?;
    let rho_target = rd.f64()?;
    let seed = rd.u64()?;
    let nnz = rd.len(n.saturating_mul(n), "nnz")?;
    let mut triplets = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let r = rd.u32()? as usize;
        let c = rd.u32()? as usize;
        let v = rd.f64()?;
        if r >= n || c >= n {
            return Err(ReservoirError::Format(format!("entry ({r}, {c}) outside {n}x{n}")));
        }
        triplets.push((r, c, v));
    }
    let w_rec = CsrMatrix::from_triplets(n, n, &triplets);
    let rows = rd.len(n, "W_in rows")?;
    let cols = rd.len(2 * s, "W_in cols")?;
    let mut w_in = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            w_in[(r, c)] = rd.f64()?;
        }
    }
    let count = rd.len(SPIKING_PARAMETERS.len(), "parameter count")?;
    let params: Vec<f64> = (0..count).map(|_| rd.f64()).collect::<Result<_, _>>()?;
    match kind {
        KIND_ECHO_STATE => {
            let config = EsnConfig { size: n, input_dim: s, density, weight_std, spectral_radius_target: rho_target };
            Ok(Checkpoint::EchoState(EchoStateReservoir::from_weights(config, seed, w_in, w_rec)?))
        }
        KIND_SPIKING => {
            if params.len() != SPIKING_PARAMETERS.len() {
                return Err(ReservoirError::Format(format!("expected {} parameters", SPIKING_PARAMETERS.len())));
            }
            let pairs = rd.len(s, "range count")?;
            let input_ranges = (0..pairs).map(|_| Ok([rd.f64()?, rd.f64()?])).collect::<Result<_, ReservoirError>>()?;
            let config = SpikingConfig {
                size: n,
                input_dim: s,
                density,
                weight_std,
                lif: LifParams {
                    tau_m: params[0],
                    resistance: params[1],
                    v_reset: params[2],
                    v_threshold: params[3],
                    tau_ref: params[4],
                    dt: params[5],
                    window: params[6],
                },
                encoder_current: params[7],
                input_gain: params[8],
                recurrent_gain: params[9],
                bias_current: params[10],
                input_ranges,
            };
            Ok(Checkpoint::Spiking(SpikingReservoir::from_weights(config, seed, w_in, w_rec)?))
        }
        other => Err(ReservoirError::Format(format!("unknown reservoir kind {other}"))),
    }
}
