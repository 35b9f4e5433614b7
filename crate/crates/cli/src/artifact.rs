use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use softarm::reservoir::ReservoirModel;

use crate::config::ExperimentConfig;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Identity stamped on every artifact. Equal provenance and equal inputs give
/// byte-identical files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: Option<u64>,
    pub code_version: String,
}

impl Provenance {
    pub fn new(config: &ExperimentConfig, seed: Option<u64>) -> Self {
        Self { config_hash: config.hash(), seed, code_version: CODE_VERSION.to_string() }
    }
}

/// A JSON artifact: provenance next to the payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub provenance: Provenance,
    pub body: T,
}

/// Writes pretty JSON through a temporary file so readers never see a
/// partial artifact.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?);
        serde_json::to_writer_pretty(&mut out, value)?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

/// File layout of one training run.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(out: &Path, seed: u64) -> Self {
        Self { root: out.join(format!("seed-{seed}")) }
    }

    pub fn at(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn reservoir(&self) -> PathBuf {
        self.root.join("reservoir.bin")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.json")
    }
    pub fn policy(&self) -> PathBuf {
        self.root.join("policy.json")
    }
    pub fn curve(&self) -> PathBuf {
        self.root.join("curve.jsonl")
    }
    pub fn traces(&self) -> PathBuf {
        self.root.join("traces")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }
    pub fn self_model(&self) -> PathBuf {
        self.root.join("selfmodel.json")
    }
    pub fn blind(&self) -> PathBuf {
        self.root.join("blind.json")
    }

    pub fn write_reservoir(&self, reservoir: &ReservoirModel) -> Result<()> {
        let path = self.reservoir();
        let tmp = path.with_extension("tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            reservoir.write(&mut out)?;
            out.flush()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn read_reservoir(&self) -> Result<ReservoirModel> {
        let path = self.reservoir();
        let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        ReservoirModel::read(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    provenance: Provenance,
}

/// Line-delimited JSON log whose first line is the provenance header.
pub struct JsonLines {
    out: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path, provenance: &Provenance) -> Result<Self> {
        let mut log = Self { out: BufWriter::new(File::create(path)?) };
        log.append(&Header { provenance: provenance.clone() })?;
        Ok(log)
    }

    /// Reopens a log for appending after keeping its header and the first
    /// `rows` data lines.
    pub fn resume(path: &Path, provenance: &Provenance, rows: usize) -> Result<Self> {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines.next().context("log has no header")??;
        let stamp: Header = serde_json::from_str(&header)?;
        if stamp.provenance != *provenance {
            bail!("{} was written by a different run", path.display());
        }
        let kept: Vec<String> = lines.take(rows).collect::<std::io::Result<_>>()?;
        if kept.len() != rows {
            bail!("{} holds {} rows, the checkpoint expects {rows}", path.display(), kept.len());
        }
        let mut out = BufWriter::new(File::create(path)?);
        for line in std::iter::once(&header).chain(&kept) {
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(Self { out })
    }

    pub fn append<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}
