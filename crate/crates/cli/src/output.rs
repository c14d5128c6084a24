//! Output files: every CSV starts with a `# megn <version> config=<hash>` line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use megn::config::ExperimentConfig;
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 of the resolved config, first 16 hex digits.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.to_toml().as_bytes());
    hex::encode(digest)[..16].to_string()
}

pub struct Context {
    pub dir: PathBuf,
    pub hash: String,
}

impl Context {
    pub fn new(cfg: &ExperimentConfig, dir: &Path) -> Self {
        Context { dir: dir.to_path_buf(), hash: config_hash(cfg) }
    }

    pub fn header(&self) -> String {
        format!("# megn {VERSION} config={}", self.hash)
    }

    /// Create `name` in the output directory with the header line written.
    pub fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "{}", self.header())?;
        Ok(w)
    }

    /// CSV writer on a fresh output file.
    pub fn csv(&self, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
        Ok(csv::Writer::from_writer(self.create(name)?))
    }
}

/// Float formatting used in every table.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
