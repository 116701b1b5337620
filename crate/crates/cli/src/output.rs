//! Output files: metadata headers and all-or-nothing writes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const TOOL: &str = "tqs";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance of one run, written into every output.
#[derive(Debug, Clone)]
pub struct Meta {
    pub command: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub config_echo: String,
    config: Map<String, Value>,
}

impl Meta {
    pub fn new(cfg: &RunConfig) -> Self {
        let echo = cfg.echo();
        let mut h = Sha256::new();
        h.update(cfg.command().as_bytes());
        h.update(b"\n");
        h.update(echo.as_bytes());
        let config = cfg
            .values()
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::to_value(v).expect("TOML values serialize")))
            .collect();
        Self {
            command: cfg.command(),
            seed: cfg.u64("seed"),
            config_hash: hex::encode(h.finalize()),
            config_echo: echo,
            config,
        }
    }

    /// `#` comment lines placed before a CSV header.
    pub fn preamble(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {TOOL} {VERSION}");
        let _ = writeln!(s, "# command: {}", self.command);
        let _ = writeln!(s, "# seed: {}", self.seed);
        let _ = writeln!(s, "# config_sha256: {}", self.config_hash);
        for line in self.config_echo.lines() {
            let _ = writeln!(s, "# config: {line}");
        }
        s
    }

    pub fn json(&self) -> Value {
        json!({
            "tool": TOOL,
            "version": VERSION,
            "command": self.command,
            "seed": self.seed,
            "config_sha256": self.config_hash,
            "config": Value::Object(self.config.clone()),
        })
    }
}

/// Files accumulated in memory and written together once the run succeeds.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    /// A CSV body prefixed by the metadata preamble.
    pub fn csv(&mut self, name: &str, meta: &Meta, body: Vec<u8>) {
        let mut bytes = meta.preamble().into_bytes();
        bytes.extend(body);
        self.files.push((name.to_string(), bytes));
    }

    /// `value` with `"meta"` inserted at the top level.
    pub fn json(&mut self, name: &str, meta: &Meta, value: Value) {
        let mut obj = match value {
            Value::Object(o) => o,
            other => {
                let mut o = Map::new();
                o.insert("result".into(), other);
                o
            }
        };
        obj.insert("meta".into(), meta.json());
        let mut bytes = serde_json::to_vec_pretty(&Value::Object(obj)).expect("JSON values serialize");
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
    }

    /// Plain file with no header (e.g. a config for a later run).
    pub fn raw(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    /// Writes every file to a temporary name in `dir`, then renames them all
    /// into place. Nothing is renamed unless every write succeeded.
    pub fn commit(self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let mut tmp = tempfile::Builder::new().prefix(".tqs-").tempfile_in(dir)?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            #[cfg(unix)]
            {
                use std::os::unix::fs::PermissionsExt;
                tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
            }
            staged.push((tmp, dir.join(name)));
        }
        let mut written = Vec::with_capacity(staged.len());
        for (tmp, target) in staged {
            tmp.persist(&target).map_err(|e| e.error)?;
            written.push(target);
        }
        Ok(written)
    }
}
