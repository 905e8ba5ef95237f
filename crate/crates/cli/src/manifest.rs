use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::Artifact;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: &'static str,
    pub experiment: &'static str,
    pub seed: u64,
    pub threads: usize,
    pub passed: bool,
    pub wall_time_s: f64,
    pub artifacts: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig, hash: &str, files: &[Artifact], wall: f64, passed: bool) -> Self {
        let artifacts = files
            .iter()
            .map(|f| FileDigest { file: f.name.clone(), sha256: hex::encode(Sha256::digest(&f.bytes)), bytes: f.bytes.len() })
            .collect();
        Self {
            config_hash: hash.into(),
            tool_version: env!("CARGO_PKG_VERSION"),
            experiment: cfg.experiment.name(),
            seed: cfg.seed,
            threads: rayon::current_num_threads(),
            passed,
            wall_time_s: wall,
            artifacts,
        }
    }
}

/// `key,value` rows for the scalar leaves of `v`, keys joined with dots.
pub fn summary_csv(v: &serde_json::Value) -> Vec<u8> {
    fn walk(prefix: &str, v: &serde_json::Value, out: &mut String) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, x) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, x, out);
                }
            }
            serde_json::Value::Number(n) => {
                let cell = match n.as_f64() {
                    Some(f) if !n.is_i64() && !n.is_u64() => crate::io::fmt_f64(f),
                    _ => n.to_string(),
                };
                out.push_str(&format!("{prefix},{cell}\n"));
            }
            serde_json::Value::Bool(b) => out.push_str(&format!("{prefix},{b}\n")),
            serde_json::Value::String(s) if !s.contains(',') && !s.contains('\n') => out.push_str(&format!("{prefix},{s}\n")),
            _ => {}
        }
    }
    let mut out = String::from("key,value\n");
    walk("", v, &mut out);
    out.into_bytes()
}
