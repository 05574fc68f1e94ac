//! Artifact directory: atomic writes, checksums and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, ErrorReport};

pub const MANIFEST: &str = "manifest.json";
pub const ERROR_FILE: &str = "error.json";

#[derive(Clone, Debug, Serialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config_sha256: &'a str,
    pub status: &'a str,
    pub jobs: usize,
    pub artifacts: Vec<ArtifactEntry>,
    pub timings: &'a [Timing],
}

pub struct Output {
    dir: PathBuf,
    artifacts: Vec<ArtifactEntry>,
    timings: Vec<Timing>,
}

/// Write to a sibling temporary file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::Config(format!("bad artifact path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

impl Output {
    /// Creates the directory and clears the manifest and error report of an
    /// earlier run, so a stale success is never left next to new files.
    pub fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for stale in [MANIFEST, ERROR_FILE] {
            let p = dir.join(stale);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
            }
        }
        Ok(Output {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
            timings: Vec::new(),
        })
    }

    /// Writes an artifact (relative path, `/`-separated) and records it.
    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        let bytes = contents.as_ref();
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        write_atomic(&path, bytes)?;
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(ArtifactEntry {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write(rel, text)
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(Timing {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn finish(self, command: &str, config_sha256: &str, status: &str, jobs: usize) -> CliResult<()> {
        let mut artifacts = self.artifacts;
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            tool: "mquench",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_sha256,
            status,
            jobs,
            artifacts,
            timings: &self.timings,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_atomic(&self.dir.join(MANIFEST), text.as_bytes())
    }
}

/// Best-effort `error.json` in `dir`.
pub fn write_error(dir: &Path, report: &ErrorReport) {
    let mut text = serde_json::to_string_pretty(report).expect("error report serializes");
    text.push('\n');
    if fs::create_dir_all(dir).is_ok() {
        let _ = write_atomic(&dir.join(ERROR_FILE), text.as_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_checksums() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = Output::create(tmp.path()).unwrap();
        out.write("b.csv", "x\n").unwrap();
        out.write("sub/a.csv", "y\n").unwrap();
        out.write("b.csv", "z\n").unwrap();
        out.finish("quench", "abc", "ok", 1).unwrap();
        let text = fs::read_to_string(tmp.path().join(MANIFEST)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let arts = v["artifacts"].as_array().unwrap();
        assert_eq!(arts.len(), 2);
        assert_eq!(arts[0]["path"], "b.csv");
        let expect = hex::encode(Sha256::digest(b"z\n"));
        assert_eq!(arts[0]["sha256"], expect.as_str());
        assert!(!tmp.path().join(".b.csv.tmp").exists());
    }
}
