use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::IngestStats;

pub const MANIFEST_FILE: &str = "manifest.json";

const MODULES: [&str; 8] = ["core", "ingest", "home_inference", "migration", "mobility_index", "stats", "synth", "cli"];

/// Provenance of one stage run.
///
/// `digest` covers the stage name, its parameters, the content hashes of its
/// inputs and the module versions. It excludes timings and the thread count,
/// so reruns on the same inputs share one digest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub digest: String,
    pub parameters: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub modules: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestStats>,
    pub counters: Value,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::schema(format!("{}: {e}", path.display())))
    }
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Collects inputs and timings while a stage runs, then writes its manifest.
pub struct StageRecorder {
    stage: &'static str,
    parameters: Value,
    inputs: BTreeMap<String, String>,
    timings: BTreeMap<String, f64>,
    started: Instant,
}

impl StageRecorder {
    pub fn new(stage: &'static str, parameters: Value) -> Self {
        StageRecorder { stage, parameters, inputs: BTreeMap::new(), timings: BTreeMap::new(), started: Instant::now() }
    }

    /// Records an input under a stable label; paths never enter the digest.
    pub fn input(&mut self, label: &str, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.inputs.insert(label.to_string(), hash);
        Ok(())
    }

    pub fn time<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings.insert(label.to_string(), t.elapsed().as_secs_f64() * 1e3);
        out
    }

    fn modules() -> BTreeMap<String, String> {
        MODULES.iter().map(|m| (m.to_string(), env!("CARGO_PKG_VERSION").to_string())).collect()
    }

    pub fn digest(&self) -> String {
        let canonical = json!({
            "stage": self.stage,
            "parameters": self.parameters,
            "inputs": self.inputs,
            "modules": Self::modules(),
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }

    /// Hashes `outputs` (names relative to `dir`) and writes `manifest.json`.
    pub fn finish(
        mut self,
        dir: &Path,
        outputs: &[&str],
        ingest: Option<IngestStats>,
        counters: Value,
    ) -> Result<RunManifest> {
        let mut hashed = BTreeMap::new();
        for name in outputs {
            hashed.insert(name.to_string(), sha256_file(&dir.join(name))?);
        }
        self.timings.insert("total".into(), self.started.elapsed().as_secs_f64() * 1e3);
        let manifest = RunManifest {
            stage: self.stage.to_string(),
            digest: self.digest(),
            parameters: self.parameters,
            inputs: self.inputs,
            outputs: hashed,
            modules: Self::modules(),
            ingest,
            counters,
            timings_ms: self.timings,
        };
        super::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_paths_and_timings() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        std::fs::write(&a, "x\n1\n").unwrap();
        std::fs::write(&b, "x\n1\n").unwrap();
        let mut r1 = StageRecorder::new("s", json!({"k": 1}));
        r1.input("table", &a).unwrap();
        r1.time("work", || std::thread::sleep(std::time::Duration::from_millis(2)));
        let mut r2 = StageRecorder::new("s", json!({"k": 1}));
        r2.input("table", &b).unwrap();
        assert_eq!(r1.digest(), r2.digest());
        let mut r3 = StageRecorder::new("s", json!({"k": 2}));
        r3.input("table", &b).unwrap();
        assert_ne!(r1.digest(), r3.digest());
    }

    #[test]
    fn known_sha256() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
