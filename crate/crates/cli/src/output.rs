use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const FAILURE_FILE: &str = "FAILED";

/// Output directory of the command in flight, so a failure anywhere can
/// leave a marker next to the manifest.
static ACTIVE_OUT: Mutex<Option<PathBuf>> = Mutex::new(None);

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Running digest over everything a command reads.
#[derive(Default)]
pub struct InputHash(Sha256);

impl InputHash {
    pub fn text(&mut self, label: &str, value: &str) {
        self.0.update(label.as_bytes());
        self.0.update([0]);
        self.0.update(value.as_bytes());
        self.0.update([0]);
    }

    pub fn bytes(&mut self, label: &str, value: &[u8]) {
        self.0.update(label.as_bytes());
        self.0.update((value.len() as u64).to_le_bytes());
        self.0.update(value);
    }

    pub fn floats(&mut self, label: &str, value: &[f64]) {
        self.0.update(label.as_bytes());
        self.0.update((value.len() as u64).to_le_bytes());
        for v in value {
            self.0.update(v.to_le_bytes());
        }
    }

    pub fn hex(self) -> String {
        self.0.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `key=value` manifest written before any heavy work and rewritten with
/// the final status.
pub struct Manifest {
    dir: PathBuf,
    entries: Vec<(String, String)>,
}

impl Manifest {
    /// Creates `dir`, clears a stale failure marker and writes the manifest
    /// with `status=running`.
    pub fn begin(dir: &Path, command: &str, hash: InputHash, entries: Vec<(String, String)>) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let stale = dir.join(FAILURE_FILE);
        if stale.exists() {
            fs::remove_file(stale)?;
        }
        let mut all = vec![
            ("command".to_string(), command.to_string()),
            ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("inputs_sha256".to_string(), hash.hex()),
        ];
        all.extend(entries);
        let m = Manifest {
            dir: dir.to_path_buf(),
            entries: all,
        };
        m.write("running")?;
        *ACTIVE_OUT.lock().unwrap_or_else(|e| e.into_inner()) = Some(m.dir.clone());
        Ok(m)
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    fn write(&self, status: &str) -> io::Result<()> {
        let mut text: String = self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        text.push_str(&format!("status={status}\n"));
        write_atomic(&self.dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn finish(self, outputs: &[&str]) -> io::Result<()> {
        let mut m = self;
        m.push("outputs", outputs.join(","));
        m.write("ok")?;
        *ACTIVE_OUT.lock().unwrap_or_else(|e| e.into_inner()) = None;
        Ok(())
    }
}

/// Leaves a failure marker in the active output directory, if any.
pub fn mark_failure(message: &str) {
    let dir = ACTIVE_OUT.lock().unwrap_or_else(|e| e.into_inner()).take();
    if let Some(dir) = dir {
        if let Err(e) = fs::write(dir.join(FAILURE_FILE), format!("{message}\n")) {
            log::error!("could not write failure marker in {}: {e}", dir.display());
        }
        let manifest = dir.join(MANIFEST_FILE);
        if let Ok(text) = fs::read_to_string(&manifest) {
            let _ = fs::write(&manifest, text.replace("status=running", "status=failed"));
        }
    }
}
