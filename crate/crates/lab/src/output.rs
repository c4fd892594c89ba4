//! Output tree `<out>/<experiment>/<timestamp>/{results.csv, manifest.json, checkpoints/}`.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
    pub checkpoints: PathBuf,
    pub written: Vec<String>,
}

impl RunDir {
    /// A fresh directory under `<base>/<experiment>/`; existing runs are never reused.
    pub fn create(base: &Path, experiment: &str, stamp: &str) -> LabResult<Self> {
        let parent = base.join(experiment);
        std::fs::create_dir_all(&parent).map_err(|e| LabError::io(&parent, e))?;
        for k in 0..1000 {
            let name = if k == 0 { stamp.to_owned() } else { format!("{stamp}-{k}") };
            let root = parent.join(name);
            match std::fs::create_dir(&root) {
                Ok(()) => {
                    let checkpoints = root.join("checkpoints");
                    std::fs::create_dir(&checkpoints).map_err(|e| LabError::io(&checkpoints, e))?;
                    return Ok(Self {
                        root,
                        checkpoints,
                        written: Vec::new(),
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(LabError::io(&root, e)),
            }
        }
        Err(LabError::Other(format!("no free run directory under {}", parent.display())))
    }
}

/// Write through a temporary sibling and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> LabResult<()> {
    let tmp = path.with_extension("partial");
    let mut f = std::fs::File::create(&tmp).map_err(|e| LabError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| LabError::io(&tmp, e))?;
    f.sync_all().map_err(|e| LabError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
}

pub fn timestamp() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string()
}
