use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::EpisodeRecord;
use crate::arch::{save_checkpoint, Network};
use crate::controller::Controller;
use crate::error::{Error, Result};
use crate::pool::NetPool;

const LOCK_FILE: &str = ".lock";

/// Episode records as JSON lines.
pub fn episodes_jsonl(history: &[EpisodeRecord]) -> Result<String> {
    let mut s = String::new();
    for r in history {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

/// Output directory of one search run, held under an advisory lock file
/// that is removed on drop.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates `root` and takes its lock; fails if another run holds it.
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let lock = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::Search(format!(
                    "{} is locked by another run (remove {} if that run is gone)",
                    root.display(),
                    lock.display()
                )));
            }
            Err(e) => return Err(Error::io(&lock, e)),
        }
        let dir = RunDir { root: root.to_path_buf() };
        for (name, header) in [("metrics.csv", "episode,rmse,mae,reward,param_count\n"), ("timings.csv", "episode,wall_ms\n")] {
            dir.write(name, header)?;
        }
        dir.write("episodes.jsonl", "")?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    fn append(&self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        let mut f: File = OpenOptions::new().append(true).create(true).open(&p).map_err(|e| Error::io(&p, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&p, e))
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    /// Appends the episode to the log, metrics and timing files.
    pub fn record_episode(&self, r: &EpisodeRecord) -> Result<()> {
        self.append("episodes.jsonl", &(serde_json::to_string(r)? + "\n"))?;
        let opt = |v: Option<crate::tensor::Real>| v.map(|x| x.to_string()).unwrap_or_default();
        self.append(
            "metrics.csv",
            &format!("{},{},{},{},{}\n", r.episode, opt(r.val_rmse), opt(r.val_mae), r.reward, r.param_count),
        )?;
        self.append("timings.csv", &format!("{},{}\n", r.episode, r.wall_ms))
    }

    pub fn write_pool(&self, pool: &NetPool) -> Result<()> {
        let dir = self.path("pool");
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        pool.save_snapshot(&dir)
    }

    pub fn write_best(&self, best: &Network) -> Result<()> {
        save_checkpoint(best, &self.path("best.json"), false)
    }

    pub fn write_policy(&self, controller: &Controller) -> Result<()> {
        self.write("policy.json", &controller.to_json()?)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(self.root.join(LOCK_FILE));
    }
}
