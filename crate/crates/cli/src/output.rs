//! All-or-nothing output directories.
//!
//! Artifacts are written into a hidden sibling of the destination and moved
//! into place with one rename once the run has finished.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub struct Staging {
    tmp: PathBuf,
    dest: PathBuf,
    done: bool,
}

fn is_empty_dir(p: &Path) -> io::Result<bool> {
    Ok(fs::read_dir(p)?.next().is_none())
}

impl Staging {
    /// Fails when `dest` exists and is not an empty directory.
    pub fn new(dest: &Path) -> Result<Self, String> {
        if dest.exists() {
            let empty = dest.is_dir() && is_empty_dir(dest).map_err(|e| format!("out: {}: {e}", dest.display()))?;
            if !empty {
                return Err(format!(
                    "out: {} already exists and is not an empty directory; choose a fresh --out",
                    dest.display()
                ));
            }
        }
        let name = dest
            .file_name()
            .ok_or_else(|| format!("out: {} has no final component", dest.display()))?
            .to_string_lossy()
            .into_owned();
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| format!("out: {}: {e}", parent.display()))?;
        let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| format!("out: {}: {e}", tmp.display()))?;
        }
        fs::create_dir(&tmp).map_err(|e| format!("out: {}: {e}", tmp.display()))?;
        Ok(Self {
            tmp,
            dest: dest.to_path_buf(),
            done: false,
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.tmp.join(file)
    }

    pub fn publish(mut self) -> io::Result<PathBuf> {
        if self.dest.exists() {
            fs::remove_dir(&self.dest)?;
        }
        fs::rename(&self.tmp, &self.dest)?;
        self.done = true;
        Ok(self.dest.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn publish_moves_everything() {
        let root = tempfile::tempdir().unwrap();
        let dest = root.path().join("a/b");
        let s = Staging::new(&dest).unwrap();
        fs::write(s.path("x.txt"), "1").unwrap();
        assert!(!dest.exists());
        s.publish().unwrap();
        assert_eq!(fs::read_to_string(dest.join("x.txt")).unwrap(), "1");
        assert_eq!(fs::read_dir(root.path().join("a")).unwrap().count(), 1);
    }

    #[test]
    fn dropped_staging_leaves_nothing() {
        let root = tempfile::tempdir().unwrap();
        let dest = root.path().join("run");
        {
            let s = Staging::new(&dest).unwrap();
            fs::write(s.path("x.txt"), "1").unwrap();
        }
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
    }

    #[test]
    fn refuses_nonempty_destination() {
        let root = tempfile::tempdir().unwrap();
        fs::write(root.path().join("keep"), "k").unwrap();
        assert!(Staging::new(root.path()).is_err());
        let empty = root.path().join("empty");
        fs::create_dir(&empty).unwrap();
        let s = Staging::new(&empty).unwrap();
        s.publish().unwrap();
        assert!(empty.is_dir());
    }
}
