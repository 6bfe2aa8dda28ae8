//! All-or-nothing output: files are staged as temporaries in the output
//! directory and renamed into place only once every one has been written.

use std::io::Write;
use std::path::{Path, PathBuf};

use memtrans_core::{Error, Result};
use serde::Serialize;
use tempfile::NamedTempFile;

pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn bytes(&mut self, name: &str, data: Vec<u8>) {
        self.files.push((name.to_string(), data));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut data = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
            path: self.dir.join(name),
            source,
        })?;
        data.push(b'\n');
        self.bytes(name, data);
        Ok(())
    }

    pub fn text(&mut self, name: &str, text: String) {
        self.bytes(name, text.into_bytes());
    }

    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| Error::Io { path, source }
        };
        std::fs::create_dir_all(&self.dir).map_err(io(&self.dir))?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, data) in &self.files {
            let mut tmp = NamedTempFile::new_in(&self.dir).map_err(io(&self.dir))?;
            tmp.write_all(data).map_err(io(tmp.path()))?;
            tmp.as_file().sync_all().map_err(io(tmp.path()))?;
            staged.push((tmp, self.dir.join(name)));
        }
        let mut written = Vec::with_capacity(staged.len());
        for (tmp, dest) in staged {
            tmp.persist(&dest).map_err(|e| Error::Io {
                path: dest.clone(),
                source: e.error,
            })?;
            written.push(dest);
        }
        Ok(written)
    }
}
