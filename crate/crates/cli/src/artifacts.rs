//! All-or-nothing artifact output.
//!
//! Each artifact is streamed into a hidden temp file next to its final path
//! while its SHA-256 is computed. Nothing becomes visible until `commit`
//! renames every staged file; dropping an uncommitted stage removes the temps.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

struct HashingWriter<W> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

struct Staged {
    temp: PathBuf,
    target: PathBuf,
}

pub struct Stage {
    dir: PathBuf,
    staged: Vec<Staged>,
    checksums: BTreeMap<String, String>,
    committed: bool,
}

impl Stage {
    pub fn new(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Stage {
            dir: dir.to_path_buf(),
            staged: Vec::new(),
            checksums: BTreeMap::new(),
            committed: false,
        })
    }

    /// Streams one artifact into a temp file. Returns its final path.
    pub fn write<E>(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> Result<(), E>,
    ) -> anyhow::Result<PathBuf>
    where
        E: Into<anyhow::Error>,
    {
        let target = self.dir.join(name);
        let temp = self.dir.join(format!(".{name}.tmp"));
        let file = File::create(&temp)?;
        self.staged.push(Staged {
            temp: temp.clone(),
            target: target.clone(),
        });
        let mut out = HashingWriter {
            inner: BufWriter::new(file),
            hasher: Sha256::new(),
        };
        body(&mut out).map_err(Into::into)?;
        out.flush()?;
        let HashingWriter { inner, hasher } = out;
        inner.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        self.checksums
            .insert(name.to_string(), hex::encode(hasher.finalize()));
        Ok(target)
    }

    pub fn checksums(&self) -> &BTreeMap<String, String> {
        &self.checksums
    }

    pub fn commit(mut self) -> io::Result<()> {
        for s in &self.staged {
            fs::rename(&s.temp, &s.target)?;
        }
        self.committed = true;
        Ok(())
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if !self.committed {
            for s in &self.staged {
                let _ = fs::remove_file(&s.temp);
            }
        }
    }
}
