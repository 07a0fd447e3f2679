//! Append-only command log.
//!
//! One JSON object per line. A torn final line, left by a crash in the
//! middle of a write, is cut off on open; every complete line before it is
//! replayed.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::command::LogEntry;

pub struct Wal {
    path: PathBuf,
    file: File,
    fsync: bool,
}

impl Wal {
    /// Opens (or creates) the log and returns it with every intact entry.
    pub fn open(path: impl AsRef<Path>, fsync: bool) -> io::Result<(Wal, Vec<LogEntry>)> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut entries = Vec::new();
        let mut good_len = 0u64;
        {
            let mut reader = BufReader::new(&file);
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 || !line.ends_with('\n') {
                    break;
                }
                match serde_json::from_str::<LogEntry>(line.trim_end()) {
                    Ok(e) => entries.push(e),
                    Err(_) => break,
                }
                good_len += n as u64;
            }
        }
        if file.metadata()?.len() != good_len {
            log::warn!("truncating command log {} to {} bytes", path.display(), good_len);
            file.set_len(good_len)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok((Wal { path, file, fsync }, entries))
    }

    pub fn append(&mut self, entry: &LogEntry) -> io::Result<()> {
        let mut buf = serde_json::to_vec(entry).map_err(io::Error::other)?;
        buf.push(b'\n');
        self.file.write_all(&buf)?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
