//! Where a receiver puts the bytes it gets.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use saratoga::session::TransferMode;

pub enum Sink {
    /// Random-access writes to `<final>.part`, renamed on success.
    File {
        dir: PathBuf,
        fixed: Option<PathBuf>,
        open: Option<(File, PathBuf)>,
    },
    /// In-order bytes to a writer. File transfers are reordered here;
    /// streams already arrive in order and may skip gaps.
    Ordered {
        out: Box<dyn Write>,
        next: u128,
        pending: BTreeMap<u128, Vec<u8>>,
    },
}

impl Sink {
    pub fn file(dir: PathBuf, fixed: Option<PathBuf>) -> Self {
        Sink::File {
            dir,
            fixed,
            open: None,
        }
    }

    pub fn ordered(out: Box<dyn Write>) -> Self {
        Sink::Ordered {
            out,
            next: 0,
            pending: BTreeMap::new(),
        }
    }

    /// `remote` is the path the sender announced, used when no output
    /// file was given.
    pub fn write(
        &mut self,
        mode: TransferMode,
        remote: Option<&str>,
        offset: u128,
        bytes: &[u8],
    ) -> io::Result<()> {
        match self {
            Sink::File { dir, fixed, open } => {
                if open.is_none() {
                    let target = fixed
                        .clone()
                        .unwrap_or_else(|| dir.join(local_name(remote)));
                    let part = part_path(&target);
                    let f = OpenOptions::new()
                        .create(true)
                        .write(true)
                        .truncate(true)
                        .open(&part)?;
                    *open = Some((f, target));
                }
                let (f, _) = open.as_mut().unwrap();
                let off = u64::try_from(offset).map_err(|_| {
                    io::Error::other("offset beyond 2^64 cannot be written to a file")
                })?;
                f.seek(SeekFrom::Start(off))?;
                f.write_all(bytes)
            }
            Sink::Ordered { out, next, pending } => {
                if mode == TransferMode::Stream {
                    *next = offset + bytes.len() as u128;
                    return out.write_all(bytes);
                }
                if offset > *next {
                    pending.insert(offset, bytes.to_vec());
                    return Ok(());
                }
                out.write_all(bytes)?;
                *next = offset + bytes.len() as u128;
                while let Some(e) = pending.first_entry() {
                    if *e.key() != *next {
                        break;
                    }
                    let b = e.remove();
                    out.write_all(&b)?;
                    *next += b.len() as u128;
                }
                Ok(())
            }
        }
    }

    /// Publishes the output. Returns the final file path, if any. An empty
    /// transfer still produces an empty file.
    pub fn commit(self, remote: Option<&str>) -> io::Result<Option<PathBuf>> {
        match self {
            Sink::File { dir, fixed, open } => {
                let target = match open {
                    Some((f, target)) => {
                        f.sync_all()?;
                        drop(f);
                        fs::rename(part_path(&target), &target)?;
                        target
                    }
                    None => {
                        let target = fixed.unwrap_or_else(|| dir.join(local_name(remote)));
                        File::create(&target)?;
                        target
                    }
                };
                Ok(Some(target))
            }
            Sink::Ordered { mut out, .. } => {
                out.flush()?;
                Ok(None)
            }
        }
    }

    /// Drops any partial output.
    pub fn discard(self) {
        if let Sink::File {
            open: Some((f, target)),
            ..
        } = self
        {
            drop(f);
            let _ = fs::remove_file(part_path(&target));
        }
    }
}

fn part_path(target: &Path) -> PathBuf {
    let mut s = target.as_os_str().to_owned();
    s.push(".part");
    PathBuf::from(s)
}

/// Last component of a sender's path; never escapes the output directory.
pub fn local_name(remote: Option<&str>) -> String {
    remote
        .and_then(|p| p.rsplit(['/', '\\']).next())
        .filter(|n| !n.is_empty() && *n != "." && *n != "..")
        .unwrap_or("saratoga.out")
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_stay_inside_the_directory() {
        assert_eq!(local_name(Some("../../etc/passwd")), "passwd");
        assert_eq!(local_name(Some("a/b/")), "saratoga.out");
        assert_eq!(local_name(Some("..")), "saratoga.out");
        assert_eq!(local_name(None), "saratoga.out");
        assert_eq!(local_name(Some("c:\\x\\y.bin")), "y.bin");
    }

    #[test]
    fn ordered_sink_reassembles_file_writes() {
        let buf = std::rc::Rc::new(std::cell::RefCell::new(Vec::new()));
        struct Shared(std::rc::Rc<std::cell::RefCell<Vec<u8>>>);
        impl Write for Shared {
            fn write(&mut self, b: &[u8]) -> io::Result<usize> {
                self.0.borrow_mut().extend_from_slice(b);
                Ok(b.len())
            }
            fn flush(&mut self) -> io::Result<()> {
                Ok(())
            }
        }
        let mut s = Sink::ordered(Box::new(Shared(buf.clone())));
        let m = TransferMode::File;
        s.write(m, None, 4, b"ef").unwrap();
        s.write(m, None, 2, b"cd").unwrap();
        assert!(buf.borrow().is_empty());
        s.write(m, None, 0, b"ab").unwrap();
        s.commit(None).unwrap();
        assert_eq!(&*buf.borrow(), b"abcdef");
    }
}
