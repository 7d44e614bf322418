use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom};
use std::path::Path;

use sha2::{Digest, Sha256};

/// Random-access bytes a file sender transmits.
pub trait ByteSource: Send {
    fn len(&self) -> u128;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fills `buf` with the bytes at `offset..offset + buf.len()`.
    fn read_at(&mut self, offset: u128, buf: &mut [u8]) -> io::Result<()>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemSource(pub Vec<u8>);

impl ByteSource for MemSource {
    fn len(&self) -> u128 {
        self.0.len() as u128
    }

    fn read_at(&mut self, offset: u128, buf: &mut [u8]) -> io::Result<()> {
        let start = usize::try_from(offset).map_err(|_| io::ErrorKind::UnexpectedEof)?;
        let src = start
            .checked_add(buf.len())
            .and_then(|end| self.0.get(start..end))
            .ok_or(io::ErrorKind::UnexpectedEof)?;
        buf.copy_from_slice(src);
        Ok(())
    }
}

pub struct FileSource {
    file: File,
    len: u128,
}

impl FileSource {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len() as u128;
        Ok(Self { file, len })
    }
}

impl ByteSource for FileSource {
    fn len(&self) -> u128 {
        self.len
    }

    fn read_at(&mut self, offset: u128, buf: &mut [u8]) -> io::Result<()> {
        let off = u64::try_from(offset).map_err(|_| io::ErrorKind::UnexpectedEof)?;
        self.file.seek(SeekFrom::Start(off))?;
        self.file.read_exact(buf)
    }
}

/// Deterministic pseudo-random content of any length up to `2^128 - 1`
/// without storing it. Byte `i` depends only on `(seed, i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSource {
    pub len: u128,
    pub seed: u64,
}

impl SyntheticSource {
    pub fn new(len: u128, seed: u64) -> Self {
        Self { len, seed }
    }

    pub fn byte_at(&self, offset: u128) -> u8 {
        let word = offset >> 3;
        let mut x = (word as u64) ^ ((word >> 64) as u64).rotate_left(29) ^ self.seed;
        // splitmix64 finaliser
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^= x >> 31;
        x.to_le_bytes()[(offset & 7) as usize]
    }
}

impl ByteSource for SyntheticSource {
    fn len(&self) -> u128 {
        self.len
    }

    fn read_at(&mut self, offset: u128, buf: &mut [u8]) -> io::Result<()> {
        let end = offset
            .checked_add(buf.len() as u128)
            .filter(|&e| e <= self.len)
            .ok_or(io::ErrorKind::UnexpectedEof)?;
        debug_assert!(end >= offset);
        for (i, b) in buf.iter_mut().enumerate() {
            *b = self.byte_at(offset + i as u128);
        }
        Ok(())
    }
}

/// SHA-256 over the whole source, read in 64 KiB chunks.
pub fn sha256_source(src: &mut dyn ByteSource) -> io::Result<[u8; 32]> {
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 64 * 1024];
    let len = src.len();
    let mut off = 0u128;
    while off < len {
        let n = (len - off).min(buf.len() as u128) as usize;
        src.read_at(off, &mut buf[..n])?;
        h.update(&buf[..n]);
        off += n as u128;
    }
    Ok(h.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mem_source_bounds() {
        let mut s = MemSource(b"hello".to_vec());
        let mut buf = [0u8; 3];
        s.read_at(2, &mut buf).unwrap();
        assert_eq!(&buf, b"llo");
        assert!(s.read_at(3, &mut buf).is_err());
    }

    #[test]
    fn synthetic_source_is_stable_and_sparse() {
        let mut s = SyntheticSource::new(u128::MAX, 7);
        let mut a = [0u8; 16];
        let mut b = [0u8; 16];
        s.read_at(u128::MAX - 16, &mut a).unwrap();
        s.read_at(u128::MAX - 16, &mut b).unwrap();
        assert_eq!(a, b);
        assert!(s.read_at(u128::MAX - 15, &mut a).is_err());
        assert_ne!(
            SyntheticSource::new(10, 1).byte_at(3),
            SyntheticSource::new(10, 2).byte_at(3)
        );
    }

    #[test]
    fn digest_matches_direct_hash() {
        let data: Vec<u8> = (0..200_000u32).map(|i| (i * 31 % 251) as u8).collect();
        let want: [u8; 32] = Sha256::digest(&data).into();
        assert_eq!(sha256_source(&mut MemSource(data)).unwrap(), want);
    }
}
