//! Binary split cache.
//!
//! Layout (all integers little-endian):
//! `CTNCFDS1` · u32 users · u32 items · u64 seed · per user
//! (u32 n_train · u32 n_val · u32 n_test · n_train+n_val+n_test u32 item ids).

use std::fs;
use std::path::Path;

use super::{SplitDataset, UserSplit};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 8] = b"CTNCFDS1";

pub fn encode_split(split: &SplitDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 16 * split.num_users() + 4 * split.users().iter().map(UserSplit::len).sum::<usize>());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(split.num_users() as u32).to_le_bytes());
    out.extend_from_slice(&(split.num_items() as u32).to_le_bytes());
    out.extend_from_slice(&split.seed().to_le_bytes());
    for u in split.users() {
        for part in [&u.train, &u.val, &u.test] {
            out.extend_from_slice(&(part.len() as u32).to_le_bytes());
        }
        for &i in u.train.iter().chain(&u.val).chain(&u.test) {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Data(format!("split cache truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_split(bytes: &[u8]) -> Result<SplitDataset> {
    if bytes.len() < 8 || &bytes[..8] != CACHE_MAGIC {
        return Err(Error::Data("not a split cache (bad magic)".into()));
    }
    let mut r = Reader { buf: bytes, pos: 8 };
    let num_users = r.u32()? as usize;
    let num_items = r.u32()? as usize;
    let seed = r.u64()?;
    let mut users = Vec::with_capacity(num_users);
    for _ in 0..num_users {
        let (a, b, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let mut read = |n: usize| -> Result<Vec<u32>> { (0..n).map(|_| r.u32()).collect() };
        let train = read(a)?;
        let val = read(b)?;
        let test = read(c)?;
        users.push(UserSplit::new(train, val, test));
    }
    if r.pos != bytes.len() {
        return Err(Error::Data(format!("{} trailing bytes in split cache", bytes.len() - r.pos)));
    }
    SplitDataset::from_users(users, num_items, seed)
}

pub fn save_split(split: &SplitDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_split(split)).map_err(|e| Error::io(path, e))
}

pub fn load_split(path: impl AsRef<Path>) -> Result<SplitDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_split(&bytes)
}

/// True when the file starts with the split-cache magic.
pub fn is_split_cache(path: impl AsRef<Path>) -> bool {
    use std::io::Read;
    let mut head = [0u8; 8];
    fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map(|_| &head == CACHE_MAGIC)
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let split = SplitDataset::from_users(vec![UserSplit::new(vec![2], vec![0], vec![1])], 3, 0x0102).unwrap();
        let b = encode_split(&split);
        assert_eq!(&b[..8], b"CTNCFDS1");
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &3u32.to_le_bytes());
        assert_eq!(&b[16..24], &0x0102u64.to_le_bytes());
        assert_eq!(b.len(), 24 + 12 + 12);
        assert_eq!(decode_split(&b).unwrap(), split);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode_split(b"NOTACACHE").is_err());
        let split = SplitDataset::from_users(vec![UserSplit::new(vec![0, 1], vec![], vec![])], 2, 1).unwrap();
        let b = encode_split(&split);
        assert!(decode_split(&b[..b.len() - 1]).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(decode_split(&extra).is_err());
    }
}
