//! Byte-level copy/insert delta codec.
//!
//! A delta is a sequence of operations applied left to right:
//!
//! ```text
//! 0x01 COPY   offset:u32be len:u32be      copy base[offset..offset+len]
//! 0x02 INSERT len:u32be bytes[len]        emit literal bytes
//! ```
//!
//! The encoder greedily takes the longest match in the base for each target
//! position, using a 4-byte window index to find candidates.

use std::collections::HashMap;

use crate::error::{Error, Result};

const OP_COPY: u8 = 0x01;
const OP_INSERT: u8 = 0x02;
const WINDOW: usize = 4;
const MAX_CANDIDATES: usize = 16;

/// Pluggable compress/decompress pair used by the node store.
pub trait DeltaCodec: Send + Sync {
    fn encode(&self, base: &[u8], target: &[u8]) -> Vec<u8>;
    fn decode(&self, base: &[u8], delta: &[u8]) -> Result<Vec<u8>>;
}

#[derive(Clone, Debug)]
pub struct ByteDelta {
    /// Shortest match worth a COPY op; shorter runs go out as literals.
    pub min_match: usize,
}

impl Default for ByteDelta {
    fn default() -> Self {
        ByteDelta { min_match: 8 }
    }
}

fn window(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn common_prefix(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

fn push_insert(out: &mut Vec<u8>, lit: &[u8]) {
    if lit.is_empty() {
        return;
    }
    out.push(OP_INSERT);
    out.extend_from_slice(&(lit.len() as u32).to_be_bytes());
    out.extend_from_slice(lit);
}

fn push_copy(out: &mut Vec<u8>, offset: usize, len: usize) {
    out.push(OP_COPY);
    out.extend_from_slice(&(offset as u32).to_be_bytes());
    out.extend_from_slice(&(len as u32).to_be_bytes());
}

impl DeltaCodec for ByteDelta {
    fn encode(&self, base: &[u8], target: &[u8]) -> Vec<u8> {
        let mut index: HashMap<u32, Vec<usize>> = HashMap::new();
        if base.len() >= WINDOW {
            for i in 0..=base.len() - WINDOW {
                let slot = index.entry(window(&base[i..])).or_default();
                if slot.len() < MAX_CANDIDATES {
                    slot.push(i);
                }
            }
        }

        let min_match = self.min_match.max(WINDOW);
        let mut out = Vec::new();
        let mut lit_start = 0;
        let mut i = 0;
        // Where the previous copy ended; edits usually resume there.
        let mut expected = None;
        while i < target.len() {
            let mut best = (0, 0);
            if let Some(e) = expected {
                let len = common_prefix(&base[e..], &target[i..]);
                best = (e, len);
            }
            if i + WINDOW <= target.len() {
                if let Some(cands) = index.get(&window(&target[i..])) {
                    for &c in cands {
                        let len = common_prefix(&base[c..], &target[i..]);
                        if len > best.1 {
                            best = (c, len);
                        }
                    }
                }
            }
            if best.1 >= min_match {
                push_insert(&mut out, &target[lit_start..i]);
                push_copy(&mut out, best.0, best.1);
                i += best.1;
                lit_start = i;
                expected = Some(best.0 + best.1).filter(|&e| e < base.len());
            } else {
                i += 1;
                expected = expected.map(|e| e + 1).filter(|&e| e < base.len());
            }
        }
        push_insert(&mut out, &target[lit_start..]);
        out
    }

    fn decode(&self, base: &[u8], delta: &[u8]) -> Result<Vec<u8>> {
        let bad = |m: &str| Error::Malformed(format!("delta: {m}"));
        let read_u32 = |at: usize| -> Result<usize> {
            delta
                .get(at..at + 4)
                .map(|b| u32::from_be_bytes(b.try_into().unwrap()) as usize)
                .ok_or_else(|| bad("truncated"))
        };
        let mut out = Vec::new();
        let mut p = 0;
        while p < delta.len() {
            match delta[p] {
                OP_COPY => {
                    let off = read_u32(p + 1)?;
                    let len = read_u32(p + 5)?;
                    let src = off
                        .checked_add(len)
                        .and_then(|end| base.get(off..end))
                        .ok_or_else(|| bad("copy out of range"))?;
                    out.extend_from_slice(src);
                    p += 9;
                }
                OP_INSERT => {
                    let len = read_u32(p + 1)?;
                    let lit = delta
                        .get(p + 5..p + 5 + len)
                        .ok_or_else(|| bad("truncated literal"))?;
                    out.extend_from_slice(lit);
                    p += 5 + len;
                }
                op => return Err(bad(&format!("unknown op {op:#x}"))),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_byte_edit_is_small() {
        let base: Vec<u8> = (0..1024u32).map(|i| (i * 7 % 251) as u8).collect();
        let mut target = base.clone();
        target[500] ^= 0xff;
        let d = ByteDelta::default().encode(&base, &target);
        assert!(d.len() < 40, "delta {} bytes", d.len());
        assert_eq!(ByteDelta::default().decode(&base, &d).unwrap(), target);
    }

    #[test]
    fn random_values_do_not_compress() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut base = vec![0u8; 1024];
        let mut target = vec![0u8; 1024];
        rng.fill(&mut base[..]);
        rng.fill(&mut target[..]);
        let d = ByteDelta::default().encode(&base, &target);
        assert!(d.len() >= target.len());
    }

    #[test]
    fn empty_cases() {
        let c = ByteDelta::default();
        assert_eq!(c.decode(b"abc", &c.encode(b"abc", b"")).unwrap(), b"");
        assert_eq!(c.decode(b"", &c.encode(b"", b"xyz")).unwrap(), b"xyz");
    }

    #[test]
    fn corrupt_delta_is_an_error() {
        let c = ByteDelta::default();
        assert!(c
            .decode(b"abc", &[OP_COPY, 0, 0, 0, 9, 0, 0, 0, 1])
            .is_err());
        assert!(c.decode(b"abc", &[OP_INSERT, 0, 0, 0, 9]).is_err());
        assert!(c.decode(b"abc", &[0x77]).is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(base in proptest::collection::vec(any::<u8>(), 0..600),
                                 edits in proptest::collection::vec((any::<u16>(), any::<u8>()), 0..8)) {
            let mut target = base.clone();
            for (pos, b) in edits {
                if target.is_empty() { target.push(b); continue; }
                let p = pos as usize % target.len();
                match b % 3 {
                    0 => target[p] = b,
                    1 => target.insert(p, b),
                    _ => { target.remove(p); }
                }
            }
            let c = ByteDelta::default();
            prop_assert_eq!(c.decode(&base, &c.encode(&base, &target)).unwrap(), target);
        }
    }
}
