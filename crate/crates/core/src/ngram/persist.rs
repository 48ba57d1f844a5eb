//! `NGIX` binary index files. Layout is documented in `docs/ngix-format.md`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::index::{NGramIndex, SmoothingKind, SmoothingSpec};
use super::vocab::{TokenId, Vocabulary};
use super::NGramError;

const MAGIC: &[u8; 4] = b"NGIX";
const VERSION: u32 = 1;

impl NGramIndex {
    pub fn save(&self, path: &Path) -> Result<(), NGramError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NGramError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }

    /// Serialize; entries are sorted so identical indexes give identical bytes.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NGramError> {
        w.write_all(MAGIC)?;
        put_u32(&mut w, VERSION)?;
        put_u32(&mut w, self.max_order as u32)?;
        put_u32(&mut w, 0)?; // smoothing kind: additive backoff
        put_f64(&mut w, self.smoothing.delta)?;
        put_u32(&mut w, self.smoothing.lambdas.len() as u32)?;
        for &l in &self.smoothing.lambdas {
            put_f64(&mut w, l)?;
        }
        w.write_all(&[u8::from(self.smoothing.unknown_slot)])?;

        put_u32(&mut w, self.vocab.len() as u32)?;
        for word in self.vocab.words() {
            put_u32(&mut w, word.len() as u32)?;
            w.write_all(word.as_bytes())?;
        }
        put_u64(&mut w, self.token_count)?;
        put_u32(&mut w, self.tail.len() as u32)?;
        for &t in &self.tail {
            put_u32(&mut w, t)?;
        }
        for table in &self.counts {
            let mut entries: Vec<(&[TokenId], u64)> = table.iter().map(|(k, &v)| (&k[..], v)).collect();
            entries.sort_unstable();
            put_u64(&mut w, entries.len() as u64)?;
            for (key, count) in entries {
                for &t in key {
                    put_u32(&mut w, t)?;
                }
                put_u64(&mut w, count)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NGramError> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(NGramError::Format("bad magic bytes".into()));
        }
        let version = get_u32(&mut r)?;
        if version != VERSION {
            return Err(NGramError::Format(format!("unsupported version {version}")));
        }
        let max_order = get_u32(&mut r)? as usize;
        if max_order == 0 {
            return Err(NGramError::Format("max_order is zero".into()));
        }
        if get_u32(&mut r)? != 0 {
            return Err(NGramError::Format("unknown smoothing kind".into()));
        }
        let delta = get_f64(&mut r)?;
        let n_lambdas = get_u32(&mut r)? as usize;
        let lambdas = (0..n_lambdas).map(|_| get_f64(&mut r)).collect::<Result<Vec<_>, _>>()?;
        let mut flag = [0u8; 1];
        read_exact(&mut r, &mut flag)?;
        let smoothing = SmoothingSpec {
            kind: SmoothingKind::AdditiveBackoff,
            delta,
            lambdas,
            unknown_slot: flag[0] != 0,
        };
        smoothing.validate().map_err(|e| NGramError::Format(e.to_string()))?;

        let vocab_len = get_u32(&mut r)? as usize;
        let mut vocab = Vocabulary::new();
        for _ in 0..vocab_len {
            let len = get_u32(&mut r)? as usize;
            let mut bytes = vec![0u8; len];
            read_exact(&mut r, &mut bytes)?;
            let word = String::from_utf8(bytes).map_err(|_| NGramError::Format("vocabulary entry is not UTF-8".into()))?;
            if vocab.intern(&word) as usize != vocab.len() - 1 {
                return Err(NGramError::Format(format!("duplicate vocabulary entry {word:?}")));
            }
        }
        let check = |t: TokenId| {
            if (t as usize) < vocab_len {
                Ok(t)
            } else {
                Err(NGramError::Format(format!("token id {t} outside vocabulary")))
            }
        };
        let token_count = get_u64(&mut r)?;
        let tail_len = get_u32(&mut r)? as usize;
        let tail = (0..tail_len)
            .map(|_| get_u32(&mut r).and_then(check))
            .collect::<Result<Vec<_>, _>>()?;
        let mut counts = Vec::with_capacity(max_order);
        for order in 1..=max_order {
            let n = get_u64(&mut r)?;
            let mut table = HashMap::with_capacity(n.min(1 << 24) as usize);
            for _ in 0..n {
                let key = (0..order)
                    .map(|_| get_u32(&mut r).and_then(check))
                    .collect::<Result<Box<[TokenId]>, _>>()?;
                table.insert(key, get_u64(&mut r)?);
            }
            counts.push(table);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(NGramError::Format("trailing bytes".into()));
        }
        Ok(NGramIndex {
            max_order,
            vocab,
            smoothing,
            token_count,
            counts,
            tail,
        })
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), NGramError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => NGramError::Format("truncated file".into()),
        _ => NGramError::Io(e),
    })
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_bits().to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, NGramError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64, NGramError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64, NGramError> {
    get_u64(r).map(f64::from_bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_identity_and_deterministic() {
        let idx = NGramIndex::build("the cat sleeps .\nthe cats sleep .\n", 3).unwrap();
        let mut a = Vec::new();
        idx.write_to(&mut a).unwrap();
        assert_eq!(&a[..4], b"NGIX");
        let back = NGramIndex::read_from(a.as_slice()).unwrap();
        assert_eq!(back, idx);
        let mut b = Vec::new();
        back.write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_corruption() {
        let idx = NGramIndex::build("a b a", 2).unwrap();
        let mut bytes = Vec::new();
        idx.write_to(&mut bytes).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(NGramIndex::read_from(bad.as_slice()), Err(NGramError::Format(_))));

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(NGramIndex::read_from(truncated), Err(NGramError::Format(_))));

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(NGramIndex::read_from(trailing.as_slice()), Err(NGramError::Format(_))));

        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(NGramIndex::read_from(version.as_slice()), Err(NGramError::Format(_))));
    }
}
