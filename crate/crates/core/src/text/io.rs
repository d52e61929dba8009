//! Binary embedding tables and plain-text vocabulary files.
//!
//! Embedding file layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "ATRKEMB\0"
//! version    u32
//! dim        u64
//! vocab_len  u64
//! min_count  u64
//! vocab_len records:
//!     token_len u32, token UTF-8 bytes, dim x f64
//! ```
//!
//! Records are in index order, so the first two are `<pad>` and `<unk>`.

use std::io::{BufRead, Read, Write};

use super::{Embeddings, EmbeddingMatrix, Vocab, PAD_TOKEN, UNK_TOKEN};
use crate::binio::{read_f64, read_u32, read_u64, write_f64};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"ATRKEMB\0";
pub const EMBEDDING_VERSION: u32 = 1;

pub fn write_embeddings<W: Write>(mut w: W, embeddings: &Embeddings) -> Result<()> {
    let dim = embeddings.dim();
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    w.write_all(&(dim as u64).to_le_bytes())?;
    w.write_all(&(embeddings.vocab.len() as u64).to_le_bytes())?;
    w.write_all(&(embeddings.vocab.min_count() as u64).to_le_bytes())?;
    for (id, tok) in embeddings.vocab.tokens().iter().enumerate() {
        let bytes = tok.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        for &v in embeddings.table.row(id) {
            write_f64(&mut w, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings<R: Read>(mut r: R) -> Result<Embeddings> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("embedding file too short for header".into()))?;
    if &magic != EMBEDDING_MAGIC {
        return Err(Error::Format("not an embedding file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != EMBEDDING_VERSION {
        return Err(Error::Format(format!("unsupported embedding file version {version}")));
    }
    let dim = read_u64(&mut r)? as usize;
    let len = read_u64(&mut r)? as usize;
    let min_count = read_u64(&mut r)? as usize;
    if dim == 0 || len < 2 {
        return Err(Error::Format(format!("bad embedding header: dim {dim}, {len} tokens")));
    }
    let mut tokens = Vec::with_capacity(len);
    let mut data = Vec::with_capacity(len.saturating_mul(dim).min(1 << 28));
    for _ in 0..len {
        let tlen = read_u32(&mut r)? as usize;
        let mut buf = vec![0u8; tlen];
        r.read_exact(&mut buf)?;
        let tok = String::from_utf8(buf).map_err(|_| Error::Format("token is not UTF-8".into()))?;
        tokens.push(tok);
        for _ in 0..dim {
            data.push(read_f64(&mut r)?);
        }
    }
    if tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
        return Err(Error::Format("embedding file must start with <pad> and <unk>".into()));
    }
    let vocab = Vocab::from_tokens(tokens.into_iter().skip(2), min_count)?;
    let table = EmbeddingMatrix::new(Matrix::from_vec(len, dim, data)?)?;
    Embeddings::new(vocab, table)
}

/// One token per line; line `n` (0-based) holds index `n + 2`.
pub fn write_vocab<W: Write>(mut w: W, vocab: &Vocab) -> Result<()> {
    for tok in &vocab.tokens()[2..] {
        writeln!(w, "{tok}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vocab<R: BufRead>(r: R, min_count: usize) -> Result<Vocab> {
    let tokens = r.lines().collect::<std::io::Result<Vec<_>>>()?;
    Vocab::from_tokens(tokens, min_count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Embeddings {
        let vocab = Vocab::from_tokens(["été", "b"], 2).unwrap();
        let m = Matrix::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![0.1, -0.2, 1e-300],
            vec![std::f64::consts::PI, -0.0, 5.5],
            vec![f64::MIN_POSITIVE, 1.0 / 3.0, -7.25],
        ])
        .unwrap();
        Embeddings::new(vocab, EmbeddingMatrix::new(m).unwrap()).unwrap()
    }

    #[test]
    fn embeddings_round_trip_bit_exact() {
        let e = sample();
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &e).unwrap();
        let back = read_embeddings(buf.as_slice()).unwrap();
        assert_eq!(back.vocab, e.vocab);
        let bits = |x: &Embeddings| x.table.matrix().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&e));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let e = sample();
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &e).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_embeddings(bad.as_slice()), Err(Error::Format(_))));
        buf.truncate(buf.len() - 3);
        assert!(read_embeddings(buf.as_slice()).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = sample().vocab;
        let mut buf = Vec::new();
        write_vocab(&mut buf, &v).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "été\nb\n");
        assert_eq!(read_vocab(buf.as_slice(), 2).unwrap(), v);
    }
}
