//! Binary index persistence.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  8 bytes  "SUBJIDX1"
//! u32    n_terms
//! u32    k
//! u32    dim_in
//! f32    mean              dim_in values
//! f32    components        k * dim_in values, row-major
//! f32    reduced           n_terms * k values, row-major
//! terms  n_terms entries   u32 byte length + UTF-8 bytes
//! ```
//!
//! Everything stored is already f32 in memory, so a save/load round trip is
//! bit-exact and rankings do not move.

use std::collections::HashSet;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Metric, VocabError, VocabIndex};

const MAGIC: &[u8; 8] = b"SUBJIDX1";

impl VocabIndex {
    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        for n in [self.terms.len(), self.k, self.dim_in] {
            let n = u32::try_from(n)
                .map_err(|_| VocabError::Corrupt(format!("dimension {n} exceeds u32")))?;
            w.write_all(&n.to_le_bytes())?;
        }
        for &v in self.mean.iter().chain(&self.components).chain(&self.reduced) {
            w.write_all(&v.to_le_bytes())?;
        }
        for term in &self.terms {
            let len = u32::try_from(term.len())
                .map_err(|_| VocabError::Corrupt(format!("term length {} exceeds u32", term.len())))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(term.as_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads an index written by [`save`](Self::save). The metric is not part
    /// of the file; the loaded index answers with cosine distance until
    /// [`set_metric`](Self::set_metric) says otherwise (rankings agree either
    /// way on unit rows).
    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let mut r = BufReader::new(std::fs::File::open(path)?);

        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(VocabError::BadMagic);
        }

        let n_terms = read_u32(&mut r)? as usize;
        let k = read_u32(&mut r)? as usize;
        let dim_in = read_u32(&mut r)? as usize;
        if k == 0 || dim_in == 0 || n_terms == 0 {
            return Err(VocabError::Corrupt(
                "zero-sized index dimensions".to_owned(),
            ));
        }

        let mean = read_f32s(&mut r, dim_in)?;
        let components = read_f32s(&mut r, k * dim_in)?;
        let reduced = read_f32s(&mut r, n_terms * k)?;

        let mut terms = Vec::with_capacity(n_terms);
        for _ in 0..n_terms {
            let len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            read_exact(&mut r, &mut buf)?;
            let term = String::from_utf8(buf)
                .map_err(|_| VocabError::Corrupt("term is not valid UTF-8".to_owned()))?;
            terms.push(term);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(VocabError::Corrupt("trailing bytes after term table".to_owned()));
        }

        let exact: HashSet<String> = terms.iter().cloned().collect();
        Ok(Self {
            terms,
            exact,
            mean,
            components,
            reduced,
            k,
            dim_in,
            metric: Metric::Cosine,
            explained_variance: Vec::new(),
        })
    }

    /// Reads only the header: `(n_terms, k, dim_in)`. Cheap enough for
    /// config validation against large index files.
    pub fn peek_dims(path: &Path) -> Result<(usize, usize, usize), VocabError> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(VocabError::BadMagic);
        }
        let n_terms = read_u32(&mut r)? as usize;
        let k = read_u32(&mut r)? as usize;
        let dim_in = read_u32(&mut r)? as usize;
        Ok((n_terms, k, dim_in))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), VocabError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            VocabError::Corrupt("unexpected end of file".to_owned())
        } else {
            VocabError::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, VocabError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f32>, VocabError> {
    let mut out = Vec::with_capacity(count);
    let mut buf = [0u8; 4];
    for _ in 0..count {
        read_exact(r, &mut buf)?;
        out.push(f32::from_le_bytes(buf));
    }
    Ok(out)
}
