//! Single-file binary index format.
//!
//! Layout (little-endian): magic `EARBM25\0`, u32 version, f64 k1, f64 b,
//! u8 stemming, u8 stopwords, u8 index_titles, u32 doc count, then per doc
//! (string id, u32 length), u32 term count, then per term (string term,
//! u32 posting count, postings as delta-coded varint doc + varint tf).
//! Strings are a u32 byte length followed by UTF-8.

use std::fs;
use std::path::Path;

use super::{Bm25Params, Index, Posting};
use crate::error::{Error, Result};
use crate::text::Analyzer;

const MAGIC: &[u8; 8] = b"EARBM25\0";
pub const FORMAT_VERSION: u32 = 1;

impl Index {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        out.extend_from_slice(&self.params.k1.to_le_bytes());
        out.extend_from_slice(&self.params.b.to_le_bytes());
        out.push(self.params.analyzer.stemming as u8);
        out.push(self.params.analyzer.stopwords as u8);
        out.push(self.params.index_titles as u8);
        put_u32(&mut out, self.doc_ids.len() as u32);
        for (id, &len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            put_str(&mut out, id);
            put_u32(&mut out, len);
        }
        put_u32(&mut out, self.terms.len() as u32);
        for (term, postings) in self.terms.iter().zip(&self.postings) {
            put_str(&mut out, term);
            put_u32(&mut out, postings.len() as u32);
            let mut prev = 0u32;
            for p in postings {
                put_varint(&mut out, p.doc - prev);
                put_varint(&mut out, p.tf);
                prev = p.doc;
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Index> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::IndexFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::IndexFormat(format!(
                "unsupported version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let k1 = r.f64()?;
        let b = r.f64()?;
        let analyzer = Analyzer {
            stemming: r.u8()? != 0,
            stopwords: r.u8()? != 0,
        };
        let index_titles = r.u8()? != 0;
        let params = Bm25Params {
            k1,
            b,
            analyzer,
            index_titles,
        };
        params.validate()?;

        let n_docs = r.u32()? as usize;
        let mut doc_ids = Vec::with_capacity(n_docs);
        let mut doc_lengths = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            doc_ids.push(r.string()?);
            doc_lengths.push(r.u32()?);
        }
        let n_terms = r.u32()? as usize;
        let mut terms = Vec::with_capacity(n_terms);
        let mut postings = Vec::with_capacity(n_terms);
        for _ in 0..n_terms {
            terms.push(r.string()?);
            let count = r.u32()? as usize;
            let mut list = Vec::with_capacity(count);
            let mut doc = 0u32;
            for _ in 0..count {
                doc = doc
                    .checked_add(r.varint()?)
                    .ok_or_else(|| Error::IndexFormat("posting overflow".into()))?;
                list.push(Posting { doc, tf: r.varint()? });
            }
            postings.push(list);
        }
        if r.pos != bytes.len() {
            return Err(Error::IndexFormat("trailing bytes".into()));
        }
        let index = Index::assemble(params, doc_ids, doc_lengths, terms, postings);
        index.check_invariants()?;
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<u64> {
        let path = path.as_ref();
        let bytes = self.to_bytes();
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(bytes.len() as u64)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Index> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Index::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_varint(out: &mut Vec<u8>, mut v: u32) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::IndexFormat("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::IndexFormat("invalid UTF-8".into()))
    }

    fn varint(&mut self) -> Result<u32> {
        let mut v = 0u32;
        for shift in (0..35).step_by(7) {
            let byte = self.u8()?;
            v |= ((byte & 0x7f) as u32) << shift;
            if byte & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::IndexFormat("varint too long".into()))
    }
}
