//! Pretrained word vectors and fixed-length batch encoding.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::corpus::{Condition, Datapoint, MASK};
use crate::error::{Error, Result};

/// Row shared by out-of-vocabulary tokens and the mask; always zero.
pub const RESERVED_INDEX: usize = 0;

/// Vocabulary-to-vector map. Row 0 is the reserved zero row; file entries
/// start at row 1. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Vec<f32>,
}

impl EmbeddingTable {
    /// Builds a table from `(token, vector)` entries; later duplicates are ignored.
    pub fn from_entries<I>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f32>)>,
    {
        if dim == 0 {
            return Err(Error::invalid("embeddings", "dimension must be positive"));
        }
        let mut t = EmbeddingTable {
            dim,
            tokens: vec![String::new()],
            index: HashMap::new(),
            matrix: vec![0.0; dim],
        };
        for (tok, v) in entries {
            if v.len() != dim {
                return Err(Error::invalid(
                    "embeddings",
                    format!("{tok:?} has {} values, expected {dim}", v.len()),
                ));
            }
            t.push(tok, &v);
        }
        if t.vocab_size() == 0 {
            return Err(Error::invalid("embeddings", "empty table"));
        }
        Ok(t)
    }

    fn push(&mut self, tok: String, v: &[f32]) {
        if tok == MASK || self.index.contains_key(&tok) {
            return;
        }
        self.index.insert(tok.clone(), self.tokens.len());
        self.tokens.push(tok);
        self.matrix.extend_from_slice(v);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows including the reserved row.
    pub fn rows(&self) -> usize {
        self.tokens.len()
    }

    /// Number of real entries.
    pub fn vocab_size(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn token(&self, row: usize) -> Option<&str> {
        (row > 0).then(|| self.tokens.get(row).map(String::as_str)).flatten()
    }

    pub fn get_exact(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Row for `token`, trying it as-is, capitalised, then lowercased;
    /// the mask and unknown tokens map to [`RESERVED_INDEX`].
    pub fn lookup(&self, token: &str) -> usize {
        if token == MASK {
            return RESERVED_INDEX;
        }
        if let Some(i) = self.get_exact(token) {
            return i;
        }
        let mut chars = token.chars();
        if let Some(first) = chars.next() {
            let cap: String = first.to_uppercase().chain(chars).collect();
            if let Some(i) = self.get_exact(&cap) {
                return i;
            }
        }
        self.get_exact(&token.to_lowercase()).unwrap_or(RESERVED_INDEX)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    /// SHA-256 over the dimension and every row, for frozen-table checks.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for (tok, row) in self.tokens.iter().zip(self.matrix.chunks(self.dim)) {
            h.update(tok.as_bytes());
            h.update([0]);
            for v in row {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Writes the binary vector format (header, then token, space, little-endian floats, newline).
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{} {}", self.vocab_size(), self.dim)?;
        for row in 1..self.rows() {
            w.write_all(self.tokens[row].as_bytes())?;
            w.write_all(b" ")?;
            for &v in self.row(row) {
                w.write_f32::<LittleEndian>(v)?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the text variant with a header line.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{} {}", self.vocab_size(), self.dim)?;
        for row in 1..self.rows() {
            write!(w, "{}", self.tokens[row])?;
            for v in self.row(row) {
                write!(w, " {v:?}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Counted<R> {
    inner: BufReader<R>,
    offset: u64,
}

impl<R: Read> Counted<R> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::VectorFormat {
            offset: self.offset,
            msg: msg.into(),
        }
    }

    fn line(&mut self) -> Result<Option<Vec<u8>>> {
        let mut buf = Vec::new();
        let n = self.inner.read_until(b'\n', &mut buf)?;
        self.offset += n as u64;
        if n == 0 {
            return Ok(None);
        }
        if buf.last() == Some(&b'\n') {
            buf.pop();
        }
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
        Ok(Some(buf))
    }

    fn peek_line(&mut self) -> Result<Vec<u8>> {
        let buf = self.inner.fill_buf()?;
        let end = buf.iter().position(|&b| b == b'\n').unwrap_or(buf.len());
        Ok(buf[..end].to_vec())
    }

    fn byte(&mut self) -> Result<Option<u8>> {
        let mut b = [0u8];
        match self.inner.read_exact(&mut b) {
            Ok(()) => {
                self.offset += 1;
                Ok(Some(b[0]))
            }
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

fn parse_header(line: &[u8]) -> Option<(usize, usize)> {
    let s = std::str::from_utf8(line).ok()?;
    let mut it = s.split_whitespace();
    let count = it.next()?.parse().ok()?;
    let dim = it.next()?.parse().ok()?;
    it.next().is_none().then_some((count, dim))
}

fn parse_text_entry(line: &[u8], dim: Option<usize>) -> Option<(String, Vec<f32>)> {
    let s = std::str::from_utf8(line).ok()?;
    let mut it = s.split(' ').filter(|f| !f.is_empty());
    let tok = it.next()?.to_string();
    let v: Vec<f32> = it.map(|f| f.trim().parse().ok()).collect::<Option<_>>()?;
    if v.is_empty() || dim.is_some_and(|d| d != v.len()) {
        return None;
    }
    Some((tok, v))
}

/// Loads a vector file in the binary format or its text variant (auto-detected).
///
/// At most `limit` entries are read. Structural problems are reported with the
/// byte offset where they were found.
pub fn load_vectors(path: &Path, limit: Option<usize>) -> Result<EmbeddingTable> {
    if limit == Some(0) {
        return Err(Error::invalid("embeddings", "limit 0 gives an empty table"));
    }
    let mut r = Counted {
        inner: BufReader::with_capacity(1 << 20, File::open(path)?),
        offset: 0,
    };
    let first = r.peek_line()?;
    let header = parse_header(&first);
    let (count, dim) = match header {
        Some((c, d)) => {
            r.line()?;
            if d == 0 {
                return Err(r.fail("dimension 0 in header"));
            }
            (Some(c), d)
        }
        None => match parse_text_entry(&first, None) {
            Some((_, v)) => (None, v.len()),
            None => return Err(r.fail("malformed header")),
        },
    };
    let wanted = match (count, limit) {
        (Some(c), Some(l)) => c.min(l),
        (Some(c), None) => c,
        (None, l) => l.unwrap_or(usize::MAX),
    };
    if wanted == 0 {
        return Err(r.fail("header declares no entries"));
    }
    let text = header.is_none() || parse_text_entry(&r.peek_line()?, Some(dim)).is_some();
    let mut entries = Vec::new();
    if text {
        while entries.len() < wanted {
            let start = r.offset;
            let Some(line) = r.line()? else { break };
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            match parse_text_entry(&line, Some(dim)) {
                Some(e) => entries.push(e),
                None => {
                    return Err(Error::VectorFormat {
                        offset: start,
                        msg: format!("entry does not have a token and {dim} numbers"),
                    })
                }
            }
        }
    } else {
        let mut raw = vec![0u8; 4 * dim];
        while entries.len() < wanted {
            let mut tok = Vec::new();
            loop {
                match r.byte()? {
                    None if tok.is_empty() => break,
                    None => return Err(r.fail("truncated entry: token without vector")),
                    Some(b'\n') if tok.is_empty() => continue,
                    Some(b' ') => break,
                    Some(b) => tok.push(b),
                }
            }
            if tok.is_empty() {
                break;
            }
            let start = r.offset;
            if let Err(e) = r.inner.read_exact(&mut raw) {
                return Err(match e.kind() {
                    ErrorKind::UnexpectedEof => Error::VectorFormat {
                        offset: start,
                        msg: format!("truncated entry: expected {} bytes of vector", 4 * dim),
                    },
                    _ => e.into(),
                });
            }
            r.offset += raw.len() as u64;
            let token = String::from_utf8(tok).map_err(|_| r.fail("token is not UTF-8"))?;
            let mut v = vec![0f32; dim];
            (&raw[..]).read_f32_into::<LittleEndian>(&mut v)?;
            entries.push((token, v));
        }
    }
    if let Some(c) = count {
        if entries.len() < wanted {
            return Err(r.fail(format!("header declares {c} entries, found {}", entries.len())));
        }
    }
    EmbeddingTable::from_entries(dim, entries).map_err(|_| r.fail("no entries"))
}

/// Padded index matrix for a batch of datapoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBatch {
    /// `[batch, max_len]` row-major.
    pub indices: Vec<usize>,
    /// `[batch, max_len]`; true on real tokens, a contiguous prefix per row.
    pub mask: Vec<bool>,
    pub labels: Vec<usize>,
    pub batch: usize,
    pub max_len: usize,
    pub condition: Condition,
    /// Per-row bigram rows, for models with hashed bigram features.
    pub bigrams: Option<Vec<Vec<usize>>>,
}

impl EncodedBatch {
    pub fn lengths(&self) -> Vec<usize> {
        self.mask
            .chunks(self.max_len)
            .map(|r| r.iter().filter(|&&m| m).count())
            .collect()
    }

    /// Token indices of row `i` without padding.
    pub fn row(&self, i: usize) -> &[usize] {
        let len = self.mask[i * self.max_len..(i + 1) * self.max_len]
            .iter()
            .filter(|&&m| m)
            .count();
        &self.indices[i * self.max_len..i * self.max_len + len]
    }

    /// Same rows with padding removed beyond the longest real row.
    pub fn trimmed(&self) -> EncodedBatch {
        let len = self.lengths().into_iter().max().unwrap_or(0).max(1);
        self.with_len(len)
    }

    /// Re-pads (or trims padding) to `len` columns; real tokens must fit.
    pub fn with_len(&self, len: usize) -> EncodedBatch {
        let mut indices = vec![RESERVED_INDEX; self.batch * len];
        let mut mask = vec![false; self.batch * len];
        for i in 0..self.batch {
            let row = self.row(i);
            assert!(row.len() <= len, "row {i} longer than {len}");
            indices[i * len..i * len + row.len()].copy_from_slice(row);
            mask[i * len..i * len + row.len()].iter_mut().for_each(|m| *m = true);
        }
        EncodedBatch {
            indices,
            mask,
            labels: self.labels.clone(),
            batch: self.batch,
            max_len: len,
            condition: self.condition,
            bigrams: self.bigrams.clone(),
        }
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> EncodedBatch {
        let l = self.max_len;
        let mut out = EncodedBatch {
            indices: Vec::with_capacity(idx.len() * l),
            mask: Vec::with_capacity(idx.len() * l),
            labels: Vec::with_capacity(idx.len()),
            batch: idx.len(),
            max_len: l,
            condition: self.condition,
            bigrams: self
                .bigrams
                .as_ref()
                .map(|b| idx.iter().map(|&i| b[i].clone()).collect()),
        };
        for &i in idx {
            out.indices.extend_from_slice(&self.indices[i * l..(i + 1) * l]);
            out.mask.extend_from_slice(&self.mask[i * l..(i + 1) * l]);
            out.labels.push(self.labels[i]);
        }
        out
    }
}

/// Encodes with an arbitrary token-to-row map.
pub fn encode_with<F>(batch: &[Datapoint], condition: Condition, max_len: usize, mut lookup: F) -> Result<EncodedBatch>
where
    F: FnMut(&str) -> usize,
{
    let mut out = EncodedBatch {
        indices: vec![RESERVED_INDEX; batch.len() * max_len],
        mask: vec![false; batch.len() * max_len],
        labels: Vec::with_capacity(batch.len()),
        batch: batch.len(),
        max_len,
        condition,
        bigrams: None,
    };
    for (i, dp) in batch.iter().enumerate() {
        let n = dp.tokens(condition).count();
        if n > max_len {
            return Err(Error::invalid(
                "encode",
                format!("{} has {n} tokens, max_len is {max_len}", dp.id),
            ));
        }
        for (j, tok) in dp.tokens(condition).enumerate() {
            out.indices[i * max_len + j] = lookup(tok);
            out.mask[i * max_len + j] = true;
        }
        out.labels.push(dp.label.index());
    }
    Ok(out)
}

/// Encodes against a pretrained table. `three_sent` concatenates the three
/// sentences with no separator.
pub fn encode(
    batch: &[Datapoint],
    table: &EmbeddingTable,
    condition: Condition,
    max_len: usize,
) -> Result<EncodedBatch> {
    encode_with(batch, condition, max_len, |t| table.lookup(t))
}
