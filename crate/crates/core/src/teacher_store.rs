//! Frozen teacher features loaded from disk.
//!
//! Binary layout (`EMB1`), all integers little-endian:
//!
//! ```text
//! b"EMB1" | rows: u32 | dim: u32 | rows × (len: u16, utf-8 id) | rows·dim × f32 (row-major)
//! ```
//!
//! A TSV form `id\tv1\tv2...` is accepted for hand-written fixtures.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::norm;

pub const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Text,
    Visual,
}

/// Immutable id-keyed feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    modality: Modality,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    rows: Vec<Vec<f64>>,
    dim: usize,
    normalized: bool,
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedFile {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

impl FeatureTable {
    pub fn from_rows(
        modality: Modality,
        ids: Vec<String>,
        rows: Vec<Vec<f64>>,
        normalize: bool,
    ) -> Result<Self> {
        Self::build(modality, ids, rows, normalize, Path::new("<memory>"))
    }

    fn build(
        modality: Modality,
        ids: Vec<String>,
        mut rows: Vec<Vec<f64>>,
        normalize: bool,
        path: &Path,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(malformed(path, "no rows"));
        }
        if ids.len() != rows.len() {
            return Err(malformed(
                path,
                format!("{} ids for {} rows", ids.len(), rows.len()),
            ));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(malformed(path, "zero dimension"));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for (r, row) in rows.iter_mut().enumerate() {
            if row.len() != dim {
                return Err(malformed(
                    path,
                    format!("row {r} has {} values, expected {dim}", row.len()),
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(malformed(path, format!("non-finite value in row {r}")));
            }
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::ZeroNormRow {
                    path: path.to_path_buf(),
                    row: r,
                });
            }
            if normalize {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        Ok(Self {
            modality,
            ids,
            index,
            rows,
            dim,
            normalized: normalize,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn row(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.rows[i].as_slice())
    }

    /// Copies of the rows for `ids`, in request order.
    pub fn gather<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<Vec<f64>>> {
        ids.iter()
            .map(|id| {
                self.row(id.as_ref())
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::UnknownId(id.as_ref().to_string()))
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_emb1(path, &self.ids, &self.rows)
    }
}

/// Loads an `EMB1` file, or a TSV file when the magic bytes are absent.
pub fn load_features(path: &Path, modality: Modality, normalize: bool) -> Result<FeatureTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (ids, rows) = if bytes.starts_with(MAGIC) {
        decode_emb1(&bytes, path)?
    } else {
        parse_tsv(&bytes, path)?
    };
    FeatureTable::build(modality, ids, rows, normalize, path)
}

pub fn encode_emb1<S: AsRef<str>>(ids: &[S], rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let dim = rows.first().map_or(0, Vec::len);
    if ids.len() != rows.len() || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::ShapeMismatch(
            "ids and rows must form a rectangular table".into(),
        ));
    }
    let count =
        u32::try_from(rows.len()).map_err(|_| Error::ShapeMismatch("too many rows".into()))?;
    let mut out = Vec::with_capacity(12 + rows.len() * (dim * 4 + 8));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for id in ids {
        let id = id.as_ref().as_bytes();
        let len = u16::try_from(id.len())
            .map_err(|_| Error::ShapeMismatch("id longer than 65535 bytes".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id);
    }
    for row in rows {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_emb1<S: AsRef<str>>(path: &Path, ids: &[S], rows: &[Vec<f64>]) -> Result<()> {
    let bytes = encode_emb1(ids, rows)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| malformed(self.path, "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes one `EMB1` block starting at `bytes[0]`; returns the ids, rows and bytes consumed.
pub fn decode_emb1_prefix(
    bytes: &[u8],
    path: &Path,
) -> Result<(Vec<String>, Vec<Vec<f64>>, usize)> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    if c.take(4).map_err(|_| malformed(path, "bad magic"))? != MAGIC {
        return Err(malformed(path, "bad magic"));
    }
    let rows = c.u32()? as usize;
    let dim = c.u32()? as usize;
    if rows == 0 {
        return Err(malformed(path, "row count is zero"));
    }
    if dim == 0 {
        return Err(malformed(path, "dimension is zero"));
    }
    let mut ids = Vec::with_capacity(rows.min(1 << 20));
    for _ in 0..rows {
        let len = c.u16()? as usize;
        let raw = c.take(len)?;
        ids.push(
            std::str::from_utf8(raw)
                .map_err(|_| malformed(path, "id is not utf-8"))?
                .to_string(),
        );
    }
    let payload = c.take(
        rows.checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| malformed(path, "shape overflow"))?,
    )?;
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let table = values.chunks_exact(dim).map(<[f64]>::to_vec).collect();
    Ok((ids, table, c.pos))
}

fn decode_emb1(bytes: &[u8], path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let (ids, rows, used) = decode_emb1_prefix(bytes, path)?;
    if used != bytes.len() {
        return Err(malformed(
            path,
            format!("{} trailing bytes", bytes.len() - used),
        ));
    }
    Ok((ids, rows))
}

fn parse_tsv(bytes: &[u8], path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text =
        std::str::from_utf8(bytes).map_err(|_| malformed(path, "neither EMB1 nor utf-8 TSV"))?;
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().to_string();
        let row = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| malformed(path, format!("line {}: {e}", lineno + 1)))?;
        ids.push(id);
        rows.push(row);
    }
    Ok((ids, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp(name: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        (dir, p)
    }

    #[test]
    fn three_four_five_normalization() {
        let (_d, p) = tmp("one.emb");
        write_emb1(&p, &["a"], &[vec![3.0, 4.0]]).unwrap();
        let t = load_features(&p, Modality::Text, true).unwrap();
        let row = t.row("a").unwrap();
        assert!((row[0] - 0.6).abs() < 1e-15 && (row[1] - 0.8).abs() < 1e-15);
        assert!(t.is_normalized());
    }

    #[test]
    fn empty_file_is_malformed() {
        let (_d, p) = tmp("empty.emb");
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            load_features(&p, Modality::Text, true),
            Err(Error::MalformedFile { .. })
        ));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let (_d, p) = tmp("bad.emb");
        let mut bytes = encode_emb1(&["x"], &[vec![1.0, 2.0]]).unwrap();
        bytes.pop();
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_features(&p, Modality::Visual, false),
            Err(Error::MalformedFile { .. })
        ));
        fs::write(&p, b"EMB2\x01\x00\x00\x00").unwrap();
        assert!(load_features(&p, Modality::Visual, false).is_err());
    }

    #[test]
    fn zero_row_and_duplicates_rejected() {
        let (_d, p) = tmp("z.emb");
        write_emb1(&p, &["a", "b"], &[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            load_features(&p, Modality::Text, true),
            Err(Error::ZeroNormRow { row: 1, .. })
        ));
        write_emb1(&p, &["a", "a"], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            load_features(&p, Modality::Text, true),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn fixture_roundtrip_bit_exact() {
        let (_d, p) = tmp("fixture.emb");
        let ids: Vec<String> = (0..10).map(|i| format!("img-{i}")).collect();
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                (0..16)
                    .map(|k| ((i * 16 + k) as f32 * 0.37 - 3.1).sin() as f64)
                    .collect()
            })
            .collect();
        write_emb1(&p, &ids, &rows).unwrap();
        let t = load_features(&p, Modality::Visual, false).unwrap();
        assert_eq!(t.rows(), rows.as_slice());
        assert_eq!(t.ids(), ids.as_slice());
        let (_d2, p2) = tmp("again.emb");
        t.write(&p2).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn tsv_fixture() {
        let (_d, p) = tmp("f.tsv");
        fs::write(&p, "# comment\ns1\t3\t4\ns2\t0\t2\n").unwrap();
        let t = load_features(&p, Modality::Text, true).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.row("s2").unwrap(), &[0.0, 1.0]);
        fs::write(&p, "s1\t3\tfoo\n").unwrap();
        assert!(matches!(
            load_features(&p, Modality::Text, true),
            Err(Error::MalformedFile { .. })
        ));
    }

    #[test]
    fn gather_cases() {
        let t = FeatureTable::from_rows(
            Modality::Text,
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]],
            false,
        )
        .unwrap();
        assert!(t.gather::<&str>(&[]).unwrap().is_empty());
        let rep = t.gather(&["b", "b"]).unwrap();
        assert_eq!(rep[0], rep[1]);
        let perm = t.gather(&["c", "a", "b"]).unwrap();
        for (id, row) in ["c", "a", "b"].iter().zip(&perm) {
            assert_eq!(t.row(id).unwrap(), row.as_slice());
        }
        assert!(matches!(t.gather(&["zz"]), Err(Error::UnknownId(id)) if id == "zz"));
    }

    proptest! {
        #[test]
        fn normalization_idempotent(rows in prop::collection::vec(prop::collection::vec(0.1f64..5.0, 4), 1..6)) {
            let ids: Vec<String> = (0..rows.len()).map(|i| i.to_string()).collect();
            let once = FeatureTable::from_rows(Modality::Text, ids.clone(), rows, true).unwrap();
            let twice = FeatureTable::from_rows(Modality::Text, ids, once.rows().to_vec(), true).unwrap();
            for (a, b) in once.rows().iter().zip(twice.rows()) {
                for (x, y) in a.iter().zip(b) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
                prop_assert!((norm(a) - 1.0).abs() <= 1e-6);
            }
        }
    }
}
