//! Binary layout (all integers little-endian):
//!
//! ```text
//! 0   "CNDP"
//! 4   u32 version (= 1)
//! 8   u32 header_length
//! 12  UTF-8 JSON header, header_length bytes
//!     count × dim f32, row-major
//!     count u32 labels
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, Mat};

pub const PACK_MAGIC: &[u8; 4] = b"CNDP";
pub const PACK_VERSION: u32 = 1;
const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PackKind {
    Image,
    Text,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePack {
    pub dataset: String,
    pub split: String,
    pub kind: PackKind,
    pub dim: usize,
    pub class_names: Vec<String>,
    /// `count × dim`, row-major.
    pub features: Vec<f32>,
    pub labels: Vec<u32>,
    pub normalized: bool,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dataset: String,
    split: String,
    kind: PackKind,
    dim: usize,
    count: usize,
    num_classes: usize,
    class_names: Vec<String>,
    normalized: bool,
    seed: Option<u64>,
}

impl FeaturePack {
    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Features widened to `f64` for computation.
    pub fn to_mat(&self) -> Mat {
        Mat::from_vec(
            self.count(),
            self.dim,
            self.features.iter().map(|&v| f64::from(v)).collect(),
        )
    }

    pub fn rows_mat(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend(self.row(i).iter().map(|&v| f64::from(v)));
        }
        Mat::from_vec(idx.len(), self.dim, data)
    }

    /// Number of samples per class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Sample indices grouped by class, in pack order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            by[l as usize].push(i);
        }
        by
    }

    /// A new pack holding the given rows, in the given order.
    pub fn subset(&self, idx: &[usize]) -> FeaturePack {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        FeaturePack {
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> FeaturePack {
        FeaturePack {
            dataset: self.dataset.clone(),
            split: self.split.clone(),
            kind: self.kind,
            dim: self.dim,
            class_names: self.class_names.clone(),
            features: Vec::new(),
            labels: Vec::new(),
            normalized: self.normalized,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::validation("dim", "must be positive"));
        }
        if self.labels.is_empty() {
            return Err(Error::validation("count", "must be positive"));
        }
        let k = self.num_classes();
        if k == 0 {
            return Err(Error::validation("num_classes", "must be positive"));
        }
        let mut seen = HashSet::with_capacity(k);
        for name in &self.class_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::validation(
                    "class_names",
                    format!("duplicate class name {name:?}"),
                ));
            }
        }
        if self.features.len() != self.count() * self.dim {
            return Err(Error::validation(
                "features",
                format!(
                    "expected {} values for {}×{}, found {}",
                    self.count() * self.dim,
                    self.count(),
                    self.dim,
                    self.features.len()
                ),
            ));
        }
        if let Some(i) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(
                "features",
                format!("non-finite value at row {}", i / self.dim),
            ));
        }
        if let Some((i, &l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= k)
        {
            return Err(Error::validation(
                "labels",
                format!("label {l} at row {i} is outside [0, {k})"),
            ));
        }
        if self.kind == PackKind::Text {
            if self.count() != k {
                return Err(Error::validation(
                    "count",
                    format!("text pack needs one row per class ({k}), found {}", self.count()),
                ));
            }
            if self.labels.iter().enumerate().any(|(i, &l)| l as usize != i) {
                return Err(Error::validation("labels", "text pack labels must be 0..K-1 in order"));
            }
        }
        if self.normalized {
            for i in 0..self.count() {
                let row: Vec<f64> = self.row(i).iter().map(|&v| f64::from(v)).collect();
                let n = norm(&row);
                if (n - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::validation(
                        "normalized",
                        format!("row {i} has norm {n}, expected 1"),
                    ));
                }
            }
        }
        Ok(())
    }
}

pub fn write_pack(pack: &FeaturePack, mut sink: impl Write) -> Result<()> {
    pack.validate()?;
    let header = Header {
        dataset: pack.dataset.clone(),
        split: pack.split.clone(),
        kind: pack.kind,
        dim: pack.dim,
        count: pack.count(),
        num_classes: pack.num_classes(),
        class_names: pack.class_names.clone(),
        normalized: pack.normalized,
        seed: pack.seed,
    };
    let header = serde_json::to_vec(&header)?;
    let header_len = u32::try_from(header.len())
        .map_err(|_| Error::validation("class_names", "header exceeds 4 GiB"))?;
    sink.write_all(PACK_MAGIC)?;
    sink.write_all(&PACK_VERSION.to_le_bytes())?;
    sink.write_all(&header_len.to_le_bytes())?;
    sink.write_all(&header)?;
    let mut payload = Vec::with_capacity(pack.features.len() * 4 + pack.labels.len() * 4);
    for v in &pack.features {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    for l in &pack.labels {
        payload.extend_from_slice(&l.to_le_bytes());
    }
    sink.write_all(&payload)?;
    sink.flush()?;
    Ok(())
}

pub fn read_pack(mut source: impl Read) -> Result<FeaturePack> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_pack(&bytes)
}

fn take<'a>(bytes: &'a [u8], offset: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    bytes.get(offset..offset + len).ok_or_else(|| {
        Error::format(
            offset as u64,
            format!(
                "truncated {what}: expected {len} bytes, found {}",
                bytes.len().saturating_sub(offset)
            ),
        )
    })
}

fn parse_pack(bytes: &[u8]) -> Result<FeaturePack> {
    let magic = take(bytes, 0, 4, "magic")?;
    if magic != PACK_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"CNDP\"")));
    }
    let version = u32::from_le_bytes(take(bytes, 4, 4, "version")?.try_into().unwrap());
    if version != PACK_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let header_len = u32::from_le_bytes(take(bytes, 8, 4, "header length")?.try_into().unwrap()) as usize;
    let header_bytes = take(bytes, 12, header_len, "header")?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::format(12, format!("invalid header: {e}")))?;
    if header.num_classes != header.class_names.len() {
        return Err(Error::format(
            12,
            format!(
                "header num_classes {} disagrees with {} class names",
                header.num_classes,
                header.class_names.len()
            ),
        ));
    }

    let payload_start = 12 + header_len;
    let expected = header
        .count
        .checked_mul(header.dim)
        .and_then(|n| n.checked_add(header.count))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(12, "header sizes overflow"))?;
    let actual = bytes.len() - payload_start;
    if actual != expected {
        return Err(Error::format(
            payload_start as u64,
            format!("payload length mismatch: expected {expected} bytes, found {actual}"),
        ));
    }
    let n_feat = header.count * header.dim;
    let payload = &bytes[payload_start..];
    let features = payload[..n_feat * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let labels = payload[n_feat * 4..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let pack = FeaturePack {
        dataset: header.dataset,
        split: header.split,
        kind: header.kind,
        dim: header.dim,
        class_names: header.class_names,
        features,
        labels,
        normalized: header.normalized,
        seed: header.seed,
    };
    pack.validate()?;
    Ok(pack)
}

pub fn write_pack_file(pack: &FeaturePack, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_pack(pack, BufWriter::new(file))
}

pub fn read_pack_file(path: impl AsRef<Path>) -> Result<FeaturePack> {
    read_pack(BufReader::new(File::open(path)?))
}

/// Scales every row to unit Euclidean norm and sets the `normalized` flag.
pub fn l2_normalize(pack: &FeaturePack) -> Result<FeaturePack> {
    let mut out = pack.clone();
    for i in 0..pack.count() {
        let row: Vec<f64> = pack.row(i).iter().map(|&v| f64::from(v)).collect();
        let n = norm(&row);
        if !(n > 0.0) {
            return Err(Error::Degenerate { row: i, norm: n });
        }
        for (dst, v) in out.features[i * pack.dim..(i + 1) * pack.dim].iter_mut().zip(&row) {
            *dst = (v / n) as f32;
        }
    }
    out.normalized = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> FeaturePack {
        FeaturePack {
            dataset: "tiny".into(),
            split: "train".into(),
            kind: PackKind::Image,
            dim: 4,
            class_names: vec!["cat".into(), "dog".into()],
            features: vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.6, 0.8],
            labels: vec![0, 1, 1],
            normalized: true,
            seed: Some(3),
        }
    }

    #[test]
    fn file_starts_with_magic() {
        let mut buf = Vec::new();
        write_pack(&tiny(), &mut buf).unwrap();
        assert_eq!(&buf[..4], b"CNDP");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let mut p = tiny();
        p.labels[2] = 2;
        match write_pack(&p, Vec::new()) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "labels"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut buf = Vec::new();
        write_pack(&tiny(), &mut buf).unwrap();
        buf[..4].copy_from_slice(b"XXXX");
        match read_pack(&buf[..]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_payload_names_lengths() {
        let mut buf = Vec::new();
        write_pack(&tiny(), &mut buf).unwrap();
        buf.truncate(buf.len() - 6);
        match read_pack(&buf[..]) {
            Err(Error::Format { message, .. }) => {
                assert!(message.contains("expected 60 bytes, found 54"), "{message}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsupported_version() {
        let mut buf = Vec::new();
        write_pack(&tiny(), &mut buf).unwrap();
        buf[4] = 9;
        assert!(matches!(read_pack(&buf[..]), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn duplicate_class_names_rejected() {
        let mut p = tiny();
        p.class_names[1] = "cat".into();
        assert!(matches!(p.validate(), Err(Error::Validation { field: "class_names", .. })));
    }

    #[test]
    fn text_pack_must_cover_classes_in_order() {
        let mut p = tiny();
        p.kind = PackKind::Text;
        assert!(p.validate().is_err());
        p.features.truncate(8);
        p.labels = vec![1, 0];
        assert!(p.validate().is_err());
        p.labels = vec![0, 1];
        p.validate().unwrap();
    }

    #[test]
    fn unnormalized_rows_fail_when_flagged() {
        let mut p = tiny();
        p.features[0] = 2.0;
        assert!(matches!(p.validate(), Err(Error::Validation { field: "normalized", .. })));
        p.normalized = false;
        p.validate().unwrap();
    }

    #[test]
    fn normalize_three_four() {
        let mut p = tiny();
        p.dim = 2;
        p.features = vec![3.0, 4.0, 1.0, 0.0, 0.0, 2.0];
        p.normalized = false;
        let n = l2_normalize(&p).unwrap();
        assert!(n.normalized);
        assert_eq!(&n.features[..2], &[0.6, 0.8]);
        assert_eq!(n.labels, p.labels);
        let again = l2_normalize(&n).unwrap();
        for (a, b) in again.features.iter().zip(&n.features) {
            assert!((a - b).abs() <= 1e-7);
        }
    }

    #[test]
    fn zero_row_is_degenerate() {
        let mut p = tiny();
        p.features[4..8].fill(0.0);
        p.normalized = false;
        assert!(matches!(l2_normalize(&p), Err(Error::Degenerate { row: 1, .. })));
    }
}
