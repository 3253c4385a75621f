//! Rank-bucket quantization of input features and the packed 512-bit record
//! wire format.
//!
//! A feature's code is the number of model thresholds on that feature that
//! are `<= x`. For a split `x < t_r` (threshold with 1-based rank `r`) this
//! gives `x < t_r  <=>  code < r`, so every comparison in the datapath becomes
//! a small integer compare. Rank 0 is reserved: `code < 0` never holds, which
//! is how padded comparator slots stay false.
//!
//! Record layout: feature `f` occupies bits `[w*f, w*(f+1))` of the record
//! read as a little-endian bit string (bit `i` is bit `i % 8` of byte
//! `i / 8`). Records are padded with zero bits to a multiple of 512 bits.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_ir::{CanonicalForest, Comparator};
use crate::scalar::Real;

pub const DEFAULT_WIDTH: u32 = 4;
pub const MAX_WIDTH: u32 = 16;
/// Transfer word of the streaming interface.
pub const WORD_BITS: usize = 512;
pub const WORD_BYTES: usize = WORD_BITS / 8;

#[derive(Debug, Error, PartialEq)]
pub enum QuantError {
    #[error("code width {0} unsupported (expected 1..={MAX_WIDTH})")]
    InvalidWidth(u32),
    #[error("QuantOverflow: feature {feature} has {count} distinct thresholds, more than the {max} a {width}-bit code can rank", max = (1u32 << *.width) - 1)]
    Overflow { feature: usize, count: usize, width: u32 },
    #[error("input feature {feature} is NaN")]
    NanInput { feature: usize },
    #[error("input has {got} features, expected {expected}")]
    InputLength { got: usize, expected: usize },
    #[error("quantization table for feature {0} is not strictly increasing and finite")]
    BadTable(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("record is {got} bytes, expected {expected}")]
    RecordLength { got: usize, expected: usize },
    #[error("stream of {len} bytes is not a whole number of {record} byte records")]
    StreamLength { len: usize, record: usize },
    #[error("nonzero padding bits in record")]
    NonzeroPadding,
    #[error("feature {feature} code {code} exceeds its rank count {max}")]
    CodeOutOfRange { feature: usize, code: u16, max: usize },
    #[error("csv: {0}")]
    Csv(String),
}

/// Per-feature sorted threshold tables plus the record geometry they imply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct QuantSpec<T> {
    width: u32,
    thresholds: Vec<Vec<T>>,
}

impl<T: Real> QuantSpec<T> {
    /// Validates raw tables; used when loading a container.
    pub fn new(width: u32, thresholds: Vec<Vec<T>>) -> Result<Self, QuantError> {
        if width == 0 || width > MAX_WIDTH {
            return Err(QuantError::InvalidWidth(width));
        }
        let max = (1usize << width) - 1;
        for (f, t) in thresholds.iter().enumerate() {
            if t.len() > max {
                return Err(QuantError::Overflow {
                    feature: f,
                    count: t.len(),
                    width,
                });
            }
            if t.iter().any(|v| !v.is_finite()) || t.windows(2).any(|p| p[0] >= p[1]) {
                return Err(QuantError::BadTable(f));
            }
        }
        Ok(QuantSpec { width, thresholds })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn num_features(&self) -> usize {
        self.thresholds.len()
    }

    pub fn thresholds(&self, feature: usize) -> &[T] {
        &self.thresholds[feature]
    }

    /// Distinct threshold count `k(f)`; the largest valid code for `f`.
    pub fn rank_count(&self, feature: usize) -> usize {
        self.thresholds[feature].len()
    }

    pub fn max_code(&self) -> u16 {
        ((1u32 << self.width) - 1) as u16
    }

    /// 1-based rank of `threshold` in the feature's table.
    pub fn rank_of(&self, feature: usize, threshold: T) -> Option<u16> {
        let t = &self.thresholds[feature];
        let i = t.partition_point(|&v| v < threshold);
        (i < t.len() && t[i] == threshold).then(|| (i + 1) as u16)
    }

    /// Payload bits `F*w` rounded up to whole 512-bit words (at least one).
    pub fn bits_per_record(&self) -> usize {
        let payload = self.num_features() * self.width as usize;
        payload.div_ceil(WORD_BITS).max(1) * WORD_BITS
    }

    pub fn bytes_per_record(&self) -> usize {
        self.bits_per_record() / 8
    }
}

/// Collects the sorted distinct split thresholds of every dense feature.
/// Fails with [`QuantError::Overflow`] when some feature needs more than
/// `2^w - 1` ranks.
pub fn build_quant_spec<T: Real>(cf: &CanonicalForest<T>, width: u32) -> Result<QuantSpec<T>, QuantError> {
    if width == 0 || width > MAX_WIDTH {
        return Err(QuantError::InvalidWidth(width));
    }
    let mut tables: Vec<Vec<T>> = vec![Vec::new(); cf.num_features()];
    for tree in &cf.trees {
        for c in &tree.comparators {
            if let Comparator::Split { feature, threshold } = *c {
                tables[feature].push(threshold);
            }
        }
    }
    for t in &mut tables {
        t.sort_by(|a, b| a.partial_cmp(b).expect("thresholds are finite"));
        t.dedup();
    }
    QuantSpec::new(width, tables)
}

/// Quantized input: one code per dense feature.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct CodeVector(pub Vec<u16>);

impl CodeVector {
    pub fn codes(&self) -> &[u16] {
        &self.0
    }
}

/// `codes[f]` = number of thresholds `t_i` with `t_i <= raw[f]`.
pub fn encode_record<T: Real>(raw: &[T], spec: &QuantSpec<T>) -> Result<CodeVector, QuantError> {
    if raw.len() != spec.num_features() {
        return Err(QuantError::InputLength {
            got: raw.len(),
            expected: spec.num_features(),
        });
    }
    raw.iter()
        .enumerate()
        .map(|(f, &x)| {
            if x.is_nan() {
                return Err(QuantError::NanInput { feature: f });
            }
            Ok(spec.thresholds[f].partition_point(|&t| t <= x) as u16)
        })
        .collect::<Result<Vec<_>, _>>()
        .map(CodeVector)
}

fn pack_into<T: Real>(v: &CodeVector, spec: &QuantSpec<T>, out: &mut [u8]) {
    let w = spec.width as usize;
    for (f, &code) in v.0.iter().enumerate() {
        debug_assert!(u32::from(code) < 1 << w);
        let bit = f * w;
        let mut word = u32::from(code) << (bit % 8);
        for byte in out.iter_mut().skip(bit / 8).take((bit % 8 + w).div_ceil(8)) {
            *byte |= word as u8;
            word >>= 8;
        }
    }
}

/// Concatenated records, one `bytes_per_record` block per code vector.
pub fn pack_records<T: Real>(vecs: &[CodeVector], spec: &QuantSpec<T>) -> Vec<u8> {
    let n = spec.bytes_per_record();
    let mut out = vec![0u8; n * vecs.len()];
    for (v, chunk) in vecs.iter().zip(out.chunks_exact_mut(n)) {
        pack_into(v, spec, chunk);
    }
    out
}

/// Inverse of [`pack_records`] for one record. Rejects nonzero padding and
/// codes above a feature's rank count.
pub fn unpack_record<T: Real>(bytes: &[u8], spec: &QuantSpec<T>) -> Result<CodeVector, FormatError> {
    let n = spec.bytes_per_record();
    if bytes.len() != n {
        return Err(FormatError::RecordLength {
            got: bytes.len(),
            expected: n,
        });
    }
    let w = spec.width as usize;
    let mask = (1u32 << w) - 1;
    let mut codes = Vec::with_capacity(spec.num_features());
    for f in 0..spec.num_features() {
        let bit = f * w;
        let mut word = 0u32;
        for (i, &b) in bytes[bit / 8..].iter().take((bit % 8 + w).div_ceil(8)).enumerate() {
            word |= u32::from(b) << (8 * i);
        }
        let code = ((word >> (bit % 8)) & mask) as u16;
        if code as usize > spec.rank_count(f) {
            return Err(FormatError::CodeOutOfRange {
                feature: f,
                code,
                max: spec.rank_count(f),
            });
        }
        codes.push(code);
    }
    let payload = spec.num_features() * w;
    let (full, partial) = (payload / 8, payload % 8);
    let tail_ok = partial == 0 || bytes[full] >> partial == 0;
    let rest = if partial == 0 { full } else { full + 1 };
    if !tail_ok || bytes[rest..].iter().any(|&b| b != 0) {
        return Err(FormatError::NonzeroPadding);
    }
    Ok(CodeVector(codes))
}

/// Splits and decodes a whole packed stream.
pub fn unpack_stream<T: Real>(bytes: &[u8], spec: &QuantSpec<T>) -> Result<Vec<CodeVector>, FormatError> {
    let n = spec.bytes_per_record();
    if !bytes.len().is_multiple_of(n) {
        return Err(FormatError::StreamLength { len: bytes.len(), record: n });
    }
    bytes.chunks_exact(n).map(|r| unpack_record(r, spec)).collect()
}

/// Headerless CSV of real-valued rows; `#` starts a comment line.
pub fn read_csv_rows<T: Real>(reader: impl Read) -> Result<Vec<Vec<T>>, FormatError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FormatError::Csv(e.to_string()))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field
                    .parse::<f64>()
                    .map(T::from_f64_lossy)
                    .map_err(|_| FormatError::Csv(format!("row {}, column {}: {field:?} is not a number", line + 1, col + 1)))
            })
            .collect::<Result<Vec<T>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(width: u32, tables: Vec<Vec<f64>>) -> QuantSpec<f64> {
        QuantSpec::new(width, tables).unwrap()
    }

    #[test]
    fn codes_between_and_at_thresholds() {
        let s = spec(4, vec![vec![0.5, 1.5]]);
        assert_eq!(encode_record(&[1.0], &s).unwrap().0, vec![1]);
        assert_eq!(encode_record(&[0.5], &s).unwrap().0, vec![1]);
        assert_eq!(encode_record(&[0.4], &s).unwrap().0, vec![0]);
        assert_eq!(encode_record(&[1.5], &s).unwrap().0, vec![2]);
        assert_eq!(encode_record(&[f64::INFINITY], &s).unwrap().0, vec![2]);
        assert_eq!(encode_record(&[f64::NAN], &s), Err(QuantError::NanInput { feature: 0 }));
        assert!(matches!(encode_record(&[1.0, 2.0], &s), Err(QuantError::InputLength { .. })));
    }

    #[test]
    fn rank_lookup() {
        let s = spec(4, vec![vec![0.5, 1.5]]);
        assert_eq!(s.rank_of(0, 0.5), Some(1));
        assert_eq!(s.rank_of(0, 1.5), Some(2));
        assert_eq!(s.rank_of(0, 1.0), None);
    }

    #[test]
    fn width_bounds_and_overflow() {
        assert_eq!(QuantSpec::<f64>::new(0, vec![]), Err(QuantError::InvalidWidth(0)));
        assert_eq!(QuantSpec::<f64>::new(17, vec![]), Err(QuantError::InvalidWidth(17)));
        let sixteen: Vec<f64> = (0..16).map(f64::from).collect();
        assert_eq!(
            QuantSpec::new(4, vec![sixteen.clone()]),
            Err(QuantError::Overflow {
                feature: 0,
                count: 16,
                width: 4
            })
        );
        assert!(QuantSpec::new(5, vec![sixteen]).is_ok());
        assert_eq!(QuantSpec::new(4, vec![vec![1.0, 1.0]]), Err(QuantError::BadTable(0)));
    }

    #[test]
    fn two_feature_nibble_layout() {
        let s = spec(4, vec![(0..3).map(f64::from).collect(), (0..12).map(f64::from).collect()]);
        let bytes = pack_records(&[CodeVector(vec![3, 10])], &s);
        assert_eq!(bytes.len(), 64);
        assert_eq!(bytes[0], 0xA3);
        assert!(bytes[1..].iter().all(|&b| b == 0));
        assert_eq!(unpack_record(&bytes, &s).unwrap().0, vec![3, 10]);
    }

    #[test]
    fn geometry_for_112_features() {
        let s = spec(4, vec![vec![0.0]; 112]);
        assert_eq!(s.bits_per_record(), 512);
        assert_eq!(s.bytes_per_record(), 64);
        let v = CodeVector(vec![1; 112]);
        let bytes = pack_records(&[v], &s);
        assert!(bytes[..56].iter().all(|&b| b == 0x11));
        assert!(bytes[56..].iter().all(|&b| b == 0));
        // 129 features at 4 bits spill into a second word
        assert_eq!(spec(4, vec![vec![0.0]; 129]).bytes_per_record(), 128);
        assert_eq!(spec(4, vec![]).bytes_per_record(), 64);
    }

    #[test]
    fn unpack_rejects_bad_records() {
        let s = spec(4, vec![vec![0.0, 1.0, 2.0]]);
        assert!(matches!(unpack_record(&[0u8; 63], &s), Err(FormatError::RecordLength { .. })));
        let mut r = vec![0u8; 64];
        r[0] = 0x10;
        assert_eq!(unpack_record(&r, &s), Err(FormatError::NonzeroPadding));
        let mut r = vec![0u8; 64];
        r[63] = 1;
        assert_eq!(unpack_record(&r, &s), Err(FormatError::NonzeroPadding));
        let mut r = vec![0u8; 64];
        r[0] = 4;
        assert!(matches!(unpack_record(&r, &s), Err(FormatError::CodeOutOfRange { code: 4, .. })));
        assert!(matches!(unpack_stream(&[0u8; 65], &s), Err(FormatError::StreamLength { .. })));
    }

    #[test]
    fn csv_rows() {
        let rows: Vec<Vec<f64>> = read_csv_rows("1, 2.5\n# note\n-3,4e2\n".as_bytes()).unwrap();
        assert_eq!(rows, vec![vec![1.0, 2.5], vec![-3.0, 400.0]]);
        assert!(read_csv_rows::<f64>("1,x\n".as_bytes()).is_err());
    }

    fn spec_and_vec() -> impl Strategy<Value = (QuantSpec<f64>, CodeVector)> {
        (1u32..=16, 0usize..200).prop_flat_map(|(w, f)| {
            let max = (1usize << w) - 1;
            let k = proptest::collection::vec(0..=max.min(40), f);
            k.prop_flat_map(move |ks| {
                let codes: Vec<_> = ks.iter().map(|&k| 0..=k as u16).collect();
                (Just(ks), codes)
            })
            .prop_map(move |(ks, codes)| {
                let tables = ks.iter().map(|&k| (0..k).map(|i| i as f64).collect()).collect();
                (QuantSpec::new(w, tables).unwrap(), CodeVector(codes))
            })
        })
    }

    proptest! {
        #[test]
        fn pack_unpack_roundtrip((s, v) in spec_and_vec()) {
            let bytes = pack_records(std::slice::from_ref(&v), &s);
            prop_assert_eq!(bytes.len() % 64, 0);
            prop_assert_eq!(unpack_record(&bytes, &s).unwrap(), v);
        }

        #[test]
        fn order_preserved(table in proptest::collection::btree_set(-1000i32..1000, 1..15), x in -1100.0f64..1100.0) {
            let t: Vec<f64> = table.into_iter().map(|v| f64::from(v) / 8.0).collect();
            let s = spec(4, vec![t.clone()]);
            for probe in [x, t[0], t[t.len() - 1], (t[0] + x) / 2.0] {
                let code = encode_record(&[probe], &s).unwrap().0[0];
                for (i, &th) in t.iter().enumerate() {
                    prop_assert_eq!(probe < th, code < (i + 1) as u16);
                }
            }
        }
    }
}
