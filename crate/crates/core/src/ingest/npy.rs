//! Minimal NPY v1.0 reader and writer for 2-D float arrays.
//!
//! Only little-endian `<f4` / `<f8`, C order, rank 2. Anything else is
//! reported as a distinct [`NpyError`].

use crate::error::{Error, NpyError, Result};
use crate::types::{FeatureMatrix, FloatDtype, Orientation};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

/// Parses an NPY v1.0 buffer into a frames-by-dims matrix.
pub fn parse_feature_file(bytes: &[u8], orientation: Orientation) -> Result<FeatureMatrix> {
    let (dtype, shape, payload) = read_container(bytes)?;
    let (rows, cols) = (shape[0], shape[1]);
    let width = match dtype {
        FloatDtype::F32 => 4,
        FloatDtype::F64 => 8,
    };
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| NpyError::MalformedHeader("shape overflows".into()))?;
    if payload.len() < expected {
        return Err(NpyError::Truncated {
            expected,
            actual: payload.len(),
        }
        .into());
    }
    if payload.len() > expected {
        return Err(NpyError::TrailingBytes {
            expected,
            actual: payload.len(),
        }
        .into());
    }
    let values: Vec<f64> = match dtype {
        FloatDtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        FloatDtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(NpyError::NonFinite(i).into());
    }
    let matrix = FeatureMatrix::new(rows, cols, values, dtype)?;
    Ok(match orientation {
        Orientation::FramesByDims => matrix,
        Orientation::DimsByFrames => matrix.transpose(),
    })
}

/// Serializes a frames-by-dims matrix as stored (`T × D`).
pub fn write_feature_file(matrix: &FeatureMatrix) -> Vec<u8> {
    write_oriented(matrix, Orientation::FramesByDims)
}

/// Serializes `matrix` in the requested on-disk orientation; parsing the
/// result with the same orientation yields `matrix` again.
pub fn write_oriented(matrix: &FeatureMatrix, orientation: Orientation) -> Vec<u8> {
    let transposed;
    let stored = match orientation {
        Orientation::FramesByDims => matrix,
        Orientation::DimsByFrames => {
            transposed = matrix.transpose();
            &transposed
        }
    };
    let descr = match stored.dtype() {
        FloatDtype::F32 => "<f4",
        FloatDtype::F64 => "<f8",
    };
    let mut header = format!(
        "{{'descr': '{descr}', 'fortran_order': False, 'shape': ({}, {}), }}",
        stored.rows(),
        stored.cols()
    );
    let unpadded = PREAMBLE_LEN + header.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    header.extend(std::iter::repeat_n(' ', padding));
    header.push('\n');

    let width = if stored.dtype() == FloatDtype::F32 { 4 } else { 8 };
    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + stored.values().len() * width);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match stored.dtype() {
        FloatDtype::F32 => {
            for &v in stored.values() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        FloatDtype::F64 => {
            for &v in stored.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn read_container(bytes: &[u8]) -> Result<(FloatDtype, [usize; 2], &[u8]), Error> {
    if bytes.len() < 8 || &bytes[..6] != MAGIC {
        return Err(NpyError::BadMagic.into());
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(NpyError::UnsupportedVersion(major, minor).into());
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(NpyError::MalformedHeader("missing header length".into()).into());
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header_end = PREAMBLE_LEN + header_len;
    if bytes.len() < header_end {
        return Err(NpyError::MalformedHeader("header extends past end of file".into()).into());
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE_LEN..header_end])
        .map_err(|_| NpyError::MalformedHeader("header is not ASCII".into()))?;
    let dict = HeaderDict::parse(header)?;
    if dict.fortran_order {
        return Err(NpyError::FortranOrder.into());
    }
    let dtype = match dict.descr.as_str() {
        "<f4" => FloatDtype::F32,
        "<f8" => FloatDtype::F64,
        other => return Err(NpyError::UnsupportedDtype(other.to_string()).into()),
    };
    if dict.shape.len() != 2 {
        return Err(NpyError::BadRank(dict.shape.len()).into());
    }
    Ok((dtype, [dict.shape[0], dict.shape[1]], &bytes[header_end..]))
}

#[derive(Debug)]
struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

#[derive(Debug)]
enum Value {
    Str(String),
    Bool(bool),
    Int(usize),
    Tuple(Vec<usize>),
}

impl HeaderDict {
    fn parse(text: &str) -> Result<Self, NpyError> {
        let mut p = Parser {
            chars: text.trim_end().as_bytes(),
            pos: 0,
        };
        p.expect(b'{')?;
        let (mut descr, mut fortran, mut shape) = (None, None, None);
        loop {
            p.skip_ws();
            if p.eat(b'}') {
                break;
            }
            let key = p.string()?;
            p.skip_ws();
            p.expect(b':')?;
            p.skip_ws();
            let value = p.value()?;
            match (key.as_str(), value) {
                ("descr", Value::Str(s)) => descr = Some(s),
                ("fortran_order", Value::Bool(b)) => fortran = Some(b),
                ("shape", Value::Tuple(t)) => shape = Some(t),
                ("shape", Value::Int(n)) => {
                    return Err(NpyError::MalformedHeader(format!(
                        "shape must be a tuple, got {n}"
                    )))
                }
                (k, v) => {
                    return Err(NpyError::MalformedHeader(format!(
                        "unexpected entry {k:?}: {v:?}"
                    )))
                }
            }
            p.skip_ws();
            if !p.eat(b',') {
                p.skip_ws();
                p.expect(b'}')?;
                break;
            }
        }
        let missing = |k: &str| NpyError::MalformedHeader(format!("missing key {k:?}"));
        Ok(HeaderDict {
            descr: descr.ok_or_else(|| missing("descr"))?,
            fortran_order: fortran.ok_or_else(|| missing("fortran_order"))?,
            shape: shape.ok_or_else(|| missing("shape"))?,
        })
    }
}

struct Parser<'a> {
    chars: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), NpyError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(NpyError::MalformedHeader(format!(
                "expected {:?} at offset {}",
                c as char, self.pos
            )))
        }
    }

    fn string(&mut self) -> Result<String, NpyError> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(NpyError::MalformedHeader(format!("expected string at offset {}", self.pos))),
        };
        self.pos += 1;
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c == quote {
                let s = String::from_utf8_lossy(&self.chars[start..self.pos]).into_owned();
                self.pos += 1;
                return Ok(s);
            }
            self.pos += 1;
        }
        Err(NpyError::MalformedHeader("unterminated string".into()))
    }

    fn int(&mut self) -> Result<usize, NpyError> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        // numpy on some platforms writes `3L`
        let digits = std::str::from_utf8(&self.chars[start..self.pos]).unwrap_or("");
        self.eat(b'L');
        digits
            .parse()
            .map_err(|_| NpyError::MalformedHeader(format!("expected integer at offset {start}")))
    }

    fn value(&mut self) -> Result<Value, NpyError> {
        match self.peek() {
            Some(b'\'' | b'"') => self.string().map(Value::Str),
            Some(b'(') => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    if self.eat(b')') {
                        break;
                    }
                    items.push(self.int()?);
                    self.skip_ws();
                    if !self.eat(b',') {
                        self.skip_ws();
                        self.expect(b')')?;
                        break;
                    }
                }
                Ok(Value::Tuple(items))
            }
            Some(b'0'..=b'9') => self.int().map(Value::Int),
            _ => {
                let rest = &self.chars[self.pos..];
                if rest.starts_with(b"True") {
                    self.pos += 4;
                    Ok(Value::Bool(true))
                } else if rest.starts_with(b"False") {
                    self.pos += 5;
                    Ok(Value::Bool(false))
                } else {
                    Err(NpyError::MalformedHeader(format!(
                        "unexpected value at offset {}",
                        self.pos
                    )))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw_npy(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut h = header.to_string();
        let pad = (64 - (10 + h.len() + 1) % 64) % 64;
        h.extend(std::iter::repeat_n(' ', pad));
        h.push('\n');
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(h.len() as u16).to_le_bytes());
        out.extend_from_slice(h.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    fn f32_payload(values: &[f32]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn reads_hand_built_float32() {
        let values = [1.0f32, 2.5, -3.0, 4.0, 0.125, 6.0];
        let bytes = raw_npy(
            "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }",
            &f32_payload(&values),
        );
        let m = parse_feature_file(&bytes, Orientation::FramesByDims).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 3));
        for (got, want) in m.values().iter().zip(values) {
            assert_eq!((*got as f32).to_bits(), want.to_bits());
        }
        let t = parse_feature_file(&bytes, Orientation::DimsByFrames).unwrap();
        assert_eq!((t.rows(), t.cols()), (3, 2));
        // transpose oracle: t[i][j] = m[j][i]
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(t.row(i)[j], m.row(j)[i]);
            }
        }
    }

    #[test]
    fn header_is_64_byte_aligned() {
        let m = FeatureMatrix::new(2, 3, vec![0.0; 6], FloatDtype::F64).unwrap();
        let bytes = write_feature_file(&m);
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + header_len) % 64, 0);
        assert_eq!(bytes[10 + header_len - 1], b'\n');
        assert_eq!(bytes.len(), 10 + header_len + 6 * 8);
    }

    #[test]
    fn distinct_errors() {
        let payload = f32_payload(&[0.0; 6]);
        let ok = "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }";
        let err = |bytes: Vec<u8>| match parse_feature_file(&bytes, Orientation::FramesByDims) {
            Err(Error::Npy(e)) => e,
            other => panic!("expected npy error, got {other:?}"),
        };

        let mut bad_magic = raw_npy(ok, &payload);
        bad_magic[1] = b'X';
        assert_eq!(err(bad_magic), NpyError::BadMagic);

        let mut v2 = raw_npy(ok, &payload);
        v2[6] = 2;
        assert_eq!(err(v2), NpyError::UnsupportedVersion(2, 0));

        let big_endian = raw_npy("{'descr': '>f4', 'fortran_order': False, 'shape': (2, 3), }", &payload);
        assert_eq!(err(big_endian), NpyError::UnsupportedDtype(">f4".into()));

        let ints = raw_npy("{'descr': '<i4', 'fortran_order': False, 'shape': (2, 3), }", &payload);
        assert_eq!(err(ints), NpyError::UnsupportedDtype("<i4".into()));

        let fortran = raw_npy("{'descr': '<f4', 'fortran_order': True, 'shape': (2, 3), }", &payload);
        assert_eq!(err(fortran), NpyError::FortranOrder);

        let rank3 = raw_npy("{'descr': '<f4', 'fortran_order': False, 'shape': (1, 2, 3), }", &payload);
        assert_eq!(err(rank3), NpyError::BadRank(3));

        let rank1 = raw_npy("{'descr': '<f4', 'fortran_order': False, 'shape': (6,), }", &payload);
        assert_eq!(err(rank1), NpyError::BadRank(1));

        let truncated = raw_npy(ok, &payload[..20]);
        assert_eq!(err(truncated), NpyError::Truncated { expected: 24, actual: 20 });
        assert!(NpyError::Truncated { expected: 24, actual: 20 }
            .to_string()
            .contains("payload shorter than shape"));

        let mut long = payload.clone();
        long.push(0);
        assert_eq!(err(raw_npy(ok, &long)), NpyError::TrailingBytes { expected: 24, actual: 25 });

        let nan = raw_npy(ok, &f32_payload(&[0.0, f32::NAN, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(err(nan), NpyError::NonFinite(1));
    }

    #[test]
    fn accepts_key_order_and_quote_variants() {
        let payload = f32_payload(&[1.0, 2.0]);
        let bytes = raw_npy("{\"shape\": (1, 2), \"fortran_order\": False, \"descr\": \"<f4\"}", &payload);
        let m = parse_feature_file(&bytes, Orientation::FramesByDims).unwrap();
        assert_eq!(m.values(), &[1.0, 2.0]);
    }

    fn matrix_strategy() -> impl Strategy<Value = FeatureMatrix> {
        (1usize..6, 1usize..6, any::<bool>()).prop_flat_map(|(r, c, wide)| {
            prop::collection::vec(-1e6f64..1e6, r * c).prop_map(move |v| {
                let dtype = if wide { FloatDtype::F64 } else { FloatDtype::F32 };
                FeatureMatrix::new(r, c, v, dtype).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(m in matrix_strategy(), dims_first in any::<bool>()) {
            let orientation = if dims_first { Orientation::DimsByFrames } else { Orientation::FramesByDims };
            let back = parse_feature_file(&write_oriented(&m, orientation), orientation).unwrap();
            prop_assert!(back.bits_eq(&m));
        }
    }
}
