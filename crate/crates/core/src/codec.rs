//! Compact JSON encoding of dense matrices: an explicit shape plus the
//! column-major entries as little-endian `f64` bytes in base64.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Encoded {
    rows: usize,
    cols: usize,
    data: String,
}

fn encode(rows: usize, cols: usize, values: &[f64]) -> Encoded {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    Encoded {
        rows,
        cols,
        data: STANDARD.encode(bytes),
    }
}

fn decode(enc: &Encoded) -> Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(&enc.data).map_err(|e| format!("invalid base64 matrix data: {e}"))?;
    let expected = enc.rows.checked_mul(enc.cols).and_then(|n| n.checked_mul(8));
    if expected != Some(bytes.len()) {
        return Err(format!(
            "matrix data holds {} bytes, shape {}x{} needs {}",
            bytes.len(),
            enc.rows,
            enc.cols,
            enc.rows.saturating_mul(enc.cols).saturating_mul(8)
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
        .collect())
}

/// `#[serde(with = "matrix")]` adapter for `DMatrix<f64>`.
pub mod matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        encode(m.nrows(), m.ncols(), m.as_slice()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let enc = Encoded::deserialize(d)?;
        let values = decode(&enc).map_err(D::Error::custom)?;
        Ok(DMatrix::from_vec(enc.rows, enc.cols, values))
    }
}

/// `#[serde(with = "vector")]` adapter for `DVector<f64>`, stored as a
/// single column.
pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        encode(v.len(), 1, v.as_slice()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let enc = Encoded::deserialize(d)?;
        if enc.cols != 1 {
            return Err(D::Error::custom(format!("expected a column vector, got {} columns", enc.cols)));
        }
        let values = decode(&enc).map_err(D::Error::custom)?;
        Ok(DVector::from_vec(values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Holder {
        #[serde(with = "matrix")]
        m: DMatrix<f64>,
        #[serde(with = "vector")]
        v: DVector<f64>,
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let h = Holder {
            m: DMatrix::from_fn(3, 2, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0)),
            v: DVector::from_vec(vec![f64::MIN_POSITIVE, -0.0, 1e300]),
        };
        let json = serde_json::to_string(&h).unwrap();
        let back: Holder = serde_json::from_str(&json).unwrap();
        assert_eq!(back, h);
        assert!(back.v[1].is_sign_negative());
    }

    #[test]
    fn little_endian_layout() {
        let enc = encode(1, 1, &[1.0]);
        assert_eq!(STANDARD.decode(enc.data).unwrap(), 1.0f64.to_le_bytes());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let json = r#"{"m":{"rows":2,"cols":2,"data":"AAAAAAAA8D8="},"v":{"rows":0,"cols":1,"data":""}}"#;
        let err = serde_json::from_str::<Holder>(json).unwrap_err();
        assert!(err.to_string().contains("needs 32"), "{err}");
    }
}
