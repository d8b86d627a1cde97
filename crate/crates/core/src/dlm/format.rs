//! Binary model container.
//!
//! All integers and scalars are little-endian. Layout:
//!
//! ```text
//! magic            8 bytes  b"FWYDLM\r\n"
//! major, minor     u16, u16
//! scalar_bytes     u8       4 (f32) or 8 (f64)
//! reserved         3 bytes  zero
//! start_minute     u32
//! step_minutes     u32
//! num_steps        u32      K + 1
//! sensors          u32      M
//! sensor ids       M x (u32 byte length, UTF-8 bytes)
//! positions        M scalars
//! rho, lambda      2 scalars
//! days_seen        u64
//! states           K x (G, P, H̄), each M*M scalars row-major
//! checksum         32 bytes SHA-256 of every preceding byte
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{DlmModel, Hyperparams, TransitionState};
use crate::domain::{SensorLayout, TimeGrid};
use crate::error::{DlmError, FormatError, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

pub const MAGIC: &[u8; 8] = b"FWYDLM\r\n";
pub const FORMAT_MAJOR: u16 = 1;
pub const FORMAT_MINOR: u16 = 0;
const CHECKSUM_LEN: usize = 32;

pub fn encode_model<T: Real>(model: &DlmModel<T>) -> Vec<u8> {
    let m = model.num_sensors();
    let mut out = Vec::with_capacity(64 + model.num_transitions() * 3 * m * m * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_MAJOR.to_le_bytes());
    out.extend_from_slice(&FORMAT_MINOR.to_le_bytes());
    out.push(T::BYTES as u8);
    out.extend_from_slice(&[0u8; 3]);
    let grid = model.grid();
    out.extend_from_slice(&grid.start_minute().to_le_bytes());
    out.extend_from_slice(&grid.step_minutes().to_le_bytes());
    out.extend_from_slice(&(grid.num_steps() as u32).to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    for id in model.layout().ids() {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    for &p in model.layout().positions() {
        p.write_le(&mut out);
    }
    model.hyper().regularization.write_le(&mut out);
    model.hyper().forgetting.write_le(&mut out);
    out.extend_from_slice(&model.days_seen().to_le_bytes());
    for st in model.states() {
        for mat in [&st.cross_moment, &st.inverse_gram, &st.transition] {
            for &x in mat.as_slice() {
                x.write_le(&mut out);
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn save_model<T: Real>(model: &DlmModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(model)).map_err(|e| DlmError::io(path, e))
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<DlmModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| DlmError::io(path, e))?;
    decode_model(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Corrupt("length overflow".into()))?;
        if end > self.bytes.len() {
            return Err(FormatError::Truncated {
                expected: end,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> std::result::Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn scalar<T: Real>(&mut self) -> std::result::Result<T, FormatError> {
        Ok(T::read_le(self.take(T::BYTES)?))
    }

    fn matrix<T: Real>(&mut self, m: usize) -> std::result::Result<Matrix<T>, FormatError> {
        let data = (0..m * m).map(|_| self.scalar()).collect::<std::result::Result<Vec<T>, _>>()?;
        Matrix::from_row_major(m, m, data).map_err(|e| FormatError::Corrupt(e.to_string()))
    }
}

/// Checks run in order: magic, version, scalar width, length, checksum.
pub fn decode_model<T: Real>(bytes: &[u8]) -> Result<DlmModel<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(MAGIC.len()).map_err(|_| FormatError::BadMagic)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic.into());
    }
    let major = r.u16()?;
    let minor = r.u16()?;
    if major != FORMAT_MAJOR {
        return Err(FormatError::Version {
            found_major: major,
            found_minor: minor,
            supported_major: FORMAT_MAJOR,
        }
        .into());
    }
    let width = r.take(4)?[0];
    if width as usize != T::BYTES {
        return Err(FormatError::ScalarWidth {
            found: width,
            expected: T::BYTES as u8,
        }
        .into());
    }
    let start_minute = r.u32()?;
    let step_minutes = r.u32()?;
    let num_steps = r.u32()? as usize;
    let m = r.u32()? as usize;
    let mut id_bytes = Vec::with_capacity(m.min(1 << 16));
    for _ in 0..m {
        let len = r.u32()? as usize;
        id_bytes.push(r.take(len)?);
    }
    let k = num_steps.saturating_sub(1);
    let payload = (m + 2) * T::BYTES + 8 + k * 3 * m * m * T::BYTES;
    let expected = r.pos + payload + CHECKSUM_LEN;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        }
        .into());
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes(bytes.len() - expected).into());
    }
    let (body, stored) = bytes.split_at(expected - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != stored {
        return Err(FormatError::Checksum.into());
    }

    let ids = id_bytes
        .into_iter()
        .map(|b| String::from_utf8(b.to_vec()).map_err(|_| FormatError::Corrupt("sensor id is not UTF-8".into())))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let positions = (0..m).map(|_| r.scalar()).collect::<std::result::Result<Vec<T>, _>>()?;
    let regularization = r.scalar()?;
    let forgetting = r.scalar()?;
    let days_seen = r.u64()?;
    let mut states = Vec::with_capacity(k);
    for _ in 0..k {
        states.push(TransitionState {
            cross_moment: r.matrix(m)?,
            inverse_gram: r.matrix(m)?,
            transition: r.matrix(m)?,
        });
    }
    let corrupt = |e: DlmError| DlmError::Format(FormatError::Corrupt(e.to_string()));
    let grid = TimeGrid::new(start_minute, step_minutes, num_steps).map_err(corrupt)?;
    let layout = SensorLayout::new(ids, positions).map_err(corrupt)?;
    let hyper = Hyperparams {
        regularization,
        forgetting,
    };
    DlmModel::from_parts(hyper, days_seen, grid, layout, states).map_err(corrupt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DayVelocityMatrix, DaySet};

    fn fitted() -> DlmModel<f64> {
        let grid = TimeGrid::new(360, 5, 3).unwrap();
        let layout = SensorLayout::new(vec!["a".into(), "bb".into()], vec![0.0, 0.7]).unwrap();
        let days = (0..3)
            .map(|d| {
                let m = Matrix::from_fn(2, 3, |i, j| 40.0 + (d * 7 + i * 3 + j) as f64);
                DayVelocityMatrix::new(format!("2012-02-0{}", d + 1), m).unwrap()
            })
            .collect();
        let set = DaySet::new(grid, layout, days).unwrap();
        DlmModel::fit_batch(&set, Hyperparams::new(0.3, 0.95).unwrap()).unwrap()
    }

    fn bits(m: &DlmModel<f64>) -> Vec<u64> {
        m.states()
            .iter()
            .flat_map(|s| [&s.cross_moment, &s.inverse_gram, &s.transition])
            .flat_map(|x| x.as_slice().iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let model = fitted();
        let back: DlmModel<f64> = decode_model(&encode_model(&model)).unwrap();
        assert_eq!(back, model);
        assert_eq!(bits(&back), bits(&model));
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut bytes = encode_model(&fitted());
        let n = bytes.len();
        bytes[n - 40] ^= 0x01;
        assert!(matches!(decode_model::<f64>(&bytes), Err(DlmError::Format(FormatError::Checksum))));
    }

    #[test]
    fn newer_major_version_is_refused() {
        let mut bytes = encode_model(&fitted());
        bytes[8..10].copy_from_slice(&2u16.to_le_bytes());
        let n = bytes.len();
        let digest = Sha256::digest(&bytes[..n - CHECKSUM_LEN]);
        bytes[n - CHECKSUM_LEN..].copy_from_slice(&digest);
        assert!(matches!(
            decode_model::<f64>(&bytes),
            Err(DlmError::Format(FormatError::Version { found_major: 2, .. }))
        ));
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = encode_model(&fitted());
        assert!(matches!(
            decode_model::<f64>(&bytes[..bytes.len() - 1]),
            Err(DlmError::Format(FormatError::Truncated { .. }))
        ));
        assert!(matches!(decode_model::<f64>(&bytes[..20]), Err(DlmError::Format(FormatError::Truncated { .. }))));
        assert!(matches!(decode_model::<f64>(b"nope"), Err(DlmError::Format(FormatError::BadMagic))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_model::<f64>(&extra), Err(DlmError::Format(FormatError::TrailingBytes(1)))));
    }

    #[test]
    fn scalar_width_is_checked() {
        let bytes = encode_model(&fitted());
        assert!(matches!(
            decode_model::<f32>(&bytes),
            Err(DlmError::Format(FormatError::ScalarWidth { found: 8, expected: 4 }))
        ));
        let single: DlmModel<f32> = {
            let grid = TimeGrid::new(0, 5, 2).unwrap();
            let layout = SensorLayout::from_positions(vec![0.0f32, 1.0]).unwrap();
            DlmModel::init(grid, layout, Hyperparams::new(2.0, 1.0).unwrap()).unwrap()
        };
        let back: DlmModel<f32> = decode_model(&encode_model(&single)).unwrap();
        assert_eq!(back, single);
    }
}
