//! Binary model file: `MDS1`, hidden size (u64), dense size (u64), the twelve
//! tensors as rank (u64), dims (u64 each) and row-major float64 data, then
//! the scaler mean and std (6 float64 each). All little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::network::{LstmParams, Tensor, TENSOR_NAMES};
use super::DetectorModel;
use crate::error::{Error, Result};
use crate::features::{ScalerParams, FEATURES};

pub const MODEL_MAGIC: &[u8; 4] = b"MDS1";

pub fn write_model<W: Write>(model: &DetectorModel, mut w: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&(model.params.hidden as u64).to_le_bytes());
    buf.extend_from_slice(&(model.params.dense as u64).to_le_bytes());
    for t in model.params.tensors() {
        buf.extend_from_slice(&(t.dims.len() as u64).to_le_bytes());
        for d in &t.dims {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in model.scaler.mean.iter().chain(&model.scaler.std) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end =
            end.ok_or_else(|| Error::Format(format!("truncated model file at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn size(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= 1 << 24)
            .ok_or_else(|| Error::Format(format!("implausible {what} {v}")))
    }
}

pub fn read_model<R: Read>(mut r: R) -> Result<DetectorModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let magic = c.take(4)?;
    if magic != MODEL_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected MDS1")));
    }
    let hidden = c.size("hidden size")?;
    let dense = c.size("dense size")?;
    let expected = LstmParams::expected_dims(hidden, dense);
    let mut params = LstmParams::zeros(hidden, dense);
    for ((slot, dims), name) in params
        .tensors_mut()
        .into_iter()
        .zip(expected.iter())
        .zip(TENSOR_NAMES)
    {
        let rank = c.size("rank")?;
        let got: Vec<usize> = (0..rank)
            .map(|_| c.size("dimension"))
            .collect::<Result<_>>()?;
        if &got != dims {
            return Err(Error::Shape(format!(
                "{name}: file has {got:?}, hidden {hidden} needs {dims:?}"
            )));
        }
        let n = dims.iter().product();
        let data = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        *slot = Tensor { dims: got, data };
    }
    let mut scaler = ScalerParams::identity();
    for k in 0..FEATURES {
        scaler.mean[k] = c.f64()?;
    }
    for k in 0..FEATURES {
        scaler.std[k] = c.f64()?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after model",
            bytes.len() - c.pos
        )));
    }
    params.validate()?;
    if scaler.std.iter().any(|s| !(*s > 0.0 && s.is_finite()))
        || scaler.mean.iter().any(|m| !m.is_finite())
    {
        return Err(Error::Format(
            "scaler parameters must be finite with positive std".into(),
        ));
    }
    Ok(DetectorModel { params, scaler })
}

pub fn save_model(model: &DetectorModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DetectorModel> {
    read_model(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::forward;

    fn model() -> DetectorModel {
        let scaler = ScalerParams {
            mean: [0.1, 2.0, -3.0, 0.5, 0.0, 1e-3],
            std: [1.0, 0.3, 7.0, 2.0, 1.0, 0.01],
        };
        DetectorModel {
            params: LstmParams::init(5, 7, 42),
            scaler,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let w = [[0.3, -1.0, 2.0, 0.5, 0.0, 1.0]; 4];
        let a = forward(&m.params, &w).unwrap();
        let b = forward(&back.params, &w).unwrap();
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }

    #[test]
    fn truncated_and_bad_magic_fail() {
        let mut buf = Vec::new();
        write_model(&model(), &mut buf).unwrap();
        for cut in [0, 3, 10, buf.len() / 2, buf.len() - 1] {
            assert!(read_model(&buf[..cut]).is_err(), "cut {cut}");
        }
        let mut bad = buf.clone();
        bad[3] = b'2';
        assert!(
            matches!(read_model(bad.as_slice()), Err(Error::Format(msg)) if msg.contains("magic"))
        );
        let mut extra = buf;
        extra.push(0);
        assert!(read_model(extra.as_slice()).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut buf = Vec::new();
        write_model(&model(), &mut buf).unwrap();
        buf[4..12].copy_from_slice(&6u64.to_le_bytes());
        assert!(matches!(read_model(buf.as_slice()), Err(Error::Shape(_))));
    }
}
