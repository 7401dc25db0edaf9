//! Binary containers for datasets and weights.
//!
//! All integers are `u64` and all reals `f64`, little-endian.
//!
//! Dataset (`.bin`):
//!
//! ```text
//! magic  "SNCDATA1"
//! header d, P, n (u64); sigma_p, p (f64); seed (u64)
//! body   mu (d x f64)
//!        per sample: y (i8), y_hat (i8), signal_pos (u64), xi (d x f64)
//! ```
//!
//! Weights (`.bin`):
//!
//! ```text
//! magic  "SNCWGT01"
//! header d, m (u64)
//! body   2m x d f64, row-major; rows 0..m are j = +1, rows m..2m are j = -1
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::data::{DataParams, Dataset, Label, Sample};
use crate::error::{Error, Result};
use crate::network::Weights;

const DATA_MAGIC: &[u8; 8] = b"SNCDATA1";
const WEIGHTS_MAGIC: &[u8; 8] = b"SNCWGT01";

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_i8<R: Read>(r: &mut R) -> Result<i8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0] as i8)
}

fn get_vec<R: Read>(r: &mut R, len: usize) -> Result<Array1<f64>> {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(get_f64(r)?);
    }
    Ok(Array1::from(out))
}

fn check_magic<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<()> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&b)
        )));
    }
    Ok(())
}

fn usize_field(v: u64, name: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Format(format!("{name} out of range: {v}")))
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    w.write_all(DATA_MAGIC)?;
    put_u64(&mut w, ds.params.d as u64)?;
    put_u64(&mut w, ds.params.patches as u64)?;
    put_u64(&mut w, ds.len() as u64)?;
    put_f64(&mut w, ds.params.sigma_p)?;
    put_f64(&mut w, ds.params.p)?;
    put_u64(&mut w, ds.seed)?;
    for &v in &ds.mu {
        put_f64(&mut w, v)?;
    }
    for s in &ds.samples {
        w.write_all(&[s.y.as_i8() as u8, s.y_hat.as_i8() as u8])?;
        put_u64(&mut w, s.signal_pos as u64)?;
        for &v in &s.xi {
            put_f64(&mut w, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    check_magic(&mut r, DATA_MAGIC)?;
    let d = usize_field(get_u64(&mut r)?, "d")?;
    let patches = usize_field(get_u64(&mut r)?, "P")?;
    let n = usize_field(get_u64(&mut r)?, "n")?;
    let sigma_p = get_f64(&mut r)?;
    let p = get_f64(&mut r)?;
    let seed = get_u64(&mut r)?;
    let mu = get_vec(&mut r, d)?;
    let label = |v: i8, what: &str| Label::from_i8(v).ok_or_else(|| Error::Format(format!("bad {what} label {v}")));
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let y = label(get_i8(&mut r)?, "observed")?;
        let y_hat = label(get_i8(&mut r)?, "true")?;
        let signal_pos = usize_field(get_u64(&mut r)?, "signal_pos")?;
        if signal_pos >= patches {
            return Err(Error::Format(format!("signal_pos {signal_pos} >= P = {patches}")));
        }
        let xi = get_vec(&mut r, d)?;
        samples.push(Sample { y, y_hat, xi, signal_pos });
    }
    let params = DataParams {
        d,
        patches,
        sigma_p,
        p,
        mu_norm: mu.dot(&mu).sqrt(),
    };
    params.validate()?;
    Ok(Dataset { params, mu, samples, seed })
}

pub fn write_weights<W: Write>(weights: &Weights, mut w: W) -> Result<()> {
    w.write_all(WEIGHTS_MAGIC)?;
    put_u64(&mut w, weights.d() as u64)?;
    put_u64(&mut w, weights.m as u64)?;
    for &v in weights.w.iter() {
        put_f64(&mut w, v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights<R: Read>(mut r: R) -> Result<Weights> {
    check_magic(&mut r, WEIGHTS_MAGIC)?;
    let d = usize_field(get_u64(&mut r)?, "d")?;
    let m = usize_field(get_u64(&mut r)?, "m")?;
    let flat = get_vec(&mut r, 2 * m * d)?;
    let w = Array2::from_shape_vec((2 * m, d), flat.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
    Ok(Weights { m, w })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn save_weights(w: &Weights, path: &Path) -> Result<()> {
    write_weights(w, BufWriter::new(File::create(path)?))
}

pub fn load_weights(path: &Path) -> Result<Weights> {
    read_weights(BufReader::new(File::open(path)?))
}

/// Write `bytes` to `path` via a temporary sibling and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// JSON has no NaN or infinity; serde_json writes them as `null`. Read
/// `null` back as NaN.
pub fn nullable_f64<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    let v: Option<f64> = serde::Deserialize::deserialize(d)?;
    Ok(v.unwrap_or(f64::NAN))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_dataset, make_signal};

    #[test]
    fn dataset_header_layout() {
        let p = DataParams { d: 3, patches: 2, sigma_p: 1.5, p: 0.25, mu_norm: 2.0 };
        let ds = gen_dataset(&p, make_signal(3, 2.0).unwrap(), 2, 42).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(&buf[..8], b"SNCDATA1");
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[24..32].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[32..40].try_into().unwrap()), 1.5);
        assert_eq!(buf.len(), 8 + 6 * 8 + 3 * 8 + 2 * (2 + 8 + 3 * 8));
        assert_eq!(read_dataset(&buf[..]).unwrap(), ds);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        assert!(matches!(read_weights(&b"SNCDATA1"[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        write_weights(&Weights::zeros(2, 3), &mut buf).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(read_weights(&buf[..]).is_err());
    }
}
