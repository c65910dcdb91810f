//! On-disk formats: SRRF frames, PSF sidecars and the model cache.
//!
//! All binary fields are little-endian.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{ImagingGrid, ImagingMode, Point};
use crate::waveform::{PSFRecord, RFFrame};

const FRAME_MAGIC: &[u8; 4] = b"SRRF";
const FRAME_VERSION: u32 = 1;
const CACHE_MAGIC: &[u8; 4] = b"SRAM";

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
            .ok_or_else(|| Error::Format(format!("file truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Serializes a frame. Samples are stored as `f32`.
pub fn encode_frame(frame: &RFFrame) -> Vec<u8> {
    let (n_el, n_s) = frame.samples().dim();
    let mut out = Vec::with_capacity(37 + n_el * 12 + n_el * n_s * 4);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    out.push(frame.mode.code());
    out.extend_from_slice(&(n_el as u32).to_le_bytes());
    out.extend_from_slice(&(n_s as u32).to_le_bytes());
    out.extend_from_slice(&frame.fs.to_le_bytes());
    out.extend_from_slice(&frame.t0.to_le_bytes());
    for &k in &frame.element_indices {
        out.extend_from_slice(&(k as u32).to_le_bytes());
    }
    for &x in &frame.element_x {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for &v in frame.samples().iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<RFFrame> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != FRAME_MAGIC {
        return Err(Error::Format("not an SRRF file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FRAME_VERSION {
        return Err(Error::Format(format!("unsupported SRRF version {version}")));
    }
    let code = r.u8()?;
    let mode = ImagingMode::from_code(code)
        .ok_or_else(|| Error::Format(format!("unknown mode code {code}")))?;
    let n_el = r.u32()? as usize;
    let n_s = r.u32()? as usize;
    let fs = r.f64()?;
    let t0 = r.f64()?;
    let indices = (0..n_el).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let xs = (0..n_el).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let total = n_el
        .checked_mul(n_s)
        .ok_or_else(|| Error::Format("frame dimensions overflow".into()))?;
    if bytes.len() - r.pos != total * 4 {
        return Err(Error::Format(format!(
            "expected {} sample bytes, found {}",
            total * 4,
            bytes.len() - r.pos
        )));
    }
    let samples = (0..total).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
    let samples = Array2::from_shape_vec((n_el, n_s), samples).expect("length checked");
    RFFrame::new(samples, t0, fs, indices, xs, mode).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_frame(path: &Path, frame: &RFFrame) -> Result<()> {
    write_atomic(path, &encode_frame(frame))
}

pub fn read_frame(path: &Path) -> Result<RFFrame> {
    decode_frame(&fs::read(path)?)
}

/// JSON that travels next to a PSF frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsfSidecar {
    pub source_x_m: f64,
    pub source_z_m: f64,
    pub mode: ImagingMode,
}

/// `frame.srrf` -> `frame.srrf.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_psf(path: &Path, psf: &PSFRecord) -> Result<()> {
    write_frame(path, &psf.frame)?;
    let sidecar = PsfSidecar {
        source_x_m: psf.source.x,
        source_z_m: psf.source.z,
        mode: psf.frame.mode,
    };
    write_atomic(&sidecar_path(path), serde_json::to_string_pretty(&sidecar)?.as_bytes())
}

pub fn read_psf(path: &Path) -> Result<PSFRecord> {
    let frame = read_frame(path)?;
    let text = fs::read_to_string(sidecar_path(path))?;
    let sidecar: PsfSidecar = serde_json::from_str(&text)?;
    if sidecar.mode != frame.mode {
        return Err(Error::Mismatch(format!(
            "sidecar says {} but the frame was recorded in {} mode",
            sidecar.mode.label(),
            frame.mode.label()
        )));
    }
    Ok(PSFRecord {
        frame,
        source: Point::new(sidecar.source_x_m, sidecar.source_z_m),
    })
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Identifies the inputs a cached model was built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFingerprint {
    pub psf_sha256: String,
    pub grid_sha256: String,
    pub subset_sha256: String,
}

impl ModelFingerprint {
    pub fn new(psf_bytes: &[u8], grid: &ImagingGrid, subset: &[usize]) -> Result<Self> {
        Ok(ModelFingerprint {
            psf_sha256: sha256_hex(psf_bytes),
            grid_sha256: sha256_hex(serde_json::to_string(grid)?.as_bytes()),
            subset_sha256: sha256_hex(serde_json::to_string(subset)?.as_bytes()),
        })
    }
}

/// `model.sram` -> `model.sram.fingerprint.json`.
pub fn fingerprint_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".fingerprint.json");
    PathBuf::from(s)
}

/// Writes `A` (as `m x n`, column-major) and its fingerprint.
/// `columns` holds one column of `A` per row, as returned by
/// [`crate::forward::ForwardModel::columns`].
pub fn write_model_cache(path: &Path, columns: &Array2<f64>, fingerprint: &ModelFingerprint) -> Result<()> {
    let (n, m) = columns.dim();
    let mut out = Vec::with_capacity(20 + n * m * 8);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(m as u64).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for &v in columns.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &out)?;
    write_atomic(&fingerprint_path(path), serde_json::to_string_pretty(fingerprint)?.as_bytes())
}

/// Loads cached columns if the stored fingerprint matches `expected`;
/// `Ok(None)` when the cache is missing or stale.
pub fn read_model_cache(path: &Path, expected: &ModelFingerprint) -> Result<Option<Array2<f64>>> {
    let fp_path = fingerprint_path(path);
    if !path.exists() || !fp_path.exists() {
        return Ok(None);
    }
    let stored: ModelFingerprint = serde_json::from_str(&fs::read_to_string(fp_path)?)?;
    if &stored != expected {
        return Ok(None);
    }
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4)? != CACHE_MAGIC {
        return Err(Error::Format("not an SRAM file (bad magic)".into()));
    }
    let m = r.u64()? as usize;
    let n = r.u64()? as usize;
    let total = m
        .checked_mul(n)
        .ok_or_else(|| Error::Format("cache dimensions overflow".into()))?;
    if bytes.len() - r.pos != total * 8 {
        return Err(Error::Format("model cache has the wrong length".into()));
    }
    let values = (0..total).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    Ok(Some(Array2::from_shape_vec((n, m), values).expect("length checked")))
}

/// Writes through a temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> RFFrame {
        let samples = Array2::from_shape_fn((3, 5), |(k, j)| (k * 10 + j) as f64 * 0.5 - 3.0);
        RFFrame::new(samples, 9.5e-6, 62.5e6, vec![0, 4, 9], vec![-1e-4, 0.0, 2.5e-4], ImagingMode::PlaneWave).unwrap()
    }

    #[test]
    fn frame_round_trip() {
        let f = frame();
        let bytes = encode_frame(&f);
        assert_eq!(&bytes[..4], b"SRRF");
        assert_eq!(bytes.len(), 4 + 4 + 1 + 4 + 4 + 8 + 8 + 3 * 4 + 3 * 8 + 15 * 4);
        assert_eq!(decode_frame(&bytes).unwrap(), f);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_frame(&frame());
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes[8], 1);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 5);
        assert_eq!(f64::from_le_bytes(bytes[17..25].try_into().unwrap()), 62.5e6);
    }

    #[test]
    fn corrupt_frames_are_rejected() {
        let bytes = encode_frame(&frame());
        assert!(matches!(decode_frame(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_frame(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[8] = 7;
        assert!(matches!(decode_frame(&bad), Err(Error::Format(_))));
        assert!(decode_frame(&[]).is_err());
    }

    #[test]
    fn psf_and_cache_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("psf.srrf");
        let psf = PSFRecord {
            frame: frame(),
            source: Point::new(0.0, 15e-3),
        };
        write_psf(&path, &psf).unwrap();
        let back = read_psf(&path).unwrap();
        assert_eq!(back, psf);
        let sidecar: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(sidecar["mode"], "US_planewave");

        let grid = ImagingGrid::default_grid();
        let fp = ModelFingerprint::new(&fs::read(&path).unwrap(), &grid, &[0, 4, 9]).unwrap();
        let cols = Array2::from_shape_fn((4, 6), |(i, j)| (i * 6 + j) as f64);
        let cache = dir.path().join("model.sram");
        assert!(read_model_cache(&cache, &fp).unwrap().is_none());
        write_model_cache(&cache, &cols, &fp).unwrap();
        assert_eq!(read_model_cache(&cache, &fp).unwrap().unwrap(), cols);
        let stale = ModelFingerprint::new(b"other", &grid, &[0, 4, 9]).unwrap();
        assert!(read_model_cache(&cache, &stale).unwrap().is_none());
    }

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
