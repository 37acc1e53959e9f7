//! The `.fmgt` raster container and its JSON sidecar.
//!
//! Layout (little-endian throughout): magic `FMGT`, `u8` version, `u32`
//! height/width/bands, `u8` sample type (1 = f32), `f64` min/max valid
//! digital numbers, then band-major planar f32 samples on the DN scale.
//! Samples are divided by `max_valid` on load and rescaled on save, so the
//! in-memory tensor lives on the unit scale.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

const MAGIC: &[u8; 4] = b"FMGT";
const VERSION: u8 = 1;
const DTYPE_F32: u8 = 1;

/// Optional metadata carried next to a tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub sensor: String,
    pub ratio: usize,
}

/// Path of the JSON sidecar belonging to `path` (same basename, `.json`).
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Loads a tensor and, when present, its sidecar.
pub fn load_tensor(path: &Path) -> Result<(ImageTensor, Option<Sidecar>)> {
    let bytes = fs::read(path)?;
    let tensor = decode_tensor(&bytes)
        .map_err(|e| rewrap_format(e, &format!("{}", path.display())))?;
    let sc_path = sidecar_path(path);
    let sidecar = if sc_path.is_file() {
        let text = fs::read_to_string(&sc_path)?;
        Some(serde_json::from_str(&text).map_err(|e| {
            Error::Format(format!("{}: invalid sidecar: {e}", sc_path.display()))
        })?)
    } else {
        None
    };
    Ok((tensor, sidecar))
}

/// Saves a tensor (and optional sidecar), writing to a temporary name and
/// renaming into place so a failed run never leaves a partial file behind.
pub fn save_tensor(path: &Path, tensor: &ImageTensor, sidecar: Option<&Sidecar>) -> Result<()> {
    let bytes = encode_tensor(tensor);
    write_atomic(path, &bytes)?;
    if let Some(sc) = sidecar {
        let text = serde_json::to_string_pretty(sc)
            .map_err(|e| Error::Format(format!("sidecar serialization: {e}")))?;
        write_atomic(&sidecar_path(path), text.as_bytes())?;
    }
    Ok(())
}

/// Writes `bytes` to `path` via a temporary sibling file plus rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    let mut f = fs::File::create(&tmp)?;
    if let Err(e) = f.write_all(bytes).and_then(|_| f.sync_all()) {
        drop(f);
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    drop(f);
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

fn rewrap_format(e: Error, context: &str) -> Error {
    match e {
        Error::Format(msg) => Error::Format(format!("{context}: {msg}")),
        other => other,
    }
}

fn encode_tensor(tensor: &ImageTensor) -> Vec<u8> {
    let n = tensor.data().len();
    let mut out = Vec::with_capacity(34 + 4 * n);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(tensor.height() as u32).to_le_bytes());
    out.extend_from_slice(&(tensor.width() as u32).to_le_bytes());
    out.extend_from_slice(&(tensor.bands() as u32).to_le_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&tensor.min_valid().to_le_bytes());
    out.extend_from_slice(&tensor.max_valid().to_le_bytes());
    let scale = tensor.max_valid();
    for &v in tensor.data() {
        out.extend_from_slice(&((v * scale) as f32).to_le_bytes());
    }
    out
}

fn decode_tensor(bytes: &[u8]) -> Result<ImageTensor> {
    let mut cur = std::io::Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| Error::Format("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic, not a tensor container".into()));
    }
    let version = read_u8(&mut cur)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let height = read_u32(&mut cur)? as usize;
    let width = read_u32(&mut cur)? as usize;
    let bands = read_u32(&mut cur)? as usize;
    let dtype = read_u8(&mut cur)?;
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported sample type {dtype}")));
    }
    let min_valid = read_f64(&mut cur)?;
    let max_valid = read_f64(&mut cur)?;
    if height == 0 || width == 0 || bands == 0 {
        return Err(Error::Format(format!("degenerate shape {height}x{width}x{bands}")));
    }
    let n = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(bands))
        .ok_or_else(|| Error::Format("shape overflows".into()))?;
    let payload = &bytes[cur.position() as usize..];
    if payload.len() != 4 * n {
        return Err(Error::Format(format!(
            "payload holds {} bytes, expected {} for {height}x{width}x{bands}",
            payload.len(),
            4 * n
        )));
    }
    if !(min_valid.is_finite() && max_valid.is_finite() && max_valid > min_valid) {
        return Err(Error::Format(format!("invalid radiometric range [{min_valid}, {max_valid}]")));
    }
    let mut data = Vec::with_capacity(n);
    for chunk in payload.chunks_exact(4) {
        let raw = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !raw.is_finite() {
            return Err(Error::Format("non-finite sample in payload".into()));
        }
        data.push(raw as f64 / max_valid);
    }
    ImageTensor::new(height, width, bands, data, min_valid, max_valid)
        .map_err(|e| Error::Format(format!("inconsistent container: {e}")))
}

fn read_u8(cur: &mut std::io::Cursor<&[u8]>) -> Result<u8> {
    let mut b = [0u8; 1];
    cur.read_exact(&mut b).map_err(|_| Error::Format("truncated header".into()))?;
    Ok(b[0])
}

fn read_u32(cur: &mut std::io::Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b).map_err(|_| Error::Format("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(cur: &mut std::io::Cursor<&[u8]>) -> Result<f64> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b).map_err(|_| Error::Format("truncated header".into()))?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.fmgt");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..5 * 4 * 3).map(|_| rng.gen_range(0.0..2047.0) / 2047.0).collect();
        let tensor = ImageTensor::new(5, 4, 3, data, 0.0, 2047.0).unwrap();
        let sidecar = Sidecar { sensor: "wv3".into(), ratio: 4 };
        save_tensor(&path, &tensor, Some(&sidecar)).unwrap();

        let (loaded, sc) = load_tensor(&path).unwrap();
        assert_eq!(sc.as_ref(), Some(&sidecar));
        assert_eq!((loaded.height(), loaded.width(), loaded.bands()), (5, 4, 3));
        assert_eq!(loaded.max_valid(), 2047.0);

        // A second save/load must reproduce the first load bit for bit.
        let path2 = dir.path().join("img2.fmgt");
        save_tensor(&path2, &loaded, None).unwrap();
        let (again, _) = load_tensor(&path2).unwrap();
        assert!(again.same_samples(&loaded));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fmgt");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load_tensor(&path), Err(Error::Format(_))));

        let tensor = ImageTensor::constant(4, 4, 1, 0.5).unwrap();
        let good = dir.path().join("good.fmgt");
        save_tensor(&good, &tensor, None).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&good, &bytes).unwrap();
        assert!(matches!(load_tensor(&good), Err(Error::Format(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_tensor(Path::new("/nonexistent/x.fmgt")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn malformed_sidecar_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.fmgt");
        let tensor = ImageTensor::constant(2, 2, 1, 0.25).unwrap();
        save_tensor(&path, &tensor, None).unwrap();
        std::fs::write(sidecar_path(&path), "{not json").unwrap();
        assert!(matches!(load_tensor(&path), Err(Error::Format(_))));
    }

    #[test]
    fn no_partial_file_on_failed_write() {
        let dir = tempfile::tempdir().unwrap();
        let missing_parent = dir.path().join("no_such_dir").join("img.fmgt");
        let tensor = ImageTensor::constant(2, 2, 1, 0.25).unwrap();
        assert!(save_tensor(&missing_parent, &tensor, None).is_err());
        assert!(!missing_parent.exists());
    }
}
