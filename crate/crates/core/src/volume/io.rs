//! Volume file formats.
//!
//! Two formats are supported:
//!
//! * single-file NIfTI-1 (`.nii`), little-endian, uncompressed, datatypes
//!   int16 and float32, no extensions, identity orientation. `scl_slope` and
//!   `scl_inter` are applied on load. The writer picks int16 when every voxel
//!   is an integer in range (lossless) and float32 otherwise.
//! * raw + sidecar: `<stem>.raw` holds little-endian float32 voxels and
//!   `<stem>.json` holds `{dims, spacing_mm, subject_id, scan_id,
//!   intensity_state}`.
//!
//! NIfTI files carry no identifiers; a file named `<subject>__<scan>.nii`
//! yields those ids, otherwise both default to the file stem.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CtVolume, IntensityState, MIN_SCAN_DIM};
use crate::{Error, Result};

const NIFTI_HEADER_SIZE: usize = 348;
const NIFTI_VOX_OFFSET: usize = 352;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    Nifti,
    RawSidecar,
}

impl VolumeFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_ascii_lowercase();
        if name.ends_with(".nii.gz") {
            Err(Error::Unsupported("gzip-compressed NIfTI".into()))
        } else if name.ends_with(".nii") {
            Ok(VolumeFormat::Nifti)
        } else if name.ends_with(".raw") || name.ends_with(".json") {
            Ok(VolumeFormat::RawSidecar)
        } else {
            Err(Error::Unsupported(format!("unrecognised extension: {name}")))
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    dims: [usize; 3],
    spacing_mm: [f32; 3],
    subject_id: String,
    scan_id: String,
    intensity_state: IntensityState,
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<CtVolume> {
    let path = path.as_ref();
    let v = match VolumeFormat::from_path(path)? {
        VolumeFormat::Nifti => read_nifti(path)?,
        VolumeFormat::RawSidecar => read_raw(path)?,
    };
    if v.dims().iter().any(|&d| d < MIN_SCAN_DIM) {
        return Err(Error::InvalidVolume(format!(
            "dims {:?} below minimum {MIN_SCAN_DIM} per axis",
            v.dims()
        )));
    }
    Ok(v)
}

pub fn save_volume(v: &CtVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match VolumeFormat::from_path(path)? {
        VolumeFormat::Nifti => write_nifti(v, path),
        VolumeFormat::RawSidecar => write_raw(v, path),
    }
}

fn ids_from_filename(path: &Path) -> (String, String) {
    let stem = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    let stem = stem
        .strip_suffix(".nii")
        .or_else(|| stem.strip_suffix(".NII"))
        .unwrap_or(stem);
    match stem.split_once("__") {
        Some((subject, scan)) if !subject.is_empty() && !scan.is_empty() => {
            (subject.to_string(), scan.to_string())
        }
        _ => (stem.to_string(), stem.to_string()),
    }
}

fn le_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn le_i32(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn le_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn read_nifti(path: &Path) -> Result<CtVolume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < NIFTI_HEADER_SIZE {
        return Err(Error::Unsupported(format!(
            "file too small for a NIfTI-1 header ({} bytes)",
            bytes.len()
        )));
    }
    if le_i32(&bytes, 0) != NIFTI_HEADER_SIZE as i32 {
        return Err(Error::Unsupported(
            "not a little-endian NIfTI-1 header".into(),
        ));
    }
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::Unsupported("only single-file NIfTI-1 (n+1) is supported".into()));
    }

    let ndim = le_i16(&bytes, 40);
    let dim: Vec<i16> = (0..8).map(|a| le_i16(&bytes, 40 + 2 * a)).collect();
    let trailing_ok = (4..=ndim.clamp(0, 7) as usize).all(|a| dim[a] == 1);
    if !(3..=7).contains(&ndim) || !trailing_ok {
        return Err(Error::Unsupported(format!("expected a 3D volume, dim = {dim:?}")));
    }
    if dim[1..4].iter().any(|&d| d <= 0) {
        return Err(Error::InvalidVolume(format!("non-positive dims {dim:?}")));
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];

    let spacing = [le_f32(&bytes, 80), le_f32(&bytes, 84), le_f32(&bytes, 88)];
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidVolume(format!("non-positive spacing {spacing:?}")));
    }
    check_orientation(&bytes, spacing)?;

    let datatype = le_i16(&bytes, 70);
    let width = match datatype {
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(Error::Unsupported(format!("NIfTI datatype {other}"))),
    };
    let vox_offset = le_f32(&bytes, 108);
    if !(vox_offset >= NIFTI_VOX_OFFSET as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::Unsupported(format!("vox_offset {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;
    if bytes.len() > NIFTI_HEADER_SIZE && bytes[NIFTI_HEADER_SIZE] != 0 {
        return Err(Error::Unsupported("NIfTI extensions".into()));
    }

    let n = dims[0] * dims[1] * dims[2];
    let payload = bytes.get(vox_offset..).unwrap_or_default();
    if payload.len() != n * width {
        return Err(Error::DimMismatch {
            expected: n,
            actual: payload.len() / width,
        });
    }

    let mut slope = le_f32(&bytes, 112);
    let inter = le_f32(&bytes, 116);
    if slope == 0.0 || !slope.is_finite() {
        slope = 1.0;
    }
    let inter = if inter.is_finite() { inter } else { 0.0 };

    let voxels: Vec<f32> = match datatype {
        DT_INT16 => payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 * slope + inter)
            .collect(),
        _ => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) * slope + inter)
            .collect(),
    };

    let (subject, scan) = ids_from_filename(path);
    CtVolume::new(dims, spacing, voxels, IntensityState::RawHu, subject, scan)
}

/// Rejects anything but an axis-aligned, non-flipped orientation.
fn check_orientation(bytes: &[u8], spacing: [f32; 3]) -> Result<()> {
    let qform = le_i16(bytes, 252);
    let sform = le_i16(bytes, 254);
    if qform > 0 {
        let q = [le_f32(bytes, 256), le_f32(bytes, 260), le_f32(bytes, 264)];
        let qfac = le_f32(bytes, 76);
        if q.iter().any(|&x| x.abs() > 1e-6) || qfac < 0.0 {
            return Err(Error::Unsupported("oblique or flipped qform orientation".into()));
        }
    }
    if sform > 0 {
        for row in 0..3 {
            for col in 0..3 {
                let v = le_f32(bytes, 280 + 16 * row + 4 * col);
                let ok = if row == col {
                    (v - spacing[row]).abs() <= 1e-4 * spacing[row]
                } else {
                    v.abs() <= 1e-6
                };
                if !ok {
                    return Err(Error::Unsupported(
                        "oblique or flipped sform orientation".into(),
                    ));
                }
            }
        }
    }
    Ok(())
}

fn write_nifti(v: &CtVolume, path: &Path) -> Result<()> {
    let lossless_i16 = v
        .voxels()
        .iter()
        .all(|&x| x.fract() == 0.0 && x >= i16::MIN as f32 && x <= i16::MAX as f32);
    let (datatype, bitpix, width) = if lossless_i16 {
        (DT_INT16, 16i16, 2)
    } else {
        (DT_FLOAT32, 32i16, 4)
    };

    let mut out = vec![0u8; NIFTI_VOX_OFFSET + v.len() * width];
    let put_i16 = |b: &mut [u8], off: usize, x: i16| b[off..off + 2].copy_from_slice(&x.to_le_bytes());
    let put_f32 = |b: &mut [u8], off: usize, x: f32| b[off..off + 4].copy_from_slice(&x.to_le_bytes());

    out[0..4].copy_from_slice(&(NIFTI_HEADER_SIZE as i32).to_le_bytes());
    let d = v.dims();
    for (a, x) in [3i16, d[0] as i16, d[1] as i16, d[2] as i16, 1, 1, 1, 1]
        .into_iter()
        .enumerate()
    {
        put_i16(&mut out, 40 + 2 * a, x);
    }
    put_i16(&mut out, 70, datatype);
    put_i16(&mut out, 72, bitpix);
    let s = v.spacing();
    for (a, x) in [1.0f32, s[0], s[1], s[2], 1.0, 1.0, 1.0, 1.0].into_iter().enumerate() {
        put_f32(&mut out, 76 + 4 * a, x);
    }
    put_f32(&mut out, 108, NIFTI_VOX_OFFSET as f32);
    put_f32(&mut out, 112, 1.0);
    put_f32(&mut out, 116, 0.0);
    out[123] = 2; // millimetres
    let descrip = b"cardiopulm";
    out[148..148 + descrip.len()].copy_from_slice(descrip);
    put_i16(&mut out, 254, 1); // sform: scanner coordinates
    put_f32(&mut out, 280, s[0]);
    put_f32(&mut out, 296 + 4, s[1]);
    put_f32(&mut out, 312 + 8, s[2]);
    out[344..348].copy_from_slice(b"n+1\0");

    let payload = &mut out[NIFTI_VOX_OFFSET..];
    if lossless_i16 {
        for (c, &x) in payload.chunks_exact_mut(2).zip(v.voxels()) {
            c.copy_from_slice(&(x as i16).to_le_bytes());
        }
    } else {
        for (c, &x) in payload.chunks_exact_mut(4).zip(v.voxels()) {
            c.copy_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn raw_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("raw"), path.with_extension("json"))
}

fn read_raw(path: &Path) -> Result<CtVolume> {
    let (raw, json) = raw_paths(path);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: {e}", json.display())))?;
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::DimMismatch {
            expected: sidecar.dims.iter().product(),
            actual: bytes.len() / 4,
        });
    }
    let voxels: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    CtVolume::new(
        sidecar.dims,
        sidecar.spacing_mm,
        voxels,
        sidecar.intensity_state,
        sidecar.subject_id,
        sidecar.scan_id,
    )
}

fn write_raw(v: &CtVolume, path: &Path) -> Result<()> {
    let (raw, json) = raw_paths(path);
    let sidecar = Sidecar {
        dims: v.dims(),
        spacing_mm: v.spacing(),
        subject_id: v.subject_id().to_string(),
        scan_id: v.scan_id().to_string(),
        intensity_state: v.intensity_state(),
    };
    let mut bytes = Vec::with_capacity(v.len() * 4);
    for x in v.voxels() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    fs::write(&json, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&json, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3], spacing: [f32; 3], f: impl Fn(usize) -> f32) -> CtVolume {
        let n = dims.iter().product();
        CtVolume::new(dims, spacing, (0..n).map(f).collect(), IntensityState::RawHu, "s1", "t1").unwrap()
    }

    #[test]
    fn nifti_zeros_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("zeros.nii");
        let v = ramp([16, 16, 16], [1.0; 3], |_| 0.0);
        save_volume(&v, &p).unwrap();
        let back = load_volume(&p).unwrap();
        assert_eq!(back.dims(), [16, 16, 16]);
        assert!(back.voxels().iter().all(|&x| x == 0.0));
        assert_eq!(back.intensity_state(), IntensityState::RawHu);
        assert_eq!(back.subject_id(), "zeros");
    }

    #[test]
    fn nifti_float_and_int_payloads_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let ints = ramp([9, 10, 11], [0.7, 0.7, 1.25], |i| (i as f32) - 500.0);
        let floats = ramp([9, 10, 11], [0.7, 0.7, 1.25], |i| (i as f32) * 0.37 - 5.5);
        for (name, v) in [("S7__scanA.nii", &ints), ("float.nii", &floats)] {
            let p = dir.path().join(name);
            save_volume(v, &p).unwrap();
            let back = load_volume(&p).unwrap();
            assert_eq!(back.dims(), v.dims());
            assert_eq!(back.spacing(), [0.7f32, 0.7, 1.25]);
            assert_eq!(back.voxels(), v.voxels());
        }
        let back = load_volume(dir.path().join("S7__scanA.nii")).unwrap();
        assert_eq!((back.subject_id(), back.scan_id()), ("S7", "scanA"));
        // int payload chose the compact datatype
        let len = fs::metadata(dir.path().join("S7__scanA.nii")).unwrap().len() as usize;
        assert_eq!(len, NIFTI_VOX_OFFSET + 9 * 10 * 11 * 2);
    }

    #[test]
    fn nifti_scaling_is_applied() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scaled.nii");
        save_volume(&ramp([8, 8, 8], [1.0; 3], |i| i as f32), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&(-1024.0f32).to_le_bytes());
        fs::write(&p, bytes).unwrap();
        let v = load_volume(&p).unwrap();
        assert_eq!(v.voxels()[0], -1024.0);
        assert_eq!(v.voxels()[3], -1018.0);
    }

    #[test]
    fn nifti_rejects_truncated_payload_and_bad_headers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trunc.nii");
        save_volume(&ramp([16, 16, 16], [1.0; 3], |i| i as f32 * 0.5), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::DimMismatch { expected: 4096, actual: 4095 })));

        let mut bad = bytes.clone();
        bad[70..72].copy_from_slice(&2i16.to_le_bytes()); // uint8
        fs::write(&p, &bad).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::Unsupported(_))));

        let mut bad = bytes.clone();
        bad[80..84].copy_from_slice(&0.0f32.to_le_bytes());
        fs::write(&p, &bad).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::InvalidVolume(_))));

        let mut bad = bytes;
        bad[284..288].copy_from_slice(&0.3f32.to_le_bytes()); // shear in srow_x
        fs::write(&p, &bad).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::Unsupported(_))));

        assert!(matches!(
            load_volume(dir.path().join("x.nii.gz")),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn raw_sidecar_roundtrip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vol.raw");
        let v = ramp([16, 16, 16], [0.7, 0.7, 1.25], |i| (i as f32).sin() * 300.0);
        save_volume(&v, &p).unwrap();
        let back = load_volume(&p).unwrap();
        assert_eq!(back, v);

        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..4095 * 4]).unwrap();
        let err = load_volume(&p).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { expected: 4096, actual: 4095 }));
        assert!(err.to_string().contains("dim mismatch"));
    }

    #[test]
    fn unwritable_target_is_io_error() {
        let v = ramp([8, 8, 8], [1.0; 3], |_| 0.0);
        let err = save_volume(&v, "/nonexistent-dir/sub/x.nii").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn small_scans_are_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tiny.nii");
        save_volume(&ramp([4, 8, 8], [1.0; 3], |_| 0.0), &p).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::InvalidVolume(_))));
    }
}
