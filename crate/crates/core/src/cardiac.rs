//! Handcrafted cardiac biomarkers over the heart ROI.
//!
//! The 32 channels, in order:
//!
//! | index  | channel                                                     |
//! |--------|-------------------------------------------------------------|
//! | 0      | calcified volume fraction (HU ≥ 130)                        |
//! | 1      | calcium mass surrogate, Σ(HU − 130)⁺ / ROI size             |
//! | 2      | pericardial fat fraction (HU in [−190, −30])                |
//! | 3–5    | ROI mean, variance and skewness of HU                       |
//! | 6–21   | 16-bin HU histogram over [−1000, 1000]                      |
//! | 22–27  | central second moments of soft tissue (xx yy zz xy xz yz)   |
//! | 28     | largest soft-tissue component fraction (heart surrogate)    |
//! | 29     | largest calcified blob fraction                             |
//! | 30     | calcified blob count / 10                                   |
//! | 31     | mean fat run length along axis 0, in voxels                 |
//!
//! Every channel carries the voxel indices it was computed from so that an
//! attribution can be pushed back onto the ROI.

use std::collections::BTreeMap;
use std::path::Path;

use crate::locator::{label_components, Mask};
use crate::volume::{CtVolume, IntensityState, HU_MAX, HU_MIN};
use crate::{Error, Result};

pub const D_CARD: usize = 32;
pub const CALCIUM_HU: f32 = 130.0;
pub const FAT_WINDOW_HU: (f32, f32) = (-190.0, -30.0);
pub const HISTOGRAM_BINS: usize = 16;
pub const MIN_ROI_DIM: usize = 8;
const BLOB_COUNT_SCALE: f64 = 10.0;

pub const CHANNEL_NAMES: [&str; D_CARD] = [
    "calc_volume_fraction",
    "calc_mass",
    "fat_fraction",
    "hu_mean",
    "hu_variance",
    "hu_skewness",
    "hist_00",
    "hist_01",
    "hist_02",
    "hist_03",
    "hist_04",
    "hist_05",
    "hist_06",
    "hist_07",
    "hist_08",
    "hist_09",
    "hist_10",
    "hist_11",
    "hist_12",
    "hist_13",
    "hist_14",
    "hist_15",
    "moment_xx",
    "moment_yy",
    "moment_zz",
    "moment_xy",
    "moment_xz",
    "moment_yz",
    "heart_volume_fraction",
    "largest_calc_blob_fraction",
    "calc_blob_count",
    "fat_thickness",
];

const HIST0: usize = 6;
const MOMENT0: usize = 22;

#[derive(Debug, Clone, PartialEq)]
pub struct CardiacFeatureVector {
    pub values: [f64; D_CARD],
    /// ROI voxel indices each channel was computed from.
    pub voxel_support: Vec<Vec<u32>>,
}

impl CardiacFeatureVector {
    pub fn channel_names() -> &'static [&'static str; D_CARD] {
        &CHANNEL_NAMES
    }
}

fn soft_tissue(hu: f32) -> bool {
    (FAT_WINDOW_HU.1..CALCIUM_HU).contains(&hu)
}

fn fat(hu: f32) -> bool {
    (FAT_WINDOW_HU.0..=FAT_WINDOW_HU.1).contains(&hu)
}

fn histogram_bin(hu: f32) -> usize {
    let t = (hu - HU_MIN) as f64 / (HU_MAX - HU_MIN) as f64;
    ((t * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

pub fn extract_cardiac_features(roi: &CtVolume) -> Result<CardiacFeatureVector> {
    if roi.intensity_state() != IntensityState::ClippedHu {
        return Err(Error::IntensityState {
            expected: IntensityState::ClippedHu.as_str(),
            found: roi.intensity_state().as_str(),
        });
    }
    let dims = roi.dims();
    if dims.iter().any(|&d| d < MIN_ROI_DIM) {
        return Err(Error::InvalidVolume(format!(
            "cardiac ROI {dims:?} smaller than {MIN_ROI_DIM}^3"
        )));
    }
    let hu = roi.voxels();
    let n = hu.len() as f64;
    let mut values = [0.0; D_CARD];
    let mut support: Vec<Vec<u32>> = vec![Vec::new(); D_CARD];
    let all: Vec<u32> = (0..hu.len() as u32).collect();

    let calc = Mask::from_fn(roi, |_, x| x >= CALCIUM_HU);
    let calc_idx: Vec<u32> = calc.indices().map(|i| i as u32).collect();
    values[0] = calc_idx.len() as f64 / n;
    values[1] = calc_idx.iter().map(|&i| (hu[i as usize] - CALCIUM_HU) as f64).sum::<f64>() / n;
    support[0] = calc_idx.clone();
    support[1] = calc_idx.clone();

    let fat_idx: Vec<u32> = (0..hu.len()).filter(|&i| fat(hu[i])).map(|i| i as u32).collect();
    values[2] = fat_idx.len() as f64 / n;
    support[2] = fat_idx.clone();

    let mean = hu.iter().map(|&x| x as f64).sum::<f64>() / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for &x in hu {
        let d = x as f64 - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    let (var, m3) = (m2 / n, m3 / n);
    values[3] = mean;
    values[4] = var;
    values[5] = if var > 0.0 { m3 / var.powf(1.5) } else { 0.0 };
    for c in 3..6 {
        support[c] = all.clone();
    }

    for (i, &x) in hu.iter().enumerate() {
        support[HIST0 + histogram_bin(x)].push(i as u32);
    }
    for b in 0..HISTOGRAM_BINS {
        values[HIST0 + b] = support[HIST0 + b].len() as f64 / n;
    }

    let soft = Mask::from_fn(roi, |_, x| soft_tissue(x));
    let soft_idx: Vec<u32> = soft.indices().map(|i| i as u32).collect();
    let moments = central_moments(&soft);
    values[MOMENT0..MOMENT0 + 6].copy_from_slice(&moments);
    for c in MOMENT0..MOMENT0 + 6 {
        support[c] = soft_idx.clone();
    }

    let soft_comps = label_components(&soft);
    if let Some(&big) = soft_comps.by_size().first() {
        let m = soft_comps.mask_of(dims, big);
        support[28] = m.indices().map(|i| i as u32).collect();
        values[28] = support[28].len() as f64 / n;
    }

    let calc_comps = label_components(&calc);
    if let Some(&big) = calc_comps.by_size().first() {
        let m = calc_comps.mask_of(dims, big);
        support[29] = m.indices().map(|i| i as u32).collect();
        values[29] = support[29].len() as f64 / n;
    }
    values[30] = calc_comps.len() as f64 / BLOB_COUNT_SCALE;
    support[30] = calc_idx;

    values[31] = mean_run_length(hu, dims);
    support[31] = fat_idx;

    Ok(CardiacFeatureVector {
        values,
        voxel_support: support,
    })
}

/// Central second moments of a mask, in voxel² units.
fn central_moments(mask: &Mask) -> [f64; 6] {
    let n = mask.count();
    if n == 0 {
        return [0.0; 6];
    }
    let mut c = [0.0f64; 3];
    for idx in mask.indices() {
        let p = mask.coords(idx);
        for a in 0..3 {
            c[a] += p[a] as f64;
        }
    }
    c = c.map(|s| s / n as f64);
    let mut m = [0.0f64; 6];
    for idx in mask.indices() {
        let p = mask.coords(idx);
        let d: [f64; 3] = std::array::from_fn(|a| p[a] as f64 - c[a]);
        m[0] += d[0] * d[0];
        m[1] += d[1] * d[1];
        m[2] += d[2] * d[2];
        m[3] += d[0] * d[1];
        m[4] += d[0] * d[2];
        m[5] += d[1] * d[2];
    }
    m.map(|s| s / n as f64)
}

/// Mean length of consecutive fat runs along axis 0.
fn mean_run_length(hu: &[f32], dims: [usize; 3]) -> f64 {
    let (mut runs, mut voxels) = (0usize, 0usize);
    for row in hu.chunks(dims[0]) {
        let mut inside = false;
        for &x in row {
            let f = fat(x);
            if f {
                voxels += 1;
                if !inside {
                    runs += 1;
                }
            }
            inside = f;
        }
    }
    if runs == 0 {
        0.0
    } else {
        voxels as f64 / runs as f64
    }
}

/// Writes one row per scan with a header naming every channel.
pub fn write_feature_cache(rows: &BTreeMap<String, [f64; D_CARD]>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["scan_id"];
    header.extend(CHANNEL_NAMES);
    w.write_record(&header)?;
    for (scan, values) in rows {
        let mut rec = vec![scan.clone()];
        rec.extend(values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<BTreeMap<String, [f64; D_CARD]>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers()?.clone();
    if header.len() != D_CARD + 1 || header.iter().skip(1).zip(CHANNEL_NAMES).any(|(a, b)| a != b) {
        return Err(Error::Schema(format!("{}: unexpected feature header", path.display())));
    }
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let mut values = [0.0; D_CARD];
        for (c, v) in values.iter_mut().enumerate() {
            *v = rec[c + 1]
                .parse()
                .map_err(|_| Error::Schema(format!("bad value '{}' in {}", &rec[c + 1], path.display())))?;
        }
        out.insert(rec[0].to_string(), values);
    }
    Ok(out)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(hu: f32) -> CtVolume {
        CtVolume::from_fn([10, 10, 10], [1.0; 3], IntensityState::ClippedHu, |_, _, _| hu).unwrap()
    }

    #[test]
    fn uniform_soft_tissue() {
        let f = extract_cardiac_features(&uniform(40.0)).unwrap();
        assert_eq!(f.values[0], 0.0);
        assert_eq!(f.values[1], 0.0);
        assert_eq!(f.values[2], 0.0);
        let hist = &f.values[HIST0..HIST0 + HISTOGRAM_BINS];
        assert_eq!(hist.iter().filter(|&&h| h > 0.0).count(), 1);
        assert_eq!(hist[histogram_bin(40.0)], 1.0);
        assert_eq!(f.values[28], 1.0);
        assert_eq!(f.voxel_support.len(), D_CARD);
    }

    #[test]
    fn hand_sized_calcium() {
        let v = CtVolume::from_fn([8, 8, 8], [1.0; 3], IntensityState::ClippedHu, |i, j, k| {
            if (i, j, k) == (1, 1, 1) || (i, j, k) == (2, 1, 1) {
                330.0
            } else if (i, j, k) == (6, 6, 6) {
                230.0
            } else {
                40.0
            }
        })
        .unwrap();
        let f = extract_cardiac_features(&v).unwrap();
        assert!((f.values[0] - 3.0 / 512.0).abs() < 1e-15);
        assert!((f.values[1] - 500.0 / 512.0).abs() < 1e-12);
        assert!((f.values[29] - 2.0 / 512.0).abs() < 1e-15);
        assert!((f.values[30] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn fat_runs() {
        let v = CtVolume::from_fn([8, 8, 8], [1.0; 3], IntensityState::ClippedHu, |i, j, k| {
            if j == 0 && k == 0 && i < 3 || j == 1 && k == 0 && i == 5 { -100.0 } else { 40.0 }
        })
        .unwrap();
        let f = extract_cardiac_features(&v).unwrap();
        assert!((f.values[31] - 2.0).abs() < 1e-15);
        assert!((f.values[2] - 4.0 / 512.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_small_or_raw_roi() {
        let small = CtVolume::from_fn([7, 8, 8], [1.0; 3], IntensityState::ClippedHu, |_, _, _| 0.0).unwrap();
        assert!(extract_cardiac_features(&small).is_err());
        let raw = CtVolume::from_fn([8, 8, 8], [1.0; 3], IntensityState::RawHu, |_, _, _| 0.0).unwrap();
        assert!(extract_cardiac_features(&raw).is_err());
    }

    #[test]
    fn cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let f = extract_cardiac_features(&uniform(-100.0)).unwrap();
        let rows: BTreeMap<_, _> = [("scan-a".to_string(), f.values)].into_iter().collect();
        write_feature_cache(&rows, &p).unwrap();
        assert_eq!(read_feature_cache(&p).unwrap(), rows);
    }
}
