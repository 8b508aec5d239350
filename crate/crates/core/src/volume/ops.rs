use super::{CtVolume, IntensityState, RoiBox, HU_MAX, HU_MIN};
use crate::{Error, Result};

fn expect_state(v: &CtVolume, expected: IntensityState) -> Result<()> {
    if v.intensity_state() != expected {
        return Err(Error::IntensityState {
            expected: expected.as_str(),
            found: v.intensity_state().as_str(),
        });
    }
    Ok(())
}

/// Clamps every voxel into `[-1000, 1000]` HU.
pub fn clip_hu(v: &CtVolume) -> Result<CtVolume> {
    expect_state(v, IntensityState::RawHu)?;
    let voxels = v.voxels().iter().map(|x| x.clamp(HU_MIN, HU_MAX)).collect();
    v.replace_voxels(voxels, IntensityState::ClippedHu)
}

/// Fixed min-max map of the clip window onto `[0, 1]`.
pub fn normalize_intensity(v: &CtVolume) -> Result<CtVolume> {
    expect_state(v, IntensityState::ClippedHu)?;
    let span = (HU_MAX - HU_MIN) as f64;
    let voxels = v
        .voxels()
        .iter()
        .map(|&x| (((x - HU_MIN) as f64) / span).clamp(0.0, 1.0) as f32)
        .collect();
    v.replace_voxels(voxels, IntensityState::Normalized)
}

/// Trilinear resampling onto an isotropic grid of `target_mm`.
///
/// Output voxel `o` along axis `a` samples input coordinate
/// `o * target_mm / spacing[a]`; samples past the last voxel clamp to it.
/// Output dims are `max(1, round(dim * spacing / target_mm))`.
pub fn resample_isotropic(v: &CtVolume, target_mm: f64) -> Result<CtVolume> {
    if !(target_mm > 0.0) || !target_mm.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "target spacing must be positive, got {target_mm}"
        )));
    }
    let dims = v.dims();
    let spacing = v.spacing();
    let out_dims: [usize; 3] = std::array::from_fn(|a| {
        ((dims[a] as f64 * spacing[a] as f64 / target_mm).round() as usize).max(1)
    });

    // Per-axis (lower index, upper index, upper weight) tables.
    let tables: [Vec<(usize, usize, f64)>; 3] = std::array::from_fn(|a| {
        let scale = target_mm / spacing[a] as f64;
        let last = dims[a] - 1;
        (0..out_dims[a])
            .map(|o| {
                let x = (o as f64 * scale).clamp(0.0, last as f64);
                let lo = (x.floor() as usize).min(last);
                let hi = (lo + 1).min(last);
                (lo, hi, x - lo as f64)
            })
            .collect()
    });

    let src = v.voxels();
    let (sx, sxy) = (dims[0], dims[0] * dims[1]);
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for &(k0, k1, fk) in &tables[2] {
        for &(j0, j1, fj) in &tables[1] {
            for &(i0, i1, fi) in &tables[0] {
                let at = |i: usize, j: usize, k: usize| src[i + sx * j + sxy * k] as f64;
                let c00 = at(i0, j0, k0) * (1.0 - fi) + at(i1, j0, k0) * fi;
                let c10 = at(i0, j1, k0) * (1.0 - fi) + at(i1, j1, k0) * fi;
                let c01 = at(i0, j0, k1) * (1.0 - fi) + at(i1, j0, k1) * fi;
                let c11 = at(i0, j1, k1) * (1.0 - fi) + at(i1, j1, k1) * fi;
                let c0 = c00 * (1.0 - fj) + c10 * fj;
                let c1 = c01 * (1.0 - fj) + c11 * fj;
                out.push((c0 * (1.0 - fk) + c1 * fk) as f32);
            }
        }
    }
    let t = target_mm as f32;
    CtVolume::new(
        out_dims,
        [t; 3],
        out,
        v.intensity_state(),
        v.subject_id(),
        v.scan_id(),
    )
}

pub fn crop_roi(v: &CtVolume, roi: &RoiBox) -> Result<CtVolume> {
    roi.validate(v.dims())?;
    let [h, w, d] = roi.extent;
    let [oi, oj, ok] = roi.origin;
    let mut out = Vec::with_capacity(h * w * d);
    for k in 0..d {
        for j in 0..w {
            let start = v.index(oi, oj + j, ok + k);
            out.extend_from_slice(&v.voxels()[start..start + h]);
        }
    }
    CtVolume::new(
        roi.extent,
        v.spacing(),
        out,
        v.intensity_state(),
        v.subject_id(),
        v.scan_id(),
    )
}
