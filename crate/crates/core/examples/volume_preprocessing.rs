//! Round-trips a phantom through NIfTI, then clips, normalizes and resamples
//! it.

use cardiopulm::cohort::{generate_phantom, PhantomSpec};
use cardiopulm::volume::{clip_hu, load_volume, normalize_intensity, resample_isotropic, save_volume};

fn main() -> cardiopulm::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let raw = generate_phantom(&PhantomSpec::standard(1, [64, 64, 64]))?.with_ids("sub-1", "scan-a");
    let path = dir.path().join("sub-1__scan-a.nii");
    save_volume(&raw, &path)?;
    let back = load_volume(&path)?;
    println!(
        "reloaded {} / {}: dims {:?}, spacing {:?}, identical voxels: {}",
        back.subject_id(),
        back.scan_id(),
        back.dims(),
        back.spacing(),
        back.voxels() == raw.voxels()
    );

    let clipped = clip_hu(&back)?;
    let (lo, hi) = clipped
        .voxels()
        .iter()
        .fold((f32::MAX, f32::MIN), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    println!("clipped range [{lo}, {hi}] HU");

    let norm = normalize_intensity(&clipped)?;
    println!("normalized state: {}", norm.intensity_state().as_str());

    let coarse = resample_isotropic(&clipped, 3.0)?;
    println!("resampled to 3 mm: dims {:?}", coarse.dims());
    Ok(())
}
