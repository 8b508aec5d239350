//! Extracts the 32 cardiac channels from the ROI of a calcified phantom.

use cardiopulm::cardiac::{extract_cardiac_features, CHANNEL_NAMES};
use cardiopulm::cohort::{generate_phantom, PhantomSpec};
use cardiopulm::locator::{locate_heart_roi, LocatorConfig};
use cardiopulm::volume::{clip_hu, crop_roi};

fn main() -> cardiopulm::Result<()> {
    let mut spec = PhantomSpec::standard(9, [96, 96, 96]);
    spec.calcification_burden = 0.6;
    spec.pericardial_fat_fraction = 0.4;
    let v = clip_hu(&generate_phantom(&spec)?)?;
    let roi = locate_heart_roi(&v, &LocatorConfig { roi_extent: [32, 32, 32] })?;
    let features = extract_cardiac_features(&crop_roi(&v, &roi.roi_box())?)?;
    for ((name, value), support) in CHANNEL_NAMES.iter().zip(features.values).zip(&features.voxel_support) {
        println!("{name:<28} {value:>12.5}  ({} voxels)", support.len());
    }
    Ok(())
}
