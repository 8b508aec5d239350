//! Locates the heart ROI on a phantom with a displaced heart.

use cardiopulm::cohort::{generate_phantom, PhantomSpec};
use cardiopulm::locator::{locate_heart_roi, LocatorConfig};
use cardiopulm::volume::clip_hu;

fn main() -> cardiopulm::Result<()> {
    let mut spec = PhantomSpec::standard(3, [96, 96, 96]);
    spec.heart_center = [50.0, 45.0, 49.0];
    let v = clip_hu(&generate_phantom(&spec)?)?;
    let roi = locate_heart_roi(&v, &LocatorConfig { roi_extent: [32, 32, 32] })?;
    let err: f64 = (0..3)
        .map(|a| (roi.center[a] - spec.heart_center[a]).powi(2))
        .sum::<f64>()
        .sqrt();
    println!("planted heart centre {:?}", spec.heart_center);
    println!("located centre       [{:.2}, {:.2}, {:.2}]", roi.center[0], roi.center[1], roi.center[2]);
    println!("error {err:.2} voxels, ROI origin {:?} extent {:?}", roi.origin, roi.extent);
    Ok(())
}
