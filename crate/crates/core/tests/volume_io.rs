use cardiopulm::volume::{
    clip_hu, crop_roi, load_volume, normalize_intensity, resample_isotropic, save_volume, CtVolume, IntensityState,
    RoiBox, HU_MAX, HU_MIN,
};
use cardiopulm::Error;
use proptest::prelude::*;

fn ramp(dims: [usize; 3], spacing: [f32; 3], state: IntensityState, f: impl Fn(usize, usize, usize) -> f32) -> CtVolume {
    CtVolume::from_fn(dims, spacing, state, f).unwrap()
}

#[test]
fn nifti_round_trip_keeps_integer_voxels_and_ids() {
    let dir = tempfile::tempdir().unwrap();
    let v = ramp([10, 9, 8], [0.7, 0.8, 2.5], IntensityState::RawHu, |i, j, k| {
        (i as f32 * 37.0 - j as f32 * 11.0 + k as f32 * 5.0) - 200.0
    });
    let path = dir.path().join("subj01__scanA.nii");
    save_volume(&v, &path).unwrap();
    let back = load_volume(&path).unwrap();
    assert_eq!(back.dims(), v.dims());
    assert_eq!(back.spacing(), v.spacing());
    assert_eq!(back.voxels(), v.voxels());
    assert_eq!((back.subject_id(), back.scan_id()), ("subj01", "scanA"));
}

#[test]
fn nifti_round_trip_keeps_fractional_voxels() {
    let dir = tempfile::tempdir().unwrap();
    let v = ramp([8, 8, 8], [1.0; 3], IntensityState::RawHu, |i, j, k| (i + j + k) as f32 * 0.37 - 1.25);
    let path = dir.path().join("frac.nii");
    save_volume(&v, &path).unwrap();
    let back = load_volume(&path).unwrap();
    assert_eq!(back.voxels(), v.voxels());
    assert_eq!(back.scan_id(), "frac");
}

#[test]
fn raw_sidecar_round_trip_keeps_state() {
    let dir = tempfile::tempdir().unwrap();
    let v = clip_hu(&ramp([8, 9, 10], [1.5; 3], IntensityState::RawHu, |i, _, _| i as f32 * 400.0 - 1500.0))
        .unwrap()
        .with_ids("s7", "s7_t1");
    let path = dir.path().join("vol.raw");
    save_volume(&v, &path).unwrap();
    let back = load_volume(&path).unwrap();
    assert_eq!(back, v);
    assert_eq!(back.intensity_state(), IntensityState::ClippedHu);
}

#[test]
fn compressed_and_unknown_formats_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.nii.gz", "a.mha"] {
        let p = dir.path().join(name);
        std::fs::write(&p, b"not a volume").unwrap();
        assert!(matches!(load_volume(&p), Err(Error::Unsupported(_))), "{name}");
    }
}

#[test]
fn truncated_nifti_payload_is_a_dim_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let v = ramp([8, 8, 8], [1.0; 3], IntensityState::RawHu, |i, _, _| i as f32 * 0.5);
    let path = dir.path().join("cut.nii");
    save_volume(&v, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 64]).unwrap();
    assert!(matches!(load_volume(&path), Err(Error::DimMismatch { .. })));
}

#[test]
fn undersized_scans_are_rejected_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let v = ramp([8, 8, 4], [1.0; 3], IntensityState::RawHu, |_, _, _| 0.0);
    let path = dir.path().join("thin.nii");
    save_volume(&v, &path).unwrap();
    assert!(matches!(load_volume(&path), Err(Error::InvalidVolume(_))));
}

#[test]
fn intensity_transforms_check_their_input_state() {
    let raw = ramp([8, 8, 8], [1.0; 3], IntensityState::RawHu, |_, _, _| 0.0);
    assert!(matches!(normalize_intensity(&raw), Err(Error::IntensityState { .. })));
    let clipped = clip_hu(&raw).unwrap();
    assert!(matches!(clip_hu(&clipped), Err(Error::IntensityState { .. })));
}

#[test]
fn crop_returns_the_requested_window() {
    let v = ramp([12, 10, 9], [1.0; 3], IntensityState::RawHu, |i, j, k| (i * 100 + j * 10 + k) as f32);
    let roi = RoiBox::new([2, 3, 1], [8, 5, 6]);
    let c = crop_roi(&v, &roi).unwrap();
    assert_eq!(c.dims(), [8, 5, 6]);
    assert_eq!(c.get(0, 0, 0), v.get(2, 3, 1));
    assert_eq!(c.get(7, 4, 5), v.get(9, 7, 6));
    assert!(crop_roi(&v, &RoiBox::new([6, 0, 0], [8, 5, 5])).is_err());
}

proptest! {
    #[test]
    fn clip_then_normalize_stays_in_unit_range(values in proptest::collection::vec(-5000.0f32..5000.0, 512)) {
        let raw = CtVolume::new([8, 8, 8], [1.0; 3], values.clone(), IntensityState::RawHu, "", "").unwrap();
        let clipped = clip_hu(&raw).unwrap();
        for (c, r) in clipped.voxels().iter().zip(&values) {
            prop_assert_eq!(*c, r.clamp(HU_MIN, HU_MAX));
        }
        let n = normalize_intensity(&clipped).unwrap();
        prop_assert!(n.voxels().iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn resampling_preserves_constant_fields(
        c in -1000.0f32..1000.0,
        sx in 0.5f32..3.0, sy in 0.5f32..3.0, sz in 0.5f32..3.0,
        target in 0.8f64..2.5,
    ) {
        let v = ramp([10, 10, 10], [sx, sy, sz], IntensityState::ClippedHu, |_, _, _| c);
        let r = resample_isotropic(&v, target).unwrap();
        prop_assert!(r.spacing().iter().all(|&s| (s as f64 - target).abs() < 1e-6));
        prop_assert!(r.voxels().iter().all(|&x| x == c));
    }
}
