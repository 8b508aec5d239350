//! Procedural chest phantoms with planted pathology signatures.
//!
//! Geometry is expressed in voxels relative to the volume dims and the heart
//! centre, so the anatomy translates rigidly with `heart_center`:
//!
//! * body: elliptic cylinder along axis 2 centred in-plane, 40 HU;
//! * lungs: two -850 HU ellipsoids placed symmetrically about the heart along
//!   axis 0;
//! * heart: 40 HU ellipsoid wrapped in a 3-voxel pericardial shell.
//!
//! Per-voxel decisions use a counter-based hash of `(seed, stream, index)`,
//! so raising one severity knob with the same seed only ever adds voxels to
//! that pathology's signature.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::perception::Finding;
use crate::volume::{CtVolume, IntensityState};
use crate::{Error, Result};

pub const AIR_HU: f32 = -1000.0;
pub const SOFT_TISSUE_HU: f32 = 40.0;
pub const LUNG_HU: f32 = -850.0;
pub const EMPHYSEMA_HU: f32 = -985.0;
pub const FIBROSIS_HU: f32 = -650.0;
pub const OPACITY_HU: f32 = 30.0;
pub const NODULE_HU: f32 = 50.0;
pub const EFFUSION_HU: f32 = 10.0;
pub const FAT_HU: f32 = -100.0;
pub const NOISE_SIGMA_HU: f64 = 15.0;
pub const DEFAULT_SPACING_MM: f32 = 1.5;

/// Thickness of the pericardial fat shell around the heart, in voxels.
pub const FAT_SHELL_VOXELS: f64 = 3.0;
/// Calcified voxels planted per unit of calcification burden.
pub const CALCIFIED_VOXELS_PER_BURDEN: f64 = 400.0;
/// Effusion band thickness at severity 1, as a fraction of dims[1].
pub const EFFUSION_MAX_THICKNESS: f64 = 0.065;

const LUNG_OFFSET: f64 = 0.26;
const LUNG_SEMI: [f64; 3] = [0.11, 0.15, 0.36];
const BODY_SEMI: [f64; 2] = [0.47, 0.44];
const HEART_SEMI: [f64; 3] = [0.10, 0.09, 0.10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: [usize; 3],
    #[serde(default = "default_spacing")]
    pub spacing_mm: f32,
    pub pathology_levels: BTreeMap<Finding, f64>,
    pub heart_center: [f64; 3],
    pub heart_axes: [f64; 3],
    pub calcification_burden: f64,
    pub pericardial_fat_fraction: f64,
}

fn default_spacing() -> f32 {
    DEFAULT_SPACING_MM
}

impl PhantomSpec {
    /// Healthy phantom with the heart at the volume centre.
    pub fn standard(seed: u64, dims: [usize; 3]) -> Self {
        PhantomSpec {
            seed,
            dims,
            spacing_mm: DEFAULT_SPACING_MM,
            pathology_levels: Finding::ALL.iter().map(|&f| (f, 0.0)).collect(),
            heart_center: [dims[0] as f64 / 2.0, dims[1] as f64 / 2.0, dims[2] as f64 / 2.0],
            heart_axes: std::array::from_fn(|a| HEART_SEMI[a] * dims[a] as f64),
            calcification_burden: 0.0,
            pericardial_fat_fraction: 0.0,
        }
    }

    pub fn with_severity(mut self, finding: Finding, severity: f64) -> Self {
        self.pathology_levels.insert(finding, severity);
        self
    }

    pub fn severity(&self, finding: Finding) -> f64 {
        self.pathology_levels.get(&finding).copied().unwrap_or(0.0)
    }

    pub fn lung_centers(&self) -> [[f64; 3]; 2] {
        let off = LUNG_OFFSET * self.dims[0] as f64;
        let c = self.heart_center;
        [[c[0] - off, c[1], c[2]], [c[0] + off, c[1], c[2]]]
    }

    pub fn lung_axes(&self) -> [f64; 3] {
        std::array::from_fn(|a| LUNG_SEMI[a] * self.dims[a] as f64)
    }

    fn body_axes(&self) -> [f64; 2] {
        [BODY_SEMI[0] * self.dims[0] as f64, BODY_SEMI[1] * self.dims[1] as f64]
    }

    fn body_center(&self) -> [f64; 2] {
        [self.dims[0] as f64 / 2.0, self.dims[1] as f64 / 2.0]
    }

    /// Effusion band thickness in voxels for the configured severity.
    pub fn effusion_thickness(&self) -> f64 {
        self.severity(Finding::PleuralEffusion) * EFFUSION_MAX_THICKNESS * self.dims[1] as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("phantom spec: {m}")));
        if self.dims.iter().any(|&d| d < 16) {
            return bad(format!("dims {:?} below 16", self.dims));
        }
        if !(self.spacing_mm > 0.0) {
            return bad(format!("spacing {}", self.spacing_mm));
        }
        for (f, s) in &self.pathology_levels {
            if !(0.0..=1.0).contains(s) {
                return bad(format!("severity {s} for {f} outside [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.calcification_burden) {
            return bad(format!("calcification burden {} outside [0, 1]", self.calcification_burden));
        }
        if !(0.0..=1.0).contains(&self.pericardial_fat_fraction) {
            return bad(format!("fat fraction {} outside [0, 1]", self.pericardial_fat_fraction));
        }
        if self.heart_axes.iter().any(|&a| !(a >= 2.0)) {
            return bad(format!("heart axes {:?} too small", self.heart_axes));
        }
        for a in 0..3 {
            let r = self.heart_axes[a] + FAT_SHELL_VOXELS;
            let c = self.heart_center[a];
            if c - r < 1.0 || c + r > self.dims[a] as f64 - 2.0 {
                return bad(format!("heart ellipsoid leaves the volume on axis {a}"));
            }
        }
        // Lungs plus the widest effusion band must sit inside the body with a
        // 2-voxel wall, and inside the volume along axis 2.
        let la = self.lung_axes();
        let ba = self.body_axes();
        let bc = self.body_center();
        let band = EFFUSION_MAX_THICKNESS * self.dims[1] as f64;
        for c in self.lung_centers() {
            for step in 0..64 {
                let t = step as f64 / 64.0 * std::f64::consts::TAU;
                let x = c[0] + la[0] * t.cos();
                let y = c[1] + la[1] * t.sin() + if t.sin() > 0.0 { band } else { 0.0 };
                let e = ((x - bc[0]) / (ba[0] - 2.0)).powi(2) + ((y - bc[1]) / (ba[1] - 2.0)).powi(2);
                if e > 1.0 {
                    return bad("lungs do not fit inside the body".into());
                }
            }
            if c[2] - la[2] < 1.0 || c[2] + la[2] > self.dims[2] as f64 - 2.0 {
                return bad("lungs leave the volume on axis 2".into());
            }
        }
        Ok(())
    }
}

mod streams {
    pub const NOISE: u64 = 1;
    pub const EMPHYSEMA: u64 = 2;
    pub const FIBROSIS: u64 = 3;
    pub const OPACITY: u64 = 4;
    pub const NODULE: u64 = 5;
    pub const FAT: u64 = 6;
    pub const CALCIFICATION: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with stream and counter words into an independent seed.
pub(crate) fn derive_seed(seed: u64, stream: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ counter)
}

/// Uniform in [0, 1) for voxel `idx` of `stream`.
fn voxel_uniform(seed: u64, stream: u64, idx: usize) -> f64 {
    (derive_seed(seed, stream, idx as u64) >> 11) as f64 / (1u64 << 53) as f64
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, 0))
}

struct Grid {
    dims: [usize; 3],
}

impl Grid {
    fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let r = idx / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    fn index(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }
}

fn ellipsoid_rho(p: [usize; 3], center: [f64; 3], axes: [f64; 3]) -> f64 {
    (0..3)
        .map(|a| ((p[a] as f64 - center[a]) / axes[a]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Grows a blob of `size` voxels around `seed_idx` by taking the nearest
/// voxels of `region` that are not yet `taken`.
fn grow_blob(grid: &Grid, region: &[bool], taken: &mut [bool], seed_idx: usize, size: usize) -> Vec<usize> {
    let c = grid.coords(seed_idx);
    let radius = ((3.0 * size as f64 / (4.0 * std::f64::consts::PI)).cbrt().ceil() as usize) + 3;
    let mut cand = Vec::new();
    for k in c[2].saturating_sub(radius)..(c[2] + radius + 1).min(grid.dims[2]) {
        for j in c[1].saturating_sub(radius)..(c[1] + radius + 1).min(grid.dims[1]) {
            for i in c[0].saturating_sub(radius)..(c[0] + radius + 1).min(grid.dims[0]) {
                let idx = grid.index([i, j, k]);
                if region[idx] && !taken[idx] {
                    let d2 = [i, j, k]
                        .iter()
                        .zip(c)
                        .map(|(&a, b)| (a as i64 - b as i64).pow(2))
                        .sum::<i64>();
                    cand.push((d2, idx));
                }
            }
        }
    }
    cand.sort_unstable();
    let blob: Vec<usize> = cand.into_iter().take(size).map(|(_, i)| i).collect();
    for &i in &blob {
        taken[i] = true;
    }
    blob
}

fn pick(rng: &mut ChaCha8Rng, items: &[usize]) -> Option<usize> {
    (!items.is_empty()).then(|| items[rng.random_range(0..items.len())])
}

/// Renders the phantom described by `spec` in raw HU (integer valued).
pub fn generate_phantom(spec: &PhantomSpec) -> Result<CtVolume> {
    spec.validate()?;
    let dims = spec.dims;
    let grid = Grid { dims };
    let n = dims.iter().product::<usize>();
    let seed = spec.seed;

    let bc = spec.body_center();
    let ba = spec.body_axes();
    let lung_c = spec.lung_centers();
    let lung_a = spec.lung_axes();
    let hc = spec.heart_center;
    let ha = spec.heart_axes;
    let shell_a: [f64; 3] = std::array::from_fn(|a| ha[a] + FAT_SHELL_VOXELS);

    let mut hu = vec![AIR_HU; n];
    let mut lung_id = vec![0u8; n];
    let mut lung_rho = vec![f64::INFINITY; n];
    let mut heart_rho = vec![f64::INFINITY; n];
    for idx in 0..n {
        let p = grid.coords(idx);
        let e = ((p[0] as f64 - bc[0]) / ba[0]).powi(2) + ((p[1] as f64 - bc[1]) / ba[1]).powi(2);
        if e <= 1.0 {
            hu[idx] = SOFT_TISSUE_HU;
        }
        for (l, c) in lung_c.iter().enumerate() {
            let rho = ellipsoid_rho(p, *c, lung_a);
            if rho <= 1.0 {
                hu[idx] = LUNG_HU;
                lung_id[idx] = l as u8 + 1;
                lung_rho[idx] = rho;
            }
        }
        heart_rho[idx] = ellipsoid_rho(p, hc, ha);
    }

    // Pericardial fat: shell voxels between the heart and its enlarged copy.
    let fat = spec.pericardial_fat_fraction;
    for idx in 0..n {
        if heart_rho[idx] > 1.0
            && lung_id[idx] == 0
            && ellipsoid_rho(grid.coords(idx), hc, shell_a) <= 1.0
            && voxel_uniform(seed, streams::FAT, idx) < fat
        {
            hu[idx] = FAT_HU;
        }
    }

    // Calcification: blobs inside the outer part of the heart.
    let budget = (spec.calcification_burden * CALCIFIED_VOXELS_PER_BURDEN).round() as usize;
    if budget > 0 {
        let region: Vec<bool> = heart_rho.iter().map(|&r| (0.7..=1.0).contains(&r)).collect();
        let cells: Vec<usize> = (0..n).filter(|&i| region[i]).collect();
        let blobs = 1 + (spec.calcification_burden * 11.0).floor() as usize;
        let mut rng = stream_rng(seed, streams::CALCIFICATION);
        let mut taken = vec![false; n];
        for b in 0..blobs {
            let size = budget / blobs + usize::from(b < budget % blobs);
            let peak = rng.random_range(300.0..800.0f32).round();
            let Some(s) = pick(&mut rng, &cells) else { break };
            if size == 0 {
                continue;
            }
            for i in grow_blob(&grid, &region, &mut taken, s, size) {
                hu[i] = peak;
            }
        }
    }

    // Emphysema then fibrosis, by per-voxel thresholds on independent streams.
    let emph = spec.severity(Finding::Emphysema);
    let fib = spec.severity(Finding::Fibrosis);
    for idx in 0..n {
        if lung_id[idx] == 0 {
            continue;
        }
        if voxel_uniform(seed, streams::EMPHYSEMA, idx) < 0.3 * emph {
            hu[idx] = EMPHYSEMA_HU;
        }
        if lung_rho[idx] >= 0.8 && voxel_uniform(seed, streams::FIBROSIS, idx) < 0.5 * fib {
            hu[idx] = FIBROSIS_HU;
        }
    }

    let hz = hc[2];
    // Opacity: consolidation blobs in the lower half of the lung interiors.
    let opa = spec.severity(Finding::Opacity);
    if opa > 0.0 {
        let region: Vec<bool> = (0..n).map(|i| lung_id[i] != 0 && lung_rho[i] <= 0.75).collect();
        let seeds: Vec<usize> = (0..n)
            .filter(|&i| lung_rho[i] <= 0.5 && (grid.coords(i)[2] as f64) <= hz - 6.0)
            .collect();
        let total = (150.0 + 1050.0 * opa).round() as usize;
        let blobs = 1 + (4.0 * opa).floor().min(4.0) as usize;
        let mut rng = stream_rng(seed, streams::OPACITY);
        let mut taken = vec![false; n];
        for b in 0..blobs {
            let size = total / blobs + usize::from(b < total % blobs);
            let Some(s) = pick(&mut rng, &seeds) else { break };
            for i in grow_blob(&grid, &region, &mut taken, s, size) {
                hu[i] = OPACITY_HU;
            }
        }
    }

    // Nodules: small separated balls in the upper half of the lung interiors.
    let count = (8.0 * spec.severity(Finding::Nodule)).round() as usize;
    if count > 0 {
        let region: Vec<bool> = (0..n).map(|i| lung_id[i] != 0 && lung_rho[i] <= 0.75).collect();
        let seeds: Vec<usize> = (0..n)
            .filter(|&i| lung_rho[i] <= 0.6 && (grid.coords(i)[2] as f64) >= hz + 5.0)
            .collect();
        let mut rng = stream_rng(seed, streams::NODULE);
        let mut placed: Vec<[usize; 3]> = Vec::new();
        let mut taken = vec![false; n];
        let mut attempts = 0;
        while placed.len() < count && attempts < 500 {
            attempts += 1;
            let Some(s) = pick(&mut rng, &seeds) else { break };
            let c = grid.coords(s);
            let far = placed.iter().all(|q| {
                (0..3).map(|a| (q[a] as f64 - c[a] as f64).powi(2)).sum::<f64>() >= 49.0
            });
            if !far {
                continue;
            }
            placed.push(c);
            for i in grow_blob(&grid, &region, &mut taken, s, 33) {
                hu[i] = NODULE_HU;
            }
        }
    }

    // Effusion: a fluid band directly posterior (+axis 1) to each lung column.
    let thick = spec.effusion_thickness();
    if thick > 0.0 {
        let [h, w, d] = dims;
        for k in 0..d {
            for i in 0..h {
                let Some(last) = (0..w).rev().find(|&j| lung_id[grid.index([i, j, k])] != 0) else {
                    continue;
                };
                let full = thick.floor() as usize;
                let frac = thick - full as f64;
                for t in 1..=full + 1 {
                    let j = last + t;
                    if j >= w {
                        break;
                    }
                    let weight = if t <= full { 1.0 } else { frac };
                    if weight <= 0.0 {
                        break;
                    }
                    let idx = grid.index([i, j, k]);
                    hu[idx] += (EFFUSION_HU - hu[idx]) * weight as f32;
                }
            }
        }
    }

    let mut rng = stream_rng(seed, streams::NOISE);
    let noise = Normal::new(0.0, NOISE_SIGMA_HU).expect("positive sigma");
    for x in hu.iter_mut() {
        *x = (*x as f64 + noise.sample(&mut rng)).round() as f32;
    }

    let s = spec.spacing_mm;
    CtVolume::new(dims, [s; 3], hu, IntensityState::RawHu, "", "")
}

/// Voxel indices of the planted heart ellipsoid.
pub fn heart_voxels(spec: &PhantomSpec) -> Vec<usize> {
    let grid = Grid { dims: spec.dims };
    (0..spec.dims.iter().product())
        .filter(|&i| ellipsoid_rho(grid.coords(i), spec.heart_center, spec.heart_axes) <= 1.0)
        .collect()
}

/// Number of voxels in the pericardial shell that can receive fat.
pub fn fat_shell_voxels(spec: &PhantomSpec) -> usize {
    let grid = Grid { dims: spec.dims };
    let shell: [f64; 3] = std::array::from_fn(|a| spec.heart_axes[a] + FAT_SHELL_VOXELS);
    let lungs = spec.lung_centers();
    let la = spec.lung_axes();
    (0..spec.dims.iter().product())
        .filter(|&i| {
            let p = grid.coords(i);
            ellipsoid_rho(p, spec.heart_center, spec.heart_axes) > 1.0
                && ellipsoid_rho(p, spec.heart_center, shell) <= 1.0
                && lungs.iter().all(|c| ellipsoid_rho(p, *c, la) > 1.0)
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIMS: [usize; 3] = [48, 48, 48];

    fn lung_voxels(spec: &PhantomSpec) -> Vec<usize> {
        let grid = Grid { dims: spec.dims };
        let la = spec.lung_axes();
        (0..spec.dims.iter().product())
            .filter(|&i| spec.lung_centers().iter().any(|c| ellipsoid_rho(grid.coords(i), *c, la) <= 1.0))
            .collect()
    }

    fn laa_fraction(spec: &PhantomSpec) -> f64 {
        let v = generate_phantom(spec).unwrap();
        let lungs = lung_voxels(spec);
        lungs.iter().filter(|&&i| v.voxels()[i] < -950.0).count() as f64 / lungs.len() as f64
    }

    #[test]
    fn deterministic_and_integral() {
        let spec = PhantomSpec::standard(7, DIMS).with_severity(Finding::Opacity, 0.6);
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a.voxels(), b.voxels());
        assert!(a.voxels().iter().all(|x| x.fract() == 0.0));
    }

    #[test]
    fn clean_lungs_have_no_low_attenuation() {
        let spec = PhantomSpec::standard(3, DIMS);
        assert!(laa_fraction(&spec) < 0.005);
    }

    #[test]
    fn emphysema_knob_is_monotone() {
        let base = PhantomSpec::standard(11, DIMS);
        let lo = laa_fraction(&base.clone().with_severity(Finding::Emphysema, 0.2));
        let hi = laa_fraction(&base.with_severity(Finding::Emphysema, 0.8));
        assert!(hi > lo, "{hi} <= {lo}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let s = PhantomSpec::standard(1, DIMS).with_severity(Finding::Nodule, 1.5);
        assert!(generate_phantom(&s).is_err());
        let mut s = PhantomSpec::standard(1, DIMS);
        s.heart_center[0] = 2.0;
        assert!(generate_phantom(&s).is_err());
        let mut s = PhantomSpec::standard(1, DIMS);
        s.pericardial_fat_fraction = 1.2;
        assert!(s.validate().is_err());
    }

    #[test]
    fn calcification_budget_is_planted() {
        let mut s = PhantomSpec::standard(5, DIMS);
        s.heart_axes = [6.0, 6.0, 6.0];
        s.calcification_burden = 0.5;
        let v = generate_phantom(&s).unwrap();
        let hot = v.voxels().iter().filter(|&&x| x >= 200.0).count();
        assert_eq!(hot, 200);
    }
}
