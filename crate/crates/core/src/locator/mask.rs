//! Binary masks and 6-connected component labeling.

use crate::volume::CtVolume;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    bits: Vec<bool>,
}

/// Inclusive voxel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl Mask {
    pub fn empty(dims: [usize; 3]) -> Self {
        Mask {
            dims,
            bits: vec![false; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_fn(v: &CtVolume, mut f: impl FnMut(usize, f32) -> bool) -> Self {
        Mask {
            dims: v.dims(),
            bits: v.voxels().iter().enumerate().map(|(i, &x)| f(i, x)).collect(),
        }
    }

    pub fn from_bits(dims: [usize; 3], bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), dims[0] * dims[1] * dims[2]);
        Mask { dims, bits }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    #[inline]
    pub fn set(&mut self, idx: usize, value: bool) {
        self.bits[idx] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask {
            dims: self.dims,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn and_not(&self, other: &Mask) -> Mask {
        Mask {
            dims: self.dims,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && !*b).collect(),
        }
    }

    pub fn is_disjoint(&self, other: &Mask) -> bool {
        !self.bits.iter().zip(&other.bits).any(|(a, b)| *a && *b)
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bb: Option<BoundingBox> = None;
        for idx in self.indices() {
            let c = self.coords(idx);
            let b = bb.get_or_insert(BoundingBox { min: c, max: c });
            for a in 0..3 {
                b.min[a] = b.min[a].min(c[a]);
                b.max[a] = b.max[a].max(c[a]);
            }
        }
        bb
    }

    pub fn centroid(&self) -> Option<[f64; 3]> {
        let mut sum = [0.0f64; 3];
        let mut n = 0usize;
        for idx in self.indices() {
            let c = self.coords(idx);
            for a in 0..3 {
                sum[a] += c[a] as f64;
            }
            n += 1;
        }
        (n > 0).then(|| sum.map(|s| s / n as f64))
    }

    /// Fills background regions not reachable from the slice border, one
    /// axial slice (fixed axis-2 index) at a time, using 4-connectivity.
    pub fn fill_holes_axial(&mut self) {
        let [h, w, d] = self.dims;
        let mut outside = vec![false; h * w];
        let mut stack = Vec::new();
        for k in 0..d {
            let base = h * w * k;
            outside.iter_mut().for_each(|x| *x = false);
            let seed = |i: usize, j: usize, stack: &mut Vec<usize>, outside: &mut [bool]| {
                let p = i + h * j;
                if !self.bits[base + p] && !outside[p] {
                    outside[p] = true;
                    stack.push(p);
                }
            };
            for i in 0..h {
                seed(i, 0, &mut stack, &mut outside);
                seed(i, w - 1, &mut stack, &mut outside);
            }
            for j in 0..w {
                seed(0, j, &mut stack, &mut outside);
                seed(h - 1, j, &mut stack, &mut outside);
            }
            while let Some(p) = stack.pop() {
                let (i, j) = (p % h, p / h);
                let mut visit = |q: usize| {
                    if !self.bits[base + q] && !outside[q] {
                        outside[q] = true;
                        stack.push(q);
                    }
                };
                if i > 0 {
                    visit(p - 1);
                }
                if i + 1 < h {
                    visit(p + 1);
                }
                if j > 0 {
                    visit(p - h);
                }
                if j + 1 < w {
                    visit(p + h);
                }
            }
            for p in 0..h * w {
                if !outside[p] {
                    self.bits[base + p] = true;
                }
            }
        }
    }

    /// One step of 6-connected erosion; voxels on the volume border erode.
    pub fn eroded(&self) -> Mask {
        let mut out = self.clone();
        for idx in self.indices() {
            let keep = neighbors6(self.dims, idx).count() == 6
                && neighbors6(self.dims, idx).all(|n| self.bits[n]);
            if !keep {
                out.bits[idx] = false;
            }
        }
        out
    }
}

#[inline]
pub(crate) fn neighbors6(dims: [usize; 3], idx: usize) -> impl Iterator<Item = usize> {
    let [h, w, d] = dims;
    let i = idx % h;
    let j = (idx / h) % w;
    let k = idx / (h * w);
    let hw = h * w;
    [
        (i > 0).then(|| idx - 1),
        (i + 1 < h).then(|| idx + 1),
        (j > 0).then(|| idx - h),
        (j + 1 < w).then(|| idx + h),
        (k > 0).then(|| idx - hw),
        (k + 1 < d).then(|| idx + hw),
    ]
    .into_iter()
    .flatten()
}

/// Result of labeling: `labels[idx]` is 0 for background, otherwise
/// `1 + component number`; `sizes[c]` is the voxel count of component `c`.
#[derive(Debug, Clone)]
pub struct Components {
    pub labels: Vec<u32>,
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Component numbers sorted by decreasing size (ties by label order).
    pub fn by_size(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.sizes.len()).collect();
        order.sort_by(|&a, &b| self.sizes[b].cmp(&self.sizes[a]).then(a.cmp(&b)));
        order
    }

    pub fn mask_of(&self, dims: [usize; 3], component: usize) -> Mask {
        let label = component as u32 + 1;
        Mask::from_bits(dims, self.labels.iter().map(|&l| l == label).collect())
    }
}

/// Labels 6-connected components in scan order.
pub fn label_components(mask: &Mask) -> Components {
    let dims = mask.dims();
    let mut labels = vec![0u32; mask.bits.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.bits.len() {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let mut size = 0usize;
        while let Some(p) = stack.pop() {
            size += 1;
            for n in neighbors6(dims, p) {
                if mask.bits[n] && labels[n] == 0 {
                    labels[n] = label;
                    stack.push(n);
                }
            }
        }
        sizes.push(size);
    }
    Components { labels, sizes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> bool) -> Mask {
        let mut bits = Vec::new();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    bits.push(f(i, j, k));
                }
            }
        }
        Mask::from_bits(dims, bits)
    }

    #[test]
    fn diagonal_voxels_are_separate_components() {
        let m = mask_from([4, 4, 4], |i, j, k| (i, j, k) == (0, 0, 0) || (i, j, k) == (1, 1, 0));
        let c = label_components(&m);
        assert_eq!(c.len(), 2);
        let m = mask_from([4, 4, 4], |i, j, _| i == 1 && j < 3);
        assert_eq!(label_components(&m).sizes, vec![12]);
    }

    #[test]
    fn components_sorted_by_size() {
        let m = mask_from([10, 3, 1], |i, _, _| i < 2 || i > 4);
        let c = label_components(&m);
        assert_eq!(c.sizes, vec![6, 15]);
        assert_eq!(c.by_size(), vec![1, 0]);
        assert_eq!(c.mask_of([10, 3, 1], 1).count(), 15);
    }

    #[test]
    fn axial_hole_fill_closes_rings_only_within_slice() {
        // ring in every slice, open on slice 2
        let mut m = mask_from([7, 7, 3], |i, j, k| {
            let ring = (1..=5).contains(&i) && (1..=5).contains(&j) && !((2..=4).contains(&i) && (2..=4).contains(&j));
            ring && !(k == 2 && i == 3 && j == 1)
        });
        m.fill_holes_axial();
        let idx = |i: usize, j: usize, k: usize| i + 7 * (j + 7 * k);
        assert!(m.get(idx(3, 3, 0)));
        assert!(m.get(idx(3, 3, 1)));
        assert!(!m.get(idx(3, 3, 2)));
        assert!(!m.get(idx(0, 0, 0)));
    }

    #[test]
    fn erosion_and_bbox() {
        let m = mask_from([6, 6, 6], |i, j, k| (1..5).contains(&i) && (1..5).contains(&j) && (1..5).contains(&k));
        let e = m.eroded();
        assert_eq!(e.count(), 8);
        let bb = m.bounding_box().unwrap();
        assert_eq!(bb.min, [1, 1, 1]);
        assert_eq!(bb.max, [4, 4, 4]);
        assert_eq!(m.centroid().unwrap(), [2.5, 2.5, 2.5]);
    }
}
