//! Stratified subject-level train/validation/test split.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::derive_seed;
use crate::{Error, Result};

pub const SPLIT_FRACTIONS: [f64; 3] = [0.7, 0.1, 0.2];
pub const MIN_SPLIT_SUBJECTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn folds(&self) -> [&[String]; 3] {
        [&self.train, &self.val, &self.test]
    }
}

/// Fold sizes by largest-remainder rounding of the split fractions.
pub fn fold_sizes(n: usize) -> [usize; 3] {
    let exact = SPLIT_FRACTIONS.map(|f| f * n as f64);
    let mut sizes = exact.map(|x| x.floor() as usize);
    let mut rest = n - sizes.iter().sum::<usize>();
    let mut by_remainder = [0, 1, 2];
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for f in by_remainder {
        if rest == 0 {
            break;
        }
        sizes[f] += 1;
        rest -= 1;
    }
    sizes
}

/// Splits subjects 70/10/20. `subjects` pairs each subject id with a stratum
/// (e.g. its outcome class); duplicates of an id are collapsed, so all scans
/// of a subject land in one fold.
pub fn split_subjects(subjects: &[(String, u8)], seed: u64) -> Result<Split> {
    let mut strata: BTreeMap<u8, Vec<String>> = BTreeMap::new();
    let mut seen = BTreeMap::new();
    for (id, s) in subjects {
        if let Some(prev) = seen.insert(id.clone(), *s) {
            if prev != *s {
                return Err(Error::InvalidArgument(format!("subject {id} has two strata")));
            }
            continue;
        }
        strata.entry(*s).or_default().push(id.clone());
    }
    let n = seen.len();
    if n < MIN_SPLIT_SUBJECTS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SPLIT_SUBJECTS} subjects to split, got {n}"
        )));
    }
    let mut ordered = Vec::with_capacity(n);
    for (stratum, mut ids) in strata {
        ids.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5_9117, stratum as u64));
        ids.shuffle(&mut rng);
        ordered.extend(ids);
    }

    // Deal subjects in order to the fold furthest behind its quota, which
    // spreads every stratum proportionally across the folds.
    let quota = fold_sizes(n);
    let mut folds: [Vec<String>; 3] = Default::default();
    for (t, id) in ordered.into_iter().enumerate() {
        let progress = (t + 1) as f64 / n as f64;
        let f = (0..3)
            .filter(|&f| folds[f].len() < quota[f])
            .max_by(|&a, &b| {
                let da = quota[a] as f64 * progress - folds[a].len() as f64;
                let db = quota[b] as f64 * progress - folds[b].len() as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("quotas sum to n");
        folds[f].push(id);
    }
    let [train, val, test] = folds;
    Ok(Split { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cohort(n: usize) -> Vec<(String, u8)> {
        (0..n).map(|i| (format!("s{i:03}"), (i % 5 == 0) as u8)).collect()
    }

    #[test]
    fn sizes() {
        assert_eq!(fold_sizes(100), [70, 10, 20]);
        assert_eq!(fold_sizes(11), [8, 1, 2]);
        assert_eq!(fold_sizes(2000), [1400, 200, 400]);
    }

    #[test]
    fn split_is_a_stratified_partition() {
        let c = cohort(100);
        let s = split_subjects(&c, 4).unwrap();
        assert_eq!([s.train.len(), s.val.len(), s.test.len()], [70, 10, 20]);
        let mut all: Vec<_> = s.folds().iter().flat_map(|f| f.iter().cloned()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);
        for fold in s.folds() {
            let pos = fold.iter().filter(|id| c.iter().any(|(i, l)| i == *id && *l == 1)).count();
            assert!(pos > 0 && pos < fold.len());
        }
        assert_eq!(s, split_subjects(&c, 4).unwrap());
    }

    #[test]
    fn repeated_subjects_stay_together() {
        let mut c = cohort(20);
        c.push(("s003".into(), 0));
        c.push(("s003".into(), 0));
        let s = split_subjects(&c, 1).unwrap();
        let hits = s.folds().iter().filter(|f| f.contains(&"s003".to_string())).count();
        assert_eq!(hits, 1);
        assert!(split_subjects(&cohort(9), 1).is_err());
    }
}
