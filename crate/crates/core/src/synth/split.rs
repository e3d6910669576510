//! Stratified train / validation / test partition with a nested test-mini
//! subset.
//!
//! Per-class counts are rounded so that every class stays within one study
//! of its exact share *and* every split total stays within one study of its
//! exact share. Plain per-class largest remainder only guarantees the first;
//! here the per-class fractional parts are handed out by a small max-flow
//! over (class, split) cells, seeded greedily by largest remainder.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub test_mini: Vec<String>,
}

const EPS: f64 = 1e-9;

pub fn split(
    entries: &[(String, u32)],
    ratios: [f64; 3],
    mini_fraction: f64,
    seed: u64,
) -> Result<Splits> {
    let n = entries.len();
    if n < 20 {
        return Err(Error::contract(format!("split needs at least 20 studies, got {n}")));
    }
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    if !(0.0..=1.0).contains(&mini_fraction) {
        return Err(Error::contract(format!("test-mini fraction {mini_fraction}")));
    }
    let mut seen = BTreeSet::new();
    let mut classes: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for (id, c) in entries {
        if !seen.insert(id.as_str()) {
            return Err(Error::contract(format!("duplicate study id {id}")));
        }
        classes.entry(*c).or_default().push(id.clone());
    }
    if let Some((c, ids)) = classes.iter().find(|(_, ids)| ids.len() < 5) {
        return Err(Error::contract(format!("class {c} has {} studies, need at least 5", ids.len())));
    }
    for (c, ids) in classes.iter_mut() {
        Rng::new(derive_seed(seed, u64::from(*c))).shuffle(ids);
    }

    let sizes: Vec<usize> = classes.values().map(Vec::len).collect();
    let counts = controlled_rounding(&sizes, &ratios);

    let mut out = Splits::default();
    let mut test_by_class = Vec::with_capacity(classes.len());
    for (ids, row) in classes.values().zip(&counts) {
        let (tr, va) = (row[0], row[1]);
        out.train.extend_from_slice(&ids[..tr]);
        out.val.extend_from_slice(&ids[tr..tr + va]);
        out.test.extend_from_slice(&ids[tr + va..]);
        test_by_class.push(&ids[tr + va..]);
    }

    let mini = ((mini_fraction * n as f64) - EPS).ceil().max(0.0) as usize;
    let mini = mini.min(out.test.len());
    let test_sizes: Vec<f64> = test_by_class.iter().map(|t| t.len() as f64).collect();
    for (ids, k) in test_by_class.iter().zip(apportion(mini, &test_sizes)) {
        out.test_mini.extend_from_slice(&ids[..k]);
    }

    out.train.sort();
    out.val.sort();
    out.test.sort();
    out.test_mini.sort();
    Ok(out)
}

/// Largest-remainder apportionment of `total` by `weights`; ties go to the
/// lower index.
pub(crate) fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|q| (q + EPS).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Integer table with row sums `sizes`, column sums apportioned from
/// `ratios`, and every cell the floor or ceiling of `size · ratio`.
fn controlled_rounding(sizes: &[usize], ratios: &[f64; 3]) -> Vec<[usize; 3]> {
    let total: usize = sizes.iter().sum();
    let col_target = apportion(total, ratios);
    let rows = sizes.len();

    let mut cells = vec![[0usize; 3]; rows];
    let mut frac = vec![[0f64; 3]; rows];
    for (r, &n) in sizes.iter().enumerate() {
        for s in 0..3 {
            let q = n as f64 * ratios[s];
            let f = (q + EPS).floor();
            cells[r][s] = f as usize;
            frac[r][s] = if q - f > EPS { q - f } else { 0.0 };
        }
    }
    let mut row_need: Vec<usize> = (0..rows)
        .map(|r| sizes[r] - cells[r].iter().sum::<usize>())
        .collect();
    let mut col_need: [usize; 3] = [0; 3];
    for s in 0..3 {
        let have: usize = cells.iter().map(|c| c[s]).sum();
        col_need[s] = col_target[s] - have;
    }

    // Greedy pass by descending remainder.
    let mut bumped = vec![[false; 3]; rows];
    let mut order: Vec<(usize, usize)> = (0..rows)
        .flat_map(|r| (0..3).map(move |s| (r, s)))
        .filter(|&(r, s)| frac[r][s] > 0.0)
        .collect();
    order.sort_by(|a, b| {
        frac[b.0][b.1]
            .partial_cmp(&frac[a.0][a.1])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });
    for &(r, s) in &order {
        if row_need[r] > 0 && col_need[s] > 0 {
            bumped[r][s] = true;
            row_need[r] -= 1;
            col_need[s] -= 1;
        }
    }

    // Augmenting paths for whatever the greedy pass left over. A path runs
    // row → (unbumped eligible cell) → column → (bumped cell) → row … and
    // ends at a column that still needs a unit.
    while let Some(start) = row_need.iter().position(|&k| k > 0) {
        let mut prev_col: Vec<Option<usize>> = vec![None; rows];
        let mut prev_row: [Option<usize>; 3] = [None; 3];
        let mut visited_row = vec![false; rows];
        let mut visited_col = [false; 3];
        let mut queue = VecDeque::from([start]);
        visited_row[start] = true;
        let mut end = None;
        'search: while let Some(r) = queue.pop_front() {
            for s in 0..3 {
                if visited_col[s] || frac[r][s] == 0.0 || bumped[r][s] {
                    continue;
                }
                visited_col[s] = true;
                prev_row[s] = Some(r);
                if col_need[s] > 0 {
                    end = Some(s);
                    break 'search;
                }
                for r2 in 0..rows {
                    if !visited_row[r2] && bumped[r2][s] {
                        visited_row[r2] = true;
                        prev_col[r2] = Some(s);
                        queue.push_back(r2);
                    }
                }
            }
        }
        let Some(mut s) = end else {
            // Cannot happen for consistent targets; keep the row totals exact.
            let s = (0..3).max_by_key(|&s| col_need[s]).unwrap_or(0);
            cells[start][s] += 1;
            row_need[start] -= 1;
            col_need[s] = col_need[s].saturating_sub(1);
            continue;
        };
        col_need[s] -= 1;
        loop {
            let r = prev_row[s].expect("path");
            bumped[r][s] = true;
            match prev_col[r] {
                Some(s2) => {
                    bumped[r][s2] = false;
                    s = s2;
                }
                None => {
                    row_need[r] -= 1;
                    break;
                }
            }
        }
    }

    for r in 0..rows {
        for s in 0..3 {
            if bumped[r][s] {
                cells[r][s] += 1;
            }
        }
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize, class_of: impl Fn(usize) -> u32) -> Vec<(String, u32)> {
        (0..n).map(|i| (format!("s{i:04}"), class_of(i))).collect()
    }

    const R: [f64; 3] = [0.7, 0.1, 0.2];

    #[test]
    fn hundred_single_class() {
        let s = split(&ids(100, |_| 0), R, 0.05, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
        assert_eq!(s.test_mini.len(), 5);
        assert!(s.test_mini.iter().all(|id| s.test.contains(id)));
    }

    #[test]
    fn two_even_classes_split_exactly() {
        let e = ids(100, |i| (i % 2) as u32);
        let s = split(&e, R, 0.05, 3).unwrap();
        let count = |v: &[String], c: u32| v.iter().filter(|id| e.iter().any(|(x, k)| x == *id && *k == c)).count();
        for c in 0..2 {
            assert_eq!(count(&s.train, c), 35);
            assert_eq!(count(&s.val, c), 5);
            assert_eq!(count(&s.test, c), 10);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let e = ids(57, |i| (i % 3) as u32);
        assert_eq!(split(&e, R, 0.05, 9).unwrap(), split(&e, R, 0.05, 9).unwrap());
        assert_ne!(split(&e, R, 0.05, 9).unwrap().train, split(&e, R, 0.05, 10).unwrap().train);
    }

    #[test]
    fn contract_errors() {
        assert!(split(&ids(19, |_| 0), R, 0.05, 0).is_err());
        assert!(split(&ids(40, |_| 0), [0.7, 0.1, 0.1], 0.05, 0).is_err());
        assert!(split(&ids(40, |i| if i < 4 { 1 } else { 0 }), R, 0.05, 0).is_err());
    }

    #[test]
    fn apportion_examples() {
        assert_eq!(apportion(10, &[1.0, 1.0, 2.0]), vec![3, 2, 5]);
        assert_eq!(apportion(5, &[20.0]), vec![5]);
    }

    proptest! {
        #[test]
        fn partition_and_proportionality(
            sizes in prop::collection::vec(5usize..40, 1..6),
            seed in 0u64..1000,
        ) {
            let mut e = Vec::new();
            for (c, &k) in sizes.iter().enumerate() {
                for j in 0..k {
                    e.push((format!("c{c}_{j}"), c as u32));
                }
            }
            let total = e.len();
            prop_assume!(total >= 20);
            let s = split(&e, R, 0.05, seed).unwrap();

            let mut all: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
            all.sort();
            let mut want: Vec<String> = e.iter().map(|(id, _)| id.clone()).collect();
            want.sort();
            prop_assert_eq!(all, want);

            let n = total as f64;
            for (list, r) in [(&s.train, 0.7), (&s.val, 0.1), (&s.test, 0.2)] {
                let frac = list.len() as f64 / n;
                prop_assert!((frac - r).abs() <= 1.0 / n + 1e-12, "{} vs {}", frac, r);
            }
            for (c, &k) in sizes.iter().enumerate() {
                let prefix = format!("c{c}_");
                for (list, r) in [(&s.train, 0.7), (&s.val, 0.1), (&s.test, 0.2)] {
                    let got = list.iter().filter(|id| id.starts_with(&prefix)).count() as f64;
                    prop_assert!((got - k as f64 * r).abs() <= 1.0 + 1e-9);
                }
            }
            prop_assert_eq!(s.test_mini.len(), ((0.05 * n) - 1e-9).ceil() as usize);
            prop_assert!(s.test_mini.iter().all(|id| s.test.contains(id)));
        }
    }
}
