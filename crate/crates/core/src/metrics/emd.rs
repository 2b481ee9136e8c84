//! Earth Mover's Distance between equal-size point sets.
//!
//! Exact mode solves the linear assignment problem with the shortest
//! augmenting path (Hungarian) method in O(n³). Approximate mode runs a
//! Gauss-Seidel auction with ε-scaling: ε starts at `max_cost / 8` and is
//! divided by 4 after every phase until it drops below `1e-6 · max_cost`.
//! The final assignment is always a perfect matching whose mean cost is at
//! most the optimum plus the final ε.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub const EXACT_EMD_CAP: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmdMode {
    ExactAssignment,
    Approximate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmdResult {
    /// Mean matched Euclidean distance (meters).
    pub value: f64,
    pub method: EmdMode,
    /// ε of the last auction phase; zero for the exact solver.
    pub final_epsilon: f64,
    /// `assignment[i]` is the index in `b` matched to `a[i]`.
    pub assignment: Vec<usize>,
}

pub fn emd(a: &PointCloud, b: &PointCloud, mode: EmdMode) -> Result<EmdResult> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    a.require_non_empty()?;
    let n = a.len();
    let cost: Vec<f64> = a
        .points()
        .iter()
        .flat_map(|p| b.points().iter().map(move |q| (p - q).norm()))
        .collect();

    let (assignment, final_epsilon) = match mode {
        EmdMode::ExactAssignment => {
            if n > EXACT_EMD_CAP {
                return Err(Error::ExactEmdTooLarge { n, cap: EXACT_EMD_CAP });
            }
            (hungarian(&cost, n), 0.0)
        }
        EmdMode::Approximate => auction(&cost, n),
    };
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(EmdResult {
        value: total / n as f64,
        method: mode,
        final_epsilon,
        assignment,
    })
}

/// Minimum-cost perfect matching on a row-major `n × n` matrix.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based potentials formulation; column 0 is a virtual sink.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[(r - 1) * n + (col - 1)] - u[r] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=n {
        assignment[owner[col] - 1] = col - 1;
    }
    assignment
}

/// ε-scaling auction; returns the assignment and the last phase's ε.
pub fn auction(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    if n == 1 || max_cost == 0.0 {
        return ((0..n).collect(), 0.0);
    }
    let stop = 1e-6 * max_cost;
    let mut eps = max_cost / 8.0;
    let mut prices = vec![0.0; n];
    let mut owner_of: Vec<Option<usize>> = vec![None; n];
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    loop {
        owner_of.iter_mut().for_each(|o| *o = None);
        assigned.iter_mut().for_each(|a| *a = None);
        let mut queue: VecDeque<usize> = (0..n).collect();
        while let Some(i) = queue.pop_front() {
            let row = &cost[i * n..(i + 1) * n];
            let (mut best_j, mut best, mut second) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (j, &c) in row.iter().enumerate() {
                let value = -c - prices[j];
                if value > best {
                    second = best;
                    best = value;
                    best_j = j;
                } else if value > second {
                    second = value;
                }
            }
            let increment = if second.is_finite() { best - second } else { 0.0 };
            prices[best_j] += increment + eps;
            if let Some(prev) = owner_of[best_j].replace(i) {
                assigned[prev] = None;
                queue.push_back(prev);
            }
            assigned[i] = Some(best_j);
        }
        if eps < stop {
            break;
        }
        eps /= 4.0;
    }
    (
        assigned
            .into_iter()
            .map(|j| j.expect("auction assigns everyone"))
            .collect(),
        eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use rand::{Rng, SeedableRng};

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        pts.iter().map(|&p| Vec3::from(p)).collect()
    }

    /// Brute force over all permutations (n ≤ 7).
    fn permutation_oracle(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(cost, n, row + 1, used, acc + cost[row * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
        best
    }

    #[test]
    fn hand_computed() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(emd(&a, &b, EmdMode::ExactAssignment).unwrap().value, 1.0);
        let a = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let r = emd(&a, &b, EmdMode::ExactAssignment).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.assignment, vec![0, 1]);
        assert_eq!(emd(&a, &b, EmdMode::Approximate).unwrap().value, 1.0);
    }

    #[test]
    fn identical_clouds_are_zero() {
        let a = cloud(&[[0.0, 1.0, 0.0], [2.0, 0.0, 0.0], [5.0, 5.0, 5.0]]);
        for mode in [EmdMode::ExactAssignment, EmdMode::Approximate] {
            assert!(emd(&a, &a, mode).unwrap().value.abs() < 1e-12);
        }
    }

    #[test]
    fn size_errors() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert!(matches!(
            emd(&a, &b, EmdMode::Approximate),
            Err(Error::SizeMismatch { .. })
        ));
        let big: PointCloud = (0..1025).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            emd(&big, &big, EmdMode::ExactAssignment),
            Err(Error::ExactEmdTooLarge { .. })
        ));
    }

    #[test]
    fn hungarian_matches_permutation_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for n in 1..=7 {
            for _ in 0..20 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
                let assignment = hungarian(&cost, n);
                let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
                assert!((total - permutation_oracle(&cost, n)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn auction_is_a_perfect_matching_near_optimum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for n in [2, 5, 17, 64] {
            let cost: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
            let (assignment, eps) = auction(&cost, n);
            let mut seen = vec![false; n];
            for &j in &assignment {
                assert!(!seen[j]);
                seen[j] = true;
            }
            let approx: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
            let exact: f64 = hungarian(&cost, n)
                .iter()
                .enumerate()
                .map(|(i, &j)| cost[i * n + j])
                .sum();
            assert!(approx >= exact - 1e-12);
            assert!(approx <= exact + n as f64 * eps + 1e-12);
        }
    }
}
