//! Mapping-angle optimization: maximize the minimum lattice distance of the
//! linear map over theta, and extract the two smallest distances the
//! symbol-error approximation needs.

use crate::channel::LinkSnr;
use crate::constellation::{ConstellationError, LinearMap, QamGrid};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinoptError {
    #[error("lattice pair (0, 0) is excluded from the search set")]
    ZeroPair,
    #[error(transparent)]
    Constellation(#[from] ConstellationError),
    #[error("theta grid needs at least 2 points, got {0}")]
    GridTooSmall(usize),
}

/// Axis index-difference pair and its weighted squared distance. The
/// opposite-sign convention of the search set is folded into the distance
/// formula, so `k1` and `k2` are non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticePair {
    pub k1: u32,
    pub k2: u32,
    pub dsq: f64,
}

/// Result of the max-min search.
#[derive(Debug, Clone, Copy)]
pub struct P1Solution {
    pub theta_star: f64,
    pub first: LatticePair,
    pub second: LatticePair,
    pub dmin: f64,
    pub dsecond: f64,
}

/// Weighted squared lattice distance of the index-difference pair `(k1, k2)`
/// at mapping angle `theta`.
pub fn lattice_dsq(
    k1: u32,
    k2: u32,
    theta: f64,
    grid: &QamGrid,
    snr: LinkSnr,
) -> Result<f64, LinoptError> {
    if k1 == 0 && k2 == 0 {
        return Err(LinoptError::ZeroPair);
    }
    let map = LinearMap::new(grid, theta)?;
    Ok(pair_dsq(k1, k2, grid, &map, snr))
}

fn pair_dsq(k1: u32, k2: u32, grid: &QamGrid, map: &LinearMap, snr: LinkSnr) -> f64 {
    let d = grid.delta();
    let rf = (k1 * k1 + k2 * k2) as f64 * d * d * snr.gamma1_sq;
    // Worst-case sign combination across the two RF axes: the plane offsets
    // subtract.
    let plane = std::f64::consts::SQRT_2 * d * (k1 as f64 * map.theta.cos() - k2 as f64 * map.theta.sin());
    rf + plane * plane * snr.gamma2_sq / (map.norm * map.norm)
}

/// All candidate pairs at a given angle, in (k1, k2) lexicographic order.
fn pairs_at(theta: f64, grid: &QamGrid, snr: LinkSnr) -> Vec<LatticePair> {
    let map = LinearMap::new(grid, theta).expect("theta inside [0, pi/2]");
    let side = grid.side() as u32;
    let mut out = Vec::with_capacity((side * side - 1) as usize);
    for k1 in 0..side {
        for k2 in 0..side {
            if k1 == 0 && k2 == 0 {
                continue;
            }
            out.push(LatticePair { k1, k2, dsq: pair_dsq(k1, k2, grid, &map, snr) });
        }
    }
    out
}

fn dmin_at(theta: f64, grid: &QamGrid, snr: LinkSnr) -> f64 {
    pairs_at(theta, grid, snr)
        .iter()
        .map(|p| p.dsq)
        .fold(f64::INFINITY, f64::min)
}

/// Max-min search over theta in [0, pi/2]: a uniform grid of `n_theta`
/// points, then golden-section refinement of the best bracket to 1e-8.
///
/// The objective is exactly symmetric about pi/4 (swapping theta with
/// pi/2 - theta swaps the roles of k1 and k2), so every off-diagonal optimum
/// comes as a mirror pair; the solution is canonicalized to the branch in
/// [0, pi/4] to keep the result independent of grid parity.
pub fn solve_p1(grid: &QamGrid, snr: LinkSnr, n_theta: usize) -> Result<P1Solution, LinoptError> {
    if n_theta < 2 {
        return Err(LinoptError::GridTooSmall(n_theta));
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    let step = half_pi / (n_theta - 1) as f64;
    // Data-parallel over the grid; the serial argmax afterwards makes the
    // pick independent of the worker count.
    let values: Vec<f64> = (0..n_theta)
        .into_par_iter()
        .map(|i| dmin_at(i as f64 * step, grid, snr))
        .collect();
    let best = values
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
        .0;
    let lo = if best == 0 { 0.0 } else { (best - 1) as f64 * step };
    let hi = if best + 1 >= n_theta { half_pi } else { (best + 1) as f64 * step };
    let mut theta_star = golden_max(|t| dmin_at(t, grid, snr), lo, hi, 1e-8);
    if theta_star > std::f64::consts::FRAC_PI_4 {
        theta_star = half_pi - theta_star;
    }

    let mut pairs = pairs_at(theta_star, grid, snr);
    pairs.sort_by(|a, b| a.dsq.total_cmp(&b.dsq));
    let dmin = pairs[0].dsq;
    // The max-min optimum typically sits where two pair distances cross, so
    // the leading distances are equal only up to refinement error; group
    // them with a relative tolerance and order the tied group by (k1, k2)
    // so the reported pairs do not depend on which side of the crossing the
    // refinement landed.
    let tol = 1e-6 * dmin.max(1e-300);
    let n_tied = pairs.iter().take_while(|p| p.dsq - dmin <= tol).count();
    pairs[..n_tied].sort_by_key(|p| (p.k1, p.k2));
    let first = pairs[0];
    let (second, dsecond) = if n_tied >= 2 {
        // Minimum attained by two index-inequivalent pairs: the second
        // distance equals the first.
        (pairs[1], dmin)
    } else {
        (pairs[1], pairs[1].dsq)
    };
    Ok(P1Solution { theta_star, first, second, dmin, dsecond })
}

/// Golden-section maximization of a unimodal-enough function on [lo, hi].
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}
