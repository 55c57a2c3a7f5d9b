//! Symbol detection: exhaustive weighted ML and the constant-time
//! projection detector for linear-map constellations.
//!
//! The fast detector projects the received vector onto the mapping plane and
//! finds the nearest lattice point there. Naive per-axis rounding of the
//! projection is not always the nearest lattice point because the in-plane
//! metric couples the two axes, and the coupling gets severe when the optical
//! SNR dominates. The detector therefore Lagrange-reduces the 2D lattice
//! basis once at construction; rounding in reduced coordinates plus a 3x3
//! candidate check is then an exact nearest-point search, still a constant
//! number of operations per sample. When the winner falls outside the finite
//! grid it falls back to the exhaustive search, which vanishes at operating
//! SNRs.

use crate::channel::{Frame, MetricWeights, Received};
use crate::constellation::{Constellation3D, Kind, LinearMap, QamGrid};

/// Decision: winning symbol index and its weighted squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub index: usize,
    pub metric: f64,
}

/// Weighted projection of a received plane-frame vector onto the mapping
/// plane, in RF coordinates.
#[derive(Debug, Clone, Copy)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

/// Solve the weighted least-squares projection of `r` (plane frame) onto the
/// plane `t = a1 x + a2 y`.
pub fn project_to_plane(r: &Received, map: &LinearMap, w: &MetricWeights) -> PlanePoint {
    assert_eq!(r.frame, Frame::Plane, "projection expects a plane-frame vector");
    let [u, v, t] = r.v;
    let (a1, a2) = (map.a1, map.a2);
    let s = (a1 * u + a2 * v - t) / (1.0 + w.w_o * (a1 * a1 / w.w_i + a2 * a2 / w.w_q));
    PlanePoint {
        x: u - (w.w_o * a1 / w.w_i) * s,
        y: v - (w.w_o * a2 / w.w_q) * s,
    }
}

/// Exhaustive maximum-likelihood detector under the weighted metric.
/// Ties break to the lowest symbol index.
#[derive(Debug, Clone)]
pub struct MlDetector {
    points: Vec<[f64; 3]>,
    w: MetricWeights,
}

impl MlDetector {
    /// Detector for `c` at the given SNRs. Linear constellations are detected
    /// in the plane frame, everything else on the intensity axis.
    pub fn new(c: &Constellation3D, snr: crate::channel::LinkSnr) -> Self {
        let w = MetricWeights::for_constellation(c, snr);
        let points = match c.map() {
            Some(map) if c.kind() == Kind::Linear => c
                .points()
                .iter()
                .map(|p| [p[0], p[1], map.to_plane(p[2])])
                .collect(),
            _ => c.points().to_vec(),
        };
        Self { points, w }
    }

    pub fn weights(&self) -> &MetricWeights {
        &self.w
    }

    pub fn expected_frame(&self) -> Frame {
        self.w.frame
    }

    fn metric(&self, r: &[f64; 3], p: &[f64; 3]) -> f64 {
        let di = r[0] - p[0];
        let dq = r[1] - p[1];
        let do_ = r[2] - p[2];
        self.w.w_i * di * di + self.w.w_q * dq * dq + self.w.w_o * do_ * do_
    }

    pub fn detect(&self, r: &Received) -> Detection {
        assert_eq!(r.frame, self.w.frame, "received frame does not match detector");
        let mut best = Detection { index: 0, metric: f64::INFINITY };
        for (i, p) in self.points.iter().enumerate() {
            let d = self.metric(&r.v, p);
            if d < best.metric {
                best = Detection { index: i, metric: d };
            }
        }
        best
    }
}

/// Constant-time nearest-lattice-point detector for linear-map
/// constellations, exact with respect to [`MlDetector`].
#[derive(Debug, Clone)]
pub struct FastDetector {
    map: LinearMap,
    w: MetricWeights,
    side: i64,
    delta: f64,
    /// In-plane Gram matrix of the index-unit lattice basis.
    gram: [[f64; 2]; 2],
    /// Lagrange-reduced basis columns, in integer index coordinates.
    u: [[i64; 2]; 2],
    /// Inverse of `u` (unimodular, so integer).
    u_inv: [[i64; 2]; 2],
    fallback: MlDetector,
}

impl FastDetector {
    pub fn new(grid: &QamGrid, map: LinearMap, snr: crate::channel::LinkSnr) -> Self {
        let c = Constellation3D::linear(grid, map);
        let fallback = MlDetector::new(&c, snr);
        let w = *fallback.weights();
        let d2 = grid.delta() * grid.delta();
        let (a1, a2) = (map.a1, map.a2);
        let gram = [
            [d2 * (w.w_i + w.w_o * a1 * a1), d2 * w.w_o * a1 * a2],
            [d2 * w.w_o * a1 * a2, d2 * (w.w_q + w.w_o * a2 * a2)],
        ];
        let (u, u_inv) = lagrange_reduce(&gram);
        Self {
            map,
            w,
            side: grid.side() as i64,
            delta: grid.delta(),
            gram,
            u,
            u_inv,
            fallback,
        }
    }

    fn gram_norm(&self, e: [f64; 2]) -> f64 {
        let g = &self.gram;
        g[0][0] * e[0] * e[0] + 2.0 * g[0][1] * e[0] * e[1] + g[1][1] * e[1] * e[1]
    }

    pub fn detect(&self, r: &Received) -> Detection {
        assert_eq!(r.frame, Frame::Plane, "fast detector expects plane frame");
        let p = project_to_plane(r, &self.map, &self.w);
        // Continuous lattice coordinates: level k sits at (k - (side-1)/2) * delta.
        let off = (self.side - 1) as f64 / 2.0;
        let xi = p.x / self.delta + off;
        let yq = p.y / self.delta + off;
        // Coordinates in the reduced basis.
        let c0 = self.u_inv[0][0] as f64 * xi + self.u_inv[0][1] as f64 * yq;
        let c1 = self.u_inv[1][0] as f64 * xi + self.u_inv[1][1] as f64 * yq;
        let (r0, r1) = (c0.round(), c1.round());
        // Two selections run over the 3x3 candidate block: the in-plane Gram
        // distance decides whether the infinite-lattice winner escapes the
        // finite grid, while in-grid candidates are scored with the exact
        // same full 3D metric (and lowest-index tie rule) the exhaustive
        // detector uses, so the two detectors agree bit-for-bit even on
        // floating-point knife-edge ties.
        let mut best_in_gram = f64::INFINITY;
        let mut best_out_gram = f64::INFINITY;
        let mut best_full: Option<Detection> = None;
        for di in -1..=1i64 {
            for dj in -1..=1i64 {
                let m0 = r0 + di as f64;
                let m1 = r1 + dj as f64;
                let ki = (self.u[0][0] as f64 * m0 + self.u[0][1] as f64 * m1).round() as i64;
                let kq = (self.u[1][0] as f64 * m0 + self.u[1][1] as f64 * m1).round() as i64;
                let d = self.gram_norm([ki as f64 - xi, kq as f64 - yq]);
                if (0..self.side).contains(&ki) && (0..self.side).contains(&kq) {
                    best_in_gram = best_in_gram.min(d);
                    let index = (ki * self.side + kq) as usize;
                    let metric = self.fallback.metric(&r.v, &self.fallback.points[index]);
                    let better = match &best_full {
                        None => true,
                        Some(b) => metric < b.metric || (metric == b.metric && index < b.index),
                    };
                    if better {
                        best_full = Some(Detection { index, metric });
                    }
                } else {
                    best_out_gram = best_out_gram.min(d);
                }
            }
        }
        match best_full {
            // The finite-grid optimum of a point whose lattice winner lies
            // outside the grid need not be the clamp of that winner under
            // the coupled metric, so resolve those exactly.
            Some(d) if best_in_gram < best_out_gram => d,
            _ => self.fallback.detect(r),
        }
    }
}

/// Lagrange (Gauss) reduction of a 2D lattice basis given by its Gram matrix.
/// Returns the unimodular transform `u` whose columns express the reduced
/// basis in the original integer coordinates, plus its inverse.
fn lagrange_reduce(gram: &[[f64; 2]; 2]) -> ([[i64; 2]; 2], [[i64; 2]; 2]) {
    let mut b1 = [1i64, 0i64];
    let mut b2 = [0i64, 1i64];
    let ip = |a: &[i64; 2], b: &[i64; 2]| -> f64 {
        let (a0, a1) = (a[0] as f64, a[1] as f64);
        let (b0, b1v) = (b[0] as f64, b[1] as f64);
        gram[0][0] * a0 * b0 + gram[0][1] * (a0 * b1v + a1 * b0) + gram[1][1] * a1 * b1v
    };
    for _ in 0..64 {
        if ip(&b1, &b1) > ip(&b2, &b2) {
            std::mem::swap(&mut b1, &mut b2);
        }
        let mu = (ip(&b1, &b2) / ip(&b1, &b1)).round() as i64;
        b2 = [b2[0] - mu * b1[0], b2[1] - mu * b1[1]];
        if ip(&b2, &b2) >= ip(&b1, &b1) {
            break;
        }
    }
    let u = [[b1[0], b2[0]], [b1[1], b2[1]]];
    let det = u[0][0] * u[1][1] - u[0][1] * u[1][0];
    debug_assert!(det.abs() == 1, "reduction must stay unimodular");
    // Inverse of a 2x2 integer matrix with det +-1.
    let u_inv = [
        [det * u[1][1], -det * u[0][1]],
        [-det * u[1][0], det * u[0][0]],
    ];
    (u, u_inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{LinkSnr, Received, RngStream};
    use crate::constellation::{Constellation3D, LinearMap, QamGrid};

    fn setup(theta: f64, g1_db: f64, g2_db: f64) -> (QamGrid, LinearMap, LinkSnr) {
        let grid = QamGrid::new(16).unwrap();
        let map = LinearMap::new(&grid, theta).unwrap();
        let snr = LinkSnr::from_db(g1_db, g2_db).unwrap();
        (grid, map, snr)
    }

    fn plane(v: [f64; 3]) -> Received {
        Received { v, frame: Frame::Plane }
    }

    #[test]
    fn ml_exact_point_zero_metric() {
        let (grid, map, snr) = setup(std::f64::consts::FRAC_PI_4, 10.0, 10.0);
        let c = Constellation3D::linear(&grid, map);
        let det = MlDetector::new(&c, snr);
        for (k, p) in c.points().iter().enumerate() {
            let r = plane([p[0], p[1], map.to_plane(p[2])]);
            let d = det.detect(&r);
            assert_eq!(d.index, k);
            assert!(d.metric < 1e-20);
        }
    }

    #[test]
    fn ml_tie_breaks_to_lowest_index() {
        // Two-point constellation, received at the midpoint.
        let g = QamGrid::new(4).unwrap();
        let c = Constellation3D::learned(&g, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        let snr = LinkSnr::new(1.0, 1.0).unwrap();
        let det = MlDetector::new(&c, snr);
        let r = Received { v: [0.0, 0.0, 1.0], frame: Frame::Intensity };
        // All four RF points are symmetric around the origin: exact tie.
        assert_eq!(det.detect(&r).index, 0);
    }

    // Independently coded brute-force argmin used as the dual-implementation
    // oracle for detect_ml.
    fn brute_force(points: &[[f64; 3]], r: &[f64; 3], w: &MetricWeights) -> usize {
        let mut best = (0usize, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = w.w_i * (r[0] - p[0]).powi(2)
                + w.w_q * (r[1] - p[1]).powi(2)
                + w.w_o * (r[2] - p[2]).powi(2);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    #[test]
    fn ml_matches_independent_brute_force() {
        let (grid, map, snr) = setup(0.9, 8.0, 12.0);
        let c = Constellation3D::linear(&grid, map);
        let det = MlDetector::new(&c, snr);
        let plane_pts: Vec<[f64; 3]> = c
            .points()
            .iter()
            .map(|p| [p[0], p[1], map.to_plane(p[2])])
            .collect();
        let mut rng = RngStream::new(11, 0);
        for _ in 0..100_000 {
            let r = [
                3.0 * rng.standard_normal(),
                3.0 * rng.standard_normal(),
                3.0 * rng.standard_normal(),
            ];
            let got = det.detect(&plane(r)).index;
            let want = brute_force(&plane_pts, &r, det.weights());
            assert_eq!(got, want);
        }
    }

    #[test]
    fn projection_identity_on_plane() {
        let (_, map, snr) = setup(0.6, 10.0, 10.0);
        let grid = QamGrid::new(16).unwrap();
        let c = Constellation3D::linear(&grid, map);
        let w = MetricWeights::for_constellation(&c, snr);
        let (u, v) = (0.37, -0.81);
        let t = map.a1 * u + map.a2 * v;
        let p = project_to_plane(&plane([u, v, t]), &map, &w);
        assert!((p.x - u).abs() < 1e-12);
        assert!((p.y - v).abs() < 1e-12);
    }

    #[test]
    fn projection_ignores_useless_optical_link() {
        let (_, map, _) = setup(0.6, 10.0, 10.0);
        let w = MetricWeights { w_i: 10.0, w_q: 10.0, w_o: 1e-15, frame: Frame::Plane };
        let p = project_to_plane(&plane([0.5, -0.2, 9.0]), &map, &w);
        assert!((p.x - 0.5).abs() < 1e-12);
        assert!((p.y + 0.2).abs() < 1e-12);
    }

    #[test]
    fn projection_is_local_minimum() {
        let (_, map, snr) = setup(0.8, 10.0, 15.0);
        let grid = QamGrid::new(16).unwrap();
        let c = Constellation3D::linear(&grid, map);
        let w = MetricWeights::for_constellation(&c, snr);
        let dist = |x: f64, y: f64, r: &[f64; 3]| -> f64 {
            let t = map.a1 * x + map.a2 * y;
            w.w_i * (r[0] - x).powi(2) + w.w_q * (r[1] - y).powi(2) + w.w_o * (r[2] - t).powi(2)
        };
        let mut rng = RngStream::new(12, 0);
        for _ in 0..200 {
            let r = [
                rng.standard_normal(),
                rng.standard_normal(),
                rng.standard_normal(),
            ];
            let p = project_to_plane(&plane(r), &map, &w);
            let d0 = dist(p.x, p.y, &r);
            let eps = 1e-4;
            assert!(d0 <= dist(p.x + eps, p.y, &r));
            assert!(d0 <= dist(p.x - eps, p.y, &r));
            assert!(d0 <= dist(p.x, p.y + eps, &r));
            assert!(d0 <= dist(p.x, p.y - eps, &r));
        }
    }

    #[test]
    fn fast_noiseless_recovery() {
        let (grid, map, snr) = setup(std::f64::consts::FRAC_PI_4, 10.0, 10.0);
        let c = Constellation3D::linear(&grid, map);
        let fast = FastDetector::new(&grid, map, snr);
        for (k, p) in c.points().iter().enumerate() {
            let r = plane([p[0], p[1], map.to_plane(p[2])]);
            assert_eq!(fast.detect(&r).index, k);
        }
    }

    #[test]
    fn fast_equals_ml_on_noisy_samples() {
        for (g1, g2) in [(10.0, 10.0), (0.0, 20.0), (20.0, 0.0), (5.0, 15.0)] {
            let (grid, map, snr) = setup(0.5832, g1, g2);
            let c = Constellation3D::linear(&grid, map);
            let ml = MlDetector::new(&c, snr);
            let fast = FastDetector::new(&grid, map, snr);
            let mut rng = RngStream::new(13, 0);
            for n in 0..100_000 {
                let k = rng.uniform_index(16);
                let r = crate::channel::transmit(&c, k, snr, &mut rng)
                    .unwrap()
                    .to_plane(&map);
                let a = ml.detect(&r).index;
                let b = fast.detect(&r).index;
                assert_eq!(a, b, "mismatch at sample {n}, snr ({g1},{g2})");
            }
        }
    }

    #[test]
    fn fast_equals_ml_near_boundaries() {
        let (grid, map, snr) = setup(std::f64::consts::FRAC_PI_4, 10.0, 10.0);
        let c = Constellation3D::linear(&grid, map);
        let ml = MlDetector::new(&c, snr);
        let fast = FastDetector::new(&grid, map, snr);
        let d = grid.delta();
        // Points at and just off the level boundaries, including exact
        // midpoints (the floating-point tie set).
        for bx in [-d, 0.0, d] {
            for by in [-d, 0.0, d] {
                for (ex, ey) in [(0.0, 0.0), (1e-9, 0.0), (-1e-9, 0.0), (0.0, 1e-9), (0.0, -1e-9), (0.49 * d, 0.0)] {
                    let x = bx + ex;
                    let y = by + ey;
                    let t = map.a1 * x + map.a2 * y + 0.3;
                    let r = plane([x, y, t]);
                    assert_eq!(ml.detect(&r).index, fast.detect(&r).index, "at ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn decisions_invariant_to_weight_scaling() {
        let (grid, map, snr) = setup(0.7, 10.0, 10.0);
        let c = Constellation3D::linear(&grid, map);
        let base = MlDetector::new(&c, snr);
        let mut scaled = base.clone();
        scaled.w.w_i *= 37.0;
        scaled.w.w_q *= 37.0;
        scaled.w.w_o *= 37.0;
        let mut rng = RngStream::new(14, 0);
        for _ in 0..10_000 {
            let r = plane([
                2.0 * rng.standard_normal(),
                2.0 * rng.standard_normal(),
                2.0 * rng.standard_normal(),
            ]);
            assert_eq!(base.detect(&r).index, scaled.detect(&r).index);
        }
    }

    #[test]
    fn voronoi_coverage_is_total() {
        // Every point in a bounding box is assigned exactly one index,
        // deterministically.
        let (grid, map, snr) = setup(0.9, 12.0, 8.0);
        let c = Constellation3D::linear(&grid, map);
        let ml = MlDetector::new(&c, snr);
        let mut rng = RngStream::new(15, 0);
        for _ in 0..100_000 {
            let r = plane([
                4.0 * (rng.uniform() - 0.5),
                4.0 * (rng.uniform() - 0.5),
                8.0 * (rng.uniform() - 0.5),
            ]);
            let a = ml.detect(&r);
            let b = ml.detect(&r);
            assert!(a.index < 16);
            assert_eq!(a.index, b.index);
        }
    }

    #[test]
    #[should_panic(expected = "frame")]
    fn frame_mismatch_rejected() {
        let (grid, map, snr) = setup(0.7, 10.0, 10.0);
        let c = Constellation3D::linear(&grid, map);
        let ml = MlDetector::new(&c, snr);
        let r = Received { v: [0.0, 0.0, 0.0], frame: Frame::Intensity };
        ml.detect(&r);
    }
}
