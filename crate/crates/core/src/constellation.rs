//! 3D constellation construction.
//!
//! Builds the unit-energy square QAM grid, the linear RF-to-optical mapping
//! with its DC bias, and the four constellation kinds handled by the
//! simulator: linear, learned, magnitude-based (MCBM) and cross-band PAM.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConstellationError {
    #[error("invalid constellation order {0}: must be a perfect square >= 4")]
    InvalidOrder(usize),
    #[error("invalid PAM order {0}: must be >= 2")]
    InvalidPamOrder(usize),
    #[error("mapping angle {0} outside [0, pi/2]")]
    ThetaOutOfRange(f64),
    #[error("learned intensities must be positive, got {0}")]
    NonPositiveIntensity(f64),
    #[error("expected {expected} intensities, got {got}")]
    IntensityCount { expected: usize, got: usize },
}

/// Square M-QAM grid with unit total energy (1/2 per axis).
///
/// Symbol index `i = ki * sqrt(M) + kq` with both level indices ascending, so
/// the lattice index pair of a symbol is recoverable as `(i / side, i % side)`.
#[derive(Debug, Clone)]
pub struct QamGrid {
    m: usize,
    side: usize,
    delta: f64,
    levels: Vec<f64>,
    points: Vec<(f64, f64)>,
}

impl QamGrid {
    pub fn new(m: usize) -> Result<Self, ConstellationError> {
        if m < 4 {
            return Err(ConstellationError::InvalidOrder(m));
        }
        let side = (m as f64).sqrt().round() as usize;
        if side * side != m {
            return Err(ConstellationError::InvalidOrder(m));
        }
        // Per-axis mean square (M-1) * delta^2 / 12 = 1/2.
        let delta = (6.0 / (m as f64 - 1.0)).sqrt();
        let levels: Vec<f64> = (0..side)
            .map(|k| (k as f64 - (side as f64 - 1.0) / 2.0) * delta)
            .collect();
        let mut points = Vec::with_capacity(m);
        for &li in &levels {
            for &lq in &levels {
                points.push((li, lq));
            }
        }
        Ok(Self { m, side, delta, levels, points })
    }

    pub fn order(&self) -> usize {
        self.m
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn index_of(&self, ki: usize, kq: usize) -> usize {
        ki * self.side + kq
    }

    pub fn lattice_of(&self, index: usize) -> (usize, usize) {
        (index / self.side, index % self.side)
    }
}

/// Linear RF-to-optical mapping `F = (a1 xI + a2 xQ + I_D) / sqrt(1 + I_D^2)`
/// with `a1 = sqrt(2) cos(theta)`, `a2 = sqrt(2) sin(theta)` and the DC bias
/// chosen as the exact minimum over the grid, so the smallest intensity is 0.
#[derive(Debug, Clone, Copy)]
pub struct LinearMap {
    pub theta: f64,
    pub a1: f64,
    pub a2: f64,
    pub i_d: f64,
    /// `sqrt(1 + I_D^2)`, the unit-energy normalizer.
    pub norm: f64,
}

impl LinearMap {
    pub fn new(grid: &QamGrid, theta: f64) -> Result<Self, ConstellationError> {
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&theta) {
            return Err(ConstellationError::ThetaOutOfRange(theta));
        }
        let a1 = std::f64::consts::SQRT_2 * theta.cos();
        let a2 = std::f64::consts::SQRT_2 * theta.sin();
        let i_d = -grid
            .points()
            .iter()
            .map(|&(x, y)| a1 * x + a2 * y)
            .fold(f64::INFINITY, f64::min);
        let norm = (1.0 + i_d * i_d).sqrt();
        Ok(Self { theta, a1, a2, i_d, norm })
    }

    /// Optical intensity of an RF symbol under this map.
    pub fn intensity(&self, x_i: f64, x_q: f64) -> f64 {
        (self.a1 * x_i + self.a2 * x_q + self.i_d) / self.norm
    }

    /// Plane-frame coordinate `t = norm * x_o - I_D = a1 xI + a2 xQ`.
    pub fn to_plane(&self, x_o: f64) -> f64 {
        self.norm * x_o - self.i_d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Linear,
    Learned,
    Mcbm,
    Cbpam,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Linear => "linear",
            Kind::Learned => "learned",
            Kind::Mcbm => "mcbm",
            Kind::Cbpam => "cbpam",
        }
    }
}

/// M labeled points in equalized I/Q/optical-power space.
#[derive(Debug, Clone)]
pub struct Constellation3D {
    points: Vec<[f64; 3]>,
    kind: Kind,
    map: Option<LinearMap>,
}

impl Constellation3D {
    /// Linear-mapping constellation: intensities on the plane
    /// `norm * x_o - I_D = a1 xI + a2 xQ`.
    pub fn linear(grid: &QamGrid, map: LinearMap) -> Self {
        let points = grid
            .points()
            .iter()
            .map(|&(x, y)| [x, y, map.intensity(x, y)])
            .collect();
        Self { points, kind: Kind::Linear, map: Some(map) }
    }

    /// Learned-intensity constellation from externally trained intensities.
    pub fn learned(grid: &QamGrid, intensities: &[f64]) -> Result<Self, ConstellationError> {
        if intensities.len() != grid.order() {
            return Err(ConstellationError::IntensityCount {
                expected: grid.order(),
                got: intensities.len(),
            });
        }
        if let Some(&z) = intensities.iter().find(|z| !(**z > 0.0)) {
            return Err(ConstellationError::NonPositiveIntensity(z));
        }
        let points = grid
            .points()
            .iter()
            .zip(intensities)
            .map(|(&(x, y), &z)| [x, y, z])
            .collect();
        Ok(Self { points, kind: Kind::Learned, map: None })
    }

    /// Magnitude-based baseline: intensity equals the RF symbol magnitude.
    /// Already unit mean-square energy since the QAM grid is unit energy.
    pub fn mcbm(grid: &QamGrid) -> Self {
        let points = grid
            .points()
            .iter()
            .map(|&(x, y)| [x, y, (x * x + y * y).sqrt()])
            .collect();
        Self { points, kind: Kind::Mcbm, map: None }
    }

    /// Cross-band PAM baseline: the same unipolar M-PAM amplitude on the RF
    /// in-phase axis and the optical axis, quadrature unused.
    pub fn cbpam(m: usize) -> Result<Self, ConstellationError> {
        if m < 2 {
            return Err(ConstellationError::InvalidPamOrder(m));
        }
        // Levels {0, d, ..., (M-1) d} with mean square level energy 1.
        let sum_sq: f64 = (0..m).map(|i| (i * i) as f64).sum();
        let d = (m as f64 / sum_sq).sqrt();
        let points = (0..m)
            .map(|i| {
                let level = i as f64 * d;
                [level, 0.0, level]
            })
            .collect();
        Ok(Self { points, kind: Kind::Cbpam, map: None })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn map(&self) -> Option<&LinearMap> {
        self.map.as_ref()
    }

    /// CSV export: `index,x_i,x_q,x_o`, 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,x_i,x_q,x_o\n");
        for (i, p) in self.points.iter().enumerate() {
            out.push_str(&format!("{i},{:.9e},{:.9e},{:.9e}\n", p[0], p[1], p[2]));
        }
        out
    }

    /// Sidecar JSON recording the kind and map parameters.
    pub fn sidecar_json(&self) -> String {
        let m = self.len();
        match &self.map {
            Some(map) => format!(
                "{{\"kind\":\"{}\",\"theta\":{},\"i_d\":{},\"m\":{}}}",
                self.kind.as_str(),
                map.theta,
                map.i_d,
                m
            ),
            None => format!(
                "{{\"kind\":\"{}\",\"theta\":null,\"i_d\":null,\"m\":{}}}",
                self.kind.as_str(),
                m
            ),
        }
    }
}
