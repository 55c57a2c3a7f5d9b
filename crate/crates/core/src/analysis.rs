//! Closed-form link analysis: Gaussian tail probability, mutual information
//! of the linear Gaussian scheme, and the symbol-error approximation and
//! upper bound, all in equalized-SNR terms.

use crate::channel::LinkSnr;
use crate::linopt::P1Solution;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("parameter {name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("dc bias must be non-negative and finite, got {0}")]
    InvalidBias(f64),
    #[error("covariance determinant is not positive: {0}")]
    BadDeterminant(f64),
}

/// Rational-approximation complementary error function (Cody's three-regime
/// scheme), accurate to well below 1e-12 relative error over the range the
/// Q-function is evaluated on.
fn erfc(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax < 0.46875 {
        1.0 - erf_small(x)
    } else if ax <= 4.0 {
        let e = erfc_mid(ax);
        if x < 0.0 { 2.0 - e } else { e }
    } else {
        let e = erfc_large(ax);
        if x < 0.0 { 2.0 - e } else { e }
    };
    v
}

fn erf_small(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.161_123_743_870_565_6e0,
        1.138_641_541_510_501_6e2,
        3.774_852_376_853_020_2e2,
        3.209_377_589_138_469_5e3,
        1.857_777_061_846_031_5e-1,
    ];
    const B: [f64; 4] = [
        2.360_129_095_234_412_1e1,
        2.440_246_379_344_441_7e2,
        1.282_616_526_077_372_3e3,
        2.844_236_833_439_170_6e3,
    ];
    let y = x * x;
    let mut num = A[4] * y;
    let mut den = y;
    for i in 0..3 {
        num = (num + A[i]) * y;
        den = (den + B[i]) * y;
    }
    x * (num + A[3]) / (den + B[3])
}

fn erfc_mid(y: f64) -> f64 {
    const C: [f64; 9] = [
        5.641_884_969_886_700_9e-1,
        8.883_149_794_388_375_9e0,
        6.611_919_063_714_163e1,
        2.986_351_381_974_001_3e2,
        8.819_522_212_417_691e2,
        1.712_047_612_634_070_6e3,
        2.051_078_377_826_071_5e3,
        1.230_339_354_797_997_2e3,
        2.153_115_354_744_038_5e-8,
    ];
    const D: [f64; 8] = [
        1.574_492_611_070_983_5e1,
        1.176_939_508_913_125e2,
        5.371_811_018_620_098_6e2,
        1.621_389_574_566_690_2e3,
        3.290_799_235_733_459_6e3,
        4.362_619_090_143_247e3,
        3.439_367_674_143_721_6e3,
        1.230_339_354_803_749_4e3,
    ];
    let mut num = C[8] * y;
    let mut den = y;
    for i in 0..7 {
        num = (num + C[i]) * y;
        den = (den + D[i]) * y;
    }
    let r = (num + C[7]) / (den + D[7]);
    exp_nx2(y) * r
}

fn erfc_large(y: f64) -> f64 {
    const P: [f64; 6] = [
        3.053_266_349_612_323_4e-1,
        3.603_448_999_498_044_4e-1,
        1.257_817_261_112_292_5e-1,
        1.608_378_514_874_227_7e-2,
        6.587_491_615_298_378e-4,
        1.631_538_713_730_209_8e-2,
    ];
    const Q: [f64; 5] = [
        2.568_520_192_289_822_4e0,
        1.872_952_849_923_460_5e0,
        5.279_051_029_514_284e-1,
        6.051_834_131_244_132e-2,
        2.335_204_976_268_691_8e-3,
    ];
    const INV_SQRT_PI: f64 = 5.641_895_835_477_562_9e-1;
    let ysq = 1.0 / (y * y);
    let mut num = P[5] * ysq;
    let mut den = ysq;
    for i in 0..4 {
        num = (num + P[i]) * ysq;
        den = (den + Q[i]) * ysq;
    }
    let r = ysq * (num + P[4]) / (den + Q[4]);
    exp_nx2(y) * (INV_SQRT_PI - r) / y
}

/// exp(-y^2) computed as exp(-hi^2) * exp(-(y-hi)(y+hi)) with hi a short
/// 1/16-grid value, which keeps the argument squaring exact.
fn exp_nx2(y: f64) -> f64 {
    let hi = (y * 16.0).trunc() / 16.0;
    let del = (y - hi) * (y + hi);
    (-hi * hi).exp() * (-del).exp()
}

/// Gaussian tail probability Q(x) = P(N(0,1) > x).
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Parameters of the linear Gaussian cross-band covariance model. `i_d` is a
/// free parameter here: a continuous Gaussian input has no finite bias that
/// guarantees non-negativity, so the bias is swept rather than derived.
#[derive(Debug, Clone, Copy)]
pub struct LgcbParams {
    pub sigma_x_sq: f64,
    pub c1: f64,
    pub c2: f64,
    pub sigma_n_sq: f64,
    pub sigma_o_sq: f64,
    pub i_d: f64,
}

impl LgcbParams {
    pub fn new(
        sigma_x_sq: f64,
        c1: f64,
        c2: f64,
        sigma_n_sq: f64,
        sigma_o_sq: f64,
        i_d: f64,
    ) -> Result<Self, AnalysisError> {
        for (name, value) in [
            ("sigma_x_sq", sigma_x_sq),
            ("sigma_n_sq", sigma_n_sq),
            ("sigma_o_sq", sigma_o_sq),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(AnalysisError::NonPositive { name, value });
            }
        }
        if !(i_d.is_finite() && i_d >= 0.0) {
            return Err(AnalysisError::InvalidBias(i_d));
        }
        Ok(Self { sigma_x_sq, c1, c2, sigma_n_sq, sigma_o_sq, i_d })
    }

    /// Cross-covariance coefficient between an RF axis and the normalized
    /// optical output.
    pub fn c_t(&self) -> f64 {
        self.c1 * self.c2 / (1.0 + self.i_d * self.i_d).sqrt()
    }
}

/// Mutual information (bits) of the linear Gaussian cross-band scheme:
/// half the log-ratio of the output covariance determinant to the noise
/// determinant.
///
/// The optical output is the normalized intensity, so its signal variance
/// carries the same 1/(1 + I_D^2) factor as the cross term; with that the
/// determinant collapses to A * (A * sigma_o^2 + 2 c_t^2 sigma_x^2 sigma_n^2)
/// with A = c1^2 sigma_x^2 + sigma_n^2, which is monotone decreasing in the
/// bias as expected: bias spends optical power without carrying information.
pub fn mi_lgcb(p: &LgcbParams) -> Result<f64, AnalysisError> {
    let sx = p.sigma_x_sq;
    let a = p.c1 * p.c1 * sx + p.sigma_n_sq;
    let ct = p.c_t();
    let norm_sq = 1.0 + p.i_d * p.i_d;
    let opt_var = 2.0 * p.c2 * p.c2 * sx / norm_sq + p.sigma_o_sq;
    // det K_Y with the a1/a2 split already cancelled through a1^2 + a2^2 = 2.
    let det_k = a * (a * opt_var - 2.0 * ct * ct * sx * sx);
    let det_n = p.sigma_n_sq * p.sigma_n_sq * p.sigma_o_sq;
    let ratio = det_k / det_n;
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(AnalysisError::BadDeterminant(det_k));
    }
    Ok(0.5 * ratio.log2())
}

/// Fraction of nearest-neighbor-dominated error directions for square M-QAM.
pub fn a1_coefficient(m: usize) -> f64 {
    2.0 * (1.0 - 1.0 / (m as f64).sqrt())
}

/// Symbol-error approximation of the optimized linear scheme from its two
/// smallest lattice distances.
pub fn sep_approx_linear(sol: &P1Solution, m: usize) -> f64 {
    let a1 = a1_coefficient(m);
    let p = 1.0
        - (1.0 - a1 * q_function(sol.dmin.sqrt() / 2.0))
            * (1.0 - a1 * q_function(sol.dsecond.sqrt() / 2.0));
    p.clamp(0.0, 1.0)
}

/// High-RF-SNR upper bound on the symbol-error probability, valid in the
/// regime where the mapping optimum sits at theta = pi/4 with nearest pair
/// (1, 0).
pub fn sep_upper_bound(snr: LinkSnr, i_d: f64, m: usize) -> f64 {
    let a1 = a1_coefficient(m);
    let arg = (3.0 * snr.gamma1_sq + 6.0 * snr.gamma2_sq / (1.0 + i_d * i_d))
        / (2.0 * (m as f64 - 1.0));
    let p = 1.0 - (1.0 - a1 * q_function(arg.sqrt())).powi(2);
    p.clamp(0.0, 1.0)
}
