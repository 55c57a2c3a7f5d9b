//! Equalized AWGN channel with deterministic, splittable random streams.
//!
//! After equalization the only channel parameters are the two received SNRs:
//! the RF axes see zero-mean Gaussian noise of variance `1 / gamma1^2` each
//! and the optical intensity axis sees variance `1 / gamma2^2`.
//!
//! Linear-map constellations are detected in the "plane frame"
//! `t = sqrt(1 + I_D^2) * y_o - I_D`, where the noise variance becomes
//! `(1 + I_D^2) / gamma2^2`; everything else is detected on the raw
//! intensity axis.

use crate::constellation::{Constellation3D, Kind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Symbols per random stream. Parallel Monte Carlo splits work at this
/// granularity so the sample-to-symbol assignment never depends on the
/// worker count.
pub const CHUNK_SYMBOLS: u64 = 1 << 16;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("symbol index {index} out of range for order {m}")]
    IndexOutOfRange { index: usize, m: usize },
    #[error("SNR must be finite and positive, got {0}")]
    InvalidSnr(f64),
}

/// Received SNRs of the RF and optical links, linear scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSnr {
    pub gamma1_sq: f64,
    pub gamma2_sq: f64,
}

impl LinkSnr {
    pub fn new(gamma1_sq: f64, gamma2_sq: f64) -> Result<Self, ChannelError> {
        for g in [gamma1_sq, gamma2_sq] {
            if !(g.is_finite() && g > 0.0) {
                return Err(ChannelError::InvalidSnr(g));
            }
        }
        Ok(Self { gamma1_sq, gamma2_sq })
    }

    pub fn from_db(gamma1_db: f64, gamma2_db: f64) -> Result<Self, ChannelError> {
        Self::new(10f64.powf(gamma1_db / 10.0), 10f64.powf(gamma2_db / 10.0))
    }

    pub fn gamma1_db(&self) -> f64 {
        10.0 * self.gamma1_sq.log10()
    }

    pub fn gamma2_db(&self) -> f64 {
        10.0 * self.gamma2_sq.log10()
    }
}

/// Frame of the optical coordinate of a received vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// Raw intensity axis, noise variance `1 / gamma2^2`.
    Intensity,
    /// De-biased plane coordinate, noise variance `(1 + I_D^2) / gamma2^2`.
    Plane,
}

/// A received 3-vector tagged with the frame of its optical coordinate,
/// so plane-frame detectors cannot silently consume intensity-frame samples.
#[derive(Debug, Clone, Copy)]
pub struct Received {
    pub v: [f64; 3],
    pub frame: Frame,
}

impl Received {
    /// Convert an intensity-frame observation of a linear-map constellation
    /// to the plane frame.
    pub fn to_plane(&self, map: &crate::constellation::LinearMap) -> Received {
        assert_eq!(self.frame, Frame::Intensity, "already in plane frame");
        Received {
            v: [self.v[0], self.v[1], map.to_plane(self.v[2])],
            frame: Frame::Plane,
        }
    }
}

/// Per-axis inverse noise variances of the detection metric.
#[derive(Debug, Clone, Copy)]
pub struct MetricWeights {
    pub w_i: f64,
    pub w_q: f64,
    pub w_o: f64,
    /// Frame the optical weight refers to.
    pub frame: Frame,
}

impl MetricWeights {
    /// Weights for detecting `c` at the given SNRs. Linear constellations are
    /// weighted for the plane frame; all other kinds for the intensity frame.
    pub fn for_constellation(c: &Constellation3D, snr: LinkSnr) -> Self {
        match c.map() {
            Some(map) if c.kind() == Kind::Linear => Self {
                w_i: snr.gamma1_sq,
                w_q: snr.gamma1_sq,
                w_o: snr.gamma2_sq / (map.norm * map.norm),
                frame: Frame::Plane,
            },
            _ => Self {
                w_i: snr.gamma1_sq,
                w_q: snr.gamma1_sq,
                w_o: snr.gamma2_sq,
                frame: Frame::Intensity,
            },
        }
    }
}

/// Seeded, stream-splittable random source. Identical (seed, stream) pairs
/// produce identical sample sequences on any platform and worker count.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform_index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }
}

/// Independent zero-mean Gaussian noise for the three receiver axes.
///
/// `frame_scale` is `1 + I_D^2` when the optical sample is produced in the
/// plane frame of a linear map, and 1 on the intensity axis.
pub fn noise_sample(snr: LinkSnr, frame_scale: f64, rng: &mut RngStream) -> [f64; 3] {
    let s_rf = (1.0 / snr.gamma1_sq).sqrt();
    let s_o = (frame_scale / snr.gamma2_sq).sqrt();
    [
        s_rf * rng.standard_normal(),
        s_rf * rng.standard_normal(),
        s_o * rng.standard_normal(),
    ]
}

/// Transmit symbol `idx` of `c` and return the noisy intensity-frame
/// observation.
pub fn transmit(
    c: &Constellation3D,
    idx: usize,
    snr: LinkSnr,
    rng: &mut RngStream,
) -> Result<Received, ChannelError> {
    if idx >= c.len() {
        return Err(ChannelError::IndexOutOfRange { index: idx, m: c.len() });
    }
    let p = c.points()[idx];
    let n = noise_sample(snr, 1.0, rng);
    Ok(Received {
        v: [p[0] + n[0], p[1] + n[1], p[2] + n[2]],
        frame: Frame::Intensity,
    })
}
