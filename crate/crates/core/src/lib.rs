//! Cross-band RF-optical modulation toolkit.
//!
//! A symbol is transmitted jointly over a coherent RF link (I/Q plane) and an
//! IM/DD optical link (non-negative intensity), and detected as a single point
//! in the 3D I-Q-OP receiver space. This crate builds the 3D constellations
//! (linear mapping, learned intensities, magnitude and PAM baselines), detects
//! symbols with exhaustive ML or a constant-time lattice detector, optimizes
//! the linear mapping angle, evaluates the closed-form mutual-information and
//! symbol-error expressions, and measures both by deterministic parallel
//! Monte Carlo.
//!
//! All quantities live in channel-equalized coordinates: the RF axes are
//! divided by their channel gain and the optical axis by its own, so the only
//! channel parameters left are the two received SNRs.

pub mod analysis;
pub mod channel;
pub mod constellation;
pub mod detection;
pub mod estimate;
pub mod linopt;
pub mod shaping;

pub use channel::{Frame, LinkSnr, MetricWeights, Received, RngStream};
pub use constellation::{Constellation3D, Kind, LinearMap, QamGrid};
pub use detection::{Detection, FastDetector, MlDetector};
pub use estimate::ConfusionMatrix;
pub use linopt::P1Solution;
