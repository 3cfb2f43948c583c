//! Orthonormal polynomial bases for nonlinear self-interference cancellation.
//!
//! The odd-order basis is built from the even moments of the transmit
//! amplitude distribution (`orthopoly`), then used as the regressor
//! transform of an LMS canceller (`canceller`). `channel` and `signals`
//! provide the Saleh PA, the SI channel and the test inputs; `harness`
//! runs JSON scenarios and renders their results.

pub mod moments;
pub mod numerics;
pub mod orthopoly;
pub mod signals;
pub mod channel;
pub mod canceller;
pub mod harness;
