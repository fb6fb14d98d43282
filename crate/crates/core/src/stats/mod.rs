//! Numerical primitives shared by every other module: the standard normal
//! distribution, the per-replication random stream, and 2x2 table arithmetic.

pub mod normal;
pub mod rng;
pub mod table;

pub use normal::{norm_cdf, norm_quantile, norm_sf, NormalError};
pub use rng::RngStream;
pub use table::{log_odds_ratio_2x2, TableError, TwoByTwoTable};

/// Logistic function `1 / (1 + exp(-x))`, evaluated without overflow.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds of a probability.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
