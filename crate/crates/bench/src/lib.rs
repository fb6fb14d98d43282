//! Shared fixtures for the benchmarks.

use matchtrial::trial::{generate_cohort, generate_pool};
use matchtrial::{OutcomeModel, Patient, RngStream};

/// A historical pool with ids `0..n_controls` and `n_treated` recruits after it.
pub fn cohort(seed: u64, n_controls: usize, n_treated: usize) -> (Vec<Patient>, Vec<Patient>) {
    let model = OutcomeModel::default().with_theta(0.85);
    let mut s = RngStream::new(seed, 0);
    let pool = generate_pool(&mut s, &model, n_controls);
    let treated = generate_cohort(&mut s, &model, n_controls as u32, n_treated, true);
    (pool, treated)
}
