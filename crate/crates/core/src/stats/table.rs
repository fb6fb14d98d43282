//! 2x2 contingency tables of treatment group by binary response.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum TableError {
    #[error("table cells must be finite and non-negative")]
    InvalidCell,
    #[error("log odds ratio is undefined: table has a zero cell")]
    ZeroCell,
}

/// Treatment (T) versus control (C) by responder / non-responder.
///
/// Cells are real-valued so that planning code can work with expected
/// counts; observed tables hold whole numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoByTwoTable {
    pub responders_t: f64,
    pub nonresponders_t: f64,
    pub responders_c: f64,
    pub nonresponders_c: f64,
}

impl TwoByTwoTable {
    pub fn new(
        responders_t: f64,
        nonresponders_t: f64,
        responders_c: f64,
        nonresponders_c: f64,
    ) -> Result<Self, TableError> {
        let t = Self {
            responders_t,
            nonresponders_t,
            responders_c,
            nonresponders_c,
        };
        if t.cells().iter().all(|c| c.is_finite() && *c >= 0.0) {
            Ok(t)
        } else {
            Err(TableError::InvalidCell)
        }
    }

    pub fn from_counts(responders_t: u32, nonresponders_t: u32, responders_c: u32, nonresponders_c: u32) -> Self {
        Self {
            responders_t: responders_t as f64,
            nonresponders_t: nonresponders_t as f64,
            responders_c: responders_c as f64,
            nonresponders_c: nonresponders_c as f64,
        }
    }

    pub fn cells(&self) -> [f64; 4] {
        [self.responders_t, self.nonresponders_t, self.responders_c, self.nonresponders_c]
    }

    pub fn n_t(&self) -> f64 {
        self.responders_t + self.nonresponders_t
    }

    pub fn n_c(&self) -> f64 {
        self.responders_c + self.nonresponders_c
    }

    pub fn total(&self) -> f64 {
        self.n_t() + self.n_c()
    }

    pub fn responders(&self) -> f64 {
        self.responders_t + self.responders_c
    }

    /// Same table with the treatment and control rows exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            responders_t: self.responders_c,
            nonresponders_t: self.nonresponders_c,
            responders_c: self.responders_t,
            nonresponders_c: self.nonresponders_t,
        }
    }

    pub fn log_odds_ratio(&self) -> Result<(f64, f64), TableError> {
        log_odds_ratio_2x2(self)
    }
}

/// Log odds ratio of treatment versus control and its Woolf standard error.
///
/// No continuity correction: a zero cell is an error.
pub fn log_odds_ratio_2x2(t: &TwoByTwoTable) -> Result<(f64, f64), TableError> {
    let [a, b, c, d] = t.cells();
    if [a, b, c, d].iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(TableError::InvalidCell);
    }
    if a == 0.0 || b == 0.0 || c == 0.0 || d == 0.0 {
        return Err(TableError::ZeroCell);
    }
    let estimate = (a.ln() + d.ln()) - (b.ln() + c.ln());
    let se = (1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d).sqrt();
    Ok((estimate, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_examples() {
        let (est, se) = TwoByTwoTable::from_counts(15, 15, 9, 21).log_odds_ratio().unwrap();
        assert!((est - 0.847_297_860_387_203_6).abs() < 1e-12);
        assert!((se - 0.540_428_988_918_518_4).abs() < 1e-12);

        let (est, se) = TwoByTwoTable::from_counts(5, 5, 5, 5).log_odds_ratio().unwrap();
        assert_eq!(est, 0.0);
        assert!((se - 0.894_427_190_999_915_9).abs() < 1e-12);

        let (est, se) = TwoByTwoTable::from_counts(10, 10, 10, 10).log_odds_ratio().unwrap();
        assert_eq!(est, 0.0);
        assert!((se - 0.4f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_cell_is_an_error() {
        let t = TwoByTwoTable::from_counts(0, 10, 3, 7);
        assert_eq!(t.log_odds_ratio(), Err(TableError::ZeroCell));
        assert_eq!(TwoByTwoTable::new(-1.0, 1.0, 1.0, 1.0), Err(TableError::InvalidCell));
    }

    proptest! {
        #[test]
        fn swapping_rows_negates_estimate(a in 1u32..200, b in 1u32..200, c in 1u32..200, d in 1u32..200) {
            let t = TwoByTwoTable::from_counts(a, b, c, d);
            let (e1, s1) = t.log_odds_ratio().unwrap();
            let (e2, s2) = t.swapped().log_odds_ratio().unwrap();
            prop_assert!((e1 + e2).abs() < 1e-12);
            prop_assert!((s1 - s2).abs() < 1e-15);
        }
    }
}
