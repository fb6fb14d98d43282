//! Cochran-Mantel-Haenszel test and the Mantel-Haenszel common odds ratio.

use thiserror::Error;

use crate::stats::{norm_sf, TwoByTwoTable};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum CmhError {
    #[error("no stratum carries information (all margins degenerate)")]
    NoInformativeStrata,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmhResult {
    /// CMH chi-square statistic, no continuity correction.
    pub statistic: f64,
    /// Signed square root: positive when treated patients respond more.
    pub z: f64,
    /// `1 - Phi(z)`.
    pub p_one_sided: f64,
    pub common_or: f64,
    /// Robins-Breslow-Greenland SE of `ln(common_or)`; `None` when the
    /// common odds ratio is 0 or infinite.
    pub log_or_se: Option<f64>,
}

impl CmhResult {
    pub fn log_or(&self) -> f64 {
        self.common_or.ln()
    }
}

pub fn cmh_test(strata: &[TwoByTwoTable]) -> Result<CmhResult, CmhError> {
    let (mut obs, mut exp, mut var) = (0.0, 0.0, 0.0);
    let (mut r, mut s) = (0.0, 0.0);
    // RBG accumulators
    let (mut pr, mut ps_qr, mut qs) = (0.0, 0.0, 0.0);
    for t in strata {
        let [a, b, c, d] = t.cells();
        let n = a + b + c + d;
        if n < 2.0 {
            continue;
        }
        let (n1, n2) = (a + b, c + d);
        let (m1, m2) = (a + c, b + d);
        obs += a;
        exp += n1 * m1 / n;
        var += n1 * n2 * m1 * m2 / (n * n * (n - 1.0));
        let rk = a * d / n;
        let sk = b * c / n;
        let pk = (a + d) / n;
        let qk = (b + c) / n;
        r += rk;
        s += sk;
        pr += pk * rk;
        ps_qr += pk * sk + qk * rk;
        qs += qk * sk;
    }
    if !(var > 0.0) {
        return Err(CmhError::NoInformativeStrata);
    }
    let z = (obs - exp) / var.sqrt();
    let common_or = if s > 0.0 { r / s } else { f64::INFINITY };
    let log_or_se = (r > 0.0 && s > 0.0).then(|| (pr / (2.0 * r * r) + ps_qr / (2.0 * r * s) + qs / (2.0 * s * s)).sqrt());
    Ok(CmhResult {
        statistic: z * z,
        z,
        p_one_sided: norm_sf(z),
        common_or,
        log_or_se,
    })
}
