//! Standard normal distribution function and its inverse.

use std::f64::consts::FRAC_1_SQRT_2;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum NormalError {
    #[error("probability {0} is outside the open interval (0, 1)")]
    Domain(f64),
}

/// Standard normal cumulative distribution function `Phi(x)`.
///
/// Saturates to exactly 0 or 1 far in the tails; NaN propagates.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Phi(x)`, accurate for large positive `x` where
/// `1.0 - norm_cdf(x)` would cancel.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Inverse of the standard normal distribution function.
///
/// Wichura's AS 241 (PPND16) rational approximations, relative accuracy
/// around 1e-16 over the whole open unit interval.
pub fn norm_quantile(p: f64) -> Result<f64, NormalError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(NormalError::Domain(p));
    }
    Ok(ppnd16(p))
}

fn ppnd16(p: f64) -> f64 {
    const SPLIT1: f64 = 0.425;
    const SPLIT2: f64 = 5.0;
    const CONST1: f64 = 0.180625;
    const CONST2: f64 = 1.6;

    const A: [f64; 8] = [
        3.387_132_872_796_366_608_0e0,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083_0e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061_0e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561_0e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34e0,
        4.630_337_846_156_545_295_90e0,
        5.769_497_221_460_691_405_50e0,
        3.647_848_324_763_204_605_04e0,
        1.270_458_252_452_368_382_58e0,
        2.417_807_251_774_506_117_70e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_40e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87e0,
        1.676_384_830_183_803_849_40e0,
        6.897_673_349_851_000_045_50e-1,
        1.481_039_764_274_800_745_90e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946_00e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_20e0,
        5.463_784_911_164_114_369_90e0,
        1.784_826_539_917_291_335_80e0,
        2.965_605_718_285_048_912_30e-1,
        2.653_218_952_657_612_309_30e-2,
        1.242_660_947_388_078_438_60e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_90e-1,
        1.369_298_809_227_358_053_10e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591_00e-4,
        1.846_318_317_510_054_681_80e-5,
        1.421_511_758_316_445_888_70e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    let q = p - 0.5;
    if q.abs() <= SPLIT1 {
        let r = CONST1 - q * q;
        return q * horner(&A, r) / horner(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let x = if r <= SPLIT2 {
        r -= CONST2;
        horner(&C, r) / horner(&D, r)
    } else {
        r -= SPLIT2;
        horner(&E, r) / horner(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

#[inline]
fn horner(coefs: &[f64; 8], x: f64) -> f64 {
    coefs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Values frozen from a 40-digit mpmath evaluation.
    const REFERENCE_CDF: &[(f64, f64)] = &[
        (0.0, 0.5),
        (1.16558, 0.878_107_851_029_807_4),
        (-1.959964, 0.024_999_999_096_442_404),
        (0.48686, 0.686_821_226_458_602_9),
        (1.5678, 0.941_536_092_541_961_3),
        (-8.0, 6.220_960_574_271_784e-16),
        (3.0, 0.998_650_101_968_369_9),
        (7.5, 0.999_999_999_999_968_1),
    ];

    const REFERENCE_QUANTILE: &[(f64, f64)] = &[
        (0.5, 0.0),
        (0.975, 1.959_963_984_540_054_2),
        (0.99, 2.326_347_874_040_841),
        (0.9, 1.281_551_565_544_600_5),
        (0.3, -0.524_400_512_708_040_8),
        (0.02425, -1.972_961_051_311_884_9),
        (1e-8, -5.612_001_244_174_787),
        (1e-15, -7.941_345_326_170_997),
    ];

    /// Independent Phi: Marsaglia's series `0.5 + phi(x) * sum x^(2k+1)/(2k+1)!!`.
    fn series_cdf(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut k = 1.0;
        while term.abs() > 1e-300 && k < 2000.0 {
            term *= x * x / (2.0 * k + 1.0);
            sum += term;
            k += 1.0;
        }
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        0.5 + pdf * sum
    }

    fn bisect_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-9.0, 9.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if series_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn cdf_matches_high_precision_reference() {
        for &(x, want) in REFERENCE_CDF {
            let got = norm_cdf(x);
            assert!((got - want).abs() <= 1e-12, "Phi({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn cdf_matches_series_oracle_on_grid() {
        for i in -800..=800 {
            let x = i as f64 / 100.0;
            let (got, want) = (norm_cdf(x), series_cdf(x));
            assert!((got - want).abs() <= 1e-12, "x = {x}: {got} vs {want}");
        }
    }

    #[test]
    fn cdf_saturates_in_tails() {
        assert_eq!(norm_cdf(-40.0), 0.0);
        assert_eq!(norm_cdf(40.0), 1.0);
        assert_eq!(norm_cdf(f64::NEG_INFINITY), 0.0);
        assert_eq!(norm_cdf(f64::INFINITY), 1.0);
        assert!(norm_sf(9.0) > 0.0);
    }

    #[test]
    fn quantile_matches_high_precision_reference() {
        for &(p, want) in REFERENCE_QUANTILE {
            let got = norm_quantile(p).unwrap();
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "q({p}) = {got}, want {want}");
        }
    }

    #[test]
    fn quantile_matches_bisection_of_series_oracle() {
        for &p in &[0.975, 0.99, 0.5, 0.1, 0.7, 0.001] {
            let got = norm_quantile(p).unwrap();
            assert!((got - bisect_quantile(p)).abs() < 1e-9, "p = {p}");
        }
    }

    #[test]
    fn quantile_rejects_closed_endpoints() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(norm_quantile(p).is_err(), "p = {p}");
        }
    }

    #[test]
    fn quantile_is_odd() {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let a = norm_quantile(p).unwrap();
            let b = norm_quantile(1.0 - p).unwrap();
            assert!((a + b).abs() < 1e-12, "p = {p}");
        }
    }

    #[test]
    fn cdf_and_quantile_are_mutual_inverses() {
        let n = 10_000;
        let (lo, hi) = (1e-8, 1.0 - 1e-8);
        for i in 0..n {
            let p = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let x = norm_quantile(p).unwrap();
            assert!((norm_cdf(x) - p).abs() <= 1e-8, "p = {p}");
        }
    }
}
