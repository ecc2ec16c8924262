//! Exact binomial intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    ClopperPearson,
    ClopperPearsonFpc,
    BootstrapPercentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub method: IntervalMethod,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

const BISECTION_TOL: f64 = 1e-12;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Inverse of `I_x(a, b)` in `x`, by bisection.
pub fn inverse_regularized_incomplete_beta(p: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if regularized_incomplete_beta(mid, a, b) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")))
    }
}

/// Exact two-sided `1 - alpha` interval for a binomial proportion.
pub fn clopper_pearson(k: u64, n: u64, alpha: f64) -> Result<Interval> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds n = {n}")));
    }
    check_alpha(alpha)?;
    let (kf, nf) = (k as f64, n as f64);
    let lower = if k == 0 {
        0.0
    } else {
        inverse_regularized_incomplete_beta(alpha / 2.0, kf, nf - kf + 1.0)
    };
    let upper = if k == n {
        1.0
    } else {
        inverse_regularized_incomplete_beta(1.0 - alpha / 2.0, kf + 1.0, nf - kf)
    };
    Ok(Interval {
        lower,
        upper,
        alpha,
        method: IntervalMethod::ClopperPearson,
    })
}

/// Clopper-Pearson bounds pulled toward `k/n` by the finite population
/// correction `sqrt((N - n) / (N - 1))`. A full census (`n == N`) collapses
/// to `[k/n, k/n]`.
pub fn clopper_pearson_fpc(k: u64, n: u64, population: u64, alpha: f64) -> Result<Interval> {
    if n > population {
        return Err(Error::invalid(format!(
            "sample size {n} exceeds population size {population}"
        )));
    }
    let exact = clopper_pearson(k, n, alpha)?;
    let p_hat = k as f64 / n as f64;
    let f = if population > n {
        ((population - n) as f64 / (population - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Interval {
        lower: (p_hat - f * (p_hat - exact.lower)).clamp(0.0, 1.0),
        upper: (p_hat + f * (exact.upper - p_hat)).clamp(0.0, 1.0),
        alpha,
        method: IntervalMethod::ClopperPearsonFpc,
    })
}

/// `P(X >= k)` for `X ~ Binomial(n, p)`.
pub fn binomial_upper_tail(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    // P(X >= k) = I_p(k, n - k + 1)
    regularized_incomplete_beta(p, k as f64, (n - k + 1) as f64)
}

/// One-sided exact sign test: probability of at least `wins` successes out of
/// `trials` fair coin flips.
pub fn sign_test_p_value(wins: u64, trials: u64) -> f64 {
    binomial_upper_tail(wins, trials, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln_choose(n: u64, k: u64) -> f64 {
        ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
    }

    // Direct summation of the binomial pmf, independent of the beta route.
    fn tail_by_summation(k: u64, n: u64, p: f64) -> f64 {
        (k..=n)
            .map(|i| {
                (ln_choose(n, i) + i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln()).exp()
            })
            .sum()
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0_f64;
        for n in 1..20u32 {
            fact *= n as f64;
            assert!((ln_gamma(n as f64 + 1.0) - fact.ln()).abs() < 1e-10);
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_agrees_with_binomial_sum() {
        for &(k, n, p) in &[(3u64, 10u64, 0.2), (27, 160, 0.1), (1, 5, 0.9), (50, 60, 0.7)] {
            let beta = binomial_upper_tail(k, n, p);
            assert!((beta - tail_by_summation(k, n, p)).abs() < 1e-11, "{k} {n} {p}");
        }
    }

    #[test]
    fn zero_successes_closed_form() {
        let ci = clopper_pearson(0, 20, 0.05).unwrap();
        assert_eq!(ci.lower, 0.0);
        assert!((ci.upper - (1.0 - 0.025_f64.powf(1.0 / 20.0))).abs() < 1e-8);
        assert!((ci.upper - 0.1684).abs() < 1e-4);
    }

    #[test]
    fn all_successes_upper_is_one() {
        let ci = clopper_pearson(20, 20, 0.05).unwrap();
        assert_eq!(ci.upper, 1.0);
        assert!((ci.lower - 0.025_f64.powf(1.0 / 20.0)).abs() < 1e-8);
    }

    #[test]
    fn lower_bound_solves_tail_equation() {
        // lower bound p_L satisfies P(X >= k | p_L) = alpha / 2
        let ci = clopper_pearson(27, 160, 0.05).unwrap();
        assert!((tail_by_summation(27, 160, ci.lower) - 0.025).abs() < 1e-9);
        assert!((ci.lower - 0.114250472918).abs() < 1e-9);
        // and the upper bound satisfies P(X <= k | p_U) = alpha / 2
        let below = 1.0 - tail_by_summation(28, 160, ci.upper);
        assert!((below - 0.025).abs() < 1e-9);
    }

    #[test]
    fn fpc_reproduces_reported_lower_bounds() {
        let lo = clopper_pearson_fpc(27, 160, 2500, 0.05).unwrap().lower;
        assert!((lo - 0.116).abs() < 0.002);
        let lo = clopper_pearson_fpc(34, 160, 836, 0.05).unwrap().lower;
        assert!((lo - 0.158).abs() < 0.002);
    }

    #[test]
    fn census_collapses() {
        let ci = clopper_pearson_fpc(5, 40, 40, 0.05).unwrap();
        assert_eq!((ci.lower, ci.upper), (0.125, 0.125));
    }

    #[test]
    fn domain_errors() {
        assert!(clopper_pearson(3, 2, 0.05).is_err());
        assert!(clopper_pearson(0, 0, 0.05).is_err());
        assert!(clopper_pearson(1, 2, 0.0).is_err());
        assert!(clopper_pearson_fpc(1, 10, 9, 0.05).is_err());
    }

    #[test]
    fn sign_test_values() {
        assert!((sign_test_p_value(9, 10) - 11.0 / 1024.0).abs() < 1e-12);
        assert!((sign_test_p_value(10, 10) - 1.0 / 1024.0).abs() < 1e-12);
        assert_eq!(sign_test_p_value(0, 10), 1.0);
    }
}
