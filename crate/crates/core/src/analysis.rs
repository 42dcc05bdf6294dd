//! Closed-form predictions for the targeted safety attack.
//!
//! A target answered Red by every adversarial validator sees Red with
//! probability `mu * (1 - phi) + phi` per sampled peer, so it earns a Red
//! chit with the binomial tail `P[X >= alpha]`. Finalizing needs `beta`
//! consecutive chits, whose waiting time has a known mean and variance.
//! Expectations reach ~1e27 for small adversaries, so the waiting-time
//! formulas are evaluated through `expm1`/`ln_1p` to stay accurate and
//! finite across that range.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::snowball::ProtocolParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("{name}={value} outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
}

fn domain(name: &'static str, value: f64, domain: &'static str) -> AnalysisError {
    AnalysisError::Domain { name, value, domain }
}

fn check_prob(name: &'static str, p: f64) -> Result<(), AnalysisError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(domain(name, p, "[0, 1]"))
    }
}

/// `ln C(k, i)` for all `i` in `0..=k`, by the multiplicative recurrence.
fn ln_binomial_row(k: u32) -> Vec<f64> {
    let mut row = Vec::with_capacity(k as usize + 1);
    let mut acc = 0.0;
    row.push(acc);
    for i in 1..=k {
        acc += f64::from(k - i + 1).ln() - f64::from(i).ln();
        row.push(acc);
    }
    row
}

/// Sum of binomial pmf terms for `i` in `range`, 0 < p < 1. Terms are
/// evaluated in log space and summed relative to the largest one.
fn pmf_sum(k: u32, p: f64, range: std::ops::RangeInclusive<u32>) -> f64 {
    if range.is_empty() {
        return 0.0;
    }
    let row = ln_binomial_row(k);
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let logs: Vec<f64> = range
        .map(|i| row[i as usize] + f64::from(i) * lp + f64::from(k - i) * lq)
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max.exp() * logs.iter().map(|l| (l - max).exp()).sum::<f64>()
}

/// Binomial CDF `F(x; k, p) = P[X <= x]`.
pub fn binom_cdf(x: u32, k: u32, p: f64) -> Result<f64, AnalysisError> {
    check_prob("p", p)?;
    if x > k {
        return Err(domain("x", f64::from(x), "[0, k]"));
    }
    if x == k || p == 0.0 {
        return Ok(1.0);
    }
    if p == 1.0 {
        return Ok(0.0);
    }
    // Sum whichever tail is smaller to avoid cancellation.
    let mean = f64::from(k) * p;
    let value = if f64::from(x) <= mean {
        pmf_sum(k, p, 0..=x)
    } else {
        1.0 - pmf_sum(k, p, x + 1..=k)
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Probability that at least `alpha` of `k` sampled answers are Red when
/// each is Red with probability `p`: `1 - F(alpha - 1; k, p)`.
pub fn alpha_majority_prob(k: u32, alpha: u32, p: f64) -> Result<f64, AnalysisError> {
    check_prob("p", p)?;
    if alpha == 0 || alpha > k {
        return Err(domain("alpha", f64::from(alpha), "[1, k]"));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let mean = f64::from(k) * p;
    let value = if f64::from(alpha) > mean {
        pmf_sum(k, p, alpha..=k)
    } else {
        1.0 - pmf_sum(k, p, 0..=alpha - 1)
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Per-query Red probability at a target: `mu * (1 - phi) + phi`.
pub fn targeted_success_prob(mu: f64, phi: f64) -> f64 {
    mu * (1.0 - phi) + phi
}

/// Per-query Red probability at a non-target when the adversary answers
/// Blue: `mu * (1 - phi)`.
pub fn non_target_success_prob(mu: f64, phi: f64) -> f64 {
    mu * (1.0 - phi)
}

fn check_trial_args(p_alpha: f64, beta: u32) -> Result<(), AnalysisError> {
    if !(0.0..=1.0).contains(&p_alpha) {
        return Err(domain("p_alpha", p_alpha, "(0, 1]"));
    }
    if beta == 0 {
        return Err(domain("beta", 0.0, "[1, inf)"));
    }
    Ok(())
}

/// Expected number of trials until `beta` consecutive successes,
/// `(1 - p^beta) / ((1 - p) p^beta)`. Returns `beta` at `p = 1` and
/// `f64::INFINITY` at `p = 0`.
pub fn expected_trials(p_alpha: f64, beta: u32) -> Result<f64, AnalysisError> {
    check_trial_args(p_alpha, beta)?;
    if p_alpha == 0.0 {
        return Ok(f64::INFINITY);
    }
    if p_alpha == 1.0 {
        return Ok(f64::from(beta));
    }
    let q = 1.0 - p_alpha;
    // p^-beta - 1 = expm1(-beta ln p)
    let neg_beta_ln_p = -f64::from(beta) * (-q).ln_1p();
    Ok(neg_beta_ln_p.exp_m1() / q)
}

/// Standard deviation of the same waiting time; 0 at `p = 1`, infinite at
/// `p = 0`.
pub fn stddev_trials(p_alpha: f64, beta: u32) -> Result<f64, AnalysisError> {
    check_trial_args(p_alpha, beta)?;
    if p_alpha == 0.0 {
        return Ok(f64::INFINITY);
    }
    if p_alpha == 1.0 {
        return Ok(0.0);
    }
    let b = f64::from(beta);
    let q = 1.0 - p_alpha;
    let ln_p = (-q).ln_1p();
    let p_beta = (b * ln_p).exp();
    // Var = [1 - (2b+1) q p^b - p^(2b+1)] / (q^2 p^(2b))
    let bracket = 1.0 - (2.0 * b + 1.0) * q * p_beta - p_alpha * p_beta * p_beta;
    Ok(bracket.max(0.0).sqrt() * (-b * ln_p).exp() / q)
}

/// Expected rounds until any of `num_targets` targets finalizes, treating
/// each one's completion as equally likely in every round after `beta - 1`.
pub fn multi_target_expected(e_single: f64, num_targets: u32, beta: u32) -> Result<f64, AnalysisError> {
    if num_targets == 0 {
        return Err(domain("num_targets", 0.0, "[1, inf)"));
    }
    let floor = f64::from(beta.saturating_sub(1));
    if !(e_single >= floor) {
        return Err(domain("e_single", e_single, "[beta - 1, inf]"));
    }
    Ok((e_single - floor) / f64::from(num_targets) + floor)
}

/// Honest Red fraction the adversary can hold: `c / (1 - phi)`.
pub fn stable_split(phi: f64, c: f64) -> Result<f64, AnalysisError> {
    if !(0.0..1.0).contains(&phi) {
        return Err(domain("phi", phi, "[0, 1)"));
    }
    if !(c > 0.0 && c < 1.0) {
        return Err(domain("c", c, "(0, 1)"));
    }
    let mu = c / (1.0 - phi);
    if mu > 1.0 {
        return Err(domain("mu", mu, "[0, 1]"));
    }
    Ok(mu)
}

/// Analytical forecast of a safety attack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackForecast {
    pub adversary_fraction: f64,
    pub mu: f64,
    pub p_target: f64,
    pub p_non_target: f64,
    pub p_alpha: f64,
    pub p_alpha_non_target: f64,
    pub expected_rounds: f64,
    pub stddev_rounds: f64,
    pub num_targets: u32,
    pub expected_rounds_multi: f64,
}

/// Composes the closed forms into one row of the safety-attack table.
pub fn predict_table_row(
    phi: f64,
    params: &ProtocolParams,
    num_targets: u32,
    c: f64,
) -> Result<AttackForecast, AnalysisError> {
    let mu = stable_split(phi, c)?;
    let p_target = targeted_success_prob(mu, phi);
    let p_non_target = non_target_success_prob(mu, phi);
    let p_alpha = alpha_majority_prob(params.k, params.alpha, p_target)?;
    let p_alpha_non_target = alpha_majority_prob(params.k, params.alpha, p_non_target)?;
    let expected_rounds = expected_trials(p_alpha, params.beta)?;
    let stddev_rounds = stddev_trials(p_alpha, params.beta)?;
    let expected_rounds_multi = multi_target_expected(expected_rounds, num_targets, params.beta)?;
    Ok(AttackForecast {
        adversary_fraction: phi,
        mu,
        p_target,
        p_non_target,
        p_alpha,
        p_alpha_non_target,
        expected_rounds,
        stddev_rounds,
        num_targets,
        expected_rounds_multi,
    })
}

pub const FORECAST_CSV_HEADER: [&str; 9] = [
    "adversary_fraction",
    "honest_red",
    "honest_blue",
    "p_target",
    "p_alpha",
    "expected_rounds",
    "stddev_rounds",
    "num_targets",
    "expected_rounds_multi",
];

/// Plain notation for moderate magnitudes, scientific beyond.
pub fn format_magnitude(x: f64) -> String {
    if !x.is_finite() {
        "inf".to_string()
    } else if x.abs() < 1e7 {
        format!("{x:.2}")
    } else {
        format!("{x:.3e}")
    }
}

/// Writes forecasts as a table-shaped CSV.
pub fn write_forecast_csv<W: std::io::Write>(writer: W, rows: &[AttackForecast]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FORECAST_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            format!("{:.4}", r.adversary_fraction),
            format!("{:.4}", r.mu),
            format!("{:.4}", 1.0 - r.mu),
            format!("{:.4}", r.p_target),
            format!("{:.4}", r.p_alpha),
            format_magnitude(r.expected_rounds),
            format_magnitude(r.stddev_rounds),
            r.num_targets.to_string(),
            format_magnitude(r.expected_rounds_multi),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_full_support_and_degenerate() {
        for p in [0.0, 0.1, 0.5, 0.93, 1.0] {
            assert_eq!(binom_cdf(20, 20, p).unwrap(), 1.0);
        }
        for x in 0..=20 {
            assert_eq!(binom_cdf(x, 20, 0.0).unwrap(), 1.0);
        }
        assert_eq!(binom_cdf(19, 20, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn cdf_rejects_domain_violations() {
        assert!(binom_cdf(21, 20, 0.5).is_err());
        assert!(binom_cdf(3, 20, -0.1).is_err());
        assert!(binom_cdf(3, 20, 1.1).is_err());
        assert!(binom_cdf(3, 20, f64::NAN).is_err());
        assert!(alpha_majority_prob(20, 0, 0.5).is_err());
        assert!(alpha_majority_prob(20, 21, 0.5).is_err());
    }

    #[test]
    fn quoted_tail_values() {
        let low = 1.0 - binom_cdf(14, 20, 0.4858).unwrap();
        assert!((low - 0.015).abs() < 1e-3, "{low}");
        let high = alpha_majority_prob(20, 15, 0.7858).unwrap();
        assert!((high - 0.756).abs() < 1e-3, "{high}");
        assert_eq!(alpha_majority_prob(20, 15, 1.0).unwrap(), 1.0);
        assert_eq!(alpha_majority_prob(20, 15, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn success_probabilities() {
        assert!((targeted_success_prob(0.694, 0.3) - 0.7858).abs() < 1e-12);
        assert_eq!(targeted_success_prob(0.42, 0.0), 0.42);
        assert!((targeted_success_prob(0.648, 0.25) - 0.736).abs() < 1e-12);
        assert!((non_target_success_prob(0.648, 0.25) - 0.486).abs() < 1e-12);
    }

    #[test]
    fn expected_trials_edges() {
        assert_eq!(expected_trials(1.0, 20).unwrap(), 20.0);
        assert_eq!(expected_trials(0.0, 20).unwrap(), f64::INFINITY);
        assert!((expected_trials(0.5, 3).unwrap() - 14.0).abs() < 1e-9);
        assert!((expected_trials(0.5, 1).unwrap() - 2.0).abs() < 1e-12);
        assert!(expected_trials(1.5, 3).is_err());
        assert!(expected_trials(0.5, 0).is_err());
        assert_eq!(stddev_trials(1.0, 20).unwrap(), 0.0);
        assert_eq!(stddev_trials(0.0, 20).unwrap(), f64::INFINITY);
    }

    #[test]
    fn geometric_special_case() {
        // beta = 1 is a geometric waiting time: mean 1/p, variance q/p^2
        let p = 0.3;
        assert!((expected_trials(p, 1).unwrap() - 1.0 / p).abs() < 1e-12);
        let sd = ((1.0 - p) / (p * p)).sqrt();
        assert!((stddev_trials(p, 1).unwrap() - sd).abs() < 1e-12);
    }

    #[test]
    fn table_scale_magnitudes_stay_finite() {
        let e = expected_trials(0.043, 20).unwrap();
        assert!(e.is_finite() && e > 1e27 && e < 3e27, "{e}");
        let s = stddev_trials(0.101, 20).unwrap();
        assert!(s.is_finite() && s > 9.0e19 && s < 9.3e19, "{s}");
    }

    #[test]
    fn multi_target() {
        assert!((multi_target_expected(245_562.0, 1000, 20).unwrap() - 265.0).abs() < 1.0);
        assert_eq!(multi_target_expected(1234.0, 1, 20).unwrap(), 1234.0);
        assert!((multi_target_expected(1095.0, 1000, 20).unwrap() - 20.0).abs() < 0.1);
        assert!(multi_target_expected(1095.0, 0, 20).is_err());
        assert_eq!(multi_target_expected(f64::INFINITY, 10, 20).unwrap(), f64::INFINITY);
    }

    #[test]
    fn stable_split_values() {
        assert!((stable_split(0.30, 0.486).unwrap() - 0.694).abs() < 5e-4);
        assert!((stable_split(0.05, 0.486).unwrap() - 0.512).abs() < 5e-4);
        assert_eq!(stable_split(0.0, 0.486).unwrap(), 0.486);
        assert!(stable_split(0.6, 0.486).is_err());
        assert!(stable_split(1.0, 0.486).is_err());
        assert!(stable_split(0.2, 0.0).is_err());
    }

    #[test]
    fn forecast_csv_shape() {
        let p = ProtocolParams::default();
        let rows: Vec<_> = [0.3, 0.05]
            .iter()
            .map(|&phi| predict_table_row(phi, &p, 1000, 0.486).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_forecast_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("adversary_fraction,honest_red"));
        assert!(lines[1].starts_with("0.3000,0.6943,0.3057,0.7860,0.7561,1094.83,"));
        assert!(lines[2].contains("e27"));
    }
}
