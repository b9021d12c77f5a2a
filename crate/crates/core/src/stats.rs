//! Evaluable forms of the probabilistic tools used across the crate:
//! lower-tail Chernoff, reverse Markov, the Azuma-style submartingale bound,
//! and Hoeffding sample-size / confidence-interval helpers.
//!
//! The exponential bounds use natural logs, exactly as the formulas are
//! written; parameter schedules elsewhere in the crate use log base 2.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("parameter out of range: {0}")]
    Range(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0 < v && v < 1.0) {
        return Err(StatsError::Range(format!("{name}={v} not in (0, 1)")));
    }
    Ok(())
}

/// `Pr[X <= (1-delta) * np] <= exp(-delta^2 * np / 2)` for a sum of `n`
/// independent Bernoulli(p) variables.
pub fn chernoff_lower_tail(n: u64, p: f64, delta: f64) -> Result<f64> {
    if n == 0 {
        return Err(StatsError::Range("n must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(StatsError::Range(format!("p={p} not in [0, 1]")));
    }
    check_open_unit("delta", delta)?;
    let mu = n as f64 * p;
    Ok((-delta * delta * mu / 2.0).exp())
}

/// `Pr[X > p] >= (E[X] - p) / (1 - p)` for `X` in `[0, 1]` and `p < E[X]`.
pub fn reverse_markov(mean: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&mean) {
        return Err(StatsError::Range(format!("mean={mean} not in [0, 1]")));
    }
    if !(0.0 <= p && p < mean) {
        return Err(StatsError::Range(format!(
            "need 0 <= p < mean, got p={p}, mean={mean}"
        )));
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    Ok((mean - p) / (1.0 - p))
}

/// Submartingale lower-tail bound: for increments in `[0, 1]` with conditional
/// mean at least `mu`, `Pr[Z_steps < (1-eta) * steps * mu] < exp(-eta^2 * mu *
/// steps / 2)`.
pub fn azuma_bound(mu: f64, eta: f64, steps: u64) -> Result<f64> {
    check_open_unit("mu", mu)?;
    check_open_unit("eta", eta)?;
    if steps == 0 {
        return Err(StatsError::Range("steps must be >= 1".into()));
    }
    Ok((-eta * eta * mu * steps as f64 / 2.0).exp())
}

/// Smallest `n` with `2 * exp(-2 n eps^2) <= 1 - confidence` (two-sided
/// Hoeffding inversion).
pub fn sample_size(eps: f64, confidence: f64) -> Result<u64> {
    check_open_unit("eps", eps)?;
    check_open_unit("confidence", confidence)?;
    let alpha = 1.0 - confidence;
    let n = ((2.0 / alpha).ln() / (2.0 * eps * eps)).ceil();
    Ok(n as u64)
}

/// Two-sided Hoeffding half-width for `trials` samples at the given
/// confidence level.
pub fn hoeffding_halfwidth(trials: u64, confidence: f64) -> Result<f64> {
    if trials == 0 {
        return Err(StatsError::Range("trials must be >= 1".into()));
    }
    check_open_unit("confidence", confidence)?;
    let alpha = 1.0 - confidence;
    Ok(((2.0 / alpha).ln() / (2.0 * trials as f64)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chernoff_formula() {
        let b = chernoff_lower_tail(100, 0.5, 1.0 - 1e-12).unwrap();
        assert!((b - (-25.0f64).exp()).abs() < 1e-12);
        // delta -> 0 pushes the bound to 1
        assert!(chernoff_lower_tail(100, 0.5, 1e-9).unwrap() > 0.999_999);
        assert!(chernoff_lower_tail(0, 0.5, 0.1).is_err());
    }

    #[test]
    fn chernoff_dominates_empirical_tail() {
        let n = 1000u64;
        let p = 0.5;
        let delta = 0.2;
        let bound = chernoff_lower_tail(n, p, delta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples = 100_000;
        let threshold = (1.0 - delta) * n as f64 * p;
        let mut hits = 0u64;
        for _ in 0..samples {
            let x: u32 = (0..n).map(|_| rng.random_bool(p) as u32).sum();
            if (x as f64) <= threshold {
                hits += 1;
            }
        }
        assert!(hits as f64 / samples as f64 <= bound);
    }

    #[test]
    fn reverse_markov_formula() {
        assert_eq!(reverse_markov(0.5, 0.0).unwrap(), 0.5);
        assert_eq!(reverse_markov(1.0, 0.0).unwrap(), 1.0);
        // the step-1b threshold quantity (gamma/2)/(1 - gamma/2)
        let gamma: f64 = 0.25;
        let v = reverse_markov(gamma, gamma / 2.0).unwrap();
        assert!((v - (gamma / 2.0) / (1.0 - gamma / 2.0)).abs() < 1e-15);
        assert!(reverse_markov(0.3, 0.5).is_err());
    }

    #[test]
    fn azuma_formula() {
        // eta = 1/2 needs mu*steps = 8 ln(1/delta) to reach delta; a bit more
        // pushes strictly below
        let delta: f64 = 0.05;
        let steps = 1000u64;
        let mu = 9.0 * (1.0 / delta).ln() / steps as f64;
        let bound = azuma_bound(mu, 0.5, steps).unwrap();
        assert!(bound < delta);
        assert!(azuma_bound(0.5, 1e-12, 10).unwrap() > 0.999_999);
        assert!(azuma_bound(0.5, 0.5, 0).is_err());
    }

    #[test]
    fn sample_size_formula() {
        let n = sample_size(0.01, 1.0 - 1e-6).unwrap();
        let expected = ((2.0e6f64).ln() / 2e-4).ceil() as u64;
        assert_eq!(n, expected);
        assert_eq!(sample_size(0.5, 1.0 - 1e-6).unwrap(), 30);
    }

    #[test]
    fn bounds_monotone_in_deviation() {
        let mut prev = f64::INFINITY;
        for k in 1..10 {
            let delta = k as f64 / 10.0;
            let b = chernoff_lower_tail(100, 0.5, delta).unwrap();
            assert!(b < prev);
            prev = b;
        }
        let mut prev = f64::INFINITY;
        for k in 1..10 {
            let eta = k as f64 / 10.0;
            let b = azuma_bound(0.3, eta, 50).unwrap();
            assert!(b < prev);
            prev = b;
        }
    }
}
