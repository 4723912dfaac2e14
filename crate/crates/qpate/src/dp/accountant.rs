//! Moments accountant for the label-query history.
//!
//! Each noisy-argmax query over Lap(1/gamma) noise is treated as a
//! (2*gamma, 0)-DP release; its lambda-th log-moment is bounded by
//! 2 gamma^2 lambda (lambda + 1). The ledger accumulates that bound per
//! tracked order and converts the history to a certified epsilon at a fixed
//! delta, capped by the plain composition bound 2 gamma Q.

use crate::error::{Error, Result};

/// Highest tracked moment order; beyond this the ln(1/delta)/lambda overhead
/// is negligible at the noise levels in play.
pub const MAX_MOMENT_ORDER: usize = 64;

/// Query history and moment accumulators for one training run.
#[derive(Debug, Clone)]
pub struct PrivacyLedger {
    gamma: f64,
    delta: f64,
    query_count: u64,
    moments: Vec<f64>,
}

impl PrivacyLedger {
    pub fn new(gamma: f64, delta: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::Usage(format!(
                "privacy parameter gamma must be positive, got {gamma}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Usage(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(PrivacyLedger {
            gamma,
            delta,
            query_count: 0,
            moments: vec![0.0; MAX_MOMENT_ORDER],
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn query_count(&self) -> u64 {
        self.query_count
    }

    pub fn moments(&self) -> &[f64] {
        &self.moments
    }

    /// Charges one label query: every tracked order lambda accumulates the
    /// per-query bound 2 gamma^2 lambda (lambda + 1).
    pub fn record_query(&mut self) {
        let g2 = self.gamma * self.gamma;
        for (i, m) in self.moments.iter_mut().enumerate() {
            let lambda = (i + 1) as f64;
            *m += 2.0 * g2 * lambda * (lambda + 1.0);
        }
        self.query_count += 1;
    }

    fn moments_bound(&self) -> f64 {
        let log_inv_delta = (1.0 / self.delta).ln();
        (1..=MAX_MOMENT_ORDER)
            .map(|l| (self.moments[l - 1] + log_inv_delta) / l as f64)
            .fold(f64::INFINITY, f64::min)
    }

    fn composition_bound(&self) -> f64 {
        if self.query_count == 0 {
            return 0.0;
        }
        2.0 * self.gamma * self.query_count as f64
    }

    /// Certified epsilon at the ledger's delta: the smaller of the moments
    /// bound min_lambda (sum_alpha(lambda) + ln(1/delta)) / lambda and the
    /// plain composition bound 2 gamma Q.
    pub fn epsilon(&self) -> f64 {
        self.moments_bound().min(self.composition_bound())
    }

    /// Human-readable accounting report embedded in run outputs.
    pub fn report(&self) -> String {
        let mut s = String::new();
        s.push_str("privacy ledger\n");
        s.push_str(&format!("  gamma        = {:e}\n", self.gamma));
        s.push_str(&format!("  noise scale  = {:e}\n", 1.0 / self.gamma));
        s.push_str(&format!("  delta        = {:e}\n", self.delta));
        s.push_str(&format!("  queries      = {}\n", self.query_count));
        s.push_str(&format!("  moments bound     = {:e}\n", self.moments_bound()));
        s.push_str(&format!("  composition bound = {:e}\n", self.composition_bound()));
        s.push_str(&format!("  epsilon      = {:e}\n", self.epsilon()));
        s.push_str("  per-lambda accumulated moments:\n");
        for (i, m) in self.moments.iter().enumerate() {
            s.push_str(&format!("    lambda {:>2}: {:e}\n", i + 1, m));
        }
        s
    }
}

/// Largest gamma whose certified epsilon over `queries` label queries stays at
/// or below the target, found by bisection; epsilon is monotone in gamma so
/// the bracket always converges. Relative slack on the returned gamma is 1e-6.
pub fn solve_gamma(target_epsilon: f64, queries: u64, delta: f64) -> Result<f64> {
    if !(target_epsilon > 0.0) {
        return Err(Error::Usage(format!(
            "target epsilon must be positive, got {target_epsilon}"
        )));
    }
    let epsilon_at = |gamma: f64| -> Result<f64> {
        let mut ledger = PrivacyLedger::new(gamma, delta)?;
        for _ in 0..queries {
            ledger.record_query();
        }
        Ok(ledger.epsilon())
    };

    if queries == 0 {
        // No queries cost nothing; any noise level certifies.
        return Ok(f64::INFINITY);
    }

    let mut lo = 1e-300;
    if epsilon_at(lo)? > target_epsilon {
        let floor = (1.0 / delta).ln() / MAX_MOMENT_ORDER as f64;
        return Err(Error::Accounting(format!(
            "target epsilon {target_epsilon} is unreachable; the accountant floor is \
             ln(1/delta)/{MAX_MOMENT_ORDER} = {floor:e}"
        )));
    }
    let mut hi = 1.0;
    while epsilon_at(hi)? <= target_epsilon {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(lo);
        }
    }
    while (hi - lo) / hi > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if epsilon_at(mid)? <= target_epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Direct evaluation of both bounds, kept separate from the ledger.
    fn epsilon_reference(gamma: f64, queries: u64, delta: f64) -> f64 {
        let mut best = f64::INFINITY;
        for l in 1..=MAX_MOMENT_ORDER {
            let lambda = l as f64;
            let total = queries as f64 * 2.0 * gamma * gamma * lambda * (lambda + 1.0);
            best = best.min((total + (1.0 / delta).ln()) / lambda);
        }
        let comp = 2.0 * gamma * queries as f64;
        best.min(comp)
    }

    #[test]
    fn empty_ledger_certifies_zero_epsilon() {
        let ledger = PrivacyLedger::new(0.1, 1e-5).unwrap();
        assert_eq!(ledger.query_count(), 0);
        assert_eq!(ledger.epsilon(), 0.0);
    }

    #[test]
    fn single_query_moment_matches_formula() {
        let mut ledger = PrivacyLedger::new(0.1, 1e-5).unwrap();
        ledger.record_query();
        // lambda = 1: 2 * 0.01 * 1 * 2 = 0.04
        assert_relative_eq!(ledger.moments()[0], 0.04, epsilon = 1e-15);
        assert_eq!(ledger.query_count(), 1);
    }

    #[test]
    fn thousand_queries_match_direct_minimization() {
        let mut ledger = PrivacyLedger::new(0.05, 1e-5).unwrap();
        for _ in 0..1000 {
            ledger.record_query();
        }
        let expected = epsilon_reference(0.05, 1000, 1e-5);
        assert_relative_eq!(ledger.epsilon(), expected, epsilon = 1e-9);
        // Cross-check against plain composition: 2 gamma Q = 100.
        assert!(ledger.epsilon() <= 100.0);
    }

    #[test]
    fn dual_bound_example_at_gamma_002() {
        let mut ledger = PrivacyLedger::new(0.02, 1e-5).unwrap();
        for _ in 0..1000 {
            ledger.record_query();
        }
        let expected = epsilon_reference(0.02, 1000, 1e-5);
        assert_relative_eq!(ledger.epsilon(), expected, epsilon = 1e-9);
        assert!(ledger.epsilon() < 2.0 * 0.02 * 1000.0);
    }

    #[test]
    fn single_query_respects_composition_bound() {
        let mut ledger = PrivacyLedger::new(0.05, 1e-5).unwrap();
        ledger.record_query();
        assert!(ledger.epsilon() <= 0.1 + 1e-12);
    }

    #[test]
    fn epsilon_is_monotone_in_queries() {
        let mut ledger = PrivacyLedger::new(0.03, 1e-5).unwrap();
        let mut prev = ledger.epsilon();
        for _ in 0..2000 {
            ledger.record_query();
            let e = ledger.epsilon();
            assert!(e >= prev);
            prev = e;
        }
    }

    #[test]
    fn solve_gamma_round_trips_below_target() {
        for &target in &[0.01, 0.1, 1.0, 10.0] {
            for &q in &[100u64, 1000] {
                let gamma = solve_gamma(target, q, 1e-5).unwrap();
                assert!(gamma > 0.0);
                let mut ledger = PrivacyLedger::new(gamma, 1e-5).unwrap();
                for _ in 0..q {
                    ledger.record_query();
                }
                assert!(
                    ledger.epsilon() <= target,
                    "eps {} exceeds target {target} at q {q}",
                    ledger.epsilon()
                );
            }
        }
    }

    #[test]
    fn solve_gamma_matches_composition_limit_for_large_targets() {
        // With a large target and few queries the plain composition bound
        // binds, so gamma is about target / (2 Q).
        let target = 50.0;
        let q = 10u64;
        let gamma = solve_gamma(target, q, 1e-5).unwrap();
        assert_relative_eq!(gamma, target / (2.0 * q as f64), max_relative = 1e-5);
    }

    #[test]
    fn solve_gamma_rejects_nonpositive_target() {
        assert!(solve_gamma(0.0, 100, 1e-5).is_err());
        assert!(solve_gamma(-1.0, 100, 1e-5).is_err());
    }

    #[test]
    fn ledger_validates_inputs() {
        assert!(PrivacyLedger::new(0.0, 1e-5).is_err());
        assert!(PrivacyLedger::new(0.1, 0.0).is_err());
        assert!(PrivacyLedger::new(0.1, 1.0).is_err());
    }

    #[test]
    fn report_carries_the_headline_numbers() {
        let mut ledger = PrivacyLedger::new(0.5, 1e-5).unwrap();
        ledger.record_query();
        let report = ledger.report();
        assert!(report.contains("queries      = 1"));
        assert!(report.contains("lambda 64"));
    }
}

#[cfg(test)]
mod property_tests {
    use super::*;
    use proptest::prelude::*;

    fn epsilon_of(gamma: f64, queries: u64, delta: f64) -> f64 {
        let mut ledger = PrivacyLedger::new(gamma, delta).unwrap();
        for _ in 0..queries {
            ledger.record_query();
        }
        ledger.epsilon()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn epsilon_never_exceeds_plain_composition(
            gamma in 1e-6f64..10.0,
            queries in 0u64..5000,
        ) {
            let eps = epsilon_of(gamma, queries, 1e-5);
            prop_assert!(eps <= 2.0 * gamma * queries as f64 + 1e-12);
        }

        #[test]
        fn epsilon_is_monotone_in_gamma(
            gamma in 1e-6f64..1.0,
            factor in 1.0f64..10.0,
            queries in 1u64..2000,
        ) {
            let lo = epsilon_of(gamma, queries, 1e-5);
            let hi = epsilon_of(gamma * factor, queries, 1e-5);
            prop_assert!(hi >= lo - 1e-12);
        }

        #[test]
        fn epsilon_is_monotone_in_queries(
            gamma in 1e-6f64..1.0,
            queries in 1u64..2000,
            extra in 1u64..2000,
        ) {
            let lo = epsilon_of(gamma, queries, 1e-5);
            let hi = epsilon_of(gamma, queries + extra, 1e-5);
            prop_assert!(hi >= lo - 1e-12);
        }

        #[test]
        fn solved_gamma_certifies_its_target(
            target in 1e-3f64..50.0,
            queries in 1u64..2000,
        ) {
            let gamma = solve_gamma(target, queries, 1e-5).unwrap();
            prop_assert!(epsilon_of(gamma, queries, 1e-5) <= target);
        }
    }
}
