//! Privacy accounting: from an aggregate `(eps_agg, delta)` target over `T`
//! rounds to the per-round local epsilon each device uses.
//!
//! Per round, the local epsilon is first amplified by Poisson subsampling (if
//! the sampling rate is below one), then by shuffling among the expected
//! cohort, and the rounds are combined with advanced composition. The local
//! epsilon is the largest value that keeps the composed guarantee within
//! budget, found by bisection.

use crate::error::{Error, Result};

pub const SEARCH_LOW: f64 = 1e-4;
pub const SEARCH_HIGH: f64 = 64.0;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// Name of the closed-form shuffle bound reported in results.
pub const SHUFFLE_BOUND: &str = "closed-form-shuffle+advanced-composition";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyBudget {
    pub epsilon_agg: f64,
    pub delta: f64,
    pub rounds: usize,
    pub n_devices: u64,
    pub sampling_rate: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon_agg: f64, delta: f64, rounds: usize, n_devices: u64) -> Result<Self> {
        Self {
            epsilon_agg,
            delta,
            rounds,
            n_devices,
            sampling_rate: 1.0,
        }
        .validated()
    }

    pub fn with_sampling_rate(mut self, gamma: f64) -> Result<Self> {
        self.sampling_rate = gamma;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.epsilon_agg > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon_agg must be positive, got {}", self.epsilon_agg)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.rounds == 0 || self.n_devices == 0 {
            return Err(Error::InvalidParameter("rounds and n_devices must be at least 1".into()));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sampling rate must lie in (0, 1], got {}",
                self.sampling_rate
            )));
        }
        Ok(self)
    }

    /// Human-readable caveats, e.g. delta not below 1/N.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.delta >= 1.0 / self.n_devices as f64 {
            w.push(format!(
                "delta = {} is not below 1/N = {}",
                self.delta,
                1.0 / self.n_devices as f64
            ));
        }
        w
    }

    pub fn delta_round(&self) -> f64 {
        self.delta / (2.0 * self.rounds as f64)
    }

    pub fn delta_slack(&self) -> f64 {
        self.delta / 2.0
    }

    /// Expected cohort size per round.
    pub fn effective_n(&self) -> u64 {
        ((self.sampling_rate * self.n_devices as f64).round() as u64).max(1)
    }

    /// Same budget spread over `rounds` rounds.
    pub fn with_rounds(mut self, rounds: usize) -> Self {
        self.rounds = rounds;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shuffled {
    pub epsilon: f64,
    /// False when the local epsilon is outside the bound's validity range and
    /// was returned unamplified.
    pub amplified: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccountantResult {
    pub epsilon_local: f64,
    pub achieved_epsilon_agg: f64,
    pub achieved_delta: f64,
    pub epsilon_round: f64,
    pub amplified: bool,
    pub bound_name: &'static str,
}

/// Closed-form privacy amplification by shuffling `n` reports of an
/// `eps_l`-DP local randomizer.
pub fn amplify_shuffle(epsilon_local: f64, delta_round: f64, n: u64) -> Result<Shuffled> {
    if n == 0 {
        return Err(Error::InvalidParameter("shuffle amplification needs n >= 1".into()));
    }
    let nf = n as f64;
    let limit = (nf / (16.0 * (2.0 / delta_round).ln())).ln();
    if epsilon_local > limit {
        return Ok(Shuffled {
            epsilon: epsilon_local,
            amplified: false,
        });
    }
    let e = epsilon_local.exp();
    let factor = 4.0 * (2.0 * (4.0 / delta_round).ln()).sqrt() / ((e + 1.0) * nf).sqrt() + 4.0 / nf;
    Ok(Shuffled {
        epsilon: (e - 1.0).mul_add(factor, 1.0).ln().min(epsilon_local),
        amplified: true,
    })
}

/// Advanced composition of `rounds` `(eps, delta_round)` mechanisms.
pub fn compose_advanced(epsilon_round: f64, delta_round: f64, rounds: usize, delta_slack: f64) -> (f64, f64) {
    let t = rounds as f64;
    let basic = t * epsilon_round;
    let advanced = (2.0 * t * (1.0 / delta_slack).ln()).sqrt() * epsilon_round
        + t * epsilon_round * epsilon_round.exp_m1();
    (basic.min(advanced), t * delta_round + delta_slack)
}

/// Amplification by Poisson subsampling at rate `gamma`.
pub fn amplify_subsample(epsilon: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidParameter(format!("sampling rate must lie in (0, 1], got {gamma}")));
    }
    if gamma == 1.0 {
        return Ok(epsilon);
    }
    Ok((gamma * epsilon.exp_m1()).ln_1p())
}

/// Per-round central epsilon of one round at local epsilon `eps_l`.
pub fn round_epsilon(budget: &PrivacyBudget, epsilon_local: f64) -> Result<Shuffled> {
    let sub = amplify_subsample(epsilon_local, budget.sampling_rate)?;
    amplify_shuffle(sub, budget.delta_round(), budget.effective_n())
}

/// Composed `(eps, delta)` over all rounds at local epsilon `eps_l`.
pub fn achieved(budget: &PrivacyBudget, epsilon_local: f64) -> Result<(f64, f64, Shuffled)> {
    let round = round_epsilon(budget, epsilon_local)?;
    let (eps, delta) = compose_advanced(round.epsilon, budget.delta_round(), budget.rounds, budget.delta_slack());
    Ok((eps, delta, round))
}

/// Largest local epsilon in `[SEARCH_LOW, SEARCH_HIGH]` whose composed
/// guarantee stays within `budget.epsilon_agg`, to within `tolerance`.
pub fn solve_local_epsilon(budget: &PrivacyBudget, tolerance: f64) -> Result<AccountantResult> {
    let budget = budget.validated()?;
    if !(tolerance > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tolerance}")));
    }
    let fits = |eps: f64| -> Result<bool> { Ok(achieved(&budget, eps)?.0 <= budget.epsilon_agg) };
    let (floor_eps, ..) = achieved(&budget, SEARCH_LOW)?;
    if floor_eps > budget.epsilon_agg {
        return Err(Error::BudgetTooTight {
            floor: floor_eps,
            target: budget.epsilon_agg,
        });
    }
    let (mut lo, mut hi) = (SEARCH_LOW, SEARCH_HIGH);
    if fits(hi)? {
        lo = hi;
    } else {
        while hi - lo > tolerance {
            let mid = 0.5 * (lo + hi);
            if fits(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let (eps, delta, round) = achieved(&budget, lo)?;
    Ok(AccountantResult {
        epsilon_local: lo,
        achieved_epsilon_agg: eps,
        achieved_delta: delta,
        epsilon_round: round.epsilon,
        amplified: round.amplified,
        bound_name: SHUFFLE_BOUND,
    })
}

/// Largest per-round epsilon whose advanced composition over `rounds`
/// rounds stays within `epsilon_total`.
pub fn invert_advanced(epsilon_total: f64, rounds: usize, delta_slack: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, epsilon_total);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if compose_advanced(mid, 0.0, rounds, delta_slack).0 <= epsilon_total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
