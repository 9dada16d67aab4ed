//! Comparison methods on the same prefix tree: sampling-and-threshold tries
//! (TrieHH and TrieHH++) and trees released with central Laplace or Gaussian
//! noise.
//!
//! All of them reuse the engine's tree growth, device selection and
//! segmentation; only the per-round release step differs.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use crate::accountant::{compose_advanced, invert_advanced};
use crate::device::DeviceDataset;
use crate::encoding::Codebook;
use crate::engine::{grow_tree, prepare, RoundDecision, RoundInput, RoundRule, RunConfig, RunResult, TreeParams};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::server::prune;

/// L1 sensitivity of a one-report-per-device histogram under replacement:
/// one coordinate loses a count and another gains one.
pub const L1_SENSITIVITY: f64 = 2.0;
/// L2 sensitivity of the same histogram.
pub const L2_SENSITIVITY: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrieHHConfig {
    /// Votes a prefix needs to survive.
    pub theta: u64,
    /// Probability that a device takes part in a round.
    pub sampling_rate: f64,
}

struct VoteRule {
    theta: u64,
    rate: f64,
}

impl RoundRule for VoteRule {
    fn decide(&mut self, input: &RoundInput<'_>) -> Result<RoundDecision> {
        let m = input.plan.domain_size();
        let h = &input.histogram[..m];
        let mut kept: Vec<usize> = (0..m).filter(|&i| h[i] >= self.theta).collect();
        kept.sort_unstable_by(|&a, &b| h[b].cmp(&h[a]).then(a.cmp(&b)));
        Ok(RoundDecision {
            estimates: kept.iter().map(|&i| h[i] as f64 / self.rate).collect(),
            kept,
            tau: self.theta as f64,
            e: 0.0,
            sampled_aggregation: false,
        })
    }
}

fn tree_params<'a>(base: &'a RunConfig, participation: f64) -> TreeParams<'a> {
    TreeParams {
        rounds: base.rounds,
        dimension_limit: base.dimension_limit,
        r: base.r,
        selection: base.selection,
        segmentation: base.segmentation,
        participation,
        deny_list: &base.deny_list,
        seed: base.seed,
        round_offset: 0,
    }
}

/// Sampling-and-threshold trie: each round every device votes its extended
/// prefix in the clear with probability `sampling_rate`, and prefixes with
/// at least `theta` votes survive. Used for both TrieHH and TrieHH++; they
/// differ only in how the rate is calibrated.
pub fn run_triehh(dataset: &[DeviceDataset], codebook: Option<&Codebook>, base: &RunConfig, cfg: &TrieHHConfig) -> Result<RunResult> {
    if cfg.theta == 0 {
        return Err(Error::InvalidParameter("theta must be at least 1".into()));
    }
    if !(cfg.sampling_rate > 0.0 && cfg.sampling_rate <= 1.0) {
        return Err(Error::InvalidParameter(format!("sampling rate must lie in (0, 1], got {}", cfg.sampling_rate)));
    }
    base.validate()?;
    let devices = prepare(dataset, base);
    let mut rule = VoteRule {
        theta: cfg.theta,
        rate: cfg.sampling_rate,
    };
    let out = grow_tree(&devices, codebook, &tree_params(base, cfg.sampling_rate), &mut rule)?;
    Ok(RunResult {
        heavy_hitters: out.heavy_hitters,
        per_round: out.per_round,
        epsilon_local: None,
        accountant: None,
        terminated_early: out.terminated_early,
    })
}

fn c_alpha(alpha: f64) -> f64 {
    (1.0 / alpha).ln() - 1.0 / (1.0 + alpha)
}

/// The `alpha` in (0, 1] with `exp(-C_alpha * theta) = delta`, where
/// `C_alpha = ln(1/alpha) - 1/(1 + alpha)`.
pub fn triehhpp_alpha(theta: f64, delta: f64) -> Result<f64> {
    let target = (1.0 / delta).ln() / theta;
    if !(theta > 0.0) || !(delta > 0.0 && delta < 1.0) || !(target >= c_alpha(1.0)) {
        return Err(Error::InfeasibleTheta { theta, delta });
    }
    // C_alpha falls from +inf at 0 to -1/2 at 1.
    let (mut lo, mut hi) = (f64::MIN_POSITIVE, 1.0);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if c_alpha(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sampling rate `alpha * (1 - e^-eps)` for a per-round epsilon below one.
pub fn triehhpp_sampling_rate(epsilon_round: f64, theta: f64, delta: f64) -> Result<f64> {
    if !(epsilon_round > 0.0 && epsilon_round < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "per-round epsilon must lie in (0, 1), got {epsilon_round}"
        )));
    }
    Ok(triehhpp_alpha(theta, delta)? * -(-epsilon_round).exp_m1())
}

/// Per-round `(epsilon, delta)` for `rounds` rounds within
/// `(epsilon_agg, delta)`: the better of basic composition, which spends
/// `delta / T` per round, and advanced composition with half of `delta` as
/// slack and `delta / 2T` per round. "Better" is the one allowing the larger
/// sampling rate at `theta`.
pub fn triehhpp_round_budget(epsilon_agg: f64, delta: f64, rounds: usize, theta: f64) -> Result<(f64, f64)> {
    if rounds == 0 || !(epsilon_agg > 0.0) {
        return Err(Error::InvalidParameter("rounds and epsilon_agg must be positive".into()));
    }
    let t = rounds as f64;
    let basic = (epsilon_agg / t, delta / t);
    let advanced = (invert_advanced(epsilon_agg, rounds, delta / 2.0), delta / (2.0 * t));
    let rate = |(e, d): (f64, f64)| triehhpp_sampling_rate(e.min(1.0 - 1e-12), theta, d);
    Ok(if rate(advanced)? > rate(basic)? { advanced } else { basic })
}

/// TrieHH++ sampling rate for an aggregate budget over `rounds` rounds.
pub fn triehhpp_rate(epsilon_agg: f64, delta: f64, rounds: usize, theta: f64) -> Result<f64> {
    let (e, d) = triehhpp_round_budget(epsilon_agg, delta, rounds, theta)?;
    triehhpp_sampling_rate(e.min(1.0 - 1e-12), theta, d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CentralNoise {
    Laplace,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CentralNoiseConfig {
    pub noise: CentralNoise,
    /// Laplace scale `b`, or Gaussian standard deviation.
    pub scale: f64,
    /// L1 (Laplace) or L2 (Gaussian) sensitivity of one round's histogram.
    pub sensitivity: f64,
}

impl CentralNoiseConfig {
    pub fn laplace(scale: f64) -> Self {
        Self {
            noise: CentralNoise::Laplace,
            scale,
            sensitivity: L1_SENSITIVITY,
        }
    }

    pub fn gaussian(scale: f64) -> Self {
        Self {
            noise: CentralNoise::Gaussian,
            scale,
            sensitivity: L2_SENSITIVITY,
        }
    }

    /// Standard deviation of one coordinate's noise.
    pub fn noise_std(&self) -> f64 {
        match self.noise {
            CentralNoise::Laplace => self.scale * std::f64::consts::SQRT_2,
            CentralNoise::Gaussian => self.scale,
        }
    }

    /// Pure-DP epsilon of one Laplace round, `sensitivity / b`.
    pub fn laplace_round_epsilon(&self) -> f64 {
        self.sensitivity / self.scale
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self.noise {
            CentralNoise::Laplace => {
                let a: f64 = Exp1.sample(rng);
                let b: f64 = Exp1.sample(rng);
                self.scale * (a - b)
            }
            CentralNoise::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                self.scale * z
            }
        }
    }
}

const NOISE_CHUNK: usize = 1 << 16;

struct CentralRule {
    noise: CentralNoiseConfig,
    prune: crate::server::PruneConfig,
}

impl RoundRule for CentralRule {
    fn decide(&mut self, input: &RoundInput<'_>) -> Result<RoundDecision> {
        let m = input.plan.domain_size();
        let mut noisy: Vec<f64> = input.histogram[..m].iter().map(|&h| h as f64).collect();
        let noise = self.noise;
        noisy.par_chunks_mut(NOISE_CHUNK).enumerate().for_each(|(c, chunk)| {
            let mut rng = stream(input.seed, u64::MAX - c as u64, input.round as u64, Purpose::Noise);
            for v in chunk {
                *v += noise.sample(&mut rng);
            }
        });
        let outcome = prune(&noisy, noise.noise_std(), m, &self.prune);
        Ok(RoundDecision {
            estimates: outcome.kept.iter().map(|&i| noisy[i]).collect(),
            kept: outcome.kept,
            tau: outcome.tau,
            e: outcome.e,
            sampled_aggregation: false,
        })
    }
}

/// Trusted-curator tree: exact per-round histograms of the selected prefixes
/// plus i.i.d. noise on every coordinate, pruned with the noise standard
/// deviation.
pub fn run_central(
    dataset: &[DeviceDataset],
    codebook: Option<&Codebook>,
    base: &RunConfig,
    noise: &CentralNoiseConfig,
) -> Result<RunResult> {
    if !(noise.scale > 0.0) {
        return Err(Error::InvalidParameter(format!("noise scale must be positive, got {}", noise.scale)));
    }
    base.validate()?;
    let devices = prepare(dataset, base);
    let mut rule = CentralRule {
        noise: *noise,
        prune: base.prune,
    };
    let out = grow_tree(&devices, codebook, &tree_params(base, base.budget.sampling_rate), &mut rule)?;
    Ok(RunResult {
        heavy_hitters: out.heavy_hitters,
        per_round: out.per_round,
        epsilon_local: None,
        accountant: None,
        terminated_early: out.terminated_early,
    })
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Renyi divergence of order `alpha` between Laplace(0, b) and Laplace(1, b).
pub fn laplace_rdp_unit(alpha: f64, b: f64) -> f64 {
    let two = 2.0 * alpha - 1.0;
    let x = (alpha / two).ln() + (alpha - 1.0) / b;
    let y = ((alpha - 1.0) / two).ln() - alpha / b;
    log_sum_exp(x, y) / (alpha - 1.0)
}

/// Renyi divergence of order `alpha` for one Gaussian round.
pub fn gaussian_rdp(alpha: f64, sigma: f64, l2_sensitivity: f64) -> f64 {
    alpha * l2_sensitivity * l2_sensitivity / (2.0 * sigma * sigma)
}

fn rdp_orders() -> impl Iterator<Item = f64> {
    // Log-spaced orders from just above 1 to 4096.
    (0..=1200).map(|i| 1.0 + 10f64.powf(-3.0 + 6.6 * i as f64 / 1200.0))
}

/// Smallest `(eps, delta)`-DP epsilon implied by an RDP curve, using
/// `eps = rdp(a) + ln((a - 1)/a) - (ln delta + ln a)/(a - 1)`.
pub fn rdp_to_dp(rdp: impl Fn(f64) -> f64, delta: f64) -> f64 {
    rdp_orders()
        .map(|a| {
            let v = rdp(a) + ((a - 1.0) / a).ln() - (delta.ln() + a.ln()) / (a - 1.0);
            v.max(0.0)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Aggregate epsilon of `rounds` Laplace rounds at scale `b`: the tighter of
/// advanced composition of the pure-DP rounds and RDP composition. A round
/// changes two coordinates by one each, so its RDP is twice the unit curve.
pub fn laplace_epsilon(b: f64, rounds: usize, delta: f64) -> f64 {
    let t = rounds as f64;
    let (adv, _) = compose_advanced(L1_SENSITIVITY / b, 0.0, rounds, delta);
    let rdp = rdp_to_dp(|a| t * 2.0 * laplace_rdp_unit(a, b), delta);
    adv.min(rdp)
}

/// Aggregate epsilon of `rounds` Gaussian rounds at standard deviation `sigma`.
pub fn gaussian_epsilon(sigma: f64, rounds: usize, delta: f64) -> f64 {
    let t = rounds as f64;
    rdp_to_dp(|a| t * gaussian_rdp(a, sigma, L2_SENSITIVITY), delta)
}

fn smallest_scale(target: f64, eps_at: impl Fn(f64) -> f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::InvalidParameter(format!("target epsilon must be positive, got {target}")));
    }
    let (mut lo, mut hi) = (1e-6f64, 1e9f64);
    if eps_at(hi) > target {
        return Err(Error::BudgetTooTight {
            floor: eps_at(hi),
            target,
        });
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if eps_at(mid) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo < 1.0 + 1e-10 {
            break;
        }
    }
    Ok(hi)
}

/// Smallest Laplace scale meeting `(epsilon_agg, delta)` over `rounds`.
pub fn calibrate_laplace(epsilon_agg: f64, delta: f64, rounds: usize) -> Result<CentralNoiseConfig> {
    Ok(CentralNoiseConfig::laplace(smallest_scale(epsilon_agg, |b| {
        laplace_epsilon(b, rounds, delta)
    })?))
}

/// Smallest Gaussian standard deviation meeting `(epsilon_agg, delta)`.
pub fn calibrate_gaussian(epsilon_agg: f64, delta: f64, rounds: usize) -> Result<CentralNoiseConfig> {
    Ok(CentralNoiseConfig::gaussian(smallest_scale(epsilon_agg, |s| {
        gaussian_epsilon(s, rounds, delta)
    })?))
}

/// Sum of `n_shares` Gaussian shares of variance `sigma^2 / n_shares`: what
/// the aggregate sees when devices split the central noise between them.
pub fn distributed_gaussian(n_shares: usize, sigma: f64, rng: &mut impl Rng) -> f64 {
    let share = sigma / (n_shares as f64).sqrt();
    (0..n_shares)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            share * z
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_solver_residual() {
        for (theta, delta) in [(10.0, 1e-6), (20.0, 1e-6), (5.0, 1e-3)] {
            let a = triehhpp_alpha(theta, delta).unwrap();
            let resid = (-c_alpha(a) * theta).exp() - delta;
            assert!(resid.abs() <= 1e-12 * delta, "theta {theta}: {resid}");
        }
        assert!(triehhpp_alpha(0.0, 1e-6).is_err());
    }

    #[test]
    fn rate_grows_with_theta_and_epsilon() {
        let a = triehhpp_sampling_rate(0.05, 10.0, 1e-6).unwrap();
        let b = triehhpp_sampling_rate(0.05, 20.0, 1e-6).unwrap();
        let c = triehhpp_sampling_rate(0.10, 10.0, 1e-6).unwrap();
        assert!(b > a && c > a);
        assert!(triehhpp_sampling_rate(1.5, 10.0, 1e-6).is_err());
    }

    #[test]
    fn round_budget_composes_back() {
        for rounds in [1, 3, 12] {
            let (e, d) = triehhpp_round_budget(1.0, 1e-6, rounds, 10.0).unwrap();
            let t = rounds as f64;
            let basic = (t * e, t * d);
            let (adv, adv_d) = compose_advanced(e, d, rounds, 5e-7);
            assert!((basic.0 <= 1.0 + 1e-9 && basic.1 <= 1e-6 * (1.0 + 1e-9)) || (adv <= 1.0 + 1e-6 && adv_d <= 1e-6 * (1.0 + 1e-9)));
        }
    }

    #[test]
    fn laplace_rdp_limits() {
        // Large orders approach the pure-DP bound 1/b.
        let b = 2.0;
        assert!((laplace_rdp_unit(1e6, b) - 1.0 / b).abs() < 1e-3);
        // Small orders approach the KL divergence 1/b + e^(-1/b) - 1.
        let kl = 1.0 / b + (-1.0 / b).exp() - 1.0;
        assert!((laplace_rdp_unit(1.0 + 1e-7, b) - kl).abs() < 1e-4);
    }

    #[test]
    fn calibrated_noise_meets_its_target() {
        for rounds in [1, 4, 12] {
            let g = calibrate_gaussian(1.0, 1e-6, rounds).unwrap();
            assert!(gaussian_epsilon(g.scale, rounds, 1e-6) <= 1.0);
            assert!(gaussian_epsilon(g.scale * 0.99, rounds, 1e-6) > 1.0);
            let l = calibrate_laplace(1.0, 1e-6, rounds).unwrap();
            assert!(laplace_epsilon(l.scale, rounds, 1e-6) <= 1.0);
        }
        // One Laplace round is pure DP with eps = 2/b or better.
        let l = calibrate_laplace(1.0, 1e-6, 1).unwrap();
        assert!(l.laplace_round_epsilon() >= 1.0 - 1e-6);
    }

    #[test]
    fn laplace_noise_has_the_right_spread() {
        let cfg = CentralNoiseConfig::laplace(3.0);
        let mut rng = stream(1, 0, 0, Purpose::Noise);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| cfg.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05);
        assert!((var.sqrt() / cfg.noise_std() - 1.0).abs() < 0.02);
        let mad = xs.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
        assert!((mad / 3.0 - 1.0).abs() < 0.02, "mean absolute deviation of Laplace(b) is b");
    }
}

#[cfg(test)]
mod run_tests {
    use super::*;
    use crate::accountant::PrivacyBudget;
    use std::collections::BTreeSet;

    fn corpus(words: &[(&str, usize)], cb: &Codebook) -> Vec<DeviceDataset> {
        words
            .iter()
            .flat_map(|&(w, k)| std::iter::repeat_n(w, k))
            .map(|w| DeviceDataset::new([(cb.encode(w, 40).unwrap(), 1)]))
            .collect()
    }

    fn base(n: usize) -> RunConfig {
        RunConfig::new(12, 1 << 12, 40, PrivacyBudget::new(1.0, 1e-6, 12, n as u64).unwrap(), 4)
    }

    fn words(res: &RunResult) -> BTreeSet<String> {
        res.heavy_hitters.iter().filter_map(|h| h.word.clone()).collect()
    }

    #[test]
    fn full_participation_trie_keeps_exactly_the_frequent_words() {
        let cb = Codebook::lowercase_5bit();
        let data = corpus(&[("cat", 5), ("car", 3), ("dog", 1), ("cow", 2)], &cb);
        let cfg = TrieHHConfig {
            theta: 3,
            sampling_rate: 1.0,
        };
        let res = run_triehh(&data, Some(&cb), &base(data.len()), &cfg).unwrap();
        assert_eq!(words(&res), ["car", "cat"].iter().map(|s| s.to_string()).collect());
        assert!(res.heavy_hitters.iter().any(|h| h.est_count == Some(5.0)));
    }

    #[test]
    fn central_noise_finds_strong_words() {
        let cb = Codebook::lowercase_5bit();
        let data = corpus(&[("the", 2000), ("to", 1500), ("of", 5)], &cb);
        for noise in [calibrate_laplace(1.0, 1e-6, 12).unwrap(), calibrate_gaussian(1.0, 1e-6, 12).unwrap()] {
            let res = run_central(&data, Some(&cb), &base(data.len()), &noise).unwrap();
            let w = words(&res);
            assert!(w.contains("the") && w.contains("to"), "{noise:?}: {w:?}");
            assert!(!w.contains("of"));
        }
    }

    #[test]
    fn distributed_shares_sum_to_the_central_noise() {
        let mut rng = stream(5, 0, 0, Purpose::Noise);
        let sigma = 4.0;
        let xs: Vec<f64> = (0..20_000).map(|_| distributed_gaussian(50, sigma, &mut rng)).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.1);
        assert!((sd / sigma - 1.0).abs() < 0.03);
    }
}
