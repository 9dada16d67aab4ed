//! Local randomizer and frequency estimator.
//!
//! The default oracle is one-hot encoding followed by asymmetric binary
//! randomized response (OHE-BRR): a device holding index `k` of a domain of
//! size `m` forms the one-hot vector of length `m + 1` (slot `m` is the ⊥
//! slot, and a device with nothing to report sends all zeros), then flips
//! every coordinate independently, keeping a 1 with probability `alpha1` and
//! turning a 0 into a 1 with probability `alpha0`.

use rand::{Rng, RngCore};
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};

/// Test-calibration constant in the high-probability error bound of
/// [`oracle_error_bound`].
pub const ASSUMPTION_C: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleParams {
    pub epsilon_local: f64,
    /// Size of the query domain, excluding the ⊥ slot.
    pub domain_size: usize,
    pub alpha0: f64,
    pub alpha1: f64,
}

impl OracleParams {
    pub fn new(epsilon_local: f64, domain_size: usize, alpha0: f64, alpha1: f64) -> Result<Self> {
        if !(epsilon_local > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon_local must be positive, got {epsilon_local}")));
        }
        if domain_size == 0 {
            return Err(Error::InvalidParameter("domain size must be positive".into()));
        }
        if !(0.0 <= alpha0 && alpha0 < alpha1 && alpha1 <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= alpha0 < alpha1 <= 1, got alpha0 = {alpha0}, alpha1 = {alpha1}"
            )));
        }
        Ok(Self {
            epsilon_local,
            domain_size,
            alpha0,
            alpha1,
        })
    }

    /// alpha1 = 1/2, alpha0 = 1/(e^eps + 1).
    pub fn replacement(epsilon_local: f64, domain_size: usize) -> Result<Self> {
        Self::new(epsilon_local, domain_size, 1.0 / (epsilon_local.exp() + 1.0), 0.5)
    }

    /// Length of a privatized vector.
    pub fn vector_len(&self) -> usize {
        self.domain_size + 1
    }

    /// Probability that an output bit is 1 given the input bit.
    pub fn one_probability(&self, input_bit: bool) -> f64 {
        if input_bit {
            self.alpha1
        } else {
            self.alpha0
        }
    }
}

/// A randomized report, stored as the sorted positions of its 1 bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrivatizedVector {
    len: usize,
    ones: Vec<u32>,
}

impl PrivatizedVector {
    pub fn from_ones(len: usize, mut ones: Vec<u32>) -> Self {
        ones.sort_unstable();
        ones.dedup();
        debug_assert!(ones.last().is_none_or(|&j| (j as usize) < len));
        Self { len, ones }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn ones(&self) -> &[u32] {
        &self.ones
    }

    pub fn bit(&self, j: usize) -> bool {
        self.ones.binary_search(&(j as u32)).is_ok()
    }

    pub fn to_bits(&self) -> Vec<bool> {
        let mut bits = vec![false; self.len];
        for &j in &self.ones {
            bits[j as usize] = true;
        }
        bits
    }
}

/// Coordinatewise sum of privatized vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggregateReport {
    pub counts: Vec<u64>,
    pub n: u64,
}

impl AggregateReport {
    pub fn zeros(vector_len: usize) -> Self {
        Self {
            counts: vec![0; vector_len],
            n: 0,
        }
    }

    pub fn add(&mut self, v: &PrivatizedVector) {
        debug_assert_eq!(v.len(), self.counts.len());
        for &j in v.ones() {
            self.counts[j as usize] += 1;
        }
        self.n += 1;
    }

    pub fn merge(mut self, other: &AggregateReport) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n += other.n;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyEstimate {
    /// Debiased count estimates, one per domain element (⊥ excluded).
    pub f_tilde: Vec<f64>,
    /// Upper bound on the standard deviation of any coordinate.
    pub sigma: f64,
    /// Standard deviation of a coordinate whose true count is zero.
    pub sigma_null: f64,
}

/// Pluggable local randomizer plus estimator.
pub trait FrequencyOracle: Send + Sync {
    fn name(&self) -> &'static str;

    /// Parameters for one round at the given local epsilon and domain size.
    fn params(&self, epsilon_local: f64, domain_size: usize) -> Result<OracleParams>;

    /// Privatizes `index` (`None` is ⊥, the all-zeros input).
    fn randomize(&self, index: Option<usize>, params: &OracleParams, rng: &mut dyn RngCore) -> Result<PrivatizedVector>;

    /// Draws the sum of `n` privatized reports directly, given how many of
    /// them hold each index (`histogram` has one entry per vector slot; the
    /// remaining `n - sum` reports are ⊥). Must equal in distribution the sum
    /// of `n` independent [`FrequencyOracle::randomize`] outputs.
    fn aggregate_histogram(&self, histogram: &[u64], n: u64, params: &OracleParams, rng: &mut dyn RngCore) -> Result<AggregateReport>;

    fn estimate(&self, agg: &AggregateReport, params: &OracleParams) -> Result<FrequencyEstimate>;
}

/// One-hot encoding with asymmetric binary randomized response.
#[derive(Clone, Copy, Debug, Default)]
pub struct OheBrr;

impl OheBrr {
    /// Exact probability of `output` given the input index.
    pub fn output_probability(&self, index: Option<usize>, output: &[bool], params: &OracleParams) -> f64 {
        output
            .iter()
            .enumerate()
            .map(|(j, &o)| {
                let p = params.one_probability(Some(j) == index);
                if o {
                    p
                } else {
                    1.0 - p
                }
            })
            .product()
    }
}

impl FrequencyOracle for OheBrr {
    fn name(&self) -> &'static str {
        "ohe-brr"
    }

    fn params(&self, epsilon_local: f64, domain_size: usize) -> Result<OracleParams> {
        OracleParams::replacement(epsilon_local, domain_size)
    }

    fn randomize(&self, index: Option<usize>, params: &OracleParams, rng: &mut dyn RngCore) -> Result<PrivatizedVector> {
        let len = params.vector_len();
        if let Some(k) = index {
            if k >= len {
                return Err(Error::IndexOutOfRange { index: k, size: len });
            }
        }
        let mut ones = Vec::new();
        // Zero coordinates turn on with probability alpha0; walk them with
        // geometric gaps (inverse transform) so the cost is proportional to
        // the number of ones.
        if params.alpha0 > 0.0 {
            let log_q = (-params.alpha0).ln_1p();
            let mut j: f64 = 0.0;
            loop {
                let u: f64 = 1.0 - rng.random::<f64>();
                j += (u.ln() / log_q).floor();
                if j >= len as f64 {
                    break;
                }
                if Some(j as usize) != index {
                    ones.push(j as u32);
                }
                j += 1.0;
            }
        }
        if let Some(k) = index {
            if rng.random_bool(params.alpha1) {
                ones.push(k as u32);
            }
        }
        Ok(PrivatizedVector::from_ones(len, ones))
    }

    fn aggregate_histogram(&self, histogram: &[u64], n: u64, params: &OracleParams, rng: &mut dyn RngCore) -> Result<AggregateReport> {
        if histogram.len() != params.vector_len() {
            return Err(Error::InvalidParameter(format!(
                "histogram has {} slots, expected {}",
                histogram.len(),
                params.vector_len()
            )));
        }
        let total: u64 = histogram.iter().sum();
        if total > n {
            return Err(Error::InvalidParameter(format!("histogram holds {total} reports but n = {n}")));
        }
        let mut counts = Vec::with_capacity(histogram.len());
        for &h in histogram {
            let on = binomial(h, params.alpha1, rng)?;
            let off = binomial(n - h, params.alpha0, rng)?;
            counts.push(on + off);
        }
        Ok(AggregateReport { counts, n })
    }

    fn estimate(&self, agg: &AggregateReport, params: &OracleParams) -> Result<FrequencyEstimate> {
        if agg.n == 0 {
            return Err(Error::EmptyAggregate);
        }
        let n = agg.n as f64;
        let (a0, a1) = (params.alpha0, params.alpha1);
        let gap = a1 - a0;
        let f_tilde = agg.counts[..params.domain_size]
            .iter()
            .map(|&c| (c as f64 - n * a0) / gap)
            .collect();
        let var = (a0 * (1.0 - a0)).max(a1 * (1.0 - a1));
        Ok(FrequencyEstimate {
            f_tilde,
            sigma: (n * var).sqrt() / gap,
            sigma_null: (n * a0 * (1.0 - a0)).sqrt() / gap,
        })
    }
}

fn binomial(n: u64, p: f64, rng: &mut dyn RngCore) -> Result<u64> {
    if n == 0 || p <= 0.0 {
        return Ok(0);
    }
    Ok(Binomial::new(n, p)
        .map_err(|e| Error::InvalidParameter(format!("binomial({n}, {p}): {e}")))?
        .sample(rng))
}

/// High-probability bound on the estimation error of one coordinate:
/// `C * sqrt(n e^eps / (e^eps - 1)^2 * ln(1/beta))` with `C` = [`ASSUMPTION_C`].
pub fn oracle_error_bound(params: &OracleParams, n: u64, beta: f64) -> f64 {
    let e = params.epsilon_local.exp();
    ASSUMPTION_C * (n as f64 * e / (e - 1.0).powi(2) * (1.0 / beta).ln()).sqrt()
}
