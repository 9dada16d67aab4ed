//! Evaluation against the true data distribution.

use std::collections::{HashMap, HashSet};

use crate::bits::BitString;
use crate::device::DeviceDataset;

/// Default sliding-window width for marginal curves.
pub const DEFAULT_WINDOW: usize = 50;

/// Global empirical distribution of words across devices.
#[derive(Clone, Debug, Default)]
pub struct GlobalDistribution {
    weighted: HashMap<BitString, f64>,
    coverage: HashMap<BitString, f64>,
    /// Words by decreasing weighted mass, ties by bits.
    ranking: Vec<(BitString, f64)>,
    n_devices: usize,
}

impl GlobalDistribution {
    /// `F = (1/N) sum_i F_i`, and the fraction of devices holding each word.
    /// Devices without data count towards `N` but contribute no mass, so the
    /// weighted total is the fraction of non-empty devices.
    pub fn from_devices(devices: &[DeviceDataset]) -> Self {
        let n = devices.len();
        let mut weighted: HashMap<BitString, f64> = HashMap::new();
        let mut holders: HashMap<BitString, usize> = HashMap::new();
        for d in devices {
            for (w, p) in d.distribution() {
                *weighted.entry(w).or_default() += p;
                *holders.entry(w).or_default() += 1;
            }
        }
        let nf = n.max(1) as f64;
        for v in weighted.values_mut() {
            *v /= nf;
        }
        let coverage = holders.into_iter().map(|(w, c)| (w, c as f64 / nf)).collect();
        let mut ranking: Vec<(BitString, f64)> = weighted.iter().map(|(&w, &p)| (w, p)).collect();
        ranking.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self {
            weighted,
            coverage,
            ranking,
            n_devices: n,
        }
    }

    pub fn prob(&self, word: &BitString) -> f64 {
        self.weighted.get(word).copied().unwrap_or(0.0)
    }

    pub fn coverage(&self, word: &BitString) -> f64 {
        self.coverage.get(word).copied().unwrap_or(0.0)
    }

    pub fn ranking(&self) -> &[(BitString, f64)] {
        &self.ranking
    }

    pub fn n_devices(&self) -> usize {
        self.n_devices
    }

    pub fn support_size(&self) -> usize {
        self.ranking.len()
    }

    pub fn contains(&self, word: &BitString) -> bool {
        self.weighted.contains_key(word)
    }

    /// The `k` most frequent words.
    pub fn top(&self, k: usize) -> Vec<BitString> {
        self.ranking.iter().take(k).map(|&(w, _)| w).collect()
    }

    /// Words of `h` sorted by decreasing mass, ties by bits.
    pub fn order(&self, h: &[BitString]) -> Vec<BitString> {
        let mut v = h.to_vec();
        v.sort_unstable_by(|a, b| self.prob(b).total_cmp(&self.prob(a)).then(a.cmp(b)));
        v.dedup();
        v
    }
}

/// Mass captured by `h` over the mass of the true top-`|h|` words. One for
/// an empty set.
pub fn weight_ratio(h: &[BitString], f: &GlobalDistribution) -> f64 {
    let uniq: HashSet<&BitString> = h.iter().collect();
    if uniq.is_empty() {
        return 1.0;
    }
    let got: f64 = uniq.iter().map(|w| f.prob(w)).sum();
    let best: f64 = f.ranking.iter().take(uniq.len()).map(|&(_, p)| p).sum();
    if best <= 0.0 {
        return 0.0;
    }
    (got / best).clamp(0.0, 1.0)
}

/// Weight ratio measured with device coverage instead of weighted mass.
pub fn coverage_ratio(h: &[BitString], f: &GlobalDistribution) -> f64 {
    let uniq: HashSet<&BitString> = h.iter().collect();
    if uniq.is_empty() {
        return 1.0;
    }
    let got: f64 = uniq.iter().map(|w| f.coverage(w)).sum();
    let mut cov: Vec<f64> = f.coverage.values().copied().collect();
    cov.sort_unstable_by(|a, b| b.total_cmp(a));
    let best: f64 = cov.iter().take(uniq.len()).sum();
    if best <= 0.0 {
        return 0.0;
    }
    (got / best).clamp(0.0, 1.0)
}

/// Entry `i` is the mass of `h[i-W+1..=i]`.
pub fn window_marginals(h: &[BitString], f: &GlobalDistribution, window: usize) -> Vec<f64> {
    let window = window.max(1);
    let p: Vec<f64> = h.iter().map(|w| f.prob(w)).collect();
    let mut out = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for i in 0..p.len() {
        acc += p[i];
        if i >= window {
            acc -= p[i - window];
        }
        // Recompute from scratch now and then to keep rounding drift out.
        if i % 4096 == 4095 {
            acc = p[(i + 1).saturating_sub(window)..=i].iter().sum();
        }
        out.push(acc);
    }
    out
}

/// Which words count as genuine when measuring false positives.
#[derive(Clone, Copy, Debug)]
pub enum FpBasis<'a> {
    /// Present in some device's raw data.
    Raw(&'a [DeviceDataset]),
    /// Present in an explicit set (e.g. the words devices actually selected).
    Selected(&'a HashSet<BitString>),
}

/// Fraction of `h` that is not a genuine word.
pub fn false_positive_ratio(h: &[BitString], basis: FpBasis<'_>) -> f64 {
    if h.is_empty() {
        return 0.0;
    }
    let fp = match basis {
        FpBasis::Raw(devices) => {
            let all: HashSet<BitString> = devices.iter().flat_map(|d| d.words().iter().map(|&(w, _)| w)).collect();
            h.iter().filter(|w| !all.contains(w)).count()
        }
        FpBasis::Selected(set) => h.iter().filter(|w| !set.contains(w)).count(),
    };
    fp as f64 / h.len() as f64
}

/// Checks `(lambda, threshold)`-accuracy of `output` against true counts.
/// Elements missing from `counts` have count zero.
pub fn lambda_accuracy_check(
    output: &HashSet<BitString>,
    counts: &HashMap<BitString, f64>,
    lambda: f64,
    threshold: f64,
) -> bool {
    for (w, &c) in counts {
        if c >= threshold + lambda && !output.contains(w) {
            return false;
        }
        if c < threshold - lambda && output.contains(w) {
            return false;
        }
    }
    let zero_excluded = 0.0 < threshold - lambda;
    !(zero_excluded && output.iter().any(|w| !counts.contains_key(w)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub discovered_count: usize,
    pub fp_count: usize,
    pub fp_ratio: f64,
    pub weight_ratio: f64,
    pub utility_loss: f64,
    pub window_marginals: Vec<(usize, f64)>,
}

/// Summary metrics for an output set. `h` is ranked by true mass first.
pub fn evaluate(h: &[BitString], f: &GlobalDistribution, window: usize) -> MetricsReport {
    let ordered = f.order(h);
    let fp_count = ordered.iter().filter(|w| !f.contains(w)).count();
    let wr = weight_ratio(&ordered, f);
    MetricsReport {
        discovered_count: ordered.len() - fp_count,
        fp_count,
        fp_ratio: if ordered.is_empty() {
            0.0
        } else {
            fp_count as f64 / ordered.len() as f64
        },
        weight_ratio: wr,
        utility_loss: 1.0 - wr,
        window_marginals: window_marginals(&ordered, f, window).into_iter().enumerate().collect(),
    }
}
