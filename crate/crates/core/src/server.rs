//! The server half of a round: estimate frequencies over the round's query
//! domain, keep the bins that pass the adaptive threshold, move finished words
//! to the discovered list, and choose the next segment length.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::bits::BitString;
use crate::encoding::Codebook;
use crate::error::{Error, Result};

/// What the server broadcasts at the start of a round.
#[derive(Clone, Debug)]
pub struct RoundPlan {
    prefixes: Arc<Vec<BitString>>,
    positions: Arc<HashMap<BitString, usize>>,
    prefix_length: usize,
    segment_length: usize,
    deny_list: Arc<HashSet<BitString>>,
    round_index: usize,
    r: usize,
}

impl RoundPlan {
    /// Prefixes are sorted and deduplicated; all must share one length.
    pub fn new(
        mut prefixes: Vec<BitString>,
        segment_length: usize,
        deny_list: impl IntoIterator<Item = BitString>,
        round_index: usize,
        r: usize,
    ) -> Result<Self> {
        prefixes.sort_unstable();
        prefixes.dedup();
        let prefix_length = prefixes.first().map_or(0, |p| p.len());
        if prefixes.iter().any(|p| p.len() != prefix_length) {
            return Err(Error::InvalidParameter("prefixes in a round must share one length".into()));
        }
        if prefix_length + segment_length > r {
            return Err(Error::InvalidParameter(format!(
                "prefix length {prefix_length} + segment length {segment_length} exceeds r = {r}"
            )));
        }
        if segment_length >= usize::BITS as usize - 1 {
            return Err(Error::InvalidParameter(format!("segment length {segment_length} is too large")));
        }
        let positions = prefixes.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        Ok(Self {
            prefixes: Arc::new(prefixes),
            positions: Arc::new(positions),
            prefix_length,
            segment_length,
            deny_list: Arc::new(deny_list.into_iter().collect()),
            round_index,
            r,
        })
    }

    /// First round: the single empty prefix.
    pub fn initial(segment_length: usize, deny_list: impl IntoIterator<Item = BitString>, r: usize) -> Result<Self> {
        Self::new(vec![BitString::empty()], segment_length, deny_list, 1, r)
    }

    pub fn prefixes(&self) -> &[BitString] {
        &self.prefixes
    }

    pub fn prefix_length(&self) -> usize {
        self.prefix_length
    }

    pub fn segment_length(&self) -> usize {
        self.segment_length
    }

    pub fn round_index(&self) -> usize {
        self.round_index
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn deny_list(&self) -> &HashSet<BitString> {
        &self.deny_list
    }

    pub fn is_denied(&self, word: &BitString) -> bool {
        self.deny_list.contains(word)
    }

    pub fn position(&self, prefix: &BitString) -> Option<usize> {
        self.positions.get(prefix).copied()
    }

    /// `|X_t| * 2^s_t`, excluding the ⊥ slot.
    pub fn domain_size(&self) -> usize {
        self.prefixes.len() << self.segment_length
    }

    pub fn domain_index(&self, prefix_position: usize, suffix: &BitString) -> Result<usize> {
        domain_index(prefix_position, suffix, self.prefixes.len(), self.segment_length)
    }

    /// Inverse of [`RoundPlan::domain_index`].
    pub fn domain_entry(&self, index: usize) -> Result<(usize, BitString)> {
        if index >= self.domain_size() {
            return Err(Error::IndexOutOfRange {
                index,
                size: self.domain_size(),
            });
        }
        let s = self.segment_length;
        Ok((index >> s, BitString::from_value(index as u64, s)?))
    }

    /// The `prefix_length + s_t` bit string a domain index stands for.
    pub fn extended_prefix(&self, index: usize) -> Result<BitString> {
        let (pos, suffix) = self.domain_entry(index)?;
        self.prefixes[pos].concat(&suffix)
    }

    /// Domain index of a full encoded word, if its prefix is live.
    pub fn index_of_word(&self, word: &BitString) -> Option<usize> {
        let pos = self.position(&word.prefix(self.prefix_length))?;
        let suffix = word.slice(self.prefix_length, self.segment_length);
        Some((pos << self.segment_length) | suffix.value() as usize)
    }
}

/// `prefix_position * 2^s + value(suffix)`.
pub fn domain_index(prefix_position: usize, suffix: &BitString, prefix_count: usize, segment_length: usize) -> Result<usize> {
    if prefix_position >= prefix_count {
        return Err(Error::IndexOutOfRange {
            index: prefix_position,
            size: prefix_count,
        });
    }
    if suffix.len() != segment_length {
        return Err(Error::InvalidParameter(format!(
            "suffix has {} bits, segment length is {segment_length}",
            suffix.len()
        )));
    }
    Ok((prefix_position << segment_length) | suffix.value() as usize)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneConfig {
    pub tau0: f64,
    pub f_ratio: f64,
    pub eta: f64,
    pub e_floor: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            tau0: 2.0,
            f_ratio: 0.5,
            eta: 0.9,
            e_floor: 1e-12,
        }
    }
}

impl PruneConfig {
    pub fn validated(self) -> Result<Self> {
        if !(self.tau0 > 0.0 && self.f_ratio > 0.0 && self.eta > 0.0 && self.eta < 1.0 && self.e_floor > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid prune configuration {self:?}")));
        }
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneOutcome {
    /// Kept indices, highest estimate first (ties by index).
    pub kept: Vec<usize>,
    pub tau: f64,
    /// Per-bin false-positive probability at the final threshold.
    pub e: f64,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Upper tail `1 - Phi(x)` of the standard normal.
pub fn normal_tail(x: f64) -> f64 {
    std_normal().cdf(-x)
}

/// `z` with `1 - Phi(z) = e`.
pub fn normal_upper_quantile(e: f64) -> f64 {
    -std_normal().inverse_cdf(e)
}

/// Adaptive threshold selection. `sigma` is the noise standard deviation of
/// a bin whose true count is zero.
pub fn prune(f_tilde: &[f64], sigma: f64, domain_size: usize, cfg: &PruneConfig) -> PruneOutcome {
    let mut tau = cfg.tau0;
    let mut e = normal_tail(tau);
    // Candidates above the initial threshold, best first. Later thresholds
    // only rise, so each kept set is a prefix of this list.
    let mut cands: Vec<usize> = (0..f_tilde.len()).filter(|&i| f_tilde[i] > tau * sigma).collect();
    cands.sort_unstable_by(|&a, &b| f_tilde[b].total_cmp(&f_tilde[a]).then(a.cmp(&b)));
    let kept_at = |t: f64| cands.partition_point(|&i| f_tilde[i] > t * sigma);
    let mut kept = cands.len();
    let d = domain_size as f64;
    while kept > 0 && e >= cfg.e_floor && cfg.f_ratio * (kept as f64) < e * d {
        e *= cfg.eta;
        tau = normal_upper_quantile(e);
        kept = kept_at(tau);
    }
    cands.truncate(kept);
    PruneOutcome { kept: cands, tau, e }
}

/// Splits kept prefixes into those still growing and finished words.
///
/// A prefix is finished once it contains END followed only by zero padding;
/// the full padded word is added to `discovered`. Returns the unfinished
/// prefixes and the words newly added.
pub fn remove_finished(
    kept: Vec<BitString>,
    codebook: &Codebook,
    r: usize,
    discovered: &mut BTreeSet<BitString>,
) -> Result<(Vec<BitString>, Vec<BitString>)> {
    let mut live = Vec::with_capacity(kept.len());
    let mut new = Vec::new();
    for p in kept {
        if codebook.is_terminated(&p) {
            let word = p.pad_to(r)?;
            if discovered.insert(word) {
                new.push(word);
            }
        } else {
            live.push(p);
        }
    }
    Ok((live, new))
}

/// Largest `l` with `prefix_count * 2^l <= limit`, capped at `r - prefix_length`.
/// Zero prefixes means the run is over.
pub fn next_segment_length(prefix_count: usize, prefix_length: usize, limit: u64, r: usize) -> Result<usize> {
    if prefix_count == 0 {
        return Ok(0);
    }
    let count = prefix_count as u64;
    if count > limit {
        return Err(Error::PrefixListTooLarge { count: prefix_count, limit });
    }
    let l = (limit / count).ilog2() as usize;
    Ok(l.min(r.saturating_sub(prefix_length)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SegmentationPolicy {
    /// Largest segment that fits the dimension limit.
    #[default]
    Adaptive,
    /// Fixed segment length; the prefix list is cut to the best
    /// `limit / 2^s` prefixes so the domain fits.
    Uniform(usize),
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn domain_index_arithmetic() {
        assert_eq!(domain_index(0, &bs("000"), 4, 3).unwrap(), 0);
        assert_eq!(domain_index(2, &bs("101"), 4, 3).unwrap(), 21);
        assert!(domain_index(4, &bs("101"), 4, 3).is_err());
        assert!(domain_index(1, &bs("10"), 4, 3).is_err());
    }

    #[test]
    fn domain_index_is_a_bijection() {
        let plan = RoundPlan::new(vec![bs("00"), bs("01"), bs("10"), bs("11")], 2, [], 2, 8).unwrap();
        let mut seen = BTreeSet::new();
        for p in 0..4 {
            for v in 0..4u64 {
                let s = BitString::from_value(v, 2).unwrap();
                let i = plan.domain_index(p, &s).unwrap();
                assert!(i < 16);
                assert_eq!(plan.domain_entry(i).unwrap(), (p, s));
                seen.insert(i);
            }
        }
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn plan_sorts_and_validates() {
        let plan = RoundPlan::new(vec![bs("11"), bs("01"), bs("11")], 3, [], 2, 8).unwrap();
        assert_eq!(plan.prefixes(), &[bs("01"), bs("11")]);
        assert_eq!(plan.extended_prefix(9).unwrap(), bs("11001"));
        assert!(RoundPlan::new(vec![bs("1"), bs("01")], 1, [], 2, 8).is_err());
        assert!(RoundPlan::new(vec![bs("01")], 7, [], 2, 8).is_err());
    }

    #[test]
    fn initial_tail_probability() {
        let tail = normal_tail(2.0);
        assert!((tail - 0.022750131948179195).abs() < 1e-9, "{tail}");
        assert!((normal_upper_quantile(0.022750131948179) - 2.0).abs() < 1e-8);
        assert!(normal_upper_quantile(1e-12) > 7.0);
    }

    #[test]
    fn prune_empty_when_all_below_threshold() {
        let f = vec![1.0, -2.0, 1.9];
        let out = prune(&f, 1.0, 3, &PruneConfig::default());
        assert!(out.kept.is_empty());
        assert_eq!(out.tau, 2.0);
    }

    #[test]
    fn prune_keeps_strong_signal_with_small_domain() {
        // E * |D| = 0.0455 <= 0.5 * 2 at tau0, so no tightening happens.
        let f = vec![10.0, 0.0, 3.0, 0.5];
        let out = prune(&f, 1.0, 2, &PruneConfig::default());
        assert_eq!(out.kept, vec![0, 2]);
        assert_eq!(out.tau, 2.0);
    }

    #[test]
    fn prune_tightens_until_ratio_holds() {
        // 1000 bins; 5 strong plus several moderate values.
        let mut f = vec![0.0; 1000];
        for (i, v) in [(1, 50.0), (2, 40.0), (3, 30.0), (4, 25.0), (5, 20.0), (6, 2.5), (7, 2.6), (8, 3.1)] {
            f[i] = v;
        }
        let cfg = PruneConfig::default();
        let out = prune(&f, 1.0, 1000, &cfg);
        // Ratio must hold at the final threshold and every kept value clears it.
        assert!(out.e * 1000.0 <= cfg.f_ratio * out.kept.len() as f64);
        assert!(out.kept.iter().all(|&i| f[i] > out.tau));
        assert!(out.kept.contains(&5));
        assert!(!out.kept.contains(&6));
        // Walking the schedule by hand: E_k = E_0 * 0.9^k; the first k with
        // E_k * 1000 <= 0.5 * |{f > z(E_k)}| ends the loop.
        let mut e = normal_tail(2.0);
        loop {
            let tau = normal_upper_quantile(e);
            let kept = f.iter().filter(|&&v| v > tau).count();
            if e * 1000.0 <= 0.5 * kept as f64 {
                assert!((e - out.e).abs() < 1e-15);
                assert_eq!(kept, out.kept.len());
                break;
            }
            e *= 0.9;
        }
    }

    #[test]
    fn segment_lengths() {
        assert_eq!(next_segment_length(1, 0, 10_000_000, 60).unwrap(), 23);
        assert_eq!(next_segment_length(610, 23, 10_000_000, 60).unwrap(), 14);
        assert_eq!(next_segment_length(1, 6, 8, 8).unwrap(), 2);
        assert_eq!(next_segment_length(0, 6, 8, 60).unwrap(), 0);
        assert!(matches!(
            next_segment_length(9, 0, 8, 60),
            Err(Error::PrefixListTooLarge { count: 9, limit: 8 })
        ));
    }

    #[test]
    fn finished_prefixes_move_to_discovered() {
        let cb = Codebook::lowercase_5bit();
        let word = cb.encode("ab", 20).unwrap();
        let unfinished = word.prefix(10);
        let mut discovered = BTreeSet::new();
        let (live, new) = remove_finished(vec![word.prefix(15), unfinished], &cb, 20, &mut discovered).unwrap();
        assert_eq!(live, vec![unfinished]);
        assert_eq!(new, vec![word]);
        assert!(discovered.contains(&word));
        let (live, new) = remove_finished(vec![unfinished], &cb, 20, &mut discovered).unwrap();
        assert_eq!((live.len(), new.len()), (1, 0));
    }

    #[test]
    fn fixed_width_completion_on_symbol_boundaries() {
        let cb = Codebook::lowercase_5bit();
        let word = cb.encode("xyz", 40).unwrap();
        for j in 0..=40 {
            assert_eq!(cb.is_complete(&word.prefix(j)), j == 20, "j = {j}");
            assert_eq!(cb.is_terminated(&word.prefix(j)), j >= 20, "j = {j}");
        }
    }

    proptest! {
        #[test]
        fn segment_length_is_maximal(count in 1usize..100_000, limit in 1u64..100_000_000, pre in 0usize..60) {
            let r = 60;
            match next_segment_length(count, pre, limit, r) {
                Ok(l) => {
                    let c = count as u128;
                    prop_assert!(c << l <= limit as u128);
                    prop_assert!(c << (l + 1) > limit as u128 || l == r - pre);
                }
                Err(_) => prop_assert!(count as u64 > limit),
            }
        }

        #[test]
        fn prune_threshold_invariant(vals in proptest::collection::vec(-5.0f64..30.0, 1..300), f_ratio in 0.05f64..2.0) {
            let cfg = PruneConfig { f_ratio, ..PruneConfig::default() };
            let out = prune(&vals, 1.0, vals.len(), &cfg);
            prop_assert!(out.kept.iter().all(|&i| vals[i] > out.tau));
            let all_above = vals.iter().filter(|&&v| v > out.tau).count();
            prop_assert_eq!(all_above, out.kept.len());
            prop_assert!(out.kept.is_empty() || out.e < cfg.e_floor
                || out.e * vals.len() as f64 <= f_ratio * out.kept.len() as f64);
        }
    }
}
