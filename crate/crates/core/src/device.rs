//! The on-device half of a round: filter the local data by the broadcast
//! prefix list and deny list, pick one data point, and privatize the index of
//! its extended prefix.

use rand::{Rng, RngCore};

use crate::bits::BitString;
use crate::error::Result;
use crate::freq_oracle::{FrequencyOracle, OracleParams, PrivatizedVector};
use crate::server::RoundPlan;

/// One device's multiset of encoded words.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DeviceDataset {
    /// Distinct words in bit order with positive multiplicities.
    words: Vec<(BitString, u32)>,
}

impl DeviceDataset {
    /// Builds a dataset, merging repeated words and dropping zero counts.
    pub fn new(words: impl IntoIterator<Item = (BitString, u32)>) -> Self {
        let mut v: Vec<(BitString, u32)> = words.into_iter().filter(|&(_, c)| c > 0).collect();
        v.sort_unstable_by_key(|&(w, _)| w);
        let mut merged: Vec<(BitString, u32)> = Vec::with_capacity(v.len());
        for (w, c) in v {
            match merged.last_mut() {
                Some((last, n)) if *last == w => *n += c,
                _ => merged.push((w, c)),
            }
        }
        Self { words: merged }
    }

    pub fn words(&self) -> &[(BitString, u32)] {
        &self.words
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.words.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn contains(&self, word: &BitString) -> bool {
        self.words.binary_search_by_key(word, |&(w, _)| w).is_ok()
    }

    /// Empirical distribution of the device's words.
    pub fn distribution(&self) -> Vec<(BitString, f64)> {
        let total = self.total() as f64;
        self.words.iter().map(|&(w, c)| (w, c as f64 / total)).collect()
    }

    /// One word drawn from the empirical distribution, kept with count 1.
    /// Used to turn a multi-datapoint dataset into a single-datapoint one.
    pub fn sample_single(&self, rng: &mut dyn RngCore) -> Self {
        match weighted_pick(self.words.iter().copied(), self.total(), rng) {
            Some(w) => Self { words: vec![(w, 1)] },
            None => Self::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionKind {
    /// Proportional to on-device counts.
    Weighted,
    /// Uniform over distinct words.
    Unweighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SelectionPolicy {
    pub kind: SelectionKind,
    pub condition_on_prefix_list: bool,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        Self {
            kind: SelectionKind::Unweighted,
            condition_on_prefix_list: true,
        }
    }
}

fn allowed_prefix(word: &BitString, plan: &RoundPlan) -> bool {
    plan.position(&word.prefix(plan.prefix_length())).is_some()
}

fn candidates<'a>(
    data: &'a DeviceDataset,
    plan: &'a RoundPlan,
    condition: bool,
) -> impl Iterator<Item = (BitString, u32)> + 'a {
    data.words
        .iter()
        .copied()
        .filter(move |(w, _)| !plan.is_denied(w) && (!condition || allowed_prefix(w, plan)))
}

/// Words the device may report this round.
pub fn eligible(data: &DeviceDataset, plan: &RoundPlan, policy: &SelectionPolicy) -> Vec<(BitString, u32)> {
    candidates(data, plan, policy.condition_on_prefix_list).collect()
}

fn weighted_pick(items: impl Iterator<Item = (BitString, u32)>, total: u64, rng: &mut dyn RngCore) -> Option<BitString> {
    if total == 0 {
        return None;
    }
    let mut u = rng.random_range(0..total);
    for (w, c) in items {
        if u < c as u64 {
            return Some(w);
        }
        u -= c as u64;
    }
    unreachable!("draw below total mass")
}

/// Picks the data point to report, or `None` (⊥) when nothing is eligible.
///
/// Without prefix-list conditioning the pick ignores the prefix list and may
/// return a word whose prefix is not live; [`select_index`] maps that to ⊥.
pub fn select(data: &DeviceDataset, plan: &RoundPlan, policy: &SelectionPolicy, rng: &mut dyn RngCore) -> Option<BitString> {
    let cond = policy.condition_on_prefix_list;
    match policy.kind {
        SelectionKind::Weighted => {
            let total = candidates(data, plan, cond).map(|(_, c)| c as u64).sum();
            weighted_pick(candidates(data, plan, cond), total, rng)
        }
        SelectionKind::Unweighted => {
            let n = candidates(data, plan, cond).count();
            if n == 0 {
                return None;
            }
            let k = rng.random_range(0..n);
            candidates(data, plan, cond).nth(k).map(|(w, _)| w)
        }
    }
}

/// Domain index of the selected word's extended prefix, or `None` for ⊥.
pub fn select_index(data: &DeviceDataset, plan: &RoundPlan, policy: &SelectionPolicy, rng: &mut dyn RngCore) -> Option<usize> {
    let word = select(data, plan, policy, rng)?;
    plan.index_of_word(&word)
}

/// Selection followed by local randomization.
pub fn report(
    data: &DeviceDataset,
    plan: &RoundPlan,
    policy: &SelectionPolicy,
    oracle: &dyn FrequencyOracle,
    params: &OracleParams,
    select_rng: &mut dyn RngCore,
    noise_rng: &mut dyn RngCore,
) -> Result<PrivatizedVector> {
    let index = select_index(data, plan, policy, select_rng);
    oracle.randomize(index, params, noise_rng)
}
