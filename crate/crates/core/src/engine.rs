//! Runs the full multi-round protocol over a simulated device population.
//!
//! Each round: devices participate with probability `gamma`, pick a data
//! point under the broadcast plan, and privatize its extended prefix; reports
//! are summed exactly (a stand-in for secure aggregation); the server
//! estimates, prunes, and plans the next round.
//!
//! Aggregation has two paths that produce the same distribution. The exact
//! path randomizes every report. The sampled path draws each coordinate of the
//! sum directly as `Bin(h_j, alpha1) + Bin(n - h_j, alpha0)`, where `h_j` is
//! the number of devices that selected index `j`; coordinates of different
//! reports are independent, so this is the law of the summed vectors. It is
//! what makes domains of millions of bins tractable.

use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::accountant::{solve_local_epsilon, AccountantResult, PrivacyBudget, DEFAULT_TOLERANCE};
use crate::bits::BitString;
use crate::device::{select_index, DeviceDataset, SelectionPolicy};
use crate::encoding::Codebook;
use crate::error::{Error, Result};
use crate::freq_oracle::{AggregateReport, FrequencyOracle, OheBrr};
use crate::rng::{stream, Purpose};
use crate::server::{next_segment_length, prune, remove_finished, PruneConfig, RoundPlan, SegmentationPolicy};

/// Reports randomized per chunk on the exact path.
const CHUNK: usize = 2048;
/// The automatic choice randomizes reports one by one while the expected
/// number of 1 bits stays below this.
const EXACT_BUDGET: f64 = (1u64 << 24) as f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DataMode {
    /// Each device keeps one word drawn from its data once, before round 1.
    SingleDatapoint,
    #[default]
    MultiDatapoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AggregationMode {
    #[default]
    Auto,
    Exact,
    Sampled,
}

#[derive(Clone)]
pub struct RunConfig {
    pub rounds: usize,
    pub dimension_limit: u64,
    /// Encoded word length in bits.
    pub r: usize,
    pub budget: PrivacyBudget,
    /// Skips the accountant when set.
    pub epsilon_local: Option<f64>,
    pub prune: PruneConfig,
    pub selection: SelectionPolicy,
    pub deny_list: BTreeSet<BitString>,
    pub mode: DataMode,
    pub segmentation: SegmentationPolicy,
    pub aggregation: AggregationMode,
    pub oracle: Arc<dyn FrequencyOracle>,
    pub seed: u64,
}

impl std::fmt::Debug for RunConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunConfig")
            .field("rounds", &self.rounds)
            .field("dimension_limit", &self.dimension_limit)
            .field("r", &self.r)
            .field("budget", &self.budget)
            .field("epsilon_local", &self.epsilon_local)
            .field("prune", &self.prune)
            .field("selection", &self.selection)
            .field("deny_list", &self.deny_list.len())
            .field("mode", &self.mode)
            .field("segmentation", &self.segmentation)
            .field("aggregation", &self.aggregation)
            .field("oracle", &self.oracle.name())
            .field("seed", &self.seed)
            .finish()
    }
}

impl RunConfig {
    /// Defaults: adaptive segmentation, unweighted selection conditioned on
    /// the prefix list, multi-datapoint devices, OHE-BRR.
    pub fn new(rounds: usize, dimension_limit: u64, r: usize, budget: PrivacyBudget, seed: u64) -> Self {
        Self {
            rounds,
            dimension_limit,
            r,
            budget,
            epsilon_local: None,
            prune: PruneConfig::default(),
            selection: SelectionPolicy::default(),
            deny_list: BTreeSet::new(),
            mode: DataMode::default(),
            segmentation: SegmentationPolicy::default(),
            aggregation: AggregationMode::default(),
            oracle: Arc::new(OheBrr),
            seed,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidParameter("rounds must be at least 1".into()));
        }
        if self.dimension_limit < 2 {
            return Err(Error::InvalidParameter("dimension limit must be at least 2".into()));
        }
        if self.r == 0 || self.r > crate::bits::MAX_BITS {
            return Err(Error::InvalidParameter(format!("r must lie in 1..=64, got {}", self.r)));
        }
        if let SegmentationPolicy::Uniform(s) = self.segmentation {
            if s == 0 || 1u64.checked_shl(s as u32).is_none_or(|d| d > self.dimension_limit) {
                return Err(Error::InvalidParameter(format!(
                    "uniform segment length {s} does not fit the dimension limit {}",
                    self.dimension_limit
                )));
            }
        }
        self.prune.validated()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HitterSource {
    DenyList,
    /// Finished word found during the run.
    Discovered,
    /// Survivor of the last round that is not a finished word.
    FinalPrefix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeavyHitter {
    pub bits: BitString,
    /// Decoded text for finished words.
    pub word: Option<String>,
    pub source: HitterSource,
    /// Debiased count estimate in the round that produced it.
    pub est_count: Option<f64>,
    pub round: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundStats {
    pub round: usize,
    pub prefix_count: usize,
    pub prefix_length: usize,
    pub segment_length: usize,
    pub domain_size: usize,
    pub participants: u64,
    pub tau_final: f64,
    pub e_final: f64,
    pub kept: usize,
    pub new_discovered: usize,
    /// Kept bins that no participating device selected.
    pub empirical_fp: usize,
    pub sampled_aggregation: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub heavy_hitters: Vec<HeavyHitter>,
    pub per_round: Vec<RoundStats>,
    /// Per-round local epsilon; `None` for methods without local noise.
    pub epsilon_local: Option<f64>,
    pub accountant: Option<AccountantResult>,
    /// The prefix list emptied (or reached full length) before the last round.
    pub terminated_early: bool,
}

impl RunResult {
    pub fn bits(&self) -> Vec<BitString> {
        self.heavy_hitters.iter().map(|h| h.bits).collect()
    }

    /// Output words that were not supplied through the deny list.
    pub fn found(&self) -> Vec<BitString> {
        self.heavy_hitters
            .iter()
            .filter(|h| h.source != HitterSource::DenyList)
            .map(|h| h.bits)
            .collect()
    }
}

fn local_epsilon(cfg: &RunConfig, total_rounds: usize) -> Result<(f64, Option<AccountantResult>)> {
    match cfg.epsilon_local {
        Some(e) if e > 0.0 => Ok((e, None)),
        Some(e) => Err(Error::InvalidParameter(format!("epsilon_local must be positive, got {e}"))),
        None => {
            let acc = solve_local_epsilon(&cfg.budget.with_rounds(total_rounds), DEFAULT_TOLERANCE)?;
            Ok((acc.epsilon_local, Some(acc)))
        }
    }
}

pub(crate) fn prepare<'a>(dataset: &'a [DeviceDataset], cfg: &RunConfig) -> Cow<'a, [DeviceDataset]> {
    match cfg.mode {
        DataMode::MultiDatapoint => Cow::Borrowed(dataset),
        DataMode::SingleDatapoint => Cow::Owned(
            dataset
                .par_iter()
                .enumerate()
                .map(|(i, d)| d.sample_single(&mut stream(cfg.seed, i as u64, 0, Purpose::Ingest)))
                .collect(),
        ),
    }
}

/// Runs `cfg.rounds` rounds. The codebook decides when a prefix is a finished
/// word; without one, prefixes only finish at full length `r`.
pub fn run(dataset: &[DeviceDataset], codebook: Option<&Codebook>, cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let (eps, acc) = local_epsilon(cfg, cfg.rounds)?;
    let devices = prepare(dataset, cfg);
    run_with_epsilon(&devices, codebook, cfg, eps, acc, cfg.seed, &cfg.deny_list, 0)
}

/// Two consecutive runs over a budget covering `2T` rounds; the second run's
/// deny list adds every finished word output by the first.
pub fn run_two_rounds(dataset: &[DeviceDataset], codebook: Option<&Codebook>, cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let (eps, acc) = local_epsilon(cfg, 2 * cfg.rounds)?;
    let devices = prepare(dataset, cfg);
    let first = run_with_epsilon(&devices, codebook, cfg, eps, acc, cfg.seed, &cfg.deny_list, 0)?;
    let mut deny = cfg.deny_list.clone();
    deny.extend(
        first
            .heavy_hitters
            .iter()
            .filter(|h| h.bits.len() == cfg.r && h.source != HitterSource::FinalPrefix)
            .map(|h| h.bits),
    );
    let second_seed = cfg.seed ^ 0x9E37_79B9_7F4A_7C15;
    let second = run_with_epsilon(&devices, codebook, cfg, eps, acc, second_seed, &deny, cfg.rounds)?;

    // First-run discoveries come back as deny-list entries of the second
    // run; keep the first occurrence.
    let mut seen: HashSet<BitString> = HashSet::new();
    let hitters: Vec<HeavyHitter> = first
        .heavy_hitters
        .into_iter()
        .chain(second.heavy_hitters)
        .filter(|h| seen.insert(h.bits))
        .collect();
    let mut per_round = first.per_round;
    per_round.extend(second.per_round);
    Ok(RunResult {
        heavy_hitters: hitters,
        per_round,
        epsilon_local: Some(eps),
        accountant: acc,
        terminated_early: first.terminated_early || second.terminated_early,
    })
}

/// Tree-growing parameters shared by every method built on the prefix tree.
#[derive(Clone, Debug)]
pub struct TreeParams<'a> {
    pub rounds: usize,
    pub dimension_limit: u64,
    pub r: usize,
    pub selection: SelectionPolicy,
    pub segmentation: SegmentationPolicy,
    /// Per-round participation probability.
    pub participation: f64,
    pub deny_list: &'a BTreeSet<BitString>,
    pub seed: u64,
    /// Added to round numbers, so a follow-up run continues the count.
    pub round_offset: usize,
}

/// One round's input to a [`RoundRule`].
pub struct RoundInput<'a> {
    pub round: usize,
    pub seed: u64,
    pub plan: &'a RoundPlan,
    /// Per device: `None` if absent, `Some(None)` for ⊥, else the domain index.
    pub picks: &'a [Option<Option<usize>>],
    /// Selections per domain index; the last slot is unused (⊥ reports are
    /// all zeros).
    pub histogram: &'a [u64],
    pub participants: u64,
}

/// Which bins survive a round, best first, with their count estimates.
pub struct RoundDecision {
    pub kept: Vec<usize>,
    pub estimates: Vec<f64>,
    pub tau: f64,
    pub e: f64,
    pub sampled_aggregation: bool,
}

/// The per-round release and thresholding step of a method.
pub trait RoundRule {
    fn decide(&mut self, input: &RoundInput<'_>) -> Result<RoundDecision>;
}

/// Output of [`grow_tree`].
pub struct TreeOutcome {
    pub heavy_hitters: Vec<HeavyHitter>,
    pub per_round: Vec<RoundStats>,
    pub terminated_early: bool,
}

/// Grows the prefix tree round by round, delegating the release and
/// threshold step to `rule`.
pub fn grow_tree(
    devices: &[DeviceDataset],
    codebook: Option<&Codebook>,
    p: &TreeParams<'_>,
    rule: &mut dyn RoundRule,
) -> Result<TreeOutcome> {
    let r = p.r;
    let limit = p.dimension_limit;
    let deny = p.deny_list;
    let first_segment = match p.segmentation {
        SegmentationPolicy::Adaptive => next_segment_length(1, 0, limit, r)?,
        SegmentationPolicy::Uniform(s) => s.min(r),
    };
    let mut plan = RoundPlan::new(vec![BitString::empty()], first_segment, deny.iter().copied(), p.round_offset + 1, r)?;
    let mut discovered: BTreeSet<BitString> = BTreeSet::new();
    let mut hitters: Vec<HeavyHitter> = deny
        .iter()
        .map(|&bits| HeavyHitter {
            bits,
            word: codebook.and_then(|cb| cb.decode_word(&bits)),
            source: HitterSource::DenyList,
            est_count: None,
            round: None,
        })
        .collect();
    let mut per_round = Vec::new();
    let mut terminated_early = false;

    for t in 1..=p.rounds {
        let round = p.round_offset + t;
        let m = plan.domain_size();

        // Participation and selection, one independent stream per device.
        let picks: Vec<Option<Option<usize>>> = devices
            .par_iter()
            .enumerate()
            .map(|(i, d)| {
                let id = i as u64;
                let rd = round as u64;
                if p.participation < 1.0 && !stream(p.seed, id, rd, Purpose::Participate).random_bool(p.participation) {
                    return None;
                }
                Some(select_index(d, &plan, &p.selection, &mut stream(p.seed, id, rd, Purpose::Select)))
            })
            .collect();
        let n = picks.iter().filter(|x| x.is_some()).count() as u64;
        if n == 0 {
            terminated_early = true;
            break;
        }
        let mut histogram = vec![0u64; m + 1];
        for &k in picks.iter().flatten().flatten() {
            histogram[k] += 1;
        }

        let decision = rule
            .decide(&RoundInput {
                round,
                seed: p.seed,
                plan: &plan,
                picks: &picks,
                histogram: &histogram,
                participants: n,
            })
            .map_err(|e| e.in_round(round))?;
        let empirical_fp = decision.kept.iter().filter(|&&i| histogram[i] == 0).count();
        let mut estimates: HashMap<BitString, f64> = HashMap::with_capacity(decision.kept.len());
        let mut kept_prefixes = Vec::with_capacity(decision.kept.len());
        for (&i, &est) in decision.kept.iter().zip(&decision.estimates) {
            let prefix = plan.extended_prefix(i)?;
            estimates.insert(prefix, est);
            kept_prefixes.push(prefix);
        }
        let (mut live, new) = match codebook {
            Some(cb) => remove_finished(kept_prefixes, cb, r, &mut discovered)?,
            None => (kept_prefixes, Vec::new()),
        };
        let new_len = plan.prefix_length() + plan.segment_length();
        for &w in &new {
            hitters.push(HeavyHitter {
                bits: w,
                word: codebook.and_then(|cb| cb.decode_word(&w)),
                source: HitterSource::Discovered,
                est_count: estimates.get(&w.prefix(new_len)).copied(),
                round: Some(round),
            });
        }
        per_round.push(RoundStats {
            round,
            prefix_count: plan.prefixes().len(),
            prefix_length: plan.prefix_length(),
            segment_length: plan.segment_length(),
            domain_size: m,
            participants: n,
            tau_final: decision.tau,
            e_final: decision.e,
            kept: decision.kept.len(),
            new_discovered: new.len(),
            empirical_fp,
            sampled_aggregation: decision.sampled_aggregation,
        });

        let next_s = match p.segmentation {
            SegmentationPolicy::Adaptive => {
                next_segment_length(live.len(), new_len, limit, r).map_err(|e| e.in_round(round))?
            }
            SegmentationPolicy::Uniform(s) => {
                let s = s.min(r - new_len);
                // Live prefixes are ordered best first; keep what fits.
                live.truncate((limit >> s) as usize);
                s
            }
        };
        if live.is_empty() || next_s == 0 || t == p.rounds {
            terminated_early = t < p.rounds;
            for prefix in live {
                hitters.push(HeavyHitter {
                    bits: prefix,
                    word: None,
                    source: HitterSource::FinalPrefix,
                    est_count: estimates.get(&prefix).copied(),
                    round: Some(round),
                });
            }
            break;
        }
        plan = RoundPlan::new(live, next_s, deny.iter().copied(), round + 1, r)?;
    }

    Ok(TreeOutcome {
        heavy_hitters: hitters,
        per_round,
        terminated_early,
    })
}

/// Local randomization, exact-sum aggregation, debiasing and adaptive pruning.
struct LocalDpRule<'a> {
    oracle: &'a dyn FrequencyOracle,
    epsilon_local: f64,
    prune: PruneConfig,
    aggregation: AggregationMode,
}

impl RoundRule for LocalDpRule<'_> {
    fn decide(&mut self, input: &RoundInput<'_>) -> Result<RoundDecision> {
        let m = input.plan.domain_size();
        let n = input.participants;
        let params = self.oracle.params(self.epsilon_local, m)?;
        let sampled = match self.aggregation {
            AggregationMode::Exact => false,
            AggregationMode::Sampled => true,
            AggregationMode::Auto => n as f64 * (1.0 + (m + 1) as f64 * params.alpha0) > EXACT_BUDGET,
        };
        let agg = if sampled {
            let mut rng = stream(input.seed, u64::MAX, input.round as u64, Purpose::Aggregate);
            self.oracle.aggregate_histogram(input.histogram, n, &params, &mut rng)?
        } else {
            aggregate_exact(input.picks, self.oracle, &params, input.seed, input.round)?
        };
        let est = self.oracle.estimate(&agg, &params)?;
        let outcome = prune(&est.f_tilde, est.sigma_null, m, &self.prune);
        Ok(RoundDecision {
            estimates: outcome.kept.iter().map(|&i| est.f_tilde[i]).collect(),
            kept: outcome.kept,
            tau: outcome.tau,
            e: outcome.e,
            sampled_aggregation: sampled,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn run_with_epsilon(
    devices: &[DeviceDataset],
    codebook: Option<&Codebook>,
    cfg: &RunConfig,
    eps: f64,
    acc: Option<AccountantResult>,
    seed: u64,
    deny: &BTreeSet<BitString>,
    round_offset: usize,
) -> Result<RunResult> {
    let params = TreeParams {
        rounds: cfg.rounds,
        dimension_limit: cfg.dimension_limit,
        r: cfg.r,
        selection: cfg.selection,
        segmentation: cfg.segmentation,
        participation: cfg.budget.sampling_rate,
        deny_list: deny,
        seed,
        round_offset,
    };
    let mut rule = LocalDpRule {
        oracle: cfg.oracle.as_ref(),
        epsilon_local: eps,
        prune: cfg.prune,
        aggregation: cfg.aggregation,
    };
    let out = grow_tree(devices, codebook, &params, &mut rule)?;
    Ok(RunResult {
        heavy_hitters: out.heavy_hitters,
        per_round: out.per_round,
        epsilon_local: Some(eps),
        accountant: acc,
        terminated_early: out.terminated_early,
    })
}

fn aggregate_exact(
    picks: &[Option<Option<usize>>],
    oracle: &dyn FrequencyOracle,
    params: &crate::freq_oracle::OracleParams,
    seed: u64,
    round: usize,
) -> Result<AggregateReport> {
    let chunks: Vec<Result<(Vec<u32>, u64)>> = picks
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut ones = Vec::new();
            let mut n = 0;
            for (j, pick) in chunk.iter().enumerate() {
                let Some(index) = pick else { continue };
                let id = (c * CHUNK + j) as u64;
                let mut rng = stream(seed, id, round as u64, Purpose::Randomize);
                ones.extend_from_slice(oracle.randomize(*index, params, &mut rng)?.ones());
                n += 1;
            }
            Ok((ones, n))
        })
        .collect();
    let mut agg = AggregateReport::zeros(params.vector_len());
    for chunk in chunks {
        let (ones, n) = chunk?;
        for j in ones {
            agg.counts[j as usize] += 1;
        }
        agg.n += n;
    }
    Ok(agg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freq_oracle::{FrequencyEstimate, OracleParams, PrivatizedVector};
    use rand::RngCore;

    /// Reports every selection in the clear.
    struct Noiseless;

    impl FrequencyOracle for Noiseless {
        fn name(&self) -> &'static str {
            "noiseless"
        }

        fn params(&self, epsilon_local: f64, domain_size: usize) -> Result<OracleParams> {
            OracleParams::new(epsilon_local, domain_size, 0.0, 1.0)
        }

        fn randomize(&self, index: Option<usize>, params: &OracleParams, _: &mut dyn RngCore) -> Result<PrivatizedVector> {
            Ok(PrivatizedVector::from_ones(params.vector_len(), index.map(|k| k as u32).into_iter().collect()))
        }

        fn aggregate_histogram(&self, histogram: &[u64], n: u64, _: &OracleParams, _: &mut dyn RngCore) -> Result<AggregateReport> {
            Ok(AggregateReport {
                counts: histogram.to_vec(),
                n,
            })
        }

        fn estimate(&self, agg: &AggregateReport, params: &OracleParams) -> Result<FrequencyEstimate> {
            Ok(FrequencyEstimate {
                f_tilde: agg.counts[..params.domain_size].iter().map(|&c| c as f64).collect(),
                sigma: 0.0,
                sigma_null: 0.0,
            })
        }
    }

    fn corpus(words: &[(&str, usize)], cb: &Codebook, r: usize) -> Vec<DeviceDataset> {
        words
            .iter()
            .flat_map(|&(w, k)| std::iter::repeat_n(w, k))
            .map(|w| DeviceDataset::new([(cb.encode(w, r).unwrap(), 1)]))
            .collect()
    }

    fn config(n: u64, rounds: usize, seed: u64) -> RunConfig {
        let budget = PrivacyBudget::new(1.0, 1e-6, rounds, n).unwrap();
        RunConfig::new(rounds, 1 << 12, 40, budget, seed)
    }

    #[test]
    fn noiseless_run_recovers_the_trie() {
        let cb = Codebook::lowercase_5bit();
        let words = [("cat", 5), ("car", 3), ("dog", 1), ("a", 2), ("zebra", 1), ("cart", 4)];
        let data = corpus(&words, &cb, 40);
        let mut cfg = config(data.len() as u64, 12, 1);
        cfg.oracle = Arc::new(Noiseless);
        cfg.epsilon_local = Some(1.0);
        let res = run(&data, Some(&cb), &cfg).unwrap();
        let got: BTreeSet<Option<String>> = res.heavy_hitters.iter().map(|h| h.word.clone()).collect();
        let want: BTreeSet<Option<String>> = words.iter().map(|(w, _)| Some(w.to_string())).collect();
        assert_eq!(got, want);
        assert!(res.heavy_hitters.iter().all(|h| h.source == HitterSource::Discovered));
        for h in &res.heavy_hitters {
            let k = words.iter().find(|(w, _)| Some(*w) == h.word.as_deref()).unwrap().1;
            assert_eq!(h.est_count, Some(k as f64));
        }
        assert!(res.per_round.iter().all(|s| s.empirical_fp == 0));
    }

    #[test]
    fn deny_listed_words_are_never_reported_again() {
        let cb = Codebook::lowercase_5bit();
        let data = corpus(&[("cat", 5), ("car", 3)], &cb, 40);
        let mut cfg = config(data.len() as u64, 12, 1);
        cfg.oracle = Arc::new(Noiseless);
        cfg.epsilon_local = Some(1.0);
        cfg.deny_list.insert(cb.encode("cat", 40).unwrap());
        let res = run(&data, Some(&cb), &cfg).unwrap();
        let sources: Vec<(Option<&str>, HitterSource)> =
            res.heavy_hitters.iter().map(|h| (h.word.as_deref(), h.source)).collect();
        assert_eq!(
            sources,
            vec![(Some("cat"), HitterSource::DenyList), (Some("car"), HitterSource::Discovered)]
        );
    }

    #[test]
    fn runs_are_deterministic_in_the_seed() {
        let cb = Codebook::lowercase_5bit();
        let data = corpus(&[("the", 300), ("to", 200), ("and", 150), ("of", 100), ("zzz", 3)], &cb, 40);
        let cfg = config(data.len() as u64, 4, 7);
        let a = run(&data, Some(&cb), &cfg).unwrap();
        let b = run(&data, Some(&cb), &cfg).unwrap();
        assert_eq!(a, b);
        let c = run(&data, Some(&cb), &config(data.len() as u64, 4, 8)).unwrap();
        assert_ne!(a.per_round, c.per_round);
    }

    #[test]
    fn results_do_not_depend_on_the_thread_count() {
        let cb = Codebook::lowercase_5bit();
        let data = corpus(&[("the", 3000), ("to", 2000), ("and", 1500), ("of", 900)], &cb, 40);
        let mut cfg = config(data.len() as u64, 4, 3);
        cfg.budget = cfg.budget.with_sampling_rate(0.8).unwrap();
        let on = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run(&data, Some(&cb), &cfg).unwrap())
        };
        assert_eq!(on(1), on(4));
    }

    #[test]
    fn single_round_uses_one_segment() {
        let cb = Codebook::lowercase_5bit();
        let data = corpus(&[("the", 500), ("to", 300)], &cb, 40);
        let cfg = config(data.len() as u64, 1, 2);
        let res = run(&data, Some(&cb), &cfg).unwrap();
        assert_eq!(res.per_round.len(), 1);
        assert_eq!(res.per_round[0].segment_length, 12);
        assert!(!res.terminated_early);
        for h in &res.heavy_hitters {
            assert!(h.bits.len() == 12 || h.bits.len() == 40, "{h:?}");
        }
    }

    #[test]
    fn exact_aggregation_equals_the_sum_of_reports() {
        let params = OracleParams::replacement(2.0, 300).unwrap();
        let picks: Vec<Option<Option<usize>>> = (0..5000)
            .map(|i| match i % 7 {
                0 => None,
                1 => Some(None),
                k => Some(Some((i * k) % 300)),
            })
            .collect();
        let agg = aggregate_exact(&picks, &OheBrr, &params, 9, 3).unwrap();
        let mut want = AggregateReport::zeros(params.vector_len());
        for (i, p) in picks.iter().enumerate() {
            if let Some(index) = p {
                let mut rng = stream(9, i as u64, 3, Purpose::Randomize);
                want.add(&OheBrr.randomize(*index, &params, &mut rng).unwrap());
            }
        }
        assert_eq!(agg, want);
    }

    #[test]
    fn both_aggregation_paths_find_the_same_strong_words() {
        let cb = Codebook::lowercase_5bit();
        let data = corpus(&[("the", 4000), ("to", 3000), ("and", 2000)], &cb, 40);
        let mut found = Vec::new();
        for mode in [AggregationMode::Exact, AggregationMode::Sampled] {
            let mut cfg = config(data.len() as u64, 4, 5);
            cfg.aggregation = mode;
            let res = run(&data, Some(&cb), &cfg).unwrap();
            assert!(res.per_round.iter().all(|s| s.sampled_aggregation == (mode == AggregationMode::Sampled)));
            let words: BTreeSet<String> = res.heavy_hitters.into_iter().filter_map(|h| h.word).collect();
            found.push(words);
        }
        assert_eq!(found[0], found[1]);
        assert!(found[0].contains("the") && found[0].contains("and"));
    }

    #[test]
    fn two_run_mode_deny_lists_first_run_words() {
        let cb = Codebook::lowercase_5bit();
        let data = corpus(&[("the", 3000), ("to", 2000), ("and", 1500)], &cb, 40);
        let cfg = config(data.len() as u64, 4, 5);
        let res = run_two_rounds(&data, Some(&cb), &cfg).unwrap();
        let bits: Vec<BitString> = res.bits();
        let distinct: HashSet<&BitString> = bits.iter().collect();
        assert_eq!(distinct.len(), bits.len());
        assert!(res.per_round.iter().any(|s| s.round > 4));
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let data = vec![DeviceDataset::new([])];
        let mut cfg = config(1, 4, 0);
        cfg.rounds = 0;
        assert!(run(&data, None, &cfg).is_err());
        let mut cfg = config(1, 4, 0);
        cfg.segmentation = SegmentationPolicy::Uniform(20);
        assert!(run(&data, None, &cfg).is_err());
    }
}
