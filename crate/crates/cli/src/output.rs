//! `results.csv`, `rounds.csv` and `summary.txt`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use prefixhh::encoding::Codebook;
use prefixhh::engine::{HeavyHitter, HitterSource, RunResult};
use prefixhh::metrics::{evaluate, window_marginals, GlobalDistribution, MetricsReport};
use prefixhh::BitString;

fn source_name(s: HitterSource) -> &'static str {
    match s {
        HitterSource::DenyList => "deny_list",
        HitterSource::Discovered => "discovered",
        HitterSource::FinalPrefix => "final_prefix",
    }
}

/// Metrics over newly discovered words (deny-list entries and unfinished
/// prefixes excluded).
pub fn discovered_metrics(result: &RunResult, f: &GlobalDistribution, window: usize) -> MetricsReport {
    let words: Vec<BitString> = result
        .heavy_hitters
        .iter()
        .filter(|h| h.source == HitterSource::Discovered)
        .map(|h| h.bits)
        .collect();
    evaluate(&words, f, window)
}

pub struct Summary<'a> {
    pub method: &'a str,
    pub n_devices: usize,
    pub extra: Vec<(&'a str, String)>,
}

/// Writes the three output files into `dir`.
pub fn write_all(
    dir: &Path,
    result: &RunResult,
    f: &GlobalDistribution,
    codebook: &Codebook,
    window: usize,
    summary: &Summary<'_>,
) -> anyhow::Result<MetricsReport> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write_results(&dir.join("results.csv"), result, f, codebook, window, summary.n_devices)?;
    write_rounds(&dir.join("rounds.csv"), result)?;
    let report = discovered_metrics(result, f, window);
    write_summary(&dir.join("summary.txt"), result, &report, summary)?;
    Ok(report)
}

fn write_results(
    path: &Path,
    result: &RunResult,
    f: &GlobalDistribution,
    codebook: &Codebook,
    window: usize,
    n_devices: usize,
) -> anyhow::Result<()> {
    // Finished words only, ranked by true mass; unfinished prefixes go last.
    let by_bits: HashMap<BitString, &HeavyHitter> = result.heavy_hitters.iter().map(|h| (h.bits, h)).collect();
    let words: Vec<BitString> = result
        .heavy_hitters
        .iter()
        .filter(|h| h.source != HitterSource::FinalPrefix)
        .map(|h| h.bits)
        .collect();
    let ordered = f.order(&words);
    let marg = window_marginals(&ordered, f, window);
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    let marg_col = format!("window_marginal_W{window}");
    w.write_record(["rank", "word", "true_freq", "est_freq", marg_col.as_str(), "is_false_positive", "source"])?;
    let est = |h: &HeavyHitter| h.est_count.map(|c| format!("{:.9}", c / n_devices.max(1) as f64)).unwrap_or_default();
    for (i, bits) in ordered.iter().enumerate() {
        let h = by_bits[bits];
        let word = codebook.decode_word(bits).unwrap_or_else(|| bits.to_string());
        w.write_record([
            (i + 1).to_string(),
            word,
            format!("{:.9}", f.prob(bits)),
            est(h),
            format!("{:.9}", marg[i]),
            (!f.contains(bits)).to_string(),
            source_name(h.source).to_string(),
        ])?;
    }
    for h in result.heavy_hitters.iter().filter(|h| h.source == HitterSource::FinalPrefix) {
        w.write_record([
            String::new(),
            h.bits.to_string(),
            format!("{:.9}", 0.0),
            est(h),
            String::new(),
            String::new(),
            source_name(h.source).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_rounds(path: &Path, result: &RunResult) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record([
        "round",
        "prefix_count",
        "segment_length",
        "tau_final",
        "kept",
        "domain_size",
        "prefix_length",
        "participants",
        "e_final",
        "new_discovered",
        "empirical_fp",
        "sampled_aggregation",
    ])?;
    for s in &result.per_round {
        w.write_record([
            s.round.to_string(),
            s.prefix_count.to_string(),
            s.segment_length.to_string(),
            format!("{:.9}", s.tau_final),
            s.kept.to_string(),
            s.domain_size.to_string(),
            s.prefix_length.to_string(),
            s.participants.to_string(),
            format!("{:.6e}", s.e_final),
            s.new_discovered.to_string(),
            s.empirical_fp.to_string(),
            s.sampled_aggregation.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary(path: &Path, result: &RunResult, report: &MetricsReport, s: &Summary<'_>) -> anyhow::Result<()> {
    let mut out = Vec::new();
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "n/a".into());
    writeln!(out, "method = {}", s.method)?;
    writeln!(out, "n_devices = {}", s.n_devices)?;
    writeln!(out, "discovered_count = {}", report.discovered_count)?;
    writeln!(out, "fp_count = {}", report.fp_count)?;
    writeln!(out, "fp_ratio = {:.6}", report.fp_ratio)?;
    writeln!(out, "weight_ratio = {:.6}", report.weight_ratio)?;
    writeln!(out, "utility_loss = {:.6}", report.utility_loss)?;
    writeln!(out, "epsilon_local = {}", opt(result.epsilon_local))?;
    writeln!(out, "achieved_epsilon_agg = {}", opt(result.accountant.map(|a| a.achieved_epsilon_agg)))?;
    let count = |src| result.heavy_hitters.iter().filter(|h| h.source == src).count();
    writeln!(out, "deny_list_size = {}", count(HitterSource::DenyList))?;
    writeln!(out, "final_prefixes = {}", count(HitterSource::FinalPrefix))?;
    writeln!(out, "rounds_run = {}", result.per_round.len())?;
    writeln!(out, "terminated_early = {}", result.terminated_early)?;
    for (k, v) in &s.extra {
        writeln!(out, "{k} = {v}")?;
    }
    std::fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
