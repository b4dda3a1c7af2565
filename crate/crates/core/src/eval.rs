//! Ranking metrics, out-of-domain ratio, popularity-by-position statistics,
//! significance testing and configuration sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{EntityId, RecExample};
use crate::grounding::{MatcherConfig, RankedList};
use crate::prompting::{Adaptation, Engagement, InputMode, StrategyConfig, DEFAULT_N};

pub const DEFAULT_KS: [usize; 2] = [5, 10];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{what}: {left} vs {right}")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("need at least two paired values")]
    TooFewValues,
    #[error("resample count must be positive")]
    NoResamples,
    #[error("cutoffs must be positive")]
    BadCutoff,
    #[error("sweep grid is empty")]
    EmptyGrid,
}

/// 1-based position of `target`.
pub fn rank_of(target: EntityId, ranking: &[EntityId]) -> Option<usize> {
    ranking.iter().position(|&id| id == target).map(|i| i + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub hit: f64,
    pub mrr: f64,
    pub ndcg: f64,
}

/// Single-relevant-item metrics; everything past the cutoff scores 0.
pub fn metrics_for_instance(target: EntityId, ranking: &[EntityId], ks: &[usize]) -> BTreeMap<usize, AtK> {
    let rank = rank_of(target, ranking);
    ks.iter()
        .map(|&k| {
            let m = match rank {
                Some(r) if r <= k => AtK { hit: 1.0, mrr: 1.0 / r as f64, ndcg: 1.0 / ((r + 1) as f64).log2() },
                _ => AtK { hit: 0.0, mrr: 0.0, ndcg: 0.0 },
            };
            (k, m)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRow {
    pub hit: BTreeMap<usize, f64>,
    pub mrr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub instance_count: usize,
}

impl MetricRow {
    /// Bounds and orderings every row must satisfy.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut prev: Option<(usize, f64, f64, f64)> = None;
        for (&k, &hit) in &self.hit {
            let (mrr, ndcg) = (self.mrr[&k], self.ndcg[&k]);
            for v in [hit, mrr, ndcg] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("value {v} at K={k} outside [0, 1]"));
                }
            }
            if mrr > ndcg + 1e-12 || ndcg > hit + 1e-12 {
                return Err(format!("expected mrr <= ndcg <= hit at K={k}, got {mrr}, {ndcg}, {hit}"));
            }
            if let Some((pk, ph, pm, pn)) = prev {
                if hit + 1e-12 < ph || mrr + 1e-12 < pm || ndcg + 1e-12 < pn {
                    return Err(format!("metrics decrease from K={pk} to K={k}"));
                }
            }
            prev = Some((k, hit, mrr, ndcg));
        }
        Ok(())
    }
}

/// One instance per (example, target item); out-of-domain entries hold no rank.
pub fn evaluate(examples: &[RecExample], rankings: &[RankedList], ks: &[usize]) -> Result<MetricRow, EvalError> {
    if examples.len() != rankings.len() {
        return Err(EvalError::LengthMismatch { what: "examples vs rankings", left: examples.len(), right: rankings.len() });
    }
    if ks.contains(&0) {
        return Err(EvalError::BadCutoff);
    }
    let mut row = MetricRow::default();
    for &k in ks {
        row.hit.insert(k, 0.0);
        row.mrr.insert(k, 0.0);
        row.ndcg.insert(k, 0.0);
    }
    for (example, list) in examples.iter().zip(rankings) {
        let ranking = list.matched_ids();
        for &target in &example.target_items {
            row.instance_count += 1;
            for (k, m) in metrics_for_instance(target, &ranking, ks) {
                *row.hit.get_mut(&k).unwrap() += m.hit;
                *row.mrr.get_mut(&k).unwrap() += m.mrr;
                *row.ndcg.get_mut(&k).unwrap() += m.ndcg;
            }
        }
    }
    if row.instance_count > 0 {
        let n = row.instance_count as f64;
        for map in [&mut row.hit, &mut row.mrr, &mut row.ndcg] {
            map.values_mut().for_each(|v| *v /= n);
        }
    }
    Ok(row)
}

/// Share of out-of-domain entries over all lists, before removal. `0/0 = 0`.
pub fn ood_ratio(lists: &[RankedList]) -> f64 {
    let total: usize = lists.iter().map(|l| l.entries.len()).sum();
    if total == 0 {
        return 0.0;
    }
    lists.iter().map(RankedList::ood_count).sum::<usize>() as f64 / total as f64
}

/// Ground-truth frequency of each item over the given (training) examples.
pub fn popularity_table(train_examples: &[RecExample]) -> BTreeMap<EntityId, usize> {
    let mut table = BTreeMap::new();
    for example in train_examples {
        for &item in &example.target_items {
            *table.entry(item).or_insert(0) += 1;
        }
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Linear-interpolation quantile on sorted data (`h = (n − 1) q`).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let variance = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            count: sorted.len(),
            mean,
            variance,
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q3: quantile(&sorted, 0.75),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionStats {
    /// 1-based final rank position.
    pub position: usize,
    /// `None` when no list reaches this position.
    pub summary: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PopularityStats {
    pub positions: Vec<PositionStats>,
}

impl PopularityStats {
    pub fn at(&self, position: usize) -> Option<&Summary> {
        self.positions.get(position.checked_sub(1)?)?.summary.as_ref()
    }
}

/// Popularity distribution of matched items at positions `1..=n`.
pub fn popularity_stats(lists: &[RankedList], train_examples: &[RecExample], n: usize) -> PopularityStats {
    let table = popularity_table(train_examples);
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n];
    for list in lists {
        for (pos, id) in list.matched_ids().into_iter().take(n).enumerate() {
            columns[pos].push(table.get(&id).copied().unwrap_or(0) as f64);
        }
    }
    PopularityStats {
        positions: columns.iter().enumerate().map(|(i, c)| PositionStats { position: i + 1, summary: Summary::of(c) }).collect(),
    }
}

/// Two-sided p-value for `mean(a − b) = 0` from seeded paired resampling:
/// `min(1, 2 · min(P(mean* ≤ 0), P(mean* ≥ 0)))`.
pub fn paired_bootstrap(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch { what: "paired samples", left: a.len(), right: b.len() });
    }
    if a.len() < 2 {
        return Err(EvalError::TooFewValues);
    }
    if resamples == 0 {
        return Err(EvalError::NoResamples);
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut at_most_zero, mut at_least_zero) = (0usize, 0usize);
    for _ in 0..resamples {
        let sum: f64 = (0..diffs.len()).map(|_| diffs[rng.random_range(0..diffs.len())]).sum();
        let mean = sum / diffs.len() as f64;
        at_most_zero += usize::from(mean <= 0.0);
        at_least_zero += usize::from(mean >= 0.0);
    }
    let tail = at_most_zero.min(at_least_zero) as f64 / resamples as f64;
    Ok((2.0 * tail).min(1.0))
}

/// Identifies what produced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_id: String,
    pub method: String,
    pub strategy: StrategyConfig,
    pub matcher: MatcherConfig,
    pub recommender: String,
    pub llm_model: String,
    pub provider: String,
    pub seed: u64,
    /// Fully resolved run configuration.
    pub resolved_config: serde_json::Value,
}

/// Outcome of the pipeline on one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleResult {
    pub example_id: String,
    pub raw_reply: String,
    pub ranked: RankedList,
    /// Lines in the serialized candidate block of the prompt.
    pub candidate_lines: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub example_id: String,
    pub config_id: String,
    pub raw_reply_hash: String,
    pub matched_ids: Vec<EntityId>,
    pub ood_flags: Vec<bool>,
    pub per_target_ranks: BTreeMap<EntityId, Option<usize>>,
    pub candidate_lines: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub metrics: MetricRow,
    pub ood_ratio: f64,
    pub popularity: PopularityStats,
    pub records: Vec<ExampleRecord>,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Aggregates per-example results in (dialogue id, turn) order.
pub fn build_report(
    meta: ReportMeta,
    examples: &[RecExample],
    results: &[ExampleResult],
    train_examples: &[RecExample],
    ks: &[usize],
) -> Result<EvalReport, EvalError> {
    if examples.len() != results.len() {
        return Err(EvalError::LengthMismatch { what: "examples vs results", left: examples.len(), right: results.len() });
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by(|&a, &b| {
        (&examples[a].dialogue_id, examples[a].turn_index).cmp(&(&examples[b].dialogue_id, examples[b].turn_index))
    });
    let examples: Vec<RecExample> = order.iter().map(|&i| examples[i].clone()).collect();
    let results: Vec<&ExampleResult> = order.iter().map(|&i| &results[i]).collect();
    let lists: Vec<RankedList> = results.iter().map(|r| r.ranked.clone()).collect();

    let metrics = evaluate(&examples, &lists, ks)?;
    let records = examples
        .iter()
        .zip(&results)
        .map(|(example, result)| {
            let matched = result.ranked.matched_ids();
            ExampleRecord {
                example_id: example.id(),
                config_id: meta.config_id.clone(),
                raw_reply_hash: sha256_hex(&result.raw_reply),
                per_target_ranks: example.target_items.iter().map(|&t| (t, rank_of(t, &matched))).collect(),
                matched_ids: matched,
                ood_flags: result.ranked.entries.iter().map(|e| e.ood).collect(),
                candidate_lines: result.candidate_lines,
                error: result.error.clone(),
            }
        })
        .collect();
    Ok(EvalReport {
        ood_ratio: ood_ratio(&lists),
        popularity: popularity_stats(&lists, train_examples, meta.strategy.n),
        metrics,
        records,
        meta,
    })
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    summary: SummaryBody<'a>,
}

#[derive(Serialize)]
struct SummaryBody<'a> {
    meta: &'a ReportMeta,
    metrics: &'a MetricRow,
    ood_ratio: f64,
    popularity: &'a PopularityStats,
    example_count: usize,
    error_count: usize,
}

/// One JSON line per example, then one summary line.
pub fn write_report<W: Write>(report: &EvalReport, mut out: W) -> io::Result<()> {
    for record in &report.records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    let summary = SummaryRecord {
        summary: SummaryBody {
            meta: &report.meta,
            metrics: &report.metrics,
            ood_ratio: report.ood_ratio,
            popularity: &report.popularity,
            example_count: report.records.len(),
            error_count: report.records.iter().filter(|r| r.error.is_some()).count(),
        },
    };
    serde_json::to_writer(&mut out, &summary)?;
    out.write_all(b"\n")
}

pub fn save_report(report: &EvalReport, path: &Path) -> io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::new();
    write_report(report, &mut buf)?;
    std::fs::write(path, buf)
}

/// Fixed-width table for terminals.
pub fn summary_table(report: &EvalReport) -> String {
    let m = &report.metrics;
    let mut out = String::new();
    let _ = writeln!(out, "config   {}", report.meta.config_id);
    let _ = writeln!(out, "method   {}", report.meta.method);
    let _ = writeln!(out, "examples {}   instances {}", report.records.len(), m.instance_count);
    let mut header = String::from("        ");
    let mut hit = String::from("HIT     ");
    let mut mrr = String::from("MRR     ");
    let mut ndcg = String::from("NDCG    ");
    for k in m.hit.keys() {
        let _ = write!(header, "{:>9}", format!("@{k}"));
        let _ = write!(hit, "{:>9.4}", m.hit[k]);
        let _ = write!(mrr, "{:>9.4}", m.mrr[k]);
        let _ = write!(ndcg, "{:>9.4}", m.ndcg[k]);
    }
    for line in [header, hit, mrr, ndcg] {
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "OOD ratio {:.4}", report.ood_ratio);
    if let Some(top) = report.popularity.at(1) {
        let _ = writeln!(out, "position-1 popularity mean {:.3} variance {:.3}", top.mean, top.variance);
    }
    out
}

/// Cartesian product of strategy settings. An empty `ks` uses each engagement's default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub adaptations: Vec<Adaptation>,
    pub engagements: Vec<Engagement>,
    #[serde(default)]
    pub ks: Vec<i64>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub input_mode: InputMode,
}

fn default_n() -> usize {
    DEFAULT_N
}

impl SweepGrid {
    /// Valid cells as configs, invalid ones as `(label, reason)`.
    pub fn cells(&self) -> Vec<Result<StrategyConfig, (String, String)>> {
        let mut out = Vec::new();
        for &m in &self.adaptations {
            for &s in &self.engagements {
                let ks: Vec<i64> = if self.ks.is_empty() { vec![s.default_k(self.n) as i64] } else { self.ks.clone() };
                for k in ks {
                    let label = format!("{m}-{s}-k{k}-n{}-{}", self.n, self.input_mode);
                    if k < 0 {
                        out.push(Err((label, format!("k = {k} is negative"))));
                        continue;
                    }
                    let cfg = StrategyConfig::new(m, s).with_n(self.n).with_k(k as usize).with_input_mode(self.input_mode);
                    out.push(cfg.validate().map(|_| cfg).map_err(|e| (label, e.to_string())));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub config_id: String,
    pub outcome: Result<EvalReport, String>,
}

/// Runs every cell; failures are recorded and the sweep continues.
pub fn sweep<F>(grid: &SweepGrid, mut run_cell: F) -> Result<Vec<SweepCell>, EvalError>
where
    F: FnMut(&StrategyConfig) -> Result<EvalReport, String>,
{
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    Ok(cells
        .into_iter()
        .map(|cell| match cell {
            Ok(cfg) => SweepCell { config_id: cfg.id(), outcome: run_cell(&cfg) },
            Err((label, reason)) => SweepCell { config_id: label, outcome: Err(reason) },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::grounding::GroundedEntry;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn example(id: &str, targets: &[EntityId]) -> RecExample {
        RecExample { dialogue_id: id.into(), turn_index: 1, context: Vec::new(), target_items: targets.iter().copied().collect(), split: Split::Test }
    }

    fn list(ids: &[Option<EntityId>]) -> RankedList {
        RankedList {
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, &m)| GroundedEntry { raw_title: format!("t{i}"), matched_item: m, ood: m.is_none(), source_rank: i + 1 })
                .collect(),
            strategy: Engagement::Expansion,
        }
    }

    #[test]
    fn ranks() {
        assert_eq!(rank_of(4, &[4, 1, 2]), Some(1));
        assert_eq!(rank_of(9, &[4, 1, 2]), None);
        assert_eq!(rank_of(2, &[0, 1, 2, 3, 4]), Some(3));
    }

    #[test]
    fn closed_form_instance() {
        let m = metrics_for_instance(2, &[0, 1, 2, 3, 4], &[5]);
        assert_eq!(m[&5], AtK { hit: 1.0, mrr: 1.0 / 3.0, ndcg: 0.5 });
        let top = metrics_for_instance(0, &[0], &[1, 5, 10]);
        assert!(top.values().all(|m| *m == AtK { hit: 1.0, mrr: 1.0, ndcg: 1.0 }));
        let far = metrics_for_instance(6, &[0, 1, 2, 3, 4, 5, 6], &[5]);
        assert_eq!(far[&5], AtK { hit: 0.0, mrr: 0.0, ndcg: 0.0 });
    }

    #[test]
    fn averaging_and_ood_removal() {
        let row = evaluate(&[example("a", &[7])], &[list(&[Some(7)])], &[5]).unwrap();
        assert_eq!((row.hit[&5], row.mrr[&5], row.ndcg[&5], row.instance_count), (1.0, 1.0, 1.0, 1));
        // two targets on one example: ranks 1 and absent
        let row = evaluate(&[example("a", &[7, 8])], &[list(&[Some(7), Some(1)])], &[5]).unwrap();
        assert_eq!((row.hit[&5], row.mrr[&5], row.ndcg[&5], row.instance_count), (0.5, 0.5, 0.5, 2));
        // an OOD entry ahead of the target does not take a rank
        let row = evaluate(&[example("a", &[7])], &[list(&[None, Some(7)])], &[1]).unwrap();
        assert_eq!(row.hit[&1], 1.0);
        assert!(matches!(evaluate(&[example("a", &[7])], &[], &[5]), Err(EvalError::LengthMismatch { .. })));
        assert_eq!(evaluate(&[], &[], &[5]).unwrap().hit[&5], 0.0);
    }

    #[test]
    fn ood_ratios() {
        assert_eq!(ood_ratio(&[]), 0.0);
        assert_eq!(ood_ratio(&[list(&[Some(1), Some(2)])]), 0.0);
        let mixed = list(&[None, Some(1), None, Some(2), Some(3), None, Some(4), Some(5), Some(6), Some(7)]);
        assert_abs_diff_eq!(ood_ratio(&[mixed]), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn popularity() {
        let train: Vec<RecExample> = (0..50).map(|i| example(&format!("d{i}"), &[0])).chain([example("x", &[1]), example("y", &[1]), example("y", &[1]), example("z", &[2])]).collect();
        let table = popularity_table(&train);
        assert_eq!(table[&0], 50);
        assert_eq!(table[&1], 3);
        let stats = popularity_stats(&[list(&[Some(0)]), list(&[Some(0), Some(2)])], &train, 3);
        let top = stats.at(1).unwrap();
        assert_eq!((top.mean, top.variance), (50.0, 0.0));
        assert!(stats.at(3).is_none());
        // popularities {1, 3} at position 1
        let two = popularity_stats(&[list(&[Some(2)]), list(&[Some(1)])], &train, 1);
        let s = two.at(1).unwrap();
        assert_eq!((s.mean, s.variance, s.min, s.max), (2.0, 1.0, 1.0, 3.0));
        assert!(popularity_stats(&[], &train, 4).positions.iter().all(|p| p.summary.is_none()));
    }

    #[test]
    fn quartiles_interpolate() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.75, 2.5, 3.25));
        let one = Summary::of(&[5.0]).unwrap();
        assert_eq!((one.q1, one.median, one.q3, one.variance), (5.0, 5.0, 5.0, 0.0));
    }

    #[test]
    fn bootstrap() {
        let a = [0.2, 0.5, 0.9, 0.1];
        assert_eq!(paired_bootstrap(&a, &a, 500, 1).unwrap(), 1.0);
        let ones = [1.0; 30];
        let zeros = [0.0; 30];
        assert!(paired_bootstrap(&ones, &zeros, 1000, 3).unwrap() < 0.01);
        let x = [0.1, 0.4, 0.3, 0.9, 0.0, 0.2];
        let y = [0.2, 0.1, 0.3, 0.5, 0.1, 0.0];
        assert_eq!(paired_bootstrap(&x, &y, 800, 9).unwrap(), paired_bootstrap(&x, &y, 800, 9).unwrap());
        assert_eq!(paired_bootstrap(&x, &y[..3], 10, 0), Err(EvalError::LengthMismatch { what: "paired samples", left: 6, right: 3 }));
        assert_eq!(paired_bootstrap(&[1.0], &[0.0], 10, 0), Err(EvalError::TooFewValues));
    }

    #[test]
    fn grid_cells() {
        let grid = SweepGrid { adaptations: vec![Adaptation::Direct], engagements: Engagement::ALL.to_vec(), ks: vec![], n: 20, input_mode: InputMode::FullConversation };
        let cells = grid.cells();
        assert_eq!(cells.len(), 3);
        assert!(cells.iter().all(Result::is_ok));
        let grid = SweepGrid { adaptations: vec![Adaptation::Direct], engagements: vec![Engagement::SelectRerank], ks: vec![10, -1, 50], n: 20, input_mode: InputMode::FullConversation };
        let cells = grid.cells();
        assert_eq!(cells.iter().filter(|c| c.is_err()).count(), 1);
        let empty = SweepGrid { adaptations: vec![], ..grid };
        assert_eq!(sweep(&empty, |_| Err("unused".into())), Err(EvalError::EmptyGrid));
        let parsed: SweepGrid = toml::from_str("adaptations = [\"direct\", \"description\"]\nengagements = [\"rerank\"]").unwrap();
        assert_eq!(parsed.cells().len(), 2);
    }

    /// Per-instance loop with its own rank search and log base, kept independent of `evaluate`.
    fn naive(examples: &[RecExample], lists: &[RankedList], k: usize) -> (f64, f64, f64) {
        let (mut h, mut m, mut n, mut count) = (0.0, 0.0, 0.0, 0usize);
        for (ex, l) in examples.iter().zip(lists) {
            let ranking: Vec<EntityId> = l.entries.iter().filter(|e| !e.ood).map(|e| e.matched_item.unwrap()).collect();
            for t in &ex.target_items {
                count += 1;
                for (i, id) in ranking.iter().enumerate().take(k) {
                    if id == t {
                        h += 1.0;
                        m += 1.0 / (i + 1) as f64;
                        n += std::f64::consts::LN_2 / ((i + 2) as f64).ln();
                    }
                }
            }
        }
        let c = count.max(1) as f64;
        (h / c, m / c, n / c)
    }

    fn arb_case() -> impl Strategy<Value = Vec<(Vec<EntityId>, Vec<Option<EntityId>>)>> {
        proptest::collection::vec(
            (
                proptest::collection::btree_set(0usize..30, 1..4).prop_map(|s| s.into_iter().collect::<Vec<_>>()),
                proptest::collection::vec(proptest::option::weighted(0.85, 0usize..30), 0..15)
                    .prop_map(|v| {
                        let mut seen = std::collections::HashSet::new();
                        v.into_iter().map(|x| x.filter(|id| seen.insert(*id))).collect::<Vec<_>>()
                    }),
            ),
            1..12,
        )
    }

    fn build(case: &[(Vec<EntityId>, Vec<Option<EntityId>>)]) -> (Vec<RecExample>, Vec<RankedList>) {
        case.iter().enumerate().map(|(i, (t, r))| (example(&format!("e{i}"), t), list(r))).unzip()
    }

    proptest! {
        #[test]
        fn matches_naive_oracle(case in arb_case()) {
            let (examples, lists) = build(&case);
            let row = evaluate(&examples, &lists, &[5, 10]).unwrap();
            for k in [5, 10] {
                let (h, m, n) = naive(&examples, &lists, k);
                prop_assert!((row.hit[&k] - h).abs() < 1e-12);
                prop_assert!((row.mrr[&k] - m).abs() < 1e-12);
                prop_assert!((row.ndcg[&k] - n).abs() < 1e-12);
            }
            prop_assert!(row.check_invariants().is_ok());
        }

        #[test]
        fn order_invariant(case in arb_case(), seed in any::<u64>()) {
            let (examples, lists) = build(&case);
            let mut idx: Vec<usize> = (0..examples.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..idx.len()).rev() {
                idx.swap(i, rand::Rng::random_range(&mut rng, 0..=i));
            }
            let shuffled_ex: Vec<_> = idx.iter().map(|&i| examples[i].clone()).collect();
            let shuffled_l: Vec<_> = idx.iter().map(|&i| lists[i].clone()).collect();
            let a = evaluate(&examples, &lists, &[1, 5, 10]).unwrap();
            let b = evaluate(&shuffled_ex, &shuffled_l, &[1, 5, 10]).unwrap();
            for k in [1, 5, 10] {
                prop_assert!((a.hit[&k] - b.hit[&k]).abs() < 1e-12);
                prop_assert!((a.mrr[&k] - b.mrr[&k]).abs() < 1e-12);
                prop_assert!((a.ndcg[&k] - b.ndcg[&k]).abs() < 1e-12);
            }
        }

        #[test]
        fn monotone_in_k(case in arb_case()) {
            let (examples, lists) = build(&case);
            let row = evaluate(&examples, &lists, &[1, 2, 3, 5, 10, 20]).unwrap();
            prop_assert!(row.check_invariants().is_ok());
        }
    }
}
