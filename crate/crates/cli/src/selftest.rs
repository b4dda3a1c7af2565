//! Built-in consistency checks against independent reference implementations.

use std::path::{Path, PathBuf};

use anyhow::anyhow;
use care::corpus::{RecExample, Split};
use care::eval::evaluate;
use care::grounding::{levenshtein, GroundedEntry, RankedList};
use care::prompting::golden::{check_goldens, default_golden_dir};
use care::prompting::Engagement;
use care::seqrec::{gradient_check, RecConfig, RecModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::{CmdResult, Failure};

type Check = Result<String, String>;

fn gradients(seed: u64) -> Check {
    let config = RecConfig { embed_dim: 8, layers: 1, heads: 1, max_sequence_length: 8, dropout: 0.0, ..RecConfig::default() };
    let mut model = RecModel::new(config, 10, 7, &[]).map_err(|e| e.to_string())?.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.params.for_each_mut(|t| t.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5)));
    let input = [2, 8, 0, 5, model.mask_id()];
    let report = gradient_check(&model, &input, 3, 1e-5, 200, seed).map_err(|e| e.to_string())?;
    let msg = format!("max relative error {:.2e} over {} coordinates", report.max_relative_error, report.checked);
    if report.max_relative_error < 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn naive_metric(targets: &[usize], ranking: &[usize], k: usize) -> (f64, f64, f64) {
    let (mut h, mut m, mut n) = (0.0, 0.0, 0.0);
    for t in targets {
        for (i, id) in ranking.iter().enumerate().take(k) {
            if id == t {
                h += 1.0;
                m += 1.0 / (i + 1) as f64;
                n += std::f64::consts::LN_2 / ((i + 2) as f64).ln();
            }
        }
    }
    (h, m, n)
}

fn metrics(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::new();
    let mut lists = Vec::new();
    let mut sums = [(0.0, 0.0, 0.0); 2];
    let mut count = 0usize;
    for i in 0..1000 {
        let target = rng.random_range(0..40usize);
        let mut ranking: Vec<usize> = (0..40).collect();
        for j in (1..ranking.len()).rev() {
            ranking.swap(j, rng.random_range(0..=j));
        }
        ranking.truncate(rng.random_range(0..15));
        for (slot, k) in [5usize, 10].into_iter().enumerate() {
            let (h, m, n) = naive_metric(&[target], &ranking, k);
            sums[slot].0 += h;
            sums[slot].1 += m;
            sums[slot].2 += n;
        }
        count += 1;
        examples.push(RecExample { dialogue_id: format!("r{i}"), turn_index: 0, context: Vec::new(), target_items: [target].into(), split: Split::Test });
        lists.push(RankedList {
            entries: ranking
                .iter()
                .enumerate()
                .map(|(r, &id)| GroundedEntry { raw_title: String::new(), matched_item: Some(id), ood: false, source_rank: r + 1 })
                .collect(),
            strategy: Engagement::Expansion,
        });
    }
    let row = evaluate(&examples, &lists, &[5, 10]).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (slot, k) in [5usize, 10].into_iter().enumerate() {
        let c = count as f64;
        worst = worst
            .max((row.hit[&k] - sums[slot].0 / c).abs())
            .max((row.mrr[&k] - sums[slot].1 / c).abs())
            .max((row.ndcg[&k] - sums[slot].2 / c).abs());
    }
    let msg = format!("1000 instances, max deviation {worst:.1e}");
    if worst <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn dp_distance(a: &[char], b: &[char]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in t.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in t[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = t[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            t[i][j] = sub.min(t[i - 1][j] + 1).min(t[i][j - 1] + 1);
        }
    }
    t[a.len()][b.len()]
}

fn edit_distance(seed: u64) -> Check {
    if levenshtein("kitten", "sitting") != 3 {
        return Err("kitten/sitting is not 3".into());
    }
    let alphabet: Vec<char> = "abcde xyzé".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word = |rng: &mut ChaCha8Rng| -> Vec<char> { (0..rng.random_range(0..=30)).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect() };
    for _ in 0..1000 {
        let (a, b) = (word(&mut rng), word(&mut rng));
        let (sa, sb): (String, String) = (a.iter().collect(), b.iter().collect());
        if levenshtein(&sa, &sb) != dp_distance(&a, &b) {
            return Err(format!("mismatch on {sa:?} / {sb:?}"));
        }
    }
    Ok("1000 random pairs agree with the DP table".into())
}

fn goldens(dir: &Path) -> Check {
    let stale = check_goldens(dir);
    if stale.is_empty() {
        Ok(format!("9 prompts match {}", dir.display()))
    } else {
        Err(format!("mismatched: {}", stale.join(", ")))
    }
}

pub fn run(cfg: &RunConfig, golden_dir: Option<PathBuf>) -> CmdResult {
    let dir = golden_dir.unwrap_or_else(default_golden_dir);
    let checks = [
        ("gradient", gradients(cfg.seed)),
        ("metrics", metrics(cfg.seed)),
        ("levenshtein", edit_distance(cfg.seed)),
        ("prompt-goldens", goldens(&dir)),
    ];
    let mut failed = 0;
    for (name, result) in &checks {
        match result {
            Ok(msg) => println!("PASS  {name:<15} {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name:<15} {msg}");
            }
        }
    }
    if failed > 0 {
        return Err(Failure::Check(anyhow!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}
