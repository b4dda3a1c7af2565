//! Turning free-text LLM replies into catalog items.
//!
//! Replies are parsed into ranked titles, each title is matched to the closest
//! item alias by normalized Levenshtein distance, and titles that match nothing
//! (or, for constrained strategies, nothing in the candidate set) are flagged
//! out-of-domain.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{EntityCatalog, EntityId};
use crate::prompting::Engagement;
use crate::seqrec::CandidateSet;
use crate::text;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GroundingError {
    #[error("strategy {0:?} needs a candidate set")]
    MissingCandidates(Engagement),
    #[error("theta must lie in [0, 1], got {0}")]
    BadTheta(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    /// Maximum normalized edit distance `d / max(|a|, |b|)` for a match.
    pub theta: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self { theta: 0.2 }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<(), GroundingError> {
        if (0.0..=1.0).contains(&self.theta) {
            Ok(())
        } else {
            Err(GroundingError::BadTheta(self.theta.to_string()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedEntry {
    pub raw_title: String,
    pub matched_item: Option<EntityId>,
    pub ood: bool,
    /// 1-based position of the title in the parsed reply.
    pub source_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<GroundedEntry>,
    pub strategy: Engagement,
}

impl RankedList {
    /// Matched items in rank order, out-of-domain entries removed.
    pub fn matched_ids(&self) -> Vec<EntityId> {
        self.entries.iter().filter_map(|e| e.matched_item).collect()
    }

    pub fn ood_count(&self) -> usize {
        self.entries.iter().filter(|e| e.ood).count()
    }

    /// The recommender's own ranking viewed as a grounded list.
    pub fn from_candidates(candidates: &CandidateSet, catalog: &EntityCatalog, strategy: Engagement) -> Self {
        let entries = candidates
            .entries
            .iter()
            .enumerate()
            .map(|(i, c)| GroundedEntry {
                raw_title: catalog.name(c.item).to_string(),
                matched_item: Some(c.item),
                ood: false,
                source_rank: i + 1,
            })
            .collect();
        Self { entries, strategy }
    }
}

fn strip_list_prefix(line: &str) -> Option<&str> {
    if let Some(rest) = line.strip_prefix('-') {
        return Some(rest);
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))
}

const QUOTES: &[char] = &['"', '\'', '“', '”', '‘', '’', '`'];

/// Extracts titles from lines starting with `N.`, `N)` or `-`, in order, up to `n_max`.
pub fn parse_ranked_list(reply: &str, n_max: usize) -> Vec<String> {
    reply
        .lines()
        .filter_map(|line| strip_list_prefix(line.trim()))
        .map(|title| title.trim().trim_matches(QUOTES).trim().to_string())
        .filter(|title| !title.is_empty())
        .take(n_max)
        .collect()
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Precomputed normalized item aliases for repeated matching.
#[derive(Debug, Clone)]
pub struct ItemMatcher {
    aliases: Vec<(EntityId, Vec<char>)>,
    exact: HashMap<String, EntityId>,
}

impl ItemMatcher {
    pub fn new(catalog: &EntityCatalog) -> Self {
        let mut aliases = Vec::new();
        let mut exact: HashMap<String, EntityId> = HashMap::new();
        for record in catalog.items() {
            let mut seen = HashSet::new();
            for alias in &record.aliases {
                let norm = text::normalize_title(alias);
                if norm.is_empty() || !seen.insert(norm.clone()) {
                    continue;
                }
                exact.entry(norm.clone()).and_modify(|id| *id = (*id).min(record.id)).or_insert(record.id);
                aliases.push((record.id, norm.chars().collect()));
            }
        }
        Self { aliases, exact }
    }

    /// Closest item by normalized distance if within `theta`; ties go to the
    /// smaller raw distance, then the lower id.
    pub fn match_title(&self, raw_title: &str, config: &MatcherConfig) -> Option<EntityId> {
        let query = text::normalize_title(raw_title);
        if query.is_empty() {
            return None;
        }
        if let Some(&id) = self.exact.get(&query) {
            return Some(id);
        }
        let q: Vec<char> = query.chars().collect();
        // (distance, max length, id)
        let mut best: Option<(usize, usize, EntityId)> = None;
        for (id, alias) in &self.aliases {
            let m = q.len().max(alias.len());
            let lower = q.len().abs_diff(alias.len());
            if lower as f64 > config.theta * m as f64 {
                continue;
            }
            if let Some((bd, bm, _)) = best {
                if lower * bm > bd * m {
                    continue;
                }
            }
            let d = levenshtein_chars(&q, alias);
            if d as f64 > config.theta * m as f64 {
                continue;
            }
            let better = match best {
                None => true,
                Some((bd, bm, bid)) => (d * bm, d, *id) < (bd * m, bd, bid),
            };
            if better {
                best = Some((d, m, *id));
            }
        }
        best.map(|(_, _, id)| id)
    }
}

pub fn match_item(raw_title: &str, catalog: &EntityCatalog, config: &MatcherConfig) -> Option<EntityId> {
    ItemMatcher::new(catalog).match_title(raw_title, config)
}

/// Matches titles, drops repeated items (first occurrence wins), enforces the
/// candidate constraint for `rerank`/`select_rerank` and truncates to `n`.
pub fn ground_list(
    raw_titles: &[String],
    matcher: &ItemMatcher,
    candidates: Option<&CandidateSet>,
    strategy: Engagement,
    config: &MatcherConfig,
    n: usize,
) -> Result<RankedList, GroundingError> {
    let allowed: Option<HashSet<EntityId>> = match (strategy.is_constrained(), candidates) {
        (true, None) => return Err(GroundingError::MissingCandidates(strategy)),
        (true, Some(c)) => Some(c.ids().into_iter().collect()),
        (false, _) => None,
    };
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, title) in raw_titles.iter().enumerate() {
        if entries.len() == n {
            break;
        }
        let mut matched = matcher.match_title(title, config);
        if let Some(id) = matched {
            if !seen.insert(id) {
                continue;
            }
            if allowed.as_ref().is_some_and(|a| !a.contains(&id)) {
                matched = None;
            }
        }
        entries.push(GroundedEntry { raw_title: title.clone(), matched_item: matched, ood: matched.is_none(), source_rank: i + 1 });
    }
    Ok(RankedList { entries, strategy })
}
