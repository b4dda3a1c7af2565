//! Dialogue corpus, entity catalog and knowledge-graph loading.
//!
//! File formats:
//!
//! * dialogues: one JSON object per line,
//!   `{"id": "...", "turns": [{"speaker": "user"|"system", "text": "...", "recommends": [...]}]}`
//!   where `recommends` holds item names (strings) or item ids (integers);
//! * catalog: TSV with header `kind\tname\taliases`, aliases separated by `|`;
//! * knowledge graph: TSV `head\trelation\ttail`, entities given by name or id.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::text;

/// Dense 0-based entity id. Items occupy `0..item_count`, attributes follow.
pub type EntityId = usize;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: unknown entity {name:?}")]
    UnknownEntity { line: usize, name: String },
    #[error("line {line}: duplicate dialogue id {id:?}")]
    DuplicateDialogue { line: usize, id: String },
    #[error("line {line}: duplicate {kind} name {name:?}")]
    DuplicateName { line: usize, kind: EntityKind, name: String },
    #[error("line {line}: empty alias")]
    EmptyAlias { line: usize },
    #[error("line {line}: self-loop triple on {name:?}")]
    SelfLoop { line: usize, name: String },
    #[error("need at least {need} dialogues to split, got {got}")]
    TooFewDialogues { got: usize, need: usize },
    #[error("split ratios must be positive")]
    BadRatios,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub turn_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
    /// System turn index → items recommended at that turn.
    pub ground_truth: BTreeMap<usize, BTreeSet<EntityId>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Item,
    Attribute,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityKind::Item => "item",
            EntityKind::Attribute => "attribute",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityRecord {
    pub id: EntityId,
    pub canonical_name: String,
    /// Always contains `canonical_name` first.
    pub aliases: Vec<String>,
    pub kind: EntityKind,
}

#[derive(Debug, Clone)]
pub struct EntityCatalog {
    records: Vec<EntityRecord>,
    item_count: usize,
    by_name: HashMap<String, Vec<EntityId>>,
    by_normalized_alias: HashMap<String, Vec<EntityId>>,
}

impl EntityCatalog {
    /// Builds a catalog from `(kind, canonical_name, extra_aliases)` rows, renumbering
    /// so that items come first. Row order is preserved within each kind.
    pub fn from_rows<I, S>(rows: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (EntityKind, S, Vec<S>)>,
        S: Into<String>,
    {
        let rows: Vec<(usize, EntityKind, String, Vec<String>)> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (kind, name, aliases))| {
                (i + 1, kind, name.into(), aliases.into_iter().map(Into::into).collect())
            })
            .collect();
        Self::build(rows)
    }

    fn build(rows: Vec<(usize, EntityKind, String, Vec<String>)>) -> Result<Self, CorpusError> {
        let mut seen: HashSet<(EntityKind, String)> = HashSet::new();
        let mut items = Vec::new();
        let mut attributes = Vec::new();
        for (line, kind, name, extra) in rows {
            let name = name.trim().to_string();
            if name.is_empty() {
                return Err(CorpusError::EmptyAlias { line });
            }
            if !seen.insert((kind, name.clone())) {
                return Err(CorpusError::DuplicateName { line, kind, name });
            }
            let mut aliases = vec![name.clone()];
            for alias in extra {
                let alias = alias.trim();
                if alias.is_empty() {
                    return Err(CorpusError::EmptyAlias { line });
                }
                if !aliases.iter().any(|a| a == alias) {
                    aliases.push(alias.to_string());
                }
            }
            let record = EntityRecord { id: 0, canonical_name: name, aliases, kind };
            match kind {
                EntityKind::Item => items.push(record),
                EntityKind::Attribute => attributes.push(record),
            }
        }
        let item_count = items.len();
        let mut records: Vec<EntityRecord> = items.into_iter().chain(attributes).collect();
        let mut by_name: HashMap<String, Vec<EntityId>> = HashMap::new();
        let mut by_normalized_alias: HashMap<String, Vec<EntityId>> = HashMap::new();
        for (id, record) in records.iter_mut().enumerate() {
            record.id = id;
            by_name.entry(record.canonical_name.clone()).or_default().push(id);
            for alias in &record.aliases {
                let ids = by_normalized_alias.entry(text::normalize(alias)).or_default();
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
        }
        Ok(Self { records, item_count, by_name, by_normalized_alias })
    }

    pub fn records(&self) -> &[EntityRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn attribute_count(&self) -> usize {
        self.records.len() - self.item_count
    }

    pub fn get(&self, id: EntityId) -> Option<&EntityRecord> {
        self.records.get(id)
    }

    pub fn is_item(&self, id: EntityId) -> bool {
        id < self.item_count
    }

    pub fn name(&self, id: EntityId) -> &str {
        &self.records[id].canonical_name
    }

    pub fn items(&self) -> &[EntityRecord] {
        &self.records[..self.item_count]
    }

    /// Resolves a reference by exact canonical name, then by normalized alias.
    /// Items win over attributes; lower ids win within a kind.
    pub fn resolve(&self, name: &str) -> Option<EntityId> {
        let name = name.trim();
        if let Some(ids) = self.by_name.get(name) {
            return ids.iter().copied().min();
        }
        self.by_normalized_alias.get(&text::normalize(name)).and_then(|ids| ids.iter().copied().min())
    }

    fn resolve_value(&self, value: &serde_json::Value) -> Option<EntityId> {
        match value {
            serde_json::Value::String(s) => self.resolve(s),
            serde_json::Value::Number(n) => {
                n.as_u64().map(|v| v as usize).filter(|&id| id < self.records.len())
            }
            _ => None,
        }
    }

    fn resolve_field(&self, field: &str) -> Option<EntityId> {
        self.resolve(field)
            .or_else(|| field.trim().parse::<usize>().ok().filter(|&id| id < self.records.len()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KgTriple {
    pub head: EntityId,
    pub relation: u16,
    pub tail: EntityId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    /// Relation names indexed by relation id, in order of first appearance.
    pub relations: Vec<String>,
    pub triples: Vec<KgTriple>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// One recommendation turn: the dialogue prefix and the items the system recommended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecExample {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub context: Vec<Utterance>,
    pub target_items: BTreeSet<EntityId>,
    pub split: Split,
}

impl RecExample {
    pub fn id(&self) -> String {
        format!("{}#{}", self.dialogue_id, self.turn_index)
    }
}

#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<Dialogue>,
    pub valid: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.valid.len(), self.test.len())
    }

    pub fn part(&self, split: Split) -> &[Dialogue] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn examples(&self, split: Split) -> Vec<RecExample> {
        make_examples(self.part(split), split)
    }
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

#[derive(Deserialize, Serialize)]
struct RawTurn {
    speaker: Speaker,
    text: String,
    #[serde(default)]
    recommends: Vec<serde_json::Value>,
}

#[derive(Deserialize, Serialize)]
struct RawDialogue {
    id: String,
    turns: Vec<RawTurn>,
}

pub fn load_dialogues(path: &Path, catalog: &EntityCatalog) -> Result<Vec<Dialogue>, CorpusError> {
    parse_dialogues(&read(path)?, catalog)
}

/// Parses line-delimited dialogue records. Blank lines are skipped.
///
/// Only system turns contribute ground truth; `recommends` on user turns is ignored.
pub fn parse_dialogues(input: &str, catalog: &EntityCatalog) -> Result<Vec<Dialogue>, CorpusError> {
    let mut dialogues = Vec::new();
    let mut ids = HashSet::new();
    for (i, raw_line) in input.lines().enumerate() {
        let line = i + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let raw: RawDialogue = serde_json::from_str(raw_line)
            .map_err(|e| CorpusError::Malformed { line, reason: e.to_string() })?;
        if !ids.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateDialogue { line, id: raw.id });
        }
        let mut utterances = Vec::with_capacity(raw.turns.len());
        let mut ground_truth = BTreeMap::new();
        for (turn_index, turn) in raw.turns.into_iter().enumerate() {
            if turn.text.trim().is_empty() {
                return Err(CorpusError::Malformed {
                    line,
                    reason: format!("turn {turn_index} has empty text"),
                });
            }
            if turn.speaker == Speaker::System && !turn.recommends.is_empty() {
                let mut items = BTreeSet::new();
                for value in &turn.recommends {
                    let id = catalog
                        .resolve_value(value)
                        .filter(|&id| catalog.is_item(id))
                        .ok_or_else(|| CorpusError::UnknownEntity { line, name: value.to_string() })?;
                    items.insert(id);
                }
                ground_truth.insert(turn_index, items);
            }
            utterances.push(Utterance { speaker: turn.speaker, text: turn.text, turn_index });
        }
        dialogues.push(Dialogue { id: raw.id, utterances, ground_truth });
    }
    Ok(dialogues)
}

/// Writes dialogues in the line-delimited format, recommendations as item ids.
pub fn write_dialogues<W: Write>(dialogues: &[Dialogue], mut out: W) -> io::Result<()> {
    for dialogue in dialogues {
        let raw = RawDialogue {
            id: dialogue.id.clone(),
            turns: dialogue
                .utterances
                .iter()
                .map(|u| RawTurn {
                    speaker: u.speaker,
                    text: u.text.clone(),
                    recommends: dialogue
                        .ground_truth
                        .get(&u.turn_index)
                        .map(|ids| ids.iter().map(|&id| serde_json::Value::from(id)).collect())
                        .unwrap_or_default(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &raw)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_catalog(path: &Path) -> Result<EntityCatalog, CorpusError> {
    parse_catalog(&read(path)?)
}

pub fn parse_catalog(input: &str) -> Result<EntityCatalog, CorpusError> {
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end_matches('\r') == "kind\tname\taliases" => {}
        _ => {
            return Err(CorpusError::Malformed {
                line: 1,
                reason: "expected header `kind\\tname\\taliases`".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, raw_line) in lines {
        let line = i + 1;
        let raw_line = raw_line.trim_end_matches('\r');
        if raw_line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw_line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(CorpusError::Malformed {
                line,
                reason: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let kind = match cols[0].trim() {
            "item" => EntityKind::Item,
            "attribute" => EntityKind::Attribute,
            other => {
                return Err(CorpusError::Malformed { line, reason: format!("unknown kind {other:?}") })
            }
        };
        let aliases = match cols.get(2) {
            Some(col) if !col.is_empty() => col.split('|').map(str::to_string).collect(),
            _ => Vec::new(),
        };
        rows.push((line, kind, cols[1].to_string(), aliases));
    }
    EntityCatalog::build(rows)
}

pub fn load_kg(path: &Path, catalog: &EntityCatalog) -> Result<KnowledgeGraph, CorpusError> {
    parse_kg(&read(path)?, catalog)
}

/// Parses `head\trelation\ttail` lines. Blank lines and `#` comments are skipped.
pub fn parse_kg(input: &str, catalog: &EntityCatalog) -> Result<KnowledgeGraph, CorpusError> {
    let mut graph = KnowledgeGraph::default();
    let mut relation_ids: HashMap<String, u16> = HashMap::new();
    for (i, raw_line) in input.lines().enumerate() {
        let line = i + 1;
        let raw_line = raw_line.trim_end_matches('\r');
        if raw_line.trim().is_empty() || raw_line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = raw_line.split('\t').collect();
        if cols.len() != 3 {
            return Err(CorpusError::Malformed {
                line,
                reason: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let lookup = |name: &str| {
            catalog
                .resolve_field(name)
                .ok_or_else(|| CorpusError::UnknownEntity { line, name: name.to_string() })
        };
        let head = lookup(cols[0])?;
        let tail = lookup(cols[2])?;
        if head == tail {
            return Err(CorpusError::SelfLoop { line, name: cols[0].to_string() });
        }
        let relation_name = cols[1].trim().to_string();
        let next = graph.relations.len();
        let relation = *relation_ids.entry(relation_name.clone()).or_insert_with(|| {
            graph.relations.push(relation_name);
            next as u16
        });
        graph.triples.push(KgTriple { head, relation, tail });
    }
    Ok(graph)
}

/// Partitions dialogues into train/valid/test at dialogue granularity.
///
/// Ids are sorted lexicographically, shuffled with a seeded Fisher–Yates pass and
/// cut by largest-remainder apportionment, so each part is within one dialogue of
/// its exact share.
pub fn split_dataset(
    dialogues: &[Dialogue],
    ratios: (u32, u32, u32),
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    let (a, b, c) = ratios;
    if a == 0 || b == 0 || c == 0 {
        return Err(CorpusError::BadRatios);
    }
    if dialogues.len() < 3 {
        return Err(CorpusError::TooFewDialogues { got: dialogues.len(), need: 3 });
    }
    let mut order: Vec<&Dialogue> = dialogues.iter().collect();
    order.sort_by(|x, y| x.id.cmp(&y.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }

    let sizes = apportion(order.len(), [a, b, c]);
    let mut rest = order.into_iter().cloned();
    let mut take = |n: usize| rest.by_ref().take(n).collect::<Vec<_>>();
    Ok(DatasetSplit { train: take(sizes[0]), valid: take(sizes[1]), test: take(sizes[2]) })
}

fn apportion(total: usize, ratios: [u32; 3]) -> [usize; 3] {
    let sum: u64 = ratios.iter().map(|&r| r as u64).sum();
    let mut sizes = [0usize; 3];
    let mut remainders = [(0u64, 0usize); 3];
    for (i, &r) in ratios.iter().enumerate() {
        let exact = total as u64 * r as u64;
        sizes[i] = (exact / sum) as usize;
        remainders[i] = (exact % sum, i);
    }
    let mut left = total - sizes.iter().sum::<usize>();
    // Largest remainder first; earlier partitions win ties.
    remainders.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
    for &(_, i) in &remainders {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// One example per system turn that carries ground truth and has at least one prior turn.
pub fn make_examples(dialogues: &[Dialogue], split: Split) -> Vec<RecExample> {
    let mut out = Vec::new();
    for dialogue in dialogues {
        for (&turn, targets) in &dialogue.ground_truth {
            let context: Vec<Utterance> =
                dialogue.utterances.iter().filter(|u| u.turn_index < turn).cloned().collect();
            if context.is_empty() || targets.is_empty() {
                continue;
            }
            out.push(RecExample {
                dialogue_id: dialogue.id.clone(),
                turn_index: turn,
                context,
                target_items: targets.clone(),
                split,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> EntityCatalog {
        parse_catalog(
            "kind\tname\taliases\n\
             attribute\thorror\thorror|scary\n\
             item\tThe Exorcist\tThe Exorcist (1973)\n\
             item\tThe Matrix\tThe Matrix|Matrix\n\
             attribute\tthriller\t\n\
             item\tDisturbia\t\n\
             item\tInception\t\n\
             item\tMonna\t\n",
        )
        .unwrap()
    }

    #[test]
    fn catalog_puts_items_first() {
        let cat = parse_catalog(
            "kind\tname\taliases\nitem\tA\t\nattribute\tx\t\nitem\tB\t\nattribute\ty\t\nitem\tC\t\n",
        )
        .unwrap();
        assert_eq!(cat.item_count(), 3);
        assert_eq!(cat.attribute_count(), 2);
        let names: Vec<_> = cat.records().iter().map(|r| (r.id, r.canonical_name.as_str())).collect();
        assert_eq!(names, [(0, "A"), (1, "B"), (2, "C"), (3, "x"), (4, "y")]);
    }

    #[test]
    fn catalog_alias_column() {
        let cat = catalog();
        let matrix = cat.get(cat.resolve("The Matrix").unwrap()).unwrap();
        assert_eq!(matrix.aliases, ["The Matrix", "Matrix"]);
        let exorcist = cat.get(cat.resolve("The Exorcist").unwrap()).unwrap();
        assert_eq!(exorcist.aliases, ["The Exorcist", "The Exorcist (1973)"]);
    }

    #[test]
    fn catalog_rejects_duplicates_and_empty_aliases() {
        let dup = parse_catalog("kind\tname\taliases\nitem\tInception\t\nitem\tInception\t\n");
        assert!(matches!(dup, Err(CorpusError::DuplicateName { line: 3, .. })));
        // Same name under different kinds is allowed.
        assert!(parse_catalog("kind\tname\taliases\nitem\tIt\t\nattribute\tIt\t\n").is_ok());
        let empty = parse_catalog("kind\tname\taliases\nitem\tA\tA||B\n");
        assert!(matches!(empty, Err(CorpusError::EmptyAlias { line: 2 })));
        assert!(matches!(parse_catalog("item\tA\t\n"), Err(CorpusError::Malformed { line: 1, .. })));
    }

    #[test]
    fn dialogues_parse() {
        let cat = catalog();
        assert!(parse_dialogues("", &cat).unwrap().is_empty());
        let line = r#"{"id":"d1","turns":[{"speaker":"user","text":"hi"},{"speaker":"system","text":"Try Monna","recommends":["Monna"]}]}"#;
        let ds = parse_dialogues(line, &cat).unwrap();
        assert_eq!(ds.len(), 1);
        let monna = cat.resolve("Monna").unwrap();
        assert_eq!(monna, 4);
        assert_eq!(ds[0].ground_truth, BTreeMap::from([(1, BTreeSet::from([4]))]));
        assert_eq!(ds[0].utterances[1].turn_index, 1);
        assert_eq!(ds[0].utterances[0].speaker, Speaker::User);
    }

    #[test]
    fn dialogue_errors_name_the_line() {
        let cat = catalog();
        let missing = r#"{"id":"d1","turns":[{"text":"hi"}]}"#;
        let err = parse_dialogues(missing, &cat).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }), "{err}");
        assert!(err.to_string().contains("speaker"));

        let unknown = "\n{\"id\":\"d\",\"turns\":[{\"speaker\":\"system\",\"text\":\"x\",\"recommends\":[\"Nope\"]}]}";
        assert!(matches!(parse_dialogues(unknown, &cat), Err(CorpusError::UnknownEntity { line: 2, .. })));

        // Attributes are not valid recommendation targets.
        let attr = r#"{"id":"d","turns":[{"speaker":"system","text":"x","recommends":["horror"]}]}"#;
        assert!(matches!(parse_dialogues(attr, &cat), Err(CorpusError::UnknownEntity { .. })));

        let one = r#"{"id":"d","turns":[{"speaker":"user","text":"x"}]}"#;
        let dup = format!("{one}\n{one}");
        assert!(matches!(parse_dialogues(&dup, &cat), Err(CorpusError::DuplicateDialogue { line: 2, .. })));
    }

    #[test]
    fn kg_parse() {
        let cat = catalog();
        assert!(parse_kg("", &cat).unwrap().triples.is_empty());
        let kg = parse_kg("The Exorcist\tgenre\thorror\nDisturbia\tgenre\tthriller\n", &cat).unwrap();
        assert_eq!(kg.relations, ["genre"]);
        assert_eq!(
            kg.triples[0],
            KgTriple { head: cat.resolve("The Exorcist").unwrap(), relation: 0, tail: cat.resolve("horror").unwrap() }
        );
        assert!(matches!(parse_kg("Monna\tgenre\tMonna\n", &cat), Err(CorpusError::SelfLoop { line: 1, .. })));
        assert!(matches!(parse_kg("X\tgenre\thorror\n", &cat), Err(CorpusError::UnknownEntity { .. })));
    }

    fn dialogue(id: &str) -> Dialogue {
        Dialogue { id: id.into(), utterances: vec![], ground_truth: BTreeMap::new() }
    }

    #[test]
    fn split_sizes() {
        let ten: Vec<_> = (0..10).map(|i| dialogue(&format!("d{i}"))).collect();
        assert_eq!(split_dataset(&ten, (8, 1, 1), 42).unwrap().sizes(), (8, 1, 1));
        let hundred: Vec<_> = (0..100).map(|i| dialogue(&format!("d{i}"))).collect();
        assert_eq!(split_dataset(&hundred, (8, 1, 1), 42).unwrap().sizes(), (80, 10, 10));
        let a = split_dataset(&hundred, (8, 1, 1), 7).unwrap();
        let b = split_dataset(&hundred, (8, 1, 1), 7).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.train, b.train);
        assert!(matches!(split_dataset(&ten[..2], (8, 1, 1), 0), Err(CorpusError::TooFewDialogues { .. })));
        assert!(matches!(split_dataset(&ten, (8, 0, 1), 0), Err(CorpusError::BadRatios)));
    }

    #[test]
    fn split_ignores_input_order() {
        let mut ds: Vec<_> = (0..20).map(|i| dialogue(&format!("d{i}"))).collect();
        let a = split_dataset(&ds, (8, 1, 1), 3).unwrap();
        ds.reverse();
        let b = split_dataset(&ds, (8, 1, 1), 3).unwrap();
        assert_eq!(a.test, b.test);
    }

    fn utter(speaker: Speaker, turn_index: usize) -> Utterance {
        Utterance { speaker, text: format!("turn {turn_index}"), turn_index }
    }

    #[test]
    fn examples_per_annotated_turn() {
        let utterances: Vec<_> = (0..8)
            .map(|i| utter(if i % 2 == 1 { Speaker::System } else { Speaker::User }, i))
            .collect();
        let d = Dialogue {
            id: "d".into(),
            utterances: utterances.clone(),
            ground_truth: BTreeMap::from([(3, BTreeSet::from([1])), (7, BTreeSet::from([2, 3]))]),
        };
        let ex = make_examples(std::slice::from_ref(&d), Split::Test);
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].context.len(), 3);
        assert_eq!(ex[1].context.len(), 7);
        assert_eq!(ex[1].target_items, BTreeSet::from([2, 3]));
        assert_eq!(ex[1].split, Split::Test);
        assert_eq!(ex[0].id(), "d#3");

        let first = Dialogue {
            id: "e".into(),
            utterances: vec![utter(Speaker::System, 0), utter(Speaker::User, 1)],
            ground_truth: BTreeMap::from([(0, BTreeSet::from([1]))]),
        };
        assert!(make_examples(&[first], Split::Train).is_empty());
        let none = Dialogue { id: "f".into(), utterances, ground_truth: BTreeMap::new() };
        assert!(make_examples(&[none], Split::Train).is_empty());
    }
}
