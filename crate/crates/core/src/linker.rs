//! Dictionary entity linking: greedy longest-match over token windows.

use std::collections::HashMap;

use crate::corpus::{EntityCatalog, EntityId, Utterance};
use crate::text::{self, tokenize};

/// Default cap on the number of entities kept in a sequence.
pub const DEFAULT_MAX_SEQUENCE_LENGTH: usize = 50;

/// Normalized alias → entity ids, ordered by preference (items before
/// attributes, then ascending id).
#[derive(Debug, Clone, Default)]
pub struct LinkIndex {
    entries: HashMap<String, Vec<EntityId>>,
    max_tokens: usize,
}

impl LinkIndex {
    pub fn build(catalog: &EntityCatalog) -> Self {
        let mut entries: HashMap<String, Vec<EntityId>> = HashMap::new();
        let mut max_tokens = 0;
        for record in catalog.records() {
            for alias in &record.aliases {
                let mut keys = vec![text::normalize(alias)];
                if let Some(stripped) = text::strip_year_suffix(alias) {
                    keys.push(text::normalize(stripped));
                }
                for key in keys {
                    if key.is_empty() {
                        continue;
                    }
                    max_tokens = max_tokens.max(key.split(' ').count());
                    let ids = entries.entry(key).or_default();
                    if !ids.contains(&record.id) {
                        ids.push(record.id);
                    }
                }
            }
        }
        // Ids are dense with items first, so ascending id already puts items
        // ahead of attributes.
        for ids in entries.values_mut() {
            ids.sort_unstable();
        }
        Self { entries, max_tokens }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Longest alias length in tokens.
    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    /// All entities indexed under a key; the key is normalized first.
    pub fn lookup(&self, key: &str) -> &[EntityId] {
        self.entries.get(&text::normalize(key)).map(Vec::as_slice).unwrap_or(&[])
    }

    fn resolve_normalized(&self, key: &str) -> Option<EntityId> {
        self.entries.get(key).and_then(|ids| ids.first().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityMention {
    pub entity_id: EntityId,
    /// Byte offsets into the source text.
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

/// Ordered entity ids extracted from a dialogue prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntitySequence(pub Vec<EntityId>);

impl EntitySequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[EntityId] {
        &self.0
    }
}

impl From<Vec<EntityId>> for EntitySequence {
    fn from(v: Vec<EntityId>) -> Self {
        Self(v)
    }
}

/// Scans `text` left to right, at each token trying the longest window first.
/// Mentions never overlap and come back ordered by start offset.
pub fn link_utterance(text: &str, index: &LinkIndex) -> Vec<EntityMention> {
    let tokens = tokenize(text);
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let widest = index.max_tokens.min(tokens.len() - i);
        let mut matched = None;
        for width in (1..=widest).rev() {
            let key = tokens[i..i + width].iter().map(|t| t.lower.as_str()).collect::<Vec<_>>().join(" ");
            if let Some(id) = index.resolve_normalized(&key) {
                matched = Some((id, width));
                break;
            }
        }
        match matched {
            Some((entity_id, width)) => {
                let start = tokens[i].start;
                let mut end = tokens[i + width - 1].end;
                // "Title (1999)": the closing paren is outside the last token
                if text[start..end].matches('(').count() > text[start..end].matches(')').count() && text[end..].starts_with(')') {
                    end += 1;
                }
                mentions.push(EntityMention { entity_id, start, end, surface: text[start..end].to_string() });
                i += width;
            }
            None => i += 1,
        }
    }
    mentions
}

/// Concatenates mentions across the context in dialogue order and keeps the
/// most recent `max_len` entries.
pub fn extract_sequence(context: &[Utterance], index: &LinkIndex, max_len: usize) -> EntitySequence {
    let mut ids: Vec<EntityId> = context
        .iter()
        .flat_map(|u| link_utterance(&u.text, index))
        .map(|m| m.entity_id)
        .collect();
    if ids.len() > max_len {
        ids.drain(..ids.len() - max_len);
    }
    EntitySequence(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityKind, Speaker};

    fn catalog(rows: &[(EntityKind, &str, &[&str])]) -> EntityCatalog {
        EntityCatalog::from_rows(rows.iter().map(|(k, n, a)| (*k, n.to_string(), a.iter().map(|s| s.to_string()).collect())))
            .unwrap()
    }

    #[test]
    fn index_keeps_year_variants() {
        let cat = catalog(&[(EntityKind::Item, "The Matrix (1999)", &[])]);
        let index = LinkIndex::build(&cat);
        assert_eq!(index.lookup("the matrix 1999"), &[0]);
        assert_eq!(index.lookup("the matrix"), &[0]);
        assert_eq!(index.len(), 2);
    }

    #[test]
    fn empty_catalog_gives_empty_index() {
        let cat = EntityCatalog::from_rows(Vec::<(EntityKind, String, Vec<String>)>::new()).unwrap();
        let index = LinkIndex::build(&cat);
        assert!(index.is_empty());
        assert!(link_utterance("anything at all", &index).is_empty());
    }

    #[test]
    fn multimap_prefers_items() {
        let cat = catalog(&[(EntityKind::Attribute, "it", &[]), (EntityKind::Item, "IT", &[])]);
        let index = LinkIndex::build(&cat);
        assert_eq!(index.lookup("it"), &[0, 1]);
        assert!(cat.is_item(0));
        assert_eq!(link_utterance("I saw it", &index)[0].entity_id, 0);
    }

    #[test]
    fn single_mention() {
        let cat = catalog(&[(EntityKind::Item, "The Matrix", &[])]);
        let index = LinkIndex::build(&cat);
        let text = "I loved The Matrix last night";
        let m = link_utterance(text, &index);
        assert_eq!(m, vec![EntityMention { entity_id: 0, start: 8, end: 18, surface: "The Matrix".into() }]);
        assert!(link_utterance("nothing relevant here", &index).is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let cat = catalog(&[(EntityKind::Item, "Matrix", &[]), (EntityKind::Item, "Matrix Reloaded", &[])]);
        let index = LinkIndex::build(&cat);
        let m = link_utterance("Matrix Reloaded", &index);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].entity_id, 1);
        assert_eq!(m[0].surface, "Matrix Reloaded");
    }

    #[test]
    fn word_boundaries_only() {
        let cat = catalog(&[(EntityKind::Attribute, "it", &[]), (EntityKind::Attribute, "italian", &[])]);
        let index = LinkIndex::build(&cat);
        let m = link_utterance("I like italian food", &index);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].surface, "italian");
    }

    #[test]
    fn sequence_concatenates_and_truncates() {
        let cat = catalog(&[(EntityKind::Item, "Alpha", &[]), (EntityKind::Item, "Beta", &[])]);
        let index = LinkIndex::build(&cat);
        let ctx = vec![
            Utterance { speaker: Speaker::User, text: "Alpha is fun".into(), turn_index: 0 },
            Utterance { speaker: Speaker::System, text: "Beta or Alpha?".into(), turn_index: 1 },
        ];
        assert_eq!(extract_sequence(&ctx, &index, 50).0, vec![0, 1, 0]);
        assert!(extract_sequence(&[], &index, 50).is_empty());

        let long = Utterance { speaker: Speaker::User, text: (0..60).map(|i| if i < 10 { "Beta " } else { "Alpha " }).collect(), turn_index: 0 };
        let seq = extract_sequence(&[long], &index, 50);
        assert_eq!(seq.len(), 50);
        assert!(seq.0.iter().all(|&id| id == 0));
    }
}
