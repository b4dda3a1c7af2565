//! Reference prompts for every adaptation × engagement pair on a fixed
//! fixture, compared byte-for-byte against committed files.

use std::io;
use std::path::{Path, PathBuf};

use super::{assemble, Adaptation, Engagement, PromptTemplates, StrategyConfig};
use crate::corpus::{parse_catalog, EntityCatalog, Speaker, Utterance};
use crate::linker::LinkIndex;
use crate::seqrec::CandidateSet;

pub const GOLDEN_VERSION: &str = "v1";

const CATALOG_TSV: &str = include_str!("../../tests/fixtures/movies/catalog.tsv");

pub fn default_golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden").join(GOLDEN_VERSION)
}

pub fn fixture_catalog() -> EntityCatalog {
    parse_catalog(CATALOG_TSV).expect("bundled catalog parses")
}

pub fn fixture_context() -> Vec<Utterance> {
    [
        (Speaker::User, "Hi! I loved The Matrix and Inception. Any suggestions?"),
        (Speaker::System, "Do you like thrillers too?"),
        (Speaker::User, "Yes, something like Disturbia would be great."),
    ]
    .into_iter()
    .enumerate()
    .map(|(turn_index, (speaker, text))| Utterance { speaker, text: text.to_string(), turn_index })
    .collect()
}

/// `k` distinct items in a fixed scrambled order.
pub fn fixture_candidates(catalog: &EntityCatalog, k: usize) -> CandidateSet {
    let n = catalog.item_count();
    assert!(k <= n, "fixture has only {n} items");
    let ids: Vec<usize> = (0..k).map(|i| (7 * i + 3) % n).collect();
    CandidateSet::from_ids(&ids)
}

pub fn golden_name(m: Adaptation, s: Engagement) -> String {
    format!("{m}__{s}.txt")
}

/// `(file name, assembled prompt)` for all nine pairs at default k and n.
pub fn golden_prompts() -> Vec<(String, String)> {
    let catalog = fixture_catalog();
    let index = LinkIndex::build(&catalog);
    let context = fixture_context();
    let templates = PromptTemplates::default();
    let mut out = Vec::new();
    for &m in Adaptation::ALL {
        for &s in Engagement::ALL {
            let config = StrategyConfig::new(m, s);
            let cands = fixture_candidates(&catalog, config.k);
            let bundle = assemble(&templates, &config, &context, Some(&cands), &catalog, &index).expect("fixture prompt assembles");
            out.push((golden_name(m, s), bundle.assembled));
        }
    }
    out
}

pub fn write_goldens(dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, text) in golden_prompts() {
        std::fs::write(dir.join(name), text)?;
    }
    Ok(())
}

/// Names of golden files that are missing or differ from the current output.
pub fn check_goldens(dir: &Path) -> Vec<String> {
    golden_prompts()
        .into_iter()
        .filter(|(name, text)| std::fs::read(dir.join(name)).map_or(true, |bytes| bytes != text.as_bytes()))
        .map(|(name, _)| name)
        .collect()
}
