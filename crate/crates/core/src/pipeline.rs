//! End-to-end turn handling: link entities, recommend candidates, assemble the
//! prompt, query the language model and ground its reply.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{EntityCatalog, RecExample, Utterance};
use crate::eval::{self, EvalError, EvalReport, ExampleResult, ReportMeta, SweepCell, SweepGrid};
use crate::grounding::{ground_list, parse_ranked_list, GroundingError, ItemMatcher, MatcherConfig, RankedList};
use crate::linker::{extract_sequence, EntitySequence, LinkIndex};
use crate::llm_client::{LlmClient, LlmError, ProviderConfig};
use crate::prompting::{assemble, Engagement, PromptBundle, PromptError, PromptTemplates, StrategyConfig};
use crate::seqrec::{recommend, CandidateSet, RecModel, SeqRecError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Recommender(#[from] SeqRecError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
}

/// What produces the final list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Recommender candidates re-ranked by the language model.
    #[default]
    Care,
    /// Language model alone, no candidates in the prompt.
    ZeroShot,
    /// The recommender's own top-n.
    RecommenderOnly,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Care => "care",
            Method::ZeroShot => "zero_shot",
            Method::RecommenderOnly => "recommender_only",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "care" => Ok(Method::Care),
            "zero_shot" => Ok(Method::ZeroShot),
            "recommender_only" => Ok(Method::RecommenderOnly),
            other => Err(format!("unknown method `{other}` (care, zero_shot, recommender_only)")),
        }
    }
}

/// One cloze sequence per (example, target): the linked context followed by the target item.
pub fn training_sequences(examples: &[RecExample], index: &LinkIndex, max_len: usize) -> Vec<EntitySequence> {
    let mut out = Vec::new();
    for example in examples {
        let context = extract_sequence(&example.context, index, max_len);
        for &target in &example.target_items {
            let mut seq = context.0.clone();
            seq.push(target);
            out.push(EntitySequence(seq));
        }
    }
    out
}

/// Everything produced while answering one turn.
#[derive(Debug, Clone)]
pub struct Turn {
    pub sequence: EntitySequence,
    pub candidates: Option<CandidateSet>,
    pub prompt: Option<PromptBundle>,
    pub reply: String,
    pub ranked: RankedList,
}

impl Turn {
    pub fn candidate_lines(&self) -> usize {
        self.prompt
            .as_ref()
            .and_then(|p| p.candidates_block.as_ref())
            .map_or(0, |block| block.lines().count().saturating_sub(1))
    }
}

pub struct Pipeline<'a> {
    pub model: &'a RecModel<f32>,
    pub catalog: &'a EntityCatalog,
    pub index: &'a LinkIndex,
    pub client: &'a LlmClient,
    pub matcher: ItemMatcher,
    pub matcher_config: MatcherConfig,
    pub templates: PromptTemplates,
    pub provider: ProviderConfig,
    pub llm_model: String,
    pub method: Method,
    pub ks: Vec<usize>,
    /// Report provenance.
    pub recommender_label: String,
    pub seed: u64,
    pub resolved_config: serde_json::Value,
}

impl<'a> Pipeline<'a> {
    pub fn new(model: &'a RecModel<f32>, catalog: &'a EntityCatalog, index: &'a LinkIndex, client: &'a LlmClient) -> Self {
        Self {
            model,
            catalog,
            index,
            client,
            matcher: ItemMatcher::new(catalog),
            matcher_config: MatcherConfig::default(),
            templates: PromptTemplates::default(),
            provider: ProviderConfig::default(),
            llm_model: "mock".into(),
            method: Method::Care,
            ks: eval::DEFAULT_KS.to_vec(),
            recommender_label: "in-memory".into(),
            seed: 0,
            resolved_config: serde_json::Value::Null,
        }
    }

    pub fn respond(&self, context: &[Utterance], strategy: &StrategyConfig) -> Result<Turn, PipelineError> {
        let sequence = extract_sequence(context, self.index, self.model.config.max_sequence_length);
        match self.method {
            Method::RecommenderOnly => {
                let cands = recommend(self.model, &sequence, strategy.n)?;
                let reply = crate::prompting::serialize_candidates(&cands, self.catalog);
                let ranked = RankedList::from_candidates(&cands, self.catalog, strategy.engagement);
                Ok(Turn { sequence, candidates: Some(cands), prompt: None, reply, ranked })
            }
            Method::ZeroShot => {
                let strategy = StrategyConfig { engagement: Engagement::Expansion, ..*strategy };
                self.ask(sequence, None, &strategy, context)
            }
            Method::Care => {
                let cands = recommend(self.model, &sequence, strategy.k)?;
                self.ask(sequence, Some(cands), strategy, context)
            }
        }
    }

    fn ask(
        &self,
        sequence: EntitySequence,
        candidates: Option<CandidateSet>,
        strategy: &StrategyConfig,
        context: &[Utterance],
    ) -> Result<Turn, PipelineError> {
        let prompt = assemble(&self.templates, strategy, context, candidates.as_ref(), self.catalog, self.index)?;
        let request = self.provider.request(&self.llm_model, &prompt.assembled);
        let reply = self.client.complete(&request)?.text;
        let titles = parse_ranked_list(&reply, usize::MAX);
        let ranked = ground_list(&titles, &self.matcher, candidates.as_ref(), strategy.engagement, &self.matcher_config, strategy.n)?;
        Ok(Turn { sequence, candidates, prompt: Some(prompt), reply, ranked })
    }

    /// Runs every example, in parallel up to the client's safe concurrency.
    /// Output order matches `examples`; failures become error records.
    pub fn run(&self, examples: &[RecExample], strategy: &StrategyConfig) -> Vec<ExampleResult> {
        let slots: Vec<Mutex<Option<ExampleResult>>> = examples.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.client.effective_concurrency().min(examples.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(example) = examples.get(i) else { break };
                    *slots[i].lock().unwrap() = Some(self.run_one(example, strategy));
                });
            }
        });
        slots.into_iter().map(|s| s.into_inner().unwrap().expect("every slot is filled")).collect()
    }

    fn run_one(&self, example: &RecExample, strategy: &StrategyConfig) -> ExampleResult {
        match self.respond(&example.context, strategy) {
            Ok(turn) => ExampleResult {
                example_id: example.id(),
                candidate_lines: turn.candidate_lines(),
                raw_reply: turn.reply,
                ranked: turn.ranked,
                error: None,
            },
            Err(e) => ExampleResult {
                example_id: example.id(),
                raw_reply: String::new(),
                ranked: RankedList { entries: Vec::new(), strategy: strategy.engagement },
                candidate_lines: 0,
                error: Some(e.to_string()),
            },
        }
    }

    pub fn meta(&self, strategy: &StrategyConfig) -> ReportMeta {
        let config_id = match self.method {
            Method::Care => strategy.id(),
            other => format!("{}-n{}-{}", other.as_str(), strategy.n, strategy.input_mode),
        };
        ReportMeta {
            config_id,
            method: self.method.as_str().into(),
            strategy: *strategy,
            matcher: self.matcher_config,
            recommender: self.recommender_label.clone(),
            llm_model: self.llm_model.clone(),
            provider: self.client.provider_name().into(),
            seed: self.seed,
            resolved_config: self.resolved_config.clone(),
        }
    }

    pub fn evaluate(&self, strategy: &StrategyConfig, test: &[RecExample], train: &[RecExample]) -> Result<EvalReport, EvalError> {
        let results = self.run(test, strategy);
        eval::build_report(self.meta(strategy), test, &results, train, &self.ks)
    }

    pub fn sweep(&self, grid: &SweepGrid, test: &[RecExample], train: &[RecExample]) -> Result<Vec<SweepCell>, EvalError> {
        eval::sweep(grid, |cfg| self.evaluate(cfg, test, train).map_err(|e| e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::{EntityKind, Speaker, Split};
    use crate::llm_client::{MockMode, MockProvider, MockScript};
    use crate::prompting::Adaptation;
    use crate::seqrec::RecConfig;

    fn world() -> (EntityCatalog, LinkIndex, RecModel<f32>) {
        let rows = (0..12).map(|i| (EntityKind::Item, format!("Film Number {i}"), Vec::new()));
        let catalog = EntityCatalog::from_rows(rows).unwrap();
        let index = LinkIndex::build(&catalog);
        let config = RecConfig { embed_dim: 8, layers: 1, heads: 2, max_sequence_length: 6, ..RecConfig::default() };
        let model = RecModel::new(config, catalog.len(), catalog.item_count(), &[]).unwrap();
        (catalog, index, model)
    }

    fn examples(n: usize) -> Vec<RecExample> {
        (0..n)
            .map(|i| RecExample {
                dialogue_id: format!("d{i:02}"),
                turn_index: 1,
                context: vec![Utterance { speaker: Speaker::User, text: format!("I enjoyed Film Number {}", i % 12), turn_index: 0 }],
                target_items: [(i + 1) % 12].into_iter().collect(),
                split: Split::Test,
            })
            .collect()
    }

    fn client(mode: MockMode) -> LlmClient {
        LlmClient::new(Arc::new(MockProvider::new(MockScript::new(mode)).unwrap()))
    }

    #[test]
    fn echo_rerank_has_no_ood_and_matches_recommender() {
        let (cat, idx, model) = world();
        let client = client(MockMode::EchoCandidates);
        let p = Pipeline::new(&model, &cat, &idx, &client);
        let strategy = StrategyConfig::new(Adaptation::Direct, Engagement::Rerank).with_k(5).with_n(5);
        let ex = examples(6);
        let report = p.evaluate(&strategy, &ex, &[]).unwrap();
        assert_eq!(report.ood_ratio, 0.0);
        assert_eq!(report.records.len(), 6);
        assert!(report.records.iter().all(|r| r.candidate_lines == 5 && r.error.is_none()));
        let mut raw = Pipeline::new(&model, &cat, &idx, &client);
        raw.method = Method::RecommenderOnly;
        let baseline = raw.evaluate(&strategy, &ex, &[]).unwrap();
        assert_eq!(baseline.metrics, report.metrics);
    }

    #[test]
    fn parallel_run_is_ordered_and_deterministic() {
        let (cat, idx, model) = world();
        let client = client(MockMode::ReverseCandidates).with_concurrency(4);
        let p = Pipeline::new(&model, &cat, &idx, &client);
        let strategy = StrategyConfig::new(Adaptation::Description, Engagement::SelectRerank).with_k(8).with_n(4);
        let ex = examples(20);
        let a = p.run(&ex, &strategy);
        let b = p.run(&ex, &strategy);
        assert_eq!(a, b);
        assert!(a.iter().zip(&ex).all(|(r, e)| r.example_id == e.id()));
        assert!(a.iter().all(|r| r.ranked.entries.len() == 4));
    }

    #[test]
    fn failures_become_records() {
        let (cat, idx, model) = world();
        let client = client(MockMode::EchoCandidates);
        let p = Pipeline::new(&model, &cat, &idx, &client);
        // rerank with k != n cannot be assembled
        let bad = StrategyConfig { k: 3, ..StrategyConfig::new(Adaptation::Direct, Engagement::Rerank) };
        let results = p.run(&examples(2), &bad);
        assert!(results.iter().all(|r| r.error.is_some() && r.ranked.entries.is_empty()));
    }

    #[test]
    fn training_sequences_append_targets() {
        let (_, idx, _) = world();
        let mut ex = examples(1);
        ex[0].target_items = [3, 5].into_iter().collect();
        let seqs = training_sequences(&ex, &idx, 10);
        assert_eq!(seqs, vec![EntitySequence(vec![0, 3]), EntitySequence(vec![0, 5])]);
    }

    #[test]
    fn zero_shot_sends_no_candidates() {
        let (cat, idx, model) = world();
        let client = client(MockMode::EchoCandidates);
        let mut p = Pipeline::new(&model, &cat, &idx, &client);
        p.method = Method::ZeroShot;
        let turn = p.respond(&examples(1)[0].context, &StrategyConfig::default()).unwrap();
        assert!(turn.candidates.is_none());
        assert!(turn.prompt.unwrap().candidates_block.is_none());
        assert!(turn.ranked.entries.is_empty());
    }
}
