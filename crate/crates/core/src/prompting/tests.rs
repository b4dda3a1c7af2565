use std::sync::Arc;

use proptest::prelude::*;

use super::golden::{fixture_candidates, fixture_catalog, fixture_context};
use super::*;
use crate::llm_client::{MockMode, MockProvider, MockScript};

fn utt(speaker: Speaker, text: &str, turn_index: usize) -> Utterance {
    Utterance { speaker, text: text.to_string(), turn_index }
}

fn setup() -> (EntityCatalog, LinkIndex) {
    let catalog = fixture_catalog();
    let index = LinkIndex::build(&catalog);
    (catalog, index)
}

#[test]
fn task_texts_carry_anchor_phrases() {
    assert!(adaptation_prompt(Adaptation::Direct).contains("use the domain expert's recommendations as examples"));
    assert!(adaptation_prompt(Adaptation::Description).contains("generate a ranking list of items"));
    assert!(adaptation_prompt(Adaptation::SelfReflection).contains("entity-relevant, diverse, and informed by the sequence"));
    assert!(adaptation_prompt(Adaptation::SelfReflection).contains("an advanced recommendation system that specializes"));
    assert!(strategy_prompt(Engagement::Expansion).contains("You can generate items beyond"));
    assert!(strategy_prompt(Engagement::Rerank).contains("You cannot generate items beyond"));
    assert!(strategy_prompt(Engagement::Rerank).contains("rerank the recommendations, placing the domain expert's suggestions"));
    assert!(strategy_prompt(Engagement::SelectRerank).contains("select the most appropriate items"));
    assert!(strategy_prompt(Engagement::SelectRerank).contains("You cannot generate items beyond"));
}

#[test]
fn strategy_defaults() {
    assert_eq!(StrategyConfig::new(Adaptation::Direct, Engagement::Expansion).k, 10);
    assert_eq!(StrategyConfig::new(Adaptation::Direct, Engagement::Rerank).k, 20);
    assert_eq!(StrategyConfig::new(Adaptation::Direct, Engagement::SelectRerank).k, 100);
    for &s in Engagement::ALL {
        assert!(StrategyConfig::new(Adaptation::Direct, s).validate().is_ok());
    }
    assert!(StrategyConfig::new(Adaptation::Direct, Engagement::Rerank).with_k(10).validate().is_err());
    assert!(StrategyConfig::new(Adaptation::Direct, Engagement::SelectRerank).with_k(0).validate().is_err());
    assert!(StrategyConfig::new(Adaptation::Direct, Engagement::Expansion).with_n(0).validate().is_err());
    assert_eq!("select_rerank".parse::<Engagement>().unwrap(), Engagement::SelectRerank);
    assert!("rank".parse::<Engagement>().is_err());
    assert_eq!(StrategyConfig::default().id(), "description-select_rerank-k100-n20-full_conversation");
}

#[test]
fn conversation_rendering() {
    let (cat, idx) = setup();
    let ctx = vec![utt(Speaker::User, "I liked The Matrix, then Inception.", 0), utt(Speaker::System, "Any horror?", 1)];
    assert_eq!(render_conversation(&ctx, InputMode::ItemsOnly, &cat, &idx), "The Matrix; Inception");
    assert_eq!(
        render_conversation(&ctx, InputMode::FullConversation, &cat, &idx),
        "User: I liked The Matrix, then Inception.\nSystem: Any horror?"
    );
    let loved = vec![utt(Speaker::User, "I loved The Matrix", 0)];
    assert_eq!(render_conversation(&loved, InputMode::ContextOnly, &cat, &idx), "User: I loved [ITEM]");
    for &mode in InputMode::ALL {
        assert_eq!(render_conversation(&[], mode, &cat, &idx), "");
    }
    // attributes stay in place under context_only and are absent from items_only
    let attr = vec![utt(Speaker::User, "horror like The Exorcist (1973)", 0)];
    assert_eq!(render_conversation(&attr, InputMode::ContextOnly, &cat, &idx), "User: horror like [ITEM]");
    assert_eq!(render_conversation(&attr, InputMode::ItemsOnly, &cat, &idx), "The Exorcist");
}

#[test]
fn candidate_serialization() {
    let (cat, _) = setup();
    let two = CandidateSet::from_ids(&[2, 0]);
    assert_eq!(serialize_candidates(&two, &cat), format!("1. {}\n2. {}", cat.name(2), cat.name(0)));
    assert_eq!(serialize_candidates(&CandidateSet::default(), &cat), "");
    assert_eq!(serialize_candidates(&fixture_candidates(&cat, 100), &cat).lines().count(), 100);
}

#[test]
fn select_rerank_prompt_composition() {
    let (cat, idx) = setup();
    let cfg = StrategyConfig::new(Adaptation::Description, Engagement::SelectRerank);
    let cands = fixture_candidates(&cat, 100);
    let b = assemble(&PromptTemplates::default(), &cfg, &fixture_context(), Some(&cands), &cat, &idx).unwrap();
    assert!(b.assembled.contains(TASK_DESCRIPTION));
    assert!(b.assembled.contains("select the most appropriate items"));
    assert!(b.assembled.contains("exactly 20 movie titles"));
    let block = b.candidates_block.as_deref().unwrap();
    assert_eq!(block.lines().count(), 101);
    assert!(b.assembled.ends_with(block));
    let order = [b.role.as_str(), &b.task, &b.format, &b.conversation_block, block].map(|part| b.assembled.find(part).unwrap());
    assert!(order.windows(2).all(|w| w[0] < w[1]), "{order:?}");
}

#[test]
fn baseline_prompt_shape() {
    let (cat, idx) = setup();
    let ctx = fixture_context();
    let cfg = StrategyConfig::new(Adaptation::Direct, Engagement::Expansion);
    let b = assemble(&PromptTemplates::default(), &cfg, &ctx, None, &cat, &idx).unwrap();
    assert!(b.candidates_block.is_none());
    assert_eq!(b.task, BASELINE_TASK);
    let expected = [ROLE_PROMPT.to_string(), BASELINE_TASK.to_string(), FORMAT_PROMPT.replace("{n}", "20"), render_conversation(&ctx, InputMode::FullConversation, &cat, &idx)]
        .join("\n\n");
    assert_eq!(b.assembled, expected);
    let again = assemble(&PromptTemplates::default(), &cfg, &ctx, None, &cat, &idx).unwrap();
    assert_eq!(b, again);
}

#[test]
fn assembly_errors() {
    let (cat, idx) = setup();
    let ctx = fixture_context();
    let t = PromptTemplates::default();
    let cfg = StrategyConfig::new(Adaptation::Direct, Engagement::Rerank);
    assert!(matches!(assemble(&t, &cfg, &ctx, None, &cat, &idx), Err(PromptError::MissingCandidates(Engagement::Rerank))));
    let wrong = fixture_candidates(&cat, 5);
    assert!(matches!(assemble(&t, &cfg, &ctx, Some(&wrong), &cat, &idx), Err(PromptError::KMismatch { expected: 20, found: 5 })));
}

#[test]
fn items_only_block_has_no_utterance_text() {
    let (cat, idx) = setup();
    let cfg = StrategyConfig::new(Adaptation::Direct, Engagement::Rerank).with_input_mode(InputMode::ItemsOnly);
    let b = assemble(&PromptTemplates::default(), &cfg, &fixture_context(), Some(&fixture_candidates(&cat, 20)), &cat, &idx).unwrap();
    assert_eq!(b.conversation_block, "The Matrix; Inception; Disturbia");
    assert!(!b.conversation_block.contains("loved"));
}

#[test]
fn template_overrides() {
    let t = PromptTemplates::from_toml("role_prompt = \"You recommend books.\"\nformat_prompt = \"Give {n} titles.\"").unwrap();
    assert_eq!(t.role_prompt, "You recommend books.");
    assert_eq!(t.format(7), "Give 7 titles.");
    assert_eq!(t.task_direct, TASK_DIRECT);
    assert!(PromptTemplates::from_toml("nonsense_key = \"x\"").is_err());
}

fn scripted(replies: &[&str]) -> LlmClient {
    let script = MockScript { mode: MockMode::Scripted, scripted_replies: replies.iter().map(|s| s.to_string()).collect() };
    LlmClient::new(Arc::new(MockProvider::new(script).unwrap()))
}

#[test]
fn self_reflection_stops_when_confident() {
    let client = scripted(&["CONFIDENT: A sequential recommender over entities."]);
    let docs = vec!["source code".to_string(), "data sample".to_string()];
    let text = self_reflect(&docs, &client, &ProviderConfig::default(), "mock", 5).unwrap();
    assert_eq!(text, "A sequential recommender over entities.");
    assert_eq!(client.dispatch_count(), 1);
}

#[test]
fn self_reflection_round_bound() {
    let client = scripted(&["draft one", "draft two", "draft three", "CONFIDENT: too late"]);
    let docs = vec!["only resource".to_string()];
    let text = self_reflect(&docs, &client, &ProviderConfig::default(), "mock", 3).unwrap();
    assert_eq!(text, "draft three");
    assert_eq!(client.dispatch_count(), 3);
    assert!(matches!(self_reflect(&[], &client, &ProviderConfig::default(), "mock", 3), Err(PromptError::NoResources)));
}

proptest! {
    #[test]
    fn candidate_lines_equal_k(k in 1usize..=121, n in 1usize..40, s in 0usize..3) {
        let (cat, idx) = setup();
        let engagement = Engagement::ALL[s];
        let k = if engagement == Engagement::Rerank { n.min(121) } else { k };
        let cfg = StrategyConfig::new(Adaptation::Direct, engagement).with_k(k).with_n(n.max(if engagement == Engagement::Rerank { k } else { 1 }));
        let b = assemble(&PromptTemplates::default(), &cfg, &fixture_context(), Some(&fixture_candidates(&cat, k)), &cat, &idx).unwrap();
        let block = b.candidates_block.unwrap();
        prop_assert_eq!(block.lines().skip(1).count(), k);
        let positions: Vec<usize> = [&b.role, &b.task, &b.format, &b.conversation_block, &block]
            .iter().map(|p| b.assembled.find(p.as_str()).unwrap()).collect();
        prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }
}
