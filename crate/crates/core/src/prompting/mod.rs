//! Prompt assembly: role, task, format, conversation and candidate blocks.
//!
//! ```text
//! <role>
//!
//! <adaptation task>\n<engagement task>     (or the baseline task without candidates)
//!
//! <format with {n} filled in>
//!
//! <conversation>
//!
//! <candidates header>\n1. <name>\n...       (only when candidates are supplied)
//! ```

pub mod golden;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{EntityCatalog, Speaker, Utterance};
use crate::linker::{link_utterance, LinkIndex};
use crate::llm_client::{LlmClient, LlmError, ProviderConfig};
use crate::seqrec::CandidateSet;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("strategy {0} needs a candidate set")]
    MissingCandidates(Engagement),
    #[error("candidate set has k = {found}, strategy expects k = {expected}")]
    KMismatch { expected: usize, found: usize },
    #[error("invalid strategy: {0}")]
    InvalidConfig(String),
    #[error("self-reflection needs at least one resource and one round")]
    NoResources,
    #[error("templates: {0}")]
    Template(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adaptation {
    Direct,
    Description,
    SelfReflection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engagement {
    Expansion,
    Rerank,
    SelectRerank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    #[default]
    FullConversation,
    ItemsOnly,
    ContextOnly,
}

macro_rules! str_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $text),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl std::str::FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    other => Err(format!(
                        "unknown {} `{other}` (expected one of: {})",
                        stringify!($ty).to_lowercase(),
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}

str_enum!(Adaptation { Direct => "direct", Description => "description", SelfReflection => "self_reflection" });
str_enum!(Engagement { Expansion => "expansion", Rerank => "rerank", SelectRerank => "select_rerank" });
str_enum!(InputMode { FullConversation => "full_conversation", ItemsOnly => "items_only", ContextOnly => "context_only" });

impl Engagement {
    /// Output must come from the candidate set.
    pub fn is_constrained(self) -> bool {
        self != Engagement::Expansion
    }

    pub fn default_k(self, n: usize) -> usize {
        match self {
            Engagement::Expansion => 10,
            Engagement::Rerank => n,
            Engagement::SelectRerank => 100,
        }
    }
}

pub const DEFAULT_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub adaptation: Adaptation,
    pub engagement: Engagement,
    /// Candidates shown to the model.
    pub k: usize,
    /// Titles requested back.
    pub n: usize,
    pub input_mode: InputMode,
}

impl StrategyConfig {
    pub fn new(adaptation: Adaptation, engagement: Engagement) -> Self {
        Self { adaptation, engagement, k: engagement.default_k(DEFAULT_N), n: DEFAULT_N, input_mode: InputMode::default() }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_input_mode(mut self, mode: InputMode) -> Self {
        self.input_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.n == 0 {
            return Err(PromptError::InvalidConfig("n must be positive".into()));
        }
        if self.engagement.is_constrained() && self.k == 0 {
            return Err(PromptError::InvalidConfig(format!("{} needs k > 0", self.engagement)));
        }
        if self.engagement == Engagement::Rerank && self.k != self.n {
            return Err(PromptError::InvalidConfig(format!("rerank needs k = n, got k = {} and n = {}", self.k, self.n)));
        }
        Ok(())
    }

    /// Stable identifier used in reports and file names.
    pub fn id(&self) -> String {
        format!("{}-{}-k{}-n{}-{}", self.adaptation, self.engagement, self.k, self.n, self.input_mode)
    }
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self::new(Adaptation::Description, Engagement::SelectRerank)
    }
}

pub const ROLE_PROMPT: &str = "You are a movie recommender system interacting with a user.";
pub const FORMAT_PROMPT: &str = "Output a numbered list of exactly {n} movie titles, one per line, with no other text.";
pub const BASELINE_TASK: &str = "Recommend movies that fit the user's preferences expressed in the dialogue history.";
pub const CANDIDATES_HEADER: &str = "Domain expert's recommendations:";
pub const ITEM_PLACEHOLDER: &str = "[ITEM]";

pub const TASK_DIRECT: &str = "To help you with the recommendation, we introduce a domain expert who provides some recommendations based on the training data and you can use the domain expert's recommendations as examples to generate your output";
pub const TASK_DESCRIPTION: &str = "To help you with the recommendation, we introduce a domain-expert which is a recommender for sequential modelling that uses the entities mentioned in the dialogues to generate a ranking list of items.";
pub const TASK_SELF_REFLECTION: &str = "To help you with the recommendation, you can access an advanced recommendation system that specializes in enhancing conversational recommendations by leveraging both the sequence of entities mentioned in a conversation and external knowledge embedded in knowledge graphs. This system generates diverse suggestions based on the entity sequence. The system will return a list of movie recommendations that are entity-relevant, diverse, and informed by the sequence provided and external knowledge from knowledge graphs.";

pub const STRATEGY_EXPANSION: &str = "To help you with the recommendation, you may use the domain expert's recommendations as examples to generate additional recommendations based on the dialogue history. You can generate items beyond the domain expert's recommendations.";
pub const STRATEGY_RERANK: &str = "To help you with the recommendation, you need to rerank the recommendations, placing the domain expert's suggestions in the appropriate order based on your understanding of the dialogue history. You cannot generate items beyond the domain expert's recommendations.";
pub const STRATEGY_SELECT_RERANK: &str = "To help you with the recommendation, you need to select the most appropriate items from the domain expert's recommendations and rerank them in a ranked order based on dialogue history. You cannot generate items beyond the domain expert's recommendations.";

pub fn adaptation_prompt(m: Adaptation) -> &'static str {
    match m {
        Adaptation::Direct => TASK_DIRECT,
        Adaptation::Description => TASK_DESCRIPTION,
        Adaptation::SelfReflection => TASK_SELF_REFLECTION,
    }
}

pub fn strategy_prompt(s: Engagement) -> &'static str {
    match s {
        Engagement::Expansion => STRATEGY_EXPANSION,
        Engagement::Rerank => STRATEGY_RERANK,
        Engagement::SelectRerank => STRATEGY_SELECT_RERANK,
    }
}

/// Overridable prompt texts. Missing keys keep their defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplates {
    pub role_prompt: String,
    /// `{n}` is replaced by the requested output count.
    pub format_prompt: String,
    pub baseline_task: String,
    pub candidates_header: String,
    pub task_direct: String,
    pub task_description: String,
    pub task_self_reflection: String,
    pub strategy_expansion: String,
    pub strategy_rerank: String,
    pub strategy_select_rerank: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            role_prompt: ROLE_PROMPT.into(),
            format_prompt: FORMAT_PROMPT.into(),
            baseline_task: BASELINE_TASK.into(),
            candidates_header: CANDIDATES_HEADER.into(),
            task_direct: TASK_DIRECT.into(),
            task_description: TASK_DESCRIPTION.into(),
            task_self_reflection: TASK_SELF_REFLECTION.into(),
            strategy_expansion: STRATEGY_EXPANSION.into(),
            strategy_rerank: STRATEGY_RERANK.into(),
            strategy_select_rerank: STRATEGY_SELECT_RERANK.into(),
        }
    }
}

impl PromptTemplates {
    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        toml::from_str(text).map_err(|e| PromptError::Template(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn adaptation(&self, m: Adaptation) -> &str {
        match m {
            Adaptation::Direct => &self.task_direct,
            Adaptation::Description => &self.task_description,
            Adaptation::SelfReflection => &self.task_self_reflection,
        }
    }

    pub fn strategy(&self, s: Engagement) -> &str {
        match s {
            Engagement::Expansion => &self.strategy_expansion,
            Engagement::Rerank => &self.strategy_rerank,
            Engagement::SelectRerank => &self.strategy_select_rerank,
        }
    }

    pub fn format(&self, n: usize) -> String {
        self.format_prompt.replace("{n}", &n.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub role: String,
    pub task: String,
    pub format: String,
    pub conversation_block: String,
    pub candidates_block: Option<String>,
    pub assembled: String,
}

fn speaker_label(s: Speaker) -> &'static str {
    match s {
        Speaker::User => "User:",
        Speaker::System => "System:",
    }
}

pub fn render_conversation(context: &[Utterance], mode: InputMode, catalog: &EntityCatalog, index: &LinkIndex) -> String {
    match mode {
        InputMode::FullConversation => context
            .iter()
            .map(|u| format!("{} {}", speaker_label(u.speaker), u.text))
            .collect::<Vec<_>>()
            .join("\n"),
        InputMode::ItemsOnly => context
            .iter()
            .flat_map(|u| link_utterance(&u.text, index))
            .filter(|m| catalog.is_item(m.entity_id))
            .map(|m| catalog.name(m.entity_id).to_string())
            .collect::<Vec<_>>()
            .join("; "),
        InputMode::ContextOnly => context
            .iter()
            .map(|u| {
                let mut text = String::with_capacity(u.text.len());
                let mut cursor = 0;
                for m in link_utterance(&u.text, index).into_iter().filter(|m| catalog.is_item(m.entity_id)) {
                    text.push_str(&u.text[cursor..m.start]);
                    text.push_str(ITEM_PLACEHOLDER);
                    cursor = m.end;
                }
                text.push_str(&u.text[cursor..]);
                format!("{} {}", speaker_label(u.speaker), text)
            })
            .collect::<Vec<_>>()
            .join("\n"),
    }
}

pub fn serialize_candidates(candidates: &CandidateSet, catalog: &EntityCatalog) -> String {
    candidates
        .entries
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {}", i + 1, catalog.name(c.item)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn assemble(
    templates: &PromptTemplates,
    config: &StrategyConfig,
    context: &[Utterance],
    candidates: Option<&CandidateSet>,
    catalog: &EntityCatalog,
    index: &LinkIndex,
) -> Result<PromptBundle, PromptError> {
    config.validate()?;
    if let Some(c) = candidates {
        if c.k != config.k {
            return Err(PromptError::KMismatch { expected: config.k, found: c.k });
        }
    } else if config.engagement.is_constrained() {
        return Err(PromptError::MissingCandidates(config.engagement));
    }

    let role = templates.role_prompt.clone();
    let task = match candidates {
        Some(_) => format!("{}\n{}", templates.adaptation(config.adaptation), templates.strategy(config.engagement)),
        None => templates.baseline_task.clone(),
    };
    let format = templates.format(config.n);
    let conversation_block = render_conversation(context, config.input_mode, catalog, index);
    let candidates_block = candidates.map(|c| {
        let list = serialize_candidates(c, catalog);
        if list.is_empty() {
            templates.candidates_header.clone()
        } else {
            format!("{}\n{}", templates.candidates_header, list)
        }
    });

    let mut parts = vec![role.as_str(), task.as_str(), format.as_str(), conversation_block.as_str()];
    if let Some(block) = &candidates_block {
        parts.push(block);
    }
    let assembled = parts.join("\n\n");
    Ok(PromptBundle { role, task, format, conversation_block, candidates_block, assembled })
}

/// Reply prefix that ends self-reflection.
pub const CONFIDENT_MARKER: &str = "CONFIDENT";

fn reflection_prompt(round: usize, resource_index: usize, resources: &[String], draft: Option<&str>) -> String {
    format!(
        "You are studying an external recommender that will assist a conversational movie recommender as a domain expert.\n\n\
         Resource {} of {} (round {}):\n{}\n\n\
         Current description of the recommender:\n{}\n\n\
         Using this resource, correct the current description or write a new one. The description must tell a language model \
         what the recommender takes as input and what it returns. Reply with the description only. If no further change is \
         needed, start your reply with {CONFIDENT_MARKER}: followed by the final description.",
        resource_index + 1,
        resources.len(),
        round + 1,
        resources[resource_index],
        draft.unwrap_or("(none yet)"),
    )
}

/// Iteratively refines a recommender description over `resources` (cycled)
/// until the reply carries [`CONFIDENT_MARKER`] or `max_rounds` calls were made.
pub fn self_reflect(
    resources: &[String],
    client: &LlmClient,
    provider: &ProviderConfig,
    model_name: &str,
    max_rounds: usize,
) -> Result<String, PromptError> {
    if resources.is_empty() || max_rounds == 0 {
        return Err(PromptError::NoResources);
    }
    let mut draft: Option<String> = None;
    for round in 0..max_rounds {
        let prompt = reflection_prompt(round, round % resources.len(), resources, draft.as_deref());
        let reply = client.complete(&provider.request(model_name, &prompt))?.text;
        if let Some(pos) = reply.find(CONFIDENT_MARKER) {
            let rest = reply[pos + CONFIDENT_MARKER.len()..].trim_start();
            let rest = rest.strip_prefix(':').unwrap_or(rest).trim();
            return Ok(if rest.is_empty() { draft.unwrap_or_default() } else { rest.to_string() });
        }
        draft = Some(reply.trim().to_string());
    }
    Ok(draft.unwrap_or_default())
}

#[cfg(test)]
mod tests;
