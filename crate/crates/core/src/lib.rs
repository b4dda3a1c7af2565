//! Conversational recommendation with an entity-level sequential recommender
//! and language-model contextual re-ranking.

pub mod corpus;
pub mod linker;
pub mod seqrec;
pub mod text;
pub mod grounding;
pub mod llm_client;
pub mod prompting;
pub mod eval;
pub mod pipeline;
