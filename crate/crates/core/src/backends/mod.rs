//! Pluggable backends: embeddings, sentiment, topic classification, and
//! variant generation. Built-ins are deterministic and dependency-free;
//! external-process backends speak a line-oriented JSON protocol.

pub mod embed;
pub mod external;
pub mod generate;
pub mod sentiment;
pub mod topic;

pub use embed::{cosine, EmbeddingBackend, TrigramHashEmbedder};
pub use external::{ExternalGeneratorBackend, ExternalProcess, ExternalTopicBackend};
pub use generate::{GeneratorBackend, RuleParaphraser};
pub use sentiment::{LexiconSentiment, SentimentBackend};
pub use topic::{default_topics, KeywordTopicBackend, TopicSpec};
