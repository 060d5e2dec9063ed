//! Change-aware file-level defect prediction.
//!
//! The crate matches files across two project versions, computes line diffs,
//! expands the changed region through a file-local call graph, renders the
//! single-shot and debate prompts, talks to an OpenAI-compatible endpoint and
//! scores predictions with metrics that separate label-transition subsets from
//! files that simply kept their label.

pub mod baselines;
pub mod config;
pub mod context;
pub mod corpus;
pub mod debate;
pub mod diffing;
pub mod error;
pub mod llm;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod prompting;

pub use baselines::{predict_naive, BaselineKind};
pub use config::{MethodSelector, RunConfig};
pub use context::{build_call_graph, extract_context, extract_methods, CallGraph, ContextBundle, MethodSpan};
pub use corpus::{load_version, normalize_lines, ColumnSpec, Label, VersionSet, VersionedFile};
pub use debate::{run_debate, DebateConfig, DebateInput, DebateTranscript, Role};
pub use diffing::{diff, diff_paths, render_difference_list, ChangeSet};
pub use error::{Error, Result};
pub use llm::{parse_prediction, ChatRequest, LlmClient, ParsePath, ParsedPrediction, RetryPolicy};
pub use matching::{dice_similarity, match_files, partition, EvolutionRecord, MatchKind, MatchParams, PartitionStats, Subset};
pub use metrics::{macro_prf, EvaluationReport, StandardMetrics};
pub use prompting::{build_method_prompt, build_role_prompt, MethodId, PromptBundle};

/// Version string recorded in run manifests.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
