//! Prompt rendering for the single-shot methods M0–M8 and the debate roles.
//!
//! Templates live in `templates/` and use `{{name}}` placeholders, filled in
//! a single pass so that substituted code is never re-scanned.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::ContextBundle;
use crate::corpus::{Label, VersionedFile};
use crate::debate::{DebateMessage, Role};
use crate::diffing::{render_difference_list, ChangeSet};
use crate::error::{Error, Result};
use crate::matching::EvolutionRecord;

pub const SYSTEM_PROMPT: &str = include_str!("../templates/system.txt");
const JSON_INSTRUCTION: &str = include_str!("../templates/json_instruction.txt");
const JUDGE_INSTRUCTION: &str = include_str!("../templates/judge_instruction.txt");
pub(crate) const JUDGE_REASK: &str = include_str!("../templates/reask_judge.txt");

const ROLE_ANALYZER: &str = include_str!("../templates/role_analyzer.txt");
const ROLE_PROPOSER: &str = include_str!("../templates/role_proposer.txt");
const ROLE_SKEPTIC: &str = include_str!("../templates/role_skeptic.txt");
const ROLE_JUDGE: &str = include_str!("../templates/role_judge.txt");

/// Default number of defective exemplars for M7.
pub const DEFAULT_EXEMPLARS: usize = 3;
const EXEMPLAR_LINES: usize = 5;

/// Text that carries the previous label in debate prompts. Analyzer and
/// Skeptic prompts never contain it.
pub fn label_slot(label: Label) -> String {
    format!("[Previous Label] → {label}")
}

/// Input blocks a prompt may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InputBlock {
    Src1,
    Src2,
    Differences,
    Unified,
    LocalContext,
    Exemplars,
    PrevLabel,
}

impl InputBlock {
    /// Block header as it appears in the templates.
    pub fn header(self) -> &'static str {
        match self {
            InputBlock::Src1 => "[SRC1]",
            InputBlock::Src2 => "[SRC2]",
            InputBlock::Differences => "[Differences]",
            InputBlock::Unified => "[Unified diff]",
            InputBlock::LocalContext => "[Local Context]",
            InputBlock::Exemplars => "[Defective Examples]",
            InputBlock::PrevLabel => "[SRC1] →",
        }
    }
}

/// The nine single-shot prompting methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodId {
    M0,
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
    M7,
    M8,
}

impl MethodId {
    pub const ALL: [MethodId; 9] = [
        MethodId::M0,
        MethodId::M1,
        MethodId::M2,
        MethodId::M3,
        MethodId::M4,
        MethodId::M5,
        MethodId::M6,
        MethodId::M7,
        MethodId::M8,
    ];

    pub fn required_inputs(self) -> &'static [InputBlock] {
        use InputBlock::*;
        match self {
            MethodId::M0 => &[Src2],
            MethodId::M1 => &[Src1, Src2, PrevLabel],
            MethodId::M2 => &[Src1, Src2, Differences, PrevLabel],
            MethodId::M3 => &[Src1, Src2, Differences, Unified, PrevLabel],
            MethodId::M4 => &[Src1, Differences, Unified, PrevLabel],
            MethodId::M5 => &[Differences, Unified, PrevLabel],
            MethodId::M6 => &[LocalContext, Differences, PrevLabel],
            MethodId::M7 => &[Differences, Unified, Exemplars, PrevLabel],
            MethodId::M8 => &[Differences, Unified, PrevLabel],
        }
    }

    pub fn requires(self, block: InputBlock) -> bool {
        self.required_inputs().contains(&block)
    }

    pub fn title(self) -> &'static str {
        match self {
            MethodId::M0 => "Single-version classification",
            MethodId::M1 => "Direct comparison",
            MethodId::M2 => "Diff-guided reasoning",
            MethodId::M3 => "Patch-aware reasoning",
            MethodId::M4 => "SRC1-only change reasoning",
            MethodId::M5 => "Diff-only reasoning",
            MethodId::M6 => "Local-context reasoning",
            MethodId::M7 => "Diffs with exemplars",
            MethodId::M8 => "Semantic repair reasoning",
        }
    }

    fn template(self) -> &'static str {
        match self {
            MethodId::M0 => include_str!("../templates/m0_single_version.txt"),
            MethodId::M1 => include_str!("../templates/m1_direct_comparison.txt"),
            MethodId::M2 => include_str!("../templates/m2_diff_guided.txt"),
            MethodId::M3 => include_str!("../templates/m3_patch_aware.txt"),
            MethodId::M4 => include_str!("../templates/m4_src1_only.txt"),
            MethodId::M5 => include_str!("../templates/m5_diff_only.txt"),
            MethodId::M6 => include_str!("../templates/m6_local_context.txt"),
            MethodId::M7 => include_str!("../templates/m7_exemplars.txt"),
            MethodId::M8 => include_str!("../templates/m8_semantic_repair.txt"),
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for MethodId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected M0..M8)")))
    }
}

/// What produced a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptTag {
    Method(MethodId),
    Role(Role),
}

impl fmt::Display for PromptTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptTag::Method(m) => write!(f, "{m}"),
            PromptTag::Role(r) => write!(f, "{r}"),
        }
    }
}

/// A rendered system + user prompt pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub tag: PromptTag,
}

/// Fills `{{name}}` placeholders in one pass. Unknown or unclosed placeholders are errors.
pub fn render_template(template: &str, values: &HashMap<&str, String>) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or_else(|| Error::Config("unclosed placeholder in template".into()))?;
        let key = &after[..close];
        let value = values
            .get(key)
            .ok_or_else(|| Error::Config(format!("template placeholder `{key}` has no value")))?;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

fn block_text(s: &str) -> String {
    s.trim_end_matches(['\n', '\r']).to_string()
}

fn missing(block: InputBlock) -> Error {
    Error::Config(format!("missing input for block {}", block.header()))
}

/// Renders the prompt of a single-shot method for one record.
pub fn build_method_prompt(
    method: MethodId,
    record: &EvolutionRecord,
    cs: &ChangeSet,
    ctx: Option<&ContextBundle>,
    exemplars: Option<&[String]>,
) -> Result<PromptBundle> {
    let mut values: HashMap<&str, String> = HashMap::new();
    for &block in method.required_inputs() {
        match block {
            InputBlock::Src1 => {
                let old = record.old_file.as_ref().ok_or_else(|| missing(block))?;
                values.insert("src1", block_text(&old.source));
            }
            InputBlock::Src2 => {
                values.insert("src2", block_text(&record.new_file.source));
            }
            InputBlock::Differences => {
                values.insert("differences", render_difference_list(cs));
            }
            InputBlock::Unified => {
                values.insert("unified", block_text(&cs.unified));
            }
            InputBlock::LocalContext => {
                let ctx = ctx.ok_or_else(|| missing(block))?;
                values.insert("local_context", ctx.snippet.clone());
            }
            InputBlock::Exemplars => {
                let ex = exemplars.filter(|e| !e.is_empty()).ok_or_else(|| missing(block))?;
                values.insert("exemplars", ex.join("\n\n"));
            }
            InputBlock::PrevLabel => {
                let label = record.old_label().ok_or_else(|| missing(block))?;
                values.insert("prev_label", label.to_string());
            }
        }
    }
    let body = render_template(method.template(), &values)?;
    Ok(PromptBundle {
        system: SYSTEM_PROMPT.to_string(),
        user: format!("{}\n\n{}", body.trim_end(), JSON_INSTRUCTION.trim_end()),
        tag: PromptTag::Method(method),
    })
}

/// Evidence shared by all debate roles for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebateMaterials {
    pub record_id: String,
    pub prev_label: Label,
    pub unified: String,
    pub context: String,
}

impl DebateMaterials {
    pub fn new(record: &EvolutionRecord, cs: &ChangeSet, ctx: &ContextBundle) -> Result<DebateMaterials> {
        let prev_label = record
            .old_label()
            .ok_or_else(|| Error::Orchestration(format!("record {} has no previous version", record.id())))?;
        Ok(DebateMaterials {
            record_id: record.id().to_string(),
            prev_label,
            unified: block_text(&cs.unified),
            context: ctx.snippet.clone(),
        })
    }
}

/// Messages that must precede `role` speaking in `round`.
///
/// The judge speaks in round `R + 1` after `R` debate rounds.
pub fn expected_history(role: Role, round: usize) -> Result<Vec<(Role, usize)>> {
    let bad = || Error::Orchestration(format!("{role} cannot speak in round {round}"));
    let debate_rounds = |upto: usize| {
        std::iter::once((Role::Analyzer, 0))
            .chain((1..=upto).flat_map(|q| [(Role::Proposer, q), (Role::Skeptic, q)]))
            .collect::<Vec<_>>()
    };
    Ok(match role {
        Role::Analyzer if round == 0 => Vec::new(),
        Role::Proposer if round >= 1 => debate_rounds(round - 1),
        Role::Skeptic if round >= 1 => {
            let mut h = debate_rounds(round - 1);
            h.push((Role::Proposer, round));
            h
        }
        Role::Judge if round >= 2 => debate_rounds(round - 1),
        _ => return Err(bad()),
    })
}

pub fn render_history(history: &[DebateMessage]) -> String {
    history
        .iter()
        .map(|m| format!("--- {} (round {}) ---\n{}", m.role.title(), m.round, m.text.trim_end()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Renders the prompt of one debate role.
///
/// Only the Proposer and the Judge see the previous label.
pub fn build_role_prompt(
    role: Role,
    materials: &DebateMaterials,
    history: &[DebateMessage],
    round: usize,
) -> Result<PromptBundle> {
    let expected = expected_history(role, round)?;
    let actual: Vec<(Role, usize)> = history.iter().map(|m| (m.role, m.round)).collect();
    if actual != expected {
        return Err(Error::Orchestration(format!(
            "{role} in round {round} expects {} prior message(s), got {}",
            expected.len(),
            actual.len()
        )));
    }

    let mut values: HashMap<&str, String> = HashMap::new();
    values.insert("unified", materials.unified.clone());
    values.insert("context", materials.context.clone());
    values.insert("round", round.to_string());
    values.insert("history", render_history(history));
    let (template, tail) = match role {
        Role::Analyzer => (ROLE_ANALYZER, None),
        Role::Proposer => {
            values.insert("label_slot", label_slot(materials.prev_label));
            (ROLE_PROPOSER, Some(JSON_INSTRUCTION))
        }
        Role::Skeptic => (ROLE_SKEPTIC, None),
        Role::Judge => {
            values.insert("label_slot", label_slot(materials.prev_label));
            values.insert("rounds", (round - 1).to_string());
            (ROLE_JUDGE, Some(JUDGE_INSTRUCTION))
        }
    };
    let body = render_template(template, &values)?;
    let user = match tail {
        Some(t) => format!("{}\n\n{}", body.trim_end(), t.trim_end()),
        None => body.trim_end().to_string(),
    };
    Ok(PromptBundle { system: SYSTEM_PROMPT.to_string(), user, tag: PromptTag::Role(role) })
}

fn exemplar_candidate(line: &str) -> bool {
    let t = line.trim();
    !(t.is_empty()
        || t.starts_with("//")
        || t.starts_with('*')
        || t.starts_with("/*")
        || t.starts_with("import ")
        || t.starts_with("package ")
        || t == "}"
        || t == "{")
}

/// Draws `count` short code excerpts from distinct defective files.
///
/// `exclude` is skipped so a record never sees its own previous version.
pub fn sample_exemplars(defective: &[&VersionedFile], exclude: Option<&str>, count: usize, seed: u64) -> Vec<String> {
    let mut pool: Vec<&VersionedFile> =
        defective.iter().copied().filter(|f| Some(f.path.as_str()) != exclude).collect();
    pool.sort_by(|a, b| a.path.cmp(&b.path));
    if pool.is_empty() || count == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, pool.len(), count.min(pool.len()));
    let mut out = Vec::new();
    for i in picks.into_iter() {
        let f = pool[i];
        let lines: Vec<&str> = crate::corpus::normalize_lines(&f.source)
            .into_iter()
            .filter(|l| exemplar_candidate(l))
            .collect();
        if lines.is_empty() {
            continue;
        }
        let take = EXEMPLAR_LINES.min(lines.len());
        let start = rng.random_range(0..=lines.len() - take);
        let excerpt: Vec<&str> = lines[start..start + take].iter().map(|l| l.trim_end()).collect();
        out.push(format!("// {}\n{}", f.path, excerpt.join("\n")));
    }
    out
}
