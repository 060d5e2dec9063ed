//! Analyzer, Proposer/Skeptic rounds and Judge over one changed file.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::context::{DEFAULT_DEPTH, DEFAULT_MAX_LINES};
use crate::error::{Error, Result};
use crate::llm::{parse_prediction, ChatRequest, ChatRole, Expect, LlmClient, ParsePath, ParsedPrediction};
use crate::prompting::{build_role_prompt, JUDGE_REASK};

pub use crate::prompting::DebateMaterials as DebateInput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Analyzer,
    Proposer,
    Skeptic,
    Judge,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Analyzer, Role::Proposer, Role::Skeptic, Role::Judge];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Analyzer => "analyzer",
            Role::Proposer => "proposer",
            Role::Skeptic => "skeptic",
            Role::Judge => "judge",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Role::Analyzer => "Analyzer",
            Role::Proposer => "Proposer",
            Role::Skeptic => "Skeptic",
            Role::Judge => "Judge",
        }
    }

    pub fn default_model(self) -> &'static str {
        match self {
            Role::Analyzer => "gemini-2.5-flash-lite",
            Role::Proposer => "gpt-5-mini",
            Role::Skeptic => "codestral-2501",
            Role::Judge => "deepseek-v3.1",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown debate role `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebateMessage {
    pub role: Role,
    pub round: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebateConfig {
    pub rounds: usize,
    pub role_models: BTreeMap<Role, String>,
    pub depth: usize,
    pub max_lines: usize,
}

impl Default for DebateConfig {
    fn default() -> Self {
        DebateConfig {
            rounds: 1,
            role_models: Role::ALL.into_iter().map(|r| (r, r.default_model().to_string())).collect(),
            depth: DEFAULT_DEPTH,
            max_lines: DEFAULT_MAX_LINES,
        }
    }
}

impl DebateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("debate needs at least one round".into()));
        }
        for r in Role::ALL {
            if self.role_models.get(&r).is_none_or(|m| m.trim().is_empty()) {
                return Err(Error::Config(format!("no model assigned to the {r} role")));
            }
        }
        Ok(())
    }

    pub fn model(&self, role: Role) -> &str {
        self.role_models.get(&role).map(String::as_str).unwrap_or_else(|| role.default_model())
    }

    /// Applies `analyzer=m1,judge=m2` style assignments on top of the current map.
    pub fn set_roles(&mut self, spec: &str) -> Result<()> {
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (role, model) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("role assignment `{part}` is not role=model")))?;
            let model = model.trim();
            if model.is_empty() {
                return Err(Error::Config(format!("empty model for role `{}`", role.trim())));
            }
            self.role_models.insert(role.parse()?, model.to_string());
        }
        Ok(())
    }

    pub fn roles_string(&self) -> String {
        Role::ALL.iter().map(|r| format!("{r}={}", self.model(*r))).collect::<Vec<_>>().join(",")
    }

    /// Roles in speaking order: analyzer@0, proposer@r and skeptic@r, judge@R+1.
    pub fn schedule(&self) -> Vec<(Role, usize)> {
        let mut s = vec![(Role::Analyzer, 0)];
        for r in 1..=self.rounds {
            s.push((Role::Proposer, r));
            s.push((Role::Skeptic, r));
        }
        s.push((Role::Judge, self.rounds + 1));
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateTranscript {
    pub record_id: String,
    pub messages: Vec<DebateMessage>,
    pub verdict: ParsedPrediction,
    /// The judge's unparseable first answer, when a re-ask was needed.
    pub judge_reask: Option<String>,
    pub config: DebateConfig,
}

/// A failed debate together with the messages produced before the failure.
#[derive(Debug)]
pub struct DebateError {
    pub error: Error,
    pub partial: Vec<DebateMessage>,
}

impl fmt::Display for DebateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} message(s))", self.error, self.partial.len())
    }
}

impl std::error::Error for DebateError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<DebateError> for Error {
    fn from(e: DebateError) -> Error {
        e.error
    }
}

pub fn run_debate(
    input: &DebateInput,
    cfg: &DebateConfig,
    client: &LlmClient,
) -> std::result::Result<DebateTranscript, DebateError> {
    let mut messages: Vec<DebateMessage> = Vec::new();
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => return Err(DebateError { error, partial: messages }),
            }
        };
    }
    attempt!(cfg.validate());

    let schedule = cfg.schedule();
    let (judge_turn, turns) = schedule.split_last().expect("schedule is never empty");
    for &(role, round) in turns {
        let bundle = attempt!(build_role_prompt(role, input, &messages, round));
        let req = ChatRequest::from_bundle(cfg.model(role), &bundle, &input.record_id);
        let reply = attempt!(client.complete(&req));
        messages.push(DebateMessage { role, round, text: reply.text });
    }

    let (role, round) = *judge_turn;
    let bundle = attempt!(build_role_prompt(role, input, &messages, round));
    let req = ChatRequest::from_bundle(cfg.model(role), &bundle, &input.record_id);
    let first = attempt!(client.complete(&req)).text;
    let mut verdict = parse_prediction(&first, Expect::JudgeMarkers);
    let mut judge_reask = None;
    let mut text = first;
    if verdict.parse_path == ParsePath::Failed {
        log::info!("judge answer for {} unparseable; re-asking", input.record_id);
        let retry = req.with_turn(ChatRole::Assistant, text.clone()).with_turn(ChatRole::User, JUDGE_REASK.trim_end());
        let second = attempt!(client.complete(&retry)).text;
        verdict = parse_prediction(&second, Expect::JudgeMarkers);
        judge_reask = Some(std::mem::replace(&mut text, second));
    }
    messages.push(DebateMessage { role, round, text });

    Ok(DebateTranscript { record_id: input.record_id.clone(), messages, verdict, judge_reask, config: cfg.clone() })
}
