//! Run configuration in a flat `key = value` text format.
//!
//! Lines starting with `#` are comments. The same format, prefixed with the
//! tool version, is written as the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::BaselineKind;
use crate::context::{DEFAULT_DEPTH, DEFAULT_MAX_LINES};
use crate::corpus::ColumnSpec;
use crate::debate::DebateConfig;
use crate::diffing::DEFAULT_CONTEXT_LINES;
use crate::error::{Error, Result};
use crate::llm::DEFAULT_API_BASE;
use crate::matching::{MatchParams, Subset};
use crate::prompting::{MethodId, DEFAULT_EXEMPLARS};

/// What produces the predictions of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodSelector {
    Baseline(BaselineKind),
    Method(MethodId),
    Debate,
}

impl MethodSelector {
    pub fn name(&self) -> String {
        match self {
            MethodSelector::Baseline(k) => k.to_string(),
            MethodSelector::Method(m) => m.to_string(),
            MethodSelector::Debate => "debate".into(),
        }
    }

    pub fn uses_llm(&self) -> bool {
        !matches!(self, MethodSelector::Baseline(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: String,
    pub old_csv: Option<PathBuf>,
    pub new_csv: Option<PathBuf>,
    pub old_version: String,
    pub new_version: String,
    pub columns: ColumnSpec,
    pub match_params: MatchParams,
    pub diff_context: usize,
    pub baseline: Option<BaselineKind>,
    pub method: Option<MethodId>,
    pub debate_enabled: bool,
    /// Depth and line budget here also drive single-shot context (M6).
    pub debate: DebateConfig,
    /// Model for single-shot methods.
    pub model: String,
    pub exemplars: usize,
    pub api_base: String,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub timeout_secs: u64,
    pub stub: bool,
    pub stub_script: Option<PathBuf>,
    pub caps: BTreeMap<Subset, usize>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "dataset".into(),
            old_csv: None,
            new_csv: None,
            old_version: "old".into(),
            new_version: "new".into(),
            columns: ColumnSpec::default(),
            match_params: MatchParams::default(),
            diff_context: DEFAULT_CONTEXT_LINES,
            baseline: None,
            method: None,
            debate_enabled: false,
            debate: DebateConfig { depth: DEFAULT_DEPTH, max_lines: DEFAULT_MAX_LINES, ..DebateConfig::default() },
            model: "gpt-5-mini".into(),
            exemplars: DEFAULT_EXEMPLARS,
            api_base: DEFAULT_API_BASE.into(),
            max_in_flight: 4,
            max_attempts: 5,
            timeout_secs: 120,
            stub: false,
            stub_script: None,
            caps: BTreeMap::new(),
            seed: 42,
            out_dir: PathBuf::from("driftlens-out"),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("`{key}` expects a number, got `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects true or false, got `{value}`"))),
    }
}

fn optional(value: &str) -> Option<String> {
    (!value.is_empty() && value != "none").then(|| value.to_string())
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, value) = (key.trim(), value.trim());
        match key {
            "dataset" => self.dataset = value.into(),
            "old_csv" => self.old_csv = optional(value).map(PathBuf::from),
            "new_csv" => self.new_csv = optional(value).map(PathBuf::from),
            "old_version" => self.old_version = value.into(),
            "new_version" => self.new_version = value.into(),
            "path_column" => self.columns.path = optional(value),
            "label_column" => self.columns.label = optional(value),
            "source_column" => self.columns.source = optional(value),
            "threshold" => {
                self.match_params = MatchParams::new(parse_num(key, value)?, self.match_params.gap_multiplier)?
            }
            "gap_multiplier" => {
                self.match_params = MatchParams::new(self.match_params.threshold, parse_num(key, value)?)?
            }
            "diff_context" => self.diff_context = parse_num(key, value)?,
            "depth" => self.debate.depth = parse_num(key, value)?,
            "max_lines" => self.debate.max_lines = parse_num(key, value)?,
            "baseline" => self.baseline = optional(value).map(|v| v.parse()).transpose()?,
            "method" => self.method = optional(value).map(|v| v.parse()).transpose()?,
            "debate" => self.debate_enabled = parse_bool(key, value)?,
            "rounds" => self.debate.rounds = parse_num(key, value)?,
            "roles" => self.debate.set_roles(value)?,
            "model" => self.model = value.into(),
            "exemplars" => self.exemplars = parse_num(key, value)?,
            "api_base" => self.api_base = value.into(),
            "max_in_flight" => self.max_in_flight = parse_num(key, value)?,
            "max_attempts" => self.max_attempts = parse_num(key, value)?,
            "timeout_secs" => self.timeout_secs = parse_num(key, value)?,
            "stub" => self.stub = parse_bool(key, value)?,
            "stub_script" => self.stub_script = optional(value).map(PathBuf::from),
            "seed" => self.seed = parse_num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            k if k.starts_with("cap.") => {
                let subset: Subset = k["cap.".len()..].parse().map_err(|_| {
                    Error::Config(format!("`{k}`: caps apply to B00, B10, D01, D11, added or unchanged_source"))
                })?;
                match optional(value) {
                    Some(v) => {
                        self.caps.insert(subset, parse_num(key, &v)?);
                    }
                    None => {
                        self.caps.remove(&subset);
                    }
                }
            }
            "api_key" => {
                return Err(Error::Config(
                    "`api_key` is not a config key; API keys are read from the environment only, never from config files".into(),
                ))
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k, v)
    }

    pub fn from_kv_str(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            if k.trim() == "tool_version" {
                continue;
            }
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::from_kv_str(&text)
    }

    /// Serializes every setting so that `from_kv_str` restores an equal config.
    pub fn to_kv_string(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into());
        let opt = |s: &Option<String>| s.clone().unwrap_or_else(|| "none".into());
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("dataset", self.dataset.clone());
        kv("old_csv", path(&self.old_csv));
        kv("new_csv", path(&self.new_csv));
        kv("old_version", self.old_version.clone());
        kv("new_version", self.new_version.clone());
        kv("path_column", opt(&self.columns.path));
        kv("label_column", opt(&self.columns.label));
        kv("source_column", opt(&self.columns.source));
        kv("threshold", self.match_params.threshold.to_string());
        kv("gap_multiplier", self.match_params.gap_multiplier.to_string());
        kv("diff_context", self.diff_context.to_string());
        kv("depth", self.debate.depth.to_string());
        kv("max_lines", self.debate.max_lines.to_string());
        kv("baseline", self.baseline.map(|b| b.to_string()).unwrap_or_else(|| "none".into()));
        kv("method", self.method.map(|m| m.to_string()).unwrap_or_else(|| "none".into()));
        kv("debate", self.debate_enabled.to_string());
        kv("rounds", self.debate.rounds.to_string());
        kv("roles", self.debate.roles_string());
        kv("model", self.model.clone());
        kv("exemplars", self.exemplars.to_string());
        kv("api_base", self.api_base.clone());
        kv("max_in_flight", self.max_in_flight.to_string());
        kv("max_attempts", self.max_attempts.to_string());
        kv("timeout_secs", self.timeout_secs.to_string());
        kv("stub", self.stub.to_string());
        kv("stub_script", path(&self.stub_script));
        for (s, n) in &self.caps {
            kv(&format!("cap.{s}"), n.to_string());
        }
        kv("seed", self.seed.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        out
    }

    /// The single active method selector.
    pub fn selector(&self) -> Result<MethodSelector> {
        let mut active = Vec::new();
        if let Some(b) = self.baseline {
            active.push(MethodSelector::Baseline(b));
        }
        if let Some(m) = self.method {
            active.push(MethodSelector::Method(m));
        }
        if self.debate_enabled {
            active.push(MethodSelector::Debate);
        }
        match active.as_slice() {
            [one] => Ok(*one),
            [] => Err(Error::Config("no method selected: set one of baseline, method or debate".into())),
            many => Err(Error::Config(format!(
                "exactly one method selector may be active, found {}",
                many.iter().map(MethodSelector::name).collect::<Vec<_>>().join(" and ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sel = self.selector()?;
        if self.old_csv.is_none() || self.new_csv.is_none() {
            return Err(Error::Config("both old_csv and new_csv must be set".into()));
        }
        if sel == MethodSelector::Debate {
            self.debate.validate()?;
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}
