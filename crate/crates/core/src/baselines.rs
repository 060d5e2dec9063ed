//! Reference predictors that need no model.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::matching::EvolutionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    /// Common files keep their old label; added files are benign.
    LabelPersistent,
    AllBenign,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::LabelPersistent => "label-persistent",
            BaselineKind::AllBenign => "all-benign",
        }
    }

    pub fn predict(self, record: &EvolutionRecord) -> Label {
        match self {
            BaselineKind::LabelPersistent => record.old_label().unwrap_or(Label::Benign),
            BaselineKind::AllBenign => Label::Benign,
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "label-persistent" | "naive" => Ok(BaselineKind::LabelPersistent),
            "all-benign" => Ok(BaselineKind::AllBenign),
            _ => Err(Error::Config(format!("unknown baseline `{s}` (expected label-persistent or all-benign)"))),
        }
    }
}

pub fn predict_naive(records: &[EvolutionRecord], kind: BaselineKind) -> BTreeMap<String, Label> {
    records.iter().map(|r| (r.id().to_string(), kind.predict(r))).collect()
}
