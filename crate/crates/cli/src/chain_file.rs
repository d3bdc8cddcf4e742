//! JSON chain description.
//!
//! ```json
//! {
//!   "states": 3,
//!   "actions": ["left", "right"],
//!   "transitions": [[[1, 0, 0], ...], [[0, 1, 0], ...]],
//!   "forbidden": [3],
//!   "constraints": [{"h": [1, 0], "beta": 0.5}]
//! }
//! ```
//!
//! `states` and `actions` are either a count or a list of labels. Matrices
//! are per action, row = current state. Forbidden states are 1-based
//! indices or state labels.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use saferecur::{ControlledChain, LinearConstraint};

use crate::CliError;

const FIELDS: [&str; 5] = [
    "states",
    "actions",
    "transitions",
    "forbidden",
    "constraints",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dimension {
    Count(usize),
    Labels(Vec<String>),
}

impl Dimension {
    pub fn len(&self) -> usize {
        match self {
            Dimension::Count(k) => *k,
            Dimension::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Option<&[String]> {
        match self {
            Dimension::Count(_) => None,
            Dimension::Labels(l) => Some(l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateRef {
    Index(usize),
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub h: Vec<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainFile {
    pub states: Dimension,
    pub actions: Dimension,
    pub transitions: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub forbidden: Vec<StateRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<ConstraintSpec>,
}

/// A parsed file together with anything worth telling the user.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub file: ChainFile,
    pub warnings: Vec<String>,
}

/// Unknown top-level fields are an error unless `allow_unknown`, in which
/// case they are dropped with a warning.
pub fn parse(text: &str, allow_unknown: bool) -> Result<Parsed, CliError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("not valid JSON: {e}")))?;
    let Value::Object(mut map) = value else {
        return Err(CliError::Input("chain file must be a JSON object".into()));
    };
    let unknown: Vec<String> = map
        .keys()
        .filter(|k| !FIELDS.contains(&k.as_str()))
        .cloned()
        .collect();
    let mut warnings = Vec::new();
    if !unknown.is_empty() {
        if !allow_unknown {
            return Err(CliError::Input(format!(
                "unknown field(s) {} (pass --allow-unknown-fields to ignore)",
                unknown.join(", ")
            )));
        }
        for k in &unknown {
            map.remove(k);
            warnings.push(format!("ignoring unknown field `{k}`"));
        }
    }
    let file: ChainFile = serde_json::from_value(Value::Object(map))
        .map_err(|e| CliError::Input(format!("malformed chain file: {e}")))?;
    Ok(Parsed { file, warnings })
}

impl ChainFile {
    pub fn to_chain(&self) -> Result<ControlledChain, CliError> {
        let (n, m) = (self.states.len(), self.actions.len());
        if self.transitions.len() != m {
            return Err(CliError::Input(format!(
                "{} transition matrices for {m} actions",
                self.transitions.len()
            )));
        }
        for (u, q) in self.transitions.iter().enumerate() {
            if q.len() != n || q.iter().any(|row| row.len() != n) {
                return Err(CliError::Input(format!(
                    "transition matrix of action {} is not {n} x {n}",
                    u + 1
                )));
            }
        }
        let forbidden = self.forbidden_set()?;
        ControlledChain::from_action_matrices(&self.transitions, forbidden)
            .map_err(|e| CliError::Input(e.to_string()))
    }

    /// 0-based forbidden states.
    pub fn forbidden_set(&self) -> Result<BTreeSet<usize>, CliError> {
        let n = self.states.len();
        self.forbidden
            .iter()
            .map(|r| match r {
                StateRef::Index(i) if (1..=n).contains(i) => Ok(i - 1),
                StateRef::Index(i) => Err(CliError::Input(format!(
                    "forbidden state {i} is out of range 1..={n}"
                ))),
                StateRef::Label(l) => self
                    .states
                    .labels()
                    .and_then(|labels| labels.iter().position(|s| s == l))
                    .ok_or_else(|| CliError::Input(format!("unknown forbidden state `{l}`"))),
            })
            .collect()
    }

    pub fn constraints(&self) -> Vec<LinearConstraint> {
        self.constraints
            .iter()
            .map(|c| LinearConstraint {
                h: c.h.clone(),
                beta: c.beta,
            })
            .collect()
    }

    /// Inverse of [`ChainFile::to_chain`], with counts for both dimensions.
    pub fn from_chain(chain: &ControlledChain, constraints: &[LinearConstraint]) -> Self {
        ChainFile {
            states: Dimension::Count(chain.n()),
            actions: Dimension::Count(chain.m()),
            transitions: (0..chain.m()).map(|u| chain.action_matrix(u)).collect(),
            forbidden: chain
                .forbidden()
                .iter()
                .map(|&x| StateRef::Index(x + 1))
                .collect(),
            constraints: constraints
                .iter()
                .map(|c| ConstraintSpec {
                    h: c.h.clone(),
                    beta: c.beta,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chain file serializes")
    }

    pub fn state_name(&self, x: usize) -> String {
        match self.states.labels() {
            Some(l) => l[x].clone(),
            None => (x + 1).to_string(),
        }
    }

    pub fn action_name(&self, u: usize) -> String {
        match self.actions.labels() {
            Some(l) => l[u].clone(),
            None => format!("a{}", u + 1),
        }
    }
}
