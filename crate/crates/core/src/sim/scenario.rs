// SPDX-License-Identifier: Apache-2.0

//! Scenario files (TOML) and the built-in scenario library.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::error::ScenarioError;
use crate::oracle::{BackendSpec, DeliveryConvention};
use crate::sieve::policy_from_name;
use crate::types::{format_rational, parse_rational, NodeId, Rational, Step};

use super::adversary::StrategySpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    #[default]
    Correct,
    Byzantine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Application {
    #[default]
    Mmr,
    /// Fixed payloads; only the broadcast layer is exercised.
    Opaque,
}

pub(crate) mod rational_serde {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(u64),
        Float(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let text = match Repr::deserialize(d)? {
            Repr::Int(i) => return Ok(Rational::from_integer(i)),
            Repr::Float(f) => f.to_string(),
            Repr::Text(t) => t,
        };
        parse_rational(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: u32,
    #[serde(default)]
    pub role: Role,
    #[serde(with = "rational_serde")]
    pub power: Rational,
    /// Steps during which the node is asleep.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inactive: Vec<Step>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategySpec>,
}

impl NodeSpec {
    pub fn node_id(&self) -> NodeId {
        NodeId(self.id)
    }

    pub fn is_active(&self, s: Step) -> bool {
        !self.inactive.contains(&s)
    }

    pub fn is_correct(&self) -> bool {
        self.role == Role::Correct
    }
}

fn default_version() -> u32 {
    SCHEMA_VERSION
}

fn default_mode() -> String {
    "sieve".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_version")]
    pub version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub ticks_per_step: u64,
    #[serde(with = "rational_serde")]
    pub rho: Rational,
    pub horizon: Step,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub application: Application,
    /// Filter policy of the correct nodes.
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub delivery: DeliveryConvention,
    #[serde(default)]
    pub backend: BackendSpec,
    /// Deliberately breaks correct supremacy; downstream verdicts are not asserted.
    #[serde(default)]
    pub violation: bool,
    /// Steps a rejoining correct node spends catching up before it sends again.
    #[serde(default)]
    pub bootstrap_delay: Step,
    pub nodes: Vec<NodeSpec>,
}

const BUILTINS: &[(&str, &str)] = &[
    ("fig2", include_str!("../../scenarios/fig2.toml")),
    ("fig3", include_str!("../../scenarios/fig3.toml")),
    ("fig4", include_str!("../../scenarios/fig4.toml")),
    ("fig5", include_str!("../../scenarios/fig5.toml")),
    (
        "all-correct",
        include_str!("../../scenarios/all-correct.toml"),
    ),
    (
        "all-correct-3",
        include_str!("../../scenarios/all-correct-3.toml"),
    ),
    ("sleepy", include_str!("../../scenarios/sleepy.toml")),
    (
        "supremacy-violation",
        include_str!("../../scenarios/supremacy-violation.toml"),
    ),
    (
        "adversarial-leader",
        include_str!("../../scenarios/adversarial-leader.toml"),
    ),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _)| *n).collect()
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let sc: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenarios always serialise")
    }

    pub fn builtin(name: &str) -> Result<Scenario, ScenarioError> {
        let (_, text) =
            BUILTINS
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| ScenarioError::Unknown {
                    kind: "scenario",
                    name: name.to_string(),
                    available: builtin_names().join(", "),
                })?;
        Scenario::from_toml(text)
    }

    /// Resolves `spec` as a file path, then as `<dir>/<spec>.toml`, then as a
    /// built-in name. A leading `scenarios/` is ignored for the latter two.
    pub fn load(spec: &str, dir: Option<&Path>) -> Result<Scenario, ScenarioError> {
        let path = Path::new(spec);
        if path.is_file() {
            let text =
                std::fs::read_to_string(path).map_err(|e| ScenarioError::Parse(e.to_string()))?;
            return Scenario::from_toml(&text);
        }
        let name = spec.strip_prefix("scenarios/").unwrap_or(spec);
        let name = name.strip_suffix(".toml").unwrap_or(name);
        if let Some(dir) = dir {
            let candidate = dir.join(format!("{name}.toml"));
            if candidate.is_file() {
                return Scenario::load(&candidate.to_string_lossy(), None);
            }
        }
        Scenario::builtin(name)
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id.0)
    }

    pub fn correct_nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.iter().filter(|n| n.is_correct())
    }

    pub fn byzantine_nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.iter().filter(|n| !n.is_correct())
    }

    /// Total power of correct nodes awake at `s`.
    pub fn correct_power_at(&self, s: Step) -> Rational {
        self.correct_nodes()
            .filter(|n| n.is_active(s))
            .fold(Rational::from_integer(0), |acc, n| acc + n.power)
    }

    /// Whether `node` works during `s`: awake and not in the silent stretch
    /// that follows a rejoin.
    pub fn is_computing(&self, node: &NodeSpec, s: Step) -> bool {
        if !node.is_active(s) {
            return false;
        }
        let mut t = s;
        while t > 0 && node.is_active(t - 1) {
            t -= 1;
        }
        t == 0 || s >= t + self.bootstrap_delay
    }

    /// Total power of correct nodes computing during `s`.
    pub fn computing_power_at(&self, s: Step) -> Rational {
        self.correct_nodes()
            .filter(|n| self.is_computing(n, s))
            .fold(Rational::from_integer(0), |acc, n| acc + n.power)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if self.version != SCHEMA_VERSION {
            return invalid(format!("unsupported schema version {}", self.version));
        }
        if self.ticks_per_step < 2 {
            return invalid("ticks_per_step must be at least 2".into());
        }
        if self.rho <= Rational::from_integer(0) || self.rho > Rational::new(1, 2) {
            return invalid(format!(
                "rho must lie in (0, 1/2], got {}",
                format_rational(&self.rho)
            ));
        }
        if self.horizon == 0 {
            return invalid("horizon must be positive".into());
        }
        policy_from_name(&self.mode)?;
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id) {
                return invalid(format!("duplicate node id {}", n.id));
            }
            if n.power <= Rational::from_integer(0) {
                return invalid(format!("node {} needs positive power", n.id));
            }
            match n.role {
                Role::Correct => {
                    if !n.power.is_integer() {
                        return invalid(format!(
                            "correct node {} must have integral power, got {}",
                            n.id,
                            format_rational(&n.power)
                        ));
                    }
                    if n.strategy.is_some() {
                        return invalid(format!("correct node {} cannot carry a strategy", n.id));
                    }
                }
                Role::Byzantine => {
                    if n.strategy.is_none() {
                        return invalid(format!("byzantine node {} needs a strategy", n.id));
                    }
                }
            }
        }
        for s in 0..self.horizon {
            if self.correct_power_at(s) == Rational::from_integer(0) {
                return invalid(format!("no correct node is active in step {s}"));
            }
        }
        if let BackendSpec::Merkle { k, .. } = self.backend {
            if k == 0 {
                return invalid("merkle backend needs k >= 1".into());
            }
        }
        Ok(())
    }
}
