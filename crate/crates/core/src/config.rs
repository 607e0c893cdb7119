//! JSON parameter format for constructions.
//!
//! ```json
//! {
//!   "h1": 1,
//!   "j_max": 6,
//!   "r_prime": "j+1",
//!   "spacers": "paper",
//!   "base_width": "1/1"
//! }
//! ```
//!
//! `r_prime` is either the literal rule string `"j+1"` or a list of
//! explicit multipliers for stages `1, 2, ...` (the cut count is always
//! `r_j = j * r'_j`). `spacers` is either the literal `"paper"` for the
//! preset or a list of per-stage spacer vectors, vector `j` of length
//! `r_j`. Every field is optional; omitted fields take the defaults shown
//! above.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::construction::{ConstructionParams, RRule, SpacerRule, DEFAULT_CARDINALITY_CAP};
use crate::error::{Error, Result};
use crate::rational::{format_rational, parse_rational};

/// `r_prime` field: rule string or explicit list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RPrimeSpec {
    Rule(String),
    List(Vec<u64>),
}

impl Default for RPrimeSpec {
    fn default() -> Self {
        RPrimeSpec::Rule("j+1".into())
    }
}

/// `spacers` field: rule string or explicit per-stage vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpacerSpec {
    Rule(String),
    Lists(Vec<Vec<u64>>),
}

impl Default for SpacerSpec {
    fn default() -> Self {
        SpacerSpec::Rule("paper".into())
    }
}

fn default_h1() -> u64 {
    1
}

fn default_j_max() -> usize {
    6
}

/// Declarative form of [`ConstructionParams`], the unit of the JSON
/// config format and of the parameter echo in every JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    #[serde(default = "default_h1")]
    pub h1: u64,
    #[serde(default = "default_j_max")]
    pub j_max: usize,
    #[serde(default)]
    pub r_prime: RPrimeSpec,
    #[serde(default)]
    pub spacers: SpacerSpec,
    /// Width of the stage-1 base as `"p/q"`; defaults to `"1/1"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_width: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality_cap: Option<usize>,
}

impl Default for ParamsSpec {
    fn default() -> Self {
        ParamsSpec {
            h1: default_h1(),
            j_max: default_j_max(),
            r_prime: RPrimeSpec::default(),
            spacers: SpacerSpec::default(),
            base_width: None,
            cardinality_cap: None,
        }
    }
}

impl ParamsSpec {
    /// Parse a JSON config document.
    pub fn from_json(s: &str) -> Result<ParamsSpec> {
        let spec: ParamsSpec = serde_json::from_str(s)
            .map_err(|e| Error::InvalidParams(format!("bad config JSON: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if let RPrimeSpec::Rule(rule) = &self.r_prime {
            if rule.trim() != "j+1" {
                return Err(Error::InvalidParams(format!(
                    "unknown r_prime rule {rule:?}; expected \"j+1\" or a list"
                )));
            }
        }
        if let SpacerSpec::Rule(rule) = &self.spacers {
            if rule.trim() != "paper" {
                return Err(Error::InvalidParams(format!(
                    "unknown spacers rule {rule:?}; expected \"paper\" or explicit vectors"
                )));
            }
        }
        Ok(())
    }

    /// Resolve into build-ready parameters.
    pub fn to_params(&self) -> Result<ConstructionParams> {
        self.validate()?;
        let r_rule = match &self.r_prime {
            RPrimeSpec::Rule(_) => RRule::Default,
            RPrimeSpec::List(list) => RRule::Explicit(list.clone()),
        };
        let spacer_rule = match &self.spacers {
            SpacerSpec::Rule(_) => SpacerRule::PaperPreset,
            SpacerSpec::Lists(lists) => SpacerRule::Explicit(
                lists
                    .iter()
                    .map(|v| v.iter().copied().map(BigUint::from).collect())
                    .collect(),
            ),
        };
        let base_width = match &self.base_width {
            Some(s) => parse_rational(s)?,
            None => ConstructionParams::default().base_width,
        };
        Ok(ConstructionParams {
            h1: self.h1,
            j_max: self.j_max,
            r_rule,
            spacer_rule,
            base_width,
            cardinality_cap: self.cardinality_cap.unwrap_or(DEFAULT_CARDINALITY_CAP),
        })
    }

    /// The spec echoed by reports: resolved parameters, normalized back to
    /// the wire format.
    pub fn normalized(params: &ConstructionParams) -> ParamsSpec {
        ParamsSpec {
            h1: params.h1,
            j_max: params.j_max,
            r_prime: match &params.r_rule {
                RRule::Default => RPrimeSpec::default(),
                RRule::Explicit(list) => RPrimeSpec::List(list.clone()),
            },
            spacers: match &params.spacer_rule {
                SpacerRule::PaperPreset => SpacerSpec::default(),
                SpacerRule::Explicit(lists) => SpacerSpec::Lists(
                    lists
                        .iter()
                        .map(|v| {
                            v.iter()
                                .map(|s| u64::try_from(s).unwrap_or(u64::MAX))
                                .collect()
                        })
                        .collect(),
                ),
            },
            base_width: Some(format_rational(&params.base_width)),
            cardinality_cap: Some(params.cardinality_cap),
        }
    }
}
