//! Scenario files.
//!
//! ```toml
//! J = 1
//! T = 1.0
//! x = 0.0
//!
//! [utility]
//! terms = [{ weight = 1.0, rate = 1.0 }]
//!
//! [claim]
//! kind = "separable"
//! weights = [1.0]
//! payoffs = [{ kind = "call", strike = 0.0 }]
//!
//! [traded]
//! kind = "bachelier"
//!
//! [numerics]
//! seed = 7
//! ```
//!
//! Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::model::{
    validate_scenario, ClaimSpec, NumericsConfig, PiecewiseLinear, Scenario, SeparableClaim, TradedAsset,
    UtilitySpec, ValidatedScenario,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffFile {
    Call { strike: f64 },
    Put { strike: f64 },
    Linear,
    Constant { value: f64 },
    Piecewise { breakpoints: Vec<f64>, slopes: Vec<f64>, value_at_zero: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClaimFile {
    Separable {
        payoffs: Vec<PayoffFile>,
        /// Defaults to all ones.
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(rename = "J")]
    pub dimension: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "x", default)]
    pub wealth: f64,
    pub utility: UtilitySpec,
    pub claim: ClaimFile,
    #[serde(default = "bachelier")]
    pub traded: TradedAsset,
    #[serde(default)]
    pub numerics: NumericsConfig,
}

fn bachelier() -> TradedAsset {
    TradedAsset::Bachelier
}

impl PayoffFile {
    fn build(&self, field: &str, problems: &mut Vec<String>) -> Option<PiecewiseLinear> {
        Some(match self {
            PayoffFile::Call { strike } => PiecewiseLinear::call(*strike),
            PayoffFile::Put { strike } => PiecewiseLinear::put(*strike),
            PayoffFile::Linear => PiecewiseLinear::linear(),
            PayoffFile::Constant { value } => PiecewiseLinear::constant(*value),
            PayoffFile::Piecewise {
                breakpoints,
                slopes,
                value_at_zero,
            } => match PiecewiseLinear::new(breakpoints.clone(), slopes.clone(), *value_at_zero) {
                Ok(p) => p,
                Err(EngineError::Validation(v)) => {
                    problems.extend(v.into_iter().map(|m| format!("{field}: {m}")));
                    return None;
                }
                Err(e) => {
                    problems.push(format!("{field}: {e}"));
                    return None;
                }
            },
        })
    }
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario> {
        let ClaimFile::Separable { payoffs, weights } = self.claim;
        let mut problems = Vec::new();
        let legs: Vec<PiecewiseLinear> = payoffs
            .iter()
            .enumerate()
            .filter_map(|(j, p)| p.build(&format!("claim.payoffs[{j}]"), &mut problems))
            .collect();
        if !problems.is_empty() {
            return Err(EngineError::Validation(problems));
        }
        let weights = weights.unwrap_or_else(|| vec![1.0; legs.len()]);
        Ok(Scenario {
            dimension: self.dimension,
            horizon: self.horizon,
            wealth: self.wealth,
            utility: self.utility,
            claim: ClaimSpec::Separable(SeparableClaim::new(legs, weights)),
            traded: self.traded,
            numerics: self.numerics,
        })
    }
}

pub fn parse_scenario(text: &str) -> Result<ValidatedScenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
    validate_scenario(file.into_scenario()?)
}

pub fn load_scenario(path: &Path) -> Result<ValidatedScenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EngineError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text)
}
