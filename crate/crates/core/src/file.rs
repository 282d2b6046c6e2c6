//! Model file format: UTF-8 JSON, bit-exact round trips.
//!
//! ```json
//! {
//!   "variables": ["C", "I"],
//!   "mechanisms": [
//!     {"type": "linear", "coefficients": [0.0, 0.5], "offset": 1.0, "noise_coefficient": 1.0},
//!     {"type": "expr", "formula": "0.4*C + 0.5 + e_I"}
//!   ],
//!   "noise": {"means": [0.0, 0.0], "variances": [0.04, 0.04]}
//! }
//! ```
//!
//! Exogenous symbols are `e_` + variable name, mechanism `i` belongs to
//! `variables[i]`, and linear and expression mechanisms may be mixed freely.
//! Numbers are written as shortest decimal text that parses back to the same
//! double, so `load(save(m))` reproduces every numeric field exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse_expr, to_formula, SymbolTable};
use crate::model::{validate_model, LinearRow, Mechanism, NoiseSpec, ScmModel};

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    variables: Vec<String>,
    mechanisms: Vec<MechanismFile>,
    noise: NoiseFile,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum MechanismFile {
    Linear {
        coefficients: Vec<f64>,
        offset: f64,
        noise_coefficient: f64,
    },
    Expr {
        formula: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct NoiseFile {
    means: Vec<f64>,
    variances: Vec<f64>,
}

fn from_json_error(err: serde_json::Error) -> Error {
    if err.classify() == serde_json::error::Category::Data {
        Error::Schema(err.to_string())
    } else {
        Error::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

/// Parses model JSON text into a validated model.
pub fn parse_model(text: &str) -> Result<ScmModel> {
    let file: ModelFile = serde_json::from_str(text).map_err(from_json_error)?;
    let symbols = SymbolTable::new(&file.variables);
    let mut mechanisms = Vec::with_capacity(file.mechanisms.len());
    for (i, mech) in file.mechanisms.into_iter().enumerate() {
        mechanisms.push(match mech {
            MechanismFile::Linear {
                coefficients,
                offset,
                noise_coefficient,
            } => Mechanism::Linear(LinearRow {
                coefficients,
                offset,
                noise_coefficient,
            }),
            MechanismFile::Expr { formula } => {
                let tree = parse_expr(&formula, &symbols)
                    .map_err(|e| Error::Schema(format!("mechanisms[{i}].formula: {e}")))?;
                Mechanism::Expr(tree)
            }
        });
    }
    let model = ScmModel::new(
        file.variables,
        mechanisms,
        NoiseSpec {
            means: file.noise.means,
            variances: file.noise.variances,
        },
    );
    let report = validate_model(&model);
    if !report.is_valid() {
        return Err(Error::InvalidModel(report.to_string()));
    }
    Ok(model)
}

/// Renders a model to its canonical JSON text.
pub fn model_to_json(model: &ScmModel) -> String {
    let symbols = SymbolTable::new(model.variables());
    let file = ModelFile {
        variables: model.variables().to_vec(),
        mechanisms: model
            .mechanisms()
            .iter()
            .map(|mech| match mech {
                Mechanism::Linear(row) => MechanismFile::Linear {
                    coefficients: row.coefficients.clone(),
                    offset: row.offset,
                    noise_coefficient: row.noise_coefficient,
                },
                Mechanism::Expr(tree) => MechanismFile::Expr {
                    formula: to_formula(tree, &symbols),
                },
            })
            .collect(),
        noise: NoiseFile {
            means: model.noise().means.clone(),
            variances: model.noise().variances.clone(),
        },
    };
    let mut text = serde_json::to_string_pretty(&file).expect("model serialization cannot fail");
    text.push('\n');
    text
}

/// Loads and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<ScmModel> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text)
}

/// Writes a model file; `load_model` of the result is structurally equal to
/// the input.
pub fn save_model(model: &ScmModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_json(model))?;
    Ok(())
}
