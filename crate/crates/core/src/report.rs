//! Serializable report types emitted by the command-line surface.

use crate::model::ValidationReport;
use crate::operator::Verdict;
use crate::stationary::{Classification, RestingTime};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Classification verdicts with the evidence behind them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub discrete_verdict: Verdict,
    pub continuous_verdict: Verdict,
    /// Grid lower bound used as a proxy for `liminf alpha`.
    pub alpha_liminf_bound: f64,
    /// Mean resting time when finite.
    #[serde(rename = "T_R")]
    pub t_r: Option<f64>,
    /// Normalizing constant `1 / (T_R + tau)` when available.
    pub c: Option<f64>,
    pub diagnostics: serde_json::Value,
}

impl ClassificationReport {
    pub fn from_classification(cls: &Classification, validation: Option<&ValidationReport>) -> Self {
        let mut diag = serde_json::Map::new();
        diag.insert(
            "alpha_tail_min".into(),
            serde_json::json!(cls.discrete.alpha_tail_min),
        );
        diag.insert(
            "alpha_tail_max".into(),
            serde_json::json!(cls.discrete.alpha_tail_max),
        );
        diag.insert("alpha_inf".into(), serde_json::json!(cls.discrete.alpha_inf));
        diag.insert(
            "completely_mixing".into(),
            serde_json::json!(cls.discrete.completely_mixing),
        );
        diag.insert("margin".into(), serde_json::json!(cls.discrete.margin));
        diag.insert(
            "tail_start".into(),
            serde_json::json!(cls.discrete.tail_start),
        );
        diag.insert(
            "used_rule".into(),
            serde_json::json!(cls.continuous.used_rule),
        );
        if let Some(caveat) = &cls.continuous.caveat {
            diag.insert("caveat".into(), serde_json::json!(caveat));
        }
        if let Some(rt) = &cls.continuous.resting_time {
            match rt {
                RestingTime::Finite { value, ratio } => {
                    diag.insert("t_r_value".into(), serde_json::json!(value));
                    diag.insert("t_r_doubling_ratio".into(), serde_json::json!(ratio));
                }
                RestingTime::Divergent { base, doubled, ratio } => {
                    diag.insert("t_r_divergent".into(), serde_json::json!(true));
                    diag.insert("t_r_truncated".into(), serde_json::json!(base));
                    diag.insert("t_r_doubled".into(), serde_json::json!(doubled));
                    diag.insert("t_r_doubling_ratio".into(), serde_json::json!(ratio));
                }
            }
        }
        if let Some(v) = validation {
            if let Some(ea2) = v.check("ea2_asynchronous_growth") {
                diag.insert("ea2_asynchronous_growth".into(), serde_json::json!(ea2.passed));
            }
        }
        ClassificationReport {
            discrete_verdict: cls.discrete.verdict,
            continuous_verdict: cls.continuous.verdict,
            alpha_liminf_bound: cls.discrete.alpha_tail_min,
            t_r: cls.continuous.resting_time.as_ref().and_then(|r| r.value()),
            c: cls.continuous.c,
            diagnostics: serde_json::Value::Object(diag),
        }
    }
}

/// Everything needed to reproduce one command run byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub model_path: Option<String>,
    pub master_seed: u64,
    /// All resolved numeric parameters, sorted by name.
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            model_path: None,
            master_seed: 0,
            parameters: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.parameters
            .insert(key.to_string(), serde_json::to_value(value).unwrap());
        self
    }
}
