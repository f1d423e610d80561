//! Report containers for recipe and sweep runs, the JSON schemas they must
//! satisfy, and a small structural validator.
//!
//! The schema files live under `schemas/` in the crate root so external
//! tooling can check report files without running any of this code.
//! `validate` interprets exactly the keyword subset those files use: `type`,
//! `enum`, `required`, `properties`, `additionalProperties`, `items`, and
//! `minItems`.

use crate::datamix::MixtureSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One stage-1 milestone carried through stage 2 and scored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotMetrics {
    /// Supervised stage-1 tokens consumed before the snapshot was taken.
    pub tokens_seen: u64,
    /// Stage-2 validation loss of the selected checkpoint.
    pub val_loss: f64,
    /// Direction key ("aa-ab") to corpus BLEU.
    pub bleu_per_direction: IndexMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub model: ModelConfig,
    pub stage1_digest: String,
    pub stage2_digest: String,
    /// Absent when stage 1 was skipped entirely (zero token budget).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureSpec>,
    pub snapshots: Vec<SnapshotMetrics>,
    pub warnings: Vec<String>,
}

/// One sweep arm: a parallel-pair count fine-tuned from a base and scored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    pub pairs: usize,
    /// "stage1" for the shared fine-tuned base, "scratch" for random init.
    pub base: String,
    pub val_loss: f64,
    pub bleu_per_direction: IndexMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    pub model: ModelConfig,
    pub stage2_digest: String,
    /// Stage-1-based entries in ascending size order, then any from-scratch
    /// entries in the same order.
    pub entries: Vec<SweepEntry>,
}

pub fn metrics_report_schema() -> Value {
    serde_json::from_str(include_str!("../schemas/metrics_report.schema.json"))
        .expect("bundled metrics schema parses")
}

pub fn sweep_report_schema() -> Value {
    serde_json::from_str(include_str!("../schemas/sweep_report.schema.json"))
        .expect("bundled sweep schema parses")
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn check(value: &Value, schema: &Value, path: &str, errs: &mut Vec<String>) {
    if let Some(allowed) = schema.get("enum").and_then(Value::as_array) {
        if !allowed.contains(value) {
            errs.push(format!("{path}: {value} is not one of the allowed values"));
        }
        return;
    }
    if let Some(t) = schema.get("type").and_then(Value::as_str) {
        let ok = match t {
            "integer" => value.as_i64().is_some() || value.as_u64().is_some(),
            "number" => value.is_number(),
            "string" => value.is_string(),
            "boolean" => value.is_boolean(),
            "array" => value.is_array(),
            "object" => value.is_object(),
            other => {
                errs.push(format!("{path}: schema names unsupported type {other}"));
                return;
            }
        };
        if !ok {
            errs.push(format!("{path}: expected {t}, got {}", kind(value)));
            return;
        }
    }
    if let Some(obj) = value.as_object() {
        if let Some(required) = schema.get("required").and_then(Value::as_array) {
            for name in required.iter().filter_map(Value::as_str) {
                if !obj.contains_key(name) {
                    errs.push(format!("{path}: missing required key {name}"));
                }
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        let additional = schema.get("additionalProperties");
        for (key, val) in obj {
            let child = format!("{path}.{key}");
            match props.and_then(|p| p.get(key)) {
                Some(sub) => check(val, sub, &child, errs),
                None => match additional {
                    Some(Value::Bool(false)) => {
                        errs.push(format!("{child}: key not allowed by the schema"));
                    }
                    Some(sub) if sub.is_object() => check(val, sub, &child, errs),
                    _ => {}
                },
            }
        }
    }
    if let Some(items) = value.as_array() {
        if let Some(min) = schema.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < min {
                errs.push(format!(
                    "{path}: {} items, expected at least {min}",
                    items.len()
                ));
            }
        }
        if let Some(sub) = schema.get("items") {
            for (i, item) in items.iter().enumerate() {
                check(item, sub, &format!("{path}[{i}]"), errs);
            }
        }
    }
}

/// Structural conformance of `value` against the keyword subset used by the
/// bundled schemas. Reports every violation, paths rooted at `$`.
pub fn validate(value: &Value, schema: &Value) -> Result<()> {
    let mut errs = Vec::new();
    check(value, schema, "$", &mut errs);
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(errs.join("; ")))
    }
}
