//! The JSON run report and its CSV rendering.
//!
//! Schema (version 1), one document per run:
//!
//! ```text
//! {
//!   "schema_version": 1,
//!   "command": "verify attn",
//!   "seed": 7,
//!   "config": { "<key>": "<resolved value>", ... },
//!   "cases": [
//!     { "name": "...", "status": "pass" | "fail" | "error",
//!       "metrics": { "<key>": number | null }, "tolerances": { "<key>": number },
//!       "message": string | null, "elapsed_s": number }
//!   ],
//!   "extra": object | null,
//!   "error": string | null,
//!   "elapsed_s": number
//! }
//! ```
//!
//! `elapsed_s` fields and bench throughput metrics are wall-clock; everything
//! else is a function of the command line and seed.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub status: Status,
    pub metrics: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub message: Option<String>,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u64,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub cases: Vec<CaseResult>,
    pub extra: Option<Value>,
    pub error: Option<String>,
    pub elapsed_s: f64,
}

impl RunReport {
    pub fn new(command: impl Into<String>, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            seed,
            config: BTreeMap::new(),
            cases: Vec::new(),
            extra: None,
            error: None,
            elapsed_s: 0.0,
        }
    }

    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(|c| c.status == Status::Pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    /// One row per (case, metric); cases without metrics get a single row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("case,status,metric,value,tolerance,elapsed_s\n");
        for c in &self.cases {
            let status = serde_json::to_value(c.status).unwrap();
            let status = status.as_str().unwrap();
            if c.metrics.is_empty() {
                out.push_str(&format!(
                    "{},{status},,,,{}\n",
                    csv_field(&c.name),
                    c.elapsed_s
                ));
            }
            for (k, v) in &c.metrics {
                let tol = c.tolerances.get(k).map_or(String::new(), f64::to_string);
                out.push_str(&format!(
                    "{},{status},{k},{v},{tol},{}\n",
                    csv_field(&c.name),
                    c.elapsed_s
                ));
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Checks a parsed report against the schema above.
pub fn validate_report(v: &Value) -> Result<(), String> {
    let obj = v.as_object().ok_or("report is not an object")?;
    let field = |k: &str| obj.get(k).ok_or(format!("missing field `{k}`"));
    if field("schema_version")?.as_u64() != Some(SCHEMA_VERSION) {
        return Err("unsupported schema_version".into());
    }
    field("command")?
        .as_str()
        .ok_or("`command` is not a string")?;
    field("seed")?
        .as_u64()
        .ok_or("`seed` is not an unsigned integer")?;
    field("elapsed_s")?
        .as_f64()
        .ok_or("`elapsed_s` is not a number")?;
    for (k, v) in field("config")?
        .as_object()
        .ok_or("`config` is not an object")?
    {
        v.as_str()
            .ok_or(format!("config value `{k}` is not a string"))?;
    }
    let extra = field("extra")?;
    if !(extra.is_null() || extra.is_object()) {
        return Err("`extra` must be an object or null".into());
    }
    let error = field("error")?;
    if !(error.is_null() || error.is_string()) {
        return Err("`error` must be a string or null".into());
    }
    for (i, c) in field("cases")?
        .as_array()
        .ok_or("`cases` is not an array")?
        .iter()
        .enumerate()
    {
        let c = c.as_object().ok_or(format!("case {i} is not an object"))?;
        let get = |k: &str| c.get(k).ok_or(format!("case {i} missing `{k}`"));
        get("name")?
            .as_str()
            .ok_or(format!("case {i} name is not a string"))?;
        match get("status")?.as_str() {
            Some("pass" | "fail" | "error") => {}
            _ => return Err(format!("case {i} has an invalid status")),
        }
        for (k, v) in get("metrics")?
            .as_object()
            .ok_or(format!("case {i} metrics is not an object"))?
        {
            if !(v.is_number() || v.is_null()) {
                return Err(format!("case {i} metric `{k}` is not a number"));
            }
        }
        for (k, v) in get("tolerances")?
            .as_object()
            .ok_or(format!("case {i} tolerances is not an object"))?
        {
            v.as_f64()
                .ok_or(format!("case {i} tolerance `{k}` is not a number"))?;
        }
        let msg = get("message")?;
        if !(msg.is_null() || msg.is_string()) {
            return Err(format!("case {i} message must be a string or null"));
        }
        get("elapsed_s")?
            .as_f64()
            .ok_or(format!("case {i} elapsed_s is not a number"))?;
    }
    Ok(())
}
