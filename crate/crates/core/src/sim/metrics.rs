use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

/// Named metrics plus any invariant violations seen during a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub metrics: BTreeMap<String, Value>,
    pub violations: Vec<String>,
}

#[derive(Serialize)]
struct Line<'a> {
    metric: &'a str,
    value: &'a Value,
}

impl MetricsReport {
    pub fn set(&mut self, name: impl Into<String>, value: impl Into<Value>) {
        self.metrics.insert(name.into(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.metrics.get(name)
    }

    pub fn u64(&self, name: &str) -> Option<u64> {
        self.get(name).and_then(Value::as_u64)
    }

    pub fn f64(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(Value::as_f64)
    }

    pub fn violation(&mut self, msg: impl Into<String>) {
        self.violations.push(msg.into());
    }

    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// One JSON object per metric, sorted by name, then the violations.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for (metric, value) in &self.metrics {
            let line = serde_json::to_string(&Line { metric, value }).expect("metrics serialize");
            let _ = writeln!(out, "{line}");
        }
        let v = Value::from(self.violations.clone());
        let line = serde_json::to_string(&Line {
            metric: "violations",
            value: &v,
        })
        .expect("metrics serialize");
        let _ = writeln!(out, "{line}");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ndjson_is_sorted_and_complete() {
        let mut r = MetricsReport::default();
        r.set("b", 2u64);
        r.set("a", 1.5);
        let text = r.to_ndjson();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"{"metric":"a","value":1.5}"#);
        assert_eq!(lines[1], r#"{"metric":"b","value":2}"#);
        assert_eq!(lines[2], r#"{"metric":"violations","value":[]}"#);
        assert!(r.is_ok());
    }
}
