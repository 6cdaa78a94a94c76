use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version of the structured report layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Metrics that need resources outside the synthetic world.
pub const ABSENT_METRICS: &[(&str, &str)] = &[("fid", "requires a pretrained image network")];

/// Named scalar metrics, kept in key order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub metrics: BTreeMap<String, f64>,
    /// Metric name to the reason it was not computed.
    pub absent: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new() -> Self {
        MetricReport {
            schema_version: REPORT_SCHEMA_VERSION,
            metrics: BTreeMap::new(),
            absent: ABSENT_METRICS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn insert(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::UndefinedMetric(format!("{name} = {value}")));
        }
        if name.is_empty() || name.contains(['=', '\n', ' ']) {
            return Err(Error::config(format!("invalid metric name {name:?}")));
        }
        self.metrics.insert(name.to_string(), value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// `name=value` lines with round-trip float formatting; absent metrics
    /// are listed as comments.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metrics {
            out.push_str(&format!("{k}={v:?}\n"));
        }
        for (k, why) in &self.absent {
            out.push_str(&format!("# {k}: not computed ({why})\n"));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numeric(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: MetricReport = serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::config(format!("unsupported report schema version {}", r.schema_version)));
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_and_json_round_trip() {
        let mut r = MetricReport::new();
        r.insert("path_deviation", 0.1 + 0.2).unwrap();
        r.insert("cosine", 1.0).unwrap();
        let text = r.to_text();
        assert!(text.starts_with("cosine=1.0\npath_deviation=0.30000000000000004\n"));
        assert!(text.contains("# fid: not computed"));
        assert_eq!(MetricReport::from_json(&r.to_json().unwrap()).unwrap(), r);
        assert!(r.insert("bad", f64::NAN).is_err());
        assert!(r.insert("a=b", 1.0).is_err());
    }
}
