//! Structured verification records and their JSON / JUnit renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One verification outcome. `passed` holds exactly when `residual ≤ tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub check_name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub context: BTreeMap<String, Value>,
}

impl Report {
    pub fn new(check_name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Report {
            check_name: check_name.into(),
            residual,
            tolerance,
            passed: residual <= tolerance,
            context: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.context.insert(key.to_string(), value.into());
        self
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{} {}: residual {:.3e} (tolerance {:e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.check_name,
            self.residual,
            self.tolerance
        )
    }
}

fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// JUnit-style XML with one test case per report. Timing attributes are fixed
/// at zero so identical runs produce identical files.
pub fn junit_xml(suite: &str, reports: &[Report], properties: &BTreeMap<String, String>) -> String {
    let failures = reports.iter().filter(|r| !r.passed).count();
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<testsuite name=\"{}\" tests=\"{}\" failures=\"{}\" errors=\"0\" time=\"0\">",
        escape_xml(suite),
        reports.len(),
        failures
    );
    if !properties.is_empty() {
        out.push_str("  <properties>\n");
        for (k, v) in properties {
            let _ = writeln!(
                out,
                "    <property name=\"{}\" value=\"{}\"/>",
                escape_xml(k),
                escape_xml(v)
            );
        }
        out.push_str("  </properties>\n");
    }
    for r in reports {
        let _ = write!(
            out,
            "  <testcase classname=\"{}\" name=\"{}\" time=\"0\"",
            escape_xml(suite),
            escape_xml(&r.check_name)
        );
        if r.passed {
            out.push_str("/>\n");
        } else {
            out.push_str(">\n");
            let ctx = serde_json::to_string(&r.context).unwrap_or_default();
            let _ = writeln!(
                out,
                "    <failure message=\"residual {:e} exceeds tolerance {:e}\">{}</failure>",
                r.residual,
                r.tolerance,
                escape_xml(&ctx)
            );
            out.push_str("  </testcase>\n");
        }
    }
    out.push_str("</testsuite>\n");
    out
}
