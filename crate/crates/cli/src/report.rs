//! Text reports: the theory suite and the semi-supervised test error.

use std::fmt;

use hali_oracle::{SuiteLine, SuiteReport};

use crate::error::{CliError, Result};

pub const THEORY_HEADER: &str = "# name\tstatistic\tbound\tmargin\tviolations/trials\tresult";

pub fn theory_report_text(report: &SuiteReport) -> String {
    let mut s = format!("{THEORY_HEADER}\n");
    for line in &report.lines {
        s.push_str(&format!("{line}\n"));
    }
    s
}

/// Read back a report written by [`theory_report_text`].
pub fn parse_theory_report(text: &str) -> Result<Vec<SuiteLine>> {
    let bad = |m: String| CliError::Format(format!("theory report: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some(THEORY_HEADER) {
        return Err(bad("missing header".into()));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad(format!("`{line}` has {} fields", f.len())));
            }
            let field = |i: usize, key: &str| -> Result<&str> {
                f[i].strip_prefix(key).and_then(|r| r.strip_prefix('=')).ok_or_else(|| bad(format!("expected {key} in `{line}`")))
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s}")));
            let (v, t) = field(4, "violations")?.split_once('/').ok_or_else(|| bad("bad violations field".into()))?;
            let count = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad count {s}")));
            let out = SuiteLine {
                name: f[0].to_string(),
                statistic: num(field(1, "statistic")?)?,
                bound: num(field(2, "bound")?)?,
                margin: num(field(3, "margin")?)?,
                violations: count(v)?,
                trials: count(t)?,
            };
            if (f[5] == "pass") != out.passed() {
                return Err(bad(format!("result `{}` disagrees with the violation count", f[5])));
            }
            Ok(out)
        })
        .collect()
}

/// Test error of the classifier head, laid out like a results-table row.
#[derive(Clone, Debug, PartialEq)]
pub struct SemisupReport {
    pub labels: usize,
    pub errors: usize,
    pub total: usize,
}

pub const SEMISUP_HEADER: &str = "model\tlabels\ttest_errors\ttest_total\terror_percent";

impl SemisupReport {
    pub fn error_rate(&self) -> f64 {
        self.errors as f64 / self.total as f64
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = || CliError::Format("semi-supervised report: expected a header and one row".into());
        let mut lines = text.lines();
        if lines.next() != Some(SEMISUP_HEADER) {
            return Err(bad());
        }
        let row: Vec<&str> = lines.next().ok_or_else(bad)?.split('\t').collect();
        if row.len() != 5 {
            return Err(bad());
        }
        let n = |s: &str| s.parse::<usize>().map_err(|_| bad());
        Ok(SemisupReport { labels: n(row[1])?, errors: n(row[2])?, total: n(row[3])? })
    }
}

impl fmt::Display for SemisupReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{SEMISUP_HEADER}")?;
        writeln!(f, "HALI\t{}\t{}\t{}\t{:.2}", self.labels, self.errors, self.total, 100.0 * self.error_rate())
    }
}
