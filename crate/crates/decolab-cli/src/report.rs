//! Key-value run reports.
//!
//! A report is plain `key = value` text: the fully resolved scenario echo,
//! engine identification, wall time, and one block per consistency check
//! (status, numeric residual, threshold). Reports go to stdout; the CSV data
//! files are the byte-stable artifacts.

use std::fmt::Write as _;

/// One executed consistency check. `passed` is authoritative; `residual`
/// and `threshold` describe the comparison (most checks pass when
/// `residual <= threshold`, a few — negative controls — when the residual
/// *exceeds* the threshold, as stated in `direction`).
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    /// Acceptance-criterion group (1-8) for built-in checks; 0 for
    /// scenario-level checks.
    pub criterion: u8,
    pub passed: bool,
    pub residual: f64,
    pub threshold: f64,
    pub direction: Direction,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Pass iff residual <= threshold.
    AtMost,
    /// Pass iff residual > threshold (negative controls).
    Above,
}

impl CheckOutcome {
    pub fn at_most(name: &str, criterion: u8, residual: f64, threshold: f64) -> Self {
        CheckOutcome {
            name: name.to_string(),
            criterion,
            passed: residual <= threshold,
            residual,
            threshold,
            direction: Direction::AtMost,
            detail: String::new(),
        }
    }

    pub fn above(name: &str, criterion: u8, residual: f64, threshold: f64) -> Self {
        CheckOutcome {
            name: name.to_string(),
            criterion,
            passed: residual > threshold,
            residual,
            threshold,
            direction: Direction::Above,
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

/// Formats a float for reports and CSV cells: shortest exact decimal in
/// scientific notation, with `inf` as the literal infinity sentinel.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{x:e}")
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    /// `key = value` pairs in emission order.
    pub lines: Vec<(String, String)>,
    pub checks: Vec<CheckOutcome>,
}

impl RunReport {
    pub fn push(&mut self, key: &str, value: impl Into<String>) {
        self.lines.push((key.to_string(), value.into()));
    }

    pub fn push_num(&mut self, key: &str, value: f64) {
        self.push(key, fmt_num(value));
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(out, "{k} = {v}");
        }
        for c in &self.checks {
            let status = if c.passed { "pass" } else { "FAIL" };
            let _ = writeln!(out, "check.{}.status = {status}", c.name);
            let _ = writeln!(out, "check.{}.residual = {}", c.name, fmt_num(c.residual));
            let cmp = match c.direction {
                Direction::AtMost => "max",
                Direction::Above => "min_exclusive",
            };
            let _ = writeln!(
                out,
                "check.{}.threshold_{cmp} = {}",
                c.name,
                fmt_num(c.threshold)
            );
            if !c.detail.is_empty() {
                let _ = writeln!(out, "check.{}.detail = {}", c.name, c.detail);
            }
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        let _ = writeln!(out, "checks.passed = {passed}");
        let _ = writeln!(out, "checks.failed = {}", self.checks.len() - passed);
        let _ = writeln!(
            out,
            "status = {}",
            if self.all_passed() { "pass" } else { "FAIL" }
        );
        out
    }
}

/// CSV assembly with a mandatory `quantity [unit]` header per column.
pub struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(columns: &[(&str, &str)]) -> Self {
        Csv {
            header: columns
                .iter()
                .map(|(name, unit)| format!("{name} [{unit}]"))
                .collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, cells: Vec<String>) {
        assert_eq!(
            cells.len(),
            self.header.len(),
            "row width must match header"
        );
        self.rows.push(cells);
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinity_uses_the_inf_sentinel() {
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(1.5e-7), "1.5e-7");
    }

    #[test]
    fn report_status_reflects_checks() {
        let mut r = RunReport::default();
        r.push("scenario.name", "x");
        r.checks.push(CheckOutcome::at_most("a", 0, 1.0e-9, 1.0e-6));
        assert!(r.all_passed());
        r.checks.push(CheckOutcome::at_most("b", 0, 2.0, 1.0));
        assert!(!r.all_passed());
        let text = r.render();
        assert!(text.contains("check.a.status = pass"));
        assert!(text.contains("check.b.status = FAIL"));
        assert!(text.contains("status = FAIL"));
        assert!(text.contains("checks.failed = 1"));
    }

    #[test]
    fn negative_control_direction_passes_above_threshold() {
        let c = CheckOutcome::above("drift", 7, 3.0e-3, 1.0e-4);
        assert!(c.passed);
        let c = CheckOutcome::above("drift", 7, 1.0e-5, 1.0e-4);
        assert!(!c.passed);
    }

    #[test]
    fn csv_headers_carry_units() {
        let mut c = Csv::new(&[("t", "s"), ("e_grav", "J")]);
        c.push_row(vec!["0e0".into(), "1e-30".into()]);
        let text = c.render();
        assert!(text.starts_with("t [s],e_grav [J]\n"));
        assert!(text.ends_with("0e0,1e-30\n"));
    }
}
