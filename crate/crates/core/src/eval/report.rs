//! Before/after AUROC reports in the `before → after (+delta)` cell style.
//!
//! AUROC values are stored as fractions in `[0, 1]` and displayed as
//! percentages with one decimal, rounded half to even. Class averages are
//! unweighted means over the class's groups; the global average is the
//! unweighted mean over classes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    pub label: u8,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class: String,
    pub group: String,
    pub auroc_before: f64,
    pub auroc_after: f64,
    pub delta: f64,
    pub scores: Vec<ImageScore>,
}

impl EvalReport {
    pub fn new(
        class: impl Into<String>,
        group: impl Into<String>,
        auroc_before: f64,
        auroc_after: f64,
        scores: Vec<ImageScore>,
    ) -> Self {
        Self {
            class: class.into(),
            group: group.into(),
            auroc_before,
            auroc_after,
            delta: auroc_after - auroc_before,
            scores,
        }
    }

    pub fn cell(&self) -> String {
        format_cell(self.auroc_before, self.auroc_after)
    }
}

/// Rounds to one decimal, ties to even. Values within 1e-9 of a tie (as
/// happens for decimal inputs like 56.65) count as ties.
pub fn round_one_decimal(x: f64) -> f64 {
    let s = x * 10.0;
    let f = s.floor();
    let frac = s - f;
    let r = if (frac - 0.5).abs() < 1e-9 {
        if f % 2.0 == 0.0 {
            f
        } else {
            f + 1.0
        }
    } else {
        s.round()
    };
    r / 10.0
}

fn pct(x: f64) -> f64 {
    round_one_decimal(x * 100.0)
}

/// `"73.6 → 83.5 (+9.9)"` for fractional AUROCs `0.736` and `0.835`.
pub fn format_cell(before: f64, after: f64) -> String {
    let d = pct(after - before);
    let sign = if d >= 0.0 { "+" } else { "-" };
    format!("{:.1} → {:.1} ({sign}{:.1})", pct(before), pct(after), d.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: String,
    pub groups: usize,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

impl ClassSummary {
    pub fn cell(&self) -> String {
        format_cell(self.before, self.after)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Classes in name order.
    pub classes: Vec<ClassSummary>,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

impl Summary {
    pub fn cell(&self) -> String {
        format_cell(self.before, self.after)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// Per-class and global averages of `reports`.
pub fn aggregate_report(reports: &[EvalReport]) -> Result<Summary, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyReports);
    }
    let mut by_class: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        by_class.entry(&r.class).or_default().push(r);
    }
    let classes: Vec<ClassSummary> = by_class
        .into_iter()
        .map(|(class, rs)| {
            let before = mean(rs.iter().map(|r| r.auroc_before));
            let after = mean(rs.iter().map(|r| r.auroc_after));
            ClassSummary {
                class: class.to_owned(),
                groups: rs.len(),
                before,
                after,
                delta: after - before,
            }
        })
        .collect();
    let before = mean(classes.iter().map(|c| c.before));
    let after = mean(classes.iter().map(|c| c.after));
    Ok(Summary {
        classes,
        before,
        after,
        delta: after - before,
    })
}

/// Line-oriented text rendering: one line per group, one per class average
/// and a final global line. Fields are tab-separated.
pub fn render_text(reports: &[EvalReport], summary: &Summary) -> String {
    let mut out = String::new();
    for c in &summary.classes {
        out.push_str(&format!("{}\taverage\t{}\n", c.class, c.cell()));
        for r in reports.iter().filter(|r| r.class == c.class) {
            out.push_str(&format!("{}\t{}\t{}\n", r.class, r.group, r.cell()));
        }
    }
    out.push_str(&format!("all\taverage\t{}\n", summary.cell()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(class: &str, group: &str, b: f64, a: f64) -> EvalReport {
        EvalReport::new(class, group, b, a, vec![])
    }

    #[test]
    fn cell_format() {
        assert_eq!(format_cell(0.736, 0.835), "73.6 → 83.5 (+9.9)");
        assert_eq!(format_cell(0.898, 0.890), "89.8 → 89.0 (-0.8)");
        assert_eq!(format_cell(0.5, 0.5), "50.0 → 50.0 (+0.0)");
    }

    #[test]
    fn half_even_rounding() {
        assert_eq!(round_one_decimal(56.65), 56.6);
        assert_eq!(round_one_decimal(56.75), 56.8);
        assert_eq!(round_one_decimal(18.55), 18.6);
        assert_eq!(round_one_decimal(70.64), 70.6);
    }

    #[test]
    fn delta_is_exact_difference() {
        let rep = r("c", "g", 0.613, 0.9171);
        assert_eq!(rep.delta, rep.auroc_after - rep.auroc_before);
    }

    #[test]
    fn single_report_summary() {
        let s = aggregate_report(&[r("carpet", "thread", 0.736, 0.835)]).unwrap();
        assert_eq!(s.before, 0.736);
        assert_eq!(s.after, 0.835);
        assert_eq!(s.classes[0].cell(), "73.6 → 83.5 (+9.9)");
    }

    #[test]
    fn bottle_average() {
        let s = aggregate_report(&[r("bottle", "broken", 0.235, 0.614), r("bottle", "contamination", 0.898, 0.890)])
            .unwrap();
        assert!((s.classes[0].before - 0.5665).abs() < 1e-12);
        assert_eq!(s.classes[0].cell(), "56.6 → 75.2 (+18.6)");
    }

    #[test]
    fn mean_of_deltas_is_delta_of_means() {
        let reps = [r("a", "x", 0.6, 0.7), r("a", "y", 0.9, 0.85), r("b", "z", 0.55, 0.8)];
        let s = aggregate_report(&reps).unwrap();
        let a_deltas = (reps[0].delta + reps[1].delta) / 2.0;
        assert!((s.classes[0].delta - a_deltas).abs() < 1e-12);
        assert!(matches!(aggregate_report(&[]), Err(EvalError::EmptyReports)));
    }

    #[test]
    fn text_rendering() {
        let reps = [r("carpet", "thread", 0.736, 0.835)];
        let s = aggregate_report(&reps).unwrap();
        assert_eq!(
            render_text(&reps, &s),
            "carpet\taverage\t73.6 → 83.5 (+9.9)\ncarpet\tthread\t73.6 → 83.5 (+9.9)\nall\taverage\t73.6 → 83.5 (+9.9)\n"
        );
    }
}
