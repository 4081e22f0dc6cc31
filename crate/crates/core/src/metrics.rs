//! Macro-averaged precision/recall/F1 and per-class scores over the three
//! answer classes, plus report emission and the published reference numbers
//! for the SemEval-2015 Task 3 English subtask A test set.
//!
//! Macro-F1 is the unweighted mean of the per-class F1 scores (NOT the
//! harmonic mean of macro-P and macro-R); the harmonic-mean variant is kept
//! as a secondary field for comparison.

use crate::error::{Error, Result};
use crate::lstm::Label;

/// 3x3 counts, rows = gold, cols = predicted, class order Good/Bad/Potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn add(&mut self, gold: Label, pred: Label) {
        self.counts[gold.index()][pred.index()] += 1;
    }

    /// Associative merge for sharded accumulation.
    pub fn merge(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        let mut out = *self;
        for g in 0..3 {
            for p in 0..3 {
                out.counts[g][p] += other.counts[g][p];
            }
        }
        out
    }
}

/// Accumulates a confusion matrix from aligned prediction/gold lists.
pub fn confusion(preds: &[Label], golds: &[Label]) -> Result<ConfusionMatrix> {
    if preds.len() != golds.len() {
        return Err(Error::ShapeMismatch {
            context: "confusion".into(),
            expected: format!("{} golds", preds.len()),
            got: format!("{}", golds.len()),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput("confusion over empty prediction list"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &g) in preds.iter().zip(golds.iter()) {
        cm.add(g, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    /// All in percent.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True when the class has no gold instances (recall defined as 0).
    pub zero_gold: bool,
}

/// Full evaluation report. Percentages are stored at full precision; the
/// two-decimal presentation happens at emission.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_class: [ClassMetrics; 3],
    pub macro_p: f64,
    pub macro_r: f64,
    /// Unweighted mean of per-class F1.
    pub macro_f1: f64,
    /// Secondary convention: harmonic mean of macro-P and macro-R.
    pub macro_f1_from_pr: f64,
    pub confusion: ConfusionMatrix,
    pub answer_count: u64,
}

/// Per-class P = diag/col-sum, R = diag/row-sum, F1 = 2PR/(P+R), each 0 on a
/// zero denominator; macro scores are unweighted class means.
pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    if cm.total() == 0 {
        return Err(Error::EmptyInput("confusion matrix with zero total"));
    }
    let mut per_class = [ClassMetrics {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        zero_gold: false,
    }; 3];
    for k in 0..3 {
        let diag = cm.counts[k][k] as f64;
        let col: u64 = (0..3).map(|g| cm.counts[g][k]).sum();
        let row: u64 = cm.counts[k].iter().sum();
        let p = if col == 0 { 0.0 } else { diag / col as f64 };
        let r = if row == 0 { 0.0 } else { diag / row as f64 };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        per_class[k] = ClassMetrics {
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1: 100.0 * f1,
            zero_gold: row == 0,
        };
    }
    let macro_p = per_class.iter().map(|c| c.precision).sum::<f64>() / 3.0;
    let macro_r = per_class.iter().map(|c| c.recall).sum::<f64>() / 3.0;
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / 3.0;
    let macro_f1_from_pr = if macro_p + macro_r == 0.0 {
        0.0
    } else {
        2.0 * macro_p * macro_r / (macro_p + macro_r)
    };
    Ok(MetricReport {
        per_class,
        macro_p,
        macro_r,
        macro_f1,
        macro_f1_from_pr,
        confusion: *cm,
        answer_count: cm.total(),
    })
}

/// Round half-up to two decimals, for presentation.
pub fn pct2(x: f64) -> f64 {
    (x * 100.0 + 0.5).floor() / 100.0
}

fn fmt2(x: f64) -> String {
    format!("{:.2}", pct2(x))
}

/// Published test-set scores of prior systems and the recurrent model on the
/// SemEval-2015 Task 3 English subtask A benchmark, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemScores {
    pub name: &'static str,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub f1_good: f64,
    pub f1_bad: f64,
    pub f1_potential: f64,
}

/// Reference results used for report comparison; never computed here.
pub fn reference_scores() -> &'static [SystemScores] {
    const SCORES: [SystemScores; 6] = [
        SystemScores {
            name: "SVM",
            macro_p: 50.10,
            macro_r: 54.43,
            macro_f1: 52.14,
            f1_good: 79.78,
            f1_bad: 76.65,
            f1_potential: 0.00,
        },
        SystemScores {
            name: "CRF",
            macro_p: 53.89,
            macro_r: 54.26,
            macro_f1: 53.40,
            f1_good: 79.32,
            f1_bad: 75.50,
            f1_potential: 5.38,
        },
        SystemScores {
            name: "DBN",
            macro_p: 55.22,
            macro_r: 53.80,
            macro_f1: 54.07,
            f1_good: 76.99,
            f1_bad: 71.33,
            f1_potential: 13.89,
        },
        SystemScores {
            name: "mDBN",
            macro_p: 56.11,
            macro_r: 53.95,
            macro_f1: 54.29,
            f1_good: 77.74,
            f1_bad: 70.39,
            f1_potential: 14.74,
        },
        SystemScores {
            name: "CNN",
            macro_p: 55.33,
            macro_r: 54.73,
            macro_f1: 54.42,
            f1_good: 76.45,
            f1_bad: 74.77,
            f1_potential: 12.05,
        },
        SystemScores {
            name: "R-CNN",
            macro_p: 56.41,
            macro_r: 56.16,
            macro_f1: 56.14,
            f1_good: 77.31,
            f1_bad: 75.88,
            f1_potential: 15.22,
        },
    ];
    &SCORES
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Structured,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<ReportFormat> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "structured" | "kv" => Ok(ReportFormat::Structured),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

/// Serializes a report. The text layout mirrors the macro and per-class
/// tables; the structured layout is `key=value` lines parseable by
/// `parse_structured_report`. Both deterministic.
pub fn emit_report(report: &MetricReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => emit_text(report),
        ReportFormat::Structured => emit_structured(report),
    }
}

fn emit_text(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("answers evaluated: {}\n\n", report.answer_count));
    out.push_str("macro-averaged results (%)\n");
    out.push_str("    P       R       F1\n");
    out.push_str(&format!(
        "    {:<7} {:<7} {:<7}\n\n",
        fmt2(report.macro_p),
        fmt2(report.macro_r),
        fmt2(report.macro_f1)
    ));
    out.push_str("per-class scores (%)\n");
    out.push_str("    class      P       R       F1\n");
    for (k, label) in Label::ALL.iter().enumerate() {
        let c = &report.per_class[k];
        out.push_str(&format!(
            "    {:<10} {:<7} {:<7} {:<7}{}\n",
            label.name(),
            fmt2(c.precision),
            fmt2(c.recall),
            fmt2(c.f1),
            if c.zero_gold { "  (no gold instances)" } else { "" }
        ));
    }
    out.push_str("\nconfusion matrix (rows = gold, cols = predicted)\n");
    out.push_str("    gold\\pred  Good     Bad      Potential\n");
    for (g, label) in Label::ALL.iter().enumerate() {
        out.push_str(&format!(
            "    {:<10} {:<8} {:<8} {:<8}\n",
            label.name(),
            report.confusion.counts[g][0],
            report.confusion.counts[g][1],
            report.confusion.counts[g][2]
        ));
    }
    out.push_str(&format!(
        "\nmacro-F1 from macro-P/R (secondary convention): {}\n",
        fmt2(report.macro_f1_from_pr)
    ));
    out
}

fn emit_structured(report: &MetricReport) -> String {
    let mut lines: Vec<String> = Vec::new();
    lines.push(format!("answer_count={}", report.answer_count));
    lines.push(format!("macro.precision={}", report.macro_p));
    lines.push(format!("macro.recall={}", report.macro_r));
    lines.push(format!("macro.f1={}", report.macro_f1));
    lines.push(format!("macro.f1_from_pr={}", report.macro_f1_from_pr));
    for (k, label) in Label::ALL.iter().enumerate() {
        let c = &report.per_class[k];
        let name = label.name().to_lowercase();
        lines.push(format!("class.{name}.precision={}", c.precision));
        lines.push(format!("class.{name}.recall={}", c.recall));
        lines.push(format!("class.{name}.f1={}", c.f1));
        lines.push(format!("class.{name}.zero_gold={}", c.zero_gold));
    }
    for (g, gl) in Label::ALL.iter().enumerate() {
        for (p, pl) in Label::ALL.iter().enumerate() {
            lines.push(format!(
                "confusion.{}.{}={}",
                gl.name().to_lowercase(),
                pl.name().to_lowercase(),
                report.confusion.counts[g][p]
            ));
        }
    }
    lines.sort();
    lines.join("\n") + "\n"
}

/// Parses the structured key=value report back; inverse of the structured
/// emission.
pub fn parse_structured_report(text: &str) -> Result<MetricReport> {
    let mut map = std::collections::HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            msg: format!("expected key=value, got '{line}'"),
        })?;
        map.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<String> {
        map.get(k)
            .cloned()
            .ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing key '{k}'"),
            })
    };
    let getf = |k: &str| -> Result<f64> {
        get(k)?.parse().map_err(|_| Error::Parse {
            line: 0,
            msg: format!("bad float for '{k}'"),
        })
    };
    let getu = |k: &str| -> Result<u64> {
        get(k)?.parse().map_err(|_| Error::Parse {
            line: 0,
            msg: format!("bad integer for '{k}'"),
        })
    };

    let mut per_class = [ClassMetrics {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        zero_gold: false,
    }; 3];
    for (k, label) in Label::ALL.iter().enumerate() {
        let name = label.name().to_lowercase();
        per_class[k] = ClassMetrics {
            precision: getf(&format!("class.{name}.precision"))?,
            recall: getf(&format!("class.{name}.recall"))?,
            f1: getf(&format!("class.{name}.f1"))?,
            zero_gold: get(&format!("class.{name}.zero_gold"))? == "true",
        };
    }
    let mut cm = ConfusionMatrix::default();
    for (g, gl) in Label::ALL.iter().enumerate() {
        for (p, pl) in Label::ALL.iter().enumerate() {
            cm.counts[g][p] = getu(&format!(
                "confusion.{}.{}",
                gl.name().to_lowercase(),
                pl.name().to_lowercase()
            ))?;
        }
    }
    Ok(MetricReport {
        per_class,
        macro_p: getf("macro.precision")?,
        macro_r: getf("macro.recall")?,
        macro_f1: getf("macro.f1")?,
        macro_f1_from_pr: getf("macro.f1_from_pr")?,
        confusion: cm,
        answer_count: getu("answer_count")?,
    })
}
