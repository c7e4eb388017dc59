//! CSV tables: comma separated, `\n` line endings, one header row.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::eval::{EvalReport, LambdaRow};
use crate::model::ConditioningMode;
use crate::train::TraceRow;

/// Decimal text with at least six significant digits.
///
/// Magnitudes in `[1e-4, 1e15)` use fixed notation, others scientific.
pub fn format_real(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs();
    if !(1e-4..1e15).contains(&magnitude) {
        return format!("{x:.6e}");
    }
    let exponent = magnitude.log10().floor() as i32;
    let decimals = (5 - exponent).max(0) as usize;
    format!("{x:.decimals$}")
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn finish<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::Data(format!("flushing csv: {}", e.error())))?
        .flush()
        .map_err(|e| Error::Data(format!("flushing csv: {e}")))
}

pub fn write_trace<W: Write>(out: W, trace: &[TraceRow]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["iteration", "learning_rate", "batch_loss"])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            format_real(r.learning_rate),
            format_real(r.batch_loss),
        ])?;
    }
    finish(w)
}

pub const EVAL_COLUMNS: [&str; 7] = [
    "n_episodes",
    "n_way",
    "k_shot",
    "mean_accuracy",
    "ci95",
    "lambda_mean",
    "lambda_std",
];

/// One summary row per report.
pub fn write_eval_summary<W: Write>(out: W, reports: &[EvalReport]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(EVAL_COLUMNS)?;
    for r in reports {
        w.write_record([
            r.n_episodes.to_string(),
            r.n_way.to_string(),
            r.k_shot.to_string(),
            format_real(r.mean_accuracy),
            format_real(r.ci95_halfwidth),
            format_real(r.lambda_mean),
            format_real(r.lambda_std),
        ])?;
    }
    finish(w)
}

pub fn write_episode_accuracies<W: Write>(out: W, report: &EvalReport) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["episode", "accuracy"])?;
    for (i, a) in report.per_episode_accuracies.iter().enumerate() {
        w.write_record([i.to_string(), format_real(*a)])?;
    }
    finish(w)
}

pub fn write_lambda_rows<W: Write>(out: W, rows: &[LambdaRow]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["k_shot", "lambda_mean", "lambda_std"])?;
    for r in rows {
        w.write_record([
            r.k_shot.to_string(),
            format_real(r.lambda_mean),
            format_real(r.lambda_std),
        ])?;
    }
    finish(w)
}

/// Rows labelled by conditioning mode, or `control` for `None`.
pub fn write_ablation<W: Write>(out: W, rows: &[(Option<ConditioningMode>, EvalReport)]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["mode", "mean_accuracy", "ci95"])?;
    for (mode, r) in rows {
        let name = mode.map_or_else(|| "control".to_string(), |m| m.to_string());
        w.write_record([name, format_real(r.mean_accuracy), format_real(r.ci95_halfwidth)])?;
    }
    finish(w)
}

/// A parsed CSV file with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(input);
        let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if headers.iter().all(|h| h.is_empty()) {
            return Err(Error::Data("csv has no header row".into()));
        }
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(|f| f.trim().to_string()).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, csv::Error>>()?;
        Ok(Self { headers, rows })
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.headers.iter().any(|h| h == name)
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("csv has no column {name:?}")))
    }

    pub fn text_column(&self, name: &str) -> Result<Vec<String>> {
        let i = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[i].clone()).collect())
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(row, r)| {
                r[i].parse::<f64>().map_err(|_| Error::Parse {
                    line: row + 2,
                    message: format!("column {name}: {:?} is not a number", r[i]),
                })
            })
            .collect()
    }
}
