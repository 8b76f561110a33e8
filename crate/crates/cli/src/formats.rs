//! On-disk formats.
//!
//! CSV files have a header row, `\n` line endings and floats in the
//! shortest decimal form that parses back to the same double: positional
//! for magnitudes in [1e-5, 1e16), exponent form otherwise, `NaN`/`inf`
//! for non-finite values.
//!
//! Parameter snapshots are plain text:
//!
//! ```text
//! gitd-params 1
//! segment <name> <len>
//! ...
//! values <n>
//! <one value per line, segments in header order>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use gitd_core::approx::{Layout, ParamVector};
use gitd_core::env::GridLayout;
use gitd_core::expected::TraceSeries;
use gitd_core::sampled::EpisodeTrace;

use crate::error::CliError;

const SNAPSHOT_MAGIC: &str = "gitd-params 1";

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::data(path, format!("{other:?}")),
    }
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Shortest round-trip decimal rendering of `x`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-5..1e16).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

/// Columns: step, value_error, sum_of_bes, diverged.
pub fn write_trace(path: &Path, trace: &TraceSeries) -> Result<(), CliError> {
    write_rows(
        path,
        &["step", "value_error", "sum_of_bes", "diverged"],
        trace.records.iter().map(|r| {
            vec![r.step.to_string(), fmt_f64(r.value_error), fmt_f64(r.sum_of_bes), flag(r.diverged)]
        }),
    )
}

/// Columns: episode, env_step, return, mean_q_loss, mean_h_loss, diverged,
/// then discounted_return and length.
pub fn write_episodes(path: &Path, trace: &EpisodeTrace) -> Result<(), CliError> {
    write_rows(
        path,
        &[
            "episode",
            "env_step",
            "return",
            "mean_q_loss",
            "mean_h_loss",
            "diverged",
            "discounted_return",
            "length",
        ],
        trace.episodes.iter().map(|e| {
            vec![
                e.episode.to_string(),
                e.env_step.to_string(),
                fmt_f64(e.episode_return),
                fmt_f64(e.mean_q_loss),
                fmt_f64(e.mean_h_loss),
                flag(e.diverged),
                fmt_f64(e.discounted_return),
                e.length.to_string(),
            ]
        }),
    )
}

/// Columns: train_step, env_step, q_loss, h_loss.
pub fn write_losses(path: &Path, trace: &EpisodeTrace) -> Result<(), CliError> {
    write_rows(
        path,
        &["train_step", "env_step", "q_loss", "h_loss"],
        trace.losses.iter().map(|l| {
            vec![l.train_step.to_string(), l.env_step.to_string(), fmt_f64(l.q_loss), fmt_f64(l.h_loss)]
        }),
    )
}

/// Columns: timestep, iqm, n_runs.
pub fn write_aggregate(path: &Path, rows: &[(f64, f64, usize)]) -> Result<(), CliError> {
    write_rows(
        path,
        &["timestep", "iqm", "n_runs"],
        rows.iter().map(|(t, v, n)| vec![fmt_f64(*t), fmt_f64(*v), n.to_string()]),
    )
}

/// One CSV column plus the first column as the time index.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub index: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn read_column(path: &Path, column: &str) -> Result<Column, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let at = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| CliError::data(path, format!("no column `{column}` (have: {})", headers.iter().collect::<Vec<_>>().join(", "))))?;
    let mut out = Column {
        index: Vec::new(),
        values: Vec::new(),
    };
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let parse = |i: usize| -> Result<f64, CliError> {
            let field = record.get(i).unwrap_or("");
            field
                .trim()
                .parse()
                .map_err(|_| CliError::data(path, format!("row {}: `{field}` is not a number", line + 2)))
        };
        out.index.push(parse(0)?);
        out.values.push(parse(at)?);
    }
    Ok(out)
}

pub fn load_grid(path: &Path) -> Result<GridLayout, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    GridLayout::parse(&text).map_err(|e| CliError::data(path, e.to_string()))
}

/// Segment names and lengths plus the concatenated values.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub segments: Vec<(String, usize)>,
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn from_params(params: &ParamVector) -> Self {
        Self::from_sequence(&[("", params)])
    }

    /// Several parameter vectors in one file; segment names get `prefix.`.
    pub fn from_sequence(parts: &[(&str, &ParamVector)]) -> Self {
        let mut s = Snapshot {
            segments: Vec::new(),
            values: Vec::new(),
        };
        for (prefix, params) in parts {
            for seg in params.layout().segments() {
                let name = if prefix.is_empty() {
                    seg.name.clone()
                } else {
                    format!("{prefix}.{}", seg.name)
                };
                s.segments.push((name, seg.len));
            }
            s.values.extend_from_slice(params.values());
        }
        s
    }

    pub fn render(&self) -> String {
        let mut out = String::from(SNAPSHOT_MAGIC);
        out.push('\n');
        for (name, len) in &self.segments {
            out.push_str(&format!("segment {name} {len}\n"));
        }
        out.push_str(&format!("values {}\n", self.values.len()));
        for v in &self.values {
            out.push_str(&fmt_f64(*v));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == SNAPSHOT_MAGIC => {}
            _ => return Err(format!("missing `{SNAPSHOT_MAGIC}` header")),
        }
        let mut segments = Vec::new();
        let n = loop {
            let (i, line) = lines.next().ok_or("missing `values` line")?;
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["segment", name, len] => {
                    let len = len.parse().map_err(|_| format!("line {}: bad length `{len}`", i + 1))?;
                    segments.push((name.to_string(), len));
                }
                ["values", n] => break n.parse::<usize>().map_err(|_| format!("line {}: bad count `{n}`", i + 1))?,
                _ => return Err(format!("line {}: unexpected `{line}`", i + 1)),
            }
        };
        let total: usize = segments.iter().map(|(_, l)| l).sum();
        if total != n {
            return Err(format!("segments hold {total} values but the file declares {n}"));
        }
        let values = lines
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| l.trim().parse::<f64>().map_err(|_| format!("line {}: `{l}` is not a number", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != n {
            return Err(format!("expected {n} values, found {}", values.len()));
        }
        Ok(Snapshot { segments, values })
    }

    /// Loads into `layout`, which must have the same segment names and sizes.
    pub fn to_params(&self, layout: &Layout) -> Result<ParamVector, String> {
        let want: Vec<(String, usize)> = layout.segments().iter().map(|s| (s.name.clone(), s.len)).collect();
        if want != self.segments {
            return Err(format!("layout mismatch: snapshot has {:?}, model has {:?}", self.segments, want));
        }
        ParamVector::from_values(layout.clone(), self.values.clone()).map_err(|e| e.to_string())
    }
}

pub fn write_snapshot(path: &Path, snapshot: &Snapshot) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(snapshot.render().as_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Snapshot::parse(&text).map_err(|m| CliError::data(path, m))
}
