//! Trial tables as CSV or JSON, an SP1 summary, and per-panel plot data.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sweep::{SweepCell, SweepTable};
use super::Problem;
use crate::eval::RunRecord;
use crate::functions::FunctionKind;

pub const CSV_HEADER: [&str; 11] = [
    "function",
    "dim",
    "alpha",
    "rotated",
    "optimizer",
    "trial",
    "seed",
    "success",
    "evals",
    "evals_to_target",
    "best_f",
];

const SUMMARY_HEADER: [&str; 10] = [
    "function",
    "dim",
    "alpha",
    "rotated",
    "optimizer",
    "trials",
    "successes",
    "success_rate",
    "mean_evals_success",
    "sp1",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Write(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: u64,
        field: &'static str,
        message: String,
    },
    #[error("row {row}: {message}")]
    Invalid { row: usize, message: String },
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Function, dim, alpha bits, rotated, optimizer.
type CellKey = (FunctionKind, usize, u64, bool, String);

/// One trial as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRow {
    pub function: FunctionKind,
    pub dim: usize,
    pub alpha: f64,
    pub rotated: bool,
    pub optimizer: String,
    pub trial: u64,
    pub seed: u64,
    pub success: bool,
    pub evals: u64,
    pub evals_to_target: Option<u64>,
    #[serde(with = "super::float_or_inf")]
    pub best_f: f64,
}

impl TrialRow {
    fn check(&self, row: usize) -> Result<(), PersistError> {
        let bad = |message: &str| {
            Err(PersistError::Invalid {
                row,
                message: message.to_string(),
            })
        };
        if self.success != self.evals_to_target.is_some() {
            return bad("success must match presence of evals_to_target");
        }
        if self.evals_to_target.is_some_and(|e| e > self.evals) {
            return bad("evals_to_target exceeds evals");
        }
        if self.dim < 2 {
            return bad("dim below 2");
        }
        if !(self.alpha >= 1.0 && self.alpha <= self.function.max_alpha()) {
            return bad("alpha out of range");
        }
        if self.optimizer.is_empty() {
            return bad("empty optimizer name");
        }
        Ok(())
    }

    fn record(&self) -> RunRecord {
        RunRecord {
            optimizer: self.optimizer.clone(),
            seed: self.seed,
            success: self.success,
            evals: self.evals,
            evals_to_target: self.evals_to_target,
            best_f: self.best_f,
        }
    }
}

impl SweepTable {
    /// One row per trial, cells in table order.
    pub fn rows(&self) -> Vec<TrialRow> {
        let mut rows = Vec::new();
        for cell in &self.cells {
            for (k, r) in cell.records.iter().enumerate() {
                rows.push(TrialRow {
                    function: cell.problem.function,
                    dim: cell.problem.dim,
                    alpha: cell.problem.alpha,
                    rotated: cell.problem.rotated,
                    optimizer: cell.optimizer.clone(),
                    trial: k as u64,
                    seed: r.seed,
                    success: r.success,
                    evals: r.evals,
                    evals_to_target: r.evals_to_target,
                    best_f: r.best_f,
                });
            }
        }
        rows
    }

    /// Regroups trial rows into cells (first-appearance order) and
    /// recomputes SP1. Trials within a cell must be numbered `0..k`.
    pub fn from_rows(rows: &[TrialRow]) -> Result<Self, PersistError> {
        let mut order: Vec<CellKey> = Vec::new();
        let mut groups: BTreeMap<CellKey, Vec<(usize, &TrialRow)>> = BTreeMap::new();
        for (i, row) in rows.iter().enumerate() {
            row.check(i + 1)?;
            let key = (
                row.function,
                row.dim,
                row.alpha.to_bits(),
                row.rotated,
                row.optimizer.clone(),
            );
            let entry = groups.entry(key.clone()).or_default();
            if entry.is_empty() {
                order.push(key);
            }
            entry.push((i + 1, row));
        }
        let mut table = SweepTable::default();
        for key in order {
            let mut members = groups.remove(&key).unwrap_or_default();
            members.sort_by_key(|(_, r)| r.trial);
            for (k, (line, r)) in members.iter().enumerate() {
                if r.trial != k as u64 {
                    return Err(PersistError::Invalid {
                        row: *line,
                        message: format!("trial {} where {k} was expected", r.trial),
                    });
                }
            }
            let first = members[0].1;
            let problem = Problem::new(first.function, first.dim, first.alpha, first.rotated);
            let records = members.iter().map(|(_, r)| r.record()).collect();
            table.cells.push(SweepCell::from_records(
                problem,
                first.optimizer.clone(),
                records,
            ));
        }
        Ok(table)
    }
}

/// Shortest decimal that parses back to the same value; `inf`, `-inf`, `NaN`
/// for non-finite values.
fn float(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_trials_csv<W: Write>(rows: &[TrialRow], w: W) -> Result<(), PersistError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        out.write_record([
            r.function.name().to_string(),
            r.dim.to_string(),
            float(r.alpha),
            r.rotated.to_string(),
            r.optimizer.clone(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.success.to_string(),
            r.evals.to_string(),
            r.evals_to_target.map(|e| e.to_string()).unwrap_or_default(),
            float(r.best_f),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn parse_field<T: FromStr>(line: u64, field: &'static str, text: &str) -> Result<T, PersistError>
where
    T::Err: fmt::Display,
{
    text.parse().map_err(|e: T::Err| PersistError::Field {
        line,
        field,
        message: format!("`{text}`: {e}"),
    })
}

pub fn read_trials_csv<R: Read>(r: R) -> Result<Vec<TrialRow>, PersistError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(PersistError::Header {
            expected: CSV_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let f = |i: usize| rec.get(i).unwrap_or("");
        let function: FunctionKind = parse_field(line, "function", f(0))?;
        let evals_to_target = match f(9) {
            "" => None,
            s => Some(parse_field(line, "evals_to_target", s)?),
        };
        rows.push(TrialRow {
            function,
            dim: parse_field(line, "dim", f(1))?,
            alpha: parse_field(line, "alpha", f(2))?,
            rotated: parse_field(line, "rotated", f(3))?,
            optimizer: f(4).to_string(),
            trial: parse_field(line, "trial", f(5))?,
            seed: parse_field(line, "seed", f(6))?,
            success: parse_field(line, "success", f(7))?,
            evals: parse_field(line, "evals", f(8))?,
            evals_to_target,
            best_f: parse_field(line, "best_f", f(10))?,
        });
    }
    Ok(rows)
}

pub fn write_trials_json<W: Write>(rows: &[TrialRow], mut w: W) -> Result<(), PersistError> {
    serde_json::to_writer_pretty(&mut w, rows)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_trials_json<R: Read>(r: R) -> Result<Vec<TrialRow>, PersistError> {
    Ok(serde_json::from_reader(r)?)
}

/// Writes the trial table to `path`.
pub fn persist(table: &SweepTable, path: &Path, format: Format) -> Result<(), PersistError> {
    let file = File::create(path).map_err(io_at(path))?;
    let mut w = BufWriter::new(file);
    let rows = table.rows();
    match format {
        Format::Csv => write_trials_csv(&rows, &mut w)?,
        Format::Json => write_trials_json(&rows, &mut w)?,
    }
    w.flush().map_err(io_at(path))
}

/// Reads a trial table written by [`persist`].
pub fn load(path: &Path, format: Format) -> Result<SweepTable, PersistError> {
    let file = File::open(path).map_err(io_at(path))?;
    let rows = match format {
        Format::Csv => read_trials_csv(file)?,
        Format::Json => read_trials_json(file)?,
    };
    SweepTable::from_rows(&rows)
}

/// Per-cell SP1 summary as CSV.
pub fn write_summary_csv<W: Write>(table: &SweepTable, w: W) -> Result<(), PersistError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for c in &table.cells {
        let (successes, rate, mean, sp1) = match &c.result {
            Some(r) => (
                r.successes.to_string(),
                float(r.success_rate),
                r.mean_evals_success.map(float).unwrap_or_default(),
                float(r.sp1),
            ),
            None => (String::new(), String::new(), String::new(), String::new()),
        };
        out.write_record([
            c.problem.function.name().to_string(),
            c.problem.dim.to_string(),
            float(c.problem.alpha),
            c.problem.rotated.to_string(),
            c.optimizer.clone(),
            c.records.len().to_string(),
            successes,
            rate,
            mean,
            sp1,
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Plot panel name, e.g. `elliN10`, `ellirotN20`, `sqrtelliN10`, `rosenrotN40`.
pub fn plot_file_name(function: FunctionKind, dim: usize, rotated: bool) -> String {
    let stem = match function {
        FunctionKind::Ellipsoid => "elli",
        FunctionKind::EllipsoidQuarter => "sqrtelli",
        FunctionKind::Rosenbrock => "rosen",
    };
    format!("{stem}{}N{dim}.tsv", if rotated { "rot" } else { "" })
}

/// One TSV per (function, dim, rotated): `alpha` then one SP1 column per
/// optimizer, rows in increasing alpha. Missing cells are written as `nan`.
pub fn write_plot_data(table: &SweepTable, dir: &Path) -> Result<Vec<PathBuf>, PersistError> {
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let mut panels: BTreeMap<(FunctionKind, usize, bool), Vec<&SweepCell>> = BTreeMap::new();
    for c in &table.cells {
        panels
            .entry((c.problem.function, c.problem.dim, c.problem.rotated))
            .or_default()
            .push(c);
    }
    let mut written = Vec::new();
    for ((function, dim, rotated), cells) in panels {
        let mut optimizers: Vec<&str> = Vec::new();
        let mut alphas: Vec<f64> = Vec::new();
        for c in &cells {
            if !optimizers.contains(&c.optimizer.as_str()) {
                optimizers.push(&c.optimizer);
            }
            if !alphas.contains(&c.problem.alpha) {
                alphas.push(c.problem.alpha);
            }
        }
        alphas.sort_by(f64::total_cmp);
        let mut text = String::from("alpha");
        for o in &optimizers {
            text.push('\t');
            text.push_str(o);
        }
        text.push('\n');
        for alpha in alphas {
            text.push_str(&float(alpha));
            for o in &optimizers {
                let v = cells
                    .iter()
                    .find(|c| c.problem.alpha == alpha && c.optimizer == *o)
                    .and_then(|c| c.result)
                    .map_or(f64::NAN, |r| r.sp1);
                text.push('\t');
                text.push_str(&if v.is_nan() {
                    "nan".to_string()
                } else {
                    float(v)
                });
            }
            text.push('\n');
        }
        let path = dir.join(plot_file_name(function, dim, rotated));
        fs::write(&path, text).map_err(io_at(&path))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{sweep, RotationMode, SweepConfig};
    use proptest::prelude::*;

    fn small_table() -> SweepTable {
        sweep(&SweepConfig {
            functions: vec![FunctionKind::Ellipsoid, FunctionKind::Rosenbrock],
            dims: vec![3],
            alphas: Some(vec![1.0, 1e2]),
            rotations: vec![false, true],
            optimizers: vec!["cmaes".into(), "pso".into()],
            trials: 2,
            budget: 3_000,
            seed: 1,
            target: None,
            rotation_mode: RotationMode::PerTrial,
            jobs: 1,
        })
        .unwrap()
    }

    #[test]
    fn csv_and_json_round_trip() {
        let table = small_table();
        let dir = tempfile::tempdir().unwrap();
        for format in [Format::Csv, Format::Json] {
            let path = dir.path().join(format!("t.{format}"));
            persist(&table, &path, format).unwrap();
            assert_eq!(load(&path, format).unwrap(), table);
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let mut buf = Vec::new();
        write_trials_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            format!("{}\n", CSV_HEADER.join(","))
        );
        assert_eq!(
            read_trials_csv(CSV_HEADER.join(",").as_bytes()).unwrap(),
            vec![]
        );
    }

    fn row(success: bool, best_f: f64) -> TrialRow {
        TrialRow {
            function: FunctionKind::EllipsoidQuarter,
            dim: 10,
            alpha: 1e10,
            rotated: true,
            optimizer: "de".into(),
            trial: 0,
            seed: u64::MAX,
            success,
            evals: 1_000_000,
            evals_to_target: success.then_some(999),
            best_f,
        }
    }

    #[test]
    fn field_formats() {
        let mut buf = Vec::new();
        write_trials_csv(&[row(false, f64::INFINITY), row(true, 1e-10)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[1],
            "elli-quarter,10,10000000000.0,true,de,0,18446744073709551615,false,1000000,,inf"
        );
        assert_eq!(
            lines[2],
            "elli-quarter,10,10000000000.0,true,de,0,18446744073709551615,true,1000000,999,1e-10"
        );
        let mut json = Vec::new();
        write_trials_json(&[row(false, f64::INFINITY)], &mut json).unwrap();
        let back = read_trials_json(json.as_slice()).unwrap();
        assert!(back[0].best_f.is_infinite());
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(matches!(
            read_trials_csv("a,b\n1,2\n".as_bytes()),
            Err(PersistError::Header { .. })
        ));
        let head = CSV_HEADER.join(",");
        let bad = format!("{head}\nelli,x,1.0,false,de,0,1,false,10,,1.0\n");
        assert!(matches!(
            read_trials_csv(bad.as_bytes()),
            Err(PersistError::Field {
                field: "dim",
                line: 2,
                ..
            })
        ));
        // success without evals_to_target
        let mut r = row(true, 0.0);
        r.evals_to_target = None;
        assert!(SweepTable::from_rows(&[r]).is_err());
        // duplicate trial index
        assert!(SweepTable::from_rows(&[row(false, 1.0), row(false, 1.0)]).is_err());
    }

    #[test]
    fn infinite_sp1_in_summary_and_plots() {
        let rows = vec![row(false, 2.0)];
        let table = SweepTable::from_rows(&rows).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&table, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.lines().nth(1).unwrap().ends_with(",1,0,0.0,,inf"),
            "{text}"
        );
        let dir = tempfile::tempdir().unwrap();
        let files = write_plot_data(&table, dir.path()).unwrap();
        assert_eq!(files, vec![dir.path().join("sqrtellirotN10.tsv")]);
        let tsv = fs::read_to_string(&files[0]).unwrap();
        assert_eq!(tsv, "alpha\tde\n10000000000.0\tinf\n");
    }

    #[test]
    fn plot_panels() {
        let table = small_table();
        let dir = tempfile::tempdir().unwrap();
        let mut names: Vec<String> = write_plot_data(&table, dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        names.sort();
        assert_eq!(
            names,
            [
                "elliN3.tsv",
                "ellirotN3.tsv",
                "rosenN3.tsv",
                "rosenrotN3.tsv"
            ]
        );
        let tsv = fs::read_to_string(dir.path().join("elliN3.tsv")).unwrap();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], "alpha\tcmaes\tpso");
        assert!(lines[1].starts_with("1.0\t") && lines[2].starts_with("100.0\t"));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load(Path::new("/nonexistent/t.csv"), Format::Csv).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/t.csv"));
    }

    fn arb_row() -> impl Strategy<Value = TrialRow> {
        (
            prop::sample::select(FunctionKind::ALL.to_vec()),
            2usize..50,
            0i32..9,
            any::<bool>(),
            prop::sample::select(vec!["cmaes", "de", "bfgs"]),
            any::<u64>(),
            (1u64..10_000_000, any::<bool>()),
            prop_oneof![Just(f64::INFINITY), 0.0..1e12f64, 1e-300..1e-9f64],
        )
            .prop_map(
                |(function, dim, e, rotated, opt, seed, (evals, ok), best_f)| TrialRow {
                    function,
                    dim,
                    alpha: 10f64.powi(e),
                    rotated,
                    optimizer: opt.to_string(),
                    trial: 0,
                    seed,
                    success: ok,
                    evals,
                    evals_to_target: ok.then_some(evals / 2),
                    best_f,
                },
            )
    }

    proptest! {
        #[test]
        fn rows_round_trip(rows in prop::collection::vec(arb_row(), 0..20)) {
            let mut csv_buf = Vec::new();
            write_trials_csv(&rows, &mut csv_buf).unwrap();
            prop_assert_eq!(&read_trials_csv(csv_buf.as_slice()).unwrap(), &rows);
            let mut json_buf = Vec::new();
            write_trials_json(&rows, &mut json_buf).unwrap();
            prop_assert_eq!(&read_trials_json(json_buf.as_slice()).unwrap(), &rows);
        }
    }
}
