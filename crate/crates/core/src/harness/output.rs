use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ExperimentResult, HarnessError};

pub const RUNS_CSV_HEADER: [&str; 9] = [
    "x",
    "n",
    "f",
    "run",
    "seed",
    "outcome",
    "rounds",
    "pivot_round",
    "violation_round",
];

pub const PLOT_CSV_HEADER: [&str; 4] = ["x", "y", "stderr", "predicted"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "both" => Ok(OutputFormat::Both),
            other => Err(format!("unknown format `{other}` (expected csv, json or both)")),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), HarnessError> {
    let wrap = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `summary.json`, `runs.csv` and `plot.csv` under `dir` as selected
/// by `format`, returning the paths written.
pub fn emit_results(result: &ExperimentResult, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    if format.json() {
        let path = dir.join("summary.json");
        serde_json::to_writer_pretty(create(&path)?, result).map_err(|source| HarnessError::Json {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    if format.csv() {
        let path = dir.join("runs.csv");
        let rows = result.runs.iter().map(|r| {
            vec![
                r.x.to_string(),
                r.n.to_string(),
                r.f.to_string(),
                r.run.to_string(),
                r.seed.to_string(),
                r.outcome.clone(),
                r.rounds.to_string(),
                opt(r.pivot_round),
                opt(r.violation_round),
            ]
        });
        write_csv(&path, &RUNS_CSV_HEADER, rows)?;
        written.push(path);

        let path = dir.join("plot.csv");
        let rows = result
            .plot
            .iter()
            .map(|p| vec![p.x.to_string(), p.y.to_string(), opt(p.stderr), opt(p.predicted)]);
        write_csv(&path, &PLOT_CSV_HEADER, rows)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentKind;

    #[test]
    fn empty_result_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let result = ExperimentResult::empty(ExperimentKind::Liveness);
        let files = emit_results(&result, dir.path(), OutputFormat::Both).unwrap();
        assert_eq!(files.len(), 3);
        let runs = fs::read_to_string(dir.path().join("runs.csv")).unwrap();
        assert_eq!(runs, "x,n,f,run,seed,outcome,rounds,pivot_round,violation_round\n");
        let plot = fs::read_to_string(dir.path().join("plot.csv")).unwrap();
        assert_eq!(plot, "x,y,stderr,predicted\n");
        let json: ExperimentResult =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(json, result);
    }

    #[test]
    fn format_selects_files() {
        let dir = tempfile::tempdir().unwrap();
        let result = ExperimentResult::empty(ExperimentKind::Safety);
        let files = emit_results(&result, dir.path(), OutputFormat::Json).unwrap();
        assert_eq!(files, vec![dir.path().join("summary.json")]);
        assert!("xml".parse::<OutputFormat>().is_err());
    }

    #[test]
    fn io_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("taken");
        fs::write(&blocker, "").unwrap();
        let err = emit_results(
            &ExperimentResult::empty(ExperimentKind::Safety),
            &blocker,
            OutputFormat::Csv,
        )
        .unwrap_err();
        assert!(err.to_string().contains("taken"), "{err}");
    }
}
