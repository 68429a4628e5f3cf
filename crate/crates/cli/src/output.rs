//! Per-sample CSV and JSON summaries.

use std::fs;
use std::path::Path;

use rve_core::estimators::Quantity;
use rve_core::experiment::RveSample;
use serde::Serialize;

use crate::{CliError, CliResult};

pub const CSV_HEADER: [&str; 12] = [
    "sample_index",
    "accepted",
    "F_avg",
    "F_2pt_11",
    "F_2pt_12",
    "F_2pt_21",
    "F_2pt_22",
    "a_11",
    "a_12",
    "a_21",
    "a_22",
    "iters",
];

const F_COLUMNS: [Quantity; 5] = [
    Quantity::Avg,
    Quantity::TwoPoint(0, 0),
    Quantity::TwoPoint(0, 1),
    Quantity::TwoPoint(1, 0),
    Quantity::TwoPoint(1, 1),
];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// A CSV row. `accepted` is empty for samples that were not screened
/// (plain ensemble); quantities that were not computed are empty.
pub fn csv_row(sample: &RveSample, screened: bool) -> Vec<String> {
    let mut row = Vec::with_capacity(CSV_HEADER.len());
    row.push(sample.seed.sample_index.to_string());
    row.push(if screened {
        sample.accepted.to_string()
    } else {
        String::new()
    });
    for q in F_COLUMNS {
        row.push(sample.f.get(q).map(|v| v.to_string()).unwrap_or_default());
    }
    for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        row.push(sample.a_rve.map(|a| a.get(i, j).to_string()).unwrap_or_default());
    }
    row.push(if sample.a_rve.is_some() {
        sample.solver_iters.to_string()
    } else {
        String::new()
    });
    row
}

/// Writes plain samples followed by every screened candidate of the
/// selected run.
pub fn write_samples_csv(path: &Path, plain: &[RveSample], screened: &[RveSample]) -> CliResult<usize> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    let to_err = |e: csv::Error| CliError::Output(format!("{}: {e}", path.display()));
    w.write_record(CSV_HEADER).map_err(to_err)?;
    let rows = plain
        .iter()
        .map(|s| (s, false))
        .chain(screened.iter().map(|s| (s, true)));
    let mut count = 0;
    for (s, flag) in rows {
        w.write_record(csv_row(s, flag)).map_err(to_err)?;
        count += 1;
    }
    w.flush().map_err(io_err(path))?;
    Ok(count)
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::Output(format!("cannot serialize summary: {e}")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_text(path, &to_json(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rve_core::estimators::{EffectiveMatrix, FVector};
    use rve_core::SampleSeed;

    #[test]
    fn absent_columns_are_empty() {
        let s = RveSample {
            seed: SampleSeed::new(1, 42),
            f: FVector {
                labels: vec![Quantity::Avg, Quantity::TwoPoint(1, 1)],
                components: vec![0.75, 0.01],
            },
            accepted: false,
            a_rve: None,
            solver_iters: 0,
        };
        let row = csv_row(&s, true);
        assert_eq!(row.len(), CSV_HEADER.len());
        assert_eq!(row[..3], ["42", "false", "0.75"]);
        assert_eq!(row[3], "");
        assert_eq!(row[6], "0.01");
        assert!(row[7..].iter().all(String::is_empty));

        let solved = RveSample {
            accepted: true,
            a_rve: Some(EffectiveMatrix {
                entries: [[1.0, 0.0], [0.0, 2.0]],
            }),
            solver_iters: 7,
            ..s
        };
        let row = csv_row(&solved, false);
        assert_eq!(row[1], "");
        assert_eq!(row[10], "2");
        assert_eq!(row[11], "7");
    }
}
