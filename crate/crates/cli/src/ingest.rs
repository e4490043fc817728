//! CSV ingestion. One header row; an `env` column names the
//! environment of each row and every other column is a numeric
//! variable. With windowing the file is instead one time series whose
//! blocks become pseudo-environments.

use std::fs::File;
use std::path::Path;

use backshift::scatter::{window_group, Environment, MultiEnvDataset};
use nalgebra::DMatrix;

use crate::error::{CliError, Result};

fn parse_error(err: csv::Error) -> CliError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    CliError::Parse {
        line,
        detail: match err.into_kind() {
            csv::ErrorKind::Io(e) => e.to_string(),
            other => format!("{other:?}"),
        },
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn parse_cell(field: &str, column: &str, line: u64) -> Result<f64> {
    let value: f64 = field.trim().parse().map_err(|_| CliError::Parse {
        line,
        detail: format!("column {column:?} has non-numeric value {field:?}"),
    })?;
    if !value.is_finite() {
        return Err(CliError::Parse {
            line,
            detail: format!("column {column:?} has non-finite value {field:?}"),
        });
    }
    Ok(value)
}

/// Reads condition data: rows grouped by the `env` column, environments
/// kept in first-appearance order, variable names from the header.
pub fn ingest_csv(path: &Path) -> Result<MultiEnvDataset> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(parse_error)?.clone();
    let env_col = headers
        .iter()
        .position(|h| h == "env")
        .ok_or_else(|| CliError::Parse {
            line: 1,
            detail: "missing `env` column".into(),
        })?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != env_col)
        .map(|(_, h)| h.to_string())
        .collect();
    if names.is_empty() {
        return Err(CliError::Parse {
            line: 1,
            detail: "no variable columns besides `env`".into(),
        });
    }

    let mut labels: Vec<String> = Vec::new();
    let mut blocks: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(parse_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != headers.len() {
            return Err(CliError::Parse {
                line,
                detail: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        let label = record.get(env_col).unwrap().to_string();
        let block = match labels.iter().position(|l| *l == label) {
            Some(i) => i,
            None => {
                labels.push(label);
                blocks.push(Vec::new());
                labels.len() - 1
            }
        };
        for (i, field) in record.iter().enumerate() {
            if i == env_col {
                continue;
            }
            blocks[block].push(parse_cell(field, &headers[i], line)?);
        }
    }

    let p = names.len();
    let environments = labels
        .into_iter()
        .zip(blocks)
        .map(|(label, values)| Environment {
            label,
            data: DMatrix::from_row_slice(values.len() / p, p, &values),
        })
        .collect();
    Ok(MultiEnvDataset::new(environments)?.with_variable_names(names)?)
}

/// Reads a single time series (every column numeric, no `env` column)
/// and splits it into overlapping windows acting as environments.
pub fn ingest_series_csv(path: &Path, window_len: usize, stride: usize) -> Result<MultiEnvDataset> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(parse_error)?.clone();
    if headers.iter().any(|h| h == "env") {
        return Err(CliError::Parse {
            line: 1,
            detail: "windowed ingestion expects a plain series without an `env` column".into(),
        });
    }
    let names: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    if names.is_empty() {
        return Err(CliError::Parse {
            line: 1,
            detail: "no variable columns".into(),
        });
    }

    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(parse_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != headers.len() {
            return Err(CliError::Parse {
                line,
                detail: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        for (i, field) in record.iter().enumerate() {
            values.push(parse_cell(field, &headers[i], line)?);
        }
        rows += 1;
    }

    let series = DMatrix::from_row_slice(rows, names.len(), &values);
    Ok(window_group(&series, window_len, stride)?.with_variable_names(names)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_csv(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn groups_by_environment_in_first_appearance_order() {
        let mut content = String::from("env,x,y\n");
        for i in 0..4 {
            for label in ["c", "a", "b"] {
                content.push_str(&format!("{label},{i}.5,{}\n", i * 2));
            }
        }
        let (_dir, path) = write_csv(&content);
        let ds = ingest_csv(&path).unwrap();
        assert_eq!(ds.env_labels(), ["c", "a", "b"]);
        assert_eq!(ds.p(), 2);
        assert_eq!(ds.variable_names, ["x", "y"]);
        for env in &ds.environments {
            assert_eq!(env.data.nrows(), 4);
        }
        assert_eq!(ds.environments[0].data[(1, 0)], 1.5);
        assert_eq!(ds.environments[2].data[(3, 1)], 6.0);
    }

    #[test]
    fn single_environment_is_accepted_at_ingest() {
        let (_dir, path) = write_csv("env,x,y\nonly,1,2\nonly,3,4\n");
        let ds = ingest_csv(&path).unwrap();
        assert_eq!(ds.n_env(), 1);
    }

    #[test]
    fn non_numeric_cell_names_its_line() {
        let (_dir, path) = write_csv("env,x,y\na,1,2\na,oops,4\n");
        match ingest_csv(&path) {
            Err(CliError::Parse { line, detail }) => {
                assert_eq!(line, 3);
                assert!(detail.contains("oops"), "{detail}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_cell_is_rejected() {
        let (_dir, path) = write_csv("env,x,y\na,1,2\na,inf,4\n");
        match ingest_csv(&path) {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_env_column_is_rejected() {
        let (_dir, path) = write_csv("x,y\n1,2\n");
        match ingest_csv(&path) {
            Err(CliError::Parse { line, detail }) => {
                assert_eq!(line, 1);
                assert!(detail.contains("env"), "{detail}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_row_is_rejected_with_position() {
        let (_dir, path) = write_csv("env,x,y\na,1,2\na,3\n");
        match ingest_csv(&path) {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn series_is_split_into_windows() {
        let mut content = String::from("u,v\n");
        for i in 0..10 {
            content.push_str(&format!("{i},{}\n", 10 - i));
        }
        let (_dir, path) = write_csv(&content);
        let ds = ingest_series_csv(&path, 4, 3).unwrap();
        assert_eq!(ds.env_labels(), ["w0", "w1", "w2"]);
        assert_eq!(ds.variable_names, ["u", "v"]);
        assert_eq!(ds.environments[1].data[(0, 0)], 3.0);
    }

    #[test]
    fn series_with_env_column_is_rejected() {
        let (_dir, path) = write_csv("env,x\na,1\n");
        match ingest_series_csv(&path, 2, 2) {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }
}
