//! File formats: demonstration CSV, trajectory CSV and JSON documents.
//! Every write goes through a temporary file in the target directory that
//! is renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{KmpError, Result};
use crate::gmm::{Demo, DemoSet, GmmDocument, GmmModel};
use crate::kmp::{KmpModel, ModelDocument, Prediction};

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| KmpError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| KmpError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| KmpError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| KmpError::io(path, e))?;
    tmp.persist(path).map_err(|e| KmpError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| KmpError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_model(path: &Path, model: &KmpModel) -> Result<()> {
    write_json(path, &model.to_document())
}

pub fn load_model(path: &Path) -> Result<KmpModel> {
    KmpModel::from_document(&read_json::<ModelDocument>(path)?)
}

pub fn save_gmm(path: &Path, model: &GmmModel) -> Result<()> {
    write_json(path, &model.to_document())
}

pub fn load_gmm(path: &Path) -> Result<GmmModel> {
    GmmModel::from_document(&read_json::<GmmDocument>(path)?)
}

pub fn load_demos(path: &Path) -> Result<DemoSet> {
    let file = fs::File::open(path).map_err(|e| KmpError::io(path, e))?;
    parse_demos(file)
}

/// Parses `demo_id,s_1..s_I,xi_1..xi_O`. Rows are grouped by `demo_id`
/// (numeric order when every id is an integer, lexical otherwise) and
/// keep their file order within a demonstration.
pub fn parse_demos<R: Read>(reader: R) -> Result<DemoSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("demo_id") {
        return Err(KmpError::Parse {
            row: 1,
            column: 1,
            message: "first column must be demo_id".into(),
        });
    }
    let mut input_dim = 0;
    let mut output_dim = 0;
    for (c, name) in header.iter().enumerate().skip(1) {
        let expected_s = format!("s_{}", input_dim + 1);
        let expected_xi = format!("xi_{}", output_dim + 1);
        if output_dim == 0 && name == expected_s {
            input_dim += 1;
        } else if name == expected_xi {
            output_dim += 1;
        } else {
            return Err(KmpError::Parse {
                row: 1,
                column: c + 1,
                message: format!("unexpected column '{name}' (expected {expected_s} or {expected_xi})"),
            });
        }
    }
    if input_dim == 0 || output_dim == 0 {
        return Err(KmpError::Parse {
            row: 1,
            column: 1,
            message: "header needs at least one s_ and one xi_ column".into(),
        });
    }

    let mut groups: BTreeMap<String, Demo> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 2;
        let record = record?;
        if record.len() != 1 + input_dim + output_dim {
            return Err(KmpError::Parse {
                row,
                column: record.len().min(1 + input_dim + output_dim) + 1,
                message: format!("expected {} cells, found {}", 1 + input_dim + output_dim, record.len()),
            });
        }
        let mut values = Vec::with_capacity(input_dim + output_dim);
        for c in 1..record.len() {
            let cell = &record[c];
            let v: f64 = cell.parse().map_err(|_| KmpError::Parse {
                row,
                column: c + 1,
                message: format!("'{cell}' is not a number"),
            })?;
            values.push(v);
        }
        let id = record[0].to_string();
        let demo = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            Demo {
                inputs: vec![],
                outputs: vec![],
            }
        });
        demo.inputs.push(DVector::from_column_slice(&values[..input_dim]));
        demo.outputs.push(DVector::from_column_slice(&values[input_dim..]));
    }
    let numeric: Option<Vec<i64>> = order.iter().map(|id| id.parse().ok()).collect();
    if numeric.is_some() {
        order.sort_by_key(|id| id.parse::<i64>().expect("checked numeric"));
    } else {
        order.sort();
    }
    let demos = order.into_iter().map(|id| groups.remove(&id).expect("grouped")).collect();
    DemoSet::new(demos)
}

pub fn demos_to_csv(demos: &DemoSet) -> String {
    let mut out = String::from("demo_id");
    for i in 1..=demos.input_dim() {
        out.push_str(&format!(",s_{i}"));
    }
    for o in 1..=demos.output_dim() {
        out.push_str(&format!(",xi_{o}"));
    }
    out.push('\n');
    for (h, d) in demos.demos().iter().enumerate() {
        for (s, x) in d.inputs.iter().zip(&d.outputs) {
            out.push_str(&h.to_string());
            for v in s.iter().chain(x.iter()) {
                out.push(',');
                out.push_str(&format_float(*v));
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_demos(path: &Path, demos: &DemoSet) -> Result<()> {
    write_atomic(path, demos_to_csv(demos).as_bytes())
}

/// How much of the predictive covariance a trajectory CSV carries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceOutput {
    /// Row-major `cov_i_j` for every entry.
    #[default]
    Full,
    /// `var_i` diagonal only.
    Diagonal,
    None,
}

/// Trajectory table: `s_1..s_I, mean_1..mean_O'` then the covariance
/// columns selected by `cov`.
pub fn trajectory_csv(queries: &[DVector<f64>], predictions: &[Prediction], cov: CovarianceOutput) -> Result<String> {
    if queries.len() != predictions.len() {
        return Err(KmpError::DimensionMismatch {
            context: "trajectory rows",
            expected: queries.len(),
            found: predictions.len(),
        });
    }
    let (i_dim, o_dim) = match (queries.first(), predictions.first()) {
        (Some(q), Some(p)) => (q.len(), p.mean.len()),
        _ => return Err(KmpError::validation("empty trajectory")),
    };
    let mut cols: Vec<String> = (1..=i_dim).map(|i| format!("s_{i}")).collect();
    cols.extend((1..=o_dim).map(|o| format!("mean_{o}")));
    match cov {
        CovarianceOutput::Full => {
            for a in 1..=o_dim {
                cols.extend((1..=o_dim).map(|b| format!("cov_{a}_{b}")));
            }
        }
        CovarianceOutput::Diagonal => cols.extend((1..=o_dim).map(|o| format!("var_{o}"))),
        CovarianceOutput::None => {}
    }
    let mut out = cols.join(",");
    out.push('\n');
    for (q, p) in queries.iter().zip(predictions) {
        let mut cells: Vec<String> = q.iter().chain(p.mean.iter()).map(|v| format_float(*v)).collect();
        match cov {
            CovarianceOutput::Full => {
                for a in 0..o_dim {
                    cells.extend((0..o_dim).map(|b| format_float(p.cov[(a, b)])));
                }
            }
            CovarianceOutput::Diagonal => cells.extend((0..o_dim).map(|o| format_float(p.cov[(o, o)]))),
            CovarianceOutput::None => {}
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_trajectory(
    path: &Path,
    queries: &[DVector<f64>],
    predictions: &[Prediction],
    cov: CovarianceOutput,
) -> Result<()> {
    write_atomic(path, trajectory_csv(queries, predictions, cov)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_shape_and_orders_by_id() {
        let csv = "demo_id,s_1,xi_1,xi_2\n10,0,1,2\n2,0,5,6\n10,1,3,4\n2,1,7,8\n10,2,0,0\n2,2,0,0\n";
        let set = parse_demos(csv.as_bytes()).unwrap();
        assert_eq!((set.num_demos(), set.demo_len(), set.input_dim(), set.output_dim()), (2, 3, 1, 2));
        assert_eq!(set.demos()[0].outputs[0].as_slice(), &[5.0, 6.0]);
        assert_eq!(set.demos()[1].outputs[1].as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn reports_ragged_and_bad_cells() {
        let ragged = "demo_id,s_1,xi_1\n0,0,1\n0,1,1\n0,2,1\n1,0,1\n1,1,1\n1,2,1\n1,3,1\n";
        match parse_demos(ragged.as_bytes()) {
            Err(KmpError::RaggedDemos { lengths }) => assert_eq!(lengths, vec![3, 4]),
            other => panic!("{other:?}"),
        }
        let bad = "demo_id,s_1,xi_1\n0,0,1\n0,x,1\n";
        match parse_demos(bad.as_bytes()) {
            Err(KmpError::Parse { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("{other:?}"),
        }
        assert!(parse_demos("id,s_1,xi_1\n".as_bytes()).is_err());
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 12345.678901234567, f64::MAX] {
            assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn demo_csv_round_trip() {
        let csv = "demo_id,s_1,xi_1\n0,0,0.1\n0,1,0.30000000000000004\n1,0,2\n1,1,3\n";
        let set = parse_demos(csv.as_bytes()).unwrap();
        assert_eq!(parse_demos(demos_to_csv(&set).as_bytes()).unwrap(), set);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
    }
}
