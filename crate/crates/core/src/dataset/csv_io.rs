use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{ClassId, Dataset};
use crate::error::{Error, Result};

/// Reads a headed CSV file. Labels in `label_column` are factorized to ids
/// `1..=C` in order of first appearance; every other column must be numeric.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    read_csv(file, label_column)
}

pub fn read_csv<R: Read>(reader: R, label_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingColumn(label_column.to_string()))?;
    let feature_names: Vec<String> =
        header.iter().enumerate().filter(|&(i, _)| i != label_idx).map(|(_, h)| h.clone()).collect();
    if feature_names.is_empty() {
        return Err(Error::data("no feature columns besides the label column"));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut ids: HashMap<String, ClassId> = HashMap::new();
    let mut class_names = BTreeMap::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        // data rows are numbered from 1, after the header
        let row = r + 1;
        if record.len() != header.len() {
            return Err(Error::data(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            if c == label_idx {
                let next = ClassId(ids.len() as u32 + 1);
                let id = *ids.entry(cell.to_string()).or_insert_with(|| {
                    class_names.insert(next, cell.to_string());
                    next
                });
                labels.push(id);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row,
                    column: header[c].clone(),
                    value: cell.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse { row, column: header[c].clone(), value: cell.to_string() });
                }
                values.push(v);
            }
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::data("csv has no data rows"));
    }
    let features = Array2::from_shape_vec((n, feature_names.len()), values)
        .map_err(|e| Error::data(e.to_string()))?;
    Dataset::new(features, labels, feature_names, class_names)
}

/// Writes features plus a trailing label column holding class names.
pub fn write_csv<W: Write>(data: &Dataset, writer: W, label_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.feature_names().iter().map(String::as_str).collect();
    header.push(label_column);
    w.write_record(&header)?;
    for (i, row) in data.features().rows().into_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let label = data.labels()[i];
        rec.push(data.class_name(label).map(str::to_string).unwrap_or_else(|| label.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
    Ok(())
}
