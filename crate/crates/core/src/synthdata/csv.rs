use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledExample, LatentLabels, Provenance, SslDataset};
use crate::error::{Error, Result};

/// Column layout of a numeric CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    /// Label column index; the last column when absent.
    pub label_column: Option<usize>,
    /// Feature columns; every non-label column when absent.
    pub feature_columns: Option<Vec<usize>>,
    /// Label value marking an unlabeled row.
    pub sentinel: i64,
    /// Whether the first row is a header; detected when absent.
    pub header: Option<bool>,
    /// Fraction of each class's labeled rows held out as the test split.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_column: None,
            feature_columns: None,
            sentinel: -1,
            header: None,
            test_fraction: 0.0,
            seed: 0,
        }
    }
}

struct Row {
    features: Vec<f64>,
    label: Option<usize>,
}

fn read_rows(path: &Path, schema: &CsvSchema) -> Result<Vec<Row>> {
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(::csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let mut rows = Vec::new();
    let mut width = None;
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(index + 1, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if index == 0 {
            let is_header = schema
                .header
                .unwrap_or_else(|| record.iter().any(|f| f.parse::<f64>().is_err()));
            if is_header {
                continue;
            }
        }
        let n = record.len();
        if *width.get_or_insert(n) != n {
            return Err(Error::Parse { line, message: format!("expected {} fields, found {n}", width.unwrap()) });
        }
        let label_col = schema.label_column.unwrap_or(n.saturating_sub(1));
        if label_col >= n || n < 2 {
            return Err(Error::Parse { line, message: format!("label column {label_col} missing") });
        }
        let label_text = &record[label_col];
        let raw_label: i64 = label_text.parse().map_err(|_| Error::Parse {
            line,
            message: format!("label {label_text:?} is not an integer"),
        })?;
        let label = if raw_label == schema.sentinel {
            None
        } else if raw_label < 0 {
            return Err(Error::Parse { line, message: format!("negative label {raw_label}") });
        } else {
            Some(raw_label as usize)
        };
        let columns: Vec<usize> = match &schema.feature_columns {
            Some(cols) => cols.clone(),
            None => (0..n).filter(|c| *c != label_col).collect(),
        };
        let features = columns
            .iter()
            .map(|&c| {
                let text = record.get(c).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("feature column {c} missing"),
                })?;
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::Parse { line, message: format!("feature {text:?} is not a finite number") }),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(Row { features, label });
    }
    Ok(rows)
}

fn csv_error(e: ::csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        ::csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line, message: format!("{other:?}") },
    }
}

/// Loads a dataset; rows labeled with the sentinel become unlabeled with no latent label.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SslDataset> {
    let path = path.as_ref();
    if !(0.0..1.0).contains(&schema.test_fraction) {
        return Err(Error::InvalidInput(format!("test fraction {} outside [0, 1)", schema.test_fraction)));
    }
    let rows = read_rows(path, schema)?;
    let mut by_class: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    let mut unlabeled = Vec::new();
    for row in rows {
        match row.label {
            Some(y) => by_class.entry(y).or_default().push(row.features),
            None => unlabeled.push(row.features),
        }
    }
    if by_class.is_empty() {
        return Err(Error::InvalidDataset(format!("{} has no labeled rows", path.display())));
    }
    let num_classes = by_class.keys().max().map_or(0, |m| m + 1).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(schema.seed);
    let mut labeled = Vec::new();
    let mut test = Vec::new();
    for (label, mut xs) in by_class {
        let held = ((xs.len() as f64 * schema.test_fraction).floor() as usize).min(xs.len() - 1);
        if held > 0 {
            xs.shuffle(&mut rng);
        }
        for (i, features) in xs.into_iter().enumerate() {
            let ex = LabeledExample { features, label };
            if i < held {
                test.push(ex);
            } else {
                labeled.push(ex);
            }
        }
    }
    let latent = LatentLabels::new(vec![None; unlabeled.len()]);
    SslDataset::new(
        num_classes,
        labeled,
        unlabeled,
        latent,
        test,
        Provenance::External { tag: format!("csv:{}", path.display()) },
    )
}

/// Loads fully labeled rows (sentinel rows are skipped), e.g. a test split.
pub fn load_labeled_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Vec<LabeledExample>> {
    Ok(read_rows(path.as_ref(), schema)?
        .into_iter()
        .filter_map(|r| r.label.map(|label| LabeledExample { features: r.features, label }))
        .collect())
}

/// Writes labeled rows, then unlabeled rows with the sentinel label.
/// Feature values use shortest round-trip formatting.
pub fn write_csv(
    path: impl AsRef<Path>,
    labeled: &[LabeledExample],
    unlabeled: &[Vec<f64>],
    sentinel: i64,
) -> Result<()> {
    let dim = labeled
        .first()
        .map(|e| e.features.len())
        .or_else(|| unlabeled.first().map(Vec::len))
        .unwrap_or(0);
    let mut w = ::csv::Writer::from_path(path).map_err(csv_error)?;
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(csv_error)?;
    let rows = labeled
        .iter()
        .map(|e| (&e.features, e.label as i64))
        .chain(unlabeled.iter().map(|x| (x, sentinel)));
    for (x, label) in rows {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, MixtureSpec};
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn sentinel_rows_become_unlabeled() {
        let f = write("0.5,1.0,0\n1.5,-2.0,1\n3.0,3.0,-1\n");
        let d = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(d.labeled().len(), 2);
        assert_eq!(d.unlabeled_features(), &[vec![3.0, 3.0]]);
        assert_eq!(d.latent_labels().get(0), None);
        assert_eq!(d.num_classes(), 2);
    }

    #[test]
    fn header_is_skipped() {
        let f = write("a,b,label\n0.5,1.0,0\n1.5,-2.0,1\n");
        let d = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(d.labeled().len(), 2);
        assert_eq!(d.labeled()[0].features, vec![0.5, 1.0]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = write("x,y,label\n0.5,1.0,0\n1.5,oops,1\n");
        match load_csv(f.path(), &CsvSchema::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let f = write("0.5,1.0,0\n1.5,1\n");
        assert!(matches!(load_csv(f.path(), &CsvSchema::default()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn no_labeled_rows_is_invalid() {
        let f = write("0.5,1.0,-1\n");
        assert!(matches!(load_csv(f.path(), &CsvSchema::default()), Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn custom_columns_and_test_fraction() {
        let mut text = String::from("label,x,y\n");
        for i in 0..20 {
            text.push_str(&format!("{},{},{}\n", i % 2, i, -i));
        }
        let f = write(&text);
        let schema = CsvSchema { label_column: Some(0), test_fraction: 0.25, ..CsvSchema::default() };
        let d = load_csv(f.path(), &schema).unwrap();
        assert_eq!(d.test().len(), 4);
        assert_eq!(d.labeled().len(), 16);
        assert_eq!(d.labeled_per_class(), vec![8, 8]);
        assert_eq!(d, load_csv(f.path(), &schema).unwrap());
    }

    #[test]
    fn export_then_load_reproduces_features() {
        let spec = MixtureSpec::symmetric(3, 2, 3.0, 0.7).unwrap();
        let d = generate(&spec, 3, 40, 5, 2).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(f.path(), d.labeled(), d.unlabeled_features(), -1).unwrap();
        let back = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(back.labeled(), d.labeled());
        assert_eq!(back.unlabeled_features(), d.unlabeled_features());
        let labeled_only = load_labeled_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(labeled_only, d.labeled());
    }
}
