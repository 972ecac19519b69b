//! Dataset files: `data.csv` (header `domain,label,x0,...`) next to a JSON
//! sidecar `meta.json` holding the input shape, class count and domain list.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::error::{Error, Result};

pub const CSV_FILE: &str = "data.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    input_shape: Vec<usize>,
    num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domains: Option<Vec<String>>,
}

/// Shortest form is not required; 17 significant digits always round-trip.
fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn save_dataset(ds: &DomainDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        input_shape: ds.input_shape().to_vec(),
        num_classes: ds.num_classes(),
        domains: Some(ds.domain_names().to_vec()),
    };
    let meta_path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).map_err(|source| Error::Json {
        path: meta_path.clone(),
        source,
    })?;
    std::fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;

    let csv_path = dir.join(CSV_FILE);
    let csv_err = |e: csv::Error| Error::io(&csv_path, e.into());
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    let mut header = vec!["domain".to_string(), "label".to_string()];
    header.extend((0..ds.width()).map(|k| format!("x{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..ds.len() {
        let mut record = vec![ds.domain_of(i).to_string(), ds.labels()[i].to_string()];
        record.extend(ds.row(i).iter().map(|&v| format_f64(v)));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))
}

/// Reads a dataset directory and validates it. Rows are reported by their
/// 1-based line number in `data.csv`.
pub fn load_dataset(dir: &Path) -> Result<DomainDataset> {
    let meta_path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: meta_path.clone(),
        source,
    })?;
    let width: usize = meta.input_shape.iter().product();
    if width == 0 {
        return Err(Error::Parse {
            row: 0,
            message: format!("sidecar input_shape {:?} is empty", meta.input_shape),
        });
    }

    let csv_path = dir.join(CSV_FILE);
    let mut r = csv::Reader::from_path(&csv_path).map_err(|e| Error::io(&csv_path, e.into()))?;
    let header = r.headers().map_err(|e| Error::Parse {
        row: 1,
        message: e.to_string(),
    })?;
    let expected: Vec<String> = ["domain".to_string(), "label".to_string()]
        .into_iter()
        .chain((0..width).map(|k| format!("x{k}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse {
            row: 1,
            message: format!(
                "header has {} feature columns, sidecar shape {:?} needs {width}",
                header.len().saturating_sub(2),
                meta.input_shape
            ),
        });
    }

    let mut names: Vec<String> = meta.domains.clone().unwrap_or_default();
    let mut index: HashMap<String, usize> = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    let (mut x, mut y, mut domain) = (Vec::new(), Vec::new(), Vec::new());
    for record in r.records() {
        let record = record.map_err(|e| Error::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let parse = |message: String| Error::Parse { row, message };
        if record.len() != width + 2 {
            return Err(parse(format!("expected {} fields, found {}", width + 2, record.len())));
        }
        let name = &record[0];
        let d = match index.get(name) {
            Some(&d) => d,
            None if meta.domains.is_none() => {
                names.push(name.to_string());
                index.insert(name.to_string(), names.len() - 1);
                names.len() - 1
            }
            None => return Err(parse(format!("unknown domain {name:?}"))),
        };
        let label: usize = record[1]
            .parse()
            .map_err(|_| parse(format!("label {:?} is not a class index", &record[1])))?;
        if label >= meta.num_classes {
            return Err(parse(format!("label {label} ≥ num_classes {}", meta.num_classes)));
        }
        for field in record.iter().skip(2) {
            let v: f64 = field.parse().map_err(|_| parse(format!("{field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(parse(format!("non-finite value {field:?}")));
            }
            x.push(v);
        }
        y.push(label);
        domain.push(d);
    }
    let ds = DomainDataset::new(x, meta.input_shape, y, domain, names, meta.num_classes)?;
    for (d, c) in ds.missing_pairs() {
        log::warn!("{}: class {c} has no samples in domain {d}", csv_path.display());
    }
    Ok(ds)
}
