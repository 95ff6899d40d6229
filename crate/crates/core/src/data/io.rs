//! JSON manifest plus dense CSV matrices.
//!
//! ```json
//! {"views": [{"name": "geometric", "file": "geometric.csv"}],
//!  "labels": "labels.csv", "levels": 3, "outputs": 1, "split": "split.csv"}
//! ```
//!
//! Matrix files are UTF-8 CSV with a header row of dimension names. Label
//! files hold integer levels `1..=S`; an empty cell or `NA` marks a missing
//! label. Split files have a single `split` column of `train`/`test`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{MultiViewDataset, Split};
use crate::error::{Result, VgpError};
use crate::ordinal::LabelMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub name: String,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub views: Vec<ViewEntry>,
    pub labels: Option<String>,
    pub levels: usize,
    pub outputs: usize,
    pub split: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: BTreeMap<String, String>,
}

fn csv_err(path: &Path, source: csv::Error) -> VgpError {
    VgpError::Csv {
        path: path.into(),
        source,
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| VgpError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f))
}

/// Reads a numeric CSV with a header row.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = open_csv(path)?;
    let header: Vec<String> = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != header.len() {
            return Err(VgpError::Data(format!(
                "{}: row {r} has {} fields, header has {}",
                path.display(),
                rec.len(),
                header.len()
            )));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                VgpError::Data(format!("{}: row {r}, column {c}: '{field}' is not a number", path.display()))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Ok((header.clone(), DMatrix::from_row_slice(rows, header.len(), &data)))
}

pub fn write_matrix_csv(path: &Path, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| m[(i, j)].to_string())).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| VgpError::io(path, e))
}

fn read_labels(path: &Path, levels: usize, outputs: usize) -> Result<(Vec<String>, LabelMatrix)> {
    let mut rdr = open_csv(path)?;
    let header: Vec<String> = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    if header.len() != outputs {
        return Err(VgpError::Data(format!(
            "{}: {} label columns, manifest declares {outputs} outputs",
            path.display(),
            header.len()
        )));
    }
    let mut cells = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for (c, field) in rec.iter().enumerate() {
            let cell = if field.is_empty() || field.eq_ignore_ascii_case("na") {
                None
            } else {
                let z: i64 = field.parse().map_err(|_| {
                    VgpError::Data(format!("{}: row {r}, column {c}: '{field}' is not an integer level", path.display()))
                })?;
                if z < 1 || z as usize > levels {
                    return Err(VgpError::Data(format!(
                        "{}: label {z} at row {r}, column {c} is outside 1..={levels}",
                        path.display()
                    )));
                }
                Some(z as u32)
            };
            cells.push(cell);
        }
        rows += 1;
    }
    Ok((header, LabelMatrix::new(rows, outputs, levels, cells)?))
}

fn read_single_column(path: &Path) -> Result<Vec<String>> {
    let mut rdr = open_csv(path)?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            Ok(rec.get(0).unwrap_or("").to_string())
        })
        .collect()
}

/// Loads and validates the dataset described by a manifest; relative file
/// names resolve against the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<MultiViewDataset> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| VgpError::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| VgpError::Json {
        path: manifest_path.into(),
        source: e,
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |f: &str| -> PathBuf { base.join(f) };

    if manifest.views.is_empty() {
        return Err(VgpError::Data(format!("{}: manifest lists no views", manifest_path.display())));
    }
    let mut views = Vec::new();
    let mut n = None;
    for entry in &manifest.views {
        let (_, m) = read_matrix_csv(&resolve(&entry.file))?;
        if let Some(n0) = n {
            if m.nrows() != n0 {
                return Err(VgpError::Data(format!(
                    "view '{}' has {} rows, first view has {n0}",
                    entry.name,
                    m.nrows()
                )));
            }
        }
        n = Some(m.nrows());
        views.push(m);
    }
    let n = n.unwrap_or(0);

    let (labels, output_names) = match &manifest.labels {
        Some(f) => {
            if manifest.levels < 2 {
                return Err(VgpError::Data(format!("manifest declares {} levels; need at least 2", manifest.levels)));
            }
            let (names, l) = read_labels(&resolve(f), manifest.levels, manifest.outputs)?;
            if l.rows() != n {
                return Err(VgpError::Data(format!("labels have {} rows, views have {n}", l.rows())));
            }
            (Some(l), names)
        }
        None => (None, Vec::new()),
    };

    let split = match &manifest.split {
        Some(f) => {
            let path = resolve(f);
            let tags = read_single_column(&path)?;
            if tags.len() != n {
                return Err(VgpError::Data(format!("{}: {} split rows, views have {n}", path.display(), tags.len())));
            }
            tags.iter()
                .enumerate()
                .map(|(r, t)| match t.to_ascii_lowercase().as_str() {
                    "train" => Ok(Split::Train),
                    "test" => Ok(Split::Test),
                    other => Err(VgpError::Data(format!("{}: row {r}: unknown split '{other}'", path.display()))),
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => vec![Split::Train; n],
    };

    let mut annotations = BTreeMap::new();
    for (key, f) in &manifest.annotations {
        let (_, m) = read_matrix_csv(&resolve(f))?;
        annotations.insert(key.clone(), m.column(0).iter().copied().collect());
    }

    let ds = MultiViewDataset {
        views,
        view_names: manifest.views.iter().map(|v| v.name.clone()).collect(),
        labels,
        output_names,
        levels: if manifest.labels.is_some() { manifest.levels } else { 0 },
        split,
        annotations,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes every part of the dataset next to a `manifest.json` in `dir` and
/// returns the manifest path.
pub fn write_dataset(dir: &Path, ds: &MultiViewDataset) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| VgpError::io(dir, e))?;
    let mut entries = Vec::new();
    for (name, view) in ds.view_names.iter().zip(&ds.views) {
        let file = format!("{name}.csv");
        let header: Vec<String> = (0..view.ncols()).map(|d| format!("{name}_{d}")).collect();
        write_matrix_csv(&dir.join(&file), &header, view)?;
        entries.push(ViewEntry {
            name: name.clone(),
            file,
        });
    }
    let labels = match &ds.labels {
        Some(l) => {
            let path = dir.join("labels.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
            w.write_record(&ds.output_names).map_err(|e| csv_err(&path, e))?;
            for i in 0..l.rows() {
                w.write_record((0..l.outputs()).map(|c| l.get(i, c).map_or_else(|| "NA".to_string(), |z| z.to_string())))
                    .map_err(|e| csv_err(&path, e))?;
            }
            w.flush().map_err(|e| VgpError::io(&path, e))?;
            Some("labels.csv".to_string())
        }
        None => None,
    };
    let split_path = dir.join("split.csv");
    let mut w = csv::Writer::from_path(&split_path).map_err(|e| csv_err(&split_path, e))?;
    w.write_record(["split"]).map_err(|e| csv_err(&split_path, e))?;
    for s in &ds.split {
        let tag = match s {
            Split::Train => "train",
            Split::Test => "test",
        };
        w.write_record([tag]).map_err(|e| csv_err(&split_path, e))?;
    }
    w.flush().map_err(|e| VgpError::io(&split_path, e))?;

    let mut annotations = BTreeMap::new();
    for (key, vals) in &ds.annotations {
        let file = format!("{key}.csv");
        let m = DMatrix::from_column_slice(vals.len(), 1, vals);
        write_matrix_csv(&dir.join(&file), std::slice::from_ref(key), &m)?;
        annotations.insert(key.clone(), file);
    }

    let manifest = Manifest {
        views: entries,
        labels,
        levels: ds.levels,
        outputs: ds.outputs(),
        split: Some("split.csv".into()),
        annotations,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| VgpError::Json {
        path: path.clone(),
        source: e,
    })?;
    std::fs::write(&path, text + "\n").map_err(|e| VgpError::io(&path, e))?;
    Ok(path)
}
