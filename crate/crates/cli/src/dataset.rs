//! CSV ingestion: a z-score file and a covariate file joined on
//! `experiment_id`.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use bbfdr::data::constant_columns;
use bbfdr::{CovariateMatrix, ZScores};
use sha2::{Digest, Sha256};

pub const ID_COLUMN: &str = "experiment_id";

/// A validated dataset. Rows follow the order of the z file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub experiment_ids: Vec<String>,
    pub z: ZScores,
    pub x: CovariateMatrix,
    pub feature_names: Vec<String>,
    /// Constant columns removed during ingestion.
    pub dropped_features: Vec<String>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.experiment_ids.len()
    }

    pub fn m(&self) -> usize {
        self.feature_names.len()
    }

    /// SHA-256 over ids, exact z bit patterns, feature names and covariates.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for id in &self.experiment_ids {
            h.update((id.len() as u64).to_le_bytes());
            h.update(id.as_bytes());
        }
        for z in self.z.as_slice() {
            h.update(z.to_bits().to_le_bytes());
        }
        for name in &self.feature_names {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
        }
        h.update(self.x.entries());
        hex::encode(h.finalize())
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))
}

fn id_index(headers: &csv::StringRecord, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == ID_COLUMN)
        .ok_or_else(|| anyhow!("{} has no {ID_COLUMN} column", path.display()))
}

/// Reads both files, aligns rows by id and drops constant covariates.
pub fn ingest(z_path: &Path, x_path: &Path) -> Result<Dataset> {
    let mut zr = reader(z_path)?;
    let headers = zr.headers()?.clone();
    let id_col = id_index(&headers, z_path)?;
    let z_col = headers
        .iter()
        .position(|h| h == "z")
        .ok_or_else(|| anyhow!("{} has no z column", z_path.display()))?;
    let mut ids = Vec::new();
    let mut z = Vec::new();
    let mut seen = HashSet::new();
    for (r, rec) in zr.records().enumerate() {
        let rec = rec.with_context(|| format!("reading {} row {}", z_path.display(), r + 1))?;
        let id = rec.get(id_col).unwrap_or_default().to_string();
        if !seen.insert(id.clone()) {
            bail!("duplicate experiment_id {id:?} at row {} of {}", r + 1, z_path.display());
        }
        let raw = rec.get(z_col).unwrap_or_default();
        let value: f64 = raw
            .parse()
            .map_err(|_| anyhow!("unparseable z {raw:?} at row {}, column z", r + 1))?;
        if !value.is_finite() {
            bail!("non-finite z {raw:?} at row {}, column z", r + 1);
        }
        ids.push(id);
        z.push(value);
    }
    if ids.is_empty() {
        bail!("{} contains no experiments", z_path.display());
    }

    let mut xr = reader(x_path)?;
    let headers = xr.headers()?.clone();
    let x_id = id_index(&headers, x_path)?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != x_id)
        .map(|(_, h)| h.to_string())
        .collect();
    let mut unique = HashSet::new();
    if let Some(dup) = names.iter().find(|n| !unique.insert(n.as_str())) {
        bail!("duplicate feature name {dup:?} in {}", x_path.display());
    }
    if names.is_empty() {
        bail!("{} has no covariate columns", x_path.display());
    }
    let mut rows: HashMap<String, Vec<u8>> = HashMap::with_capacity(ids.len());
    for (r, rec) in xr.records().enumerate() {
        let rec = rec.with_context(|| format!("reading {} row {}", x_path.display(), r + 1))?;
        if rec.len() != headers.len() {
            bail!("row {} of {} has {} fields, expected {}", r + 1, x_path.display(), rec.len(), headers.len());
        }
        let id = rec.get(x_id).unwrap_or_default().to_string();
        let mut row = Vec::with_capacity(names.len());
        for (c, field) in rec.iter().enumerate().filter(|&(c, _)| c != x_id) {
            let value = match field {
                "0" => 0,
                "1" => 1,
                other => bail!("non-binary covariate at row {}, column {}: {other:?}", r + 1, headers.get(c).unwrap_or_default()),
            };
            row.push(value);
        }
        if rows.insert(id.clone(), row).is_some() {
            bail!("duplicate experiment_id {id:?} at row {} of {}", r + 1, x_path.display());
        }
    }
    let mut entries = Vec::with_capacity(ids.len() * names.len());
    for id in &ids {
        let row = rows
            .remove(id)
            .ok_or_else(|| anyhow!("experiment_id {id:?} is missing from {}", x_path.display()))?;
        entries.extend(row);
    }
    if let Some(extra) = rows.keys().min() {
        bail!("experiment_id {extra:?} appears in {} but not in {}", x_path.display(), z_path.display());
    }

    let (n, m) = (ids.len(), names.len());
    let constant = constant_columns(n, m, &entries);
    let dropped: Vec<String> = constant.iter().map(|&c| names[c].clone()).collect();
    for name in &dropped {
        log::warn!("dropping constant covariate {name}");
    }
    let kept: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|(c, _)| !constant.contains(c))
        .map(|(_, n)| n.clone())
        .collect();
    if kept.is_empty() {
        bail!("every covariate is constant");
    }
    let entries: Vec<u8> = entries
        .chunks(m)
        .flat_map(|row| row.iter().enumerate().filter(|(c, _)| !constant.contains(c)).map(|(_, &v)| v))
        .collect();
    Ok(Dataset {
        experiment_ids: ids,
        z: ZScores::new(z)?,
        x: CovariateMatrix::new(n, kept.len(), entries)?,
        feature_names: kept,
        dropped_features: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn files(z: &str, x: &str) -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let (zp, xp) = (dir.path().join("z.csv"), dir.path().join("x.csv"));
        fs::write(&zp, z).unwrap();
        fs::write(&xp, x).unwrap();
        (dir, zp, xp)
    }

    #[test]
    fn aligns_rows_by_id() {
        let (_d, zp, xp) = files(
            "experiment_id,z\na,1.5\nb,-0.2\nc,3\n",
            "experiment_id,g1,g2\nc,1,0\na,0,1\nb,1,1\n",
        );
        let d = ingest(&zp, &xp).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.x.row(0), &[0, 1]);
        assert_eq!(d.x.row(2), &[1, 0]);
        assert_eq!(d.feature_names, vec!["g1", "g2"]);
    }

    #[test]
    fn non_binary_entry_names_row_and_column() {
        let (_d, zp, xp) = files("experiment_id,z\na,1\nb,2\n", "experiment_id,g1,g2\na,0,1\nb,2,0\n");
        let err = ingest(&zp, &xp).unwrap_err().to_string();
        assert!(err.contains("non-binary covariate at row 2, column g1"), "{err}");
    }

    #[test]
    fn constant_column_is_dropped() {
        let (_d, zp, xp) = files(
            "experiment_id,z\na,1\nb,2\nc,0\n",
            "experiment_id,g1,flat,g3\na,0,1,1\nb,1,1,0\nc,1,1,1\n",
        );
        let d = ingest(&zp, &xp).unwrap();
        assert_eq!(d.m(), 2);
        assert_eq!(d.dropped_features, vec!["flat"]);
        assert_eq!(d.x.row(0), &[0, 1]);
    }

    #[test]
    fn bad_inputs() {
        let (_d, zp, xp) = files("experiment_id,z\na,1\nb,NaN\n", "experiment_id,g\na,0\nb,1\n");
        assert!(ingest(&zp, &xp).unwrap_err().to_string().contains("row 2, column z"));
        let (_d, zp, xp) = files("experiment_id,z\na,1\nb,2\n", "experiment_id,g\na,0\n");
        assert!(ingest(&zp, &xp).unwrap_err().to_string().contains("missing"));
        let (_d, zp, xp) = files("id,z\na,1\n", "experiment_id,g\na,0\n");
        assert!(ingest(&zp, &xp).is_err());
    }

    #[test]
    fn hash_depends_on_content() {
        let (_d, zp, xp) = files("experiment_id,z\na,1\nb,2\n", "experiment_id,g\na,0\nb,1\n");
        let (_e, zq, xq) = files("experiment_id,z\na,1\nb,2.0000001\n", "experiment_id,g\na,0\nb,1\n");
        let (a, b) = (ingest(&zp, &xp).unwrap(), ingest(&zq, &xq).unwrap());
        assert_eq!(a.hash(), ingest(&zp, &xp).unwrap().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
