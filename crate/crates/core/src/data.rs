//! Datasets, fold assignment, standardization and CSV ingestion.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, select_entries, select_rows};
use crate::rng;

/// A table of `n` observations with covariates `X`, auxiliaries `Z` and a
/// response `Y`. Any block may be absent; present blocks share the row
/// count and contain only finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Option<DMatrix<f64>>,
    z: Option<DMatrix<f64>>,
    y: Option<DVector<f64>>,
    names: ColumnNames,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnNames {
    pub x: Vec<String>,
    pub z: Vec<String>,
    pub y: Option<String>,
}

impl Dataset {
    pub fn new(
        x: Option<DMatrix<f64>>,
        z: Option<DMatrix<f64>>,
        y: Option<DVector<f64>>,
    ) -> Result<Self> {
        let rows: Vec<(&str, usize)> = [
            x.as_ref().map(|m| ("x", m.nrows())),
            z.as_ref().map(|m| ("z", m.nrows())),
            y.as_ref().map(|v| ("y", v.len())),
        ]
        .into_iter()
        .flatten()
        .collect();
        let Some(&(_, n)) = rows.first() else {
            return Err(Error::invalid("dataset has no blocks"));
        };
        if n == 0 {
            return Err(Error::invalid("dataset has no rows"));
        }
        if let Some((name, m)) = rows.iter().find(|(_, m)| *m != n) {
            return Err(Error::shape(format!(
                "block `{name}` has {m} rows, expected {n}"
            )));
        }
        if let Some(m) = &x {
            if !all_finite(m.iter()) {
                return Err(Error::NonFinite("x".into()));
            }
        }
        if let Some(m) = &z {
            if !all_finite(m.iter()) {
                return Err(Error::NonFinite("z".into()));
            }
        }
        if let Some(v) = &y {
            if !all_finite(v.iter()) {
                return Err(Error::NonFinite("y".into()));
            }
        }
        let names = ColumnNames {
            x: default_names("x", x.as_ref().map_or(0, |m| m.ncols())),
            z: default_names("z", z.as_ref().map_or(0, |m| m.ncols())),
            y: y.as_ref().map(|_| "y".to_string()),
        };
        Ok(Self { x, z, y, names })
    }

    /// Full triple `(X, Z, Y)`.
    pub fn triples(x: DMatrix<f64>, z: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        Self::new(Some(x), Some(z), Some(y))
    }

    /// `(X, Y)` without auxiliaries.
    pub fn xy(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        Self::new(Some(x), None, Some(y))
    }

    pub fn with_names(mut self, names: ColumnNames) -> Result<Self> {
        if names.x.len() != self.p_x() || names.z.len() != self.p_z() {
            return Err(Error::shape("column names do not match block widths"));
        }
        self.names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x
            .as_ref()
            .map(|m| m.nrows())
            .or(self.z.as_ref().map(|m| m.nrows()))
            .or(self.y.as_ref().map(|v| v.len()))
            .unwrap_or(0)
    }

    pub fn p_x(&self) -> usize {
        self.x.as_ref().map_or(0, |m| m.ncols())
    }

    pub fn p_z(&self) -> usize {
        self.z.as_ref().map_or(0, |m| m.ncols())
    }

    pub fn has_x(&self) -> bool {
        self.x.is_some()
    }

    pub fn has_z(&self) -> bool {
        self.z.is_some()
    }

    pub fn has_y(&self) -> bool {
        self.y.is_some()
    }

    pub fn x(&self) -> Result<&DMatrix<f64>> {
        self.x.as_ref().ok_or(Error::MissingBlock("x"))
    }

    pub fn z(&self) -> Result<&DMatrix<f64>> {
        self.z.as_ref().ok_or(Error::MissingBlock("z"))
    }

    pub fn y(&self) -> Result<&DVector<f64>> {
        self.y.as_ref().ok_or(Error::MissingBlock("y"))
    }

    pub fn names(&self) -> &ColumnNames {
        &self.names
    }

    /// Rows `rows` in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.n()) {
            return Err(Error::invalid(format!(
                "row {bad} out of range for n = {}",
                self.n()
            )));
        }
        let mut out = Self::new(
            self.x.as_ref().map(|m| select_rows(m, rows)),
            self.z.as_ref().map(|m| select_rows(m, rows)),
            self.y.as_ref().map(|v| select_entries(v, rows)),
        )?;
        out.names = self.names.clone();
        Ok(out)
    }
}

fn default_names(prefix: &str, p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("{prefix}{j}")).collect()
}

/// Up to three observation patterns: full triples, `(X, Z)` pairs and
/// `(Z, Y)` pairs. Absent blocks are empty.
#[derive(Clone, Debug, Default)]
pub struct FusionDataset {
    pub triples: Option<Dataset>,
    pub xz_pairs: Option<Dataset>,
    pub zy_pairs: Option<Dataset>,
}

impl FusionDataset {
    pub fn new(
        triples: Option<Dataset>,
        xz_pairs: Option<Dataset>,
        zy_pairs: Option<Dataset>,
    ) -> Result<Self> {
        if let Some(t) = &triples {
            if !(t.has_x() && t.has_z() && t.has_y()) {
                return Err(Error::invalid("triples block needs x, z and y"));
            }
        }
        if let Some(b) = &xz_pairs {
            if !(b.has_x() && b.has_z()) {
                return Err(Error::invalid("xz block needs x and z"));
            }
        }
        if let Some(b) = &zy_pairs {
            if !(b.has_z() && b.has_y()) {
                return Err(Error::invalid("zy block needs z and y"));
            }
        }
        let p_x: Vec<usize> = [&triples, &xz_pairs]
            .into_iter()
            .flatten()
            .map(|d| d.p_x())
            .collect();
        if p_x.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::shape("p_x differs across blocks"));
        }
        let p_z: Vec<usize> = [&triples, &xz_pairs, &zy_pairs]
            .into_iter()
            .flatten()
            .map(|d| d.p_z())
            .collect();
        if p_z.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::shape("p_z differs across blocks"));
        }
        if p_z.is_empty() {
            return Err(Error::invalid("fusion dataset has no blocks"));
        }
        Ok(Self {
            triples,
            xz_pairs,
            zy_pairs,
        })
    }

    pub fn n(&self) -> usize {
        self.triples.as_ref().map_or(0, |d| d.n())
    }

    pub fn n_xz(&self) -> usize {
        self.xz_pairs.as_ref().map_or(0, |d| d.n())
    }

    pub fn n_yz(&self) -> usize {
        self.zy_pairs.as_ref().map_or(0, |d| d.n())
    }

    pub fn p_x(&self) -> usize {
        self.triples
            .as_ref()
            .or(self.xz_pairs.as_ref())
            .map_or(0, |d| d.p_x())
    }

    pub fn p_z(&self) -> usize {
        [&self.triples, &self.xz_pairs, &self.zy_pairs]
            .into_iter()
            .flatten()
            .map(|d| d.p_z())
            .next()
            .unwrap_or(0)
    }

    pub fn has_pairs(&self) -> bool {
        self.n_xz() + self.n_yz() > 0
    }
}

impl From<Dataset> for FusionDataset {
    fn from(d: Dataset) -> Self {
        Self {
            triples: Some(d),
            xz_pairs: None,
            zy_pairs: None,
        }
    }
}

/// Assignment of `n` rows to `k` folds (ids `0..k`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    fold_of_row: Vec<usize>,
    k: usize,
    seed: u64,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.fold_of_row.len()
    }

    pub fn fold_of_row(&self) -> &[usize] {
        &self.fold_of_row
    }

    pub fn fold_of(&self, row: usize) -> usize {
        self.fold_of_row[row]
    }

    /// Rows in fold `fold`, ascending.
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.fold_of_row[i] == fold)
            .collect()
    }

    /// Rows outside fold `fold`, ascending.
    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.fold_of_row[i] != fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_of_row {
            s[f] += 1;
        }
        s
    }

    /// Assignment from explicit fold ids.
    pub fn from_ids(fold_of_row: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 || fold_of_row.iter().any(|&f| f >= k) {
            return Err(Error::invalid("fold id out of range"));
        }
        let out = Self {
            fold_of_row,
            k,
            seed: 0,
        };
        if out.sizes().contains(&0) {
            return Err(Error::invalid("every fold must be non-empty"));
        }
        Ok(out)
    }
}

/// Random partition of `0..n` into `k` folds whose sizes differ by at most
/// one: a seeded permutation dealt round-robin.
pub fn split_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::invalid(format!("{k} folds requested for {n} rows")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, 0));
    let mut fold_of_row = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        fold_of_row[row] = pos % k;
    }
    Ok(FoldAssignment {
        fold_of_row,
        k,
        seed,
    })
}

/// Per-column centering and population-sd scaling of one block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationSpec {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl StandardizationSpec {
    /// Scales of constant columns are clamped to 1.
    pub fn fit(m: &DMatrix<f64>) -> Self {
        let n = m.nrows() as f64;
        let mut means = Vec::with_capacity(m.ncols());
        let mut scales = Vec::with_capacity(m.ncols());
        for col in m.column_iter() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            means.push(mean);
            scales.push(if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 });
        }
        Self { means, scales }
    }

    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
            (m[(i, j)] - self.means[j]) / self.scales[j]
        })
    }

    pub fn invert(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
            m[(i, j)] * self.scales[j] + self.means[j]
        })
    }
}

/// Standardization of every present block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x: Option<StandardizationSpec>,
    pub z: Option<StandardizationSpec>,
    pub y: Option<StandardizationSpec>,
}

impl Standardization {
    pub fn invert(&self, d: &Dataset) -> Result<Dataset> {
        let x = match (&self.x, &d.x) {
            (Some(s), Some(m)) => Some(s.invert(m)),
            (_, m) => m.clone(),
        };
        let z = match (&self.z, &d.z) {
            (Some(s), Some(m)) => Some(s.invert(m)),
            (_, m) => m.clone(),
        };
        let y = match (&self.y, &d.y) {
            (Some(s), Some(v)) => Some(v.map(|t| t * s.scales[0] + s.means[0])),
            (_, v) => v.clone(),
        };
        let mut out = Dataset::new(x, z, y)?;
        out.names = d.names.clone();
        Ok(out)
    }
}

/// Centers every column and scales it to unit population variance.
pub fn standardize(d: &Dataset) -> Result<(Dataset, Standardization)> {
    if d.n() < 2 {
        return Err(Error::invalid("standardization needs at least 2 rows"));
    }
    let spec_x = d.x.as_ref().map(StandardizationSpec::fit);
    let spec_z = d.z.as_ref().map(StandardizationSpec::fit);
    let spec_y = d
        .y
        .as_ref()
        .map(|v| StandardizationSpec::fit(&DMatrix::from_column_slice(v.len(), 1, v.as_slice())));
    let x = d.x.as_ref().zip(spec_x.as_ref()).map(|(m, s)| s.apply(m));
    let z = d.z.as_ref().zip(spec_z.as_ref()).map(|(m, s)| s.apply(m));
    let y = d.y.as_ref().zip(spec_y.as_ref()).map(|(v, s)| {
        DVector::from_fn(v.len(), |i, _| (v[i] - s.means[0]) / s.scales[0])
    });
    let mut out = Dataset::new(x, z, y)?;
    out.names = d.names.clone();
    Ok((
        out,
        Standardization {
            x: spec_x,
            z: spec_z,
            y: spec_y,
        },
    ))
}

/// Role of a CSV column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    X,
    Z,
    Y,
    Ignore,
}

/// Column-name to role map. Header columns the schema does not mention are
/// ignored.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema(pub HashMap<String, Role>);

impl Schema {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Schema = serde_json::from_str(text)?;
        if s.0.values().filter(|r| **r == Role::Y).count() > 1 {
            return Err(Error::Schema("more than one column has role `y`".into()));
        }
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, Role)>) -> Self {
        Self(pairs.into_iter().map(|(k, r)| (k.to_string(), r)).collect())
    }
}

/// Reads a headed CSV file and routes its columns by `schema`.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    load_csv_allowing(path, schema, &[])
}

/// Like [`load_csv`], but schema columns whose role is listed in
/// `may_be_absent` are skipped when the file lacks them. Used for pair files
/// that carry only part of a shared schema.
pub fn load_csv_allowing(
    path: impl AsRef<Path>,
    schema: &Schema,
    may_be_absent: &[Role],
) -> Result<Dataset> {
    let path = path.as_ref();
    read_block(path, schema, may_be_absent)?
        .ok_or_else(|| Error::invalid(format!("{} has no data rows", path.display())))
}

/// `None` for a file with a header but no data rows.
fn read_block(path: &Path, schema: &Schema, may_be_absent: &[Role]) -> Result<Option<Dataset>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    let mut names: Vec<&String> = schema.0.keys().collect();
    names.sort();
    for name in names {
        let role = schema.0[name];
        if role != Role::Ignore && !header.contains(name) && !may_be_absent.contains(&role) {
            return Err(Error::MissingColumn(name.clone()));
        }
    }

    let routed: Vec<(usize, Role)> = header
        .iter()
        .enumerate()
        .filter_map(|(j, h)| match schema.0.get(h) {
            Some(Role::Ignore) | None => None,
            Some(&r) => Some((j, r)),
        })
        .collect();
    let cols_of = |role| -> Vec<usize> {
        routed
            .iter()
            .filter(|(_, r)| *r == role)
            .map(|(j, _)| *j)
            .collect()
    };
    let (xcols, zcols, ycols) = (cols_of(Role::X), cols_of(Role::Z), cols_of(Role::Y));

    let mut xs = Vec::new();
    let mut zs = Vec::new();
    let mut ys = Vec::new();
    let mut n = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |j: usize| -> Result<f64> {
            let raw = record.get(j).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row: row + 1,
                    column: header[j].clone(),
                    value: raw.to_string(),
                }),
            }
        };
        for &j in &xcols {
            xs.push(parse(j)?);
        }
        for &j in &zcols {
            zs.push(parse(j)?);
        }
        for &j in &ycols {
            ys.push(parse(j)?);
        }
        n += 1;
    }
    if n == 0 {
        return Ok(None);
    }
    let block = |vals: Vec<f64>, p: usize| {
        (p > 0).then(|| DMatrix::from_row_slice(n, p, &vals))
    };
    let x = block(xs, xcols.len());
    let z = block(zs, zcols.len());
    let y = (!ycols.is_empty()).then(|| DVector::from_vec(ys));
    let mut d = Dataset::new(x, z, y)?;
    d.names = ColumnNames {
        x: xcols.iter().map(|&j| header[j].clone()).collect(),
        z: zcols.iter().map(|&j| header[j].clone()).collect(),
        y: ycols.first().map(|&j| header[j].clone()),
    };
    Ok(Some(d))
}

/// Loads a fusion dataset from up to three files sharing one schema. A file
/// with a header and no rows contributes an absent block.
pub fn load_fusion(
    triples: Option<&Path>,
    xz_pairs: Option<&Path>,
    zy_pairs: Option<&Path>,
    schema: &Schema,
) -> Result<FusionDataset> {
    let triples = triples.map(|p| read_block(p, schema, &[])).transpose()?.flatten();
    let xz = xz_pairs
        .map(|p| read_block(p, schema, &[Role::Y]))
        .transpose()?
        .flatten()
        .map(|d| Dataset::new(d.x.clone(), d.z.clone(), None).map(|mut o| {
            o.names = ColumnNames { y: None, ..d.names.clone() };
            o
        }))
        .transpose()?;
    let zy = zy_pairs
        .map(|p| read_block(p, schema, &[Role::X]))
        .transpose()?
        .flatten()
        .map(|d| Dataset::new(None, d.z.clone(), d.y.clone()).map(|mut o| {
            o.names = ColumnNames { x: Vec::new(), ..d.names.clone() };
            o
        }))
        .transpose()?;
    FusionDataset::new(triples, xz, zy)
}
