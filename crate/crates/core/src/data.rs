//! Observation tables: covariates, per-species counts, group labels and
//! named diagnostic columns, plus the count preprocessing used by the survey
//! workflow.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("non-numeric value {value:?} in column {column:?} at data row {row}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("non-finite value in column {column:?} at data row {row}")]
    NonFinite { column: String, row: usize },
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("schema assigns no count columns")]
    NoCountColumns,
    #[error("column {0:?} has no role in the schema")]
    UnmappedColumn(String),
    #[error("schema names column {0:?} which is not in the file")]
    MissingColumn(String),
    #[error("at most one group column is allowed, got {0:?}")]
    MultipleGroupColumns(Vec<String>),
    #[error("field {field} has {got} rows, expected {expected}")]
    RowMismatch {
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("negative count {value} for species {species:?} at row {row}")]
    NegativeCount {
        species: String,
        row: usize,
        value: f64,
    },
    #[error("requested {k} species but the table has {available}")]
    TooManySpecies { k: usize, available: usize },
    #[error("k must be positive")]
    ZeroSpecies,
    #[error("group label {0:?} does not occur in the table")]
    UnknownGroup(String),
    #[error("{0} partition is empty")]
    EmptyPartition(&'static str),
    #[error("no diagnostic column named {0:?}")]
    UnknownDiagnostic(String),
}

/// What a CSV column is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnRole {
    Covariate,
    Count,
    Group,
    Diagnostic,
    Ignore,
}

impl std::str::FromStr for ColumnRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "covariate" => Ok(Self::Covariate),
            "count" => Ok(Self::Count),
            "group" => Ok(Self::Group),
            "diagnostic" => Ok(Self::Diagnostic),
            "ignore" => Ok(Self::Ignore),
            other => Err(format!(
                "unknown column role {other:?} (expected covariate, count, group, diagnostic or ignore)"
            )),
        }
    }
}

/// Column name to role mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schema {
    roles: BTreeMap<String, ColumnRole>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, column: impl Into<String>, role: ColumnRole) -> Self {
        self.roles.insert(column.into(), role);
        self
    }

    pub fn insert(&mut self, column: impl Into<String>, role: ColumnRole) {
        self.roles.insert(column.into(), role);
    }

    pub fn role(&self, column: &str) -> Option<ColumnRole> {
        self.roles.get(column).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ColumnRole)> {
        self.roles.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Immutable table of simultaneous observations.
///
/// Rows are observations. `covariates` holds the process covariates,
/// `counts` one column per species.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable<T> {
    covariate_names: Vec<String>,
    covariates: Array2<T>,
    species_names: Vec<String>,
    counts: Array2<T>,
    group_name: Option<String>,
    group_labels: Vec<String>,
    diagnostics: Vec<(String, Array1<T>)>,
}

impl<T: Real> ObservationTable<T> {
    /// Builds a table, checking every structural invariant.
    pub fn new(
        covariate_names: Vec<String>,
        covariates: Array2<T>,
        species_names: Vec<String>,
        counts: Array2<T>,
        group_name: Option<String>,
        group_labels: Vec<String>,
        diagnostics: Vec<(String, Array1<T>)>,
    ) -> Result<Self, DataError> {
        let rows = counts.nrows();
        if counts.ncols() == 0 || species_names.is_empty() {
            return Err(DataError::NoCountColumns);
        }
        let check = |field, got: usize| {
            if got == rows {
                Ok(())
            } else {
                Err(DataError::RowMismatch {
                    field,
                    got,
                    expected: rows,
                })
            }
        };
        check("covariates", covariates.nrows())?;
        check("group_labels", group_labels.len())?;
        for (_, col) in &diagnostics {
            check("diagnostics", col.len())?;
        }
        assert_eq!(covariates.ncols(), covariate_names.len());
        assert_eq!(counts.ncols(), species_names.len());

        let mut seen = HashSet::new();
        let all_names = covariate_names
            .iter()
            .chain(species_names.iter())
            .chain(group_name.iter())
            .chain(diagnostics.iter().map(|(n, _)| n));
        for name in all_names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateColumn(name.clone()));
            }
        }

        let finite = |name: &str, col: ArrayView1<'_, T>| {
            match col.iter().position(|v| !v.is_finite()) {
                Some(row) => Err(DataError::NonFinite {
                    column: name.to_owned(),
                    row,
                }),
                None => Ok(()),
            }
        };
        for (j, name) in covariate_names.iter().enumerate() {
            finite(name, covariates.column(j))?;
        }
        for (j, name) in species_names.iter().enumerate() {
            finite(name, counts.column(j))?;
        }
        for (name, col) in &diagnostics {
            finite(name, col.view())?;
        }

        Ok(Self {
            covariate_names,
            covariates,
            species_names,
            counts,
            group_name,
            group_labels,
            diagnostics,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.counts.nrows()
    }

    pub fn n_species(&self) -> usize {
        self.counts.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> ArrayView2<'_, T> {
        self.covariates.view()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn counts(&self) -> ArrayView2<'_, T> {
        self.counts.view()
    }

    pub fn species_names(&self) -> &[String] {
        &self.species_names
    }

    pub fn group_name(&self) -> Option<&str> {
        self.group_name.as_deref()
    }

    pub fn group_labels(&self) -> &[String] {
        &self.group_labels
    }

    pub fn diagnostics(&self) -> &[(String, Array1<T>)] {
        &self.diagnostics
    }

    pub fn diagnostic(&self, name: &str) -> Result<ArrayView1<'_, T>, DataError> {
        self.diagnostics
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.view())
            .ok_or_else(|| DataError::UnknownDiagnostic(name.to_owned()))
    }

    /// Distinct group labels in order of first appearance.
    pub fn groups(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.group_labels
            .iter()
            .filter(|g| seen.insert(g.as_str()))
            .cloned()
            .collect()
    }

    /// Rows whose label equals `group`, in table order.
    pub fn group_rows(&self, group: &str) -> Vec<usize> {
        (0..self.n_obs())
            .filter(|&i| self.group_labels[i] == group)
            .collect()
    }

    /// Restricts the table to `rows` (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            covariate_names: self.covariate_names.clone(),
            covariates: self.covariates.select(Axis(0), rows),
            species_names: self.species_names.clone(),
            counts: self.counts.select(Axis(0), rows),
            group_name: self.group_name.clone(),
            group_labels: rows.iter().map(|&i| self.group_labels[i].clone()).collect(),
            diagnostics: self
                .diagnostics
                .iter()
                .map(|(n, c)| (n.clone(), c.select(Axis(0), rows)))
                .collect(),
        }
    }

    /// Keeps the species columns at `cols`, in that order.
    pub fn select_species(&self, cols: &[usize]) -> Self {
        Self {
            species_names: cols.iter().map(|&j| self.species_names[j].clone()).collect(),
            counts: self.counts.select(Axis(1), cols),
            ..self.clone()
        }
    }

    /// Same table with the count matrix replaced.
    pub fn with_counts(&self, counts: Array2<T>) -> Result<Self, DataError> {
        assert_eq!(counts.dim(), self.counts.dim(), "count matrix shape changed");
        Self::new(
            self.covariate_names.clone(),
            self.covariates.clone(),
            self.species_names.clone(),
            counts,
            self.group_name.clone(),
            self.group_labels.clone(),
            self.diagnostics.clone(),
        )
    }

    /// Writes the table as CSV. Column order: covariates, counts, group,
    /// diagnostics. Values use the shortest representation that parses back
    /// to the same bits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = Vec::new();
        header.extend(self.covariate_names.iter().map(String::as_str));
        header.extend(self.species_names.iter().map(String::as_str));
        header.extend(self.group_name.as_deref());
        header.extend(self.diagnostics.iter().map(|(n, _)| n.as_str()));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n_obs() {
            record.clear();
            record.extend(self.covariates.row(i).iter().map(|v| v.to_string()));
            record.extend(self.counts.row(i).iter().map(|v| v.to_string()));
            if self.group_name.is_some() {
                record.push(self.group_labels[i].clone());
            }
            record.extend(self.diagnostics.iter().map(|(_, c)| c[i].to_string()));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| DataError::Csv(e.into()))?;
        Ok(())
    }
}

/// Reads a CSV file with one header row. Lines starting with `#` are
/// treated as comments.
pub fn load_table<T: Real>(path: &Path, schema: &Schema) -> Result<ObservationTable<T>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })?;
    read_table(file, schema)
}

pub fn read_table<T: Real, R: Read>(input: R, schema: &Schema) -> Result<ObservationTable<T>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();

    let mut seen = HashSet::new();
    for name in &header {
        if !seen.insert(name.as_str()) {
            return Err(DataError::DuplicateColumn(name.clone()));
        }
    }
    for (name, _) in schema.iter() {
        if !seen.contains(name) {
            return Err(DataError::MissingColumn(name.to_owned()));
        }
    }

    let mut roles = Vec::with_capacity(header.len());
    for name in &header {
        roles.push(
            schema
                .role(name)
                .ok_or_else(|| DataError::UnmappedColumn(name.clone()))?,
        );
    }
    let idx_of = |role| -> Vec<usize> { (0..header.len()).filter(|&j| roles[j] == role).collect() };
    let cov_idx = idx_of(ColumnRole::Covariate);
    let count_idx = idx_of(ColumnRole::Count);
    let group_idx = idx_of(ColumnRole::Group);
    let diag_idx = idx_of(ColumnRole::Diagnostic);
    if count_idx.is_empty() {
        return Err(DataError::NoCountColumns);
    }
    if group_idx.len() > 1 {
        return Err(DataError::MultipleGroupColumns(
            group_idx.iter().map(|&j| header[j].clone()).collect(),
        ));
    }

    let mut cov: Vec<T> = Vec::new();
    let mut counts: Vec<T> = Vec::new();
    let mut diag: Vec<Vec<T>> = vec![Vec::new(); diag_idx.len()];
    let mut labels = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        let parse = |j: usize| -> Result<T, DataError> {
            let raw = record.get(j).unwrap_or("");
            let v: T = raw.parse().map_err(|_| DataError::NonNumeric {
                column: header[j].clone(),
                row: rows,
                value: raw.to_owned(),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(DataError::NonFinite {
                    column: header[j].clone(),
                    row: rows,
                })
            }
        };
        for &j in &cov_idx {
            cov.push(parse(j)?);
        }
        for &j in &count_idx {
            counts.push(parse(j)?);
        }
        for (k, &j) in diag_idx.iter().enumerate() {
            diag[k].push(parse(j)?);
        }
        labels.push(match group_idx.first() {
            Some(&j) => record.get(j).unwrap_or("").to_owned(),
            None => String::new(),
        });
        rows += 1;
    }

    let names = |idx: &[usize]| idx.iter().map(|&j| header[j].clone()).collect::<Vec<_>>();
    ObservationTable::new(
        names(&cov_idx),
        Array2::from_shape_vec((rows, cov_idx.len()), cov).expect("row-major fill"),
        names(&count_idx),
        Array2::from_shape_vec((rows, count_idx.len()), counts).expect("row-major fill"),
        group_idx.first().map(|&j| header[j].clone()),
        labels,
        diag_idx
            .iter()
            .zip(diag)
            .map(|(&j, col)| (header[j].clone(), Array1::from(col)))
            .collect(),
    )
}

/// Replaces every count `y` by `ln(1 + y)`.
pub fn log_transform_counts<T: Real>(table: &ObservationTable<T>) -> Result<ObservationTable<T>, DataError> {
    let counts = table.counts();
    for ((row, j), &v) in counts.indexed_iter() {
        if v < T::zero() {
            return Err(DataError::NegativeCount {
                species: table.species_names()[j].clone(),
                row,
                value: v.as_f64(),
            });
        }
    }
    table.with_counts(counts.mapv(T::ln_1p))
}

/// Keeps the `k` species with the highest total count, most abundant first.
/// Equal totals are ordered by species name.
pub fn select_top_species<T: Real>(table: &ObservationTable<T>, k: usize) -> Result<ObservationTable<T>, DataError> {
    if k == 0 {
        return Err(DataError::ZeroSpecies);
    }
    if k > table.n_species() {
        return Err(DataError::TooManySpecies {
            k,
            available: table.n_species(),
        });
    }
    let order = abundance_order(table);
    Ok(table.select_species(&order[..k]))
}

/// Species indices by descending total count, name ascending on ties.
pub fn abundance_order<T: Real>(table: &ObservationTable<T>) -> Vec<usize> {
    let totals: Vec<T> = table
        .counts()
        .columns()
        .into_iter()
        .map(|c| c.iter().copied().sum())
        .collect();
    let names = table.species_names();
    let mut order: Vec<usize> = (0..table.n_species()).collect();
    order.sort_by(|&a, &b| {
        totals[b]
            .partial_cmp(&totals[a])
            .expect("finite totals")
            .then_with(|| names[a].cmp(&names[b]))
    });
    order
}

/// Splits off the rows labelled `held_out` as the test partition.
pub fn split_by_group<T: Real>(
    table: &ObservationTable<T>,
    held_out: &str,
) -> Result<(ObservationTable<T>, ObservationTable<T>), DataError> {
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..table.n_obs()).partition(|&i| table.group_labels()[i] == held_out);
    if test.is_empty() {
        return Err(DataError::UnknownGroup(held_out.to_owned()));
    }
    if train.is_empty() {
        return Err(DataError::EmptyPartition("train"));
    }
    Ok((table.select_rows(&train), table.select_rows(&test)))
}
