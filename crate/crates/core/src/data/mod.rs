//! Boolean process×attribute datasets: ingestion, view merging, ground-truth
//! labels, normal-only training splits and a synthetic generator.

mod ingest;
mod merge;
mod synth;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub use ingest::{
    export_dense_csv, export_sparse, ingest_dense_csv, ingest_sparse, ingest_sparse_with_dict,
    read_labels, sparse_dict_path, write_labels,
};
pub use merge::merge_views;
pub use synth::{generate_synthetic, SyntheticSpec};

/// Dataset facet: which family of attributes describes each process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    /// ProcessEvent: event types performed by the process.
    #[serde(rename = "PE")]
    Event,
    /// ProcessExec: executable names used to start the process.
    #[serde(rename = "PX")]
    Exec,
    /// ProcessParent: executable names of the parent.
    #[serde(rename = "PP")]
    Parent,
    /// ProcessNetflow: addresses and ports accessed.
    #[serde(rename = "PN")]
    Netflow,
    /// ProcessAll: disjoint union of the four views above.
    #[serde(rename = "PA")]
    All,
}

impl View {
    pub const ALL: [View; 5] = [View::Event, View::Exec, View::Parent, View::Netflow, View::All];

    pub fn code(self) -> &'static str {
        match self {
            View::Event => "PE",
            View::Exec => "PX",
            View::Parent => "PP",
            View::Netflow => "PN",
            View::All => "PA",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pe" | "processevent" => Ok(View::Event),
            "px" | "processexec" => Ok(View::Exec),
            "pp" | "processparent" => Ok(View::Parent),
            "pn" | "processnetflow" => Ok(View::Netflow),
            "pa" | "processall" => Ok(View::All),
            other => Err(Error::Config(format!("unknown view `{other}`"))),
        }
    }
}

/// Identity of a dataset: which view, system and attack scenario it covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub view: View,
    pub os: String,
    pub scenario: String,
}

impl DatasetMeta {
    pub fn new(view: View, os: impl Into<String>, scenario: impl Into<String>) -> Self {
        Self {
            view,
            os: os.into(),
            scenario: scenario.into(),
        }
    }
}

impl Default for DatasetMeta {
    fn default() -> Self {
        Self::new(View::All, "unknown", "unknown")
    }
}

/// Sparse boolean matrix: for every process, the sorted indices of the
/// attributes set to 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BooleanDataset {
    ids: Vec<String>,
    attributes: Vec<String>,
    rows: Vec<Vec<u32>>,
    meta: DatasetMeta,
}

impl BooleanDataset {
    pub fn new(
        ids: Vec<String>,
        attributes: Vec<String>,
        rows: Vec<Vec<u32>>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::shape(
                "BooleanDataset",
                format!("{} ids", ids.len()),
                format!("{} rows", rows.len()),
            ));
        }
        if let Some(dup) = first_duplicate(&ids) {
            return Err(Error::Domain(format!("duplicate process id `{dup}`")));
        }
        if let Some(dup) = first_duplicate(&attributes) {
            return Err(Error::Domain(format!("duplicate attribute `{dup}`")));
        }
        let m = attributes.len();
        let mut rows = rows;
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&last) = row.last() {
                if last as usize >= m {
                    return Err(Error::Domain(format!(
                        "row `{}` references attribute {last} but only {m} exist",
                        ids[i]
                    )));
                }
            }
        }
        Ok(Self {
            ids,
            attributes,
            rows,
            meta,
        })
    }

    pub fn empty(meta: DatasetMeta) -> Self {
        Self {
            ids: Vec::new(),
            attributes: Vec::new(),
            rows: Vec::new(),
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn attribute_count(&self) -> usize {
        self.attributes.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.rows[i]
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn view(&self) -> View {
        self.meta.view
    }

    pub fn os(&self) -> &str {
        &self.meta.os
    }

    pub fn scenario(&self) -> &str {
        &self.meta.scenario
    }

    pub fn with_meta(mut self, meta: DatasetMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Row `i` as a dense 0/1 vector.
    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.attribute_count()];
        for &j in &self.rows[i] {
            out[j as usize] = 1.0;
        }
        out
    }

    /// The selected rows stacked into a `len×m` matrix.
    pub fn dense_batch(&self, indices: &[usize]) -> Matrix {
        let m = self.attribute_count();
        let mut out = Matrix::zeros(indices.len(), m);
        for (r, &i) in indices.iter().enumerate() {
            let row = out.row_mut(r);
            for &j in &self.rows[i] {
                row[j as usize] = 1.0;
            }
        }
        out
    }

    pub fn to_matrix(&self) -> Matrix {
        let all: Vec<usize> = (0..self.len()).collect();
        self.dense_batch(&all)
    }

    pub fn popcount(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    /// A new dataset holding the selected rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> BooleanDataset {
        BooleanDataset {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            attributes: self.attributes.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            meta: self.meta.clone(),
        }
    }
}

fn first_duplicate(values: &[String]) -> Option<&str> {
    let mut seen = HashSet::with_capacity(values.len());
    values
        .iter()
        .find(|v| !seen.insert(v.as_str()))
        .map(String::as_str)
}

/// Ground truth: the ids of the anomalous (attack-related) processes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    ids: BTreeSet<String>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>) -> bool {
        self.ids.insert(id.into())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    /// Label ids that do not name any process of `dataset`.
    pub fn missing_from(&self, dataset: &BooleanDataset) -> Vec<String> {
        let known: HashSet<&str> = dataset.ids().iter().map(String::as_str).collect();
        self.iter()
            .filter(|id| !known.contains(id))
            .map(str::to_owned)
            .collect()
    }

    /// Per-row relevance flags aligned with `dataset`.
    pub fn flags_for(&self, ids: &[String]) -> Vec<bool> {
        ids.iter().map(|id| self.contains(id)).collect()
    }
}

impl<S: Into<String>> FromIterator<S> for LabelSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self {
            ids: iter.into_iter().map(Into::into).collect(),
        }
    }
}

/// Result of [`split_normal`]. The scoring target is the unchanged input
/// dataset.
#[derive(Debug, Clone)]
pub struct NormalSplit {
    /// Rows whose id is not labeled anomalous.
    pub train: BooleanDataset,
    /// Labeled ids that were not found in the dataset.
    pub missing_labels: Vec<String>,
}

/// Drops every labeled process, leaving the normal rows for training.
pub fn split_normal(dataset: &BooleanDataset, labels: &LabelSet) -> NormalSplit {
    let keep: Vec<usize> = (0..dataset.len())
        .filter(|&i| !labels.contains(&dataset.ids()[i]))
        .collect();
    NormalSplit {
        train: dataset.subset(&keep),
        missing_labels: labels.missing_from(dataset),
    }
}

/// Maps attribute names to column indices.
pub(crate) fn attribute_index(attributes: &[String]) -> HashMap<&str, u32> {
    attributes
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_str(), i as u32))
        .collect()
}
