//! `results.json` and `results.csv`.
//!
//! Everything except the `timing` block is a function of the seed, the
//! model configs and the data, so two identical runs give identical bytes
//! once `timing` is removed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{BooleanDataset, LabelSet};
use crate::error::{Error, Result};
use crate::eval::{EnsembleResult, MetricsReport, ModelOutcome};
use crate::models::ModelConfig;

pub const SCHEMA_VERSION: u32 = 1;
pub const JSON_NAME: &str = "results.json";
pub const CSV_NAME: &str = "results.csv";

fn hex_digest(hasher: Sha256) -> String {
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// SHA-256 of the JSON encoding of `configs`.
pub fn config_digest(configs: &[ModelConfig]) -> Result<String> {
    let bytes = serde_json::to_vec(configs)
        .map_err(|e| Error::Format(format!("cannot encode configs: {e}")))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(hex_digest(h))
}

/// SHA-256 over ids, attribute names and set bits.
pub fn dataset_digest(dataset: &BooleanDataset) -> String {
    let mut h = Sha256::new();
    for a in dataset.attributes() {
        h.update(a.as_bytes());
        h.update([0]);
    }
    h.update([1]);
    for (i, id) in dataset.ids().iter().enumerate() {
        h.update(id.as_bytes());
        h.update([0]);
        for j in dataset.row(i) {
            h.update(j.to_le_bytes());
        }
        h.update([1]);
    }
    hex_digest(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBlock {
    pub os: String,
    pub scenario: String,
    pub view: String,
    pub rows: usize,
    pub attributes: usize,
    pub anomalies: usize,
    pub digest: String,
}

impl DatasetBlock {
    pub fn new(dataset: &BooleanDataset, labels: &LabelSet) -> Self {
        Self {
            os: dataset.os().to_owned(),
            scenario: dataset.scenario().to_owned(),
            view: dataset.view().code().to_owned(),
            rows: dataset.len(),
            attributes: dataset.attribute_count(),
            anomalies: dataset.ids().iter().filter(|id| labels.contains(id)).count(),
            digest: dataset_digest(dataset),
        }
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub architecture: String,
    pub status: String,
    pub ndcg: Option<f64>,
    pub dcg: Option<f64>,
    pub idcg: Option<f64>,
    pub anomaly_ranks: Vec<usize>,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

impl ReportRecord {
    pub fn evaluated(name: &str, metrics: &MetricsReport, final_loss: Option<f64>) -> Self {
        Self {
            architecture: name.to_owned(),
            status: "ok".into(),
            ndcg: Some(metrics.ndcg),
            dcg: Some(metrics.dcg),
            idcg: Some(metrics.idcg),
            anomaly_ranks: metrics.anomaly_ranks.clone(),
            final_loss,
            error: None,
        }
    }

    pub fn from_outcome(outcome: &ModelOutcome) -> Self {
        match &outcome.metrics {
            Some(m) => Self::evaluated(outcome.architecture.name(), m, outcome.final_loss),
            None => Self {
                architecture: outcome.architecture.name().to_owned(),
                status: "diverged".into(),
                ndcg: None,
                dcg: None,
                idcg: None,
                anomaly_ranks: Vec::new(),
                final_loss: None,
                error: outcome.error.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerBlock {
    pub architecture: String,
    pub ndcg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingBlock {
    pub total_seconds: f64,
    pub models: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub seed: u64,
    pub config_digest: String,
    pub dataset: DatasetBlock,
    pub records: Vec<ReportRecord>,
    pub baseline: Option<ReportRecord>,
    pub winner: Option<WinnerBlock>,
    pub missing_labels: Vec<String>,
    pub timing: TimingBlock,
}

impl RunReport {
    pub fn new(
        configs: &[ModelConfig],
        dataset: &BooleanDataset,
        labels: &LabelSet,
        records: Vec<ReportRecord>,
    ) -> Result<Self> {
        let seed = configs
            .first()
            .map(|c| c.seed)
            .ok_or_else(|| Error::Config("report needs at least one model config".into()))?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            seed,
            config_digest: config_digest(configs)?,
            dataset: DatasetBlock::new(dataset, labels),
            records,
            baseline: None,
            winner: None,
            missing_labels: labels.missing_from(dataset),
            timing: TimingBlock::default(),
        })
    }

    pub fn from_ensemble(
        result: &EnsembleResult,
        configs: &[ModelConfig],
        dataset: &BooleanDataset,
        labels: &LabelSet,
    ) -> Result<Self> {
        let records = result.outcomes.iter().map(ReportRecord::from_outcome).collect();
        let mut report = Self::new(configs, dataset, labels, records)?;
        report.winner = Some(WinnerBlock {
            architecture: result.winner.name().to_owned(),
            ndcg: result.winner_ndcg,
        });
        report.timing.total_seconds = result.total_time.as_secs_f64();
        for o in &result.outcomes {
            report
                .timing
                .models
                .insert(o.architecture.name().to_owned(), o.wall_time.as_secs_f64());
        }
        Ok(report)
    }

    pub fn with_baseline(mut self, record: ReportRecord) -> Self {
        self.baseline = Some(record);
        self
    }

    pub fn record_time(&mut self, name: &str, elapsed: Duration) {
        self.timing.models.insert(name.to_owned(), elapsed.as_secs_f64());
        self.timing.total_seconds += elapsed.as_secs_f64();
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::Format(format!("cannot encode report: {e}")))
    }

    /// Flat table: one line per record, the baseline last.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = [
            "seed", "os", "scenario", "view", "architecture", "status", "ndcg", "dcg", "idcg",
            "anomaly_ranks", "final_loss", "wall_seconds",
        ];
        let csv_err = |e: csv::Error| Error::Format(format!("cannot encode CSV: {e}"));
        w.write_record(header).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let d = &self.dataset;
        for r in self.records.iter().chain(&self.baseline) {
            let ranks: Vec<String> = r.anomaly_ranks.iter().map(usize::to_string).collect();
            let wall = self.timing.models.get(&r.architecture).copied();
            w.write_record([
                self.seed.to_string(),
                d.os.clone(),
                d.scenario.clone(),
                d.view.clone(),
                r.architecture.clone(),
                r.status.clone(),
                opt(r.ndcg),
                opt(r.dcg),
                opt(r.idcg),
                ranks.join(";"),
                opt(r.final_loss),
                opt(wall),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Format(format!("cannot encode CSV: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub json: PathBuf,
    pub csv: PathBuf,
}

/// Writes `results.json` and `results.csv` into `dir`, creating it if needed.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<ReportPaths> {
    if report.records.is_empty() {
        return Err(Error::Domain("report without any evaluated model".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("cannot create {}", dir.display()), e))?;
    let paths = ReportPaths {
        json: dir.join(JSON_NAME),
        csv: dir.join(CSV_NAME),
    };
    let write = |p: &Path, body: String| {
        fs::write(p, body).map_err(|e| Error::io(format!("cannot write {}", p.display()), e))
    };
    write(&paths.json, report.to_json()?)?;
    write(&paths.csv, report.to_csv()?)?;
    Ok(paths)
}

/// Parses a `results.json` body and drops its `timing` block.
pub fn strip_timing(json: &str) -> Result<serde_json::Value> {
    let mut v: serde_json::Value =
        serde_json::from_str(json).map_err(|e| Error::Format(format!("bad results.json: {e}")))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timing");
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetMeta;
    use crate::eval::{ndcg, RankingReport};
    use crate::models::Architecture;

    fn fixture() -> (BooleanDataset, LabelSet, Vec<ModelConfig>) {
        let d = BooleanDataset::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["x".into(), "y".into()],
            vec![vec![0], vec![], vec![0, 1]],
            DatasetMeta::default(),
        )
        .unwrap();
        let labels: LabelSet = ["c", "ghost"].into_iter().collect();
        (d, labels, vec![ModelConfig::new(Architecture::Ae, 2)])
    }

    #[test]
    fn single_model_report_has_one_record() {
        let (d, l, cs) = fixture();
        let m = ndcg(&RankingReport::from_relevance(&[false, true, false])).unwrap();
        let mut r = RunReport::new(&cs, &d, &l, vec![ReportRecord::evaluated("AE", &m, Some(0.1))]).unwrap();
        r.record_time("AE", Duration::from_millis(1500));
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.dataset.anomalies, 1);
        assert_eq!(r.missing_labels, vec!["ghost"]);
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_report(&r, dir.path()).unwrap();
        let json = fs::read_to_string(&paths.json).unwrap();
        assert!(json.contains("\"schema_version\": 1"));
        assert!(json.contains(&r.config_digest));
        let csv = fs::read_to_string(&paths.csv).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().ends_with(",1.5"));
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn timing_is_separable() {
        let (d, l, cs) = fixture();
        let m = ndcg(&RankingReport::from_relevance(&[true])).unwrap();
        let rec = vec![ReportRecord::evaluated("AE", &m, None)];
        let mut a = RunReport::new(&cs, &d, &l, rec.clone()).unwrap();
        let mut b = RunReport::new(&cs, &d, &l, rec).unwrap();
        a.record_time("AE", Duration::from_secs(1));
        b.record_time("AE", Duration::from_secs(2));
        assert_ne!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(
            strip_timing(&a.to_json().unwrap()).unwrap(),
            strip_timing(&b.to_json().unwrap()).unwrap()
        );
    }

    #[test]
    fn digests_track_inputs() {
        let (d, _, cs) = fixture();
        let mut other = cs.clone();
        other[0].seed = 1;
        assert_ne!(config_digest(&cs).unwrap(), config_digest(&other).unwrap());
        assert_eq!(config_digest(&cs).unwrap().len(), 64);
        assert_ne!(dataset_digest(&d), dataset_digest(&d.subset(&[0, 1])));
    }

    #[test]
    fn empty_report_is_rejected() {
        let (d, l, cs) = fixture();
        let r = RunReport::new(&cs, &d, &l, Vec::new()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&r, dir.path()).is_err());
    }
}
