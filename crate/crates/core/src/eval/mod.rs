//! Rankings, nDCG, the AVF baseline and ensemble selection.

mod ensemble;

pub use ensemble::{
    elect_winner, run_ensemble, DatasetIdentity, EnsembleResult, EnsembleRun, ModelOutcome,
};

use serde::{Deserialize, Serialize};

use crate::data::{BooleanDataset, LabelSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
    pub relevant: bool,
    /// Position of the process in the scored dataset.
    pub row: usize,
}

/// Processes ordered from most to least anomalous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    entries: Vec<RankedEntry>,
    anomaly_count: usize,
}

impl RankingReport {
    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    /// `N`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `k`.
    pub fn anomaly_count(&self) -> usize {
        self.anomaly_count
    }

    pub fn anomaly_ranks(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.relevant)
            .map(|e| e.rank)
            .collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }

    /// A ranking that already is in order, given only the relevance of each
    /// position. Entries get ids `"0"`, `"1"`, … and scores `N − i`.
    pub fn from_relevance(relevance: &[bool]) -> Self {
        let n = relevance.len();
        let entries = relevance
            .iter()
            .enumerate()
            .map(|(i, &relevant)| RankedEntry {
                id: i.to_string(),
                score: (n - i) as f64,
                rank: i + 1,
                relevant,
                row: i,
            })
            .collect();
        Self {
            entries,
            anomaly_count: relevance.iter().filter(|&&r| r).count(),
        }
    }
}

/// Sorts by descending score; equal scores keep their row order.
pub fn rank_processes(scores: &[f64], ids: &[String], labels: &LabelSet) -> Result<RankingReport> {
    if scores.len() != ids.len() {
        return Err(Error::shape(
            "rank_processes",
            format!("{} scores", scores.len()),
            format!("{} ids", ids.len()),
        ));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("score of `{}` is NaN", ids[i])));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let entries: Vec<RankedEntry> = order
        .into_iter()
        .enumerate()
        .map(|(i, row)| RankedEntry {
            id: ids[row].clone(),
            score: scores[row],
            rank: i + 1,
            relevant: labels.contains(&ids[row]),
            row,
        })
        .collect();
    let anomaly_count = entries.iter().filter(|e| e.relevant).count();
    Ok(RankingReport {
        entries,
        anomaly_count,
    })
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// `Σ rel_i / log2(i + 1)` over the full list.
pub fn dcg(ranking: &RankingReport) -> f64 {
    ranking
        .entries
        .iter()
        .filter(|e| e.relevant)
        .map(|e| discount(e.rank))
        .sum()
}

/// DCG of a ranking with all `k` relevant entries on top.
pub fn ideal_dcg(k: usize) -> f64 {
    (1..=k).map(discount).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dcg: f64,
    pub idcg: f64,
    pub ndcg: f64,
    pub anomaly_ranks: Vec<usize>,
}

pub fn ndcg(ranking: &RankingReport) -> Result<MetricsReport> {
    let k = ranking.anomaly_count();
    if k == 0 {
        return Err(Error::Domain(
            "nDCG is undefined for a ranking without anomalies".into(),
        ));
    }
    let dcg = dcg(ranking);
    let idcg = ideal_dcg(k);
    Ok(MetricsReport {
        dcg,
        idcg,
        ndcg: dcg / idcg,
        anomaly_ranks: ranking.anomaly_ranks(),
    })
}

/// Attribute Value Frequency: the mean, over columns, of the fraction of
/// rows sharing the row's value in that column. Lower is more anomalous.
pub fn avf_scores(dataset: &BooleanDataset) -> Result<Vec<f64>> {
    let n = dataset.len();
    let m = dataset.attribute_count();
    if n == 0 {
        return Err(Error::Domain("AVF over an empty dataset".into()));
    }
    if m == 0 {
        return Err(Error::Domain("AVF over a dataset without attributes".into()));
    }
    let mut ones = vec![0u64; m];
    for i in 0..n {
        for &j in dataset.row(i) {
            ones[j as usize] += 1;
        }
    }
    let n64 = n as u64;
    // Integer frequency total for an all-zero row; each set bit swaps the
    // column's zero count for its one count.
    let base: i128 = ones.iter().map(|&c| i128::from(n64 - c)).sum();
    let denom = (n as f64) * (m as f64);
    Ok((0..n)
        .map(|i| {
            let total = dataset.row(i).iter().fold(base, |acc, &j| {
                let c = i128::from(ones[j as usize]);
                acc + 2 * c - i128::from(n64)
            });
            total as f64 / denom
        })
        .collect())
}

/// Ranking by AVF, most anomalous (lowest AVF) first.
pub fn avf_ranking(dataset: &BooleanDataset, labels: &LabelSet) -> Result<RankingReport> {
    let negated: Vec<f64> = avf_scores(dataset)?.into_iter().map(|s| -s).collect();
    let mut ranking = rank_processes(&negated, dataset.ids(), labels)?;
    for e in &mut ranking.entries {
        e.score = -e.score;
    }
    Ok(ranking)
}
