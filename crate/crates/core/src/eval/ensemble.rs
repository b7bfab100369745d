use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ndcg, rank_processes, MetricsReport};
use crate::data::{split_normal, BooleanDataset, LabelSet, View};
use crate::error::{Error, Result};
use crate::models::{fit, Architecture, ModelConfig, TrainedModel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIdentity {
    pub os: String,
    pub scenario: String,
    pub view: View,
}

impl DatasetIdentity {
    pub fn of(dataset: &BooleanDataset) -> Self {
        Self {
            os: dataset.os().to_owned(),
            scenario: dataset.scenario().to_owned(),
            view: dataset.view(),
        }
    }
}

/// What happened to one model of the ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutcome {
    pub architecture: Architecture,
    /// `None` when training diverged.
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
    pub final_loss: Option<f64>,
    pub wall_time: Duration,
}

impl ModelOutcome {
    pub fn ndcg(&self) -> Option<f64> {
        self.metrics.as_ref().map(|m| m.ndcg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub dataset: DatasetIdentity,
    /// In the order the configs were given.
    pub outcomes: Vec<ModelOutcome>,
    pub winner: Architecture,
    pub winner_ndcg: f64,
    /// Labelled ids that do not occur in the dataset.
    pub missing_labels: Vec<String>,
    pub total_time: Duration,
}

impl EnsembleResult {
    pub fn outcome(&self, architecture: Architecture) -> Option<&ModelOutcome> {
        self.outcomes.iter().find(|o| o.architecture == architecture)
    }
}

/// The result together with the fitted models (`None` where training
/// diverged), aligned with `result.outcomes`.
#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub result: EnsembleResult,
    pub models: Vec<Option<TrainedModel>>,
}

/// Highest nDCG wins; among equal values the architecture that comes first
/// in [`Architecture::ALL`] wins. Entries without a score are skipped.
pub fn elect_winner(candidates: &[(Architecture, Option<f64>)]) -> Option<(Architecture, f64)> {
    let mut best: Option<(Architecture, f64)> = None;
    for &(arch, score) in candidates {
        let Some(score) = score else { continue };
        best = match best {
            Some((b, s)) if s > score || (s == score && b <= arch) => Some((b, s)),
            _ => Some((arch, score)),
        };
    }
    best
}

struct Job {
    result: Result<TrainedModel>,
    elapsed: Duration,
}

fn train_one(config: &ModelConfig, train: &BooleanDataset) -> Job {
    let start = Instant::now();
    let result = fit(config, train);
    Job {
        result,
        elapsed: start.elapsed(),
    }
}

/// Trains every configured model on the normal rows, ranks all rows with
/// each and elects the model with the highest nDCG.
pub fn run_ensemble(
    dataset: &BooleanDataset,
    labels: &LabelSet,
    configs: &[ModelConfig],
) -> Result<EnsembleRun> {
    if configs.is_empty() {
        return Err(Error::Config("ensemble needs at least one model config".into()));
    }
    if labels.is_empty() {
        return Err(Error::Domain(
            "ensemble election needs ground-truth labels".into(),
        ));
    }
    for c in configs {
        c.validate()?;
        if c.input_dim != dataset.attribute_count() {
            return Err(Error::shape(
                "run_ensemble",
                format!("{} config with input_dim {}", c.architecture, c.input_dim),
                format!("dataset with {} attributes", dataset.attribute_count()),
            ));
        }
    }
    let start = Instant::now();
    let split = split_normal(dataset, labels);
    let train = &split.train;

    let workers = thread::available_parallelism().map_or(1, |n| n.get());
    let jobs: Vec<Job> = if workers > 1 && configs.len() > 1 {
        thread::scope(|s| {
            let handles: Vec<_> = configs
                .iter()
                .map(|c| s.spawn(move || train_one(c, train)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect()
        })
    } else {
        configs.iter().map(|c| train_one(c, train)).collect()
    };

    let mut outcomes = Vec::with_capacity(configs.len());
    let mut models = Vec::with_capacity(configs.len());
    for (config, job) in configs.iter().zip(jobs) {
        match job.result {
            Ok(model) => {
                let scores = model.score_all(dataset)?;
                let metrics = ndcg(&rank_processes(&scores, dataset.ids(), labels)?)?;
                outcomes.push(ModelOutcome {
                    architecture: config.architecture,
                    metrics: Some(metrics),
                    error: None,
                    final_loss: model.loss_trace().last().map(|p| p.1),
                    wall_time: job.elapsed,
                });
                models.push(Some(model));
            }
            Err(e @ Error::Divergence { .. }) => {
                outcomes.push(ModelOutcome {
                    architecture: config.architecture,
                    metrics: None,
                    error: Some(e.to_string()),
                    final_loss: None,
                    wall_time: job.elapsed,
                });
                models.push(None);
            }
            Err(e) => return Err(e),
        }
    }

    let candidates: Vec<(Architecture, Option<f64>)> =
        outcomes.iter().map(|o| (o.architecture, o.ndcg())).collect();
    let (winner, winner_ndcg) = elect_winner(&candidates)
        .ok_or_else(|| Error::Run("every model in the ensemble diverged".into()))?;
    Ok(EnsembleRun {
        result: EnsembleResult {
            dataset: DatasetIdentity::of(dataset),
            outcomes,
            winner,
            winner_ndcg,
            missing_labels: split.missing_labels,
            total_time: start.elapsed(),
        },
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use Architecture::*;

    #[test]
    fn argmax_of_mocked_scores() {
        assert_eq!(elect_winner(&[(Ae, Some(0.8)), (Aae, Some(0.6))]), Some((Ae, 0.8)));
        assert_eq!(elect_winner(&[(Aae, Some(0.6)), (AtAe, Some(0.9))]), Some((AtAe, 0.9)));
    }

    #[test]
    fn ties_go_to_earlier_architecture() {
        assert_eq!(elect_winner(&[(GruAe, Some(0.7)), (RnnAe, Some(0.7))]), Some((RnnAe, 0.7)));
        assert_eq!(elect_winner(&[(RnnAe, Some(0.7)), (GruAe, Some(0.7))]), Some((RnnAe, 0.7)));
    }

    #[test]
    fn diverged_models_are_skipped() {
        assert_eq!(elect_winner(&[(Ae, None), (LstmAe, Some(0.1))]), Some((LstmAe, 0.1)));
        assert_eq!(elect_winner(&[(Ae, None)]), None);
    }

    fn small() -> (BooleanDataset, LabelSet) {
        generate_synthetic(&SyntheticSpec {
            normal_count: 80,
            anomaly_count: 3,
            attribute_count: 16,
            seed: 2,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    fn configs() -> Vec<ModelConfig> {
        let mut base = ModelConfig::new(Ae, 16);
        base.epochs = 3;
        base.batch_size = 16;
        base.chunk_size = 4;
        Architecture::ALL.iter().map(|&a| base.for_architecture(a)).collect()
    }

    #[test]
    fn six_models_and_a_consistent_winner() {
        let (d, l) = small();
        let run = run_ensemble(&d, &l, &configs()).unwrap();
        let r = &run.result;
        assert_eq!(r.outcomes.len(), 6);
        assert_eq!(run.models.len(), 6);
        let best = r
            .outcomes
            .iter()
            .filter_map(ModelOutcome::ndcg)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.winner_ndcg, best);
        assert_eq!(r.outcome(r.winner).unwrap().ndcg(), Some(best));
        assert_eq!(r.dataset.scenario, "planted");
    }

    #[test]
    fn divergence_is_recorded_not_fatal() {
        let (d, l) = small();
        let mut cs = configs();
        cs[0].learning_rate = f64::MAX;
        let run = run_ensemble(&d, &l, &cs).unwrap();
        let first = &run.result.outcomes[0];
        assert!(first.error.as_deref().unwrap().contains("epoch"), "{first:?}");
        assert!(first.metrics.is_none());
        assert!(run.models[0].is_none());
        assert_ne!(run.result.winner, Ae);
    }

    #[test]
    fn refuses_without_labels() {
        let (d, _) = small();
        assert!(matches!(
            run_ensemble(&d, &LabelSet::new(), &configs()),
            Err(Error::Domain(_))
        ));
    }
}
