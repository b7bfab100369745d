use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BooleanDataset, DatasetMeta, LabelSet, View};
use crate::error::{Error, Result};

/// Parameters of the planted-anomaly generator.
///
/// Normal rows set attributes in the first half of the vector with
/// probability `normal_density` and in the second half with
/// `background_density`. Anomalous rows share the first-half pattern but set
/// second-half attributes with `anomaly_tail_density`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub normal_count: usize,
    pub anomaly_count: usize,
    pub attribute_count: usize,
    pub normal_density: f64,
    pub anomaly_tail_density: f64,
    pub background_density: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            normal_count: 5000,
            anomaly_count: 10,
            attribute_count: 300,
            normal_density: 0.1,
            anomaly_tail_density: 0.3,
            background_density: 0.005,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// Fraction of anomalous rows among all rows.
    pub fn imbalance_ratio(&self) -> f64 {
        let total = self.normal_count + self.anomaly_count;
        if total == 0 {
            0.0
        } else {
            self.anomaly_count as f64 / total as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open = |name: &str, p: f64| {
            if p > 0.0 && p < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0, 1), got {p}")))
            }
        };
        open("normal_density", self.normal_density)?;
        open("anomaly_tail_density", self.anomaly_tail_density)?;
        if !(0.0..1.0).contains(&self.background_density) {
            return Err(Error::Config(format!(
                "background_density must lie in [0, 1), got {}",
                self.background_density
            )));
        }
        if self.attribute_count < 2 {
            return Err(Error::Config("attribute_count must be at least 2".into()));
        }
        if self.anomaly_count >= self.normal_count {
            return Err(Error::Config(format!(
                "anomalies ({}) must be rarer than normal rows ({})",
                self.anomaly_count, self.normal_count
            )));
        }
        Ok(())
    }
}

/// Generates a ProcessAll-style dataset with the anomalies scattered at
/// random row positions. Identical specs give identical datasets.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(BooleanDataset, LabelSet)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.normal_count + spec.anomaly_count;
    let m = spec.attribute_count;
    let half = m / 2;

    let mut is_anomaly = vec![false; total];
    is_anomaly[..spec.anomaly_count].fill(true);
    is_anomaly.shuffle(&mut rng);

    let width = total.to_string().len().max(5);
    let mut ids = Vec::with_capacity(total);
    let mut rows = Vec::with_capacity(total);
    let mut labels = LabelSet::new();
    for (i, &anomalous) in is_anomaly.iter().enumerate() {
        let id = format!("proc-{i:0width$}");
        let tail = if anomalous {
            spec.anomaly_tail_density
        } else {
            spec.background_density
        };
        let mut row = Vec::new();
        for j in 0..m {
            let p = if j < half { spec.normal_density } else { tail };
            if rng.gen::<f64>() < p {
                row.push(j as u32);
            }
        }
        if anomalous {
            labels.insert(id.clone());
        }
        ids.push(id);
        rows.push(row);
    }
    let attr_width = m.to_string().len().max(3);
    let attributes = (0..m).map(|j| format!("attr-{j:0attr_width$}")).collect();
    let dataset = BooleanDataset::new(
        ids,
        attributes,
        rows,
        DatasetMeta::new(View::All, "synthetic", "planted"),
    )?;
    Ok((dataset, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imbalance_ratio_of_default_spec() {
        let spec = SyntheticSpec::default();
        assert_eq!((spec.normal_count, spec.anomaly_count, spec.attribute_count), (5000, 10, 300));
        // 10 / 5010 ≈ 0.2 %
        assert!((spec.imbalance_ratio() - 0.002).abs() < 1e-5);
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = SyntheticSpec {
            normal_count: 300,
            anomaly_count: 4,
            attribute_count: 40,
            ..SyntheticSpec::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 99, ..spec }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn anomalies_carry_more_ones() {
        let spec = SyntheticSpec::default();
        let (d, labels) = generate_synthetic(&spec).unwrap();
        assert_eq!(d.len(), 5010);
        assert_eq!(labels.len(), 10);
        let (mut an, mut nn, mut a_sum, mut n_sum) = (0usize, 0usize, 0usize, 0usize);
        for i in 0..d.len() {
            if labels.contains(&d.ids()[i]) {
                an += 1;
                a_sum += d.popcount(i);
            } else {
                nn += 1;
                n_sum += d.popcount(i);
            }
        }
        let a_mean = a_sum as f64 / an as f64;
        let n_mean = n_sum as f64 / nn as f64;
        assert!(a_mean >= 2.0 * n_mean, "{a_mean} vs {n_mean}");
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = SyntheticSpec {
            normal_density: 1.0,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&bad).is_err());
        let bad = SyntheticSpec {
            anomaly_count: 6000,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&bad).is_err());
    }
}
