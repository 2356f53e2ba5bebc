//! Random-forest regression surrogate.
//!
//! Bagged regression trees with per-node feature subsampling and
//! best-SSE axis splits. Prediction uncertainty is the across-tree
//! variance of the individual tree means.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("forest fit needs at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("dimension mismatch: model is {expected}-dimensional, query is {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ForestSettings {
    pub trees_count: usize,
    pub min_leaf: usize,
    pub feature_subsample: f64,
    pub seed: u64,
}

impl Default for ForestSettings {
    fn default() -> Self {
        Self {
            trees_count: 24,
            min_leaf: 3,
            feature_subsample: 0.8,
            seed: 0,
        }
    }
}

enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

pub struct ForestModel {
    trees: Vec<Node>,
    dim: usize,
}

impl ForestModel {
    pub fn fit(
        inputs: &[Vec<f64>],
        outputs: &[f64],
        settings: &ForestSettings,
    ) -> Result<Self, ForestError> {
        assert!(settings.trees_count >= 1);
        assert!(settings.min_leaf >= 1);
        assert!(settings.feature_subsample > 0.0 && settings.feature_subsample <= 1.0);
        let n = inputs.len();
        if n < 2 {
            return Err(ForestError::TooFewObservations(n));
        }
        let dim = inputs[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let trees = (0..settings.trees_count)
            .map(|_| {
                let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                grow(inputs, outputs, &sample, dim, settings, &mut rng)
            })
            .collect();
        Ok(Self { trees, dim })
    }

    pub fn trees_count(&self) -> usize {
        self.trees.len()
    }

    /// Across-tree mean and population variance.
    pub fn predict_with_variance(&self, x: &[f64]) -> Result<(f64, f64), ForestError> {
        if x.len() != self.dim {
            return Err(ForestError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let preds: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        let m = preds.iter().sum::<f64>() / preds.len() as f64;
        let var = preds.iter().map(|p| (p - m).powi(2)).sum::<f64>() / preds.len() as f64;
        Ok((m, var))
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ForestError> {
        self.predict_with_variance(x).map(|(m, _)| m)
    }
}

fn mean_of(outputs: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| outputs[i]).sum::<f64>() / idx.len() as f64
}

fn sse_of(outputs: &[f64], idx: &[usize]) -> f64 {
    let m = mean_of(outputs, idx);
    idx.iter().map(|&i| (outputs[i] - m).powi(2)).sum()
}

fn grow(
    inputs: &[Vec<f64>],
    outputs: &[f64],
    idx: &[usize],
    dim: usize,
    settings: &ForestSettings,
    rng: &mut ChaCha8Rng,
) -> Node {
    let node_sse = sse_of(outputs, idx);
    if idx.len() < 2 * settings.min_leaf || node_sse <= 1e-12 {
        return Node::Leaf(mean_of(outputs, idx));
    }

    let take = ((dim as f64 * settings.feature_subsample).ceil() as usize)
        .clamp(1, dim);
    let mut features: Vec<usize> = (0..dim).collect();
    features.shuffle(rng);
    features.truncate(take);

    let mut best: Option<(f64, usize, f64)> = None; // (sse, feature, threshold)
    for &f in &features {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| inputs[a][f].total_cmp(&inputs[b][f]));
        // incremental SSE scan over split positions
        let total_sum: f64 = order.iter().map(|&i| outputs[i]).sum();
        let total_sq: f64 = order.iter().map(|&i| outputs[i] * outputs[i]).sum();
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for pos in 1..order.len() {
            let y = outputs[order[pos - 1]];
            left_sum += y;
            left_sq += y * y;
            let lo = inputs[order[pos - 1]][f];
            let hi = inputs[order[pos]][f];
            if lo == hi || pos < settings.min_leaf || order.len() - pos < settings.min_leaf {
                continue;
            }
            let nl = pos as f64;
            let nr = (order.len() - pos) as f64;
            let sse = (left_sq - left_sum * left_sum / nl)
                + ((total_sq - left_sq) - (total_sum - left_sum).powi(2) / nr);
            if best.as_ref().map(|(b, _, _)| sse < *b).unwrap_or(true) {
                best = Some((sse, f, (lo + hi) / 2.0));
            }
        }
    }

    match best {
        Some((sse, feature, threshold)) if sse < node_sse => {
            let (li, ri): (Vec<usize>, Vec<usize>) = idx
                .iter()
                .partition(|&&i| inputs[i][feature] <= threshold);
            Node::Split {
                feature,
                threshold,
                left: Box::new(grow(inputs, outputs, &li, dim, settings, rng)),
                right: Box::new(grow(inputs, outputs, &ri, dim, settings, rng)),
            }
        }
        _ => Node::Leaf(mean_of(outputs, idx)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_data(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect();
        let ys = xs
            .iter()
            .map(|x| if x[0] >= 0.6 { 10.0 } else { 2.0 })
            .collect();
        (xs, ys)
    }

    #[test]
    fn recovers_a_step_function() {
        let (xs, ys) = step_data(60);
        let model = ForestModel::fit(&xs, &ys, &ForestSettings::default()).unwrap();
        assert!((model.predict(&[0.9]).unwrap() - 10.0).abs() < 0.5);
        assert!((model.predict(&[0.1]).unwrap() - 2.0).abs() < 0.5);
    }

    #[test]
    fn variance_is_zero_on_constant_outputs() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let ys = vec![4.0; 10];
        let model = ForestModel::fit(&xs, &ys, &ForestSettings::default()).unwrap();
        let (m, v) = model.predict_with_variance(&[3.5]).unwrap();
        assert_eq!(m, 4.0);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let (xs, ys) = step_data(40);
        let s = ForestSettings {
            seed: 7,
            ..Default::default()
        };
        let a = ForestModel::fit(&xs, &ys, &s).unwrap();
        let b = ForestModel::fit(&xs, &ys, &s).unwrap();
        for i in 0..20 {
            let x = [i as f64 / 19.0];
            assert_eq!(
                a.predict_with_variance(&x).unwrap(),
                b.predict_with_variance(&x).unwrap()
            );
        }
    }

    #[test]
    fn min_leaf_is_respected() {
        // with min_leaf = n/2 no split can satisfy both sides, so the
        // forest collapses to bootstrap means
        let (xs, ys) = step_data(10);
        let s = ForestSettings {
            min_leaf: 6,
            trees_count: 5,
            ..Default::default()
        };
        let model = ForestModel::fit(&xs, &ys, &s).unwrap();
        let (a, _) = model.predict_with_variance(&[0.0]).unwrap();
        let (b, _) = model.predict_with_variance(&[1.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_observations_errors() {
        let err = ForestModel::fit(&[vec![0.0]], &[1.0], &ForestSettings::default());
        assert!(matches!(err, Err(ForestError::TooFewObservations(1))));
    }
}
