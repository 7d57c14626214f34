//! Local training: a linear softmax classifier trained by mini-batch SGD on
//! synthetic, label-skewed client data.
//!
//! Parameter layout for `f` features and `C` classes is `C` blocks of `f`
//! weights (class-major), followed by the `C` biases:
//! `[w(0,0) .. w(0,f-1), w(1,0) .. w(C-1,f-1), b(0) .. b(C-1)]`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::streams::{self, Purpose};
use crate::types::{ClientId, ClientUpdate, GlobalModel, ModelParams};

/// Number of parameters of a softmax model over `feature_dim` inputs and
/// `n_classes` outputs.
pub fn model_dim(feature_dim: usize, n_classes: usize) -> usize {
    feature_dim * n_classes + n_classes
}

/// One client's local data `D_ij`, or the held-out test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalDataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    feature_dim: usize,
    n_classes: usize,
}

impl LocalDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyInput);
        }
        if features.len() != labels.len() {
            return Err(Error::InvalidCounts(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let feature_dim = features[0].len();
        if feature_dim == 0 {
            return Err(Error::config("feature_dim", "must be at least 1"));
        }
        for row in &features {
            if row.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    found: row.len(),
                });
            }
            if let Some(index) = row.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteWeight { index });
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::config(
                "labels",
                format!("label {bad} outside [0, {n_classes})"),
            ));
        }
        Ok(Self {
            features,
            labels,
            feature_dim,
            n_classes,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn model_dim(&self) -> usize {
        model_dim(self.feature_dim, self.n_classes)
    }

    /// Per-class label counts.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.n_classes];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.dim() != self.model_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.model_dim(),
                found: params.dim(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: u32,
    /// Coefficient of `0.5 * l2 * |W|^2`; biases are not penalized.
    pub l2_penalty: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 10,
            local_epochs: 1,
            l2_penalty: 0.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("hyper.learning_rate", "must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("hyper.batch_size", "must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("hyper.local_epochs", "must be at least 1"));
        }
        if !(self.l2_penalty.is_finite() && self.l2_penalty >= 0.0) {
            return Err(Error::config("hyper.l2_penalty", "must be non-negative and finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub n_clients: usize,
    pub n_classes: usize,
    pub feature_dim: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// 0 gives IID clients; 1 puts all of a client's mass on two classes.
    pub skew: f64,
    /// Standard deviation of the class mean vectors (features are unit
    /// variance around them).
    pub class_separation: f64,
    pub test_samples: usize,
    pub seed: u64,
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::config("partition.n_clients", "must be at least 1"));
        }
        if self.n_classes == 0 {
            return Err(Error::config("data.n_classes", "must be at least 1"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("data.feature_dim", "must be at least 1"));
        }
        if self.k_min == 0 {
            return Err(Error::config("data.k_min", "must be at least 1"));
        }
        if self.k_min > self.k_max {
            return Err(Error::config("data.k_max", "must be at least k_min"));
        }
        if !(0.0..=1.0).contains(&self.skew) {
            return Err(Error::config("data.skew", "must lie in [0, 1]"));
        }
        if !(self.class_separation.is_finite() && self.class_separation > 0.0) {
            return Err(Error::config("data.class_separation", "must be positive and finite"));
        }
        if self.test_samples == 0 {
            return Err(Error::config("data.test_samples", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub clients: Vec<LocalDataset>,
    pub test: LocalDataset,
}

/// Class-conditional Gaussian data split across clients with label skew.
pub fn synth_partition(cfg: &PartitionConfig) -> Result<Partition> {
    cfg.validate()?;
    let mut rng = streams::stream(cfg.seed, Purpose::Partition, 0, 0);
    let c = cfg.n_classes;

    let mean_dist = Normal::new(0.0, cfg.class_separation)
        .map_err(|e| Error::config("data.class_separation", e.to_string()))?;
    let means: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..cfg.feature_dim).map(|_| mean_dist.sample(&mut rng)).collect())
        .collect();

    let draw = |label: usize, rng: &mut streams::Stream| -> Vec<f64> {
        means[label]
            .iter()
            .map(|m| m + rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    let classes: Vec<usize> = (0..c).collect();
    let mut clients = Vec::with_capacity(cfg.n_clients);
    for _ in 0..cfg.n_clients {
        let k = rng.random_range(cfg.k_min..=cfg.k_max);
        let focus: Vec<usize> = classes.choose_multiple(&mut rng, 2.min(c)).copied().collect();
        let focus_share = 1.0 / focus.len() as f64;
        let proportions: Vec<f64> = (0..c)
            .map(|class| {
                let concentrated = if focus.contains(&class) { focus_share } else { 0.0 };
                (1.0 - cfg.skew) / c as f64 + cfg.skew * concentrated
            })
            .collect();
        let label_dist = WeightedIndex::new(&proportions)
            .map_err(|e| Error::config("data.skew", e.to_string()))?;

        let mut features = Vec::with_capacity(k);
        let mut labels = Vec::with_capacity(k);
        for _ in 0..k {
            let label = label_dist.sample(&mut rng);
            features.push(draw(label, &mut rng));
            labels.push(label);
        }
        clients.push(LocalDataset::new(features, labels, c)?);
    }

    let mut features = Vec::with_capacity(cfg.test_samples);
    let mut labels = Vec::with_capacity(cfg.test_samples);
    for _ in 0..cfg.test_samples {
        let label = rng.random_range(0..c);
        features.push(draw(label, &mut rng));
        labels.push(label);
    }
    let test = LocalDataset::new(features, labels, c)?;
    Ok(Partition { clients, test })
}

fn logits(w: &[f64], x: &[f64], n_classes: usize, out: &mut [f64]) {
    let f = x.len();
    let bias = &w[f * n_classes..];
    for (c, z) in out.iter_mut().enumerate() {
        let row = &w[c * f..(c + 1) * f];
        *z = bias[c] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// In-place softmax; returns log-sum-exp of the input.
fn softmax(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

/// Mean cross-entropy over `batch` plus `0.5 * l2 * |W|^2`.
pub fn loss(params: &ModelParams, data: &LocalDataset, batch: &[usize], l2: f64) -> Result<f64> {
    data.check_params(params)?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let w = params.as_slice();
    let c = data.n_classes;
    let mut z = vec![0.0; c];
    let mut total = 0.0;
    for &i in batch {
        logits(w, &data.features[i], c, &mut z);
        let label_logit = z[data.labels[i]];
        total += softmax(&mut z) - label_logit;
    }
    let penalty: f64 = w[..data.feature_dim * c].iter().map(|v| v * v).sum();
    Ok(total / batch.len() as f64 + 0.5 * l2 * penalty)
}

/// Gradient of [`loss`] with respect to the flattened parameters.
pub fn grad_softmax(
    params: &ModelParams,
    data: &LocalDataset,
    batch: &[usize],
    l2: f64,
) -> Result<Vec<f64>> {
    data.check_params(params)?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let w = params.as_slice();
    let c = data.n_classes;
    let f = data.feature_dim;
    let mut grad = vec![0.0; w.len()];
    let mut p = vec![0.0; c];
    let scale = 1.0 / batch.len() as f64;
    for &i in batch {
        let x = &data.features[i];
        logits(w, x, c, &mut p);
        softmax(&mut p);
        p[data.labels[i]] -= 1.0;
        for (class, &err) in p.iter().enumerate() {
            let e = err * scale;
            for (g, xd) in grad[class * f..(class + 1) * f].iter_mut().zip(x) {
                *g += e * xd;
            }
            grad[f * c + class] += e;
        }
    }
    if l2 != 0.0 {
        for (g, wv) in grad[..f * c].iter_mut().zip(w) {
            *g += l2 * wv;
        }
    }
    Ok(grad)
}

/// `params - eta * grad`.
pub fn sgd_step(params: &ModelParams, grad: &[f64], eta: f64) -> Result<ModelParams> {
    if grad.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: grad.len(),
        });
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::config("learning_rate", "must be positive and finite"));
    }
    let out = params
        .as_slice()
        .iter()
        .zip(grad)
        .map(|(w, g)| w - eta * g)
        .collect();
    ModelParams::new(out)
}

/// Runs `local_epochs` passes of shuffled mini-batch SGD starting from the
/// global model. The final short batch of each epoch is kept.
pub fn local_train<R: Rng + ?Sized>(
    global: &GlobalModel,
    client_id: ClientId,
    data: &LocalDataset,
    hp: &HyperParams,
    rng: &mut R,
) -> Result<ClientUpdate> {
    hp.validate()?;
    data.check_params(&global.params)?;
    let mut params = global.params.clone();
    let mut order: Vec<usize> = (0..data.sample_count()).collect();
    for _ in 0..hp.local_epochs {
        order.shuffle(rng);
        for batch in order.chunks(hp.batch_size) {
            let grad = grad_softmax(&params, data, batch, hp.l2_penalty)?;
            params = sgd_step(&params, &grad, hp.learning_rate)?;
        }
    }
    ClientUpdate::new(client_id, params, data.sample_count() as u64)
}

/// Index of the highest score; ties go to the lowest class index.
fn predict(w: &[f64], x: &[f64], n_classes: usize, scratch: &mut [f64]) -> usize {
    logits(w, x, n_classes, scratch);
    let mut best = 0;
    for c in 1..n_classes {
        if scratch[c] > scratch[best] {
            best = c;
        }
    }
    best
}

/// Fraction of samples in `data` classified correctly by `params`.
pub fn accuracy(params: &ModelParams, data: &LocalDataset) -> Result<f64> {
    data.check_params(params)?;
    let mut scratch = vec![0.0; data.n_classes];
    let correct = data
        .features
        .iter()
        .zip(&data.labels)
        .filter(|(x, &y)| predict(params.as_slice(), x, data.n_classes, &mut scratch) == y)
        .count();
    Ok(correct as f64 / data.sample_count() as f64)
}

pub fn evaluate(model: &GlobalModel, test: &LocalDataset) -> Result<f64> {
    accuracy(&model.params, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(v: Vec<f64>) -> ModelParams {
        ModelParams::new(v).unwrap()
    }

    fn tiny() -> LocalDataset {
        LocalDataset::new(vec![vec![1.0, -2.0]], vec![0], 2).unwrap()
    }

    #[test]
    fn zero_params_bias_gradient_is_prob_minus_one_hot() {
        let data = tiny();
        let g = grad_softmax(&ModelParams::zeros(6).unwrap(), &data, &[0], 0.0).unwrap();
        // softmax(0,0) = (0.5, 0.5), label 0 -> bias grads (-0.5, 0.5),
        // weight grads (p - y) * x.
        assert_eq!(&g[4..], &[-0.5, 0.5]);
        assert_eq!(&g[..4], &[-0.5, 1.0, 0.5, -1.0]);
    }

    #[test]
    fn grad_errors() {
        let data = tiny();
        assert!(matches!(
            grad_softmax(&ModelParams::zeros(6).unwrap(), &data, &[], 0.0),
            Err(Error::EmptyBatch)
        ));
        assert!(matches!(
            grad_softmax(&ModelParams::zeros(5).unwrap(), &data, &[0], 0.0),
            Err(Error::DimensionMismatch { expected: 6, found: 5 })
        ));
    }

    #[test]
    fn l2_excludes_biases() {
        let data = tiny();
        let p = params(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let g0 = grad_softmax(&p, &data, &[0], 0.0).unwrap();
        let g1 = grad_softmax(&p, &data, &[0], 0.5).unwrap();
        for d in 0..4 {
            assert!((g1[d] - g0[d] - 0.5).abs() < 1e-15);
        }
        assert_eq!(g1[4..], g0[4..]);
    }

    #[test]
    fn sgd_step_arithmetic() {
        let out = sgd_step(&params(vec![1.0, 2.0]), &[0.5, -1.0], 0.1).unwrap();
        assert!((out.as_slice()[0] - 0.95).abs() < 1e-15);
        assert!((out.as_slice()[1] - 2.1).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_gradient_is_fixed_point() {
        let p = params(vec![0.3, -0.4]);
        assert_eq!(sgd_step(&p, &[0.0, 0.0], 0.7).unwrap(), p);
    }

    #[test]
    fn sgd_rejects_bad_eta_and_dims() {
        let p = params(vec![0.3, -0.4]);
        assert!(sgd_step(&p, &[0.0, 0.0], 0.0).is_err());
        assert!(sgd_step(&p, &[0.0, 0.0], -1.0).is_err());
        assert!(matches!(sgd_step(&p, &[0.0], 0.1), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_epochs_rejected() {
        let data = tiny();
        let hp = HyperParams {
            local_epochs: 0,
            ..HyperParams::default()
        };
        let g = GlobalModel::initial(ModelParams::zeros(6).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(local_train(&g, ClientId { onu: 1, client: 1 }, &data, &hp, &mut rng).is_err());
    }

    fn separable(n: usize, seed: u64) -> LocalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let sign = if y == 0 { -1.0 } else { 1.0 };
            let x0 = sign * rng.random_range(0.5..2.0);
            let x1 = rng.random_range(-1.0..1.0);
            xs.push(vec![x0, x1]);
            ys.push(y);
        }
        LocalDataset::new(xs, ys, 2).unwrap()
    }

    #[test]
    fn separable_problem_is_learned() {
        let data = separable(60, 3);
        let hp = HyperParams {
            local_epochs: 50,
            ..HyperParams::default()
        };
        let g = GlobalModel::initial(ModelParams::zeros(6).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = local_train(&g, ClientId { onu: 1, client: 1 }, &data, &hp, &mut rng).unwrap();
        assert_eq!(u.sample_count, 60);
        assert!(accuracy(&u.params, &data).unwrap() >= 0.95);
    }

    #[test]
    fn local_train_is_deterministic() {
        let data = separable(23, 4);
        let hp = HyperParams {
            batch_size: 4,
            local_epochs: 3,
            ..HyperParams::default()
        };
        let g = GlobalModel::initial(params(vec![0.1, -0.2, 0.3, 0.0, 0.05, -0.05]));
        let id = ClientId { onu: 2, client: 7 };
        let a = local_train(&g, id, &data, &hp, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = local_train(&g, id, &data, &hp, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evaluate_perfect_model() {
        let data = separable(40, 8);
        // Score class 1 by x0, class 0 by -x0.
        let p = params(vec![-1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(accuracy(&p, &data).unwrap(), 1.0);
    }

    #[test]
    fn evaluate_ties_go_to_class_zero() {
        let xs: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64]).collect();
        let ys: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let data = LocalDataset::new(xs, ys, 3).unwrap();
        let acc = accuracy(&ModelParams::zeros(6).unwrap(), &data).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_frozen_fixture() {
        // 2 features, 3 classes. Scores z_c = w_c . x + b_c with
        // w_0 = (1, 0), w_1 = (0, 1), w_2 = (-1, -1), b = (0, 0, 0.5).
        let p = params(vec![1.0, 0.0, 0.0, 1.0, -1.0, -1.0, 0.0, 0.0, 0.5]);
        let xs = vec![
            vec![2.0, 1.0],   // z = (2, 1, -2.5)    -> 0
            vec![0.0, 3.0],   // z = (0, 3, -2.5)    -> 1
            vec![-1.0, -1.0], // z = (-1, -1, 2.5)   -> 2
            vec![1.0, 1.0],   // z = (1, 1, -1.5)    -> 0 (tie)
            vec![0.5, 0.2],   // z = (.5, .2, -.2)   -> 0
            vec![-0.2, 0.1],  // z = (-.2, .1, .6)   -> 2
            vec![0.0, 0.0],   // z = (0, 0, .5)      -> 2
            vec![0.3, 0.4],   // z = (.3, .4, -.2)   -> 1
        ];
        let ys = vec![0, 1, 2, 1, 0, 1, 2, 0];
        // predictions: 0 1 2 0 0 2 2 1 -> correct at 0,1,2,4,6 = 5 of 8
        let data = LocalDataset::new(xs, ys, 3).unwrap();
        assert_eq!(accuracy(&p, &data).unwrap(), 5.0 / 8.0);
    }

    #[test]
    fn dataset_invariants() {
        assert!(LocalDataset::new(vec![], vec![], 2).is_err());
        assert!(LocalDataset::new(vec![vec![1.0]], vec![0, 1], 2).is_err());
        assert!(LocalDataset::new(vec![vec![f64::INFINITY]], vec![0], 2).is_err());
        assert!(LocalDataset::new(vec![vec![1.0]], vec![2], 2).is_err());
    }

    fn small_partition(skew: f64, seed: u64) -> PartitionConfig {
        PartitionConfig {
            n_clients: 12,
            n_classes: 5,
            feature_dim: 3,
            k_min: 5,
            k_max: 40,
            skew,
            class_separation: 1.0,
            test_samples: 1000,
            seed,
        }
    }

    #[test]
    fn partition_is_deterministic() {
        let a = synth_partition(&small_partition(0.5, 77)).unwrap();
        let b = synth_partition(&small_partition(0.5, 77)).unwrap();
        assert_eq!(a, b);
        let c = synth_partition(&small_partition(0.5, 78)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn partition_counts_in_range() {
        let cfg = small_partition(0.9, 5);
        let p = synth_partition(&cfg).unwrap();
        assert_eq!(p.clients.len(), 12);
        assert!(p.test.sample_count() >= 1000);
        for d in &p.clients {
            assert!((cfg.k_min..=cfg.k_max).contains(&d.sample_count()));
            assert_eq!(d.class_histogram().iter().sum::<usize>(), d.sample_count());
        }
    }

    #[test]
    fn full_skew_concentrates_on_two_classes() {
        let p = synth_partition(&small_partition(1.0, 6)).unwrap();
        for d in &p.clients {
            let used = d.class_histogram().iter().filter(|&&n| n > 0).count();
            assert!(used <= 2);
        }
    }

    #[test]
    fn partition_rejects_bad_config() {
        let mut cfg = small_partition(0.5, 1);
        cfg.k_min = 50;
        assert!(matches!(synth_partition(&cfg), Err(Error::InvalidConfig { .. })));
        let mut cfg = small_partition(1.5, 1);
        cfg.k_min = 1;
        assert!(synth_partition(&cfg).is_err());
    }
}
