//! SGD training loop with run modes (plain cross-entropy, standard dropout,
//! dropout-pair distillation in any flow mode, label smoothing, and the
//! extra-KD collaboration hook), step learning-rate schedule, and
//! deterministic evaluation.
//!
//! Randomness contract: one run seed pins everything. Shuffle seeds derive
//! from (seed, epoch); mask seeds derive from (seed, counter) where the
//! counter advances per sampled mask. Mask draws are consumed in dropout
//! modes even when `lambda_sdd` is zero, so the zero-weight run is
//! bit-identical to the plain cross-entropy run.

use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, Tensor};
use crate::data::{batch_iter, gather_batch, split_train_val, Dataset};
use crate::distill::{cross_entropy, label_smoothing_loss, sdd_loss, total_loss, DistillLossSpec};
use crate::error::{Error, Result};
use crate::model::{
    forward_features, head_forward, init_model, masked_head_forward, plain_forward, sample_mask,
    standard_dropout_forward, ModelSpec, Parameters,
};
use crate::rng::derive_seed;

const SALT_SPLIT: u64 = 0x5350_4c49;
const SALT_SHUFFLE: u64 = 0x5348_5546;
const SALT_MASK: u64 = 0x4d41_534b;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    CrossEntropy,
    StandardDropout,
    #[default]
    SdDropout,
    LabelSmoothing,
    SdDropoutExtraKd,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RunMode::CrossEntropy => "cross-entropy",
            RunMode::StandardDropout => "standard-dropout",
            RunMode::SdDropout => "sd-dropout",
            RunMode::LabelSmoothing => "label-smoothing",
            RunMode::SdDropoutExtraKd => "sd-dropout-extra-kd",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub seed: u64,
    pub run_mode: RunMode,
    /// Dropout rate (drop probability) for the sampling masks.
    pub beta: f64,
    pub val_fraction: f64,
    /// Filled from the top-level distillation section when loaded from a
    /// config file; not a `[train]` key.
    #[serde(skip)]
    pub distill: DistillLossSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 200,
            batch_size: 128,
            milestones: vec![100, 150],
            gamma: 0.1,
            seed: 7,
            run_mode: RunMode::SdDropout,
            beta: 0.5,
            val_fraction: 0.2,
            distill: DistillLossSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::InvalidArgument {
                what: "train config",
                why: format!("lr must be positive, got {}", self.lr),
            });
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument {
                what: "train config",
                why: format!("momentum must be in [0, 1), got {}", self.momentum),
            });
        }
        if self.weight_decay < 0.0 || self.gamma <= 0.0 {
            return Err(Error::InvalidArgument {
                what: "train config",
                why: "weight_decay must be >= 0 and gamma > 0".into(),
            });
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument {
                what: "train config",
                why: "epochs and batch_size must be at least 1".into(),
            });
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument {
                what: "train config",
                why: format!(
                    "milestones must be strictly increasing: {:?}",
                    self.milestones
                ),
            });
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument {
                what: "train config",
                why: format!("beta must be in [0, 1), got {}", self.beta),
            });
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidArgument {
                what: "train config",
                why: format!("val_fraction must be in [0, 1), got {}", self.val_fraction),
            });
        }
        self.distill.validate()
    }
}

/// lr * gamma^(number of milestones <= epoch); non-increasing in epoch.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    let passed = config.milestones.iter().filter(|m| **m <= epoch).count();
    config.lr * config.gamma.powi(passed as i32)
}

/// Momentum buffer per parameter entry.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &Parameters) -> OptimizerState {
        OptimizerState {
            velocity: params
                .entries
                .iter()
                .map(|e| vec![0.0; e.values.len()])
                .collect(),
        }
    }
}

/// g' = g + weight_decay * theta; v <- momentum * v + g'; theta <- theta - lr * v.
pub fn sgd_step(
    params: &mut Parameters,
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    for ((entry, grad), velocity) in params
        .entries
        .iter_mut()
        .zip(grads)
        .zip(&mut state.velocity)
    {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                name: entry.name.clone(),
            });
        }
        for ((theta, g), v) in entry.values.iter_mut().zip(grad).zip(velocity.iter_mut()) {
            let g = g + weight_decay * *theta;
            *v = momentum * *v + g;
            *theta -= lr * *v;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub log: Vec<EpochMetrics>,
    /// Parameter snapshots taken at the end of each milestone epoch.
    pub milestone_params: Vec<(usize, Parameters)>,
}

struct MaskSeeds {
    base: u64,
    counter: u64,
}

impl MaskSeeds {
    fn next(&mut self) -> u64 {
        let s = derive_seed(self.base, SALT_MASK, self.counter);
        self.counter += 1;
        s
    }
}

fn batch_loss(
    spec: &ModelSpec,
    params: &Parameters,
    xs: Vec<f64>,
    labels: &[usize],
    config: &TrainConfig,
    masks: &mut MaskSeeds,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let leaves = params.leaves()?;
    let rows = labels.len();
    let x = Tensor::matrix(rows, spec.input_dim, xs)?;

    let loss = match config.run_mode {
        RunMode::CrossEntropy => {
            let logits = plain_forward(spec, &leaves, &x)?;
            cross_entropy(&logits, labels)?
        }
        RunMode::LabelSmoothing => {
            let logits = plain_forward(spec, &leaves, &x)?;
            label_smoothing_loss(&logits, labels, config.distill.label_smoothing_alpha)?
        }
        RunMode::StandardDropout => {
            let logits =
                standard_dropout_forward(spec, &leaves, &x, config.beta, masks.next(), true)?;
            cross_entropy(&logits, labels)?
        }
        RunMode::SdDropout | RunMode::SdDropoutExtraKd => {
            let feat = forward_features(spec, &leaves, &x)?;
            let clean_logits = head_forward(spec, &leaves, &feat)?;
            let ce = cross_entropy(&clean_logits, labels)?;
            let u = sample_mask(spec.feature_dim(), config.beta, masks.next())?;
            let v = sample_mask(spec.feature_dim(), config.beta, masks.next())?;
            let logits_u = masked_head_forward(spec, &leaves, &feat, &u)?;
            let logits_v = masked_head_forward(spec, &leaves, &feat, &v)?;
            let sdd = sdd_loss(
                &logits_u,
                &logits_v,
                config.distill.temperature,
                config.distill.flow_mode,
            )?;
            let kd = if config.run_mode == RunMode::SdDropoutExtraKd {
                // The collaboration hook fed with the one in-scope auxiliary
                // objective; any externally computed scalar slots in the
                // same way.
                Some(label_smoothing_loss(
                    &clean_logits,
                    labels,
                    config.distill.label_smoothing_alpha,
                )?)
            } else {
                None
            };
            total_loss(&ce, &sdd, kd.as_ref(), &config.distill)?
        }
    };

    let grads = backward(&loss)?;
    let grad_vecs: Vec<Vec<f64>> = leaves
        .tensors
        .iter()
        .map(|leaf| grads.get_or_zeros(leaf))
        .collect();
    Ok((loss.scalar_value(), grad_vecs))
}

/// Run the full training loop on `data` (internally split into train/val),
/// logging per-epoch loss, accuracies, and learning rate.
pub fn train_run(spec: &ModelSpec, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    spec.validate()?;
    config.validate()?;
    if data.dim() != spec.input_dim {
        return Err(Error::ShapeMismatch {
            op: "train_run",
            lhs: vec![data.len(), data.dim()],
            rhs: vec![data.len(), spec.input_dim],
        });
    }
    if data.num_classes() > spec.num_classes() {
        return Err(Error::InvalidArgument {
            what: "train_run",
            why: format!(
                "dataset has {} classes but the model head emits {}",
                data.num_classes(),
                spec.num_classes()
            ),
        });
    }

    let (train, val) = split_train_val(
        data,
        config.val_fraction,
        derive_seed(config.seed, SALT_SPLIT, 0),
    )?;
    let mut params = init_model(spec, config.seed)?;
    let mut state = OptimizerState::new(&params);
    let mut masks = MaskSeeds {
        base: config.seed,
        counter: 0,
    };
    let mut log = Vec::with_capacity(config.epochs);
    let mut milestone_params = Vec::new();

    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(config, epoch);
        let batches = batch_iter(
            &train,
            config.batch_size,
            derive_seed(config.seed, SALT_SHUFFLE, epoch as u64),
        );
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in batches.iter().enumerate() {
            let (xs, labels) = gather_batch(&train, batch);
            let (loss, grads) = batch_loss(spec, &params, xs, &labels, config, &mut masks)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::DivergedLoss {
                        epoch,
                        batch: batch_idx,
                    },
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += loss * labels.len() as f64;
            sgd_step(
                &mut params,
                &grads,
                &mut state,
                lr,
                config.momentum,
                config.weight_decay,
            )?;
        }
        let train_eval = evaluate(spec, &params, &train)?;
        let val_eval = evaluate(spec, &params, &val)?;
        log.push(EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_acc: train_eval.accuracy,
            val_acc: val_eval.accuracy,
        });
        if config.milestones.contains(&epoch) {
            milestone_params.push((epoch, params.clone()));
        }
    }

    Ok(TrainOutcome {
        params,
        log,
        milestone_params,
    })
}

/// Per-example evaluation record retained for the metrics suite.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    /// Max-softmax probability at T = 1.
    pub confidence: f64,
    pub correct: bool,
    pub label: usize,
    pub predicted: usize,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub accuracy: f64,
    pub records: Vec<EvalRecord>,
}

impl EvalOutcome {
    pub fn confidence_correct(&self) -> Vec<(f64, bool)> {
        self.records
            .iter()
            .map(|r| (r.confidence, r.correct))
            .collect()
    }
}

/// Dropout-free forward over the dataset; argmax prediction with ties going
/// to the first class.
pub fn evaluate(spec: &ModelSpec, params: &Parameters, data: &Dataset) -> Result<EvalOutcome> {
    let mut records = Vec::with_capacity(data.len());
    let mut correct_count = 0usize;
    let chunk = 256usize;
    let mut i = 0usize;
    while i < data.len() {
        let hi = (i + chunk).min(data.len());
        let indices: Vec<usize> = (i..hi).collect();
        let (xs, labels) = gather_batch(data, &indices);
        let leaves = params.leaves()?;
        let x = Tensor::matrix(indices.len(), spec.input_dim, xs)?;
        let logits = plain_forward(spec, &leaves, &x)?;
        let probs = logits.softmax_last()?;
        let classes = spec.num_classes();
        for (row, &label) in labels.iter().enumerate() {
            let row_logits = &logits.values()[row * classes..(row + 1) * classes];
            let row_probs = &probs.values()[row * classes..(row + 1) * classes];
            let mut predicted = 0usize;
            for (j, v) in row_logits.iter().enumerate() {
                if *v > row_logits[predicted] {
                    predicted = j;
                }
            }
            let correct = predicted == label;
            correct_count += correct as usize;
            records.push(EvalRecord {
                confidence: row_probs[predicted],
                correct,
                label,
                predicted,
                logits: row_logits.to_vec(),
            });
        }
        i = hi;
    }
    Ok(EvalOutcome {
        accuracy: correct_count as f64 / data.len() as f64,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::distill::FlowMode;

    fn small_spec() -> ModelSpec {
        ModelSpec {
            input_dim: 4,
            hidden_dims: vec![8],
            head_dims: vec![3],
            activation: Default::default(),
            dropout_position: None,
        }
    }

    fn quick_config(mode: RunMode, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 32,
            milestones: vec![],
            run_mode: mode,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn lr_schedule_paper_defaults() {
        let config = TrainConfig::default();
        assert_eq!(lr_at_epoch(&config, 0), 0.1);
        assert_eq!(lr_at_epoch(&config, 99), 0.1);
        assert!((lr_at_epoch(&config, 100) - 0.01).abs() < 1e-15);
        assert!((lr_at_epoch(&config, 149) - 0.01).abs() < 1e-15);
        assert!((lr_at_epoch(&config, 150) - 0.001).abs() < 1e-15);
        // Non-increasing in epoch.
        let mut prev = f64::INFINITY;
        for e in 0..200 {
            let lr = lr_at_epoch(&config, e);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    fn one_entry_params(theta: f64) -> Parameters {
        Parameters {
            entries: vec![crate::model::ParamEntry {
                name: "w".into(),
                shape: vec![1],
                values: vec![theta],
            }],
        }
    }

    #[test]
    fn sgd_zero_grad_scales_velocity_only() {
        let mut params = one_entry_params(1.5);
        let mut state = OptimizerState::new(&params);
        state.velocity[0][0] = 2.0;
        sgd_step(&mut params, &[vec![0.0]], &mut state, 0.1, 0.9, 0.0).unwrap();
        assert!((state.velocity[0][0] - 1.8).abs() < 1e-15);
        assert!((params.entries[0].values[0] - (1.5 - 0.18)).abs() < 1e-15);
    }

    #[test]
    fn sgd_two_steps_with_momentum() {
        let mut params = one_entry_params(1.0);
        let mut state = OptimizerState::new(&params);
        sgd_step(&mut params, &[vec![1.0]], &mut state, 0.1, 0.0, 0.0).unwrap();
        assert!((params.entries[0].values[0] - 0.9).abs() < 1e-15);

        let mut params = one_entry_params(1.0);
        let mut state = OptimizerState::new(&params);
        sgd_step(&mut params, &[vec![1.0]], &mut state, 0.1, 0.9, 0.0).unwrap();
        sgd_step(&mut params, &[vec![1.0]], &mut state, 0.1, 0.9, 0.0).unwrap();
        assert!((state.velocity[0][0] - 1.9).abs() < 1e-15);
        assert!((params.entries[0].values[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite_gradient_with_name() {
        let mut params = one_entry_params(1.0);
        let mut state = OptimizerState::new(&params);
        let err = sgd_step(&mut params, &[vec![f64::NAN]], &mut state, 0.1, 0.9, 0.0).unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
    }

    #[test]
    fn lambda_zero_reduction_is_bit_identical_to_cross_entropy() {
        let spec = small_spec();
        let data = gen_blobs(30, 3, 4, 0.8, 11).unwrap();

        let ce = train_run(&spec, &data, &quick_config(RunMode::CrossEntropy, 3)).unwrap();
        let mut sdd_cfg = quick_config(RunMode::SdDropout, 3);
        sdd_cfg.distill.lambda_sdd = 0.0;
        let sdd = train_run(&spec, &data, &sdd_cfg).unwrap();

        for (a, b) in ce.params.entries.iter().zip(&sdd.params.entries) {
            assert_eq!(a.name, b.name);
            let bits_a: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{}", a.name);
        }
        assert_eq!(ce.log, sdd.log);
    }

    #[test]
    fn same_seed_twice_is_bit_identical() {
        let spec = small_spec();
        let data = gen_blobs(20, 3, 4, 0.8, 2).unwrap();
        let cfg = quick_config(RunMode::SdDropout, 2);
        let a = train_run(&spec, &data, &cfg).unwrap();
        let b = train_run(&spec, &data, &cfg).unwrap();
        for (x, y) in a.params.entries.iter().zip(&b.params.entries) {
            let bits_x: Vec<u64> = x.values.iter().map(|v| v.to_bits()).collect();
            let bits_y: Vec<u64> = y.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_x, bits_y);
        }
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn all_run_modes_complete_and_learn_something() {
        let spec = small_spec();
        let data = gen_blobs(40, 3, 4, 0.6, 4).unwrap();
        for mode in [
            RunMode::CrossEntropy,
            RunMode::StandardDropout,
            RunMode::SdDropout,
            RunMode::LabelSmoothing,
            RunMode::SdDropoutExtraKd,
        ] {
            let mut cfg = quick_config(mode, 15);
            cfg.distill.label_smoothing_alpha = 0.1;
            cfg.distill.flow_mode = FlowMode::Both;
            let out = train_run(&spec, &data, &cfg).unwrap();
            assert_eq!(out.log.len(), 15);
            assert!(out.log.iter().all(|m| m.train_loss.is_finite()));
            let final_acc = out.log.last().unwrap().train_acc;
            assert!(final_acc > 0.5, "{mode}: train_acc {final_acc}");
        }
    }

    #[test]
    fn evaluate_counts_against_given_labels() {
        let spec = small_spec();
        let data = gen_blobs(25, 3, 4, 0.3, 8).unwrap();
        let cfg = quick_config(RunMode::CrossEntropy, 20);
        let out = train_run(&spec, &data, &cfg).unwrap();
        let eval = evaluate(&spec, &out.params, &data).unwrap();

        // Brute-force recount of argmax matches.
        let recount = eval
            .records
            .iter()
            .filter(|r| {
                let mut arg = 0;
                for (j, v) in r.logits.iter().enumerate() {
                    if *v > r.logits[arg] {
                        arg = j;
                    }
                }
                arg == r.label
            })
            .count();
        assert!((eval.accuracy - recount as f64 / data.len() as f64).abs() < 1e-15);

        // Permuted labels are honored as given, not remapped.
        let permuted_labels: Vec<usize> = data.labels().iter().map(|l| (l + 1) % 3).collect();
        let permuted = Dataset::new(
            data.features().to_vec(),
            permuted_labels,
            data.dim(),
            data.num_classes(),
            crate::data::Split::Test,
        )
        .unwrap();
        let eval_perm = evaluate(&spec, &out.params, &permuted).unwrap();
        assert!(eval_perm.accuracy < eval.accuracy);
    }

    #[test]
    fn diverged_loss_reports_epoch_and_batch() {
        let spec = small_spec();
        let data = gen_blobs(30, 3, 4, 0.8, 11).unwrap();
        let mut cfg = quick_config(RunMode::CrossEntropy, 5);
        cfg.lr = 1e200; // parameter scale overflows the next forward pass
        let err = train_run(&spec, &data, &cfg).unwrap_err();
        assert!(
            matches!(
                err,
                Error::DivergedLoss { .. } | Error::NonFiniteGradient { .. }
            ),
            "{err}"
        );
    }

    #[test]
    fn sampling_position_ablation_trains() {
        let data = gen_blobs(30, 3, 4, 0.6, 9).unwrap();
        for position in [Some(0), Some(1), None] {
            let spec = ModelSpec {
                input_dim: 4,
                hidden_dims: vec![8, 6],
                head_dims: vec![3],
                activation: Default::default(),
                dropout_position: position,
            };
            let out = train_run(&spec, &data, &quick_config(RunMode::SdDropout, 4)).unwrap();
            assert_eq!(out.log.len(), 4);
            assert!(
                out.log.iter().all(|m| m.train_loss.is_finite()),
                "{position:?}"
            );
        }
    }

    #[test]
    fn run_rejects_mismatched_data() {
        let spec = small_spec();
        let wrong_dim = gen_blobs(10, 3, 5, 0.5, 1).unwrap();
        assert!(train_run(&spec, &wrong_dim, &quick_config(RunMode::CrossEntropy, 1)).is_err());
        let too_many_classes = gen_blobs(10, 4, 4, 0.5, 1).unwrap();
        assert!(train_run(
            &spec,
            &too_many_classes,
            &quick_config(RunMode::CrossEntropy, 1)
        )
        .is_err());
    }
}
