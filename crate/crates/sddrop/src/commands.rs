//! CLI command implementations. Each command echoes the resolved config to
//! the output directory, runs, and writes its artifacts atomically.
//!
//! Exit protocol: 0 success, 2 config error, 3 runtime abort.

use std::path::PathBuf;

use crate::checkpoint::{load_checkpoint_expecting, save_checkpoint};
use crate::config::RunConfig;
use crate::data::Dataset;
use crate::distill::FlowMode;
use crate::error::{Error, Result};
use crate::kl_analysis::{assumption_stats_pooled, direction_report, pair_jacobian};
use crate::metrics::{corrupt, ece, fgsm_attack, odin_score, ood_metrics};
use crate::model::{sample_mask, Parameters};
use crate::report::{epoch_csv, kv, reliability_csv, write_key_values, write_text};
use crate::rng::derive_seed;
use crate::trainer::{evaluate, train_run, RunMode, TrainConfig};

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 3,
    }
}

fn echo_config(config: &RunConfig) -> Result<()> {
    write_text(
        &config.output_dir.join("resolved-config.toml"),
        &config.to_toml()?,
    )
}

fn load_trained(config: &RunConfig) -> Result<(PathBuf, Parameters)> {
    let path = config.checkpoint_path();
    if !path.is_file() {
        return Err(Error::Config(format!(
            "checkpoint does not exist: {} (train first or set `checkpoint`)",
            path.display()
        )));
    }
    let params = load_checkpoint_expecting(&path, &config.model)?;
    Ok((path, params))
}

fn check_loaded_data(config: &RunConfig, data: &Dataset) -> Result<()> {
    if data.dim() != config.model.input_dim {
        return Err(Error::Config(format!(
            "model input_dim {} does not match loaded dataset dim {}",
            config.model.input_dim,
            data.dim()
        )));
    }
    if data.num_classes() > config.model.num_classes() {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model head emits {}",
            data.num_classes(),
            config.model.num_classes()
        )));
    }
    Ok(())
}

/// Train per config; writes the epoch CSV, the final checkpoint, and one
/// checkpoint per milestone epoch.
pub fn run_train(config: &RunConfig) -> Result<()> {
    echo_config(config)?;
    let data = config.data.load()?;
    check_loaded_data(config, &data)?;
    let outcome = train_run(&config.model, &data, &config.train_config())?;
    write_text(
        &config.output_dir.join("epochs.csv"),
        &epoch_csv(&outcome.log),
    )?;
    for (epoch, params) in &outcome.milestone_params {
        save_checkpoint(
            &config.model,
            params,
            &config
                .output_dir
                .join(format!("checkpoint-epoch{epoch}.ckpt")),
        )?;
    }
    save_checkpoint(&config.model, &outcome.params, &config.checkpoint_path())?;
    Ok(())
}

/// Accuracy, calibration error, and the reliability-diagram CSV.
pub fn run_eval(config: &RunConfig) -> Result<()> {
    echo_config(config)?;
    let (ckpt, params) = load_trained(config)?;
    let data = config.data.load()?;
    check_loaded_data(config, &data)?;
    let eval = evaluate(&config.model, &params, &data)?;
    let (ece_value, bins) = ece(&eval.confidence_correct(), config.eval.bins)?;
    write_text(
        &config.output_dir.join("reliability.csv"),
        &reliability_csv(&bins, config.eval.bins),
    )?;
    write_key_values(
        &config.output_dir.join("eval.kv"),
        &[
            kv("checkpoint", ckpt.display()),
            kv("examples", data.len()),
            kv("accuracy", eval.accuracy),
            kv("ece", ece_value),
            kv("bins", config.eval.bins),
        ],
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".to_string(), |x| x.to_string())
}

/// Assumption statistics and the gradient-direction comparison on a fixed
/// probe batch from the configured dataset.
pub fn run_kl_analyze(config: &RunConfig) -> Result<()> {
    echo_config(config)?;
    let (ckpt, params) = load_trained(config)?;
    let data = config.data.load()?;
    check_loaded_data(config, &data)?;

    let n_probe = config.analysis.probe_examples.min(data.len());
    let beta = config.train.beta;
    let feature_dim = config.model.feature_dim();
    let mask_u = sample_mask(feature_dim, beta, config.analysis.mask_seed_u)?;
    let mask_v = sample_mask(feature_dim, beta, config.analysis.mask_seed_v)?;
    let temperature = config.distill.temperature;

    let mut jacobians = Vec::with_capacity(n_probe);
    let mut probe_xs = Vec::with_capacity(n_probe * data.dim());
    for i in 0..n_probe {
        jacobians.push(pair_jacobian(
            &config.model,
            &params,
            data.row(i),
            &mask_u,
            &mask_v,
            temperature,
        )?);
        probe_xs.extend_from_slice(data.row(i));
    }
    let stats = assumption_stats_pooled(&jacobians);
    let direction = direction_report(
        &config.model,
        &params,
        &probe_xs,
        n_probe,
        &mask_u,
        &mask_v,
        temperature,
    )?;

    write_key_values(
        &config.output_dir.join("kl_analysis.kv"),
        &[
            kv("checkpoint", ckpt.display()),
            kv("probe_examples", n_probe),
            kv("temperature", temperature),
            kv("beta", beta),
            kv("prob_a1", fmt_opt(stats.prob_a1)),
            kv("mean_r", fmt_opt(stats.mean_r)),
            kv("mean_r1", fmt_opt(stats.mean_r1)),
            kv("a2_hold_fraction", fmt_opt(stats.a2_hold_fraction)),
            kv("evaluated_pairs", stats.evaluated_pairs),
            kv("boundary_pairs", stats.boundary_pairs),
            kv("a2_pairs", stats.a2_pairs),
            kv("cosine", fmt_opt(direction.cosine)),
            kv("l1_forward", direction.l1_forward),
            kv("l1_reverse", direction.l1_reverse),
        ],
    )
}

/// Clean vs attacked accuracy under the one-step sign attack.
pub fn run_attack(config: &RunConfig) -> Result<()> {
    echo_config(config)?;
    let (ckpt, params) = load_trained(config)?;
    let data = config.data.load()?;
    check_loaded_data(config, &data)?;
    let clean = evaluate(&config.model, &params, &data)?;
    let attacked_data = fgsm_attack(&config.model, &params, &data, &config.attack)?;
    let attacked = evaluate(&config.model, &params, &attacked_data)?;
    write_key_values(
        &config.output_dir.join("attack.kv"),
        &[
            kv("checkpoint", ckpt.display()),
            kv("epsilon", config.attack.epsilon),
            kv("clean_accuracy", clean.accuracy),
            kv("attacked_accuracy", attacked.accuracy),
        ],
    )
}

/// Accuracy per corruption kind and severity plus the mean.
pub fn run_corrupt_eval(config: &RunConfig) -> Result<()> {
    echo_config(config)?;
    let (ckpt, params) = load_trained(config)?;
    let data = config.data.load()?;
    check_loaded_data(config, &data)?;
    let clean = evaluate(&config.model, &params, &data)?;

    let mut csv = String::from("kind,severity,accuracy\n");
    let mut sum = 0.0;
    let mut count = 0usize;
    for (idx, kind) in config.corrupt.kinds.iter().enumerate() {
        for &severity in &config.corrupt.severities {
            let seed = derive_seed(
                config.corrupt.seed,
                0x434f_5252,
                (idx * 8 + severity as usize) as u64,
            );
            let corrupted = corrupt(&data, *kind, severity, seed)?;
            let acc = evaluate(&config.model, &params, &corrupted)?.accuracy;
            csv.push_str(&format!("{kind},{severity},{acc}\n"));
            sum += acc;
            count += 1;
        }
    }
    write_text(&config.output_dir.join("corrupt.csv"), &csv)?;
    write_key_values(
        &config.output_dir.join("corrupt.kv"),
        &[
            kv("checkpoint", ckpt.display()),
            kv("clean_accuracy", clean.accuracy),
            kv("mean_corrupted_accuracy", sum / count as f64),
            kv("cells", count),
        ],
    )
}

/// Detector scores on the in- and out-distribution sets and the metric
/// quadruple.
pub fn run_ood(config: &RunConfig) -> Result<()> {
    echo_config(config)?;
    let (ckpt, params) = load_trained(config)?;
    let in_data = config.data.load()?;
    check_loaded_data(config, &in_data)?;
    let out_data = config.ood_data.load()?;
    if out_data.dim() != config.model.input_dim {
        return Err(Error::Config(format!(
            "model input_dim {} does not match ood dataset dim {}",
            config.model.input_dim,
            out_data.dim()
        )));
    }

    let t = config.odin.temperature;
    let eps = config.odin.epsilon;
    let in_scores = odin_score(&config.model, &params, &in_data, t, eps)?;
    let out_scores = odin_score(&config.model, &params, &out_data, t, eps)?;
    let m = ood_metrics(&in_scores, &out_scores)?;
    write_key_values(
        &config.output_dir.join("ood.kv"),
        &[
            kv("checkpoint", ckpt.display()),
            kv("odin_temperature", t),
            kv("odin_epsilon", eps),
            kv("n_in", in_scores.len()),
            kv("n_out", out_scores.len()),
            kv("fpr_at_95_tpr", m.fpr_at_95_tpr),
            kv("detection_error", m.detection_error),
            kv("auroc", m.auroc),
            kv("aupr_in", m.aupr_in),
            kv("aupr_out", m.aupr_out),
        ],
    )
}

/// Comparison report: plain cross-entropy vs the dropout-pair loss in each
/// flow direction, over several seeds; per-run rows plus mean deltas.
pub fn run_report(config: &RunConfig) -> Result<()> {
    echo_config(config)?;
    let data = config.data.load()?;
    check_loaded_data(config, &data)?;
    let base = config.train_config();

    let arms: [(&str, RunMode, Option<FlowMode>); 4] = [
        ("cross-entropy", RunMode::CrossEntropy, None),
        (
            "sd-dropout-forward",
            RunMode::SdDropout,
            Some(FlowMode::Forward),
        ),
        (
            "sd-dropout-reverse",
            RunMode::SdDropout,
            Some(FlowMode::Reverse),
        ),
        ("sd-dropout-both", RunMode::SdDropout, Some(FlowMode::Both)),
    ];

    let mut csv = String::from("mode,seed,final_train_acc,final_val_acc\n");
    let mut means = Vec::new();
    for (name, mode, flow) in arms {
        let mut acc_sum = 0.0;
        for s in 0..config.report.seeds {
            let mut cfg = TrainConfig {
                run_mode: mode,
                seed: base.seed + s as u64,
                ..base.clone()
            };
            if let Some(flow) = flow {
                cfg.distill.flow_mode = flow;
            }
            let outcome = train_run(&config.model, &data, &cfg)?;
            let last = outcome.log.last().expect("at least one epoch");
            csv.push_str(&format!(
                "{name},{},{},{}\n",
                cfg.seed, last.train_acc, last.val_acc
            ));
            acc_sum += last.val_acc;
        }
        means.push((name, acc_sum / config.report.seeds as f64));
    }

    write_text(&config.output_dir.join("report.csv"), &csv)?;
    let ce_mean = means[0].1;
    let mut pairs = vec![kv("seeds", config.report.seeds), kv("epochs", base.epochs)];
    for (name, mean) in &means {
        pairs.push(kv(&format!("mean_val_acc.{name}"), mean));
    }
    for (name, mean) in &means[1..] {
        pairs.push(kv(&format!("delta_vs_ce.{name}"), mean - ce_mean));
    }
    write_key_values(&config.output_dir.join("report.kv"), &pairs)
}
