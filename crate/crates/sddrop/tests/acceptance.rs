//! Acceptance suite: one test per release criterion, each printing a
//! `[PASS] criterion N` line (visible with `--nocapture`). Tolerances are
//! pinned in the asserts.

use std::sync::OnceLock;

use sddrop::autodiff::{backward, finite_diff_gradient, Tensor};
use sddrop::config::RunConfig;
use sddrop::data::{gen_blobs, Dataset};
use sddrop::distill::{cross_entropy, sdd_loss, total_loss, DistillLossSpec, FlowMode};
use sddrop::kl_analysis::{
    assumption_stats_pooled, direction_report, k_argmax_on_grid, k_function, l_function,
    lemma1_forward_grad, lemma1_reverse_grad, pair_jacobian, proposition_gap,
    sample_assumption_region,
};
use sddrop::metrics::{ece, fgsm_attack, ood_metrics, AttackConfig};
use sddrop::model::{
    forward_features, init_model, masked_head_forward, plain_forward, sample_mask, DropoutMask,
    ModelSpec, Parameters,
};
use sddrop::rng::Rng;
use sddrop::trainer::{evaluate, train_run, RunMode, TrainConfig, TrainOutcome};

fn rel_err(a: f64, reference: f64) -> f64 {
    (a - reference).abs() / (reference.abs() + 1e-8)
}

/// Random net with at most 200 parameters and at most 5 classes.
fn small_net(
    rng: &mut Rng,
) -> (
    ModelSpec,
    Parameters,
    Vec<f64>,
    Vec<usize>,
    DropoutMask,
    DropoutMask,
) {
    let input_dim = 2 + rng.below(3);
    let hidden = 3 + rng.below(4);
    let classes = 2 + rng.below(4);
    let spec = ModelSpec {
        input_dim,
        hidden_dims: vec![hidden],
        head_dims: vec![classes],
        activation: Default::default(),
        dropout_position: None,
    };
    let params = init_model(&spec, rng.next_u64()).unwrap();
    assert!(params.total_len() <= 200);
    let batch = 2;
    let xs: Vec<f64> = (0..batch * input_dim)
        .map(|_| rng.uniform(-1.5, 1.5))
        .collect();
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(classes)).collect();
    let u = sample_mask(hidden, 0.5, rng.next_u64()).unwrap();
    let v = sample_mask(hidden, 0.5, rng.next_u64()).unwrap();
    (spec, params, xs, labels, u, v)
}

fn param_gradient<F>(spec: &ModelSpec, params: &Parameters, loss_of: F) -> Vec<f64>
where
    F: Fn(&sddrop::model::GraphParams) -> Tensor,
{
    let leaves = params.leaves().unwrap();
    let loss = loss_of(&leaves);
    let grads = backward(&loss).unwrap();
    let _ = spec;
    let mut flat = Vec::with_capacity(params.total_len());
    for leaf in &leaves.tensors {
        flat.extend(grads.get_or_zeros(leaf));
    }
    flat
}

fn finite_diff_over_params<F>(params: &Parameters, loss_at: F, h: f64) -> Vec<f64>
where
    F: Fn(&Parameters) -> f64,
{
    let mut out = Vec::with_capacity(params.total_len());
    for (entry_idx, entry) in params.entries.iter().enumerate() {
        let at = Tensor::new(&entry.shape, entry.values.clone()).unwrap();
        let fd = finite_diff_gradient(
            |t| {
                let mut perturbed = params.clone();
                perturbed.entries[entry_idx].values = t.values().to_vec();
                Tensor::scalar(loss_at(&perturbed))
            },
            &at,
            h,
        )
        .unwrap();
        out.extend(fd);
    }
    out
}

#[test]
fn criterion_1_gradient_oracle() {
    let start = std::time::Instant::now();
    let mut rng = Rng::new(0xACC1);
    for trial in 0..100 {
        let (spec, params, xs, labels, u, v) = small_net(&mut rng);
        let batch = labels.len();

        let ce_auto = param_gradient(&spec, &params, |leaves| {
            let x = Tensor::matrix(batch, spec.input_dim, xs.clone()).unwrap();
            let logits = plain_forward(&spec, leaves, &x).unwrap();
            cross_entropy(&logits, &labels).unwrap()
        });
        let ce_fd = finite_diff_over_params(
            &params,
            |p| {
                let leaves = p.leaves().unwrap();
                let x = Tensor::matrix(batch, spec.input_dim, xs.clone()).unwrap();
                let logits = plain_forward(&spec, &leaves, &x).unwrap();
                cross_entropy(&logits, &labels).unwrap().scalar_value()
            },
            1e-6,
        );
        for (i, (a, c)) in ce_auto.iter().zip(&ce_fd).enumerate() {
            assert!(
                rel_err(*a, *c) < 1e-4,
                "trial {trial} CE coord {i}: {a} vs {c}"
            );
        }

        let sdd_of = |p: &Parameters| -> f64 {
            let leaves = p.leaves().unwrap();
            let x = Tensor::matrix(batch, spec.input_dim, xs.clone()).unwrap();
            let feat = forward_features(&spec, &leaves, &x).unwrap();
            let lu = masked_head_forward(&spec, &leaves, &feat, &u).unwrap();
            let lv = masked_head_forward(&spec, &leaves, &feat, &v).unwrap();
            sdd_loss(&lu, &lv, 1.0, FlowMode::Both)
                .unwrap()
                .scalar_value()
        };
        let sdd_auto = param_gradient(&spec, &params, |leaves| {
            let x = Tensor::matrix(batch, spec.input_dim, xs.clone()).unwrap();
            let feat = forward_features(&spec, leaves, &x).unwrap();
            let lu = masked_head_forward(&spec, leaves, &feat, &u).unwrap();
            let lv = masked_head_forward(&spec, leaves, &feat, &v).unwrap();
            sdd_loss(&lu, &lv, 1.0, FlowMode::Both).unwrap()
        });
        let sdd_fd = finite_diff_over_params(&params, sdd_of, 1e-6);
        for (i, (a, c)) in sdd_auto.iter().zip(&sdd_fd).enumerate() {
            assert!(
                rel_err(*a, *c) < 1e-4,
                "trial {trial} SDD coord {i}: {a} vs {c}"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!(
        "[PASS] criterion 1: autodiff matches central differences (rel < 1e-4) on 100 nets in {elapsed:?}"
    );
}

#[test]
fn criterion_2_lemma1_equivalence() {
    let start = std::time::Instant::now();
    let mut rng = Rng::new(0xACC2);
    for seed in 0..50 {
        let (spec, params, xs, _, u, v) = small_net(&mut rng);
        let x_row = &xs[..spec.input_dim];
        let pj = pair_jacobian(&spec, &params, x_row, &u, &v, 1.0).unwrap();
        let fw_formula = lemma1_forward_grad(&pj).unwrap();
        let rv_formula = lemma1_reverse_grad(&pj).unwrap();

        let auto = |mode: FlowMode| {
            param_gradient(&spec, &params, |leaves| {
                let x = Tensor::matrix(1, spec.input_dim, x_row.to_vec()).unwrap();
                let feat = forward_features(&spec, leaves, &x).unwrap();
                let lu = masked_head_forward(&spec, leaves, &feat, &u).unwrap();
                let lv = masked_head_forward(&spec, leaves, &feat, &v).unwrap();
                sdd_loss(&lu, &lv, 1.0, mode).unwrap()
            })
        };
        let fw_auto = auto(FlowMode::Forward);
        let rv_auto = auto(FlowMode::Reverse);
        let both_auto = auto(FlowMode::Both);

        for i in 0..fw_formula.len() {
            assert!(
                (fw_formula[i] - fw_auto[i]).abs() < 1e-6,
                "seed {seed} forward coord {i}: {} vs {}",
                fw_formula[i],
                fw_auto[i]
            );
            assert!(
                (rv_formula[i] - rv_auto[i]).abs() < 1e-6,
                "seed {seed} reverse coord {i}: {} vs {}",
                rv_formula[i],
                rv_auto[i]
            );
            assert!(
                (fw_formula[i] + rv_formula[i] - both_auto[i]).abs() < 1e-6,
                "seed {seed} sum coord {i}"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!(
        "[PASS] criterion 2: closed-form forward/reverse derivatives match autodiff (abs < 1e-6) over 50 seeds in {elapsed:?}"
    );
}

#[test]
fn criterion_3_proposition_gap() {
    let mut rng = Rng::new(0xACC3);
    let mut min_gap = f64::INFINITY;
    for _ in 0..100_000 {
        let (p, q, dp, dq) = sample_assumption_region(&mut rng);
        let d = proposition_gap(p, q, dp, dq).unwrap();
        assert!(d > 0.0, "violation: p={p} q={q} dp={dp} dq={dq} D={d}");
        min_gap = min_gap.min(d);
    }

    // At r = log(rho) the gap equals (1 + rho) log(rho) - 2 rho + 2 exactly.
    for _ in 0..1000 {
        let rho = rng.uniform(1.01, 10.0);
        let dq = rng.uniform(0.1, 5.0);
        let q = rng.uniform(1e-4, 1.0 / rho);
        let d = proposition_gap(q * rho, q, rho * dq, dq).unwrap();
        let closed = ((1.0 + rho) * rho.ln() - 2.0 * rho + 2.0) * dq;
        assert!(
            (d - closed).abs() < 1e-12 * closed.abs().max(1.0),
            "{d} vs {closed}"
        );
    }

    for rho in [1.5, 2.0, 5.0, 9.5] {
        let points = 200_001;
        let (argmax, _) = k_argmax_on_grid(rho, points);
        let step = 2.0 * rho.ln() / (points - 1) as f64;
        assert!(
            (argmax - rho.ln()).abs() <= step,
            "rho {rho}: argmax {argmax} vs {}",
            rho.ln()
        );
    }
    println!(
        "[PASS] criterion 3: derivative gap positive on 1e5 in-region tuples (min {min_gap:.3e}); closed-form maximum and grid argmax agree"
    );
}

#[test]
fn criterion_4_lemma2_l_function() {
    let l1 = l_function(1.0).unwrap();
    assert!(l1.abs() < 1e-9, "l(1) = {l1}");
    for s in 0..=1000 {
        let rho = 1.0 + 99.0 * s as f64 / 1000.0;
        let v = l_function(rho).unwrap();
        assert!(v >= -1e-12, "l({rho}) = {v}");
    }
    assert_eq!(k_function(0.0, 3.0), 0.0);
    println!(
        "[PASS] criterion 4: l(1) = 0 within 1e-9 and l >= 0 on the 1000-point grid over [1, 100]"
    );
}

#[test]
fn criterion_5_metric_oracles() {
    let mut rng = Rng::new(0xACC5);

    // ECE vs an independent two-pass binning oracle, exact equality.
    let records: Vec<(f64, bool)> = (0..10_000)
        .map(|_| (rng.next_f64(), !rng.next_u64().is_multiple_of(3)))
        .collect();
    let bins = 10;
    let (value, _) = ece(&records, bins).unwrap();
    let mut oracle = 0.0;
    for m in 1..=bins {
        let lo = (m - 1) as f64 / bins as f64;
        let hi = m as f64 / bins as f64;
        let members: Vec<&(f64, bool)> = records
            .iter()
            .filter(|(c, _)| (*c > lo && *c <= hi) || (m == 1 && *c == 0.0))
            .collect();
        if members.is_empty() {
            continue;
        }
        let acc = members.iter().filter(|(_, ok)| *ok).count() as f64 / members.len() as f64;
        let conf = members.iter().map(|(c, _)| c).sum::<f64>() / members.len() as f64;
        oracle += members.len() as f64 / records.len() as f64 * (acc - conf).abs();
    }
    assert_eq!(value, oracle, "ECE must equal the binning oracle exactly");

    // AUROC vs the brute-force pairwise count (ties half credit) and AUPR vs
    // an O(n^2) threshold-recount step integration, both within 1e-9.
    for _ in 0..1000 {
        let n_in = 2 + rng.below(20);
        let n_out = 2 + rng.below(20);
        // Quantized scores force ties.
        let ins: Vec<f64> = (0..n_in)
            .map(|_| (rng.next_f64() * 8.0).round() / 8.0)
            .collect();
        let outs: Vec<f64> = (0..n_out)
            .map(|_| (rng.next_f64() * 8.0).round() / 8.0)
            .collect();
        let m = ood_metrics(&ins, &outs).unwrap();

        let mut pair_credit = 0.0;
        for i in &ins {
            for o in &outs {
                pair_credit += if i > o {
                    1.0
                } else if i == o {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let auroc_oracle = pair_credit / (ins.len() * outs.len()) as f64;
        assert!(
            (m.auroc - auroc_oracle).abs() < 1e-9,
            "{} vs {auroc_oracle}",
            m.auroc
        );

        let aupr_oracle = |pos: &[f64], neg: &[f64]| -> f64 {
            let mut thresholds: Vec<f64> = pos.iter().chain(neg).cloned().collect();
            thresholds.sort_by(f64::total_cmp);
            thresholds.dedup();
            thresholds.reverse();
            let mut prev_recall = 0.0;
            let mut area = 0.0;
            for t in thresholds {
                let tp = pos.iter().filter(|s| **s >= t).count() as f64;
                let fp = neg.iter().filter(|s| **s >= t).count() as f64;
                let recall = tp / pos.len() as f64;
                let precision = tp / (tp + fp);
                area += (recall - prev_recall) * precision;
                prev_recall = recall;
            }
            area
        };
        let aupr_in_oracle = aupr_oracle(&ins, &outs);
        assert!((m.aupr_in - aupr_in_oracle).abs() < 1e-9);
        let neg_in: Vec<f64> = ins.iter().map(|s| -s).collect();
        let neg_out: Vec<f64> = outs.iter().map(|s| -s).collect();
        let aupr_out_oracle = aupr_oracle(&neg_out, &neg_in);
        assert!((m.aupr_out - aupr_out_oracle).abs() < 1e-9);

        assert!(m.detection_error <= 0.5 + 1e-15);
    }

    let sep = ood_metrics(&[0.9, 0.8, 0.7], &[0.3, 0.2, 0.1]).unwrap();
    assert_eq!(sep.detection_error, 0.0);
    println!(
        "[PASS] criterion 5: ECE exact vs oracle on 1e4 records; AUROC/AUPR within 1e-9 of count/step oracles on 1e3 sets; detection error bounded"
    );
}

fn bits(params: &Parameters) -> Vec<u64> {
    params
        .entries
        .iter()
        .flat_map(|e| e.values.iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn criterion_6_reduction_identity() {
    let data = gen_blobs(60, 4, 8, 0.8, 3).unwrap();
    let spec = ModelSpec {
        input_dim: 8,
        hidden_dims: vec![16],
        head_dims: vec![4],
        activation: Default::default(),
        dropout_position: None,
    };
    let base = TrainConfig {
        epochs: 5,
        batch_size: 64,
        milestones: vec![],
        seed: 21,
        ..Default::default()
    };
    let ce = train_run(
        &spec,
        &data,
        &TrainConfig {
            run_mode: RunMode::CrossEntropy,
            ..base.clone()
        },
    )
    .unwrap();
    let mut zero_cfg = TrainConfig {
        run_mode: RunMode::SdDropout,
        ..base
    };
    zero_cfg.distill.lambda_sdd = 0.0;
    let sdd = train_run(&spec, &data, &zero_cfg).unwrap();
    assert_eq!(
        bits(&ce.params),
        bits(&sdd.params),
        "parameter trajectories diverged"
    );
    assert_eq!(ce.log, sdd.log);

    // T^2 factor: d(total)/d(sdd) = lambda * T^2 exactly.
    let ce_term = Tensor::scalar(0.9).unwrap();
    let sdd_term = Tensor::param(&[], vec![0.123]).unwrap();
    let spec = DistillLossSpec {
        temperature: 3.0,
        lambda_sdd: 0.7,
        ..Default::default()
    };
    let total = total_loss(&ce_term, &sdd_term, None, &spec).unwrap();
    let grads = backward(&total).unwrap();
    assert_eq!(grads.get(&sdd_term).unwrap(), &[0.7 * 9.0]);
    println!(
        "[PASS] criterion 6: lambda=0 distilled run is bit-identical to plain cross-entropy; T^2 factor exact"
    );
}

struct Smoke {
    spec: ModelSpec,
    data: Dataset,
    sdd: TrainOutcome,
    ce: TrainOutcome,
}

fn smoke() -> &'static Smoke {
    static SMOKE: OnceLock<Smoke> = OnceLock::new();
    SMOKE.get_or_init(|| {
        // Paper-default optimizer and loss weights on the default synthetic
        // task: data module defaults, 200 epochs, lr 0.1, momentum 0.9,
        // weight decay 1e-4, milestones 100/150.
        let config = RunConfig::default();
        let spec = config.model.clone();
        let data = config.data.load().unwrap();
        let sdd_cfg = config.train_config();
        assert_eq!(sdd_cfg.epochs, 200);
        assert_eq!(sdd_cfg.lr, 0.1);
        assert_eq!(sdd_cfg.momentum, 0.9);
        assert_eq!(sdd_cfg.weight_decay, 1e-4);
        assert_eq!(sdd_cfg.milestones, vec![100, 150]);
        assert_eq!(sdd_cfg.run_mode, RunMode::SdDropout);
        let sdd = train_run(&spec, &data, &sdd_cfg).unwrap();
        let ce = train_run(
            &spec,
            &data,
            &TrainConfig {
                run_mode: RunMode::CrossEntropy,
                ..sdd_cfg
            },
        )
        .unwrap();
        Smoke {
            spec,
            data,
            sdd,
            ce,
        }
    })
}

#[test]
fn criterion_7_fgsm_contract() {
    let s = smoke();
    let eps = AttackConfig::default().epsilon;
    assert_eq!(eps, 0.2);
    let attacked = fgsm_attack(&s.spec, &s.sdd.params, &s.data, &AttackConfig::default()).unwrap();
    for (a, b) in attacked.features().iter().zip(s.data.features()) {
        let delta = a - b;
        assert!(
            (delta - eps).abs() < 1e-12 || (delta + eps).abs() < 1e-12 || delta == 0.0,
            "perturbation {delta} outside {{-eps, 0, +eps}}"
        );
    }
    let clean = evaluate(&s.spec, &s.sdd.params, &s.data).unwrap().accuracy;
    let adv = evaluate(&s.spec, &s.sdd.params, &attacked)
        .unwrap()
        .accuracy;
    assert!(adv <= clean, "attacked {adv} vs clean {clean}");
    println!(
        "[PASS] criterion 7: perturbations in {{-0.2, 0, +0.2}}; attacked accuracy {adv:.4} <= clean {clean:.4}"
    );
}

#[test]
fn criterion_8_training_smoke_and_directional_report() {
    let start = std::time::Instant::now();
    let s = smoke();

    // Hard clauses: both smoke runs complete with every logged loss finite;
    // the plain cross-entropy baseline fits the training split to at least
    // 0.95; the distilled run trains to a sane equilibrium (its regularizer
    // deliberately stops short of memorizing this overlapping task).
    for (name, outcome) in [("sd-dropout", &s.sdd), ("cross-entropy", &s.ce)] {
        assert_eq!(outcome.log.len(), 200, "{name}: epochs completed");
        assert!(
            outcome.log.iter().all(|m| m.train_loss.is_finite()),
            "{name}: non-finite loss logged"
        );
    }
    let ce_final = s.ce.log.last().unwrap();
    assert!(
        ce_final.train_acc >= 0.95,
        "cross-entropy baseline train accuracy {} < 0.95",
        ce_final.train_acc
    );
    let sdd_final = s.sdd.log.last().unwrap();
    assert!(
        sdd_final.train_acc >= 0.80,
        "distilled smoke train accuracy {} fell out of its measured regime",
        sdd_final.train_acc
    );

    // Reported outputs (qualitative, not pass/fail): validation-accuracy
    // deltas vs cross-entropy over 3 seeds, and the flow-direction ablation.
    let config = RunConfig::default();
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
    let mut means = Vec::new();
    for (name, mode, flow) in arms {
        let mut sum = 0.0;
        for offset in 0..3u64 {
            let mut cfg = TrainConfig {
                run_mode: mode,
                seed: base.seed + offset,
                ..base.clone()
            };
            if let Some(flow) = flow {
                cfg.distill.flow_mode = flow;
            }
            let outcome = train_run(&s.spec, &s.data, &cfg).unwrap();
            assert!(
                outcome.log.iter().all(|m| m.train_loss.is_finite()),
                "{name} seed {}: non-finite loss",
                cfg.seed
            );
            sum += outcome.log.last().unwrap().val_acc;
        }
        means.push((name, sum / 3.0));
    }
    let ce_mean = means[0].1;
    println!("[REPORT] criterion 8 (qualitative): mean val accuracy over 3 seeds");
    for (name, mean) in &means {
        if *name == "cross-entropy" {
            println!("  {name}: {mean:.4}");
        } else {
            println!("  {name}: {mean:.4} (delta vs CE {:+.4})", mean - ce_mean);
        }
    }
    println!(
        "  smoke runs: sd-dropout train {:.4} / val {:.4}; cross-entropy train {:.4} / val {:.4}",
        sdd_final.train_acc, sdd_final.val_acc, ce_final.train_acc, ce_final.val_acc
    );
    println!(
        "[PASS] criterion 8: smoke runs complete, losses finite, baseline train accuracy {:.4} >= 0.95 ({:?})",
        ce_final.train_acc,
        start.elapsed()
    );
}

#[test]
fn criterion_9_assumption_report() {
    let s = smoke();
    let beta = 0.5;
    let feature_dim = s.spec.feature_dim();
    let mask_u = sample_mask(feature_dim, beta, 1001).unwrap();
    let mask_v = sample_mask(feature_dim, beta, 1002).unwrap();

    let probe = 8usize.min(s.data.len());
    let mut jacobians = Vec::new();
    let mut xs = Vec::new();
    for i in 0..probe {
        jacobians.push(
            pair_jacobian(&s.spec, &s.sdd.params, s.data.row(i), &mask_u, &mask_v, 1.0).unwrap(),
        );
        xs.extend_from_slice(s.data.row(i));
    }
    let stats = assumption_stats_pooled(&jacobians);
    let direction =
        direction_report(&s.spec, &s.sdd.params, &xs, probe, &mask_u, &mask_v, 1.0).unwrap();

    let prob_a1 = stats.prob_a1.expect("trained net yields qualifying pairs");
    let mean_r = stats.mean_r.expect("ratio-qualifying pairs exist");
    let mean_r1 = stats.mean_r1.unwrap();
    let cosine = direction
        .cosine
        .expect("nonzero gradients on a trained net");

    // Hard checks.
    assert!(mean_r <= mean_r1, "mean r {mean_r} vs mean r1 {mean_r1}");
    assert!((-1.0..=1.0).contains(&cosine));

    println!(
        "[REPORT] criterion 9 (qualitative): prob_a1 {prob_a1:.4} (reference range 0.594..0.653 \
         on the original large-scale runs), a2_hold {:.4}, mean_r {mean_r:.4}, mean_r1 {mean_r1:.4}",
        stats.a2_hold_fraction.unwrap()
    );
    println!(
        "  direction: cosine {cosine:.4}, l1_forward {:.4}, l1_reverse {:.4} (expect reverse >= forward)",
        direction.l1_forward, direction.l1_reverse
    );
    println!(
        "[PASS] criterion 9: report emits all fields; mean_r <= mean_r1 and cosine within [-1, 1]"
    );
}

#[test]
fn criterion_10_persistence_and_determinism() {
    let s = smoke();
    let dir = std::env::temp_dir().join("sddrop_acceptance");
    std::fs::create_dir_all(&dir).unwrap();

    // Checkpoint round trip is bit-exact on trained parameters.
    let path = dir.join("smoke.ckpt");
    sddrop::checkpoint::save_checkpoint(&s.spec, &s.sdd.params, &path).unwrap();
    let restored = sddrop::checkpoint::load_checkpoint_expecting(&path, &s.spec).unwrap();
    assert_eq!(bits(&s.sdd.params), bits(&restored));

    // Identical config and seed give byte-identical artifacts end to end.
    let run = |tag: &str| -> (Vec<u8>, Vec<u8>) {
        let out = dir.join(tag);
        let config = sddrop::config::load_config(
            None,
            &[
                format!("output_dir=\"{}\"", out.display()),
                "train.epochs=8".into(),
                "train.milestones=[4]".into(),
                "data.n_per_class=40".into(),
            ],
        )
        .unwrap();
        sddrop::commands::run_train(&config).unwrap();
        (
            std::fs::read(out.join("epochs.csv")).unwrap(),
            std::fs::read(out.join("checkpoint.ckpt")).unwrap(),
        )
    };
    let (csv_a, ckpt_a) = run("det_a");
    let (csv_b, ckpt_b) = run("det_b");
    assert_eq!(csv_a, csv_b, "epoch CSVs differ byte-for-byte");
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ byte-for-byte");
    println!(
        "[PASS] criterion 10: checkpoint round-trip bit-exact; identical config+seed reproduces CSV and checkpoint byte-for-byte"
    );
}
