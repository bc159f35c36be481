use super::*;
use crate::energy::free_energy;
use crate::rng::standard_normal_vec;

/// Two well-separated Gaussian blobs (one per class) in `dim` dimensions.
fn blob_dataset(n_per_class: usize, dim: usize, spread: f64, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, 0);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for class in 0..2usize {
        let sign = if class == 0 { 1.0 } else { -1.0 };
        for _ in 0..n_per_class {
            let noise = standard_normal_vec(&mut rng, dim);
            let mut x: Vec<f64> = noise.iter().map(|z| spread * z).collect();
            x[0] += sign * 3.0;
            x[1] += sign * 2.0;
            features.push(x);
            labels.push(class);
        }
    }
    Dataset { features, labels, num_classes: 2 }
}

fn micro_config() -> TrainConfig {
    TrainConfig {
        seed: 11,
        epochs: 30,
        batch_size: 16,
        learning_rate: 0.05,
        energy_loss_weight: 0.5,
        hidden_dims: vec![8],
        outlier_samples_per_class: 2,
        outlier_start_epoch: 10,
        outlier_candidates: 200,
        ..TrainConfig::default()
    }
}

#[test]
fn init_is_deterministic_and_bounded() {
    let config = micro_config();
    let dims = LayerDims { input_dim: 4, hidden_dims: vec![6], num_classes: 2 };
    let a = init_model(&config, &dims).unwrap();
    let b = init_model(&config, &dims).unwrap();
    let bits = |m: &MlpModel| m.params_vec().iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
    assert_eq!(bits(&a), bits(&b));

    // each layer stays inside its Glorot bound
    let bound0 = (6.0_f64 / 10.0).sqrt();
    assert!(a.backbone[0].w.max_abs() <= bound0);
    let bound_head = (6.0_f64 / 8.0).sqrt();
    assert!(a.head.w_cls().max_abs() <= bound_head);
    assert_eq!(a.psi(), (1.0, 0.0));
}

#[test]
fn square_reduction_head_is_full_rank_at_init() {
    let config = TrainConfig { nsr_r: Some(2), ..micro_config() };
    let dims = LayerDims { input_dim: 4, hidden_dims: vec![6], num_classes: 2 };
    let model = init_model(&config, &dims).unwrap();
    assert_eq!(model.head.w_cls().rows(), 2);
    let decomp = svd(model.head.w_cls()).unwrap();
    assert_eq!(decomp.rank(DEFAULT_REL_TOL), 2);
}

#[test]
fn reduction_must_reduce() {
    let config = TrainConfig { nsr_r: Some(6), ..micro_config() };
    let dims = LayerDims { input_dim: 4, hidden_dims: vec![6], num_classes: 2 };
    assert!(matches!(init_model(&config, &dims), Err(Error::ConfigError(_))));
}

#[test]
fn indistinguishable_energies_give_log2_loss_at_psi_init() {
    // identity head, features chosen so F = -logsumexp = 0 exactly
    let config = TrainConfig { hidden_dims: vec![2], ..micro_config() };
    let dims = LayerDims { input_dim: 2, hidden_dims: vec![2], num_classes: 2 };
    let mut model = init_model(&config, &dims).unwrap();
    model.head = ClassifierHead::new(Matrix::identity(2)).unwrap();
    assert_eq!(model.psi(), (1.0, 0.0));
    let f = vec![-(2.0_f64.ln()), -(2.0_f64.ln())];
    assert!(free_energy(&model.head.w_cls().transpose_matvec(&f).unwrap()).unwrap().value.abs() < 1e-15);
    let (loss, _) = energy_uncertainty_loss(&model, &[f.clone()], &[f]).unwrap();
    assert!((loss - 2.0_f64.ln()).abs() < 1e-12);
}

#[test]
fn separated_energies_saturate_to_zero_loss() {
    let config = TrainConfig { hidden_dims: vec![1], ..micro_config() };
    let dims = LayerDims { input_dim: 1, hidden_dims: vec![1], num_classes: 2 };
    let mut model = init_model(&config, &dims).unwrap();
    // K=2 head summing the single feature twice: logits [x, x], F = -x - ln 2
    model.head = ClassifierHead::new(Matrix::new(1, 2, vec![1.0, 1.0]).unwrap()).unwrap();
    model.set_psi(10.0, 0.0);
    let id = vec![vec![10.0]]; // F = -10 - ln2, u ~ -107
    let out = vec![vec![-10.0]]; // F = +10 - ln2, u ~ +93
    let (loss, _) = energy_uncertainty_loss(&model, &id, &out).unwrap();
    assert!(loss < 1e-12, "saturated loss should vanish, got {loss}");
}

#[test]
fn energy_loss_rejects_empty_sets() {
    let config = micro_config();
    let dims = LayerDims { input_dim: 4, hidden_dims: vec![6], num_classes: 2 };
    let model = init_model(&config, &dims).unwrap();
    assert_eq!(energy_uncertainty_loss(&model, &[], &[vec![0.0; 6]]).unwrap_err(), Error::EmptyInput);
}

/// Central finite differences of the composite step loss over every
/// parameter. Returns (analytic, numeric) pairs in parameter order.
fn fd_gradient_pairs(
    model: &MlpModel,
    feats: &[Vec<f64>],
    labels: &[usize],
    outliers: &[Vec<f64>],
    opts: &StepOptions,
) -> Vec<(f64, f64)> {
    let (_, grads) = step_loss_and_grads(model, feats, labels, outliers, opts).unwrap();
    let analytic = grads.to_vec();
    let params = model.params_vec();
    let step = 1e-6;
    let mut pairs = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut perturbed = model.clone();
        let mut p = params.clone();
        p[i] += step;
        perturbed.set_params_vec(&p).unwrap();
        let (lp, _) = step_loss_and_grads(&perturbed, feats, labels, outliers, opts).unwrap();
        p[i] = params[i] - step;
        perturbed.set_params_vec(&p).unwrap();
        let (lm, _) = step_loss_and_grads(&perturbed, feats, labels, outliers, opts).unwrap();
        pairs.push((analytic[i], (lp - lm) / (2.0 * step)));
    }
    pairs
}

fn assert_grad_match(pairs: &[(f64, f64)], rel_tol: f64) {
    for (i, (analytic, fd)) in pairs.iter().enumerate() {
        if analytic.abs() > 1e-6 {
            let rel = (fd - analytic).abs() / analytic.abs();
            assert!(rel < rel_tol, "param {i}: analytic {analytic}, fd {fd}, rel {rel}");
        } else {
            assert!((fd - analytic).abs() < 1e-6, "param {i}: analytic {analytic}, fd {fd}");
        }
    }
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    // micro-model: d = 4, one hidden layer of 6, K = 2, 3 samples
    let config = TrainConfig { seed: 21, hidden_dims: vec![6], ..micro_config() };
    let dims = LayerDims { input_dim: 4, hidden_dims: vec![6], num_classes: 2 };
    let model = init_model(&config, &dims).unwrap();
    let mut rng = stream_rng(99, 0);
    let feats: Vec<Vec<f64>> = (0..3).map(|_| standard_normal_vec(&mut rng, 4)).collect();
    let labels = vec![0, 1, 0];
    let outliers: Vec<Vec<f64>> = (0..2).map(|_| standard_normal_vec(&mut rng, 6)).collect();
    let opts = StepOptions { energy_weight: 0.7, lambda_lsv: 0.1, lambda_cn: 0.0 };
    let pairs = fd_gradient_pairs(&model, &feats, &labels, &outliers, &opts);
    assert_grad_match(&pairs, 1e-4);
}

#[test]
fn reduced_model_gradient_matches_finite_differences() {
    let config = TrainConfig { seed: 22, hidden_dims: vec![6], nsr_r: Some(3), ..micro_config() };
    let dims = LayerDims { input_dim: 4, hidden_dims: vec![6], num_classes: 2 };
    let model = init_model(&config, &dims).unwrap();
    let mut rng = stream_rng(101, 0);
    let feats: Vec<Vec<f64>> = (0..3).map(|_| standard_normal_vec(&mut rng, 4)).collect();
    let labels = vec![1, 0, 1];
    let outliers: Vec<Vec<f64>> = (0..2).map(|_| standard_normal_vec(&mut rng, 6)).collect();
    let opts = StepOptions { energy_weight: 0.5, lambda_lsv: 0.0, lambda_cn: 0.05 };
    let pairs = fd_gradient_pairs(&model, &feats, &labels, &outliers, &opts);
    assert_grad_match(&pairs, 1e-4);
}

#[test]
fn separable_blobs_reach_high_accuracy() {
    let dataset = blob_dataset(60, 4, 0.4, 31);
    let report = train(&micro_config(), &dataset).unwrap();
    let final_acc = report.epochs.last().unwrap().accuracy;
    assert!(final_acc >= 0.98, "accuracy {final_acc}");
    assert_eq!(report.epochs.len(), 30);
}

#[test]
fn lsv_regularizer_raises_sigma_min() {
    let dataset = blob_dataset(40, 4, 0.4, 32);
    let base = train(&micro_config(), &dataset).unwrap();
    let reg = train(&TrainConfig { lambda_lsv: 0.05, ..micro_config() }, &dataset).unwrap();
    let s_base = base.epochs.last().unwrap().sigma_min;
    let s_reg = reg.epochs.last().unwrap().sigma_min;
    assert!(s_reg > s_base, "regularized sigma_min {s_reg} vs baseline {s_base}");
}

#[test]
fn cn_regularizer_does_not_raise_kappa() {
    let dataset = blob_dataset(40, 4, 0.4, 33);
    let report = train(&TrainConfig { lambda_cn: 0.05, ..micro_config() }, &dataset).unwrap();
    let first = report.epochs.first().unwrap().kappa;
    let last = report.epochs.last().unwrap().kappa;
    assert!(last <= first + 1e-9, "kappa grew from {first} to {last}");
}

#[test]
fn square_reduction_kills_nullity_every_epoch() {
    let dataset = blob_dataset(40, 4, 0.4, 34);
    let config = TrainConfig { nsr_r: Some(2), ..micro_config() };
    let report = train(&config, &dataset).unwrap();
    assert!(report.epochs.iter().all(|e| e.nullity == 0));
}

#[test]
fn training_is_bit_deterministic() {
    let dataset = blob_dataset(30, 4, 0.4, 35);
    let r1 = train(&micro_config(), &dataset).unwrap();
    let r2 = train(&micro_config(), &dataset).unwrap();
    assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
}

#[test]
fn absurd_learning_rate_diverges() {
    let dataset = blob_dataset(30, 4, 0.4, 36);
    let config = TrainConfig { learning_rate: 1e12, epochs: 5, ..micro_config() };
    match train(&config, &dataset) {
        Err(Error::TrainingDiverged { .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn conflicting_penalties_are_rejected() {
    let config = TrainConfig { lambda_lsv: 0.1, lambda_cn: 0.1, ..micro_config() };
    assert!(matches!(config.validate(), Err(Error::ConfigError(_))));
}

#[test]
fn model_json_round_trips_bit_exactly() {
    let dataset = blob_dataset(20, 4, 0.4, 37);
    let config = TrainConfig { epochs: 5, nsr_r: Some(3), ..micro_config() };
    let report = train(&config, &dataset).unwrap();
    let text = report.model.to_json();
    let back = MlpModel::from_json(&text).unwrap();
    let bits = |m: &MlpModel| m.params_vec().iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
    assert_eq!(bits(&report.model), bits(&back));
    assert_eq!(report.model.layer_dims(), back.layer_dims());
}

#[test]
fn corrupted_model_json_is_rejected() {
    let dataset = blob_dataset(20, 4, 0.4, 38);
    let config = TrainConfig { epochs: 2, ..micro_config() };
    let report = train(&config, &dataset).unwrap();
    let mut text = report.model.to_json();
    text = text.replace("\"layer_dims\": [", "\"layer_dims\": [99, ");
    assert!(MlpModel::from_json(&text).is_err());
}

#[test]
fn energy_training_separates_synthetic_outliers() {
    // after training with the uncertainty loss, mean outlier energy should
    // exceed mean in-distribution energy
    let dataset = blob_dataset(60, 4, 0.4, 39);
    let report = train(&micro_config(), &dataset).unwrap();
    let model = &report.model;
    let mut id_energy = 0.0;
    for x in &dataset.features {
        id_energy += model.input_free_energy(x).unwrap();
    }
    id_energy /= dataset.features.len() as f64;

    let mut by_class: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 2];
    for (x, &y) in dataset.features.iter().zip(&dataset.labels) {
        by_class[y].push(model.features(x).unwrap());
    }
    let outliers = vos_synthesize_outliers(&by_class, 1000, 77).unwrap();
    let mut out_energy = 0.0;
    for o in &outliers {
        let (_, logits) = head_forward(model.head(), o).unwrap();
        out_energy += free_energy(&logits).unwrap().value;
    }
    out_energy /= outliers.len() as f64;
    assert!(
        out_energy > id_energy,
        "outlier energy {out_energy} should exceed in-distribution {id_energy}"
    );
}
