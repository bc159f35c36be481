//! The scripted blind-spot experiment: train a grid of model variants on the
//! same data and seed, score ordinary and attack-generated OOD sets, and
//! report FPR95/AUROC plus the head spectrum per variant.
//!
//! Attack-generated sets anchor at the accepted in-distribution test points
//! (free energy strictly below the 95% acceptance threshold), one attack per
//! anchor. A null-space attack set therefore scores FPR95 = 1.0 against a
//! vulnerable head by construction: every attacked point inherits its
//! anchor's accept decision. Heads whose reduction layer removed the null
//! space make `nsv_attack` fail with `NoNullSpace` instead, which the report
//! records as the mitigation outcome, not as an error.

use serde::{Deserialize, Serialize};

use super::metrics::{auroc, fpr_at_tpr, tpr_threshold};
use super::{generate_dataset, DatasetSpec, SyntheticDataset};
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{svd, DEFAULT_REL_TOL};
use crate::rng::derive_seed;
use crate::trainer::{train, MlpModel, TrainConfig};
use crate::vulnerability::{lsv_attack, nsv_attack, random_perp_attack, AttackResult};

/// One cell of the mitigation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: String,
    pub nsr_r: Option<usize>,
    pub lambda_lsv: f64,
    pub lambda_cn: f64,
}

/// Perturbation-norm policy for the attack sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSpec {
    /// Fixed perturbation norm. When absent, `d_b_factor` times the median
    /// distance from the effective training features to their class
    /// centroid, so attacks are far by in-distribution standards.
    pub d_b: Option<f64>,
    pub d_b_factor: f64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self { d_b: None, d_b_factor: 3.0 }
    }
}

/// Full experiment configuration; `Default` is the bundled grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub variants: Vec<VariantSpec>,
    pub attack: AttackSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let dataset = DatasetSpec::default();
        let k = dataset.num_classes;
        Self {
            seed: 7,
            dataset,
            train: TrainConfig {
                seed: 7,
                epochs: 40,
                batch_size: 32,
                learning_rate: 0.05,
                energy_loss_weight: 0.5,
                hidden_dims: vec![16, 8],
                outlier_samples_per_class: 4,
                outlier_start_epoch: 15,
                outlier_candidates: 1000,
                ..TrainConfig::default()
            },
            variants: vec![
                VariantSpec { name: "baseline".into(), nsr_r: None, lambda_lsv: 0.0, lambda_cn: 0.0 },
                VariantSpec { name: "nsr".into(), nsr_r: Some(k), lambda_lsv: 0.0, lambda_cn: 0.0 },
                VariantSpec { name: "nsr_lsvr".into(), nsr_r: Some(k), lambda_lsv: 0.05, lambda_cn: 0.0 },
                VariantSpec { name: "nsr_cnr".into(), nsr_r: Some(k), lambda_lsv: 0.0, lambda_cn: 0.05 },
            ],
            attack: AttackSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if self.variants.is_empty() {
            return Err(Error::ConfigError("experiment needs at least one variant".into()));
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.variants.len() {
            return Err(Error::ConfigError("variant names must be unique".into()));
        }
        for v in &self.variants {
            self.resolved_train_config(v).validate()?;
        }
        if let Some(d_b) = self.attack.d_b {
            if !(d_b > 0.0 && d_b.is_finite()) {
                return Err(Error::ConfigError(format!("attack d_b must be positive, got {d_b}")));
            }
        }
        if !(self.attack.d_b_factor > 0.0) {
            return Err(Error::ConfigError("attack d_b_factor must be positive".into()));
        }
        Ok(())
    }

    fn resolved_train_config(&self, variant: &VariantSpec) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            nsr_r: variant.nsr_r,
            lambda_lsv: variant.lambda_lsv,
            lambda_cn: variant.lambda_cn,
            ..self.train.clone()
        }
    }
}

/// FPR95/AUROC of one OOD set against the in-distribution test energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSetMetrics {
    pub name: String,
    pub fpr95: f64,
    pub auroc: f64,
}

/// Bookkeeping for one attack-generated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSetStats {
    pub name: String,
    pub d_b: f64,
    pub n_anchors: usize,
    pub mean_abs_energy_gap: Option<f64>,
    /// Recorded outcome when the set was not generated (e.g. `NoNullSpace`
    /// after the reduction removed the blind spot).
    pub skipped: Option<String>,
}

/// Everything measured for one trained variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub config: TrainConfig,
    pub metrics: Vec<OodSetMetrics>,
    pub sigma_min: Option<f64>,
    pub kappa: Option<f64>,
    pub nullity: Option<usize>,
    pub diverged: bool,
    pub id_accuracy: Option<f64>,
    /// Nullity of the composed map's transpose (backbone features directly
    /// to logits) when a reduction layer is present: blind spots upstream of
    /// the reduction, reported as information.
    pub composed_nullity: Option<usize>,
    pub attacks: Vec<AttackSetStats>,
}

/// The experiment report; serialized as the report JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub variants: Vec<VariantReport>,
    pub seed: u64,
    pub timestamp: String,
}

/// Report plus the flat per-sample energy table for external plotting.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    /// `(set_name, energy)` rows; set names are `variant/set`.
    pub energies: Vec<(String, f64)>,
}

impl ExperimentOutput {
    /// Render the energy table as CSV.
    pub fn energies_csv(&self) -> String {
        let mut out = String::from("set_name,energy\n");
        for (name, e) in &self.energies {
            out.push_str(&format!("{name},{e:.17e}\n"));
        }
        out
    }
}

/// Run the full grid. Variants are independent (own model, own RNG streams,
/// shared dataset and seed) and may run concurrently; the report order is
/// the config order either way.
pub fn run_blindspot_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let dataset = generate_dataset(&config.dataset, config.seed)?;
    let results = exec::map_indexed(config.variants.len(), |i| run_variant(config, &dataset, i));
    let mut variants = Vec::with_capacity(results.len());
    let mut energies = Vec::new();
    for r in results {
        let (v, e) = r?;
        variants.push(v);
        energies.extend(e);
    }
    Ok(ExperimentOutput {
        report: ExperimentReport {
            variants,
            seed: config.seed,
            timestamp: chrono::Utc::now().to_rfc3339(),
        },
        energies,
    })
}

type VariantOutcome = (VariantReport, Vec<(String, f64)>);

fn diverged_report(name: &str, config: TrainConfig) -> VariantOutcome {
    (
        VariantReport {
            name: name.into(),
            config,
            metrics: Vec::new(),
            sigma_min: None,
            kappa: None,
            nullity: None,
            diverged: true,
            id_accuracy: None,
            composed_nullity: None,
            attacks: Vec::new(),
        },
        Vec::new(),
    )
}

fn run_variant(config: &ExperimentConfig, dataset: &SyntheticDataset, idx: usize) -> Result<VariantOutcome> {
    let vspec = &config.variants[idx];
    let tc = config.resolved_train_config(vspec);
    let trained = match train(&tc, &dataset.train) {
        Ok(t) => t,
        Err(Error::TrainingDiverged { .. }) => return Ok(diverged_report(&vspec.name, tc)),
        Err(e) => return Err(e),
    };
    let model = &trained.model;
    let head = model.head();

    // In-distribution test energies and head-input features.
    let test_feats: Vec<Vec<f64>> = exec::map_indexed(dataset.test.features.len(), |i| {
        model.features(&dataset.test.features[i]).expect("dims validated by training")
    });
    let id_energies: Vec<f64> = exec::map_indexed(test_feats.len(), |i| {
        crate::energy::head_forward(head, &test_feats[i])
            .and_then(|(_, logits)| crate::energy::free_energy(&logits))
            .expect("dims validated by training")
            .value
    });

    let d_b = match config.attack.d_b {
        Some(v) => v,
        None => config.attack.d_b_factor * median_centroid_distance(model, &dataset.train)?,
    };

    let mut energies: Vec<(String, f64)> = Vec::new();
    let mut metrics: Vec<OodSetMetrics> = Vec::new();
    let mut attacks: Vec<AttackSetStats> = Vec::new();
    let push_rows = |energies: &mut Vec<(String, f64)>, set: &str, values: &[f64]| {
        energies.extend(values.iter().map(|&e| (format!("{}/{set}", vspec.name), e)));
    };
    push_rows(&mut energies, "id_test", &id_energies);

    // Input-space OOD sets.
    for (set_name, points) in &dataset.ood_sets {
        let scores: Vec<f64> = exec::map_indexed(points.len(), |i| {
            model.input_free_energy(&points[i]).expect("dims validated by generation")
        });
        metrics.push(set_metrics(set_name, &id_energies, &scores)?);
        push_rows(&mut energies, set_name, &scores);
    }

    // Attack-generated OOD sets, anchored at accepted test points.
    let tau = tpr_threshold(&id_energies, 0.95)?;
    let anchors: Vec<usize> = (0..test_feats.len()).filter(|&i| id_energies[i] < tau).collect();
    let nullity = {
        let decomp = svd(head.w_cls())?;
        head.w_cls().rows() - decomp.rank(DEFAULT_REL_TOL)
    };

    if anchors.is_empty() {
        for name in ["nsv_attack", "lsv_attack", "random_perp"] {
            attacks.push(AttackSetStats {
                name: name.into(),
                d_b,
                n_anchors: 0,
                mean_abs_energy_gap: None,
                skipped: Some("NoAnchors".into()),
            });
        }
    } else {
        // null-space attacks: the mitigation signal is the NoNullSpace error
        if nullity == 0 {
            attacks.push(AttackSetStats {
                name: "nsv_attack".into(),
                d_b,
                n_anchors: anchors.len(),
                mean_abs_energy_gap: None,
                skipped: Some("NoNullSpace".into()),
            });
        } else {
            let results: Vec<AttackResult> = collect_attacks(&anchors, |k| {
                nsv_attack(head, &test_feats[anchors[k]], d_b, derive_seed(config.seed, 100 + idx as u64, k as u64))
            })?;
            record_attack_set("nsv_attack", &results, d_b, &id_energies, &mut metrics, &mut attacks, &mut energies, &vspec.name)?;
        }

        let results: Vec<AttackResult> =
            collect_attacks(&anchors, |k| lsv_attack(head, &test_feats[anchors[k]], d_b))?;
        record_attack_set("lsv_attack", &results, d_b, &id_energies, &mut metrics, &mut attacks, &mut energies, &vspec.name)?;

        let results: Vec<AttackResult> = collect_attacks(&anchors, |k| {
            random_perp_attack(head, &test_feats[anchors[k]], d_b, derive_seed(config.seed, 200 + idx as u64, k as u64))
        })?;
        record_attack_set("random_perp", &results, d_b, &id_energies, &mut metrics, &mut attacks, &mut energies, &vspec.name)?;
    }

    let decomp = svd(head.w_cls())?;
    let extremes = decomp.sigma_extremes(DEFAULT_REL_TOL)?;
    let composed_nullity = head.nsr().map(|_| {
        let composed = head.composed_matrix();
        let rank = svd(&composed).map(|d| d.rank(DEFAULT_REL_TOL)).unwrap_or(0);
        composed.rows() - rank
    });

    Ok((
        VariantReport {
            name: vspec.name.clone(),
            config: tc,
            metrics,
            sigma_min: Some(extremes.sigma_min),
            kappa: Some(extremes.sigma_max / extremes.sigma_min),
            nullity: Some(nullity),
            diverged: false,
            id_accuracy: trained.epochs.last().map(|e| e.accuracy),
            composed_nullity,
            attacks,
        },
        energies,
    ))
}

fn set_metrics(name: &str, id_energies: &[f64], scores: &[f64]) -> Result<OodSetMetrics> {
    let (fpr95, _) = fpr_at_tpr(id_energies, scores, 0.95)?;
    Ok(OodSetMetrics { name: name.into(), fpr95, auroc: auroc(id_energies, scores)? })
}

fn collect_attacks<F>(anchors: &[usize], attack: F) -> Result<Vec<AttackResult>>
where
    F: Fn(usize) -> Result<AttackResult> + Sync + Send,
{
    exec::map_indexed(anchors.len(), |k| attack(k)).into_iter().collect()
}

#[allow(clippy::too_many_arguments)]
fn record_attack_set(
    set_name: &str,
    results: &[AttackResult],
    d_b: f64,
    id_energies: &[f64],
    metrics: &mut Vec<OodSetMetrics>,
    attacks: &mut Vec<AttackSetStats>,
    energies: &mut Vec<(String, f64)>,
    variant_name: &str,
) -> Result<()> {
    let scores: Vec<f64> = results.iter().map(|r| r.energy_after).collect();
    let mean_gap = results.iter().map(|r| (r.energy_after - r.energy_before).abs()).sum::<f64>()
        / results.len() as f64;
    metrics.push(set_metrics(set_name, id_energies, &scores)?);
    attacks.push(AttackSetStats {
        name: set_name.into(),
        d_b,
        n_anchors: results.len(),
        mean_abs_energy_gap: Some(mean_gap),
        skipped: None,
    });
    energies.extend(scores.iter().map(|&e| (format!("{variant_name}/{set_name}"), e)));
    Ok(())
}

/// Median distance from each backbone training feature to its class
/// centroid. The boundary distance is a statement about `h(x)` geometry, so
/// it is measured in the backbone output space, which every variant shares.
fn median_centroid_distance(model: &MlpModel, train: &crate::trainer::Dataset) -> Result<f64> {
    let eff: Vec<Vec<f64>> = train
        .features
        .iter()
        .map(|x| model.features(x))
        .collect::<Result<_>>()?;
    let dim = model.feature_dim();
    let mut centroids = vec![vec![0.0; dim]; train.num_classes];
    let mut counts = vec![0usize; train.num_classes];
    for (e, &y) in eff.iter().zip(&train.labels) {
        counts[y] += 1;
        for (c, v) in centroids[y].iter_mut().zip(e) {
            *c += v;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        for v in c.iter_mut() {
            *v /= n.max(1) as f64;
        }
    }
    let mut dists: Vec<f64> = eff
        .iter()
        .zip(&train.labels)
        .map(|(e, &y)| {
            crate::linalg::norm2(&e.iter().zip(&centroids[y]).map(|(a, b)| a - b).collect::<Vec<f64>>())
        })
        .collect();
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let median = dists[dists.len() / 2];
    if median <= 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    Ok(median)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Trimmed grid for fast structural checks; the bundled default is
    /// exercised by the acceptance suite.
    fn small_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.seed = 11;
        config.dataset.train_per_class = 50;
        config.dataset.test_per_class = 40;
        config.dataset.ood_per_set = 60;
        config.train.epochs = 16;
        config.train.outlier_start_epoch = 6;
        config.train.outlier_candidates = 200;
        config
    }

    #[test]
    fn grid_structure_and_blindspot_facts() {
        let out = run_blindspot_experiment(&small_config()).unwrap();
        let report = &out.report;
        assert_eq!(report.variants.len(), 4);
        assert_eq!(report.seed, 11);

        let baseline = &report.variants[0];
        assert!(!baseline.diverged);
        // 8-dimensional features, 2 classes: nullity 6
        assert_eq!(baseline.nullity, Some(6));
        assert!(baseline.metrics.len() >= 3);
        let nsv = baseline.metrics.iter().find(|m| m.name == "nsv_attack").unwrap();
        assert_eq!(nsv.fpr95, 1.0, "null-space attacks must be invisible to the baseline");

        // reduction variants: square head, no null space, nsv recorded as skipped
        for v in &report.variants[1..] {
            assert_eq!(v.nullity, Some(0), "{}", v.name);
            let stats = v.attacks.iter().find(|a| a.name == "nsv_attack").unwrap();
            assert_eq!(stats.skipped.as_deref(), Some("NoNullSpace"));
            assert!(v.metrics.iter().all(|m| m.name != "nsv_attack"));
            assert!(v.metrics.len() >= 3);
            assert_eq!(v.composed_nullity, Some(6), "upstream blind spots remain informational");
        }
    }

    #[test]
    fn experiment_is_deterministic_modulo_timestamp() {
        let config = small_config();
        let mut a = run_blindspot_experiment(&config).unwrap();
        let mut b = run_blindspot_experiment(&config).unwrap();
        a.report.timestamp = String::new();
        b.report.timestamp = String::new();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
        assert_eq!(a.energies_csv(), b.energies_csv());
    }

    #[test]
    fn energy_table_covers_every_set() {
        let out = run_blindspot_experiment(&small_config()).unwrap();
        let names: std::collections::BTreeSet<&str> =
            out.energies.iter().map(|(n, _)| n.as_str()).collect();
        assert!(names.contains("baseline/id_test"));
        assert!(names.contains("baseline/nsv_attack"));
        assert!(names.contains("nsr/lsv_attack"));
        assert!(!names.contains("nsr/nsv_attack"), "skipped set must not emit rows");
        let csv = out.energies_csv();
        assert!(csv.starts_with("set_name,energy\n"));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut config = small_config();
        config.variants.clear();
        assert!(matches!(run_blindspot_experiment(&config), Err(Error::ConfigError(_))));

        let mut config = small_config();
        config.variants[1].name = "baseline".into();
        assert!(matches!(run_blindspot_experiment(&config), Err(Error::ConfigError(_))));

        let mut config = small_config();
        config.attack.d_b = Some(-1.0);
        assert!(matches!(run_blindspot_experiment(&config), Err(Error::ConfigError(_))));
    }
}
