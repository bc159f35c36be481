use fever_ood::evalharness::{run_blindspot_experiment, ExperimentConfig};

fn main() {
    let config = ExperimentConfig::default();
    let t0 = std::time::Instant::now();
    let out = run_blindspot_experiment(&config).unwrap();
    println!("elapsed: {:?}", t0.elapsed());
    for v in &out.report.variants {
        println!("== {} sigma_min={:.3?} kappa={:.3?} nullity={:?} acc={:?}", v.name, v.sigma_min, v.kappa, v.nullity, v.id_accuracy);
        for m in &v.metrics {
            println!("   {:<14} fpr95={:.4} auroc={:.4}", m.name, m.fpr95, m.auroc);
        }
        for a in &v.attacks {
            println!("   {:<14} d_b={:.3} anchors={} gap={:?} skipped={:?}", a.name, a.d_b, a.n_anchors, a.mean_abs_energy_gap, a.skipped);
        }
    }
}
