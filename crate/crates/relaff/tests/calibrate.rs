//! Manual calibration harness (ignored by default): prints pooled CCC and
//! alignment for the ablation variants across seeds.

use relaff::config::{ExperimentConfig, LossKind};
use relaff::data::generate_corpus;
use relaff::train::{run_ablation, run_cross_validation, AblationVariant};

fn base_cfg() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::small();
    cfg.synth.subjects = 4;
    cfg.synth.videos_per_subject = 4;
    cfg.synth.l = 48;
    cfg.synth.noise = 0.05;
    cfg.head.dropout_rate = 0.0;
    cfg.head.penultimate_width = 32;
    cfg.training.loss_kind = LossKind::Rmse;
    cfg.training.lambda = 2.0;
    cfg.training.b = 6;
    cfg.training.epochs = 10;
    cfg.training.batches_per_epoch = 120;
    cfg.training.lr = 0.003;
    cfg.training.subsample_fraction = 1.0;
    cfg
}

#[test]
#[ignore]
fn hyper_sweep() {
    let mut base = base_cfg();
    base.synth.context_dependence = 0.8;
    base.training.lambda = 0.0;
    base.sampling.k = 1;
    for loss in [LossKind::Rmse, LossKind::OneMinusCcc] {
        for lr in [0.003, 0.01, 0.03] {
            for bpe in [40usize, 120] {
                let mut cccs = Vec::new();
                let started = std::time::Instant::now();
                for seed in [1u64, 2, 3] {
                    let mut cfg = base.clone();
                    cfg.training.loss_kind = loss;
                    cfg.training.lr = lr;
                    cfg.training.batches_per_epoch = bpe;
                    cfg.seeds.corpus = seed;
                    cfg.seeds.init = seed + 100;
                    cfg.seeds.train = seed + 200;
                    let corpus = generate_corpus(&cfg.synth, cfg.seeds.corpus);
                    let rec = run_cross_validation(&cfg, &corpus).unwrap();
                    cccs.push(rec.pooled.mean_ccc.unwrap_or(f64::NAN));
                }
                println!(
                    "{loss:?} lr {lr} bpe {bpe}: ccc {:?} ({:.0}s)",
                    cccs.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
                    started.elapsed().as_secs_f64()
                );
            }
        }
    }
}

#[test]
#[ignore]
fn context_sweep() {
    let mut cfg = base_cfg();
    cfg.synth.context_dependence = 0.8;
    cfg.training.lambda = 0.0;
    for seed in [1u64, 2, 3] {
        cfg.seeds.corpus = seed;
        cfg.seeds.init = seed + 100;
        cfg.seeds.train = seed + 200;
        let corpus = generate_corpus(&cfg.synth, cfg.seeds.corpus);
        let started = std::time::Instant::now();
        let results = run_ablation(&cfg, &corpus).unwrap();
        for r in &results {
            if matches!(
                r.variant,
                AblationVariant::NoRelational | AblationVariant::NoContextNoRelational
            ) {
                println!(
                    "seed {seed} {:<26} ccc {:?} align {:?}",
                    r.variant.name(),
                    r.record.pooled.mean_ccc,
                    r.record.alignment
                );
                let f0 = &r.record.folds[0].epochs;
                let curve: Vec<String> =
                    f0.iter().map(|e| format!("{:.3}", e.l_reg)).collect();
                println!("    fold0 l_reg: {}", curve.join(" "));
            }
        }
        println!("  elapsed {:.1}s", started.elapsed().as_secs_f64());
    }
}

#[test]
#[ignore]
fn relational_sweep() {
    let mut cfg = base_cfg();
    cfg.synth.subjects = 8;
    cfg.synth.videos_per_subject = 2;
    cfg.synth.noise = 0.1;
    cfg.synth.context_dependence = 0.3;
    cfg.training.subsample_fraction = 0.2;
    cfg.training.batches_per_epoch = 50;
    for seed in [1u64, 2, 3] {
        cfg.seeds.corpus = seed;
        cfg.seeds.init = seed + 100;
        cfg.seeds.train = seed + 200;
        let corpus = generate_corpus(&cfg.synth, cfg.seeds.corpus);
        let started = std::time::Instant::now();
        let results = run_ablation(&cfg, &corpus).unwrap();
        for r in &results {
            println!(
                "seed {seed} {:<26} ccc {:?} align {:?}",
                r.variant.name(),
                r.record.pooled.mean_ccc,
                r.record.alignment
            );
        }
        println!("  elapsed {:.1}s", started.elapsed().as_secs_f64());
    }
}
