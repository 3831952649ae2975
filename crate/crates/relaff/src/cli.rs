//! Command-line interface: corpus generation, training, ablation,
//! gradient checking, and evaluation of saved weights.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, ExperimentConfig};
use crate::data::{self, Video};
use crate::fusion::Model;
use crate::losses::{
    ccc_loss, contrastive_loss, cosine_similarity_matrix, label_similarity_matrix,
    relational_loss, rmse_loss, LabelScale, LabelVector,
};
use crate::metrics::metrics_report;
use crate::tensor::{self, grad_check, ParameterStore, Value};
use crate::train::{self, Adam, RunRecord};
use crate::weights;

#[derive(Parser)]
#[command(name = "relaff", about = "Context-attention video regression on synthetic corpora")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON); defaults to a small built-in one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path config overrides, e.g. seeds.train=9 (repeatable).
    #[arg(long = "seed-override", value_name = "KEY=VALUE")]
    seed_override: Vec<String>,
    /// Worker count; accepted for forward compatibility, runs are
    /// single-threaded to stay byte-deterministic.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus on disk.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Output directory for the corpus.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated training; writes a run record, pooled metrics, and
    /// final weights fitted on the whole corpus.
    Train {
        #[command(flatten)]
        common: Common,
        /// Corpus directory; generated from the config when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Output directory for run.json, metrics.csv, model.rafw.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the four-variant ablation on one shared corpus.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check analytic gradients of every operation, loss, and the full
    /// pipeline against central differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate saved weights on a corpus.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Weights file written by `train`.
        #[arg(long)]
        weights: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::small(),
    };
    for entry in &common.seed_override {
        cfg.apply_override(entry)?;
    }
    cfg.validate()?;
    if common.jobs > 1 {
        log::warn!("--jobs {} requested; running single-threaded", common.jobs);
    }
    Ok(cfg)
}

fn load_or_generate(cfg: &ExperimentConfig, corpus: &Option<PathBuf>) -> Result<Vec<Video>, String> {
    match corpus {
        Some(dir) => data::io::load_corpus(dir).map_err(|e| e.to_string()),
        None => {
            log::info!("no --corpus given; generating from config seeds");
            Ok(data::generate_corpus(&cfg.synth, cfg.seeds.corpus))
        }
    }
}

/// Fit one model on the full corpus (no held-out subject) for deployment
/// weights.
fn fit_full(cfg: &ExperimentConfig, corpus: &[Video]) -> tensor::Result<(Model, ParameterStore)> {
    let model = Model::new(cfg.encoder.clone(), cfg.head.clone());
    let store = model.init_params(cfg.seeds.init)?;
    let mut adam = Adam::new(cfg.training.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.train);
    for epoch in 0..cfg.training.epochs {
        train::train_epoch(&model, &store, &mut adam, corpus, cfg, epoch, &mut rng)?;
    }
    Ok((model, store))
}

fn write_record(out: &Path, record: &RunRecord) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    record.write(&out.join("run.json"))?;
    std::fs::write(out.join("metrics.csv"), record.pooled.to_csv())
}

/// One named check and its relative gradient error.
pub struct GradCheckItem {
    pub name: String,
    pub err: f64,
}

pub const GRADCHECK_TOL: f64 = 1e-5;

/// Gradient checks for every differentiable operation, every loss, and
/// the end-to-end pipeline, on a small model (D = 16, T = 4, B = 2).
pub fn run_gradcheck() -> tensor::Result<Vec<GradCheckItem>> {
    let mut items = Vec::new();
    let push = |items: &mut Vec<GradCheckItem>, name: &str, err: f64| {
        items.push(GradCheckItem {
            name: name.to_string(),
            err,
        });
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let vec6 = |rng: &mut ChaCha8Rng| {
        Value::parameter(&[6], (0..6).map(|_| rng.gen_range(0.2..1.0)).collect())
    };
    let mat23 = |rng: &mut ChaCha8Rng| {
        Value::parameter(&[2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };

    // elementwise and reduction ops, each reduced to a scalar via sum/mean
    {
        let a = vec6(&mut rng);
        let b = vec6(&mut rng);
        type OpCase = (&'static str, Box<dyn Fn(&Value, &Value) -> tensor::Result<Value>>);
        let cases: Vec<OpCase> = vec![
            ("add", Box::new(|a, b| tensor::sum(&tensor::add(a, b)?))),
            ("sub", Box::new(|a, b| tensor::sum(&tensor::sub(a, b)?))),
            ("mul", Box::new(|a, b| tensor::sum(&tensor::mul(a, b)?))),
            ("div", Box::new(|a, b| tensor::sum(&tensor::div(a, b)?))),
            ("scale", Box::new(|a, _| tensor::sum(&tensor::scale(a, 1.7)?))),
            ("relu", Box::new(|a, b| tensor::sum(&tensor::relu(&tensor::sub(a, b)?)?))),
            ("sqrt", Box::new(|a, _| tensor::sum(&tensor::sqrt(a)?))),
            ("ln", Box::new(|a, _| tensor::sum(&tensor::ln(a)?))),
            ("mean", Box::new(|a, _| tensor::mean(a))),
            ("concat", Box::new(|a, b| tensor::mean(&tensor::concat(a, b)?))),
            ("slice", Box::new(|a, _| tensor::sum(&tensor::slice(a, 1, 4)?))),
            (
                "add_scalar",
                Box::new(|a, b| tensor::sum(&tensor::add_scalar(a, &tensor::mean(b)?)?)),
            ),
            (
                "mul_scalar",
                Box::new(|a, b| tensor::sum(&tensor::mul_scalar(a, &tensor::mean(b)?)?)),
            ),
            (
                "dropout_mask",
                Box::new(|a, _| {
                    tensor::sum(&tensor::dropout_mask(
                        a,
                        &[true, false, true, true, false, true],
                        0.3,
                    )?)
                }),
            ),
        ];
        for (name, f) in cases {
            push(&mut items, name, grad_check(|x| f(x, &b), &a, 1e-5)?);
        }
    }

    // matrix ops; mixers are detached up front so perturbing the checked
    // parameter cannot leak through them
    {
        let a = mat23(&mut rng);
        let b = Value::parameter(&[3, 2], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let a_fixed = a.detach();
        let b_fixed = b.detach();
        push(
            &mut items,
            "matmul",
            grad_check(|x| tensor::sum(&tensor::matmul(x, &b)?), &a, 1e-5)?,
        );
        push(
            &mut items,
            "transpose",
            grad_check(
                |x| tensor::sum(&tensor::mul(&tensor::transpose(x)?, &a_fixed)?),
                &b,
                1e-5,
            )?,
        );
        push(
            &mut items,
            "softmax_rows",
            grad_check(
                |x| tensor::sum(&tensor::mul(&tensor::softmax_rows(x)?, &b_fixed)?),
                &b,
                1e-5,
            )?,
        );
        push(
            &mut items,
            "mean_rows",
            grad_check(|x| tensor::sum(&tensor::mean_rows(x)?), &a, 1e-5)?,
        );
        push(
            &mut items,
            "row",
            grad_check(|x| tensor::sum(&tensor::row(x, 1)?), &a, 1e-5)?,
        );
        let mixer = vec6(&mut rng).detach();
        push(
            &mut items,
            "reshape",
            grad_check(
                |x| tensor::sum(&tensor::mul(&tensor::reshape(x, &[6])?, &mixer)?),
                &a,
                1e-5,
            )?,
        );
        let bias = Value::parameter(&[3], vec![0.3, -0.2, 0.5]);
        push(
            &mut items,
            "add_bias",
            grad_check(
                |x| tensor::sum(&tensor::mul(&tensor::add_bias(&a_fixed, x)?, &a_fixed)?),
                &bias,
                1e-5,
            )?,
        );
        let rows = vec![
            Value::parameter(&[3], vec![0.2, -0.5, 0.8]),
            Value::parameter(&[3], vec![0.9, 0.1, -0.3]),
        ];
        push(
            &mut items,
            "stack_rows",
            grad_check(
                |x| tensor::sum(&tensor::mul(&tensor::stack_rows(&[x.clone(), rows[1].clone()])?, &a_fixed)?),
                &rows[0],
                1e-5,
            )?,
        );
        push(
            &mut items,
            "concat_cols",
            grad_check(
                |x| tensor::sum(&tensor::mul(&tensor::concat_cols(&[x.clone(), b_fixed.clone()])?, &Value::constant(&[3, 4], (0..12).map(|i| 0.1 * i as f64).collect()))?),
                &b,
                1e-5,
            )?,
        );
        let gamma = Value::parameter(&[3], vec![1.1, 0.9, 1.3]);
        let beta = Value::parameter(&[3], vec![0.1, -0.1, 0.0]);
        push(
            &mut items,
            "layer_norm",
            grad_check(
                |x| tensor::sum(&tensor::mul(&tensor::layer_norm(x, &gamma, &beta, 1e-5)?, &a_fixed)?),
                &a,
                1e-5,
            )?,
        );
        push(
            &mut items,
            "cosine_matrix",
            grad_check(
                |x| tensor::sum(&tensor::cosine_matrix(x, 1e-12)?),
                &a,
                1e-5,
            )?,
        );
    }

    // losses
    {
        let b = 3usize;
        let c = 2usize;
        let pred = Value::parameter(&[b, c], vec![0.4, -0.2, 0.1, 0.8, -0.6, 0.3]);
        let target = Value::constant(&[b, c], vec![0.3, -0.1, 0.2, 0.5, -0.4, 0.1]);
        push(
            &mut items,
            "rmse_loss",
            grad_check(|x| rmse_loss(x, &target), &pred, 1e-5)?,
        );
        push(
            &mut items,
            "ccc_loss",
            grad_check(|x| ccc_loss(x, &target), &pred, 1e-5)?,
        );
        let zs: Vec<Value> = (0..b)
            .map(|i| Value::parameter(&[4], (0..4).map(|j| ((i * 4 + j) as f64 * 0.37).sin() + 0.1).collect()))
            .collect();
        let labels: Vec<Vec<f64>> = (0..b)
            .map(|i| (0..c).map(|j| 0.2 + 0.1 * (i + j) as f64).collect())
            .collect();
        let m = label_similarity_matrix(&labels)?;
        push(
            &mut items,
            "relational_loss",
            grad_check(
                |x| {
                    let mut rows = zs.clone();
                    rows[0] = x.clone();
                    relational_loss(&cosine_similarity_matrix(&rows)?, &m)
                },
                &zs[0],
                1e-5,
            )?,
        );
        push(
            &mut items,
            "contrastive_loss",
            grad_check(
                |x| {
                    contrastive_loss(
                        &[x.clone(), zs[1].clone()],
                        &[zs[2].clone(), zs[1].clone()],
                        0.1,
                    )
                },
                &zs[0],
                1e-5,
            )?,
        );
    }

    // full pipeline with the combined objective, dropout off
    {
        let mut cfg = ExperimentConfig::small();
        cfg.head.dropout_rate = 0.0;
        let model = Model::new(cfg.encoder.clone(), cfg.head.clone());
        let store = model.init_params(cfg.seeds.init)?;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mk_clip = |rng: &mut ChaCha8Rng| crate::encoder::Clip {
            frames: (0..cfg.encoder.t * cfg.encoder.h * cfg.encoder.w * 3)
                .map(|_| rng.gen_range(0.0..1.0))
                .collect(),
            video_id: "g".to_string(),
            start_frame: 0,
            label: LabelVector::new(vec![0.2, -0.5], LabelScale::affect(2)),
        };
        let clips: Vec<_> = (0..2).map(|_| mk_clip(&mut rng)).collect();
        // The context branch is stop-gradient; hold its features fixed so
        // central differences agree with the analytic gradient.
        let contexts: Vec<Value> = clips
            .iter()
            .map(|c| {
                let window = vec![mk_clip(&mut rng), c.clone(), mk_clip(&mut rng)];
                model.encoder.encode_context(&store, &window, None)
            })
            .collect::<tensor::Result<_>>()?;
        let labels = vec![vec![0.5, 0.9], vec![0.8, 0.2]];
        let m = label_similarity_matrix(&labels)?;
        let target = Value::constant(&[2, 2], vec![0.2, -0.5, 0.4, 0.1]);
        for name in [
            "encoder.backbone.fc.weight",
            "encoder.backbone.fc.bias",
            "encoder.transformer.layer0.attn.q0.weight",
            "encoder.transformer.layer0.ln1.gamma",
            "encoder.transformer.layer0.ff.fc1.weight",
            "fusion.attn.theta.weight",
            "fusion.attn.g.weight",
            "head.fc1.weight",
            "head.label1.bias",
        ] {
            let p = store.get(name)?;
            store.zero_grads();
            let err = grad_check(
                |_| {
                    let mut preds = Vec::new();
                    let mut zs = Vec::new();
                    for (clip, ctx) in clips.iter().zip(contexts.iter()) {
                        let z = model.encoder.encode_clip(&store, clip)?;
                        let fused = model.fuse(&store, &z, ctx)?;
                        let out = model.regression_head(&store, &fused, true, 0)?;
                        preds.push(out.per_label);
                        zs.push(z);
                    }
                    let l_reg = rmse_loss(&tensor::stack_rows(&preds)?, &target)?;
                    let l_rel = relational_loss(&cosine_similarity_matrix(&zs)?, &m)?;
                    crate::losses::total_loss(&l_reg, &l_rel, 2.0)
                },
                &p,
                1e-5,
            )?;
            push(&mut items, &format!("pipeline:{name}"), err);
        }
    }
    Ok(items)
}

fn cmd_gradcheck() -> ExitCode {
    match run_gradcheck() {
        Ok(items) => {
            let mut ok = true;
            for item in &items {
                let pass = item.err < GRADCHECK_TOL;
                ok &= pass;
                println!(
                    "{} {:<40} rel err {:.3e}",
                    if pass { "PASS" } else { "FAIL" },
                    item.name,
                    item.err
                );
            }
            if ok {
                println!("gradcheck: all {} checks passed", items.len());
                ExitCode::SUCCESS
            } else {
                eprintln!("gradcheck: some checks exceeded {GRADCHECK_TOL}");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("gradcheck error: {e}");
            ExitCode::from(1)
        }
    }
}

fn fail(msg: String, code: u8) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RELAFF_LOG", "warn")).init();
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Gen { common, .. }
        | Command::Train { common, .. }
        | Command::Ablate { common, .. }
        | Command::Gradcheck { common }
        | Command::Eval { common, .. } => common,
    };
    let cfg = match load_config(common) {
        Ok(cfg) => cfg,
        Err(e) => return fail(e.to_string(), 2),
    };
    match &cli.command {
        Command::Gen { out, .. } => {
            let corpus = data::generate_corpus(&cfg.synth, cfg.seeds.corpus);
            match data::io::save_corpus(out, &corpus) {
                Ok(()) => {
                    println!("wrote {} videos to {}", corpus.len(), out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e.to_string(), 1),
            }
        }
        Command::Train { corpus, out, .. } => {
            let videos = match load_or_generate(&cfg, corpus) {
                Ok(v) => v,
                Err(e) => return fail(e, 1),
            };
            let record = match train::run_cross_validation(&cfg, &videos) {
                Ok(r) => r,
                Err(e) => return fail(e.to_string(), 1),
            };
            if let Err(e) = write_record(out, &record) {
                return fail(e.to_string(), 1);
            }
            let (_, store) = match fit_full(&cfg, &videos) {
                Ok(v) => v,
                Err(e) => return fail(e.to_string(), 1),
            };
            if let Err(e) = weights::save_weights(&out.join("model.rafw"), &store) {
                return fail(e.to_string(), 1);
            }
            println!("{}", record.pooled.to_kv());
            if let Some(a) = record.alignment {
                println!("alignment_score={a:.4}");
            }
            println!("outputs in {}", out.display());
            ExitCode::SUCCESS
        }
        Command::Ablate { corpus, out, .. } => {
            let videos = match load_or_generate(&cfg, corpus) {
                Ok(v) => v,
                Err(e) => return fail(e, 1),
            };
            let results = match train::run_ablation(&cfg, &videos) {
                Ok(r) => r,
                Err(e) => return fail(e.to_string(), 1),
            };
            if let Err(e) = std::fs::create_dir_all(out).and_then(|_| {
                std::fs::write(
                    out.join("ablation.json"),
                    serde_json::to_string_pretty(&results
                        .iter()
                        .map(|r| (r.variant.name(), &r.record))
                        .collect::<Vec<_>>())
                    .expect("serializable"),
                )
            }) {
                return fail(e.to_string(), 1);
            }
            for r in &results {
                println!(
                    "{:<26} pooled CCC {} alignment {}",
                    r.variant.name(),
                    r.record
                        .pooled
                        .mean_ccc
                        .map_or("undefined".to_string(), |v| format!("{v:.4}")),
                    r.record
                        .alignment
                        .map_or("undefined".to_string(), |v| format!("{v:.4}")),
                );
            }
            ExitCode::SUCCESS
        }
        Command::Gradcheck { .. } => cmd_gradcheck(),
        Command::Eval {
            corpus, weights: wpath, ..
        } => {
            let videos = match data::io::load_corpus(corpus) {
                Ok(v) => v,
                Err(e) => return fail(e.to_string(), 1),
            };
            let model = Model::new(cfg.encoder.clone(), cfg.head.clone());
            let store = match model.init_params(cfg.seeds.init) {
                Ok(s) => s,
                Err(e) => return fail(e.to_string(), 1),
            };
            if let Err(e) = weights::load_weights(wpath, &store) {
                return fail(e.to_string(), 1);
            }
            let mut preds = Vec::new();
            let mut targets = Vec::new();
            for video in &videos {
                match train::infer_video(&model, &store, video, &cfg.sampling) {
                    Ok((p, _)) => {
                        preds.push(p);
                        targets.push(video.labels.y.clone());
                    }
                    Err(e) => return fail(e.to_string(), 1),
                }
            }
            let names: Vec<String> = (0..cfg.head.c).map(|c| format!("label{c}")).collect();
            match metrics_report(&preds, &targets, &names) {
                Ok(report) => {
                    print!("{}", report.to_csv());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e.to_string(), 1),
            }
        }
    }
}
