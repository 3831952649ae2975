//! Training and evaluation: Adam with decoupled weight decay, the epoch
//! loop over clip batches, sliding-window video inference,
//! leave-one-subject-out cross-validation, and the four-variant ablation.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{lr_schedule, ExperimentConfig, LossKind};
use crate::data::{clip_at, context_window, make_batch, SamplingConfig, Video};
use crate::fusion::Model;
use crate::losses::{
    ccc_loss, contrastive_loss, cosine_similarity_matrix, label_similarity_matrix,
    relational_loss, rmse_loss, total_loss, ScaleDirection,
};
use crate::metrics::{metrics_report, MetricsReport};
use crate::tensor::{
    backward, stack_rows, ParameterStore, Result, TensorError, Value,
};

/// Adam with decoupled weight decay. Moment state is keyed by parameter
/// name, so the update order follows the store's name order.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Adam {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update over every trainable parameter that received a gradient.
    /// Aborts on a non-finite gradient, naming the parameter.
    pub fn step(&mut self, store: &ParameterStore, lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, param) in store.iter_trainable() {
            let grad = match param.grad() {
                Some(g) => g,
                None => continue,
            };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(TensorError::Domain {
                    op: "adam_step",
                    what: format!("non-finite gradient in parameter {name}"),
                });
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let mut data = param.data();
            for i in 0..grad.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * data[i]);
            }
            param.set_data(&data);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub l_reg: f64,
    pub l_rel: f64,
    pub l_total: f64,
}

/// One epoch of batched updates on `train_videos`. Returns losses
/// averaged over batches.
pub fn train_epoch(
    model: &Model,
    store: &ParameterStore,
    adam: &mut Adam,
    train_videos: &[Video],
    cfg: &ExperimentConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    let t = &cfg.training;
    let lr = lr_schedule(t.lr, epoch);
    let batches = ((t.batches_per_epoch as f64 * t.subsample_fraction).ceil() as usize).max(1);
    let mut sums = (0.0, 0.0, 0.0);
    for _ in 0..batches {
        let batch = make_batch(train_videos, t.b, &cfg.sampling, t.augment, rng)?;
        let mut preds = Vec::with_capacity(t.b);
        let mut zs = Vec::with_capacity(t.b);
        let mut targets = Vec::with_capacity(t.b);
        let mut sim_labels = Vec::with_capacity(t.b);
        for item in &batch {
            let (out, z) =
                model.forward_pipeline(store, &item.clip, &item.context, true, rng.gen())?;
            preds.push(out.per_label);
            zs.push(z);
            targets.push(item.label_train.clone());
            sim_labels.push(item.label_sim.clone());
        }
        let pred = stack_rows(&preds)?;
        let target = Value::constant(
            &[t.b, cfg.head.c],
            targets.iter().flatten().copied().collect(),
        );
        let l_reg = match t.loss_kind {
            LossKind::Rmse => rmse_loss(&pred, &target)?,
            LossKind::OneMinusCcc => ccc_loss(&pred, &target)?,
        };
        let mhat = cosine_similarity_matrix(&zs)?;
        let m = label_similarity_matrix(&sim_labels)?;
        let l_rel = relational_loss(&mhat, &m)?;
        let l_total = total_loss(&l_reg, &l_rel, t.lambda)?;
        sums.0 += l_reg.item();
        sums.1 += l_rel.item();
        sums.2 += l_total.item();
        store.zero_grads();
        backward(&l_total)?;
        adam.step(store, lr)?;
    }
    let n = batches as f64;
    Ok(EpochStats {
        epoch,
        lr,
        l_reg: sums.0 / n,
        l_rel: sums.1 / n,
        l_total: sums.2 / n,
    })
}

/// Pretraining epoch with the contrastive objective: two clips per video
/// are positives, everything else in the batch is a negative.
pub fn contrastive_epoch(
    model: &Model,
    store: &ParameterStore,
    adam: &mut Adam,
    train_videos: &[Video],
    cfg: &ExperimentConfig,
    epoch: usize,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let t = &cfg.training;
    let lr = lr_schedule(t.lr, epoch);
    let batches = ((t.batches_per_epoch as f64 * t.subsample_fraction).ceil() as usize).max(1);
    let mut sum = 0.0;
    for _ in 0..batches {
        let batch = make_batch(train_videos, t.b, &cfg.sampling, t.augment, rng)?;
        let mut anchors = Vec::with_capacity(t.b);
        let mut positives = Vec::with_capacity(t.b);
        for item in &batch {
            let video = train_videos
                .iter()
                .find(|v| v.video_id == item.clip.video_id)
                .expect("batch clip comes from the train set");
            let second = crate::data::sample_clip(video, &cfg.sampling, rng);
            anchors.push(model.encoder.encode_clip(store, &item.clip)?);
            positives.push(model.encoder.encode_clip(store, &second)?);
        }
        let loss = contrastive_loss(&anchors, &positives, temperature)?;
        sum += loss.item();
        store.zero_grads();
        backward(&loss)?;
        adam.step(store, lr)?;
    }
    Ok(sum / batches as f64)
}

/// Clamp a training-range prediction and map it back to the native range.
fn unscale_prediction(pred: &[f64], video: &Video) -> Vec<f64> {
    pred.iter()
        .zip(video.labels.scale.components.iter())
        .map(|(p, r)| {
            let v = p.clamp(r.train_lo.min(r.train_hi), r.train_lo.max(r.train_hi));
            r.native_lo + (v - r.train_lo) / (r.train_hi - r.train_lo)
                * (r.native_hi - r.native_lo)
        })
        .collect()
}

/// Video-level prediction: non-overlapping stride-T windows (a trailing
/// partial window is dropped; a video shorter than T yields one looped
/// clip), clip predictions averaged, result mapped to the native range.
/// Also returns the mean clip feature for alignment diagnostics.
pub fn infer_video(
    model: &Model,
    store: &ParameterStore,
    video: &Video,
    sampling: &SamplingConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = sampling.t;
    let starts: Vec<usize> = if video.l < t {
        log::info!(
            "video {} has {} frames < clip length {}; using one looped clip",
            video.video_id,
            video.l,
            t
        );
        vec![0]
    } else {
        (0..=(video.l - t)).step_by(t).collect()
    };
    let c = video.labels.y.len();
    let d = model.encoder.cfg.d;
    let mut pred_sum = vec![0.0; c];
    let mut z_sum = vec![0.0; d];
    for start in &starts {
        let clip = clip_at(video, *start, t);
        let context = context_window(video, &clip, sampling);
        let (out, z) = model.forward_pipeline(store, &clip, &context, false, 0)?;
        for (acc, v) in pred_sum.iter_mut().zip(out.per_label.data()) {
            *acc += v;
        }
        for (acc, v) in z_sum.iter_mut().zip(z.data()) {
            *acc += v;
        }
    }
    let n = starts.len() as f64;
    let mean_pred: Vec<f64> = pred_sum.iter().map(|v| v / n).collect();
    let mean_z: Vec<f64> = z_sum.iter().map(|v| v / n).collect();
    Ok((unscale_prediction(&mean_pred, video), mean_z))
}

/// Pearson correlation between the off-diagonal entries of the feature
/// cosine matrix and the label cosine matrix; 1.0 means the feature space
/// mirrors label similarity exactly. None when either side is constant.
pub fn alignment_score(features: &[Vec<f64>], sim_labels: &[Vec<f64>]) -> Option<f64> {
    let n = features.len();
    if n < 3 {
        return None;
    }
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb).max(1e-12)
    };
    let mut fs = Vec::new();
    let mut ls = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                fs.push(cos(&features[i], &features[j]));
                ls.push(cos(&sim_labels[i], &sim_labels[j]));
            }
        }
    }
    crate::metrics::pcc(&fs, &ls)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldRecord {
    pub held_out_subject: String,
    pub epochs: Vec<EpochStats>,
    /// Per-fold metrics; None when the fold is too small to evaluate.
    pub metrics: Option<MetricsReport>,
}

/// Full record of one cross-validated run, serializable to JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub folds: Vec<FoldRecord>,
    /// Metrics over predictions pooled across all folds.
    pub pooled: MetricsReport,
    pub alignment: Option<f64>,
    pub wall_clock_seconds: f64,
}

impl RunRecord {
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("serializable"))
    }
}

/// Train on all subjects except one, for every subject, and pool the
/// held-out predictions. Deterministic given the config seeds.
pub fn run_cross_validation(cfg: &ExperimentConfig, corpus: &[Video]) -> Result<RunRecord> {
    cfg.validate().map_err(|e| TensorError::Domain {
        op: "run_cross_validation",
        what: e.to_string(),
    })?;
    let started = Instant::now();
    let mut subjects: Vec<String> = corpus.iter().map(|v| v.subject_id.clone()).collect();
    subjects.sort();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(TensorError::Domain {
            op: "run_cross_validation",
            what: format!("need at least 2 subjects, got {}", subjects.len()),
        });
    }
    let mut folds = Vec::new();
    let mut pooled_preds: Vec<Vec<f64>> = Vec::new();
    let mut pooled_targets: Vec<Vec<f64>> = Vec::new();
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut sim_labels: Vec<Vec<f64>> = Vec::new();
    let label_names: Vec<String> = (0..cfg.head.c).map(|c| format!("label{c}")).collect();
    for (fold_idx, held_out) in subjects.iter().enumerate() {
        let train_videos: Vec<Video> = corpus
            .iter()
            .filter(|v| &v.subject_id != held_out)
            .cloned()
            .collect();
        let eval_videos: Vec<&Video> = corpus
            .iter()
            .filter(|v| &v.subject_id == held_out)
            .collect();
        let model = Model::new(cfg.encoder.clone(), cfg.head.clone());
        let store = model.init_params(cfg.seeds.init)?;
        let mut adam = Adam::new(cfg.training.weight_decay);
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seeds.train.wrapping_add(fold_idx as u64 * 0x9e3779b9));
        let mut epochs = Vec::with_capacity(cfg.training.epochs);
        for epoch in 0..cfg.training.epochs {
            let stats =
                train_epoch(&model, &store, &mut adam, &train_videos, cfg, epoch, &mut rng)?;
            log::debug!(
                "fold {held_out} epoch {epoch}: reg {:.4} rel {:.4}",
                stats.l_reg,
                stats.l_rel
            );
            epochs.push(stats);
        }
        let mut fold_preds = Vec::new();
        let mut fold_targets = Vec::new();
        for video in &eval_videos {
            let (pred, z) = infer_video(&model, &store, video, &cfg.sampling)?;
            fold_preds.push(pred.clone());
            fold_targets.push(video.labels.y.clone());
            features.push(z);
            sim_labels.push(
                video
                    .labels
                    .scaled(ScaleDirection::ToTrainRange)?
                    .for_similarity(),
            );
            pooled_preds.push(pred);
            pooled_targets.push(video.labels.y.clone());
        }
        let fold_metrics = metrics_report(&fold_preds, &fold_targets, &label_names).ok();
        folds.push(FoldRecord {
            held_out_subject: held_out.clone(),
            epochs,
            metrics: fold_metrics,
        });
    }
    let pooled = metrics_report(&pooled_preds, &pooled_targets, &label_names).map_err(|e| {
        TensorError::Domain {
            op: "run_cross_validation",
            what: e.to_string(),
        }
    })?;
    let alignment = alignment_score(&features, &sim_labels);
    Ok(RunRecord {
        config: cfg.clone(),
        folds,
        pooled,
        alignment,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Proposed,
    NoRelational,
    NoContextNoRelational,
    ContrastivePretrain,
}

impl AblationVariant {
    pub fn all() -> [AblationVariant; 4] {
        [
            AblationVariant::Proposed,
            AblationVariant::NoRelational,
            AblationVariant::NoContextNoRelational,
            AblationVariant::ContrastivePretrain,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::Proposed => "proposed",
            AblationVariant::NoRelational => "no_relational",
            AblationVariant::NoContextNoRelational => "no_context_no_relational",
            AblationVariant::ContrastivePretrain => "contrastive_pretrain",
        }
    }

    /// The configuration delta this variant applies.
    pub fn apply(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = cfg.clone();
        match self {
            AblationVariant::Proposed => {}
            AblationVariant::NoRelational => cfg.training.lambda = 0.0,
            AblationVariant::NoContextNoRelational => {
                cfg.training.lambda = 0.0;
                cfg.sampling.k = 0;
            }
            AblationVariant::ContrastivePretrain => cfg.training.lambda = 0.0,
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationResult {
    pub variant: AblationVariant,
    pub record: RunRecord,
}

pub const CONTRASTIVE_PRETRAIN_EPOCHS: usize = 10;
pub const CONTRASTIVE_TEMPERATURE: f64 = 0.1;

/// Cross-validation for the contrastive variant: pretrain the encoder
/// with the contrastive objective, freeze it, then train the head with
/// the regression loss alone.
fn run_contrastive_cv(
    cfg: &ExperimentConfig,
    corpus: &[Video],
    pretrain_epochs: usize,
) -> Result<RunRecord> {
    let started = Instant::now();
    let mut subjects: Vec<String> = corpus.iter().map(|v| v.subject_id.clone()).collect();
    subjects.sort();
    subjects.dedup();
    let label_names: Vec<String> = (0..cfg.head.c).map(|c| format!("label{c}")).collect();
    let mut folds = Vec::new();
    let mut pooled_preds = Vec::new();
    let mut pooled_targets = Vec::new();
    let mut features = Vec::new();
    let mut sim_labels = Vec::new();
    for (fold_idx, held_out) in subjects.iter().enumerate() {
        let train_videos: Vec<Video> = corpus
            .iter()
            .filter(|v| &v.subject_id != held_out)
            .cloned()
            .collect();
        let model = Model::new(cfg.encoder.clone(), cfg.head.clone());
        let mut store = model.init_params(cfg.seeds.init)?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seeds.train.wrapping_add(fold_idx as u64 * 0x9e3779b9));
        let mut adam = Adam::new(cfg.training.weight_decay);
        for epoch in 0..pretrain_epochs {
            contrastive_epoch(
                &model,
                &store,
                &mut adam,
                &train_videos,
                cfg,
                epoch,
                CONTRASTIVE_TEMPERATURE,
                &mut rng,
            )?;
        }
        store.freeze_prefix("encoder.");
        let mut adam = Adam::new(cfg.training.weight_decay);
        let mut epochs = Vec::new();
        for epoch in 0..cfg.training.epochs {
            epochs.push(train_epoch(
                &model,
                &store,
                &mut adam,
                &train_videos,
                cfg,
                epoch,
                &mut rng,
            )?);
        }
        let mut fold_preds = Vec::new();
        let mut fold_targets = Vec::new();
        for video in corpus.iter().filter(|v| &v.subject_id == held_out) {
            let (pred, z) = infer_video(&model, &store, video, &cfg.sampling)?;
            fold_preds.push(pred.clone());
            fold_targets.push(video.labels.y.clone());
            features.push(z);
            sim_labels.push(
                video
                    .labels
                    .scaled(ScaleDirection::ToTrainRange)?
                    .for_similarity(),
            );
            pooled_preds.push(pred);
            pooled_targets.push(video.labels.y.clone());
        }
        folds.push(FoldRecord {
            held_out_subject: held_out.clone(),
            epochs,
            metrics: metrics_report(&fold_preds, &fold_targets, &label_names).ok(),
        });
    }
    let pooled = metrics_report(&pooled_preds, &pooled_targets, &label_names).map_err(|e| {
        TensorError::Domain {
            op: "run_cross_validation",
            what: e.to_string(),
        }
    })?;
    Ok(RunRecord {
        config: cfg.clone(),
        folds,
        pooled,
        alignment: alignment_score(&features, &sim_labels),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Run all four variants on a shared corpus with shared seeds.
pub fn run_ablation(cfg: &ExperimentConfig, corpus: &[Video]) -> Result<Vec<AblationResult>> {
    let mut results = Vec::new();
    for variant in AblationVariant::all() {
        let vcfg = variant.apply(cfg);
        log::info!("ablation variant: {}", variant.name());
        let record = match variant {
            AblationVariant::ContrastivePretrain => {
                run_contrastive_cv(&vcfg, corpus, CONTRASTIVE_PRETRAIN_EPOCHS)?
            }
            _ => run_cross_validation(&vcfg, corpus)?,
        };
        results.push(AblationResult { variant, record });
    }
    Ok(results)
}
