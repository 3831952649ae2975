//! Context fusion and the regression head: the clip feature queries the
//! detached context stack through a single-head non-local block, the
//! attended vector is concatenated onto the clip feature, and a split
//! penultimate layer regresses every label (plus an optional total score).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Clip, Encoder, EncoderConfig};
use crate::nn::{Linear, Projection};
use crate::tensor::{
    concat, dropout_mask, matmul, relu, reshape, scale, slice, softmax_rows, transpose,
    ParameterStore, Result, TensorError, Value,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    /// Number of regression targets.
    pub c: usize,
    /// Penultimate width; split into C equal subsets.
    pub penultimate_width: usize,
    pub dropout_rate: f64,
    pub total_score_enabled: bool,
    /// Which labels carry a regression loss; unsupervised subsets only
    /// feed the total-score head.
    pub supervised_mask: Vec<bool>,
}

impl HeadConfig {
    pub fn affect(c: usize) -> HeadConfig {
        HeadConfig {
            c,
            penultimate_width: 4 * c * 32,
            dropout_rate: 0.1,
            total_score_enabled: false,
            supervised_mask: vec![true; c],
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.c == 0 {
            return Err("head.c must be at least 1".to_string());
        }
        if self.penultimate_width % self.c != 0 {
            return Err(format!(
                "head.penultimate_width ({}) must be divisible by head.c ({})",
                self.penultimate_width, self.c
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(format!(
                "head.dropout_rate ({}) must be in [0,1)",
                self.dropout_rate
            ));
        }
        if self.supervised_mask.len() != self.c {
            return Err("head.supervised_mask length must equal head.c".to_string());
        }
        if !self.supervised_mask.iter().any(|m| *m) {
            return Err("head.supervised_mask must supervise at least one label".to_string());
        }
        Ok(())
    }
}

/// Head output per clip. Values stay attached to the graph during training.
pub struct RegressionOutput {
    pub per_label: Value,
    pub total_score: Option<Value>,
    pub penultimate: Value,
}

/// The full trainable pipeline: shared-weight clip encoder, context
/// attention, regression head.
pub struct Model {
    pub encoder: Encoder,
    pub head_cfg: HeadConfig,
}

impl Model {
    pub fn new(encoder_cfg: EncoderConfig, head_cfg: HeadConfig) -> Model {
        Model {
            encoder: Encoder::new(encoder_cfg),
            head_cfg,
        }
    }

    /// Register all parameters into a fresh store, seeded.
    pub fn init_params(&self, init_seed: u64) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        self.encoder.register_params(&mut store, &mut rng)?;
        let d = self.encoder.cfg.d;
        Projection::register(&mut store, "fusion.attn.theta", d, d, &mut rng)?;
        Projection::register(&mut store, "fusion.attn.phi", d, d, &mut rng)?;
        Projection::register(&mut store, "fusion.attn.g", d, d, &mut rng)?;
        Linear::register(
            &mut store,
            "head.fc1",
            2 * d,
            self.head_cfg.penultimate_width,
            &mut rng,
        )?;
        let subset = self.head_cfg.penultimate_width / self.head_cfg.c;
        for c in 0..self.head_cfg.c {
            Linear::register(&mut store, &format!("head.label{c}"), subset, 1, &mut rng)?;
        }
        if self.head_cfg.total_score_enabled {
            Linear::register(
                &mut store,
                "head.total",
                self.head_cfg.penultimate_width,
                1,
                &mut rng,
            )?;
        }
        Ok(store)
    }

    /// Scaled dot-product attention of the clip feature over the context
    /// stack: softmax((theta(z) . phi(Z)^T) / sqrt(D)) . g(Z).
    pub fn nonlocal_attend(
        &self,
        store: &ParameterStore,
        z: &Value,
        context: &Value,
    ) -> Result<Value> {
        let d = self.encoder.cfg.d;
        if z.shape() != [d] || context.shape().len() != 2 || context.shape()[1] != d {
            return Err(TensorError::ShapeMismatch {
                op: "nonlocal_attend",
                lhs: z.shape().to_vec(),
                rhs: context.shape().to_vec(),
            });
        }
        let theta = Projection::lookup(store, "fusion.attn.theta")?;
        let phi = Projection::lookup(store, "fusion.attn.phi")?;
        let g = Projection::lookup(store, "fusion.attn.g")?;
        let q = theta.forward(&reshape(z, &[1, d])?)?;
        let k = phi.forward(context)?;
        let v = g.forward(context)?;
        let scores = scale(&matmul(&q, &transpose(&k)?)?, 1.0 / (d as f64).sqrt())?;
        let weights = softmax_rows(&scores)?;
        reshape(&matmul(&weights, &v)?, &[d])
    }

    /// The attention distribution itself (diagnostics).
    pub fn attention_weights(
        &self,
        store: &ParameterStore,
        z: &Value,
        context: &Value,
    ) -> Result<Vec<f64>> {
        let d = self.encoder.cfg.d;
        let theta = Projection::lookup(store, "fusion.attn.theta")?;
        let phi = Projection::lookup(store, "fusion.attn.phi")?;
        let q = theta.forward(&reshape(z, &[1, d])?)?;
        let k = phi.forward(context)?;
        let scores = scale(&matmul(&q, &transpose(&k)?)?, 1.0 / (d as f64).sqrt())?;
        Ok(softmax_rows(&scores)?.data())
    }

    /// concat(z, attended(z, Z)): first D entries are z itself.
    pub fn fuse(&self, store: &ParameterStore, z: &Value, context: &Value) -> Result<Value> {
        concat(z, &self.nonlocal_attend(store, z, context)?)
    }

    /// Penultimate = dropout(relu(fc1(fused))), split into C subsets with a
    /// one-output layer each; the total score reads the whole penultimate.
    pub fn regression_head(
        &self,
        store: &ParameterStore,
        fused: &Value,
        train_mode: bool,
        dropout_seed: u64,
    ) -> Result<RegressionOutput> {
        let cfg = &self.head_cfg;
        let fc1 = Linear::lookup(store, "head.fc1")?;
        let mut p = relu(&fc1.forward_vec(fused)?)?;
        if train_mode && cfg.dropout_rate > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            let mask: Vec<bool> = (0..p.len())
                .map(|_| rng.gen::<f64>() >= cfg.dropout_rate)
                .collect();
            p = dropout_mask(&p, &mask, cfg.dropout_rate)?;
        }
        let subset = cfg.penultimate_width / cfg.c;
        let mut preds = Vec::with_capacity(cfg.c);
        for c in 0..cfg.c {
            let part = slice(&p, c * subset, subset)?;
            let head = Linear::lookup(store, &format!("head.label{c}"))?;
            preds.push(head.forward_vec(&part)?);
        }
        let mut per_label = preds[0].clone();
        for pred in &preds[1..] {
            per_label = concat(&per_label, pred)?;
        }
        let total_score = if cfg.total_score_enabled {
            Some(Linear::lookup(store, "head.total")?.forward_vec(&p)?)
        } else {
            None
        };
        Ok(RegressionOutput {
            per_label,
            total_score,
            penultimate: p,
        })
    }

    /// Full forward pass for one clip and its (2K+1)-clip context window.
    /// Returns the head output and the gradient-carrying clip feature that
    /// feeds the relational loss. The context stack is detached.
    pub fn forward_pipeline(
        &self,
        store: &ParameterStore,
        clip: &Clip,
        context: &[Clip],
        train_mode: bool,
        dropout_seed: u64,
    ) -> Result<(RegressionOutput, Value)> {
        let z = self.encoder.encode_clip(store, clip)?;
        let ctx = self.encoder.encode_context(store, context, Some(&z))?;
        let fused = self.fuse(store, &z, &ctx)?;
        let out = self.regression_head(store, &fused, train_mode, dropout_seed)?;
        Ok((out, z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{LabelScale, LabelVector};
    use crate::tensor::{backward, grad_check, sum};

    fn tiny_model() -> Model {
        let enc = EncoderConfig {
            t: 4,
            h: 8,
            w: 8,
            d_f: 16,
            d: 16,
            transformer_layers: 1,
            attention_heads: 2,
            feedforward_width: 32,
            backbone_seed: 3,
        };
        let head = HeadConfig {
            c: 2,
            penultimate_width: 8,
            dropout_rate: 0.0,
            total_score_enabled: false,
            supervised_mask: vec![true, true],
        };
        Model::new(enc, head)
    }

    fn random_clip(cfg: &EncoderConfig, seed: u64) -> Clip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Clip {
            frames: (0..cfg.t * cfg.h * cfg.w * 3).map(|_| rng.gen_range(0.0..1.0)).collect(),
            video_id: format!("v{seed}"),
            start_frame: 0,
            label: LabelVector::new(vec![0.1, -0.4], LabelScale::affect(2)),
        }
    }

    #[test]
    fn single_slot_identity_attention() {
        // K = 0 with identity projections reduces to z itself
        let model = tiny_model();
        let store = model.init_params(5).unwrap();
        let d = 16;
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        for name in ["fusion.attn.theta", "fusion.attn.phi", "fusion.attn.g"] {
            store.get(&format!("{name}.weight")).unwrap().set_data(&eye);
        }
        let z = Value::parameter(&[d], (0..d).map(|i| 0.1 * i as f64).collect());
        let ctx = Value::constant(&[1, d], z.data());
        let out = model.nonlocal_attend(&store, &z, &ctx).unwrap();
        for (a, b) in out.data().iter().zip(z.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_weights_form_distribution() {
        let model = tiny_model();
        let store = model.init_params(5).unwrap();
        let z = Value::parameter(&[16], (0..16).map(|i| 0.05 * i as f64 - 0.3).collect());
        let ctx = Value::constant(&[5, 16], (0..80).map(|i| (i as f64 * 0.731).sin()).collect());
        let w = model.attention_weights(&store, &z, &ctx).unwrap();
        assert_eq!(w.len(), 5);
        assert!(w.iter().all(|v| *v >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_context_rows_make_attention_weight_free() {
        let model = tiny_model();
        let store = model.init_params(5).unwrap();
        let z = Value::parameter(&[16], (0..16).map(|i| 0.04 * i as f64).collect());
        let row: Vec<f64> = (0..16).map(|i| (i as f64 * 0.17).cos()).collect();
        let ctx = Value::constant(&[3, 16], row.repeat(3));
        let single = Value::constant(&[1, 16], row.clone());
        let a = model.nonlocal_attend(&store, &z, &ctx).unwrap().data();
        let b = model.nonlocal_attend(&store, &z, &single).unwrap().data();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_prefix_is_z_and_context_gets_no_gradient() {
        let model = tiny_model();
        let store = model.init_params(5).unwrap();
        let z = Value::parameter(&[16], (0..16).map(|i| 0.02 * i as f64 + 0.1).collect());
        let ctx_src = Value::parameter(&[3, 16], (0..48).map(|i| (i as f64 * 0.3).sin()).collect());
        let ctx = ctx_src.detach();
        let fused = model.fuse(&store, &z, &ctx).unwrap();
        assert_eq!(fused.len(), 32);
        assert_eq!(&fused.data()[..16], z.data().as_slice());

        store.zero_grads();
        z.zero_grad();
        ctx_src.zero_grad();
        backward(&sum(&fused).unwrap()).unwrap();
        assert!(ctx_src.grad().is_none());
        assert!(z.grad().is_some());
    }

    #[test]
    fn fused_length_is_2d() {
        // D = 2048 -> 4096, checked without running the full head
        let a = Value::constant(&[2048], vec![0.0; 2048]);
        let b = Value::constant(&[2048], vec![0.0; 2048]);
        assert_eq!(concat(&a, &b).unwrap().len(), 4096);
    }

    #[test]
    fn head_output_shapes_and_eval_determinism() {
        let model = tiny_model();
        let store = model.init_params(5).unwrap();
        let fused = Value::parameter(&[32], (0..32).map(|i| 0.03 * i as f64 - 0.4).collect());
        let out = model.regression_head(&store, &fused, false, 0).unwrap();
        assert_eq!(out.per_label.len(), 2);
        assert!(out.total_score.is_none());
        let out2 = model.regression_head(&store, &fused, false, 99).unwrap();
        assert_eq!(out.per_label.data(), out2.per_label.data());
    }

    #[test]
    fn panss_mode_head_shapes() {
        let enc = tiny_model().encoder.cfg.clone();
        let head = HeadConfig {
            c: 4,
            penultimate_width: 16,
            dropout_rate: 0.0,
            total_score_enabled: true,
            supervised_mask: vec![true, true, true, false],
        };
        head.validate().unwrap();
        let model = Model::new(enc, head);
        let store = model.init_params(5).unwrap();
        let fused = Value::parameter(&[32], (0..32).map(|i| 0.01 * i as f64).collect());
        let out = model.regression_head(&store, &fused, false, 0).unwrap();
        assert_eq!(out.per_label.len(), 4);
        assert!(out.total_score.is_some());
        assert_eq!(out.total_score.unwrap().len(), 1);
    }

    #[test]
    fn dropout_disabled_in_eval_mode_is_identity_on_penultimate() {
        let enc = tiny_model().encoder.cfg.clone();
        let head = HeadConfig {
            c: 2,
            penultimate_width: 8,
            dropout_rate: 0.5,
            total_score_enabled: false,
            supervised_mask: vec![true, true],
        };
        let model = Model::new(enc, head);
        let store = model.init_params(5).unwrap();
        let fused = Value::parameter(&[32], (0..32).map(|i| 0.02 * i as f64).collect());
        let a = model.regression_head(&store, &fused, false, 1).unwrap();
        let b = model.regression_head(&store, &fused, false, 2).unwrap();
        assert_eq!(a.penultimate.data(), b.penultimate.data());
    }

    #[test]
    fn forward_pipeline_shapes_and_finiteness() {
        let model = tiny_model();
        let store = model.init_params(5).unwrap();
        let cfg = model.encoder.cfg.clone();
        let clip = random_clip(&cfg, 1);
        let context: Vec<Clip> = vec![random_clip(&cfg, 2), clip.clone(), random_clip(&cfg, 3)];
        let (out, z) = model
            .forward_pipeline(&store, &clip, &context, false, 0)
            .unwrap();
        assert_eq!(z.len(), 16);
        assert!(out.per_label.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn end_to_end_grad_check() {
        let model = tiny_model();
        let store = model.init_params(5).unwrap();
        let cfg = model.encoder.cfg.clone();
        let clips: Vec<Clip> = (0..2).map(|i| random_clip(&cfg, 10 + i)).collect();
        // The context branch is stop-gradient, so the checked function
        // holds the context features fixed; otherwise central differences
        // would see the dependence the detach removes on purpose.
        let contexts: Vec<Value> = clips
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let window =
                    vec![random_clip(&cfg, 20 + i as u64), c.clone(), random_clip(&cfg, 30 + i as u64)];
                model.encoder.encode_context(&store, &window, None).unwrap()
            })
            .collect();
        // check one representative parameter from each stage
        for name in [
            "encoder.backbone.fc.weight",
            "encoder.transformer.layer0.attn.q0.weight",
            "fusion.attn.theta.weight",
            "head.fc1.weight",
            "head.label0.weight",
        ] {
            let p = store.get(name).unwrap();
            store.zero_grads();
            let err = grad_check(
                |_| {
                    let mut acc = Value::scalar(0.0);
                    for (clip, ctx) in clips.iter().zip(contexts.iter()) {
                        let z = model.encoder.encode_clip(&store, clip)?;
                        let fused = model.fuse(&store, &z, ctx)?;
                        let out = model.regression_head(&store, &fused, true, 7)?;
                        acc = crate::tensor::add(&acc, &sum(&out.per_label)?)?;
                        acc = crate::tensor::add(&acc, &sum(&z)?)?;
                    }
                    Ok(acc)
                },
                &p,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "{name}: err = {err}");
        }
    }

    #[test]
    fn head_config_validation() {
        let mut h = HeadConfig::affect(2);
        h.penultimate_width = 7;
        assert!(h.validate().is_err());
        let mut h = HeadConfig::affect(2);
        h.supervised_mask = vec![false, false];
        assert!(h.validate().is_err());
    }
}
