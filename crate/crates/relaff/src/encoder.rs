//! Video-clip encoder: frozen per-frame feature map, trainable projection,
//! sinusoidal positions, transformer stack, residual add, temporal pooling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::losses::LabelVector;
use crate::nn::{init_matrix, Linear, Projection};
use crate::tensor::{
    add, concat_cols, layer_norm, matmul, mean_rows, relu, scale, softmax_rows, stack_rows,
    transpose, ParameterStore, Result, TensorError, Value,
};

/// Side length of the pooled patch grid the frozen feature map reads.
const PATCH_GRID: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Frames per clip.
    pub t: usize,
    pub h: usize,
    pub w: usize,
    /// Backbone output width; must equal `d` for the residual add.
    pub d_f: usize,
    /// Clip-feature dimensionality.
    pub d: usize,
    pub transformer_layers: usize,
    pub attention_heads: usize,
    pub feedforward_width: usize,
    pub backbone_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            t: 16,
            h: 16,
            w: 16,
            d_f: 64,
            d: 64,
            transformer_layers: 2,
            attention_heads: 4,
            feedforward_width: 128,
            backbone_seed: 7,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.d_f != self.d {
            return Err(format!(
                "encoder.d_f ({}) must equal encoder.d ({}) for the residual addition",
                self.d_f, self.d
            ));
        }
        if self.d % self.attention_heads != 0 {
            return Err(format!(
                "encoder.d ({}) must be divisible by encoder.attention_heads ({})",
                self.d, self.attention_heads
            ));
        }
        if self.t == 0 || self.h == 0 || self.w == 0 {
            return Err("encoder.t/h/w must be positive".to_string());
        }
        Ok(())
    }

    fn patch_grid(&self) -> usize {
        PATCH_GRID.min(self.h).min(self.w)
    }

    /// Width of the pooled per-frame statistics vector.
    pub fn backbone_in_dim(&self) -> usize {
        let g = self.patch_grid();
        3 * g * g
    }
}

/// A T-frame block with its provenance and video-level label.
#[derive(Debug, Clone)]
pub struct Clip {
    /// T*H*W*3 pixels in [0,1], row-major (t, h, w, c).
    pub frames: Vec<f64>,
    pub video_id: String,
    pub start_frame: usize,
    pub label: LabelVector,
}

impl Clip {
    pub fn validate(&self, cfg: &EncoderConfig) -> Result<()> {
        let expected = cfg.t * cfg.h * cfg.w * 3;
        if self.frames.len() != expected {
            return Err(TensorError::ShapeMismatch {
                op: "clip",
                lhs: vec![self.frames.len()],
                rhs: vec![expected],
            });
        }
        if self.frames.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(TensorError::Domain {
                op: "clip",
                what: "pixel outside [0,1]".to_string(),
            });
        }
        Ok(())
    }
}

pub struct Encoder {
    pub cfg: EncoderConfig,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Encoder {
        Encoder { cfg }
    }

    /// Register every encoder parameter. The backbone projection is seeded
    /// by `backbone_seed` and frozen; everything else trains.
    pub fn register_params(&self, store: &mut ParameterStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let cfg = &self.cfg;
        let in_dim = cfg.backbone_in_dim();

        let mut backbone_rng = ChaCha8Rng::seed_from_u64(cfg.backbone_seed);
        store.register(
            "encoder.backbone.frozen.weight",
            Value::parameter(&[in_dim, cfg.d_f], init_matrix(&mut backbone_rng, in_dim, cfg.d_f)),
        )?;
        store.freeze("encoder.backbone.frozen.weight");

        Linear::register(store, "encoder.backbone.fc", cfg.d_f, cfg.d_f, rng)?;

        let dh = cfg.d / cfg.attention_heads;
        for l in 0..cfg.transformer_layers {
            let p = format!("encoder.transformer.layer{l}");
            store.register(
                &format!("{p}.ln1.gamma"),
                Value::parameter(&[cfg.d], vec![1.0; cfg.d]),
            )?;
            store.register(
                &format!("{p}.ln1.beta"),
                Value::parameter(&[cfg.d], vec![0.0; cfg.d]),
            )?;
            store.register(
                &format!("{p}.ln2.gamma"),
                Value::parameter(&[cfg.d], vec![1.0; cfg.d]),
            )?;
            store.register(
                &format!("{p}.ln2.beta"),
                Value::parameter(&[cfg.d], vec![0.0; cfg.d]),
            )?;
            for h in 0..cfg.attention_heads {
                Projection::register(store, &format!("{p}.attn.q{h}"), cfg.d, dh, rng)?;
                Projection::register(store, &format!("{p}.attn.k{h}"), cfg.d, dh, rng)?;
                Projection::register(store, &format!("{p}.attn.v{h}"), cfg.d, dh, rng)?;
            }
            Linear::register(store, &format!("{p}.attn.out"), cfg.d, cfg.d, rng)?;
            Linear::register(store, &format!("{p}.ff.fc1"), cfg.d, cfg.feedforward_width, rng)?;
            Linear::register(store, &format!("{p}.ff.fc2"), cfg.feedforward_width, cfg.d, rng)?;
        }
        Ok(())
    }

    /// Pooled patch-grid statistics of every frame: (T, 3*G*G), constant.
    fn frame_stats(&self, clip: &Clip) -> Value {
        let cfg = &self.cfg;
        let g = cfg.patch_grid();
        let (h, w) = (cfg.h, cfg.w);
        let mut stats = Vec::with_capacity(cfg.t * 3 * g * g);
        for t in 0..cfg.t {
            let frame = &clip.frames[t * h * w * 3..(t + 1) * h * w * 3];
            for gi in 0..g {
                let r0 = gi * h / g;
                let r1 = (gi + 1) * h / g;
                for gj in 0..g {
                    let c0 = gj * w / g;
                    let c1 = (gj + 1) * w / g;
                    for c in 0..3 {
                        let mut s = 0.0;
                        for r in r0..r1 {
                            for col in c0..c1 {
                                s += frame[(r * w + col) * 3 + c];
                            }
                        }
                        stats.push(s / ((r1 - r0) * (c1 - c0)) as f64);
                    }
                }
            }
        }
        Value::constant(&[cfg.t, 3 * g * g], stats)
    }

    /// Per-frame features (T, d_f): frozen projection of pooled patch
    /// statistics, then a trainable FC + ReLU. Row t depends only on frame t.
    pub fn backbone_forward(&self, store: &ParameterStore, clip: &Clip) -> Result<Value> {
        clip.validate(&self.cfg)?;
        let stats = self.frame_stats(clip);
        let frozen = store.get("encoder.backbone.frozen.weight")?;
        let raw = matmul(&stats, &frozen)?;
        let fc = Linear::lookup(store, "encoder.backbone.fc")?;
        relu(&fc.forward(&raw)?)
    }

    /// The fixed sinusoid table for (t, d), as a constant.
    pub fn positional_table(t: usize, d: usize) -> Value {
        let mut pe = vec![0.0; t * d];
        for pos in 0..t {
            for i in 0..d / 2 {
                let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
                pe[pos * d + 2 * i] = (pos as f64 * freq).sin();
                if 2 * i + 1 < d {
                    pe[pos * d + 2 * i + 1] = (pos as f64 * freq).cos();
                }
            }
        }
        Value::constant(&[t, d], pe)
    }

    /// Add the sinusoid table; no trainable parameters.
    pub fn positional_encode(&self, features: &Value) -> Result<Value> {
        let shape = features.shape().to_vec();
        add(features, &Self::positional_table(shape[0], shape[1]))
    }

    fn attention_layer(&self, store: &ParameterStore, prefix: &str, x: &Value) -> Result<Value> {
        let cfg = &self.cfg;
        let dh = cfg.d / cfg.attention_heads;
        let mut heads = Vec::with_capacity(cfg.attention_heads);
        for h in 0..cfg.attention_heads {
            let q = Projection::lookup(store, &format!("{prefix}.attn.q{h}"))?.forward(x)?;
            let k = Projection::lookup(store, &format!("{prefix}.attn.k{h}"))?.forward(x)?;
            let v = Projection::lookup(store, &format!("{prefix}.attn.v{h}"))?.forward(x)?;
            let scores = scale(&matmul(&q, &transpose(&k)?)?, 1.0 / (dh as f64).sqrt())?;
            heads.push(matmul(&softmax_rows(&scores)?, &v)?);
        }
        let merged = concat_cols(&heads)?;
        Linear::lookup(store, &format!("{prefix}.attn.out"))?.forward(&merged)
    }

    /// Pre-norm encoder stack; output shape equals input shape.
    pub fn transformer_encoder(&self, store: &ParameterStore, features: &Value) -> Result<Value> {
        let cfg = &self.cfg;
        if cfg.d % cfg.attention_heads != 0 {
            return Err(TensorError::Domain {
                op: "transformer_encoder",
                what: format!("d = {} not divisible by {} heads", cfg.d, cfg.attention_heads),
            });
        }
        let mut x = features.clone();
        for l in 0..cfg.transformer_layers {
            let p = format!("encoder.transformer.layer{l}");
            let ln1 = layer_norm(
                &x,
                &store.get(&format!("{p}.ln1.gamma"))?,
                &store.get(&format!("{p}.ln1.beta"))?,
                1e-5,
            )?;
            let a = add(&x, &self.attention_layer(store, &p, &ln1)?)?;
            let ln2 = layer_norm(
                &a,
                &store.get(&format!("{p}.ln2.gamma"))?,
                &store.get(&format!("{p}.ln2.beta"))?,
                1e-5,
            )?;
            let fc1 = Linear::lookup(store, &format!("{p}.ff.fc1"))?;
            let fc2 = Linear::lookup(store, &format!("{p}.ff.fc2"))?;
            let ff = fc2.forward(&relu(&fc1.forward(&ln2)?)?)?;
            x = add(&a, &ff)?;
        }
        Ok(x)
    }

    /// z = mean_pool(transformer(pos_encode(backbone)) + backbone).
    /// The residual addend is the pre-position-encoding frame features.
    pub fn encode_clip(&self, store: &ParameterStore, clip: &Clip) -> Result<Value> {
        let frame_feats = self.backbone_forward(store, clip)?;
        let encoded = self.transformer_encoder(store, &self.positional_encode(&frame_feats)?)?;
        mean_rows(&add(&encoded, &frame_feats)?)
    }

    /// Stacked, detached features of a (2K+1)-clip window encoded with the
    /// same weights. `precomputed_center` reuses the bottom-branch feature
    /// for the center slot (detached) instead of re-encoding it.
    pub fn encode_context(
        &self,
        store: &ParameterStore,
        clips: &[Clip],
        precomputed_center: Option<&Value>,
    ) -> Result<Value> {
        if clips.len() % 2 == 0 {
            return Err(TensorError::Domain {
                op: "encode_context",
                what: format!("expected 2K+1 clips, got {}", clips.len()),
            });
        }
        let center = clips.len() / 2;
        let mut rows = Vec::with_capacity(clips.len());
        for (i, clip) in clips.iter().enumerate() {
            let z = match (i == center, precomputed_center) {
                (true, Some(z0)) => z0.detach(),
                _ => self.encode_clip(store, clip)?.detach(),
            };
            rows.push(z);
        }
        stack_rows(&rows)
    }
}
