//! Synthetic long-video corpus with controllable label structure, plus the
//! temporal clip/context sampling and spatial augmentation used in
//! training.
//!
//! The renderer paints each label into a horizontal band of the frame. A
//! video is divided into clip-sized segments; `context_dependence` moves a
//! fraction of the band signal into a zero-sum perturbation across three
//! consecutive segments, so a single clip becomes uninformative as the
//! dependence approaches 1 while a (2K+1)-clip window still recovers the
//! label by averaging.

pub mod io;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Clip;
use crate::losses::{LabelScale, LabelVector, ScaleDirection};
use crate::tensor::{Result, TensorError};

/// Base intensity window the normalized label maps into.
pub const BAND_LO: f64 = 0.3;
pub const BAND_SPAN: f64 = 0.4;
/// Amplitude of the zero-sum segment perturbation at full dependence.
const SEGMENT_DELTA: f64 = 0.3;
/// Small temporal flicker so frames within a clip are not constant.
const FLICKER: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Video {
    /// L*H*W*3 pixels in [0,1].
    pub frames: Vec<f64>,
    pub subject_id: String,
    pub video_id: String,
    /// Video-level labels in the native range.
    pub labels: LabelVector,
    pub fps: f64,
    pub l: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// Frames per clip.
    pub t: usize,
    /// Context clips on each side.
    pub k: usize,
}

impl SamplingConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.t == 0 {
            return Err("sampling.t must be at least 1".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub subjects: usize,
    pub videos_per_subject: usize,
    /// Frames per video.
    pub l: usize,
    pub h: usize,
    pub w: usize,
    /// Number of labels.
    pub c: usize,
    /// Segment length the perturbation pattern tiles over; match the
    /// sampling T so context windows line up with segments.
    pub segment_frames: usize,
    /// Fraction of the label signal moved into the segment perturbation.
    pub context_dependence: f64,
    /// Per-pixel uniform noise amplitude.
    pub noise: f64,
    pub fps: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.subjects == 0 || self.videos_per_subject == 0 || self.l == 0 || self.c == 0 {
            return Err("synth counts (subjects, videos_per_subject, l, c) must be at least 1"
                .to_string());
        }
        if self.segment_frames == 0 {
            return Err("synth.segment_frames must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.context_dependence) {
            return Err(format!(
                "synth.context_dependence ({}) must be in [0,1]",
                self.context_dependence
            ));
        }
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 8,
            videos_per_subject: 2,
            l: 64,
            h: 16,
            w: 16,
            c: 2,
            segment_frames: 4,
            context_dependence: 0.3,
            noise: 0.1,
            fps: 3.0,
        }
    }
}

/// The zero-sum period-3 perturbation pattern for one (video, label) pair.
fn segment_pattern(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let mut p = [-1.0, 0.0, 1.0];
    p.shuffle(rng);
    p
}

/// Band intensity for label value `s` (normalized to [0,1]) in segment `k`.
fn band_value(s: f64, seg: usize, pattern: &[f64; 3], dependence: f64) -> f64 {
    BAND_LO + BAND_SPAN * s + dependence * SEGMENT_DELTA * pattern[seg % 3]
}

/// Deterministic synthetic corpus. Labels are drawn uniformly in the
/// native range; frames encode them through the band renderer.
pub fn generate_corpus(cfg: &SynthConfig, seed: u64) -> Vec<Video> {
    let scale = LabelScale::affect(cfg.c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut videos = Vec::with_capacity(cfg.subjects * cfg.videos_per_subject);
    for s in 0..cfg.subjects {
        for v in 0..cfg.videos_per_subject {
            let y: Vec<f64> = (0..cfg.c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let patterns: Vec<[f64; 3]> = (0..cfg.c).map(|_| segment_pattern(&mut rng)).collect();
            let normalized: Vec<f64> = y.iter().map(|v| (v + 1.0) / 2.0).collect();
            let mut frames = Vec::with_capacity(cfg.l * cfg.h * cfg.w * 3);
            for t in 0..cfg.l {
                let seg = t / cfg.segment_frames;
                for r in 0..cfg.h {
                    let band = r * cfg.c / cfg.h;
                    let base = band_value(
                        normalized[band],
                        seg,
                        &patterns[band],
                        cfg.context_dependence,
                    );
                    let flicker = FLICKER * (t as f64 * 0.9 + band as f64).sin();
                    for _col in 0..cfg.w {
                        for _ch in 0..3 {
                            let noise = cfg.noise * (rng.gen::<f64>() - 0.5);
                            frames.push((base + flicker + noise).clamp(0.0, 1.0));
                        }
                    }
                }
            }
            videos.push(Video {
                frames,
                subject_id: format!("s{s}"),
                video_id: format!("s{s}v{v}"),
                labels: LabelVector::new(y, scale.clone()),
                fps: cfg.fps,
                l: cfg.l,
                h: cfg.h,
                w: cfg.w,
            });
        }
    }
    videos
}

/// Clip starting at `start`, frames taken modulo L (video looping).
pub fn clip_at(video: &Video, start: usize, t: usize) -> Clip {
    let fsz = video.h * video.w * 3;
    let mut frames = Vec::with_capacity(t * fsz);
    for i in 0..t {
        let idx = (start + i) % video.l;
        frames.extend_from_slice(&video.frames[idx * fsz..(idx + 1) * fsz]);
    }
    Clip {
        frames,
        video_id: video.video_id.clone(),
        start_frame: start,
        label: video.labels.clone(),
    }
}

/// Uniformly random start frame; looping per `clip_at`.
pub fn sample_clip(video: &Video, cfg: &SamplingConfig, rng: &mut ChaCha8Rng) -> Clip {
    let start = rng.gen_range(0..video.l);
    clip_at(video, start, cfg.t)
}

/// The 2K+1 clips tiled at stride T around `clip` (frames modulo L); the
/// center element equals the input clip.
pub fn context_window(video: &Video, clip: &Clip, cfg: &SamplingConfig) -> Vec<Clip> {
    let k = cfg.k as i64;
    let t = cfg.t as i64;
    let l = video.l as i64;
    (-k..=k)
        .map(|j| {
            let start = (clip.start_frame as i64 + j * t).rem_euclid(l) as usize;
            clip_at(video, start, cfg.t)
        })
        .collect()
}

/// One sampled spatial transform set, applied identically to every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub contrast: f64,
    pub saturation: f64,
    /// Hue rotation angle in radians.
    pub hue: f64,
    pub flip: bool,
    /// Rotation angle in degrees.
    pub rotation: f64,
}

impl AugmentParams {
    pub fn identity() -> AugmentParams {
        AugmentParams {
            contrast: 1.0,
            saturation: 1.0,
            hue: 0.0,
            flip: false,
            rotation: 0.0,
        }
    }

    /// Color jitter factor 0.2, flip coin, rotation within +-30 degrees.
    pub fn sample(rng: &mut ChaCha8Rng) -> AugmentParams {
        AugmentParams {
            contrast: rng.gen_range(0.8..1.2),
            saturation: rng.gen_range(0.8..1.2),
            hue: rng.gen_range(-0.2..0.2),
            flip: rng.gen_bool(0.5),
            rotation: rng.gen_range(-30.0..30.0),
        }
    }
}

fn apply_frame(frame: &[f64], h: usize, w: usize, p: &AugmentParams) -> Vec<f64> {
    let mut out = vec![0.0; frame.len()];
    let (ch, cw) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let theta = -p.rotation.to_radians(); // inverse map: output -> source
    let (sin_t, cos_t) = theta.sin_cos();
    // hue rotation about the gray axis (Rodrigues form on RGB)
    let hc = p.hue.cos();
    let hs = p.hue.sin();
    let a = hc + (1.0 - hc) / 3.0;
    let b = (1.0 - hc) / 3.0 - hs / 3f64.sqrt();
    let c = (1.0 - hc) / 3.0 + hs / 3f64.sqrt();
    for r in 0..h {
        for col in 0..w {
            // rotation with clamped nearest-neighbour sampling
            let x = col as f64 - cw;
            let y = r as f64 - ch;
            let sx = (x * cos_t - y * sin_t + cw).round().clamp(0.0, w as f64 - 1.0) as usize;
            let sy = (x * sin_t + y * cos_t + ch).round().clamp(0.0, h as f64 - 1.0) as usize;
            let src_col = if p.flip { w - 1 - sx } else { sx };
            let src = (sy * w + src_col) * 3;
            let (r0, g0, b0) = (frame[src], frame[src + 1], frame[src + 2]);
            // hue, then saturation toward gray, then contrast about 0.5
            let mut px = [
                a * r0 + b * g0 + c * b0,
                c * r0 + a * g0 + b * b0,
                b * r0 + c * g0 + a * b0,
            ];
            let gray = (px[0] + px[1] + px[2]) / 3.0;
            for v in px.iter_mut() {
                *v = gray + (*v - gray) * p.saturation;
                *v = 0.5 + (*v - 0.5) * p.contrast;
                *v = v.clamp(0.0, 1.0);
            }
            let dst = (r * w + col) * 3;
            out[dst..dst + 3].copy_from_slice(&px);
        }
    }
    out
}

/// Apply one transform set to all frames of a clip; the label is untouched.
pub fn augment_with(clip: &Clip, h: usize, w: usize, params: &AugmentParams) -> Clip {
    let fsz = h * w * 3;
    let t = clip.frames.len() / fsz;
    let mut frames = Vec::with_capacity(clip.frames.len());
    for i in 0..t {
        frames.extend(apply_frame(&clip.frames[i * fsz..(i + 1) * fsz], h, w, params));
    }
    Clip {
        frames,
        video_id: clip.video_id.clone(),
        start_frame: clip.start_frame,
        label: clip.label.clone(),
    }
}

/// Seeded convenience wrapper over [`augment_with`].
pub fn augment(clip: &Clip, h: usize, w: usize, seed: u64) -> Clip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    augment_with(clip, h, w, &AugmentParams::sample(&mut rng))
}

/// Affine label scaling between native and training ranges.
pub fn scale_labels(y: &LabelVector, direction: ScaleDirection) -> Result<LabelVector> {
    y.scaled(direction)
}

/// One training example: a clip, its context window, and its labels in
/// the training range plus the similarity-shifted variant.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub clip: Clip,
    pub context: Vec<Clip>,
    pub label_train: Vec<f64>,
    pub label_sim: Vec<f64>,
}

/// B clips from distinct videos when possible (with-replacement fallback
/// logs a warning), each with its 2K+1 context window and scaled labels.
pub fn make_batch(
    corpus: &[Video],
    b: usize,
    cfg: &SamplingConfig,
    augment_clips: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BatchItem>> {
    if b == 0 {
        return Err(TensorError::Domain {
            op: "make_batch",
            what: "batch size must be at least 1".to_string(),
        });
    }
    if corpus.is_empty() {
        return Err(TensorError::EmptyInput { op: "make_batch" });
    }
    let picks: Vec<usize> = if corpus.len() >= b {
        let mut idx: Vec<usize> = (0..corpus.len()).collect();
        idx.shuffle(rng);
        idx.truncate(b);
        idx
    } else {
        log::warn!(
            "corpus has {} videos < batch size {}; sampling with replacement",
            corpus.len(),
            b
        );
        (0..b).map(|_| rng.gen_range(0..corpus.len())).collect()
    };
    let mut batch = Vec::with_capacity(b);
    for vi in picks {
        let video = &corpus[vi];
        let clip = sample_clip(video, cfg, rng);
        let mut context = context_window(video, &clip, cfg);
        let mut clip = clip;
        if augment_clips {
            let mut params_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            let params = AugmentParams::sample(&mut params_rng);
            clip = augment_with(&clip, video.h, video.w, &params);
            for c in context.iter_mut() {
                let params = AugmentParams::sample(&mut params_rng);
                *c = augment_with(c, video.h, video.w, &params);
            }
        }
        let train = video.labels.scaled(ScaleDirection::ToTrainRange)?;
        let sim = train.for_similarity();
        batch.push(BatchItem {
            clip,
            context,
            label_train: train.y,
            label_sim: sim,
        });
    }
    Ok(batch)
}
