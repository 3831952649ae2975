//! Corpus persistence: one binary frame file per video plus a JSON
//! metadata file describing the whole corpus.
//!
//! Frame file layout (little-endian): the 5-byte magic `RAFV1`, then
//! u32 L, H, W, then L*H*W*3 f32 pixels in frame-major order.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Video;
use crate::losses::LabelVector;

pub const MAGIC: &[u8; 5] = b"RAFV1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad metadata in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: bad magic (not a RAFV1 frame file)")]
    BadMagic { path: String },
    #[error("{path}: expected {expected} pixel values, found {found}")]
    SizeMismatch {
        path: String,
        expected: usize,
        found: usize,
    },
}

type Result<T> = std::result::Result<T, CorpusError>;

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VideoMeta {
    file: String,
    subject_id: String,
    video_id: String,
    labels: LabelVector,
    fps: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusMeta {
    videos: Vec<VideoMeta>,
}

fn write_video(path: &Path, video: &Video) -> Result<()> {
    let mut buf = Vec::with_capacity(17 + video.frames.len() * 4);
    buf.extend_from_slice(MAGIC);
    for dim in [video.l, video.h, video.w] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for p in &video.frames {
        buf.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

fn read_video(path: &Path, meta: &VideoMeta) -> Result<Video> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut header = [0u8; 17];
    file.read_exact(&mut header).map_err(|e| io_err(path, e))?;
    if &header[..5] != MAGIC {
        return Err(CorpusError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let dim = |i: usize| u32::from_le_bytes(header[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
    let (l, h, w) = (dim(0), dim(1), dim(2));
    let mut raw = Vec::new();
    file.read_to_end(&mut raw).map_err(|e| io_err(path, e))?;
    let expected = l * h * w * 3;
    if raw.len() != expected * 4 {
        return Err(CorpusError::SizeMismatch {
            path: path.display().to_string(),
            expected,
            found: raw.len() / 4,
        });
    }
    let frames = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(Video {
        frames,
        subject_id: meta.subject_id.clone(),
        video_id: meta.video_id.clone(),
        labels: meta.labels.clone(),
        fps: meta.fps,
        l,
        h,
        w,
    })
}

/// Write the corpus into `dir` (created if missing): `corpus.json` plus
/// one `<video_id>.raf` per video.
pub fn save_corpus(dir: &Path, corpus: &[Video]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut metas = Vec::with_capacity(corpus.len());
    for video in corpus {
        let file = format!("{}.raf", video.video_id);
        write_video(&dir.join(&file), video)?;
        metas.push(VideoMeta {
            file,
            subject_id: video.subject_id.clone(),
            video_id: video.video_id.clone(),
            labels: video.labels.clone(),
            fps: video.fps,
        });
    }
    let meta_path = dir.join("corpus.json");
    let json = serde_json::to_string_pretty(&CorpusMeta { videos: metas }).map_err(|e| {
        CorpusError::Json {
            path: meta_path.display().to_string(),
            source: e,
        }
    })?;
    fs::write(&meta_path, json).map_err(|e| io_err(&meta_path, e))
}

/// Load a corpus previously written by [`save_corpus`].
pub fn load_corpus(dir: &Path) -> Result<Vec<Video>> {
    let meta_path = dir.join("corpus.json");
    let json = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: CorpusMeta = serde_json::from_str(&json).map_err(|e| CorpusError::Json {
        path: meta_path.display().to_string(),
        source: e,
    })?;
    meta.videos
        .iter()
        .map(|m| read_video(&dir.join(&m.file), m))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, SynthConfig};

    #[test]
    fn save_load_round_trip() {
        let cfg = SynthConfig {
            subjects: 2,
            videos_per_subject: 1,
            l: 8,
            h: 4,
            w: 4,
            c: 2,
            segment_frames: 4,
            context_dependence: 0.5,
            noise: 0.1,
            fps: 3.0,
        };
        let corpus = generate_corpus(&cfg, 3);
        let dir = tempfile::tempdir().unwrap();
        save_corpus(dir.path(), &corpus).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded.len(), corpus.len());
        for (a, b) in corpus.iter().zip(loaded.iter()) {
            assert_eq!(a.video_id, b.video_id);
            assert_eq!(a.subject_id, b.subject_id);
            assert_eq!(a.labels.y, b.labels.y);
            assert_eq!((a.l, a.h, a.w), (b.l, b.h, b.w));
            // f32 round trip
            for (x, y) in a.frames.iter().zip(b.frames.iter()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            subjects: 1,
            videos_per_subject: 1,
            l: 4,
            h: 2,
            w: 2,
            c: 1,
            segment_frames: 4,
            context_dependence: 0.0,
            noise: 0.0,
            fps: 3.0,
        };
        let corpus = generate_corpus(&cfg, 1);
        save_corpus(dir.path(), &corpus).unwrap();
        std::fs::write(dir.path().join("s0v0.raf"), b"XXXXX".repeat(5)).unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(CorpusError::BadMagic { .. })
        ));
    }
}
