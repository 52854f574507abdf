//! On-disk benchmark layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/pretrain/records.jsonl      + pretrain/frames/<id>.f64
//! <root>/pretrain_dev/records.jsonl  + ...
//! <root>/speaker_000/records.jsonl   + speaker_000/frames/<id>.f64
//! ```
//!
//! A frame file is a 16-byte header (`T`, `f` as little-endian u64) followed
//! by `T·f` little-endian f64 values, row-major.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::acoustics::Synthesizer;
use super::benchmark::{Benchmark, CorpusConfig, SpeakerData, Split, Utterance};
use super::context::Phrase;
use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub fingerprint: String,
    pub config: CorpusConfig,
    pub lexicon: Vec<String>,
    pub distractor_pool: Vec<String>,
    pub speakers: Vec<SpeakerManifest>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpeakerManifest {
    pub id: usize,
    pub dir: String,
    pub entities: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    speaker: Option<usize>,
    split: Split,
    text: String,
    ids: Vec<TokenId>,
    annotated: Vec<TokenId>,
    frames: String,
    entity: Option<String>,
}

pub fn write_frames(path: &Path, frames: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + frames.len() * 8);
    buf.extend_from_slice(&(frames.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(frames.cols() as u64).to_le_bytes());
    for v in frames.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_frames(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Invalid(format!("{}: truncated frame header", path.display())));
    }
    let t = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes")) as usize;
    let f = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != t * f * 8 {
        return Err(Error::Invalid(format!(
            "{}: header says {t}x{f} but body has {} bytes",
            path.display(),
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::matrix(t, f, data)
}

fn write_split(dir: &Path, utts: &[Utterance]) -> Result<()> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let path = dir.join("records.jsonl");
    let mut out = Vec::new();
    for u in utts {
        let rel = format!("frames/{}.f64", u.id);
        write_frames(&dir.join(&rel), &u.frames)?;
        let rec = Record {
            id: u.id.clone(),
            speaker: u.speaker,
            split: u.split,
            text: u.text.clone(),
            ids: u.reference.clone(),
            annotated: u.annotated.clone(),
            frames: rel,
            entity: u.entity.as_ref().map(|e| e.text.clone()),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(&out).map_err(|e| Error::io(&path, e))
}

fn read_split(dir: &Path, vocab: &Vocab) -> Result<Vec<Utterance>> {
    let path = dir.join("records.jsonl");
    let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)?;
        let entity = rec
            .entity
            .as_deref()
            .map(|t| Phrase::new(vocab, t, super::context::Role::Positive))
            .transpose()?;
        out.push(Utterance {
            frames: read_frames(&dir.join(&rec.frames))?,
            id: rec.id,
            speaker: rec.speaker,
            split: rec.split,
            text: rec.text,
            reference: rec.ids,
            annotated: rec.annotated,
            entity,
        });
    }
    Ok(out)
}

/// Writes the benchmark under `root` (which must exist) and returns the
/// manifest that was stored.
pub fn write_benchmark(root: &Path, bench: &Benchmark, fingerprint: &str) -> Result<Manifest> {
    write_split(&root.join("pretrain"), &bench.pretrain)?;
    write_split(&root.join("pretrain_dev"), &bench.pretrain_dev)?;
    let mut speakers = Vec::new();
    for s in &bench.speakers {
        let dir = format!("speaker_{:03}", s.id);
        let all: Vec<Utterance> = s.train.iter().chain(&s.dev).chain(&s.test).cloned().collect();
        write_split(&root.join(&dir), &all)?;
        speakers.push(SpeakerManifest {
            id: s.id,
            dir,
            entities: s.entities.iter().map(|e| e.text.clone()).collect(),
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        fingerprint: fingerprint.to_string(),
        config: bench.config.clone(),
        lexicon: bench.lexicon.clone(),
        distractor_pool: bench.distractor_pool.iter().map(|p| p.text.clone()).collect(),
        speakers,
    };
    let path = root.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Invalid(format!("manifest version {} unsupported", m.version)));
    }
    Ok(m)
}

pub fn read_benchmark(root: &Path) -> Result<(Benchmark, Manifest)> {
    let m = read_manifest(root)?;
    let vocab = Vocab::new(&m.config.alphabet)?;
    let synth = Synthesizer::new(&vocab, &m.config.acoustic)?;
    let pretrain = read_split(&root.join("pretrain"), &vocab)?;
    let pretrain_dev = read_split(&root.join("pretrain_dev"), &vocab)?;
    let mut speakers = Vec::new();
    for sm in &m.speakers {
        let all = read_split(&root.join(&sm.dir), &vocab)?;
        let pick = |split: Split| all.iter().filter(|u| u.split == split).cloned().collect::<Vec<_>>();
        speakers.push(SpeakerData {
            id: sm.id,
            entities: sm
                .entities
                .iter()
                .map(|t| Phrase::new(&vocab, t, super::context::Role::Positive))
                .collect::<Result<_>>()?,
            train: pick(Split::Train),
            dev: pick(Split::Dev),
            test: pick(Split::Test),
        });
    }
    let distractor_pool = m
        .distractor_pool
        .iter()
        .map(|t| Phrase::new(&vocab, t, super::context::Role::Distractor))
        .collect::<Result<_>>()?;
    let bench = Benchmark {
        config: m.config.clone(),
        vocab,
        synth,
        lexicon: m.lexicon.clone(),
        speakers,
        distractor_pool,
        pretrain,
        pretrain_dev,
    };
    Ok((bench, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::make_benchmark;

    #[test]
    fn frame_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f64");
        let t = Tensor::from_rows(&[vec![1.0, -2.5], vec![0.25, 1e-300]]);
        write_frames(&p, &t).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 16 + 4 * 8);
        assert_eq!(&bytes[0..8], &2u64.to_le_bytes());
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
        assert_eq!(read_frames(&p).unwrap(), t);
    }

    #[test]
    fn truncated_frames_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f64");
        let mut bytes = 3u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        fs::write(&p, bytes).unwrap();
        assert!(read_frames(&p).is_err());
    }

    #[test]
    fn benchmark_survives_disk() {
        let cfg = CorpusConfig {
            n_speakers: 2,
            pretrain_utterances: 30,
            pretrain_dev_utterances: 5,
            extra_distractors: 4,
            ..CorpusConfig::default()
        };
        let b = make_benchmark(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_benchmark(dir.path(), &b, "abc").unwrap();
        let (r, m) = read_benchmark(dir.path()).unwrap();
        assert_eq!(m.fingerprint, "abc");
        assert_eq!(r.pretrain, b.pretrain);
        assert_eq!(r.speakers[1].test, b.speakers[1].test);
        assert_eq!(r.distractor_pool, b.distractor_pool);
    }
}
