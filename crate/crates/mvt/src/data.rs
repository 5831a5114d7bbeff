//! JSON-lines dataset files with a metadata sidecar.
//!
//! One sample per line. Point clouds are stored as base64 of little-endian
//! f64 RGB-XYZ rows so that a round trip is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use mvt_core::language::Vocabulary;
use mvt_core::synth::{build_dataset, Dataset, DatasetConfig, ObjectInstance, Relation, Sample, Scene, SplitStats, SplitTags, Utterance};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, HarnessError, Result};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const METADATA_FILE: &str = "metadata.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub config: DatasetConfig,
    pub seed: u64,
    pub vocabulary: Vocabulary,
    pub train: SplitStats,
    pub eval: SplitStats,
}

#[derive(Serialize, Deserialize)]
struct ObjectRecord {
    category: usize,
    center: [f64; 3],
    extent: [f64; 3],
    color: [f64; 3],
    points: String,
}

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    tokens: Vec<String>,
    target_index: usize,
    relation: Relation,
    anchor_index: Option<usize>,
    view_dependent: bool,
    distractor_count: usize,
    speaker_angle: f64,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    scene_id: u64,
    objects: Vec<ObjectRecord>,
    utterance: UtteranceRecord,
    tags: SplitTags,
}

fn encode_points(points: &[[f64; 6]]) -> String {
    let bytes: Vec<u8> = points.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode_points(text: &str) -> std::result::Result<Vec<[f64; 6]>, String> {
    let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
    if bytes.len() % 48 != 0 {
        return Err(format!("point buffer of {} bytes is not a multiple of 48", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(48)
        .map(|row| {
            let mut p = [0.0; 6];
            for (v, b) in p.iter_mut().zip(row.chunks_exact(8)) {
                *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
            }
            p
        })
        .collect())
}

impl From<&Sample> for SampleRecord {
    fn from(s: &Sample) -> Self {
        let u = &s.utterance;
        Self {
            scene_id: s.scene.id,
            objects: s
                .scene
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    category: o.category,
                    center: o.center,
                    extent: o.extent,
                    color: o.color,
                    points: encode_points(&o.points),
                })
                .collect(),
            utterance: UtteranceRecord {
                tokens: u.tokens.clone(),
                target_index: u.target_index,
                relation: u.relation,
                anchor_index: u.anchor_index,
                view_dependent: u.view_dependent,
                distractor_count: u.distractor_count,
                speaker_angle: u.speaker_angle,
            },
            tags: s.tags,
        }
    }
}

impl SampleRecord {
    fn into_sample(self) -> std::result::Result<Sample, String> {
        let objects = self
            .objects
            .into_iter()
            .map(|o| {
                Ok(ObjectInstance {
                    category: o.category,
                    center: o.center,
                    extent: o.extent,
                    color: o.color,
                    points: decode_points(&o.points)?,
                })
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        let u = self.utterance;
        if u.target_index >= objects.len() || u.anchor_index.is_some_and(|a| a >= objects.len()) {
            return Err("object index out of range".into());
        }
        Ok(Sample {
            scene: Scene {
                id: self.scene_id,
                objects,
            },
            utterance: Utterance {
                tokens: u.tokens,
                target_index: u.target_index,
                relation: u.relation,
                anchor_index: u.anchor_index,
                view_dependent: u.view_dependent,
                distractor_count: u.distractor_count,
                speaker_angle: u.speaker_angle,
            },
            tags: self.tags,
        })
    }
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut out, &SampleRecord::from(s)).map_err(json_err(path))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut samples = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line).map_err(json_err(path))?;
        let sample = record.into_sample().map_err(|reason| HarnessError::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {reason}", n + 1),
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Generated dataset plus its metadata.
pub struct DatasetBundle {
    pub dataset: Dataset,
    pub metadata: DatasetMetadata,
}

pub fn generate(config: &DatasetConfig, seed: u64) -> Result<DatasetBundle> {
    let dataset = build_dataset(config, seed)?;
    let metadata = DatasetMetadata {
        config: config.clone(),
        seed,
        vocabulary: Vocabulary::template(config.scene.num_categories),
        train: SplitStats::count(&dataset.train),
        eval: SplitStats::count(&dataset.eval),
    };
    Ok(DatasetBundle { dataset, metadata })
}

/// Writes `train.jsonl`, `eval.jsonl` and `metadata.json` into `dir`.
pub fn save_bundle(dir: &Path, bundle: &DatasetBundle) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_samples(&dir.join(TRAIN_FILE), &bundle.dataset.train)?;
    write_samples(&dir.join(EVAL_FILE), &bundle.dataset.eval)?;
    let meta_path = dir.join(METADATA_FILE);
    let text = serde_json::to_string_pretty(&bundle.metadata).map_err(json_err(&meta_path))?;
    std::fs::write(&meta_path, text).map_err(io_err(&meta_path))
}

pub fn load_metadata(path: &Path) -> Result<DatasetMetadata> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

/// Metadata sidecar expected next to a dataset file.
pub fn metadata_path(samples_path: &Path) -> PathBuf {
    samples_path.with_file_name(METADATA_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_round_trip_bit_exact() {
        let pts = vec![[0.1, -2.5e-300, f64::MAX, 1.0 / 3.0, -0.0, 7.0]];
        let back = decode_points(&encode_points(&pts)).unwrap();
        for (a, b) in pts[0].iter().zip(&back[0]) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(decode_points("AAAA").is_err());
    }
}
