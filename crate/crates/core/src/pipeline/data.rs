//! Source volumes, pretext pairs and labeled segmentation splits.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::synth::{synth_volumes, SyntheticSet, SyntheticSpec};
use crate::error::{Error, Result};
use crate::rubik::{disarrange, DisarrangeParams, DisarrangeRecord};
use crate::seed;
use crate::volume::{self, crop, normalize, random_crop, Volume};

/// Counters naming the synthetic splits under the data seed.
const POOL: u64 = 1;
const EVAL: u64 = 2;
const SEG_TRAIN: u64 = 3;
const SEG_TEST: u64 = 4;

/// Stream counters under the experiment seed.
pub(crate) const STREAM_PAIRS: u64 = 0x9A1;
pub(crate) const STREAM_EVAL: u64 = 0xE7A;

/// One pretext sample: `x` is the disarranged crop, `y` the original.
#[derive(Debug, Clone, PartialEq)]
pub struct PretextPair {
    pub id: String,
    pub x: Volume,
    pub y: Volume,
    pub record: DisarrangeRecord,
}

/// Labeled volumes of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub volumes: Vec<Volume>,
    pub masks: Vec<Vec<u8>>,
}

fn split_spec(cfg: &ExperimentConfig, split: u64, count: usize) -> SyntheticSpec {
    let s = &cfg.data.synthetic;
    SyntheticSpec {
        count,
        seed: seed::split(s.seed, &[split]),
        ..s.clone()
    }
}

fn ingest(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Ingest(format!("{}: {e}", path.display()))
}

/// Volumes under `dir`: every `*.nii` and every raw pair named by its `.f32`
/// payload, in file-name order.
pub fn read_volume_dir(dir: &Path) -> Result<Vec<Volume>> {
    let entries = fs::read_dir(dir).map_err(|e| ingest(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| ingest(dir, e))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(".nii") || name.ends_with(".f32") {
            paths.push(p);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Ingest(format!("{}: no volumes found", dir.display())));
    }
    paths
        .iter()
        .map(|p| volume::load_volume(p).map_err(|e| ingest(p, e)))
        .collect()
}

/// Unlabeled source volumes for pretraining.
pub fn source_volumes(cfg: &ExperimentConfig) -> Result<Vec<Volume>> {
    match &cfg.data.dir {
        Some(dir) => {
            let vols = read_volume_dir(dir)?;
            for v in &vols {
                if v.channels() != cfg.channels() || (0..3).any(|a| v.dims()[a] < cfg.pretext.crop[a]) {
                    return Err(Error::Ingest(format!(
                        "volume {:?} x {} does not fit crop {:?} with {} channels",
                        v.dims(),
                        v.channels(),
                        cfg.pretext.crop,
                        cfg.channels()
                    )));
                }
            }
            Ok(vols)
        }
        None => Ok(synth_volumes(&split_spec(cfg, POOL, cfg.data.synthetic.count))?.volumes),
    }
}

/// Crop, normalize and disarrange one source volume under `sample_seed`.
pub fn make_pair(source: &Volume, cfg: &ExperimentConfig, sample_seed: u64, id: String) -> Result<PretextPair> {
    let (c, _) = random_crop(source, cfg.pretext.crop, seed::split(sample_seed, &[0]))?;
    let y = normalize(&c, cfg.pretext.normalize)?;
    let params = DisarrangeParams::new(cfg.pretext.side, cfg.pretext.m, seed::split(sample_seed, &[1]));
    let (x, record) = disarrange(&y, &params)?;
    Ok(PretextPair { id, x, y, record })
}

fn pairs_from(sources: &[Volume], cfg: &ExperimentConfig, stream: u64) -> Result<Vec<PretextPair>> {
    sources
        .par_iter()
        .enumerate()
        .map(|(i, v)| make_pair(v, cfg, seed::split(cfg.seed, &[stream, i as u64]), format!("{i:05}")))
        .collect()
}

/// One pair per source volume, as written by [`gen_pretext_dataset`].
pub fn pretext_pairs(cfg: &ExperimentConfig) -> Result<Vec<PretextPair>> {
    cfg.validate()?;
    pairs_from(&source_volumes(cfg)?, cfg, STREAM_PAIRS)
}

/// Held-out pairs for the reconstruction metric: fresh synthetic volumes, or
/// new crops of the directory volumes.
pub fn eval_pairs(cfg: &ExperimentConfig) -> Result<Vec<PretextPair>> {
    let sources = match &cfg.data.dir {
        Some(_) => source_volumes(cfg)?,
        None => synth_volumes(&split_spec(cfg, EVAL, cfg.data.eval_count))?.volumes,
    };
    pairs_from(&sources, cfg, STREAM_EVAL)
}

/// Materialize the pretext dataset under `<output_dir>/pairs` and return that
/// directory.
pub fn gen_pretext_dataset(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let pairs = pretext_pairs(cfg)?;
    let dir = cfg.output_dir.join("pairs");
    write_pairs(&pairs, &dir)?;
    Ok(dir)
}

pub fn write_pairs(pairs: &[PretextPair], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::Write)?;
    for p in pairs {
        let hdr = dir.join(format!("{}.hdr.json", p.id));
        volume::save_raw(&p.x, &hdr, &dir.join(format!("{}.x.f32", p.id)))?;
        volume::save_raw(&p.y, &hdr, &dir.join(format!("{}.y.f32", p.id)))?;
        fs::write(dir.join(format!("{}.json", p.id)), p.record.to_json() + "\n").map_err(Error::Write)?;
    }
    Ok(())
}

/// Read every pair under `dir`, in id order.
pub fn load_pretext_dataset(dir: &Path) -> Result<Vec<PretextPair>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::read(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::read(dir, e))?.path();
        if let Some(id) = p.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".hdr.json")) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    ids.into_iter()
        .map(|id| {
            let hdr = dir.join(format!("{id}.hdr.json"));
            let x = volume::load_raw(&hdr, &dir.join(format!("{id}.x.f32")))?;
            let y = volume::load_raw(&hdr, &dir.join(format!("{id}.y.f32")))?;
            let rec_path = dir.join(format!("{id}.json"));
            let text = fs::read_to_string(&rec_path).map_err(|e| Error::read(&rec_path, e))?;
            let record = DisarrangeRecord::from_json(&text)?;
            Ok(PretextPair { id, x, y, record })
        })
        .collect()
}

/// Crop every volume and mask of `set` at one seeded origin and normalize.
fn crop_labeled(set: SyntheticSet, cfg: &ExperimentConfig, stream: u64) -> Result<LabeledSet> {
    let mut out = LabeledSet {
        volumes: Vec::with_capacity(set.volumes.len()),
        masks: Vec::with_capacity(set.volumes.len()),
    };
    let size = cfg.pretext.crop;
    for (i, (v, m)) in set.volumes.iter().zip(&set.masks).enumerate() {
        let (c, origin) = random_crop(v, size, seed::split(cfg.data.synthetic.seed, &[stream, i as u64]))?;
        let mask_vol = Volume::from_vec(v.dims(), 1, m.iter().map(|&l| l as f32).collect())?;
        let mask = crop(&mask_vol, origin, size)?;
        out.volumes.push(normalize(&c, cfg.pretext.normalize)?);
        out.masks.push(mask.data().iter().map(|&l| l as u8).collect());
    }
    Ok(out)
}

/// Labeled training and held-out test volumes. They depend only on the data
/// seed, so every run that shares it sees the same splits.
pub fn segmentation_splits(cfg: &ExperimentConfig) -> Result<(LabeledSet, LabeledSet)> {
    let train = synth_volumes(&split_spec(cfg, SEG_TRAIN, cfg.data.train_count))?;
    let test = synth_volumes(&split_spec(cfg, SEG_TEST, cfg.data.test_count))?;
    Ok((crop_labeled(train, cfg, SEG_TRAIN)?, crop_labeled(test, cfg, SEG_TEST)?))
}

/// Indices of the labeled subset: the first `ceil(fraction * n)` entries of a
/// permutation of `0..n` shuffled under `seed`.
pub fn label_subset(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::stream(seed, &[0x1AB]));
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    idx.truncate(k);
    idx
}
