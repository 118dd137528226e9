//! On-disk dataset: `scenes/<seed>.json`, `obs/<seed>.csv` and
//! `manifest.json` listing seeds with their split, plus the
//! `run-gen-data.json` record.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataConfig, RunConfig, RunMeta};
use crate::error::{Error, Result};
use crate::geometry::MapFrame;
use crate::rng::derive_seed;
use crate::scene::{generate_scene_with, observe, Difficulty, GeneratorConfig, ObservationGrid, ObserveConfig, Scene, GENERATOR_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seed: u64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator_version: String,
    pub difficulty: Difficulty,
    pub frame: MapFrame,
    pub observe: ObserveConfig,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn seeds(&self, split: Split) -> Vec<u64> {
        self.entries.iter().filter(|e| e.split == split).map(|e| e.seed).collect()
    }
}

/// Train seeds fill `[g * 2^32, g * 2^32 + 2^31)`, val seeds the upper half
/// of the same block, so the splits never share a layout.
pub fn split_seeds(global: u64, split: Split, count: usize) -> Vec<u64> {
    let base = global.wrapping_mul(1 << 32)
        + match split {
            Split::Train => 0,
            Split::Val => 1 << 31,
        };
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}

pub fn observation_seed(scene_seed: u64) -> u64 {
    derive_seed(scene_seed, 0x0b5e)
}

pub fn scene_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join("scenes").join(format!("{seed}.json"))
}

pub fn obs_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join("obs").join(format!("{seed}.csv"))
}

fn dir_is_nonempty(dir: &Path) -> Result<bool> {
    match std::fs::read_dir(dir) {
        Ok(mut it) => Ok(it.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(Error::io(dir, e)),
    }
}

pub fn make_scene(seed: u64, difficulty: Difficulty, frame: &MapFrame, obs: &ObserveConfig) -> Result<(Scene, ObservationGrid)> {
    let gen = GeneratorConfig {
        frame: *frame,
        ..GeneratorConfig::for_difficulty(difficulty)
    };
    let scene = generate_scene_with(seed, difficulty, &gen)?;
    let o = observe(&scene, observation_seed(seed), obs)?;
    Ok((scene, o))
}

/// Generate and write the dataset described by `cfg.data`.
pub fn gen_data(cfg: &RunConfig, force: bool) -> Result<Manifest> {
    let data: &DataConfig = &cfg.data;
    let dir = &data.dir;
    if dir_is_nonempty(dir)? && !force {
        return Err(Error::Config(format!(
            "{} is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    for sub in ["scenes", "obs"] {
        let p = dir.join(sub);
        if p.exists() {
            std::fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::new();
    for (split, count) in [(Split::Train, data.train_count), (Split::Val, data.val_count)] {
        entries.extend(split_seeds(cfg.seed, split, count).into_iter().map(|seed| ManifestEntry { seed, split }));
    }
    entries.par_iter().try_for_each(|e| -> Result<()> {
        let (scene, obs) = make_scene(e.seed, data.difficulty, &cfg.frame, &cfg.observe)?;
        let sp = scene_path(dir, e.seed);
        std::fs::write(&sp, scene.to_json()?).map_err(|err| Error::io(&sp, err))?;
        let op = obs_path(dir, e.seed);
        std::fs::write(&op, obs.to_csv()).map_err(|err| Error::io(&op, err))?;
        Ok(())
    })?;
    let manifest = Manifest {
        generator_version: GENERATOR_VERSION.to_string(),
        difficulty: data.difficulty,
        frame: cfg.frame,
        observe: cfg.observe.clone(),
        entries,
    };
    let mp = dir.join("manifest.json");
    std::fs::write(&mp, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mp, e))?;
    RunMeta::new("gen-data", cfg, serde_json::json!({ "scenes": manifest.entries.len() })).write(dir)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let mp = dir.join("manifest.json");
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: mp.clone(),
        msg: e.to_string(),
    })?;
    if m.generator_version != GENERATOR_VERSION {
        return Err(Error::Config(format!(
            "dataset made by {}, this build reads {GENERATOR_VERSION}",
            m.generator_version
        )));
    }
    Ok(m)
}

#[derive(Clone, Debug)]
pub struct DatasetScene {
    pub seed: u64,
    pub scene: Scene,
    pub obs: ObservationGrid,
}

pub fn load_scene(dir: &Path, seed: u64) -> Result<DatasetScene> {
    let sp = scene_path(dir, seed);
    let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let scene = Scene::from_json(&text).map_err(|e| Error::Parse {
        path: sp.clone(),
        msg: e.to_string(),
    })?;
    let op = obs_path(dir, seed);
    let text = std::fs::read_to_string(&op).map_err(|e| Error::io(&op, e))?;
    let obs = ObservationGrid::from_csv(&text).map_err(|e| Error::Parse {
        path: op.clone(),
        msg: e.to_string(),
    })?;
    Ok(DatasetScene { seed, scene, obs })
}

/// All scenes of one split, in manifest order; `limit` 0 means all.
pub fn load_split(dir: &Path, split: Split, limit: usize) -> Result<Vec<DatasetScene>> {
    let m = load_manifest(dir)?;
    let mut seeds = m.seeds(split);
    if limit > 0 {
        seeds.truncate(limit);
    }
    seeds.par_iter().map(|&s| load_scene(dir, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_ranges_are_disjoint() {
        let a = split_seeds(3, Split::Train, 1000);
        let b = split_seeds(3, Split::Val, 1000);
        assert!(a.iter().all(|s| !b.contains(s)));
        assert_eq!(split_seeds(3, Split::Train, 5), split_seeds(3, Split::Train, 5));
        assert_ne!(split_seeds(3, Split::Train, 5), split_seeds(4, Split::Train, 5));
    }
}
