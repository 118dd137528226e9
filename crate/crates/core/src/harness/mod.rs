//! Command implementations behind the CLI: dataset generation, training,
//! sampling, evaluation, ablation sweeps and the final report. Every command
//! writes a `run-<command>.json` reproduction record into its output directory.

pub mod config;
pub mod dataset;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{DataConfig, MetricsConfig, RunConfig, RunMeta};
pub use dataset::{gen_data, load_manifest, load_split, DatasetScene, Manifest, Split};

use crate::aggregation::{aggregate_samples, ClassProbMap};
use crate::diffusion::{sample_map, NoiseSchedule, PaddingStrategy, SamplerConfig};
use crate::error::{Error, Result};
use crate::geometry::{MapClass, MapFrame, RasterGrid, VectorMap};
use crate::metrics::{evaluate_ap, ApResult, RocPool, RocResult};
use crate::net::{load_checkpoint, load_encoder_into, save_checkpoint, train, write_log_csv, Model, StepLog, TrainExample};
use crate::rng::derive_seed;
use crate::visibility::{compare_uncertainty, SceneUncertainty, VisibilityStats};

/// Seed of the sample stream for one scene; sample `i` then uses
/// `derive_seed(scene_stream, i)`, so the first samples do not depend on `n`.
pub fn scene_stream(global: u64, scene_seed: u64) -> u64 {
    derive_seed(derive_seed(global, 0x5a3), scene_seed)
}

pub fn model_seed(global: u64) -> u64 {
    derive_seed(global, 0x30de1)
}

pub fn training_examples(scenes: &[DatasetScene]) -> Vec<TrainExample> {
    scenes.iter().map(|s| TrainExample::new(&s.obs, s.scene.gt.clone())).collect()
}

/// `n` sampled maps per scene, scenes in parallel.
pub fn sample_scenes(model: &Model, scenes: &[DatasetScene], sampler: &SamplerConfig, global: u64) -> Result<Vec<Vec<VectorMap>>> {
    scenes
        .par_iter()
        .map(|s| model.sample_scene(&s.obs, sampler, scene_stream(global, s.seed)))
        .collect()
}

/// Like [`sample_scenes`], but encodes every scene first and times only the
/// reverse process. Returns the samples and the mean milliseconds per sample.
pub fn sample_scenes_timed(
    model: &Model,
    scenes: &[DatasetScene],
    sampler: &SamplerConfig,
    global: u64,
) -> Result<(Vec<Vec<VectorMap>>, f64)> {
    let latents: Vec<_> = scenes.par_iter().map(|s| model.encode(&s.obs)).collect::<Result<_>>()?;
    let start = Instant::now();
    let samples: Vec<Vec<VectorMap>> = scenes
        .par_iter()
        .zip(&latents)
        .map(|(s, lat)| {
            let stream = scene_stream(global, s.seed);
            (0..sampler.n)
                .map(|i| sample_map(model, lat, sampler, &model.schedule, derive_seed(stream, i as u64)))
                .collect()
        })
        .collect::<Result<_>>()?;
    let ms = start.elapsed().as_secs_f64() * 1e3 / (scenes.len() * sampler.n).max(1) as f64;
    Ok((samples, ms))
}

/// AP over the first sample of every scene.
pub fn ap_of_first_samples(samples: &[Vec<VectorMap>], scenes: &[DatasetScene], frame: &MapFrame, thresholds: &[f64]) -> Result<ApResult> {
    let preds: Vec<VectorMap> = samples
        .iter()
        .map(|s| s.first().cloned().ok_or_else(|| Error::InvalidArgument("scene without samples".into())))
        .collect::<Result<_>>()?;
    let gts: Vec<VectorMap> = scenes.iter().map(|s| s.scene.gt.clone()).collect();
    evaluate_ap(&preds, &gts, frame, thresholds)
}

/// Validation mAP from one sample per scene.
pub fn validation_map(model: &Model, scenes: &[DatasetScene], cfg: &RunConfig) -> Result<ApResult> {
    let one = SamplerConfig { n: 1, ..cfg.sampler.clone() };
    let samples = sample_scenes(model, scenes, &one, cfg.seed)?;
    ap_of_first_samples(&samples, scenes, &cfg.frame, &cfg.metrics.thresholds)
}

pub fn fresh_model(cfg: &RunConfig) -> Result<Model> {
    let mut model = Model::new(&cfg.net, NoiseSchedule::cosine(cfg.sampler.steps)?, model_seed(cfg.seed))?;
    if let Some(path) = &cfg.train.pretrained_encoder {
        load_encoder_into(&mut model, path)?;
    }
    Ok(model)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub sha256: String,
    pub init_val_map: Option<f64>,
    pub final_val_map: Option<f64>,
    pub steps: usize,
    pub seconds: f64,
}

/// Train on the dataset's train split and write `model.ckpt`,
/// `train_log.csv` and `run-train.json` into `out_dir`.
pub fn cmd_train(cfg: &RunConfig) -> Result<(TrainOutcome, Model, Vec<StepLog>)> {
    cfg.validate()?;
    let train_set = load_split(&cfg.data.dir, Split::Train, 0)?;
    if train_set.is_empty() && cfg.train.epochs > 0 {
        return Err(Error::Config("dataset has no train scenes".into()));
    }
    let val = if cfg.train.val_every > 0 {
        load_split(&cfg.data.dir, Split::Val, cfg.metrics.val_scenes)?
    } else {
        Vec::new()
    };
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut model = fresh_model(cfg)?;
    let data = training_examples(&train_set);
    let hook = |m: &Model| validation_map(m, &val, cfg).map(|r| r.map);
    let init_val_map = if val.is_empty() { None } else { Some(hook(&model)?) };
    let start = Instant::now();
    let log = train(
        &mut model,
        &data,
        &cfg.train,
        derive_seed(cfg.seed, 0x7a1),
        if val.is_empty() { None } else { Some(&hook) },
        Some(out),
    )?;
    let seconds = start.elapsed().as_secs_f64();
    let ckpt = out.join("model.ckpt");
    let sha256 = save_checkpoint(
        &model,
        &ckpt,
        serde_json::json!({ "seed": cfg.seed, "config_sha256": cfg.hash() }),
    )?;
    write_log_csv(&log, &out.join("train_log.csv"))?;
    let outcome = TrainOutcome {
        checkpoint: ckpt,
        sha256,
        init_val_map,
        final_val_map: log.iter().rev().find_map(|r| r.val_map),
        steps: log.last().map_or(0, |r| r.step),
        seconds,
    };
    RunMeta::new("train", cfg, serde_json::to_value(&outcome)?).write(out)?;
    Ok((outcome, model, log))
}

pub fn load_model_for(cfg: &RunConfig, checkpoint: &Path) -> Result<Model> {
    let (header, model) = load_checkpoint(checkpoint)?;
    let expected = NoiseSchedule::cosine(cfg.sampler.steps)?.fingerprint();
    if header.schedule != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained with a {}-step schedule, config asks for T = {}",
            header.steps, cfg.sampler.steps
        )));
    }
    if header.net.grid_h != cfg.frame.grid_h || header.net.grid_w != cfg.frame.grid_w {
        return Err(Error::Checkpoint("checkpoint grid differs from the map frame".into()));
    }
    Ok(model)
}

pub fn sample_path(dir: &Path, scene_seed: u64, i: usize) -> PathBuf {
    dir.join(scene_seed.to_string()).join(format!("{i}.json"))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub dir: PathBuf,
    pub scenes: usize,
    pub samples_per_scene: usize,
    pub ms_per_sample: f64,
}

/// Sample every val scene `n` times into `out_dir/samples/<seed>/<i>.json`.
pub fn cmd_sample(cfg: &RunConfig, checkpoint: &Path) -> Result<SampleOutcome> {
    cfg.validate()?;
    let model = load_model_for(cfg, checkpoint)?;
    let scenes = load_split(&cfg.data.dir, Split::Val, 0)?;
    let dir = cfg.out_dir.join("samples");
    let (samples, ms) = sample_scenes_timed(&model, &scenes, &cfg.sampler, cfg.seed)?;
    for (s, maps) in scenes.iter().zip(&samples) {
        let sd = dir.join(s.seed.to_string());
        std::fs::create_dir_all(&sd).map_err(|e| Error::io(&sd, e))?;
        for (i, m) in maps.iter().enumerate() {
            m.write_json(&cfg.frame, &sample_path(&dir, s.seed, i))?;
        }
    }
    let outcome = SampleOutcome {
        dir,
        scenes: scenes.len(),
        samples_per_scene: cfg.sampler.n,
        ms_per_sample: ms,
    };
    RunMeta::new(
        "sample",
        cfg,
        serde_json::json!({ "checkpoint": checkpoint, "outcome": &outcome }),
    )
    .write(&cfg.out_dir)?;
    Ok(outcome)
}

/// Samples of one scene in index order.
pub fn read_scene_samples(dir: &Path, scene_seed: u64) -> Result<Vec<VectorMap>> {
    let mut out = Vec::new();
    loop {
        let p = sample_path(dir, scene_seed, out.len());
        if !p.exists() {
            break;
        }
        out.push(VectorMap::read_json(&p)?.0);
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("no samples for scene {scene_seed} in {}", dir.display())));
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RocSummary {
    pub n: usize,
    pub auc: f64,
    pub per_class_auc: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: usize,
    pub n_max: usize,
    pub ap_thresholds: Vec<f64>,
    /// `[class][threshold]`.
    pub ap: Vec<Vec<Option<f64>>>,
    pub map: f64,
    pub roc_single: RocSummary,
    pub roc_multi: RocSummary,
    pub visibility: Option<VisibilityStats>,
}

/// Per-scene aggregates for `n = 1` and for all samples.
pub struct SceneMaps {
    pub single: ClassProbMap,
    pub multi: ClassProbMap,
    pub uncertainty: RasterGrid,
}

pub fn scene_maps(samples: &[VectorMap], cfg: &RunConfig) -> Result<SceneMaps> {
    let k = cfg.metrics.kernel()?;
    let (single, _) = aggregate_samples(&samples[..1], &cfg.frame, &k, cfg.sampler.score_filter)?;
    let (multi, uncertainty) = aggregate_samples(samples, &cfg.frame, &k, cfg.sampler.score_filter)?;
    Ok(SceneMaps {
        single,
        multi,
        uncertainty,
    })
}

fn roc_tables(maps: &[(&ClassProbMap, &VectorMap)], frame: &MapFrame) -> Result<(RocResult, Vec<Option<RocResult>>)> {
    let mut micro = RocPool::default();
    for (d, gt) in maps {
        micro.push_scene(d, gt, frame, None)?;
    }
    let all = micro.curve(&micro.default_thresholds())?;
    let per_class = MapClass::ALL
        .iter()
        .map(|&c| {
            let mut pool = RocPool::default();
            for (d, gt) in maps {
                pool.push_scene(d, gt, frame, Some(c))?;
            }
            match pool.curve(&pool.default_thresholds()) {
                Ok(r) => Ok(Some(r)),
                Err(Error::DegenerateRoc { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((all, per_class))
}

fn roc_csv(all: &RocResult, per_class: &[Option<RocResult>]) -> String {
    let mut s = String::from("class,b,fpr,tpr\n");
    let mut rows = |name: &str, r: &RocResult| {
        for p in &r.points {
            s.push_str(&format!("{name},{},{},{}\n", p.b, p.fpr, p.tpr));
        }
    };
    rows("all", all);
    for (c, r) in MapClass::ALL.iter().zip(per_class) {
        if let Some(r) = r {
            rows(c.name(), r);
        }
    }
    s
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Table-I-shaped row: AP per class (ped, divider, boundary) then mAP.
pub fn ap_row(ap: &ApResult) -> [Option<f64>; 4] {
    [
        ap.class_ap(MapClass::PedCrossing),
        ap.class_ap(MapClass::Divider),
        ap.class_ap(MapClass::Boundary),
        Some(ap.map),
    ]
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Evaluate the samples under `samples_dir` against the val split.
pub fn cmd_evaluate(cfg: &RunConfig, samples_dir: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let scenes = load_split(&cfg.data.dir, Split::Val, 0)?;
    if scenes.is_empty() {
        return Err(Error::Config("dataset has no val scenes".into()));
    }
    let samples: Vec<Vec<VectorMap>> = scenes.par_iter().map(|s| read_scene_samples(samples_dir, s.seed)).collect::<Result<_>>()?;
    let n_max = samples.iter().map(Vec::len).min().unwrap_or(0);
    let out = cfg.out_dir.join("eval");

    let ap = ap_of_first_samples(&samples, &scenes, &cfg.frame, &cfg.metrics.thresholds)?;
    let mut ap_csv = String::from("threshold,AP_ped,AP_div,AP_bound,mAP\n");
    for (j, thr) in ap.thresholds.iter().enumerate() {
        let per = |c: MapClass| ap.ap[c.index()][j];
        let present: Vec<f64> = [MapClass::PedCrossing, MapClass::Divider, MapClass::Boundary].iter().filter_map(|&c| per(c)).collect();
        let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        ap_csv.push_str(&format!(
            "{thr},{},{},{},{}\n",
            fmt_opt(per(MapClass::PedCrossing)),
            fmt_opt(per(MapClass::Divider)),
            fmt_opt(per(MapClass::Boundary)),
            fmt_opt(mean)
        ));
    }
    let row = ap_row(&ap);
    ap_csv.push_str(&format!("mean,{},{},{},{}\n", fmt_opt(row[0]), fmt_opt(row[1]), fmt_opt(row[2]), fmt_opt(row[3])));
    write(&out.join("ap.csv"), ap_csv)?;

    let maps: Vec<SceneMaps> = samples
        .par_iter()
        .map(|s| scene_maps(&s[..n_max], cfg))
        .collect::<Result<_>>()?;
    let single: Vec<(&ClassProbMap, &VectorMap)> = maps.iter().zip(&scenes).map(|(m, s)| (&m.single, &s.scene.gt)).collect();
    let multi: Vec<(&ClassProbMap, &VectorMap)> = maps.iter().zip(&scenes).map(|(m, s)| (&m.multi, &s.scene.gt)).collect();
    let (r1, c1) = roc_tables(&single, &cfg.frame)?;
    let (rn, cn) = roc_tables(&multi, &cfg.frame)?;
    write(&out.join("roc_n1.csv"), roc_csv(&r1, &c1))?;
    write(&out.join(format!("roc_n{n_max}.csv")), roc_csv(&rn, &cn))?;
    let summary = |n: usize, r: &RocResult, c: &[Option<RocResult>]| RocSummary {
        n,
        auc: r.auc,
        per_class_auc: c.iter().map(|x| x.as_ref().map(|r| r.auc)).collect(),
    };
    let roc_single = summary(1, &r1, &c1);
    let roc_multi = summary(n_max, &rn, &cn);
    let mut auc_csv = String::from("n,class,auc\n");
    for s in [&roc_single, &roc_multi] {
        auc_csv.push_str(&format!("{},all,{}\n", s.n, s.auc));
        for (c, a) in MapClass::ALL.iter().zip(&s.per_class_auc) {
            auc_csv.push_str(&format!("{},{},{}\n", s.n, c.name(), fmt_opt(*a)));
        }
    }
    write(&out.join("auc.csv"), auc_csv)?;

    let masks: Vec<_> = scenes.iter().map(|s| s.scene.visibility()).collect();
    let rows: Vec<SceneUncertainty<'_>> = maps
        .iter()
        .zip(&scenes)
        .zip(&masks)
        .map(|((m, s), mask)| SceneUncertainty {
            uncertainty: &m.uncertainty,
            mask,
            drivable: &s.scene.drivable,
        })
        .collect();
    let visibility = match compare_uncertainty(&rows, cfg.metrics.ttest) {
        Ok(v) => Some(v),
        Err(Error::NoValidScenes) | Err(Error::InvalidArgument(_)) => None,
        Err(e) => return Err(e),
    };
    write(&out.join("visibility.json"), serde_json::to_string_pretty(&visibility)?)?;

    for (m, s) in maps.iter().zip(&scenes).take(cfg.metrics.pgm_scenes) {
        let d = out.join("maps").join(s.seed.to_string());
        for c in MapClass::ALL {
            let g = m.multi.class(c);
            write(&d.join(format!("d_{}.pgm", c.name())), g.to_pgm(1.0))?;
            write(&d.join(format!("d_{}.csv", c.name())), g.to_csv())?;
        }
        write(&d.join("u.pgm"), m.uncertainty.to_pgm(m.uncertainty.max()))?;
        write(&d.join("u.csv"), m.uncertainty.to_csv())?;
        write(&d.join("visible.pgm"), visibility_grid(&s.scene).to_pgm(1.0))?;
    }

    let report = EvalReport {
        scenes: scenes.len(),
        n_max,
        ap_thresholds: ap.thresholds.clone(),
        ap: ap.ap.clone(),
        map: ap.map,
        roc_single,
        roc_multi,
        visibility,
    };
    write(&out.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
    write(&out.join("summary.txt"), report::summary_text(&report))?;
    RunMeta::new(
        "evaluate",
        cfg,
        serde_json::json!({ "samples": samples_dir, "metadata": {
            "ap_interpolation": "all-point",
            "roc_pooling": "micro over classes and scenes",
            "variance": "population",
            "kernel": { "size": cfg.metrics.kernel_size, "sigma": cfg.metrics.kernel_sigma },
            "score_filter": cfg.sampler.score_filter,
            "n": n_max,
        }}),
    )
    .write(&out)?;
    Ok(report)
}

fn visibility_grid(scene: &crate::scene::Scene) -> RasterGrid {
    let m = scene.visibility();
    RasterGrid::from_vec(m.h, m.w, m.visible.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()).expect("mask shape")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    K,
    Eta,
    Tau,
    Padding,
    Pretrain,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(AblationAxis::K),
            "eta" => Ok(AblationAxis::Eta),
            "tau" => Ok(AblationAxis::Tau),
            "padding" => Ok(AblationAxis::Padding),
            "pretrain" => Ok(AblationAxis::Pretrain),
            other => Err(Error::Config(format!("unknown ablation axis {other:?}"))),
        }
    }
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::K => "k",
            AblationAxis::Eta => "eta",
            AblationAxis::Tau => "tau",
            AblationAxis::Padding => "padding",
            AblationAxis::Pretrain => "pretrain",
        }
    }

    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            AblationAxis::K => &["1", "2", "3", "4", "5"],
            AblationAxis::Eta => &["0", "0.5", "1"],
            AblationAxis::Tau => &["0.1", "0.5", "0.9"],
            AblationAxis::Padding => &["repeat", "zero", "smooth", "gaussian", "uniform"],
            AblationAxis::Pretrain => &["scratch", "frozen-random", "frozen-pretrained"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub ap_ped: Option<f64>,
    pub ap_div: Option<f64>,
    pub ap_bound: Option<f64>,
    pub map: f64,
    pub ms_per_sample: f64,
}

/// Timed sampling passes per ablation value; the fastest is reported.
pub const TIMING_PASSES: usize = 3;

fn parse_num<T: std::str::FromStr>(axis: AblationAxis, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad {} value {v:?}", axis.name())))
}

pub fn ablation_csv(axis: AblationAxis, rows: &[AblationRow]) -> String {
    let mut s = format!("{},AP_ped,AP_div,AP_bound,mAP,ms_per_sample\n", axis.name());
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{:.4},{:.3}\n",
            r.value,
            fmt_opt(r.ap_ped),
            fmt_opt(r.ap_div),
            fmt_opt(r.ap_bound),
            r.map,
            r.ms_per_sample
        ));
    }
    s
}

/// Sweep one axis. Inference axes reuse `checkpoint`; padding and pretrain
/// retrain per value under `out_dir/ablate-<axis>-<value>`.
pub fn cmd_ablate(cfg: &RunConfig, axis: AblationAxis, values: &[String], checkpoint: Option<&Path>) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let val = load_split(&cfg.data.dir, Split::Val, 0)?;
    if val.is_empty() {
        return Err(Error::Config("dataset has no val scenes".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    let shared = match axis {
        AblationAxis::K | AblationAxis::Eta | AblationAxis::Tau => {
            let ck = checkpoint.ok_or_else(|| Error::Config(format!("the {} sweep needs --checkpoint", axis.name())))?;
            Some(load_model_for(cfg, ck)?)
        }
        _ => None,
    };
    for v in values {
        let mut run = cfg.clone();
        run.sampler.n = 1;
        let model = match axis {
            AblationAxis::K => {
                run.sampler.k = parse_num(axis, v)?;
                None
            }
            AblationAxis::Eta => {
                run.sampler.eta = parse_num(axis, v)?;
                None
            }
            AblationAxis::Tau => {
                run.sampler.tau = parse_num(axis, v)?;
                None
            }
            AblationAxis::Padding => {
                let p: PaddingStrategy = v.parse()?;
                run.train.padding = p;
                run.sampler.padding = p;
                Some(())
            }
            AblationAxis::Pretrain => {
                match v.as_str() {
                    "scratch" => {
                        run.train.freeze_encoder = false;
                        run.train.pretrained_encoder = None;
                    }
                    "frozen-random" => {
                        run.train.freeze_encoder = true;
                        run.train.pretrained_encoder = None;
                    }
                    "frozen-pretrained" => {
                        if run.train.pretrained_encoder.is_none() {
                            return Err(Error::Config("frozen-pretrained needs train.pretrained_encoder".into()));
                        }
                        run.train.freeze_encoder = true;
                    }
                    other => return Err(Error::Config(format!("unknown pretrain value {other:?}"))),
                }
                Some(())
            }
        };
        run.validate()?;
        let trained;
        let m = match (model, &shared) {
            (None, Some(m)) => m,
            _ => {
                run.out_dir = cfg.out_dir.join(format!("ablate-{}-{v}", axis.name()));
                run.train.val_every = 0;
                trained = cmd_train(&run)?.1;
                &trained
            }
        };
        // Sampling is deterministic, so repeated passes only tighten the timing.
        let (samples, mut ms) = sample_scenes_timed(m, &val, &run.sampler, run.seed)?;
        for _ in 1..TIMING_PASSES {
            ms = ms.min(sample_scenes_timed(m, &val, &run.sampler, run.seed)?.1);
        }
        let ap = ap_of_first_samples(&samples, &val, &run.frame, &run.metrics.thresholds)?;
        let r = ap_row(&ap);
        rows.push(AblationRow {
            value: v.clone(),
            ap_ped: r[0],
            ap_div: r[1],
            ap_bound: r[2],
            map: ap.map,
            ms_per_sample: ms,
        });
    }
    let path = cfg.out_dir.join(format!("ablation_{}.csv", axis.name()));
    write(&path, ablation_csv(axis, &rows))?;
    RunMeta::new(
        "ablate",
        cfg,
        serde_json::json!({ "axis": axis, "values": values, "checkpoint": checkpoint, "rows": &rows }),
    )
    .write(&cfg.out_dir)?;
    Ok(rows)
}
