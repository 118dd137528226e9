//! Noise schedule, forward noising, query padding and the DDIM reverse
//! process, independent of any particular denoiser.
//!
//! Diffusion runs in signal space `z = 2u - 1`, where `u` is the normalized
//! map coordinate, so that the terminal marginal is a standard normal.

use std::f64::consts::FRAC_PI_2;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{MapClass, Point, Polyline, VectorMap, N_CLASSES};
use crate::rng::{derive_seed, rng_from, Rng};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_QUERIES: usize = 20;
pub const COSINE_OFFSET: f64 = 0.008;
/// Class index used for padded queries and discarded predictions.
pub const NO_OBJECT: usize = N_CLASSES;
pub const N_LOGITS: usize = N_CLASSES + 1;

pub const GAUSSIAN_PAD_MEAN: f64 = 0.5;
pub const GAUSSIAN_PAD_SD: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule, `alpha_bar[t] = f(t) / f(0)` with
    /// `f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2)`.
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        let s = COSINE_OFFSET;
        let f = |t: usize| {
            let c = ((t as f64 / steps as f64 + s) / (1.0 + s) * FRAC_PI_2).cos();
            c * c
        };
        let f0 = f(0);
        let alpha_bar = (0..=steps).map(|t| f(t) / f0).collect();
        Ok(NoiseSchedule { steps, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn table(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Short hash of the table, stored in checkpoints to catch schedule drift.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"cosine");
        h.update((self.steps as u64).to_le_bytes());
        for a in &self.alpha_bar {
            h.update(a.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

pub fn to_signal(u: f64) -> f64 {
    2.0 * u - 1.0
}

pub fn from_signal(z: f64) -> f64 {
    0.5 * (z + 1.0)
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_q_with(x0: &[f64], t: usize, schedule: &NoiseSchedule, rng: &mut Rng) -> Vec<f64> {
    let a = schedule.alpha_bar(t);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    x0.iter()
        .map(|&x| {
            let e: f64 = StandardNormal.sample(rng);
            sa * x + sn * e
        })
        .collect()
}

pub fn forward_q(x0: &[f64], t: usize, schedule: &NoiseSchedule, seed: u64) -> Result<Vec<f64>> {
    if t > schedule.steps() {
        return Err(Error::InvalidArgument(format!("timestep {t} beyond T={}", schedule.steps())));
    }
    Ok(forward_q_with(x0, t, schedule, &mut rng_from(seed)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PaddingStrategy {
    Repeat,
    Zero,
    Smooth,
    #[default]
    Gaussian,
    Uniform,
}

impl PaddingStrategy {
    pub const ALL: [PaddingStrategy; 5] = [
        PaddingStrategy::Repeat,
        PaddingStrategy::Zero,
        PaddingStrategy::Smooth,
        PaddingStrategy::Gaussian,
        PaddingStrategy::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PaddingStrategy::Repeat => "repeat",
            PaddingStrategy::Zero => "zero",
            PaddingStrategy::Smooth => "smooth",
            PaddingStrategy::Gaussian => "gaussian",
            PaddingStrategy::Uniform => "uniform",
        }
    }
}

impl FromStr for PaddingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PaddingStrategy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown padding strategy {s:?}")))
    }
}

/// One padded polyline in normalized coordinates. `Repeat` cycles the GT
/// elements and falls back to `Zero` when there are none (at inference).
fn padded_polyline(strategy: PaddingStrategy, gt: &[Polyline], slot: usize, n_p: usize, rng: &mut Rng) -> Vec<Point> {
    match strategy {
        PaddingStrategy::Repeat if !gt.is_empty() => gt[slot % gt.len()].points.clone(),
        PaddingStrategy::Repeat | PaddingStrategy::Zero => vec![[0.5, 0.5]; n_p],
        PaddingStrategy::Gaussian => {
            let d = Normal::new(GAUSSIAN_PAD_MEAN, GAUSSIAN_PAD_SD).expect("valid normal");
            (0..n_p)
                .map(|_| [d.sample(rng).clamp(0.0, 1.0), d.sample(rng).clamp(0.0, 1.0)])
                .collect()
        }
        PaddingStrategy::Uniform => (0..n_p).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect(),
        PaddingStrategy::Smooth => {
            // A straight or gently curved chain of random placement.
            let start: Point = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            let length = rng.random_range(0.2..0.8);
            let curvature = if rng.random_bool(0.5) {
                0.0
            } else {
                rng.random_range(-2.0..2.0)
            };
            let ds = length / (n_p.max(2) - 1) as f64;
            let mut p = start;
            let mut h = heading;
            let mut out = Vec::with_capacity(n_p);
            for _ in 0..n_p {
                out.push([p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]);
                p = [p[0] + ds * h.cos(), p[1] + ds * h.sin()];
                h += curvature * ds;
            }
            out
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryOrigin {
    FromGt,
    Padded,
}

/// `l` queries of `n_p` signal-space points each, flattened as
/// `[query][point][xy]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet {
    pub l: usize,
    pub n_p: usize,
    pub coords: Vec<f64>,
    pub origins: Vec<QueryOrigin>,
    pub class_targets: Vec<usize>,
}

impl QuerySet {
    pub fn query_len(&self) -> usize {
        self.n_p * 2
    }

    pub fn query(&self, i: usize) -> &[f64] {
        let q = self.query_len();
        &self.coords[i * q..(i + 1) * q]
    }

    pub fn n_from_gt(&self) -> usize {
        self.origins.iter().filter(|o| **o == QueryOrigin::FromGt).count()
    }
}

pub fn polyline_to_signal(points: &[Point]) -> impl Iterator<Item = f64> + '_ {
    points.iter().flat_map(|p| [to_signal(p[0]), to_signal(p[1])])
}

pub fn signal_to_points(z: &[f64]) -> Vec<Point> {
    z.chunks(2).map(|c| [from_signal(c[0]), from_signal(c[1])]).collect()
}

pub fn pad_queries_with(
    gt: &VectorMap,
    l: usize,
    n_p: usize,
    strategy: PaddingStrategy,
    rng: &mut Rng,
) -> Result<QuerySet> {
    if gt.len() > l {
        return Err(Error::QueryOverflow { gt: gt.len(), queries: l });
    }
    let mut coords = Vec::with_capacity(l * n_p * 2);
    let mut origins = Vec::with_capacity(l);
    let mut class_targets = Vec::with_capacity(l);
    for p in &gt.elements {
        if p.points.len() != n_p {
            return Err(Error::ShapeMismatch(format!(
                "polyline has {} points, expected {n_p}",
                p.points.len()
            )));
        }
        coords.extend(polyline_to_signal(&p.points));
        origins.push(QueryOrigin::FromGt);
        class_targets.push(p.class.index());
    }
    for slot in 0..l - gt.len() {
        coords.extend(polyline_to_signal(&padded_polyline(strategy, &gt.elements, slot, n_p, rng)));
        origins.push(QueryOrigin::Padded);
        class_targets.push(NO_OBJECT);
    }
    Ok(QuerySet {
        l,
        n_p,
        coords,
        origins,
        class_targets,
    })
}

pub fn pad_queries(gt: &VectorMap, l: usize, n_p: usize, strategy: PaddingStrategy, seed: u64) -> Result<QuerySet> {
    pad_queries_with(gt, l, n_p, strategy, &mut rng_from(seed))
}

/// One DDIM update from `t` to `t_prev` given the predicted clean signal.
pub fn ddim_step(
    x_t: &[f64],
    x0_hat: &[f64],
    t: usize,
    t_prev: usize,
    eta: f64,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if t == 0 || t_prev >= t || t > schedule.steps() {
        return Err(Error::InvalidStepPair { t, t_prev });
    }
    if x_t.len() != x0_hat.len() {
        return Err(Error::ShapeMismatch("x_t and x0_hat differ in length".into()));
    }
    let a_t = schedule.alpha_bar(t);
    let a_p = schedule.alpha_bar(t_prev);
    let sigma = eta * ((1.0 - a_p) / (1.0 - a_t)).sqrt() * (1.0 - a_t / a_p).max(0.0).sqrt();
    let dir = (1.0 - a_p - sigma * sigma).max(0.0).sqrt();
    let (sa_t, sn_t, sa_p) = (a_t.sqrt(), (1.0 - a_t).sqrt(), a_p.sqrt());
    let mut out = Vec::with_capacity(x_t.len());
    for (&x, &x0) in x_t.iter().zip(x0_hat) {
        let eps = (x - sa_t * x0) / sn_t;
        let mut v = sa_p * x0 + dir * eps;
        if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            v += sigma * z;
        }
        out.push(v);
    }
    Ok(out)
}

/// `k` inference timesteps `round(T (k - j) / k)`, descending; the chain
/// ends at 0 after the last one.
pub fn inference_timesteps(k: usize, steps: usize) -> Vec<usize> {
    (0..k)
        .map(|j| ((steps * (k - j)) as f64 / k as f64).round() as usize)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub k: usize,
    pub eta: f64,
    pub tau: f64,
    pub n: usize,
    pub score_filter: f64,
    pub padding: PaddingStrategy,
    pub queries: usize,
    /// Length of the noise schedule the checkpoint must have been trained
    /// with.
    #[serde(rename = "T")]
    pub steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            k: 5,
            eta: 0.5,
            tau: 0.5,
            n: 10,
            score_filter: 0.4,
            padding: PaddingStrategy::Gaussian,
            queries: DEFAULT_QUERIES,
            steps: DEFAULT_STEPS,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k < 1 || self.k > steps {
            return bad(format!("k must lie in [1, {steps}], got {}", self.k));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta must lie in [0, 1], got {}", self.eta));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if self.n < 1 {
            return bad("n must be at least 1".into());
        }
        if self.queries < 1 {
            return bad("queries must be at least 1".into());
        }
        Ok(())
    }
}

/// Denoiser output for `l` queries: clean-signal estimate and class logits
/// (`N_LOGITS` per query, last is no-object).
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseOutput {
    pub x0: Vec<f64>,
    pub logits: Vec<f64>,
}

impl DenoiseOutput {
    pub fn probs(&self, i: usize) -> [f64; N_LOGITS] {
        softmax(&self.logits[i * N_LOGITS..(i + 1) * N_LOGITS])
    }

    /// Maximum real-class probability and its class.
    pub fn score(&self, i: usize) -> (f64, usize) {
        let p = self.probs(i);
        let mut best = 0;
        for c in 1..N_CLASSES {
            if p[c] > p[best] {
                best = c;
            }
        }
        (p[best], best)
    }

    pub fn label(&self, i: usize) -> usize {
        let p = self.probs(i);
        (0..N_LOGITS).fold(0, |b, c| if p[c] > p[b] { c } else { b })
    }
}

pub fn softmax(logits: &[f64]) -> [f64; N_LOGITS] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; N_LOGITS];
    let mut z = 0.0;
    for (o, &v) in p.iter_mut().zip(logits) {
        *o = (v - m).exp();
        z += *o;
    }
    p.iter_mut().for_each(|v| *v /= z);
    p
}

pub trait Denoiser {
    type Condition: ?Sized;

    fn n_points(&self) -> usize;

    /// Predict the clean signal and class logits for `l` queries at step `t`.
    fn denoise(&self, x_t: &[f64], l: usize, t: usize, cond: &Self::Condition) -> Result<DenoiseOutput>;
}

/// Seeds of the two independent random streams of one sampling run: query
/// initialization and refills, and DDIM step noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleSeeds {
    pub init: u64,
    pub noise: u64,
}

impl SampleSeeds {
    pub fn derive(seed: u64) -> Self {
        SampleSeeds {
            init: derive_seed(seed, 0x1d17),
            noise: derive_seed(seed, 0x0e15),
        }
    }
}

fn fresh_query(strategy: PaddingStrategy, n_p: usize, t: usize, schedule: &NoiseSchedule, rng: &mut Rng) -> Vec<f64> {
    let pts = padded_polyline(strategy, &[], 0, n_p, rng);
    let z: Vec<f64> = polyline_to_signal(&pts).collect();
    forward_q_with(&z, t, schedule, rng)
}

/// Initial `x_T`: padding draws pushed through the forward process.
pub fn initial_state(cfg: &SamplerConfig, n_p: usize, schedule: &NoiseSchedule, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    (0..cfg.queries)
        .flat_map(|_| fresh_query(cfg.padding, n_p, schedule.steps(), schedule, &mut rng))
        .collect()
}

pub fn sample_map<D: Denoiser>(
    den: &D,
    cond: &D::Condition,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<VectorMap> {
    let seeds = SampleSeeds::derive(seed);
    let x_t = initial_state(cfg, den.n_points(), schedule, seeds.init);
    sample_map_from(den, cond, cfg, schedule, x_t, seeds)
}

/// Reverse process from a given `x_T`. Refills use the `init` stream so
/// that with `eta = 0` the result does not depend on `seeds.noise`.
pub fn sample_map_from<D: Denoiser>(
    den: &D,
    cond: &D::Condition,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
    mut x: Vec<f64>,
    seeds: SampleSeeds,
) -> Result<VectorMap> {
    cfg.validate(schedule.steps())?;
    let n_p = den.n_points();
    let l = cfg.queries;
    let q = n_p * 2;
    if x.len() != l * q {
        return Err(Error::ShapeMismatch(format!("state has {} values, expected {}", x.len(), l * q)));
    }
    let mut refill_rng = rng_from(derive_seed(seeds.init, 1));
    let mut noise_rng = rng_from(seeds.noise);
    let ts = inference_timesteps(cfg.k, schedule.steps());
    let mut last = None;
    for (j, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(j + 1).copied().unwrap_or(0);
        let out = den.denoise(&x, l, t, cond)?;
        if out.x0.len() != x.len() || out.logits.len() != l * N_LOGITS {
            return Err(Error::ShapeMismatch("denoiser output shape".into()));
        }
        if !out.x0.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow("denoiser output"));
        }
        x = ddim_step(&x, &out.x0, t, t_prev, cfg.eta, schedule, &mut noise_rng)?;
        if t_prev > 0 {
            for i in 0..l {
                if out.score(i).0 < cfg.tau {
                    let fresh = fresh_query(cfg.padding, n_p, t_prev, schedule, &mut refill_rng);
                    x[i * q..(i + 1) * q].copy_from_slice(&fresh);
                }
            }
        }
        last = Some(out);
    }
    let out = last.expect("k >= 1");
    let mut elements = Vec::new();
    let mut scores = Vec::new();
    for i in 0..l {
        if out.label(i) == NO_OBJECT {
            continue;
        }
        let (score, class) = out.score(i);
        let pts = signal_to_points(&x[i * q..(i + 1) * q])
            .into_iter()
            .map(|p| [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)])
            .collect();
        elements.push(Polyline::new(MapClass::from_index(class).expect("real class"), pts));
        scores.push(score);
    }
    VectorMap::predicted(elements, scores)
}
