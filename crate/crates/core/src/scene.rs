//! Procedural road scenes: ground-truth vector maps built from straight or
//! curved road corridors, rectangular occluders, and the occlusion-degraded
//! observation grid the model is conditioned on.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    convolve_smooth, polyline_cells, GaussianKernel, MapClass, MapFrame, Point, Polyline,
    RasterGrid, VectorMap, VectorMapDoc,
};
use crate::rng::{derive_seed, rng_from, Rng};
use crate::visibility::{ray_trace, VisibilityMask};

pub const GENERATOR_VERSION: &str = "corridor-gen/1";
pub const OBS_CHANNELS: usize = 4;
pub const OCCLUDER_CHANNEL: usize = 3;

const LANE_WIDTH: f64 = 3.5;
const ARC_HALF_LENGTH: f64 = 80.0;
const ARC_STEP: f64 = 0.25;
const MIN_LINE_LENGTH: f64 = 4.0;
const MIN_PED_LENGTH: f64 = 3.0;
const MAX_ATTEMPTS: usize = 64;
const EGO_CLEARANCE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    fn tag(self) -> u64 {
        match self {
            Difficulty::Easy => 1,
            Difficulty::Medium => 2,
            Difficulty::Hard => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::Config(format!("unknown difficulty {other:?}"))),
        }
    }
}

/// Inclusive ranges and limits driving the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub frame: MapFrame,
    pub n_points: usize,
    pub corridors: [usize; 2],
    pub main_lanes: [usize; 2],
    pub side_lanes: [usize; 2],
    pub peds: [usize; 2],
    pub occluders: [usize; 2],
    /// Largest absolute centreline curvature, 1/m.
    pub max_curvature: f64,
    pub max_heading_deg: f64,
    pub max_elements: usize,
}

impl GeneratorConfig {
    pub fn for_difficulty(d: Difficulty) -> Self {
        let base = GeneratorConfig {
            frame: MapFrame::default(),
            n_points: 10,
            corridors: [1, 1],
            main_lanes: [1, 2],
            side_lanes: [1, 2],
            peds: [0, 1],
            occluders: [0, 2],
            max_curvature: 0.0,
            max_heading_deg: 5.0,
            max_elements: 12,
        };
        match d {
            Difficulty::Easy => base,
            Difficulty::Medium => GeneratorConfig {
                corridors: [1, 2],
                main_lanes: [2, 3],
                side_lanes: [1, 2],
                peds: [0, 2],
                occluders: [0, 4],
                max_curvature: 1.0 / 150.0,
                max_heading_deg: 10.0,
                ..base
            },
            Difficulty::Hard => GeneratorConfig {
                corridors: [1, 3],
                main_lanes: [2, 4],
                side_lanes: [1, 3],
                peds: [0, 2],
                occluders: [0, 6],
                max_curvature: 1.0 / 60.0,
                max_heading_deg: 15.0,
                ..base
            },
        }
    }

    /// Upper bound on emitted elements under this config.
    pub fn element_bounds(&self) -> [usize; 2] {
        let per_corridor = |lanes: usize| 2 + lanes.saturating_sub(1);
        // A cross street is split into two pieces by the main road.
        let hi = per_corridor(self.main_lanes[1])
            + (self.corridors[1] - 1) * 2 * per_corridor(self.side_lanes[1])
            + self.peds[1];
        [2, hi.min(self.max_elements)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    /// Centre in metres.
    pub center: [f64; 2],
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl Occluder {
    fn local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        [c * d[0] + s * d[1], -s * d[0] + c * d[1]]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let l = self.local(p);
        l[0].abs() <= 0.5 * self.length && l[1].abs() <= 0.5 * self.width
    }

    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let l = self.local(p);
        let dx = (l[0].abs() - 0.5 * self.length).max(0.0);
        let dy = (l[1].abs() - 0.5 * self.width).max(0.0);
        dx.hypot(dy)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub difficulty: Difficulty,
    pub frame: MapFrame,
    pub n_points: usize,
    pub gt: VectorMap,
    pub occluders: Vec<Occluder>,
    pub occupancy: RasterGrid,
    pub drivable: RasterGrid,
    pub ego_cell: (usize, usize),
}

impl Scene {
    pub fn visibility(&self) -> VisibilityMask {
        ray_trace(&self.occupancy, self.ego_cell)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = SceneDoc {
            generator_version: GENERATOR_VERSION.to_string(),
            seed: self.seed,
            difficulty: self.difficulty,
            n_points: self.n_points,
            ego_cell: self.ego_cell,
            gt: VectorMapDoc::from_map(&self.gt, &self.frame),
            occluders: self.occluders.clone(),
            occupancy: grid_to_rows(&self.occupancy),
            drivable: grid_to_rows(&self.drivable),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SceneDoc = serde_json::from_str(text)?;
        let (gt, frame) = doc.gt.into_map()?;
        Ok(Scene {
            seed: doc.seed,
            difficulty: doc.difficulty,
            frame,
            n_points: doc.n_points,
            gt,
            occluders: doc.occluders,
            occupancy: rows_to_grid(&doc.occupancy)?,
            drivable: rows_to_grid(&doc.drivable)?,
            ego_cell: doc.ego_cell,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SceneDoc {
    generator_version: String,
    seed: u64,
    difficulty: Difficulty,
    n_points: usize,
    ego_cell: (usize, usize),
    gt: VectorMapDoc,
    occluders: Vec<Occluder>,
    occupancy: Vec<String>,
    drivable: Vec<String>,
}

fn grid_to_rows(g: &RasterGrid) -> Vec<String> {
    g.data
        .chunks(g.w)
        .map(|row| row.iter().map(|&v| if v > 0.5 { '1' } else { '0' }).collect())
        .collect()
}

fn rows_to_grid(rows: &[String]) -> Result<RasterGrid> {
    let w = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * w);
    for r in rows {
        if r.len() != w {
            return Err(Error::ShapeMismatch("ragged grid rows".into()));
        }
        data.extend(r.chars().map(|ch| if ch == '1' { 1.0 } else { 0.0 }));
    }
    RasterGrid::from_vec(rows.len(), w, data)
}

/// A road corridor: a straight or circular-arc centreline with lanes of
/// fixed width on both sides.
#[derive(Clone, Copy, Debug)]
struct Corridor {
    origin: [f64; 2],
    heading: f64,
    curvature: f64,
    lanes: usize,
}

impl Corridor {
    fn width(&self) -> f64 {
        self.lanes as f64 * LANE_WIDTH
    }

    fn pose(&self, s: f64) -> ([f64; 2], f64) {
        let h = self.heading + self.curvature * s;
        if self.curvature.abs() < 1e-12 {
            let (sn, cs) = self.heading.sin_cos();
            ([self.origin[0] + s * cs, self.origin[1] + s * sn], h)
        } else {
            let k = self.curvature;
            (
                [
                    self.origin[0] + (h.sin() - self.heading.sin()) / k,
                    self.origin[1] + (self.heading.cos() - h.cos()) / k,
                ],
                h,
            )
        }
    }

    /// Point at arc length `s` shifted `d` metres to the left.
    fn offset_point(&self, s: f64, d: f64) -> [f64; 2] {
        let (p, h) = self.pose(s);
        let (sn, cs) = h.sin_cos();
        [p[0] - d * sn, p[1] + d * cs]
    }

    /// Station and signed left offset of `p` relative to the centreline.
    fn project(&self, p: [f64; 2]) -> (f64, f64) {
        let (sn, cs) = self.heading.sin_cos();
        if self.curvature.abs() < 1e-12 {
            let d = [p[0] - self.origin[0], p[1] - self.origin[1]];
            (d[0] * cs + d[1] * sn, -d[0] * sn + d[1] * cs)
        } else {
            let k = self.curvature;
            let c = [self.origin[0] - sn / k, self.origin[1] + cs / k];
            let v0 = [self.origin[0] - c[0], self.origin[1] - c[1]];
            let v = [p[0] - c[0], p[1] - c[1]];
            let angle = (v0[0] * v[1] - v0[1] * v[0]).atan2(v0[0] * v[0] + v0[1] * v[1]);
            let rho = v[0].hypot(v[1]);
            (angle / k, k.signum() * (1.0 / k.abs() - rho))
        }
    }

    fn contains(&self, p: [f64; 2], margin: f64) -> bool {
        let (s, d) = self.project(p);
        s.abs() <= ARC_HALF_LENGTH && d.abs() <= 0.5 * self.width() + margin
    }

    fn offset_curve(&self, d: f64) -> Vec<[f64; 2]> {
        let n = (2.0 * ARC_HALF_LENGTH / ARC_STEP) as usize;
        (0..=n)
            .map(|i| self.offset_point(-ARC_HALF_LENGTH + i as f64 * ARC_STEP, d))
            .collect()
    }
}

fn in_extent(frame: &MapFrame, p: [f64; 2]) -> bool {
    p[0] >= frame.x_min && p[0] <= frame.x_max && p[1] >= frame.y_min && p[1] <= frame.y_max
}

fn chain_length(pts: &[[f64; 2]]) -> f64 {
    pts.windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}

/// Contiguous runs of a dense chain where `keep` holds, with run ends refined
/// onto the boundary of the kept region by bisection.
fn kept_runs(pts: &[[f64; 2]], keep: impl Fn([f64; 2]) -> bool) -> Vec<Vec<[f64; 2]>> {
    let boundary = |inside: [f64; 2], outside: [f64; 2]| {
        let (mut a, mut b) = (inside, outside);
        for _ in 0..30 {
            let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            if keep(m) {
                a = m;
            } else {
                b = m;
            }
        }
        a
    };
    let mut runs = Vec::new();
    let mut cur: Vec<[f64; 2]> = Vec::new();
    for (i, &p) in pts.iter().enumerate() {
        if keep(p) {
            if cur.is_empty() && i > 0 {
                cur.push(boundary(p, pts[i - 1]));
            }
            cur.push(p);
        } else if !cur.is_empty() {
            cur.push(boundary(*cur.last().unwrap(), p));
            runs.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        runs.push(cur);
    }
    runs
}

struct Candidate {
    class: MapClass,
    raw: Vec<[f64; 2]>,
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn count_in(rng: &mut Rng, range: [usize; 2]) -> usize {
    rng.random_range(range[0]..=range[1].max(range[0]))
}

pub fn generate_scene(seed: u64, difficulty: Difficulty) -> Result<Scene> {
    generate_scene_with(seed, difficulty, &GeneratorConfig::for_difficulty(difficulty))
}

/// Deterministic for a fixed `(seed, difficulty, cfg)`.
pub fn generate_scene_with(seed: u64, difficulty: Difficulty, cfg: &GeneratorConfig) -> Result<Scene> {
    cfg.frame.validate()?;
    let mut rng = rng_from(derive_seed(seed, difficulty.tag()));
    for _ in 0..MAX_ATTEMPTS {
        if let Some(scene) = try_generate(&mut rng, seed, difficulty, cfg) {
            return Ok(scene);
        }
    }
    Err(Error::GenerationFailed(MAX_ATTEMPTS))
}

fn try_generate(rng: &mut Rng, seed: u64, difficulty: Difficulty, cfg: &GeneratorConfig) -> Option<Scene> {
    let frame = cfg.frame;
    let max_heading = cfg.max_heading_deg.to_radians();

    let main_lanes = count_in(rng, cfg.main_lanes);
    let main_w = main_lanes as f64 * LANE_WIDTH;
    let lateral_room = (0.5 * main_w - 0.5 * LANE_WIDTH).max(0.0);
    let main = Corridor {
        origin: [0.0, uniform(rng, -lateral_room, lateral_room)],
        heading: uniform(rng, -max_heading, max_heading),
        curvature: uniform(rng, -cfg.max_curvature, cfg.max_curvature),
        lanes: main_lanes,
    };
    let mut corridors = vec![main];
    let n_corridors = count_in(rng, cfg.corridors);
    for i in 1..n_corridors {
        // Cross streets, one ahead and one behind the ego.
        let side = if i % 2 == 1 { 1.0 } else { -1.0 };
        let x = side * uniform(rng, 10.0, 22.0);
        corridors.push(Corridor {
            origin: [x, 0.0],
            heading: std::f64::consts::FRAC_PI_2 + uniform(rng, -0.35, 0.35),
            curvature: uniform(rng, -cfg.max_curvature, cfg.max_curvature),
            lanes: count_in(rng, cfg.side_lanes),
        });
    }

    let inside_frame = |p: [f64; 2]| in_extent(&frame, p);
    let mut lines: Vec<Candidate> = Vec::new();
    let mut side_lines: Vec<Candidate> = Vec::new();
    for (ci, cor) in corridors.iter().enumerate() {
        let w = cor.width();
        let mut offsets = vec![(MapClass::Boundary, -0.5 * w), (MapClass::Boundary, 0.5 * w)];
        for k in 1..cor.lanes {
            offsets.push((MapClass::Divider, -0.5 * w + k as f64 * LANE_WIDTH));
        }
        for (class, d) in offsets {
            let curve = cor.offset_curve(d);
            let runs = if ci == 0 {
                kept_runs(&curve, inside_frame)
            } else {
                kept_runs(&curve, |p| inside_frame(p) && !main.contains(p, 0.0))
            };
            for run in runs {
                if chain_length(&run) >= MIN_LINE_LENGTH {
                    let c = Candidate { class, raw: run };
                    if ci == 0 {
                        lines.push(c);
                    } else {
                        side_lines.push(c);
                    }
                }
            }
        }
    }

    let mut peds = Vec::new();
    let n_peds = count_in(rng, cfg.peds);
    for _ in 0..n_peds {
        for _ in 0..20 {
            let ci = rng.random_range(0..corridors.len());
            let cor = corridors[ci];
            let s = if ci == 0 {
                let mag = uniform(rng, 6.0, 25.0);
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            } else {
                uniform(rng, -12.0, 12.0)
            };
            let center = cor.offset_point(s, 0.0);
            if ci != 0 && main.contains(center, 1.5) {
                continue;
            }
            let half = 0.5 * cor.width();
            let seg: Vec<[f64; 2]> = (0..=20)
                .map(|k| cor.offset_point(s, -half + 2.0 * half * k as f64 / 20.0))
                .collect();
            let runs = kept_runs(&seg, inside_frame);
            if let Some(run) = runs.into_iter().max_by(|a, b| chain_length(a).total_cmp(&chain_length(b))) {
                if chain_length(&run) >= MIN_PED_LENGTH {
                    peds.push(Candidate {
                        class: MapClass::PedCrossing,
                        raw: run,
                    });
                    break;
                }
            }
        }
    }

    let mut candidates = lines;
    candidates.extend(peds);
    candidates.extend(side_lines);
    candidates.truncate(cfg.max_elements);
    candidates.sort_by_key(|c| c.class.index());

    let mut elements = Vec::with_capacity(candidates.len());
    for c in &candidates {
        let raw: Vec<Point> = c
            .raw
            .iter()
            .map(|&p| {
                let q = frame.normalize(p[0], p[1]);
                [q[0].clamp(0.0, 1.0), q[1].clamp(0.0, 1.0)]
            })
            .collect();
        elements.push(Polyline::resampled(c.class, &raw, cfg.n_points).ok()?);
    }

    let mut drivable = RasterGrid::for_frame(&frame);
    for r in 0..frame.grid_h {
        for col in 0..frame.grid_w {
            let c = frame.cell_center(r, col);
            let p = frame.denormalize(c);
            if corridors.iter().any(|cor| cor.contains(p, 0.0)) {
                drivable.set(r, col, 1.0);
            }
        }
    }

    let ego_cell = frame.ego_cell();
    let mut occluders = Vec::new();
    let n_occ = count_in(rng, cfg.occluders);
    for _ in 0..n_occ {
        for _ in 0..30 {
            let ci = if corridors.len() == 1 || rng.random_bool(0.6) {
                0
            } else {
                rng.random_range(1..corridors.len())
            };
            let cor = corridors[ci];
            let s = uniform(rng, -28.0, 28.0);
            let reach = 0.5 * cor.width() + 2.5;
            let d = uniform(rng, -reach, reach);
            let (_, h) = cor.pose(s);
            let occ = Occluder {
                center: cor.offset_point(s, d),
                heading: h + uniform(rng, -0.1, 0.1),
                length: uniform(rng, 4.0, 9.0),
                width: uniform(rng, 1.8, 2.6),
            };
            if !inside_frame(occ.center) || occ.distance([0.0, 0.0]) < EGO_CLEARANCE {
                continue;
            }
            occluders.push(occ);
            break;
        }
    }
    let mut occupancy = RasterGrid::for_frame(&frame);
    for r in 0..frame.grid_h {
        for col in 0..frame.grid_w {
            let p = frame.denormalize(frame.cell_center(r, col));
            if occluders.iter().any(|o| o.contains(p)) {
                occupancy.set(r, col, 1.0);
            }
        }
    }

    let scene = Scene {
        seed,
        difficulty,
        frame,
        n_points: cfg.n_points,
        gt: VectorMap::ground_truth(elements),
        occluders,
        occupancy,
        drivable,
        ego_cell,
    };
    validate_scene(&scene).then_some(scene)
}

fn validate_scene(scene: &Scene) -> bool {
    let (er, ec) = scene.ego_cell;
    if scene.occupancy.get(er, ec) > 0.5 || scene.gt.is_empty() {
        return false;
    }
    for p in &scene.gt.elements {
        if !p.in_unit_square() || !p.is_finite() {
            return false;
        }
        let first = p.points[0];
        if !p.points.iter().any(|q| q != &first) {
            return false;
        }
        if p.class == MapClass::Divider
            && polyline_cells(&p.points, &scene.frame)
                .iter()
                .any(|&(r, c)| scene.drivable.get(r, c) < 0.5)
        {
            return false;
        }
    }
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserveConfig {
    pub noise_sigma: f64,
    pub evidence_kernel_size: usize,
    pub evidence_sigma: f64,
    /// When false the occluder channel is left at zero (evidence-only input).
    pub occluder_channel: bool,
}

impl Default for ObserveConfig {
    fn default() -> Self {
        ObserveConfig {
            noise_sigma: 0.05,
            evidence_kernel_size: 3,
            evidence_sigma: 0.8,
            occluder_channel: true,
        }
    }
}

/// Four stacked `h x w` channels, channel-major: divider, boundary and
/// pedestrian-crossing evidence, then occluder occupancy.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationGrid {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
    pub noise_sigma: f64,
}

impl ObservationGrid {
    pub fn zeros(h: usize, w: usize) -> Self {
        ObservationGrid {
            h,
            w,
            data: vec![0.0; OBS_CHANNELS * h * w],
            noise_sigma: 0.0,
        }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# channels={OBS_CHANNELS},h={},w={},noise_sigma={}\n",
            self.h, self.w, self.noise_sigma
        );
        for row in self.data.chunks(self.w) {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| Error::InvalidArgument("missing observation header".into()))?;
        let mut h = 0;
        let mut w = 0;
        let mut noise_sigma = 0.0;
        for kv in header.split(',') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("bad header field {kv:?}")))?;
            let bad = |_| Error::InvalidArgument(format!("bad header value {v:?}"));
            match k {
                "h" => h = v.parse().map_err(bad)?,
                "w" => w = v.parse().map_err(bad)?,
                "noise_sigma" => {
                    noise_sigma = v
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad header value {v:?}")))?
                }
                _ => {}
            }
        }
        let body: Vec<&str> = lines.collect();
        let grid = RasterGrid::from_csv(&body.join("\n"))?;
        if grid.w != w || grid.h != OBS_CHANNELS * h {
            return Err(Error::ShapeMismatch("observation csv shape".into()));
        }
        Ok(ObservationGrid {
            h,
            w,
            data: grid.data,
            noise_sigma,
        })
    }
}

/// Per-class union raster of the ground truth, smoothed by `kernel`.
pub fn class_evidence(scene: &Scene, kernel: &GaussianKernel) -> Vec<RasterGrid> {
    MapClass::ALL
        .iter()
        .map(|&class| {
            let mut g = RasterGrid::for_frame(&scene.frame);
            for (p, _) in scene.gt.of_class(class) {
                for (r, c) in polyline_cells(&p.points, &scene.frame) {
                    g.set(r, c, 1.0);
                }
            }
            convolve_smooth(&g, kernel)
        })
        .collect()
}

pub fn observe(scene: &Scene, noise_seed: u64, cfg: &ObserveConfig) -> Result<ObservationGrid> {
    let kernel = GaussianKernel::new(cfg.evidence_kernel_size, cfg.evidence_sigma)?;
    let mask = scene.visibility();
    observe_with_mask(scene, &mask, noise_seed, cfg, &kernel)
}

pub fn observe_with_mask(
    scene: &Scene,
    mask: &VisibilityMask,
    noise_seed: u64,
    cfg: &ObserveConfig,
    kernel: &GaussianKernel,
) -> Result<ObservationGrid> {
    let (h, w) = (scene.frame.grid_h, scene.frame.grid_w);
    let mut obs = ObservationGrid::zeros(h, w);
    obs.noise_sigma = cfg.noise_sigma;
    let mut rng = rng_from(noise_seed);
    for (ci, ev) in class_evidence(scene, kernel).into_iter().enumerate() {
        let ch = obs.channel_mut(ci);
        for (i, v) in ev.data.into_iter().enumerate() {
            let masked = if mask.visible[i] { v } else { 0.0 };
            let noise: f64 = if cfg.noise_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                cfg.noise_sigma * z
            } else {
                0.0
            };
            ch[i] = (masked + noise).clamp(-1.0, 2.0);
        }
    }
    if cfg.occluder_channel {
        obs.channel_mut(OCCLUDER_CHANNEL)
            .copy_from_slice(&scene.occupancy.data);
    }
    Ok(obs)
}
