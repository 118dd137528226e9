//! Map frame, polylines, rasters and the small set of geometric kernels
//! (resampling, Chamfer distance, Bresenham rasterization, Gaussian smoothing)
//! shared by the rest of the crate.
//!
//! Points are stored in normalized map coordinates `[u, v]`, where `u` runs
//! along the longitudinal `x` axis and `v` along the lateral `y` axis, both in
//! `[0, 1]` on the frame extent. Raster row 0 is the max-`x` edge of the frame.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

pub const N_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapClass {
    Divider,
    Boundary,
    PedCrossing,
}

impl MapClass {
    pub const ALL: [MapClass; N_CLASSES] =
        [MapClass::Divider, MapClass::Boundary, MapClass::PedCrossing];

    pub fn index(self) -> usize {
        match self {
            MapClass::Divider => 0,
            MapClass::Boundary => 1,
            MapClass::PedCrossing => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MapClass::Divider => "divider",
            MapClass::Boundary => "boundary",
            MapClass::PedCrossing => "ped_crossing",
        }
    }
}

/// Metric extent of the ego-centred map and its raster discretization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapFrame {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl Default for MapFrame {
    fn default() -> Self {
        MapFrame {
            x_min: -30.0,
            x_max: 30.0,
            y_min: -15.0,
            y_max: 15.0,
            grid_h: 100,
            grid_w: 50,
        }
    }
}

impl MapFrame {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_max > self.x_min && self.y_max > self.y_min) {
            return Err(Error::Config("frame extent must be non-empty".into()));
        }
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::Config("frame grid must be non-empty".into()));
        }
        Ok(())
    }

    pub fn span_x(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn span_y(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Cell edge length along x (rows).
    pub fn cell_size_x(&self) -> f64 {
        self.span_x() / self.grid_h as f64
    }

    /// Cell edge length along y (columns).
    pub fn cell_size_y(&self) -> f64 {
        self.span_y() / self.grid_w as f64
    }

    pub fn normalize(&self, x: f64, y: f64) -> Point {
        [(x - self.x_min) / self.span_x(), (y - self.y_min) / self.span_y()]
    }

    pub fn denormalize(&self, p: Point) -> [f64; 2] {
        [
            self.x_min + p[0] * self.span_x(),
            self.y_min + p[1] * self.span_y(),
        ]
    }

    /// Continuous raster coordinates `(row, col)` of a normalized point; cell
    /// `(i, j)` covers `[i, i+1) x [j, j+1)`.
    pub fn grid_pos(&self, p: Point) -> (f64, f64) {
        (
            (1.0 - p[0]) * self.grid_h as f64,
            p[1] * self.grid_w as f64,
        )
    }

    /// Cell containing `p`, clamping points outside the extent to the border.
    pub fn cell_of(&self, p: Point) -> (usize, usize) {
        let (r, c) = self.grid_pos(p);
        let clamp = |v: f64, n: usize| -> usize {
            if v.is_nan() || v < 0.0 {
                0
            } else {
                (v.floor() as usize).min(n - 1)
            }
        };
        (clamp(r, self.grid_h), clamp(c, self.grid_w))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point {
        [
            1.0 - (row as f64 + 0.5) / self.grid_h as f64,
            (col as f64 + 0.5) / self.grid_w as f64,
        ]
    }

    /// Cell holding the ego origin `(0, 0)`.
    pub fn ego_cell(&self) -> (usize, usize) {
        self.cell_of(self.normalize(0.0, 0.0))
    }

    pub fn n_cells(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pub class: MapClass,
    pub points: Vec<Point>,
}

impl Polyline {
    pub fn new(class: MapClass, points: Vec<Point>) -> Self {
        Polyline { class, points }
    }

    /// Resample a raw chain to `n_p` points evenly spaced by arc length.
    pub fn resampled(class: MapClass, raw: &[Point], n_p: usize) -> Result<Self> {
        Ok(Polyline {
            class,
            points: resample_polyline(raw, n_p)?,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p[0].is_finite() && p[1].is_finite())
    }

    pub fn in_unit_square(&self) -> bool {
        self.points
            .iter()
            .all(|p| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]))
    }
}

/// A set of classed polylines; ground truth carries no scores, predictions do.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct VectorMap {
    pub elements: Vec<Polyline>,
    pub scores: Option<Vec<f64>>,
}

impl VectorMap {
    pub fn ground_truth(elements: Vec<Polyline>) -> Self {
        VectorMap {
            elements,
            scores: None,
        }
    }

    pub fn predicted(elements: Vec<Polyline>, scores: Vec<f64>) -> Result<Self> {
        if elements.len() != scores.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} elements but {} scores",
                elements.len(),
                scores.len()
            )));
        }
        Ok(VectorMap {
            elements,
            scores: Some(scores),
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn score(&self, i: usize) -> f64 {
        self.scores.as_ref().map_or(1.0, |s| s[i])
    }

    /// Elements of one class paired with their score (1.0 for ground truth).
    pub fn of_class(&self, class: MapClass) -> impl Iterator<Item = (&Polyline, f64)> + '_ {
        self.elements
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.class == class)
            .map(|(i, p)| (p, self.score(i)))
    }

    pub fn count_class(&self, class: MapClass) -> usize {
        self.elements.iter().filter(|p| p.class == class).count()
    }

    /// Keep only elements scoring strictly above `threshold`.
    pub fn filter_by_score(&self, threshold: f64) -> VectorMap {
        let Some(scores) = &self.scores else {
            return self.clone();
        };
        let (elements, scores) = self
            .elements
            .iter()
            .zip(scores)
            .filter(|(_, &s)| s > threshold)
            .map(|(p, &s)| (p.clone(), s))
            .unzip();
        VectorMap {
            elements,
            scores: Some(scores),
        }
    }

    pub fn to_json(&self, frame: &MapFrame) -> Result<String> {
        Ok(serde_json::to_string_pretty(&VectorMapDoc::from_map(self, frame))?)
    }

    pub fn from_json(text: &str) -> Result<(VectorMap, MapFrame)> {
        let doc: VectorMapDoc = serde_json::from_str(text)?;
        doc.into_map()
    }

    pub fn write_json(&self, frame: &MapFrame, path: &Path) -> Result<()> {
        let text = self.to_json(frame)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<(VectorMap, MapFrame)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Parse {
            path: path.into(),
            msg: e.to_string(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ClassScores {
    divider: Vec<f64>,
    boundary: Vec<f64>,
    ped_crossing: Vec<f64>,
}

/// On-disk layout of a vector map: per-class arrays of `[u, v]` pairs.
#[derive(Serialize, Deserialize)]
pub(crate) struct VectorMapDoc {
    frame: MapFrame,
    divider: Vec<Vec<Point>>,
    boundary: Vec<Vec<Point>>,
    ped_crossing: Vec<Vec<Point>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<ClassScores>,
}

impl VectorMapDoc {
    pub(crate) fn from_map(map: &VectorMap, frame: &MapFrame) -> Self {
        let lines = |c: MapClass| -> Vec<Vec<Point>> {
            map.of_class(c).map(|(p, _)| p.points.clone()).collect()
        };
        let scores = |c: MapClass| -> Vec<f64> { map.of_class(c).map(|(_, s)| s).collect() };
        VectorMapDoc {
            frame: *frame,
            divider: lines(MapClass::Divider),
            boundary: lines(MapClass::Boundary),
            ped_crossing: lines(MapClass::PedCrossing),
            scores: map.scores.as_ref().map(|_| ClassScores {
                divider: scores(MapClass::Divider),
                boundary: scores(MapClass::Boundary),
                ped_crossing: scores(MapClass::PedCrossing),
            }),
        }
    }

    pub(crate) fn into_map(self) -> Result<(VectorMap, MapFrame)> {
        let groups = [
            (MapClass::Divider, self.divider),
            (MapClass::Boundary, self.boundary),
            (MapClass::PedCrossing, self.ped_crossing),
        ];
        let mut elements = Vec::new();
        for (class, lines) in groups {
            elements.extend(lines.into_iter().map(|pts| Polyline::new(class, pts)));
        }
        let scores = match self.scores {
            None => None,
            Some(s) => {
                let flat: Vec<f64> = [s.divider, s.boundary, s.ped_crossing].concat();
                if flat.len() != elements.len() {
                    return Err(Error::ShapeMismatch(
                        "score arrays do not align with polylines".into(),
                    ));
                }
                Some(flat)
            }
        };
        Ok((VectorMap { elements, scores }, self.frame))
    }
}

/// Dense `h x w` grid of reals, row-major; row 0 is the max-x frame edge.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterGrid {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl RasterGrid {
    pub fn zeros(h: usize, w: usize) -> Self {
        RasterGrid {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn for_frame(frame: &MapFrame) -> Self {
        Self::zeros(frame.grid_h, frame.grid_w)
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {h}x{w} grid",
                data.len()
            )));
        }
        Ok(RasterGrid { h, w, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.w + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.w + c] = v;
    }

    pub fn same_shape(&self, other: &RasterGrid) -> bool {
        self.h == other.h && self.w == other.w
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RasterGrid {
        RasterGrid {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Add `weight` to every listed cell.
    pub fn add_cells(&mut self, cells: &[(usize, usize)], weight: f64) {
        for &(r, c) in cells {
            self.data[r * self.w + c] += weight;
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 8);
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
        let mut data = Vec::new();
        let mut w = None;
        let mut h = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| Error::InvalidArgument(format!("bad csv value: {e}")))?;
            match w {
                None => w = Some(row.len()),
                Some(n) if n != row.len() => {
                    return Err(Error::ShapeMismatch("ragged csv rows".into()))
                }
                _ => {}
            }
            data.extend(row);
            h += 1;
        }
        Self::from_vec(h, w.unwrap_or(0), data)
    }

    /// Binary PGM (P5, maxval 255); values are scaled by `255 / scale_max`
    /// and clamped.
    pub fn to_pgm(&self, scale_max: f64) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.w, self.h).into_bytes();
        let scale = if scale_max > 0.0 { 255.0 / scale_max } else { 0.0 };
        out.extend(
            self.data
                .iter()
                .map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8),
        );
        out
    }

    pub fn write_pgm(&self, path: &Path, scale_max: f64) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_pgm(scale_max))
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Normalized, truncated `g x g` Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    pub size: usize,
    pub sigma: f64,
    pub weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(size: usize, sigma: f64) -> Result<Self> {
        if size.is_multiple_of(2) || size == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd, got {size}"
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument("kernel sigma must be positive".into()));
        }
        let half = (size / 2) as i64;
        let mut weights = Vec::with_capacity(size * size);
        for i in -half..=half {
            for j in -half..=half {
                weights.push((-((i * i + j * j) as f64) / (2.0 * sigma * sigma)).exp());
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(GaussianKernel {
            size,
            sigma,
            weights,
        })
    }

    /// Smoothing kernel used when aggregating samples (g = 5, sigma = 1 cell).
    pub fn aggregation_default() -> Self {
        Self::new(5, 1.0).expect("valid kernel")
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.size + j]
    }

    pub fn center_weight(&self) -> f64 {
        let c = self.size / 2;
        self.at(c, c)
    }
}

/// Resample a chain of at least two distinct points to `n_p` points evenly
/// spaced in arc length. Endpoints are copied exactly.
pub fn resample_polyline(raw: &[Point], n_p: usize) -> Result<Vec<Point>> {
    if n_p < 2 {
        return Err(Error::InvalidArgument(format!("n_p must be >= 2, got {n_p}")));
    }
    if raw.len() < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    let mut cum = Vec::with_capacity(raw.len());
    cum.push(0.0);
    for w in raw.windows(2) {
        let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return Err(Error::ZeroLengthPolyline);
    }

    let mut out = Vec::with_capacity(n_p);
    out.push(raw[0]);
    let mut seg = 0;
    for k in 1..n_p - 1 {
        let s = total * k as f64 / (n_p - 1) as f64;
        while seg + 1 < cum.len() - 1 && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let f = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        let (a, b) = (raw[seg], raw[seg + 1]);
        out.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
    }
    out.push(raw[raw.len() - 1]);
    Ok(out)
}

/// Symmetric point-set Chamfer distance in meters: the mean nearest-point
/// distance from `a` to `b` and from `b` to `a`, averaged.
pub fn chamfer_distance(a: &[Point], b: &[Point], frame: &MapFrame) -> f64 {
    debug_assert!(!a.is_empty() && !b.is_empty());
    let a: Vec<[f64; 2]> = a.iter().map(|&p| frame.denormalize(p)).collect();
    let b: Vec<[f64; 2]> = b.iter().map(|&p| frame.denormalize(p)).collect();
    let directed = |from: &[[f64; 2]], to: &[[f64; 2]]| -> f64 {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .sum::<f64>()
            / from.len() as f64
    };
    0.5 * (directed(&a, &b) + directed(&b, &a))
}

/// Visit every cell of the 8-connected Bresenham line between two cells.
pub fn bresenham(from: (i64, i64), to: (i64, i64), mut visit: impl FnMut(i64, i64)) {
    let (mut r, mut c) = from;
    let dc = (to.1 - c).abs();
    let dr = -(to.0 - r).abs();
    let sc = if c < to.1 { 1 } else { -1 };
    let sr = if r < to.0 { 1 } else { -1 };
    let mut err = dc + dr;
    loop {
        visit(r, c);
        if r == to.0 && c == to.1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dr {
            err += dr;
            c += sc;
        }
        if e2 <= dc {
            err += dc;
            r += sr;
        }
    }
}

/// Sorted, deduplicated cells on the one-cell-wide trace of a polyline.
pub fn polyline_cells(points: &[Point], frame: &MapFrame) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    let to_i = |p: Point| {
        let (r, c) = frame.cell_of(p);
        (r as i64, c as i64)
    };
    match points {
        [] => {}
        [only] => {
            let (r, c) = to_i(*only);
            cells.push((r as usize, c as usize));
        }
        _ => {
            for w in points.windows(2) {
                bresenham(to_i(w[0]), to_i(w[1]), |r, c| {
                    cells.push((r as usize, c as usize))
                });
            }
        }
    }
    cells.sort_unstable();
    cells.dedup();
    cells
}

/// Binary raster of a polyline, one cell wide.
pub fn rasterize_polyline(points: &[Point], frame: &MapFrame) -> RasterGrid {
    let mut grid = RasterGrid::for_frame(frame);
    for (r, c) in polyline_cells(points, frame) {
        grid.set(r, c, 1.0);
    }
    grid
}

/// 2-D convolution with zero padding; output has the input's shape.
pub fn convolve_smooth(r: &RasterGrid, k: &GaussianKernel) -> RasterGrid {
    let mut out = RasterGrid::zeros(r.h, r.w);
    let half = (k.size / 2) as i64;
    let (h, w) = (r.h as i64, r.w as i64);
    for i in 0..h {
        for j in 0..w {
            let v = r.data[(i * w + j) as usize];
            if v == 0.0 {
                continue;
            }
            // Scatter form: each input cell stamps the kernel around itself.
            for a in -half..=half {
                let oi = i + a;
                if oi < 0 || oi >= h {
                    continue;
                }
                for b in -half..=half {
                    let oj = j + b;
                    if oj < 0 || oj >= w {
                        continue;
                    }
                    let kw = k.at((a + half) as usize, (b + half) as usize);
                    out.data[(oi * w + oj) as usize] += kw * v;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame() -> MapFrame {
        MapFrame::default()
    }

    #[test]
    fn frame_dimensions() {
        let f = frame();
        assert!((f.cell_size_x() - 0.6).abs() < 1e-12);
        assert!((f.cell_size_y() - 0.6).abs() < 1e-12);
        assert!((f.grid_h as f64 * f.cell_size_x() - 60.0).abs() < 1e-12);
        assert_eq!(f.ego_cell(), (50, 25));
    }

    #[test]
    fn resample_straight_segment() {
        let out = resample_polyline(&[[0.0, 0.0], [0.0, 1.0]], 3).unwrap();
        assert_eq!(out, vec![[0.0, 0.0], [0.0, 0.5], [0.0, 1.0]]);
    }

    #[test]
    fn resample_uniform_is_identity() {
        let raw: Vec<Point> = (0..6).map(|i| [0.1 * i as f64, 0.3]).collect();
        let out = resample_polyline(&raw, raw.len()).unwrap();
        for (a, b) in raw.iter().zip(&out) {
            assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn resample_right_angle_matches_arc_walk() {
        let raw = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]];
        let out = resample_polyline(&raw, 5).unwrap();
        // Independent walk: arc length s maps to (min(s,1), max(s-1,0)).
        for (k, p) in out.iter().enumerate() {
            let s = 0.5 * k as f64;
            let expect = [s.min(1.0), (s - 1.0).max(0.0)];
            assert!((p[0] - expect[0]).abs() < 1e-12 && (p[1] - expect[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_rejects_degenerate() {
        let err = resample_polyline(&[[0.2, 0.2], [0.2, 0.2]], 4).unwrap_err();
        assert!(matches!(err, Error::ZeroLengthPolyline));
        assert_eq!(err.to_string(), "zero-length polyline");
    }

    #[test]
    fn chamfer_parallel_lines() {
        let f = frame();
        let a = [f.normalize(0.0, 0.0), f.normalize(10.0, 0.0)];
        let b = [f.normalize(0.0, 1.2), f.normalize(10.0, 1.2)];
        // Brute force over all point pairs.
        let mut brute = 0.0;
        for (from, to) in [(&a, &b), (&b, &a)] {
            let mut s = 0.0;
            for p in from.iter() {
                let mut best = f64::INFINITY;
                for q in to.iter() {
                    let (pp, qq) = (f.denormalize(*p), f.denormalize(*q));
                    best = best.min(((pp[0] - qq[0]).powi(2) + (pp[1] - qq[1]).powi(2)).sqrt());
                }
                s += best;
            }
            brute += s / from.len() as f64;
        }
        brute /= 2.0;
        let d = chamfer_distance(&a, &b, &f);
        assert!((d - 1.2).abs() < 1e-9);
        assert!((d - brute).abs() < 1e-12);
    }

    #[test]
    fn rasterize_full_row() {
        let f = frame();
        let g = rasterize_polyline(&[[0.5, 0.0], [0.5, 1.0]], &f);
        assert_eq!(g.sum(), f.grid_w as f64);
        for c in 0..f.grid_w {
            assert_eq!(g.get(50, c), 1.0);
        }
    }

    #[test]
    fn rasterize_single_point() {
        let f = frame();
        let g = rasterize_polyline(&[[0.3, 0.3], [0.3, 0.3]], &f);
        assert_eq!(g.sum(), 1.0);
    }

    #[test]
    fn rasterize_diagonal_ten_cells() {
        let f = frame();
        let a = f.cell_center(10, 10);
        let b = f.cell_center(19, 19);
        let g = rasterize_polyline(&[a, b], &f);
        assert_eq!(g.sum(), 10.0);
        for i in 10..20 {
            assert_eq!(g.get(i, i), 1.0);
        }
    }

    #[test]
    fn rasterize_clamps_outside_points() {
        let f = frame();
        let g = rasterize_polyline(&[[-0.5, 0.5], [1.5, 0.5]], &f);
        assert_eq!(g.sum(), f.grid_h as f64);
    }

    #[test]
    fn kernel_properties() {
        let k = GaussianKernel::new(5, 1.0).unwrap();
        assert!((k.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let direct: f64 = (-2i32..=2)
            .flat_map(|i| (-2i32..=2).map(move |j| (-((i * i + j * j) as f64) / 2.0).exp()))
            .sum();
        assert!((k.center_weight() - 1.0 / direct).abs() < 1e-15);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(k.at(i, j), k.at(j, 4 - i));
                assert!(k.at(i, j) <= k.center_weight());
            }
        }
        assert!(GaussianKernel::new(4, 1.0).is_err());
    }

    #[test]
    fn convolve_zero_and_impulse() {
        let k = GaussianKernel::new(5, 1.0).unwrap();
        let z = RasterGrid::zeros(9, 9);
        assert_eq!(convolve_smooth(&z, &k), z);
        let mut imp = RasterGrid::zeros(9, 9);
        imp.set(4, 4, 1.0);
        let out = convolve_smooth(&imp, &k);
        for i in 0..5 {
            for j in 0..5 {
                assert!((out.get(2 + i, 2 + j) - k.at(i, j)).abs() < 1e-15);
            }
        }
        assert!((out.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vector_map_json_round_trip() {
        let f = frame();
        let m = VectorMap::predicted(
            vec![
                Polyline::new(MapClass::Boundary, vec![[0.1, 0.2], [0.3, 0.4]]),
                Polyline::new(MapClass::Divider, vec![[0.5, 0.5], [0.6, 0.7]]),
            ],
            vec![0.9, 0.3],
        )
        .unwrap();
        let (back, bf) = VectorMap::from_json(&m.to_json(&f).unwrap()).unwrap();
        assert_eq!(bf, f);
        // Grouped by class on disk: divider first.
        assert_eq!(back.elements[0], m.elements[1]);
        assert_eq!(back.scores.unwrap(), vec![0.3, 0.9]);
    }

    #[test]
    fn pgm_header_and_orientation() {
        let mut g = RasterGrid::zeros(2, 3);
        g.set(0, 2, 1.0);
        let bytes = g.to_pgm(1.0);
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes[header.len() + 2], 255);
    }

    proptest! {
        #[test]
        fn normalize_round_trip(x in -30.0f64..30.0, y in -15.0f64..15.0) {
            let f = frame();
            let back = f.denormalize(f.normalize(x, y));
            prop_assert!((back[0] - x).abs() < 1e-12 && (back[1] - y).abs() < 1e-12);
        }

        #[test]
        fn chamfer_metric_axioms(
            a in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..8),
            b in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..8),
        ) {
            let f = frame();
            let a: Vec<Point> = a.into_iter().map(|(u, v)| [u, v]).collect();
            let b: Vec<Point> = b.into_iter().map(|(u, v)| [u, v]).collect();
            prop_assert_eq!(chamfer_distance(&a, &a, &f), 0.0);
            let ab = chamfer_distance(&a, &b, &f);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - chamfer_distance(&b, &a, &f)).abs() < 1e-12);
        }

        #[test]
        fn rasterize_sub_chain_is_subset(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..8),
            cut in 2usize..8,
        ) {
            let f = frame();
            let pts: Vec<Point> = pts.into_iter().map(|(u, v)| [u, v]).collect();
            let cut = cut.min(pts.len());
            let full = rasterize_polyline(&pts, &f);
            let sub = rasterize_polyline(&pts[..cut], &f);
            for (s, g) in sub.data.iter().zip(&full.data) {
                prop_assert!(*s <= *g);
            }
        }

        #[test]
        fn convolve_preserves_interior_mass(
            cells in prop::collection::vec((2usize..18, 2usize..18, 0.0f64..3.0), 1..10),
        ) {
            let k = GaussianKernel::new(5, 1.0).unwrap();
            let mut g = RasterGrid::zeros(20, 20);
            for (r, c, v) in cells {
                g.set(r, c, g.get(r, c) + v);
            }
            let out = convolve_smooth(&g, &k);
            prop_assert!((out.sum() - g.sum()).abs() < 1e-9);
        }
    }
}
