//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use lanediff::diffusion::{polyline_to_signal, DenoiseOutput, Denoiser, NoiseSchedule, NO_OBJECT, N_LOGITS};
use lanediff::geometry::{chamfer_distance, polyline_cells, GaussianKernel, MapClass, MapFrame, RasterGrid, VectorMap, N_CLASSES};
use lanediff::Result;

/// Returns the GT signal for the first `|gt|` queries with a confident
/// class, and keeps the remaining queries as they are with a confident
/// no-object label.
pub struct GtDenoiser {
    pub gt: Vec<f64>,
    pub classes: Vec<usize>,
}

impl GtDenoiser {
    pub fn new(gt: &VectorMap) -> Self {
        GtDenoiser {
            gt: gt.elements.iter().flat_map(|p| polyline_to_signal(&p.points)).collect(),
            classes: gt.elements.iter().map(|p| p.class.index()).collect(),
        }
    }
}

impl Denoiser for GtDenoiser {
    type Condition = ();

    fn n_points(&self) -> usize {
        10
    }

    fn denoise(&self, x_t: &[f64], l: usize, _t: usize, _c: &()) -> Result<DenoiseOutput> {
        let mut x0 = x_t.to_vec();
        x0[..self.gt.len()].copy_from_slice(&self.gt);
        let mut logits = vec![0.0; l * N_LOGITS];
        for i in 0..l {
            let c = self.classes.get(i).copied().unwrap_or(NO_OBJECT);
            logits[i * N_LOGITS + c] = 40.0;
        }
        Ok(DenoiseOutput { x0, logits })
    }
}

/// Exact posterior mean of x0 given x_t when each query is one of the
/// scene's GT elements (prior mass 1/l each) or a zero-mean Gaussian
/// padding draw with per-coordinate variance `pad_var`. It knows the GT, so
/// its mAP through the sampler bounds what any learned denoiser can reach
/// with the same sampler settings.
pub struct BayesDenoiser {
    pub schedule: NoiseSchedule,
    pub pad_var: f64,
}

impl Denoiser for BayesDenoiser {
    type Condition = VectorMap;

    fn n_points(&self) -> usize {
        10
    }

    fn denoise(&self, x: &[f64], l: usize, t: usize, gt: &VectorMap) -> Result<DenoiseOutput> {
        let a = self.schedule.alpha_bar(t);
        let q = 2 * self.n_points();
        let mus: Vec<Vec<f64>> = gt.elements.iter().map(|e| polyline_to_signal(&e.points).collect()).collect();
        let n_gt = mus.len() as f64;
        let pv = a * self.pad_var + 1.0 - a;
        let mut x0 = vec![0.0; l * q];
        let mut logits = vec![0.0; l * N_LOGITS];
        for i in 0..l {
            let xi = &x[i * q..(i + 1) * q];
            let mut lw: Vec<f64> = mus
                .iter()
                .map(|m| {
                    let d2: f64 = xi.iter().zip(m).map(|(xv, mv)| (xv - a.sqrt() * mv).powi(2)).sum();
                    -d2 / (2.0 * (1.0 - a)) - 0.5 * q as f64 * (1.0 - a).ln() - (l as f64).ln()
                })
                .collect();
            let d2: f64 = xi.iter().map(|v| v * v).sum();
            lw.push(-d2 / (2.0 * pv) - 0.5 * q as f64 * pv.ln() + ((l as f64 - n_gt).max(1e-9) / l as f64).ln());
            let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = lw.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = w.iter().sum();
            let shrink = a.sqrt() * self.pad_var / pv;
            let mut probs = [1e-9; N_LOGITS];
            for (j, mu) in mus.iter().enumerate() {
                for k in 0..q {
                    x0[i * q + k] += w[j] / z * mu[k];
                }
                probs[gt.elements[j].class.index()] += w[j] / z;
            }
            let wp = w[mus.len()] / z;
            for k in 0..q {
                x0[i * q + k] += wp * shrink * xi[k];
            }
            probs[NO_OBJECT] += wp;
            for c in 0..N_LOGITS {
                logits[i * N_LOGITS + c] = probs[c].ln();
            }
        }
        Ok(DenoiseOutput { x0, logits })
    }
}

/// Exact rational `num / den` with `den > 0`.
#[derive(Clone, Copy, Debug)]
struct Frac(i64, i64);

impl Frac {
    fn new(num: i64, den: i64) -> Self {
        if den < 0 {
            Frac(-num, -den)
        } else {
            Frac(num, den)
        }
    }

    fn lt(self, o: Frac) -> bool {
        (self.0 as i128) * (o.1 as i128) < (o.0 as i128) * (self.1 as i128)
    }

    fn max(self, o: Frac) -> Frac {
        if self.lt(o) {
            o
        } else {
            self
        }
    }

    fn min(self, o: Frac) -> Frac {
        if o.lt(self) {
            o
        } else {
            self
        }
    }
}

/// Whether the segment between the centres of cells `a` and `b` passes
/// through the open interior of cell `cell`. Coordinates are doubled so
/// that centres and cell edges are integers.
pub fn segment_hits_cell_interior(a: (usize, usize), b: (usize, usize), cell: (usize, usize)) -> bool {
    let p0 = [2 * a.0 as i64 + 1, 2 * a.1 as i64 + 1];
    let p1 = [2 * b.0 as i64 + 1, 2 * b.1 as i64 + 1];
    let lo = [2 * cell.0 as i64, 2 * cell.1 as i64];
    let mut enter = Frac(0, 1);
    let mut exit = Frac(1, 1);
    for ax in 0..2 {
        let d = p1[ax] - p0[ax];
        let (l, h) = (lo[ax], lo[ax] + 2);
        if d == 0 {
            if !(l < p0[ax] && p0[ax] < h) {
                return false;
            }
            continue;
        }
        let t1 = Frac::new(l - p0[ax], d);
        let t2 = Frac::new(h - p0[ax], d);
        let (near, far) = if t1.lt(t2) { (t1, t2) } else { (t2, t1) };
        enter = enter.max(near);
        exit = exit.min(far);
    }
    enter.lt(exit)
}

/// Visibility by testing every occupied cell against every ray.
pub fn brute_force_visibility(occ: &RasterGrid, ego: (usize, usize)) -> Vec<bool> {
    let occupied: Vec<(usize, usize)> = (0..occ.h)
        .flat_map(|r| (0..occ.w).map(move |c| (r, c)))
        .filter(|&(r, c)| occ.get(r, c) > 0.5)
        .collect();
    let mut vis = vec![true; occ.h * occ.w];
    for r in 0..occ.h {
        for c in 0..occ.w {
            vis[r * occ.w + c] = !occupied
                .iter()
                .any(|&o| o != ego && o != (r, c) && segment_hits_cell_interior(ego, (r, c), o));
        }
    }
    vis
}

/// Score-weighted raster, gather-form Gaussian smoothing with zero padding,
/// clipping, the mean over samples and the population variance summed over
/// classes, written out cell by cell.
pub fn naive_aggregate(
    samples: &[VectorMap],
    frame: &MapFrame,
    kernel: &GaussianKernel,
    score_filter: f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (h, w) = (frame.grid_h, frame.grid_w);
    let half = (kernel.size / 2) as i64;
    let mut per_sample = Vec::new();
    for s in samples {
        let mut classes = Vec::new();
        for c in MapClass::ALL {
            let mut raw = vec![0.0; h * w];
            for (i, el) in s.elements.iter().enumerate() {
                if el.class != c || s.score(i) <= score_filter {
                    continue;
                }
                for (r, col) in polyline_cells(&el.points, frame) {
                    raw[r * w + col] += s.score(i);
                }
            }
            let mut d = vec![0.0; h * w];
            for r in 0..h as i64 {
                for col in 0..w as i64 {
                    let mut acc = 0.0;
                    for a in -half..=half {
                        for b in -half..=half {
                            let (sr, sc) = (r - a, col - b);
                            if sr < 0 || sc < 0 || sr >= h as i64 || sc >= w as i64 {
                                continue;
                            }
                            acc += kernel.at((a + half) as usize, (b + half) as usize) * raw[(sr * w as i64 + sc) as usize];
                        }
                    }
                    d[(r * w as i64 + col) as usize] = acc.min(1.0);
                }
            }
            classes.push(d);
        }
        per_sample.push(classes);
    }
    let n = samples.len() as f64;
    let mut mean = vec![vec![0.0; h * w]; N_CLASSES];
    let mut u = vec![0.0; h * w];
    for c in 0..N_CLASSES {
        for i in 0..h * w {
            let m = per_sample.iter().map(|s| s[c][i]).sum::<f64>() / n;
            mean[c][i] = m;
            u[i] += per_sample.iter().map(|s| (s[c][i] - m).powi(2)).sum::<f64>() / n;
        }
    }
    (mean, u)
}

/// AP of one class by exhaustive search: predictions in descending score
/// (stable by scene, then index) each take the nearest unused same-scene GT
/// under the threshold; the precision envelope is integrated over every
/// recall step.
pub fn brute_force_ap(preds: &[VectorMap], gts: &[VectorMap], class: MapClass, thr: f64, frame: &MapFrame) -> Option<f64> {
    let n_gt: usize = gts.iter().map(|g| g.count_class(class)).sum();
    if n_gt == 0 {
        return None;
    }
    let mut order: Vec<(f64, usize, usize)> = Vec::new();
    for (s, p) in preds.iter().enumerate() {
        for i in 0..p.len() {
            if p.elements[i].class == class {
                order.push((p.score(i), s, i));
            }
        }
    }
    // Insertion sort, to stay independent of the library's comparator.
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && order[j].0 > order[j - 1].0 {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    let mut taken = vec![Vec::new(); gts.len()];
    let mut hits = Vec::new();
    for &(_, s, i) in &order {
        let mut best = None;
        let mut best_d = thr;
        for (j, g) in gts[s].elements.iter().enumerate() {
            if g.class != class || taken[s].contains(&j) {
                continue;
            }
            let d = chamfer_distance(&preds[s].elements[i].points, &g.points, frame);
            if d < best_d {
                best_d = d;
                best = Some(j);
            }
        }
        if let Some(j) = best {
            taken[s].push(j);
        }
        hits.push(best.is_some());
    }
    // Precision at each rank, then the max precision at any recall >= r.
    let mut tp = 0;
    let mut pr = Vec::new();
    for (k, &h) in hits.iter().enumerate() {
        if h {
            tp += 1;
        }
        pr.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &(recall, _) in &pr {
        if recall > prev_recall {
            let envelope = pr.iter().filter(|p| p.0 >= recall).map(|p| p.1).fold(0.0, f64::max);
            ap += (recall - prev_recall) * envelope;
            prev_recall = recall;
        }
    }
    Some(ap)
}
