//! Vector-space average precision under Chamfer matching, and raster-space
//! ROC curves of aggregated class probabilities.

use crate::aggregation::ClassProbMap;
use crate::error::{Error, Result};
use crate::geometry::{chamfer_distance, polyline_cells, MapClass, MapFrame, RasterGrid, VectorMap, N_CLASSES};

pub const AP_THRESHOLDS: [f64; 3] = [0.5, 1.0, 1.5];
pub const ROC_GRID: usize = 256;
/// Distinct probability values are added to the threshold grid when the
/// pooled cell count is at most this.
pub const ROC_EXACT_LIMIT: usize = 20_000;

/// True/false positive flags of predictions of one class, pooled over
/// scenes, ordered by descending score, plus the GT count.
pub fn match_predictions(
    preds: &[VectorMap],
    gts: &[VectorMap],
    class: MapClass,
    thr: f64,
    frame: &MapFrame,
) -> Result<(Vec<(f64, bool)>, usize)> {
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} prediction scenes vs {} ground-truth scenes",
            preds.len(),
            gts.len()
        )));
    }
    let mut pooled: Vec<(f64, usize, usize)> = Vec::new();
    for (s, p) in preds.iter().enumerate() {
        for (i, el) in p.elements.iter().enumerate() {
            if el.class == class {
                pooled.push((p.score(i), s, i));
            }
        }
    }
    // Stable on ties: scene then element order.
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let gt_idx: Vec<Vec<usize>> = gts
        .iter()
        .map(|g| (0..g.len()).filter(|&j| g.elements[j].class == class).collect())
        .collect();
    let n_gt = gt_idx.iter().map(Vec::len).sum();
    let mut used: Vec<Vec<bool>> = gt_idx.iter().map(|v| vec![false; v.len()]).collect();
    let mut out = Vec::with_capacity(pooled.len());
    for (score, s, i) in pooled {
        let pred = &preds[s].elements[i].points;
        let mut best: Option<(f64, usize)> = None;
        for (k, &j) in gt_idx[s].iter().enumerate() {
            if used[s][k] {
                continue;
            }
            let d = chamfer_distance(pred, &gts[s].elements[j].points, frame);
            if d < thr && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, k));
            }
        }
        if let Some((_, k)) = best {
            used[s][k] = true;
        }
        out.push((score, best.is_some()));
    }
    Ok((out, n_gt))
}

/// Area under the precision envelope of a ranked TP/FP sequence.
pub fn ap_from_matches(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut rec = vec![0.0];
    let mut pre = vec![0.0];
    let mut ntp = 0usize;
    for (k, &hit) in tp.iter().enumerate() {
        if hit {
            ntp += 1;
        }
        rec.push(ntp as f64 / n_gt as f64);
        pre.push(ntp as f64 / (k + 1) as f64);
    }
    rec.push(1.0);
    pre.push(0.0);
    for i in (0..pre.len() - 1).rev() {
        pre[i] = pre[i].max(pre[i + 1]);
    }
    (1..rec.len()).map(|i| (rec[i] - rec[i - 1]) * pre[i]).sum()
}

/// AP of one class at one Chamfer threshold (metres); `None` when the class
/// has no ground truth in any scene.
pub fn average_precision(
    preds: &[VectorMap],
    gts: &[VectorMap],
    class: MapClass,
    thr: f64,
    frame: &MapFrame,
) -> Result<Option<f64>> {
    let (m, n_gt) = match_predictions(preds, gts, class, thr, frame)?;
    if n_gt == 0 {
        return Ok(None);
    }
    let tp: Vec<bool> = m.iter().map(|x| x.1).collect();
    Ok(Some(ap_from_matches(&tp, n_gt)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApResult {
    pub thresholds: Vec<f64>,
    /// `ap[class][threshold]`.
    pub ap: Vec<Vec<Option<f64>>>,
    pub map: f64,
}

impl ApResult {
    /// Mean AP of one class over thresholds.
    pub fn class_ap(&self, c: MapClass) -> Option<f64> {
        let v: Vec<f64> = self.ap[c.index()].iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn evaluate_ap(preds: &[VectorMap], gts: &[VectorMap], frame: &MapFrame, thresholds: &[f64]) -> Result<ApResult> {
    let mut ap = vec![Vec::new(); N_CLASSES];
    let mut acc = Vec::new();
    for c in MapClass::ALL {
        for &thr in thresholds {
            let v = average_precision(preds, gts, c, thr, frame)?;
            if let Some(x) = v {
                acc.push(x);
            }
            ap[c.index()].push(v);
        }
    }
    if acc.is_empty() {
        return Err(Error::InvalidArgument("no ground-truth elements in any class".into()));
    }
    Ok(ApResult {
        thresholds: thresholds.to_vec(),
        ap,
        map: acc.iter().sum::<f64>() / acc.len() as f64,
    })
}

/// Binary width-1 raster of the ground truth of one class.
pub fn gt_raster(gt: &VectorMap, class: MapClass, frame: &MapFrame) -> RasterGrid {
    let mut g = RasterGrid::for_frame(frame);
    for (p, _) in gt.of_class(class) {
        for (r, c) in polyline_cells(&p.points, frame) {
            g.set(r, c, 1.0);
        }
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub b: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocResult {
    /// Ascending in `b`; the last point is the `b -> 1+` limit at (0, 0).
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Pooled (probability, is-positive) pairs for ROC evaluation.
#[derive(Clone, Debug, Default)]
pub struct RocPool {
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl RocPool {
    pub fn push_grid(&mut self, d: &RasterGrid, gt: &RasterGrid) -> Result<()> {
        if !d.same_shape(gt) {
            return Err(Error::ShapeMismatch("probability and GT rasters differ".into()));
        }
        for (&v, &g) in d.data.iter().zip(&gt.data) {
            if g > 0.5 {
                self.pos.push(v);
            } else {
                self.neg.push(v);
            }
        }
        Ok(())
    }

    /// All classes of one scene, or only `class`.
    pub fn push_scene(&mut self, d: &ClassProbMap, gt: &VectorMap, frame: &MapFrame, class: Option<MapClass>) -> Result<()> {
        for c in MapClass::ALL {
            if class.is_none_or(|k| k == c) {
                self.push_grid(d.class(c), &gt_raster(gt, c, frame))?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pos.len() + self.neg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// 256 evenly spaced thresholds over [0, 1], plus every distinct value
    /// when the pool is small.
    pub fn default_thresholds(&self) -> Vec<f64> {
        let mut b: Vec<f64> = (0..ROC_GRID).map(|i| i as f64 / (ROC_GRID - 1) as f64).collect();
        if self.len() <= ROC_EXACT_LIMIT {
            b.extend(self.pos.iter().chain(&self.neg).copied().filter(|v| (0.0..=1.0).contains(v)));
        }
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    pub fn curve(&self, thresholds: &[f64]) -> Result<RocResult> {
        let (np, nn) = (self.pos.len(), self.neg.len());
        if np == 0 || nn == 0 {
            return Err(Error::DegenerateRoc {
                positives: np,
                negatives: nn,
            });
        }
        if thresholds.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::InvalidArgument("ROC thresholds must lie in [0, 1]".into()));
        }
        let mut pos = self.pos.clone();
        let mut neg = self.neg.clone();
        pos.sort_by(f64::total_cmp);
        neg.sort_by(f64::total_cmp);
        let at_least = |v: &[f64], b: f64| v.len() - v.partition_point(|&x| x < b);
        let mut bs = thresholds.to_vec();
        bs.sort_by(f64::total_cmp);
        bs.dedup();
        let mut points: Vec<RocPoint> = bs
            .iter()
            .map(|&b| RocPoint {
                b,
                tpr: at_least(&pos, b) as f64 / np as f64,
                fpr: at_least(&neg, b) as f64 / nn as f64,
            })
            .collect();
        points.push(RocPoint {
            b: f64::INFINITY,
            tpr: 0.0,
            fpr: 0.0,
        });
        let auc = auc_trapezoid(&points);
        Ok(RocResult {
            points,
            auc,
            positives: np,
            negatives: nn,
        })
    }
}

/// Trapezoid area under (FPR, TPR) with (0,0) and (1,1) appended.
pub fn auc_trapezoid(points: &[RocPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * 0.5 * (w[1].1 + w[0].1)).sum()
}

/// Micro-pooled ROC over scenes and (optionally) classes.
pub fn roc_curve(
    scenes: &[(&ClassProbMap, &VectorMap)],
    frame: &MapFrame,
    class: Option<MapClass>,
    thresholds: Option<&[f64]>,
) -> Result<RocResult> {
    let mut pool = RocPool::default();
    for (d, gt) in scenes {
        pool.push_scene(d, gt, frame, class)?;
    }
    let b = match thresholds {
        Some(b) => b.to_vec(),
        None => pool.default_thresholds(),
    };
    pool.curve(&b)
}
