//! Raster-space aggregation of several sampled maps: score-weighted
//! rasters, smoothed and clipped class probabilities, their mean over
//! samples, thresholding, and the per-cell variance sum used as the
//! uncertainty map.

use crate::error::{Error, Result};
use crate::geometry::{convolve_smooth, polyline_cells, GaussianKernel, MapClass, MapFrame, RasterGrid, VectorMap, N_CLASSES};

/// `sum_j score_j * raster(polyline_j)` over the polylines of one class.
/// Each cell counts once per polyline.
pub fn weighted_raster(sample: &VectorMap, class: MapClass, frame: &MapFrame) -> RasterGrid {
    let mut r = RasterGrid::for_frame(frame);
    for (p, score) in sample.of_class(class) {
        r.add_cells(&polyline_cells(&p.points, frame), score);
    }
    r
}

/// `min(1, G * R)`.
pub fn class_probability(r: &RasterGrid, kernel: &GaussianKernel) -> RasterGrid {
    convolve_smooth(r, kernel).map(|v| v.min(1.0))
}

/// Per-class probability grids of one sample or of an aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProbMap {
    pub classes: Vec<RasterGrid>,
    pub n_samples: usize,
}

impl ClassProbMap {
    pub fn from_sample(sample: &VectorMap, frame: &MapFrame, kernel: &GaussianKernel) -> Self {
        ClassProbMap {
            classes: MapClass::ALL
                .iter()
                .map(|&c| class_probability(&weighted_raster(sample, c, frame), kernel))
                .collect(),
            n_samples: 1,
        }
    }

    pub fn class(&self, c: MapClass) -> &RasterGrid {
        &self.classes[c.index()]
    }
}

/// Mean of per-sample class probabilities.
pub fn aggregate(samples: &[ClassProbMap]) -> Result<ClassProbMap> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("aggregate needs at least one sample".into()))?;
    check_shapes(samples)?;
    let n = samples.len() as f64;
    let classes = (0..N_CLASSES)
        .map(|c| {
            let mut acc = RasterGrid::zeros(first.classes[c].h, first.classes[c].w);
            for s in samples {
                for (a, v) in acc.data.iter_mut().zip(&s.classes[c].data) {
                    *a += v;
                }
            }
            acc.map(|v| v / n)
        })
        .collect();
    Ok(ClassProbMap {
        classes,
        n_samples: samples.len(),
    })
}

fn check_shapes(samples: &[ClassProbMap]) -> Result<()> {
    let first = &samples[0];
    for s in samples {
        if s.classes.len() != N_CLASSES
            || s.classes.iter().zip(&first.classes).any(|(a, b)| !a.same_shape(b))
        {
            return Err(Error::ShapeMismatch("class probability maps differ in shape".into()));
        }
    }
    Ok(())
}

/// Binary map per class: 1 where `D_c >= b`.
pub fn refine(d: &ClassProbMap, b: f64) -> Result<Vec<RasterGrid>> {
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::InvalidArgument(format!("threshold {b} outside [0, 1]")));
    }
    Ok(d.classes
        .iter()
        .map(|g| g.map(|v| if v >= b { 1.0 } else { 0.0 }))
        .collect())
}

/// Sum over classes of the population variance across samples; the zero
/// map for a single sample.
pub fn uncertainty(samples: &[ClassProbMap]) -> Result<RasterGrid> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("uncertainty needs at least one sample".into()))?;
    check_shapes(samples)?;
    let (h, w) = (first.classes[0].h, first.classes[0].w);
    let mut u = RasterGrid::zeros(h, w);
    if samples.len() == 1 {
        return Ok(u);
    }
    // Population variance as sum_{i<j} (x_i - x_j)^2 / n^2, exactly zero
    // for identical samples.
    let n = samples.len() as f64;
    for c in 0..N_CLASSES {
        for i in 0..h * w {
            let mut acc = 0.0;
            for (a, sa) in samples.iter().enumerate() {
                let x = sa.classes[c].data[i];
                for sb in &samples[a + 1..] {
                    let d = x - sb.classes[c].data[i];
                    acc += d * d;
                }
            }
            u.data[i] += acc / (n * n);
        }
    }
    Ok(u)
}

/// Aggregate and uncertainty for one scene from its sampled maps, after
/// dropping polylines scoring at or below `score_filter`.
pub fn aggregate_samples(
    samples: &[VectorMap],
    frame: &MapFrame,
    kernel: &GaussianKernel,
    score_filter: f64,
) -> Result<(ClassProbMap, RasterGrid)> {
    let per: Vec<ClassProbMap> = samples
        .iter()
        .map(|s| ClassProbMap::from_sample(&s.filter_by_score(score_filter), frame, kernel))
        .collect();
    Ok((aggregate(&per)?, uncertainty(&per)?))
}
