//! Ray-traced visibility from the ego cell over a 2-D occupancy grid, and the
//! per-scene comparison of uncertainty in visible versus hidden cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RasterGrid;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisibilityMask {
    pub h: usize,
    pub w: usize,
    pub visible: Vec<bool>,
    pub ego: (usize, usize),
}

impl VisibilityMask {
    pub fn all_visible(h: usize, w: usize, ego: (usize, usize)) -> Self {
        VisibilityMask {
            h,
            w,
            visible: vec![true; h * w],
            ego,
        }
    }

    #[inline]
    pub fn is_visible(&self, r: usize, c: usize) -> bool {
        self.visible[r * self.w + c]
    }

    pub fn count_visible(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    pub fn to_grid(&self) -> RasterGrid {
        RasterGrid {
            h: self.h,
            w: self.w,
            data: self.visible.iter().map(|&v| f64::from(u8::from(v))).collect(),
        }
    }
}

/// Walk the cells crossed by the segment joining the centres of `from` and
/// `to`, in order, including both end cells. Where the segment passes exactly
/// through a grid corner the walk steps diagonally, so cells touched only at
/// that corner are not visited. All comparisons are exact integer arithmetic.
pub fn traverse_cells(from: (usize, usize), to: (usize, usize), mut visit: impl FnMut(usize, usize) -> bool) {
    let (r0, c0) = (from.0 as i64, from.1 as i64);
    let (r1, c1) = (to.0 as i64, to.1 as i64);
    let (nr, nc) = ((r1 - r0).abs(), (c1 - c0).abs());
    let (sr, sc) = ((r1 - r0).signum(), (c1 - c0).signum());
    let (mut r, mut c) = (r0, c0);
    // Next row boundary crossed at t = (2k-1) / (2 nr); column at (2m-1) / (2 nc).
    let (mut k, mut m) = (1i64, 1i64);
    if !visit(r as usize, c as usize) {
        return;
    }
    while k <= nr || m <= nc {
        let row_next = if k > nr {
            false
        } else if m > nc {
            true
        } else {
            let lhs = (2 * k - 1) * nc;
            let rhs = (2 * m - 1) * nr;
            if lhs == rhs {
                r += sr;
                c += sc;
                k += 1;
                m += 1;
                if !visit(r as usize, c as usize) {
                    return;
                }
                continue;
            }
            lhs < rhs
        };
        if row_next {
            r += sr;
            k += 1;
        } else {
            c += sc;
            m += 1;
        }
        if !visit(r as usize, c as usize) {
            return;
        }
    }
}

/// A cell is visible iff no cell strictly between it and the ego cell on the
/// centre-to-centre segment is occupied. Occupied cells can themselves be
/// visible.
pub fn ray_trace(occupancy: &RasterGrid, ego: (usize, usize)) -> VisibilityMask {
    let (h, w) = (occupancy.h, occupancy.w);
    let mut visible = vec![true; h * w];
    for r in 0..h {
        for c in 0..w {
            if (r, c) == ego {
                continue;
            }
            let mut blocked = false;
            traverse_cells(ego, (r, c), |rr, cc| {
                if (rr, cc) == ego || (rr, cc) == (r, c) {
                    return true;
                }
                if occupancy.get(rr, cc) > 0.5 {
                    blocked = true;
                    return false;
                }
                true
            });
            visible[r * w + c] = !blocked;
        }
    }
    VisibilityMask { h, w, visible, ego }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TTestKind {
    /// Paired test on per-scene differences (hidden minus visible).
    #[default]
    Paired,
    /// Welch two-sample test on the per-scene means.
    Welch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneUncertaintyRow {
    pub index: usize,
    pub n_visible: usize,
    pub n_invisible: usize,
    pub mean_visible: Option<f64>,
    pub mean_invisible: Option<f64>,
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibilityStats {
    pub rows: Vec<SceneUncertaintyRow>,
    pub n_used: usize,
    pub n_skipped: usize,
    pub mean_visible: f64,
    pub mean_invisible: f64,
    #[serde(with = "nonfinite")]
    pub ratio: f64,
    #[serde(with = "nonfinite")]
    pub t: f64,
    pub df: f64,
    #[serde(with = "nonfinite")]
    pub p_value: f64,
    pub test: TTestKind,
}

pub struct SceneUncertainty<'a> {
    pub uncertainty: &'a RasterGrid,
    pub mask: &'a VisibilityMask,
    pub drivable: &'a RasterGrid,
}

/// Per-scene mean uncertainty over visible cells and over hidden drivable
/// cells (the evaluation universe is visible OR drivable), followed by a
/// one-sided test that hidden exceeds visible.
pub fn compare_uncertainty(scenes: &[SceneUncertainty<'_>], test: TTestKind) -> Result<VisibilityStats> {
    let mut rows = Vec::with_capacity(scenes.len());
    for (index, s) in scenes.iter().enumerate() {
        let u = s.uncertainty;
        if !u.same_shape(s.drivable) || u.h != s.mask.h || u.w != s.mask.w {
            return Err(Error::ShapeMismatch(format!("scene {index}")));
        }
        let (mut sv, mut nv, mut si, mut ni) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..u.data.len() {
            if s.mask.visible[i] {
                sv += u.data[i];
                nv += 1;
            } else if s.drivable.data[i] > 0.5 {
                si += u.data[i];
                ni += 1;
            }
        }
        let skipped = nv == 0 || ni == 0;
        rows.push(SceneUncertaintyRow {
            index,
            n_visible: nv,
            n_invisible: ni,
            mean_visible: (nv > 0).then(|| sv / nv as f64),
            mean_invisible: (ni > 0).then(|| si / ni as f64),
            skipped,
        });
    }
    let used: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| !r.skipped)
        .map(|r| (r.mean_visible.unwrap(), r.mean_invisible.unwrap()))
        .collect();
    if used.is_empty() {
        return Err(Error::NoValidScenes);
    }
    if used.len() < 2 {
        return Err(Error::InvalidArgument(
            "at least two usable scenes are required".into(),
        ));
    }
    let vis: Vec<f64> = used.iter().map(|p| p.0).collect();
    let inv: Vec<f64> = used.iter().map(|p| p.1).collect();
    let mean_visible = mean(&vis);
    let mean_invisible = mean(&inv);
    let (t, df) = match test {
        TTestKind::Paired => {
            let d: Vec<f64> = used.iter().map(|p| p.1 - p.0).collect();
            paired_t(&d)
        }
        TTestKind::Welch => welch_t(&inv, &vis),
    };
    let n_used = used.len();
    Ok(VisibilityStats {
        n_used,
        n_skipped: rows.len() - n_used,
        rows,
        mean_visible,
        mean_invisible,
        ratio: mean_invisible / mean_visible,
        t,
        df,
        p_value: students_t_sf(t, df),
        test,
    })
}

/// JSON has no infinities or NaN; those are written as strings.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn signed_inf(m: f64) -> f64 {
    if m > 0.0 {
        f64::INFINITY
    } else if m < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

/// One-sample t statistic of the differences against zero, with `n - 1`
/// degrees of freedom. Zero spread maps to a signed infinity (or 0).
pub fn paired_t(d: &[f64]) -> (f64, f64) {
    let n = d.len() as f64;
    let m = mean(d);
    let sd = sample_var(d).sqrt();
    let t = if sd > 0.0 { m / (sd / n.sqrt()) } else { signed_inf(m) };
    (t, n - 1.0)
}

/// Welch's unequal-variance t statistic for `mean(a) - mean(b)` and the
/// Welch-Satterthwaite degrees of freedom.
pub fn welch_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_var(a) / na, sample_var(b) / nb);
    let se2 = va + vb;
    let diff = mean(a) - mean(b);
    if se2 <= 0.0 {
        return (signed_inf(diff), na + nb - 2.0);
    }
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    (diff / se2.sqrt(), df)
}

/// Upper tail `P(T > t)` of Student's t with `df` degrees of freedom.
pub fn students_t_sf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return 0.0;
    }
    if t == f64::NEG_INFINITY {
        return 1.0;
    }
    let x = df / (df + t * t);
    let tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, x);
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
