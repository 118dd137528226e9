use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{obs_to_cells, Features, LazyFeatures, Model, Net};
use crate::diffusion::{
    forward_q_with, pad_queries_with, softmax, PaddingStrategy, QueryOrigin, QuerySet, DEFAULT_QUERIES, N_LOGITS,
};
use crate::error::{Error, Result};
use crate::geometry::VectorMap;
use crate::rng::{derive_seed, rng_from};
use crate::scene::ObservationGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub lambda_cls: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub freeze_encoder: bool,
    pub pretrained_encoder: Option<PathBuf>,
    pub padding: PaddingStrategy,
    pub queries: usize,
    /// Steps per averaged log row.
    pub log_every: usize,
    /// Run the validation hook every this many epochs (0 disables).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            lr: 5e-4,
            weight_decay: 1e-2,
            clip_norm: 1.0,
            lambda_cls: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            freeze_encoder: false,
            pretrained_encoder: None,
            padding: PaddingStrategy::Gaussian,
            queries: DEFAULT_QUERIES,
            log_every: 50,
            val_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.lambda_cls >= 0.0) {
            return Err(Error::Config("lambda_cls must be non-negative".into()));
        }
        if self.queries == 0 || self.log_every == 0 {
            return Err(Error::Config("queries and log_every must be positive".into()));
        }
        Ok(())
    }
}

pub struct TrainExample {
    pub obs_cells: Vec<f64>,
    pub gt: VectorMap,
}

impl TrainExample {
    pub fn new(obs: &ObservationGrid, gt: VectorMap) -> Self {
        TrainExample {
            obs_cells: obs_to_cells(obs),
            gt,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub line: f64,
    pub cls: f64,
    pub total: f64,
}

/// Mean L1 over GT-derived queries plus weighted cross-entropy over all
/// queries; returns the loss and its gradients w.r.t. outputs.
fn loss_terms(x0_hat: &[f64], logits: &[f64], targets: &QuerySet, lambda: f64) -> (LossParts, Vec<f64>, Vec<f64>) {
    let q = targets.query_len();
    let l = targets.l;
    let n_gt = targets.n_from_gt();
    let mut dx0 = vec![0.0; x0_hat.len()];
    let mut line = 0.0;
    if n_gt > 0 {
        let norm = 1.0 / (n_gt * q) as f64;
        for i in 0..l {
            if targets.origins[i] != QueryOrigin::FromGt {
                continue;
            }
            for j in i * q..(i + 1) * q {
                let r = x0_hat[j] - targets.coords[j];
                line += r.abs() * norm;
                dx0[j] = r.signum() * norm;
            }
        }
    }
    let mut cls = 0.0;
    let mut dlog = vec![0.0; logits.len()];
    for i in 0..l {
        let row = &logits[i * N_LOGITS..(i + 1) * N_LOGITS];
        let pr = softmax(row);
        let tgt = targets.class_targets[i];
        cls += -pr[tgt].max(1e-300).ln() / l as f64;
        for c in 0..N_LOGITS {
            let y = if c == tgt { 1.0 } else { 0.0 };
            dlog[i * N_LOGITS + c] = lambda * (pr[c] - y) / l as f64;
        }
    }
    (
        LossParts {
            line,
            cls,
            total: line + lambda * cls,
        },
        dx0,
        dlog,
    )
}

/// Full loss and exact parameter gradient for one training example. The
/// returned signature identifies the active piece of the piecewise-smooth
/// loss (sampled cells, clamping, L1 residual signs).
pub fn loss_and_grad(
    net: &Net,
    p: &[f64],
    obs_cells: &[f64],
    targets: &QuerySet,
    x_t: &[f64],
    t: usize,
    alpha_bar: f64,
    lambda: f64,
    freeze_encoder: bool,
) -> (LossParts, Vec<f64>, Vec<i64>) {
    let cfg = &net.cfg;
    let mut feats = LazyFeatures::new(net.encoder, p, obs_cells, cfg.grid_h, cfg.grid_w);
    let (out, cache) = net.forward(p, x_t, targets.l, t, alpha_bar, &mut feats);
    let (parts, dx0, dlog) = loss_terms(&out.x0, &out.logits, targets, lambda);
    let mut g = vec![0.0; p.len()];
    let mut dlat = vec![0.0; feats.n_slots() * cfg.latent_dim];
    let mut dtok = vec![0.0; feats.tokens().len()];
    net.backward(p, &mut g, &cache, &feats, &dx0, &dlog, &mut dlat, &mut dtok);
    if !freeze_encoder {
        feats.backward(&mut g, &dlat, &dtok);
    }
    let mut sig = cache.signature();
    for (i, o) in targets.origins.iter().enumerate() {
        if *o == QueryOrigin::FromGt {
            let q = targets.query_len();
            sig.extend((i * q..(i + 1) * q).map(|j| (out.x0[j] - targets.coords[j]).signum() as i64));
        }
    }
    (parts, g, sig)
}

pub fn loss_value(
    net: &Net,
    p: &[f64],
    obs_cells: &[f64],
    targets: &QuerySet,
    x_t: &[f64],
    t: usize,
    alpha_bar: f64,
    lambda: f64,
) -> LossParts {
    let cfg = &net.cfg;
    let mut feats = LazyFeatures::new(net.encoder, p, obs_cells, cfg.grid_h, cfg.grid_w);
    let (out, _) = net.forward(p, x_t, targets.l, t, alpha_bar, &mut feats);
    loss_terms(&out.x0, &out.logits, targets, lambda).0
}

/// Adam with decoupled weight decay on matrix-shaped parameters.
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    decay_mask: Vec<bool>,
    step: u64,
}

impl AdamW {
    pub fn new(net: &Net) -> Self {
        let mut decay_mask = vec![false; net.n_params];
        for s in &net.specs {
            if s.shape.len() >= 2 {
                decay_mask[s.offset..s.offset + s.len()].fill(true);
            }
        }
        AdamW {
            m: vec![0.0; net.n_params],
            v: vec![0.0; net.n_params],
            decay_mask,
            step: 0,
        }
    }

    pub fn update(&mut self, p: &mut [f64], g: &[f64], lr: f64, cfg: &TrainConfig, frozen: Option<std::ops::Range<usize>>) {
        self.step += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.step as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.step as i32);
        for i in 0..p.len() {
            if frozen.as_ref().is_some_and(|r| r.contains(&i)) {
                continue;
            }
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            if self.decay_mask[i] {
                p[i] -= lr * cfg.weight_decay * p[i];
            }
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            p[i] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
}

/// Cosine-annealed learning rate from `lr` down to zero.
pub fn cosine_lr(lr: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr;
    }
    0.5 * lr * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss_line: f64,
    pub loss_cls: f64,
    pub lr: f64,
    pub val_map: Option<f64>,
}

pub type ValidationHook<'a> = &'a dyn Fn(&Model) -> Result<f64>;

/// Train in place. Deterministic given `seed` and the data order.
pub fn train(
    model: &mut Model,
    data: &[TrainExample],
    cfg: &TrainConfig,
    seed: u64,
    validate: Option<ValidationHook<'_>>,
    diagnostic_dir: Option<&Path>,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let n_p = model.cfg().n_points;
    let total = cfg.epochs * data.len();
    let mut opt = AdamW::new(&model.net);
    let frozen = cfg.freeze_encoder.then(|| model.net.encoder_range());
    let mut rng = rng_from(derive_seed(seed, 0x7a11));
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let (mut acc_line, mut acc_cls, mut acc_n) = (0.0, 0.0, 0usize);
    let steps = model.schedule.steps();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let ex = &data[idx];
            let t = rng.random_range(1..=steps);
            let qs = pad_queries_with(&ex.gt, cfg.queries, n_p, cfg.padding, &mut rng)?;
            let x_t = forward_q_with(&qs.coords, t, &model.schedule, &mut rng);
            let (parts, mut g, _) = loss_and_grad(
                &model.net,
                &model.params,
                &ex.obs_cells,
                &qs,
                &x_t,
                t,
                model.schedule.alpha_bar(t),
                cfg.lambda_cls,
                cfg.freeze_encoder,
            );
            if let Some(r) = &frozen {
                g[r.clone()].fill(0.0);
            }
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !parts.total.is_finite() || !norm.is_finite() {
                let checkpoint = match diagnostic_dir {
                    Some(dir) => {
                        let path = dir.join(format!("diverged-step{step}.ckpt"));
                        super::save_checkpoint(model, &path, serde_json::json!({ "diverged_at": step }))?;
                        Some(path)
                    }
                    None => None,
                };
                return Err(Error::Diverged { step, checkpoint });
            }
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                g.iter_mut().for_each(|v| *v *= s);
            }
            let lr = cosine_lr(cfg.lr, step, total);
            opt.update(&mut model.params, &g, lr, cfg, frozen.clone());
            step += 1;
            acc_line += parts.line;
            acc_cls += parts.cls;
            acc_n += 1;
            if step % cfg.log_every == 0 || step == total {
                log.push(StepLog {
                    step,
                    loss_line: acc_line / acc_n as f64,
                    loss_cls: acc_cls / acc_n as f64,
                    lr,
                    val_map: None,
                });
                (acc_line, acc_cls, acc_n) = (0.0, 0.0, 0);
            }
        }
        if let Some(hook) = validate {
            if cfg.val_every > 0 && ((epoch + 1) % cfg.val_every == 0 || epoch + 1 == cfg.epochs) {
                let m = hook(model)?;
                if let Some(last) = log.last_mut() {
                    last.val_map = Some(m);
                }
            }
        }
    }
    Ok(log)
}

pub fn write_log_csv(log: &[StepLog], path: &Path) -> Result<()> {
    let mut s = String::from("step,loss_line,loss_cls,lr,val_mAP\n");
    for r in log {
        let v = r.val_map.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{},{}\n", r.step, r.loss_line, r.loss_cls, r.lr, v));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Parameters whose stencil crossed a kink of the loss.
    pub skipped: usize,
}

/// Central finite differences of the full loss against the analytic
/// gradient for every parameter. Relative error is
/// `|a - f| / max(|a|, |f|, 1e-6)`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    net: &Net,
    p: &[f64],
    obs_cells: &[f64],
    targets: &QuerySet,
    x_t: &[f64],
    t: usize,
    alpha_bar: f64,
    lambda: f64,
    h: f64,
) -> GradCheck {
    let (_, g, sig0) = loss_and_grad(net, p, obs_cells, targets, x_t, t, alpha_bar, lambda, false);
    let mut out = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut q = p.to_vec();
    for i in 0..p.len() {
        q[i] = p[i] + h;
        let (lp, _, sp) = loss_and_grad(net, &q, obs_cells, targets, x_t, t, alpha_bar, lambda, false);
        q[i] = p[i] - h;
        let (lm, _, sm) = loss_and_grad(net, &q, obs_cells, targets, x_t, t, alpha_bar, lambda, false);
        q[i] = p[i];
        if sp != sig0 || sm != sig0 {
            out.skipped += 1;
            continue;
        }
        let fd = (lp.total - lm.total) / (2.0 * h);
        let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
        out.max_rel_err = out.max_rel_err.max(rel);
        out.checked += 1;
    }
    out
}
