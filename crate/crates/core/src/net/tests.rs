use rand::Rng as _;

use super::*;
use crate::diffusion::{forward_q, pad_queries, PaddingStrategy, QuerySet, NO_OBJECT};
use crate::geometry::{MapClass, Polyline};
use crate::rng::rng_from;

fn tiny_cfg() -> NetConfig {
    NetConfig {
        n_points: 3,
        grid_h: 12,
        grid_w: 8,
        conv1_channels: 2,
        conv1_kernel: 3,
        conv2_kernel: 3,
        conv2_dilation: 2,
        latent_dim: 2,
        d_model: 4,
        heads: 2,
        ffn_dim: 4,
        layers: 1,
        time_dim: 4,
        token_block: 4,
        refine_gain: 1.0,
        prior_var: 1.0 / 3.0,
    }
}

fn random_obs(h: usize, w: usize, seed: u64) -> ObservationGrid {
    let mut r = rng_from(seed);
    let mut o = ObservationGrid::zeros(h, w);
    o.data.iter_mut().for_each(|v| *v = r.random_range(-0.5..1.5));
    o
}

fn random_targets(l: usize, n_gt: usize, n_p: usize, seed: u64) -> QuerySet {
    let mut r = rng_from(seed);
    let elements = (0..n_gt)
        .map(|i| {
            let pts = (0..n_p).map(|_| [r.random_range(0.05..0.95), r.random_range(0.05..0.95)]).collect();
            Polyline::new(MapClass::from_index(i % 3).unwrap(), pts)
        })
        .collect();
    pad_queries(&VectorMap::ground_truth(elements), l, n_p, PaddingStrategy::Gaussian, seed).unwrap()
}

fn schedule() -> NoiseSchedule {
    NoiseSchedule::cosine(1000).unwrap()
}

#[test]
fn default_model_is_desk_scale() {
    let net = Net::new(&NetConfig::default()).unwrap();
    assert!(net.n_params < 1_000_000);
    let tiny = Net::new(&tiny_cfg()).unwrap();
    assert!((700..1000).contains(&tiny.n_params), "{}", tiny.n_params);
}

#[test]
fn zero_observation_zero_bias_gives_zero_latent() {
    let m = Model::new(&tiny_cfg(), schedule(), 1).unwrap();
    let lat = m.encode(&ObservationGrid::zeros(12, 8)).unwrap();
    assert!(lat.data.iter().all(|&v| v == 0.0));
    let obs = random_obs(12, 8, 3);
    assert_eq!(m.encode(&obs).unwrap(), m.encode(&obs).unwrap());
}

#[test]
fn latent_receptive_field() {
    let cfg = tiny_cfg();
    let m = Model::new(&cfg, schedule(), 2).unwrap();
    let obs = random_obs(12, 8, 4);
    let base = m.encode(&obs).unwrap();
    let (pr, pc) = (5usize, 3usize);
    let mut poked = obs.clone();
    for ch in 0..OBS_CHANNELS {
        poked.data[ch * 96 + pr * 8 + pc] += 1.0;
    }
    let after = m.encode(&poked).unwrap();
    // Oracle: enumerate every (conv2 tap, conv1 tap) path back to the input.
    let mut field = std::collections::HashSet::new();
    for d2r in -1i64..=1 {
        for d2c in -1i64..=1 {
            for d1r in -1i64..=1 {
                for d1c in -1i64..=1 {
                    let mid = (pr as i64 - d1r, pc as i64 - d1c);
                    if mid.0 < 0 || mid.0 >= 12 || mid.1 < 0 || mid.1 >= 8 {
                        continue;
                    }
                    let out = (mid.0 - 2 * d2r, mid.1 - 2 * d2c);
                    if out.0 >= 0 && out.0 < 12 && out.1 >= 0 && out.1 < 8 {
                        field.insert((out.0 as usize, out.1 as usize));
                    }
                }
            }
        }
    }
    for r in 0..12 {
        for c in 0..8 {
            let changed = base.at(r, c) != after.at(r, c);
            assert_eq!(changed, field.contains(&(r, c)), "cell ({r},{c})");
        }
    }
    // Only the token whose 4x4 patch holds the poked cell moves: patch
    // (1, 0) of a 3x2 token grid.
    let d = cfg.d_model;
    for k in 0..6 {
        let changed = base.tokens[k * d..(k + 1) * d] != after.tokens[k * d..(k + 1) * d];
        assert_eq!(changed, k == 2, "token {k}");
    }
}

#[test]
fn lazy_encoder_matches_dense() {
    let cfg = tiny_cfg();
    let m = Model::new(&cfg, schedule(), 5).unwrap();
    let obs = random_obs(12, 8, 6);
    let cells = obs_to_cells(&obs);
    let dense = m.encode(&obs).unwrap();
    let mut lazy = LazyFeatures::new(m.net.encoder, &m.params, &cells, 12, 8);
    for r in (0..12).rev() {
        for c in 0..8 {
            let s = lazy.slot(r, c);
            assert_eq!(lazy.feature(s), dense.at(r, c));
        }
    }
    let l = 5;
    let x_t: Vec<f64> = random_targets(l, 2, 3, 1).coords;
    let mut lazy = LazyFeatures::new(m.net.encoder, &m.params, &cells, 12, 8);
    let (a, _) = m.net.forward(&m.params, &x_t, l, 300, 0.6, &mut lazy);
    let (b, _) = m.net.forward(&m.params, &x_t, l, 300, 0.6, &mut FullFeatures(&dense));
    assert_eq!(a, b);
}

#[test]
fn output_shapes_and_time_conditioning() {
    let cfg = NetConfig {
        grid_h: 20,
        grid_w: 10,
        ..NetConfig::default()
    };
    let m = Model::new(&cfg, schedule(), 7).unwrap();
    let lat = m.encode(&random_obs(20, 10, 8)).unwrap();
    let x: Vec<f64> = (0..20 * 20).map(|i| ((i * 37) % 17) as f64 / 8.0 - 1.0).collect();
    let a = m.denoise(&x, 20, 10, &lat).unwrap();
    assert_eq!(a.x0.len(), 20 * 10 * 2);
    assert_eq!(a.logits.len(), 20 * 4);
    let b = m.denoise(&x, 20, 900, &lat).unwrap();
    assert!(a.x0.iter().zip(&b.x0).any(|(u, v)| (u - v).abs() > 1e-6));
    assert!(a.logits.iter().zip(&b.logits).any(|(u, v)| (u - v).abs() > 1e-6));
}

#[test]
fn query_permutation_equivariance() {
    let cfg = NetConfig {
        grid_h: 20,
        grid_w: 10,
        ..NetConfig::default()
    };
    let m = Model::new(&cfg, schedule(), 9).unwrap();
    let lat = m.encode(&random_obs(20, 10, 10)).unwrap();
    let l = 6;
    let q = 20;
    let mut r = rng_from(3);
    let x: Vec<f64> = (0..l * q).map(|_| r.random_range(-1.2..1.2)).collect();
    let perm = [3usize, 0, 5, 1, 4, 2];
    let xp: Vec<f64> = perm.iter().flat_map(|&i| x[i * q..(i + 1) * q].to_vec()).collect();
    let a = m.denoise(&x, l, 400, &lat).unwrap();
    let b = m.denoise(&xp, l, 400, &lat).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        for j in 0..q {
            assert!((b.x0[k * q + j] - a.x0[i * q + j]).abs() < 1e-9);
        }
        for j in 0..4 {
            assert!((b.logits[k * 4 + j] - a.logits[i * 4 + j]).abs() < 1e-9);
        }
    }
}

#[test]
fn finite_difference_gradients() {
    let cfg = tiny_cfg();
    let net = Net::new(&cfg).unwrap();
    let s = schedule();
    let mut total_checked = 0;
    for seed in 0..6 {
        let mut p = net.init_params(seed);
        // Move off the zero-bias, unit-gain init so every term is exercised.
        let mut r = rng_from(seed + 100);
        p.iter_mut().for_each(|v| *v += r.random_range(-0.2..0.2));
        let obs = obs_to_cells(&random_obs(12, 8, seed));
        let targets = random_targets(5, 3, 3, seed);
        let t = 50 + 150 * seed as usize;
        let x_t = forward_q(&targets.coords, t, &s, seed).unwrap();
        let rep = gradient_check(&net, &p, &obs, &targets, &x_t, t, s.alpha_bar(t), 0.5, 1e-4);
        assert!(rep.max_rel_err < 1e-3, "seed {seed}: {rep:?}");
        assert!(rep.skipped * 10 < net.n_params, "{rep:?}");
        total_checked += rep.checked;
    }
    assert!(total_checked > 6 * net.n_params * 9 / 10);
}

#[test]
fn loss_optimum_and_zero_class_weight() {
    let cfg = tiny_cfg();
    let net = Net::new(&cfg).unwrap();
    let p = net.init_params(1);
    let obs = obs_to_cells(&random_obs(12, 8, 1));
    let targets = random_targets(5, 2, 3, 2);
    let x_t = forward_q(&targets.coords, 100, &schedule(), 1).unwrap();
    let full = loss_value(&net, &p, &obs, &targets, &x_t, 100, 0.9, 0.5);
    let line_only = loss_value(&net, &p, &obs, &targets, &x_t, 100, 0.9, 0.0);
    assert_eq!(line_only.total, line_only.line);
    assert_eq!(full.line, line_only.line);
    assert!((full.total - full.line - 0.5 * full.cls).abs() < 1e-15);
    let (_, g, _) = loss_and_grad(&net, &p, &obs, &targets, &x_t, 100, 0.9, 0.0, false);
    let cls = net.spec("class_head.weight").unwrap();
    assert!(g[cls.offset..cls.offset + cls.len()].iter().all(|&v| v == 0.0));
    assert_eq!(targets.class_targets[2..], [NO_OBJECT; 3]);
}

fn tiny_data(n: usize) -> Vec<TrainExample> {
    (0..n as u64)
        .map(|s| {
            let t = random_targets(4, 2, 3, s);
            let gt = VectorMap::ground_truth(
                (0..2)
                    .map(|i| Polyline::new(MapClass::from_index(i).unwrap(), crate::diffusion::signal_to_points(t.query(i))))
                    .collect(),
            );
            TrainExample::new(&random_obs(12, 8, s), gt)
        })
        .collect()
}

fn tiny_train_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        queries: 4,
        lr: 1e-3,
        log_every: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_reproducible_and_freezes_encoder() {
    let data = tiny_data(10);
    let cfg = tiny_cfg();
    let run = |tc: &TrainConfig| {
        let mut m = Model::new(&cfg, schedule(), 3).unwrap();
        let log = train(&mut m, &data, tc, 11, None, None).unwrap();
        (m, log)
    };
    let (a, log) = run(&tiny_train_cfg());
    let (b, _) = run(&tiny_train_cfg());
    assert_eq!(a.checksum(), b.checksum());
    assert_eq!(log.len(), 4);
    assert!(log.iter().all(|r| r.loss_line.is_finite() && r.lr > 0.0));

    let init = Model::new(&cfg, schedule(), 3).unwrap();
    assert_ne!(a.checksum(), init.checksum());
    let (c, log0) = run(&TrainConfig {
        epochs: 0,
        ..tiny_train_cfg()
    });
    assert!(log0.is_empty());
    assert_eq!(c.params, init.params);

    let (f, _) = run(&TrainConfig {
        freeze_encoder: true,
        ..tiny_train_cfg()
    });
    let enc = f.net.encoder_range();
    assert!(enc.end > 0);
    assert_eq!(f.params[enc.clone()], init.params[enc.clone()]);
    assert_ne!(f.params[enc.end..], init.params[enc.end..]);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = Model::new(&tiny_cfg(), schedule(), 4).unwrap();
    let path = dir.path().join("m.ckpt");
    let hash = save_checkpoint(&m, &path, serde_json::json!({"note": "x"})).unwrap();
    assert_eq!(hash, file_sha256(&path).unwrap());
    let (header, back) = load_checkpoint(&path).unwrap();
    assert_eq!(back.params, m.params);
    assert_eq!(header.meta["note"], "x");
    assert_eq!(back.checksum(), m.checksum());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    std::fs::write(&path, b"nope").unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

    let other = Model::new(&tiny_cfg(), schedule(), 99).unwrap();
    let src = dir.path().join("src.ckpt");
    save_checkpoint(&other, &src, serde_json::Value::Null).unwrap();
    let mut dst = Model::new(&tiny_cfg(), schedule(), 4).unwrap();
    load_encoder_into(&mut dst, &src).unwrap();
    let enc = dst.net.encoder_range();
    assert_eq!(dst.params[enc.clone()], other.params[enc.clone()]);
    assert_eq!(dst.params[enc.end..], m.params[enc.end..]);
}

#[test]
fn encoder_runs_once_per_scene() {
    let m = Model::new(&tiny_cfg(), schedule(), 4).unwrap();
    let obs = random_obs(12, 8, 2);
    for k in [1, 3] {
        let cfg = SamplerConfig {
            k,
            n: 4,
            queries: 5,
            ..SamplerConfig::default()
        };
        let before = m.encode_calls();
        let maps = m.sample_scene(&obs, &cfg, 1).unwrap();
        assert_eq!(maps.len(), 4);
        assert_eq!(m.encode_calls() - before, 1);
    }
}
