mod common;

use std::path::Path;

use proptest::prelude::*;

use lanediff::geometry::{MapClass, MapFrame, Polyline, RasterGrid, VectorMap};
use lanediff::harness::{cmd_evaluate, gen_data, load_split, sample_path, EvalReport, RunConfig, Split};
use lanediff::metrics::{average_precision, AP_THRESHOLDS};

use common::brute_force_ap;

fn dataset(root: &Path, val: usize) -> RunConfig {
    let mut cfg = RunConfig {
        seed: 21,
        out_dir: root.join("out"),
        ..RunConfig::default()
    };
    cfg.data.dir = root.join("data");
    cfg.data.train_count = 0;
    cfg.data.val_count = val;
    gen_data(&cfg, false).unwrap();
    cfg
}

/// Write `n` copies of `pick(scene index)` as the samples of every val scene.
fn write_samples(cfg: &RunConfig, dir: &Path, n: usize, pick: impl Fn(usize) -> VectorMap) {
    let scenes = load_split(&cfg.data.dir, Split::Val, 0).unwrap();
    for (i, s) in scenes.iter().enumerate() {
        let m = pick(i);
        for j in 0..n {
            let p = sample_path(dir, s.seed, j);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            m.write_json(&cfg.frame, &p).unwrap();
        }
    }
}

fn as_prediction(gt: &VectorMap) -> VectorMap {
    VectorMap::predicted(gt.elements.clone(), vec![1.0; gt.len()]).unwrap()
}

fn read_grid(path: &Path) -> RasterGrid {
    RasterGrid::from_csv(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn ground_truth_samples_score_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dataset(tmp.path(), 20);
    let scenes = load_split(&cfg.data.dir, Split::Val, 0).unwrap();
    let dir = tmp.path().join("samples");
    write_samples(&cfg, &dir, 3, |i| as_prediction(&scenes[i].scene.gt));
    let r: EvalReport = cmd_evaluate(&cfg, &dir).unwrap();
    assert_eq!(r.map, 1.0);
    assert!(r.ap.iter().flatten().all(|v| v.is_none_or(|x| x == 1.0)));
    // Smoothing spreads mass onto GT-off cells between nearby lines, so the
    // smoothed map is close to, but not exactly, a perfect classifier.
    assert!(r.roc_single.auc > 0.99 && r.roc_single.auc <= 1.0, "{}", r.roc_single.auc);
    assert_eq!(r.roc_multi.auc, r.roc_single.auc);
    for s in scenes.iter().take(cfg.metrics.pgm_scenes) {
        let u = read_grid(&cfg.out_dir.join("eval").join("maps").join(s.seed.to_string()).join("u.csv"));
        assert!(u.data.iter().all(|&v| v == 0.0));
    }
    // Identical samples: zero uncertainty everywhere, so no scene shows a
    // visible/invisible difference.
    if let Some(v) = &r.visibility {
        assert_eq!(v.mean_visible, 0.0);
        assert_eq!(v.mean_invisible, 0.0);
    }
}

#[test]
fn ground_truth_samples_without_smoothing_have_auc_one() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = dataset(tmp.path(), 20);
    cfg.metrics.kernel_size = 1;
    let scenes = load_split(&cfg.data.dir, Split::Val, 0).unwrap();
    let dir = tmp.path().join("samples");
    write_samples(&cfg, &dir, 2, |i| as_prediction(&scenes[i].scene.gt));
    let r = cmd_evaluate(&cfg, &dir).unwrap();
    assert_eq!(r.roc_single.auc, 1.0);
    assert_eq!(r.roc_multi.auc, 1.0);
}

#[test]
fn mismatched_pairing_is_near_chance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dataset(tmp.path(), 60);
    let scenes = load_split(&cfg.data.dir, Split::Val, 0).unwrap();
    let dir = tmp.path().join("samples");
    let n = scenes.len();
    // Each scene gets another scene's map, reflected in both axes so that
    // layouts shared by all scenes (ego lane at the centre) do not line up.
    write_samples(&cfg, &dir, 1, |i| {
        let g = &scenes[(i + n / 2) % n].scene.gt;
        let els = g
            .elements
            .iter()
            .map(|p| Polyline::new(p.class, p.points.iter().map(|q| [1.0 - q[1], 1.0 - q[0]]).collect()))
            .collect();
        VectorMap::predicted(els, vec![1.0; g.len()]).unwrap()
    });
    let r = cmd_evaluate(&cfg, &dir).unwrap();
    assert!((r.roc_single.auc - 0.5).abs() < 0.05, "{}", r.roc_single.auc);
    assert!(r.map < 0.05, "{}", r.map);
}

#[test]
fn single_sample_has_zero_uncertainty() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dataset(tmp.path(), 5);
    let scenes = load_split(&cfg.data.dir, Split::Val, 0).unwrap();
    let dir = tmp.path().join("samples");
    // A jittered copy so the map is not trivially perfect.
    write_samples(&cfg, &dir, 1, |i| {
        let g = &scenes[i].scene.gt;
        let els = g
            .elements
            .iter()
            .map(|p| Polyline::new(p.class, p.points.iter().map(|q| [(q[0] + 0.02).min(1.0), q[1]]).collect()))
            .collect();
        VectorMap::predicted(els, vec![0.8; g.len()]).unwrap()
    });
    let r = cmd_evaluate(&cfg, &dir).unwrap();
    assert_eq!(r.n_max, 1);
    assert_eq!(r.roc_single.auc, r.roc_multi.auc);
    for s in scenes.iter().take(cfg.metrics.pgm_scenes) {
        let u = read_grid(&cfg.out_dir.join("eval").join("maps").join(s.seed.to_string()).join("u.csv"));
        assert!(u.data.iter().all(|&v| v == 0.0));
    }
    assert!(cfg.out_dir.join("eval").join("roc_n1.csv").exists());
}

#[test]
fn evaluate_without_samples_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dataset(tmp.path(), 2);
    assert!(cmd_evaluate(&cfg, &tmp.path().join("nothing")).is_err());
}

fn arb_polyline() -> impl Strategy<Value = Polyline> {
    (0usize..3, prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..6))
        .prop_map(|(c, pts)| Polyline::new(MapClass::from_index(c).unwrap(), pts.into_iter().map(|(x, y)| [x, y]).collect()))
}

/// A GT map plus a prediction made of perturbed GT elements and random
/// extras, with scores quantized so that ties occur.
fn arb_scene() -> impl Strategy<Value = (VectorMap, VectorMap)> {
    prop::collection::vec(arb_polyline(), 0..5).prop_flat_map(|gt| {
        let n = gt.len();
        (
            Just(gt),
            prop::collection::vec((-0.03f64..0.03, any::<bool>()), n),
            prop::collection::vec(arb_polyline(), 0..3),
            prop::collection::vec(0u8..5, n + 3),
        )
            .prop_map(|(gt, jitter, extra, scores)| {
                let mut els: Vec<Polyline> = gt
                    .iter()
                    .zip(&jitter)
                    .filter(|(_, j)| j.1)
                    .map(|(p, j)| Polyline::new(p.class, p.points.iter().map(|q| [(q[0] + j.0).clamp(0.0, 1.0), q[1]]).collect()))
                    .collect();
                els.extend(extra);
                let sc = scores[..els.len()].iter().map(|&s| 0.2 * s as f64 + 0.1).collect();
                (VectorMap::ground_truth(gt), VectorMap::predicted(els, sc).unwrap())
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ap_matches_brute_force(scenes in prop::collection::vec(arb_scene(), 1..4)) {
        let frame = MapFrame::default();
        let (gts, preds): (Vec<_>, Vec<_>) = scenes.into_iter().unzip();
        for c in MapClass::ALL {
            for thr in AP_THRESHOLDS {
                let got = average_precision(&preds, &gts, c, thr, &frame).unwrap();
                let want = brute_force_ap(&preds, &gts, c, thr, &frame);
                prop_assert_eq!(got.is_some(), want.is_some());
                if let (Some(a), Some(b)) = (got, want) {
                    prop_assert!((a - b).abs() < 1e-12, "class {:?} thr {}: {} vs {}", c, thr, a, b);
                }
            }
        }
    }
}
