//! Plain-text summaries and the markdown report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{read_scene_samples, scene_maps, EvalReport, RunConfig, RunMeta};
use crate::error::{Error, Result};
use crate::geometry::{MapClass, RasterGrid};
use crate::harness::dataset::{load_split, Split};

/// Published full-scale reference values, shown next to the toy results.
pub const REFERENCE_AUC_SINGLE: f64 = 0.89;
pub const REFERENCE_AUC_MULTI: f64 = 0.92;
pub const REFERENCE_VISIBILITY_RATIO: f64 = 1.31;

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

pub fn summary_text(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenes: {}  samples per scene: {}", r.scenes, r.n_max);
    let _ = writeln!(s, "mAP: {:.4}", r.map);
    for c in MapClass::ALL {
        let per: Vec<String> = r.ap[c.index()].iter().map(|v| opt(*v)).collect();
        let _ = writeln!(s, "  AP {:<13} {}", c.name(), per.join("  "));
    }
    let _ = writeln!(
        s,
        "AUC n=1: {:.4}  n={}: {:.4}  gain {:+.4}  (reference {REFERENCE_AUC_SINGLE} -> {REFERENCE_AUC_MULTI})",
        r.roc_single.auc,
        r.roc_multi.n,
        r.roc_multi.auc,
        r.roc_multi.auc - r.roc_single.auc
    );
    match &r.visibility {
        Some(v) => {
            let _ = writeln!(
                s,
                "uncertainty visible {:.6}  invisible {:.6}  ratio {:.3} (reference {REFERENCE_VISIBILITY_RATIO})",
                v.mean_visible, v.mean_invisible, v.ratio
            );
            let _ = writeln!(
                s,
                "one-sided {:?} t-test: t = {:.3}, df = {:.1}, p = {:.3e}, scenes used {} skipped {}",
                v.test, v.t, v.df, v.p_value, v.n_used, v.n_skipped
            );
        }
        None => {
            let _ = writeln!(s, "visibility comparison: no scene with both visible and invisible cells");
        }
    }
    s
}

/// Side-by-side tiles (mean class probability, uncertainty, visibility)
/// for each scene, one scene per row, separated by 2-cell gaps.
pub fn figure_grid(rows: &[[RasterGrid; 3]]) -> Result<RasterGrid> {
    let first = rows.first().ok_or_else(|| Error::InvalidArgument("no scenes for the figure".into()))?;
    let (h, w) = (first[0].h, first[0].w);
    let gap = 2;
    let (fh, fw) = (rows.len() * (h + gap) - gap, 3 * (w + gap) - gap);
    let mut fig = RasterGrid::zeros(fh, fw);
    for (i, tiles) in rows.iter().enumerate() {
        for (j, tile) in tiles.iter().enumerate() {
            if tile.h != h || tile.w != w {
                return Err(Error::ShapeMismatch("figure tiles differ in shape".into()));
            }
            let scale = tile.max();
            for r in 0..h {
                for c in 0..w {
                    let v = if scale > 0.0 { tile.get(r, c) / scale } else { 0.0 };
                    fig.set(i * (h + gap) + r, j * (w + gap) + c, v);
                }
            }
        }
    }
    Ok(fig)
}

fn read_text(path: &Path) -> Option<String> {
    std::fs::read_to_string(path).ok()
}

fn csv_to_markdown(csv: &str) -> String {
    let mut lines = csv.lines();
    let Some(head) = lines.next() else {
        return String::new();
    };
    let cols: Vec<&str> = head.split(',').collect();
    let mut s = format!("| {} |\n|{}\n", cols.join(" | "), "---|".repeat(cols.len()));
    for l in lines {
        let _ = writeln!(s, "| {} |", l.split(',').collect::<Vec<_>>().join(" | "));
    }
    s
}

/// Collect the outputs under `cfg.out_dir` into `report.md` plus a
/// figure PGM built from the samples in `samples_dir`.
pub fn cmd_report(cfg: &RunConfig, samples_dir: &Path) -> Result<PathBuf> {
    let out = &cfg.out_dir;
    let eval_path = out.join("eval").join("eval.json");
    let text = std::fs::read_to_string(&eval_path).map_err(|e| Error::io(&eval_path, e))?;
    let report: EvalReport = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: eval_path.clone(),
        msg: e.to_string(),
    })?;

    let mut md = String::from("# Run report\n\n");
    let _ = writeln!(md, "Seed {}, config hash `{}`.\n", cfg.seed, cfg.hash());
    md.push_str("## Evaluation\n\n```\n");
    md.push_str(&summary_text(&report));
    md.push_str("```\n\n");
    if let Some(ap) = read_text(&out.join("eval").join("ap.csv")) {
        md.push_str("## Average precision\n\n");
        md.push_str(&csv_to_markdown(&ap));
        md.push('\n');
    }
    for axis in ["k", "eta", "tau", "padding", "pretrain"] {
        if let Some(csv) = read_text(&out.join(format!("ablation_{axis}.csv"))) {
            let _ = writeln!(md, "## Ablation: {axis}\n");
            md.push_str(&csv_to_markdown(&csv));
            md.push('\n');
        }
    }
    if let Some(log) = read_text(&out.join("train_log.csv")) {
        let rows: Vec<&str> = log.lines().skip(1).collect();
        if let (Some(a), Some(b)) = (rows.first(), rows.last()) {
            let _ = writeln!(md, "## Training\n\nfirst log row `{a}`, last log row `{b}` (columns step,loss_line,loss_cls,lr,val_mAP).\n");
        }
    }

    let scenes = load_split(&cfg.data.dir, Split::Val, cfg.metrics.pgm_scenes.max(1))?;
    let mut rows = Vec::new();
    for s in &scenes {
        let samples = read_scene_samples(samples_dir, s.seed)?;
        let m = scene_maps(&samples, cfg)?;
        let mut all = RasterGrid::for_frame(&cfg.frame);
        for c in MapClass::ALL {
            for (a, v) in all.data.iter_mut().zip(&m.multi.class(c).data) {
                *a = a.max(*v);
            }
        }
        rows.push([all, m.uncertainty, s.scene.visibility().to_grid()]);
    }
    let fig = figure_grid(&rows)?;
    let fig_path = out.join("figure.pgm");
    fig.write_pgm(&fig_path, 1.0)?;
    md.push_str("## Figure\n\n`figure.pgm`: one row per val scene; columns are the max class probability over classes, the uncertainty map and the visibility mask, each scaled to its own maximum.\n");

    let path = out.join("report.md");
    std::fs::write(&path, md).map_err(|e| Error::io(&path, e))?;
    RunMeta::new("report", cfg, serde_json::json!({ "report": &path, "figure": fig_path })).write(out)?;
    Ok(path)
}
