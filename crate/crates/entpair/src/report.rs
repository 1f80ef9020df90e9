//! CSV and SVG outputs. Numbers are written with fixed precision so reruns
//! produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use entpair_core::analysis::{EmbeddingStudy, SaliencyResult, SubgroupTable};
use entpair_core::data::{Dataset, Gender, Label, Rect};
use entpair_core::stats::{GroupSummary, RespondentAccuracy};
use entpair_core::train::{ConfusionCounts, LandmarkRow, TrialReport, TrialsSummary};

use crate::manifest::write_rows;
use crate::{Error, Result};

pub const TRIAL_HEADER: [&str; 5] = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"];
pub const TRIALS_HEADER: [&str; 10] =
    ["trial", "seed", "test_accuracy", "sd", "best_epoch", "best_val_test_accuracy", "tp", "tn", "fp", "fn"];
pub const TABLE2_HEADER: [&str; 7] = ["group", "n_respondents", "n_decisions", "mean", "SD", "t", "p"];

fn fixed(v: f64, digits: usize) -> String {
    format!("{v:.digits$}")
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(String::new, |v| fixed(v, digits))
}

fn p_value(p: f64) -> String {
    if p != 0.0 && p < 1e-4 {
        format!("{p:.2e}")
    } else {
        fixed(p, 4)
    }
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Per-epoch curves of one trial. Accuracies are fractions in `[0, 1]`.
pub fn write_trial_csv(path: &Path, report: &TrialReport) -> Result<()> {
    write_rows(
        path,
        &TRIAL_HEADER,
        report.curves.iter().map(|e| {
            [e.epoch.to_string(), fixed(e.train_loss, 6), fixed(e.train_acc, 6), opt(e.val_loss, 6), opt(e.val_acc, 6)]
        }),
    )
}

/// One row per trial followed by a `summary` row carrying the mean and SD
/// of the final test accuracies and the summed confusion counts.
pub fn write_trials_csv(path: &Path, summary: &TrialsSummary) -> Result<()> {
    let counts = |c: &ConfusionCounts| [c.tp.to_string(), c.tn.to_string(), c.fp.to_string(), c.fn_.to_string()];
    let mut rows: Vec<Vec<String>> = summary
        .trials
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut r = vec![
                (i + 1).to_string(),
                t.seed.to_string(),
                fixed(t.test_accuracy, 4),
                String::new(),
                t.best_epoch.map_or_else(String::new, |e| e.to_string()),
                opt(t.best_val_test_accuracy, 4),
            ];
            r.extend(counts(&t.test_counts));
            r
        })
        .collect();
    let mut total = ConfusionCounts::default();
    for t in &summary.trials {
        total.tp += t.test_counts.tp;
        total.tn += t.test_counts.tn;
        total.fp += t.test_counts.fp;
        total.fn_ += t.test_counts.fn_;
    }
    let best: Vec<f64> = summary.trials.iter().filter_map(|t| t.best_val_test_accuracy).collect();
    let best_mean = (!best.is_empty()).then(|| best.iter().sum::<f64>() / best.len() as f64);
    let mut last = vec![
        "summary".to_string(),
        String::new(),
        fixed(summary.mean, 4),
        opt(summary.sd, 4),
        String::new(),
        opt(best_mean, 4),
    ];
    last.extend(counts(&total));
    rows.push(last);
    write_rows(path, &TRIALS_HEADER, rows)
}

pub fn write_eval_csv(path: &Path, rows: &[(&str, ConfusionCounts)]) -> Result<()> {
    write_rows(
        path,
        &["split", "n", "accuracy", "tp", "tn", "fp", "fn"],
        rows.iter().map(|(name, c)| {
            [
                name.to_string(),
                c.total().to_string(),
                c.accuracy().map_or_else(|_| String::new(), |a| fixed(a, 4)),
                c.tp.to_string(),
                c.tn.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
            ]
        }),
    )
}

pub fn write_landmarks_csv(path: &Path, rows: &[LandmarkRow]) -> Result<()> {
    write_rows(
        path,
        &["model", "mean", "accuracies"],
        rows.iter().map(|r| {
            [r.name.clone(), fixed(r.mean, 4), r.accuracies.iter().map(|a| fixed(*a, 4)).collect::<Vec<_>>().join(";")]
        }),
    )
}

pub fn write_saliency_csv(path: &Path, dataset: &Dataset, results: &[SaliencyResult]) -> Result<()> {
    let mut rows = Vec::new();
    for r in results {
        for (rank, c) in r.cells.iter().enumerate() {
            rows.push([
                dataset.subject(r.pair.left).subject_id.clone(),
                dataset.subject(r.pair.right).subject_id.clone(),
                r.pair.target.to_string(),
                match r.side {
                    entpair_core::analysis::Side::Left => "left".into(),
                    entpair_core::analysis::Side::Right => "right".into(),
                },
                (rank + 1).to_string(),
                c.row.to_string(),
                c.col.to_string(),
                format!("{:.8}", c.delta),
            ]);
        }
    }
    write_rows(path, &["left_id", "right_id", "target", "side", "rank", "row", "col", "delta"], rows)
}

pub fn write_embedding_csv(path: &Path, study: &EmbeddingStudy) -> Result<()> {
    write_rows(
        path,
        &["subject_id", "label", "gender", "x", "y", "cluster"],
        study.points.iter().map(|p| {
            [
                p.subject_id.clone(),
                p.label.to_string(),
                p.gender.to_string(),
                fixed(p.x, 6),
                fixed(p.y, 6),
                p.cluster.to_string(),
            ]
        }),
    )
}

pub fn write_subgroup_csv(path: &Path, table: &SubgroupTable) -> Result<()> {
    write_rows(
        path,
        &["group", "n", "accuracy", "tp", "tn", "fp", "fn"],
        table.rows.iter().map(|r| {
            [
                r.group.clone(),
                r.n.to_string(),
                fixed(r.accuracy, 4),
                r.counts.tp.to_string(),
                r.counts.tn.to_string(),
                r.counts.fp.to_string(),
                r.counts.fn_.to_string(),
            ]
        }),
    )
}

pub fn write_respondents_csv(path: &Path, respondents: &[RespondentAccuracy]) -> Result<()> {
    write_rows(
        path,
        &["respondent_id", "group", "total", "retained", "correct", "accuracy"],
        respondents.iter().map(|r| {
            [
                r.respondent_id.clone(),
                r.group.to_string(),
                r.total.to_string(),
                r.retained.to_string(),
                r.correct.to_string(),
                fixed(r.accuracy, 4),
            ]
        }),
    )
}

/// Group table with means and SDs to two decimals.
pub fn write_table2_csv(path: &Path, rows: &[GroupSummary]) -> Result<()> {
    write_rows(
        path,
        &TABLE2_HEADER,
        rows.iter().map(|g| {
            [
                g.group.clone(),
                g.n_respondents.to_string(),
                g.n_decisions.map_or_else(String::new, |n| n.to_string()),
                fixed(g.mean, 2),
                opt(g.sd, 2),
                g.test.map_or_else(String::new, |t| fixed(t.t, 2)),
                g.test.map_or_else(String::new, |t| p_value(t.p)),
            ]
        }),
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Bar chart of percentages on a 0–100 axis with optional ±SD whiskers and
/// a dashed line at 50%.
pub fn bar_chart_svg(title: &str, bars: &[(String, f64, Option<f64>)]) -> String {
    let (left, top, plot_h, bar_w, gap) = (60.0, 40.0, 300.0, 60.0, 30.0);
    let width = left + gap + bars.len() as f64 * (bar_w + gap) + 20.0;
    let height = top + plot_h + 70.0;
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 100.0) / 100.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, xml_escape(title));
    for tick in (0..=100).step_by(10) {
        let ty = y(tick as f64);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{ty:.1}" x2="{:.1}" y2="{ty:.1}" stroke="#e0e0e0"/>"##, width - 20.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"#, left - 6.0, ty + 4.0);
    }
    let _ = writeln!(s, r##"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="#000"/>"##, top + plot_h);
    for (i, (label, mean, sd)) in bars.iter().enumerate() {
        let x = left + gap + i as f64 * (bar_w + gap);
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{:.1}" width="{bar_w}" height="{:.1}" fill="#4c72b0"/>"##,
            y(*mean),
            top + plot_h - y(*mean)
        );
        if let Some(sd) = sd {
            let cx = x + bar_w / 2.0;
            let _ = writeln!(
                s,
                r##"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="#000"/>"##,
                y(mean + sd),
                y(mean - sd)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{mean:.2}</text>"#,
            x + bar_w / 2.0,
            y(*mean) - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x + bar_w / 2.0,
            top + plot_h + 18.0,
            xml_escape(label)
        );
    }
    let cy = y(50.0);
    let _ = writeln!(
        s,
        r##"<line class="chance" x1="{left}" y1="{cy:.1}" x2="{:.1}" y2="{cy:.1}" stroke="#c44e52" stroke-dasharray="6 4"/>"##,
        width - 20.0
    );
    let _ = writeln!(s, r##"<text x="{:.1}" y="{:.1}" text-anchor="end" fill="#c44e52">chance 50%</text>"##, width - 22.0, cy - 4.0);
    s.push_str("</svg>\n");
    s
}

pub fn write_bar_chart(path: &Path, title: &str, bars: &[(String, f64, Option<f64>)]) -> Result<()> {
    write_text(path, &bar_chart_svg(title, bars))
}

/// Grid heatmap: red for positive values, blue for negative, scaled by the
/// largest magnitude. `outline` draws a rectangle over the grid.
pub fn heatmap_svg(values: &[f64], height: usize, width: usize, outline: Option<Rect>) -> String {
    let cell = 24.0;
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}">"#,
        width as f64 * cell,
        height as f64 * cell
    );
    for r in 0..height {
        for c in 0..width {
            let v = values[r * width + c];
            let a = if scale > 0.0 { v.abs() / scale } else { 0.0 };
            let fade = (255.0 * (1.0 - a)).round() as u8;
            let fill = if v >= 0.0 {
                format!("#ff{fade:02x}{fade:02x}")
            } else {
                format!("#{fade:02x}{fade:02x}ff")
            };
            let _ = writeln!(
                s,
                r#"<rect x="{:.0}" y="{:.0}" width="{cell}" height="{cell}" fill="{fill}"><title>{r},{c}: {v:.6}</title></rect>"#,
                c as f64 * cell,
                r as f64 * cell
            );
        }
    }
    if let Some(o) = outline {
        let _ = writeln!(
            s,
            r##"<rect x="{:.0}" y="{:.0}" width="{:.0}" height="{:.0}" fill="none" stroke="#000" stroke-width="2"/>"##,
            o.c0 as f64 * cell,
            o.r0 as f64 * cell,
            (o.c1 - o.c0) as f64 * cell,
            (o.r1 - o.r0) as f64 * cell
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_heatmap(path: &Path, values: &[f64], height: usize, width: usize, outline: Option<Rect>) -> Result<()> {
    write_text(path, &heatmap_svg(values, height, width, outline))
}

/// Scatter of the 2D embedding: colour by label, marker shape by gender
/// (circle M, square F, triangle X).
pub fn embedding_svg(study: &EmbeddingStudy) -> String {
    let (size, pad) = (480.0, 40.0);
    let bounds = |f: fn(&entpair_core::analysis::EmbeddingPoint) -> f64| {
        study.points.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (x0, x1) = bounds(|p| p.x);
    let (y0, y1) = bounds(|p| p.y);
    let map = |v: f64, lo: f64, hi: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" font-family="sans-serif" font-size="12">"#,
        size + 2.0 * pad + 120.0,
        size + 2.0 * pad
    );
    let marker = |s: &mut String, x: f64, y: f64, label: Label, gender: Gender| {
        let color = if label == Label::Ent { "#d62728" } else { "#1f77b4" };
        let _ = match gender {
            Gender::M => writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{color}" fill-opacity="0.7"/>"#),
            Gender::F => writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{color}" fill-opacity="0.7"/>"#,
                x - 4.0,
                y - 4.0
            ),
            Gender::X => writeln!(
                s,
                r#"<polygon points="{x:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}" fill-opacity="0.7"/>"#,
                y - 5.0,
                x - 5.0,
                y + 4.0,
                x + 5.0,
                y + 4.0
            ),
        };
    };
    for p in &study.points {
        let x = pad + size * map(p.x, x0, x1);
        let y = pad + size * (1.0 - map(p.y, y0, y1));
        marker(&mut s, x, y, p.label, p.gender);
    }
    let lx = size + 2.0 * pad;
    for (i, (label, gender, text)) in [
        (Label::Ent, Gender::M, "ENT male"),
        (Label::Ent, Gender::F, "ENT female"),
        (Label::Non, Gender::M, "NON male"),
        (Label::Non, Gender::F, "NON female"),
    ]
    .into_iter()
    .enumerate()
    {
        let y = pad + 20.0 * i as f64;
        marker(&mut s, lx, y, label, gender);
        let _ = writeln!(s, r#"<text x="{:.0}" y="{:.0}">{text}</text>"#, lx + 10.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="{:.0}">PC1 {:.1}%, PC2 {:.1}%</text>"#,
        size + 2.0 * pad - 10.0,
        100.0 * study.explained[0],
        100.0 * study.explained[1]
    );
    s.push_str("</svg>\n");
    s
}

pub fn write_embedding_svg(path: &Path, study: &EmbeddingStudy) -> Result<()> {
    write_text(path, &embedding_svg(study))
}

#[cfg(test)]
mod tests {
    use super::*;
    use entpair_core::stats::WelchTest;

    #[test]
    fn table2_formatting() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rows = vec![
            GroupSummary { group: "ai_model".into(), n_respondents: 10, n_decisions: None, mean: 79.505, sd: Some(0.7801), test: None },
            GroupSummary {
                group: "vc_angel".into(),
                n_respondents: 31,
                n_decisions: Some(310),
                mean: 43.8710,
                sd: Some(14.2957),
                test: Some(WelchTest { t: -13.9, df: 30.4, p: 1.2e-14 }),
            },
        ];
        write_table2_csv(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "group,n_respondents,n_decisions,mean,SD,t,p\nai_model,10,,79.50,0.78,,\nvc_angel,31,310,43.87,14.30,-13.90,1.20e-14\n"
        );
    }

    #[test]
    fn bar_chart_has_chance_line() {
        let svg = bar_chart_svg("Accuracy", &[("AI model".into(), 79.5, Some(0.8)), ("humans <all>".into(), 49.4, None)]);
        assert!(svg.contains(r#"class="chance""#));
        assert!(svg.contains("y1=\"190.0\""));
        assert!(svg.contains("humans &lt;all&gt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn heatmap_cells_and_outline() {
        let svg = heatmap_svg(&[0.0, 1.0, -0.5, 0.25], 2, 2, Some(Rect { r0: 0, r1: 1, c0: 1, c1: 2 }));
        assert_eq!(svg.matches("<rect").count(), 5);
        assert!(svg.contains("#ff0000"));
        assert!(svg.contains("#8080ff"));
    }
}
