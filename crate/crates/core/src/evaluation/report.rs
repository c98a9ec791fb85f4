use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use plotters::prelude::*;
use plotters::style::FontStyle;
use serde::{Deserialize, Serialize};

use super::gating::GatingReport;
use super::metrics::{aggregate, class_name, MeanSe, TrialMetrics};
use crate::error::{Error, Result};
use crate::ingest::Label;
use crate::models::Strategy;

pub const AUC_DEFINITION: &str =
    "AUC = unweighted macro average of one-vs-rest ROC AUC over softmax class probabilities; tied scores count 1/2 per pair";

/// Panel files: the macro-averaged overview, then one per class.
pub const PLOT_FILES: [&str; 5] = ["overall.png", "empty.png", "midden.png", "mound.png", "water.png"];

/// One line of the metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub strategy: Strategy,
    pub trial: usize,
    pub metric: String,
    pub class: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub plots: Vec<PathBuf>,
    pub gating_table: Option<PathBuf>,
}

fn records(metrics: &[TrialMetrics]) -> Vec<MetricRecord> {
    let mut out = Vec::new();
    for t in metrics {
        let mut push = |metric: &str, class: Option<usize>, value: f64| {
            out.push(MetricRecord {
                strategy: t.strategy,
                trial: t.trial,
                metric: metric.to_string(),
                class: class_name(class),
                value,
            })
        };
        push("auc", None, t.auc);
        push("precision", None, t.macro_precision());
        push("recall", None, t.macro_recall());
        for (c, pr) in t.per_class.iter().enumerate() {
            push("precision", Some(c), pr.precision);
            push("recall", Some(c), pr.recall);
        }
    }
    out
}

/// Mean with 2 SE, or just the mean (SE `None`) for a single trial.
fn summarize(values: &[f64]) -> (f64, Option<f64>) {
    match aggregate(values) {
        Ok(MeanSe { mean, two_se, .. }) => (mean, Some(two_se)),
        Err(_) => (values[0], None),
    }
}

struct Panel {
    title: String,
    /// (metric name, per strategy (mean, 2SE))
    groups: Vec<(String, Vec<(Strategy, f64, Option<f64>)>)>,
}

fn panels(by_strategy: &BTreeMap<Strategy, Vec<&TrialMetrics>>) -> Vec<Panel> {
    let column = |f: &dyn Fn(&TrialMetrics) -> f64| -> Vec<(Strategy, f64, Option<f64>)> {
        by_strategy
            .iter()
            .map(|(&s, ts)| {
                let (m, se) = summarize(&ts.iter().map(|t| f(t)).collect::<Vec<_>>());
                (s, m, se)
            })
            .collect()
    };
    let mut out = vec![Panel {
        title: "Macro-averaged over all classes".into(),
        groups: vec![
            ("AUC".into(), column(&|t| t.auc)),
            ("Precision".into(), column(&|t| t.macro_precision())),
            ("Recall".into(), column(&|t| t.macro_recall())),
        ],
    }];
    for label in Label::ALL {
        let c = label.index();
        out.push(Panel {
            title: format!("Class: {label}"),
            groups: vec![
                ("Precision".into(), column(&|t| t.per_class[c].precision)),
                ("Recall".into(), column(&|t| t.per_class[c].recall)),
            ],
        });
    }
    out
}

const FONT_PATHS: [&str; 4] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/System/Library/Fonts/Supplemental/Arial.ttf",
];

/// Registers a system sans-serif font for plot text; false if none is found.
fn font_available() -> bool {
    static FOUND: OnceLock<bool> = OnceLock::new();
    *FOUND.get_or_init(|| {
        for path in FONT_PATHS {
            if let Ok(bytes) = std::fs::read(path) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        log::warn!("no system font found; plots are drawn without text");
        false
    })
}

fn strategy_color(s: Strategy) -> RGBColor {
    match s {
        Strategy::Early => RGBColor(31, 119, 180),
        Strategy::Late => RGBColor(255, 127, 14),
        Strategy::Moe => RGBColor(44, 160, 44),
    }
}

fn draw_panel(path: &Path, panel: &Panel) -> Result<()> {
    let err = |e: &dyn std::fmt::Display| Error::Report(format!("{}: {e}", path.display()));
    let text = font_available();
    let root = BitMapBackend::new(path, (900, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let n_groups = panel.groups.len();
    let mut builder = ChartBuilder::on(&root);
    builder.margin(20).x_label_area_size(40).y_label_area_size(50);
    if text {
        builder.caption(&panel.title, ("sans-serif", 24));
    }
    let mut chart = builder
        .build_cartesian_2d(0f64..n_groups as f64, 0f64..1.05f64)
        .map_err(|e| err(&e))?;
    if text {
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(0)
            .y_desc("mean ± 2 SE")
            .draw()
            .map_err(|e| err(&e))?;
    }
    for (g, (name, bars)) in panel.groups.iter().enumerate() {
        let width = 0.8 / bars.len().max(1) as f64;
        for (k, &(strategy, mean, se)) in bars.iter().enumerate() {
            let x0 = g as f64 + 0.1 + k as f64 * width;
            let x1 = x0 + width * 0.9;
            let color = strategy_color(strategy);
            let rect = Rectangle::new([(x0, 0.0), (x1, mean)], color.filled());
            chart.draw_series(std::iter::once(rect)).map_err(|e| err(&e))?;
            if let Some(se) = se {
                let xc = (x0 + x1) / 2.0;
                let (lo, hi) = ((mean - se).max(0.0), (mean + se).min(1.05));
                let cap = width * 0.2;
                let lines = [
                    vec![(xc, lo), (xc, hi)],
                    vec![(xc - cap, lo), (xc + cap, lo)],
                    vec![(xc - cap, hi), (xc + cap, hi)],
                ];
                chart
                    .draw_series(lines.into_iter().map(|pts| PathElement::new(pts, BLACK.stroke_width(2))))
                    .map_err(|e| err(&e))?;
            }
        }
        if text {
            let (px, py) = chart.backend_coord(&(g as f64 + 0.5, 0.0));
            root.draw(&Text::new(name.clone(), (px - 30, py + 10), ("sans-serif", 18)))
                .map_err(|e| err(&e))?;
        }
    }
    if text {
        if let Some((_, bars)) = panel.groups.first() {
            for (k, &(strategy, _, _)) in bars.iter().enumerate() {
                let y = 40 + 22 * k as i32;
                let color = strategy_color(strategy);
                root.draw(&Rectangle::new([(800, y), (814, y + 14)], color.filled()))
                    .map_err(|e| err(&e))?;
                root.draw(&Text::new(strategy.name().to_string(), (820, y), ("sans-serif", 16)))
                    .map_err(|e| err(&e))?;
            }
        }
    }
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

fn summary_text(by_strategy: &BTreeMap<Strategy, Vec<&TrialMetrics>>) -> String {
    let mut out = format!("# {AUC_DEFINITION}\n");
    out.push_str("# values are mean ± 2 SE over trials (SE = sample std / sqrt(n)); n = 1 shows the mean only\n");
    let fmt = |values: Vec<f64>| match summarize(&values) {
        (m, Some(se)) => format!("{m:.3} ± {se:.3}"),
        (m, None) => format!("{m:.3}"),
    };
    for (strategy, trials) in by_strategy {
        let _ = writeln!(out, "\n[{strategy}] trials: {}", trials.len());
        let _ = writeln!(out, "  auc (macro)        {}", fmt(trials.iter().map(|t| t.auc).collect()));
        let _ = writeln!(out, "  precision (macro)  {}", fmt(trials.iter().map(|t| t.macro_precision()).collect()));
        let _ = writeln!(out, "  recall (macro)     {}", fmt(trials.iter().map(|t| t.macro_recall()).collect()));
        for label in Label::ALL {
            let c = label.index();
            let _ = writeln!(
                out,
                "  {:<8} precision {}  recall {}",
                label.name(),
                fmt(trials.iter().map(|t| t.per_class[c].precision).collect()),
                fmt(trials.iter().map(|t| t.per_class[c].recall).collect()),
            );
        }
    }
    out
}

/// Writes `metrics.jsonl`, `summary.txt`, the five panel plots and, when
/// given, `gating_table.txt`. Nothing is written if `metrics` is empty.
pub fn emit_report(metrics: &[TrialMetrics], gating: Option<&GatingReport>, out_dir: &Path) -> Result<ReportFiles> {
    if metrics.is_empty() {
        return Err(Error::Report("no completed trials to report".into()));
    }
    if let Some(t) = metrics.iter().find(|t| t.per_class.len() != Label::ALL.len()) {
        return Err(Error::Report(format!(
            "{} trial {} has {} classes, expected {}",
            t.strategy,
            t.trial,
            t.per_class.len(),
            Label::ALL.len()
        )));
    }
    let mut by_strategy: BTreeMap<Strategy, Vec<&TrialMetrics>> = BTreeMap::new();
    for t in metrics {
        by_strategy.entry(t.strategy).or_default().push(t);
    }

    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let staging = out_dir.join(".report-staging");
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(Error::io(&staging))?;
    }
    std::fs::create_dir(&staging).map_err(Error::io(&staging))?;
    let written = (|| -> Result<Vec<&'static str>> {
        let mut names = vec!["metrics.jsonl", "summary.txt"];
        let mut lines = String::new();
        for r in records(metrics) {
            lines.push_str(&serde_json::to_string(&r)?);
            lines.push('\n');
        }
        let path = staging.join("metrics.jsonl");
        std::fs::write(&path, lines).map_err(Error::io(&path))?;
        let path = staging.join("summary.txt");
        std::fs::write(&path, summary_text(&by_strategy)).map_err(Error::io(&path))?;
        for (file, panel) in PLOT_FILES.iter().zip(panels(&by_strategy)) {
            draw_panel(&staging.join(file), &panel)?;
            names.push(file);
        }
        if let Some(g) = gating {
            let path = staging.join("gating_table.txt");
            let body = format!(
                "Mixture of experts gating weights per modality, mean ± 2 SE over pooled (image, trial) vectors\n\n{}",
                g.to_table()
            );
            std::fs::write(&path, body).map_err(Error::io(&path))?;
            names.push("gating_table.txt");
        }
        Ok(names)
    })();
    let names = match written {
        Ok(n) => n,
        Err(e) => {
            let _ = std::fs::remove_dir_all(&staging);
            return Err(e);
        }
    };
    for name in &names {
        let (from, to) = (staging.join(name), out_dir.join(name));
        std::fs::rename(&from, &to).map_err(Error::io(&to))?;
    }
    std::fs::remove_dir_all(&staging).map_err(Error::io(&staging))?;
    Ok(ReportFiles {
        metrics: out_dir.join("metrics.jsonl"),
        summary: out_dir.join("summary.txt"),
        plots: PLOT_FILES.iter().map(|f| out_dir.join(f)).collect(),
        gating_table: gating.map(|_| out_dir.join("gating_table.txt")),
    })
}
