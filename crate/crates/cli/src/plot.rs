//! Six panels per fitted spec, drawn from report data alone.

use std::path::{Path, PathBuf};

use mupscale_core::fit::eval_h;

use crate::report::{FitReport, SpecReport};
use crate::svg::{color, Plot, Series, Style};

/// File-system-safe stem for a spec and weight decay.
pub fn stem(r: &SpecReport) -> String {
    let name: String = r
        .name
        .replace('μ', "mu")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if r.lambda == 0.0 {
        name
    } else {
        format!("{name}_wd{:e}", r.lambda)
    }
}

fn width_grid(r: &SpecReport) -> Vec<f64> {
    let lo = r.widths.first().map_or(1.0, |w| w.width as f64).ln();
    let hi = r.widths.last().map_or(2.0, |w| w.width as f64).ln();
    (0..=64).map(|i| (lo + (hi - lo) * i as f64 / 64.0).exp()).collect()
}

fn loss_curves(r: &SpecReport) -> Plot {
    let mut series = Vec::new();
    for (i, c) in r.curves.iter().enumerate() {
        let col = color(i);
        series.push(Series { label: format!("n={}", c.width), points: c.raw.clone(), style: Style::Markers, color: col });
        series.push(Series { label: String::new(), points: c.interpolated.clone(), style: Style::Line, color: col });
    }
    Plot { title: format!("{}: loss vs log2 learning rate", r.name), xlabel: "nu".into(), ylabel: "loss".into(), series, ..Default::default() }
}

fn joint_fit(r: &SpecReport) -> Plot {
    let mut series = Vec::new();
    for (i, c) in r.curves.iter().enumerate() {
        let col = color(i);
        let n = c.width as f64;
        series.push(Series { label: format!("n={}", c.width), points: c.raw.clone(), style: Style::Markers, color: col });
        let xs: Vec<f64> = c.interpolated.iter().map(|p| p.0).collect();
        let pts = xs.iter().map(|&v| (v, r.joint.predict(v, n))).collect();
        series.push(Series { label: String::new(), points: pts, style: Style::Dashed, color: col });
    }
    Plot { title: format!("{}: joint surface", r.name), xlabel: "nu".into(), ylabel: "loss".into(), series, ..Default::default() }
}

fn normalized(r: &SpecReport) -> Plot {
    let series = r
        .normalized
        .iter()
        .enumerate()
        .map(|(i, c)| Series { label: format!("n={}", c.width), points: c.points.clone(), style: Style::Line, color: color(i) })
        .collect();
    Plot {
        title: format!("{}: normalized coordinates", r.name),
        xlabel: "normalized nu".into(),
        ylabel: "normalized loss".into(),
        series,
        ..Default::default()
    }
}

fn law(r: &SpecReport, title: &str, ylabel: &str, pts: Vec<(f64, f64)>, f: impl Fn(f64) -> f64, logy: bool) -> Plot {
    let curve = width_grid(r).into_iter().map(|n| (n, f(n))).collect();
    Plot {
        title: format!("{}: {title}", r.name),
        xlabel: "width".into(),
        ylabel: ylabel.into(),
        logx: true,
        logy,
        series: vec![
            Series { label: "measured".into(), points: pts, style: Style::Markers, color: color(0) },
            Series { label: "fit".into(), points: curve, style: Style::Line, color: color(3) },
        ],
    }
}

pub fn panels(r: &SpecReport) -> Vec<(&'static str, Plot)> {
    let w = |f: fn(&mupscale_core::fit::WidthSummary) -> f64| r.widths.iter().map(|s| (s.width as f64, f(s))).collect();
    vec![
        ("loss_curves", loss_curves(r)),
        ("joint_fit", joint_fit(r)),
        ("normalized", normalized(r)),
        ("loss_law", law(r, "optimal loss", "min loss", w(|s| s.l_min), |n| r.loss_law.eval(n), false)),
        ("nu_law", law(r, "optimal nu", "nu*", w(|s| s.nu_star), |n| r.nu_law.eval(n), false)),
        ("h_law", law(r, "curvature", "H", w(|s| s.h), |n| eval_h(&r.h_law, n), true)),
    ]
}

/// Writes every panel of every spec into `dir`; returns the paths written.
pub fn write_all(report: &FitReport, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for r in &report.specs {
        let s = stem(r);
        for (panel, plot) in panels(r) {
            let p = dir.join(format!("{s}_{panel}.svg"));
            std::fs::write(&p, plot.render())?;
            out.push(p);
        }
    }
    Ok(out)
}
