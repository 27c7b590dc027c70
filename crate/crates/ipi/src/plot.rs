//! Hand-emitted SVG 1.1 line charts for trajectory and training-history
//! CSVs. No timestamps, no randomness: identical input bytes produce
//! identical output bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sysmodels::Trajectory;
use crate::train::TrainingHistory;

/// Which CSV schema a plot consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// `k,x1,x2,u,du,stage_cost,value_est` → series x₁, x₂, ‖x‖, u, Δu.
    Trajectory,
    /// `iteration,p11,p12,p22,delta_frobenius,probe_value_max` → kernel
    /// entries and the iterate delta.
    History,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 32.0;
const MARGIN_B: f64 = 48.0;
const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        return format!("{v:.1e}");
    }
    let mut s = format!("{v:.3}");
    while s.contains('.') && (s.ends_with('0') || s.ends_with('.')) {
        s.pop();
    }
    s
}

fn render(title: &str, x_label: &str, series: &[Series]) -> Result<String> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if pts.is_empty() {
        return Err(Error::Input("nothing to plot: no finite data points".into()));
    }
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &pts {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    if x_max == x_min {
        x_max += 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    let (y_min, y_max) = if y_max == y_min {
        (y_min - 1.0, y_max + 1.0)
    } else {
        (y_min - pad, y_max + pad)
    };

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| MARGIN_T + (y_max - y) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = write!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{:.1}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#,
        MARGIN_L + plot_w / 2.0
    );

    // Gridlines and tick labels, five per axis.
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x_min + f * (x_max - x_min);
        let yv = y_min + f * (y_max - y_min);
        let gx = sx(xv);
        let gy = sy(yv);
        let _ = write!(
            svg,
            r##"<line x1="{gx:.2}" y1="{MARGIN_T}" x2="{gx:.2}" y2="{:.2}" stroke="#dddddd" stroke-width="1"/>"##,
            MARGIN_T + plot_h
        );
        let _ = write!(
            svg,
            r##"<line x1="{MARGIN_L}" y1="{gy:.2}" x2="{:.2}" y2="{gy:.2}" stroke="#dddddd" stroke-width="1"/>"##,
            MARGIN_L + plot_w
        );
        let _ = write!(
            svg,
            r#"<text x="{gx:.2}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            MARGIN_T + plot_h + 18.0,
            fmt_tick(xv)
        );
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            MARGIN_L - 8.0,
            gy + 4.0,
            fmt_tick(yv)
        );
    }

    // Axes on top of the grid.
    let _ = write!(
        svg,
        r#"<line x1="{MARGIN_L}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="1"/>"#,
        MARGIN_T + plot_h,
        MARGIN_L + plot_w,
        MARGIN_T + plot_h
    );
    let _ = write!(
        svg,
        r#"<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{:.1}" stroke="black" stroke-width="1"/>"#,
        MARGIN_T + plot_h
    );
    let _ = write!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{x_label}</text>"#,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 10.0
    );

    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut coords = String::new();
        for (x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                let _ = write!(coords, "{:.2},{:.2} ", sx(*x), sy(*y));
            }
        }
        let coords = coords.trim_end();
        if !coords.is_empty() {
            let _ = write!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>"#
            );
        }
        // Legend entry.
        let ly = MARGIN_T + 16.0 + 20.0 * idx as f64;
        let lx = WIDTH - MARGIN_R + 12.0;
        let _ = write!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            lx + 22.0
        );
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 28.0,
            ly + 4.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// State/input response chart: x₁, x₂, ‖x‖, u, Δu against the step index.
pub fn plot_trajectory(traj: &Trajectory) -> Result<String> {
    if traj.rows.is_empty() {
        return Err(Error::Input("trajectory has no rows to plot".into()));
    }
    let mut x1 = Vec::new();
    let mut x2 = Vec::new();
    let mut norm = Vec::new();
    let mut u = Vec::new();
    let mut du = Vec::new();
    for row in &traj.rows {
        if row.x.len() != 2 || row.u.len() != 1 {
            return Err(Error::Input(
                "trajectory plots cover two-state, one-input systems".into(),
            ));
        }
        let k = row.k as f64;
        x1.push((k, row.x[0]));
        x2.push((k, row.x[1]));
        norm.push((k, row.x.norm()));
        u.push((k, row.u[0]));
        du.push((k, row.du[0]));
    }
    let series = vec![
        Series { label: "x1".into(), points: x1 },
        Series { label: "x2".into(), points: x2 },
        Series { label: "|x|".into(), points: norm },
        Series { label: "u".into(), points: u },
        Series { label: "du".into(), points: du },
    ];
    render("state and input response", "k", &series)
}

/// Training-curve chart: kernel entries and the Frobenius delta against the
/// iteration index. The initial evaluation has no delta, so that polyline
/// starts one iteration later.
pub fn plot_history(history: &TrainingHistory) -> Result<String> {
    if history.records.is_empty() {
        return Err(Error::Input("training history has no records to plot".into()));
    }
    let mut p11 = Vec::new();
    let mut p12 = Vec::new();
    let mut p22 = Vec::new();
    let mut delta = Vec::new();
    for r in &history.records {
        if r.kernel.dim() != 2 {
            return Err(Error::Input(
                "history plots cover two-state kernels".into(),
            ));
        }
        let i = r.iteration as f64;
        p11.push((i, r.kernel.p[(0, 0)]));
        p12.push((i, r.kernel.p[(0, 1)]));
        p22.push((i, r.kernel.p[(1, 1)]));
        if r.delta_frobenius.is_finite() {
            delta.push((i, r.delta_frobenius));
        }
    }
    let series = vec![
        Series { label: "p11".into(), points: p11 },
        Series { label: "p12".into(), points: p12 },
        Series { label: "p22".into(), points: p22 },
        Series { label: "|dP|".into(), points: delta },
    ];
    render("training iterates", "iteration", &series)
}

/// Reads a CSV of the given kind and writes the corresponding SVG.
pub fn emit_plot(csv_path: &Path, kind: PlotKind, out_path: &Path) -> Result<()> {
    let file = std::fs::File::open(csv_path)?;
    let svg = match kind {
        PlotKind::Trajectory => plot_trajectory(&Trajectory::read_csv(file)?)?,
        PlotKind::History => plot_history(&TrainingHistory::read_csv(file)?)?,
    };
    std::fs::write(out_path, svg)?;
    Ok(())
}
