use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{io_err, ExperimentError};
use crate::evalproto::ExperimentReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// CMC curves as SVG text: rank on x, percent on y, one polyline and one
/// legend entry per report in input order.
pub fn render_cmc(reports: &[ExperimentReport]) -> Result<String, ExperimentError> {
    if reports.is_empty() {
        return Err(ExperimentError::Config("plot needs at least one report".into()));
    }
    let max_rank = reports.iter().map(|r| r.curve.len()).max().unwrap_or(1).max(1);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let x = |rank: usize| {
        if max_rank == 1 {
            LEFT
        } else {
            LEFT + pw * (rank - 1) as f64 / (max_rank - 1) as f64
        }
    };
    let y = |pct: f64| TOP + ph * (1.0 - pct.clamp(0.0, 100.0) / 100.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    for pct in [0, 20, 40, 60, 80, 100] {
        let yy = y(pct as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.2}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#dddddd"/>"##,
            LEFT + pw
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{pct}</text>"#,
            LEFT - 6.0,
            yy + 4.0
        );
    }
    let ticks: Vec<usize> = {
        let step = (max_rank / 5).max(1);
        let mut t: Vec<usize> = (1..=max_rank).step_by(step).collect();
        if t.last() != Some(&max_rank) {
            t.push(max_rank);
        }
        t
    };
    for k in ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{k}</text>"#,
            x(k),
            TOP + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">Rank</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">Recognition rate (%)</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (i, r) in reports.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = r
            .curve
            .values
            .iter()
            .enumerate()
            .map(|(k, &p)| format!("{:.2},{:.2}", x(k + 1), y(p)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&r.run_id)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn plot_cmc(reports: &[ExperimentReport], out: &Path) -> Result<(), ExperimentError> {
    let svg = render_cmc(reports)?;
    crate::write_bytes(out, svg.as_bytes()).map_err(io_err(out))
}

/// Loads reports from disk and plots them in the given order.
pub fn plot_cmc_files(paths: &[PathBuf], out: &Path) -> Result<(), ExperimentError> {
    let reports = paths
        .iter()
        .map(ExperimentReport::load)
        .collect::<Result<Vec<_>, _>>()?;
    plot_cmc(&reports, out)
}
