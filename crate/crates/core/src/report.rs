//! SVG condition curves: one line per condition with a CI band, plus the
//! aggregate in black.

use std::fmt::Write as _;

use thiserror::Error;

use crate::analysis::TrajectorySeries;
use crate::stimuli::Condition;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to plot")]
    EmptySeries,
    #[error("series {0} does not share the common step axis")]
    MisalignedAxis(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub log_x: bool,
    pub title: String,
    pub width: f64,
    pub height: f64,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions {
            log_x: true,
            title: String::new(),
            width: 720.0,
            height: 440.0,
        }
    }
}

const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 130.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 48.0;

fn color(condition: Option<Condition>) -> &'static str {
    const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];
    match condition {
        None => "#000000",
        Some(c) => {
            let rank = Condition::all().iter().position(|x| *x == c).unwrap_or(0);
            PALETTE[rank % PALETTE.len()]
        }
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
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

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    lo: f64,
    hi: f64,
    log_x: bool,
}

impl Frame {
    fn tx(&self, step: u64) -> f64 {
        let v = if self.log_x { (1.0 + step as f64).ln() } else { step as f64 };
        if self.hi > self.lo {
            self.x0 + (v - self.lo) / (self.hi - self.lo) * (self.x1 - self.x0)
        } else {
            (self.x0 + self.x1) / 2.0
        }
    }

    fn ty(&self, acc: f64) -> f64 {
        self.y1 - acc.clamp(0.0, 1.0) * (self.y1 - self.y0)
    }
}

fn series_label(s: &TrajectorySeries) -> String {
    s.condition.map_or_else(|| "mean".to_string(), |c| c.label())
}

/// Render condition series and their aggregate. All series must share one
/// step axis. Output is deterministic for identical input.
pub fn emit_plot(
    series: &[TrajectorySeries],
    aggregate: &TrajectorySeries,
    opts: &PlotOptions,
) -> Result<String, ReportError> {
    if series.is_empty() {
        return Err(ReportError::EmptySeries);
    }
    let axis = series[0].steps();
    if axis.is_empty() {
        return Err(ReportError::EmptySeries);
    }
    for s in series.iter().chain(std::iter::once(aggregate)) {
        if s.steps() != axis {
            return Err(ReportError::MisalignedAxis(s.label()));
        }
    }
    let val = |step: u64| if opts.log_x { (1.0 + step as f64).ln() } else { step as f64 };
    let frame = Frame {
        x0: MARGIN_LEFT,
        x1: opts.width - MARGIN_RIGHT,
        y0: MARGIN_TOP,
        y1: opts.height - MARGIN_BOTTOM,
        lo: val(axis[0]),
        hi: val(*axis.last().expect("nonempty")),
        log_x: opts.log_x,
    };

    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}">"#,
        opts.width, opts.height, opts.width, opts.height
    );
    let _ = writeln!(w, r##"<rect x="0" y="0" width="{:.0}" height="{:.0}" fill="#ffffff"/>"##, opts.width, opts.height);
    if !opts.title.is_empty() {
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
            (frame.x0 + frame.x1) / 2.0,
            escape(&opts.title)
        );
    }

    // axes
    let _ = writeln!(w, r##"<g class="axes" stroke="#444444" stroke-width="1">"##);
    let _ = writeln!(w, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, frame.x0, frame.y1, frame.x1, frame.y1);
    let _ = writeln!(w, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, frame.x0, frame.y0, frame.x0, frame.y1);
    let _ = writeln!(w, "</g>");
    let _ = writeln!(w, r#"<g class="ticks" font-size="10">"#);
    for k in 0..=4 {
        let acc = k as f64 / 4.0;
        let y = frame.ty(acc);
        let _ = writeln!(w, r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##, frame.x0, frame.x1);
        let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{acc:.2}</text>"#, frame.x0 - 6.0, y + 3.0);
    }
    let stride = axis.len().div_ceil(10).max(1);
    for (i, step) in axis.iter().enumerate() {
        if i % stride != 0 && i + 1 != axis.len() {
            continue;
        }
        let x = frame.tx(*step);
        let _ = writeln!(w, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{step}</text>"#, frame.y1 + 14.0);
    }
    let _ = writeln!(w, "</g>");
    let x_title = if opts.log_x { "step (log scale)" } else { "step" };
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{x_title}</text>"#,
        (frame.x0 + frame.x1) / 2.0,
        opts.height - 10.0
    );
    let _ = writeln!(
        w,
        r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">accuracy</text>"#,
        (frame.y0 + frame.y1) / 2.0,
        (frame.y0 + frame.y1) / 2.0
    );

    // bands under lines
    for s in series {
        if s.points.len() < 2 {
            continue;
        }
        let mut d = String::new();
        for (i, p) in s.points.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, frame.tx(p.step), frame.ty(p.ci_high));
        }
        for p in s.points.iter().rev() {
            let _ = write!(d, "L{:.2},{:.2} ", frame.tx(p.step), frame.ty(p.ci_low));
        }
        d.push('Z');
        let _ = writeln!(
            w,
            r#"<path class="band" data-series="{}" d="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
            escape(&series_label(s)),
            d,
            color(s.condition)
        );
    }

    for s in series.iter().chain(std::iter::once(aggregate)) {
        let c = color(s.condition);
        let label = escape(&series_label(s));
        let width = if s.condition.is_none() { 2.5 } else { 1.5 };
        if s.points.len() == 1 {
            let p = &s.points[0];
            let _ = writeln!(
                w,
                r#"<circle class="marker" data-series="{label}" cx="{:.2}" cy="{:.2}" r="3.5" fill="{c}"/>"#,
                frame.tx(p.step),
                frame.ty(p.accuracy)
            );
            continue;
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", frame.tx(p.step), frame.ty(p.accuracy)))
            .collect();
        let _ = writeln!(
            w,
            r#"<polyline class="series" data-series="{label}" points="{}" fill="none" stroke="{c}" stroke-width="{width}"/>"#,
            pts.join(" ")
        );
    }

    // legend
    let _ = writeln!(w, r#"<g class="legend" font-size="11">"#);
    for (i, s) in series.iter().chain(std::iter::once(aggregate)).enumerate() {
        let y = frame.y0 + 10.0 + i as f64 * 16.0;
        let x = frame.x1 + 14.0;
        let _ = writeln!(
            w,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"/>"#,
            x + 18.0,
            color(s.condition)
        );
        let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + 24.0, y + 4.0, escape(&series_label(s)));
    }
    let _ = writeln!(w, "</g>");
    let _ = writeln!(w, "</svg>");
    Ok(svg)
}
