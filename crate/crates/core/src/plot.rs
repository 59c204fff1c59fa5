//! Deterministic SVG line charts of per-episode metric CSVs.

use std::fmt::Write as _;

use crate::metrics::EpisodeMetrics;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlotError {
    #[error("unknown panel `{0}`")]
    UnknownPanel(String),
    #[error("smoothing window must be at least 1")]
    Window,
    #[error("nothing to plot")]
    Empty,
}

/// A named figure panel and the columns it draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Panel {
    Reward,
    Quality,
    Stalls,
    Drops,
    Efficiency,
    Backhaul,
    Fluctuation,
}

impl Panel {
    pub const ALL: [Panel; 7] = [
        Panel::Reward,
        Panel::Quality,
        Panel::Stalls,
        Panel::Drops,
        Panel::Efficiency,
        Panel::Backhaul,
        Panel::Fluctuation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Panel::Reward => "reward",
            Panel::Quality => "quality",
            Panel::Stalls => "stalls",
            Panel::Drops => "drops",
            Panel::Efficiency => "efficiency",
            Panel::Backhaul => "backhaul",
            Panel::Fluctuation => "fluctuation",
        }
    }

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Panel::Reward => &["total_reward"],
            Panel::Quality => &["mean_quality"],
            Panel::Stalls => &["stall_rate"],
            Panel::Drops => &["mbs_drop_rate", "vehicle_drop_rate"],
            Panel::Efficiency => &["transmission_efficiency"],
            Panel::Backhaul => &["backhaul_bits"],
            Panel::Fluctuation => &["mean_quality_fluctuation"],
        }
    }

    fn y_label(self) -> &'static str {
        match self {
            Panel::Reward => "episode reward",
            Panel::Quality => "mean delivered bitrate (Mbps)",
            Panel::Stalls => "stall rate",
            Panel::Drops => "drop rate",
            Panel::Efficiency => "transmission efficiency",
            Panel::Backhaul => "backhaul volume (Mb)",
            Panel::Fluctuation => "quality fluctuation (Mbps)",
        }
    }
}

impl std::str::FromStr for Panel {
    type Err = PlotError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Panel::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| PlotError::UnknownPanel(s.to_string()))
    }
}

/// Trailing moving average over the defined points; undefined entries stay
/// undefined and are skipped by the window.
pub fn smooth(values: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            values[i]?;
            let lo = (i + 1).saturating_sub(window);
            let defined: Vec<f64> = values[lo..=i].iter().flatten().copied().collect();
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        })
        .collect()
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Series {
    label: String,
    dashed: bool,
    color: usize,
    points: Vec<(f64, Option<f64>)>,
}

/// Renders one panel from labelled runs. Output depends only on the inputs.
pub fn render_panel(panel: Panel, runs: &[(String, Vec<EpisodeMetrics>)], window: usize) -> Result<String, PlotError> {
    if window == 0 {
        return Err(PlotError::Window);
    }
    let mut series = Vec::new();
    for (r, (label, rows)) in runs.iter().enumerate() {
        for (c, column) in panel.columns().iter().enumerate() {
            let raw: Vec<Option<f64>> = rows.iter().map(|m| m.field(column)).collect();
            let ys = smooth(&raw, window);
            let label = if panel.columns().len() > 1 {
                format!("{label} {}", column.trim_end_matches("_rate").replace('_', " "))
            } else {
                label.clone()
            };
            series.push(Series {
                label,
                dashed: c > 0,
                color: r % COLORS.len(),
                points: rows.iter().map(|m| m.episode as f64).zip(ys).collect(),
            });
        }
    }
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().filter_map(|p| p.1));
    let (x0, x1) = bounds(xs).ok_or(PlotError::Empty)?;
    let (y0, y1) = bounds(ys).ok_or(PlotError::Empty)?;
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        panel.name()
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in 0..=5 {
        let f = f64::from(t) / 5.0;
        let (x, y) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            svg,
            r##"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="#ddd"/><text x="{0:.1}" y="{3:.1}" text-anchor="middle">{4}</text>"##,
            sx(x),
            TOP,
            TOP + ph,
            TOP + ph + 16.0,
            tick(x)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="#ddd"/><text x="{3:.1}" y="{4:.1}" text-anchor="end">{5}</text>"##,
            LEFT,
            sy(y),
            LEFT + pw,
            LEFT - 6.0,
            sy(y) + 4.0,
            tick(y)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">episode</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 18.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0:.1}" text-anchor="middle" transform="rotate(-90 16 {0:.1})">{1}</text>"#,
        TOP + ph / 2.0,
        panel.y_label()
    );
    for (n, s) in series.iter().enumerate() {
        let dash = if s.dashed { r#" stroke-dasharray="5 3""# } else { "" };
        // undefined points break the line into segments
        for segment in s.points.split(|p| p.1.is_none()).filter(|seg| !seg.is_empty()) {
            let pts: Vec<String> = segment
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y.unwrap_or_default())))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
                COLORS[s.color],
                pts.join(" ")
            );
        }
        let ly = TOP + 14.0 + 18.0 * n as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="{2}" stroke-width="2"{dash}/><text x="{3:.1}" y="{4:.1}">{5}</text>"#,
            ly,
            lx + 22.0,
            COLORS[s.color],
            lx + 28.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.filter(|v| v.is_finite()).fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

fn pad(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let m = 0.05 * (hi - lo);
        (lo - m, hi + m)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::EpisodeTotals;

    fn rows(n: usize) -> Vec<EpisodeMetrics> {
        (0..n)
            .map(|e| {
                let t = EpisodeTotals {
                    slots: 10,
                    pushed_chunks: if e == 2 { 0 } else { 10 },
                    delivered_chunks: if e == 2 { 0 } else { e as u64 % 10 },
                    reward: e as f64,
                    active_vehicle_slots: 10,
                    ..Default::default()
                };
                t.finish(e)
            })
            .collect()
    }

    #[test]
    fn smoothing_window() {
        let v = [Some(1.0), Some(3.0), None, Some(5.0)];
        assert_eq!(smooth(&v, 1), v.to_vec());
        assert_eq!(smooth(&v, 2), vec![Some(1.0), Some(2.0), None, Some(5.0)]);
        assert_eq!(smooth(&v, 3), vec![Some(1.0), Some(2.0), None, Some(4.0)]);
    }

    #[test]
    fn rendering_is_deterministic() {
        let runs = vec![("a".to_string(), rows(20)), ("b<c".to_string(), rows(15))];
        for p in Panel::ALL {
            if p == Panel::Fluctuation {
                assert_eq!(render_panel(p, &runs, 3), Err(PlotError::Empty));
                continue;
            }
            let a = render_panel(p, &runs, 3).unwrap();
            assert_eq!(a, render_panel(p, &runs, 3).unwrap());
            assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        }
        let eff = render_panel(Panel::Efficiency, &runs, 1).unwrap();
        // episode 2 is undefined, splitting each run into two segments
        assert_eq!(eff.matches("<polyline").count(), 4);
        assert!(eff.contains("b&lt;c"));
    }

    #[test]
    fn panel_names_parse() {
        for p in Panel::ALL {
            assert_eq!(p.name().parse::<Panel>().unwrap(), p);
        }
        assert!("bogus".parse::<Panel>().is_err());
        assert_eq!(render_panel(Panel::Reward, &[], 0), Err(PlotError::Window));
    }
}
