//! CSV tables and SVG charts for experiment results.
//!
//! Columns:
//! - `roster.csv`: noise, agent_a, agent_b, seat, wins, games, invalid_preds
//!   (one row per agent and seat; `agent_a` is the agent the row describes)
//! - `sweep.csv`: match_size, win_rate, games, seed
//! - `validity.csv`: ply, valid, total
//! - `game_lengths.csv`: game, plies, status, model_moves, invalid_preds, aborted
//! - `loss.csv`: step, loss

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{ArenaError, ChessGameSummary, MatchReport, SweepPoint, ValidityRow};

fn noise_text(noise: Option<f64>) -> String {
    noise.map(|n| format!("{n:.2}")).unwrap_or_default()
}

pub fn roster_csv(reports: &[MatchReport]) -> String {
    let mut out = String::from("noise,agent_a,agent_b,seat,wins,games,invalid_preds\n");
    for r in reports {
        for (me, other) in [(&r.a, &r.b), (&r.b, &r.a)] {
            for (seat, s) in [("first", &me.first), ("second", &me.second)] {
                let _ = writeln!(
                    out,
                    "{},{},{},{seat},{},{},{}",
                    noise_text(r.noise),
                    me.label,
                    other.label,
                    s.wins,
                    s.games,
                    s.invalid_preds
                );
            }
        }
    }
    out
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("match_size,win_rate,games,seed\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{:.6},{},{}",
            p.match_size, p.win_rate, p.games, p.seed
        );
    }
    out
}

pub fn validity_csv(rows: &[ValidityRow]) -> String {
    let mut out = String::from("ply,valid,total\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.ply, r.valid, r.total);
    }
    out
}

pub fn lengths_csv(games: &[ChessGameSummary]) -> String {
    let mut out = String::from("game,plies,status,model_moves,invalid_preds,aborted\n");
    for (i, g) in games.iter().enumerate() {
        let status = serde_json::to_value(g.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{status},{},{},{}",
            i + 1,
            g.plies,
            g.model_moves,
            g.invalid_preds,
            g.aborted.is_some()
        );
    }
    out
}

pub fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{},{l:.6}", i + 1);
    }
    out
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn svg_open(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        escape(y_label)
    );
    s
}

fn y_axis(s: &mut String, y_min: f64, y_max: f64) {
    let plot_h = HEIGHT - TOP - BOTTOM;
    for i in 0..=5 {
        let v = y_min + (y_max - y_min) * i as f64 / 5.0;
        let y = HEIGHT - BOTTOM - plot_h * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            WIDTH - RIGHT,
            LEFT - 6.0,
            y + 4.0,
            tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/><line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        HEIGHT - BOTTOM,
        HEIGHT - BOTTOM,
        WIDTH - RIGHT,
        HEIGHT - BOTTOM
    );
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || (v.fract() == 0.0 && v.abs() >= 1.0) {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let x = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            y - 10.0,
            PALETTE[i % PALETTE.len()],
            x + 18.0,
            y,
            escape(name)
        );
    }
}

/// A named polyline.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Line chart with a linear x axis. `y_range` fixes the vertical extent.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    y_range: Option<(f64, f64)>,
) -> String {
    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .collect();
    let (x_min, x_max) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.0), b.max(p.0))
        });
    let (x_min, x_max) = if all.is_empty() {
        (0.0, 1.0)
    } else if x_min == x_max {
        (x_min - 1.0, x_max + 1.0)
    } else {
        (x_min, x_max)
    };
    let (y_min, y_max) = y_range.unwrap_or_else(|| {
        let hi = all.iter().map(|p| p.1).fold(0.0, f64::max);
        (0.0, if hi > 0.0 { hi * 1.1 } else { 1.0 })
    });
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + plot_w * (x - x_min) / (x_max - x_min);
    let sy = |y: f64| HEIGHT - BOTTOM - plot_h * ((y - y_min) / (y_max - y_min)).clamp(0.0, 1.0);
    let mut s = svg_open(title, x_label, y_label);
    y_axis(&mut s, y_min, y_max);
    for i in 0..=5 {
        let v = x_min + (x_max - x_min) * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(v),
            HEIGHT - BOTTOM + 18.0,
            tick(v)
        );
    }
    for (i, series) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = series
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for &(x, y) in &series.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
    }
    let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

/// Grouped bar chart: one group per category, one bar per series.
pub fn bar_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    categories: &[String],
    series: &[(String, Vec<f64>)],
    y_max: Option<f64>,
) -> String {
    let hi = y_max.unwrap_or_else(|| {
        let m = series
            .iter()
            .flat_map(|s| s.1.iter().copied())
            .fold(0.0, f64::max);
        if m > 0.0 {
            m * 1.1
        } else {
            1.0
        }
    });
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let mut s = svg_open(title, x_label, y_label);
    y_axis(&mut s, 0.0, hi);
    let groups = categories.len().max(1) as f64;
    let group_w = plot_w / groups;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (g, cat) in categories.iter().enumerate() {
        let gx = LEFT + group_w * g as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            gx + group_w / 2.0,
            HEIGHT - BOTTOM + 18.0,
            escape(cat)
        );
        for (i, (_, values)) in series.iter().enumerate() {
            let v = values.get(g).copied().unwrap_or(0.0);
            let h = plot_h * (v / hi).clamp(0.0, 1.0);
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
                gx + group_w * 0.1 + bar_w * i as f64,
                HEIGHT - BOTTOM - h,
                bar_w,
                PALETTE[i % PALETTE.len()]
            );
        }
    }
    let names: Vec<&str> = series.iter().map(|s| s.0.as_str()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, ArenaError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

/// Tournament grid: CSV plus a bar chart of each agent's overall win rate per
/// noise level.
pub fn write_roster_report(
    dir: &Path,
    prefix: &str,
    reports: &[MatchReport],
) -> Result<Vec<PathBuf>, ArenaError> {
    if reports.is_empty() {
        return Err(ArenaError::Config("no tournament results to report".into()));
    }
    let mut rates: BTreeMap<String, BTreeMap<String, (u64, u64)>> = BTreeMap::new();
    let mut levels: Vec<String> = Vec::new();
    for r in reports {
        let level = noise_text(r.noise);
        if !levels.contains(&level) {
            levels.push(level.clone());
        }
        for side in [&r.a, &r.b] {
            let e = rates
                .entry(side.label.clone())
                .or_default()
                .entry(level.clone())
                .or_default();
            e.0 += side.wins();
            e.1 += side.games();
        }
    }
    let series: Vec<(String, Vec<f64>)> = rates
        .iter()
        .map(|(agent, by_level)| {
            let values = levels
                .iter()
                .map(|l| {
                    by_level.get(l).map_or(
                        0.0,
                        |&(w, g)| if g == 0 { 0.0 } else { w as f64 / g as f64 },
                    )
                })
                .collect();
            (agent.clone(), values)
        })
        .collect();
    let svg = bar_chart(
        &format!("{prefix}: win rate by noise level"),
        "noise level",
        "win rate",
        &levels,
        &series,
        Some(1.0),
    );
    Ok(vec![
        write(dir, &format!("{prefix}.csv"), &roster_csv(reports))?,
        write(dir, &format!("{prefix}.svg"), &svg)?,
    ])
}

/// Match-size curve.
pub fn write_sweep_report(dir: &Path, points: &[SweepPoint]) -> Result<Vec<PathBuf>, ArenaError> {
    if points.is_empty() {
        return Err(ArenaError::Config("no sweep points to report".into()));
    }
    let series = Series {
        name: "model vs random".into(),
        points: points
            .iter()
            .map(|p| (p.match_size as f64, p.win_rate))
            .collect(),
    };
    let svg = line_chart(
        "Win rate against the random agent by match size",
        "match size (games per seat order)",
        "win rate",
        &[series],
        Some((0.0, 1.0)),
    );
    Ok(vec![
        write(dir, "sweep.csv", &sweep_csv(points))?,
        write(dir, "sweep.svg", &svg)?,
    ])
}

/// Validity histogram and game-length distribution of chess evaluation.
pub fn write_chess_report(
    dir: &Path,
    validity: &[ValidityRow],
    games: &[ChessGameSummary],
) -> Result<Vec<PathBuf>, ArenaError> {
    let mut paths = Vec::new();
    let series = Series {
        name: "valid top-1".into(),
        points: validity
            .iter()
            .filter_map(|r| r.rate().map(|v| (r.ply as f64, v)))
            .collect(),
    };
    let svg = line_chart(
        "Valid move predictions by model move number",
        "model move number",
        "valid fraction",
        &[series],
        Some((0.0, 1.0)),
    );
    paths.push(write(dir, "validity.csv", &validity_csv(validity))?);
    paths.push(write(dir, "validity.svg", &svg)?);
    if !games.is_empty() {
        let bucket = 10u32;
        let max = games.iter().map(|g| g.plies).max().unwrap_or(0);
        let buckets = (max / bucket + 1) as usize;
        let mut counts = vec![0.0; buckets];
        for g in games {
            counts[(g.plies / bucket) as usize] += 1.0;
        }
        let cats: Vec<String> = (0..buckets)
            .map(|b| format!("{}-{}", b as u32 * bucket, (b as u32 + 1) * bucket - 1))
            .collect();
        let svg = bar_chart(
            "Game length against the engine",
            "plies played",
            "games",
            &cats,
            &[("games".to_string(), counts)],
            None,
        );
        paths.push(write(dir, "game_lengths.csv", &lengths_csv(games))?);
        paths.push(write(dir, "game_lengths.svg", &svg)?);
    }
    Ok(paths)
}
