//! Vector-graphics output: the accuracy-vs-length sweep curve and
//! per-step trajectory panels.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use illumrl_core::agent::{Decision, Trajectory};
use plotters::prelude::*;
use serde::Serialize;

use crate::commands::SweepRow;
use crate::stats::{mean, std_dev};

const SEED_COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn draw_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("drawing failed: {e:?}")
}

/// Mean and spread over seeds at one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointSummary {
    pub r_exit: f64,
    pub runs: usize,
    pub mean_length: f64,
    pub std_length: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// Per-point summaries of successful runs, ordered by descending `r_exit`.
pub fn summarize(rows: &[SweepRow]) -> Vec<PointSummary> {
    let mut by_r: BTreeMap<u64, Vec<&SweepRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.ok()) {
        if let Some(x) = r.r_exit {
            by_r.entry(x.to_bits()).or_default().push(r);
        }
    }
    let mut out: Vec<PointSummary> = by_r
        .into_iter()
        .map(|(bits, rs)| {
            let len: Vec<f64> = rs.iter().filter_map(|r| r.mean_length).collect();
            let acc: Vec<f64> = rs.iter().filter_map(|r| r.accuracy).collect();
            PointSummary {
                r_exit: f64::from_bits(bits),
                runs: rs.len(),
                mean_length: mean(&len),
                std_length: std_dev(&len),
                mean_accuracy: mean(&acc),
                std_accuracy: std_dev(&acc),
            }
        })
        .collect();
    out.sort_by(|a, b| b.r_exit.total_cmp(&a.r_exit));
    out
}

/// Accuracy against mean trajectory length: one marker per run colored by
/// seed, a line through the per-point means, and the baseline mean as a
/// horizontal reference.
pub fn sweep_plot(rows: &[SweepRow], baseline: &[SweepRow], path: &Path) -> Result<()> {
    let ok: Vec<(f64, f64, u64)> = rows
        .iter()
        .filter(|r| r.ok())
        .filter_map(|r| Some((r.mean_length?, r.accuracy?, r.seed)))
        .collect();
    let base: Vec<f64> = baseline.iter().filter(|r| r.ok()).filter_map(|r| r.accuracy).collect();
    let points = summarize(rows);

    let max_len = ok.iter().map(|p| p.0).fold(1.0f64, f64::max).ceil() + 0.5;
    let accs = ok.iter().map(|p| p.1).chain(base.iter().copied());
    let (lo, hi) = accs.fold((1.0f64, 0.0f64), |(lo, hi), a| (lo.min(a), hi.max(a)));
    let (lo, hi) = if lo > hi { (0.0, 1.0) } else { ((lo - 0.05).max(0.0), (hi + 0.05).min(1.0)) };

    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Test accuracy vs mean trajectory length", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(0.5f64..max_len, lo..hi)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("mean trajectory length (images)")
        .y_desc("test accuracy")
        .draw()
        .map_err(draw_err)?;

    let mut seeds: Vec<u64> = ok.iter().map(|p| p.2).collect();
    seeds.sort_unstable();
    seeds.dedup();
    for (i, &seed) in seeds.iter().enumerate() {
        let color = SEED_COLORS[i % SEED_COLORS.len()];
        chart
            .draw_series(
                ok.iter()
                    .filter(|p| p.2 == seed)
                    .map(|p| Circle::new((p.0, p.1), 4, color.filled())),
            )
            .map_err(draw_err)?
            .label(format!("seed {seed}"))
            .legend(move |(x, y)| Circle::new((x, y), 4, color.filled()));
    }

    let mut line: Vec<(f64, f64)> = points.iter().map(|p| (p.mean_length, p.mean_accuracy)).collect();
    line.sort_by(|a, b| a.0.total_cmp(&b.0));
    chart
        .draw_series(LineSeries::new(line, BLACK.stroke_width(2)))
        .map_err(draw_err)?
        .label("mean over seeds")
        .legend(|(x, y)| PathElement::new(vec![(x - 8, y), (x + 8, y)], BLACK.stroke_width(2)));
    chart
        .draw_series(points.iter().map(|p| {
            Text::new(
                format!("r_exit {}", p.r_exit),
                (p.mean_length, p.mean_accuracy),
                ("sans-serif", 12),
            )
        }))
        .map_err(draw_err)?;

    if !base.is_empty() {
        let b = mean(&base);
        let gray = RGBColor(120, 120, 120);
        chart
            .draw_series(LineSeries::new(vec![(0.5, b), (max_len, b)], gray.stroke_width(1)))
            .map_err(draw_err)?
            .label("baseline mean")
            .legend(move |(x, y)| PathElement::new(vec![(x - 8, y), (x + 8, y)], gray));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

/// Physical `(row, col)` cell of each LED in the pattern panel.
pub fn led_layout(n: usize) -> (usize, usize, Vec<(usize, usize)>) {
    let side = (n as f64).sqrt().round() as usize;
    if side * side == n {
        (side, side, (0..n).map(|k| (k / side, k % side)).collect())
    } else {
        (1, n, (0..n).map(|k| (0, k)).collect())
    }
}

/// Per-step entry of the render sidecar.
#[derive(Clone, Debug, Serialize)]
pub struct StepMeta {
    pub step: usize,
    pub decision: String,
    pub forced: bool,
    pub prediction: usize,
    /// Observation intensities mapped to black and white in its panel.
    pub observation_min: f32,
    pub observation_max: f32,
    pub pattern: Vec<f32>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RenderMeta {
    pub sample: usize,
    pub label: usize,
    pub predicted: usize,
    pub length: usize,
    /// LED panels use a fixed scale: black 0, full color 1.
    pub pattern_scale: [f32; 2],
    pub led_rows: usize,
    pub led_cols: usize,
    pub steps: Vec<StepMeta>,
}

const CELL: i32 = 8;
const PAD: i32 = 16;

/// One row per step: the observation (normalized to its own range) and the
/// pattern that lit it, laid out on the LED array.
pub fn render_trajectory(traj: &Trajectory, dims: (usize, usize), sample: usize, path: &Path) -> Result<RenderMeta> {
    let (h, w) = (dims.0 as i32, dims.1 as i32);
    let n_led = traj.steps.first().map_or(0, |s| s.pattern.len());
    let (lr, lc, cells) = led_layout(n_led);
    let led_cell = (h * CELL / lr.max(1) as i32).min(w * CELL / lc.max(1) as i32).max(4);
    let panel_h = h * CELL;
    let row_h = panel_h + 2 * PAD;
    let width = 2 * PAD + w * CELL + PAD + lc as i32 * led_cell + 2 * PAD + 160;
    let height = 40 + row_h * traj.len() as i32;

    let root = SVGBackend::new(path, (width as u32, height as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    root.draw(&Text::new(
        format!("sample {sample}: label {}, predicted {}, {} step(s)", traj.label, traj.predicted, traj.len()),
        (PAD, 12),
        ("sans-serif", 16),
    ))
    .map_err(draw_err)?;

    let mut steps = Vec::with_capacity(traj.len());
    for (t, s) in traj.steps.iter().enumerate() {
        let y0 = 40 + t as i32 * row_h + PAD;
        let (mn, mx) = s
            .observation
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if mx > mn { mx - mn } else { 1.0 };
        for r in 0..h {
            for c in 0..w {
                let v = (s.observation[(r * w + c) as usize] - mn) / span;
                let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                let x = PAD + c * CELL;
                let y = y0 + r * CELL;
                root.draw(&Rectangle::new([(x, y), (x + CELL, y + CELL)], RGBColor(g, g, g).filled()))
                    .map_err(draw_err)?;
            }
        }
        let lx = 2 * PAD + w * CELL;
        for (k, &(r, c)) in cells.iter().enumerate() {
            let v = s.pattern[k].clamp(0.0, 1.0);
            let color = RGBColor((v * 60.0) as u8, (v * 220.0) as u8, (v * 90.0) as u8);
            let x = lx + c as i32 * led_cell;
            let y = y0 + r as i32 * led_cell;
            root.draw(&Rectangle::new([(x, y), (x + led_cell, y + led_cell)], color.filled()))
                .map_err(draw_err)?;
            root.draw(&Rectangle::new([(x, y), (x + led_cell, y + led_cell)], RGBColor(90, 90, 90)))
                .map_err(draw_err)?;
        }
        let tx = lx + lc as i32 * led_cell + PAD;
        let decision = match s.decision {
            Decision::Exit => "exit",
            Decision::Continue => "continue",
        };
        for (i, line) in [
            format!("step {}", t + 1),
            format!("{decision}{}", if s.forced { " (forced)" } else { "" }),
            format!("class {}", s.prediction),
            format!("obs [{mn:.3}, {mx:.3}]"),
        ]
        .iter()
        .enumerate()
        {
            root.draw(&Text::new(line.as_str(), (tx, y0 + 16 * i as i32), ("sans-serif", 13)))
                .map_err(draw_err)?;
        }
        steps.push(StepMeta {
            step: t + 1,
            decision: decision.into(),
            forced: s.forced,
            prediction: s.prediction,
            observation_min: mn,
            observation_max: mx,
            pattern: s.pattern.clone(),
        });
    }
    root.present().map_err(draw_err)?;
    Ok(RenderMeta {
        sample,
        label: traj.label,
        predicted: traj.predicted,
        length: traj.len(),
        pattern_scale: [0.0, 1.0],
        led_rows: lr,
        led_cols: lc,
        steps,
    })
}

pub fn write_render_meta(meta: &RenderMeta, path: &Path) -> Result<()> {
    let text = toml::to_string(meta).context("serializing render metadata")?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
