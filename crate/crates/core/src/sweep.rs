//! λ sweep: one model per λ (or one λ-conditioned model), a validation
//! point each, a monotone-frontier
//! check, and a CSV table with an SVG plot derived from it.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::config::TrainConfig;
use crate::corpus::{write_lines, AudioClip};
use crate::error::{io_err, Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::train::{smooth, Trainer};

pub const SWEEP_CSV_HEADER: &str = "lambda,bandwidth_hz,dist_time,dist_mfcc,converged";

#[derive(Debug, Clone, PartialEq)]
pub struct RdPoint {
    pub lambda: f64,
    pub bandwidth_hz: f64,
    pub dist_time: f64,
    pub dist_mfcc: f64,
    /// Smoothed loss ended below its early average.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdTable {
    /// Sorted by λ.
    pub points: Vec<RdPoint>,
    /// Adjacent converged pairs `(i, j)` where distortion rose or
    /// bandwidth fell as λ grew. `None` when fewer than two points.
    pub violations: Option<Vec<(usize, usize)>>,
}

/// Adjacent pairs, in λ order among converged points, that break
/// "distortion non-increasing, bandwidth non-decreasing".
pub fn frontier_violations(points: &[RdPoint]) -> Option<Vec<(usize, usize)>> {
    let kept: Vec<usize> = (0..points.len()).filter(|&i| points[i].converged).collect();
    if kept.len() < 2 {
        return None;
    }
    Some(
        kept.windows(2)
            .filter(|w| {
                let (a, b) = (&points[w[0]], &points[w[1]]);
                b.dist_mfcc > a.dist_mfcc || b.bandwidth_hz < a.bandwidth_hz
            })
            .map(|w| (w[0], w[1]))
            .collect(),
    )
}

impl RdTable {
    pub fn new(mut points: Vec<RdPoint>) -> Self {
        points.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        let violations = frontier_violations(&points);
        Self { points, violations }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(SWEEP_CSV_HEADER);
        s.push('\n');
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                p.lambda, p.bandwidth_hz, p.dist_time, p.dist_mfcc, p.converged
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(SWEEP_CSV_HEADER) {
            return Err(Error::Config("not an RD sweep table".into()));
        }
        let points = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let num = |i: usize| -> Result<f64> {
                    f.get(i)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::Config(format!("bad sweep row: {l}")))
                };
                Ok(RdPoint {
                    lambda: num(0)?,
                    bandwidth_hz: num(1)?,
                    dist_time: num(2)?,
                    dist_mfcc: num(3)?,
                    converged: f.get(4) == Some(&"true"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(points))
    }

    /// Distortion against bandwidth. A pure function of the table, so the
    /// same CSV always gives the same bytes.
    pub fn to_svg(&self) -> String {
        const W: f64 = 480.0;
        const H: f64 = 320.0;
        const PAD: f64 = 48.0;
        let xs: Vec<f64> = self.points.iter().map(|p| p.bandwidth_hz).collect();
        let ys: Vec<f64> = self.points.iter().map(|p| p.dist_mfcc).collect();
        let range = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = range(&xs);
        let (y0, y1) = range(&ys);
        let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<path d="M{PAD} {PAD} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
            H - PAD,
            W - PAD
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">bandwidth (Hz) {x0:.1} .. {x1:.1}</text>"#,
            W / 2.0,
            H - 12.0
        );
        let _ = writeln!(
            s,
            r#"<text x="12" y="{:.1}" font-size="12" transform="rotate(-90 12 {:.1})" text-anchor="middle">MFCC NMSE {y0:.4} .. {y1:.4}</text>"#,
            H / 2.0,
            H / 2.0
        );
        let line: Vec<String> = self
            .points
            .iter()
            .filter(|p| p.converged)
            .map(|p| format!("{:.1},{:.1}", px(p.bandwidth_hz), py(p.dist_mfcc)))
            .collect();
        if line.len() > 1 {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="steelblue"/>"#,
                line.join(" ")
            );
        }
        for p in &self.points {
            let color = if p.converged { "steelblue" } else { "crimson" };
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{color}"><title>lambda {}</title></circle>"#,
                px(p.bandwidth_hz),
                py(p.dist_mfcc),
                p.lambda
            );
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let lines: Vec<String> = self.to_csv().lines().map(str::to_string).collect();
        write_lines(&dir.join("rd_curve.csv"), &lines)?;
        let svg = dir.join("rd_curve.svg");
        std::fs::write(&svg, self.to_svg()).map_err(io_err(&svg))
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub snr_db: f64,
    /// Early window whose mean the final smoothed loss must beat.
    pub early_steps: usize,
    pub eval: EvalOptions,
}

/// Trains one model per λ from `template` and evaluates each on `val`.
fn train_one(
    cfg: TrainConfig,
    train: &[AudioClip],
    opts: &SweepOptions,
    run_dir: Option<&Path>,
) -> Result<(Trainer, bool)> {
    let steps = cfg.steps;
    let mut trainer = Trainer::new(cfg)?;
    let records = trainer.run(train, steps, run_dir)?;
    let totals: Vec<f64> = records.iter().map(|r| r.loss.total).collect();
    let w = opts.early_steps.clamp(1, totals.len());
    let early = totals[..w].iter().sum::<f64>() / w as f64;
    let converged = smooth(&totals, w).last().is_some_and(|&v| v < early);
    if !converged {
        warn!("lambda {}: loss did not decrease, excluded from the frontier", trainer.cfg.lambda);
    }
    Ok((trainer, converged))
}

fn evaluate_point(
    trainer: &Trainer,
    lambda: f64,
    converged: bool,
    val: &[AudioClip],
    opts: &SweepOptions,
    eval: EvalOptions,
) -> Result<RdPoint> {
    let eval = EvalOptions {
        snr_db: opts.snr_db,
        side_info: trainer.model.side_info(),
        ..eval
    };
    let s = evaluate(&trainer.model, &trainer.params, &trainer.cfg, val, &eval)?;
    Ok(RdPoint {
        lambda,
        bandwidth_hz: s.aggregate.bandwidth_hz,
        dist_time: s.aggregate.dist_time,
        dist_mfcc: s.aggregate.dist_mfcc,
        converged,
    })
}

/// Baseline: trains one model per λ. With `model.lambda_conditioning` a
/// single model is trained over `lambda_range` and evaluated at each λ.
pub fn rd_sweep(
    template: &TrainConfig,
    lambdas: &[f64],
    train: &[AudioClip],
    val: &[AudioClip],
    opts: &SweepOptions,
    out_dir: Option<&Path>,
) -> Result<RdTable> {
    if lambdas.is_empty() {
        return Err(Error::Config("rd sweep needs at least one lambda".into()));
    }
    let mut points = Vec::with_capacity(lambdas.len());
    if template.model.lambda_conditioning {
        // One model covers the whole sweep; only the evaluation λ changes.
        let run_dir = out_dir.map(|d| d.join("conditioned"));
        let (trainer, converged) = train_one(template.clone(), train, opts, run_dir.as_deref())?;
        for &lambda in lambdas {
            let eval = EvalOptions {
                lambda: Some(lambda),
                ..opts.eval.clone()
            };
            points.push(evaluate_point(&trainer, lambda, converged, val, opts, eval)?);
        }
    } else {
        for &lambda in lambdas {
            let cfg = TrainConfig {
                lambda,
                ..template.clone()
            };
            let run_dir = out_dir.map(|d| d.join(format!("lambda_{lambda}")));
            let (trainer, converged) = train_one(cfg, train, opts, run_dir.as_deref())?;
            points.push(evaluate_point(&trainer, lambda, converged, val, opts, opts.eval.clone())?);
        }
    }
    let table = RdTable::new(points);
    if let Some(dir) = out_dir {
        table.write(dir)?;
    }
    Ok(table)
}
