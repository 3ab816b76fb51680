//! Minimal SVG curves of a run. Smoothing is applied here only; stored
//! metrics are never smoothed.

use std::io::Write;

use super::run::EvalPoint;
use super::StepMetrics;
use crate::error::Result;

pub const PLOT_SMOOTHING: f64 = 0.6;

/// Exponential moving average `s_t = α s_{t-1} + (1-α) x_t`, `s_0 = x_0`.
pub fn ema(values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &x in values {
        let s = match acc {
            None => x,
            Some(prev) => alpha * prev + (1.0 - alpha) * x,
        };
        acc = Some(s);
        out.push(s);
    }
    out
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 40.0;

fn polyline(points: &[(f64, f64)], x_max: f64, color: &str, width: f64, opacity: f64) -> String {
    let coords: Vec<String> = points
        .iter()
        .map(|(x, y)| {
            let px = PAD + x / x_max.max(1.0) * (W - 2.0 * PAD);
            let py = H - PAD - y.clamp(0.0, 1.0) * (H - 2.0 * PAD);
            format!("{px:.1},{py:.1}")
        })
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" stroke-opacity=\"{opacity}\" points=\"{}\"/>\n",
        coords.join(" ")
    )
}

/// Training-rollout success (raw and smoothed) and greedy evaluation
/// success against the update index.
pub fn write_metrics_svg<W: Write>(out: &mut W, metrics: &[StepMetrics], evals: &[EvalPoint]) -> Result<()> {
    let x_max = evals
        .iter()
        .map(|p| p.step as f64)
        .chain(metrics.iter().map(|m| m.step as f64))
        .fold(1.0, f64::max);
    let raw: Vec<f64> = metrics.iter().map(|m| m.rollout.success_rate).collect();
    let smooth = ema(&raw, PLOT_SMOOTHING);
    let pts = |ys: &[f64]| -> Vec<(f64, f64)> {
        metrics.iter().zip(ys).map(|(m, y)| (m.step as f64, *y)).collect()
    };
    let eval_pts: Vec<(f64, f64)> = evals.iter().map(|p| (p.step as f64, p.result.success_rate)).collect();

    write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{PAD}\" y=\"{t}\" font-size=\"12\">success rate (0 to 1) vs update, smoothing {PLOT_SMOOTHING}</text>\n",
        b = H - PAD,
        r = W - PAD,
        t = PAD - 12.0,
    )?;
    out.write_all(polyline(&pts(&raw), x_max, "steelblue", 1.0, 0.3).as_bytes())?;
    out.write_all(polyline(&pts(&smooth), x_max, "steelblue", 2.0, 1.0).as_bytes())?;
    out.write_all(polyline(&eval_pts, x_max, "darkorange", 2.0, 1.0).as_bytes())?;
    out.write_all(b"</svg>\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_examples() {
        assert_eq!(ema(&[], 0.6), Vec::<f64>::new());
        let s = ema(&[1.0, 0.0, 0.0], 0.6);
        assert_eq!(s[0], 1.0);
        assert!((s[1] - 0.6).abs() < 1e-15);
        assert!((s[2] - 0.36).abs() < 1e-15);
    }
}
