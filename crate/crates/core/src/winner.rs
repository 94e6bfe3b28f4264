//! Stationary winner distribution on the percentile axis.
//!
//! `W(g)` is the probability that the round's winning value sits at or below
//! percentile `g`, which happens exactly when the sub-pool of bidders above
//! `g` is empty at auction time (or, with `μ` winners, holds fewer than `μ`
//! of them). That sub-pool is itself a pool chain with arrival mean
//! `λ(1 − g)`, so `W` depends on `(λ, δ, μ)` only and never on the value
//! distribution.

use std::io::Write;

use rayon::prelude::*;

use crate::chain::{empty_pool_series, solve_stationary, ChainParams, PoolDistribution, SolverOptions};
use crate::error::{Error, Result};

pub const DEFAULT_GRID_POINTS: usize = 1025;
pub const MIN_DENSITY_POINTS: usize = 257;

/// `n` evenly spaced percentiles from 0 to 1 inclusive.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2, "a grid needs both end points");
    let step = 1.0 / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { 1.0 } else { i as f64 * step }).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WinnerCurve {
    pub lambda: f64,
    pub delta: f64,
    pub mu: u32,
    pub g_grid: Vec<f64>,
    /// `W(g)`.
    pub cdf: Vec<f64>,
    /// `ln W(g)`; stays finite where `W` underflows to 0 if an exact log
    /// route exists, `-inf` where `W` is truly 0.
    pub log_cdf: Vec<f64>,
    /// `−d ln p₀/dλ*` of the sub-pool at each point (single winner only).
    pub empty_pool_slope: Vec<f64>,
    /// `w(g)`, empty until [`winner_density`] runs.
    pub density: Vec<f64>,
    pub log_density: Vec<f64>,
    /// `H(g)`, empty until [`success_probability`] runs.
    pub success: Vec<f64>,
    pub log_success: Vec<f64>,
    /// Largest negative finite-difference value clipped to 0.
    pub max_clip: f64,
    /// `∫w − (1 − W(0))` by the trapezoid rule; not corrected.
    pub density_defect: f64,
}

impl WinnerCurve {
    /// `W`, `w` and `H` on `n` uniform percentiles.
    pub fn build(lambda: f64, delta: f64, mu: u32, n: usize) -> Result<Self> {
        let curve = winner_cdf(lambda, delta, mu, &uniform_grid(n))?;
        let curve = winner_density(curve)?;
        Ok(success_probability(curve))
    }

    pub fn len(&self) -> usize {
        self.g_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g_grid.is_empty()
    }

    /// CSV with columns `g, W, w, H, log_W`; unfilled columns are left blank.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["g", "W", "w", "H", "log_W"])?;
        let cell = |v: &[f64], i: usize| v.get(i).map(|x| format!("{x:e}")).unwrap_or_default();
        for i in 0..self.len() {
            w.write_record([
                format!("{:e}", self.g_grid[i]),
                format!("{:e}", self.cdf[i]),
                cell(&self.density, i),
                cell(&self.success, i),
                format!("{:e}", self.log_cdf[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_grid(g_grid: &[f64]) -> Result<()> {
    if g_grid.is_empty() {
        return Err(Error::InvalidParameters("empty percentile grid".into()));
    }
    if g_grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::InvalidParameters("percentiles must lie in [0, 1]".into()));
    }
    if g_grid.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidParameters(
            "percentile grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// `δ = 0` winner cdf: 0 below percentile `(λ − μ)/λ`; `1 − λ(1 − g)` above
/// it when `μ = 1`. Above the threshold with `μ > 1` it depends on the whole
/// stationary distribution, so there is nothing closed to return.
pub fn winner_cdf_closed_zero(lambda: f64, mu: u32, g: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&g) {
        return Err(Error::InvalidParameters(format!("percentile {g} outside [0, 1]")));
    }
    let lambda_star = lambda * (1.0 - g);
    if lambda_star >= mu as f64 {
        return Ok(0.0);
    }
    if mu == 1 {
        return Ok(1.0 - lambda_star);
    }
    Err(Error::NoClosedForm(format!(
        "zero-uncertainty winner cdf above the threshold with mu={mu}"
    )))
}

// (W, ln W, −d ln W/dλ*) at one percentile; the slope is NaN when μ > 1.
fn cdf_point(
    lambda: f64,
    delta: f64,
    mu: u32,
    g: f64,
    opts: &SolverOptions,
) -> Result<(f64, f64, f64)> {
    let lambda_star = lambda * (1.0 - g);
    if delta == 0.0 && lambda_star >= mu as f64 {
        // Sub-pool not positive recurrent: it never again lacks a winner.
        return Ok((0.0, f64::NEG_INFINITY, 0.0));
    }
    let params = ChainParams::new(lambda_star, delta, mu)?;
    if mu == 1 {
        let (log_w, slope) = empty_pool_series(&params)?;
        return Ok((log_w.exp(), log_w, slope));
    }
    let w = winner_cdf_from_pool(&solve_stationary(&params, opts)?);
    Ok((w, w.ln(), f64::NAN))
}

/// Fraction of a round's `μ` items won by bidders of the sub-pool `p`
/// describes: `Σ_{j<μ} (1 − j/μ) p_j`. With `μ = 1` this is `p₀` itself.
pub fn winner_cdf_from_pool(p: &PoolDistribution) -> f64 {
    let mu = p.params.mu as usize;
    (0..mu).map(|j| (1.0 - j as f64 / mu as f64) * p.probs.get(j).copied().unwrap_or(0.0)).sum()
}

/// `W` on the given percentile grid, one independent chain per point.
///
/// With one winner `W(g) = p₀` of the sub-pool, taken from the exact
/// empty-pool series (accurate in log space far below `f64` range). With
/// `μ > 1` winners, `W(g) = Σ_{j<μ} (1 − j/μ) p_j` from the power-iteration
/// solver. Points below the `δ = 0` threshold get `W = 0`.
pub fn winner_cdf(lambda: f64, delta: f64, mu: u32, g_grid: &[f64]) -> Result<WinnerCurve> {
    check_grid(g_grid)?;
    ChainParams::new(lambda, delta, mu)?;
    let opts = SolverOptions::default();
    let points: Vec<(f64, f64, f64)> = g_grid
        .par_iter()
        .map(|&g| cdf_point(lambda, delta, mu, g, &opts))
        .collect::<Result<_>>()?;
    let cdf = points.iter().map(|p| p.0).collect();
    let log_cdf = points.iter().map(|p| p.1).collect();
    let empty_pool_slope = if mu == 1 {
        points.iter().map(|p| p.2).collect()
    } else {
        Vec::new()
    };
    Ok(WinnerCurve {
        lambda,
        delta,
        mu,
        g_grid: g_grid.to_vec(),
        cdf,
        log_cdf,
        empty_pool_slope,
        density: Vec::new(),
        log_density: Vec::new(),
        success: Vec::new(),
        log_success: Vec::new(),
        max_clip: 0.0,
        density_defect: 0.0,
    })
}

// ln(e^hi − e^lo) for hi ≥ lo.
fn log_sub_exp(hi: f64, lo: f64) -> f64 {
    if hi == f64::NEG_INFINITY || lo >= hi {
        return f64::NEG_INFINITY;
    }
    hi + (-(lo - hi).exp()).ln_1p()
}

/// Fills `w`.
///
/// With one winner `w(g) = λ W(g) · (−d ln p₀/dλ*)` exactly, from the series
/// slope. Otherwise central differences (one-sided at the ends), clipping
/// negatives to 0. The clip size and integral defect are recorded, not fixed.
pub fn winner_density(mut curve: WinnerCurve) -> Result<WinnerCurve> {
    let n = curve.len();
    if n < MIN_DENSITY_POINTS {
        return Err(Error::GridTooCoarse {
            points: n,
            required: MIN_DENSITY_POINTS,
        });
    }
    let g = &curve.g_grid;
    let h = (g[n - 1] - g[0]) / (n - 1) as f64;
    if g.windows(2).any(|p| ((p[1] - p[0]) - h).abs() > 1e-9 * h) {
        return Err(Error::InvalidParameters(
            "density needs a uniform percentile grid".into(),
        ));
    }
    let mut density = Vec::with_capacity(n);
    let mut log_density = Vec::with_capacity(n);
    let mut max_clip: f64 = 0.0;
    if curve.empty_pool_slope.len() == n {
        let ln_lambda = curve.lambda.ln();
        for (&log_w, &slope) in curve.log_cdf.iter().zip(&curve.empty_pool_slope) {
            let log_d = ln_lambda + log_w + slope.ln();
            density.push(log_d.exp());
            log_density.push(log_d);
        }
    }
    for i in 0..n {
        if density.len() == n {
            break;
        }
        let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
        let span = (hi - lo) as f64 * h;
        let diff = curve.cdf[hi] - curve.cdf[lo];
        if diff < 0.0 {
            max_clip = max_clip.max(-diff / span);
            density.push(0.0);
            log_density.push(f64::NEG_INFINITY);
        } else {
            density.push(diff / span);
            log_density.push(log_sub_exp(curve.log_cdf[hi], curve.log_cdf[lo]) - span.ln());
        }
    }
    let integral: f64 = density.windows(2).map(|p| 0.5 * h * (p[0] + p[1])).sum();
    curve.density_defect = integral - (curve.cdf[n - 1] - curve.cdf[0]);
    curve.density = density;
    curve.log_density = log_density;
    curve.max_clip = max_clip;
    Ok(curve)
}

/// Fills `H = W/(δ + (1−δ)W)`, the chance a bidder at that percentile wins
/// before being removed.
pub fn success_probability(mut curve: WinnerCurve) -> WinnerCurve {
    let delta = curve.delta;
    let (success, log_success) = curve
        .cdf
        .iter()
        .zip(&curve.log_cdf)
        .map(|(&w, &log_w)| {
            if log_w == f64::NEG_INFINITY {
                (0.0, f64::NEG_INFINITY)
            } else if delta == 0.0 {
                (1.0, 0.0)
            } else {
                let log_h = log_w - (delta + (1.0 - delta) * w).ln();
                (log_h.exp().min(1.0), log_h.min(0.0))
            }
        })
        .unzip();
    curve.success = success;
    curve.log_success = log_success;
    curve
}
