//! Equilibrium bids and bidder expectations.
//!
//! With uncertainty the bid of a value-`x` bidder is a conditional mean of
//! the value quantile under the measure `dK`, where `K = W/(1 + cW)`,
//! `c = (1−δ)/δ`:
//!
//! ```text
//! b(x) = ∫₀^{F(x)} F⁻¹(g) dK(g) / K(F(x))
//! ```
//!
//! `K` equals `δH`, so it is carried in log space through the winner curve's
//! `ln H`. Between grid nodes `ln K` is taken as linear in `g`, which makes
//! each step a convex combination of the previous bid and a weighted cell
//! average of the quantile. The result stays in `[0, x]` and never divides by
//! an underflowed `W`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::values::{ValueDistribution, DEFAULT_QUANTILE_CAP};
use crate::winner::{success_probability, winner_cdf_closed_zero, WinnerCurve};

/// Below this `W` a grid point is flagged as computed from logs only.
pub const UNDERFLOW_W: f64 = 1e-290;

/// Default relative value-gap tolerance for [`best_response_check`].
pub const DEVIATION_TOL: f64 = 1e-4;

/// Default absolute tolerance for [`uncertainty_comparatives`].
pub const COMPARATIVE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BidCurve {
    pub lambda: f64,
    pub delta: f64,
    pub mu: u32,
    pub dist: ValueDistribution,
    pub x_grid: Vec<f64>,
    /// Percentile `F(x)` of each grid value.
    pub g: Vec<f64>,
    pub bids: Vec<f64>,
    /// Bidder expectation `Z(x) = (x − b(x)) H(F(x))`.
    pub expectation: Vec<f64>,
    pub cdf: Vec<f64>,
    pub log_cdf: Vec<f64>,
    pub success: Vec<f64>,
    /// `ln K = ln(δH)` at each node; empty for zero uncertainty.
    log_k: Vec<f64>,
    /// Nodes where `W < 1e-290` and only the log form was usable.
    pub underflow: Vec<bool>,
    /// Zero-uncertainty threshold value, when one exists.
    pub threshold: Option<f64>,
    pub ode_residual_max: Option<f64>,
}

/// State at one value, possibly between grid nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BidPoint {
    pub x: f64,
    pub g: f64,
    pub bid: f64,
    pub cdf: f64,
    pub success: f64,
    pub expectation: f64,
}

impl BidCurve {
    pub fn len(&self) -> usize {
        self.x_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_grid.is_empty()
    }

    /// CSV columns `x, g, b, Z, W, H`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "g", "b", "Z", "W", "H"])?;
        for i in 0..self.len() {
            w.write_record([
                format!("{:e}", self.x_grid[i]),
                format!("{:e}", self.g[i]),
                format!("{:e}", self.bids[i]),
                format!("{:e}", self.expectation[i]),
                format!("{:e}", self.cdf[i]),
                format!("{:e}", self.success[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Part of `x − b(x)` owed to winning with nobody else in the pool, where
    /// the price is 0 rather than the support infimum `X̲`:
    /// `X̲ K(F(X̲)) / K(F(x))`. It makes the bid climb faster than the value
    /// just above `X̲` when `X̲ > 0`.
    pub fn alone_discount(&self, i: usize) -> f64 {
        if self.log_k.is_empty() {
            return 0.0;
        }
        self.dist.support_infimum() * (self.log_k[0] - self.log_k[i]).exp()
    }

    fn node(&self, i: usize) -> BidPoint {
        BidPoint {
            x: self.x_grid[i],
            g: self.g[i],
            bid: self.bids[i],
            cdf: self.cdf[i],
            success: self.success[i],
            expectation: self.expectation[i],
        }
    }

    /// Bid, `W`, `H` and `Z` at any value inside the grid range.
    pub fn at(&self, x: f64) -> Result<BidPoint> {
        let first = self.x_grid[0];
        let last = self.x_grid[self.len() - 1];
        if !(first..=last).contains(&x) {
            return Err(Error::InvalidParameters(format!(
                "value {x} outside the bid grid [{first}, {last}]"
            )));
        }
        let i = self.x_grid.partition_point(|&v| v <= x) - 1;
        if self.x_grid[i] == x {
            return Ok(self.node(i));
        }
        let g = self.dist.cdf(x);
        if let Some(t) = self.threshold.filter(|_| self.delta == 0.0) {
            let cdf = if self.mu == 1 {
                winner_cdf_closed_zero(self.lambda, 1, g)?
            } else {
                lerp(self.g[i], self.g[i + 1], self.cdf[i], self.cdf[i + 1], g)
            };
            let success = if cdf > 0.0 { 1.0 } else { 0.0 };
            let bid = x.min(t);
            return Ok(BidPoint {
                x,
                g,
                bid,
                cdf,
                success,
                expectation: (x - bid) * success,
            });
        }
        let log_k = lerp(self.g[i], self.g[i + 1], self.log_k[i], self.log_k[i + 1], g);
        let log_cdf = lerp(self.g[i], self.g[i + 1], self.log_cdf[i], self.log_cdf[i + 1], g);
        let mid = self.dist.quantile(0.5 * (self.g[i] + g))?;
        let bid = bid_step(self.bids[i], [self.x_grid[i], mid, x], self.log_k[i], log_k);
        let cdf = log_cdf.exp();
        let success = success_from_log_cdf(log_cdf, self.delta);
        Ok(BidPoint {
            x,
            g,
            bid,
            cdf,
            success,
            expectation: (x - bid) * success,
        })
    }
}

// H = W/(δ + (1−δ)W) from ln W, safe when W underflows.
fn success_from_log_cdf(log_cdf: f64, delta: f64) -> f64 {
    let w = log_cdf.exp();
    (log_cdf - (delta + (1.0 - delta) * w).ln()).exp().min(1.0)
}

fn lerp(x0: f64, x1: f64, y0: f64, y1: f64, x: f64) -> f64 {
    if y0 == y1 {
        return y0;
    }
    let t = (x - x0) / (x1 - x0);
    y0 + t * (y1 - y0)
}

// E[s] for s in [0, 1] with density proportional to e^{Δs}.
fn tilted_mean(d: f64) -> f64 {
    if d == f64::INFINITY {
        1.0
    } else if d == f64::NEG_INFINITY {
        0.0
    } else if d.abs() < 1e-4 {
        0.5 + d / 12.0
    } else {
        1.0 / -(-d).exp_m1() - 1.0 / d
    }
}

// E[s²] under the same density.
fn tilted_second_moment(d: f64) -> f64 {
    if d < 0.0 {
        return 1.0 - 2.0 * tilted_mean(-d) + tilted_second_moment(-d);
    }
    if d == f64::INFINITY {
        1.0
    } else if d < 1e-2 {
        1.0 / 3.0 + d / 12.0 + d * d / 360.0
    } else {
        let e = (-d).exp();
        (1.0 - 2.0 / d + 2.0 / (d * d) - 2.0 * e / (d * d)) / -(-d).exp_m1()
    }
}

// One cell of b = ∫Q dK / K, with ln K linear across the cell and Q the
// quadratic through its values at the start, middle and end of the cell.
fn bid_step(b_prev: f64, q: [f64; 3], log_k_prev: f64, log_k_next: f64) -> f64 {
    if log_k_next == f64::NEG_INFINITY {
        return b_prev;
    }
    let d = log_k_next - log_k_prev;
    let keep = (-d).exp();
    let fresh = -(-d).exp_m1();
    let [q0, qm, q1] = q;
    let lin = -3.0 * q0 + 4.0 * qm - q1;
    let quad = 2.0 * q0 - 4.0 * qm + 2.0 * q1;
    let q_avg = q0 + lin * tilted_mean(d) + quad * tilted_second_moment(d);
    keep * b_prev + fresh * q_avg.clamp(q0, q1)
}

/// Zero-uncertainty bid: `min(x, X_(λ/μ))`.
pub fn bid_zero_uncertainty(dist: &ValueDistribution, lambda: f64, mu: u32, x: f64) -> Result<f64> {
    let t = dist.threshold_value(lambda, mu)?;
    Ok(x.min(t))
}

/// Grid values for a bid curve: the value quantiles of the winner curve's
/// percentiles, stopping at the quantile cap on unbounded supports.
pub fn default_x_grid(dist: &ValueDistribution, curve: &WinnerCurve) -> Result<Vec<f64>> {
    curve
        .g_grid
        .iter()
        .filter(|&&g| dist.is_bounded() || g <= DEFAULT_QUANTILE_CAP)
        .map(|&g| dist.quantile(g))
        .collect()
}

fn check_x_grid(dist: &ValueDistribution, x_grid: &[f64]) -> Result<()> {
    if x_grid.len() < 2 {
        return Err(Error::InvalidParameters("bid grid needs at least two values".into()));
    }
    if x_grid.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidParameters("bid grid must be strictly increasing".into()));
    }
    let (lo, hi) = (dist.support_infimum(), dist.support_supremum());
    if x_grid[0] < lo || x_grid[x_grid.len() - 1] > hi {
        return Err(Error::InvalidParameters(format!(
            "bid grid must lie inside the support [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// The posted-price curve `b = min(x, X_(λ/μ))` with its `W`, `H` and `Z`.
/// At the threshold itself the bid is the threshold.
pub fn zero_uncertainty_bid_curve(
    dist: &ValueDistribution,
    curve: &WinnerCurve,
    x_grid: Option<&[f64]>,
) -> Result<BidCurve> {
    if curve.delta != 0.0 {
        return Err(Error::InvalidParameters(
            "zero-uncertainty bids need a delta = 0 winner curve".into(),
        ));
    }
    let t = dist.threshold_value(curve.lambda, curve.mu)?;
    let x_grid = match x_grid {
        Some(x) => x.to_vec(),
        None => default_x_grid(dist, curve)?,
    };
    check_x_grid(dist, &x_grid)?;
    let g: Vec<f64> = x_grid.iter().map(|&x| dist.cdf(x)).collect();
    let cdf: Vec<f64> = g
        .iter()
        .map(|&gi| interpolate_curve(curve, gi).0)
        .collect();
    let success: Vec<f64> = cdf.iter().map(|&w| if w > 0.0 { 1.0 } else { 0.0 }).collect();
    let bids: Vec<f64> = x_grid.iter().map(|&x| x.min(t)).collect();
    let expectation = x_grid
        .iter()
        .zip(&bids)
        .zip(&success)
        .map(|((x, b), h)| (x - b) * h)
        .collect();
    Ok(BidCurve {
        lambda: curve.lambda,
        delta: 0.0,
        mu: curve.mu,
        dist: dist.clone(),
        g,
        log_cdf: cdf.iter().map(|w: &f64| w.ln()).collect(),
        underflow: vec![false; x_grid.len()],
        x_grid,
        bids,
        expectation,
        cdf,
        success,
        log_k: Vec::new(),
        threshold: Some(t),
        ode_residual_max: None,
    })
}

// (W, ln W, ln w) at an arbitrary percentile, interpolated in log space.
fn interpolate_curve(curve: &WinnerCurve, g: f64) -> (f64, f64, f64) {
    let gs = &curve.g_grid;
    let j = gs.partition_point(|&v| v <= g).clamp(1, gs.len() - 1);
    let (i, k) = (j - 1, j);
    if gs[i] == g {
        let log_w = curve.log_density.get(i).copied().unwrap_or(f64::NAN);
        return (curve.cdf[i], curve.log_cdf[i], log_w);
    }
    if curve.delta == 0.0 && curve.mu == 1 {
        let w = winner_cdf_closed_zero(curve.lambda, 1, g).unwrap_or(0.0);
        let log_dens = if w > 0.0 { curve.lambda.ln() } else { f64::NEG_INFINITY };
        return (w, w.ln(), log_dens);
    }
    let log_cdf = lerp(gs[i], gs[k], curve.log_cdf[i], curve.log_cdf[k], g);
    let log_dens = if curve.log_density.is_empty() {
        f64::NAN
    } else {
        lerp(gs[i], gs[k], curve.log_density[i], curve.log_density[k], g)
    };
    (log_cdf.exp(), log_cdf, log_dens)
}

/// Equilibrium bids under uncertainty for a single winner per round.
///
/// `x_grid` defaults to [`default_x_grid`]; values between winner-curve
/// nodes take a partial final cell.
pub fn bid_with_uncertainty(
    dist: &ValueDistribution,
    curve: &WinnerCurve,
    x_grid: Option<&[f64]>,
) -> Result<BidCurve> {
    if curve.mu != 1 {
        return Err(Error::InvalidParameters(format!(
            "no derived bidding function for mu={} with delta > 0; use the experimental route",
            curve.mu
        )));
    }
    bid_curve_from_winner(dist, curve, x_grid)
}

/// Same formula applied to a multi-winner curve. Unverified beyond the
/// deviation check: no bidding function has been derived for `μ > 1` with
/// uncertainty.
pub fn bid_with_uncertainty_experimental(
    dist: &ValueDistribution,
    curve: &WinnerCurve,
    x_grid: Option<&[f64]>,
) -> Result<BidCurve> {
    bid_curve_from_winner(dist, curve, x_grid)
}

fn bid_curve_from_winner(
    dist: &ValueDistribution,
    curve: &WinnerCurve,
    x_grid: Option<&[f64]>,
) -> Result<BidCurve> {
    let delta = curve.delta;
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidParameters(
            "bids with uncertainty need delta > 0".into(),
        ));
    }
    if curve.g_grid.first() != Some(&0.0) {
        return Err(Error::InvalidParameters(
            "winner curve must start at percentile 0".into(),
        ));
    }
    let curve = if curve.success.len() == curve.len() {
        curve.clone()
    } else {
        success_probability(curve.clone())
    };
    let ln_delta = delta.ln();

    // Bids on the winner-curve nodes.
    let nodes: Vec<usize> = (0..curve.len())
        .filter(|&j| dist.is_bounded() || curve.g_grid[j] <= DEFAULT_QUANTILE_CAP)
        .collect();
    let q: Vec<f64> = nodes
        .iter()
        .map(|&j| dist.quantile(curve.g_grid[j]))
        .collect::<Result<_>>()?;
    let node_log_k: Vec<f64> = nodes.iter().map(|&j| curve.log_success[j] + ln_delta).collect();
    let mut node_bids = Vec::with_capacity(nodes.len());
    node_bids.push(0.0);
    for m in 1..nodes.len() {
        let mid = dist.quantile(0.5 * (curve.g_grid[nodes[m - 1]] + curve.g_grid[nodes[m]]))?;
        let b = bid_step(node_bids[m - 1], [q[m - 1], mid, q[m]], node_log_k[m - 1], node_log_k[m]);
        node_bids.push(b.clamp(0.0, q[m]));
    }

    let x_grid = match x_grid {
        Some(x) => x.to_vec(),
        None => q.clone(),
    };
    check_x_grid(dist, &x_grid)?;
    let node_g: Vec<f64> = nodes.iter().map(|&j| curve.g_grid[j]).collect();
    let mut g = Vec::with_capacity(x_grid.len());
    let mut bids = Vec::with_capacity(x_grid.len());
    let mut log_k = Vec::with_capacity(x_grid.len());
    let mut log_cdf = Vec::with_capacity(x_grid.len());
    for &x in &x_grid {
        let gx = dist.cdf(x);
        let m = node_g.partition_point(|&v| v <= gx);
        if m == 0 {
            return Err(Error::InvalidParameters(format!("value {x} below the curve")));
        }
        let m = m - 1;
        if node_g[m] == gx || m + 1 == node_g.len() {
            if node_g[m] != gx {
                return Err(Error::QuantileOutOfRange(gx));
            }
            g.push(gx);
            bids.push(node_bids[m]);
            log_k.push(node_log_k[m]);
            log_cdf.push(curve.log_cdf[nodes[m]]);
            continue;
        }
        let lk = lerp(node_g[m], node_g[m + 1], node_log_k[m], node_log_k[m + 1], gx);
        let lw = lerp(
            node_g[m],
            node_g[m + 1],
            curve.log_cdf[nodes[m]],
            curve.log_cdf[nodes[m + 1]],
            gx,
        );
        g.push(gx);
        let mid = dist.quantile(0.5 * (node_g[m] + gx))?;
        bids.push(bid_step(node_bids[m], [q[m], mid, x], node_log_k[m], lk).clamp(0.0, x));
        log_k.push(lk);
        log_cdf.push(lw);
    }
    let cdf: Vec<f64> = log_cdf.iter().map(|l| l.exp()).collect();
    let success: Vec<f64> = log_cdf
        .iter()
        .map(|&l| success_from_log_cdf(l, delta))
        .collect();
    let expectation = expectation_values(&x_grid, &bids, &success);
    let underflow = cdf.iter().map(|&w| w < UNDERFLOW_W).collect();
    let threshold = dist.threshold_value(curve.lambda, curve.mu).ok();
    let mut bid = BidCurve {
        lambda: curve.lambda,
        delta,
        mu: curve.mu,
        dist: dist.clone(),
        x_grid,
        g,
        bids,
        expectation,
        cdf,
        log_cdf,
        success,
        log_k,
        underflow,
        threshold,
        ode_residual_max: None,
    };
    if bid.len() >= 3 {
        bid.ode_residual_max = Some(ode_residual(&bid, &curve));
    }
    Ok(bid)
}

fn expectation_values(x: &[f64], b: &[f64], h: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(b)
        .zip(h)
        .map(|((x, b), h)| (x - b) * h)
        .collect()
}

/// Recomputes `Z(x) = (x − b(x)) H(F(x))` from the curve's own bids and `H`.
pub fn expectation(mut bid: BidCurve) -> BidCurve {
    bid.expectation = expectation_values(&bid.x_grid, &bid.bids, &bid.success);
    bid
}

/// Per interior node, the normalised mismatch of
/// `b′/(x − b) = w f / ((1 + cW) W)`, or `None` where `x − b < 1e-9`.
///
/// Both sides are divided by `f(x)`, which turns the check into
/// `(db/dg)/(x − b) = w / ((1 + cW) W)` on the percentile grid. `db/dg` uses
/// five-point central differences where the grid is uniform in `g` (three-point
/// next to the ends, and on irregular grids).
pub fn ode_residuals(bid: &BidCurve, curve: &WinnerCurve) -> Vec<Option<f64>> {
    let n = bid.len();
    if n < 3 {
        return Vec::new();
    }
    let c = (1.0 - bid.delta) / bid.delta;
    let g = &bid.g;
    let b = &bid.bids;
    let step = (g[n - 1] - g[0]) / (n - 1) as f64;
    let uniform = g.windows(2).all(|p| ((p[1] - p[0]) - step).abs() <= 1e-9 * step);
    (1..n - 1)
        .map(|i| {
            let gap = bid.x_grid[i] - b[i];
            if gap < 1e-9 {
                return None;
            }
            let slope = if uniform && i >= 2 && i + 2 < n {
                (b[i - 2] - 8.0 * b[i - 1] + 8.0 * b[i + 1] - b[i + 2]) / (12.0 * step)
            } else {
                let (h1, h2) = (g[i] - g[i - 1], g[i + 1] - g[i]);
                (h1 * h1 * (b[i + 1] - b[i]) + h2 * h2 * (b[i] - b[i - 1]))
                    / (h1 * h2 * (h1 + h2))
            };
            let lhs = slope / gap;
            let (w, log_w, log_dens) = interpolate_curve(curve, g[i]);
            let rhs = if log_dens == f64::NEG_INFINITY {
                0.0
            } else {
                (log_dens - log_w).exp() / (1.0 + c * w)
            };
            Some(if rhs > 0.0 {
                (lhs - rhs).abs() / rhs
            } else {
                lhs.abs()
            })
        })
        .collect()
}

/// Largest entry of [`ode_residuals`].
pub fn ode_residual(bid: &BidCurve, curve: &WinnerCurve) -> f64 {
    ode_residuals(bid, curve)
        .into_iter()
        .flatten()
        .fold(0.0, f64::max)
}

/// Value to a type-`x` bidder of bidding as type `y` for one round and
/// following the equilibrium afterwards:
/// `W(F(y))(x − b(y)) + (1−δ)(1 − W(F(y))) Z(x)`.
pub fn one_shot_deviation_value(x: f64, y: f64, bid: &BidCurve) -> Result<f64> {
    let px = bid.at(x)?;
    let py = bid.at(y)?;
    Ok(deviation_value(&px, &py, bid.delta))
}

fn deviation_value(px: &BidPoint, py: &BidPoint, delta: f64) -> f64 {
    py.cdf * (px.x - py.bid) + (1.0 - delta) * (1.0 - py.cdf) * px.expectation
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    pub x: f64,
    /// Best deviation found on the grid.
    pub best_y: f64,
    pub argmax_gap: f64,
    /// `V(y*) − V(x)`; zero or negative means no profitable deviation.
    pub value_gap: f64,
    pub expectation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Scans every grid value as a one-round deviation for a type-`x` bidder.
pub fn best_response_check(bid: &BidCurve, x: f64) -> Result<DeviationReport> {
    let first = bid.x_grid[0];
    let last = bid.x_grid[bid.len() - 1];
    if !(x > first && x < last) {
        return Err(Error::InvalidParameters(format!(
            "type {x} must lie strictly inside the grid ({first}, {last})"
        )));
    }
    let px = bid.at(x)?;
    let honest = deviation_value(&px, &px, bid.delta);
    let mut best = (x, honest);
    for i in 0..bid.len() {
        let v = deviation_value(&px, &bid.node(i), bid.delta);
        if v > best.1 {
            best = (bid.x_grid[i], v);
        }
    }
    let value_gap = best.1 - honest;
    let tolerance = DEVIATION_TOL * px.expectation.max(1e-6);
    Ok(DeviationReport {
        x,
        best_y: best.0,
        argmax_gap: (best.0 - x).abs(),
        value_gap,
        expectation: px.expectation,
        tolerance,
        passed: value_gap < tolerance,
    })
}

/// Largest `|b(x) − min(x, X)|` over grid values accepted by `keep(x, g)`.
pub fn posted_price_gap(bid: &BidCurve, threshold: f64, keep: impl Fn(f64, f64) -> bool) -> f64 {
    bid.x_grid
        .iter()
        .zip(&bid.g)
        .zip(&bid.bids)
        .filter(|((&x, &g), _)| keep(x, g))
        .map(|((&x, _), &b)| (b - x.min(threshold)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparativeEntry {
    pub delta: f64,
    /// Largest `b(x|δ) − b(x|0)` over grid values up to the threshold.
    pub worst_bid_excess: f64,
    /// Smallest `Z(x|δ) − Z(x|0)` over the same values.
    pub worst_expectation_shortfall: f64,
    pub min_expectation: f64,
    /// Value maximising `b(x|0) − b(x|δ)` over the whole grid.
    pub bid_gap_argmax: f64,
    pub bid_gap_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparativesReport {
    pub lambda: f64,
    pub threshold: f64,
    pub grid_step: f64,
    pub tolerance: f64,
    pub entries: Vec<ComparativeEntry>,
    /// Largest grid value up to which bids are nonincreasing in `δ`
    /// (including `δ = 0`) at every smaller grid value.
    pub x_star_estimate: Option<f64>,
    pub bids_below_posted_price: bool,
    pub expectations_above_posted: bool,
    pub bids_monotone_in_delta: bool,
    /// Every bid-gap argmax lies within one grid cell of the threshold.
    pub gap_peaks_at_threshold: bool,
    pub passed: bool,
}

/// Bids and expectations across several small `δ` against the posted price,
/// on a shared `n_points` uniform-percentile grid.
pub fn uncertainty_comparatives(
    dist: &ValueDistribution,
    lambda: f64,
    deltas: &[f64],
    n_points: usize,
) -> Result<ComparativesReport> {
    if deltas.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::InvalidParameters("deltas must be ascending".into()));
    }
    let t = dist.threshold_value(lambda, 1)?;
    let zero = WinnerCurve::build(lambda, 0.0, 1, n_points)?;
    let base = zero_uncertainty_bid_curve(dist, &zero, None)?;
    let x = base.x_grid.clone();
    let cell = x
        .windows(2)
        .map(|p| p[1] - p[0])
        .fold(0.0, f64::max);
    let positive: Vec<f64> = deltas.iter().copied().filter(|&d| d > 0.0).collect();
    let curves: Vec<BidCurve> = positive
        .iter()
        .map(|&d| {
            let wc = WinnerCurve::build(lambda, d, 1, n_points)?;
            bid_with_uncertainty(dist, &wc, Some(&x))
        })
        .collect::<Result<_>>()?;

    let below: Vec<usize> = (0..x.len()).filter(|&i| x[i] <= t).collect();
    let mut entries = Vec::new();
    for (d, bc) in positive.iter().zip(&curves) {
        let worst_bid_excess = below
            .iter()
            .map(|&i| bc.bids[i] - base.bids[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let worst_expectation_shortfall = below
            .iter()
            .map(|&i| bc.expectation[i] - base.expectation[i])
            .fold(f64::INFINITY, f64::min);
        let min_expectation = below
            .iter()
            .map(|&i| bc.expectation[i])
            .fold(f64::INFINITY, f64::min);
        let (arg, gap) = (0..x.len())
            .map(|i| (x[i], base.bids[i] - bc.bids[i]))
            .fold((x[0], f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
        entries.push(ComparativeEntry {
            delta: *d,
            worst_bid_excess,
            worst_expectation_shortfall,
            min_expectation,
            bid_gap_argmax: arg,
            bid_gap_max: gap,
        });
    }

    // Bids along the delta sequence, starting from the posted price.
    let tol = COMPARATIVE_TOL;
    let monotone_at = |i: usize| {
        let mut prev = base.bids[i];
        curves.iter().all(|bc| {
            let ok = bc.bids[i] <= prev + tol;
            prev = bc.bids[i];
            ok
        })
    };
    let mut x_star_estimate = None;
    for (i, &xi) in x.iter().enumerate() {
        if !monotone_at(i) {
            break;
        }
        x_star_estimate = Some(xi);
    }
    let bids_below_posted_price = entries.iter().all(|e| e.worst_bid_excess <= tol);
    let expectations_above_posted = entries
        .iter()
        .all(|e| e.worst_expectation_shortfall >= -tol && e.min_expectation >= -1e-9);
    let bids_monotone_in_delta = below.iter().all(|&i| monotone_at(i));
    let gap_peaks_at_threshold = entries
        .iter()
        .all(|e| (e.bid_gap_argmax - t).abs() <= cell * (1.0 + 1e-9));
    Ok(ComparativesReport {
        lambda,
        threshold: t,
        grid_step: cell,
        tolerance: tol,
        entries,
        x_star_estimate,
        bids_below_posted_price,
        expectations_above_posted,
        bids_monotone_in_delta,
        gap_peaks_at_threshold,
        passed: bids_below_posted_price
            && expectations_above_posted
            && bids_monotone_in_delta
            && gap_peaks_at_threshold,
    })
}
