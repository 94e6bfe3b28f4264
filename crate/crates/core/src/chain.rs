//! The bidder-pool Markov chain.
//!
//! One round, in order: the `min(n, μ)` highest bidders win and leave, every
//! survivor is removed independently with probability `δ`, then a
//! Poisson(`λ*`) batch of new bidders arrives. The state is the pool size at
//! auction time, i.e. after arrivals.
//!
//! Stationary distributions are found by iterating that exact one-step map on
//! a truncated vector. For `μ = 1` the empty-pool probability `p₀` also has an
//! exact series form (see [`log_empty_pool_probability`]) which stays accurate
//! far below the range where `p₀` itself is representable.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::values::ValueDistribution;

/// Kernel entries smaller than this fraction of the kernel mode are dropped.
const KERNEL_REL_CUTOFF: f64 = 1e-22;

/// Below this `p₀` is reported through `log_p0` only.
pub const P0_UNDERFLOW: f64 = 1e-290;

const MAX_N_MAX: usize = 1 << 24;

const RECURRENCE_NOISE: f64 = 1e-17;

/// Parameters of one pool chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    /// Poisson arrival mean per round of the tracked (sub-)pool.
    pub lambda_star: f64,
    /// Per-round removal probability of each surviving bidder.
    pub delta: f64,
    /// Winners per round.
    pub mu: u32,
}

impl ChainParams {
    pub fn new(lambda_star: f64, delta: f64, mu: u32) -> Result<Self> {
        if !lambda_star.is_finite() || lambda_star < 0.0 {
            return Err(Error::InvalidParameters(format!(
                "lambda* must be finite and >= 0, got {lambda_star}"
            )));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::InvalidParameters(format!(
                "delta must lie in [0, 1], got {delta}"
            )));
        }
        if mu == 0 {
            return Err(Error::InvalidParameters("mu must be >= 1".into()));
        }
        Ok(Self {
            lambda_star,
            delta,
            mu,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Transient,
    NullRecurrent,
    PositiveRecurrent,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::Transient => "Transient",
            Regime::NullRecurrent => "NullRecurrent",
            Regime::PositiveRecurrent => "PositiveRecurrent",
        };
        f.write_str(s)
    }
}

impl Regime {
    pub fn explanation(&self) -> &'static str {
        match self {
            Regime::Transient => "arrivals outpace winners and nobody is ever removed; the pool grows without limit",
            Regime::NullRecurrent => "arrivals exactly balance winners; the pool empties again but with unbounded mean waiting time",
            Regime::PositiveRecurrent => "the pool has a unique stationary distribution",
        }
    }
}

pub fn classify_regime(params: &ChainParams) -> Regime {
    if params.delta > 0.0 {
        return Regime::PositiveRecurrent;
    }
    let mu = params.mu as f64;
    if params.lambda_star > mu {
        Regime::Transient
    } else if params.lambda_star == mu {
        Regime::NullRecurrent
    } else {
        Regime::PositiveRecurrent
    }
}

fn require_ergodic(params: &ChainParams) -> Result<()> {
    match classify_regime(params) {
        Regime::PositiveRecurrent => Ok(()),
        regime => Err(Error::NonErgodic {
            regime,
            lambda_star: params.lambda_star,
            delta: params.delta,
            mu: params.mu,
        }),
    }
}

/// Truncated stationary (or transient) pool-size distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolDistribution {
    pub params: ChainParams,
    /// `probs[n]` for `n = 0..=n_max`.
    pub probs: Vec<f64>,
    /// Mass beyond `n_max`; `Σ probs + tail_mass = 1`.
    pub tail_mass: f64,
    /// L1 distance between this vector and its image under one round.
    pub residual: f64,
    /// `ln p₀`, from the exact series when one exists for these parameters.
    pub log_p0: Option<f64>,
    pub iterations: usize,
}

/// JSON header written next to the `(n, p_n)` CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolHeader {
    pub lambda_star: f64,
    pub delta: f64,
    pub mu: u32,
    pub n_max: usize,
    pub tail_mass: f64,
    pub residual: f64,
    pub log_p0: Option<f64>,
}

impl PoolDistribution {
    pub fn point_mass(params: ChainParams, n: usize, n_max: usize) -> Self {
        let mut probs = vec![0.0; n_max.max(n) + 1];
        probs[n] = 1.0;
        Self {
            params,
            probs,
            tail_mass: 0.0,
            residual: f64::NAN,
            log_p0: None,
            iterations: 0,
        }
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn p0(&self) -> f64 {
        self.probs[0]
    }

    pub fn header(&self) -> PoolHeader {
        PoolHeader {
            lambda_star: self.params.lambda_star,
            delta: self.params.delta,
            mu: self.params.mu,
            n_max: self.n_max(),
            tail_mass: self.tail_mass,
            residual: self.residual,
            log_p0: self.log_p0,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "p_n"])?;
        for (n, p) in self.probs.iter().enumerate() {
            w.write_record([n.to_string(), format!("{p:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Window {
    start: usize,
    weights: Vec<f64>,
}

impl Window {
    fn point(at: usize) -> Self {
        Self {
            start: at,
            weights: vec![1.0],
        }
    }

    // Walks outward from the mode with the pmf ratio recurrences until the
    // terms drop below the relative cutoff.
    fn around_mode(
        mode: usize,
        log_mode_pmf: f64,
        lo_limit: usize,
        hi_limit: usize,
        ratio_down: impl Fn(usize) -> f64,
        ratio_up: impl Fn(usize) -> f64,
    ) -> Self {
        let peak = log_mode_pmf.exp();
        let floor = peak * KERNEL_REL_CUTOFF;
        let mut below = Vec::new();
        let mut k = mode;
        let mut v = peak;
        while k > lo_limit {
            v *= ratio_down(k);
            if v < floor {
                break;
            }
            k -= 1;
            below.push(v);
        }
        let start = mode - below.len();
        below.reverse();
        let mut weights = below;
        weights.push(peak);
        let mut k = mode;
        let mut v = peak;
        while k < hi_limit {
            v *= ratio_up(k);
            if v < floor {
                break;
            }
            k += 1;
            weights.push(v);
        }
        // The dropped tails are below 1e-20; renormalizing removes the
        // rounding of the log-gamma evaluation at the mode.
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { start, weights }
    }

    fn poisson(lambda: f64) -> Self {
        if lambda == 0.0 {
            return Self::point(0);
        }
        let mode = lambda.floor() as usize;
        let log_pm = mode as f64 * lambda.ln() - lambda - ln_gamma(mode as f64 + 1.0);
        Self::around_mode(
            mode,
            log_pm,
            0,
            usize::MAX,
            |k| k as f64 / lambda,
            |k| lambda / (k as f64 + 1.0),
        )
    }

    // Survivors out of m, each kept with probability `keep`.
    fn binomial(m: usize, keep: f64) -> Self {
        if keep >= 1.0 {
            return Self::point(m);
        }
        if keep <= 0.0 || m == 0 {
            return Self::point(0);
        }
        let mf = m as f64;
        let mode = (((mf + 1.0) * keep).floor() as usize).min(m);
        let k = mode as f64;
        let log_pm = ln_gamma(mf + 1.0) - ln_gamma(k + 1.0) - ln_gamma(mf - k + 1.0)
            + k * keep.ln()
            + (mf - k) * (1.0 - keep).ln();
        let odds = keep / (1.0 - keep);
        Self::around_mode(
            mode,
            log_pm,
            0,
            m,
            |k| k as f64 / ((mf - k as f64 + 1.0) * odds),
            |k| (mf - k as f64) / (k as f64 + 1.0) * odds,
        )
    }
}

/// One-round operator on a vector truncated at `n_max`.
#[derive(Debug, Clone)]
struct Transition {
    mu: usize,
    n_max: usize,
    arrivals: Window,
    thinning: Vec<Window>,
    scratch_after_winners: Vec<f64>,
    scratch_survivors: Vec<f64>,
}

impl Transition {
    fn new(params: &ChainParams, n_max: usize) -> Self {
        let keep = 1.0 - params.delta;
        let mu = params.mu as usize;
        let thinning = (0..=n_max.saturating_sub(mu.min(n_max)))
            .map(|m| Window::binomial(m, keep))
            .collect();
        Self {
            mu,
            n_max,
            arrivals: Window::poisson(params.lambda_star),
            thinning,
            scratch_after_winners: vec![0.0; n_max + 1],
            scratch_survivors: vec![0.0; n_max + 1],
        }
    }

    /// Writes the image of `input` (rescaled to unit mass) into `out`; returns
    /// the overflow mass beyond `n_max`.
    fn apply(&mut self, input: &[f64], out: &mut [f64]) -> f64 {
        debug_assert_eq!(input.len(), self.n_max + 1);
        let total: f64 = input.iter().sum();
        let scale = if total > 0.0 { 1.0 / total } else { 0.0 };

        let after = &mut self.scratch_after_winners;
        after.fill(0.0);
        for (n, &p) in input.iter().enumerate() {
            after[n.saturating_sub(self.mu)] += p * scale;
        }

        let surv = &mut self.scratch_survivors;
        surv.fill(0.0);
        for (m, &p) in after.iter().enumerate() {
            if p == 0.0 || m >= self.thinning.len() {
                continue;
            }
            let win = &self.thinning[m];
            for (i, &w) in win.weights.iter().enumerate() {
                surv[win.start + i] += p * w;
            }
        }

        out.fill(0.0);
        let arr = &self.arrivals;
        for (j, &p) in surv.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let first = j + arr.start;
            if first > self.n_max {
                continue;
            }
            let len = arr.weights.len().min(self.n_max + 1 - first);
            for (slot, &w) in out[first..first + len].iter_mut().zip(&arr.weights[..len]) {
                *slot += p * w;
            }
        }
        let kept: f64 = out.iter().sum();
        (1.0 - kept).max(0.0)
    }
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// One synchronous round applied to `p`, keeping its truncation bound.
pub fn apply_transition(p: &PoolDistribution, params: &ChainParams) -> PoolDistribution {
    let mut op = Transition::new(params, p.n_max());
    let mut out = vec![0.0; p.probs.len()];
    let overflow = op.apply(&p.probs, &mut out);
    let residual = l1_distance(&out, &p.probs);
    PoolDistribution {
        params: *params,
        probs: out,
        tail_mass: overflow,
        residual,
        log_p0: None,
        iterations: 0,
    }
}

/// Fate of a bidder who joins a pool whose higher-valued part is distributed
/// as `p`: it wins the first round that finds fewer than `μ` rivals above
/// it, and otherwise survives each round with probability `1 − δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirstWin {
    pub success: f64,
    /// Mean rounds to the win, among wins; winning at once counts 1.
    pub mean_rounds: f64,
    /// Mass neither won nor removed when propagation stopped, plus mass lost
    /// past the truncation bound.
    pub unresolved: f64,
}

/// Propagates `p` round by round, absorbing at "fewer than μ rivals" and
/// discounting by survival. Unlike a per-round success chance, this keeps
/// the persistence of the rival pool from one round to the next.
pub fn first_win_from(p: &PoolDistribution, tol: f64) -> FirstWin {
    const MAX_ROUNDS: u64 = 10_000_000;
    let params = p.params;
    let mu = params.mu as usize;
    let keep = 1.0 - params.delta;
    let mut op = Transition::new(&params, p.n_max());
    let mut q = p.probs.clone();
    let mut out = vec![0.0; q.len()];
    let (mut success, mut timed, mut lost) = (0.0, 0.0, 0.0);
    let mut k = 1u64;
    let alive = loop {
        let won: f64 = q.iter().take(mu).sum();
        success += won;
        timed += k as f64 * won;
        q.iter_mut().take(mu).for_each(|v| *v = 0.0);
        let alive = q.iter().sum::<f64>() * keep;
        if alive <= tol || k >= MAX_ROUNDS {
            break alive;
        }
        lost += alive * op.apply(&q, &mut out);
        q.iter_mut().zip(&out).for_each(|(d, s)| *d = s * alive);
        k += 1;
    };
    FirstWin {
        success,
        mean_rounds: if success > 0.0 { timed / success } else { f64::NAN },
        unresolved: alive + lost,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// L1 fixed-point residual target.
    pub tol: f64,
    /// Maximum mass allowed beyond the truncation bound.
    pub tail_tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            tail_tol: 1e-12,
            max_iterations: 1_000_000,
        }
    }
}

fn initial_n_max(params: &ChainParams) -> usize {
    let scale = 8.0 * params.lambda_star / params.delta.max(0.05);
    (scale.ceil() as usize).max(32)
}

/// Stationary distribution by power iteration of the one-round map, starting
/// from an empty pool.
///
/// The truncation bound doubles whenever one round pushes at least
/// `opts.tail_tol` of mass past it. From an empty start the chain is
/// stochastically increasing, so overflow seen on the way up never exceeds the
/// stationary overflow and no work is thrown away.
pub fn solve_stationary(params: &ChainParams, opts: &SolverOptions) -> Result<PoolDistribution> {
    require_ergodic(params)?;
    let mut n_max = initial_n_max(params);
    let mut cur = vec![0.0; n_max + 1];
    cur[0] = 1.0;
    let mut next = vec![0.0; n_max + 1];
    let mut op = Transition::new(params, n_max);
    let mut iterations = 0usize;
    let mut residual = f64::INFINITY;
    loop {
        if iterations >= opts.max_iterations {
            return Err(Error::NoConvergence {
                iterations,
                residual,
                n_max,
            });
        }
        let tail = op.apply(&cur, &mut next);
        if tail >= opts.tail_tol {
            if n_max >= MAX_N_MAX {
                return Err(Error::NoConvergence {
                    iterations,
                    residual,
                    n_max,
                });
            }
            n_max *= 2;
            cur.resize(n_max + 1, 0.0);
            next.resize(n_max + 1, 0.0);
            op = Transition::new(params, n_max);
            continue;
        }
        residual = l1_distance(&cur, &next);
        std::mem::swap(&mut cur, &mut next);
        iterations += 1;
        if residual < opts.tol {
            let log_p0 = match log_empty_pool_probability(params) {
                Ok(l) => Some(l),
                Err(_) if cur[0] > 0.0 => Some(cur[0].ln()),
                Err(_) => None,
            };
            return Ok(PoolDistribution {
                params: *params,
                probs: cur,
                tail_mass: tail,
                residual,
                log_p0,
                iterations,
            });
        }
    }
}

/// Exact zero-uncertainty stationary distribution (`δ = 0`, `μ = 1`) by the
/// forward recurrence of the balance equations, stopped once the remaining
/// mass falls below `tail_tol`.
pub fn stationary_zero_uncertainty(lambda_star: f64, tail_tol: f64) -> Result<PoolDistribution> {
    let params = ChainParams::new(lambda_star, 0.0, 1)?;
    require_ergodic(&params)?;
    if lambda_star == 0.0 {
        let mut p = PoolDistribution::point_mass(params, 0, 0);
        p.residual = 0.0;
        p.log_p0 = Some(0.0);
        return Ok(p);
    }
    const MAX_LEN: usize = 1 << 20;
    let mut poisson = vec![(-lambda_star).exp()];
    let mut p = vec![1.0 - lambda_star];
    p.push(p[0] * lambda_star.exp_m1());
    let mut cumulative = p[0] + p[1];
    let mut m = 1;
    while 1.0 - cumulative >= tail_tol {
        if m >= MAX_LEN {
            return Err(Error::NoConvergence {
                iterations: m,
                residual: 1.0 - cumulative,
                n_max: m,
            });
        }
        while poisson.len() <= m {
            let k = poisson.len();
            poisson.push(poisson[k - 1] * lambda_star / k as f64);
        }
        let mut rest = p[m] - (p[0] + p[1]) * poisson[m];
        for n in 2..=m {
            rest -= p[n] * poisson[m - n + 1];
        }
        let next = (rest / poisson[0]).max(0.0);
        p.push(next);
        cumulative += next;
        m += 1;
        // Past this point the terms are cancellation noise and the running
        // sum can no longer move, so a tighter tail is out of reach.
        if next < RECURRENCE_NOISE && 1.0 - cumulative >= tail_tol {
            return Err(Error::NoConvergence {
                iterations: m,
                residual: 1.0 - cumulative,
                n_max: m,
            });
        }
    }
    let mut dist = PoolDistribution {
        params,
        tail_mass: (1.0 - cumulative).max(0.0),
        residual: 0.0,
        log_p0: Some((-lambda_star).ln_1p()),
        iterations: 0,
        probs: p,
    };
    dist.residual = apply_transition(&dist, &params).residual;
    Ok(dist)
}

/// `Σ p_n zⁿ`.
pub fn pgf_eval(p: &PoolDistribution, z: f64) -> f64 {
    p.probs.iter().rev().fold(0.0, |acc, &pn| acc * z + pn)
}

pub fn mean_pool_size(p: &PoolDistribution) -> f64 {
    p.probs
        .iter()
        .enumerate()
        .map(|(n, &pn)| n as f64 * pn)
        .sum()
}

/// Closed-form mean pool size: `(λ − (1−p₀)(1−δ))/δ` for `δ > 0`, and
/// `λ*(2 − λ*)/(2(1 − λ*))` for `δ = 0` (where `p0` is not needed).
pub fn mean_closed(params: &ChainParams, p0: f64) -> Result<f64> {
    if params.mu != 1 {
        return Err(Error::NoClosedForm(format!(
            "mean pool size with mu={} winners",
            params.mu
        )));
    }
    let l = params.lambda_star;
    if params.delta > 0.0 {
        Ok((l - (1.0 - p0) * (1.0 - params.delta)) / params.delta)
    } else {
        require_ergodic(params)?;
        Ok(l * (2.0 - l) / (2.0 * (1.0 - l)))
    }
}

/// Mean rounds until a value-`x` bidder wins with `δ = 0`, `μ = 1`:
/// `1 / (1 − λ(1 − F(x)))`.
pub fn expected_time_to_win(lambda: f64, dist: &ValueDistribution, x: f64) -> Result<f64> {
    let params = ChainParams::new(lambda * (1.0 - dist.cdf(x)), 0.0, 1)?;
    require_ergodic(&params)?;
    Ok(1.0 / (1.0 - params.lambda_star))
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Exact `ln p₀` of the single-winner chain.
///
/// With `s(z) = δ + (1−δ)z` and `φ(z) = e^{λ*(z−1)}` the stationary PGF
/// satisfies `G(z) = φ(z)[p₀ + (G(s(z)) − p₀)/s(z)]`. Evaluating along the
/// orbit `z_k = 1 − (1−δ)^k` (which starts at 0 and tends to 1) and
/// unrolling gives `p₀ = C / (1 + S)` where
///
/// * `C = Π_k φ(z_k)/z_{k+1}`
/// * `S = Σ_k (Π_{j<k} φ(z_j)/z_{j+1}) · φ(z_k)(1 − z_{k+1})/z_{k+1}`
///
/// Every term is positive, so everything is accumulated in log space.
pub fn log_empty_pool_probability(params: &ChainParams) -> Result<f64> {
    empty_pool_series(params).map(|(log_p0, _)| log_p0)
}

/// `(ln p₀, −d ln p₀/dλ*)` for the single-winner chain.
///
/// Differentiating the series of [`log_empty_pool_probability`] term by term
/// gives `−d ln p₀/dλ* = (1 + U)/(δ(1 + S))` with
/// `U = Σ_k t_k (1 − δ)^{k+1}` and `t_k` the terms of `S`. Again every term
/// is positive, so the slope is as accurate as `p₀` itself.
pub fn empty_pool_series(params: &ChainParams) -> Result<(f64, f64)> {
    if params.mu != 1 {
        return Err(Error::NoClosedForm(format!(
            "series for p0 needs mu = 1, got {}",
            params.mu
        )));
    }
    require_ergodic(params)?;
    let lambda = params.lambda_star;
    let delta = params.delta;
    if delta == 0.0 {
        return Ok(((-lambda).ln_1p(), 1.0 / (1.0 - lambda)));
    }
    if delta == 1.0 {
        return Ok((-lambda, 1.0));
    }
    let keep = 1.0 - delta;
    let ln_keep = keep.ln();
    let max_terms = (60.0 / delta).ceil().min(1e9) as usize + 64;
    let mut log_prod = 0.0;
    let mut log_s = f64::NEG_INFINITY;
    let mut log_u = f64::NEG_INFINITY;
    let mut qk = 1.0; // (1−δ)^k
    for k in 0..max_terms {
        let qk1 = qk * keep;
        let log_phi = -lambda * qk;
        let log_z_next = (-qk1).ln_1p();
        let log_q_next = (k + 1) as f64 * ln_keep;
        let log_t = log_prod + log_phi + log_q_next - log_z_next;
        log_s = log_add_exp(log_s, log_t);
        log_u = log_add_exp(log_u, log_t + log_q_next);
        log_prod += log_phi - log_z_next;
        qk = qk1;
        if (lambda + 1.0) * qk / delta < 1e-18 {
            let log_one_plus_s = log_add_exp(0.0, log_s);
            let log_p0 = if lambda == 0.0 {
                0.0
            } else {
                log_prod - log_one_plus_s
            };
            let slope = (log_add_exp(0.0, log_u) - log_one_plus_s).exp() / delta;
            return Ok((log_p0, slope));
        }
    }
    Err(Error::NoConvergence {
        iterations: max_terms,
        residual: (lambda + 1.0) * qk / delta,
        n_max: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(l: f64, d: f64, mu: u32) -> ChainParams {
        ChainParams::new(l, d, mu).unwrap()
    }

    fn poisson_pmf(lambda: f64, n: usize) -> f64 {
        (n as f64 * lambda.ln() - lambda - ln_gamma(n as f64 + 1.0)).exp()
    }

    #[test]
    fn params_validation() {
        assert!(ChainParams::new(-0.1, 0.0, 1).is_err());
        assert!(ChainParams::new(1.0, 1.5, 1).is_err());
        assert!(ChainParams::new(1.0, 0.5, 0).is_err());
        assert!(ChainParams::new(f64::NAN, 0.5, 1).is_err());
    }

    #[test]
    fn regime_examples() {
        assert_eq!(classify_regime(&params(2.0, 0.0, 1)), Regime::Transient);
        assert_eq!(classify_regime(&params(1.0, 0.0, 1)), Regime::NullRecurrent);
        assert_eq!(classify_regime(&params(2.0, 0.01, 1)), Regime::PositiveRecurrent);
        assert_eq!(classify_regime(&params(0.5, 0.0, 1)), Regime::PositiveRecurrent);
        assert_eq!(classify_regime(&params(3.0, 0.0, 3)), Regime::NullRecurrent);
        assert_eq!(classify_regime(&params(2.5, 0.0, 3)), Regime::PositiveRecurrent);
        assert_eq!(classify_regime(&params(3.5, 0.0, 3)), Regime::Transient);
    }

    #[test]
    fn windows_are_normalized() {
        for l in [0.3, 2.0, 17.5, 400.0] {
            let w = Window::poisson(l);
            let s: f64 = w.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-14, "poisson {l}: {s}");
        }
        for (m, keep) in [(1, 0.5), (10, 0.99), (500, 0.998), (3000, 0.3)] {
            let w = Window::binomial(m, keep);
            let s: f64 = w.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-13, "binomial {m},{keep}: {s}");
            assert!(w.start + w.weights.len() <= m + 1);
        }
    }

    #[test]
    fn transition_examples() {
        // Lone bidder wins and nobody arrives.
        for d in [0.0, 0.3, 1.0] {
            let p = params(0.0, d, 1);
            let out = apply_transition(&PoolDistribution::point_mass(p, 1, 8), &p);
            assert_eq!(out.probs[0], 1.0);
            assert_eq!(out.probs[1..].iter().sum::<f64>(), 0.0);
        }
        // Empty pool plus Poisson(0.5) arrivals.
        let p = params(0.5, 0.0, 1);
        let out = apply_transition(&PoolDistribution::point_mass(p, 0, 40), &p);
        for n in 0..=40 {
            assert!((out.probs[n] - poisson_pmf(0.5, n)).abs() < 1e-15);
        }
        // delta = 1 wipes the survivors.
        let p = params(2.0, 1.0, 1);
        let out = apply_transition(&PoolDistribution::point_mass(p, 3, 60), &p);
        for n in 0..=60 {
            assert!((out.probs[n] - poisson_pmf(2.0, n)).abs() < 1e-15);
        }
    }

    #[test]
    fn transition_reports_overflow_as_tail() {
        let p = params(4.0, 0.0, 1);
        let out = apply_transition(&PoolDistribution::point_mass(p, 0, 3), &p);
        let kept: f64 = out.probs.iter().sum();
        assert!((kept + out.tail_mass - 1.0).abs() < 1e-15);
        let expected_tail = 1.0 - (0..=3).map(|n| poisson_pmf(4.0, n)).sum::<f64>();
        assert!((out.tail_mass - expected_tail).abs() < 1e-14);
    }

    #[test]
    fn transition_with_several_winners() {
        // 5 bidders, 2 win, survivors 3 thinned by 1/2, no arrivals.
        let p = params(0.0, 0.5, 2);
        let out = apply_transition(&PoolDistribution::point_mass(p, 5, 10), &p);
        let expect = [0.125, 0.375, 0.375, 0.125];
        for (n, e) in expect.iter().enumerate() {
            assert!((out.probs[n] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn solve_examples() {
        let opts = SolverOptions::default();
        let p = solve_stationary(&params(0.5, 0.0, 1), &opts).unwrap();
        assert!((p.p0() - 0.5).abs() < 1e-10);
        assert!((p.probs[1] - 0.324_360_635_350_064).abs() < 1e-10);
        let p = solve_stationary(&params(3.0, 1.0, 1), &opts).unwrap();
        assert!((p.p0() - (-3.0f64).exp()).abs() < 1e-12);
        for n in 0..30 {
            assert!((p.probs[n] - poisson_pmf(3.0, n)).abs() < 1e-12);
        }
        assert!(p.residual < opts.tol);
        assert!(p.tail_mass < opts.tail_tol);
        let total: f64 = p.probs.iter().sum::<f64>() + p.tail_mass;
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn solve_rejects_non_ergodic() {
        let opts = SolverOptions::default();
        assert!(matches!(
            solve_stationary(&params(2.0, 0.0, 1), &opts),
            Err(Error::NonErgodic {
                regime: Regime::Transient,
                ..
            })
        ));
        assert!(matches!(
            solve_stationary(&params(1.0, 0.0, 1), &opts),
            Err(Error::NonErgodic {
                regime: Regime::NullRecurrent,
                ..
            })
        ));
    }

    #[test]
    fn solve_reports_exhausted_budget() {
        let opts = SolverOptions {
            max_iterations: 5,
            ..Default::default()
        };
        assert!(matches!(
            solve_stationary(&params(2.0, 0.01, 1), &opts),
            Err(Error::NoConvergence { iterations: 5, .. })
        ));
    }

    #[test]
    fn recurrence_examples() {
        let p = stationary_zero_uncertainty(0.5, 1e-12).unwrap();
        assert!((p.p0() - 0.5).abs() < 1e-15);
        assert!((p.probs[1] - 0.5 * 0.5f64.exp_m1()).abs() < 1e-15);
        assert!(p.tail_mass < 1e-12);
        let p = stationary_zero_uncertainty(1e-12, 1e-12).unwrap();
        assert!((p.p0() - 1.0).abs() < 1e-11);
        let p = stationary_zero_uncertainty(0.0, 1e-12).unwrap();
        assert_eq!(p.probs, vec![1.0]);
        assert!(stationary_zero_uncertainty(1.0, 1e-12).is_err());
        assert!(stationary_zero_uncertainty(1.3, 1e-12).is_err());
    }

    #[test]
    fn pgf_examples() {
        let p = stationary_zero_uncertainty(0.5, 1e-14).unwrap();
        assert!((pgf_eval(&p, 1.0) - (1.0 - p.tail_mass)).abs() < 1e-14);
        let l: f64 = 0.5;
        let z: f64 = 0.5;
        let phi = (l * (z - 1.0)).exp();
        let closed = (1.0 - l) * (1.0 - z) * phi / (phi - z);
        assert!((pgf_eval(&p, z) - closed).abs() < 1e-13);
        let point = PoolDistribution::point_mass(params(1.0, 0.0, 1), 0, 5);
        assert_eq!(pgf_eval(&point, 0.3), 1.0);
    }

    #[test]
    fn mean_examples() {
        let p = stationary_zero_uncertainty(0.5, 1e-15).unwrap();
        assert!((mean_pool_size(&p) - 0.75).abs() < 1e-10);
        assert!((mean_closed(&params(0.5, 0.0, 1), 0.5).unwrap() - 0.75).abs() < 1e-15);
        assert!((mean_closed(&params(2.0, 0.01, 1), 0.0).unwrap() - 101.0).abs() < 1e-9);
        let e3 = (-3.0f64).exp();
        assert!((mean_closed(&params(3.0, 1.0, 1), e3).unwrap() - 3.0).abs() < 1e-15);
        assert!(mean_closed(&params(1.2, 0.0, 1), 0.0).is_err());
        assert!(mean_closed(&params(1.2, 0.1, 2), 0.0).is_err());
    }

    #[test]
    fn time_to_win_examples() {
        let u = ValueDistribution::unit_uniform();
        assert!((expected_time_to_win(2.0, &u, 0.9).unwrap() - 1.25).abs() < 1e-12);
        assert!((expected_time_to_win(2.0, &u, 0.75).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(expected_time_to_win(2.0, &u, 1.0).unwrap(), 1.0);
        assert!(expected_time_to_win(2.0, &u, 0.5).is_err());
        assert!(expected_time_to_win(2.0, &u, 0.3).is_err());
    }

    #[test]
    fn series_matches_power_iteration() {
        let opts = SolverOptions::default();
        for (l, d) in [(0.5, 0.3), (1.0, 0.1), (2.0, 0.2), (3.0, 0.5), (0.2, 0.05), (2.0, 0.9)] {
            let pr = params(l, d, 1);
            let solved = solve_stationary(&pr, &opts).unwrap();
            let series = log_empty_pool_probability(&pr).unwrap();
            assert!(
                (series - solved.p0().ln()).abs() < 1e-8,
                "lambda={l} delta={d}: series {series} vs solver {}",
                solved.p0().ln()
            );
        }
    }

    #[test]
    fn series_special_cases() {
        assert_eq!(log_empty_pool_probability(&params(0.0, 0.2, 1)).unwrap(), 0.0);
        assert_eq!(log_empty_pool_probability(&params(2.0, 1.0, 1)).unwrap(), -2.0);
        assert!((log_empty_pool_probability(&params(0.4, 0.0, 1)).unwrap() - 0.6f64.ln()).abs() < 1e-15);
        assert!(log_empty_pool_probability(&params(1.4, 0.0, 1)).is_err());
        assert!(log_empty_pool_probability(&params(1.4, 0.1, 2)).is_err());
        // Continuity at the delta = 1 and delta -> 0 ends.
        let near_one = log_empty_pool_probability(&params(2.0, 1.0 - 1e-9, 1)).unwrap();
        assert!((near_one + 2.0).abs() < 1e-6);
        let near_zero = log_empty_pool_probability(&params(0.4, 1e-4, 1)).unwrap();
        assert!((near_zero - 0.6f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn series_slope_matches_finite_difference() {
        for (l, d) in [(0.0, 0.3), (0.5, 0.3), (2.0, 0.01), (5.0, 0.1), (1.5, 0.002), (3.0, 0.9)] {
            let (_, slope) = empty_pool_series(&params(l, d, 1)).unwrap();
            let eps = 1e-5;
            let up = log_empty_pool_probability(&params(l + eps, d, 1)).unwrap();
            let down = if l >= eps {
                log_empty_pool_probability(&params(l - eps, d, 1)).unwrap()
            } else {
                log_empty_pool_probability(&params(l, d, 1)).unwrap()
            };
            let span = if l >= eps { 2.0 * eps } else { eps };
            let fd = -(up - down) / span;
            assert!((slope - fd).abs() < 1e-5 * slope.max(1.0), "({l},{d}) {slope} vs {fd}");
        }
        assert_eq!(empty_pool_series(&params(0.4, 0.0, 1)).unwrap().1, 1.0 / 0.6);
        assert_eq!(empty_pool_series(&params(0.4, 1.0, 1)).unwrap().1, 1.0);
    }

    #[test]
    fn csv_and_header() {
        let p = solve_stationary(&params(0.5, 0.2, 1), &SolverOptions::default()).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,p_n\n0,"));
        assert_eq!(text.lines().count(), p.probs.len() + 1);
        let h = serde_json::to_value(p.header()).unwrap();
        for key in ["lambda_star", "delta", "mu", "n_max", "tail_mass", "residual", "log_p0"] {
            assert!(h.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn first_win_examples() {
        // No uncertainty: waiting time from a stationary start is
        // 1 + E[N]/(1 − λ*), each rival clearing a busy period of 1/(1 − λ*).
        let l: f64 = 0.2;
        let p = stationary_zero_uncertainty(l, 1e-14).unwrap();
        let fw = first_win_from(&p, 1e-15);
        let mean_n = l * (2.0 - l) / (2.0 * (1.0 - l));
        assert!((fw.success - 1.0).abs() < 1e-12);
        assert!((fw.mean_rounds - (1.0 + mean_n / (1.0 - l))).abs() < 1e-10, "{fw:?}");
        // Certain removal leaves one chance: an empty rival pool.
        let params = ChainParams::new(2.0, 1.0, 1).unwrap();
        let p = solve_stationary(&params, &SolverOptions::default()).unwrap();
        let fw = first_win_from(&p, 1e-15);
        assert!((fw.success - (-2.0f64).exp()).abs() < 1e-12);
        assert_eq!(fw.mean_rounds, 1.0);
    }
}
