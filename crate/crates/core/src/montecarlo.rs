//! Round-by-round simulation of the unending auction.
//!
//! Each round: the `min(n, μ)` highest-value bidders win and leave, every
//! survivor independently leaves with probability `δ`, then `Poisson(λ)`
//! newcomers arrive. Runs are reproducible from the seed: the generator is
//! ChaCha8, with stream `2r` driving replication `r` and stream `2r + 1`
//! driving its probes.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use ordered_float::OrderedFloat;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::PoolDistribution;
use crate::equilibrium::{bid_with_uncertainty, zero_uncertainty_bid_curve, BidCurve};
use crate::error::{Error, Result};
use crate::values::{threshold_percentile, ValueDistribution};
use crate::winner::WinnerCurve;

pub const DEFAULT_POOL_CAP: usize = 10_000_000;
pub const DEFAULT_WINNER_BUCKETS: usize = 100;
/// Fewest winner values for which autocorrelations are meaningful.
pub const MIN_AUTOCORR_SAMPLES: usize = 10_000;
const BATCHES: u64 = 64;

/// Warmup heuristic tied to the `1/δ` pool scale.
pub fn default_warmup(delta: f64) -> u64 {
    if delta > 0.0 {
        10_000u64.max((20.0 / delta).ceil() as u64)
    } else {
        10_000
    }
}

/// A marked bidder of fixed value, re-inserted `replications` times.
///
/// Replica `k` joins with the arrivals of round `insert_round + k·spacing`
/// and competes from the next round on. Replicas are virtual: each sees the
/// real pool but is invisible to it and to the other replicas. A bidder only
/// ever displaces lower values, so the higher-value sub-pool that decides
/// its fate evolves exactly as if it were really there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub value: f64,
    pub insert_round: u64,
    pub replications: u64,
    /// Rounds between replicas; defaults to `⌈1/δ⌉`, or 10 when `δ = 0`.
    #[serde(default)]
    pub spacing: Option<u64>,
}

impl Probe {
    fn spacing_for(&self, delta: f64) -> u64 {
        self.spacing.unwrap_or(if delta > 0.0 { (1.0 / delta).ceil() as u64 } else { 10 }).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSwitch {
    /// First round whose arrivals and bids use the new rate.
    pub round: u64,
    pub lambda: f64,
}

/// How a winner's price is derived from its value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BidSource {
    /// `min(x, X_(λ/μ))`; needs `λ > μ`.
    PostedPrice,
    /// Equilibrium bid curve for the current `(λ, δ)` on a `points` grid.
    /// Values above the grid's top pay the top bid.
    Curve { points: usize },
    /// No prices; winner values only.
    ValuesOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub lambda: f64,
    pub delta: f64,
    pub mu: u32,
    pub dist: ValueDistribution,
    /// Total rounds, warmup included.
    pub horizon: u64,
    pub warmup: u64,
    pub seed: u64,
    #[serde(default)]
    pub probes: Vec<Probe>,
    #[serde(default)]
    pub lambda_switch: Option<LambdaSwitch>,
    pub bid_source: BidSource,
    #[serde(default)]
    pub initial_pool: Vec<f64>,
    pub pool_cap: usize,
    /// Drop arrivals below this value; must sit under the threshold. Off by
    /// default because it distorts rounds where the upper pool runs dry.
    #[serde(default)]
    pub prune_floor: Option<f64>,
    pub winner_buckets: usize,
    /// Winner-value autocorrelations reported at lags `1..=autocorr_lags`.
    #[serde(default)]
    pub autocorr_lags: usize,
    /// Keep the post-warmup winner values in the (unserialised) report.
    #[serde(default)]
    pub keep_winner_series: bool,
    /// Check conservation of bidders every round.
    #[serde(default)]
    pub accounting: bool,
}

impl SimConfig {
    /// `horizon` counts post-warmup rounds here; the default warmup is added.
    pub fn new(lambda: f64, delta: f64, mu: u32, dist: ValueDistribution, rounds: u64, seed: u64) -> Self {
        let warmup = default_warmup(delta);
        SimConfig {
            lambda,
            delta,
            mu,
            dist,
            horizon: warmup + rounds,
            warmup,
            seed,
            probes: Vec::new(),
            lambda_switch: None,
            bid_source: BidSource::ValuesOnly,
            initial_pool: Vec::new(),
            pool_cap: DEFAULT_POOL_CAP,
            prune_floor: None,
            winner_buckets: DEFAULT_WINNER_BUCKETS,
            autocorr_lags: 0,
            keep_winner_series: false,
            accounting: false,
        }
    }

    pub fn post_warmup_rounds(&self) -> u64 {
        self.horizon - self.warmup
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let lambda_ok = |l: f64| l.is_finite() && l >= 0.0;
        if !lambda_ok(self.lambda) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0, 1], got {}", self.delta));
        }
        if self.mu == 0 {
            return bad("mu must be at least 1".into());
        }
        self.dist.validate()?;
        if self.warmup >= self.horizon {
            return bad(format!("warmup {} must be below horizon {}", self.warmup, self.horizon));
        }
        if self.winner_buckets == 0 {
            return bad("winner_buckets must be positive".into());
        }
        let (lo, hi) = (self.dist.support_infimum(), self.dist.support_supremum());
        for p in &self.probes {
            if !(lo..=hi).contains(&p.value) || !p.value.is_finite() {
                return bad(format!("probe value {} outside the support [{lo}, {hi}]", p.value));
            }
            if p.replications == 0 || p.insert_round == 0 {
                return bad("probes need replications >= 1 and insert_round >= 1".into());
            }
            let last = p.insert_round + (p.replications - 1) * p.spacing_for(self.delta);
            if last >= self.horizon {
                return bad(format!("probe replicas run to round {last}, past horizon {}", self.horizon));
            }
        }
        if let Some(s) = self.lambda_switch {
            if !lambda_ok(s.lambda) || s.round == 0 || s.round > self.horizon {
                return bad(format!("lambda switch {s:?} is not inside the run"));
            }
        }
        if let Some(v) = self.initial_pool.iter().find(|v| !(lo..=hi).contains(*v)) {
            return bad(format!("initial pool value {v} outside the support"));
        }
        let lambdas = self.lambdas();
        if let Some(floor) = self.prune_floor {
            for &l in &lambdas {
                let t = self.dist.threshold_value(l, self.mu).map_err(|_| {
                    Error::InvalidConfig(format!("pruning needs a threshold, none for lambda={l}"))
                })?;
                if floor >= t {
                    return bad(format!("prune floor {floor} is not below the threshold {t}"));
                }
            }
        }
        match self.bid_source {
            BidSource::PostedPrice => {
                for &l in &lambdas {
                    threshold_percentile(l, self.mu).map_err(|_| {
                        Error::InvalidConfig(format!("posted price needs lambda > mu, got lambda={l}"))
                    })?;
                }
            }
            BidSource::Curve { points } => {
                if self.mu > 1 && self.delta > 0.0 {
                    return bad("no bid curve is derived for mu > 1 with delta > 0".into());
                }
                if points < 2 {
                    return bad("bid curve needs at least 2 points".into());
                }
            }
            BidSource::ValuesOnly => {}
        }
        Ok(())
    }

    fn lambdas(&self) -> Vec<f64> {
        let mut l = vec![self.lambda];
        l.extend(self.lambda_switch.map(|s| s.lambda));
        l
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub value: f64,
    pub replications: u64,
    pub wins: u64,
    pub removals: u64,
    /// Replicas still waiting when the run ended.
    pub censored: u64,
    /// Wins over resolved replicas.
    pub success_rate: f64,
    pub success_se: f64,
    /// Mean rounds from insertion to winning, among winners; a win in the
    /// first round after insertion counts 1.
    pub mean_rounds_to_win: f64,
    pub rounds_to_win_se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceStats {
    pub mean: f64,
    pub std: f64,
    /// Batch-means standard error of the mean.
    pub se: f64,
}

/// Bidder totals over the whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accounting {
    pub initial: u64,
    pub arrivals: u64,
    pub pruned: u64,
    pub winners: u64,
    pub removed: u64,
    pub remaining: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed_echo: u64,
    pub replication: u64,
    pub rounds_simulated: u64,
    pub post_warmup_rounds: u64,
    /// Pool size at the start of each post-warmup round, i.e. after the
    /// previous round's arrivals.
    pub pool_histogram: Vec<u64>,
    pub pool_mean: f64,
    pub pool_mean_se: f64,
    pub max_pool_size: u64,
    /// Post-warmup winners counted by percentile `F(x)` in equal buckets.
    pub winner_value_histogram: Vec<u64>,
    pub winners: u64,
    pub winner_value_mean: f64,
    pub threshold_percentile: Option<f64>,
    /// Post-warmup winners strictly below the initial-λ threshold.
    pub winners_below_threshold: Option<u64>,
    pub price: Option<PriceStats>,
    pub probe_stats: Vec<ProbeStats>,
    /// Lags `1..=autocorr_lags`.
    pub autocorr: Vec<f64>,
    pub accounting: Option<Accounting>,
    #[serde(skip)]
    pub winner_values: Vec<f64>,
}

impl SimReport {
    /// Normalised pool histogram.
    pub fn pool_distribution(&self) -> Vec<f64> {
        let total = self.post_warmup_rounds as f64;
        self.pool_histogram.iter().map(|&c| c as f64 / total).collect()
    }

    pub fn write_pool_csv<W: Write>(&self, out: W) -> Result<()> {
        write_buckets(out, "pool_size", self.pool_histogram.iter().enumerate().map(|(i, &c)| (i as f64, c)))
    }

    /// Buckets are labelled by their lower percentile edge.
    pub fn write_winner_csv<W: Write>(&self, out: W) -> Result<()> {
        let k = self.winner_value_histogram.len() as f64;
        write_buckets(
            out,
            "percentile",
            self.winner_value_histogram.iter().enumerate().map(|(i, &c)| (i as f64 / k, c)),
        )
    }
}

fn write_buckets<W: Write>(out: W, label: &str, rows: impl Iterator<Item = (f64, u64)>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([label, "count"])?;
    for (b, c) in rows {
        w.write_record([b.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One round as seen by an observer. Winners are `(value, price)` in
/// removal order; `pool_size` is taken before the winners leave.
#[derive(Debug, Clone, Copy)]
pub struct RoundRecord<'a> {
    pub round: u64,
    pub pool_size: usize,
    pub winners: &'a [(f64, Option<f64>)],
}

/// Multiset of values with max extraction and uniform random deletion,
/// both `O(log n)`.
#[derive(Default)]
struct Pool {
    order: BTreeSet<(OrderedFloat<f64>, u64)>,
    slots: Vec<(f64, u64)>,
    slot_of: HashMap<u64, usize>,
    next_id: u64,
}

impl Pool {
    fn len(&self) -> usize {
        self.slots.len()
    }

    fn insert(&mut self, v: f64) {
        let id = self.next_id;
        self.next_id += 1;
        self.order.insert((OrderedFloat(v), id));
        self.slot_of.insert(id, self.slots.len());
        self.slots.push((v, id));
    }

    fn take_slot(&mut self, i: usize) -> f64 {
        let (v, id) = self.slots.swap_remove(i);
        self.slot_of.remove(&id);
        if let Some(&(_, moved)) = self.slots.get(i) {
            self.slot_of.insert(moved, i);
        }
        v
    }

    fn pop_max(&mut self) -> Option<f64> {
        let (v, id) = self.order.pop_last()?;
        let i = self.slot_of[&id];
        self.take_slot(i);
        Some(v.0)
    }

    fn remove_uniform(&mut self, k: usize, rng: &mut ChaCha8Rng) {
        if k == 0 {
            return;
        }
        let mut picks = index::sample(rng, self.len(), k).into_vec();
        // Descending, so a swap never moves a pending victim.
        picks.sort_unstable_by(|a, b| b.cmp(a));
        for i in picks {
            let id = self.slots[i].1;
            let v = self.take_slot(i);
            self.order.remove(&(OrderedFloat(v), id));
        }
    }

    /// Number of bidders strictly above `x`, counting no further than `limit`.
    fn count_above(&self, x: f64, limit: usize) -> usize {
        self.order.iter().rev().take(limit).take_while(|(v, _)| v.0 > x).count()
    }
}

enum Pricer {
    Posted(f64),
    Curve(Box<BidCurve>),
    None,
}

impl Pricer {
    fn build(config: &SimConfig, lambda: f64) -> Result<Self> {
        Ok(match config.bid_source {
            BidSource::PostedPrice => Pricer::Posted(config.dist.threshold_value(lambda, config.mu)?),
            BidSource::ValuesOnly => Pricer::None,
            BidSource::Curve { points } => {
                let wc = WinnerCurve::build(lambda, config.delta, config.mu, points)?;
                let bc = if config.delta == 0.0 {
                    zero_uncertainty_bid_curve(&config.dist, &wc, None)?
                } else {
                    bid_with_uncertainty(&config.dist, &wc, None)?
                };
                Pricer::Curve(Box::new(bc))
            }
        })
    }

    fn price(&self, x: f64) -> Result<Option<f64>> {
        Ok(match self {
            Pricer::Posted(t) => Some(x.min(*t)),
            Pricer::None => None,
            Pricer::Curve(bc) => {
                let top = bc.x_grid[bc.len() - 1];
                Some(if x >= top { bc.bids[bc.len() - 1] } else { bc.at(x)?.bid })
            }
        })
    }
}

/// Means of consecutive fixed-length batches; the spread of the batch means
/// gives a standard error that survives serial correlation.
struct BatchMeans {
    len: u64,
    sum: f64,
    n: u64,
    means: Vec<f64>,
}

impl BatchMeans {
    fn new(expected: f64) -> Self {
        BatchMeans { len: ((expected / BATCHES as f64) as u64).max(1), sum: 0.0, n: 0, means: Vec::new() }
    }

    fn push(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
        if self.n == self.len {
            self.means.push(self.sum / self.len as f64);
            self.sum = 0.0;
            self.n = 0;
        }
    }

    fn se(&self) -> f64 {
        let k = self.means.len();
        if k < 2 {
            return f64::NAN;
        }
        let m = self.means.iter().sum::<f64>() / k as f64;
        let var = self.means.iter().map(|b| (b - m) * (b - m)).sum::<f64>() / (k - 1) as f64;
        (var / k as f64).sqrt()
    }
}

#[derive(Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

struct Ghost {
    probe: usize,
    inserted: u64,
}

struct ProbeTally {
    next: u64,
    spacing: u64,
    wins: u64,
    removals: u64,
    rounds: Moments,
    rounds_bm: BatchMeans,
    outcome_bm: BatchMeans,
}

pub fn simulate(config: &SimConfig) -> Result<SimReport> {
    run(config, 0, &mut |_| Ok(()))
}

/// As [`simulate`], streaming `round,pool_size,winner_value,price` rows for
/// every round, warmup included; one row per winner, or one blank row.
pub fn simulate_traced<W: Write>(config: &SimConfig, out: W) -> Result<SimReport> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "pool_size", "winner_value", "price"])?;
    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let report = run(config, 0, &mut |r| {
        let (round, size) = (r.round.to_string(), r.pool_size.to_string());
        if r.winners.is_empty() {
            w.write_record([round.as_str(), &size, "", ""])?;
        }
        for &(v, p) in r.winners {
            w.write_record([round.clone(), size.clone(), v.to_string(), fmt(p)])?;
        }
        Ok(())
    })?;
    w.flush()?;
    Ok(report)
}

/// Independent replications on sub-streams, returned by replication index.
pub fn simulate_replications(config: &SimConfig, replications: u64) -> Result<Vec<SimReport>> {
    (0..replications).into_par_iter().map(|r| run(config, r, &mut |_| Ok(()))).collect()
}

/// Runs replication `replication`, calling `observer` after every round.
pub fn simulate_observed(
    config: &SimConfig,
    replication: u64,
    observer: &mut dyn FnMut(&RoundRecord) -> Result<()>,
) -> Result<SimReport> {
    run(config, replication, observer)
}

fn run(
    config: &SimConfig,
    replication: u64,
    observer: &mut dyn FnMut(&RoundRecord) -> Result<()>,
) -> Result<SimReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2 * replication);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(config.seed);
    probe_rng.set_stream(2 * replication + 1);

    let post = config.post_warmup_rounds();
    let mu = config.mu as usize;
    let mut lambda = config.lambda;
    let mut pricer = Pricer::build(config, lambda)?;
    let mut arrivals_law = poisson(lambda)?;
    let threshold = threshold_percentile(config.lambda, config.mu).ok();

    let mut pool = Pool::default();
    for &v in &config.initial_pool {
        pool.insert(v);
    }
    let mut acct = Accounting { initial: pool.len() as u64, ..Default::default() };

    let mut pool_hist: Vec<u64> = Vec::new();
    let mut pool_moments = Moments::default();
    let mut pool_bm = BatchMeans::new(post as f64);
    let mut max_pool = 0u64;
    let buckets = config.winner_buckets;
    let mut winner_hist = vec![0u64; buckets];
    let mut winner_moments = Moments::default();
    let mut below = 0u64;
    let mut prices = Moments::default();
    let mut price_bm = BatchMeans::new(post as f64 * config.lambda.min(config.mu as f64));
    let keep_series = config.keep_winner_series || config.autocorr_lags > 0;
    let mut series = Vec::new();

    let mut tallies: Vec<ProbeTally> = config
        .probes
        .iter()
        .map(|p| ProbeTally {
            next: 0,
            spacing: p.spacing_for(config.delta),
            wins: 0,
            removals: 0,
            rounds: Moments::default(),
            rounds_bm: BatchMeans::new(p.replications as f64),
            outcome_bm: BatchMeans::new(p.replications as f64),
        })
        .collect();
    let mut ghosts: Vec<Ghost> = Vec::new();
    let mut winners: Vec<(f64, Option<f64>)> = Vec::with_capacity(mu);

    for t in 1..=config.horizon {
        if let Some(s) = config.lambda_switch.filter(|s| s.round == t) {
            lambda = s.lambda;
            pricer = Pricer::build(config, lambda)?;
            arrivals_law = poisson(lambda)?;
        }
        let counted = t > config.warmup;
        let size = pool.len();
        if counted {
            if pool_hist.len() <= size {
                pool_hist.resize(size + 1, 0);
            }
            pool_hist[size] += 1;
            pool_moments.push(size as f64);
            pool_bm.push(size as f64);
        }
        max_pool = max_pool.max(size as u64);

        // Probes decide against the pool as it stands before winners leave.
        ghosts.retain(|g| {
            let value = config.probes[g.probe].value;
            let tally = &mut tallies[g.probe];
            if pool.count_above(value, mu) < mu {
                let rounds = (t - g.inserted) as f64;
                tally.wins += 1;
                tally.rounds.push(rounds);
                tally.rounds_bm.push(rounds);
                tally.outcome_bm.push(1.0);
                false
            } else if config.delta > 0.0 && probe_rng.random::<f64>() < config.delta {
                tally.removals += 1;
                tally.outcome_bm.push(0.0);
                false
            } else {
                true
            }
        });

        winners.clear();
        for _ in 0..mu {
            let Some(v) = pool.pop_max() else { break };
            winners.push((v, pricer.price(v)?));
        }
        if counted {
            for &(v, p) in &winners {
                let g = config.dist.cdf(v);
                winner_hist[((g * buckets as f64) as usize).min(buckets - 1)] += 1;
                winner_moments.push(v);
                if threshold.is_some_and(|th| g < th) {
                    below += 1;
                }
                if let Some(p) = p {
                    prices.push(p);
                    price_bm.push(p);
                }
                if keep_series {
                    series.push(v);
                }
            }
        }

        let survivors = pool.len();
        let removed = if config.delta >= 1.0 {
            survivors
        } else if config.delta > 0.0 && survivors > 0 {
            Binomial::new(survivors as u64, config.delta)
                .map_err(|e| Error::InvalidParameters(e.to_string()))?
                .sample(&mut rng) as usize
        } else {
            0
        };
        pool.remove_uniform(removed, &mut rng);

        let arriving = match &arrivals_law {
            Some(law) => law.sample(&mut rng) as u64,
            None => 0,
        };
        let mut pruned = 0u64;
        for _ in 0..arriving {
            let v = config.dist.quantile(rng.random::<f64>())?;
            if config.prune_floor.is_some_and(|f| v < f) {
                pruned += 1;
            } else {
                pool.insert(v);
            }
        }
        for (i, p) in config.probes.iter().enumerate() {
            let tally = &mut tallies[i];
            if tally.next < p.replications && t == p.insert_round + tally.next * tally.spacing {
                ghosts.push(Ghost { probe: i, inserted: t });
                tally.next += 1;
            }
        }

        if config.accounting {
            let out = winners.len() + removed + pruned as usize + pool.len();
            assert_eq!(size + arriving as usize, out, "bidders not conserved in round {t}");
            acct.arrivals += arriving;
            acct.pruned += pruned;
            acct.winners += winners.len() as u64;
            acct.removed += removed as u64;
        }
        if pool.len() > config.pool_cap {
            return Err(Error::MemoryBudget { size: pool.len(), cap: config.pool_cap });
        }
        observer(&RoundRecord { round: t, pool_size: size, winners: &winners })?;
    }

    let probe_stats = config
        .probes
        .iter()
        .zip(&tallies)
        .map(|(p, tally)| {
            let resolved = tally.wins + tally.removals;
            ProbeStats {
                value: p.value,
                replications: p.replications,
                wins: tally.wins,
                removals: tally.removals,
                censored: p.replications - resolved,
                success_rate: if resolved > 0 { tally.wins as f64 / resolved as f64 } else { f64::NAN },
                success_se: tally.outcome_bm.se(),
                mean_rounds_to_win: if tally.wins > 0 { tally.rounds.mean } else { f64::NAN },
                rounds_to_win_se: tally.rounds_bm.se(),
            }
        })
        .collect();
    let autocorr = if config.autocorr_lags > 0 {
        autocorrelation(&series, config.autocorr_lags)[1..].to_vec()
    } else {
        Vec::new()
    };
    acct.remaining = pool.len() as u64;

    Ok(SimReport {
        seed_echo: config.seed,
        replication,
        rounds_simulated: config.horizon,
        post_warmup_rounds: post,
        pool_histogram: pool_hist,
        pool_mean: pool_moments.mean,
        pool_mean_se: pool_bm.se(),
        max_pool_size: max_pool,
        winner_value_histogram: winner_hist,
        winners: winner_moments.n,
        winner_value_mean: winner_moments.mean,
        threshold_percentile: threshold,
        winners_below_threshold: threshold.map(|_| below),
        price: (prices.n > 0).then(|| PriceStats { mean: prices.mean, std: prices.std(), se: price_bm.se() }),
        probe_stats,
        autocorr,
        accounting: config.accounting.then_some(acct),
        winner_values: if config.keep_winner_series { series } else { Vec::new() },
    })
}

fn poisson(lambda: f64) -> Result<Option<Poisson<f64>>> {
    if lambda == 0.0 {
        return Ok(None);
    }
    Poisson::new(lambda).map(Some).map_err(|e| Error::InvalidParameters(e.to_string()))
}

/// Configuration measuring how long a value-`x` bidder waits, starting from
/// a warmed-up pool. Replicas are spaced per [`Probe`] and the horizon leaves
/// room for the last one to resolve.
pub fn time_to_win_config(
    dist: ValueDistribution,
    lambda: f64,
    delta: f64,
    x: f64,
    replications: u64,
    seed: u64,
) -> SimConfig {
    let mut cfg = SimConfig::new(lambda, delta, 1, dist, 1, seed);
    let probe = Probe { value: x, insert_round: cfg.warmup, replications, spacing: None };
    let spacing = probe.spacing_for(delta);
    let tail = if delta > 0.0 { (50.0 / delta).ceil() as u64 } else { 1_000 };
    cfg.horizon = cfg.warmup + replications * spacing + tail;
    cfg.probes = vec![probe];
    cfg
}

pub fn probe_time_to_win(config: &SimConfig) -> Result<Vec<ProbeStats>> {
    Ok(simulate(config)?.probe_stats)
}

/// Half the L1 distance; the shorter vector is padded with zeros.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    0.5 * (0..n).map(|i| (at(a, i) - at(b, i)).abs()).sum::<f64>()
}

pub fn empirical_vs_solver(report: &SimReport, p: &PoolDistribution) -> f64 {
    total_variation(&report.pool_distribution(), &p.probs)
}

/// Normalised autocovariance `r_k = c_k / c_0` for `k = 0..=max_lag`, with
/// `c_k = (1/n) Σ (x_t − m)(x_{t+k} − m)`. Lags at or beyond the series
/// length are NaN; a constant series has `r_k = 0` for `k ≥ 1`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    if n == 0 {
        return vec![f64::NAN; max_lag + 1];
    }
    let m = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|x| x - m).collect();
    let c0 = dev.iter().map(|d| d * d).sum::<f64>();
    (0..=max_lag)
        .map(|k| {
            if k == 0 {
                1.0
            } else if k >= n {
                f64::NAN
            } else if c0 == 0.0 {
                0.0
            } else {
                dev[..n - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / c0
            }
        })
        .collect()
}

/// Autocorrelations of the report's winner series (needs
/// `keep_winner_series`) at the requested lags.
pub fn winner_autocorrelation(report: &SimReport, lags: &[usize]) -> Vec<f64> {
    let max = lags.iter().copied().max().unwrap_or(0);
    let r = autocorrelation(&report.winner_values, max);
    lags.iter().map(|&k| r[k]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchExperiment {
    /// Replication 0, identical to [`simulate`] on the same config.
    pub report: SimReport,
    pub switch_round: Option<u64>,
    /// Round offsets from the switch, `−before..after`.
    pub offsets: Vec<i64>,
    /// Mean winner value per round across replications.
    pub mean_winner_value: Vec<f64>,
    pub mean_price: Vec<Option<f64>>,
    pub level_before: f64,
    pub level_after: f64,
    pub rounds_to_half_gap: Option<u64>,
}

/// Per-round mean winner value around a change in the arrival rate,
/// averaged over `replications` runs. Exploratory: nothing is asserted.
/// Without a switch only the plain report is produced.
pub fn regime_switch_experiment(
    config: &SimConfig,
    replications: u64,
    before: u64,
    after: u64,
) -> Result<SwitchExperiment> {
    config.validate()?;
    let Some(switch) = config.lambda_switch else {
        return Ok(SwitchExperiment {
            report: simulate(config)?,
            switch_round: None,
            offsets: Vec::new(),
            mean_winner_value: Vec::new(),
            mean_price: Vec::new(),
            level_before: f64::NAN,
            level_after: f64::NAN,
            rounds_to_half_gap: None,
        });
    };
    if config.delta <= 0.0 {
        return Err(Error::InvalidConfig("the switch experiment needs delta > 0".into()));
    }
    if switch.round <= before || switch.round + after > config.horizon + 1 {
        return Err(Error::InvalidConfig(format!(
            "window of {before} rounds before and {after} after round {} does not fit the run",
            switch.round
        )));
    }
    let start = switch.round - before;
    let width = (before + after) as usize;
    let runs: Vec<(SimReport, Vec<[f64; 4]>)> = (0..replications.max(1))
        .into_par_iter()
        .map(|r| {
            // Per offset: value sum, winner count, price sum, priced count.
            let mut acc = vec![[0.0; 4]; width];
            let report = run(config, r, &mut |rec| {
                if rec.round >= start && ((rec.round - start) as usize) < width {
                    let a = &mut acc[(rec.round - start) as usize];
                    for &(v, p) in rec.winners {
                        a[0] += v;
                        a[1] += 1.0;
                        if let Some(p) = p {
                            a[2] += p;
                            a[3] += 1.0;
                        }
                    }
                }
                Ok(())
            })?;
            Ok((report, acc))
        })
        .collect::<Result<_>>()?;

    let mut total = vec![[0.0; 4]; width];
    for (_, acc) in &runs {
        for (t, a) in total.iter_mut().zip(acc) {
            for k in 0..4 {
                t[k] += a[k];
            }
        }
    }
    let mean_winner_value: Vec<f64> =
        total.iter().map(|a| if a[1] > 0.0 { a[0] / a[1] } else { f64::NAN }).collect();
    let mean_price = total.iter().map(|a| (a[3] > 0.0).then(|| a[2] / a[3])).collect();
    let offsets = (0..width as i64).map(|i| i - before as i64).collect();
    let b = before as usize;
    let level_before = nan_mean(&mean_winner_value[..b]);
    let level_after = nan_mean(&mean_winner_value[b + 3 * (width - b) / 4..]);
    let smooth = ((after / 100) as usize).max(1);
    let rounds_to_half_gap = rounds_to_half_gap(&mean_winner_value[b..], level_before, level_after, smooth);
    let report = runs.into_iter().next().map(|(r, _)| r).expect("at least one replication");
    Ok(SwitchExperiment {
        report,
        switch_round: Some(switch.round),
        offsets,
        mean_winner_value,
        mean_price,
        level_before,
        level_after,
        rounds_to_half_gap,
    })
}

fn nan_mean(v: &[f64]) -> f64 {
    let (s, n) = v.iter().filter(|x| !x.is_nan()).fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// First index at which the trailing `smooth`-round mean of `trajectory`
/// has covered half the way from `from` to `to`.
pub fn rounds_to_half_gap(trajectory: &[f64], from: f64, to: f64, smooth: usize) -> Option<u64> {
    let half = 0.5 * (from + to);
    let rising = to > from;
    let smooth = smooth.max(1);
    (0..trajectory.len()).find_map(|i| {
        let lo = (i + 1).saturating_sub(smooth);
        let m = nan_mean(&trajectory[lo..=i]);
        let crossed = if rising { m >= half } else { m <= half };
        (crossed && !m.is_nan()).then_some(i as u64)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> ValueDistribution {
        ValueDistribution::unit_uniform()
    }

    #[test]
    fn lone_bidder_wins_first_round() {
        let mut cfg = SimConfig::new(0.0, 0.0, 1, unit(), 5, 1);
        cfg.warmup = 0;
        cfg.horizon = 5;
        cfg.initial_pool = vec![0.4];
        cfg.accounting = true;
        let mut rounds = Vec::new();
        let r = simulate_observed(&cfg, 0, &mut |rec| {
            rounds.push((rec.round, rec.pool_size, rec.winners.to_vec()));
            Ok(())
        })
        .unwrap();
        assert_eq!(rounds[0], (1, 1, vec![(0.4, None)]));
        assert!(rounds[1..].iter().all(|(_, n, w)| *n == 0 && w.is_empty()));
        assert_eq!(r.pool_histogram, vec![4, 1]);
        let a = r.accounting.unwrap();
        assert_eq!((a.initial, a.winners, a.remaining), (1, 1, 0));
    }

    #[test]
    fn pool_removes_highest_and_random() {
        let mut p = Pool::default();
        for v in [0.3, 0.9, 0.1, 0.5, 0.7] {
            p.insert(v);
        }
        assert_eq!(p.count_above(0.4, 10), 3);
        assert_eq!(p.count_above(0.4, 2), 2);
        assert_eq!(p.pop_max(), Some(0.9));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        p.remove_uniform(2, &mut rng);
        assert_eq!(p.len(), 2);
        assert_eq!(p.order.len(), 2);
        for (i, &(v, id)) in p.slots.iter().enumerate() {
            assert_eq!(p.slot_of[&id], i);
            assert!(p.order.contains(&(OrderedFloat(v), id)));
        }
        let mut seen = Vec::new();
        while let Some(v) = p.pop_max() {
            seen.push(v);
        }
        assert!(seen.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn removal_is_uniform() {
        // Each of 10 bidders is equally likely to be among 3 victims.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut hits = [0u32; 10];
        for _ in 0..20_000 {
            let mut p = Pool::default();
            for i in 0..10 {
                p.insert(i as f64);
            }
            p.remove_uniform(3, &mut rng);
            let left: Vec<usize> = p.slots.iter().map(|s| s.0 as usize).collect();
            for (i, h) in hits.iter_mut().enumerate() {
                if !left.contains(&i) {
                    *h += 1;
                }
            }
        }
        // 6000 expected, sd about 65.
        assert!(hits.iter().all(|&h| (h as f64 - 6000.0).abs() < 300.0), "{hits:?}");
    }

    #[test]
    fn histogram_totals_match_rounds() {
        let mut cfg = SimConfig::new(2.0, 0.1, 1, unit(), 5_000, 7);
        cfg.accounting = true;
        let r = simulate(&cfg).unwrap();
        assert_eq!(r.pool_histogram.iter().sum::<u64>(), r.post_warmup_rounds);
        assert_eq!(r.winner_value_histogram.iter().sum::<u64>(), r.winners);
        let a = r.accounting.unwrap();
        assert_eq!(a.initial + a.arrivals, a.pruned + a.winners + a.removed + a.remaining);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut cfg = SimConfig::new(2.0, 0.05, 1, unit(), 3_000, 11);
        cfg.bid_source = BidSource::Curve { points: 257 };
        cfg.autocorr_lags = 5;
        cfg.probes = vec![Probe { value: 0.7, insert_round: 100, replications: 50, spacing: None }];
        let a = serde_json::to_string(&simulate(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&simulate(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        cfg.seed = 12;
        assert_ne!(a, serde_json::to_string(&simulate(&cfg).unwrap()).unwrap());
    }

    #[test]
    fn probes_leave_the_pool_path_alone() {
        let cfg = SimConfig::new(2.0, 0.05, 1, unit(), 2_000, 5);
        let mut with = cfg.clone();
        with.probes = vec![Probe { value: 0.5, insert_round: 10, replications: 100, spacing: Some(3) }];
        let (a, b) = (simulate(&cfg).unwrap(), simulate(&with).unwrap());
        assert_eq!(a.pool_histogram, b.pool_histogram);
        assert_eq!(a.winner_value_histogram, b.winner_value_histogram);
    }

    #[test]
    fn top_percentile_probe_wins_at_once() {
        let cfg = time_to_win_config(unit(), 2.0, 0.0, 1.0, 200, 4);
        let s = &probe_time_to_win(&cfg).unwrap()[0];
        assert_eq!(s.wins, 200);
        assert_eq!(s.mean_rounds_to_win, 1.0);
        assert_eq!(s.success_rate, 1.0);
    }

    #[test]
    fn posted_price_pays_threshold() {
        let mut cfg = SimConfig::new(2.0, 0.0, 1, unit(), 20_000, 2);
        cfg.bid_source = BidSource::PostedPrice;
        let r = simulate(&cfg).unwrap();
        let p = r.price.unwrap();
        assert!((p.mean - 0.5).abs() < 2.0 * p.se.max(1e-12) + 1e-3, "{p:?}");
        assert!(r.winners_below_threshold.unwrap() as f64 / (r.winners as f64) < 0.01);
    }

    #[test]
    fn memory_cap_and_pruning() {
        let mut cfg = SimConfig::new(2.0, 0.0, 1, unit(), 5_000, 2);
        cfg.pool_cap = 1_000;
        assert!(matches!(simulate(&cfg), Err(Error::MemoryBudget { .. })));
        // Pruning below 0.4 cuts growth from 1 to 0.2 bidders per round.
        cfg.pool_cap = 5_000;
        cfg.prune_floor = Some(0.4);
        cfg.accounting = true;
        let r = simulate(&cfg).unwrap();
        let a = r.accounting.unwrap();
        assert!(a.pruned > 0);
        assert!(r.max_pool_size < 4_000);
        cfg.prune_floor = Some(0.6);
        assert!(matches!(simulate(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn config_validation() {
        let ok = SimConfig::new(2.0, 0.1, 1, unit(), 100, 1);
        let mut c = ok.clone();
        c.warmup = c.horizon;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.probes = vec![Probe { value: 1.5, insert_round: 1, replications: 1, spacing: None }];
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.lambda = 0.5;
        c.bid_source = BidSource::PostedPrice;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.mu = 2;
        c.bid_source = BidSource::Curve { points: 257 };
        assert!(c.validate().is_err());
        let mut c = ok;
        c.delta = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn autocorrelation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let iid: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let r = autocorrelation(&iid, 10);
        assert_eq!(r[0], 1.0);
        let bound = 3.0 / (iid.len() as f64).sqrt();
        assert!(r[1..].iter().all(|c| c.abs() < bound), "{r:?}");
        let alternating: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        assert!((autocorrelation(&alternating, 1)[1] + 0.99).abs() < 1e-12);
        assert_eq!(autocorrelation(&[2.0; 5], 2), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn total_variation_examples() {
        assert_eq!(total_variation(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert!((total_variation(&[1.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
        assert!((total_variation(&[0.2, 0.8], &[0.5, 0.5]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn half_gap_crossing() {
        let rise: Vec<f64> = (0..100).map(|i| (i as f64 / 10.0).min(1.0)).collect();
        assert_eq!(rounds_to_half_gap(&rise, 0.0, 1.0, 1), Some(5));
        let fall: Vec<f64> = rise.iter().map(|v| 1.0 - v).collect();
        assert_eq!(rounds_to_half_gap(&fall, 1.0, 0.0, 1), Some(5));
        assert_eq!(rounds_to_half_gap(&[0.1; 4], 0.0, 1.0, 1), None);
    }

    #[test]
    fn trace_rows() {
        let mut cfg = SimConfig::new(1.5, 0.2, 1, unit(), 50, 3);
        cfg.warmup = 0;
        cfg.horizon = 50;
        let mut buf = Vec::new();
        let r = simulate_traced(&cfg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "round,pool_size,winner_value,price");
        assert_eq!(rows.len() as u64 - 1, 50);
        assert_eq!(r, simulate(&cfg).unwrap());
    }
}
