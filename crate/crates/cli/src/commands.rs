//! One function per subcommand. Data files are named
//! `<command>-<config hash>[-<part>].csv` next to `<command>-<hash>.json`;
//! every file starts with the resolved config.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use steady_auction::chain::{classify_regime, mean_pool_size, solve_stationary, ChainParams};
use steady_auction::equilibrium::{bid_with_uncertainty, bid_with_uncertainty_experimental, zero_uncertainty_bid_curve};
use steady_auction::montecarlo::{simulate, simulate_traced, SimConfig};
use steady_auction::values::{threshold_percentile, DEFAULT_QUANTILE_CAP};
use steady_auction::verify::{run_criterion, Suite};
use steady_auction::winner::WinnerCurve;

use crate::config::ScenarioConfig;
use crate::error::{CliError, CliResult};

/// Where a command's files go and what they are called.
pub struct Outputs {
    dir: PathBuf,
    command: &'static str,
    config: ScenarioConfig,
    hash: String,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path, command: &'static str, config: &ScenarioConfig) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        Ok(Outputs { dir: dir.to_path_buf(), command, config: config.clone(), hash: config.hash(), written: Vec::new() })
    }

    fn path(&self, part: Option<&str>, ext: &str) -> PathBuf {
        let stem = match part {
            Some(p) => format!("{}-{}-{p}", self.command, self.hash),
            None => format!("{}-{}", self.command, self.hash),
        };
        self.dir.join(format!("{stem}.{ext}"))
    }

    /// Opens a CSV whose first line is a `#` comment holding the config.
    fn csv(&mut self, part: Option<&str>) -> CliResult<BufWriter<File>> {
        let path = self.path(part, "csv");
        let file = File::create(&path).map_err(CliError::io(&path))?;
        let mut w = BufWriter::new(file);
        let cfg = serde_json::to_string(&self.config)?;
        writeln!(w, "# steady-auction {} config={cfg}", self.command).map_err(CliError::io(&path))?;
        self.written.push(path);
        Ok(w)
    }

    fn finish(mut self, result: impl Serialize) -> CliResult<PathBuf> {
        let path = self.path(None, "json");
        let files: Vec<String> = self
            .written
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect();
        let doc = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": self.hash,
            "config": self.config,
            "files": files,
            "result": result,
        });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        fs::write(&path, text).map_err(CliError::io(&path))?;
        self.written.push(path.clone());
        for p in &self.written {
            println!("wrote {}", p.display());
        }
        Ok(path)
    }
}

fn flush(mut w: BufWriter<File>) -> CliResult<()> {
    w.flush().map_err(|e| CliError::Core(e.into()))
}

pub fn stationary(cfg: &ScenarioConfig, out: &Path) -> CliResult<()> {
    let params = ChainParams::new(cfg.lambda, cfg.delta, cfg.mu)?;
    let p = solve_stationary(&params, &cfg.solver)?;
    let mut o = Outputs::new(out, "stationary", cfg)?;
    let mut w = o.csv(None)?;
    p.write_csv(&mut w)?;
    flush(w)?;
    println!("p0 = {:e}, mean pool size = {}", p.p0(), mean_pool_size(&p));
    o.finish(json!({
        "regime": classify_regime(&params).to_string(),
        "p0": p.p0(),
        "mean_pool_size": mean_pool_size(&p),
        "header": p.header(),
        "iterations": p.iterations,
    }))?;
    Ok(())
}

pub fn winner_curve(cfg: &ScenarioConfig, out: &Path) -> CliResult<()> {
    let wc = WinnerCurve::build(cfg.lambda, cfg.delta, cfg.mu, cfg.g_points)?;
    let mut o = Outputs::new(out, "winner-curve", cfg)?;
    let mut w = o.csv(None)?;
    wc.write_csv(&mut w)?;
    flush(w)?;
    o.finish(json!({
        "threshold_percentile": threshold_percentile(cfg.lambda, cfg.mu).ok(),
        "max_clip": wc.max_clip,
        "density_defect": wc.density_defect,
    }))?;
    Ok(())
}

pub fn bid_curve(cfg: &ScenarioConfig, out: &Path) -> CliResult<()> {
    let wc = WinnerCurve::build(cfg.lambda, cfg.delta, cfg.mu, cfg.g_points)?;
    let x_grid = cfg.x_points.map(|n| value_grid(cfg, n)).transpose()?;
    let x_grid = x_grid.as_deref();
    let experimental = cfg.mu > 1 && cfg.delta > 0.0;
    let bc = if cfg.delta == 0.0 {
        zero_uncertainty_bid_curve(&cfg.dist, &wc, x_grid)?
    } else if experimental {
        if !cfg.experimental_mu {
            return Err(CliError::Config(
                "no verified bidding function for mu > 1 with delta > 0; pass --experimental-mu".into(),
            ));
        }
        bid_with_uncertainty_experimental(&cfg.dist, &wc, x_grid)?
    } else {
        bid_with_uncertainty(&cfg.dist, &wc, x_grid)?
    };
    let mut o = Outputs::new(out, "bid-curve", cfg)?;
    let mut w = o.csv(None)?;
    bc.write_csv(&mut w)?;
    flush(w)?;
    o.finish(json!({
        "threshold": bc.threshold,
        "ode_residual_max": bc.ode_residual_max,
        "underflow_nodes": bc.underflow.iter().filter(|&&u| u).count(),
        "experimental": experimental,
    }))?;
    Ok(())
}

/// Values at evenly spaced percentiles, capped on unbounded supports.
fn value_grid(cfg: &ScenarioConfig, n: usize) -> CliResult<Vec<f64>> {
    let top = if cfg.dist.is_bounded() { 1.0 } else { DEFAULT_QUANTILE_CAP };
    (0..n)
        .map(|i| Ok(cfg.dist.quantile(top * i as f64 / (n - 1) as f64)?))
        .collect()
}

fn sim_config(cfg: &ScenarioConfig) -> SimConfig {
    let s = &cfg.simulation;
    let mut sc = SimConfig::new(cfg.lambda, cfg.delta, cfg.mu, cfg.dist.clone(), s.rounds, s.seed);
    if let Some(w) = s.warmup {
        sc.warmup = w;
        sc.horizon = w + s.rounds;
    }
    sc.bid_source = s.bid_source.clone();
    sc.probes = s.probes.clone();
    sc.lambda_switch = s.lambda_switch;
    sc.autocorr_lags = s.autocorr_lags;
    sc.pool_cap = s.pool_cap;
    sc.prune_floor = s.prune_floor;
    sc
}

pub fn simulation(cfg: &ScenarioConfig, out: &Path) -> CliResult<()> {
    let sc = sim_config(cfg);
    sc.validate()?;
    let mut o = Outputs::new(out, "simulate", cfg)?;
    let report = if cfg.simulation.trace {
        let mut w = o.csv(Some("trace"))?;
        let r = simulate_traced(&sc, &mut w)?;
        flush(w)?;
        r
    } else {
        simulate(&sc)?
    };
    let mut w = o.csv(Some("pool"))?;
    report.write_pool_csv(&mut w)?;
    flush(w)?;
    let mut w = o.csv(Some("winners"))?;
    report.write_winner_csv(&mut w)?;
    flush(w)?;
    println!(
        "{} rounds, pool mean {:.4} (se {:.4}), {} winners",
        report.rounds_simulated, report.pool_mean, report.pool_mean_se, report.winners
    );
    if let Some(p) = report.price {
        println!("price mean {:.6} (se {:.2e})", p.mean, p.se);
    }
    o.finish(json!({ "simulation": sc, "report": report }))?;
    Ok(())
}

pub fn regime(cfg: &ScenarioConfig) -> CliResult<()> {
    let r = classify_regime(&ChainParams::new(cfg.lambda, cfg.delta, cfg.mu)?);
    println!("{r}");
    println!("{}", r.explanation());
    Ok(())
}

/// Runs the selected criteria; `Ok(false)` when any fails.
pub fn verify(suite: &str) -> CliResult<bool> {
    let suite: Suite = suite.parse()?;
    let mut first_failure = None;
    let ids = suite.ids();
    let mut passed = 0;
    for &id in &ids {
        let o = run_criterion(id)?;
        println!("{o}");
        if o.passed {
            passed += 1;
        } else if first_failure.is_none() {
            first_failure = Some(o);
        }
    }
    println!("{passed}/{} criteria passed", ids.len());
    if let Some(o) = first_failure {
        eprintln!("first failing criterion: {} {}", o.id, o.title);
        return Ok(false);
    }
    Ok(true)
}
