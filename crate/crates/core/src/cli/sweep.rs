//! POLITEX sweeps over history length and observation noise.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;

use super::{emit, parse_features, CliResult, Context, Fail};
use crate::envs::{noisy_gridworld, GridSpec};
use crate::error::Result;
use crate::learning::{
    make_features, politex_train, FeatureKind, PolitexConfig, TdConfig, ThetaInit, Warmup,
};
use crate::pomdp::PomdpModel;
use crate::rng::sub_seed;
use crate::superstate::{enumerate_reachable, SuperstateSpace};

/// Episodes averaged by the moving-average column.
pub const WINDOW: usize = 20;

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub l_values: Vec<usize>,
    pub noise_values: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Shared by every cell; its `seed` is replaced by the cell's seed.
    pub politex: PolitexConfig,
    pub features: FeatureKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRow {
    pub l: usize,
    pub p: f64,
    pub seed: u64,
    /// POLITEX iteration, from 1.
    pub episode: usize,
    /// Mean return of the episodes completed during the iteration.
    pub reward: f64,
    pub moving_avg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub l: usize,
    pub p: f64,
    /// Last moving average, averaged over seeds.
    pub mean_final_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub episodes: Vec<EpisodeRow>,
    pub aggregate: Vec<AggregateRow>,
}

impl SweepResult {
    pub const EPISODE_HEADER: &'static str = "l,p,seed,episode,reward,moving_avg";
    pub const AGGREGATE_HEADER: &'static str = "l,p,mean_final_reward";

    pub fn mean_final(&self, l: usize, p: f64) -> Option<f64> {
        self.aggregate.iter().find(|r| r.l == l && r.p == p).map(|r| r.mean_final_reward)
    }
}

fn run_cell(
    space: &SuperstateSpace,
    model: &PomdpModel,
    (l, p): (usize, f64),
    seed: u64,
    cfg: &SweepConfig,
) -> Result<Vec<EpisodeRow>> {
    let features = make_features(model, space, cfg.features, sub_seed(seed, u64::MAX));
    let politex = PolitexConfig { seed, keep_policies: false, ..cfg.politex };
    let run = politex_train(model, space, &features, &politex, None)?;
    let mut rows = Vec::with_capacity(run.iterations.len());
    let mut rewards = Vec::with_capacity(run.iterations.len());
    for it in &run.iterations {
        let reward = it.mean_return.unwrap_or(0.0);
        rewards.push(reward);
        let tail = &rewards[rewards.len().saturating_sub(WINDOW)..];
        rows.push(EpisodeRow {
            l,
            p,
            seed,
            episode: it.i,
            reward,
            moving_avg: tail.iter().sum::<f64>() / tail.len() as f64,
        });
    }
    Ok(rows)
}

/// Run every `(l, p, seed)` cell in parallel; rows come back in grid
/// order (`l`, then `p`, then seed).
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    let grid: Vec<(usize, f64)> = cfg
        .l_values
        .iter()
        .flat_map(|&l| cfg.noise_values.iter().map(move |&p| (l, p)))
        .collect();
    let prepared: Vec<_> = grid
        .par_iter()
        .map(|&(l, p)| {
            let model = noisy_gridworld(&GridSpec::frozen_lake_4x4(p))?;
            let space = enumerate_reachable(&model, l)?;
            Ok((model, space))
        })
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|g| cfg.seeds.iter().map(move |&s| (g, s)))
        .collect();
    let per_cell: Vec<Vec<EpisodeRow>> = cells
        .par_iter()
        .map(|&(g, seed)| {
            let (model, space) = &prepared[g];
            run_cell(space, model, grid[g], seed, cfg)
        })
        .collect::<Result<_>>()?;

    let mut result = SweepResult::default();
    for (g, &(l, p)) in grid.iter().enumerate() {
        let finals: Vec<f64> = cells
            .iter()
            .zip(&per_cell)
            .filter(|((cg, _), _)| *cg == g)
            .filter_map(|(_, rows)| rows.last().map(|r| r.moving_avg))
            .collect();
        let mean = if finals.is_empty() { 0.0 } else { finals.iter().sum::<f64>() / finals.len() as f64 };
        result.aggregate.push(AggregateRow { l, p, mean_final_reward: mean });
    }
    result.episodes = per_cell.into_iter().flatten().collect();
    Ok(result)
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// History lengths, comma separated.
    #[arg(long = "l", value_delimiter = ',', default_value = "1,2,3")]
    l: Vec<usize>,
    /// Observation noise levels, comma separated.
    #[arg(long = "p", value_delimiter = ',', default_value = "0,0.3")]
    p: Vec<f64>,
    /// Number of seeds per cell.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// First seed; cells use `seed .. seed + seeds`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "M", default_value_t = 50)]
    m: usize,
    #[arg(long, default_value_t = 5000)]
    tau: usize,
    #[arg(long, default_value_t = 5.0)]
    eta: f64,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 0.05)]
    mix: f64,
    #[arg(long, default_value_t = 100.0)]
    radius: f64,
    #[arg(long, default_value_t = 30)]
    episode_len: usize,
    #[arg(long, default_value = "window")]
    features: String,
    /// Initial TD parameter: `zero` or `midpoint`.
    #[arg(long, default_value = "zero")]
    init: String,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Aggregate table; appended to the main output when absent.
    #[arg(long)]
    aggregate_out: Option<PathBuf>,
}

pub(super) fn run(a: &SweepArgs, ctx: &Context) -> CliResult {
    if a.l.is_empty() || a.p.is_empty() || a.seeds == 0 {
        return Err(Fail::Usage("sweep grids must be nonempty".into()));
    }
    let features = parse_features(&a.features)?;
    let theta_init = match a.init.as_str() {
        "zero" => ThetaInit::Zero,
        "midpoint" => ThetaInit::Midpoint,
        other => return Err(Fail::Usage(format!("--init {other}: expected zero or midpoint"))),
    };
    let td = TdConfig {
        theta_init,
        tau: a.tau,
        warmup: Warmup::Fixed(0),
        step_size: Some(a.eps),
        radius: a.radius,
        episode_len: Some(a.episode_len),
        ..TdConfig::default()
    };
    let cfg = SweepConfig {
        l_values: a.l.clone(),
        noise_values: a.p.clone(),
        seeds: (a.seed..a.seed + a.seeds).collect(),
        politex: PolitexConfig { m: a.m, td, eta: Some(a.eta), explore_mix: a.mix, ..PolitexConfig::default() },
        features,
    };
    let result = run_sweep(&cfg)?;

    let mut m = ctx.manifest();
    m.seeds = cfg.seeds.clone();
    m.set("l", join(&cfg.l_values))
        .set("p", join(&cfg.noise_values))
        .set("env", "gridworld 4x4")
        .set("M", a.m)
        .set("tau", a.tau)
        .set("eta", a.eta)
        .set("eps", a.eps)
        .set("mix", a.mix)
        .set("radius", a.radius)
        .set("episode_len", a.episode_len)
        .set("features", &a.features)
        .set("init", &a.init)
        .set("moving_avg_window", WINDOW)
        .set("episode", "one row per POLITEX iteration");
    let manifest = m.render();

    let mut episodes = manifest.clone();
    let _ = writeln!(episodes, "{}", SweepResult::EPISODE_HEADER);
    for r in &result.episodes {
        let _ = writeln!(episodes, "{},{},{},{},{},{}", r.l, r.p, r.seed, r.episode, r.reward, r.moving_avg);
    }
    let mut aggregate = String::new();
    let _ = writeln!(aggregate, "{}", SweepResult::AGGREGATE_HEADER);
    for r in &result.aggregate {
        let _ = writeln!(aggregate, "{},{},{}", r.l, r.p, r.mean_final_reward);
    }
    match &a.aggregate_out {
        Some(path) => {
            emit(a.out.as_deref(), &episodes)?;
            emit(Some(path), &(manifest + &aggregate))
        }
        None => emit(a.out.as_deref(), &(episodes + "\n" + &aggregate)),
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}
