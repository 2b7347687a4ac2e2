//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
//! Every file written starts with a `#`-prefixed run manifest; the
//! `command` line in it replays the run (add `--out` to choose the file).

pub mod sweep;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::envs::{customer_retail, noisy_gridworld, tmaze, two_state_toy, GridSpec};
use crate::error::Error;
use crate::filter::{estimate_rho, stability_check, StabilityReport};
use crate::learning::{
    full_window_states, make_features, politex_train, prior_oracle, q_sup_error, td_train,
    empirical_regret, FeatureKind, PolitexConfig, Policy, RegretRecord, TdConfig, ThetaInit,
    UniformPolicy, Warmup, BoundSoftmax,
};
use crate::model_io::{
    load_smdp, model_to_string, parse_model, sha256_hex, smdp_to_string, validation_report,
    RunManifest,
};
use crate::planning::{
    belief_tree_value_with, oracle_value, policy_evaluation, value_iteration, EvalMethod,
    LeafBound, MdpBoundTables, ValueTable,
};
use crate::pomdp::PomdpModel;
use crate::rng::{seeded, sub_seed};
use crate::superstate::{build_from_space, enumerate_reachable};
use crate::verify::{
    ais_bounds, corollary1_bound, regret_bound_terms, xi_smdp_pomdp, xi_td_terms, BoundInputs,
};

/// Flags whose value names an output file; they are left out of the
/// manifest command line so a replay can write elsewhere.
const OUTPUT_FLAGS: [&str; 3] = ["--out", "--regret-out", "--aggregate-out"];

#[derive(Debug, Parser)]
#[command(name = "superstate", version, about = "Truncated-history approximation of POMDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model file and report every invariant violation.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Dobrushin coefficients and an optional sampled contraction estimate.
    Stability(StabilityArgs),
    /// Enumerate reachable superstates and write the superstate MDP.
    BuildSmdp {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "l")]
        l: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Value iteration on a superstate MDP file.
    Plan {
        #[arg(long)]
        smdp: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Belief-tree value of the initial belief.
    Oracle(OracleArgs),
    /// Evaluate the closed-form bounds.
    Bounds(BoundsArgs),
    /// Projected TD(0) under the uniform policy.
    Td(TdArgs),
    /// POLITEX policy optimisation.
    Politex(PolitexArgs),
    /// POLITEX followed by regret against the belief-tree oracle.
    Regret(PolitexArgs),
    /// POLITEX over a grid of history lengths and noise levels on the 4x4 grid world.
    Sweep(sweep::SweepArgs),
    /// Write a built-in model.
    Env(EnvArgs),
}

#[derive(Debug, Args)]
struct StabilityArgs {
    #[arg(long)]
    model: PathBuf,
    /// Emit CSV instead of aligned text.
    #[arg(long)]
    csv: bool,
    /// Belief pairs for the sampled contraction estimate (0 skips it).
    #[arg(long, default_value_t = 0)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Fixed depth, or the depth cap when `--tol` is given.
    #[arg(long, default_value_t = 6)]
    depth: usize,
    /// Deepen until the truncation bound is at most this.
    #[arg(long)]
    tol: Option<f64>,
    /// Leaf values: `zero` or `mdp-bounds`.
    #[arg(long, default_value = "mdp-bounds")]
    leaf: String,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[arg(long, default_value_t = 1.0)]
    r_bar: f64,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 0.5)]
    rho_prime: f64,
    #[arg(long = "l", default_value_t = 1)]
    l: usize,
    #[arg(long, default_value_t = 0)]
    l_prime: usize,
    #[arg(long, default_value_t = 10_000)]
    tau: u64,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 0.0)]
    xi_fa: f64,
    #[arg(long, default_value_t = 2)]
    n_actions: usize,
    #[arg(long = "M", default_value_t = 1)]
    m: usize,
    /// Observation count for the window-length bound.
    #[arg(long)]
    n_obs: Option<usize>,
    /// Window count `N` for the window-length bound.
    #[arg(long)]
    n: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
struct TrainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "l")]
    l: usize,
    #[arg(long, default_value_t = 10_000)]
    tau: usize,
    /// Constant step size (default `1/sqrt(tau)`).
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 100.0)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed warm-up length (default: from the policy's mixing coefficient).
    #[arg(long)]
    warmup: Option<usize>,
    /// Restart from the prior every this many steps.
    #[arg(long)]
    episode_len: Option<usize>,
    /// Do not restart when an absorbing state is reached.
    #[arg(long)]
    no_reset: bool,
    /// Initial parameter: `midpoint`, `zero` or `ball` (uniform in the ball).
    #[arg(long, default_value = "midpoint")]
    init: String,
    /// `onehot`, `window` or `rp:<dim>`.
    #[arg(long, default_value = "onehot")]
    features: String,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Debug, Args)]
struct TdArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    trace_every: Option<usize>,
    /// Report the sup error against the exact superstate-MDP Q-function.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PolitexArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long = "M", default_value_t = 50)]
    m: usize,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    mix: f64,
    /// Filter contraction rate; enables the exploration-floor check.
    #[arg(long)]
    rho: Option<f64>,
    /// Report the per-iteration error against the exact Q-function.
    #[arg(long)]
    oracle: bool,
    /// Oracle truncation budget (default `0.02 r_bar / (1 - gamma)`).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 12)]
    depth: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the regret CSV here (politex only).
    #[arg(long)]
    regret_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EnvArgs {
    /// `customer`, `tmaze`, `gridworld` or `toy2`.
    #[arg(long)]
    name: String,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 4)]
    corridor_len: usize,
    #[arg(long, default_value_t = 1.0)]
    reward: f64,
    #[arg(long, default_value_t = 10)]
    arm_cap: usize,
    /// Gridworld observation noise.
    #[arg(long, default_value_t = 0.0)]
    p: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes, mapped to exit codes.
#[derive(Debug)]
enum Fail {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        match e {
            Error::OutOfRange(_) | Error::DimensionMismatch(_) => Fail::Usage(e.to_string()),
            _ => Fail::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = std::result::Result<T, Fail>;

/// Parse `args` (program name first) and run the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let ctx = Context { command: replay_line(&argv) };
    match dispatch(cli.command, &ctx) {
        Ok(()) => 0,
        Err(Fail::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("usage: superstate <COMMAND> [OPTIONS]; see `superstate --help`");
            2
        }
        Err(Fail::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

/// Honour `SUPERSTATE_THREADS` for the global rayon pool.
fn configure_threads() {
    if let Some(n) = std::env::var("SUPERSTATE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a pool may already exist when run() is called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// The command line minus the program name and output-path flags.
fn replay_line(argv: &[OsString]) -> String {
    let mut parts = Vec::new();
    let mut skip = false;
    for a in argv.iter().skip(1) {
        let a = a.to_string_lossy();
        if skip {
            skip = false;
            continue;
        }
        if OUTPUT_FLAGS.contains(&a.as_ref()) {
            skip = true;
            continue;
        }
        if OUTPUT_FLAGS.iter().any(|f| a.starts_with(&format!("{f}="))) {
            continue;
        }
        parts.push(a.into_owned());
    }
    parts.join(" ")
}

struct Context {
    command: String,
}

impl Context {
    fn manifest(&self) -> RunManifest {
        RunManifest::new(self.command.clone())
    }
}

/// Write to `path`, or stdout when absent.
fn emit(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Fail::Runtime(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Fail::Runtime(format!("{}: {e}", path.display())))
}

/// Load a model, returning it with the hash of the file bytes.
fn load(path: &Path, gamma: Option<f64>) -> CliResult<(PomdpModel, String)> {
    let text = read_text(path)?;
    let model = parse_model(&text, &path.display().to_string())?;
    let model = match gamma {
        Some(g) => {
            if !(0.0..1.0).contains(&g) {
                return Err(Fail::Usage(format!("--gamma {g} outside [0, 1)")));
            }
            model.with_gamma(g)
        }
        None => model,
    };
    Ok((model, sha256_hex(text.as_bytes())))
}

fn parse_features(spec: &str) -> CliResult<FeatureKind> {
    match spec {
        "onehot" => return Ok(FeatureKind::OneHot),
        "window" => return Ok(FeatureKind::Window),
        _ => {}
    }
    spec.strip_prefix("rp:")
        .and_then(|d| d.parse::<usize>().ok())
        .filter(|&d| d > 0)
        .map(|dim| FeatureKind::RandomProjection { dim })
        .ok_or_else(|| Fail::Usage(format!("--features {spec}: expected onehot, window or rp:<dim>")))
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "default".to_string(), |x| x.to_string())
}

fn dispatch(command: Command, ctx: &Context) -> CliResult {
    match command {
        Command::Validate { model } => cmd_validate(&model),
        Command::Stability(a) => cmd_stability(&a, ctx),
        Command::BuildSmdp { model, l, out } => cmd_build_smdp(&model, l, out.as_deref(), ctx),
        Command::Plan { smdp, tol, max_iter, out } => cmd_plan(&smdp, tol, max_iter, out.as_deref(), ctx),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Bounds(a) => cmd_bounds(&a, ctx),
        Command::Td(a) => cmd_td(&a, ctx),
        Command::Politex(a) => cmd_politex(&a, ctx, false),
        Command::Regret(a) => cmd_politex(&a, ctx, true),
        Command::Sweep(a) => sweep::run(&a, ctx),
        Command::Env(a) => cmd_env(&a, ctx),
    }
}

fn cmd_validate(path: &Path) -> CliResult {
    let text = read_text(path)?;
    let name = path.display().to_string();
    match validation_report(&text, &name) {
        Err(e) => Err(Fail::Runtime(e.to_string())),
        Ok(report) if report.is_empty() => {
            let m = parse_model(&text, &name)?;
            println!(
                "{name}: ok ({} states, {} actions, {} observations, gamma {})",
                m.n_states(),
                m.n_actions(),
                m.n_obs(),
                m.gamma()
            );
            Ok(())
        }
        Ok(report) => {
            for (line, v) in &report {
                eprintln!("{name}:{line}: {v}");
            }
            Err(Fail::Runtime(format!("{name}: {} violation(s)", report.len())))
        }
    }
}

fn cmd_stability(a: &StabilityArgs, ctx: &Context) -> CliResult {
    let (model, hash) = load(&a.model, None)?;
    let report = stability_check(&model);
    let estimate = if a.pairs > 0 {
        Some(estimate_rho(&model, a.pairs, &mut seeded(a.seed))?)
    } else {
        None
    };
    let mut out = String::new();
    if a.csv {
        let mut m = ctx.manifest();
        m.model_sha256 = Some(hash);
        m.seeds = vec![a.seed];
        m.set("pairs", a.pairs);
        out.push_str(&m.render());
        match &estimate {
            Some(e) => {
                let _ = writeln!(out, "{},rho_hat,max_ratio,contractive", StabilityReport::CSV_HEADER);
                let _ = writeln!(out, "{},{},{},{}", report.csv_row(), e.rho_hat, e.max_ratio, e.contractive);
            }
            None => {
                let _ = writeln!(out, "{}", StabilityReport::CSV_HEADER);
                let _ = writeln!(out, "{}", report.csv_row());
            }
        }
    } else {
        let mut rows = vec![
            ("delta_P", report.delta_p.to_string()),
            ("delta_Phi", report.delta_phi.to_string()),
            ("product", report.product.to_string()),
            ("stable", report.stable.to_string()),
            ("rho_dobrushin", report.rho_dobrushin.to_string()),
        ];
        if let Some(e) = &estimate {
            rows.push(("rho_hat", e.rho_hat.to_string()));
            rows.push(("max_ratio", e.max_ratio.to_string()));
            rows.push(("contractive", e.contractive.to_string()));
            rows.push(("pairs", e.n_pairs.to_string()));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$} = {v}");
        }
    }
    emit(a.out.as_deref(), &out)
}

fn cmd_build_smdp(model_path: &Path, l: usize, out: Option<&Path>, ctx: &Context) -> CliResult {
    let (model, hash) = load(model_path, None)?;
    let space = enumerate_reachable(&model, l)?;
    let smdp = build_from_space(&model, space)?;
    let mut m = ctx.manifest();
    m.model_sha256 = Some(hash);
    m.set("l", l).set("n_superstates", smdp.n_states());
    emit(out, &(m.render() + &smdp_to_string(&smdp)))
}

fn value_table_csv(table: &ValueTable, labels: &[String]) -> String {
    let mut out = format!("{}\n", ValueTable::CSV_HEADER);
    for s in 0..table.values.len() {
        let label = labels.get(s).cloned().unwrap_or_else(|| s.to_string());
        for a in 0..table.n_actions {
            let _ = writeln!(
                out,
                "{label},{a},{},{},{}",
                table.q(s, a),
                table.values[s],
                u8::from(table.greedy[s] == a)
            );
        }
    }
    out
}

fn cmd_plan(path: &Path, tol: f64, max_iter: usize, out: Option<&Path>, ctx: &Context) -> CliResult {
    let text = read_text(path)?;
    let loaded = load_smdp(path)?;
    let table = value_iteration(&loaded.mdp, tol, max_iter)?;
    let mut m = ctx.manifest();
    m.model_sha256 = Some(sha256_hex(text.as_bytes()));
    m.set("tol", tol)
        .set("iterations", table.iterations)
        .set("residual", format!("{:e}", table.residual));
    emit(out, &(m.render() + &value_table_csv(&table, &loaded.superstates)))
}

fn cmd_oracle(a: &OracleArgs) -> CliResult {
    let (model, _) = load(&a.model, a.gamma)?;
    let belief = model.initial_belief();
    let leaf = match a.leaf.as_str() {
        "zero" => LeafBound::Zero,
        "mdp-bounds" => LeafBound::MdpBounds(MdpBoundTables::new(&model)?),
        other => return Err(Fail::Usage(format!("--leaf {other}: expected zero or mdp-bounds"))),
    };
    let v = match (a.tol, &leaf) {
        (Some(tol), LeafBound::MdpBounds(tables)) => oracle_value(&model, &belief, tol, a.depth, tables),
        (Some(tol), LeafBound::Zero) => {
            let d = crate::planning::depth_for_truncation(model.r_bar(), model.gamma(), tol).min(a.depth);
            belief_tree_value_with(&model, &belief, d, &leaf)
        }
        (None, _) => belief_tree_value_with(&model, &belief, a.depth, &leaf),
    };
    println!("value = {}", v.value);
    println!("truncation_bound = {}", v.truncation_bound);
    println!("depth = {}", v.depth);
    Ok(())
}

fn cmd_bounds(a: &BoundsArgs, ctx: &Context) -> CliResult {
    let inputs = BoundInputs {
        r_bar: a.r_bar,
        gamma: a.gamma,
        rho: a.rho,
        rho_prime: a.rho_prime,
        l: a.l,
        l_prime: a.l_prime,
        tau: a.tau,
        radius: a.radius,
        xi_fa: a.xi_fa,
        n_actions: a.n_actions,
        m: a.m,
    };
    let mut rows: Vec<(&str, f64)> = vec![("xi_smdp_pomdp", xi_smdp_pomdp(&inputs)?)];
    let td = xi_td_terms(&inputs)?;
    rows.extend([
        ("xi_td", td.total),
        ("xi_td_initial", td.initial),
        ("xi_td_step_noise", td.step_noise),
        ("xi_td_mixing", td.mixing),
        ("xi_td_warmup", td.warmup),
        ("xi_td_window", td.window),
        ("xi_td_window_mixing", td.window_mixing),
    ]);
    let regret = regret_bound_terms(&inputs, &vec![a.xi_fa; a.m])?;
    rows.extend([
        ("regret_xi_fa", regret.xi_fa),
        ("regret_xi_ha", regret.xi_ha),
        ("regret_order_term", regret.order_term),
    ]);
    if let (Some(n), Some(n_obs)) = (a.n, a.n_obs) {
        rows.push(("window_bound", corollary1_bound(a.r_bar, a.gamma, a.rho, n, n_obs, a.n_actions)?));
    }
    let ais = ais_bounds(a.epsilon, a.delta, a.r_bar, a.gamma)?;
    rows.extend([("ais_original", ais.original), ("ais_improved", ais.improved)]);

    let mut m = ctx.manifest();
    m.set("inputs", serde_json::to_string(&inputs).map_err(|e| Fail::Runtime(e.to_string()))?);
    let mut out = m.render();
    out.push_str("name,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    emit(a.out.as_deref(), &out)
}

fn td_config(t: &TrainArgs) -> CliResult<TdConfig> {
    let warmup = t.warmup.map_or(Warmup::FromMixing, Warmup::Fixed);
    let cfg = TdConfig {
        tau: t.tau,
        warmup,
        step_size: t.eps,
        radius: t.radius,
        seed: t.seed,
        episode_len: t.episode_len,
        reset_on_absorbing: !t.no_reset,
        theta_init: match t.init.as_str() {
            "midpoint" => ThetaInit::Midpoint,
            "zero" => ThetaInit::Zero,
            "ball" => ThetaInit::RandomInBall,
            other => return Err(Fail::Usage(format!("--init {other}: expected midpoint, zero or ball"))),
        },
        trace_every: 0,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn record_train(m: &mut RunManifest, t: &TrainArgs, cfg: &TdConfig, model: &PomdpModel) {
    m.seeds = vec![t.seed];
    m.set("l", t.l)
        .set("gamma", model.gamma())
        .set("tau", cfg.tau)
        .set("eps", cfg.epsilon())
        .set("radius", cfg.radius)
        .set("warmup", format!("{:?}", cfg.warmup))
        .set("episode_len", fmt_opt(cfg.episode_len))
        .set("reset_on_absorbing", cfg.reset_on_absorbing)
        .set("theta_init", format!("{:?}", cfg.theta_init))
        .set("features", &t.features);
}

const TD_HEADER: &str = "iter,step,reward,theta_norm,q_error_if_oracle";

fn cmd_td(a: &TdArgs, ctx: &Context) -> CliResult {
    let t = &a.train;
    let (model, hash) = load(&t.model, t.gamma)?;
    let kind = parse_features(&t.features)?;
    let mut cfg = td_config(t)?;
    cfg.trace_every = a.trace_every.unwrap_or((cfg.tau / 100).max(1));
    if cfg.trace_every == 0 {
        return Err(Fail::Usage("--trace-every must be positive".into()));
    }
    let space = enumerate_reachable(&model, t.l)?;
    let smdp = build_from_space(&model, space)?;
    let features = make_features(&model, &smdp.space, kind, sub_seed(t.seed, u64::MAX));
    let policy = UniformPolicy(model.n_actions());
    let (q, diag) = td_train(&model, &smdp.space, &policy, &features, &cfg, Some(&smdp.mdp))?;

    let exact = if a.oracle {
        let table = policy.table(smdp.n_states());
        Some(policy_evaluation(&smdp.mdp, &table, EvalMethod::Exact, 0.0)?)
    } else {
        None
    };
    let recurrent = full_window_states(&smdp.space);

    let mut m = ctx.manifest();
    m.model_sha256 = Some(hash);
    record_train(&mut m, t, &cfg, &model);
    m.set("trace_every", cfg.trace_every)
        .set("l_prime", diag.l_prime)
        .set("oracle", a.oracle)
        .set("policy", "uniform")
        .set("q_error_states", "full-window superstates");
    let mut out = m.render();
    out.push_str(TD_HEADER);
    out.push('\n');
    for p in &diag.trace {
        let err = exact
            .as_ref()
            .map(|e| q_sup_error(&features, &p.theta, &e.q, &recurrent).to_string())
            .unwrap_or_default();
        let _ = writeln!(out, "1,{},{},{},{err}", p.step, p.reward, p.theta_norm);
    }
    debug_assert_eq!(q.theta.len(), features.dim);
    emit(a.out.as_deref(), &out)
}

fn cmd_politex(a: &PolitexArgs, ctx: &Context, regret_only: bool) -> CliResult {
    let t = &a.train;
    let (model, hash) = load(&t.model, t.gamma)?;
    let kind = parse_features(&t.features)?;
    let td = td_config(t)?;
    let config = PolitexConfig {
        m: a.m,
        td,
        eta: a.eta,
        explore_mix: a.mix,
        seed: t.seed,
        rho: a.rho,
        keep_policies: true,
    };
    let space = enumerate_reachable(&model, t.l)?;
    let smdp = build_from_space(&model, space)?;
    let features = make_features(&model, &smdp.space, kind, sub_seed(t.seed, u64::MAX));
    let run = politex_train(&model, &smdp.space, &features, &config, Some(&smdp.mdp))?;
    let tables: Vec<Vec<Vec<f64>>> = run
        .policies
        .iter()
        .map(|p| BoundSoftmax { policy: p, features: &features }.table(smdp.n_states()))
        .collect();

    let mut m = ctx.manifest();
    m.model_sha256 = Some(hash);
    record_train(&mut m, t, &td, &model);
    m.set("M", a.m)
        .set("eta", run.eta)
        .set("mix", a.mix)
        .set("rho", fmt_opt(a.rho))
        .set("iteration_seeds", "sub_seed(seed, i)");

    let wants_regret = regret_only || a.regret_out.is_some();
    let regret_text = if wants_regret {
        let target = a.tol.unwrap_or(0.02 * model.r_bar().max(f64::MIN_POSITIVE) / (1.0 - model.gamma()));
        let oracle = prior_oracle(&model, target, a.depth)?;
        let steps = run.iterations.first().map_or(td.tau, |it| it.steps);
        let records = empirical_regret(&smdp.mdp, smdp.space.root(), &tables, steps, &oracle)?;
        let mut rm = m.clone();
        rm.set("oracle_target", target)
            .set("oracle_depth", oracle.depth)
            .set("oracle_truncation", oracle.truncation_bound)
            .set("steps_per_iter", steps);
        let mut out = rm.render();
        out.push_str(RegretRecord::CSV_HEADER);
        out.push('\n');
        for r in records {
            let _ = writeln!(out, "{},{},{},{},{}", r.i, r.v_star, r.v_policy, r.gap, r.cumulative);
        }
        Some(out)
    } else {
        None
    };
    if regret_only {
        return emit(a.out.as_deref(), regret_text.as_deref().unwrap_or_default());
    }

    let recurrent = full_window_states(&smdp.space);
    m.set("oracle", a.oracle);
    let mut out = m.render();
    out.push_str(TD_HEADER);
    out.push('\n');
    let mut step = 0;
    for (k, it) in run.iterations.iter().enumerate() {
        step += it.steps;
        let err = if a.oracle {
            let pv = policy_evaluation(&smdp.mdp, &tables[k], EvalMethod::Exact, 0.0)?;
            q_sup_error(&features, &run.q_bars[k], &pv.q, &recurrent).to_string()
        } else {
            String::new()
        };
        let _ = writeln!(out, "{},{step},{},{},{err}", it.i, it.mean_step_reward, it.theta_norm);
    }
    emit(a.out.as_deref(), &out)?;
    if let (Some(path), Some(text)) = (&a.regret_out, regret_text) {
        emit(Some(path), &text)?;
    }
    Ok(())
}

fn cmd_env(a: &EnvArgs, ctx: &Context) -> CliResult {
    let model = match a.name.as_str() {
        "customer" => customer_retail(),
        "tmaze" => tmaze(a.corridor_len, a.reward, a.gamma.unwrap_or(0.9), a.arm_cap)?,
        "gridworld" => noisy_gridworld(&GridSpec::frozen_lake_4x4(a.p))?,
        "toy2" => two_state_toy(),
        other => {
            return Err(Fail::Usage(format!(
                "--name {other}: expected customer, tmaze, gridworld or toy2"
            )))
        }
    };
    let model = match a.gamma {
        Some(g) if a.name != "tmaze" => {
            if !(0.0..1.0).contains(&g) {
                return Err(Fail::Usage(format!("--gamma {g} outside [0, 1)")));
            }
            model.with_gamma(g)
        }
        _ => model,
    };
    let mut m = ctx.manifest();
    m.set("name", &a.name).set("gamma", model.gamma());
    match a.name.as_str() {
        "tmaze" => {
            m.set("corridor_len", a.corridor_len).set("reward", a.reward).set("arm_cap", a.arm_cap);
        }
        "gridworld" => {
            m.set("p", a.p);
        }
        _ => {}
    }
    emit(a.out.as_deref(), &(m.render() + &model_to_string(&model)))
}
