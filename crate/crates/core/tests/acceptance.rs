//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test -p superstate --test acceptance -- --nocapture`.

use std::time::{Duration, Instant};

use rand::Rng;
use superstate::cli::sweep::{run_sweep, SweepConfig};
use superstate::envs::{customer_retail, tmaze, two_state_toy, TMazeLayout};
use superstate::filter::{dobrushin, lemma1_gap, random_simplex, stability_check, transition_dobrushin};
use superstate::learning::{
    empirical_regret, make_features, politex_train, prior_oracle, q_sup_error, td_train, BoundSoftmax,
    FeatureKind, PolitexConfig, Policy, TdConfig, ThetaInit, UniformPolicy, Warmup,
};
use superstate::model_io::strip_timestamp;
use superstate::planning::{policy_evaluation, theorem2_gap, value_iteration, EvalMethod};
use superstate::rng::{sample_categorical, seeded};
use superstate::superstate::build;
use superstate::verify::{ais_bounds, greedy_coupling, lemma2_rhs, xi_smdp_pomdp, BoundInputs};
use superstate::{PomdpModel, Step};

fn report(n: u32, pass: bool, elapsed: Duration, limit: Duration, detail: String) {
    let in_time = elapsed <= limit;
    let verdict = if pass && in_time { "PASS" } else { "FAIL" };
    println!("criterion {n:>2}: {verdict} | {detail} | {:.2?} (limit {:?})", elapsed, limit);
    assert!(pass, "criterion {n} failed: {detail}");
    assert!(in_time, "criterion {n} exceeded its runtime limit: {elapsed:.2?}");
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Histories of the model under uniformly random actions.
fn sample_histories(model: &PomdpModel, count: usize, lengths: std::ops::RangeInclusive<usize>, seed: u64) -> Vec<Vec<Step>> {
    let mut rng = seeded(seed);
    let uniform = vec![1.0 / model.n_actions() as f64; model.n_actions()];
    (0..count)
        .map(|_| {
            let len = rng.random_range(lengths.clone());
            let mut s = model.sample_initial_state(&mut rng);
            (0..len)
                .map(|_| {
                    let a = sample_categorical(&mut rng, &uniform);
                    let st = model.step_simulator(s, a, &mut rng);
                    s = st.next_state;
                    Step::new(a, st.observation)
                })
                .collect()
        })
        .collect()
}

#[test]
fn criterion_01_dobrushin_replication() {
    let t = Instant::now();
    let m = customer_retail();
    let dp = transition_dobrushin(&m);
    let dphi = dobrushin(&m.obs_matrix()).unwrap();
    let report_ = stability_check(&m);
    let pass = (dp - 0.5).abs() <= 1e-12
        && (dphi - 0.1).abs() <= 1e-12
        && (report_.product - 0.45).abs() <= 1e-12
        && report_.product < 1.0
        && report_.stable;
    report(
        1,
        pass,
        t.elapsed(),
        Duration::from_secs(1),
        format!("delta_P = {dp}, delta_Phi = {dphi}, product = {}", report_.product),
    );
}

#[test]
fn criterion_02_inner_product_bound() {
    let t = Instant::now();
    let mut rng = seeded(2);
    let mut violations = 0usize;
    let mut worst = f64::INFINITY;
    for _ in 0..100_000 {
        let m = rng.random_range(1..=16);
        let a = random_simplex(&mut rng, m).into_inner();
        let c = random_simplex(&mut rng, m).into_inner();
        let b: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let d: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let ab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let cd: f64 = c.iter().zip(&d).map(|(x, y)| x * y).sum();
        let lhs = (ab - cd).abs();
        let rhs = lemma2_rhs(&a, &b, &c, &d).unwrap();
        let slack = (rhs - lhs) / rhs.max(f64::MIN_POSITIVE);
        worst = worst.min(slack);
        if slack < -1e-12 {
            violations += 1;
        }
    }
    report(
        2,
        violations == 0,
        t.elapsed(),
        Duration::from_secs(10),
        format!("100000 quadruples, {violations} violations, min relative slack {worst:.3e}"),
    );
}

#[test]
fn criterion_03_greedy_coupling() {
    let t = Instant::now();
    let mut rng = seeded(3);
    let (mut total_err, mut marginal_err) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let n = rng.random_range(1..=32);
        let v1 = random_simplex(&mut rng, n).into_inner();
        let v2 = random_simplex(&mut rng, n).into_inner();
        let plan = greedy_coupling(&v1, &v2).unwrap();
        let tv = 0.5 * v1.iter().zip(&v2).map(|(x, y)| (x - y).abs()).sum::<f64>();
        let mass: f64 = plan.alpha.iter().flatten().sum();
        total_err = total_err.max((mass - tv).abs());
        let (rows, cols) = (plan.row_sums(), plan.col_sums());
        for i in 0..n {
            let surplus = (v1[i] - v2[i]).max(0.0);
            let deficit = (v2[i] - v1[i]).max(0.0);
            marginal_err = marginal_err.max((rows[i] - surplus).abs()).max((cols[i] - deficit).abs());
        }
    }
    report(
        3,
        total_err <= 1e-12 && marginal_err <= 1e-12,
        t.elapsed(),
        Duration::from_secs(5),
        format!("10000 pairs, max |sum alpha - TV| = {total_err:.1e}, max marginal error = {marginal_err:.1e}"),
    );
}

#[test]
fn criterion_04_filter_forgetting() {
    let t = Instant::now();
    let m = customer_retail();
    let gaps: Vec<f64> = (1..=6).map(|l| lemma1_gap(&m, l, 20_000, 40 + l as u64).unwrap()).collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    let bounded = gaps.iter().enumerate().all(|(k, &g)| g <= 0.45f64.powi(k as i32 + 1) + 1e-9);
    let shown: Vec<String> = gaps
        .iter()
        .enumerate()
        .map(|(k, g)| format!("l={}: {g:.4} <= {:.4}", k + 1, 0.45f64.powi(k as i32 + 1)))
        .collect();
    report(4, monotone && bounded, t.elapsed(), Duration::from_secs(30), shown.join(", "));
}

#[test]
fn criterion_05_superstate_value_gap() {
    let t = Instant::now();
    let model = customer_retail();
    let gamma = model.gamma();
    let target = 0.02 * model.r_bar() / (1.0 - gamma);
    let histories = sample_histories(&model, 60, 3..=10, 5);
    let mut max_gaps = Vec::new();
    let mut truncations = Vec::new();
    let mut all_within = true;
    let mut details = Vec::new();
    for l in 1..=3 {
        let smdp = build(&model, l).unwrap();
        let values = value_iteration(&smdp.mdp, 1e-10, 100_000).unwrap();
        let bound = BoundInputs { r_bar: model.r_bar(), gamma, rho: 0.55, l, ..Default::default() };
        let records = theorem2_gap(&model, &smdp, &values, &histories, &bound, target, 40).unwrap();
        let within = records.iter().filter(|r| r.gap <= r.xi_bound + r.truncation + 1e-9).count();
        all_within &= within == records.len() && records.len() >= 50;
        let max_gap = records.iter().map(|r| r.gap).fold(0.0, f64::max);
        let trunc = records.iter().map(|r| r.truncation).fold(0.0, f64::max);
        all_within &= trunc <= target;
        details.push(format!(
            "l={l}: {within}/{} within xi={:.4}, max gap {max_gap:.3e}",
            records.len(),
            records[0].xi_bound
        ));
        max_gaps.push(max_gap);
        truncations.push(trunc);
    }
    let monotone = max_gaps.windows(2).zip(truncations.windows(2)).all(|(g, tr)| g[1] <= g[0] + 2.0 * tr[0].max(tr[1]));
    report(5, all_within && monotone, t.elapsed(), Duration::from_secs(300), details.join("; "));
}

#[test]
fn criterion_06_td_oracle_equivalence() {
    let t = Instant::now();
    let model = two_state_toy();
    let smdp = build(&model, 1).unwrap();
    let features = make_features(&model, &smdp.space, FeatureKind::OneHot, 0);
    let policy = UniformPolicy(model.n_actions());
    let exact = policy_evaluation(&smdp.mdp, &policy.table(smdp.n_states()), EvalMethod::Exact, 0.0).unwrap();
    let all: Vec<usize> = (0..smdp.n_states()).collect();
    let errors: Vec<f64> = (0..5)
        .map(|seed| {
            let cfg = TdConfig { tau: 50_000, warmup: Warmup::FromMixing, seed, ..TdConfig::default() };
            let (q, _) = td_train(&model, &smdp.space, &policy, &features, &cfg, Some(&smdp.mdp)).unwrap();
            q_sup_error(&features, &q.theta, &exact.q, &all)
        })
        .collect();
    let med = median(errors.clone());
    let shown: Vec<String> = errors.iter().map(|e| format!("{e:.4}")).collect();
    report(
        6,
        med <= 0.1,
        t.elapsed(),
        Duration::from_secs(60),
        format!("sup error over all superstates, median {med:.4} <= 0.1 (seeds: {})", shown.join(" ")),
    );
}

#[test]
fn criterion_07_politex_learning() {
    let t = Instant::now();
    let model = two_state_toy();
    let smdp = build(&model, 2).unwrap();
    let root = smdp.space.root();
    let v_star = value_iteration(&smdp.mdp, 1e-10, 100_000).unwrap().values[root];
    let features = make_features(&model, &smdp.space, FeatureKind::OneHot, 0);
    let oracle = prior_oracle(&model, 0.2, 8).unwrap();
    let mut ratios = Vec::new();
    let mut improving = true;
    for seed in 0..5 {
        let cfg = PolitexConfig {
            m: 50,
            td: TdConfig { tau: 5000, warmup: Warmup::FromMixing, episode_len: Some(20), ..TdConfig::default() },
            eta: None,
            explore_mix: 0.05,
            seed,
            ..PolitexConfig::default()
        };
        let run = politex_train(&model, &smdp.space, &features, &cfg, Some(&smdp.mdp)).unwrap();
        let tables: Vec<Vec<Vec<f64>>> = run
            .policies
            .iter()
            .map(|p| BoundSoftmax { policy: p, features: &features }.table(smdp.n_states()))
            .collect();
        let records = empirical_regret(&smdp.mdp, root, &tables, 5000, &oracle).unwrap();
        let v_last = records.last().unwrap().v_policy;
        ratios.push(v_last / v_star);
        let first: f64 = records[..10].iter().map(|r| r.gap).sum::<f64>() / 10.0;
        let last: f64 = records[40..].iter().map(|r| r.gap).sum::<f64>() / 10.0;
        improving &= last < first;
    }
    let med = median(ratios.clone());
    report(
        7,
        (med - 1.0).abs() <= 0.05 && improving,
        t.elapsed(),
        Duration::from_secs(300),
        format!("V~*(empty) = {v_star:.4}, median V~^mu_M / V~* = {med:.4}, gap decreasing on every seed: {improving}"),
    );
}

#[test]
fn criterion_08_tmaze_counterexample() {
    let t = Instant::now();
    let lay = TMazeLayout { corridor_len: 4, arm_cap: 10 };
    let model = tmaze(4, 1.0, 0.9, 10).unwrap();
    // cue, corridor to the junction, correct arm, then deeper into the arm
    let mut histories = Vec::new();
    for d in 0..2 {
        for depth in 3..=8 {
            let mut h = vec![Step::new(0, lay.corridor_obs(1, d))];
            h.extend((2..=4).map(|i| Step::new(0, lay.corridor_obs(i, d))));
            h.push(Step::new(d, lay.arm_obs(d, 1)));
            h.extend((2..=depth).map(|i| Step::new(0, lay.arm_obs(d, i))));
            histories.push(h);
        }
    }
    let mut mean_gaps = Vec::new();
    let mut large = true;
    for l in 1..=6 {
        let smdp = build(&model, l).unwrap();
        let values = value_iteration(&smdp.mdp, 1e-10, 100_000).unwrap();
        let bound = BoundInputs { r_bar: 1.0, gamma: 0.9, rho: 0.5, l, ..Default::default() };
        let records = theorem2_gap(&model, &smdp, &values, &histories, &bound, 0.01, 60).unwrap();
        large &= records.iter().all(|r| r.gap >= 0.4 * r.v_star);
        mean_gaps.push(records.iter().map(|r| r.gap).sum::<f64>() / records.len() as f64);
    }
    let flat = mean_gaps[5] / mean_gaps[0];
    let shown: Vec<String> = mean_gaps.iter().map(|g| format!("{g:.3}")).collect();
    report(
        8,
        large && flat >= 0.9,
        t.elapsed(),
        Duration::from_secs(300),
        format!("mean gap by l = [{}], gap >= 0.4 V* everywhere: {large}, ratio l6/l1 = {flat:.3}", shown.join(", ")),
    );
}

#[test]
fn criterion_09_gridworld_trend() {
    let t = Instant::now();
    let cfg = SweepConfig {
        l_values: vec![1, 3],
        noise_values: vec![0.3],
        seeds: (0..10).collect(),
        politex: PolitexConfig {
            m: 50,
            td: TdConfig {
                tau: 5000,
                warmup: Warmup::Fixed(0),
                step_size: Some(0.1),
                episode_len: Some(30),
                theta_init: ThetaInit::Zero,
                ..TdConfig::default()
            },
            eta: Some(5.0),
            explore_mix: 0.05,
            ..PolitexConfig::default()
        },
        features: FeatureKind::Window,
    };
    let result = run_sweep(&cfg).unwrap();
    let r1 = result.mean_final(1, 0.3).unwrap();
    let r3 = result.mean_final(3, 0.3).unwrap();
    report(
        9,
        r3 > r1,
        t.elapsed(),
        Duration::from_secs(900),
        format!("p = 0.3, 10 seeds: mean final reward l=1 {r1:.4}, l=3 {r3:.4}"),
    );
}

#[test]
fn criterion_10_bound_goldens() {
    let t = Instant::now();
    let inputs = BoundInputs { r_bar: 1.0, gamma: 0.9, rho: 0.5, l: 4, ..Default::default() };
    let xi = xi_smdp_pomdp(&inputs).unwrap();
    // (1-rho)^l = 1/16: 2 q / 0.1 = 1.25 and 1.8 q / (0.1 (0.1 + 0.9 q)) = 7.2
    let q: f64 = 0.0625;
    let hand = 2.0 * q / 0.1 + 2.0 * 0.9 * q / (0.1 * (0.1 + 0.9 * q));
    let ais = ais_bounds(0.0, 0.1, 1.0, 0.9).unwrap();
    let mut grid_ok = true;
    for i in 0..10 {
        for j in 0..10 {
            for k in 0..10 {
                let eps = i as f64 * 0.5;
                let delta = j as f64 * 0.2;
                let gamma = k as f64 * 0.099;
                let b = ais_bounds(eps, delta, 1.0, gamma).unwrap();
                grid_ok &= b.improved <= b.original + 1e-12;
            }
        }
    }
    let pass = (xi - 8.45).abs() <= 1e-9
        && (hand - 8.45).abs() <= 1e-12
        && (ais.original - 18.0).abs() <= 1e-9
        && (ais.improved - 6.0).abs() <= 1e-9
        && grid_ok;
    report(
        10,
        pass,
        t.elapsed(),
        Duration::from_secs(1),
        format!(
            "xi = {xi:.12} (hand {hand}), ais = ({:.12}, {:.12}), improved <= original on 1000 points: {grid_ok}",
            ais.original, ais.improved
        ),
    );
}

fn run_cli(args: &[String]) -> i32 {
    superstate::cli::run(std::iter::once("superstate".to_string()).chain(args.iter().cloned()))
}

/// Run a command, then replay the manifest's command line into a second
/// file and compare the two with the timestamp removed.
fn replay_matches(dir: &std::path::Path, name: &str, args: &[&str]) -> bool {
    let first = dir.join(format!("{name}-1.csv"));
    let second = dir.join(format!("{name}-2.csv"));
    let mut argv: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    argv.extend(["--out".to_string(), first.display().to_string()]);
    assert_eq!(run_cli(&argv), 0, "{name} failed");
    let text = std::fs::read_to_string(&first).unwrap();
    let command = text
        .lines()
        .find_map(|l| l.strip_prefix("# command: "))
        .expect("manifest command line");
    let mut replay: Vec<String> = command.split(' ').map(str::to_string).collect();
    replay.extend(["--out".to_string(), second.display().to_string()]);
    assert_eq!(run_cli(&replay), 0, "{name} replay failed");
    let again = std::fs::read_to_string(&second).unwrap();
    strip_timestamp(&text) == strip_timestamp(&again)
}

#[test]
fn criterion_11_determinism() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let toy = dir.path().join("toy.json");
    let toy_s = toy.display().to_string();
    assert_eq!(run_cli(&["env".into(), "--name".into(), "toy2".into(), "--out".into(), toy_s.clone()]), 0);
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("td", vec!["td", "--model", &toy_s, "--l", "2", "--tau", "4000", "--seed", "9", "--oracle"]),
        ("politex", vec!["politex", "--model", &toy_s, "--l", "2", "--M", "8", "--tau", "1000", "--seed", "4", "--episode-len", "20", "--oracle"]),
        ("regret", vec!["regret", "--model", &toy_s, "--l", "1", "--M", "6", "--tau", "800", "--seed", "5", "--depth", "6"]),
        ("sweep", vec!["sweep", "--l", "1,2", "--p", "0,0.3", "--seeds", "2", "--M", "4", "--tau", "500"]),
    ];
    let mut results = Vec::new();
    for (name, args) in &cases {
        results.push((*name, replay_matches(dir.path(), name, args)));
    }
    let pass = results.iter().all(|(_, ok)| *ok);
    let shown: Vec<String> = results.iter().map(|(n, ok)| format!("{n}: {}", if *ok { "identical" } else { "differs" })).collect();
    report(11, pass, t.elapsed(), Duration::from_secs(120), shown.join(", "));
}
