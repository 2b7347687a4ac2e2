//! Model files, superstate-MDP files and run manifests.
//!
//! Models are JSON objects with fields `n_states`, `n_actions`, `n_obs`,
//! `gamma`, `init_dist`, `transition[a][s][s']`, `obs_kernel[s][y]`,
//! `reward[s][a]` and optional `labels`. Invariant violations are reported
//! with the line of the offending row.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pomdp::{Labels, PomdpModel, Violation};
use crate::superstate::{SuperstateMdp, TabularMdp};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    n_states: usize,
    n_actions: usize,
    n_obs: usize,
    gamma: f64,
    init_dist: Vec<f64>,
    transition: Vec<Vec<Vec<f64>>>,
    obs_kernel: Vec<Vec<f64>>,
    reward: Vec<Vec<f64>>,
    #[serde(default)]
    labels: Option<Labels>,
}

/// 1-based line of the array element reached by `path` inside the value
/// of top-level `key`, or of the key itself when the path cannot be
/// followed.
fn locate(text: &str, key: &str, path: &[usize]) -> usize {
    let bytes = text.as_bytes();
    let needle = format!("\"{key}\"");
    let Some(start) = text.find(&needle) else { return 1 };
    let line_of = |pos: usize| text[..pos].matches('\n').count() + 1;
    let mut pos = start + needle.len();
    let skip_ws = |mut p: usize| {
        while p < bytes.len() && (bytes[p] as char).is_whitespace() {
            p += 1;
        }
        p
    };
    pos = skip_ws(pos);
    if bytes.get(pos) != Some(&b':') {
        return line_of(start);
    }
    pos = skip_ws(pos + 1);
    for &idx in path {
        if bytes.get(pos) != Some(&b'[') {
            return line_of(start);
        }
        pos = skip_ws(pos + 1);
        for _ in 0..idx {
            // skip one element
            let mut depth = 0i32;
            let mut in_str = false;
            while pos < bytes.len() {
                let c = bytes[pos];
                if in_str {
                    if c == b'\\' {
                        pos += 1;
                    } else if c == b'"' {
                        in_str = false;
                    }
                } else {
                    match c {
                        b'"' => in_str = true,
                        b'[' | b'{' => depth += 1,
                        b']' | b'}' => {
                            if depth == 0 {
                                return line_of(start);
                            }
                            depth -= 1;
                        }
                        b',' if depth == 0 => break,
                        _ => {}
                    }
                }
                pos += 1;
            }
            pos = skip_ws(pos + 1);
        }
    }
    line_of(pos.min(text.len()))
}

fn violation_line(text: &str, v: &Violation) -> usize {
    match v {
        Violation::TransitionRow { action, state, .. } => locate(text, "transition", &[*action, *state]),
        Violation::ObservationRow { state, .. } => locate(text, "obs_kernel", &[*state]),
        Violation::InitDist { .. } => locate(text, "init_dist", &[]),
        Violation::Discount(_) => locate(text, "gamma", &[]),
        Violation::NonFiniteReward { state, .. } => locate(text, "reward", &[*state]),
    }
}

/// Blank out `#` comment lines (a run manifest), keeping line numbers.
fn blank_comments(text: &str) -> String {
    text.lines()
        .map(|l| if l.trim_start().starts_with('#') { "" } else { l })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parse a model without checking the probabilistic invariants.
pub fn parse_model_unchecked(text: &str, path: &str) -> Result<PomdpModel> {
    let text = &blank_comments(text);
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_string(),
        line: e.line().max(1),
        message: e.to_string(),
    })?;
    let shape = |key: &str, message: String| Error::Parse {
        path: path.to_string(),
        line: locate(text, key, &[]),
        message,
    };
    if file.init_dist.len() != file.n_states {
        return Err(shape("init_dist", format!("expected {} entries", file.n_states)));
    }
    if file.transition.len() != file.n_actions {
        return Err(shape("transition", format!("expected {} action blocks", file.n_actions)));
    }
    if file.obs_kernel.len() != file.n_states || file.obs_kernel.iter().any(|r| r.len() != file.n_obs) {
        return Err(shape("obs_kernel", format!("expected {} x {}", file.n_states, file.n_obs)));
    }
    let model = PomdpModel::from_parts(
        &file.transition,
        &file.obs_kernel,
        &file.reward,
        &file.init_dist,
        file.gamma,
    )
    .map_err(|e| shape("transition", e.to_string()))?;
    Ok(match file.labels {
        Some(labels) => model.with_labels(labels),
        None => model,
    })
}

/// Parse and validate a model; the first violation is reported with its line.
pub fn parse_model(text: &str, path: &str) -> Result<PomdpModel> {
    let text = &blank_comments(text);
    let model = parse_model_unchecked(text, path)?;
    if let Some(v) = model.validate().first() {
        return Err(Error::Parse {
            path: path.to_string(),
            line: violation_line(text, v),
            message: v.to_string(),
        });
    }
    Ok(model)
}

/// Every violation with its line, for report-style validation.
pub fn validation_report(text: &str, path: &str) -> Result<Vec<(usize, Violation)>> {
    let text = &blank_comments(text);
    let model = parse_model_unchecked(text, path)?;
    Ok(model.validate().into_iter().map(|v| (violation_line(text, &v), v)).collect())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PomdpModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_model(&text, &path.display().to_string())
}

fn row(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| fmt_num(*x)).collect();
    format!("[{}]", parts.join(", "))
}

/// Shortest round-trip decimal, always with a fractional part or exponent.
fn fmt_num(x: f64) -> String {
    let s = format!("{x:?}");
    if s == "-0.0" {
        "0.0".into()
    } else {
        s
    }
}

fn matrix(out: &mut String, rows: &[Vec<f64>], indent: &str) {
    out.push_str("[\n");
    for (i, r) in rows.iter().enumerate() {
        let sep = if i + 1 < rows.len() { "," } else { "" };
        let _ = writeln!(out, "{indent}  {}{sep}", row(r));
    }
    let _ = write!(out, "{indent}]");
}

fn string_list(v: &[String]) -> String {
    serde_json::to_string(v).expect("strings serialise")
}

/// Model file text with one matrix row per line.
pub fn model_to_string(model: &PomdpModel) -> String {
    let mut out = String::from("{\n");
    let _ = writeln!(out, "  \"n_states\": {},", model.n_states());
    let _ = writeln!(out, "  \"n_actions\": {},", model.n_actions());
    let _ = writeln!(out, "  \"n_obs\": {},", model.n_obs());
    let _ = writeln!(out, "  \"gamma\": {},", fmt_num(model.gamma()));
    let _ = writeln!(out, "  \"init_dist\": {},", row(model.init_dist()));
    out.push_str("  \"transition\": [\n");
    for a in 0..model.n_actions() {
        out.push_str("    ");
        matrix(&mut out, &model.transition_matrix(a), "    ");
        out.push_str(if a + 1 < model.n_actions() { ",\n" } else { "\n" });
    }
    out.push_str("  ],\n  \"obs_kernel\": ");
    matrix(&mut out, &model.obs_matrix(), "  ");
    out.push_str(",\n  \"reward\": ");
    matrix(&mut out, &model.reward_matrix(), "  ");
    let l = &model.labels;
    if !(l.states.is_empty() && l.actions.is_empty() && l.observations.is_empty()) {
        out.push_str(",\n  \"labels\": {\n");
        let mut fields = Vec::new();
        if !l.states.is_empty() {
            fields.push(format!("    \"states\": {}", string_list(&l.states)));
        }
        if !l.actions.is_empty() {
            fields.push(format!("    \"actions\": {}", string_list(&l.actions)));
        }
        if !l.observations.is_empty() {
            fields.push(format!("    \"observations\": {}", string_list(&l.observations)));
        }
        out.push_str(&fields.join(",\n"));
        out.push_str("\n  }");
    }
    out.push_str("\n}\n");
    out
}

pub fn save_model(model: &PomdpModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_string(model))?;
    Ok(())
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Superstate MDP file text (dense tables plus the superstate labels).
pub fn smdp_to_string(smdp: &SuperstateMdp) -> String {
    let mdp = &smdp.mdp;
    let mut out = String::from("{\n  \"kind\": \"superstate_mdp\",\n");
    let _ = writeln!(out, "  \"n_states\": {},", mdp.n_states);
    let _ = writeln!(out, "  \"n_actions\": {},", mdp.n_actions);
    let _ = writeln!(out, "  \"gamma\": {},", fmt_num(mdp.gamma));
    let _ = writeln!(out, "  \"l\": {},", smdp.l());
    let _ = writeln!(out, "  \"r_bar\": {},", fmt_num(mdp.r_bar()));
    out.push_str("  \"transition\": [\n");
    for a in 0..mdp.n_actions {
        let rows: Vec<Vec<f64>> = (0..mdp.n_states).map(|s| mdp.dense_row(s, a)).collect();
        out.push_str("    ");
        matrix(&mut out, &rows, "    ");
        out.push_str(if a + 1 < mdp.n_actions { ",\n" } else { "\n" });
    }
    out.push_str("  ],\n  \"reward\": ");
    let rewards: Vec<Vec<f64>> = mdp.reward.chunks(mdp.n_actions).map(<[f64]>::to_vec).collect();
    matrix(&mut out, &rewards, "  ");
    let labels: Vec<String> = smdp.space.states.iter().map(|b| b.to_string()).collect();
    let _ = write!(out, ",\n  \"superstates\": {},\n  \"rep_belief\": ", string_list(&labels));
    let beliefs: Vec<Vec<f64>> = smdp.space.rep_beliefs.iter().map(|b| b.probs().to_vec()).collect();
    matrix(&mut out, &beliefs, "  ");
    out.push_str("\n}\n");
    out
}

#[derive(Debug, Clone, Deserialize)]
struct SmdpFile {
    kind: String,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    #[serde(default)]
    superstates: Vec<String>,
}

/// A superstate MDP read back from disk: the tables and the labels.
#[derive(Debug, Clone)]
pub struct LoadedSmdp {
    pub mdp: TabularMdp,
    pub superstates: Vec<String>,
}

pub fn parse_smdp(text: &str, path: &str) -> Result<LoadedSmdp> {
    let text = &blank_comments(text);
    let file: SmdpFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_string(),
        line: e.line().max(1),
        message: e.to_string(),
    })?;
    let fail = |key: &str, message: String| Error::Parse {
        path: path.to_string(),
        line: locate(text, key, &[]),
        message,
    };
    if file.kind != "superstate_mdp" {
        return Err(fail("kind", format!("unexpected kind {:?}", file.kind)));
    }
    if file.transition.len() != file.n_actions || file.reward.len() != file.n_states {
        return Err(fail("transition", "table shape does not match the header".into()));
    }
    let mdp = TabularMdp::from_dense(&file.transition, &file.reward, file.gamma)
        .map_err(|e| fail("transition", e.to_string()))?;
    Ok(LoadedSmdp { mdp, superstates: file.superstates })
}

pub fn load_smdp(path: impl AsRef<Path>) -> Result<LoadedSmdp> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_smdp(&text, &path.display().to_string())
}

/// Comment block written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    pub command: String,
    pub seeds: Vec<u64>,
    pub model_sha256: Option<String>,
    /// Resolved configuration, in a fixed order.
    pub config: Vec<(String, String)>,
    pub version: String,
    /// Unix seconds; the only line allowed to differ between reruns.
    pub timestamp: u64,
}

pub const TIMESTAMP_PREFIX: &str = "# timestamp: ";

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            ..Default::default()
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.config.push((key.to_string(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# command: {}", self.command);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "# seeds: {}", seeds.join(" "));
        if let Some(h) = &self.model_sha256 {
            let _ = writeln!(out, "# model_sha256: {h}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let _ = writeln!(out, "# version: {}", self.version);
        let _ = writeln!(out, "{TIMESTAMP_PREFIX}{}", self.timestamp);
        out
    }
}

/// Drop the manifest timestamp line, for byte comparisons of reruns.
pub fn strip_timestamp(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with(TIMESTAMP_PREFIX))
        .fold(String::new(), |mut s, l| {
            s.push_str(l);
            s.push('\n');
            s
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{customer_retail, tmaze};
    use crate::superstate::build;

    #[test]
    fn model_round_trip() {
        for m in [customer_retail(), tmaze(2, 1.0, 0.9, 3).unwrap()] {
            let text = model_to_string(&m);
            let back = parse_model(&text, "x.json").unwrap();
            assert_eq!(back, m);
            assert_eq!(model_to_string(&back), text);
        }
    }

    #[test]
    fn bad_row_reports_its_line() {
        let text = model_to_string(&customer_retail()).replace("[0.3, 0.3, 0.2, 0.2]", "[0.3, 0.3, 0.2, 0.1]");
        let err = parse_model(&text, "m.json").unwrap_err();
        let Error::Parse { line, message, .. } = err else { panic!("{err}") };
        let expect = text.lines().position(|l| l.contains("[0.3, 0.3, 0.2, 0.1]")).unwrap() + 1;
        assert_eq!(line, expect);
        assert!(message.contains("s=1, a=0"), "{message}");
    }

    #[test]
    fn syntax_errors_have_lines() {
        let err = parse_model("{\n  \"n_states\": 2,\n  oops\n}", "m.json").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn discount_violation_is_located() {
        let text = model_to_string(&customer_retail()).replace("\"gamma\": 0.9", "\"gamma\": 1.0");
        let report = validation_report(&text, "m.json").unwrap();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].0, 5);
        assert!(matches!(report[0].1, Violation::Discount(_)));
    }

    #[test]
    fn smdp_round_trip() {
        let smdp = build(&customer_retail(), 1).unwrap();
        let back = parse_smdp(&smdp_to_string(&smdp), "s.json").unwrap();
        assert_eq!(back.mdp.n_states, smdp.mdp.n_states);
        assert_eq!(back.mdp.reward, smdp.mdp.reward);
        for k in 0..back.mdp.transition.len() {
            assert_eq!(back.mdp.transition[k], smdp.mdp.transition[k]);
        }
        assert_eq!(back.superstates[0], "{}");
    }

    #[test]
    fn manifest_strip() {
        let mut m = RunManifest::new("td --seed 1");
        m.seeds = vec![1];
        m.set("tau", 100);
        let text = m.render();
        assert!(text.starts_with("# command: td --seed 1\n"));
        assert!(!strip_timestamp(&text).contains("timestamp"));
        assert_eq!(sha256_hex(b"abc").len(), 64);
    }
}
