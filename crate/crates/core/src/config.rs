//! Line-oriented run configuration.
//!
//! A config file holds `key = value` lines; `#` starts a comment. Every key
//! also exists as a command-line flag, and a flag beats the file, which
//! beats the built-in default. All keys live in one registry ([`KEYS`]) so
//! parsing, range checks, `--help` text and the effective-config dump
//! cannot drift apart.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::dicetrain::{GradMode, TrainConfig};
use crate::divergence::ConjugateMode;
use crate::error::{Error, Result};
use crate::gridworld::GridSpec;
use crate::netcore::Activation;

/// Where a key's effective value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Default,
    File,
    Flag,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Flag => "flag",
        }
    }
}

/// Policy used by `eval` and `sweep`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalPolicy {
    /// Step to the reachable cell with the highest value.
    GreedyV,
    /// Argmax of the weighted-BC policy network.
    Network,
}

impl EvalPolicy {
    pub fn name(self) -> &'static str {
        match self {
            EvalPolicy::GreedyV => "greedy_v",
            EvalPolicy::Network => "network",
        }
    }
}

/// Merged view of training, environment and I/O settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub top_reward: f64,
    pub right_reward: f64,
    pub step_reward: f64,
    pub slip_prob: f64,
    pub max_episode_len: usize,
    pub n_traj: usize,
    pub episodes: usize,
    pub eval_policy: EvalPolicy,
    pub sigma: f64,
    pub n_noise: usize,
    pub probe_count: usize,
    pub probe_alpha: f64,
    pub sweep_lambdas: Vec<f64>,
    pub sweep_etas: Vec<f64>,
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    /// Value checkpoint to read; `None` means `<out_dir>/value.ckpt`.
    pub checkpoint: Option<PathBuf>,
    provenance: BTreeMap<&'static str, Source>,
}

impl RunConfig {
    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            step_reward: self.step_reward,
            slip_prob: self.slip_prob,
            max_episode_len: self.max_episode_len,
            ..GridSpec::toy(self.top_reward, self.right_reward)
        }
    }

    pub fn source(&self, key: &str) -> Source {
        self.provenance.get(key).copied().unwrap_or(Source::Default)
    }

    pub fn value_checkpoint(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("value.ckpt"))
    }

    pub fn policy_checkpoint(&self) -> PathBuf {
        self.out_dir.join("policy.ckpt")
    }

    /// Every key with its effective value and source, in registry order.
    pub fn effective(&self) -> Vec<(&'static str, String, Source)> {
        KEYS.iter()
            .map(|k| (k.key, (k.get)(self), self.source(k.key)))
            .collect()
    }

    /// The effective configuration as a config file that reproduces it.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        for (key, value, source) in self.effective() {
            out.push_str(&format!("{key} = {value}  # {}\n", source.name()));
        }
        out
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            train: TrainConfig::default(),
            top_reward: 0.0,
            right_reward: 0.0,
            step_reward: 0.0,
            slip_prob: 0.0,
            max_episode_len: 0,
            n_traj: 0,
            episodes: 0,
            eval_policy: EvalPolicy::GreedyV,
            sigma: 0.0,
            n_noise: 0,
            probe_count: 0,
            probe_alpha: 0.0,
            sweep_lambdas: Vec::new(),
            sweep_etas: Vec::new(),
            dataset: PathBuf::new(),
            out_dir: PathBuf::new(),
            checkpoint: None,
            provenance: BTreeMap::new(),
        };
        for k in KEYS {
            (k.set)(&mut cfg, k.default).expect("registry defaults are valid");
        }
        cfg
    }
}

/// Accepted values of a key, used both for checking and for help text.
#[derive(Clone, Copy, Debug)]
pub enum Range {
    Open(f64, f64),
    Closed(f64, f64),
    Positive,
    NonNeg,
    AnyReal,
    AtLeast(u64),
    OneOf(&'static [&'static str]),
    Bool,
    Path,
}

impl Range {
    fn admits(self, v: f64) -> bool {
        match self {
            Range::Open(lo, hi) => v > lo && v < hi,
            Range::Closed(lo, hi) => v >= lo && v <= hi,
            Range::Positive => v > 0.0,
            Range::NonNeg => v >= 0.0,
            Range::AtLeast(n) => v >= n as f64,
            _ => true,
        }
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Range::Open(lo, hi) => write!(f, "({lo},{hi})"),
            Range::Closed(lo, hi) => write!(f, "[{lo},{hi}]"),
            Range::Positive => f.write_str("> 0"),
            Range::NonNeg => f.write_str(">= 0"),
            Range::AnyReal => f.write_str("any real"),
            Range::AtLeast(n) => write!(f, ">= {n}"),
            Range::OneOf(names) => write!(f, "{{{}}}", names.join(", ")),
            Range::Bool => f.write_str("{true, false}"),
            Range::Path => f.write_str("path"),
        }
    }
}

type Setter = fn(&mut RunConfig, &str) -> std::result::Result<(), String>;
type Getter = fn(&RunConfig) -> String;

/// One configuration key.
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub range: Range,
    pub help: &'static str,
    set: Setter,
    get: Getter,
}

impl KeySpec {
    /// Command-line spelling, e.g. `batch-size`.
    pub fn flag(&self) -> String {
        self.key.replace('_', "-")
    }
}

fn out_of_range(key: &str, range: Range, raw: &str) -> String {
    match range {
        Range::Open(..) | Range::Closed(..) => format!("{key} out of range {range}: {raw}"),
        _ => format!("{key} must be {range}, got {raw}"),
    }
}

fn real(key: &str, range: Range, raw: &str) -> std::result::Result<f64, String> {
    let v: f64 = raw
        .parse()
        .map_err(|_| format!("{key} expects a real number, got `{raw}`"))?;
    if !v.is_finite() || !range.admits(v) {
        return Err(out_of_range(key, range, raw));
    }
    Ok(v)
}

fn count(key: &str, range: Range, raw: &str) -> std::result::Result<usize, String> {
    let v: usize = raw
        .parse()
        .map_err(|_| format!("{key} expects a non-negative integer, got `{raw}`"))?;
    if !range.admits(v as f64) {
        return Err(out_of_range(key, range, raw));
    }
    Ok(v)
}

fn boolean(key: &str, raw: &str) -> std::result::Result<bool, String> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{key} expects true or false, got `{raw}`")),
    }
}

fn list<T>(
    raw: &str,
    item: impl Fn(&str) -> std::result::Result<T, String>,
) -> std::result::Result<Vec<T>, String> {
    let items = raw
        .split(',')
        .map(|s| item(s.trim()))
        .collect::<std::result::Result<Vec<T>, String>>()?;
    if items.is_empty() {
        return Err("list must not be empty".into());
    }
    Ok(items)
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

const GRAD_MODES: &[&str] = &["true_grad", "semi_grad", "orthogonal"];
const CONJUGATES: &[&str] = &["unconstrained", "nonneg"];
const ACTIVATIONS: &[&str] = &["relu", "tanh"];
const EVAL_POLICIES: &[&str] = &["greedy_v", "network"];

macro_rules! key {
    ($key:literal, $default:literal, $range:expr, $help:literal,
     |$c:ident, $v:ident| $set:expr, |$g:ident| $get:expr) => {
        KeySpec {
            key: $key,
            default: $default,
            range: $range,
            help: $help,
            set: |$c, $v| {
                $set;
                Ok(())
            },
            get: |$g| $get,
        }
    };
}

/// The key registry, in help and dump order.
pub static KEYS: &[KeySpec] = &[
    key!("seed", "0", Range::AtLeast(0), "master seed for data, training, evaluation and probes",
        |c, v| c.train.seed = v.parse::<u64>().map_err(|_| format!("seed expects a non-negative integer, got `{v}`"))?,
        |c| c.train.seed.to_string()),
    key!("lambda", "0.6", Range::Open(0.0, 1.0), "trade-off between the linear and conjugate value terms",
        |c, v| c.train.lambda = real("lambda", Range::Open(0.0, 1.0), v)?,
        |c| c.train.lambda.to_string()),
    key!("eta", "1.0", Range::NonNeg, "strength of the projected backward gradient (orthogonal mode)",
        |c, v| c.train.eta = real("eta", Range::NonNeg, v)?,
        |c| c.train.eta.to_string()),
    key!("lr", "0.0001", Range::Positive, "Adam learning rate for value and policy networks",
        |c, v| c.train.lr = real("lr", Range::Positive, v)?,
        |c| c.train.lr.to_string()),
    key!("tau", "0.005", Range::Closed(0.0, 1.0), "target network soft-update weight",
        |c, v| c.train.tau = real("tau", Range::Closed(0.0, 1.0), v)?,
        |c| c.train.tau.to_string()),
    key!("gamma", "0.99", Range::Open(0.0, 1.0), "discount factor",
        |c, v| c.train.gamma = real("gamma", Range::Open(0.0, 1.0), v)?,
        |c| c.train.gamma.to_string()),
    key!("batch_size", "256", Range::AtLeast(1), "transitions per gradient step",
        |c, v| c.train.batch_size = count("batch_size", Range::AtLeast(1), v)?,
        |c| c.train.batch_size.to_string()),
    key!("steps", "10000", Range::AtLeast(0), "training iterations",
        |c, v| c.train.steps = count("steps", Range::AtLeast(0), v)?,
        |c| c.train.steps.to_string()),
    key!("grad_mode", "orthogonal", Range::OneOf(GRAD_MODES), "value gradient rule",
        |c, v| c.train.grad_mode = v.parse::<GradMode>()?,
        |c| c.train.grad_mode.name().to_string()),
    key!("conjugate_mode", "unconstrained", Range::OneOf(CONJUGATES), "convex conjugate used in the value loss",
        |c, v| c.train.conjugate_mode = match v {
            "unconstrained" => ConjugateMode::Unconstrained,
            "nonneg" => ConjugateMode::Nonneg,
            _ => return Err(format!("conjugate_mode must be one of {}, got `{v}`", Range::OneOf(CONJUGATES))),
        },
        |c| c.train.conjugate_mode.name().to_string()),
    key!("bc_trick", "true", Range::Bool, "drop the +1 offset from behavior-cloning weights",
        |c, v| c.train.bc_trick = boolean("bc_trick", v)?,
        |c| c.train.bc_trick.to_string()),
    key!("hidden_widths", "128,128", Range::AtLeast(1), "comma-separated hidden layer widths",
        |c, v| c.train.hidden_widths = list(v, |s| count("hidden_widths", Range::AtLeast(1), s))?,
        |c| join(&c.train.hidden_widths)),
    key!("activation", "relu", Range::OneOf(ACTIVATIONS), "hidden-layer nonlinearity",
        |c, v| c.train.activation = match v {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            _ => return Err(format!("activation must be one of {}, got `{v}`", Range::OneOf(ACTIVATIONS))),
        },
        |c| c.train.activation.name().to_string()),
    key!("top_reward", "10", Range::Positive, "reward for entering the top goal band",
        |c, v| c.top_reward = real("top_reward", Range::Positive, v)?,
        |c| c.top_reward.to_string()),
    key!("right_reward", "5", Range::Positive, "reward for entering the right goal band",
        |c, v| c.right_reward = real("right_reward", Range::Positive, v)?,
        |c| c.right_reward.to_string()),
    key!("step_reward", "-1", Range::AnyReal, "reward for every non-goal step",
        |c, v| c.step_reward = real("step_reward", Range::AnyReal, v)?,
        |c| c.step_reward.to_string()),
    key!("slip_prob", "0.05", Range::Closed(0.0, 1.0), "probability an action is replaced by a uniform one",
        |c, v| c.slip_prob = real("slip_prob", Range::Closed(0.0, 1.0), v)?,
        |c| c.slip_prob.to_string()),
    key!("max_episode_len", "120", Range::AtLeast(1), "episode step cap",
        |c, v| c.max_episode_len = count("max_episode_len", Range::AtLeast(1), v)?,
        |c| c.max_episode_len.to_string()),
    key!("n_traj", "20", Range::AtLeast(1), "trajectories generated by gen-data",
        |c, v| c.n_traj = count("n_traj", Range::AtLeast(1), v)?,
        |c| c.n_traj.to_string()),
    key!("episodes", "100", Range::AtLeast(1), "evaluation rollouts",
        |c, v| c.episodes = count("episodes", Range::AtLeast(1), v)?,
        |c| c.episodes.to_string()),
    key!("eval_policy", "greedy_v", Range::OneOf(EVAL_POLICIES), "policy used by eval and sweep",
        |c, v| c.eval_policy = match v {
            "greedy_v" => EvalPolicy::GreedyV,
            "network" => EvalPolicy::Network,
            _ => return Err(format!("eval_policy must be one of {}, got `{v}`", Range::OneOf(EVAL_POLICIES))),
        },
        |c| c.eval_policy.name().to_string()),
    key!("sigma", "0.02", Range::Positive, "std of the state noise in the robustness probe",
        |c, v| c.sigma = real("sigma", Range::Positive, v)?,
        |c| c.sigma.to_string()),
    key!("n_noise", "10", Range::AtLeast(1), "noise draws per transition in the robustness probe",
        |c, v| c.n_noise = count("n_noise", Range::AtLeast(1), v)?,
        |c| c.n_noise.to_string()),
    key!("probe_count", "1000", Range::AtLeast(1), "descent-probe draws",
        |c, v| c.probe_count = count("probe_count", Range::AtLeast(1), v)?,
        |c| c.probe_count.to_string()),
    key!("probe_alpha", "0.00001", Range::Positive, "plain gradient step of the descent probe",
        |c, v| c.probe_alpha = real("probe_alpha", Range::Positive, v)?,
        |c| c.probe_alpha.to_string()),
    key!("sweep_lambdas", "0.4,0.6", Range::Open(0.0, 1.0), "comma-separated lambda grid for sweep",
        |c, v| c.sweep_lambdas = list(v, |s| real("sweep_lambdas", Range::Open(0.0, 1.0), s))?,
        |c| join(&c.sweep_lambdas)),
    key!("sweep_etas", "0.2,1.0", Range::NonNeg, "comma-separated eta grid for sweep",
        |c, v| c.sweep_etas = list(v, |s| real("sweep_etas", Range::NonNeg, s))?,
        |c| join(&c.sweep_etas)),
    key!("dataset", "dataset.jsonl", Range::Path, "dataset file written by gen-data and read by the rest",
        |c, v| c.dataset = PathBuf::from(v),
        |c| c.dataset.display().to_string()),
    key!("out_dir", "out", Range::Path, "directory for metrics, checkpoints and reports",
        |c, v| c.out_dir = PathBuf::from(v),
        |c| c.out_dir.display().to_string()),
    key!("checkpoint", "", Range::Path, "value checkpoint to load (empty: <out_dir>/value.ckpt)",
        |c, v| c.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
        |c| c.checkpoint.as_deref().map(Path::display).map(|d| d.to_string()).unwrap_or_default()),
];

pub fn find_key(name: &str) -> Option<&'static KeySpec> {
    let name = name.replace('-', "_");
    KEYS.iter().find(|k| k.key == name)
}

/// Merges config-file text and `(key, value)` flags over the defaults.
///
/// Flag keys may use `-` or `_`. Errors name the offending key and, for
/// file entries, the 1-based line number.
pub fn parse_config(text: &str, flags: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config {
                key: line.to_string(),
                line: line_no,
                msg: "expected `key = value`".into(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        let err = |msg: String| Error::Config {
            key: key.to_string(),
            line: line_no,
            msg,
        };
        let spec = find_key(key)
            .filter(|k| k.key == key)
            .ok_or_else(|| err("unknown key".into()))?;
        if cfg.provenance.contains_key(spec.key) {
            return Err(err("duplicate key".into()));
        }
        (spec.set)(&mut cfg, value).map_err(err)?;
        cfg.provenance.insert(spec.key, Source::File);
    }
    for (key, value) in flags {
        let err = |msg: String| Error::Flag {
            key: key.clone(),
            msg,
        };
        let spec = find_key(key).ok_or_else(|| err("unknown flag".into()))?;
        (spec.set)(&mut cfg, value.trim()).map_err(err)?;
        cfg.provenance.insert(spec.key, Source::Flag);
    }
    cfg.train.validate()?;
    cfg.grid_spec().validate()?;
    Ok(cfg)
}
