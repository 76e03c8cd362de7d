//! Command-line front end: argument parsing and subcommand dispatch.
//!
//! Every config key is exposed as `--kebab-key VALUE` (the `--snake_key`
//! spelling is accepted too). Exit status is 0 on success, 1 for usage
//! errors (bad flags, bad config) and 2 for runtime failures.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use clap::{Arg, ArgAction, ArgMatches, Command};
use rand::Rng;
use rayon::prelude::*;

use crate::config::{parse_config, EvalPolicy, KeySpec, RunConfig, KEYS};
use crate::dicetrain::{
    eval_greedy_v, eval_policy_network, train, Batch, EvalReport, TrainConfig, ValuePair,
};
use crate::diagnostics::{
    feature_dot_mean, metrics_csv, percent_difference, robustness_sign_flip,
    theorem1_scaling_probe, theorem2_descent_probe, value_heatmap, ProbeStep, PsiPairs,
};
use crate::error::{Error, Result};
use crate::gridworld::{generate_dataset, support_mask, Dataset};
use crate::netcore::{read_checkpoint, write_checkpoint, NetworkArchitecture, ParamVector};
use crate::seeds;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Step sizes for the interference-scaling probe.
pub const PROBE_ALPHAS: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

const SUBCOMMANDS: [(&str, &str); 6] = [
    ("gen-data", "generate the offline dataset (JSONL)"),
    ("train", "train value and policy networks; writes metrics.csv and checkpoints"),
    ("eval", "roll out the trained policy; prints success rate, mean return, percent difference"),
    ("diag", "run the interference, descent, co-adaptation and robustness probes"),
    ("heatmap", "export the normalized value heatmap as CSV and PGM"),
    ("sweep", "train and evaluate over a (lambda, eta) grid; writes sweep.csv"),
];

fn key_arg(k: &'static KeySpec) -> Arg {
    let default = if k.default.is_empty() { "none" } else { k.default };
    let mut arg = Arg::new(k.key)
        .long(k.flag())
        .value_name("VALUE")
        .action(ArgAction::Set)
        .help(format!("{} [default: {default}] [range: {}]", k.help, k.range));
    if k.flag() != k.key {
        arg = arg.alias(k.key);
    }
    arg
}

pub fn command() -> Command {
    let mut cmd = Command::new("odice")
        .about("Orthogonal-gradient DICE value learning on a gridworld")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .action(ArgAction::Set)
                .help("config file of `key = value` lines; flags override it"),
        );
        for k in KEYS {
            sub = sub.arg(key_arg(k));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn flags_of(m: &ArgMatches) -> Vec<(String, String)> {
    KEYS.iter()
        .filter_map(|k| {
            m.get_one::<String>(k.key)
                .map(|v| (k.key.to_string(), v.clone()))
        })
        .collect()
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing human-readable output to `out`. Returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let text = match sub.get_one::<String>("config") {
        Some(path) => match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read config file {path}: {e}");
                return EXIT_USAGE;
            }
        },
        None => String::new(),
    };
    let cfg = match parse_config(&text, &flags_of(sub)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match dispatch(name, &cfg, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn dispatch(subcommand: &str, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let report = match subcommand {
        "gen-data" => gen_data(cfg)?,
        "train" => train_cmd(cfg)?,
        "eval" => eval_cmd(cfg)?,
        "diag" => diag_cmd(cfg)?,
        "heatmap" => heatmap_cmd(cfg)?,
        "sweep" => sweep_cmd(cfg)?,
        other => return Err(Error::contract(format!("unknown subcommand `{other}`"))),
    };
    out.write_all(report.as_bytes())
        .map_err(|e| Error::io("writing report", e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    Dataset::read_jsonl(BufReader::new(file)).map_err(|e| match e {
        Error::Parse { line, msg, .. } => Error::Parse {
            path: Some(path.to_path_buf()),
            line,
            msg,
        },
        other => other,
    })
}

fn save_checkpoint(path: &Path, arch: &NetworkArchitecture, params: &ParamVector) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, arch, params)?;
    write_file(path, &buf)
}

fn load_checkpoint(path: &Path) -> Result<(NetworkArchitecture, ParamVector)> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_checkpoint(BufReader::new(file))
}

fn fmt_pd(returns: &[f64]) -> String {
    percent_difference(returns)
        .map(|v| v.to_string())
        .unwrap_or_else(|_| "undefined".into())
}

fn gen_data(cfg: &RunConfig) -> Result<String> {
    let ds = generate_dataset(&cfg.grid_spec(), cfg.n_traj, cfg.train.seed)?;
    let file = File::create(&cfg.dataset)
        .map_err(|e| Error::io(format!("creating {}", cfg.dataset.display()), e))?;
    let mut w = BufWriter::new(file);
    ds.write_jsonl(&mut w)?;
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", cfg.dataset.display()), e))?;
    Ok(format!(
        "wrote {} transitions in {} trajectories to {}\n",
        ds.len(),
        ds.n_trajectories(),
        cfg.dataset.display()
    ))
}

fn train_cmd(cfg: &RunConfig) -> Result<String> {
    let ds = load_dataset(&cfg.dataset)?;
    let run = train(&cfg.train, &ds)?;
    let dir = &cfg.out_dir;
    write_file(&dir.join("metrics.csv"), metrics_csv(&run.log).as_bytes())?;
    write_file(&dir.join("config.txt"), cfg.to_config_text().as_bytes())?;
    let st = &run.state;
    save_checkpoint(&dir.join("value.ckpt"), &st.value_arch, &st.value_params)?;
    save_checkpoint(&dir.join("policy.ckpt"), &st.policy_arch, &st.policy_params)?;
    let mut msg = format!(
        "trained {} steps ({}) on {} transitions; outputs in {}\n",
        cfg.train.steps,
        cfg.train.grad_mode,
        ds.len(),
        dir.display()
    );
    if let Some(last) = run.log.last() {
        let _ = writeln!(
            msg,
            "final loss_total={} psi_mean={} cos_phi_mean={}",
            last.loss_total, last.psi_mean, last.cos_phi_mean
        );
    }
    Ok(msg)
}

fn evaluate(
    cfg: &RunConfig,
    value: (&NetworkArchitecture, &ParamVector),
    policy: Option<(&NetworkArchitecture, &ParamVector)>,
) -> Result<EvalReport> {
    let spec = cfg.grid_spec();
    match (cfg.eval_policy, policy) {
        (EvalPolicy::GreedyV, _) => eval_greedy_v(value.1, value.0, &spec, cfg.episodes, cfg.train.seed),
        (EvalPolicy::Network, Some((arch, params))) => {
            eval_policy_network(params, arch, &spec, cfg.episodes, cfg.train.seed)
        }
        (EvalPolicy::Network, None) => Err(Error::contract("network policy not available")),
    }
}

fn eval_cmd(cfg: &RunConfig) -> Result<String> {
    let (varch, vparams) = load_checkpoint(&cfg.value_checkpoint())?;
    let policy = match cfg.eval_policy {
        EvalPolicy::Network => Some(load_checkpoint(&cfg.policy_checkpoint())?),
        EvalPolicy::GreedyV => None,
    };
    let report = evaluate(
        cfg,
        (&varch, &vparams),
        policy.as_ref().map(|(a, p)| (a, p)),
    )?;
    Ok(format!(
        "policy={}\nepisodes={}\nsuccess_rate={}\nmean_return={}\npercent_difference={}\n",
        cfg.eval_policy.name(),
        cfg.episodes,
        report.success_rate,
        report.mean_return(),
        fmt_pd(&report.returns)
    ))
}

fn diag_cmd(cfg: &RunConfig) -> Result<String> {
    let ds = load_dataset(&cfg.dataset)?;
    let (arch, params) = load_checkpoint(&cfg.value_checkpoint())?;
    if arch.output_dim != 1 || arch.input_dim != 2 {
        return Err(Error::contract("diag needs a value-network checkpoint"));
    }
    let train_cfg = TrainConfig {
        hidden_widths: arch.hidden_widths.clone(),
        activation: arch.activation,
        ..cfg.train.clone()
    };
    let dir = &cfg.out_dir;
    let mut summary = String::from("metric,value\n");

    // interference scaling on a fixed batch, target frozen at the checkpoint
    let mut rng = seeds::rng(cfg.train.seed, seeds::PROBE);
    let picks: Vec<_> = (0..cfg.train.batch_size)
        .map(|_| &ds.transitions[rng.random_range(0..ds.len())])
        .collect();
    let batch = Batch::from_transitions(&ds.spec, picks.into_iter());
    let pair = ValuePair {
        arch: &arch,
        online: &params,
        target: &params,
    };
    let mut t1 = String::from("probe_step,alpha,abs_l1_change\n");
    for step in [ProbeStep::Orthogonal, ProbeStep::TrueGrad] {
        let fit = theorem1_scaling_probe(pair, &batch, &train_cfg, &PROBE_ALPHAS, step)?;
        for (a, d) in fit.alphas.iter().zip(&fit.diffs) {
            let _ = writeln!(t1, "{},{a},{d}", step.name());
        }
        let slope = fit.slope.map(|s| s.to_string()).unwrap_or_else(|| "undefined".into());
        let _ = writeln!(summary, "interference_slope_{},{slope}", step.name());
    }
    write_file(&dir.join("theorem1.csv"), t1.as_bytes())?;

    // descent with eta just above the per-sample threshold, fresh networks
    let probe = theorem2_descent_probe(&ds, &train_cfg, cfg.probe_count, cfg.probe_alpha, cfg.train.seed)?;
    let mut t2 = String::from("probe,threshold,eta,loss_before,loss_after,decreased\n");
    for (i, c) in probe.checks.iter().enumerate() {
        let _ = writeln!(
            t2,
            "{i},{},{},{},{},{}",
            c.threshold,
            c.eta,
            c.loss_before,
            c.loss_after,
            c.decreased()
        );
    }
    write_file(&dir.join("theorem2.csv"), t2.as_bytes())?;
    let _ = writeln!(summary, "descent_fraction,{}", probe.decrease_fraction());
    let _ = writeln!(summary, "descent_skipped,{}", probe.skipped);

    let stats = PsiPairs::all(&ds).stats(&params, &arch)?;
    let _ = writeln!(summary, "feature_dot_mean,{}", feature_dot_mean(&params, &arch, &ds)?);
    let _ = writeln!(summary, "cos_phi_mean,{}", stats.cos_phi_mean);
    let flip = robustness_sign_flip(&params, &arch, &ds, cfg.sigma, cfg.n_noise, cfg.train.seed)?;
    let _ = writeln!(summary, "sign_flip_fraction,{flip}");
    write_file(&dir.join("diag_summary.csv"), summary.as_bytes())?;
    Ok(summary)
}

fn heatmap_cmd(cfg: &RunConfig) -> Result<String> {
    let (arch, params) = load_checkpoint(&cfg.value_checkpoint())?;
    let hm = value_heatmap(&params, &arch, &cfg.grid_spec())?;
    let dir = &cfg.out_dir;
    write_file(&dir.join("heatmap.csv"), hm.to_csv().as_bytes())?;
    write_file(&dir.join("heatmap.pgm"), hm.to_pgm().as_bytes())?;
    let mut msg = format!("wrote heatmap.csv and heatmap.pgm to {}\n", dir.display());
    if cfg.dataset.exists() {
        let mask = support_mask(&load_dataset(&cfg.dataset)?);
        if let Some((inside, outside)) = hm.region_means(&mask) {
            let _ = writeln!(
                msg,
                "in_support_mean={inside}\nood_mean={outside}\nood_gap={}",
                inside - outside
            );
        }
    }
    Ok(msg)
}

fn sweep_cmd(cfg: &RunConfig) -> Result<String> {
    let ds = load_dataset(&cfg.dataset)?;
    let mask = support_mask(&ds);
    let spec = cfg.grid_spec();
    let grid: Vec<(f64, f64)> = cfg
        .sweep_lambdas
        .iter()
        .flat_map(|&l| cfg.sweep_etas.iter().map(move |&e| (l, e)))
        .collect();
    let rows = grid
        .par_iter()
        .map(|&(lambda, eta)| -> Result<String> {
            let tc = TrainConfig {
                lambda,
                eta,
                ..cfg.train.clone()
            };
            let run = train(&tc, &ds)?;
            let st = &run.state;
            let report = evaluate(
                cfg,
                (&st.value_arch, &st.value_params),
                Some((&st.policy_arch, &st.policy_params)),
            )?;
            let gap = value_heatmap(&st.value_params, &st.value_arch, &spec)?
                .ood_gap(&mask)
                .map(|g| g.to_string())
                .unwrap_or_else(|| "undefined".into());
            Ok(format!(
                "{lambda},{eta},{},{},{},{},{gap}",
                report.success_rate,
                report.mean_return(),
                fmt_pd(&report.returns),
                feature_dot_mean(&st.value_params, &st.value_arch, &ds)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from(
        "lambda,eta,success_rate,mean_return,percent_difference,feature_dot_mean,ood_gap\n",
    );
    for r in rows {
        csv.push_str(&r);
        csv.push('\n');
    }
    write_file(&cfg.out_dir.join("sweep.csv"), csv.as_bytes())?;
    Ok(csv)
}
