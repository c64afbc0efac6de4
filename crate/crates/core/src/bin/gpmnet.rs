//! `gpmnet` command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use gpmnet::config::{Config, FitSettings, KEYS};
use gpmnet::eval::{preset, run_benchmark, scaling_curve, BenchmarkSpec};
use gpmnet::gpm::Convention;
use gpmnet::graphs::{hamming_breakdown, UndirectedGraph};
use gpmnet::oracle::{verify, VerifyOptions};
use gpmnet::synthgen::{generate, Family, GenSpec};
use gpmnet::train::fit_with;
use gpmnet::types::{load_dataset, standardize};
use gpmnet::Error;

#[derive(Parser)]
#[command(name = "gpmnet", version, about = "Markov network structure learning with a generalized precision matrix")]
struct Cli {
    /// Make every primary output byte-identical across repeated runs
    /// (wall-clock times are left out of them).
    #[arg(long, global = true)]
    deterministic: bool,

    /// Seed for generation, basis sampling, minibatches, and oracle trials.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for benchmark cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Flat key=value config file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Extra config assignment `key=value` (repeatable). Run `gpmnet keys`
    /// for the list of keys and defaults.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with its ground-truth graph.
    Generate(GenerateArgs),
    /// Fit a model and write the checkpoint, GPMs, graph, and training log.
    Fit(FitArgs),
    /// Hamming distance between an estimated and a true graph.
    Eval(EvalArgs),
    /// Run a benchmark sweep or a runtime-scaling measurement.
    Benchmark(BenchmarkArgs),
    /// Run the exact oracle battery; exit 0 iff every check passes.
    Verify(VerifyArgs),
    /// List every config key with its default.
    Keys,
}

#[derive(Args)]
struct GenerateArgs {
    /// butterfly-c, butterfly-d, butterfly-m, random-c, random-d, random-m
    #[arg(long)]
    family: Option<String>,
    /// Number of variable pairs (butterfly families); d = 2 * pairs.
    #[arg(long)]
    pairs: Option<usize>,
    /// Number of variables (default 4).
    #[arg(long)]
    d: Option<usize>,
    /// Number of rows (default 1000).
    #[arg(long)]
    n: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct FitFlags {
    /// l1, adaptive-l1, scad, mcp (default scad)
    #[arg(long)]
    penalty: Option<String>,
    /// Penalty strength (default 0.1).
    #[arg(long)]
    lambda: Option<f64>,
    /// Maximum Adam iterations (default 2000).
    #[arg(long)]
    max_iters: Option<usize>,
    /// Adam learning rate (default 0.01).
    #[arg(long)]
    lr: Option<f64>,
    /// Number of RBF centers (default min(n, 30)).
    #[arg(long)]
    k: Option<usize>,
    /// Minibatch size (default full batch).
    #[arg(long)]
    batch: Option<usize>,
    /// Edge threshold policy: gap or absolute (default gap).
    #[arg(long)]
    threshold: Option<String>,
    /// Threshold for the absolute policy (default 1e-3).
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV or JSON.
    data: PathBuf,
    #[command(flatten)]
    flags: FitFlags,
    /// Output directory.
    #[arg(long, default_value = "fit-out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated graph JSON.
    estimate: PathBuf,
    /// True graph JSON.
    truth: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Named preset: butterfly-small, butterfly-all, random-small.
    #[arg(long)]
    preset: Option<String>,
    /// Family for a custom sweep or scaling run.
    #[arg(long)]
    family: Option<String>,
    /// Comma-separated list of d values.
    #[arg(long, value_delimiter = ',')]
    d_list: Vec<usize>,
    /// Rows per dataset.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Seeds per (family, d) cell, counting up from --seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Measure fit time over --d-list instead of scoring.
    #[arg(long)]
    scaling: bool,
    #[command(flatten)]
    flags: FitFlags,
    /// Output directory.
    #[arg(long, default_value = "benchmark-out")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Random tables for the discrete iff check (half as many mixed ones).
    #[arg(long, default_value_t = 200)]
    trials: usize,
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFinite(_) | Error::StaleTape => 1,
            Error::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => 1,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

fn runtime(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CliResult {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects key=value, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.set("train.seed", &s.to_string())?;
        cfg.set("gen.seed", &s.to_string())?;
    }
    match &cli.command {
        Command::Generate(a) => cmd_generate(cfg, a),
        Command::Fit(a) => cmd_fit(cli, cfg, a),
        Command::Eval(a) => cmd_eval(a),
        Command::Benchmark(a) => cmd_benchmark(cli, cfg, a),
        Command::Verify(a) => cmd_verify(cli, a),
        Command::Keys => {
            for (k, d) in KEYS {
                println!("{k:<24} {d}");
            }
            Ok(())
        }
    }
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| Failure::from(Error::Io { path: path.into(), source: e }))
}

fn ensure_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_generate(mut cfg: Config, a: &GenerateArgs) -> CliResult {
    if let Some(f) = &a.family {
        cfg.set("gen.family", f)?;
    }
    if let (Some(p), Some(d)) = (a.pairs, a.d) {
        if d != 2 * p {
            return Err(usage(format!("--pairs {p} and --d {d} disagree")));
        }
    }
    if let Some(p) = a.pairs {
        cfg.set("gen.d", &(2 * p).to_string())?;
    }
    if let Some(d) = a.d {
        cfg.set("gen.d", &d.to_string())?;
    }
    if let Some(n) = a.n {
        cfg.set("gen.n", &n.to_string())?;
    }
    let spec = cfg.gen_spec()?;
    let (ds, truth) = generate(&spec)?;
    ensure_dir(&a.out)?;
    ds.save(&a.out.join("data.csv"))?;
    truth.save(&a.out.join("truth.json"))?;
    let prov = json!({
        "generator": spec,
        "rows": ds.n(),
        "columns": ds.d(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_text(&a.out.join("provenance.json"), &(serde_json::to_string_pretty(&prov).map_err(Error::from)? + "\n"))
}

fn apply_fit_flags(cfg: &mut Config, f: &FitFlags) -> CliResult {
    let pairs: [(&str, Option<String>); 8] = [
        ("penalty.kind", f.penalty.clone()),
        ("penalty.lambda", f.lambda.map(|v| v.to_string())),
        ("train.max_iters", f.max_iters.map(|v| v.to_string())),
        ("train.lr", f.lr.map(|v| v.to_string())),
        ("basis.k", f.k.map(|v| v.to_string())),
        ("train.batch", f.batch.map(|v| v.to_string())),
        ("threshold.policy", f.threshold.clone()),
        ("threshold.tau", f.tau.map(|v| v.to_string())),
    ];
    for (k, v) in pairs {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    Ok(())
}

fn cmd_fit(cli: &Cli, mut cfg: Config, a: &FitArgs) -> CliResult {
    apply_fit_flags(&mut cfg, &a.flags)?;
    let FitSettings { basis, penalty, train, checkpoint_every } = cfg.fit_settings()?;
    let ds = load_dataset(&a.data, None)?;
    ensure_dir(&a.out)?;
    let log_path = a.out.join("train_log.jsonl");
    let model_path = a.out.join("model.json");
    let log_file = File::create(&log_path).map_err(|e| runtime(format!("cannot create {}: {e}", log_path.display())))?;
    let mut log = BufWriter::new(log_file);
    let std = if basis.standardize { Some(standardize(&ds).1) } else { None };

    let mut observer = |iter: usize, report: &gpmnet::scorematch::LossReport, model: &gpmnet::energy::EnergyModel| {
        let line = json!({ "iter": iter, "total": report.total, "penalty": report.penalty, "per_variable": report.per_variable });
        writeln!(log, "{line}").map_err(|e| Error::Io { path: log_path.clone(), source: e })?;
        if checkpoint_every > 0 && iter % checkpoint_every == 0 {
            let ck = serde_json::to_string(&model.checkpoint(std.as_ref()))?;
            std::fs::write(&model_path, ck + "\n").map_err(|e| Error::Io { path: model_path.clone(), source: e })?;
        }
        Ok(())
    };
    let result = fit_with(&ds, &basis, &penalty, &train, &mut observer);
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            let _ = log.flush();
            let f = Failure::from(e);
            return Err(Failure { code: f.code, msg: format!("{} (training log: {})", f.msg, log_path.display()) });
        }
    };
    let mut done = json!({
        "done": true,
        "iterations": result.iterations,
        "converged": result.converged,
        "nonmonotone": result.nonmonotone,
    });
    if !cli.deterministic {
        done["wall_time"] = json!(result.wall_time);
    }
    writeln!(log, "{done}").and_then(|_| log.flush()).map_err(|e| runtime(format!("cannot write log: {e}")))?;

    let ck = serde_json::to_string(&result.model.checkpoint(Some(&result.standardization))).map_err(Error::from)?;
    write_text(&model_path, &(ck + "\n"))?;
    result.gpm.save_csv(&a.out.join("omega_squared.csv"))?;
    result.gpm.with_convention(Convention::Rooted).save_csv(&a.out.join("omega_rooted.csv"))?;
    result.graph.save(&a.out.join("graph.json"))?;
    eprintln!(
        "{} iterations, converged: {}, {} edges; outputs in {}",
        result.iterations,
        result.converged,
        result.graph.edge_count(),
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CliResult {
    let est = UndirectedGraph::load(&a.estimate)?;
    let truth = UndirectedGraph::load(&a.truth)?;
    let b = hamming_breakdown(&est, &truth)?;
    let out = json!({ "hamming": b.total(), "d": truth.d(), "extra_edges": b.extra, "missing_edges": b.missing });
    println!("{out}");
    Ok(())
}

fn cmd_benchmark(cli: &Cli, mut cfg: Config, a: &BenchmarkArgs) -> CliResult {
    apply_fit_flags(&mut cfg, &a.flags)?;
    let settings = cfg.fit_settings()?;
    let base_seed = cli.seed.unwrap_or(0);
    if a.scaling {
        let family: Family = a.family.as_deref().unwrap_or("butterfly-c").parse()?;
        if a.d_list.is_empty() {
            return Err(usage("--scaling needs --d-list"));
        }
        let report = scaling_curve(family, &a.d_list, a.n, &settings.basis, &settings.penalty, &settings.train)?;
        ensure_dir(&a.out)?;
        let text = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
        write_text(&a.out.join("scaling.json"), &text)?;
        println!("{}", text.trim_end());
        return Ok(());
    }
    let generators: Vec<GenSpec> = match (&a.preset, &a.family) {
        (Some(p), None) => preset(p)?.into_iter().map(|g| GenSpec { n: a.n, ..g }).collect(),
        (None, Some(f)) => {
            let family: Family = f.parse()?;
            if a.d_list.is_empty() {
                return Err(usage("--family needs --d-list"));
            }
            a.d_list.iter().map(|&d| GenSpec::new(family, d, a.n, base_seed)).collect()
        }
        _ => return Err(usage("give exactly one of --preset or --family")),
    };
    let mut spec = BenchmarkSpec::new(generators, &settings);
    spec.seeds = (base_seed..base_seed + a.seeds).collect();
    spec.output_dir = Some(a.out.clone());
    spec.jobs = cli.jobs;
    spec.deterministic = cli.deterministic;
    let rows = run_benchmark(&spec)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    eprintln!("{} cells ({} failed); results in {}", rows.len(), failed, a.out.display());
    Ok(())
}

fn cmd_verify(cli: &Cli, a: &VerifyArgs) -> CliResult {
    if a.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let report = verify(&VerifyOptions { trials: a.trials, seed: cli.seed.unwrap_or(0), ..Default::default() });
    println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
    if report.passed {
        Ok(())
    } else {
        Err(runtime(format!("failed checks: {}", report.failing().join(", "))))
    }
}
