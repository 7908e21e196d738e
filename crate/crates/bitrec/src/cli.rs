//! Command-line front end. Exit status: 0 on success, 1 on usage or input
//! errors, 2 when a numerical routine fails.

use std::fs;
use std::path::{Path, PathBuf};

use bitrec_core::diagnostics::{brute_force_oracle_detailed, estimate_rip_constants};
use bitrec_core::model::InitialPrecision;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::bench::{self, ExperimentSpec, RunOptions};
use crate::io;
use crate::overrides;
use crate::pipe::{self, PipeConfig, PipeError};
use crate::recover::{recover, Algorithm, Settings};

#[derive(Debug, Parser)]
#[command(name = "bitrec", version, about = "Binary vector recovery, benchmarks and pipe imaging")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Configuration override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = overrides::parse_pair)]
    pub set: Vec<(String, String)>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recover a binary vector from a measurement set.
    Recover {
        #[arg(long, default_value = "convex")]
        algo: Algorithm,
        /// Binary container, CSV bundle directory, or a single `Φ | y` CSV.
        #[arg(long)]
        input: PathBuf,
        /// Fixed residual-ball radius for the convex solver.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run an experiment spec and write CSV, SVG and metadata.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Record per-recovery wall time (makes the CSV non-reproducible).
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate isometry constants of the first channel's matrix.
    Rip {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        sparsity: usize,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Exhaustive minimal-weight binary solution of a small system.
    Oracle {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Image a simulated pipe from a pipe configuration.
    Image {
        /// Pipe configuration JSON; built-in defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        algo: Option<Algorithm>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {message}")]
    Numerical { context: &'static str, message: String, detail: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Numerical { .. } => 2,
        }
    }
}

fn usage(flag: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{flag}: {e}"))
}

fn numerical<E: std::fmt::Display + std::fmt::Debug>(context: &'static str, e: E) -> CliError {
    CliError::Numerical { context, message: e.to_string(), detail: format!("{e:?}") }
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, data).map_err(|e| usage("--out", format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).expect("json value serialises");
    text.push('\n');
    write(path, text)
}

fn read_input(path: &Path) -> Result<bitrec_core::model::MeasurementSet, CliError> {
    io::read_any(path).map_err(|e| usage("--input", format!("{}: {e}", path.display())))
}

fn threads(common: &Common) -> Result<usize, CliError> {
    match common.threads {
        Some(0) => Err(usage("--threads", "must be at least 1")),
        Some(t) => Ok(t),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn base_meta(command: &str, threads: usize, argv: &[String]) -> serde_json::Value {
    json!({
        "command": command,
        "argv": argv,
        "threads": threads,
        "version": env!("CARGO_PKG_VERSION"),
        "git_describe": option_env!("BITREC_GIT_DESCRIBE").unwrap_or("unknown"),
    })
}

fn merge(mut a: serde_json::Value, b: serde_json::Value) -> serde_json::Value {
    if let (Some(am), serde_json::Value::Object(bm)) = (a.as_object_mut(), b) {
        am.extend(bm);
    }
    a
}

/// Applies `--set` keys to the algorithm settings of `recover`.
fn apply_settings(st: &mut Settings, pairs: &[(String, String)]) -> Result<(), CliError> {
    for (k, v) in pairs {
        let num = || v.parse::<f64>().map_err(|e| usage("--set", format!("{k}={v}: {e}")));
        let count = || v.parse::<usize>().map_err(|e| usage("--set", format!("{k}={v}: {e}")));
        match k.as_str() {
            "a" => st.priors.a = num()?,
            "b" => st.priors.b = num()?,
            "c" => st.priors.c = num()?,
            "d" => st.priors.d = num()?,
            "beta0" if v == "from-data" => st.priors.beta0 = InitialPrecision::FromData,
            "beta0" => st.priors.beta0 = InitialPrecision::Fixed(num()?),
            "epsilon_c" => st.priors.epsilon_c = num()?,
            "threshold" => st.priors.threshold = num()?,
            "lambda_reg" => st.baseline.lambda_reg = Some(num()?),
            "bregman_mu" => st.baseline.bregman_mu = Some(num()?),
            "sbl_prune_tol" => st.baseline.sbl_prune_tol = num()?,
            "convex.max_outer_iters" => st.convex.max_outer_iters = count()?,
            "convex.max_inner_iters" => st.convex.max_inner_iters = count()?,
            "mf.max_sweeps" => st.mf.max_sweeps = count()?,
            "amp.max_outer" => st.amp.max_outer = count()?,
            _ => return Err(usage("--set", format!("unknown key `{k}`"))),
        }
    }
    st.priors.validate().map_err(|e| usage("--set", e))
}

pub fn run(cli: Cli, argv: &[String]) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Recover { common, .. }
        | Command::Bench { common, .. }
        | Command::Rip { common, .. }
        | Command::Oracle { common, .. }
        | Command::Image { common, .. } => common.clone(),
    };
    let nthreads = threads(&common)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(nthreads)
        .build()
        .map_err(|e| usage("--threads", e))?;
    fs::create_dir_all(&common.out).map_err(|e| usage("--out", format!("{}: {e}", common.out.display())))?;
    let out = common.out.clone();
    let result = pool.install(|| dispatch(cli.command, &out, nthreads, argv));
    if let Err(CliError::Numerical { context, message, detail }) = &result {
        let _ = write_json(&out.join("error.json"), &json!({ "module": context, "error": message, "detail": detail }));
    }
    result
}

fn dispatch(command: Command, out: &Path, nthreads: usize, argv: &[String]) -> Result<(), CliError> {
    match command {
        Command::Recover { algo, input, epsilon, seed, common } => {
            let ms = read_input(&input)?;
            let mut st = Settings::default();
            apply_settings(&mut st, &common.set)?;
            if let Some(e) = epsilon {
                if !(e >= 0.0 && e.is_finite()) {
                    return Err(usage("--epsilon", "must be finite and nonnegative"));
                }
                st.convex.epsilon_override = Some(e);
            }
            log::info!("{algo} on L={} M={} N={}", ms.l(), ms.m(), ms.n());
            let r = recover(&ms, algo, &st).map_err(|e| numerical("recover", e))?;
            let support: Vec<usize> = r.binary.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect();
            write_json(
                &out.join("result.json"),
                &json!({
                    "algorithm": algo,
                    "x_hat": r.x,
                    "support": support,
                    "beta_hat": r.beta_hat,
                    "iterations": r.iterations,
                    "converged": r.converged,
                    "objective_trace": r.objective_trace,
                }),
            )?;
            let meta = json!({ "input": input, "algorithm": algo, "epsilon": epsilon, "seed": seed, "set": common.set });
            write_json(&out.join("metadata.json"), &merge(base_meta("recover", nthreads, argv), meta))
        }
        Command::Bench { spec, trials, seed, timing, common } => {
            let text = fs::read_to_string(&spec).map_err(|e| usage("--spec", format!("{}: {e}", spec.display())))?;
            let mut s: ExperimentSpec = serde_json::from_str(&text).map_err(|e| usage("--spec", e))?;
            s = overrides::apply(&s, &common.set).map_err(|e| usage("--set", e))?;
            if let Some(t) = trials {
                s.trials = t;
            }
            if let Some(v) = seed {
                s.seed = v;
            }
            s.validate().map_err(|e| usage("--spec", e))?;
            let res = bench::run_sweep(&s, RunOptions { timing }).map_err(|e| numerical("bench", e))?;
            write(&out.join("results.csv"), res.to_csv())?;
            write(&out.join("results.svg"), res.to_svg(s.n))?;
            let meta = merge(base_meta("bench", nthreads, argv), bench::metadata(&s, nthreads));
            write_json(&out.join("metadata.json"), &meta)
        }
        Command::Rip { input, sparsity, samples, seed, common } => {
            if !common.set.is_empty() {
                return Err(usage("--set", "rip takes no configuration keys"));
            }
            let ms = read_input(&input)?;
            let e = estimate_rip_constants(ms.channels()[0].phi(), sparsity, samples, seed)
                .map_err(|e| usage("--sparsity", e))?;
            write_json(
                &out.join("rip.json"),
                &json!({
                    "delta_s": e.delta_s,
                    "delta_s_exact": e.delta_s_exact,
                    "delta_s_b_lower": e.delta_s_b_lower,
                    "c_bound": e.c_bound,
                }),
            )?;
            let meta = json!({ "input": input, "sparsity": sparsity, "samples": samples, "seed": seed });
            write_json(&out.join("metadata.json"), &merge(base_meta("rip", nthreads, argv), meta))
        }
        Command::Oracle { input, epsilon, common } => {
            if !common.set.is_empty() {
                return Err(usage("--set", "oracle takes no configuration keys"));
            }
            let ms = read_input(&input)?;
            let o = brute_force_oracle_detailed(&ms, epsilon).map_err(|e| usage("--input", e))?;
            let x = o.as_ref().map(|o| o.x.iter().map(|&b| u8::from(b)).collect::<Vec<_>>());
            if let Some(x) = &x {
                println!("{}", x.iter().map(u8::to_string).collect::<Vec<_>>().join(","));
            } else {
                println!("infeasible");
            }
            write_json(&out.join("oracle.json"), &json!({ "x": x, "ties": o.map(|o| o.ties), "epsilon": epsilon }))?;
            let meta = json!({ "input": input, "epsilon": epsilon });
            write_json(&out.join("metadata.json"), &merge(base_meta("oracle", nthreads, argv), meta))
        }
        Command::Image { spec, algo, seed, common } => {
            let mut cfg = match &spec {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| usage("--spec", format!("{}: {e}", p.display())))?;
                    serde_json::from_str(&text).map_err(|e| usage("--spec", e))?
                }
                None => PipeConfig::default(),
            };
            cfg.apply_overrides(&common.set).map_err(|e| usage("--set", e))?;
            if let Some(a) = algo {
                cfg.algorithm = a;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate().map_err(|e| match e {
                PipeError::Config(_) | PipeError::Eddy(_) => usage("--spec", e),
                other => numerical("image", other),
            })?;
            let img = pipe::image_pipe(&cfg).map_err(|e| numerical("image", e))?;
            if img.truncation_ratio > bitrec_core::eddy::fields::TRUNCATION_LIMIT {
                log::warn!("last angular ring carries up to {:.2e} of the field", img.truncation_ratio);
            }
            write(&out.join("image.csv"), pipe::image_csv(&img.merged))?;
            for r in 0..img.merged.grid.layers() {
                write(&out.join(format!("layer_{r}.svg")), pipe::layer_svg(&img.merged, r))?;
            }
            let meta = merge(base_meta("image", nthreads, argv), pipe::metadata(&cfg, &img, nthreads));
            write_json(&out.join("metadata.json"), &meta)
        }
    }
}

/// Parses `argv`, runs the command and returns the exit status.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
