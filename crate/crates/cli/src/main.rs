use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ofl::analysis::{
    alpha_l1, alpha_table1, comm_cost, optimal_eta, optimize_budget, BoundParams, DEFAULT_S_MAX,
};
use ofl::config::{ConfigFile, Overrides};
use ofl::quantcheck::{empirical_stats, probe_vector};
use ofl::sim::{compare, run_on, write_comparison_csv, write_run, RunOptions};
use ofl::{Error, ParameterVector, QuantizerSpec, Variant};

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "ofl",
    version,
    about = "Online federated learning simulator and analysis tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured experiment and write metrics CSV plus metadata JSON.
    Run(RunArgs),
    /// Plan (s, b, p) for a communication budget.
    Optimize(OptimizeArgs),
    /// Regret-bound constant, learning rate and communication cost of a method.
    Bounds(BoundsArgs),
    /// Monte Carlo check of quantizer bias and variance.
    Quantcheck(QuantcheckArgs),
    /// Run several configs over a range of seeds and write a merged CSV.
    Compare(CompareArgs),
}

#[derive(Args)]
struct Shared {
    #[arg(long)]
    seed: Option<u64>,
    /// Horizon T (steps per client).
    #[arg(long = "T", short = 'T')]
    steps: Option<usize>,
    /// Number of clients K.
    #[arg(long = "K", short = 'K')]
    clients: Option<usize>,
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    shared: Shared,
    #[arg(long)]
    method: Option<Variant>,
    /// Communication budget for OFedIQ/OFedAvg plans.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    gamma: f64,
    /// Model dimension D.
    #[arg(long = "D", short = 'D')]
    dim: usize,
    #[arg(long, default_value_t = DEFAULT_S_MAX)]
    s_max: u32,
    /// Client count used for the predicted bound constants.
    #[arg(long = "K", short = 'K', default_value_t = 1000)]
    clients: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    method: Variant,
    #[arg(long = "D", short = 'D')]
    dim: usize,
    #[arg(long = "K", short = 'K')]
    clients: usize,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long = "L")]
    period: Option<u64>,
    /// Quantization levels s.
    #[arg(long)]
    s: Option<u32>,
    /// Quantization blocks b.
    #[arg(long)]
    b: Option<usize>,
    /// Use the budget plan for this cost ratio (OFedIQ).
    #[arg(long)]
    gamma: Option<f64>,
    /// ||w*|| for the learning-rate formula.
    #[arg(long)]
    w_norm: Option<f64>,
    /// sigma_diff^2 for the learning-rate formula.
    #[arg(long)]
    sigma_diff_sq: Option<f64>,
    /// Horizon for the learning-rate formula.
    #[arg(long = "T", short = 'T')]
    steps: Option<u64>,
    /// Smoothness constant for the stability cap.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct QuantcheckArgs {
    #[arg(long)]
    s: u32,
    #[arg(long)]
    b: usize,
    #[arg(long = "D", short = 'D')]
    dim: usize,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated input vector; a random normal vector when absent.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    vector: Option<Vec<f64>>,
    /// Allowed bias in standard errors.
    #[arg(long, default_value_t = 4.0)]
    z: f64,
    /// Allowed ratio of empirical MSE to the bound.
    #[arg(long, default_value_t = 1.05)]
    slack: f64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// One config per method; all must share dataset, model and seed.
    #[arg(long = "config", required = true)]
    configs: Vec<PathBuf>,
    #[command(flatten)]
    shared: Shared,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidParameter(_) | Error::DimensionMismatch { .. } => {
            EXIT_USAGE
        }
        _ => EXIT_RUNTIME,
    }
}

fn load(
    path: &Path,
    shared: &Shared,
    method: Option<Variant>,
    gamma: Option<f64>,
) -> ofl::Result<ConfigFile> {
    let mut file = ConfigFile::load(path)?;
    file.apply(&Overrides {
        seed: shared.seed,
        steps: shared.steps,
        clients: shared.clients,
        method,
        budget: gamma,
        out_dir: shared.out_dir.clone(),
    });
    Ok(file)
}

fn cmd_run(a: &RunArgs) -> ofl::Result<u8> {
    let file = load(&a.config, &a.shared, a.method, a.gamma)?;
    let config = file.resolve()?;
    let data = config.dataset.materialize(config.seed)?;
    let opts = RunOptions {
        threads: a.shared.threads,
        ..Default::default()
    };
    let out = run_on(&config, &data.streams, &opts)?;
    let (csv, meta) = write_run(
        &file.output.dir,
        &file.output.stem,
        &config,
        &out,
        data.table_meta.as_ref(),
    )?;
    let s = &out.summary;
    println!(
        "{}: T={} K={} final {:?}={:.6} cum_loss={:.6} bits={:.0}",
        s.label, s.steps, s.clients, s.metric_kind, s.final_metric, s.cum_loss, s.cum_bits
    );
    println!("wrote {}", csv.display());
    println!("wrote {}", meta.display());
    Ok(0)
}

fn cmd_optimize(a: &OptimizeArgs) -> ofl::Result<u8> {
    let plan = optimize_budget(a.gamma, a.dim, a.s_max)?;
    let alpha = plan.alpha_l1(a.clients)?;
    let alpha4 = plan.alpha_table1(a.clients)?;
    if a.json {
        let mut v = serde_json::to_value(&plan)?;
        v["alpha_l1"] = json!(alpha);
        v["alpha_table1"] = json!(alpha4);
        v["clients"] = json!(a.clients);
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        println!("gamma           {}", plan.gamma);
        println!("D               {}", plan.dim);
        println!("s               {}", plan.levels);
        println!("b               {}", plan.blocks);
        println!("rho (b/D)       {:.6}", plan.rho);
        println!("p               {:.6}", plan.p);
        println!("L               {}", plan.period);
        println!("objective       {:.6}", plan.objective);
        println!("achieved gamma  {:.6}", plan.achieved_gamma);
        println!("alpha (L=1)     {:.4}  (K={})", alpha, a.clients);
        println!("alpha (table)   {:.4}", alpha4);
        if plan.p_clamped {
            println!("note: p clamped to 1; the budget cannot be spent at L=1");
        }
        if plan.b_clamped {
            println!("note: floor(rho D) = 0, b raised to 1");
        }
    }
    Ok(0)
}

fn bound_params(a: &BoundsArgs) -> ofl::Result<BoundParams> {
    let need = |v: Option<f64>, what: &str| {
        v.ok_or_else(|| Error::Config(format!("--{what} is required for {}", a.method)))
    };
    let quant = match (a.s, a.b) {
        (Some(s), Some(b)) => Some((s, b)),
        (None, None) => None,
        _ => return Err(Error::Config("--s and --b go together".into())),
    };
    let params = match a.method {
        Variant::FedOgd => BoundParams::fed_ogd(a.dim, a.clients),
        Variant::OFedAvg => BoundParams::ofed_avg(need(a.p.or(a.gamma), "p")?, a.dim, a.clients),
        Variant::FedOmd => BoundParams::fed_omd(
            a.period
                .ok_or_else(|| Error::Config("--L is required for FedOMD".into()))?,
            a.dim,
            a.clients,
        ),
        Variant::OFedIq => match a.gamma {
            Some(g) => optimize_budget(g, a.dim, DEFAULT_S_MAX)?.bound_params(a.clients),
            None => BoundParams::ofed_iq(
                a.period.unwrap_or(1),
                need(a.p, "p")?,
                quant,
                a.dim,
                a.clients,
            ),
        },
    };
    params.validate()?;
    Ok(params)
}

fn cmd_bounds(a: &BoundsArgs) -> ofl::Result<u8> {
    let params = bound_params(a)?;
    let alpha = alpha_table1(&params)?;
    let alpha2 = match params.variant {
        Variant::OFedIq if params.period == 1 => Some(alpha_l1(
            params.p,
            params.quantizer.map(|(s, _)| s as f64),
            params.quantizer.map_or(1, |(_, b)| b),
            params.dim,
            params.clients,
        )?),
        _ => None,
    };
    let cost = comm_cost(&params)?;
    let eta = match (a.w_norm, a.sigma_diff_sq, a.steps) {
        (Some(w), Some(sd), Some(t)) => Some(optimal_eta(&params, w, sd, t, a.beta)?),
        (None, None, None) => None,
        _ => {
            return Err(Error::Config(
                "--w-norm, --sigma-diff-sq and --T are needed together for a learning rate".into(),
            ))
        }
    };
    if a.json {
        let v = json!({
            "params": params,
            "alpha_table1": alpha,
            "alpha_l1": alpha2,
            "comm_cost": cost,
            "eta": eta,
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        println!("method          {}", params.variant);
        println!("alpha           {alpha:.6}");
        if let Some(a2) = alpha2 {
            println!("alpha (L=1)     {a2:.6}");
        }
        println!("bits per step   {:.3}", cost.bits_per_step);
        println!("CCR             {:.4}%", cost.ccr);
        if let Some(e) = eta {
            println!("eta (formula)   {:.6e}", e.formula);
            if let Some(c) = e.cap {
                println!("eta (cap)       {c:.6e}");
            }
            println!("eta             {:.6e}", e.eta);
        }
    }
    Ok(0)
}

fn cmd_quantcheck(a: &QuantcheckArgs) -> ofl::Result<u8> {
    let spec = QuantizerSpec::new(a.s, a.b, a.dim)?;
    let u = match &a.vector {
        Some(v) => ParameterVector::new(v.clone())?,
        None => probe_vector(a.dim, a.seed, 0)?,
    };
    let stats = match a.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(|| empirical_stats(&spec, &u, a.trials, a.seed, a.z))?,
        None => empirical_stats(&spec, &u, a.trials, a.seed, a.z)?,
    };
    let ok = stats.bias_ok() && stats.mse_ok(a.slack);
    if a.json {
        let mut v = serde_json::to_value(&stats)?;
        v["pass"] = json!(ok);
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        println!("s={} b={} D={} trials={}", a.s, a.b, a.dim, a.trials);
        println!("max |bias|/SE   {:.3} (limit {})", stats.max_z, a.z);
        println!("biased coords   {}", stats.biased_coordinates);
        println!("MSE             {:.6e}", stats.mse);
        println!("bound           {:.6e} (x{})", stats.mse_bound, a.slack);
        println!("{}", if ok { "PASS" } else { "FAIL" });
    }
    Ok(if ok { 0 } else { EXIT_VIOLATION })
}

fn cmd_compare(a: &CompareArgs) -> ofl::Result<u8> {
    let files = a
        .configs
        .iter()
        .map(|p| load(p, &a.shared, None, None))
        .collect::<ofl::Result<Vec<_>>>()?;
    let configs = files
        .iter()
        .map(ConfigFile::resolve)
        .collect::<ofl::Result<Vec<_>>>()?;
    let opts = RunOptions {
        threads: a.shared.threads,
        ..Default::default()
    };
    let cmp = compare(&configs, a.replicates, &opts)?;
    let dir = &files[0].output.dir;
    std::fs::create_dir_all(dir)?;
    let path = dir.join("comparison.csv");
    write_comparison_csv(BufWriter::new(File::create(&path)?), &cmp)?;
    for m in &cmp.methods {
        println!(
            "{:<32} CCR {:>8.3}%  final metric {:.6}",
            m.label, m.ccr, m.mean_final_metric
        );
    }
    println!("wrote {}", path.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Quantcheck(a) => cmd_quantcheck(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
