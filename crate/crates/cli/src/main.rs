use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use specrecon::harness::{self, Mode, Scenario};
use specrecon::spectra::{export_csv, write_archive};
use specrecon::Error;

const CORETYPE: &str = "OPENBLAS_CORETYPE";

#[derive(Parser)]
#[command(name = "specrecon", version, about = "Reconstruct a manifold and a potential from interior spectral data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (key = value lines).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Override the scenario mode.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the perturbation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward problem and write the interior data.
    Forward,
    /// Run the reconstruction stages and write their artifacts.
    Reconstruct,
    /// Reconstruct and compare against the forward oracle.
    Evaluate,
    /// Evaluate over a grid of eps, delta and metric radius scales.
    Scan(ScanArgs),
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.3,0.2")]
    eps: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    delta: Vec<f64>,
    /// Multiples of eps^(1/8) used as the local-edge radius.
    #[arg(long = "radius-scale", value_delimiter = ',', default_value = "1")]
    radius_scale: Vec<f64>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn scenario(common: &Common) -> specrecon::Result<Scenario> {
    let mut s = match &common.scenario {
        Some(path) => Scenario::from_file(path)?,
        None => Scenario::default(),
    };
    if let Some(m) = common.mode {
        s.mode = m;
    }
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    if let Some(out) = &common.out {
        s.out = Some(out.clone());
    }
    Ok(s)
}

fn out_dir(s: &Scenario) -> PathBuf {
    s.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn forward(s: &Scenario) -> specrecon::Result<()> {
    let dir = out_dir(s);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    harness::write_scenario(s, &dir)?;
    let fwd = harness::run_forward(s)?;
    let data = fwd.interior_data(s)?;
    write_archive(&data, &dir.join("data.bin"))?;
    export_csv(&data, &dir.join("spectrum.csv"))?;
    info!("forward data written to {}", dir.display());
    Ok(())
}

fn run(s: &Scenario, evaluate: bool) -> specrecon::Result<()> {
    let dir = out_dir(s);
    let r = harness::run_pipeline(s, Some(&dir))?;
    let eval = if evaluate {
        Some(harness::evaluate(&r).map_err(|e| e.at_stage(specrecon::Stage::Evaluate))?)
    } else {
        None
    };
    let report = harness::write_report(&r, eval.as_ref(), &dir)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn scan(base: &Scenario, args: &ScanArgs) -> specrecon::Result<()> {
    let dir = out_dir(base);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    let fwd = harness::run_forward(base)?;
    let mut rows = csv::Writer::from_path(dir.join("scan.csv")).map_err(|e| Error::Config(e.to_string()))?;
    rows.write_record([
        "eps", "delta", "radius", "status", "classes", "metric_max", "metric_mean", "q_far_max", "q_near_max", "c3",
        "covering_radius",
    ])
    .map_err(|e| Error::Config(e.to_string()))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for &eps in &args.eps {
        for &delta in &args.delta {
            for &scale in &args.radius_scale {
                let mut s = base.clone();
                s.eps = eps;
                s.delta = delta;
                s.metric_radius = Some(scale * eps.powf(0.125));
                let sub = dir.join(format!("eps{eps}_delta{delta}_r{scale}"));
                let result = harness::reconstruct(&s, &fwd, Some(&sub)).and_then(|r| {
                    let e = harness::evaluate(&r)?;
                    harness::write_report(&r, Some(&e), &sub)?;
                    Ok((r, e))
                });
                let mut row = vec![eps.to_string(), delta.to_string(), format!("{:.6}", s.metric_radius.unwrap())];
                match result {
                    Ok((r, e)) => row.extend([
                        "ok".into(),
                        r.catalog.class_count().to_string(),
                        format!("{:.6}", e.metric.max),
                        format!("{:.6}", e.metric.mean),
                        opt(e.q_far_max),
                        opt(e.q_near_max),
                        format!("{:.4}", e.c3(eps)),
                        format!("{:.6}", e.covering_radius),
                    ]),
                    Err(err) => {
                        error!("eps {eps}, delta {delta}, scale {scale}: {err}");
                        row.push(format!("failed: {err}"));
                        row.extend(std::iter::repeat_n(String::new(), 7));
                    }
                }
                rows.write_record(&row).map_err(|e| Error::Config(e.to_string()))?;
            }
        }
    }
    rows.flush().map_err(|e| Error::Config(e.to_string()))?;
    Ok(())
}

/// Restarts the process with a known-good OpenBLAS kernel selection.
fn reexec_with_coretype() -> Option<ExitCode> {
    if std::env::var_os(CORETYPE).is_some() {
        return None;
    }
    let exe = std::env::current_exe().ok()?;
    let status = std::process::Command::new(exe)
        .args(std::env::args_os().skip(1))
        .env(CORETYPE, "Haswell")
        .status()
        .ok()?;
    Some(ExitCode::from(status.code().unwrap_or(2).clamp(0, 255) as u8))
}

fn exit_code(e: &Error) -> ExitCode {
    if e.is_config() {
        ExitCode::from(3)
    } else {
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    if let Some(code) = reexec_with_coretype() {
        return code;
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    let result = scenario(&cli.common).and_then(|s| match &cli.command {
        Command::Forward => forward(&s),
        Command::Reconstruct => run(&s, false),
        Command::Evaluate => run(&s, true),
        Command::Scan(args) => scan(&s, args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.stage() {
                Some(stage) => error!("stage {stage} failed: {e}"),
                None => error!("{e}"),
            }
            exit_code(&e)
        }
    }
}
