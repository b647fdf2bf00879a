use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use qrm_core::experiment::{reference_figures, Experiment, ExperimentConfig, GridPreset};
use qrm_core::io::{self, TraceMeta};
use qrm_core::qrm::{IterationHistory, QrmOutcome};
use qrm_core::{CauchyData, Error, ErrorReport, TestId};

const EXIT_CONFIG: u8 = 2;
const EXIT_MISSING: u8 = 3;
const EXIT_SOLVER: u8 = 4;

#[derive(Parser)]
#[command(name = "qrm", version, about = "Initial-source recovery for a nonlinear wave equation from lateral Cauchy data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward solve and write noisy and clean boundary traces.
    Simulate(Overrides),
    /// Reconstruct the source from traces written by `simulate`.
    Invert {
        #[command(flatten)]
        overrides: Overrides,
        /// Directory holding the traces (defaults to the output directory).
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Simulate then invert.
    Run(Overrides),
    /// Run one benchmark at desk scale and print it next to the published figures.
    Reproduce {
        #[arg(value_name = "TEST", value_parser = clap::value_parser!(u8).range(1..=4))]
        benchmark: u8,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Quick consistency checks on small problems.
    Selftest,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// TOML file with experiment keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    test: Option<u8>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_parser = parse_grid)]
    grid: Option<GridPreset>,
    /// Weight pole as `X,Y`.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    x0: Option<[f64; 2]>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_grid(s: &str) -> Result<GridPreset, String> {
    match s {
        "desk" => Ok(GridPreset::Desk),
        "paper" => Ok(GridPreset::Paper),
        _ => Err(format!("expected desk or paper, got {s:?}")),
    }
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected X,Y, got {s:?}"));
    }
    let x = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let y = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok([x, y])
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: format!("configuration error: {e}"),
        }
    }

    fn from_core(e: Error) -> Self {
        let code = match &e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
            Error::Io(_) => EXIT_MISSING,
            Error::NotConverged { .. } | Error::Singular | Error::NonFinite(_) | Error::Instability { .. } => {
                EXIT_SOLVER
            }
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

impl Overrides {
    fn resolve(&self, base: ExperimentConfig) -> CliResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Failure {
                    code: EXIT_MISSING,
                    message: format!("cannot read config {}: {e}", path.display()),
                })?;
                toml::from_str::<ExperimentConfig>(&text).map_err(Failure::config)?
            }
            None => base,
        };
        if let Some(v) = self.test {
            c.test = v;
        }
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if let Some(v) = self.eta {
            c.eta = v;
        }
        if let Some(v) = self.eps {
            c.epsilon = v;
        }
        if let Some(v) = self.delta {
            c.delta = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.iterations {
            c.iterations = v;
        }
        if let Some(v) = self.grid {
            c.grid = v;
        }
        if let Some(v) = self.x0 {
            c.x0 = v;
        }
        if let Some(v) = &self.out {
            c.out = Some(v.display().to_string());
        }
        Ok(c)
    }
}

fn out_dir(config: &ExperimentConfig) -> PathBuf {
    PathBuf::from(config.out.clone().unwrap_or_else(|| "qrm-out".into()))
}

fn prepare(config: &ExperimentConfig) -> CliResult<Experiment> {
    let e = config.prepare().map_err(Failure::config)?;
    if !(0.0..1.0).contains(&config.delta) {
        return Err(Failure::config(format!("noise level must lie in [0, 1), got {}", config.delta)));
    }
    Ok(e)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    versions: Versions,
    config: &'a ExperimentConfig,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Versions {
    qrm: &'static str,
    format: u32,
}

/// Records the config hash, seed and versions plus the files in `dir`.
fn write_manifest(dir: &Path, command: &str, config: &ExperimentConfig) -> CliResult<()> {
    let canonical = serde_json::to_vec(config).map_err(Failure::config)?;
    let mut files: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Failure::from_core(e.into()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    files.sort();
    let manifest = Manifest {
        command,
        config_hash: hex(&Sha256::digest(&canonical)),
        seed: config.seed,
        versions: Versions {
            qrm: env!("CARGO_PKG_VERSION"),
            format: 1,
        },
        config,
        files,
    };
    io::write_json(&manifest, &dir.join("manifest.json")).map_err(Failure::from_core)
}

fn write_traces(dir: &Path, stem: &str, data: &CauchyData) -> qrm_core::Result<()> {
    io::write_cauchy_csv(data, &dir.join(format!("{stem}.csv")))?;
    io::write_cauchy_binary(data, &dir.join(format!("{stem}.bin")))?;
    io::write_json(&TraceMeta::of(data), &dir.join(format!("{stem}.json")))
}

fn read_traces(dir: &Path, stem: &str) -> CliResult<CauchyData> {
    let meta_path = dir.join(format!("{stem}.json"));
    let bin = dir.join(format!("{stem}.bin"));
    for p in [&meta_path, &bin] {
        if !p.exists() {
            return Err(Failure {
                code: EXIT_MISSING,
                message: format!("missing trace file {}", p.display()),
            });
        }
    }
    let meta: TraceMeta = io::read_json(&meta_path).map_err(|e| Failure {
        code: EXIT_MISSING,
        message: e.to_string(),
    })?;
    io::read_cauchy_binary(&bin, &meta).map_err(|e| Failure {
        code: EXIT_MISSING,
        message: e.to_string(),
    })
}

fn simulate(config: &ExperimentConfig, experiment: &Experiment) -> CliResult<CauchyData> {
    let dir = out_dir(config);
    fs::create_dir_all(&dir).map_err(|e| Failure::from_core(e.into()))?;
    let sim = experiment.simulate().map_err(Failure::from_core)?;
    write_traces(&dir, "traces", &sim.noisy).map_err(Failure::from_core)?;
    write_traces(&dir, "traces_clean", &sim.clean).map_err(Failure::from_core)?;
    io::write_field_csv(&sim.p_star, &dir, "p_true").map_err(Failure::from_core)?;
    eprintln!(
        "traces on {}x{}x{} written to {} (delta {}, seed {})",
        sim.noisy.grid.nx,
        sim.noisy.grid.ny,
        sim.noisy.grid.nt,
        dir.display(),
        experiment.delta,
        experiment.seed
    );
    Ok(sim.noisy)
}

#[derive(Serialize)]
struct Summary {
    test: u8,
    lambda: f64,
    delta: f64,
    iterations: usize,
    report: Option<ErrorReport>,
    failure: Option<String>,
}

fn write_reconstruction(dir: &Path, outcome: &QrmOutcome) -> qrm_core::Result<()> {
    io::write_field_csv(&outcome.p, dir, "p_comp")?;
    let range = io::write_pgm(&outcome.p, &dir.join("p_comp.pgm"))?;
    io::write_json(&range, &dir.join("p_comp.pgm.json"))?;
    io::write_history_jsonl(&outcome.history, &dir.join("history.jsonl"))
}

fn invert(config: &ExperimentConfig, experiment: &Experiment, data: &CauchyData) -> CliResult<ErrorReport> {
    let dir = out_dir(config);
    fs::create_dir_all(&dir).map_err(|e| Failure::from_core(e.into()))?;
    if data.grid != experiment.inner {
        return Err(Failure::config("traces were made on a different grid than the config describes"));
    }
    let p_star = experiment.source.sample(&experiment.inner);
    let summary = |report: Option<ErrorReport>, failure: Option<String>| Summary {
        test: config.test,
        lambda: config.lambda,
        delta: data.noise_level,
        iterations: config.iterations,
        report,
        failure,
    };
    match experiment.invert(data, Some(&p_star)) {
        Ok(outcome) => {
            write_reconstruction(&dir, &outcome).map_err(Failure::from_core)?;
            let report = ErrorReport::new(&outcome.p, &p_star, &outcome.history.consecutive_differences())
                .map_err(Failure::from_core)?;
            io::write_json(&summary(Some(report.clone()), None), &dir.join("report.json"))
                .map_err(Failure::from_core)?;
            Ok(report)
        }
        Err(failure) => {
            // keep what was computed before the failure
            let _ = write_partial(&dir, &failure.history);
            let _ = io::write_json(&summary(None, Some(failure.to_string())), &dir.join("report.json"));
            Err(Failure {
                code: EXIT_SOLVER,
                message: format!("inversion failed: {failure}"),
            })
        }
    }
}

fn write_partial(dir: &Path, history: &IterationHistory) -> qrm_core::Result<()> {
    io::write_history_jsonl(history, &dir.join("history.jsonl"))?;
    if let Some(p) = history.last().and_then(|r| r.p.as_ref()) {
        io::write_field_csv(p, dir, "p_partial")?;
    }
    Ok(())
}

fn print_report(report: &ErrorReport) {
    println!("rel_l2      {:.4}", report.rel_l2);
    println!("peak        {:.4} (true {:.4}, error {:.4})", report.peak_computed, report.peak_true, report.peak_error);
    let d: Vec<String> = report.consecutive_differences.iter().map(|d| format!("{d:.3e}")).collect();
    println!("differences {}", d.join(" "));
    match report.contraction_rate {
        Some(t) => println!("rate        {t:.4}"),
        None => println!("rate        undefined"),
    }
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{:.2}%", 100.0 * v))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(o) => {
            let config = o.resolve(ExperimentConfig::default())?;
            let e = prepare(&config)?;
            simulate(&config, &e)?;
            write_manifest(&out_dir(&config), "simulate", &config)
        }
        Command::Invert { overrides, traces } => {
            let config = overrides.resolve(ExperimentConfig::default())?;
            let e = prepare(&config)?;
            let dir = traces.unwrap_or_else(|| out_dir(&config));
            let data = read_traces(&dir, "traces")?;
            let result = invert(&config, &e, &data);
            write_manifest(&out_dir(&config), "invert", &config)?;
            print_report(&result?);
            Ok(())
        }
        Command::Run(o) => {
            let config = o.resolve(ExperimentConfig::default())?;
            let e = prepare(&config)?;
            let data = simulate(&config, &e)?;
            let result = invert(&config, &e, &data);
            write_manifest(&out_dir(&config), "run", &config)?;
            print_report(&result?);
            Ok(())
        }
        Command::Reproduce { benchmark: test, overrides } => {
            let id = TestId::from_number(test).expect("range checked by the parser");
            let mut config = overrides.resolve(ExperimentConfig::desk(id))?;
            config.test = test;
            if config.out.is_none() {
                config.out = Some(format!("qrm-out/test{test}"));
            }
            let e = prepare(&config)?;
            let data = simulate(&config, &e)?;
            let result = invert(&config, &e, &data);
            write_manifest(&out_dir(&config), "reproduce", &config)?;
            let report = result?;
            let fig = reference_figures(id);
            println!("test | quantity | published | obtained");
            println!("{test} | rel_l2 | {} | {}", pct(fig.rel_l2), pct(Some(report.rel_l2)));
            if let Some(peak) = fig.peak {
                println!(
                    "{test} | peak | {peak} ({}) | {:.3} ({})",
                    pct(fig.peak_error),
                    report.peak_computed,
                    pct(Some(report.peak_error))
                );
            }
            Ok(())
        }
        Command::Selftest => selftest(),
    }
}

fn selftest() -> CliResult<()> {
    use qrm_core::sparse::{dense_oracle_solve, solve_least_squares, CsrBuilder, LsqOptions};
    let mut ok = true;
    let mut line = |name: &str, pass: bool, detail: String| {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        ok &= pass;
    };

    // least squares against the dense oracle on a fixed tridiagonal system
    let n = 30;
    let mut b = CsrBuilder::new(n);
    for i in 0..n + 5 {
        let c = i % n;
        let mut row = vec![(c, 2.0 + (i as f64).sin())];
        if c + 1 < n {
            row.push((c + 1, -1.0));
        }
        b.push_row(&row).map_err(Failure::from_core)?;
    }
    let a = b.build();
    let rhs: Vec<f64> = (0..a.n_rows).map(|i| (i as f64 * 0.7).cos()).collect();
    let (x, _) = solve_least_squares(&a, &rhs, None, &LsqOptions::default()).map_err(Failure::from_core)?;
    let oracle = dense_oracle_solve(&a, &rhs).map_err(Failure::from_core)?;
    let err = x.iter().zip(&oracle).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
        / oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    line("least squares vs dense oracle", err < 1e-8, format!("relative difference {err:.2e}"));

    // a small noiseless inversion of test 1
    let config = ExperimentConfig {
        grid: GridPreset::Custom,
        dx: 0.2,
        delta: 0.0,
        iterations: 2,
        ..ExperimentConfig::default()
    };
    let e = prepare(&config)?;
    match qrm_core::run_pipeline(&e) {
        Ok(r) => line(
            "coarse inversion runs",
            r.report.rel_l2.is_finite(),
            format!("rel_l2 {:.3} on {}x{}x{}", r.report.rel_l2, e.inner.nx, e.inner.ny, e.inner.nt),
        ),
        Err(f) => line("coarse inversion runs", false, f.to_string()),
    }
    if ok {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_SOLVER,
            message: "selftest failed".into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("qrm: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
