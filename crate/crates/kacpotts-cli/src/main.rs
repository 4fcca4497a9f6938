//! Experiment runner: one subcommand per experiment kind, configured by a
//! TOML file (or a built-in desk-scale default) with flag overrides. Every
//! run writes CSV tables, a JSON mirror with metadata, optional binary
//! profile dumps, and a manifest listing each output with its digest.
//!
//! Exit codes: 0 success, 2 configuration or schema error, 3 infeasible
//! instance (state space, realization, or missing bad point), 4 internal
//! assertion failure (a diagnostic dump is written).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kacpotts::experiments::{
    self, ExperimentConfig, ExperimentKind, ExperimentOutput, ExperimentSection, FuzzySection,
    ModelSection, OutputSection, SamplerSection,
};
use kacpotts::io::write_profile_dump;
use kacpotts::torus::KacKernel;
use kacpotts::ExecMode;
use kacpotts::ModelError;

#[derive(Parser)]
#[command(name = "kacpotts", version, about = "Kac-Potts experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exactness of the level-set kernel factorization on enumerable grids
    Prop23Identity(CommonArgs),
    /// Limiting kernel gap along a beta grid
    ThresholdScan(CommonArgs),
    /// Finite-n MCMC kernels along the two sides of a bad point
    BadpointDemo(CommonArgs),
    /// Multistart minimization of the rate functional
    MinimizeRate(CommonArgs),
    /// Sampler total-variation and stationarity checks on tiny instances
    SamplerDiagnostics(CommonArgs),
    /// Magnetization onset locating the coupling convention
    ConventionProbe(CommonArgs),
    /// Two-color minimizer exploration under inhomogeneous dilution
    IsingExplore(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file, or a manifest.json from a previous run
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores); needs the parallel build
    #[arg(long)]
    threads: Option<usize>,
    /// Force exact boundary factors
    #[arg(long, conflicts_with = "mcmc")]
    exact: bool,
    /// Force MCMC boundary factors
    #[arg(long, conflicts_with = "exact")]
    mcmc: bool,
    /// Run single-threaded regardless of build features
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    experiment: String,
    config: ExperimentConfig,
    master_seed: u64,
    version: String,
    stages: Vec<Stage>,
    outputs: Vec<FileRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Stage {
    name: String,
    seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileRecord {
    file: String,
    bytes: u64,
    sha256: String,
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Prop23Identity(a) => (ExperimentKind::Prop23Identity, a),
        Command::ThresholdScan(a) => (ExperimentKind::ThresholdScan, a),
        Command::BadpointDemo(a) => (ExperimentKind::BadpointDemo, a),
        Command::MinimizeRate(a) => (ExperimentKind::MinimizeRate, a),
        Command::SamplerDiagnostics(a) => (ExperimentKind::SamplerDiagnostics, a),
        Command::ConventionProbe(a) => (ExperimentKind::ConventionProbe, a),
        Command::IsingExplore(a) => (ExperimentKind::IsingExplore, a),
    };
    let mut cfg = match load_config(kind, args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return 2;
        }
    };
    cfg.experiment.kind = kind;
    if let Some(seed) = args.seed {
        cfg.sampler.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    if args.exact {
        cfg.experiment.exact = true;
    }
    if args.mcmc {
        cfg.experiment.exact = false;
    }
    let mode = match setup_threads(args) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("thread setup error: {e}");
            return 2;
        }
    };

    let started = Instant::now();
    let outcome = std::panic::catch_unwind(|| experiments::run(&cfg, mode));
    let compute_seconds = started.elapsed().as_secs_f64();
    let output = match outcome {
        Err(panic) => {
            let message = panic_message(&panic);
            eprintln!("internal assertion failure: {message}");
            write_diagnostic(&cfg, &message);
            return 4;
        }
        Ok(Err(e)) => {
            eprintln!("run error: {e}");
            return exit_code_for(&e);
        }
        Ok(Ok(out)) => out,
    };

    match emit(&cfg, &output, compute_seconds) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("output error: {e}");
            1
        }
    }
}

fn exit_code_for(e: &ModelError) -> i32 {
    match e {
        ModelError::StateSpaceTooLarge { .. }
        | ModelError::Infeasible(_)
        | ModelError::NoBadPoint => 3,
        _ => 2,
    }
}

fn panic_message(panic: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        (*s).into()
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s.clone()
    } else {
        "opaque panic payload".into()
    }
}

fn write_diagnostic(cfg: &ExperimentConfig, message: &str) {
    let dir = Path::new(&cfg.output.dir);
    if fs::create_dir_all(dir).is_err() {
        return;
    }
    let body = format!(
        "internal assertion failure\n\nmessage: {message}\n\nresolved config:\n{}\n",
        toml::to_string_pretty(cfg).unwrap_or_else(|_| "<unserializable>".into())
    );
    let _ = fs::write(dir.join("diagnostic.txt"), body);
}

fn setup_threads(args: &CommonArgs) -> Result<ExecMode, String> {
    if args.sequential {
        return Ok(ExecMode::Sequential);
    }
    #[cfg(feature = "parallel")]
    {
        if let Some(t) = args.threads {
            if t > 0 {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global()
                    .map_err(|e| e.to_string())?;
            }
        }
        Ok(ExecMode::Parallel)
    }
    #[cfg(not(feature = "parallel"))]
    {
        if args.threads.is_some() {
            eprintln!("note: built without the parallel feature; --threads ignored");
        }
        Ok(ExecMode::Sequential)
    }
}

fn load_config(kind: ExperimentKind, path: Option<&Path>) -> Result<ExperimentConfig, String> {
    let Some(path) = path else {
        return Ok(default_config(kind));
    };
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if path.extension().is_some_and(|x| x == "json") {
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(manifest.config)
    } else {
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Desk-scale default instance per experiment kind, used when no config file
/// is given.
fn default_config(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        model: ModelSection {
            d: 1,
            n: Some(3),
            ns: None,
            q: 3,
            beta: Some(1.0),
            betas: None,
            kernel: KacKernel::Uniform,
        },
        fuzzy: Some(FuzzySection {
            partition: vec![2, 1],
        }),
        sampler: SamplerSection::default(),
        experiment: ExperimentSection {
            kind,
            m: 8,
            multistarts: None,
            exact: false,
            site: 0,
            onset_threshold: 0.4,
            dilution: None,
        },
        output: OutputSection::default(),
    };
    let bc3 = 4.0 * std::f64::consts::LN_2;
    match kind {
        ExperimentKind::Prop23Identity => {
            cfg.model.beta = None;
            cfg.model.betas = Some(vec![0.5, 1.0, 2.0]);
        }
        ExperimentKind::ThresholdScan => {
            cfg.model.q = 4;
            cfg.fuzzy = Some(FuzzySection {
                partition: vec![3, 1],
            });
            cfg.model.beta = None;
            cfg.model.betas = Some((0..15).map(|i| 2.0 + 0.25 * i as f64).collect());
        }
        ExperimentKind::BadpointDemo => {
            cfg.model.q = 4;
            cfg.fuzzy = Some(FuzzySection {
                partition: vec![3, 1],
            });
            cfg.model.n = Some(64);
            cfg.model.beta = Some(2.0 * bc3);
        }
        ExperimentKind::MinimizeRate => {
            cfg.model.n = Some(32);
            cfg.fuzzy = None;
        }
        ExperimentKind::SamplerDiagnostics => {
            cfg.fuzzy = None;
            cfg.sampler.sweeps = 1_000_000;
            cfg.sampler.burn_in = 10_000;
        }
        ExperimentKind::ConventionProbe => {
            cfg.fuzzy = None;
            cfg.model.n = Some(256);
            cfg.model.beta = None;
        }
        ExperimentKind::IsingExplore => {
            cfg.model.q = 2;
            cfg.fuzzy = None;
            cfg.model.n = Some(16);
            cfg.model.beta = Some(1.5);
            cfg.model.kernel = KacKernel::Box { radius: 0.125 };
            cfg.experiment.dilution =
                Some((0..16).map(|c| if c < 8 { 1.0 } else { 0.5 }).collect());
        }
    }
    cfg
}

fn emit(
    cfg: &ExperimentConfig,
    output: &ExperimentOutput,
    compute_seconds: f64,
) -> anyhow::Result<PathBuf> {
    let dir = PathBuf::from(&cfg.output.dir);
    fs::create_dir_all(&dir)?;
    let emit_started = Instant::now();
    let mut files: Vec<String> = Vec::new();

    let table = output.table_name();
    let csv_path = dir.join(format!("{table}.csv"));
    write_rows_csv(&csv_path, output)?;
    files.push(format!("{table}.csv"));

    let json_path = dir.join(format!("{table}.json"));
    let mut json = serde_json::to_vec_pretty(output)?;
    json.push(b'\n');
    fs::write(&json_path, json)?;
    files.push(format!("{table}.json"));

    if cfg.output.profile_dumps {
        match output {
            ExperimentOutput::MinimizeRate {
                best_profile: Some(profile),
                ..
            } => {
                write_profile_dump(&dir.join("best_profile.bin"), profile)?;
                files.push("best_profile.bin".into());
            }
            ExperimentOutput::IsingExplore {
                cluster_profiles, ..
            } => {
                for (k, profile) in cluster_profiles.iter().enumerate() {
                    let name = format!("cluster_{k}.bin");
                    write_profile_dump(&dir.join(&name), profile)?;
                    files.push(name);
                }
            }
            _ => {}
        }
    }

    let mut outputs = Vec::with_capacity(files.len());
    for name in &files {
        let bytes = fs::read(dir.join(name))?;
        let digest = Sha256::digest(&bytes);
        outputs.push(FileRecord {
            file: name.clone(),
            bytes: bytes.len() as u64,
            sha256: format!("{digest:x}"),
        });
    }
    let manifest = RunManifest {
        experiment: table.into(),
        config: cfg.clone(),
        master_seed: cfg.sampler.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        stages: vec![
            Stage {
                name: "compute".into(),
                seconds: compute_seconds,
            },
            Stage {
                name: "emit".into(),
                seconds: emit_started.elapsed().as_secs_f64(),
            },
        ],
        outputs,
    };
    let mut body = serde_json::to_vec_pretty(&manifest)?;
    body.push(b'\n');
    fs::write(dir.join("manifest.json"), body)?;
    Ok(dir)
}

fn write_rows_csv(path: &Path, output: &ExperimentOutput) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_path(path)?;
    match output {
        ExperimentOutput::Prop23Identity { rows } => {
            for row in rows {
                w.serialize(row)?;
            }
        }
        ExperimentOutput::ThresholdScan { rows } => {
            for row in rows {
                w.serialize(row)?;
            }
        }
        ExperimentOutput::BadpointDemo { rows, .. } => {
            for row in rows {
                w.serialize(row)?;
            }
        }
        ExperimentOutput::MinimizeRate { rows, .. } => {
            for row in rows {
                w.serialize(row)?;
            }
        }
        ExperimentOutput::SamplerDiagnostics { rows } => {
            for row in rows {
                w.serialize(row)?;
            }
        }
        ExperimentOutput::ConventionProbe(report) => {
            for row in &report.rows {
                w.serialize(row)?;
            }
        }
        ExperimentOutput::IsingExplore { rows, .. } => {
            for row in rows {
                w.serialize(row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
