//! spclab: batch front end for spin-phonon coupling analysis.

mod commands;
mod manifest;
mod output;
mod synth_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use manifest::{Loaded, ValidationError};
use output::{config_hash, exit_code, unix_now, Output, RunRecord};
use spclab::relax::Method;
use spclab::synth::RNG_ALGORITHM;

#[derive(Debug, Parser)]
#[command(
    name = "spclab",
    version,
    about = "Spin-phonon coupling analysis pipeline"
)]
struct Cli {
    /// Run manifest (TOML).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "spclab-out")]
    out: PathBuf,
    /// Seed for stochastic steps; overrides the manifest seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the spectrum correction pipeline and write corrected spectra.
    Correct,
    /// Bose-weighted spectra at the given temperatures.
    Boseweight {
        /// Temperatures, K (comma separated); the spectrum temperatures otherwise.
        #[arg(long, value_delimiter = ',')]
        temps: Vec<f64>,
    },
    /// Spin-lattice relaxation analyses.
    #[command(subcommand)]
    T1(T1Command),
    /// Energy-windowed spin-phonon coupling.
    #[command(subcommand)]
    Spc(SpcCommand),
    /// Lattice expansion from diffraction.
    #[command(subcommand)]
    Lattice(LatticeCommand),
    /// Phonon peak anharmonicity.
    #[command(subcommand)]
    Anharm(AnharmCommand),
    /// Eigenvector metrics.
    #[command(subcommand)]
    Modes(ModesCommand),
    /// Synthetic data with known ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Subcommand)]
enum T1Command {
    /// Fit recovery traces and write the resulting rates.
    FitTraces,
    /// Merge saturation and inversion rate points.
    Assemble,
    /// Fit the local-mode model.
    Localmode {
        /// Number of local modes; overrides fit.local_modes.n_modes.
        #[arg(long)]
        modes: Option<usize>,
    },
    /// Fit the Debye-Raman model.
    Debye,
    /// Local logarithmic slope of rate against temperature.
    Slope {
        /// Odd number of points per slope window; overrides fit.slope_window.
        #[arg(long)]
        window: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
enum SpcCommand {
    /// Fit windowed coupling coefficients.
    Fit {
        /// Window edges, cm⁻¹ (comma separated); overrides fit.edges_cm.
        #[arg(long, value_delimiter = ',')]
        edges: Vec<f64>,
    },
    /// Scan the two-window cutoff.
    Scan {
        /// `lo:hi:step` or a comma-separated list, cm⁻¹.
        #[arg(long, value_parser = parse_grid_arg)]
        grid: Option<GridArg>,
    },
    /// Spectral density of the fitted rate at given temperatures.
    Density {
        /// Temperatures, K (comma separated).
        #[arg(long, value_delimiter = ',')]
        temps: Vec<f64>,
    },
    /// Refit across representations and normalization cutoffs.
    Sweep {
        /// Normalization cutoffs, cm⁻¹ (comma separated); overrides fit.sweep_cutoffs_cm.
        #[arg(long, value_delimiter = ',')]
        cutoffs: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct GridArg(Vec<f64>);

fn parse_grid_arg(s: &str) -> std::result::Result<GridArg, String> {
    commands::parse_grid(s).map(GridArg)
}

#[derive(Debug, Subcommand)]
enum LatticeCommand {
    /// Track diffraction peaks and compute ΔV/V.
    Volume,
}

#[derive(Debug, Subcommand)]
enum AnharmCommand {
    /// Track phonon peaks through temperature.
    Peaks,
    /// Grüneisen parameters from peak shifts and lattice expansion.
    Gruneisen,
}

#[derive(Debug, Subcommand)]
enum ModesCommand {
    /// Thermal RMS displacement per atom.
    Rmsd {
        /// Highest mode energy included, cm⁻¹.
        #[arg(long, default_value_t = 600.0)]
        emax: f64,
        /// Temperature, K.
        #[arg(long, default_value_t = 0.0)]
        temp: f64,
    },
    /// Metal-ligand stretch character of each mode.
    Stretch,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Generator {
    Spectra,
    Rates,
    Trace,
    Dataset,
}

#[derive(Debug, Args)]
struct SynthArgs {
    generator: Generator,
    /// Spectrum generator parameters (TOML); the two-band preset otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Relative noise: log-sigma for rates, absolute signal sigma for traces.
    #[arg(long)]
    noise: Option<f64>,
    /// Window edges for synthetic rates, cm⁻¹ (comma separated).
    #[arg(long, value_delimiter = ',')]
    edges: Vec<f64>,
    /// Window coefficients for synthetic rates, µs⁻¹ (comma separated).
    #[arg(long, value_delimiter = ',')]
    lambdas: Vec<f64>,
    /// Lowest rate temperature, K.
    #[arg(long, default_value_t = 10.0)]
    t_min: f64,
    /// Highest rate temperature, K.
    #[arg(long, default_value_t = 300.0)]
    t_max: f64,
    /// Number of rate temperatures.
    #[arg(long, default_value_t = 20)]
    n_temps: usize,
    /// Direct-process coefficient, µs⁻¹ K⁻¹.
    #[arg(long)]
    direct: Option<f64>,
    /// Relaxation time of the synthetic trace, µs.
    #[arg(long, default_value_t = 50.0)]
    t1_us: f64,
    /// Stretching exponent of the synthetic trace.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Recovery method of the synthetic trace: inversion or saturation.
    #[arg(long, default_value = "inversion")]
    method: String,
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::Correct => "correct".into(),
            Command::Boseweight { .. } => "boseweight".into(),
            Command::T1(c) => format!("t1 {}", variant(c)),
            Command::Spc(c) => format!("spc {}", variant(c)),
            Command::Lattice(c) => format!("lattice {}", variant(c)),
            Command::Anharm(c) => format!("anharm {}", variant(c)),
            Command::Modes(c) => format!("modes {}", variant(c)),
            Command::Synth(a) => format!("synth {}", variant(&a.generator)),
        }
    }
}

fn variant(v: &impl std::fmt::Debug) -> String {
    let s = format!("{v:?}");
    let head = s.split([' ', '(', '{']).next().unwrap_or("").to_string();
    let mut out = String::new();
    for (i, c) in head.chars().enumerate() {
        if c.is_ascii_uppercase() && i > 0 {
            out.push('-');
        }
        out.push(c.to_ascii_lowercase());
    }
    out
}

/// Command-line arguments that define the computation: everything except
/// the output directory and the manifest path (hashed by content).
fn defining_arguments() -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in std::env::args().skip(1) {
        if skip {
            skip = false;
            continue;
        }
        if a == "--out" || a == "--manifest" {
            skip = true;
            continue;
        }
        if a.starts_with("--out=") || a.starts_with("--manifest=") {
            continue;
        }
        out.push(a);
    }
    out
}

fn threads() -> Result<usize> {
    match std::env::var("SPCLAB_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| ValidationError {
                field: "SPCLAB_THREADS".into(),
                message: format!("`{v}` is not a positive integer"),
            })?;
            if n == 0 {
                return Err(ValidationError {
                    field: "SPCLAB_THREADS".into(),
                    message: "must be at least 1".into(),
                }
                .into());
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| anyhow!("configuring thread pool: {e}"))?;
            Ok(n)
        }
        Err(_) => Ok(rayon::current_num_threads()),
    }
}

fn require(loaded: &Option<Loaded>) -> Result<&Loaded> {
    loaded.as_ref().ok_or_else(|| {
        ValidationError {
            field: "--manifest".into(),
            message: "this command needs a manifest".into(),
        }
        .into()
    })
}

fn dispatch(cli: &Cli, loaded: &Option<Loaded>, seed: u64, out: &mut Output) -> Result<()> {
    use commands as c;
    match &cli.command {
        Command::Correct => c::correct(require(loaded)?, out),
        Command::Boseweight { temps } => c::boseweight(require(loaded)?, temps, out),
        Command::T1(t) => {
            let l = require(loaded)?;
            match t {
                T1Command::FitTraces => c::fit_traces(l, out),
                T1Command::Assemble => c::assemble(l, out),
                T1Command::Localmode { modes } => c::localmode(l, *modes, out),
                T1Command::Debye => c::debye(l, out),
                T1Command::Slope { window } => c::slope(l, *window, out),
            }
        }
        Command::Spc(s) => {
            let l = require(loaded)?;
            match s {
                SpcCommand::Fit { edges } => c::spc_fit(l, edges, out),
                SpcCommand::Scan { grid } => {
                    c::spc_scan(l, grid.as_ref().map(|g| g.0.as_slice()), out)
                }
                SpcCommand::Density { temps } => c::spc_density(l, temps, out),
                SpcCommand::Sweep { cutoffs } => c::spc_sweep(l, cutoffs, out),
            }
        }
        Command::Lattice(LatticeCommand::Volume) => c::lattice_volume(require(loaded)?, out),
        Command::Anharm(a) => {
            let l = require(loaded)?;
            match a {
                AnharmCommand::Peaks => c::anharm_peaks(l, out),
                AnharmCommand::Gruneisen => c::anharm_gruneisen(l, out),
            }
        }
        Command::Modes(m) => {
            let l = require(loaded)?;
            match m {
                ModesCommand::Rmsd { emax, temp } => c::modes_rmsd(l, *emax, *temp, out),
                ModesCommand::Stretch => c::modes_stretch(l, out),
            }
        }
        Command::Synth(a) => synth(a, seed, out),
    }
}

fn synth(a: &SynthArgs, seed: u64, out: &mut Output) -> Result<()> {
    let spec = synth_cmd::load_spec(a.spec.as_deref(), seed)?;
    let mut rates = synth_cmd::RateArgs {
        t_min_k: a.t_min,
        t_max_k: a.t_max,
        n_temps: a.n_temps,
        direct_per_us_k: a.direct,
        ..Default::default()
    };
    if !a.edges.is_empty() {
        rates.edges_cm = a.edges.clone();
    }
    if !a.lambdas.is_empty() {
        rates.lambdas_per_us = a.lambdas.clone();
    }
    if let Some(n) = a.noise {
        rates.noise_rel = n;
    }
    match a.generator {
        Generator::Spectra => synth_cmd::spectra(&spec, out),
        Generator::Rates => synth_cmd::rates(&spec, &rates, out),
        Generator::Dataset => synth_cmd::dataset(&spec, &rates, out),
        Generator::Trace => {
            let method: Method = a
                .method
                .parse()
                .map_err(|e: spclab::Error| ValidationError {
                    field: "--method".into(),
                    message: e.to_string(),
                })?;
            synth_cmd::trace(a.t1_us, a.beta, method, a.noise.unwrap_or(0.0), seed, out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let arguments = defining_arguments();
    let command = cli.command.name();

    let mut out = match Output::create(&cli.out) {
        Ok(o) => o,
        Err(e) => {
            error!("{e:#}");
            return ExitCode::from(exit_code(&e) as u8);
        }
    };

    let mut loaded = None;
    let mut threads_used = 0;
    let result = (|| -> Result<()> {
        threads_used = threads()?;
        if let Some(p) = &cli.manifest {
            loaded = Some(manifest::load(p)?);
        }
        let seed = cli
            .seed
            .or(loaded.as_ref().map(|l| l.manifest.seed))
            .unwrap_or(0);
        dispatch(&cli, &loaded, seed, &mut out)
    })();

    let code = match &result {
        Ok(()) => 0,
        Err(e) => exit_code(e),
    };
    if let Err(e) = &result {
        eprintln!("error: {e:#}");
    }
    let seed = cli
        .seed
        .or(loaded.as_ref().map(|l| l.manifest.seed))
        .unwrap_or(0);
    let record = RunRecord {
        command,
        config_sha256: config_hash(loaded.as_ref().map(|l| l.bytes.as_slice()), &arguments),
        arguments,
        manifest: cli.manifest.as_ref().map(|p| p.display().to_string()),
        spclab_version: spclab::VERSION.to_string(),
        cli_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        threads: threads_used,
        status: if code == 0 { "ok" } else { "error" }.to_string(),
        exit_code: code,
        error: result.as_ref().err().map(|e| format!("{e:#}")),
        outputs: out.files().to_vec(),
        finished_unix_s: unix_now(),
    };
    if let Err(e) = out.json("run.json", &record) {
        eprintln!("error: {e:#}");
        return ExitCode::from(output::EXIT_IO as u8);
    }
    ExitCode::from(code as u8)
}
