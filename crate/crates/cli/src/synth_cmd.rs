//! `synth` generators: synthetic spectra, rates, recovery traces and a
//! complete two-band dataset with its own manifest and ground truth.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use spclab::relax::Method;
use spclab::spc::LambdaProfile;
use spclab::synth::{
    generate_rate_series, generate_recovery_trace, generate_spectrum_set, SynthSpec, RNG_ALGORITHM,
};
use spclab::SpectrumSet;

use crate::output::{temp_tag, Output};

/// Edges and coupling coefficients of the two-band dataset.
pub const DATASET_EDGES_CM: [f64; 3] = [0.0, 185.0, 600.0];
pub const DATASET_LAMBDAS_PER_US: [f64; 2] = [0.068, 127.0];

pub fn load_spec(path: Option<&Path>, seed: u64) -> Result<SynthSpec> {
    let mut spec = match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).map_err(|e| crate::manifest::ValidationError {
                field: "<synth spec>".into(),
                message: e.to_string().trim().to_string(),
            })?
        }
        None => SynthSpec::two_band(),
    };
    spec.seed = seed;
    Ok(spec)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn write_spectra(set: &SpectrumSet, out: &mut Output) -> Result<Vec<(f64, String)>> {
    set.spectra()
        .iter()
        .map(|s| {
            let file = format!("spectra/{}.csv", temp_tag(s.temperature_k));
            spclab::io::write_spectrum(&out.path(&file)?, s)?;
            Ok((s.temperature_k, file))
        })
        .collect()
}

#[derive(Serialize)]
struct SpectraReport {
    rng_algorithm: &'static str,
    spec: SynthSpec,
    files: Vec<String>,
}

pub fn spectra(spec: &SynthSpec, out: &mut Output) -> Result<()> {
    let set = generate_spectrum_set(spec)?;
    let files = write_spectra(&set, out)?;
    out.json(
        "synth_spectra.json",
        &SpectraReport {
            rng_algorithm: RNG_ALGORITHM,
            spec: spec.clone(),
            files: files.into_iter().map(|(_, f)| f).collect(),
        },
    )
}

pub struct RateArgs {
    pub edges_cm: Vec<f64>,
    pub lambdas_per_us: Vec<f64>,
    pub noise_rel: f64,
    pub t_min_k: f64,
    pub t_max_k: f64,
    pub n_temps: usize,
    pub direct_per_us_k: Option<f64>,
}

impl Default for RateArgs {
    fn default() -> Self {
        Self {
            edges_cm: DATASET_EDGES_CM.to_vec(),
            lambdas_per_us: DATASET_LAMBDAS_PER_US.to_vec(),
            noise_rel: 0.05,
            t_min_k: 10.0,
            t_max_k: 300.0,
            n_temps: 20,
            direct_per_us_k: None,
        }
    }
}

#[derive(Serialize)]
struct Truth {
    rng_algorithm: &'static str,
    seed: u64,
    window_edges_cm: Vec<f64>,
    lambdas_per_us: Vec<f64>,
    direct_per_us_k: Option<f64>,
    noise_rel: f64,
    temperatures_k: Vec<f64>,
}

fn rates_into(
    spec: &SynthSpec,
    set: &SpectrumSet,
    a: &RateArgs,
    out: &mut Output,
) -> Result<Truth> {
    if a.n_temps == 0 {
        return Err(crate::manifest::ValidationError {
            field: "--n-temps".into(),
            message: "must be at least 1".into(),
        }
        .into());
    }
    let profile = LambdaProfile::new(a.edges_cm.clone(), a.lambdas_per_us.clone(), None)?;
    let temps = linspace(a.t_min_k, a.t_max_k, a.n_temps);
    let series = generate_rate_series(
        &profile,
        set,
        &temps,
        a.noise_rel,
        spec.seed,
        a.direct_per_us_k,
    )?;
    spclab::io::write_rates(&out.path("rates.csv")?, &series)?;
    Ok(Truth {
        rng_algorithm: RNG_ALGORITHM,
        seed: spec.seed,
        window_edges_cm: a.edges_cm.clone(),
        lambdas_per_us: a.lambdas_per_us.clone(),
        direct_per_us_k: a.direct_per_us_k,
        noise_rel: a.noise_rel,
        temperatures_k: temps,
    })
}

pub fn rates(spec: &SynthSpec, a: &RateArgs, out: &mut Output) -> Result<()> {
    let set = generate_spectrum_set(spec)?;
    let truth = rates_into(spec, &set, a, out)?;
    out.json("synth_rates.json", &truth)
}

pub fn trace(
    t1_us: f64,
    beta: f64,
    method: Method,
    noise: f64,
    seed: u64,
    out: &mut Output,
) -> Result<()> {
    let tr = generate_recovery_trace(t1_us, beta, method, noise, seed)?;
    spclab::io::write_trace(&out.path("trace.csv")?, &tr)?;
    #[derive(Serialize)]
    struct Report {
        rng_algorithm: &'static str,
        seed: u64,
        t1_us: f64,
        beta: f64,
        method: Method,
        noise: f64,
        n_points: usize,
    }
    out.json(
        "synth_trace.json",
        &Report {
            rng_algorithm: RNG_ALGORITHM,
            seed,
            t1_us,
            beta,
            method,
            noise,
            n_points: tr.delays_us.len(),
        },
    )
}

/// Spectra, rates, a manifest referencing them and the ground truth.
pub fn dataset(spec: &SynthSpec, a: &RateArgs, out: &mut Output) -> Result<()> {
    let set = generate_spectrum_set(spec)?;
    let files = write_spectra(&set, out)?;
    let truth = rates_into(spec, &set, a, out)?;
    let fmt_list = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:?}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut m = String::new();
    writeln!(m, "schema_version = 1")?;
    writeln!(m, "label = \"two_band\"")?;
    writeln!(m, "seed = {}", spec.seed)?;
    for (t, f) in &files {
        writeln!(
            m,
            "\n[[spectra]]\npath = \"{f}\"\ntemperature_k = {t:?}\nstate = \"corrected\""
        )?;
    }
    writeln!(m, "\n[[rates]]\npath = \"rates.csv\"")?;
    writeln!(m, "\n[fit]\nedges_cm = [{}]", fmt_list(&a.edges_cm))?;
    writeln!(m, "temperature_floor_k = 10.0")?;
    writeln!(m, "include_direct = {}", a.direct_per_us_k.is_some())?;
    out.text("manifest.toml", &m)?;
    out.json("truth.json", &truth)
}
