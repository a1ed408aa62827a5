//! Subcommand implementations. Each writes its result JSON and plot-ready
//! CSVs into the output directory.

use anyhow::{bail, Result};
use log::{info, warn};
use serde::Serialize;

use spclab::anharm::{fit_phonon_peaks, gruneisen, GruneisenResult, PhononPeakTrack};
use spclab::ins;
use spclab::lattice::{track_peaks, volume_expansion, PeakTrack, VolumeTrack};
use spclab::modes::{
    rmsd_per_atom, stretch_character, summarize_rmsd, AtomGroup, RmsdResult, StretchScore,
};
use spclab::relax::{
    assemble_rate_series, fit_debye_raman, fit_local_modes, fit_recovery_trace, log_slope,
    DebyeFit, LocalModeFit, Method, Orientation, RateSeries, RecoveryFit,
};
use spclab::spc::{
    cutoff_scan, fit_lambda_windows, robustness_sweep, spectral_density, window_contributions,
    CutoffScan, SpcFit, SweepCell,
};
use spclab::thermal::bose_weight;
use spclab::{integrate, SpectrumSet};

use crate::manifest::{Loaded, SpectrumState};
use crate::output::{slug, temp_tag, Output};

fn track_name(label: &Option<String>, index: usize) -> String {
    label.clone().unwrap_or_else(|| format!("peak{index}"))
}

fn model_rows(
    series: &RateSeries,
    floor_k: f64,
    model: impl Fn(f64) -> Result<f64>,
) -> Result<Vec<Vec<f64>>> {
    series
        .points()
        .iter()
        .filter(|p| p.temperature_k >= floor_k)
        .map(|p| {
            Ok(vec![
                p.temperature_k,
                p.rate_per_us,
                model(p.temperature_k)?,
            ])
        })
        .collect()
}

// ---------------------------------------------------------------------------
// spectra

#[derive(Serialize)]
struct CorrectedEntry {
    representation: String,
    temperature_k: f64,
    input_state: SpectrumState,
    file: String,
    integral_to_cutoff: f64,
    non_negative: bool,
}

#[derive(Serialize)]
struct CorrectReport {
    label: String,
    correction: ins::CorrectionConfig,
    spectra: Vec<CorrectedEntry>,
}

pub fn correct(l: &Loaded, out: &mut Output) -> Result<()> {
    let m = &l.manifest;
    if m.spectra.is_empty() {
        bail!(crate::manifest::ValidationError {
            field: "spectra".into(),
            message: "no spectra listed".into(),
        });
    }
    let cutoff = m.correction.normalization_cutoff_cm;
    let mut entries = Vec::new();
    for rep in l.representations() {
        let set = l.spectrum_set(&rep)?;
        for s in set.spectra() {
            let state = m
                .spectra
                .iter()
                .find(|e| e.representation == rep && e.temperature_k == s.temperature_k)
                .map(|e| e.state)
                .unwrap_or_default();
            let file = format!("corrected/{}/{}.csv", slug(&rep), temp_tag(s.temperature_k));
            spclab::io::write_spectrum(&out.path(&file)?, s)?;
            entries.push(CorrectedEntry {
                representation: rep.clone(),
                temperature_k: s.temperature_k,
                input_state: state,
                file,
                integral_to_cutoff: s.integral_between(s.grid.min(), cutoff),
                non_negative: s.is_non_negative(),
            });
        }
    }
    out.json(
        "correct.json",
        &CorrectReport {
            label: m.label.clone(),
            correction: m.correction.clone(),
            spectra: entries,
        },
    )
}

#[derive(Serialize)]
struct BoseEntry {
    temperature_k: f64,
    file: String,
    weighted_integral: f64,
}

pub fn boseweight(l: &Loaded, temps: &[f64], out: &mut Output) -> Result<()> {
    let set = l.default_spectrum_set()?;
    let temps = if temps.is_empty() {
        set.temperatures()
    } else {
        temps.to_vec()
    };
    let mut entries = Vec::new();
    for t in temps {
        let spec = ins::interpolate_temperature(&set, t)?;
        let w = bose_weight(&spec);
        let file = format!("boseweight/{}.csv", temp_tag(t));
        let rows: Vec<Vec<f64>> = w
            .grid
            .centers()
            .iter()
            .zip(&w.weighted)
            .map(|(e, v)| vec![*e, *v])
            .collect();
        out.table(&file, &["energy_cm", "weighted"], &rows)?;
        entries.push(BoseEntry {
            temperature_k: t,
            file,
            weighted_integral: integrate(&w.weighted, &w.grid)?,
        });
    }
    out.json("boseweight.json", &entries)
}

// ---------------------------------------------------------------------------
// relaxation

#[derive(Serialize)]
struct TraceResult {
    file: String,
    temperature_k: f64,
    method: Method,
    orientation: Orientation,
    fit: Option<RecoveryFit>,
    rate_per_us: Option<f64>,
    rate_err_per_us: Option<f64>,
    error: Option<String>,
}

pub fn fit_traces(l: &Loaded, out: &mut Output) -> Result<()> {
    let traces = l.traces()?;
    let mut results = Vec::new();
    let mut points = Vec::new();
    for (entry, trace) in &traces {
        let file = entry.path.display().to_string();
        match fit_recovery_trace(trace) {
            Ok(fit) => {
                let rate = 1.0 / fit.t1_us;
                let err = fit.t1_err_us / (fit.t1_us * fit.t1_us);
                points.push(spclab::relax::RatePoint {
                    temperature_k: entry.temperature_k,
                    rate_per_us: rate,
                    rate_err_per_us: Some(err),
                    orientation: entry.orientation,
                    method: entry.method,
                });
                results.push(TraceResult {
                    file,
                    temperature_k: entry.temperature_k,
                    method: entry.method,
                    orientation: entry.orientation,
                    fit: Some(fit),
                    rate_per_us: Some(rate),
                    rate_err_per_us: Some(err),
                    error: None,
                });
            }
            Err(e) if !e.is_convergence() => {
                warn!("{file}: {e}");
                results.push(TraceResult {
                    file,
                    temperature_k: entry.temperature_k,
                    method: entry.method,
                    orientation: entry.orientation,
                    fit: None,
                    rate_per_us: None,
                    rate_err_per_us: None,
                    error: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    if points.is_empty() {
        bail!(spclab::Error::EmptySelection(
            "no trace could be fitted".into()
        ));
    }
    let series = RateSeries::new(&l.manifest.label, points)?;
    spclab::io::write_rates(&out.path("fitted_rates.csv")?, &series)?;
    out.json("t1_fit_traces.json", &results)
}

#[derive(Serialize)]
struct AssembledSeries {
    label: String,
    n_input_points: usize,
    n_selected_points: usize,
    file: String,
}

pub fn assemble(l: &Loaded, out: &mut Output) -> Result<()> {
    let policy = l.manifest.fit.assembly.policy()?;
    let mut report = Vec::new();
    for (label, pts) in l.rate_points()? {
        let series = assemble_rate_series(&label, &pts, &policy)?;
        let file = format!("assembled/{}.csv", slug(&label));
        spclab::io::write_rates(&out.path(&file)?, &series)?;
        report.push(AssembledSeries {
            label,
            n_input_points: pts.len(),
            n_selected_points: series.len(),
            file,
        });
    }
    #[derive(Serialize)]
    struct Report {
        switch_temperature_k: f64,
        orientation: String,
        series: Vec<AssembledSeries>,
    }
    out.json(
        "t1_assemble.json",
        &Report {
            switch_temperature_k: policy.switch_temperature_k,
            orientation: l.manifest.fit.assembly.orientation.clone(),
            series: report,
        },
    )
}

#[derive(Serialize)]
struct SeriesFit<T: Serialize> {
    label: String,
    n_points: usize,
    fit: T,
    curve_file: String,
}

pub fn localmode(l: &Loaded, n_modes: Option<usize>, out: &mut Output) -> Result<()> {
    let mut opts = l.manifest.fit.local_modes.clone();
    if let Some(n) = n_modes {
        opts.n_modes = n;
    }
    let mut results: Vec<SeriesFit<LocalModeFit>> = Vec::new();
    for series in l.rate_series()? {
        let fit = fit_local_modes(&series, &opts)?;
        for w in &fit.warnings {
            warn!("{}: {w}", series.label);
        }
        let curve_file = format!("localmode/{}.csv", slug(&series.label));
        let rows = model_rows(&series, 0.0, |t| Ok(fit.rate(t)))?;
        out.table(&curve_file, &["T_K", "rate_data", "rate_model"], &rows)?;
        results.push(SeriesFit {
            label: series.label.clone(),
            n_points: series.len(),
            fit,
            curve_file,
        });
    }
    out.json("t1_localmode.json", &results)
}

pub fn debye(l: &Loaded, out: &mut Output) -> Result<()> {
    let f = &l.manifest.fit;
    let mut results: Vec<SeriesFit<DebyeFit>> = Vec::new();
    for series in l.rate_series()? {
        let fit = fit_debye_raman(&series, f.debye_include_direct, f.error_weighted)?;
        let curve_file = format!("debye/{}.csv", slug(&series.label));
        let rows = model_rows(&series, 0.0, |t| {
            Ok(spclab::relax::debye_raman_rate(
                t,
                fit.direct_per_us_k.unwrap_or(0.0),
                fit.raman_coefficient_per_us_k9,
                fit.debye_temperature_k,
            )?)
        })?;
        out.table(&curve_file, &["T_K", "rate_data", "rate_model"], &rows)?;
        results.push(SeriesFit {
            label: series.label.clone(),
            n_points: series.len(),
            fit,
            curve_file,
        });
    }
    out.json("t1_debye.json", &results)
}

#[derive(Serialize)]
struct SlopePoint {
    temperature_k: f64,
    log_slope: f64,
}

#[derive(Serialize)]
struct SlopeSeries {
    label: String,
    window: usize,
    points: Vec<SlopePoint>,
    file: String,
}

pub fn slope(l: &Loaded, window: Option<usize>, out: &mut Output) -> Result<()> {
    let window = window.unwrap_or(l.manifest.fit.slope_window);
    let mut results = Vec::new();
    for series in l.rate_series()? {
        let s = log_slope(&series, window)?;
        let file = format!("slope/{}.csv", slug(&series.label));
        let rows: Vec<Vec<f64>> = s.iter().map(|&(t, k)| vec![t, k]).collect();
        out.table(&file, &["T_K", "log_slope"], &rows)?;
        results.push(SlopeSeries {
            label: series.label.clone(),
            window,
            points: s
                .into_iter()
                .map(|(temperature_k, log_slope)| SlopePoint {
                    temperature_k,
                    log_slope,
                })
                .collect(),
            file,
        });
    }
    out.json("t1_slope.json", &results)
}

// ---------------------------------------------------------------------------
// coupling

fn edges_or_default(l: &Loaded, edges: &[f64]) -> Vec<f64> {
    if edges.is_empty() {
        l.manifest.fit.edges_cm.clone()
    } else {
        edges.to_vec()
    }
}

fn fit_all(l: &Loaded, set: &SpectrumSet, edges: &[f64]) -> Result<Vec<(RateSeries, SpcFit)>> {
    let opts = l.spc_options();
    l.rate_series()?
        .into_iter()
        .map(|s| {
            let fit = fit_lambda_windows(&s, set, edges, &opts)?;
            info!("{}: rmse_log10 = {:.4}", s.label, fit.rmse_log10);
            Ok((s, fit))
        })
        .collect()
}

pub fn spc_fit(l: &Loaded, edges: &[f64], out: &mut Output) -> Result<()> {
    let set = l.default_spectrum_set()?;
    let edges = edges_or_default(l, edges);
    let mut results: Vec<SeriesFit<SpcFit>> = Vec::new();
    for (series, fit) in fit_all(l, &set, &edges)? {
        let n_w = fit.profile.n_windows();
        let mut header: Vec<String> = vec!["T_K".into(), "rate_data".into(), "rate_model".into()];
        header.extend((1..=n_w).map(|w| format!("contrib_window{w}")));
        let rows = series
            .points()
            .iter()
            .filter(|p| p.temperature_k >= fit.temperature_floor_k)
            .map(|p| {
                let t = p.temperature_k;
                let mut row = vec![t, p.rate_per_us, fit.rate(&set, t)?];
                row.extend(window_contributions(
                    &fit.profile,
                    &set,
                    t,
                    fit.spectrum_mode,
                )?);
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        let curve_file = format!("spc_fit/{}.csv", slug(&series.label));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        out.table(&curve_file, &header, &rows)?;
        results.push(SeriesFit {
            label: series.label.clone(),
            n_points: fit.n_points,
            fit,
            curve_file,
        });
    }
    out.json("spc_fit.json", &results)
}

/// `lo:hi:step` or a comma-separated list.
pub fn parse_grid(s: &str) -> std::result::Result<Vec<f64>, String> {
    let nums = |parts: Vec<&str>| -> std::result::Result<Vec<f64>, String> {
        parts
            .iter()
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("`{p}` is not a number"))
            })
            .collect()
    };
    if s.contains(':') {
        let v = nums(s.split(':').collect())?;
        let [lo, hi, step] = v[..] else {
            return Err("range must be lo:hi:step".into());
        };
        if !(step > 0.0 && hi >= lo) {
            return Err("range needs hi >= lo and step > 0".into());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| lo + step * i as f64).collect())
    } else {
        nums(s.split(',').collect())
    }
}

pub fn spc_scan(l: &Loaded, grid: Option<&[f64]>, out: &mut Output) -> Result<()> {
    let set = l.default_spectrum_set()?;
    let series = l.rate_series()?;
    let grid = grid
        .map(<[f64]>::to_vec)
        .or_else(|| l.manifest.fit.cutoff_grid_cm.clone());
    let scan: CutoffScan = cutoff_scan(&series, &set, grid.as_deref(), &l.spc_options())?;
    if scan.weakly_identified {
        warn!("cutoff is weakly identified: the scan curve is flat");
    }
    let mut header: Vec<String> = vec!["cutoff_cm".into(), "rmse_total".into()];
    header.extend(series.iter().map(|s| format!("rmse_{}", slug(&s.label))));
    let rows: Vec<Vec<f64>> = scan
        .cutoffs_cm
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            let mut row = vec![c, scan.total_rmse_log10[j].unwrap_or(f64::NAN)];
            row.extend(scan.rmse_log10.iter().map(|r| r[j].unwrap_or(f64::NAN)));
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.table("spc_scan.csv", &header, &rows)?;
    #[derive(Serialize)]
    struct Report {
        series: Vec<String>,
        scan: CutoffScan,
        curve_file: String,
    }
    out.json(
        "spc_scan.json",
        &Report {
            series: series.iter().map(|s| s.label.clone()).collect(),
            scan,
            curve_file: "spc_scan.csv".into(),
        },
    )
}

#[derive(Serialize)]
struct DensityEntry {
    label: String,
    temperature_k: f64,
    total_rate_per_us: f64,
    window_rates_per_us: Vec<f64>,
    file: String,
}

pub fn spc_density(l: &Loaded, temps: &[f64], out: &mut Output) -> Result<()> {
    if temps.is_empty() {
        bail!(crate::manifest::ValidationError {
            field: "--temps".into(),
            message: "at least one temperature is required".into(),
        });
    }
    let set = l.default_spectrum_set()?;
    let edges = l.manifest.fit.edges_cm.clone();
    let mut entries = Vec::new();
    for (series, fit) in fit_all(l, &set, &edges)? {
        for &t in temps {
            let d = spectral_density(&fit.profile, &set, t, fit.spectrum_mode)?;
            let file = format!("density/{}/{}.csv", slug(&series.label), temp_tag(t));
            let rows: Vec<Vec<f64>> = d
                .grid
                .centers()
                .iter()
                .zip(&d.density_per_us_per_cm)
                .map(|(e, v)| vec![*e, *v])
                .collect();
            out.table(&file, &["energy_cm", "density"], &rows)?;
            entries.push(DensityEntry {
                label: series.label.clone(),
                temperature_k: t,
                total_rate_per_us: d.total(),
                window_rates_per_us: window_contributions(
                    &fit.profile,
                    &set,
                    t,
                    fit.spectrum_mode,
                )?,
                file,
            });
        }
    }
    out.json("spc_density.json", &entries)
}

pub fn spc_sweep(l: &Loaded, cutoffs: &[f64], out: &mut Output) -> Result<()> {
    let cutoffs = if cutoffs.is_empty() {
        l.manifest.fit.sweep_cutoffs_cm.clone()
    } else {
        cutoffs.to_vec()
    };
    let sets = l
        .representations()
        .into_iter()
        .map(|r| Ok((r.clone(), l.spectrum_set(&r)?)))
        .collect::<Result<Vec<_>>>()?;
    let opts = l.spc_options();
    #[derive(Serialize)]
    struct SeriesSweep {
        label: String,
        cells: Vec<SweepCell>,
    }
    let mut results = Vec::new();
    for series in l.rate_series()? {
        let cells = robustness_sweep(&series, &sets, &cutoffs, &l.manifest.fit.edges_cm, &opts)?;
        results.push(SeriesSweep {
            label: series.label.clone(),
            cells,
        });
    }
    out.json("spc_sweep.json", &results)
}

// ---------------------------------------------------------------------------
// lattice and anharmonicity

fn lattice_tracks(l: &Loaded) -> Result<(Vec<PeakTrack>, VolumeTrack)> {
    let patterns = l.patterns()?;
    let (seeds, refs) = l.lattice_seeds()?;
    let tracks = track_peaks(&patterns, &seeds)?;
    let vol = volume_expansion(&tracks, &refs)?;
    if vol.reference_from_fit {
        warn!(
            "reference d-spacing taken from the hottest fit at {:?} K",
            vol.reference_temperature_k
        );
    }
    Ok((tracks, vol))
}

pub fn lattice_volume(l: &Loaded, out: &mut Output) -> Result<()> {
    let (tracks, vol) = lattice_tracks(l)?;
    for (i, t) in tracks.iter().enumerate() {
        let rows: Vec<Vec<f64>> = t
            .points
            .iter()
            .map(|p| {
                vec![
                    p.temperature_k,
                    p.center_angstrom,
                    p.center_err_angstrom,
                    p.fwhm_angstrom,
                    p.fwhm_err_angstrom,
                ]
            })
            .collect();
        out.table(
            &format!("lattice/{}.csv", slug(&track_name(&t.label, i))),
            &[
                "T_K",
                "center_angstrom",
                "center_err",
                "fwhm_angstrom",
                "fwhm_err",
            ],
            &rows,
        )?;
    }
    let rows: Vec<Vec<f64>> = vol
        .points
        .iter()
        .map(|p| vec![p.temperature_k, p.dv_over_v, p.spread])
        .collect();
    out.table("lattice/volume.csv", &["T_K", "dv_over_v", "spread"], &rows)?;
    #[derive(Serialize)]
    struct Report {
        tracks: Vec<PeakTrack>,
        volume: VolumeTrack,
    }
    out.json(
        "lattice_volume.json",
        &Report {
            tracks,
            volume: vol,
        },
    )
}

fn phonon_tracks(l: &Loaded, out: &mut Output) -> Result<Vec<PhononPeakTrack>> {
    let set = l.default_spectrum_set()?;
    let tracks = fit_phonon_peaks(&set, &l.phonon_seeds()?, &l.manifest.anharm.options())?;
    for (i, t) in tracks.iter().enumerate() {
        let name = track_name(&t.label, i);
        for w in &t.warnings {
            warn!("{name}: {w}");
        }
        let rows: Vec<Vec<f64>> = t
            .points
            .iter()
            .map(|p| {
                vec![
                    p.temperature_k,
                    p.center_cm,
                    p.center_err_cm,
                    p.fwhm_cm,
                    p.fwhm_err_cm,
                ]
            })
            .collect();
        out.table(
            &format!("anharm/{}.csv", slug(&name)),
            &["T_K", "center_cm", "center_err", "fwhm_cm", "fwhm_err"],
            &rows,
        )?;
    }
    Ok(tracks)
}

pub fn anharm_peaks(l: &Loaded, out: &mut Output) -> Result<()> {
    let tracks = phonon_tracks(l, out)?;
    out.json("anharm_peaks.json", &tracks)
}

pub fn anharm_gruneisen(l: &Loaded, out: &mut Output) -> Result<()> {
    let tracks = phonon_tracks(l, out)?;
    let (_, vol) = lattice_tracks(l)?;
    #[derive(Serialize)]
    struct Entry {
        label: String,
        result: Option<GruneisenResult>,
        error: Option<String>,
    }
    let entries: Vec<Entry> = tracks
        .iter()
        .enumerate()
        .map(|(i, t)| match gruneisen(t, &vol) {
            Ok(r) => Entry {
                label: track_name(&t.label, i),
                result: Some(r),
                error: None,
            },
            Err(e) => {
                let label = track_name(&t.label, i);
                warn!("{label}: {e}");
                Entry {
                    label,
                    result: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    #[derive(Serialize)]
    struct Report {
        volume: VolumeTrack,
        modes: Vec<Entry>,
    }
    out.json(
        "anharm_gruneisen.json",
        &Report {
            volume: vol,
            modes: entries,
        },
    )
}

// ---------------------------------------------------------------------------
// eigenvector metrics

pub fn modes_rmsd(l: &Loaded, e_max_cm: f64, temperature_k: f64, out: &mut Output) -> Result<()> {
    let ms = l.mode_set()?;
    let r: RmsdResult = rmsd_per_atom(&ms, temperature_k, e_max_cm)?;
    let core = l.manifest.structure.core.as_ref();
    let mean_all = summarize_rmsd(&r.per_atom_angstrom, &AtomGroup::All, None)?;
    let mean_core = core
        .map(|c| summarize_rmsd(&r.per_atom_angstrom, &AtomGroup::Core, Some(c)))
        .transpose()?;
    let rows: Vec<Vec<f64>> = r
        .per_atom_angstrom
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i as f64, *v])
        .collect();
    out.table("modes_rmsd.csv", &["atom_index", "rmsd_angstrom"], &rows)?;
    #[derive(Serialize)]
    struct Report {
        temperature_k: f64,
        e_max_cm: f64,
        mean_all_angstrom: f64,
        mean_core_angstrom: Option<f64>,
        result: RmsdResult,
    }
    out.json(
        "modes_rmsd.json",
        &Report {
            temperature_k,
            e_max_cm,
            mean_all_angstrom: mean_all,
            mean_core_angstrom: mean_core,
            result: r,
        },
    )
}

pub fn modes_stretch(l: &Loaded, out: &mut Output) -> Result<()> {
    let ms = l.mode_set()?;
    let scores: Vec<StretchScore> = stretch_character(&ms, l.core()?)?;
    let rows: Vec<Vec<f64>> = scores
        .iter()
        .map(|s| vec![s.mode_index as f64, s.freq_cm, s.score])
        .collect();
    out.table(
        "modes_stretch.csv",
        &["mode_index", "freq_cm", "score"],
        &rows,
    )?;
    let mut ranked: Vec<&StretchScore> = scores.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.mode_index.cmp(&b.mode_index))
    });
    #[derive(Serialize)]
    struct Report<'a> {
        scores: &'a [StretchScore],
        ranking_by_score: Vec<usize>,
    }
    out.json(
        "modes_stretch.json",
        &Report {
            scores: &scores,
            ranking_by_score: ranked.iter().map(|s| s.mode_index).collect(),
        },
    )
}
