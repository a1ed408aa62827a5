//! Windowed spin–phonon coupling coefficients.
//!
//! The relaxation rate is the measured spectrum integrated against the
//! two-phonon factor, weighted by a piecewise-constant coefficient λ(E):
//!
//! ```text
//! rate(T) = Σ_w λ_w ∫_{window w} G_T(ε)·n(n+1)(ε,T) dε
//! ```
//!
//! Each window contributes a basis function c_w(T), so the model is
//! linear in λ and the fit works on log λ with a log₁₀ objective.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{EnergyGrid, Spectrum, SpectrumSet};
use crate::ins::{interpolate_temperature, normalize, CorrectionConfig};
use crate::optim::{covariance, sigmas, LeastSquares};
use crate::relax::{best_of, RateSeries};
use crate::thermal::two_phonon_unchecked;

/// Upper end of the phonon range used throughout, cm⁻¹.
pub const MAX_PHONON_ENERGY_CM: f64 = 600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaProfile {
    window_edges_cm: Vec<f64>,
    lambdas_per_us: Vec<f64>,
    /// Bins below this energy are left out of the integral.
    excluded_below_cm: Option<f64>,
}

impl LambdaProfile {
    pub fn new(
        window_edges_cm: Vec<f64>,
        lambdas_per_us: Vec<f64>,
        excluded_below_cm: Option<f64>,
    ) -> Result<Self> {
        validate_edges(&window_edges_cm)?;
        if lambdas_per_us.len() + 1 != window_edges_cm.len() {
            return Err(Error::LengthMismatch {
                expected: window_edges_cm.len() - 1,
                got: lambdas_per_us.len(),
            });
        }
        if let Some(k) = lambdas_per_us
            .iter()
            .position(|l| !(*l >= 0.0) || !l.is_finite())
        {
            return Err(Error::invalid(format!(
                "lambda for window {k} must be finite and non-negative"
            )));
        }
        if let Some(x) = excluded_below_cm {
            if !(x >= 0.0) {
                return Err(Error::invalid("excluded_below_cm must be non-negative"));
            }
        }
        Ok(Self {
            window_edges_cm,
            lambdas_per_us,
            excluded_below_cm,
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.window_edges_cm
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas_per_us
    }

    pub fn excluded_below(&self) -> Option<f64> {
        self.excluded_below_cm
    }

    pub fn n_windows(&self) -> usize {
        self.lambdas_per_us.len()
    }

    pub fn with_lambdas(&self, lambdas: Vec<f64>) -> Result<Self> {
        Self::new(
            self.window_edges_cm.clone(),
            lambdas,
            self.excluded_below_cm,
        )
    }

    /// Integration range of window `w` after the exclusion floor.
    fn window_range(&self, w: usize) -> (f64, f64) {
        window_range(&self.window_edges_cm, self.excluded_below_cm, w)
    }
}

fn window_range(edges: &[f64], excluded: Option<f64>, w: usize) -> (f64, f64) {
    let floor = excluded.unwrap_or(0.0);
    (edges[w].max(floor), edges[w + 1].max(floor))
}

fn validate_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::invalid("need at least two window edges"));
    }
    if !(edges[0] >= 0.0) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::invalid(
            "window edges must be finite with the first ≥ 0",
        ));
    }
    if edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("window edges must be strictly increasing"));
    }
    Ok(())
}

/// How G_T is obtained at temperatures between measured spectra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumMode {
    /// Per-bin linear interpolation in temperature.
    #[default]
    Interpolated,
    /// Nearest measured spectrum.
    Frozen,
}

fn spectrum_at(set: &SpectrumSet, t: f64, mode: SpectrumMode) -> Result<Spectrum> {
    match mode {
        SpectrumMode::Interpolated => interpolate_temperature(set, t),
        SpectrumMode::Frozen => {
            let (lo, hi) = set.temperature_range();
            if !(t >= lo && t <= hi) {
                return Err(Error::Extrapolation {
                    t,
                    min: lo,
                    max: hi,
                });
            }
            // ties go to the colder spectrum
            let s = set
                .spectra()
                .iter()
                .min_by(|a, b| {
                    (a.temperature_k - t)
                        .abs()
                        .total_cmp(&(b.temperature_k - t).abs())
                        .then(a.temperature_k.total_cmp(&b.temperature_k))
                })
                .expect("spectrum sets are non-empty");
            Ok(s.clone())
        }
    }
}

/// Per-bin integrand G·n(n+1)·overlap for each window, before λ.
fn window_integrals(edges: &[f64], excluded: Option<f64>, spec: &Spectrum, t: f64) -> Vec<f64> {
    let grid = &spec.grid;
    let n_windows = edges.len() - 1;
    let mut out = vec![0.0; n_windows];
    for (i, (&e, &g)) in grid.centers().iter().zip(&spec.intensity).enumerate() {
        if g == 0.0 || e <= 0.0 {
            continue;
        }
        let f = g * two_phonon_unchecked(e, t);
        for (w, acc) in out.iter_mut().enumerate() {
            let (lo, hi) = window_range(edges, excluded, w);
            let ov = grid.overlap(i, lo, hi);
            if ov > 0.0 {
                *acc += f * ov;
            }
        }
    }
    out
}

/// Contribution of every window to the rate at `t`, λ included.
pub fn window_contributions(
    profile: &LambdaProfile,
    set: &SpectrumSet,
    t: f64,
    mode: SpectrumMode,
) -> Result<Vec<f64>> {
    let spec = spectrum_at(set, t, mode)?;
    Ok(
        window_integrals(profile.edges(), profile.excluded_below(), &spec, t)
            .into_iter()
            .zip(profile.lambdas())
            .map(|(c, l)| c * l)
            .collect(),
    )
}

/// Raman relaxation rate, µs⁻¹.
pub fn forward_rate(
    profile: &LambdaProfile,
    set: &SpectrumSet,
    t: f64,
    mode: SpectrumMode,
) -> Result<f64> {
    Ok(window_contributions(profile, set, t, mode)?.iter().sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralDensity {
    pub temperature_k: f64,
    pub grid: EnergyGrid,
    /// µs⁻¹ per cm⁻¹, per bin.
    pub density_per_us_per_cm: Vec<f64>,
}

impl SpectralDensity {
    pub fn total(&self) -> f64 {
        crate::grid::integrate(&self.density_per_us_per_cm, &self.grid)
            .expect("density matches its grid")
    }
}

/// Per-bin integrand λ(ε)·G_T(ε)·n(n+1); integrates to [`forward_rate`].
pub fn spectral_density(
    profile: &LambdaProfile,
    set: &SpectrumSet,
    t: f64,
    mode: SpectrumMode,
) -> Result<SpectralDensity> {
    let spec = spectrum_at(set, t, mode)?;
    let grid = spec.grid.clone();
    let mut density = vec![0.0; grid.len()];
    for (i, (&e, &g)) in grid.centers().iter().zip(&spec.intensity).enumerate() {
        if g == 0.0 || e <= 0.0 {
            continue;
        }
        let f = g * two_phonon_unchecked(e, t);
        let mut weight = 0.0;
        for (w, &lambda) in profile.lambdas().iter().enumerate() {
            let (lo, hi) = profile.window_range(w);
            let ov = grid.overlap(i, lo, hi);
            if ov > 0.0 {
                weight += lambda * ov;
            }
        }
        density[i] = f * weight / grid.width(i);
    }
    Ok(SpectralDensity {
        temperature_k: t,
        grid,
        density_per_us_per_cm: density,
    })
}

// ---------------------------------------------------------------------------
// crossover

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Crossover {
    At {
        temperature_k: f64,
    },
    None,
    /// Contributions equal at every temperature.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowCrossover {
    pub lower_window: usize,
    pub upper_window: usize,
    pub crossover: Crossover,
}

const CROSSOVER_SCAN_POINTS: usize = 200;
const CROSSOVER_TOL_K: f64 = 0.01;

/// Temperature where adjacent windows contribute equally, found by a scan
/// over the set's range followed by bisection. The first sign change wins.
pub fn crossover_temperature(
    profile: &LambdaProfile,
    set: &SpectrumSet,
    lower_window: usize,
    mode: SpectrumMode,
) -> Result<Crossover> {
    let upper = lower_window + 1;
    if upper >= profile.n_windows() {
        return Err(Error::invalid(format!(
            "no window above window {lower_window}"
        )));
    }
    let (la, lb) = (profile.lambdas()[lower_window], profile.lambdas()[upper]);
    if la <= 0.0 || lb <= 0.0 {
        return Ok(Crossover::None);
    }
    let diff = |t: f64| -> Result<(f64, f64)> {
        let c = window_contributions(profile, set, t, mode)?;
        Ok((c[lower_window] - c[upper], c[lower_window] + c[upper]))
    };
    let (t_lo, t_hi) = set.temperature_range();
    if t_hi <= t_lo {
        return Ok(Crossover::None);
    }
    let temps: Vec<f64> = (0..CROSSOVER_SCAN_POINTS)
        .map(|i| t_lo + (t_hi - t_lo) * i as f64 / (CROSSOVER_SCAN_POINTS - 1) as f64)
        .collect();
    let values = temps.iter().map(|&t| diff(t)).collect::<Result<Vec<_>>>()?;
    if values
        .iter()
        .all(|(d, s)| d.abs() <= 1e-12 * s.abs().max(f64::MIN_POSITIVE))
    {
        return Ok(Crossover::Degenerate);
    }
    for k in 0..temps.len() {
        if values[k].0 == 0.0 && values[k].1 > 0.0 {
            return Ok(Crossover::At {
                temperature_k: temps[k],
            });
        }
        if k + 1 < temps.len() && values[k].0 * values[k + 1].0 < 0.0 {
            let (mut a, mut b) = (temps[k], temps[k + 1]);
            let mut fa = values[k].0;
            while b - a > CROSSOVER_TOL_K {
                let m = 0.5 * (a + b);
                let fm = diff(m)?.0;
                if fm == 0.0 {
                    return Ok(Crossover::At { temperature_k: m });
                }
                if fa * fm < 0.0 {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
            }
            return Ok(Crossover::At {
                temperature_k: 0.5 * (a + b),
            });
        }
    }
    Ok(Crossover::None)
}

fn all_crossovers(
    profile: &LambdaProfile,
    set: &SpectrumSet,
    mode: SpectrumMode,
) -> Result<Vec<WindowCrossover>> {
    (0..profile.n_windows().saturating_sub(1))
        .map(|w| {
            Ok(WindowCrossover {
                lower_window: w,
                upper_window: w + 1,
                crossover: crossover_temperature(profile, set, w, mode)?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// fitting

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpcOptions {
    /// Rate points below this temperature are dropped.
    pub temperature_floor_k: f64,
    pub include_direct: bool,
    pub excluded_below_cm: Option<f64>,
    pub spectrum_mode: SpectrumMode,
    /// Free-text tag for the spectrum representation, carried into output.
    pub representation: String,
}

impl Default for SpcOptions {
    fn default() -> Self {
        Self {
            temperature_floor_k: 10.0,
            include_direct: false,
            excluded_below_cm: None,
            spectrum_mode: SpectrumMode::Interpolated,
            representation: "instrument_weighted".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpcFit {
    pub profile: LambdaProfile,
    pub lambda_errs_per_us: Vec<f64>,
    pub direct_per_us_k: Option<f64>,
    pub direct_err_per_us_k: Option<f64>,
    pub rmse_log10: f64,
    pub crossovers: Vec<WindowCrossover>,
    pub n_points: usize,
    pub temperature_floor_k: f64,
    /// Upper limit of the spectrum normalization integral, when known.
    pub normalization_cutoff_cm: Option<f64>,
    pub representation: String,
    pub spectrum_mode: SpectrumMode,
}

impl SpcFit {
    pub fn rate(&self, set: &SpectrumSet, t: f64) -> Result<f64> {
        Ok(forward_rate(&self.profile, set, t, self.spectrum_mode)?
            + self.direct_per_us_k.unwrap_or(0.0) * t)
    }
}

struct LambdaProblem<'a> {
    basis: &'a DMatrix<f64>,
    t: &'a [f64],
    log_rate: &'a [f64],
    include_direct: bool,
}

impl LambdaProblem<'_> {
    fn model(&self, p: &[f64], i: usize) -> f64 {
        let w = self.basis.ncols();
        let mut m: f64 = (0..w).map(|k| p[k].exp() * self.basis[(i, k)]).sum();
        if self.include_direct {
            m += p[w].exp() * self.t[i];
        }
        m
    }
}

impl LeastSquares for LambdaProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.t.len()
    }
    fn n_params(&self) -> usize {
        self.basis.ncols() + usize::from(self.include_direct)
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.model(p, i).log10() - self.log_rate[i];
        }
    }
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        // ∂ log₁₀ m / ∂ ln θ = θ·∂m/∂θ / (m ln 10)
        let w = self.basis.ncols();
        for i in 0..self.t.len() {
            let m = self.model(p, i) * std::f64::consts::LN_10;
            for k in 0..w {
                jac[(i, k)] = p[k].exp() * self.basis[(i, k)] / m;
            }
            if self.include_direct {
                jac[(i, w)] = p[w].exp() * self.t[i] / m;
            }
        }
    }
}

fn basis_matrix(
    edges: &[f64],
    excluded: Option<f64>,
    set: &SpectrumSet,
    temps: &[f64],
    mode: SpectrumMode,
) -> Result<DMatrix<f64>> {
    let rows = temps
        .par_iter()
        .map(|&t| {
            let spec = spectrum_at(set, t, mode)?;
            Ok(window_integrals(edges, excluded, &spec, t))
        })
        .collect::<Result<Vec<_>>>()?;
    let w = edges.len() - 1;
    Ok(DMatrix::from_fn(temps.len(), w, |i, k| rows[i][k]))
}

/// Fits one λ per window to a rate series.
pub fn fit_lambda_windows(
    series: &RateSeries,
    set: &SpectrumSet,
    edges: &[f64],
    opts: &SpcOptions,
) -> Result<SpcFit> {
    validate_edges(edges)?;
    let kept = series.above(opts.temperature_floor_k)?;
    let n_windows = edges.len() - 1;
    let n_params = n_windows + usize::from(opts.include_direct);
    if kept.len() < n_params {
        return Err(Error::invalid(format!(
            "{} rate points at T ≥ {} K cannot constrain {n_params} parameters",
            kept.len(),
            opts.temperature_floor_k
        )));
    }
    let temps = kept.temperatures();
    let rates = kept.rates();
    let basis = basis_matrix(
        edges,
        opts.excluded_below_cm,
        set,
        &temps,
        opts.spectrum_mode,
    )?;
    for w in 0..n_windows {
        if basis.column(w).iter().all(|&v| v <= 0.0) {
            let (lo, hi) = window_range(edges, opts.excluded_below_cm, w);
            return Err(Error::Unidentifiable { index: w, lo, hi });
        }
    }

    let log_rate: Vec<f64> = rates.iter().map(|r| r.log10()).collect();
    let problem = LambdaProblem {
        basis: &basis,
        t: &temps,
        log_rate: &log_rate,
        include_direct: opts.include_direct,
    };
    let starts = lambda_starts(&basis, &temps, &rates, opts.include_direct);
    let sol = best_of(&problem, &starts)?;

    let cov = covariance(&sol.jacobian, sol.cost);
    let s = sigmas(&cov);
    let values: Vec<f64> = sol.params.iter().map(|p| p.exp()).collect();
    let lambdas = values[..n_windows].to_vec();
    let lambda_errs = (0..n_windows).map(|k| values[k] * s[k]).collect();
    let profile = LambdaProfile::new(edges.to_vec(), lambdas, opts.excluded_below_cm)?;
    let crossovers = all_crossovers(&profile, set, opts.spectrum_mode)?;
    let rmse = (sol.cost / temps.len() as f64).sqrt();
    Ok(SpcFit {
        profile,
        lambda_errs_per_us: lambda_errs,
        direct_per_us_k: opts.include_direct.then(|| values[n_windows]),
        direct_err_per_us_k: opts
            .include_direct
            .then(|| values[n_windows] * s[n_windows]),
        rmse_log10: rmse,
        crossovers,
        n_points: temps.len(),
        temperature_floor_k: opts.temperature_floor_k,
        normalization_cutoff_cm: None,
        representation: opts.representation.clone(),
        spectrum_mode: opts.spectrum_mode,
    })
}

/// Starts: relative linear least squares, plus each window alone carrying
/// the whole rate at the point where it matters most.
fn lambda_starts(
    basis: &DMatrix<f64>,
    temps: &[f64],
    rates: &[f64],
    include_direct: bool,
) -> Vec<Vec<f64>> {
    let (m, w) = basis.shape();
    let cols = w + usize::from(include_direct);
    let a = DMatrix::from_fn(m, cols, |i, k| {
        if k < w {
            basis[(i, k)] / rates[i]
        } else {
            temps[i] / rates[i]
        }
    });
    let ones = nalgebra::DVector::from_element(m, 1.0);
    let linear = a
        .clone()
        .svd(true, true)
        .solve(&ones, 1e-14)
        .map(|v| v.iter().copied().collect::<Vec<_>>())
        .unwrap_or_else(|_| vec![0.0; cols]);

    // scale for each column: the λ that alone would match the median ratio
    let scale: Vec<f64> = (0..cols)
        .map(|k| {
            let mut r: Vec<f64> = (0..m)
                .filter(|&i| a[(i, k)] > 0.0)
                .map(|i| 1.0 / a[(i, k)])
                .collect();
            if r.is_empty() {
                return 1.0;
            }
            r.sort_by(f64::total_cmp);
            r[r.len() / 2]
        })
        .collect();

    let mut starts = Vec::new();
    starts.push(
        linear
            .iter()
            .zip(&scale)
            .map(|(&v, &s)| if v > 0.0 { v.ln() } else { (1e-6 * s).ln() })
            .collect(),
    );
    starts.push(scale.iter().map(|s| (s / cols as f64).ln()).collect());
    for k in 0..cols {
        starts.push(
            scale
                .iter()
                .enumerate()
                .map(|(j, s)| if j == k { s.ln() } else { (1e-4 * s).ln() })
                .collect(),
        );
    }
    starts
}

// ---------------------------------------------------------------------------
// cutoff scan

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffScan {
    /// Coarse grid followed by the refined points, ascending.
    pub cutoffs_cm: Vec<f64>,
    /// rmse per series (rows follow the input order) and cutoff.
    pub rmse_log10: Vec<Vec<Option<f64>>>,
    /// Sum over series; missing when any series failed.
    pub total_rmse_log10: Vec<Option<f64>>,
    pub selected_cutoff_cm: f64,
    pub coarse_local_minima: usize,
    pub weakly_identified: bool,
}

/// Default coarse grid, cm⁻¹.
pub fn default_cutoff_grid() -> Vec<f64> {
    (0..56).map(|i| 25.0 + 10.0 * i as f64).collect()
}

const REFINE_FACTOR: f64 = 5.0;
/// Relative spread of the total rmse below which the scan is considered flat.
const FLAT_RELATIVE: f64 = 0.25;
/// Absolute flatness floor in log₁₀ units.
const FLAT_ABSOLUTE: f64 = 2e-3;

fn scan_cells(
    series: &[RateSeries],
    set: &SpectrumSet,
    cutoffs: &[f64],
    opts: &SpcOptions,
) -> Vec<Vec<Option<f64>>> {
    series
        .iter()
        .map(|s| {
            cutoffs
                .par_iter()
                .map(
                    |&c| match fit_lambda_windows(s, set, &[0.0, c, MAX_PHONON_ENERGY_CM], opts) {
                        Ok(f) => Some(f.rmse_log10),
                        Err(e) => {
                            warn!("cutoff {c} cm⁻¹ failed for {:?}: {e}", s.label);
                            None
                        }
                    },
                )
                .collect()
        })
        .collect()
}

fn totals(cells: &[Vec<Option<f64>>], n: usize) -> Vec<Option<f64>> {
    (0..n)
        .map(|j| cells.iter().map(|row| row[j]).sum::<Option<f64>>())
        .collect()
}

/// Index of the smallest total; ties go to the lower cutoff.
fn argmin(total: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in total.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((j, v));
            }
        }
    }
    best.map(|(j, _)| j)
}

fn count_local_minima(total: &[Option<f64>]) -> usize {
    let v: Vec<f64> = total.iter().flatten().copied().collect();
    let n = v.len();
    if n <= 1 {
        return n;
    }
    (0..n)
        .filter(|&i| {
            let left = i == 0 || v[i] < v[i - 1];
            let right = i + 1 == n || v[i] < v[i + 1];
            left && right
        })
        .count()
}

/// Scans the two-window boundary over `grid` (default 25–575 step 10) and
/// refines around the coarse minimum. With several series the summed
/// rmse is minimized.
pub fn cutoff_scan(
    series: &[RateSeries],
    set: &SpectrumSet,
    grid: Option<&[f64]>,
    opts: &SpcOptions,
) -> Result<CutoffScan> {
    if series.is_empty() {
        return Err(Error::invalid("cutoff scan needs at least one rate series"));
    }
    let coarse: Vec<f64> = grid
        .map(<[f64]>::to_vec)
        .unwrap_or_else(default_cutoff_grid);
    if coarse.is_empty() {
        return Err(Error::invalid("empty cutoff grid"));
    }
    if coarse.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("cutoff grid must be strictly increasing"));
    }
    if let Some(c) = coarse
        .iter()
        .find(|&&c| !(c > 0.0 && c < MAX_PHONON_ENERGY_CM))
    {
        return Err(Error::invalid(format!(
            "cutoff {c} cm⁻¹ outside (0, {MAX_PHONON_ENERGY_CM})"
        )));
    }

    let cells = scan_cells(series, set, &coarse, opts);
    let coarse_total = totals(&cells, coarse.len());
    let succeeded = coarse_total.iter().filter(|v| v.is_some()).count();
    if 2 * succeeded < coarse.len() {
        return Err(Error::NotConverged {
            iterations: 0,
            cost: f64::NAN,
            reason: format!(
                "only {succeeded} of {} cutoffs produced a fit",
                coarse.len()
            ),
        });
    }
    let j = argmin(&coarse_total).expect("at least one cutoff succeeded");
    let coarse_local_minima = count_local_minima(&coarse_total);

    let mut cutoffs = coarse.clone();
    let mut rows = cells;
    if coarse.len() >= 2 {
        let lo = if j > 0 { coarse[j - 1] } else { coarse[j] };
        let hi = if j + 1 < coarse.len() {
            coarse[j + 1]
        } else {
            coarse[j]
        };
        let step = (coarse[1] - coarse[0]).min(hi - lo).max(f64::MIN_POSITIVE) / REFINE_FACTOR;
        let n = ((hi - lo) / step).round() as usize;
        let fine: Vec<f64> = (0..=n)
            .map(|k| lo + step * k as f64)
            .filter(|c| {
                !coarse
                    .iter()
                    .any(|x| (x - c).abs() < 1e-9 * c.abs().max(1.0))
            })
            .filter(|&c| c > 0.0 && c < MAX_PHONON_ENERGY_CM)
            .collect();
        if !fine.is_empty() {
            let fine_cells = scan_cells(series, set, &fine, opts);
            // merge into one ascending table
            let mut keyed: BTreeMap<u64, (f64, Vec<Option<f64>>)> = BTreeMap::new();
            for (k, &c) in coarse.iter().enumerate() {
                keyed.insert(c.to_bits(), (c, rows.iter().map(|r| r[k]).collect()));
            }
            for (k, &c) in fine.iter().enumerate() {
                keyed.insert(c.to_bits(), (c, fine_cells.iter().map(|r| r[k]).collect()));
            }
            let merged: Vec<(f64, Vec<Option<f64>>)> = keyed.into_values().collect();
            let mut order: Vec<usize> = (0..merged.len()).collect();
            order.sort_by(|&a, &b| merged[a].0.total_cmp(&merged[b].0));
            cutoffs = order.iter().map(|&k| merged[k].0).collect();
            rows = (0..series.len())
                .map(|s| order.iter().map(|&k| merged[k].1[s]).collect())
                .collect();
        }
    }
    let total = totals(&rows, cutoffs.len());
    let best = argmin(&total).expect("coarse minimum is present");

    let present: Vec<f64> = coarse_total.iter().flatten().copied().collect();
    let (min, max) = present
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let weakly_identified = present.len() > 1
        && max - min <= (FLAT_RELATIVE * min).max(FLAT_ABSOLUTE * series.len() as f64);
    if weakly_identified {
        warn!("cutoff scan is flat: the boundary is weakly identified");
    }
    Ok(CutoffScan {
        rmse_log10: rows,
        total_rmse_log10: total,
        selected_cutoff_cm: cutoffs[best],
        cutoffs_cm: cutoffs,
        coarse_local_minima,
        weakly_identified,
    })
}

// ---------------------------------------------------------------------------
// robustness sweep

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub representation: String,
    pub normalization_cutoff_cm: f64,
    pub fit: Option<SpcFit>,
    /// λ_w/λ_0 for each window.
    pub lambda_ratios: Option<Vec<f64>>,
    pub error: Option<String>,
}

/// Fits every (representation, normalization cutoff) pair. Sets are
/// re-normalized up to each cutoff; a set already normalized there is used
/// unchanged. Failing cells are recorded and the sweep continues.
pub fn robustness_sweep(
    series: &RateSeries,
    sets: &[(String, SpectrumSet)],
    normalization_cutoffs_cm: &[f64],
    edges: &[f64],
    opts: &SpcOptions,
) -> Result<Vec<SweepCell>> {
    if sets.is_empty() || normalization_cutoffs_cm.is_empty() {
        return Err(Error::invalid(
            "robustness sweep needs at least one configuration",
        ));
    }
    let jobs: Vec<(&String, &SpectrumSet, f64)> = sets
        .iter()
        .flat_map(|(name, set)| {
            normalization_cutoffs_cm
                .iter()
                .map(move |&c| (name, set, c))
        })
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(name, set, cutoff)| {
            let run = || -> Result<SpcFit> {
                let renormalized;
                let use_set = if already_normalized(set, cutoff) {
                    set
                } else {
                    let cfg = CorrectionConfig {
                        normalization_cutoff_cm: cutoff,
                        allow_cutoff_override: true,
                        ..Default::default()
                    };
                    renormalized = set.map(|s| normalize(s, &cfg))?;
                    &renormalized
                };
                let o = SpcOptions {
                    representation: name.clone(),
                    ..opts.clone()
                };
                let mut fit = fit_lambda_windows(series, use_set, edges, &o)?;
                fit.normalization_cutoff_cm = Some(cutoff);
                Ok(fit)
            };
            match run() {
                Ok(fit) => {
                    let l = fit.profile.lambdas();
                    let ratios = (l[0] > 0.0).then(|| l.iter().map(|v| v / l[0]).collect());
                    SweepCell {
                        representation: name.clone(),
                        normalization_cutoff_cm: cutoff,
                        fit: Some(fit),
                        lambda_ratios: ratios,
                        error: None,
                    }
                }
                Err(e) => SweepCell {
                    representation: name.clone(),
                    normalization_cutoff_cm: cutoff,
                    fit: None,
                    lambda_ratios: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

fn already_normalized(set: &SpectrumSet, cutoff: f64) -> bool {
    set.spectra()
        .iter()
        .all(|s| (s.integral_between(0.0, cutoff) - 1.0).abs() <= 1e-12)
}
