//! Spin-lattice relaxation: recovery-trace fits, rate-series assembly,
//! logarithmic slopes and the direct + local-mode / Debye–Raman models.
//!
//! Rate models are fitted on a log₁₀ scale with log-parameterized
//! coefficients. Multi-start runs are independent; the winner is chosen
//! by a total order on (objective, parameters), so the result does not
//! depend on how the starts were scheduled.

use std::cmp::Ordering;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{
    covariance, finite_difference_jacobian, levenberg_marquardt, sigmas, LeastSquares, LmOptions,
    LmSolution,
};
use crate::quadrature::transport_integral;
use crate::thermal::two_phonon_unchecked;

const LN10: f64 = std::f64::consts::LN_10;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Inversion,
    Saturation,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Parallel,
    Perpendicular,
    #[default]
    Unspecified,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inversion" | "ir" => Ok(Method::Inversion),
            "saturation" | "sr" => Ok(Method::Saturation),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

impl std::str::FromStr for Orientation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "parallel" | "par" => Ok(Orientation::Parallel),
            "perpendicular" | "perp" => Ok(Orientation::Perpendicular),
            "" | "unspecified" => Ok(Orientation::Unspecified),
            other => Err(Error::invalid(format!("unknown orientation {other:?}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// recovery traces

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTrace {
    pub delays_us: Vec<f64>,
    pub signal: Vec<f64>,
    pub kind: Method,
}

impl RecoveryTrace {
    pub fn new(delays_us: Vec<f64>, signal: Vec<f64>, kind: Method) -> Result<Self> {
        if delays_us.len() != signal.len() {
            return Err(Error::LengthMismatch {
                expected: delays_us.len(),
                got: signal.len(),
            });
        }
        if delays_us.len() < 8 {
            return Err(Error::invalid(format!(
                "recovery trace needs at least 8 points, got {}",
                delays_us.len()
            )));
        }
        if delays_us.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::invalid("recovery delays must be positive"));
        }
        if delays_us.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "recovery delays must be strictly increasing",
            ));
        }
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("recovery signal must be finite"));
        }
        Ok(Self {
            delays_us,
            signal,
            kind,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryFit {
    pub t1_us: f64,
    pub t1_err_us: f64,
    pub beta: f64,
    pub beta_err: f64,
    pub amplitude: f64,
    pub amplitude_err: f64,
    pub offset: f64,
    pub offset_err: f64,
    pub rms_residual: f64,
}

/// Stretched exponential I(t) = I₀ + A·exp(−(t/T1)^β).
pub fn stretched_exponential(t: f64, offset: f64, amplitude: f64, t1: f64, beta: f64) -> f64 {
    offset + amplitude * (-(t / t1).powf(beta)).exp()
}

const BETA_MIN: f64 = 0.5;
const BETA_MAX: f64 = 1.5;

fn beta_of(u: f64) -> f64 {
    0.5 * (BETA_MIN + BETA_MAX) + 0.5 * (BETA_MAX - BETA_MIN) * u.tanh()
}

fn u_of_beta(beta: f64) -> f64 {
    let s = (beta - 0.5 * (BETA_MIN + BETA_MAX)) / (0.5 * (BETA_MAX - BETA_MIN));
    s.clamp(-0.999, 0.999).atanh()
}

struct TraceProblem<'a> {
    trace: &'a RecoveryTrace,
}

impl LeastSquares for TraceProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.trace.delays_us.len()
    }
    fn n_params(&self) -> usize {
        4
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (t1, beta) = (p[2].exp(), beta_of(p[3]));
        for (i, (&t, &y)) in self
            .trace
            .delays_us
            .iter()
            .zip(&self.trace.signal)
            .enumerate()
        {
            out[i] = stretched_exponential(t, p[0], p[1], t1, beta) - y;
        }
    }
}

struct TraceNatural<'a> {
    trace: &'a RecoveryTrace,
}

impl LeastSquares for TraceNatural<'_> {
    fn n_residuals(&self) -> usize {
        self.trace.delays_us.len()
    }
    fn n_params(&self) -> usize {
        4
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, (&t, &y)) in self
            .trace
            .delays_us
            .iter()
            .zip(&self.trace.signal)
            .enumerate()
        {
            out[i] = stretched_exponential(t, p[0], p[1], p[2], p[3]) - y;
        }
    }
}

/// Robust noise-floor estimate from second differences.
fn noise_floor(signal: &[f64]) -> f64 {
    let mut d2: Vec<f64> = signal
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
        .collect();
    if d2.is_empty() {
        return 0.0;
    }
    d2.sort_by(f64::total_cmp);
    1.4826 * d2[d2.len() / 2] / 6f64.sqrt()
}

pub fn fit_recovery_trace(trace: &RecoveryTrace) -> Result<RecoveryFit> {
    let s = &trace.signal;
    let (min, max) = s
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let range = max - min;
    let floor = noise_floor(s);
    if !(range > 3.0 * floor) || range <= 1e-12 * max.abs().max(min.abs()).max(1e-300) {
        return Err(Error::NoDecay);
    }

    let n = s.len();
    let tail = s[n.saturating_sub(3)..].iter().sum::<f64>() / n.min(3) as f64;
    let head = s[0];
    let amplitude0 = head - tail;
    // first delay where the normalized signal drops below 1/e
    let t1_guess = trace
        .delays_us
        .iter()
        .zip(s)
        .find(|(_, &v)| amplitude0 != 0.0 && (v - tail) / amplitude0 < (-1f64).exp())
        .map(|(&t, _)| t)
        .unwrap_or(trace.delays_us[n / 2]);

    let problem = TraceProblem { trace };
    let opts = LmOptions::default();
    let mut starts = Vec::new();
    for scale in [0.3, 1.0, 3.0] {
        for beta in [1.0, 0.7, 1.3] {
            starts.push(vec![
                tail,
                amplitude0,
                (t1_guess * scale).ln(),
                u_of_beta(beta),
            ]);
        }
    }
    let mut best: Option<LmSolution> = None;
    let mut last_err = None;
    for x0 in &starts {
        match levenberg_marquardt(&problem, x0, &opts) {
            Ok(sol) => {
                if best.as_ref().is_none_or(|b| sol.cost < b.cost) {
                    best = Some(sol);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some(sol) = best else {
        return Err(last_err.unwrap_or(Error::NotConverged {
            iterations: 0,
            cost: f64::NAN,
            reason: "no start converged".into(),
        }));
    };
    let p = &sol.params;
    let natural = [p[0], p[1], p[2].exp(), beta_of(p[3])];
    if !natural.iter().all(|v| v.is_finite()) || natural[1] == 0.0 {
        return Err(Error::NotConverged {
            iterations: sol.iterations,
            cost: sol.cost,
            reason: format!("degenerate recovery fit (rms residual {:.3e})", sol.rms()),
        });
    }
    let mut jac = DMatrix::zeros(n, 4);
    finite_difference_jacobian(&TraceNatural { trace }, &natural, &mut jac);
    let err = sigmas(&covariance(&jac, sol.cost));
    Ok(RecoveryFit {
        offset: natural[0],
        offset_err: err[0],
        amplitude: natural[1],
        amplitude_err: err[1],
        t1_us: natural[2],
        t1_err_us: err[2],
        beta: natural[3],
        beta_err: err[3],
        rms_residual: sol.rms(),
    })
}

// ---------------------------------------------------------------------------
// rate series

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub temperature_k: f64,
    pub rate_per_us: f64,
    pub rate_err_per_us: Option<f64>,
    pub orientation: Orientation,
    pub method: Method,
}

impl RatePoint {
    pub fn new(temperature_k: f64, rate_per_us: f64) -> Self {
        Self {
            temperature_k,
            rate_per_us,
            rate_err_per_us: None,
            orientation: Orientation::Unspecified,
            method: Method::Inversion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature_k > 0.0) || !(self.rate_per_us > 0.0) {
            return Err(Error::invalid(format!(
                "rate point needs T > 0 and rate > 0 (T = {}, rate = {})",
                self.temperature_k, self.rate_per_us
            )));
        }
        if let Some(e) = self.rate_err_per_us {
            if !(e >= 0.0) {
                return Err(Error::invalid("rate error must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSeries {
    pub label: String,
    points: Vec<RatePoint>,
}

impl RateSeries {
    /// Sorts by temperature; rejects duplicate (T, orientation, method).
    pub fn new(label: impl Into<String>, mut points: Vec<RatePoint>) -> Result<Self> {
        for p in &points {
            p.validate()?;
        }
        points.sort_by(|a, b| {
            a.temperature_k
                .total_cmp(&b.temperature_k)
                .then(a.orientation.cmp(&b.orientation))
                .then(a.method.cmp(&b.method))
        });
        if let Some(w) = points.windows(2).find(|w| {
            w[0].temperature_k == w[1].temperature_k
                && w[0].orientation == w[1].orientation
                && w[0].method == w[1].method
        }) {
            return Err(Error::invalid(format!(
                "duplicate rate point at T = {} K ({:?}, {:?})",
                w[0].temperature_k, w[0].orientation, w[0].method
            )));
        }
        Ok(Self {
            label: label.into(),
            points,
        })
    }

    pub fn points(&self) -> &[RatePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn temperatures(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.temperature_k).collect()
    }

    pub fn rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rate_per_us).collect()
    }

    /// Points with T ≥ `floor_k`.
    pub fn above(&self, floor_k: f64) -> Result<Self> {
        Self::new(
            self.label.clone(),
            self.points
                .iter()
                .copied()
                .filter(|p| p.temperature_k >= floor_k)
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssemblyPolicy {
    /// Saturation recovery preferred below, inversion at and above.
    pub switch_temperature_k: f64,
    /// Keep only this orientation; `None` keeps every orientation.
    pub orientation: Option<Orientation>,
}

impl Default for AssemblyPolicy {
    fn default() -> Self {
        Self {
            switch_temperature_k: 30.0,
            orientation: Some(Orientation::Perpendicular),
        }
    }
}

/// Selects one point per (T, orientation): the method preferred at that
/// temperature, then the smallest error.
pub fn assemble_rate_series(
    label: &str,
    points: &[RatePoint],
    policy: &AssemblyPolicy,
) -> Result<RateSeries> {
    if points.is_empty() {
        return Err(Error::EmptySelection("no rate points supplied".into()));
    }
    let mut pool: Vec<RatePoint> = points
        .iter()
        .copied()
        .filter(|p| policy.orientation.is_none_or(|o| p.orientation == o))
        .collect();
    if pool.is_empty() {
        return Err(Error::EmptySelection(format!(
            "no rate points at orientation {:?}",
            policy.orientation
        )));
    }
    let rank = |p: &RatePoint| -> u8 {
        let preferred = if p.temperature_k < policy.switch_temperature_k {
            Method::Saturation
        } else {
            Method::Inversion
        };
        u8::from(p.method != preferred)
    };
    pool.sort_by(|a, b| {
        a.temperature_k
            .total_cmp(&b.temperature_k)
            .then(a.orientation.cmp(&b.orientation))
            .then(rank(a).cmp(&rank(b)))
            .then(
                a.rate_err_per_us
                    .unwrap_or(f64::INFINITY)
                    .total_cmp(&b.rate_err_per_us.unwrap_or(f64::INFINITY)),
            )
    });
    pool.dedup_by(|b, a| a.temperature_k == b.temperature_k && a.orientation == b.orientation);
    RateSeries::new(label, pool)
}

/// Local d ln(rate)/d ln(T) over a sliding window (truncated at the ends).
pub fn log_slope(series: &RateSeries, window: usize) -> Result<Vec<(f64, f64)>> {
    let n = series.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "log slope needs at least 3 points, got {n}"
        )));
    }
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "log-slope window must be odd and ≥ 3, got {window}"
        )));
    }
    let half = window.min(if n % 2 == 1 { n } else { n - 1 }) / 2;
    let x: Vec<f64> = series.points.iter().map(|p| p.temperature_k.ln()).collect();
    let y: Vec<f64> = series.points.iter().map(|p| p.rate_per_us.ln()).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let (xs, ys) = (&x[lo..hi], &y[lo..hi]);
        let m = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / m;
        let my = ys.iter().sum::<f64>() / m;
        let sxy: f64 = xs.iter().zip(ys).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { f64::NAN };
        out.push((series.points[i].temperature_k, slope));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// local-mode model

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalMode {
    pub coefficient_per_us: f64,
    pub coefficient_err_per_us: f64,
    pub energy_cm: f64,
    pub energy_err_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalModeFit {
    pub direct_per_us_k: Option<f64>,
    pub direct_err_per_us_k: Option<f64>,
    pub modes: Vec<LocalMode>,
    pub rmse_log: f64,
    pub warnings: Vec<String>,
}

impl LocalModeFit {
    pub fn rate(&self, temperature_k: f64) -> f64 {
        local_mode_rate(
            temperature_k,
            self.direct_per_us_k.unwrap_or(0.0),
            &self
                .modes
                .iter()
                .map(|m| (m.coefficient_per_us, m.energy_cm))
                .collect::<Vec<_>>(),
        )
    }
}

/// A·T + Σ C_k·n(n+1) at E_k.
pub fn local_mode_rate(temperature_k: f64, direct: f64, modes: &[(f64, f64)]) -> f64 {
    direct * temperature_k
        + modes
            .iter()
            .map(|&(c, e)| c * two_phonon_unchecked(e, temperature_k))
            .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalModeOptions {
    pub n_modes: usize,
    pub include_direct: bool,
    /// Allowed mode energies, cm⁻¹.
    pub energy_bounds_cm: (f64, f64),
    /// Weight log residuals by the reported rate errors.
    pub error_weighted: bool,
    /// Modes closer than this are reported merged.
    pub degeneracy_cm: f64,
}

impl Default for LocalModeOptions {
    fn default() -> Self {
        Self {
            n_modes: 2,
            include_direct: true,
            energy_bounds_cm: (15.0, 600.0),
            error_weighted: false,
            degeneracy_cm: 5.0,
        }
    }
}

/// Shared log-space data for the rate-model fits.
struct LogData {
    t: Vec<f64>,
    log_rate: Vec<f64>,
    weight: Vec<f64>,
}

impl LogData {
    fn new(series: &RateSeries, error_weighted: bool) -> Result<Self> {
        let t = series.temperatures();
        let log_rate = series.rates().iter().map(|r| r.log10()).collect();
        let weight = if error_weighted {
            series
                .points()
                .iter()
                .map(|p| match p.rate_err_per_us {
                    Some(e) if e > 0.0 => Ok(p.rate_per_us * LN10 / e),
                    _ => Err(Error::invalid(format!(
                        "error-weighted fit needs a positive error at T = {} K",
                        p.temperature_k
                    ))),
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![1.0; series.len()]
        };
        Ok(Self {
            t,
            log_rate,
            weight,
        })
    }

    fn rmse_log(&self, model: impl Fn(f64) -> f64) -> f64 {
        let n = self.t.len() as f64;
        (self
            .t
            .iter()
            .zip(&self.log_rate)
            .map(|(&t, &y)| (model(t).log10() - y).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    }
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

#[derive(Clone, Copy)]
struct EnergyMap {
    ln_lo: f64,
    ln_span: f64,
}

impl EnergyMap {
    fn new((lo, hi): (f64, f64)) -> Result<Self> {
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::invalid(format!(
                "invalid energy bounds ({lo}, {hi})"
            )));
        }
        Ok(Self {
            ln_lo: lo.ln(),
            ln_span: hi.ln() - lo.ln(),
        })
    }
    fn energy(&self, u: f64) -> f64 {
        (self.ln_lo + self.ln_span * sigmoid(u)).exp()
    }
    fn param(&self, e: f64) -> f64 {
        let s = ((e.ln() - self.ln_lo) / self.ln_span).clamp(1e-6, 1.0 - 1e-6);
        (s / (1.0 - s)).ln()
    }
}

struct LocalModeProblem<'a> {
    data: &'a LogData,
    n_modes: usize,
    include_direct: bool,
    map: EnergyMap,
}

impl LocalModeProblem<'_> {
    /// (direct, [(C, E)]) from the internal parameter vector.
    fn unpack(&self, p: &[f64]) -> (f64, Vec<(f64, f64)>) {
        let (direct, rest) = if self.include_direct {
            (p[0].exp(), &p[1..])
        } else {
            (0.0, p)
        };
        let modes = rest
            .chunks(2)
            .map(|c| (c[0].exp(), self.map.energy(c[1])))
            .collect();
        (direct, modes)
    }

    fn pack(&self, direct: f64, modes: &[(f64, f64)]) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        if self.include_direct {
            p.push(direct.max(1e-300).ln());
        }
        for &(c, e) in modes {
            p.push(c.max(1e-300).ln());
            p.push(self.map.param(e));
        }
        p
    }
}

impl LeastSquares for LocalModeProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.data.t.len()
    }
    fn n_params(&self) -> usize {
        usize::from(self.include_direct) + 2 * self.n_modes
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (direct, modes) = self.unpack(p);
        for i in 0..self.data.t.len() {
            let m = local_mode_rate(self.data.t[i], direct, &modes);
            out[i] = self.data.weight[i] * (m.log10() - self.data.log_rate[i]);
        }
    }
}

struct LocalModeNatural<'a> {
    data: &'a LogData,
    include_direct: bool,
    n_modes: usize,
}

impl LeastSquares for LocalModeNatural<'_> {
    fn n_residuals(&self) -> usize {
        self.data.t.len()
    }
    fn n_params(&self) -> usize {
        usize::from(self.include_direct) + 2 * self.n_modes
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (direct, rest) = if self.include_direct {
            (p[0], &p[1..])
        } else {
            (0.0, p)
        };
        let modes: Vec<(f64, f64)> = rest.chunks(2).map(|c| (c[0], c[1])).collect();
        for i in 0..self.data.t.len() {
            let m = local_mode_rate(self.data.t[i], direct, &modes).max(1e-300);
            out[i] = self.data.weight[i] * (m.log10() - self.data.log_rate[i]);
        }
    }
}

/// Linear least squares for (A, C_k) at fixed energies on relative
/// residuals; non-positive coefficients are lifted to a small floor.
fn linear_start(data: &LogData, energies: &[f64], include_direct: bool) -> (f64, Vec<(f64, f64)>) {
    let m = data.t.len();
    let cols = usize::from(include_direct) + energies.len();
    let mut a = DMatrix::zeros(m, cols);
    let mut b = nalgebra::DVector::zeros(m);
    for i in 0..m {
        let t = data.t[i];
        let rate = 10f64.powf(data.log_rate[i]);
        let mut c = 0;
        if include_direct {
            a[(i, c)] = t / rate;
            c += 1;
        }
        for &e in energies {
            a[(i, c)] = two_phonon_unchecked(e, t) / rate;
            c += 1;
        }
        b[i] = 1.0;
    }
    let sol = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .unwrap_or_else(|_| nalgebra::DVector::from_element(cols, 1.0));
    let rmax = data
        .log_rate
        .iter()
        .map(|v| 10f64.powf(*v))
        .fold(0.0, f64::max);
    let floor = 1e-6 * rmax;
    let mut k = 0;
    let direct = if include_direct {
        k = 1;
        let tmax = data.t.iter().cloned().fold(0.0, f64::max);
        if sol[0] > 0.0 {
            sol[0]
        } else {
            floor / tmax
        }
    } else {
        0.0
    };
    let modes = energies
        .iter()
        .enumerate()
        .map(|(j, &e)| {
            let c = sol[k + j];
            (if c > 0.0 { c } else { floor }, e)
        })
        .collect();
    (direct, modes)
}

fn seed_energies(bounds: (f64, f64), n: usize) -> Vec<f64> {
    let (lo, hi) = (bounds.0 * 1.05, bounds.1 * 0.95);
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Total order used for best-of selection across starts.
fn compare_solutions(a: &LmSolution, b: &LmSolution) -> Ordering {
    a.cost.total_cmp(&b.cost).then_with(|| {
        a.params
            .iter()
            .zip(&b.params)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

pub(crate) fn best_of<P: LeastSquares + Sync>(
    problem: &P,
    starts: &[Vec<f64>],
) -> Result<LmSolution> {
    let opts = LmOptions::default();
    let results: Vec<Result<LmSolution>> = starts
        .par_iter()
        .map(|x0| levenberg_marquardt(problem, x0, &opts))
        .collect();
    let mut best: Option<LmSolution> = None;
    let mut first_err = None;
    for r in results {
        match r {
            Ok(s) if s.cost.is_finite() => {
                if best
                    .as_ref()
                    .is_none_or(|b| compare_solutions(&s, b) == Ordering::Less)
                {
                    best = Some(s);
                }
            }
            Ok(_) => {}
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| {
        first_err.unwrap_or(Error::NotConverged {
            iterations: 0,
            cost: f64::NAN,
            reason: "no start produced a finite objective".into(),
        })
    })
}

const N_SEEDS: usize = 8;

fn fit_local_modes_raw(
    data: &LogData,
    opts: &LocalModeOptions,
    n_modes: usize,
) -> Result<(LmSolution, EnergyMap)> {
    let map = EnergyMap::new(opts.energy_bounds_cm)?;
    let problem = LocalModeProblem {
        data,
        n_modes,
        include_direct: opts.include_direct,
        map,
    };
    let seeds = seed_energies(opts.energy_bounds_cm, N_SEEDS);
    let mut starts: Vec<Vec<f64>> = combinations(N_SEEDS, n_modes)
        .into_iter()
        .map(|idx| {
            let energies: Vec<f64> = idx.iter().map(|&i| seeds[i]).collect();
            let (d, modes) = linear_start(data, &energies, opts.include_direct);
            problem.pack(d, &modes)
        })
        .collect();

    // nested starts: previous solution plus a negligible extra mode, so the
    // objective cannot get worse as modes are added
    if n_modes > 1 {
        let (prev, prev_map) = fit_local_modes_raw(data, opts, n_modes - 1)?;
        let prev_problem = LocalModeProblem {
            data,
            n_modes: n_modes - 1,
            include_direct: opts.include_direct,
            map: prev_map,
        };
        let (d, modes) = prev_problem.unpack(&prev.params);
        let rmin = data
            .log_rate
            .iter()
            .map(|v| 10f64.powf(*v))
            .fold(f64::INFINITY, f64::min);
        for &e in &seeds {
            let mut m = modes.clone();
            m.push((1e-10 * rmin, e));
            starts.push(problem.pack(d, &m));
        }
    }
    Ok((best_of(&problem, &starts)?, map))
}

/// Direct + local-mode fit, rate(T) = A·T + Σ C_k·e^{x_k}/(e^{x_k}−1)².
pub fn fit_local_modes(series: &RateSeries, opts: &LocalModeOptions) -> Result<LocalModeFit> {
    if !(1..=3).contains(&opts.n_modes) {
        return Err(Error::invalid(format!(
            "n_modes must be 1, 2 or 3 (got {})",
            opts.n_modes
        )));
    }
    let n_params = usize::from(opts.include_direct) + 2 * opts.n_modes;
    if series.len() < n_params + 1 {
        return Err(Error::invalid(format!(
            "{} rate points cannot constrain {n_params} parameters",
            series.len()
        )));
    }
    let data = LogData::new(series, opts.error_weighted)?;
    let (sol, map) = fit_local_modes_raw(&data, opts, opts.n_modes)?;
    let problem = LocalModeProblem {
        data: &data,
        n_modes: opts.n_modes,
        include_direct: opts.include_direct,
        map,
    };
    let (direct, modes) = problem.unpack(&sol.params);

    let mut natural = Vec::new();
    if opts.include_direct {
        natural.push(direct);
    }
    for &(c, e) in &modes {
        natural.push(c);
        natural.push(e);
    }
    let nat_problem = LocalModeNatural {
        data: &data,
        include_direct: opts.include_direct,
        n_modes: opts.n_modes,
    };
    let mut jac = DMatrix::zeros(data.t.len(), natural.len());
    // finite differences on the natural scale need per-parameter steps
    natural_jacobian(&nat_problem, &natural, &mut jac);
    let err = sigmas(&covariance(&jac, sol.cost));

    let off = usize::from(opts.include_direct);
    let mut fitted: Vec<LocalMode> = modes
        .iter()
        .enumerate()
        .map(|(k, &(c, e))| LocalMode {
            coefficient_per_us: c,
            coefficient_err_per_us: err[off + 2 * k],
            energy_cm: e,
            energy_err_cm: err[off + 2 * k + 1],
        })
        .collect();
    fitted.sort_by(|a, b| a.energy_cm.total_cmp(&b.energy_cm));

    let mut warnings = Vec::new();
    let mut merged: Vec<LocalMode> = Vec::new();
    for m in fitted {
        match merged.last_mut() {
            Some(prev) if (m.energy_cm - prev.energy_cm).abs() < opts.degeneracy_cm => {
                let msg = format!(
                    "degenerate modes at {:.1} and {:.1} cm⁻¹ merged",
                    prev.energy_cm, m.energy_cm
                );
                warn!("{msg}");
                warnings.push(msg);
                let c = prev.coefficient_per_us + m.coefficient_per_us;
                prev.energy_cm = (prev.energy_cm * prev.coefficient_per_us
                    + m.energy_cm * m.coefficient_per_us)
                    / c;
                prev.energy_err_cm = prev.energy_err_cm.max(m.energy_err_cm);
                prev.coefficient_err_per_us =
                    prev.coefficient_err_per_us.hypot(m.coefficient_err_per_us);
                prev.coefficient_per_us = c;
            }
            _ => merged.push(m),
        }
    }

    let fit = LocalModeFit {
        direct_per_us_k: opts.include_direct.then_some(direct),
        direct_err_per_us_k: opts.include_direct.then(|| err[0]),
        modes: merged,
        rmse_log: 0.0,
        warnings,
    };
    // rmse of the unmerged optimum, unweighted
    let rmse_log = data.rmse_log(|t| local_mode_rate(t, direct, &modes));
    Ok(LocalModeFit { rmse_log, ..fit })
}

fn natural_jacobian<P: LeastSquares>(problem: &P, p: &[f64], jac: &mut DMatrix<f64>) {
    let m = problem.n_residuals();
    let mut up = vec![0.0; m];
    let mut down = vec![0.0; m];
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let h = 1e-6 * p[j].abs().max(1e-300);
        q[j] = p[j] + h;
        problem.residuals(&q, &mut up);
        q[j] = p[j] - h;
        problem.residuals(&q, &mut down);
        q[j] = p[j];
        for i in 0..m {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
}

// ---------------------------------------------------------------------------
// Debye–Raman model

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DebyeFit {
    pub direct_per_us_k: Option<f64>,
    pub direct_err_per_us_k: Option<f64>,
    /// C in C·T⁹·J₈(θ_D/T), µs⁻¹ K⁻⁹.
    pub raman_coefficient_per_us_k9: f64,
    pub raman_coefficient_err_per_us_k9: f64,
    pub debye_temperature_k: f64,
    pub debye_temperature_err_k: f64,
    pub rmse_log: f64,
}

impl DebyeFit {
    pub fn rate(&self, temperature_k: f64) -> Result<f64> {
        debye_raman_rate(
            temperature_k,
            self.direct_per_us_k.unwrap_or(0.0),
            self.raman_coefficient_per_us_k9,
            self.debye_temperature_k,
        )
    }
}

/// A·T + C·T⁹·J₈(θ_D/T).
pub fn debye_raman_rate(temperature_k: f64, direct: f64, c: f64, theta_k: f64) -> Result<f64> {
    let y = theta_k / temperature_k;
    Ok(direct * temperature_k + c * temperature_k.powi(9) * transport_integral(8, y)?)
}

/// Raman term in scaled form K·(T/θ)⁹·J₈(θ/T) with K = C·θ⁹.
fn scaled_raman(t: f64, k: f64, theta: f64) -> f64 {
    let y = theta / t;
    k * (t / theta).powi(9) * transport_integral(8, y).unwrap_or(f64::NAN)
}

struct DebyeProblem<'a> {
    data: &'a LogData,
    include_direct: bool,
}

impl LeastSquares for DebyeProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.data.t.len()
    }
    fn n_params(&self) -> usize {
        usize::from(self.include_direct) + 2
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (direct, rest) = if self.include_direct {
            (p[0].exp(), &p[1..])
        } else {
            (0.0, p)
        };
        let (k, theta) = (rest[0].exp(), rest[1].exp());
        for i in 0..self.data.t.len() {
            let t = self.data.t[i];
            let m = direct * t + scaled_raman(t, k, theta);
            out[i] = self.data.weight[i] * (m.log10() - self.data.log_rate[i]);
        }
    }
}

pub fn fit_debye_raman(
    series: &RateSeries,
    include_direct: bool,
    error_weighted: bool,
) -> Result<DebyeFit> {
    let n_params = usize::from(include_direct) + 2;
    if series.len() < n_params + 1 {
        return Err(Error::invalid(format!(
            "{} rate points cannot constrain {n_params} parameters",
            series.len()
        )));
    }
    let data = LogData::new(series, error_weighted)?;
    let problem = DebyeProblem {
        data: &data,
        include_direct,
    };
    let rmax = series.rates().into_iter().fold(0.0, f64::max);
    let tmax = data.t.iter().cloned().fold(0.0, f64::max);
    let tmin = data.t.iter().cloned().fold(f64::INFINITY, f64::min);
    let rmin = series.rates().into_iter().fold(f64::INFINITY, f64::min);
    let mut starts = Vec::new();
    for i in 0..N_SEEDS {
        let theta: f64 = (20f64.ln() + (600f64.ln() - 20f64.ln()) * i as f64 / 7.0).exp();
        // K set so the Raman term matches the largest rate at T_max
        let shape = (tmax / theta).powi(9) * transport_integral(8, theta / tmax)?;
        let k = rmax / shape.max(1e-300);
        let mut p = Vec::new();
        if include_direct {
            p.push((0.5 * rmin / tmin).ln());
        }
        p.push(k.ln());
        p.push(theta.ln());
        starts.push(p);
    }
    let sol = best_of(&problem, &starts)?;
    let (direct, rest) = if include_direct {
        (sol.params[0].exp(), &sol.params[1..])
    } else {
        (0.0, &sol.params[..])
    };
    let (k, theta) = (rest[0].exp(), rest[1].exp());
    // errors: J in log-parameters, then scale by the parameter values
    let cov = covariance(&sol.jacobian, sol.cost);
    let s = sigmas(&cov);
    let off = usize::from(include_direct);
    let ln_theta_err = s[off + 1];
    // C = K/θ⁹ ⇒ var(ln C) = var(ln K) − 18 cov + 81 var(ln θ)
    let var_ln_c = cov[(off, off)] - 18.0 * cov[(off, off + 1)] + 81.0 * cov[(off + 1, off + 1)];
    let c = k / theta.powi(9);
    let rmse_log = data.rmse_log(|t| direct * t + scaled_raman(t, k, theta));
    Ok(DebyeFit {
        direct_per_us_k: include_direct.then_some(direct),
        direct_err_per_us_k: include_direct.then(|| direct * s[0]),
        raman_coefficient_per_us_k9: c,
        raman_coefficient_err_per_us_k9: c * var_ln_c.max(0.0).sqrt(),
        debye_temperature_k: theta,
        debye_temperature_err_k: theta * ln_theta_err,
        rmse_log,
    })
}
