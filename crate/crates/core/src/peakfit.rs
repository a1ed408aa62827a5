//! Single-peak fits on a linear baseline and temperature tracking.
//!
//! Peaks are parameterized by height, center and FWHM. The pseudo-Voigt
//! mixes a Lorentzian and a Gaussian of the same FWHM with fraction
//! η = sin²u, which keeps η in [0, 1] without bounds.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{covariance, levenberg_marquardt, sigmas, LeastSquares, LmOptions, LmSolution};

const FOUR_LN2: f64 = 4.0 * std::f64::consts::LN_2;

/// Minimum number of samples inside a fit window.
pub const MIN_WINDOW_POINTS: usize = 7;
/// A fitted height at or below this multiple of the residual rms is noise.
pub const DETECTION_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakProfile {
    #[default]
    Gaussian,
    PseudoVoigt,
}

pub fn gaussian(x: f64, center: f64, fwhm: f64) -> f64 {
    (-FOUR_LN2 * ((x - center) / fwhm).powi(2)).exp()
}

pub fn lorentzian(x: f64, center: f64, fwhm: f64) -> f64 {
    1.0 / (1.0 + 4.0 * ((x - center) / fwhm).powi(2))
}

/// Unit-height pseudo-Voigt with mixing fraction `eta` (1 = Lorentzian).
pub fn pseudo_voigt(x: f64, center: f64, fwhm: f64, eta: f64) -> f64 {
    eta * lorentzian(x, center, fwhm) + (1.0 - eta) * gaussian(x, center, fwhm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakFit {
    pub center: f64,
    pub center_err: f64,
    pub fwhm: f64,
    pub fwhm_err: f64,
    /// Peak height above the baseline.
    pub height: f64,
    pub height_err: f64,
    pub eta: Option<f64>,
    pub eta_err: Option<f64>,
    pub baseline_intercept: f64,
    pub baseline_slope: f64,
    pub rms_residual: f64,
}

impl PeakFit {
    /// Whether the peak stands above the residual noise.
    pub fn is_detected(&self) -> bool {
        self.height > DETECTION_THRESHOLD * self.rms_residual
    }
}

struct PeakProblem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    /// Baseline is expanded about this point for conditioning.
    x0: f64,
    profile: PeakProfile,
}

impl PeakProblem<'_> {
    // p = [height, center, ln fwhm, b0, b1, (u)]
    fn eval(&self, p: &[f64], x: f64) -> f64 {
        let fwhm = p[2].exp();
        let shape = match self.profile {
            PeakProfile::Gaussian => gaussian(x, p[1], fwhm),
            PeakProfile::PseudoVoigt => pseudo_voigt(x, p[1], fwhm, p[5].sin().powi(2)),
        };
        p[0] * shape + p[3] + p[4] * (x - self.x0)
    }
}

impl LeastSquares for PeakProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.x.len()
    }
    fn n_params(&self) -> usize {
        match self.profile {
            PeakProfile::Gaussian => 5,
            PeakProfile::PseudoVoigt => 6,
        }
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, (&x, &y)) in self.x.iter().zip(self.y).enumerate() {
            out[i] = self.eval(p, x) - y;
        }
    }
}

/// Fits one peak plus a linear baseline to the samples (x ascending).
pub fn fit_peak(x: &[f64], y: &[f64], profile: PeakProfile) -> Result<PeakFit> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < MIN_WINDOW_POINTS {
        return Err(Error::invalid(format!(
            "peak window has {} points, need at least {MIN_WINDOW_POINTS}",
            x.len()
        )));
    }
    let n = x.len();
    let x0 = 0.5 * (x[0] + x[n - 1]);
    let span = x[n - 1] - x[0];
    // baseline through the averaged end pairs
    let (xl, yl) = (0.5 * (x[0] + x[1]), 0.5 * (y[0] + y[1]));
    let (xr, yr) = (0.5 * (x[n - 2] + x[n - 1]), 0.5 * (y[n - 2] + y[n - 1]));
    let slope = (yr - yl) / (xr - xl);
    let base = |v: f64| yl + slope * (v - xl);
    let resid: Vec<f64> = x.iter().zip(y).map(|(&a, &b)| b - base(a)).collect();
    let k = resid
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap();
    let height0 = resid[k];
    let above = resid.iter().filter(|&&r| r > 0.5 * height0).count().max(2);
    let dx = span / (n - 1) as f64;
    let fwhm0 = (above as f64 * dx).clamp(2.0 * dx, 0.8 * span);

    let problem = PeakProblem { x, y, x0, profile };
    let mut starts = Vec::new();
    for w in [1.0, 0.5, 2.0] {
        let p = vec![height0, x[k], (fwhm0 * w).ln(), base(x0), slope];
        match profile {
            PeakProfile::Gaussian => starts.push(p),
            PeakProfile::PseudoVoigt => {
                for eta in [0.2f64, 0.5, 0.8] {
                    let mut q = p.clone();
                    q.push(eta.sqrt().asin());
                    starts.push(q);
                }
            }
        }
    }
    let opts = LmOptions::default();
    let mut best: Option<LmSolution> = None;
    let mut first_err = None;
    for s in &starts {
        match levenberg_marquardt(&problem, s, &opts) {
            Ok(sol) if sol.cost.is_finite() => {
                if best.as_ref().is_none_or(|b| sol.cost < b.cost) {
                    best = Some(sol);
                }
            }
            Ok(_) => {}
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let sol = best.ok_or_else(|| {
        first_err.unwrap_or_else(|| Error::NotConverged {
            iterations: 0,
            cost: f64::NAN,
            reason: "peak fit produced no finite objective".into(),
        })
    })?;
    let p = &sol.params;
    let cov = covariance(&sol.jacobian, sol.cost);
    let s = sigmas(&cov);
    let fwhm = p[2].exp();
    let (eta, eta_err) = match profile {
        PeakProfile::Gaussian => (None, None),
        PeakProfile::PseudoVoigt => (
            Some(p[5].sin().powi(2)),
            Some((2.0 * p[5]).sin().abs() * s[5]),
        ),
    };
    Ok(PeakFit {
        center: p[1],
        center_err: s[1],
        fwhm,
        fwhm_err: fwhm * s[2],
        height: p[0],
        height_err: s[0],
        eta,
        eta_err,
        baseline_intercept: p[3] - p[4] * x0,
        baseline_slope: p[4],
        rms_residual: sol.rms(),
    })
}

/// Where to look for a peak: `center ± half_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSeed {
    #[serde(default)]
    pub label: Option<String>,
    pub center: f64,
    pub half_width: f64,
}

impl PeakSeed {
    pub fn new(center: f64, half_width: f64) -> Self {
        Self {
            label: None,
            center,
            half_width,
        }
    }

    pub fn overlaps(&self, other: &PeakSeed) -> bool {
        (self.center - other.center).abs() < self.half_width + other.half_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackedPoint {
    pub temperature_k: f64,
    pub fit: PeakFit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Track {
    pub label: Option<String>,
    pub points: Vec<TrackedPoint>,
    pub missing_temperatures_k: Vec<f64>,
}

/// One temperature's samples, x ascending.
pub struct Samples<'a> {
    pub temperature_k: f64,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

fn window<'a>(s: &Samples<'a>, lo: f64, hi: f64) -> (&'a [f64], &'a [f64]) {
    let a = s.x.partition_point(|&v| v < lo);
    let b = s.x.partition_point(|&v| v <= hi);
    (&s.x[a..b], &s.y[a..b])
}

/// Follows one peak through temperature (ascending), recentering the
/// window on the last detected position. Undetected points are recorded
/// as missing.
pub fn track_peak(samples: &[Samples], seed: &PeakSeed, profile: PeakProfile) -> Result<Track> {
    if !(seed.half_width > 0.0) {
        return Err(Error::invalid("seed half-width must be positive"));
    }
    for s in samples {
        let (wx, _) = window(
            s,
            seed.center - seed.half_width,
            seed.center + seed.half_width,
        );
        if wx.len() < MIN_WINDOW_POINTS {
            return Err(Error::invalid(format!(
                "seed window {:.4} ± {:.4} holds {} points at T = {} K, need {MIN_WINDOW_POINTS}",
                seed.center,
                seed.half_width,
                wx.len(),
                s.temperature_k
            )));
        }
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        samples[a]
            .temperature_k
            .total_cmp(&samples[b].temperature_k)
    });

    let mut center = seed.center;
    let mut points = Vec::new();
    let mut missing = Vec::new();
    for &k in &order {
        let s = &samples[k];
        let (lo, hi) = (center - seed.half_width, center + seed.half_width);
        let (wx, wy) = window(s, lo, hi);
        let accepted = if wx.len() >= MIN_WINDOW_POINTS {
            fit_peak(wx, wy, profile)
                .ok()
                .filter(|f| f.is_detected() && f.center >= lo && f.center <= hi)
        } else {
            None
        };
        match accepted {
            Some(fit) => {
                center = fit.center;
                points.push(TrackedPoint {
                    temperature_k: s.temperature_k,
                    fit,
                });
            }
            None => missing.push(s.temperature_k),
        }
    }
    if points.is_empty() {
        warn!(
            "no peak detected near {} at any temperature",
            seed.label
                .as_deref()
                .unwrap_or(&format!("{:.4}", seed.center))
        );
    }
    Ok(Track {
        label: seed.label.clone(),
        points,
        missing_temperatures_k: missing,
    })
}
