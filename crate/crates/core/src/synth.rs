//! Forward simulators with known ground truth: vibrational spectra,
//! relaxation-rate series and recovery traces.
//!
//! Every generator is a pure function of its parameters and seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::grid::{EnergyGrid, Provenance, Spectrum, SpectrumSet};
use crate::ins::{normalize, CorrectionConfig};
use crate::relax::{
    stretched_exponential, Method, Orientation, RatePoint, RateSeries, RecoveryTrace,
};
use crate::spc::{forward_rate, LambdaProfile, SpectrumMode, MAX_PHONON_ENERGY_CM};

/// Name of the random generator recorded in run metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPeak {
    pub center_cm: f64,
    pub fwhm_cm: f64,
    /// Integrated weight before normalization.
    pub weight: f64,
    /// Center shift per kelvin above the coldest temperature (negative softens).
    #[serde(default)]
    pub shift_cm_per_k: f64,
    /// FWHM increase per kelvin above the coldest temperature.
    #[serde(default)]
    pub broadening_cm_per_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub peaks: Vec<SynthPeak>,
    /// A in A·E² below the elastic cutoff.
    #[serde(default)]
    pub debye_tail_amplitude: f64,
    /// Flat density added across the whole grid.
    #[serde(default)]
    pub flat_background: f64,
    pub temperatures_k: Vec<f64>,
    pub grid_min_cm: f64,
    pub grid_max_cm: f64,
    pub grid_bins: usize,
    #[serde(default)]
    pub seed: u64,
    /// Relative Gaussian noise per bin (0 for noiseless).
    #[serde(default)]
    pub noise_rel: f64,
}

const TAIL_CUTOFF_CM: f64 = 15.0;

impl SynthSpec {
    /// Two bands separated near 185 cm⁻¹ on a weak continuum, with mild
    /// softening; the reference fixture for the coupling fits.
    pub fn two_band() -> Self {
        let peak = |c: f64, w: f64, a: f64| SynthPeak {
            center_cm: c,
            fwhm_cm: w,
            weight: a,
            shift_cm_per_k: -0.005,
            broadening_cm_per_k: 0.01,
        };
        Self {
            peaks: vec![
                peak(35.0, 20.0, 1.0),
                peak(110.0, 30.0, 0.6),
                peak(260.0, 25.0, 0.8),
                peak(400.0, 40.0, 0.5),
            ],
            debye_tail_amplitude: 2e-4,
            flat_background: 3e-4,
            temperatures_k: vec![5.0, 25.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0],
            grid_min_cm: 0.0,
            grid_max_cm: 600.0,
            grid_bins: 600,
            seed: 0,
            noise_rel: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.peaks.iter().any(|p| !(p.weight >= 0.0)) {
            return Err(Error::invalid("peak weights must be non-negative"));
        }
        if self.peaks.iter().any(|p| !(p.fwhm_cm > 0.0)) {
            return Err(Error::invalid("peak FWHM must be positive"));
        }
        if self.temperatures_k.is_empty() || self.temperatures_k.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::invalid(
                "temperatures must be non-empty and positive",
            ));
        }
        if !(self.debye_tail_amplitude >= 0.0
            && self.flat_background >= 0.0
            && self.noise_rel >= 0.0)
        {
            return Err(Error::invalid(
                "tail, background and noise must be non-negative",
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<EnergyGrid> {
        EnergyGrid::uniform(self.grid_min_cm, self.grid_max_cm, self.grid_bins)
    }
}

fn gaussian_bin_average(lo: f64, hi: f64, center: f64, fwhm: f64) -> f64 {
    let s = fwhm / (8.0 * std::f64::consts::LN_2).sqrt() * std::f64::consts::SQRT_2;
    0.5 * (erf((hi - center) / s) - erf((lo - center) / s)) / (hi - lo)
}

/// One spectrum per temperature, normalized to unit area up to 600 cm⁻¹
/// (or the grid end when lower).
pub fn generate_spectrum_set(spec: &SynthSpec) -> Result<SpectrumSet> {
    spec.validate()?;
    let grid = spec.grid()?;
    let t_ref = spec
        .temperatures_k
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let cfg = CorrectionConfig {
        normalization_cutoff_cm: MAX_PHONON_ENERGY_CM.min(grid.max()),
        allow_cutoff_override: true,
        ..Default::default()
    };
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = rng(spec.seed);
    let mut temps = spec.temperatures_k.clone();
    temps.sort_by(f64::total_cmp);
    let spectra = temps
        .iter()
        .map(|&t| {
            let dt = t - t_ref;
            let edges = grid.edges();
            let v: Vec<f64> = (0..grid.len())
                .map(|i| {
                    let (lo, hi) = (edges[i], edges[i + 1]);
                    let e = grid.centers()[i];
                    let mut g: f64 = spec
                        .peaks
                        .iter()
                        .map(|p| {
                            let c = p.center_cm + p.shift_cm_per_k * dt;
                            let w = (p.fwhm_cm + p.broadening_cm_per_k * dt).max(1e-6);
                            p.weight * gaussian_bin_average(lo, hi, c, w)
                        })
                        .sum();
                    g += spec.flat_background;
                    if e < TAIL_CUTOFF_CM && e > 0.0 {
                        g += spec.debye_tail_amplitude * e * e;
                    }
                    if spec.noise_rel > 0.0 {
                        g *= 1.0 + spec.noise_rel * noise.sample(&mut rng);
                    }
                    g.max(0.0)
                })
                .collect();
            normalize(
                &Spectrum::new(grid.clone(), v, t, Provenance::Normalized)?,
                &cfg,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    SpectrumSet::new(spectra)
}

/// Rates from the windowed coupling model (plus an optional direct term)
/// with multiplicative lognormal noise of log-sigma `noise_rel`.
pub fn generate_rate_series(
    profile: &LambdaProfile,
    set: &SpectrumSet,
    temperatures_k: &[f64],
    noise_rel: f64,
    seed: u64,
    direct_per_us_k: Option<f64>,
) -> Result<RateSeries> {
    if !(noise_rel >= 0.0) {
        return Err(Error::invalid("noise_rel must be non-negative"));
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = rng(seed);
    let points = temperatures_k
        .iter()
        .map(|&t| {
            let clean = forward_rate(profile, set, t, SpectrumMode::Interpolated)?
                + direct_per_us_k.unwrap_or(0.0) * t;
            let z = noise.sample(&mut rng);
            let rate = if noise_rel > 0.0 {
                clean * (noise_rel * z).exp()
            } else {
                clean
            };
            Ok(RatePoint {
                temperature_k: t,
                rate_per_us: rate,
                rate_err_per_us: (noise_rel > 0.0).then_some(rate * noise_rel),
                orientation: Orientation::Unspecified,
                method: Method::Inversion,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RateSeries::new("synthetic", points)
}

/// Rates from an arbitrary model T ↦ rate with the same noise contract.
pub fn generate_model_rates(
    model: impl Fn(f64) -> f64,
    temperatures_k: &[f64],
    noise_rel: f64,
    seed: u64,
) -> Result<RateSeries> {
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = rng(seed);
    let points = temperatures_k
        .iter()
        .map(|&t| {
            let z = noise.sample(&mut rng);
            let rate = model(t)
                * if noise_rel > 0.0 {
                    (noise_rel * z).exp()
                } else {
                    1.0
                };
            RatePoint {
                rate_err_per_us: (noise_rel > 0.0).then_some(rate * noise_rel),
                ..RatePoint::new(t, rate)
            }
        })
        .collect();
    RateSeries::new("synthetic", points)
}

pub const TRACE_POINTS: usize = 64;

/// Recovery trace on 64 log-spaced delays over [T1/50, 10·T1] with
/// additive Gaussian noise of standard deviation `noise`.
pub fn generate_recovery_trace(
    t1_us: f64,
    beta: f64,
    kind: Method,
    noise: f64,
    seed: u64,
) -> Result<RecoveryTrace> {
    if !(t1_us > 0.0) {
        return Err(Error::invalid("T1 must be positive"));
    }
    if !(0.5..=1.5).contains(&beta) {
        return Err(Error::invalid(format!("beta = {beta} outside [0.5, 1.5]")));
    }
    if !(noise >= 0.0) {
        return Err(Error::invalid("noise must be non-negative"));
    }
    let (lo, hi) = ((t1_us / 50.0).ln(), (10.0 * t1_us).ln());
    let delays: Vec<f64> = (0..TRACE_POINTS)
        .map(|i| (lo + (hi - lo) * i as f64 / (TRACE_POINTS - 1) as f64).exp())
        .collect();
    let amplitude = match kind {
        Method::Inversion => -2.0,
        Method::Saturation => -1.0,
    };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = rng(seed);
    let signal = delays
        .iter()
        .map(|&t| {
            let clean = stretched_exponential(t, 1.0, amplitude, t1_us, beta);
            clean + noise * normal.sample(&mut rng)
        })
        .collect();
    RecoveryTrace::new(delays, signal, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relax::fit_recovery_trace;

    #[test]
    fn unshifted_peak_is_temperature_independent() {
        let spec = SynthSpec {
            peaks: vec![SynthPeak {
                center_cm: 100.0,
                fwhm_cm: 10.0,
                weight: 1.0,
                shift_cm_per_k: 0.0,
                broadening_cm_per_k: 0.0,
            }],
            temperatures_k: vec![10.0, 100.0, 300.0],
            ..SynthSpec::two_band()
        };
        let set = generate_spectrum_set(&spec).unwrap();
        let s = set.spectra();
        assert_eq!(s[0].intensity, s[1].intensity);
        assert_eq!(s[1].intensity, s[2].intensity);
    }

    #[test]
    fn normalized_at_every_temperature() {
        let set = generate_spectrum_set(&SynthSpec::two_band()).unwrap();
        for s in set.spectra() {
            assert!((s.integral_between(0.0, 600.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_series_noiseless_and_deterministic() {
        let set = generate_spectrum_set(&SynthSpec::two_band()).unwrap();
        let p = LambdaProfile::new(vec![0.0, 185.0, 600.0], vec![0.068, 127.0], None).unwrap();
        let temps = [20.0, 80.0, 200.0];
        let clean = generate_rate_series(&p, &set, &temps, 0.0, 1, None).unwrap();
        for (pt, &t) in clean.points().iter().zip(&temps) {
            let want = forward_rate(&p, &set, t, SpectrumMode::Interpolated).unwrap();
            assert_eq!(pt.rate_per_us, want);
        }
        let a = generate_rate_series(&p, &set, &temps, 0.05, 7, None).unwrap();
        let b = generate_rate_series(&p, &set, &temps, 0.05, 7, None).unwrap();
        let bits = |s: &RateSeries| s.rates().iter().map(|r| r.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = generate_rate_series(&p, &set, &temps, 0.05, 8, None).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn saturation_at_t1() {
        // the trace grid does not sample exactly t = T1; check the model
        assert!((stretched_exponential(50.0, 1.0, -1.0, 50.0, 1.0) - 0.6321).abs() < 1e-4);
        let tr = generate_recovery_trace(50.0, 1.0, Method::Saturation, 0.0, 0).unwrap();
        assert_eq!(tr.delays_us.len(), TRACE_POINTS);
        assert!((tr.delays_us[0] - 1.0).abs() < 1e-12);
        assert!((tr.delays_us[TRACE_POINTS - 1] - 500.0).abs() < 1e-9);
    }

    #[test]
    fn noiseless_trace_round_trip() {
        let tr = generate_recovery_trace(100.0, 1.0, Method::Inversion, 0.0, 0).unwrap();
        let fit = fit_recovery_trace(&tr).unwrap();
        assert!(((fit.t1_us - 100.0) / 100.0).abs() < 1e-3);
    }

    #[test]
    fn stretched_noisy_traces() {
        let mut errs: Vec<f64> = (0..100)
            .map(|seed| {
                let tr = generate_recovery_trace(50.0, 0.8, Method::Inversion, 0.02, seed).unwrap();
                let fit = fit_recovery_trace(&tr).unwrap();
                ((fit.t1_us - 50.0) / 50.0).abs()
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        let within = errs.iter().filter(|e| **e < 0.03).count();
        assert!(within >= 95, "{within}/100 within 3%");
        assert!(errs[50] < 0.03);
    }

    #[test]
    fn invalid_inputs() {
        assert!(generate_recovery_trace(-1.0, 1.0, Method::Inversion, 0.0, 0).is_err());
        assert!(generate_recovery_trace(1.0, 2.0, Method::Inversion, 0.0, 0).is_err());
        let mut s = SynthSpec::two_band();
        s.peaks[0].fwhm_cm = 0.0;
        assert!(generate_spectrum_set(&s).is_err());
    }
}
