//! Corrections that turn measured vibrational spectra into normalized
//! G_T(E): background, Bose population, multiphonon, elastic line and
//! normalization, plus per-bin temperature interpolation.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::constants::KB_CM_PER_K;
use crate::error::{Error, Result};
use crate::grid::{resample, EnergyGrid, Provenance, Spectrum, SpectrumSet};
use crate::thermal::bose_reduced;

const MULTIPHONON_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionConfig {
    pub elastic_cutoff_cm: f64,
    /// Upper limit of the unit-normalization integral.
    pub normalization_cutoff_cm: f64,
    pub multiphonon_order: usize,
    pub multiphonon_tolerance: f64,
    /// Effective Debye–Waller strength w of the incoherent expansion;
    /// order k carries weight wᵏ/k!.
    pub debye_waller_strength: f64,
    /// Accept an elastic cutoff outside 10–20 cm⁻¹.
    pub allow_cutoff_override: bool,
    #[serde(skip)]
    pub background: Option<Spectrum>,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            elastic_cutoff_cm: 15.0,
            normalization_cutoff_cm: 600.0,
            multiphonon_order: 2,
            multiphonon_tolerance: 1e-4,
            debye_waller_strength: 0.1,
            allow_cutoff_override: false,
            background: None,
        }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        let ec = self.elastic_cutoff_cm;
        if !(ec > 0.0) {
            return Err(Error::invalid("elastic_cutoff_cm must be positive"));
        }
        if !self.allow_cutoff_override && !(10.0..=20.0).contains(&ec) {
            return Err(Error::invalid(format!(
                "elastic_cutoff_cm = {ec} outside 10–20 cm⁻¹ (set allow_cutoff_override)"
            )));
        }
        if !(self.normalization_cutoff_cm > ec) {
            return Err(Error::invalid(format!(
                "normalization_cutoff_cm = {} must exceed the elastic cutoff {ec}",
                self.normalization_cutoff_cm
            )));
        }
        if !(self.multiphonon_tolerance > 0.0) {
            return Err(Error::invalid("multiphonon_tolerance must be positive"));
        }
        if !(self.debye_waller_strength >= 0.0) {
            return Err(Error::invalid("debye_waller_strength must be non-negative"));
        }
        Ok(())
    }
}

pub fn subtract_background(spec: &Spectrum, bg: &Spectrum) -> Result<Spectrum> {
    let bg = resample(bg, &spec.grid)?;
    let v = spec
        .intensity
        .iter()
        .zip(&bg.intensity)
        .map(|(s, b)| (s - b).max(0.0))
        .collect();
    spec.with_intensity(v, Provenance::Corrected)
}

/// Divides out the thermal population factor n(E,T)+1 of the
/// energy-loss side.
pub fn correct_population(spec: &Spectrum) -> Result<Spectrum> {
    let t = spec.temperature_k;
    let mut skipped = 0;
    let v = spec
        .grid
        .centers()
        .iter()
        .zip(&spec.intensity)
        .map(|(&e, &g)| {
            if e <= 0.0 {
                skipped += 1;
                g
            } else {
                g / (bose_reduced(e / (KB_CM_PER_K * t)) + 1.0)
            }
        })
        .collect();
    if skipped > 0 {
        warn!("population correction skipped {skipped} bin(s) at E ≤ 0");
    }
    spec.with_intensity(v, Provenance::Corrected)
}

/// Deposits `mass` at energy `x` on a uniform grid (lowest edge `e0`,
/// width `h`), sharing it linearly between the two nearest bin centres.
fn deposit(out: &mut [f64], e0: f64, h: f64, x: f64, mass: f64) {
    let u = (x - e0) / h - 0.5;
    if u < -0.5 {
        return;
    }
    let i = u.floor();
    let frac = u - i;
    let i = i as isize;
    let n = out.len() as isize;
    if i >= 0 && i < n {
        out[i as usize] += mass * (1.0 - frac);
    } else if i == -1 {
        out[0] += mass * (1.0 - frac);
    }
    if i + 1 < n && i + 1 >= 0 {
        out[(i + 1) as usize] += mass * frac;
    }
}

/// Density of the convolution of two unit-mass densities on a uniform grid.
fn self_convolve(a: &[f64], b: &[f64], e0: f64, h: f64) -> Vec<f64> {
    let n = a.len();
    let mut mass = vec![0.0; n];
    for i in 0..n {
        if a[i] == 0.0 {
            continue;
        }
        let ei = e0 + (i as f64 + 0.5) * h;
        for j in 0..n {
            if b[j] == 0.0 {
                continue;
            }
            let ej = e0 + (j as f64 + 0.5) * h;
            deposit(&mut mass, e0, h, ei + ej, a[i] * b[j] * h * h);
        }
    }
    mass.iter().map(|m| m / h).collect()
}

/// Unit-mass densities P₁..P_order built from `g1` by repeated convolution.
fn convolution_powers(g1: &[f64], e0: f64, h: f64, order: usize) -> Vec<Vec<f64>> {
    let total: f64 = g1.iter().sum::<f64>() * h;
    let p1: Vec<f64> = g1.iter().map(|v| v / total).collect();
    let mut powers = vec![p1.clone()];
    for _ in 1..order {
        let next = self_convolve(powers.last().unwrap(), &p1, e0, h);
        powers.push(next);
    }
    powers
}

/// Strips orders 2..K of the incoherent multiphonon expansion.
///
/// The measured spectrum is modelled as `A·Σₖ (wᵏ/k!)·Pₖ` where `Pₖ` is
/// the unit-mass k-fold self-convolution of the one-phonon shape. Given
/// the configured `w`, the amplitude `A` is set so the model carries the
/// measured total intensity; the one-phonon estimate is refined until it
/// changes by less than the tolerance and is returned rescaled to the
/// measured total.
pub fn correct_multiphonon(spec: &Spectrum, cfg: &CorrectionConfig) -> Result<Spectrum> {
    if cfg.multiphonon_order < 2 || cfg.debye_waller_strength == 0.0 {
        return Ok(spec.clone());
    }
    let total = spec.integral();
    if total <= 0.0 {
        return spec.with_intensity(vec![0.0; spec.grid.len()], Provenance::Corrected);
    }
    let uniform = if spec.grid.is_uniform(1e-9) {
        spec.clone()
    } else {
        let g = EnergyGrid::uniform(spec.grid.min(), spec.grid.max(), spec.grid.len())?;
        resample(spec, &g)?
    };
    let e0 = uniform.grid.min();
    let h = uniform.grid.width(0);
    let measured = &uniform.intensity;
    let w = cfg.debye_waller_strength;
    let order = cfg.multiphonon_order;
    let mut weights = Vec::with_capacity(order);
    let mut wk = 1.0;
    for k in 1..=order {
        wk *= w / k as f64;
        weights.push(wk);
    }
    let weight_sum: f64 = weights.iter().sum();
    let amplitude = total / weight_sum;

    let mut g1 = measured.clone();
    let mut last_change = f64::INFINITY;
    for _ in 0..MULTIPHONON_MAX_ITERATIONS {
        let norm: f64 = g1.iter().sum::<f64>() * h;
        if norm <= 0.0 {
            break;
        }
        let powers = convolution_powers(&g1, e0, h, order);
        let next: Vec<f64> = measured
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let multi: f64 = (1..order)
                    .map(|k| amplitude * weights[k] * powers[k][i])
                    .sum();
                (s - multi).max(0.0)
            })
            .collect();
        let diff: f64 = next.iter().zip(&g1).map(|(a, b)| (a - b).abs()).sum();
        let scale: f64 = g1.iter().map(|v| v.abs()).sum::<f64>().max(1e-300);
        last_change = diff / scale;
        g1 = next;
        if last_change < cfg.multiphonon_tolerance {
            let norm: f64 = g1.iter().sum::<f64>() * h;
            let out: Vec<f64> = g1.iter().map(|v| v * total / norm).collect();
            let corrected = uniform.with_intensity(out, Provenance::Corrected)?;
            return if corrected.grid.same_as(&spec.grid) {
                Ok(corrected)
            } else {
                resample(&corrected, &spec.grid)
            };
        }
    }
    Err(Error::MultiphononNotConverged {
        iterations: MULTIPHONON_MAX_ITERATIONS,
        last_change,
        last_iterate: g1,
    })
}

/// Replaces bins below the elastic cutoff with a Debye tail A·E², A set
/// by value matching at the first bin at or above the cutoff.
pub fn remove_elastic_line(spec: &Spectrum, cfg: &CorrectionConfig) -> Result<Spectrum> {
    let cutoff = cfg.elastic_cutoff_cm;
    let centers = spec.grid.centers();
    if cutoff <= spec.grid.min() || cutoff >= spec.grid.max() {
        return Err(Error::invalid(format!(
            "elastic cutoff {cutoff} cm⁻¹ outside grid [{}, {}]",
            spec.grid.min(),
            spec.grid.max()
        )));
    }
    let Some(anchor) = centers.iter().position(|&e| e >= cutoff) else {
        return Err(Error::invalid("no bin centre above the elastic cutoff"));
    };
    let e_anchor = centers[anchor];
    let a = spec.intensity[anchor].max(0.0) / (e_anchor * e_anchor);
    let mut v = spec.intensity.clone();
    for (i, &e) in centers.iter().enumerate().take(anchor) {
        v[i] = a * e * e;
    }
    spec.with_intensity(v, Provenance::Corrected)
}

/// Scales the spectrum so ∫₀^{E_cutoff} G = 1; bins above the cutoff are
/// kept and scaled by the same factor.
pub fn normalize(spec: &Spectrum, cfg: &CorrectionConfig) -> Result<Spectrum> {
    let cutoff = cfg.normalization_cutoff_cm;
    if cutoff > spec.grid.max() * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "normalization cutoff {cutoff} cm⁻¹ above grid maximum {}",
            spec.grid.max()
        )));
    }
    let area = spec.integral_between(0.0, cutoff);
    if !(area > 0.0) {
        return Err(Error::invalid(format!(
            "spectrum at {} K has zero integral below {cutoff} cm⁻¹",
            spec.temperature_k
        )));
    }
    let v = spec.intensity.iter().map(|g| g / area).collect();
    let provenance = if spec.provenance == Provenance::Dos {
        Provenance::Dos
    } else {
        Provenance::Normalized
    };
    spec.with_intensity(v, provenance)
}

/// Fixed-order pipeline: background, population, multiphonon, elastic
/// line, normalization.
pub fn correct(spec: &Spectrum, cfg: &CorrectionConfig) -> Result<Spectrum> {
    cfg.validate()?;
    let is_dos = spec.provenance == Provenance::Dos;
    let mut s = match &cfg.background {
        Some(bg) => subtract_background(spec, bg)?,
        None => spec.clone(),
    };
    s = correct_population(&s)?;
    s = correct_multiphonon(&s, cfg)?;
    s = remove_elastic_line(&s, cfg)?;
    if is_dos {
        s.provenance = Provenance::Dos;
    }
    normalize(&s, cfg)
}

pub fn correct_set(set: &SpectrumSet, cfg: &CorrectionConfig) -> Result<SpectrumSet> {
    use rayon::prelude::*;
    let corrected = set
        .spectra()
        .par_iter()
        .map(|s| correct(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    SpectrumSet::new(corrected)
}

pub fn normalize_set(set: &SpectrumSet, cfg: &CorrectionConfig) -> Result<SpectrumSet> {
    set.map(|s| normalize(s, cfg))
}

/// Per-bin linear interpolation in temperature between the bracketing
/// measured spectra.
pub fn interpolate_temperature(set: &SpectrumSet, t: f64) -> Result<Spectrum> {
    let (lo, hi) = set.temperature_range();
    if !(t >= lo && t <= hi) {
        return Err(Error::Extrapolation {
            t,
            min: lo,
            max: hi,
        });
    }
    let spectra = set.spectra();
    let k = spectra.partition_point(|s| s.temperature_k < t);
    if spectra[k].temperature_k == t {
        return Ok(spectra[k].clone());
    }
    let (a, b) = (&spectra[k - 1], &spectra[k]);
    let f = (t - a.temperature_k) / (b.temperature_k - a.temperature_k);
    let v = a
        .intensity
        .iter()
        .zip(&b.intensity)
        .map(|(x, y)| x + f * (y - x))
        .collect();
    Spectrum::new(a.grid.clone(), v, t, a.provenance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> EnergyGrid {
        EnergyGrid::uniform(0.0, 800.0, 800).unwrap()
    }

    fn gaussian(e: f64, c: f64, sigma: f64, area: f64) -> f64 {
        area * (-(e - c).powi(2) / (2.0 * sigma * sigma)).exp()
            / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    }

    fn peaks(t: f64) -> Spectrum {
        let g = grid();
        let v = g
            .centers()
            .iter()
            .map(|&e| gaussian(e, 40.0, 5.0, 1.0) + gaussian(e, 250.0, 8.0, 0.5) + 0.01)
            .collect();
        Spectrum::new(g, v, t, Provenance::Raw).unwrap()
    }

    #[test]
    fn background_examples() {
        let s = peaks(10.0);
        let zero = s
            .with_intensity(vec![0.0; s.grid.len()], Provenance::Raw)
            .unwrap();
        assert_eq!(
            subtract_background(&s, &zero).unwrap().intensity,
            s.intensity
        );
        assert!(subtract_background(&s, &s)
            .unwrap()
            .intensity
            .iter()
            .all(|&v| v == 0.0));

        let g = EnergyGrid::uniform(0.0, 10.0, 10).unwrap();
        let spiky = Spectrum::new(
            g.clone(),
            vec![0.0, 1.0, 0.05, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            10.0,
            Provenance::Raw,
        )
        .unwrap();
        let flat = Spectrum::new(g, vec![0.1; 10], 10.0, Provenance::Raw).unwrap();
        let out = subtract_background(&spiky, &flat).unwrap();
        assert!((out.intensity[1] - 0.9).abs() < 1e-12);
        assert!((out.intensity[4] - 0.9).abs() < 1e-12);
        assert_eq!(out.intensity[2], 0.0);
        assert!(out.is_non_negative());
    }

    #[test]
    fn background_on_disjoint_grid_errors() {
        let s = peaks(10.0);
        let far = Spectrum::new(
            EnergyGrid::uniform(900.0, 1000.0, 5).unwrap(),
            vec![1.0; 5],
            10.0,
            Provenance::Raw,
        )
        .unwrap();
        assert!(matches!(
            subtract_background(&s, &far),
            Err(Error::DisjointGrids)
        ));
    }

    #[test]
    fn population_examples() {
        let g = EnergyGrid::new(vec![42.0, 43.0]).unwrap();
        let s = Spectrum::new(g, vec![1.0], 20.0, Provenance::Raw).unwrap();
        let c = correct_population(&s).unwrap();
        assert!((1.0 / c.intensity[0] - 1.04933).abs() < 1e-4);

        let cold = peaks(0.01);
        let c = correct_population(&cold).unwrap();
        for (a, b) in c.intensity.iter().zip(&cold.intensity) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }

        let warm = peaks(150.0);
        let c = correct_population(&warm).unwrap();
        let back: Vec<f64> = c
            .grid
            .centers()
            .iter()
            .zip(&c.intensity)
            .map(|(&e, &v)| v * (bose_reduced(e / (KB_CM_PER_K * 150.0)) + 1.0))
            .collect();
        for (a, b) in back.iter().zip(&warm.intensity) {
            assert!((a - b).abs() <= 1e-14 * b.abs());
        }
    }

    #[test]
    fn multiphonon_order_zero_and_zero_spectrum() {
        let s = peaks(10.0);
        let cfg = CorrectionConfig {
            multiphonon_order: 0,
            ..Default::default()
        };
        assert_eq!(
            correct_multiphonon(&s, &cfg).unwrap().intensity,
            s.intensity
        );
        let z = s
            .with_intensity(vec![0.0; s.grid.len()], Provenance::Raw)
            .unwrap();
        let out = correct_multiphonon(&z, &CorrectionConfig::default()).unwrap();
        assert!(out.intensity.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn multiphonon_removes_two_phonon_image() {
        // one-phonon Gaussian at E0, two-phonon image built analytically:
        // the self-convolution of a Gaussian is a Gaussian at 2E0, √2 wider
        let (e0, sigma, w) = (120.0, 4.0, 0.3);
        let g = grid();
        let amp = 1.0;
        let v: Vec<f64> = g
            .centers()
            .iter()
            .map(|&e| {
                amp * w * gaussian(e, e0, sigma, 1.0)
                    + amp * w * w / 2.0 * gaussian(e, 2.0 * e0, sigma * 2f64.sqrt(), 1.0)
            })
            .collect();
        let s = Spectrum::new(g, v, 10.0, Provenance::Corrected).unwrap();
        let cfg = CorrectionConfig {
            debye_waller_strength: w,
            multiphonon_tolerance: 1e-8,
            ..Default::default()
        };
        let out = correct_multiphonon(&s, &cfg).unwrap();
        let before = s.integral_between(2.0 * e0 - 25.0, 2.0 * e0 + 25.0);
        let after = out.integral_between(2.0 * e0 - 25.0, 2.0 * e0 + 25.0);
        assert!(after < 0.1 * before, "before {before} after {after}");
        assert!(((out.integral() - s.integral()) / s.integral()).abs() < 1e-8);
    }

    #[test]
    fn multiphonon_conserves_intensity() {
        let s = correct_population(&peaks(100.0)).unwrap();
        let cfg = CorrectionConfig {
            multiphonon_order: 3,
            ..Default::default()
        };
        let out = correct_multiphonon(&s, &cfg).unwrap();
        assert!(((out.integral() - s.integral()) / s.integral()).abs() < cfg.multiphonon_tolerance);
        assert!(out.is_non_negative());
    }

    #[test]
    fn elastic_line_examples() {
        let cfg = CorrectionConfig::default();
        let g = grid();
        let debye = Spectrum::new(
            g.clone(),
            g.centers().iter().map(|e| 1e-3 * e * e).collect(),
            10.0,
            Provenance::Corrected,
        )
        .unwrap();
        let out = remove_elastic_line(&debye, &cfg).unwrap();
        for (a, b) in out.intensity.iter().zip(&debye.intensity) {
            assert!((a - b).abs() <= 1e-12 * b.max(1e-12));
        }

        let mut spiky = peaks(10.0);
        spiky.intensity[0] = 1e4;
        let out = remove_elastic_line(&spiky, &cfg).unwrap();
        assert!(out.intensity[0] < 1.0);
        let anchor = out.grid.centers().iter().position(|&e| e >= 15.0).unwrap();
        // continuity: last replaced bin within one bin's density of the anchor
        let jump = (out.intensity[anchor] - out.intensity[anchor - 1]).abs();
        assert!(jump <= out.intensity[anchor]);
        assert!(out.intensity.iter().take(anchor).all(|&v| v >= 0.0));
    }

    #[test]
    fn elastic_cutoff_outside_grid() {
        let g = EnergyGrid::uniform(20.0, 100.0, 80).unwrap();
        let s = Spectrum::new(g, vec![1.0; 80], 10.0, Provenance::Raw).unwrap();
        assert!(remove_elastic_line(&s, &CorrectionConfig::default()).is_err());
    }

    #[test]
    fn normalize_examples() {
        let cfg = CorrectionConfig::default();
        let g = EnergyGrid::uniform(0.0, 600.0, 60).unwrap();
        let s = Spectrum::new(g, vec![2.0; 60], 10.0, Provenance::Raw).unwrap();
        let n = normalize(&s, &cfg).unwrap();
        assert!(n.intensity.iter().all(|v| (v - 1.0 / 600.0).abs() < 1e-15));
        let again = normalize(&n, &cfg).unwrap();
        for (a, b) in again.intensity.iter().zip(&n.intensity) {
            assert!((a - b).abs() < 1e-15);
        }

        let s = peaks(10.0);
        let n600 = normalize(&s, &cfg).unwrap();
        let n380 = normalize(
            &s,
            &CorrectionConfig {
                normalization_cutoff_cm: 380.0,
                ..Default::default()
            },
        )
        .unwrap();
        let ratio = s.integral_between(0.0, 600.0) / s.integral_between(0.0, 380.0);
        assert!(ratio > 1.0);
        let i40 = 40;
        assert!((n380.intensity[i40] / n600.intensity[i40] - ratio).abs() < 1e-12);
    }

    #[test]
    fn normalize_errors() {
        let g = EnergyGrid::uniform(0.0, 600.0, 60).unwrap();
        let z = Spectrum::new(g.clone(), vec![0.0; 60], 10.0, Provenance::Raw).unwrap();
        assert!(normalize(&z, &CorrectionConfig::default()).is_err());
        let s = Spectrum::new(g, vec![1.0; 60], 10.0, Provenance::Raw).unwrap();
        let cfg = CorrectionConfig {
            normalization_cutoff_cm: 700.0,
            ..Default::default()
        };
        assert!(normalize(&s, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CorrectionConfig::default().validate().is_ok());
        let bad = CorrectionConfig {
            elastic_cutoff_cm: 30.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let ok = CorrectionConfig {
            elastic_cutoff_cm: 30.0,
            allow_cutoff_override: true,
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn full_pipeline_invariants() {
        let cfg = CorrectionConfig::default();
        let mut s = peaks(200.0);
        s.intensity[3] = 50.0;
        let out = correct(&s, &cfg).unwrap();
        assert!(out.is_non_negative());
        assert!((out.integral_between(0.0, 600.0) - 1.0).abs() < 1e-12);
        let again = normalize(&out, &cfg).unwrap();
        for (a, b) in again.intensity.iter().zip(&out.intensity) {
            assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
        }
    }

    #[test]
    fn interpolation_examples() {
        let g = EnergyGrid::uniform(0.0, 2.0, 2).unwrap();
        let a = Spectrum::new(g.clone(), vec![0.0, 3.0], 5.0, Provenance::Normalized).unwrap();
        let b = Spectrum::new(g, vec![1.0, 3.0], 25.0, Provenance::Normalized).unwrap();
        let set = SpectrumSet::new(vec![a.clone(), b]).unwrap();
        assert_eq!(interpolate_temperature(&set, 5.0).unwrap(), a);
        let mid = interpolate_temperature(&set, 10.0).unwrap();
        assert!((mid.intensity[0] - 0.25).abs() < 1e-15);
        assert_eq!(mid.intensity[1], 3.0);
        assert!(matches!(
            interpolate_temperature(&set, 30.0),
            Err(Error::Extrapolation { .. })
        ));
    }
}
