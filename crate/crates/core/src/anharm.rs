//! Phonon peak positions and widths versus temperature, and quasiharmonic
//! Grüneisen parameters from the fractional energy shift per fractional
//! volume change.
//!
//! Sign convention: γ > 0 means the mode softens as the lattice expands,
//! ΔE/E = −γ·ΔV/V.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpectrumSet;
use crate::lattice::VolumeTrack;
use crate::peakfit::{track_peak, PeakProfile, PeakSeed, Samples};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhononFitOptions {
    pub profile: PeakProfile,
    /// Instrument FWHM subtracted in quadrature from fitted widths.
    pub resolution_fwhm_cm: Option<f64>,
}

impl Default for PhononFitOptions {
    fn default() -> Self {
        Self {
            profile: PeakProfile::PseudoVoigt,
            resolution_fwhm_cm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhononPeakPoint {
    pub temperature_k: f64,
    pub center_cm: f64,
    pub center_err_cm: f64,
    pub fwhm_cm: f64,
    pub fwhm_err_cm: f64,
    pub height: f64,
    pub eta: Option<f64>,
    /// center(T) − center at the coldest fitted temperature.
    pub delta_center_cm: f64,
    pub delta_fwhm_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhononPeakTrack {
    pub label: Option<String>,
    pub profile: PeakProfile,
    pub points: Vec<PhononPeakPoint>,
    pub missing_temperatures_k: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PhononPeakTrack {
    pub fn base(&self) -> Option<&PhononPeakPoint> {
        self.points.first()
    }
}

/// Tracks each seeded phonon peak through the spectrum set.
pub fn fit_phonon_peaks(
    set: &SpectrumSet,
    seeds: &[PeakSeed],
    opts: &PhononFitOptions,
) -> Result<Vec<PhononPeakTrack>> {
    if let Some(r) = opts.resolution_fwhm_cm {
        if !(r >= 0.0) {
            return Err(Error::invalid("resolution_fwhm_cm must be non-negative"));
        }
    }
    let centers = set.grid().centers().to_vec();
    let samples: Vec<Samples> = set
        .spectra()
        .iter()
        .map(|s| Samples {
            temperature_k: s.temperature_k,
            x: &centers,
            y: &s.intensity,
        })
        .collect();

    let overlap_warnings: Vec<Vec<String>> = seeds
        .iter()
        .enumerate()
        .map(|(i, a)| {
            seeds
                .iter()
                .enumerate()
                .filter(|&(j, b)| j != i && a.overlaps(b))
                .map(|(_, b)| {
                    let msg = format!(
                        "unresolved overlap between windows at {:.1} and {:.1} cm⁻¹",
                        a.center, b.center
                    );
                    warn!("{msg}");
                    msg
                })
                .collect()
        })
        .collect();

    seeds
        .par_iter()
        .zip(overlap_warnings)
        .map(|(seed, warnings)| {
            let track = track_peak(&samples, seed, opts.profile)?;
            let width = |w: f64| match opts.resolution_fwhm_cm {
                Some(r) if w > r => (w * w - r * r).sqrt(),
                Some(_) => 0.0,
                None => w,
            };
            let (c0, w0) = track
                .points
                .first()
                .map(|p| (p.fit.center, width(p.fit.fwhm)))
                .unwrap_or((f64::NAN, f64::NAN));
            let points = track
                .points
                .iter()
                .map(|p| {
                    let w = width(p.fit.fwhm);
                    // error propagates through w' = sqrt(w² − r²) as w/w'
                    let w_err = if w > 0.0 {
                        p.fit.fwhm_err * p.fit.fwhm / w
                    } else {
                        f64::INFINITY
                    };
                    PhononPeakPoint {
                        temperature_k: p.temperature_k,
                        center_cm: p.fit.center,
                        center_err_cm: p.fit.center_err,
                        fwhm_cm: w,
                        fwhm_err_cm: w_err,
                        height: p.fit.height,
                        eta: p.fit.eta,
                        delta_center_cm: p.fit.center - c0,
                        delta_fwhm_cm: w - w0,
                    }
                })
                .collect();
            Ok(PhononPeakTrack {
                label: track.label,
                profile: opts.profile,
                points,
                missing_temperatures_k: track.missing_temperatures_k,
                warnings,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GruneisenResult {
    pub gamma: f64,
    pub gamma_err: f64,
    /// rms residual of an unconstrained line through the pairs and the
    /// origin; zero when the shift is proportional to the expansion.
    pub linearity_residual: f64,
    pub base_energy_cm: Option<f64>,
    pub base_temperature_k: Option<f64>,
    pub n_points: usize,
}

/// Origin-constrained regression of ΔE/E on ΔV/V; γ is minus the slope.
pub fn gruneisen_from_pairs(de_over_e: &[f64], dv_over_v: &[f64]) -> Result<GruneisenResult> {
    if de_over_e.len() != dv_over_v.len() {
        return Err(Error::LengthMismatch {
            expected: dv_over_v.len(),
            got: de_over_e.len(),
        });
    }
    if de_over_e.is_empty() {
        return Err(Error::invalid("no (ΔE/E, ΔV/V) pairs"));
    }
    let sxx: f64 = dv_over_v.iter().map(|x| x * x).sum();
    if dv_over_v.iter().all(|x| x.abs() <= 1e-12) {
        return Err(Error::NoExpansionSignal);
    }
    let sxy: f64 = dv_over_v.iter().zip(de_over_e).map(|(x, y)| x * y).sum();
    let slope = sxy / sxx;
    let n = de_over_e.len();
    let ss: f64 = dv_over_v
        .iter()
        .zip(de_over_e)
        .map(|(x, y)| (y - slope * x).powi(2))
        .sum();
    let gamma_err = if n > 1 {
        (ss / (n - 1) as f64 / sxx).sqrt()
    } else {
        0.0
    };

    // unconstrained line through the pairs plus the origin
    let xs: Vec<f64> = std::iter::once(0.0)
        .chain(dv_over_v.iter().copied())
        .collect();
    let ys: Vec<f64> = std::iter::once(0.0)
        .chain(de_over_e.iter().copied())
        .collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let cxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let cxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = cxy / cxx;
    let a = my - b * mx;
    let linearity_residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - a - b * x).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();

    Ok(GruneisenResult {
        gamma: if slope == 0.0 { 0.0 } else { -slope },
        gamma_err,
        linearity_residual,
        base_energy_cm: None,
        base_temperature_k: None,
        n_points: n,
    })
}

const SAME_TEMPERATURE_K: f64 = 1e-6;

/// Grüneisen parameter of one tracked mode against the volume track, both
/// re-referenced to their coldest shared temperature.
pub fn gruneisen(track: &PhononPeakTrack, vol: &VolumeTrack) -> Result<GruneisenResult> {
    let shared: Vec<(f64, f64, f64)> = track
        .points
        .iter()
        .filter_map(|p| {
            vol.points
                .iter()
                .find(|v| (v.temperature_k - p.temperature_k).abs() <= SAME_TEMPERATURE_K)
                .map(|v| (p.temperature_k, p.center_cm, v.dv_over_v))
        })
        .collect();
    if shared.len() < 3 {
        return Err(Error::invalid(format!(
            "Grüneisen fit needs at least 3 shared temperatures, found {}",
            shared.len()
        )));
    }
    let (t0, e0, v0) = shared[0];
    let (de, dv): (Vec<f64>, Vec<f64>) = shared[1..]
        .iter()
        .map(|&(_, e, v)| ((e - e0) / e0, (1.0 + v) / (1.0 + v0) - 1.0))
        .unzip();
    let mut r = gruneisen_from_pairs(&de, &dv)?;
    r.base_energy_cm = Some(e0);
    r.base_temperature_k = Some(t0);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{EnergyGrid, Provenance, Spectrum};
    use crate::lattice::VolumePoint;
    use crate::peakfit::gaussian;

    fn peak_set(center: impl Fn(f64) -> f64, fwhm: impl Fn(f64) -> f64, scale: f64) -> SpectrumSet {
        let grid = EnergyGrid::uniform(0.0, 600.0, 1200).unwrap();
        let spectra = [5.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0]
            .iter()
            .map(|&t| {
                let v = grid
                    .centers()
                    .iter()
                    .map(|&e| scale * (gaussian(e, center(t), fwhm(t)) + 0.05))
                    .collect();
                Spectrum::new(grid.clone(), v, t, Provenance::Normalized).unwrap()
            })
            .collect();
        SpectrumSet::new(spectra).unwrap()
    }

    fn seed() -> PeakSeed {
        PeakSeed::new(256.0, 20.0)
    }

    #[test]
    fn softening_recovered() {
        let set = peak_set(|t| 256.0 - 5.0 * (t - 5.0) / 295.0, |_| 8.0, 1.0);
        let tr = &fit_phonon_peaks(&set, &[seed()], &PhononFitOptions::default()).unwrap()[0];
        let last = tr.points.last().unwrap();
        assert_eq!(last.temperature_k, 300.0);
        assert!((last.delta_center_cm + 5.0).abs() < 0.2);
    }

    #[test]
    fn broadening_only() {
        let set = peak_set(|_| 256.0, |t| 6.0 + 0.01 * t, 1.0);
        let opts = PhononFitOptions {
            profile: PeakProfile::Gaussian,
            ..Default::default()
        };
        let tr = &fit_phonon_peaks(&set, &[seed()], &opts).unwrap()[0];
        let last = tr.points.last().unwrap();
        assert!(last.delta_center_cm.abs() < 1e-3);
        let want = 0.01 * 295.0;
        assert!(((last.delta_fwhm_cm - want) / want).abs() < 0.05);
    }

    #[test]
    fn overlapping_seeds_warn() {
        let set = peak_set(|_| 256.0, |_| 8.0, 1.0);
        let seeds = [seed(), PeakSeed::new(270.0, 20.0)];
        let tr = fit_phonon_peaks(&set, &seeds, &PhononFitOptions::default()).unwrap();
        assert!(tr[0].warnings[0].contains("unresolved overlap"));
    }

    #[test]
    fn resolution_subtraction() {
        let set = peak_set(|_| 256.0, |_| 10.0, 1.0);
        let opts = PhononFitOptions {
            profile: PeakProfile::Gaussian,
            resolution_fwhm_cm: Some(6.0),
        };
        let tr = &fit_phonon_peaks(&set, &[seed()], &opts).unwrap()[0];
        assert!((tr.points[0].fwhm_cm - 8.0).abs() < 1e-3);
    }

    #[test]
    fn gruneisen_single_exact_point() {
        let r = gruneisen_from_pairs(&[-0.04], &[0.01]).unwrap();
        assert!((r.gamma - 4.0).abs() < 0.01);
    }

    #[test]
    fn gruneisen_zero_shift_and_no_signal() {
        let r = gruneisen_from_pairs(&[0.0, 0.0], &[0.01, 0.02]).unwrap();
        assert_eq!(r.gamma, 0.0);
        assert!(matches!(
            gruneisen_from_pairs(&[0.1, 0.2], &[0.0, 0.0]),
            Err(Error::NoExpansionSignal)
        ));
    }

    #[test]
    fn linearity_residual_zero_iff_proportional() {
        let x = [0.002, 0.004, 0.006, 0.008];
        let prop: Vec<f64> = x.iter().map(|v| -2.0 * v).collect();
        assert!(gruneisen_from_pairs(&prop, &x).unwrap().linearity_residual < 1e-15);
        let affine: Vec<f64> = x.iter().map(|v| -2.0 * v + 1e-3).collect();
        assert!(
            gruneisen_from_pairs(&affine, &x)
                .unwrap()
                .linearity_residual
                > 1e-5
        );
    }

    #[test]
    fn gruneisen_from_tracks_and_intensity_invariance() {
        // E(T) = E0 (1 − γ ΔV/V) with ΔV/V linear in T
        let gamma = 3.0;
        let dv = |t: f64| 5e-5 * (t - 5.0);
        let center = move |t: f64| 256.0 * (1.0 - gamma * dv(t));
        let vol = VolumeTrack {
            points: [5.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0]
                .iter()
                .map(|&t| VolumePoint {
                    temperature_k: t,
                    dv_over_v: dv(t),
                    spread: 0.0,
                    n_tracks: 1,
                })
                .collect(),
            reference_temperature_k: None,
            reference_from_fit: false,
        };
        let opts = PhononFitOptions {
            profile: PeakProfile::Gaussian,
            ..Default::default()
        };
        let a = &fit_phonon_peaks(&peak_set(center, |_| 8.0, 1.0), &[seed()], &opts).unwrap()[0];
        let b = &fit_phonon_peaks(&peak_set(center, |_| 8.0, 7.5), &[seed()], &opts).unwrap()[0];
        let ga = gruneisen(a, &vol).unwrap();
        let gb = gruneisen(b, &vol).unwrap();
        assert!((ga.gamma - gamma).abs() < 1e-3);
        assert!((ga.gamma - gb.gamma).abs() < 1e-6);
        assert_eq!(ga.base_temperature_k, Some(5.0));
    }

    #[test]
    fn gruneisen_needs_three_shared_points() {
        let tr = PhononPeakTrack {
            label: None,
            profile: PeakProfile::Gaussian,
            points: vec![],
            missing_temperatures_k: vec![],
            warnings: vec![],
        };
        let vol = VolumeTrack {
            points: vec![],
            reference_temperature_k: None,
            reference_from_fit: false,
        };
        assert!(gruneisen(&tr, &vol).is_err());
    }
}
