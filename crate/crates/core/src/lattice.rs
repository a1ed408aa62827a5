//! Diffraction peak tracking and isotropic volume expansion.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peakfit::{track_peak, PeakProfile, PeakSeed, Samples, Track};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffractionPattern {
    d_angstrom: Vec<f64>,
    intensity: Vec<f64>,
    pub temperature_k: f64,
}

impl DiffractionPattern {
    /// Accepts d in either order; stored ascending.
    pub fn new(d_angstrom: Vec<f64>, intensity: Vec<f64>, temperature_k: f64) -> Result<Self> {
        if d_angstrom.len() != intensity.len() {
            return Err(Error::LengthMismatch {
                expected: d_angstrom.len(),
                got: intensity.len(),
            });
        }
        if d_angstrom.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::invalid("d-spacings must be positive and finite"));
        }
        if intensity.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("diffraction intensities must be finite"));
        }
        if !(temperature_k > 0.0) {
            return Err(Error::invalid("pattern temperature must be positive"));
        }
        let (mut d, mut y) = (d_angstrom, intensity);
        let descending = d.len() >= 2 && d[0] > d[d.len() - 1];
        if descending {
            d.reverse();
            y.reverse();
        }
        if d.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("d-spacings must be strictly monotone"));
        }
        Ok(Self {
            d_angstrom: d,
            intensity: y,
            temperature_k,
        })
    }

    pub fn d(&self) -> &[f64] {
        &self.d_angstrom
    }

    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakPoint {
    pub temperature_k: f64,
    pub center_angstrom: f64,
    pub center_err_angstrom: f64,
    pub fwhm_angstrom: f64,
    pub fwhm_err_angstrom: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakTrack {
    pub label: Option<String>,
    pub points: Vec<PeakPoint>,
    pub missing_temperatures_k: Vec<f64>,
}

impl From<Track> for PeakTrack {
    fn from(t: Track) -> Self {
        Self {
            label: t.label,
            points: t
                .points
                .into_iter()
                .map(|p| PeakPoint {
                    temperature_k: p.temperature_k,
                    center_angstrom: p.fit.center,
                    center_err_angstrom: p.fit.center_err,
                    fwhm_angstrom: p.fit.fwhm,
                    fwhm_err_angstrom: p.fit.fwhm_err,
                    amplitude: p.fit.height,
                })
                .collect(),
            missing_temperatures_k: t.missing_temperatures_k,
        }
    }
}

/// Gaussian tracking of each seeded reflection across the patterns.
pub fn track_peaks(patterns: &[DiffractionPattern], seeds: &[PeakSeed]) -> Result<Vec<PeakTrack>> {
    if patterns.is_empty() {
        return Err(Error::invalid("no diffraction patterns"));
    }
    let samples: Vec<Samples> = patterns
        .iter()
        .map(|p| Samples {
            temperature_k: p.temperature_k,
            x: &p.d_angstrom,
            y: &p.intensity,
        })
        .collect();
    seeds
        .par_iter()
        .map(|s| track_peak(&samples, s, PeakProfile::Gaussian).map(PeakTrack::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumePoint {
    pub temperature_k: f64,
    pub dv_over_v: f64,
    /// Sample standard deviation across tracks (0 with one track).
    pub spread: f64,
    pub n_tracks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeTrack {
    pub points: Vec<VolumePoint>,
    /// Set when some reference d was taken from the hottest fit.
    pub reference_temperature_k: Option<f64>,
    pub reference_from_fit: bool,
}

/// (d/d_ref)³ − 1.
pub fn isotropic_volume_change(d: f64, d_ref: f64) -> f64 {
    let r = d / d_ref;
    // (r³ − 1) without cancellation for r ≈ 1
    let e = r - 1.0;
    e * (3.0 + e * (3.0 + e))
}

/// Per-track isotropic ΔV/V averaged over tracks at each temperature.
/// Missing reference values fall back to the highest-temperature fit.
pub fn volume_expansion(tracks: &[PeakTrack], reference_d: &[Option<f64>]) -> Result<VolumeTrack> {
    if tracks.is_empty() {
        return Err(Error::invalid("volume expansion needs at least one track"));
    }
    if reference_d.len() != tracks.len() {
        return Err(Error::LengthMismatch {
            expected: tracks.len(),
            got: reference_d.len(),
        });
    }
    let mut from_fit = false;
    let mut fallback_t: Option<f64> = None;
    let mut per_track: Vec<Vec<(f64, f64)>> = Vec::new();
    for (track, r) in tracks.iter().zip(reference_d) {
        let d_ref = match r {
            Some(d) if *d > 0.0 => *d,
            Some(d) => {
                return Err(Error::invalid(format!(
                    "reference d = {d} must be positive"
                )));
            }
            None => {
                let Some(hot) = track
                    .points
                    .iter()
                    .max_by(|a, b| a.temperature_k.total_cmp(&b.temperature_k))
                else {
                    continue;
                };
                warn!(
                    "no reference d for track {:?}; using the {} K fit",
                    track.label, hot.temperature_k
                );
                from_fit = true;
                fallback_t =
                    Some(fallback_t.map_or(hot.temperature_k, |t| t.max(hot.temperature_k)));
                hot.center_angstrom
            }
        };
        per_track.push(
            track
                .points
                .iter()
                .map(|p| {
                    (
                        p.temperature_k,
                        isotropic_volume_change(p.center_angstrom, d_ref),
                    )
                })
                .collect(),
        );
    }
    if per_track.iter().all(|t| t.is_empty()) {
        return Err(Error::EmptySelection("no fitted peak positions".into()));
    }
    let mut temps: Vec<f64> = per_track.iter().flatten().map(|p| p.0).collect();
    temps.sort_by(f64::total_cmp);
    temps.dedup();
    let points = temps
        .into_iter()
        .map(|t| {
            let v: Vec<f64> = per_track
                .iter()
                .filter_map(|tr| tr.iter().find(|p| p.0 == t).map(|p| p.1))
                .collect();
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let spread = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            VolumePoint {
                temperature_k: t,
                dv_over_v: mean,
                spread,
                n_tracks: n,
            }
        })
        .collect();
    Ok(VolumeTrack {
        points,
        reference_temperature_k: fallback_t,
        reference_from_fit: from_fit,
    })
}
