//! Bose–Einstein statistics and the two-phonon thermal factor.

use serde::Serialize;

use crate::constants::KB_CM_PER_K;
use crate::error::{Error, Result};
use crate::grid::{EnergyGrid, Spectrum};

const SMALL_X: f64 = 1e-6;
const LARGE_X: f64 = 700.0;

fn reduced_energy(energy_cm: f64, temperature_k: f64) -> Result<f64> {
    if !(energy_cm > 0.0) || !(temperature_k > 0.0) {
        return Err(Error::domain(format!(
            "E and T must be positive (E = {energy_cm} cm⁻¹, T = {temperature_k} K)"
        )));
    }
    Ok(energy_cm / (KB_CM_PER_K * temperature_k))
}

/// n(x) for x = E/k_BT > 0.
pub fn bose_reduced(x: f64) -> f64 {
    if x < SMALL_X {
        1.0 / x - 0.5 + x / 12.0
    } else if x > LARGE_X {
        0.0
    } else {
        1.0 / x.exp_m1()
    }
}

/// n(n+1) = eˣ/(eˣ−1)² for x = E/k_BT > 0.
pub fn two_phonon_reduced(x: f64) -> f64 {
    if x < SMALL_X {
        1.0 / (x * x) - 1.0 / 12.0
    } else {
        // e^{-x}/(1-e^{-x})², no overflow for large x
        let em = (-x).exp();
        let d = -(-x).exp_m1();
        em / (d * d)
    }
}

/// Mean phonon number 1/(e^{E/k_BT} − 1).
pub fn bose_occupation(energy_cm: f64, temperature_k: f64) -> Result<f64> {
    Ok(bose_reduced(reduced_energy(energy_cm, temperature_k)?))
}

/// Two-phonon (local-mode) relaxation factor n(n+1).
pub fn two_phonon_factor(energy_cm: f64, temperature_k: f64) -> Result<f64> {
    Ok(two_phonon_reduced(reduced_energy(
        energy_cm,
        temperature_k,
    )?))
}

/// Unchecked variant for hot loops; returns 0 for E ≤ 0.
pub(crate) fn two_phonon_unchecked(energy_cm: f64, temperature_k: f64) -> f64 {
    if energy_cm <= 0.0 {
        0.0
    } else {
        two_phonon_reduced(energy_cm / (KB_CM_PER_K * temperature_k))
    }
}

/// Analytic logarithmic temperature derivative of the two-phonon factor,
/// x·coth(x/2).
pub fn two_phonon_log_slope(energy_cm: f64, temperature_k: f64) -> Result<f64> {
    let x = reduced_energy(energy_cm, temperature_k)?;
    Ok(x / (0.5 * x).tanh())
}

#[derive(Debug, Clone, Serialize)]
pub struct BoseWeightedSpectrum {
    pub grid: EnergyGrid,
    pub weighted: Vec<f64>,
    pub temperature_k: f64,
}

/// Per-bin G_T(E)·n(E,T). Bins centred at E ≤ 0 carry no weight.
pub fn bose_weight(spec: &Spectrum) -> BoseWeightedSpectrum {
    let t = spec.temperature_k;
    let weighted = spec
        .grid
        .centers()
        .iter()
        .zip(&spec.intensity)
        .map(|(&e, &g)| {
            if e <= 0.0 {
                0.0
            } else {
                g * bose_reduced(e / (KB_CM_PER_K * t))
            }
        })
        .collect();
    BoseWeightedSpectrum {
        grid: spec.grid.clone(),
        weighted,
        temperature_k: t,
    }
}
