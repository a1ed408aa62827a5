//! Physical constants (CODATA 2018 exact/recommended values).

/// Boltzmann constant, J/K.
pub const BOLTZMANN_J_PER_K: f64 = 1.380_649e-23;
/// Planck constant, J·s.
pub const PLANCK_J_S: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J·s.
pub const HBAR_J_S: f64 = 1.054_571_817e-34;
/// Speed of light, cm/s.
pub const SPEED_OF_LIGHT_CM_PER_S: f64 = 2.997_924_58e10;
/// Atomic mass unit, kg.
pub const AMU_KG: f64 = 1.660_539_066_60e-27;

/// Boltzmann constant in cm⁻¹/K, k_B/(h c).
pub const KB_CM_PER_K: f64 = BOLTZMANN_J_PER_K / (PLANCK_J_S * SPEED_OF_LIGHT_CM_PER_S);

/// Angular frequency per wavenumber, (rad/s) per cm⁻¹ = 2πc.
pub const CM_TO_RAD_PER_S: f64 = 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_CM_PER_S;

/// Å² per m².
pub const M2_TO_A2: f64 = 1e20;
