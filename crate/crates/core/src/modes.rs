//! Normal-mode analytics: thermal RMS displacements, the breathing-stretch
//! character of a metal–ligand core, and a neutron-weighted DOS.
//!
//! Eigenvectors are mass-weighted and unit-normalized; the real
//! displacement of atom a in mode k is e_{k,a}/√m_a times the normal
//! coordinate, whose variance is ħ/(2ω)·(2n+1).

use log::warn;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::constants::{AMU_KG, CM_TO_RAD_PER_S, HBAR_J_S, M2_TO_A2};
use crate::error::{Error, Result};
use crate::grid::{EnergyGrid, Provenance, Spectrum};
use crate::ins::{normalize, CorrectionConfig};
use crate::spc::MAX_PHONON_ENERGY_CM;
use crate::thermal::bose_occupation;

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub element: String,
    pub mass_amu: f64,
    #[serde(rename = "position_A")]
    pub position_angstrom: [f64; 3],
    #[serde(default)]
    pub sigma_inc_barn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub freq_cm: f64,
    pub eigvec: Vec<f64>,
}

impl Mode {
    fn component(&self, atom: usize) -> Vector3<f64> {
        Vector3::new(
            self.eigvec[3 * atom],
            self.eigvec[3 * atom + 1],
            self.eigvec[3 * atom + 2],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModeSet", into = "RawModeSet")]
pub struct ModeSet {
    atoms: Vec<Atom>,
    modes: Vec<Mode>,
}

#[derive(Serialize, Deserialize)]
struct RawModeSet {
    atoms: Vec<Atom>,
    modes: Vec<Mode>,
}

impl TryFrom<RawModeSet> for ModeSet {
    type Error = Error;
    fn try_from(raw: RawModeSet) -> Result<Self> {
        ModeSet::new(raw.atoms, raw.modes)
    }
}

impl From<ModeSet> for RawModeSet {
    fn from(m: ModeSet) -> Self {
        Self {
            atoms: m.atoms,
            modes: m.modes,
        }
    }
}

impl ModeSet {
    /// Validates shapes and norms; modes are sorted by frequency.
    pub fn new(atoms: Vec<Atom>, mut modes: Vec<Mode>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("mode set has no atoms"));
        }
        for (i, a) in atoms.iter().enumerate() {
            if !(a.mass_amu > 0.0) {
                return Err(Error::invalid(format!(
                    "atom {i}: mass_amu must be positive"
                )));
            }
            if !(a.sigma_inc_barn >= 0.0) {
                return Err(Error::invalid(format!(
                    "atom {i}: sigma_inc_barn must be non-negative"
                )));
            }
            if a.position_angstrom.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("atom {i}: position must be finite")));
            }
        }
        let n3 = 3 * atoms.len();
        for (k, m) in modes.iter().enumerate() {
            if m.freq_cm.is_nan() || m.freq_cm < 0.0 {
                return Err(Error::invalid(format!(
                    "mode {k}: frequency {} cm⁻¹ (imaginary modes are rejected)",
                    m.freq_cm
                )));
            }
            if m.eigvec.len() != n3 {
                return Err(Error::invalid(format!(
                    "mode {k}: eigenvector has {} components, expected {n3}",
                    m.eigvec.len()
                )));
            }
            let norm = m.eigvec.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::invalid(format!(
                    "mode {k}: eigenvector norm {norm} is not 1"
                )));
            }
        }
        modes.sort_by(|a, b| a.freq_cm.total_cmp(&b.freq_cm));
        Ok(Self { atoms, modes })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("mode set JSON: {e}")))
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    fn position(&self, a: usize) -> Vector3<f64> {
        Vector3::from(self.atoms[a].position_angstrom)
    }

    /// Real-space displacement pattern u_a = e_a/√m_a of mode `k`.
    fn displacement(&self, k: usize, a: usize) -> Vector3<f64> {
        self.modes[k].component(a) / self.atoms[a].mass_amu.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmsdResult {
    pub per_atom_angstrom: Vec<f64>,
    pub modes_included: usize,
    pub zero_frequency_modes_excluded: usize,
}

/// Variance of a mode's normal coordinate in amu·Å², ħ/(2ω)·(2n+1).
fn normal_coordinate_variance(freq_cm: f64, temperature_k: f64) -> Result<f64> {
    let omega = freq_cm * CM_TO_RAD_PER_S;
    let n = if temperature_k == 0.0 {
        0.0
    } else {
        bose_occupation(freq_cm, temperature_k)?
    };
    Ok(HBAR_J_S / (2.0 * omega) * (2.0 * n + 1.0) / AMU_KG * M2_TO_A2)
}

/// Thermal RMS displacement per atom from all modes up to `e_max_cm`.
pub fn rmsd_per_atom(ms: &ModeSet, temperature_k: f64, e_max_cm: f64) -> Result<RmsdResult> {
    if !(temperature_k >= 0.0) {
        return Err(Error::domain("temperature must be ≥ 0"));
    }
    if !(e_max_cm > 0.0) {
        return Err(Error::domain("e_max must be positive"));
    }
    let mut msd = vec![0.0; ms.atoms.len()];
    let mut included = 0;
    let mut zeros = 0;
    for (k, mode) in ms.modes.iter().enumerate() {
        if mode.freq_cm > e_max_cm {
            break;
        }
        if mode.freq_cm == 0.0 {
            zeros += 1;
            continue;
        }
        included += 1;
        let var = normal_coordinate_variance(mode.freq_cm, temperature_k)?;
        for (a, m) in msd.iter_mut().enumerate() {
            *m += var * ms.displacement(k, a).norm_squared();
        }
    }
    if zeros > 0 {
        warn!("{zeros} zero-frequency mode(s) excluded from the RMSD sum");
    }
    Ok(RmsdResult {
        per_atom_angstrom: msd.into_iter().map(f64::sqrt).collect(),
        modes_included: included,
        zero_frequency_modes_excluded: zeros,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreSpec {
    pub center: usize,
    pub ligands: [usize; 4],
    /// Molecular-plane normal; fitted to the core atoms when absent.
    #[serde(default)]
    pub normal: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "group", content = "atoms")]
pub enum AtomGroup {
    All,
    Core,
    Indices(Vec<usize>),
}

/// Mean of `values` over the atoms in `group`.
pub fn summarize_rmsd(values: &[f64], group: &AtomGroup, core: Option<&CoreSpec>) -> Result<f64> {
    let idx: Vec<usize> = match group {
        AtomGroup::All => (0..values.len()).collect(),
        AtomGroup::Core => {
            let c = core.ok_or_else(|| Error::invalid("core group needs the core atom indices"))?;
            std::iter::once(c.center).chain(c.ligands).collect()
        }
        AtomGroup::Indices(v) => v.clone(),
    };
    if idx.is_empty() {
        return Err(Error::EmptySelection("atom group is empty".into()));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= values.len()) {
        return Err(Error::invalid(format!("atom index {bad} out of range")));
    }
    Ok(idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64)
}

fn plane_normal(ms: &ModeSet, core: &CoreSpec) -> Result<Vector3<f64>> {
    if let Some(n) = core.normal {
        let v = Vector3::from(n);
        if (v.norm() - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::invalid("core normal must be a unit vector"));
        }
        return Ok(v);
    }
    let pts: Vec<Vector3<f64>> = std::iter::once(core.center)
        .chain(core.ligands)
        .map(|a| ms.position(a))
        .collect();
    let c = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    Ok(eig.eigenvectors.column(k).into_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StretchScore {
    pub mode_index: usize,
    pub freq_cm: f64,
    pub score: f64,
}

/// In-phase, in-plane bond-stretch character of every mode:
/// |Σ_b p_b| / (4·max_b |r_b|), where r_b is the ligand displacement
/// relative to the center and p_b its projection on the in-plane bond
/// direction. Sorted by descending score; ties keep frequency order.
pub fn stretch_character(ms: &ModeSet, core: &CoreSpec) -> Result<Vec<StretchScore>> {
    let n = ms.atoms.len();
    if core.center >= n || core.ligands.iter().any(|&l| l >= n) {
        return Err(Error::invalid("core atom index out of range"));
    }
    if core.ligands.contains(&core.center) {
        return Err(Error::invalid("core center listed as a ligand"));
    }
    let normal = plane_normal(ms, core)?;
    let cu = ms.position(core.center);
    let axes = core
        .ligands
        .iter()
        .map(|&l| {
            let bond = ms.position(l) - cu;
            if bond.norm() < 1e-8 {
                return Err(Error::invalid(format!("zero-length bond to atom {l}")));
            }
            let inplane = bond - normal * bond.dot(&normal);
            if inplane.norm() < 1e-8 * bond.norm() {
                return Err(Error::invalid(format!(
                    "bond to atom {l} is perpendicular to the core plane"
                )));
            }
            Ok(inplane.normalize())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut scores: Vec<StretchScore> = (0..ms.modes.len())
        .map(|k| {
            let u_c = ms.displacement(k, core.center);
            let mut sum = 0.0;
            let mut max_r: f64 = 0.0;
            for (b, &l) in core.ligands.iter().enumerate() {
                let r = ms.displacement(k, l) - u_c;
                sum += r.dot(&axes[b]);
                max_r = max_r.max(r.norm());
            }
            let score = if max_r > 0.0 {
                (sum.abs() / (4.0 * max_r)).min(1.0)
            } else {
                0.0
            };
            StretchScore {
                mode_index: k,
                freq_cm: ms.modes[k].freq_cm,
                score,
            }
        })
        .collect();
    scores.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.mode_index.cmp(&b.mode_index))
    });
    Ok(scores)
}

/// Incoherent neutron weight Σ_a σ_a·|e_a|²/m_a of mode `k`.
pub fn mode_neutron_weight(ms: &ModeSet, k: usize) -> f64 {
    ms.atoms
        .iter()
        .enumerate()
        .map(|(a, atom)| {
            atom.sigma_inc_barn * ms.modes[k].component(a).norm_squared() / atom.mass_amu
        })
        .sum()
}

/// Gaussian-broadened, neutron-weighted mode spectrum before normalization;
/// each bin holds the exact bin average of the Gaussians.
pub fn neutron_weighted_dos_raw(
    ms: &ModeSet,
    broadening_fwhm_cm: f64,
    grid: &EnergyGrid,
) -> Result<Vec<f64>> {
    if !(broadening_fwhm_cm > 0.0) {
        return Err(Error::invalid("broadening FWHM must be positive"));
    }
    let sigma = broadening_fwhm_cm / (8.0 * std::f64::consts::LN_2).sqrt();
    let cdf = |x: f64, mu: f64| 0.5 * (1.0 + erf((x - mu) / (sigma * std::f64::consts::SQRT_2)));
    let edges = grid.edges();
    let mut out = vec![0.0; grid.len()];
    for (k, mode) in ms.modes.iter().enumerate() {
        let w = mode_neutron_weight(ms, k);
        if w == 0.0 {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            let p = cdf(edges[i + 1], mode.freq_cm) - cdf(edges[i], mode.freq_cm);
            *o += w * p / grid.width(i);
        }
    }
    Ok(out)
}

/// Neutron-weighted DOS normalized to unit area up to 600 cm⁻¹ (or the
/// grid end when lower).
pub fn neutron_weighted_dos(
    ms: &ModeSet,
    broadening_fwhm_cm: f64,
    grid: &EnergyGrid,
    temperature_k: f64,
) -> Result<Spectrum> {
    let raw = neutron_weighted_dos_raw(ms, broadening_fwhm_cm, grid)?;
    let spec = Spectrum::new(grid.clone(), raw, temperature_k, Provenance::Dos)?;
    let cfg = CorrectionConfig {
        normalization_cutoff_cm: MAX_PHONON_ENERGY_CM.min(grid.max()),
        allow_cutoff_override: true,
        ..Default::default()
    };
    normalize(&spec, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn atom(el: &str, mass: f64, pos: [f64; 3], sigma: f64) -> Atom {
        Atom {
            element: el.into(),
            mass_amu: mass,
            position_angstrom: pos,
            sigma_inc_barn: sigma,
        }
    }

    fn normalized(mut v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    /// Cu at the origin, four N on ±x, ±y at 1.95 Å.
    fn core_atoms() -> Vec<Atom> {
        vec![
            atom("Cu", 63.546, [0.0, 0.0, 0.0], 0.55),
            atom("N", 14.007, [1.95, 0.0, 0.0], 0.5),
            atom("N", 14.007, [0.0, 1.95, 0.0], 0.5),
            atom("N", 14.007, [-1.95, 0.0, 0.0], 0.5),
            atom("N", 14.007, [0.0, -1.95, 0.0], 0.5),
        ]
    }

    fn core() -> CoreSpec {
        CoreSpec {
            center: 0,
            ligands: [1, 2, 3, 4],
            normal: None,
        }
    }

    /// Eigenvector with ligand b moving by `amp[b]` along its bond.
    fn stretch(amp: [f64; 4]) -> Vec<f64> {
        let dirs = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        let mut e = vec![0.0; 15];
        for b in 0..4 {
            e[3 * (b + 1)] = amp[b] * dirs[b][0];
            e[3 * (b + 1) + 1] = amp[b] * dirs[b][1];
        }
        normalized(e)
    }

    #[test]
    fn single_mode_zero_temperature() {
        let ms = ModeSet::new(
            vec![atom("X", 1.0, [0.0; 3], 1.0)],
            vec![Mode {
                freq_cm: 100.0,
                eigvec: vec![1.0, 0.0, 0.0],
            }],
        )
        .unwrap();
        let r = rmsd_per_atom(&ms, 0.0, 400.0).unwrap();
        // ħ/(2mω) by hand in SI: 1.054571817e-34 / (2 · 1.66053906660e-27 · 2π·2.99792458e12) m²
        let omega = 2.0 * std::f64::consts::PI * 2.997_924_58e10 * 100.0;
        let var_m2 = 1.054_571_817e-34 / (2.0 * 1.660_539_066_60e-27 * omega);
        let oracle = (var_m2 * 1e20).sqrt();
        assert!((oracle - 0.410_58).abs() < 1e-4);
        assert!((r.per_atom_angstrom[0] - oracle).abs() < 1e-12);
        assert_eq!(
            rmsd_per_atom(&ms, 0.0, 50.0).unwrap().per_atom_angstrom,
            vec![0.0]
        );
    }

    #[test]
    fn classical_limit() {
        let ms = ModeSet::new(
            vec![atom("X", 12.0, [0.0; 3], 1.0)],
            vec![Mode {
                freq_cm: 50.0,
                eigvec: vec![0.0, 1.0, 0.0],
            }],
        )
        .unwrap();
        let a = rmsd_per_atom(&ms, 5000.0, 400.0).unwrap().per_atom_angstrom[0];
        let b = rmsd_per_atom(&ms, 10000.0, 400.0)
            .unwrap()
            .per_atom_angstrom[0];
        assert!(((b * b) / (a * a) - 2.0).abs() < 1e-3);
    }

    #[test]
    fn zero_modes_and_validation() {
        let atoms = vec![atom("X", 1.0, [0.0; 3], 1.0)];
        let ms = ModeSet::new(
            atoms.clone(),
            vec![
                Mode {
                    freq_cm: 0.0,
                    eigvec: vec![1.0, 0.0, 0.0],
                },
                Mode {
                    freq_cm: 100.0,
                    eigvec: vec![0.0, 0.0, 1.0],
                },
            ],
        )
        .unwrap();
        let r = rmsd_per_atom(&ms, 300.0, 400.0).unwrap();
        assert_eq!(r.zero_frequency_modes_excluded, 1);
        assert!(r.per_atom_angstrom[0].is_finite());

        let bad_norm = Mode {
            freq_cm: 10.0,
            eigvec: vec![1.0, 1.0, 0.0],
        };
        assert!(ModeSet::new(atoms.clone(), vec![bad_norm]).is_err());
        let imaginary = Mode {
            freq_cm: -10.0,
            eigvec: vec![1.0, 0.0, 0.0],
        };
        assert!(ModeSet::new(atoms.clone(), vec![imaginary]).is_err());
        let short = Mode {
            freq_cm: 10.0,
            eigvec: vec![1.0],
        };
        assert!(ModeSet::new(atoms, vec![short]).is_err());
    }

    #[test]
    fn json_round_trip_and_sorting() {
        let text = r#"{"atoms":[{"element":"H","mass_amu":1.008,"position_A":[0,0,0],"sigma_inc_barn":80.27}],
            "modes":[{"freq_cm":300,"eigvec":[0,0,1]},{"freq_cm":100,"eigvec":[1,0,0]}]}"#;
        let ms = ModeSet::from_json(text).unwrap();
        assert_eq!(ms.modes()[0].freq_cm, 100.0);
        let back = ModeSet::from_json(&serde_json::to_string(&ms).unwrap()).unwrap();
        assert_eq!(back, ms);
    }

    #[test]
    fn summaries() {
        let v = [0.2, 0.4, 0.4, 0.4, 0.4, 0.8];
        assert_eq!(
            summarize_rmsd(&v, &AtomGroup::Indices(vec![5]), None).unwrap(),
            0.8
        );
        assert_eq!(
            summarize_rmsd(&[0.3; 4], &AtomGroup::All, None).unwrap(),
            0.3
        );
        assert!(summarize_rmsd(&v, &AtomGroup::Indices(vec![]), None).is_err());
        let c = core();
        let core_mean = summarize_rmsd(&v, &AtomGroup::Core, Some(&c)).unwrap();
        assert!((core_mean - 1.8 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn periphery_twice_core() {
        // two atoms, periphery displacement twice the core in every mode
        let atoms = vec![
            atom("C", 12.0, [0.0; 3], 1.0),
            atom("C", 12.0, [3.0, 0.0, 0.0], 1.0),
        ];
        let modes = vec![
            Mode {
                freq_cm: 80.0,
                eigvec: normalized(vec![1.0, 0.0, 0.0, 2.0, 0.0, 0.0]),
            },
            Mode {
                freq_cm: 150.0,
                eigvec: normalized(vec![0.0, 1.0, 0.0, 0.0, 2.0, 0.0]),
            },
        ];
        let ms = ModeSet::new(atoms, modes).unwrap();
        let r = rmsd_per_atom(&ms, 300.0, 400.0).unwrap().per_atom_angstrom;
        let core_mean = summarize_rmsd(&r, &AtomGroup::Indices(vec![0]), None).unwrap();
        let peri_mean = summarize_rmsd(&r, &AtomGroup::Indices(vec![1]), None).unwrap();
        assert!((peri_mean / core_mean - 2.0).abs() < 1e-12);
    }

    #[test]
    fn breathing_and_antisymmetric() {
        let modes = vec![
            Mode {
                freq_cm: 256.0,
                eigvec: stretch([1.0; 4]),
            },
            Mode {
                freq_cm: 300.0,
                eigvec: stretch([1.0, -1.0, 1.0, -1.0]),
            },
        ];
        let ms = ModeSet::new(core_atoms(), modes).unwrap();
        let s = stretch_character(&ms, &core()).unwrap();
        assert_eq!(s[0].freq_cm, 256.0);
        assert!((s[0].score - 1.0).abs() < 1e-9);
        assert!(s[1].score.abs() < 1e-9);
    }

    #[test]
    fn zero_length_bond() {
        let mut atoms = core_atoms();
        atoms[1].position_angstrom = [0.0; 3];
        let ms = ModeSet::new(
            atoms,
            vec![Mode {
                freq_cm: 1.0,
                eigvec: stretch([1.0; 4]),
            }],
        )
        .unwrap();
        assert!(stretch_character(&ms, &core()).is_err());
    }

    #[test]
    fn dos_single_mode_and_sum() {
        let grid = EnergyGrid::uniform(0.0, 600.0, 600).unwrap();
        let ms = ModeSet::new(
            vec![atom("H", 1.008, [0.0; 3], 80.27)],
            vec![Mode {
                freq_cm: 200.3,
                eigvec: vec![0.0, 1.0, 0.0],
            }],
        )
        .unwrap();
        let raw = neutron_weighted_dos_raw(&ms, 10.0, &grid).unwrap();
        let total = crate::grid::integrate(&raw, &grid).unwrap();
        assert!((total - mode_neutron_weight(&ms, 0)).abs() < 1e-6 * total);
        let k = (0..raw.len())
            .max_by(|&a, &b| raw[a].total_cmp(&raw[b]))
            .unwrap();
        assert!((grid.centers()[k] - 200.3).abs() <= 0.5);
        let dos = neutron_weighted_dos(&ms, 10.0, &grid, 5.0).unwrap();
        assert!((dos.integral_between(0.0, 600.0) - 1.0).abs() < 1e-12);
        assert_eq!(dos.provenance, Provenance::Dos);
    }

    #[test]
    fn doubling_hydrogen_amplitude_quadruples_weight() {
        let atoms = vec![
            atom("H", 1.008, [0.0; 3], 80.27),
            atom("C", 12.0, [1.0, 0.0, 0.0], 0.0),
        ];
        let a = ModeSet::new(
            atoms.clone(),
            vec![Mode {
                freq_cm: 100.0,
                eigvec: normalized(vec![0.3, 0.0, 0.0, 1.0, 0.0, 0.0]),
            }],
        )
        .unwrap();
        let e = &a.modes()[0].eigvec;
        let mut doubled = e.clone();
        doubled[0] *= 2.0;
        // compare the hydrogen term directly: the carbon carries no cross-section
        let h = |v: &[f64]| 80.27 * v[0] * v[0] / 1.008;
        assert!((h(&doubled) / h(e) - 4.0).abs() < 1e-12);
        let wa = mode_neutron_weight(&a, 0);
        assert!((wa - h(e)).abs() < 1e-12);
    }

    fn rotation(ax: f64, ay: f64, az: f64) -> Matrix3<f64> {
        nalgebra::Rotation3::from_euler_angles(ax, ay, az).into_inner()
    }

    proptest! {
        #[test]
        fn stretch_rotation_invariant(
            ax in -3.0f64..3.0, ay in -3.0f64..3.0, az in -3.0f64..3.0,
            amps in proptest::array::uniform4(-1.0f64..1.0),
            cu in proptest::array::uniform3(-0.3f64..0.3),
        ) {
            let mut e = stretch(amps);
            e[0] = cu[0]; e[1] = cu[1]; e[2] = cu[2];
            prop_assume!(e.iter().any(|v| v.abs() > 1e-3));
            let e = normalized(e);
            let base = ModeSet::new(core_atoms(), vec![Mode { freq_cm: 200.0, eigvec: e.clone() }]).unwrap();
            let r = rotation(ax, ay, az);
            let atoms: Vec<Atom> = core_atoms().into_iter().map(|mut a| {
                let p = r * Vector3::from(a.position_angstrom);
                a.position_angstrom = [p.x, p.y, p.z];
                a
            }).collect();
            let mut re = vec![0.0; 15];
            for a in 0..5 {
                let v = r * Vector3::new(e[3 * a], e[3 * a + 1], e[3 * a + 2]);
                re[3 * a] = v.x; re[3 * a + 1] = v.y; re[3 * a + 2] = v.z;
            }
            let rotated = ModeSet::new(atoms, vec![Mode { freq_cm: 200.0, eigvec: re }]).unwrap();
            let s0 = stretch_character(&base, &core()).unwrap()[0].score;
            let s1 = stretch_character(&rotated, &core()).unwrap()[0].score;
            prop_assert!((s0 - s1).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&s0));
        }

        #[test]
        fn rmsd_monotone(t in 0.0f64..500.0, dt in 0.0f64..100.0, emax in 60.0f64..400.0) {
            let atoms = vec![atom("C", 12.0, [0.0; 3], 1.0), atom("H", 1.008, [1.0, 0.0, 0.0], 80.0)];
            let modes = vec![
                Mode { freq_cm: 50.0, eigvec: normalized(vec![1.0, 0.0, 0.0, 0.5, 0.0, 0.0]) },
                Mode { freq_cm: 200.0, eigvec: normalized(vec![0.0, 0.2, 0.0, 0.0, 1.0, 0.0]) },
                Mode { freq_cm: 350.0, eigvec: normalized(vec![0.0, 0.0, 0.3, 0.0, 0.0, 1.0]) },
            ];
            let ms = ModeSet::new(atoms, modes).unwrap();
            let a = rmsd_per_atom(&ms, t, emax).unwrap().per_atom_angstrom;
            let hotter = rmsd_per_atom(&ms, t + dt, emax).unwrap().per_atom_angstrom;
            let wider = rmsd_per_atom(&ms, t, emax + 100.0).unwrap().per_atom_angstrom;
            for i in 0..2 {
                prop_assert!(hotter[i] >= a[i]);
                prop_assert!(wider[i] >= a[i]);
            }
        }
    }
}
