//! TOML run manifest: input files, their metadata and analysis settings.
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use spclab::anharm::PhononFitOptions;
use spclab::grid::{Provenance, SpectrumSet};
use spclab::ins::{self, CorrectionConfig};
use spclab::io;
use spclab::lattice::DiffractionPattern;
use spclab::modes::{CoreSpec, ModeSet};
use spclab::peakfit::{PeakProfile, PeakSeed};
use spclab::relax::{
    assemble_rate_series, AssemblyPolicy, LocalModeOptions, Method, Orientation, RatePoint,
    RateSeries, RecoveryTrace,
};
use spclab::spc::{SpcOptions, SpectrumMode};

pub const SCHEMA_VERSION: u32 = 1;

/// A manifest problem that names the offending field.
#[derive(Debug, thiserror::Error)]
#[error("manifest field `{field}`: {message}")]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> anyhow::Error {
    ValidationError {
        field: field.into(),
        message: message.into(),
    }
    .into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumState {
    /// Needs the full correction pipeline.
    Raw,
    /// Already corrected; only re-normalized.
    #[default]
    Corrected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumEntry {
    pub path: PathBuf,
    pub temperature_k: f64,
    #[serde(default = "default_representation")]
    pub representation: String,
    #[serde(default)]
    pub state: SpectrumState,
}

fn default_representation() -> String {
    "instrument_weighted".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateEntry {
    pub path: PathBuf,
    /// Series label; defaults to the dataset label.
    pub label: Option<String>,
    #[serde(default)]
    pub orientation: Orientation,
    #[serde(default)]
    pub method: Method,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub path: PathBuf,
    pub temperature_k: f64,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub orientation: Orientation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternEntry {
    pub path: PathBuf,
    pub temperature_k: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblyConfig {
    /// Merge saturation and inversion points before fitting.
    pub enabled: bool,
    pub switch_temperature_k: f64,
    /// `parallel`, `perpendicular` or `any`.
    pub orientation: String,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            switch_temperature_k: 30.0,
            orientation: "perpendicular".into(),
        }
    }
}

impl AssemblyConfig {
    pub fn policy(&self) -> Result<AssemblyPolicy> {
        let orientation = match self.orientation.as_str() {
            "any" => None,
            s => Some(
                s.parse::<Orientation>()
                    .map_err(|e| invalid("fit.assembly.orientation", e.to_string()))?,
            ),
        };
        Ok(AssemblyPolicy {
            switch_temperature_k: self.switch_temperature_k,
            orientation,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub edges_cm: Vec<f64>,
    pub cutoff_grid_cm: Option<Vec<f64>>,
    pub temperature_floor_k: f64,
    pub include_direct: bool,
    pub excluded_below_cm: Option<f64>,
    pub spectrum_mode: SpectrumMode,
    /// Spectrum representation used by the coupling fits; defaults to the
    /// first listed.
    pub representation: Option<String>,
    /// Normalization cutoffs visited by the robustness sweep.
    pub sweep_cutoffs_cm: Vec<f64>,
    pub assembly: AssemblyConfig,
    pub local_modes: LocalModeOptions,
    pub debye_include_direct: bool,
    pub error_weighted: bool,
    pub slope_window: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            edges_cm: vec![0.0, 185.0, 600.0],
            cutoff_grid_cm: None,
            temperature_floor_k: 10.0,
            include_direct: false,
            excluded_below_cm: None,
            spectrum_mode: SpectrumMode::Interpolated,
            representation: None,
            sweep_cutoffs_cm: vec![400.0, 500.0, 600.0],
            assembly: AssemblyConfig::default(),
            local_modes: LocalModeOptions::default(),
            debye_include_direct: true,
            error_weighted: false,
            slope_window: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSeed {
    pub label: String,
    pub center_angstrom: f64,
    pub half_width_angstrom: f64,
    /// Room-temperature reference d; the hottest fit is used when absent.
    pub reference_d_angstrom: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    pub seeds: Vec<LatticeSeed>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhononSeed {
    pub label: String,
    pub center_cm: f64,
    pub half_width_cm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnharmConfig {
    pub seeds: Vec<PhononSeed>,
    pub profile: PeakProfile,
    /// Instrument FWHM subtracted in quadrature from fitted widths.
    pub resolution_fwhm_cm: Option<f64>,
}

impl Default for AnharmConfig {
    fn default() -> Self {
        Self {
            seeds: Vec::new(),
            profile: PeakProfile::PseudoVoigt,
            resolution_fwhm_cm: None,
        }
    }
}

impl AnharmConfig {
    pub fn options(&self) -> PhononFitOptions {
        PhononFitOptions {
            profile: self.profile,
            resolution_fwhm_cm: self.resolution_fwhm_cm,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureConfig {
    pub core: Option<CoreSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub label: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub spectra: Vec<SpectrumEntry>,
    #[serde(default)]
    pub rates: Vec<RateEntry>,
    #[serde(default)]
    pub traces: Vec<TraceEntry>,
    #[serde(default)]
    pub diffraction: Vec<PatternEntry>,
    pub modes: Option<PathBuf>,
    #[serde(default)]
    pub correction: CorrectionConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub anharm: AnharmConfig,
    #[serde(default)]
    pub structure: StructureConfig,
}

/// A parsed manifest together with its source bytes and directory.
pub struct Loaded {
    pub manifest: Manifest,
    pub bytes: Vec<u8>,
    pub base: PathBuf,
}

pub fn load(path: &Path) -> Result<Loaded> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| invalid("<manifest>", "not UTF-8"))?;
    let manifest: Manifest = toml::from_str(text)
        .map_err(|e| invalid("<manifest>", e.to_string().trim().to_string()))?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let loaded = Loaded {
        manifest,
        bytes,
        base,
    };
    loaded.validate()?;
    Ok(loaded)
}

fn check_unique(field: &str, temps: impl Iterator<Item = f64>) -> Result<()> {
    let mut seen = HashSet::new();
    for (i, t) in temps.enumerate() {
        if t.is_nan() || t <= 0.0 {
            return Err(invalid(
                format!("{field}[{i}].temperature_k"),
                format!("{t} is not positive"),
            ));
        }
        if !seen.insert(t.to_bits()) {
            return Err(invalid(
                format!("{field}[{i}].temperature_k"),
                format!("duplicate temperature {t} K"),
            ));
        }
    }
    Ok(())
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    m.schema_version
                ),
            ));
        }
        let mut paths: Vec<(String, &Path)> = Vec::new();
        paths.extend(
            m.spectra
                .iter()
                .enumerate()
                .map(|(i, e)| (format!("spectra[{i}].path"), e.path.as_path())),
        );
        paths.extend(
            m.rates
                .iter()
                .enumerate()
                .map(|(i, e)| (format!("rates[{i}].path"), e.path.as_path())),
        );
        paths.extend(
            m.traces
                .iter()
                .enumerate()
                .map(|(i, e)| (format!("traces[{i}].path"), e.path.as_path())),
        );
        paths.extend(
            m.diffraction
                .iter()
                .enumerate()
                .map(|(i, e)| (format!("diffraction[{i}].path"), e.path.as_path())),
        );
        if let Some(p) = &m.modes {
            paths.push(("modes".into(), p.as_path()));
        }
        for (field, p) in paths {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(invalid(
                    field,
                    format!("file not found: {}", full.display()),
                ));
            }
        }
        // spectra must be unique per representation
        let mut by_rep: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for e in &m.spectra {
            by_rep
                .entry(&e.representation)
                .or_default()
                .push(e.temperature_k);
        }
        for temps in by_rep.values() {
            check_unique("spectra", temps.iter().copied())?;
        }
        check_unique("diffraction", m.diffraction.iter().map(|e| e.temperature_k))?;
        let mut trace_keys = HashSet::new();
        for (i, e) in m.traces.iter().enumerate() {
            if e.temperature_k.is_nan() || e.temperature_k <= 0.0 {
                return Err(invalid(
                    format!("traces[{i}].temperature_k"),
                    "must be positive",
                ));
            }
            if !trace_keys.insert((e.temperature_k.to_bits(), e.method, e.orientation)) {
                return Err(invalid(
                    format!("traces[{i}].temperature_k"),
                    format!("duplicate trace at {} K", e.temperature_k),
                ));
            }
        }
        if m.fit.edges_cm.len() < 2 {
            return Err(invalid("fit.edges_cm", "needs at least two edges"));
        }
        if m.fit.slope_window < 3 || m.fit.slope_window.is_multiple_of(2) {
            return Err(invalid("fit.slope_window", "must be odd and at least 3"));
        }
        m.fit.assembly.policy()?;
        m.correction
            .validate()
            .map_err(|e| invalid("correction", e.to_string()))?;
        Ok(())
    }

    pub fn spc_options(&self) -> SpcOptions {
        let f = &self.manifest.fit;
        SpcOptions {
            temperature_floor_k: f.temperature_floor_k,
            include_direct: f.include_direct,
            excluded_below_cm: f.excluded_below_cm,
            spectrum_mode: f.spectrum_mode,
            representation: self.representation().unwrap_or_else(default_representation),
        }
    }

    pub fn representation(&self) -> Option<String> {
        self.manifest.fit.representation.clone().or_else(|| {
            self.manifest
                .spectra
                .first()
                .map(|e| e.representation.clone())
        })
    }

    /// Representations in order of first appearance.
    pub fn representations(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.manifest.spectra {
            if !out.contains(&e.representation) {
                out.push(e.representation.clone());
            }
        }
        out
    }

    /// Corrected, normalized spectra of one representation.
    pub fn spectrum_set(&self, representation: &str) -> Result<SpectrumSet> {
        let entries: Vec<&SpectrumEntry> = self
            .manifest
            .spectra
            .iter()
            .filter(|e| e.representation == representation)
            .collect();
        if entries.is_empty() {
            return Err(invalid(
                "spectra",
                format!("no spectra with representation `{representation}`"),
            ));
        }
        let cfg = &self.manifest.correction;
        let spectra = entries
            .iter()
            .map(|e| {
                let path = self.resolve(&e.path);
                let s = io::read_spectrum(&path, e.temperature_k, Provenance::Raw)?;
                let s = match e.state {
                    SpectrumState::Raw => ins::correct(&s, cfg)?,
                    SpectrumState::Corrected => ins::normalize(&s, cfg)?,
                };
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SpectrumSet::new(spectra)?)
    }

    pub fn default_spectrum_set(&self) -> Result<SpectrumSet> {
        let rep = self
            .representation()
            .ok_or_else(|| invalid("spectra", "no spectra listed"))?;
        self.spectrum_set(&rep)
    }

    /// Rate points grouped by series label, in order of first appearance.
    pub fn rate_points(&self) -> Result<Vec<(String, Vec<RatePoint>)>> {
        let m = &self.manifest;
        if m.rates.is_empty() {
            return Err(invalid("rates", "no rate files listed"));
        }
        let mut groups: Vec<(String, Vec<RatePoint>)> = Vec::new();
        for e in &m.rates {
            let label = e.label.clone().unwrap_or_else(|| m.label.clone());
            let series = io::read_rates(&self.resolve(&e.path), &label, e.orientation, e.method)?;
            match groups.iter_mut().find(|(l, _)| *l == label) {
                Some((_, pts)) => pts.extend_from_slice(series.points()),
                None => groups.push((label, series.points().to_vec())),
            }
        }
        Ok(groups)
    }

    /// One series per label, assembled when configured.
    pub fn rate_series(&self) -> Result<Vec<RateSeries>> {
        let policy = self.manifest.fit.assembly.policy()?;
        self.rate_points()?
            .into_iter()
            .map(|(label, pts)| {
                Ok(if self.manifest.fit.assembly.enabled {
                    assemble_rate_series(&label, &pts, &policy)?
                } else {
                    RateSeries::new(&label, pts)?
                })
            })
            .collect()
    }

    pub fn traces(&self) -> Result<Vec<(&TraceEntry, RecoveryTrace)>> {
        if self.manifest.traces.is_empty() {
            return Err(invalid("traces", "no recovery traces listed"));
        }
        self.manifest
            .traces
            .iter()
            .map(|e| Ok((e, io::read_trace(&self.resolve(&e.path), e.method)?)))
            .collect()
    }

    pub fn patterns(&self) -> Result<Vec<DiffractionPattern>> {
        if self.manifest.diffraction.is_empty() {
            return Err(invalid("diffraction", "no diffraction patterns listed"));
        }
        self.manifest
            .diffraction
            .iter()
            .map(|e| Ok(io::read_pattern(&self.resolve(&e.path), e.temperature_k)?))
            .collect()
    }

    pub fn lattice_seeds(&self) -> Result<(Vec<PeakSeed>, Vec<Option<f64>>)> {
        let seeds = &self.manifest.lattice.seeds;
        if seeds.is_empty() {
            return Err(invalid("lattice.seeds", "no diffraction peaks to track"));
        }
        Ok(seeds
            .iter()
            .map(|s| {
                (
                    PeakSeed {
                        label: Some(s.label.clone()),
                        center: s.center_angstrom,
                        half_width: s.half_width_angstrom,
                    },
                    s.reference_d_angstrom,
                )
            })
            .unzip())
    }

    pub fn phonon_seeds(&self) -> Result<Vec<PeakSeed>> {
        let seeds = &self.manifest.anharm.seeds;
        if seeds.is_empty() {
            return Err(invalid("anharm.seeds", "no phonon peaks to track"));
        }
        Ok(seeds
            .iter()
            .map(|s| PeakSeed {
                label: Some(s.label.clone()),
                center: s.center_cm,
                half_width: s.half_width_cm,
            })
            .collect())
    }

    pub fn mode_set(&self) -> Result<ModeSet> {
        let p = self
            .manifest
            .modes
            .as_ref()
            .ok_or_else(|| invalid("modes", "no mode file listed"))?;
        Ok(io::read_mode_set(&self.resolve(p))?)
    }

    pub fn core(&self) -> Result<&CoreSpec> {
        self.manifest
            .structure
            .core
            .as_ref()
            .ok_or_else(|| invalid("structure.core", "core atoms not specified"))
    }
}
