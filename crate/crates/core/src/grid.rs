//! Energy grids, spectra and bin quadrature.
//!
//! Spectra store a density per cm⁻¹ on each bin, so integrals are
//! `Σ density_i · width_i` regardless of how the grid is laid out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EnergyGrid {
    edges: Vec<f64>,
    centers: Vec<f64>,
}

impl TryFrom<Vec<f64>> for EnergyGrid {
    type Error = Error;
    fn try_from(edges: Vec<f64>) -> Result<Self> {
        EnergyGrid::new(edges)
    }
}

impl From<EnergyGrid> for Vec<f64> {
    fn from(g: EnergyGrid) -> Vec<f64> {
        g.edges
    }
}

impl EnergyGrid {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::invalid("energy grid needs at least two edges"));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("energy grid edges must be finite"));
        }
        if edges[0] < 0.0 {
            return Err(Error::invalid(format!(
                "first grid edge {} is negative",
                edges[0]
            )));
        }
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "energy grid edges must be strictly increasing",
            ));
        }
        let centers = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Ok(Self { edges, centers })
    }

    /// `n` equal bins spanning `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 || !(hi > lo) {
            return Err(Error::invalid(format!(
                "uniform grid needs n > 0 and hi > lo (got n={n}, [{lo}, {hi}])"
            )));
        }
        let h = (hi - lo) / n as f64;
        let mut edges: Vec<f64> = (0..=n).map(|i| lo + h * i as f64).collect();
        edges[n] = hi;
        Self::new(edges)
    }

    /// Builds bin edges from sampled energies: interior edges at midpoints,
    /// outer edges mirrored (the lowest clamped at zero).
    pub fn from_centers(centers: &[f64]) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::invalid("need at least two energies to build a grid"));
        }
        let n = centers.len();
        let mut edges = Vec::with_capacity(n + 1);
        edges.push((centers[0] - 0.5 * (centers[1] - centers[0])).max(0.0));
        for w in centers.windows(2) {
            edges.push(0.5 * (w[0] + w[1]));
        }
        edges.push(centers[n - 1] + 0.5 * (centers[n - 1] - centers[n - 2]));
        Self::new(edges)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    pub fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.windows(2).map(|w| w[1] - w[0])
    }

    pub fn min(&self) -> f64 {
        self.edges[0]
    }

    pub fn max(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    /// Length of the intersection of bin `i` with `[lo, hi]`.
    pub fn overlap(&self, i: usize, lo: f64, hi: f64) -> f64 {
        (self.edges[i + 1].min(hi) - self.edges[i].max(lo)).max(0.0)
    }

    pub fn is_uniform(&self, rel_tol: f64) -> bool {
        let h0 = self.width(0);
        self.widths().all(|h| (h - h0).abs() <= rel_tol * h0)
    }

    pub(crate) fn same_as(&self, other: &EnergyGrid) -> bool {
        self.edges.len() == other.edges.len()
            && self
                .edges
                .iter()
                .zip(&other.edges)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Raw,
    Corrected,
    Normalized,
    Dos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub grid: EnergyGrid,
    pub intensity: Vec<f64>,
    pub temperature_k: f64,
    pub provenance: Provenance,
}

impl Spectrum {
    pub fn new(
        grid: EnergyGrid,
        intensity: Vec<f64>,
        temperature_k: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        if intensity.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: intensity.len(),
            });
        }
        if !(temperature_k > 0.0) || !temperature_k.is_finite() {
            return Err(Error::invalid(format!(
                "spectrum temperature must be positive, got {temperature_k}"
            )));
        }
        if intensity.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("spectrum intensities must be finite"));
        }
        Ok(Self {
            grid,
            intensity,
            temperature_k,
            provenance,
        })
    }

    /// Same grid and temperature, new intensities.
    pub fn with_intensity(&self, intensity: Vec<f64>, provenance: Provenance) -> Result<Self> {
        Self::new(self.grid.clone(), intensity, self.temperature_k, provenance)
    }

    pub fn integral(&self) -> f64 {
        self.intensity
            .iter()
            .zip(self.grid.widths())
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Integral over `[lo, hi]`, counting partially covered bins by overlap.
    pub fn integral_between(&self, lo: f64, hi: f64) -> f64 {
        self.intensity
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.grid.overlap(i, lo, hi))
            .sum()
    }

    pub fn is_non_negative(&self) -> bool {
        self.intensity.iter().all(|&v| v >= 0.0)
    }
}

/// Temperature-indexed family of spectra on one shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSet {
    spectra: Vec<Spectrum>,
}

impl SpectrumSet {
    pub fn new(mut spectra: Vec<Spectrum>) -> Result<Self> {
        if spectra.is_empty() {
            return Err(Error::invalid("spectrum set is empty"));
        }
        spectra.sort_by(|a, b| a.temperature_k.total_cmp(&b.temperature_k));
        let grid = &spectra[0].grid;
        if spectra.iter().any(|s| !s.grid.same_as(grid)) {
            return Err(Error::invalid("all spectra in a set must share one grid"));
        }
        if let Some(w) = spectra
            .windows(2)
            .find(|w| w[1].temperature_k <= w[0].temperature_k)
        {
            return Err(Error::invalid(format!(
                "duplicate temperature {} K in spectrum set",
                w[0].temperature_k
            )));
        }
        Ok(Self { spectra })
    }

    pub fn grid(&self) -> &EnergyGrid {
        &self.spectra[0].grid
    }

    pub fn spectra(&self) -> &[Spectrum] {
        &self.spectra
    }

    pub fn len(&self) -> usize {
        self.spectra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectra.is_empty()
    }

    pub fn temperatures(&self) -> Vec<f64> {
        self.spectra.iter().map(|s| s.temperature_k).collect()
    }

    /// `(T_min, T_max)` of the measured spectra.
    pub fn temperature_range(&self) -> (f64, f64) {
        (
            self.spectra[0].temperature_k,
            self.spectra[self.spectra.len() - 1].temperature_k,
        )
    }

    pub fn map<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&Spectrum) -> Result<Spectrum>,
    {
        Self::new(self.spectra.iter().map(f).collect::<Result<Vec<_>>>()?)
    }

    pub fn into_spectra(self) -> Vec<Spectrum> {
        self.spectra
    }
}

/// Midpoint-rule integral of a per-bin density.
pub fn integrate(values: &[f64], grid: &EnergyGrid) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            got: values.len(),
        });
    }
    Ok(values.iter().zip(grid.widths()).map(|(v, w)| v * w).sum())
}

/// Conservative rebinning onto `target`. Target bins outside the source
/// range receive zero.
pub fn resample(spec: &Spectrum, target: &EnergyGrid) -> Result<Spectrum> {
    let src = &spec.grid;
    if target.max() <= src.min() || target.min() >= src.max() {
        return Err(Error::DisjointGrids);
    }
    if src.same_as(target) {
        return Ok(spec.clone());
    }
    let se = src.edges();
    let mut out = vec![0.0; target.len()];
    // both edge lists are sorted: sweep once
    let mut j = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        let (lo, hi) = (target.edges()[i], target.edges()[i + 1]);
        while j + 1 < se.len() && se[j + 1] <= lo {
            j += 1;
        }
        let mut k = j;
        let mut mass = 0.0;
        while k < src.len() && se[k] < hi {
            mass += spec.intensity[k] * src.overlap(k, lo, hi);
            k += 1;
        }
        *slot = mass / (hi - lo);
    }
    Spectrum::new(target.clone(), out, spec.temperature_k, spec.provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spectrum(grid: EnergyGrid, f: impl Fn(f64) -> f64) -> Spectrum {
        let v = grid.centers().iter().map(|&e| f(e)).collect();
        Spectrum::new(grid, v, 10.0, Provenance::Raw).unwrap()
    }

    #[test]
    fn centers_are_midpoints() {
        let g = EnergyGrid::new(vec![0.0, 1.0, 3.0, 6.0]).unwrap();
        assert_eq!(g.centers(), &[0.5, 2.0, 4.5]);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(EnergyGrid::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(EnergyGrid::new(vec![-1.0, 1.0]).is_err());
        assert!(EnergyGrid::new(vec![1.0]).is_err());
    }

    #[test]
    fn integrate_examples() {
        let g = EnergyGrid::uniform(0.0, 600.0, 60).unwrap();
        assert!((integrate(&vec![1.0; 60], &g).unwrap() - 600.0).abs() < 1e-9);
        assert_eq!(integrate(&vec![0.0; 60], &g).unwrap(), 0.0);

        let g = EnergyGrid::uniform(0.0, 100.0, 1000).unwrap();
        let v: Vec<f64> = g.centers().to_vec();
        assert!((integrate(&v, &g).unwrap() - 5000.0).abs() < 0.1);
    }

    #[test]
    fn integrate_length_mismatch() {
        let g = EnergyGrid::uniform(0.0, 1.0, 4).unwrap();
        assert!(matches!(
            integrate(&[1.0; 3], &g),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn resample_identity_and_split() {
        let g = EnergyGrid::uniform(0.0, 600.0, 37).unwrap();
        let s = spectrum(g.clone(), |e| (e / 50.0).sin().abs());
        assert_eq!(resample(&s, &g).unwrap().intensity, s.intensity);

        let one = Spectrum::new(
            EnergyGrid::new(vec![0.0, 10.0]).unwrap(),
            vec![1.0],
            5.0,
            Provenance::Raw,
        )
        .unwrap();
        let two = resample(&one, &EnergyGrid::new(vec![0.0, 5.0, 10.0]).unwrap()).unwrap();
        assert_eq!(two.intensity, vec![1.0, 1.0]);
    }

    #[test]
    fn resample_triangle_to_finer_grid() {
        let coarse = EnergyGrid::uniform(0.0, 100.0, 50).unwrap();
        let tri = |e: f64| if e < 50.0 { e } else { 100.0 - e };
        let s = spectrum(coarse, tri);
        let fine = EnergyGrid::uniform(0.0, 100.0, 100).unwrap();
        let r = resample(&s, &fine).unwrap();
        // trapezoid on the bin centers, before and after
        let trap = |x: &[f64], y: &[f64]| -> f64 {
            x.windows(2)
                .zip(y.windows(2))
                .map(|(xx, yy)| 0.5 * (xx[1] - xx[0]) * (yy[0] + yy[1]))
                .sum()
        };
        let before = trap(s.grid.centers(), &s.intensity);
        let after = trap(r.grid.centers(), &r.intensity);
        assert!(((after - before) / before).abs() < 5e-3);
        assert!((r.integral() - s.integral()).abs() < 1e-9 * s.integral());
    }

    #[test]
    fn resample_outside_is_zero_and_disjoint_errors() {
        let s = spectrum(EnergyGrid::uniform(10.0, 20.0, 10).unwrap(), |_| 1.0);
        let r = resample(&s, &EnergyGrid::uniform(0.0, 30.0, 3).unwrap()).unwrap();
        assert_eq!(r.intensity, vec![0.0, 1.0, 0.0]);
        assert!(matches!(
            resample(&s, &EnergyGrid::uniform(30.0, 40.0, 3).unwrap()),
            Err(Error::DisjointGrids)
        ));
    }

    #[test]
    fn set_rejects_duplicate_temperatures() {
        let g = EnergyGrid::uniform(0.0, 1.0, 2).unwrap();
        let a = Spectrum::new(g.clone(), vec![1.0, 1.0], 5.0, Provenance::Raw).unwrap();
        assert!(SpectrumSet::new(vec![a.clone(), a.clone()]).is_err());
        let mut b = a.clone();
        b.temperature_k = 2.0;
        let set = SpectrumSet::new(vec![a, b]).unwrap();
        assert_eq!(set.temperatures(), vec![2.0, 5.0]);
    }

    proptest! {
        #[test]
        fn integrate_is_linear(
            a in proptest::collection::vec(0.0f64..10.0, 12),
            b in proptest::collection::vec(0.0f64..10.0, 12),
            k in -5.0f64..5.0,
        ) {
            let g = EnergyGrid::new((0..13).map(|i| (i * i) as f64).collect()).unwrap();
            let lhs = integrate(
                &a.iter().zip(&b).map(|(x, y)| x + k * y).collect::<Vec<_>>(), &g).unwrap();
            let rhs = integrate(&a, &g).unwrap() + k * integrate(&b, &g).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn resample_round_trip_preserves_integral(
            v in proptest::collection::vec(0.0f64..5.0, 40),
            n in 7usize..120,
        ) {
            let g = EnergyGrid::uniform(0.0, 400.0, 40).unwrap();
            let s = Spectrum::new(g.clone(), v, 20.0, Provenance::Raw).unwrap();
            let other = EnergyGrid::uniform(0.0, 400.0, n).unwrap();
            let back = resample(&resample(&s, &other).unwrap(), &g).unwrap();
            let (i0, i1) = (s.integral(), back.integral());
            prop_assert!((i1 - i0).abs() <= 0.01 * i0.max(1e-12));
        }
    }
}
