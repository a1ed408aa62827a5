//! CSV and JSON readers and writers for the on-disk data formats.
//!
//! Columns are located by header name, so column order is free and
//! unknown extra columns are ignored.

use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{EnergyGrid, Provenance, Spectrum};
use crate::lattice::DiffractionPattern;
use crate::modes::ModeSet;
use crate::relax::{Method, Orientation, RatePoint, RateSeries, RecoveryTrace};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => parse_err(path, format!("{other:?}")),
    }
}

/// Header-indexed rows of a CSV file.
struct Table {
    path: String,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(file);
        let headers = rdr
            .headers()
            .map_err(|e| csv_err(path, e))?
            .iter()
            .map(|h| h.to_ascii_lowercase())
            .collect();
        let rows = rdr
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| csv_err(path, e))?;
        Ok(Self {
            path: path.display().to_string(),
            headers,
            rows,
        })
    }

    fn column(&self, names: &[&str]) -> Option<usize> {
        names
            .iter()
            .find_map(|n| self.headers.iter().position(|h| h == n))
    }

    fn require(&self, names: &[&str]) -> Result<usize> {
        self.column(names).ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            message: format!("missing column `{}`", names[0]),
        })
    }

    fn cell(&self, row: usize, col: usize) -> Option<&str> {
        self.rows[row].get(col).filter(|s| !s.is_empty())
    }

    fn number(&self, row: usize, col: usize) -> Result<f64> {
        let raw = self.rows[row].get(col).unwrap_or("");
        raw.parse::<f64>().map_err(|_| Error::Parse {
            path: self.path.clone(),
            message: format!(
                "row {}: `{raw}` in column `{}` is not a number",
                row + 1,
                self.headers[col]
            ),
        })
    }

    fn numbers(&self, col: usize) -> Result<Vec<f64>> {
        (0..self.rows.len()).map(|r| self.number(r, col)).collect()
    }
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes a numeric table; values use the shortest round-trip format.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::LengthMismatch {
                expected: header.len(),
                got: r.len(),
            });
        }
    }
    write_csv(
        path,
        header,
        rows.iter()
            .map(|r| r.iter().map(|v| v.to_string()).collect()),
    )
}

/// Reads `energy_cm,intensity[,error]`; energies are bin centers.
pub fn read_spectrum(path: &Path, temperature_k: f64, provenance: Provenance) -> Result<Spectrum> {
    let t = Table::read(path)?;
    let e = t.numbers(t.require(&["energy_cm"])?)?;
    let y = t.numbers(t.require(&["intensity"])?)?;
    let grid = EnergyGrid::from_centers(&e).map_err(|err| parse_err(path, err.to_string()))?;
    Spectrum::new(grid, y, temperature_k, provenance)
}

pub fn write_spectrum(path: &Path, spec: &Spectrum) -> Result<()> {
    let rows: Vec<Vec<f64>> = spec
        .grid
        .centers()
        .iter()
        .zip(&spec.intensity)
        .map(|(e, y)| vec![*e, *y])
        .collect();
    write_table(path, &["energy_cm", "intensity"], &rows)
}

/// Reads `T_K,rate_per_us[,err][,orientation][,method]`. Missing
/// orientation or method cells take the supplied defaults.
pub fn read_rates(
    path: &Path,
    label: &str,
    orientation: Orientation,
    method: Method,
) -> Result<RateSeries> {
    let t = Table::read(path)?;
    let ct = t.require(&["t_k"])?;
    let cr = t.require(&["rate_per_us"])?;
    let ce = t.column(&["err", "rate_err_per_us"]);
    let co = t.column(&["orientation"]);
    let cm = t.column(&["method"]);
    let points = (0..t.rows.len())
        .map(|r| {
            let rate_err_per_us = match ce.and_then(|c| t.cell(r, c)) {
                Some(_) => Some(t.number(r, ce.unwrap())?),
                None => None,
            };
            let orientation = match co.and_then(|c| t.cell(r, c)) {
                Some(s) => s
                    .parse()
                    .map_err(|e: Error| parse_err(path, e.to_string()))?,
                None => orientation,
            };
            let method = match cm.and_then(|c| t.cell(r, c)) {
                Some(s) => s
                    .parse()
                    .map_err(|e: Error| parse_err(path, e.to_string()))?,
                None => method,
            };
            Ok(RatePoint {
                temperature_k: t.number(r, ct)?,
                rate_per_us: t.number(r, cr)?,
                rate_err_per_us,
                orientation,
                method,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RateSeries::new(label, points)
}

fn orientation_tag(o: Orientation) -> &'static str {
    match o {
        Orientation::Parallel => "parallel",
        Orientation::Perpendicular => "perpendicular",
        Orientation::Unspecified => "unspecified",
    }
}

fn method_tag(m: Method) -> &'static str {
    match m {
        Method::Inversion => "inversion",
        Method::Saturation => "saturation",
    }
}

pub fn write_rates(path: &Path, series: &RateSeries) -> Result<()> {
    let rows = series.points().iter().map(|p| {
        vec![
            p.temperature_k.to_string(),
            p.rate_per_us.to_string(),
            p.rate_err_per_us.map(|e| e.to_string()).unwrap_or_default(),
            orientation_tag(p.orientation).to_string(),
            method_tag(p.method).to_string(),
        ]
    });
    write_csv(
        path,
        &["T_K", "rate_per_us", "err", "orientation", "method"],
        rows,
    )
}

/// Reads `delay_us,signal`.
pub fn read_trace(path: &Path, kind: Method) -> Result<RecoveryTrace> {
    let t = Table::read(path)?;
    let d = t.numbers(t.require(&["delay_us"])?)?;
    let s = t.numbers(t.require(&["signal"])?)?;
    RecoveryTrace::new(d, s, kind)
}

pub fn write_trace(path: &Path, trace: &RecoveryTrace) -> Result<()> {
    let rows: Vec<Vec<f64>> = trace
        .delays_us
        .iter()
        .zip(&trace.signal)
        .map(|(d, s)| vec![*d, *s])
        .collect();
    write_table(path, &["delay_us", "signal"], &rows)
}

/// Reads `d_angstrom,intensity`.
pub fn read_pattern(path: &Path, temperature_k: f64) -> Result<DiffractionPattern> {
    let t = Table::read(path)?;
    let d = t.numbers(t.require(&["d_angstrom"])?)?;
    let y = t.numbers(t.require(&["intensity"])?)?;
    DiffractionPattern::new(d, y, temperature_k)
}

pub fn write_pattern(path: &Path, pattern: &DiffractionPattern) -> Result<()> {
    let rows: Vec<Vec<f64>> = pattern
        .d()
        .iter()
        .zip(pattern.intensity())
        .map(|(d, y)| vec![*d, *y])
        .collect();
    write_table(path, &["d_angstrom", "intensity"], &rows)
}

pub fn read_mode_set(path: &Path) -> Result<ModeSet> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    ModeSet::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn spectrum_round_trip() {
        let grid = EnergyGrid::uniform(0.0, 10.0, 10).unwrap();
        let s = Spectrum::new(
            grid,
            (0..10).map(|i| i as f64 * 0.1).collect(),
            20.0,
            Provenance::Raw,
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_spectrum(f.path(), &s).unwrap();
        let back = read_spectrum(f.path(), 20.0, Provenance::Raw).unwrap();
        assert_eq!(back.intensity, s.intensity);
        for (a, b) in back.grid.edges().iter().zip(s.grid.edges()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rates_with_optional_columns() {
        let f = file("T_K,rate_per_us,err,orientation\n10,0.5,,\n20,2.0,0.1,parallel\n");
        let s = read_rates(
            f.path(),
            "x",
            Orientation::Perpendicular,
            Method::Saturation,
        )
        .unwrap();
        let p = s.points();
        assert_eq!(p[0].rate_err_per_us, None);
        assert_eq!(p[0].orientation, Orientation::Perpendicular);
        assert_eq!(p[1].orientation, Orientation::Parallel);
        assert_eq!(p[1].method, Method::Saturation);

        let out = tempfile::NamedTempFile::new().unwrap();
        write_rates(out.path(), &s).unwrap();
        let back =
            read_rates(out.path(), "x", Orientation::Unspecified, Method::Inversion).unwrap();
        assert_eq!(back.points(), s.points());
    }

    #[test]
    fn trace_and_pattern_round_trip() {
        let tr = RecoveryTrace::new(
            (1..=10).map(|i| i as f64).collect(),
            (1..=10).map(|i| 1.0 - (-(i as f64) / 3.0).exp()).collect(),
            Method::Saturation,
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_trace(f.path(), &tr).unwrap();
        assert_eq!(read_trace(f.path(), Method::Saturation).unwrap(), tr);

        let p = DiffractionPattern::new(vec![3.0, 3.1, 3.2], vec![1.0, 2.0, 1.0], 100.0).unwrap();
        write_pattern(f.path(), &p).unwrap();
        assert_eq!(read_pattern(f.path(), 100.0).unwrap(), p);
    }

    #[test]
    fn errors_name_the_problem() {
        let f = file("energy_cm,counts\n1,2\n");
        let e = read_spectrum(f.path(), 10.0, Provenance::Raw).unwrap_err();
        assert!(e.is_io() && e.to_string().contains("intensity"), "{e}");
        let f = file("T_K,rate_per_us\n10,abc\n");
        let e = read_rates(f.path(), "x", Orientation::Unspecified, Method::Inversion).unwrap_err();
        assert!(e.to_string().contains("abc"), "{e}");
        let e = read_trace(Path::new("/nonexistent/trace.csv"), Method::Inversion).unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
    }
}
