//! CSV and JSON persistence. Floats are written in shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::density::SpectralDensity;
use crate::error::{Result, SpectraError};
use crate::rmt_sim::EmpiricalSpectrum;
use crate::signal_prop::PhaseCell;

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| SpectraError::Invalid(format!("{}: {e}", dir.display())))?;
        }
    }
    fs::write(path, text).map_err(|e| SpectraError::Invalid(format!("{}: {e}", path.display())))
}

/// `domain,x,rho` rows followed by `atom,location,mass` rows.
pub fn density_csv(d: &SpectralDensity) -> String {
    let mut s = String::from("domain,x,rho\n");
    let dom = d.domain.as_str();
    for (x, r) in d.grid().iter().zip(d.rho()) {
        let _ = writeln!(s, "{dom},{x},{r}");
    }
    for a in &d.atoms {
        let _ = writeln!(s, "atom,{},{}", a.location, a.mass);
    }
    s
}

pub fn write_density(d: &SpectralDensity, csv: &Path, json: Option<&Path>) -> Result<()> {
    write_file(csv, &density_csv(d))?;
    if let Some(j) = json {
        write_file(j, &to_json(d)?)?;
    }
    Ok(())
}

pub fn phase_grid_csv(cells: &[PhaseCell]) -> String {
    let mut s = String::from("sigma_w,sigma_b,qstar,chi,converged\n");
    for c in cells {
        let _ = writeln!(s, "{},{},{},{},{}", c.sigma_w, c.sigma_b, c.qstar, c.chi, c.converged);
    }
    s
}

pub fn write_phase_grid(cells: &[PhaseCell], path: &Path) -> Result<()> {
    write_file(path, &phase_grid_csv(cells))
}

pub fn spectrum_csv(sp: &EmpiricalSpectrum) -> String {
    let mut s = String::with_capacity(24 * sp.singular_values.len() + 2);
    s.push_str("s\n");
    for v in &sp.singular_values {
        let _ = writeln!(s, "{v}");
    }
    s
}

/// Spectrum CSV plus a JSON sidecar next to it.
pub fn write_spectrum(sp: &EmpiricalSpectrum, csv: &Path, sidecar: &Path) -> Result<()> {
    write_file(csv, &spectrum_csv(sp))?;
    write_file(sidecar, &to_json(sp)?)
}

pub fn read_spectrum_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| SpectraError::Invalid(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("s") {
        return Err(SpectraError::Invalid(format!(
            "{}: expected header `s`",
            path.display()
        )));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| SpectraError::Invalid(format!("{}: {l:?}: {e}", path.display())))
        })
        .collect()
}

pub fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| SpectraError::Invalid(e.to_string()))
}

pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    write_file(path, &(to_json(value)? + "\n"))
}
