//! CSV and JSON artifacts. Numbers are written with 17 significant digits in
//! C `%.17g` style so every value round-trips exactly.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::grid::{DensityField, Grid};
use crate::steady::FluxVector;

/// `printf("%.17g", x)`.
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (16 - exp) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn create(path: &Path) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_rows<W: Write>(out: &mut W, header: &str, rows: impl Iterator<Item = Vec<f64>>) -> io::Result<()> {
    writeln!(out, "{header}")?;
    for row in rows {
        let line: Vec<String> = row.into_iter().map(fmt_g17).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()
}

/// `t,X,mass,lost_tail,picard_iters`.
pub fn write_trace(
    path: &Path,
    times: &[f64],
    x: &[f64],
    mass: &[f64],
    lost: &[f64],
    picard_iters: &[usize],
) -> io::Result<()> {
    let rows = (0..times.len()).map(|k| vec![times[k], x[k], mass[k], lost[k], picard_iters[k] as f64]);
    write_rows(&mut create(path)?, "t,X,mass,lost_tail,picard_iters", rows)
}

/// `t,a,N`, one row per flux node of every recorded time.
pub fn write_flux(path: &Path, delta: f64, rows: &[(f64, Vec<f64>)]) -> io::Result<()> {
    let lines = rows.iter().flat_map(|(t, n)| {
        n.iter()
            .enumerate()
            .map(move |(j, v)| vec![*t, (j as f64 + 0.5) * delta, *v])
    });
    write_rows(&mut create(path)?, "t,a,N", lines)
}

/// `a,N` for a single flux profile.
pub fn write_flux_profile(path: &Path, flux: &FluxVector) -> io::Result<()> {
    let rows = flux.values.iter().enumerate().map(|(j, v)| vec![flux.node(j), *v]);
    write_rows(&mut create(path)?, "a,N", rows)
}

/// `s,d,a,mass` at cell centres, row-major.
pub fn write_snapshot(path: &Path, field: &DensityField) -> io::Result<()> {
    let g: Grid = field.grid;
    let rows = (0..g.n_s).flat_map(move |i| {
        (0..g.n_d).map(move |j| vec![g.s_center(i), g.d_center(j), g.a_center(i, j), field.get(i, j)])
    });
    write_rows(&mut create(path)?, "s,d,a,mass", rows)
}

/// `t,X,mass` of a one-time run.
pub fn write_trace_1d(path: &Path, times: &[f64], x: &[f64], mass: &[f64]) -> io::Result<()> {
    let rows = (0..times.len()).map(|k| vec![times[k], x[k], mass[k]]);
    write_rows(&mut create(path)?, "t,X,mass", rows)
}

/// `t,residual`.
pub fn write_residual(path: &Path, residual: &[(f64, f64)]) -> io::Result<()> {
    write_rows(&mut create(path)?, "t,residual", residual.iter().map(|(t, r)| vec![*t, *r]))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
}

/// Written next to the artifacts of every command. Holds nothing that varies
/// between identical runs, so it is byte-stable too.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub grid: GridInfo,
    pub tolerances: serde_json::Value,
    pub files: Vec<ManifestFile>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridInfo {
    pub delta: f64,
    pub s_max: f64,
    pub d_max: f64,
    pub n_s: usize,
    pub n_d: usize,
}

impl From<Grid> for GridInfo {
    fn from(g: Grid) -> Self {
        GridInfo {
            delta: g.delta,
            s_max: g.s_max(),
            d_max: g.d_max(),
            n_s: g.n_s,
            n_d: g.n_d,
        }
    }
}

/// Hashes the listed files in `dir` and writes `manifest.json`.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    config_sha256: String,
    grid: Grid,
    tolerances: serde_json::Value,
    names: &[String],
) -> io::Result<PathBuf> {
    let mut files = Vec::new();
    for name in names {
        files.push(ManifestFile {
            name: name.clone(),
            sha256: sha256_hex(&std::fs::read(dir.join(name))?),
        });
    }
    let manifest = Manifest {
        command: command.into(),
        config_sha256,
        grid: grid.into(),
        tolerances,
        files,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn g17_matches_printf() {
        // reference strings from C printf("%.17g")
        let cases: [(f64, &str); 18] = [
            (0.0, "0"),
            (-0.0, "-0"),
            (1.0, "1"),
            (0.1, "0.10000000000000001"),
            (1.0 / 3.0, "0.33333333333333331"),
            (-2.5, "-2.5"),
            (1e-5, "1.0000000000000001e-05"),
            (0.0001, "0.0001"),
            (123456789012345678.0, "1.2345678901234568e+17"),
            (1e16, "10000000000000000"),
            (1e17, "1e+17"),
            (12345.678, "12345.678"),
            (5e-324, "4.9406564584124654e-324"),
            (f64::MAX, "1.7976931348623157e+308"),
            (0.36787944117144233, "0.36787944117144233"),
            (0.005, "0.0050000000000000001"),
            (30.0, "30"),
            (6.666666666666665e-08, "6.6666666666666655e-08"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_g17(x), want, "{x:e}");
        }
        assert_eq!(fmt_g17(f64::NAN), "nan");
        assert_eq!(fmt_g17(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn g17_round_trips() {
        for x in [std::f64::consts::PI, 1e-300, -7.25e12, 0.30000000000000004, 2.2250738585072014e-308] {
            assert_eq!(fmt_g17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn snapshot_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let g = build_grid(0.5, 1.0, 1.0).unwrap();
        let f = DensityField::from_masses(g, vec![0.25, 0.5, 0.0, 0.25]).unwrap();
        write_snapshot(&dir.path().join("snap.csv"), &f).unwrap();
        let text = std::fs::read_to_string(dir.path().join("snap.csv")).unwrap();
        assert_eq!(text, "s,d,a,mass\n0.25,0.25,0.5,0.25\n0.25,0.75,1,0.5\n0.75,0.25,1,0\n0.75,0.75,1.5,0.25\n");
        let m = write_manifest(dir.path(), "simulate", "abc".into(), g, serde_json::json!({"picard_tol": 1e-12}), &["snap.csv".into()])
            .unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(m).unwrap()).unwrap();
        assert_eq!(v["files"][0]["sha256"], sha256_hex(text.as_bytes()));
        assert_eq!(v["grid"]["n_s"], 2);
        // sha256("abc")
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
