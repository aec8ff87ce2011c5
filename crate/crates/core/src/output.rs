//! Result files: per-cell CSV, mdim CSV, structured JSON and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::harness::{SuiteReport, SweepResult};
use crate::system::OrbitSegment;
use crate::topological::EntropyCurve;

pub const CURVE_HEADER: &str = "run_id,system,curve_kind,measure_id,epsilon,n,delta,omega_index,count,exactness,entropy_fixed_n,entropy_slope,stderr";
pub const MDIM_HEADER: &str = "curve_kind,measure_id,window,slope_upper,slope_lower";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    /// Whether `--seed` replaced the configured seed.
    pub seed_overridden: bool,
    pub tool_version: String,
    pub command: String,
    /// Unix seconds; only recorded on request so that outputs stay reproducible.
    pub started_at: Option<u64>,
    pub finished_at: Option<u64>,
    /// `curve/measure/epsilon` → `done` or the reason it was skipped.
    pub completion: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config_hash: &str, seed: u64, seed_overridden: bool, command: &str) -> Self {
        let digest = Sha256::digest(format!("{config_hash}:{seed}:{command}").as_bytes());
        Self {
            run_id: digest[..8].iter().map(|b| format!("{b:02x}")).collect(),
            config_hash: config_hash.to_string(),
            seed,
            seed_overridden,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            started_at: None,
            finished_at: None,
            completion: BTreeMap::new(),
        }
    }

    /// Fill the completion map from the curves and skipped cells.
    pub fn record_completion(&mut self, result: &SweepResult) {
        let key = |kind: &str, m: Option<&str>, eps: f64| format!("{kind}/{}/{}", m.unwrap_or("-"), num(eps));
        for curve in result.all_curves() {
            for e in &curve.entries {
                self.completion
                    .insert(key(curve.kind.as_str(), curve.measure_id.as_deref(), e.eps), "done".into());
            }
        }
        for s in &result.skipped {
            let k = match s.eps {
                Some(eps) => key(s.curve_kind.as_str(), s.measure_id.as_deref(), eps),
                None => format!("{}/{}/mdim", s.curve_kind.as_str(), s.measure_id.as_deref().unwrap_or("-")),
            };
            self.completion.insert(k, format!("skipped: {}", s.reason));
        }
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// 17 significant digits in scientific notation.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn curve_rows(out: &mut String, run_id: &str, system: &str, curve: &EntropyCurve) {
    let measure = curve.measure_id.as_deref().unwrap_or("");
    for e in &curve.entries {
        for c in &e.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                run_id,
                csv_field(system),
                curve.kind.as_str(),
                csv_field(measure),
                num(e.eps),
                c.n,
                c.delta.map(num).unwrap_or_default(),
                c.omega_index,
                num(c.count),
                c.exactness.as_str(),
                num(c.entropy_fixed_n),
                num(c.entropy_slope),
                num(e.stderr),
            )
            .expect("writing to a string");
        }
    }
}

pub fn curves_csv(result: &SweepResult, run_id: &str) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for curve in result.all_curves() {
        curve_rows(&mut out, run_id, &result.system, curve);
    }
    out
}

pub fn mdim_csv(result: &SweepResult) -> String {
    let mut out = format!("{MDIM_HEADER}\n");
    for m in &result.mdim {
        writeln!(
            out,
            "{},{},{},{},{}",
            m.curve_kind.as_str(),
            csv_field(m.measure_id.as_deref().unwrap_or("")),
            m.window,
            num(m.upper),
            num(m.lower)
        )
        .expect("writing to a string");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub manifest: RunManifest,
    pub result: SweepResult,
}

fn write(dir: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    written.push(path);
    Ok(())
}

/// Which tables a command writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tables {
    Curves,
    Mdim,
    All,
}

/// Write `curves.csv` and/or `mdim.csv`, `results.json` and `manifest.json`.
pub fn write_results(
    result: &SweepResult,
    manifest: &RunManifest,
    dir: &Path,
    format: Format,
    tables: Tables,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if format.csv() {
        if tables != Tables::Mdim {
            write(dir, "curves.csv", &curves_csv(result, &manifest.run_id), &mut written)?;
        }
        if tables != Tables::Curves {
            write(dir, "mdim.csv", &mdim_csv(result), &mut written)?;
        }
    }
    if format.json() {
        let file = ResultsFile {
            manifest: manifest.clone(),
            result: result.clone(),
        };
        write(dir, "results.json", &(serde_json::to_string_pretty(&file)? + "\n"), &mut written)?;
    }
    write(dir, "manifest.json", &(serde_json::to_string_pretty(manifest)? + "\n"), &mut written)?;
    Ok(written)
}

pub const SUITE_HEADER: &str = "system,check,level,measure_id,omega_index,n,epsilon,delta,values,passed";

pub fn suite_csv(report: &SuiteReport) -> String {
    let mut out = format!("{SUITE_HEADER}\n");
    let opt_usize = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    for v in &report.verdicts {
        let values: Vec<String> = v.values.iter().map(|&x| num(x)).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            csv_field(&v.system),
            csv_field(&v.check),
            if v.level == crate::harness::CheckLevel::Hard { "hard" } else { "soft" },
            csv_field(v.measure_id.as_deref().unwrap_or("")),
            opt_usize(v.omega),
            opt_usize(v.n),
            v.eps.map(num).unwrap_or_default(),
            v.delta.map(num).unwrap_or_default(),
            values.join(" "),
            v.passed
        )
        .expect("writing to a string");
    }
    out
}

/// Write `verify.csv` and `verify.json`.
pub fn write_suite(report: &SuiteReport, manifest: &RunManifest, dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if format.csv() {
        write(dir, "verify.csv", &suite_csv(report), &mut written)?;
    }
    if format.json() {
        let json = serde_json::json!({ "manifest": manifest, "report": report });
        write(dir, "verify.json", &(serde_json::to_string_pretty(&json)? + "\n"), &mut written)?;
    }
    write(dir, "manifest.json", &(serde_json::to_string_pretty(manifest)? + "\n"), &mut written)?;
    Ok(written)
}

pub const ORBIT_HEADER: &str = "run_id,system,omega_index,t,symbol,point";

/// Orbit dump with one row per time step; points are space separated.
pub fn orbits_csv(run_id: &str, system: &str, orbits: &[OrbitSegment]) -> String {
    let mut out = format!("{ORBIT_HEADER}\n");
    for (w, o) in orbits.iter().enumerate() {
        for (t, p) in o.points.iter().enumerate() {
            let symbol = o.env.future().get(t).map(|s| s.to_string()).unwrap_or_default();
            let point = match p {
                crate::system::FiberPoint::Real(x) => num(*x),
                crate::system::FiberPoint::Vector(v) => v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(" "),
                crate::system::FiberPoint::Word(w) => w.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" "),
            };
            writeln!(out, "{run_id},{},{w},{t},{symbol},{point}", csv_field(system)).expect("writing to a string");
        }
    }
    out
}

pub fn write_orbits(
    orbits: &[OrbitSegment],
    system: &str,
    manifest: &RunManifest,
    dir: &Path,
    format: Format,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if format.csv() {
        write(dir, "orbits.csv", &orbits_csv(&manifest.run_id, system, orbits), &mut written)?;
    }
    if format.json() {
        let json = serde_json::json!({ "manifest": manifest, "system": system, "orbits": orbits });
        write(dir, "orbits.json", &(serde_json::to_string_pretty(&json)? + "\n"), &mut written)?;
    }
    write(dir, "manifest.json", &(serde_json::to_string_pretty(manifest)? + "\n"), &mut written)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_result_has_headers_only() {
        let r = SweepResult::empty("doubling", 0);
        assert_eq!(curves_csv(&r, "x"), format!("{CURVE_HEADER}\n"));
        assert_eq!(mdim_csv(&r), format!("{MDIM_HEADER}\n"));
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new("h", 0, false, "sweep");
        write_results(&r, &m, dir.path(), Format::Both, Tables::All).unwrap();
        let back: ResultsFile = serde_json::from_str(&fs::read_to_string(dir.path().join("results.json")).unwrap()).unwrap();
        assert_eq!(back.result, r);
        assert!(back.result.measures.is_empty());
    }

    #[test]
    fn numbers_have_seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(csv_field("bernoulli(0.5,0.5)"), "\"bernoulli(0.5,0.5)\"");
    }
}
