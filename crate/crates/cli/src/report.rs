use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::manifest::{in_band, CheckResult, Manifest, MANIFEST_FILE};

#[derive(Debug)]
pub struct Report {
    pub table: String,
    pub manifests: usize,
    /// Banded quantities outside their band (or undefined).
    pub flags: usize,
    /// Hard checks that failed.
    pub failures: usize,
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == MANIFEST_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

fn status(r: &CheckResult) -> &'static str {
    match r.band {
        Some(b) if !r.value.is_some_and(|v| in_band(v, b)) => {
            if r.hard {
                "FAIL"
            } else {
                "FLAG"
            }
        }
        _ if r.hard && !r.pass => "FAIL",
        _ => "ok",
    }
}

fn bound(v: f64) -> String {
    if v >= f64::MAX {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

/// Summary table over every manifest.json below `dir`.
pub fn report(dir: &Path) -> Result<Report> {
    let mut paths = Vec::new();
    collect(dir, &mut paths)?;
    if paths.is_empty() {
        bail!("no {MANIFEST_FILE} found under {}", dir.display());
    }
    let mut table = format!("{:<24} {:<12} {:<32} {:>16} {:>28} {:>6}\n", "run", "subcommand", "check", "value", "band/tol", "status");
    let (mut flags, mut failures) = (0, 0);
    for p in &paths {
        let m = Manifest::read(p)?;
        let run = p.parent().and_then(|d| d.strip_prefix(dir).ok()).map_or(String::new(), |d| d.display().to_string());
        let run = if run.is_empty() { ".".to_string() } else { run };
        for r in &m.results {
            let st = status(r);
            match st {
                "FLAG" => flags += 1,
                "FAIL" => failures += 1,
                _ => {}
            }
            let value = r.value.map_or("undefined".into(), |v| format!("{v:.6e}"));
            let limit = match (r.band, r.tolerance) {
                (Some(b), _) => format!("[{}, {}]", bound(b[0]), bound(b[1])),
                (None, Some(t)) => format!("tol {t:.1e}"),
                _ => String::new(),
            };
            writeln!(table, "{run:<24} {:<12} {:<32} {value:>16} {limit:>28} {st:>6}", m.subcommand, r.name).unwrap();
        }
    }
    writeln!(table, "{} manifests, {flags} flagged, {failures} failed", paths.len()).unwrap();
    Ok(Report { table, manifests: paths.len(), flags, failures })
}
