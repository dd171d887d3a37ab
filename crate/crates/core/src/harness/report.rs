//! Flat-file reports for sweep tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::sweep::{SweepKind, SweepRow, SweepSpec, SweepTable};
use crate::error::{Error, Result};

/// Per-value means over seeds for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub value: f64,
    pub succ_bdd: f64,
    pub succ_learn: Option<f64>,
    pub median_residual: f64,
    pub recon_error: Option<f64>,
    pub count: usize,
}

/// Averages successful rows of `method` by grid value, ascending.
pub fn series(table: &SweepTable, method: &str) -> Vec<SeriesPoint> {
    let mut groups: BTreeMap<u64, Vec<&SweepRow>> = BTreeMap::new();
    for r in table.method(method).filter(|r| r.error.is_none()) {
        // order-preserving key for non-negative and negative floats alike
        let bits = r.value.to_bits();
        let key = if r.value.is_sign_negative() { !bits } else { bits | (1 << 63) };
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_values()
        .map(|rows| {
            let k = rows.len() as f64;
            let mean = |f: &dyn Fn(&SweepRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / k;
            let opt_mean = |f: &dyn Fn(&SweepRow) -> Option<f64>| {
                let v: Option<Vec<f64>> = rows.iter().map(|r| f(r)).collect();
                v.map(|v| v.iter().sum::<f64>() / k)
            };
            SeriesPoint {
                value: rows[0].value,
                succ_bdd: mean(&|r| r.succ_bdd),
                succ_learn: opt_mean(&|r| r.succ_learn),
                median_residual: mean(&|r| r.median_residual),
                recon_error: opt_mean(&|r| r.recon_error),
                count: rows.len(),
            }
        })
        .collect()
}

fn methods(table: &SweepTable) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in &table.rows {
        if !out.contains(&r.method) {
            out.push(r.method.clone());
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6e}"))
}

/// Gnuplot-ready columns for one method.
pub fn dat_series(table: &SweepTable, method: &str) -> String {
    let mut s = format!("# {} sweep, method {method}\n# value succ_bdd succ_learn median_residual recon_error seeds\n", table.spec.kind);
    for p in series(table, method) {
        let _ = writeln!(
            s,
            "{} {:.6} {} {:.6e} {} {}",
            p.value,
            p.succ_bdd,
            p.succ_learn.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}")),
            p.median_residual,
            opt(p.recon_error),
            p.count
        );
    }
    s
}

/// Bypass rates in percent, one column per gamma: first row the
/// chi-squared test, second row the learned detector.
pub fn table_one(table: &SweepTable) -> Result<String> {
    if table.spec.kind != SweepKind::Gamma {
        return Err(Error::Config("the bypass table needs a gamma sweep".into()));
    }
    let pts = series(table, "pgae");
    if pts.is_empty() {
        return Err(Error::Config("no successful attack rows".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["detector".to_string()];
    header.extend(pts.iter().map(|p| p.value.to_string()));
    w.write_record(&header)?;
    let pct = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{:.1}", 100.0 * x));
    let mut bdd = vec!["bdd".to_string()];
    bdd.extend(pts.iter().map(|p| pct(Some(p.succ_bdd))));
    w.write_record(&bdd)?;
    let mut learned = vec!["learned".to_string()];
    learned.extend(pts.iter().map(|p| pct(p.succ_learn)));
    w.write_record(&learned)?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Serialize)]
struct Metadata<'a> {
    code_version: &'static str,
    spec: &'a SweepSpec,
    seeds: &'a [u64],
    schema_hashes: Vec<&'a str>,
    rows: usize,
    failed_rows: usize,
    noise_rule: &'static str,
    detector_split: &'static str,
    attack_rule: &'static str,
}

/// Writes `results.csv`, `timings.csv`, `metadata.json`, one
/// `<kind>_<method>.dat` per method and, for gamma sweeps,
/// `bypass_table.csv`. Returns the written paths.
pub fn emit_report(table: &SweepTable, dir: &Path) -> Result<Vec<PathBuf>> {
    if table.rows.is_empty() {
        return Err(Error::Config("cannot report an empty table".into()));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    put("results.csv".into(), rows_csv(&table.rows)?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    for t in &table.timings {
        w.serialize(t)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    put("timings.csv".into(), String::from_utf8(bytes).expect("csv output is utf-8"))?;

    let mut hashes: Vec<&str> = table.rows.iter().map(|r| r.schema_hash.as_str()).filter(|h| !h.is_empty()).collect();
    hashes.sort_unstable();
    hashes.dedup();
    let meta = Metadata {
        code_version: env!("CARGO_PKG_VERSION"),
        spec: &table.spec,
        seeds: &table.spec.seeds,
        schema_hashes: hashes,
        rows: table.rows.len(),
        failed_rows: table.rows.iter().filter(|r| r.error.is_some()).count(),
        noise_rule: "sigma_i = noise_percent/100 * max(mean |h_i| over the series, noise_floor)",
        detector_split: "chronological 50/50: first half trains, second half sets the threshold",
        attack_rule: "z + Dec(Enc z + gamma c) - Dec(Enc z); spread scale sets c_j = value * std_j of Enc z",
    };
    put("metadata.json".into(), serde_json::to_string_pretty(&meta)? + "\n")?;

    for m in methods(table) {
        if series(table, &m).is_empty() {
            continue;
        }
        put(format!("{}_{m}.dat", table.spec.kind), dat_series(table, &m))?;
    }
    if table.spec.kind == SweepKind::Gamma {
        if let Ok(t) = table_one(table) {
            put("bypass_table.csv".into(), t)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackScale;
    use crate::basis::BasisMode;

    fn row(method: &str, value: f64, seed: u64, succ: f64) -> SweepRow {
        SweepRow {
            kind: SweepKind::Gamma,
            value,
            seed,
            method: method.into(),
            case: "case14".into(),
            samples: 10,
            noise_percent: 2.0,
            schema_hash: "abc".into(),
            basis: BasisMode::Sparse,
            latent_dim: 26,
            epochs: 1,
            learning_rate: 1e-3,
            batch_size: 5,
            attack_value: 0.1,
            attack_scale: AttackScale::Spread,
            gamma: value,
            alpha: 0.05,
            meters: 82,
            recon_error: Some(1e-3),
            median_residual: 50.0,
            mean_residual: 51.0,
            succ_bdd: succ,
            succ_learn: Some(succ + 0.01),
            estimation_failures: 0,
            error: None,
        }
    }

    fn table() -> SweepTable {
        let spec = SweepSpec::new(SweepKind::Gamma, vec![0.5, 1.0], vec![1, 2]);
        let rows = vec![
            row("pgae", 0.5, 1, 0.96),
            row("pgae", 1.0, 1, 0.94),
            row("pgae", 0.5, 2, 0.98),
            row("pgae", 1.0, 2, 0.92),
            row("ae", 1.0, 1, 0.2),
        ];
        let timings = (0..rows.len()).map(|k| crate::harness::RowTiming { row: k, train_seconds: 1.0, eval_seconds: 0.5 }).collect();
        SweepTable { spec, rows, timings }
    }

    #[test]
    fn series_means_over_seeds() {
        let s = series(&table(), "pgae");
        assert_eq!(s.len(), 2);
        assert!((s[0].succ_bdd - 0.97).abs() < 1e-12);
        assert!((s[1].succ_bdd - 0.93).abs() < 1e-12);
        assert_eq!(s[1].count, 2);
        let mut t = table();
        t.rows[4].value = -1.0;
        assert_eq!(series(&t, "ae")[0].value, -1.0);
    }

    #[test]
    fn bypass_table_layout() {
        let text = table_one(&table()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines, vec!["detector,0.5,1", "bdd,97.0,93.0", "learned,98.0,94.0"]);
    }

    #[test]
    fn report_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let t = table();
        let a = emit_report(&t, &dir.path().join("a")).unwrap();
        let b = emit_report(&t, &dir.path().join("b")).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        let names: Vec<String> = a.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert!(names.contains(&"gamma_pgae.dat".to_string()));
        assert!(names.contains(&"bypass_table.csv".to_string()));
        let csv = fs::read_to_string(dir.path().join("a/results.csv")).unwrap();
        assert!(csv.starts_with("kind,value,seed,method,"));
        assert_eq!(csv.lines().count(), 6);
        let empty = SweepTable { rows: vec![], timings: vec![], ..t };
        assert!(emit_report(&empty, dir.path()).is_err());
    }
}
