//! Benchmark harness: generate, fit, score, and time.
//!
//! Results go to `results.csv` (one [`ResultRow`] per cell) and
//! `summary.json` (mean and sd of Hamming per family and d). Cells already
//! present in `results.csv` are skipped, so re-running a finished spec is a
//! no-op. Appends happen under an exclusive file lock on `results.lock`.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::FitSettings;
use crate::error::{Error, Result};
use crate::gpm::extract_graph;
use crate::graphs::{hamming, UndirectedGraph};
use crate::penalty::PenaltyConfig;
use crate::synthgen::{generate, Family, GenSpec};
use crate::train::{fit, BasisConfig, TrainConfig};
use crate::types::Dataset;

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMINGS_FILE: &str = "timings.csv";
const LOCK_FILE: &str = "results.lock";
const HEADER: &str = "family,d,n,seed,hamming,wall_time,converged,status";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    /// Generator settings; each one's `seed` is replaced by every entry of `seeds`.
    pub generators: Vec<GenSpec>,
    pub seeds: Vec<u64>,
    pub basis: BasisConfig,
    pub penalty: PenaltyConfig,
    pub train: TrainConfig,
    pub output_dir: Option<PathBuf>,
    /// Worker threads over cells.
    pub jobs: usize,
    /// Write zero in place of wall times in the results and summary, so the
    /// files are byte-identical across runs; real times go to `timings.csv`.
    pub deterministic: bool,
}

impl BenchmarkSpec {
    pub fn new(generators: Vec<GenSpec>, settings: &FitSettings) -> Self {
        Self {
            generators,
            seeds: (0..5).collect(),
            basis: settings.basis.clone(),
            penalty: settings.penalty.clone(),
            train: settings.train.clone(),
            output_dir: None,
            jobs: 1,
            deterministic: false,
        }
    }

    /// Cells in canonical order.
    pub fn cells(&self) -> Vec<GenSpec> {
        let mut out = Vec::with_capacity(self.generators.len() * self.seeds.len());
        for g in &self.generators {
            for &s in &self.seeds {
                out.push(GenSpec { seed: s, ..g.clone() });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for g in &self.generators {
            g.validate()?;
        }
        if self.jobs == 0 {
            return Err(Error::pre("jobs must be at least 1"));
        }
        self.penalty.validate()?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub family: Family,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub hamming: usize,
    pub wall_time: f64,
    pub converged: bool,
    /// `ok`, or the error that stopped the cell.
    pub status: String,
}

impl ResultRow {
    fn key(&self) -> (String, usize, usize, u64) {
        (self.family.name().to_string(), self.d, self.n, self.seed)
    }

    fn to_csv_line(&self) -> String {
        let status = self.status.replace([',', '\n', '\r'], " ");
        format!(
            "{},{},{},{},{},{},{},{}",
            self.family.name(),
            self.d,
            self.n,
            self.seed,
            self.hamming,
            self.wall_time,
            self.converged,
            status
        )
    }

    fn from_csv_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.splitn(8, ',').collect();
        let bad = || Error::pre(format!("malformed results line '{line}'"));
        if f.len() != 8 {
            return Err(bad());
        }
        Ok(Self {
            family: f[0].parse()?,
            d: f[1].parse().map_err(|_| bad())?,
            n: f[2].parse().map_err(|_| bad())?,
            seed: f[3].parse().map_err(|_| bad())?,
            hamming: f[4].parse().map_err(|_| bad())?,
            wall_time: f[5].parse().map_err(|_| bad())?,
            converged: f[6].parse().map_err(|_| bad())?,
            status: f[7].to_string(),
        })
    }
}

fn cell_key(g: &GenSpec) -> (String, usize, usize, u64) {
    (g.family.name().to_string(), g.d, g.n, g.seed)
}

/// Graph estimate for one generated dataset, and whether training converged.
pub type Estimator<'a> = dyn Fn(&Dataset, &GenSpec) -> Result<(UndirectedGraph, bool)> + Sync + 'a;

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.lines().skip(1).filter(|l| !l.trim().is_empty()).map(ResultRow::from_csv_line).collect()
}

/// Runs every cell not already recorded and returns the full table in
/// canonical cell order.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<Vec<ResultRow>> {
    let est = |ds: &Dataset, _g: &GenSpec| -> Result<(UndirectedGraph, bool)> {
        let r = fit(ds, &spec.basis, &spec.penalty, &spec.train)?;
        Ok((extract_graph(&r.gpm, spec.train.threshold), r.converged))
    };
    run_benchmark_with(spec, &est)
}

pub fn run_benchmark_with(spec: &BenchmarkSpec, estimator: &Estimator) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let cells = spec.cells();
    let dir = spec.output_dir.as_deref();
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let existing = match dir {
        Some(dir) => read_results(&dir.join(RESULTS_FILE))?,
        None => Vec::new(),
    };
    let done: BTreeMap<_, _> = existing.iter().map(|r| (r.key(), r.clone())).collect();
    let todo: Vec<&GenSpec> = cells.iter().filter(|g| !done.contains_key(&cell_key(g))).collect();

    let next = AtomicUsize::new(0);
    let fresh = Mutex::new(Vec::new());
    let run_worker = || -> Result<()> {
        loop {
            let i = next.fetch_add(1, Ordering::SeqCst);
            let Some(g) = todo.get(i) else { return Ok(()) };
            let (row, elapsed) = run_cell(g, estimator);
            let mut recorded = row.clone();
            if spec.deterministic {
                recorded.wall_time = 0.0;
            }
            if let Some(dir) = dir {
                append_locked(dir, &recorded, elapsed)?;
            }
            fresh.lock().unwrap().push(recorded);
        }
    };
    if spec.jobs <= 1 || todo.len() <= 1 {
        run_worker()?;
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..spec.jobs.min(todo.len())).map(|_| s.spawn(run_worker)).collect();
            handles.into_iter().map(|h| h.join().expect("benchmark worker panicked")).collect::<Result<Vec<()>>>()
        })?;
    }

    let mut table: BTreeMap<_, _> = done;
    for r in fresh.into_inner().unwrap() {
        table.insert(r.key(), r);
    }
    let mut rows: Vec<ResultRow> = Vec::with_capacity(table.len());
    let order: BTreeMap<_, usize> = cells.iter().enumerate().map(|(i, g)| (cell_key(g), i)).collect();
    let mut keyed: Vec<_> = table.into_iter().collect();
    keyed.sort_by_key(|(k, _)| (order.get(k).copied().unwrap_or(usize::MAX), k.clone()));
    rows.extend(keyed.into_iter().map(|(_, r)| r));
    if let Some(dir) = dir {
        write_canonical(dir, &rows)?;
        let summary = summarize(&rows);
        let text = serde_json::to_string_pretty(&summary)? + "\n";
        let path = dir.join(SUMMARY_FILE);
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(rows)
}

fn run_cell(g: &GenSpec, estimator: &Estimator) -> (ResultRow, f64) {
    let mut row =
        ResultRow { family: g.family, d: g.d, n: g.n, seed: g.seed, hamming: 0, wall_time: 0.0, converged: false, status: "ok".into() };
    let (ds, truth) = match generate(g) {
        Ok(v) => v,
        Err(e) => {
            row.hamming = g.d * g.d.saturating_sub(1) / 2;
            row.status = format!("generate failed: {e}");
            return (row, 0.0);
        }
    };
    let start = Instant::now();
    let outcome = estimator(&ds, g).and_then(|(est, conv)| Ok((hamming(&est, &truth)?, conv)));
    let elapsed = start.elapsed().as_secs_f64();
    row.wall_time = elapsed;
    match outcome {
        Ok((h, conv)) => {
            row.hamming = h;
            row.converged = conv;
        }
        Err(e) => {
            // scored as the empty estimate
            row.hamming = truth.edge_count();
            row.status = format!("fit failed: {e}");
        }
    }
    (row, elapsed)
}

fn open_lock(dir: &Path) -> Result<File> {
    let path = dir.join(LOCK_FILE);
    let f = OpenOptions::new().create(true).truncate(false).write(true).open(&path).map_err(|e| Error::io(&path, e))?;
    f.lock().map_err(|e| Error::io(&path, e))?;
    Ok(f)
}

fn append_locked(dir: &Path, row: &ResultRow, elapsed: f64) -> Result<()> {
    let _lock = open_lock(dir)?;
    let path = dir.join(RESULTS_FILE);
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
    let mut line = String::new();
    if fresh {
        line.push_str(HEADER);
        line.push('\n');
    }
    line.push_str(&row.to_csv_line());
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
    let tpath = dir.join(TIMINGS_FILE);
    let tfresh = !tpath.exists();
    let mut t = OpenOptions::new().create(true).append(true).open(&tpath).map_err(|e| Error::io(&tpath, e))?;
    let head = if tfresh { "family,d,n,seed,wall_time\n" } else { "" };
    writeln!(t, "{head}{},{},{},{},{elapsed}", row.family.name(), row.d, row.n, row.seed).map_err(|e| Error::io(&tpath, e))?;
    Ok(())
}

/// Rewrites the results file in canonical order via a temporary file.
fn write_canonical(dir: &Path, rows: &[ResultRow]) -> Result<()> {
    let _lock = open_lock(dir)?;
    let mut text = String::from(HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.to_csv_line());
        text.push('\n');
    }
    let tmp = dir.join(format!("{RESULTS_FILE}.tmp"));
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    let path = dir.join(RESULTS_FILE);
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub family: Family,
    pub d: usize,
    pub cells: usize,
    pub mean_hamming: f64,
    pub sd_hamming: f64,
    pub mean_wall_time: f64,
    pub failed: usize,
}

/// Mean and sample sd of Hamming per (family, d).
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryEntry> {
    let mut groups: BTreeMap<(String, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.family.name().to_string(), r.d)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let n = g.len() as f64;
            let mean = g.iter().map(|r| r.hamming as f64).sum::<f64>() / n;
            let var = if g.len() > 1 { g.iter().map(|r| (r.hamming as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            SummaryEntry {
                family: g[0].family,
                d: g[0].d,
                cells: g.len(),
                mean_hamming: mean,
                sd_hamming: var.sqrt(),
                mean_wall_time: g.iter().map(|r| r.wall_time).sum::<f64>() / n,
                failed: g.iter().filter(|r| r.status != "ok").count(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub points: Vec<(usize, f64)>,
    /// Least-squares slope of log time against log d; `None` with fewer than two points.
    pub slope: Option<f64>,
}

/// Times `fit` (including GPM extraction) for each d; generation excluded.
pub fn scaling_curve(
    family: Family,
    d_list: &[usize],
    n: usize,
    basis: &BasisConfig,
    penalty: &PenaltyConfig,
    train: &TrainConfig,
) -> Result<ScalingReport> {
    if d_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::pre("d-list must be strictly ascending"));
    }
    let mut points = Vec::with_capacity(d_list.len());
    for &d in d_list {
        let (ds, _) = generate(&GenSpec::new(family, d, n, train.seed))?;
        let start = Instant::now();
        let r = fit(&ds, basis, penalty, train)?;
        let _ = extract_graph(&r.gpm, train.threshold);
        points.push((d, start.elapsed().as_secs_f64()));
    }
    Ok(ScalingReport { slope: loglog_slope(&points), points })
}

pub fn loglog_slope(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.max(f64::MIN_POSITIVE).ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Named benchmark presets.
pub fn preset(name: &str) -> Result<Vec<GenSpec>> {
    let specs = match name {
        "butterfly-small" => [4, 6, 8].iter().map(|&d| GenSpec::new(Family::ButterflyContinuous, d, 1000, 0)).collect(),
        "butterfly-all" => [Family::ButterflyContinuous, Family::ButterflyDiscrete, Family::ButterflyMixed]
            .iter()
            .map(|&f| GenSpec::new(f, 6, 1000, 0))
            .collect(),
        "random-small" => [Family::RandomGraphContinuous, Family::RandomGraphDiscrete, Family::RandomGraphMixed]
            .iter()
            .map(|&f| GenSpec::new(f, 6, 1000, 0))
            .collect(),
        other => return Err(Error::pre(format!("unknown preset '{other}' (butterfly-small, butterfly-all, random-small)"))),
    };
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(usize, f64)> = [10, 20, 40].iter().map(|&d| (d, 0.5 * (d as f64).powf(1.3))).collect();
        assert!((loglog_slope(&pts).unwrap() - 1.3).abs() < 1e-12);
        assert_eq!(loglog_slope(&pts[..1]), None);
    }

    #[test]
    fn csv_line_round_trip() {
        let r = ResultRow {
            family: Family::RandomGraphMixed,
            d: 6,
            n: 100,
            seed: 3,
            hamming: 2,
            wall_time: 1.25,
            converged: true,
            status: "ok".into(),
        };
        assert_eq!(ResultRow::from_csv_line(&r.to_csv_line()).unwrap(), r);
    }
}
