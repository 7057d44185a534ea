//! Solver-time scaling over lattice sizes.

use std::io::Write;
use std::path::Path;

use crate::error::SimError;
use crate::report::fmt_f64;
use crate::run::{run, RunConfig};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchPoint {
    /// Requested size in degrees of freedom.
    pub size: usize,
    pub dof: usize,
    pub mean_contacts: f64,
    pub mean_iters: f64,
    pub solve_ms: f64,
    /// Delassus assembly (baselines only).
    pub delassus_ms: f64,
}

impl BenchPoint {
    pub fn total_ms(&self) -> f64 {
        self.solve_ms + self.delassus_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub points: Vec<BenchPoint>,
    /// Absent for fewer than two sizes.
    pub fit: Option<LogLogFit>,
}

/// Least-squares fit of `log y = e·log x + c`.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Option<LogLogFit> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let e = sxy / sxx;
    let c = my - e * mx;
    let ss_tot: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - (e * x + c)).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some(LogLogFit { exponent: e, intercept: c, r2 })
}

/// Resizes the scenario's first lattice to about `dof / 3` nodes by changing
/// its x extent; y and z counts stay fixed.
pub fn resize_lattice(base: &Scenario, dof: usize) -> Result<Scenario, SimError> {
    let mut s = base.clone();
    let l = s.lattices.first_mut().ok_or_else(|| SimError::Validation("bench scenario needs a lattice".into()))?;
    let per_slice = l.dims[1] * l.dims[2];
    let nx = ((dof as f64 / 3.0) / per_slice as f64).round().max(1.0) as usize;
    l.dims[0] = nx;
    s.validate()?;
    Ok(s)
}

pub fn bench_scaling(base: &Scenario, sizes: &[usize], cfg: &RunConfig) -> Result<BenchReport, SimError> {
    if sizes.is_empty() {
        return Err(SimError::Validation("no bench sizes given".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SimError::Validation("bench sizes must be strictly ascending".into()));
    }
    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let scene = resize_lattice(base, size)?.build()?;
        let r = run(&scene, cfg)?;
        let n = r.rows.len().max(1) as f64;
        points.push(BenchPoint {
            size,
            dof: scene.model.v_len(),
            mean_contacts: r.rows.iter().map(|x| x.contacts as f64).sum::<f64>() / n,
            mean_iters: r.rows.iter().map(|x| x.iters as f64).sum::<f64>() / n,
            solve_ms: r.mean_solve_ms(),
            delassus_ms: r.mean_delassus_ms(),
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.dof as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.total_ms()).collect();
    Ok(BenchReport { fit: loglog_fit(&xs, &ys), points })
}

pub const BENCH_HEADER: &str = "size,dof,contacts,iters,solve_ms,delassus_ms,total_ms";

pub fn render_bench_csv(report: &BenchReport) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for p in &report.points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.size,
            p.dof,
            fmt_f64(p.mean_contacts),
            fmt_f64(p.mean_iters),
            fmt_f64(p.solve_ms),
            fmt_f64(p.delassus_ms),
            fmt_f64(p.total_ms())
        ));
    }
    out
}

pub fn write_bench_csv(report: &BenchReport, path: &Path) -> Result<(), SimError> {
    let mut f = std::fs::File::create(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(render_bench_csv(report).as_bytes()).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
}
