//! Impulse-space baselines on the explicit Delassus operator
//! `A_c = J_c A⁻¹ J_cᵀ`: projected Gauss–Seidel and accelerated projected
//! gradient descent on `½λᵀA_cλ + λᵀ(b_c + φ_c)` over the friction cones.

use alloc::vec;
use alloc::vec::Vec;

use crate::contact::{Contact, NodalContactSet};
use crate::error::{Error, Result};
use crate::math::{dot, sqrt, Mat3, Vec3};
use crate::solver::{project, Clock, Operator};
use crate::sparse::{factor_spd, DenseSymmetric, SparseSymmetric, SpdFactor};

#[derive(Debug, Clone)]
pub struct DelassusProblem {
    pub ac: DenseSymmetric,
    pub bc: Vec<f64>,
    pub phi: Vec<f64>,
    pub mu: Vec<[f64; 2]>,
    pub b: Vec<f64>,
    pub contacts: Vec<Contact>,
    factor: SpdFactor,
    /// Columns of `L⁻¹J_cᵀ`, one per contact row.
    y: Vec<Vec<f64>>,
    pub time_assembly: f64,
}

impl DelassusProblem {
    pub fn n_contacts(&self) -> usize {
        self.contacts.len()
    }

    /// `A⁻¹ J_cᵀ x`
    pub fn velocity_of(&self, x: &[f64]) -> Vec<f64> {
        let n = self.factor.dim();
        let mut v = vec![0.0; n];
        for (col, &xr) in self.y.iter().zip(x) {
            if xr != 0.0 {
                for (vi, yi) in v.iter_mut().zip(col) {
                    *vi += xr * yi;
                }
            }
        }
        self.factor.backward_in_place(&mut v);
        v
    }

    /// `½λᵀA_cλ + λᵀ(b_c + φ)`
    pub fn objective(&self, lambda: &[f64]) -> Result<f64> {
        let al = self.ac.matvec(lambda)?;
        Ok(0.5 * dot(lambda, &al) + lambda.iter().zip(&self.bc).zip(&self.phi).map(|((l, b), p)| l * (b + p)).sum::<f64>())
    }

    fn linear_term(&self) -> Vec<f64> {
        self.bc.iter().zip(&self.phi).map(|(b, p)| b + p).collect()
    }
}

/// Builds `A_c` and `b_c` by factor-and-multiply.
pub fn assemble_delassus(a: &SparseSymmetric, set: &NodalContactSet, b: &[f64], clock: &dyn Clock) -> Result<DelassusProblem> {
    let t0 = clock.now();
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: b.len() });
    }
    if set.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: set.dim() });
    }
    let factor = factor_spd(a)?;
    let m = 3 * set.len();
    let mut y = Vec::with_capacity(m);
    let mut starts = Vec::with_capacity(m);
    for (c, r) in set.contacts.iter().flat_map(|c| (0..3).map(move |r| (c, r))) {
        let mut col = vec![0.0; n];
        for k in 0..3 {
            col[c.i + k] += c.frame.0[r][k];
            if let Some(j) = c.j {
                col[j + k] -= c.frame.0[r][k];
            }
        }
        factor.forward_in_place(&mut col);
        starts.push(col.iter().position(|x| *x != 0.0).unwrap_or(n));
        y.push(col);
    }
    let mut ac = DenseSymmetric::zeros(m);
    for r in 0..m {
        for s in r..m {
            let st = starts[r].max(starts[s]);
            ac.set_sym(r, s, dot(&y[r][st..], &y[s][st..]));
        }
    }
    let mut lb = b.to_vec();
    factor.forward_in_place(&mut lb);
    let bc = y.iter().map(|col| dot(col, &lb)).collect();
    let phi = set.contacts.iter().flat_map(|c| [c.phi, 0.0, 0.0]).collect();
    Ok(DelassusProblem {
        ac,
        bc,
        phi,
        mu: set.contacts.iter().map(|c| c.mu).collect(),
        b: b.to_vec(),
        contacts: set.contacts.clone(),
        factor,
        y,
        time_assembly: clock.now() - t0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub operator: Operator,
    pub theta_th: f64,
    pub max_iter: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { operator: Operator::Proximal, theta_th: 1e-4, max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaselineReport {
    pub iterations: usize,
    /// Velocity-space change per accepted iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Objective value at each restart event (APGD only).
    pub restarts: Vec<f64>,
    pub time_solve: f64,
}

fn check_warm(p: &DelassusProblem, warm: Option<&[f64]>) -> Result<Vec<f64>> {
    let m = 3 * p.n_contacts();
    match warm {
        Some(w) if w.len() != m => Err(Error::DimensionMismatch { expected: m, found: w.len() }),
        Some(w) => Ok(w.to_vec()),
        None => Ok(vec![0.0; m]),
    }
}

fn project_all(op: Operator, x: &mut [f64], mu: &[[f64; 2]]) -> Result<()> {
    for (k, chunk) in x.chunks_mut(3).enumerate() {
        let l = project(op, Vec3::from_slice(chunk), mu[k])?;
        chunk.copy_from_slice(&l.0);
    }
    Ok(())
}

/// Gauss–Seidel sweeps with a scalar per-block step `1/σ_max(D_m)`.
pub fn solve_pgs(p: &DelassusProblem, cfg: &BaselineConfig, warm: Option<&[f64]>, clock: &dyn Clock) -> Result<(Vec<f64>, BaselineReport)> {
    let t0 = clock.now();
    let mut lambda = check_warm(p, warm)?;
    let nc = p.n_contacts();
    let c = p.linear_term();
    let steps: Vec<f64> = (0..nc)
        .map(|k| {
            let d = Mat3(core::array::from_fn(|r| core::array::from_fn(|s| p.ac.get(3 * k + r, 3 * k + s))));
            let tr = d.0[0][0] + d.0[1][1] + d.0[2][2];
            let sig = d.sym_max_eigenvalue().max(1e-12 * tr).max(f64::MIN_POSITIVE);
            1.0 / sig
        })
        .collect();
    let mut report = BaselineReport::default();
    let mut delta = vec![0.0; 3 * nc];
    for _ in 0..cfg.max_iter {
        for k in 0..nc {
            let mut g = [0.0; 3];
            for r in 0..3 {
                g[r] = dot(p.ac.row(3 * k + r), &lambda) + c[3 * k + r];
            }
            let old = Vec3::from_slice(&lambda[3 * k..3 * k + 3]);
            let star = old - Vec3(g).scale(steps[k]);
            let new = project(cfg.operator, star, p.mu[k])?;
            lambda[3 * k..3 * k + 3].copy_from_slice(&new.0);
            let d = new - old;
            delta[3 * k..3 * k + 3].copy_from_slice(&d.0);
        }
        let dv = p.velocity_of(&delta);
        let theta = sqrt(dot(&dv, &dv));
        if !theta.is_finite() {
            return Err(Error::Divergence { iteration: report.trace.len() + 1, trace: report.trace });
        }
        report.trace.push(theta);
        if theta < cfg.theta_th {
            report.converged = true;
            break;
        }
    }
    report.iterations = report.trace.len();
    report.time_solve = clock.now() - t0;
    Ok((lambda, report))
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn power_iteration(a: &DenseSymmetric, iters: usize) -> Result<f64> {
    let m = a.dim();
    if m == 0 {
        return Ok(0.0);
    }
    // deterministic, not orthogonal to typical dominant vectors
    let mut x: Vec<f64> = (0..m).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    let mut est = 0.0;
    for _ in 0..iters {
        let nx = sqrt(dot(&x, &x));
        if nx == 0.0 {
            return Ok(0.0);
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let y = a.matvec(&x)?;
        let e = dot(&x, &y);
        x = y;
        if (e - est).abs() <= 1e-10 * e.abs() {
            return Ok(e);
        }
        est = e;
    }
    Ok(est)
}

/// Nesterov-accelerated projected gradient with step `1/L` and adaptive
/// restart.
pub fn solve_apgd(p: &DelassusProblem, cfg: &BaselineConfig, warm: Option<&[f64]>, clock: &dyn Clock) -> Result<(Vec<f64>, BaselineReport)> {
    let t0 = clock.now();
    let m = 3 * p.n_contacts();
    let c = p.linear_term();
    let mut lambda = check_warm(p, warm)?;
    project_all(cfg.operator, &mut lambda, &p.mu)?;
    let mut report = BaselineReport::default();
    if m == 0 {
        report.converged = true;
        report.time_solve = clock.now() - t0;
        return Ok((lambda, report));
    }
    let lip = 1.05 * power_iteration(&p.ac, 500)?;
    let step = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let obj = |l: &[f64], al: &[f64]| 0.5 * dot(l, al) + dot(l, &c);

    let mut al = p.ac.matvec(&lambda)?;
    let mut f = obj(&lambda, &al);
    let mut y = lambda.clone();
    let mut ay = al.clone();
    let mut th = 1.0f64;
    report.restarts.push(f);
    for it in 0..cfg.max_iter {
        let g: Vec<f64> = ay.iter().zip(&c).map(|(a, c)| a + c).collect();
        let mut next: Vec<f64> = y.iter().zip(&g).map(|(y, g)| y - step * g).collect();
        project_all(cfg.operator, &mut next, &p.mu)?;
        let an = p.ac.matvec(&next)?;
        let fn_ = obj(&next, &an);
        let diff: Vec<f64> = next.iter().zip(&lambda).map(|(a, b)| a - b).collect();
        let restart = dot(&g, &diff) > 0.0 || fn_ > f;
        if fn_ > f {
            // reject: restart from the current iterate without momentum
            y.clone_from(&lambda);
            ay.clone_from(&al);
            th = 1.0;
            report.restarts.push(f);
            report.iterations = it + 1;
            continue;
        }
        let dv = p.velocity_of(&diff);
        let theta = sqrt(dot(&dv, &dv));
        if !theta.is_finite() {
            return Err(Error::Divergence { iteration: it + 1, trace: report.trace });
        }
        report.trace.push(theta);
        let th_new = 0.5 * (-th * th + th * sqrt(th * th + 4.0));
        let beta = th * (1.0 - th) / (th * th + th_new);
        if restart {
            y.clone_from(&next);
            ay.clone_from(&an);
            th = 1.0;
            report.restarts.push(fn_);
        } else {
            y = next.iter().zip(&lambda).map(|(n, l)| n + beta * (n - l)).collect();
            ay = an.iter().zip(&al).map(|(n, l)| n + beta * (n - l)).collect();
            th = th_new;
        }
        lambda = next;
        al = an;
        f = fn_;
        report.iterations = it + 1;
        if theta < cfg.theta_th {
            report.converged = true;
            break;
        }
    }
    report.time_solve = clock.now() - t0;
    Ok((lambda, report))
}

/// `v̂ = A⁻¹(b + J_cᵀλ)`
pub fn recover_velocity(p: &DelassusProblem, lambda: &[f64]) -> Result<Vec<f64>> {
    let m = 3 * p.n_contacts();
    if lambda.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: lambda.len() });
    }
    let mut rhs = p.b.clone();
    for (k, c) in p.contacts.iter().enumerate() {
        c.add_force(Vec3::from_slice(&lambda[3 * k..3 * k + 3]), &mut rhs);
    }
    crate::sparse::solve_with(&p.factor, &rhs)
}
