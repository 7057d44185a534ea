//! Velocity fixed-point iteration with one-shot contact solves.
//!
//! Each iteration takes a diagonal gradient step `v̂* = v̂ − W(Av̂ − b)`,
//! solves every contact independently against the surrogate operator
//! `Γ_c = J_c W J_cᵀ` (block-diagonal because `W` is tied per node) and maps
//! the impulses back with `v̂ = v̂* + W J_cᵀ λ`.

use alloc::vec;
use alloc::vec::Vec;

use crate::contact::{AugmentedDynamics, Contact, NodalContactSet};
use crate::error::{Error, Result};
use crate::math::{dist, dot, sqrt, Vec3};
use crate::sparse::SparseSymmetric;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    /// Normal clamp then tangential disk clamp; exact SCC of the surrogate.
    Strict,
    /// Euclidean projection onto the friction cone; the convex relaxation.
    Proximal,
    /// Strict with an elliptic cross-section (coefficients per tangent).
    Anisotropic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepStrategy {
    Frobenius,
    Bb1,
    Bb2,
    BbAlternating,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub operator: Operator,
    pub step: StepStrategy,
    pub theta_th: f64,
    pub max_iter: usize,
    pub chebyshev: bool,
    pub cheb_start: usize,
    pub under_relax: f64,
    /// Uniform diagonal of `Ω_c`.
    pub omega: f64,
    /// Steps between step-matrix recomputations.
    pub recycle: usize,
    /// Also require `‖Av̂ − b − J_cᵀλ‖ ≤ consistency_factor·θ_th` to stop.
    pub require_consistency: bool,
    pub consistency_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            operator: Operator::Strict,
            step: StepStrategy::Frobenius,
            theta_th: 1e-4,
            max_iter: 500,
            chebyshev: false,
            cheb_start: 10,
            under_relax: 0.9,
            omega: 0.0,
            recycle: 1,
            require_consistency: true,
            consistency_factor: 10.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_th > 0.0) {
            return Err(Error::InvalidArgument("residual threshold must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max iterations must be at least 1".into()));
        }
        if !(self.under_relax > 0.0 && self.under_relax < 1.0) {
            return Err(Error::InvalidArgument("under-relaxation must lie in (0, 1)".into()));
        }
        if !(self.omega >= 0.0) {
            return Err(Error::InvalidArgument("regularization must be non-negative".into()));
        }
        if let StepStrategy::Fixed(a) = self.step {
            if !(a > 0.0) {
                return Err(Error::InvalidArgument("fixed step must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Monotonic time source in seconds.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Clock that always reads zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverReport {
    pub iterations: usize,
    pub trace: Vec<f64>,
    pub lambda: Vec<f64>,
    pub converged: bool,
    /// `‖Av̂ − b − J_cᵀλ‖` for the returned pair.
    pub consistency: f64,
    pub scc: Vec<f64>,
    pub time_total: f64,
    pub time_spmv: f64,
    pub time_contact: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub v: Vec<f64>,
    pub lambda: Vec<f64>,
    pub report: SolverReport,
}

/// Diagonal step matrix `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMatrix {
    pub w: Vec<f64>,
}

impl StepMatrix {
    pub fn uniform(n: usize, alpha: f64) -> Self {
        StepMatrix { w: vec![alpha; n] }
    }

    /// Checks per-node tying, and pair tying of dynamic contacts when
    /// `pairs` is set.
    pub fn check_ties(&self, contacts: &[Contact], pairs: bool) -> Result<()> {
        let w = &self.w;
        let tied = |i: usize| w[i] == w[i + 1] && w[i] == w[i + 2];
        for (m, c) in contacts.iter().enumerate() {
            if !tied(c.i) || c.j.is_some_and(|j| !tied(j)) || (pairs && c.j.is_some_and(|j| w[j] != w[c.i])) {
                return Err(Error::TieViolation { contact: m });
            }
        }
        Ok(())
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Frobenius-minimizing diagonal from per-row `a_ii` and `‖A_i*‖²`, pooled
/// over each contacted node (and over both nodes of a dynamic contact when
/// `pairs` is set).
pub fn frobenius_from_stats(diag: &[f64], rows: &[f64], contacts: &[Contact], pairs: bool) -> Result<StepMatrix> {
    let n = diag.len();
    if let Some(i) = rows.iter().position(|r| !(*r > 0.0)) {
        return Err(Error::InvalidMatrix(alloc::format!("row {i} has zero norm")));
    }
    let mut w: Vec<f64> = diag.iter().zip(rows).map(|(d, r)| d / r).collect();
    if contacts.is_empty() {
        return Ok(StepMatrix { w });
    }
    // groups of 3-index nodes keyed by their first index
    let mut parent: Vec<usize> = (0..n).collect();
    let mut touched = Vec::new();
    for c in contacts {
        for k in 1..3 {
            let r = find(&mut parent, c.i + k);
            let root = find(&mut parent, c.i);
            parent[r] = root;
        }
        touched.push(c.i);
        if let Some(j) = c.j {
            for k in 1..3 {
                let r = find(&mut parent, j + k);
                let root = find(&mut parent, j);
                parent[r] = root;
            }
            touched.push(j);
            if pairs {
                let a = find(&mut parent, c.i);
                let b = find(&mut parent, j);
                parent[b] = a;
            }
        }
    }
    touched.sort_unstable();
    touched.dedup();
    let mut num = vec![0.0; 0];
    let mut den = vec![0.0; 0];
    let mut slot = alloc::collections::BTreeMap::new();
    let mut members = Vec::with_capacity(3 * touched.len());
    for &node in &touched {
        for k in 0..3 {
            let idx = node + k;
            let root = find(&mut parent, idx);
            let s = *slot.entry(root).or_insert_with(|| {
                num.push(0.0);
                den.push(0.0);
                num.len() - 1
            });
            num[s] += diag[idx];
            den[s] += rows[idx];
            members.push((idx, s));
        }
    }
    for (idx, s) in members {
        w[idx] = num[s] / den[s];
    }
    Ok(StepMatrix { w })
}

pub fn step_matrix_frobenius(a: &SparseSymmetric, contacts: &[Contact], pairs: bool) -> Result<StepMatrix> {
    frobenius_from_stats(&a.diagonal(), &a.row_norms_sq(), contacts, pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BbVariant {
    Bb1,
    Bb2,
}

/// Barzilai–Borwein quotient; falls back to `prev` when `sᵀz ≤ 0`.
pub fn step_matrix_bb(s: &[f64], z: &[f64], variant: BbVariant, prev: f64) -> Result<f64> {
    if s.len() != z.len() {
        return Err(Error::DimensionMismatch { expected: s.len(), found: z.len() });
    }
    let sz = dot(s, z);
    if !(sz > 0.0) {
        return Ok(prev);
    }
    let a = match variant {
        BbVariant::Bb1 => dot(s, s) / sz,
        BbVariant::Bb2 => sz / dot(z, z),
    };
    Ok(if a.is_finite() && a > 0.0 { a } else { prev })
}

/// `γ` per contact: `w̄_i` (static) or `w̄_i + w̄_j` (dynamic).
pub fn surrogate_gamma(w: &StepMatrix, contacts: &[Contact]) -> Result<Vec<f64>> {
    w.check_ties(contacts, false)?;
    Ok(contacts.iter().map(|c| w.w[c.i] + c.j.map_or(0.0, |j| w.w[j])).collect())
}

pub fn project_strict(l: Vec3, mu: f64) -> Vec3 {
    let n = f64::max(l.0[0], 0.0);
    let (t1, t2) = (l.0[1], l.0[2]);
    let tn = sqrt(t1 * t1 + t2 * t2);
    let r = mu * n;
    if tn <= r {
        return Vec3::new(n, t1, t2);
    }
    let s = r / tn;
    Vec3::new(n, t1 * s, t2 * s)
}

pub fn project_proximal(l: Vec3, mu: f64) -> Vec3 {
    let n = l.0[0];
    let (t1, t2) = (l.0[1], l.0[2]);
    let tn = sqrt(t1 * t1 + t2 * t2);
    if mu * n >= tn && n >= 0.0 {
        return l;
    }
    if mu * tn <= -n {
        return Vec3::ZERO;
    }
    let np = (n + mu * tn) / (1.0 + mu * mu);
    if tn == 0.0 {
        return Vec3::new(np, 0.0, 0.0);
    }
    let s = mu * np / tn;
    Vec3::new(np, t1 * s, t2 * s)
}

/// Closest point of the ellipse `(x/a)² + (y/b)² ≤ 1` to `p`.
fn project_ellipse(p: [f64; 2], ax: [f64; 2]) -> Result<[f64; 2]> {
    let inside = |x: [f64; 2]| {
        let mut s = 0.0;
        for k in 0..2 {
            if ax[k] > 0.0 {
                s += (x[k] / ax[k]) * (x[k] / ax[k]);
            } else if x[k] != 0.0 {
                return f64::INFINITY;
            }
        }
        s
    };
    if inside(p) <= 1.0 {
        return Ok(p);
    }
    let amax = f64::max(ax[0], ax[1]);
    if amax == 0.0 {
        return Ok([0.0, 0.0]);
    }
    let at = |tau: f64| -> [f64; 2] {
        let mut x = [0.0; 2];
        for k in 0..2 {
            let a2 = ax[k] * ax[k];
            x[k] = if a2 > 0.0 { p[k] * a2 / (a2 + tau) } else { 0.0 };
        }
        x
    };
    let pn = sqrt(p[0] * p[0] + p[1] * p[1]);
    let (mut lo, mut hi) = (0.0f64, pn * amax + amax * amax);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if inside(at(mid)) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            return Ok(at(hi));
        }
    }
    Err(Error::Numeric("ellipse projection did not converge".into()))
}

pub fn project_strict_anisotropic(l: Vec3, mu1: f64, mu2: f64) -> Result<Vec3> {
    let n = f64::max(l.0[0], 0.0);
    let t = project_ellipse([l.0[1], l.0[2]], [mu1 * n, mu2 * n])?;
    Ok(Vec3::new(n, t[0], t[1]))
}

/// Strict and anisotropic both clamp the normal first; unequal coefficients
/// select the ellipse projection. The cone projection is isotropic only.
#[inline]
pub fn project(op: Operator, l: Vec3, mu: [f64; 2]) -> Result<Vec3> {
    match op {
        Operator::Strict | Operator::Anisotropic => {
            if mu[0] == mu[1] {
                Ok(project_strict(l, mu[0]))
            } else {
                project_strict_anisotropic(l, mu[0], mu[1])
            }
        }
        Operator::Proximal => {
            if mu[0] != mu[1] {
                return Err(Error::InvalidArgument("the proximal operator needs isotropic friction".into()));
            }
            Ok(project_proximal(l, mu[0]))
        }
    }
}

#[inline]
fn solve_one(c: &Contact, gamma: f64, eta: Vec3, op: Operator, omega: f64) -> Result<Vec3> {
    let g = gamma + omega;
    let star = Vec3::new(-(eta.0[0] + c.phi) / g, -eta.0[1] / g, -eta.0[2] / g);
    project(op, star, c.mu)
}

/// One-shot per-contact solve: `λ = Π(−(γ + ω)⁻¹(η + φ))`.
pub fn contact_solve_oneshot(gamma: &[f64], eta: &[f64], contacts: &[Contact], op: Operator, omega: f64) -> Result<Vec<f64>> {
    let nc = contacts.len();
    if gamma.len() != nc {
        return Err(Error::DimensionMismatch { expected: nc, found: gamma.len() });
    }
    if eta.len() != 3 * nc {
        return Err(Error::DimensionMismatch { expected: 3 * nc, found: eta.len() });
    }
    let mut out = vec![0.0; 3 * nc];
    let run = |m: usize, dst: &mut [f64]| -> Result<()> {
        let l = solve_one(&contacts[m], gamma[m], Vec3::from_slice(&eta[3 * m..3 * m + 3]), op, omega)?;
        dst.copy_from_slice(&l.0);
        Ok(())
    };
    #[cfg(feature = "parallel")]
    if nc >= PAR_MIN_CONTACTS {
        use rayon::prelude::*;
        out.par_chunks_mut(3).enumerate().try_for_each(|(m, d)| run(m, d))?;
        return Ok(out);
    }
    for (m, d) in out.chunks_mut(3).enumerate() {
        run(m, d)?;
    }
    Ok(out)
}

#[cfg(feature = "parallel")]
const PAR_MIN_CONTACTS: usize = 512;

/// Contact half of one iteration: from `v̂*` to `(v̂*  + W J_cᵀλ, λ)`.
pub fn contact_update(
    v_star: &[f64],
    w: &StepMatrix,
    set: &NodalContactSet,
    op: Operator,
    omega: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let gamma = surrogate_gamma(w, &set.contacts)?;
    let eta = set.apply_jc(v_star);
    let lambda = contact_solve_oneshot(&gamma, &eta, &set.contacts, op, omega)?;
    let mut f = vec![0.0; v_star.len()];
    set.add_jct(&lambda, &mut f);
    let v = v_star.iter().zip(&f).zip(&w.w).map(|((v, f), w)| v + w * f).collect();
    Ok((v, lambda))
}

/// `ν_{l+1}` of the Chebyshev schedule (`l` counts from 1).
pub fn chebyshev_nu(l: usize, start: usize, rho: f64, nu_prev: f64) -> f64 {
    use core::cmp::Ordering::*;
    match l.cmp(&start) {
        Less => 1.0,
        Equal => 2.0 / (2.0 - rho * rho),
        Greater => 4.0 / (4.0 - rho * rho * nu_prev),
    }
}

/// `ν(u·v̂** + (1 − u)·v̂^l − v̂^{l−1}) + v̂^{l−1}`
pub fn chebyshev_update(v_ss: &[f64], v_l: &[f64], v_lm1: &[f64], nu: f64, u: f64) -> Vec<f64> {
    v_ss.iter()
        .zip(v_l)
        .zip(v_lm1)
        .map(|((a, b), c)| nu * (u * a + (1.0 - u) * b - c) + c)
        .collect()
}

/// `min(cur/prev, 1)`; returns `fallback` when `prev` is zero.
pub fn estimate_rho(cur: f64, prev: f64, fallback: f64) -> f64 {
    if !(prev > 0.0) {
        return fallback;
    }
    f64::min(cur / prev, 1.0)
}

/// Signorini–Coulomb residual of one contact given its contact-frame
/// velocity `u` (without `φ`) and impulse `l`.
pub fn scc_residual_one(u: Vec3, l: Vec3, phi: f64, mu: [f64; 2]) -> f64 {
    let (ln, un) = (l.0[0], u.0[0] + phi);
    let lt = [l.0[1], l.0[2]];
    let ut = [u.0[1], u.0[2]];
    let ltn = sqrt(lt[0] * lt[0] + lt[1] * lt[1]);
    let utn = sqrt(ut[0] * ut[0] + ut[1] * ut[1]);
    let mut r = f64::max(-ln, 0.0);
    r = r.max(f64::max(-un, 0.0));
    r = r.max(f64::min(ln.abs(), un.abs()));
    let lnp = ln.max(0.0);
    if mu[0] == mu[1] {
        let mu = mu[0];
        r = r.max(f64::max(ltn - mu * lnp, 0.0));
        let delta = if ltn > 0.0 { utn * mu * lnp / ltn } else { 0.0 };
        let align = sqrt((delta * lt[0] + mu * lnp * ut[0]).powi_2() + (delta * lt[1] + mu * lnp * ut[1]).powi_2());
        r = r.max(align);
        r = r.max(f64::min(delta, (mu * lnp - ltn).abs()));
    } else {
        let mut e = 0.0;
        let mut hard = 0.0f64;
        for k in 0..2 {
            if mu[k] > 0.0 {
                e += (lt[k] / mu[k]).powi_2();
            } else {
                hard = hard.max(lt[k].abs());
            }
        }
        let mmin = f64::min(mu[0], mu[1]);
        r = r.max(hard).max(mmin * f64::max(sqrt(e) - lnp, 0.0));
        let s = sqrt((mu[0] * mu[0] * ut[0]).powi_2() + (mu[1] * mu[1] * ut[1]).powi_2());
        let d = sqrt((mu[0] * ut[0]).powi_2() + (mu[1] * ut[1]).powi_2());
        if utn > 0.0 && d > 0.0 && s > 0.0 {
            // maximal dissipation: λ_t = −λ_n·(μ1²u1, μ2²u2)/‖(μ1u1, μ2u2)‖
            let target = [-lnp * mu[0] * mu[0] * ut[0] / d, -lnp * mu[1] * mu[1] * ut[1] / d];
            r = r.max(sqrt((lt[0] - target[0]).powi_2() + (lt[1] - target[1]).powi_2()));
        }
    }
    r
}

trait Sq {
    fn powi_2(self) -> f64;
}

impl Sq for f64 {
    #[inline]
    fn powi_2(self) -> f64 {
        self * self
    }
}

pub fn scc_residual(v: &[f64], lambda: &[f64], set: &NodalContactSet) -> Vec<f64> {
    set.contacts
        .iter()
        .enumerate()
        .map(|(m, c)| scc_residual_one(c.velocity(v), Vec3::from_slice(&lambda[3 * m..3 * m + 3]), c.phi, c.mu))
        .collect()
}

/// Impulses recovered from a velocity: `λ = Π(−ω⁻¹(J_c v̂ + φ))`.
pub fn inverse_contact(v: &[f64], omega: f64, set: &NodalContactSet, op: Operator) -> Result<Vec<f64>> {
    if !(omega > 0.0) {
        return Err(Error::InvalidArgument("inverse contact needs a positive regularization".into()));
    }
    let eta = set.apply_jc(v);
    contact_solve_oneshot(&vec![0.0; set.len()], &eta, &set.contacts, op, omega)
}

fn residual_into(a: &SparseSymmetric, b: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
    a.spmv_into(v, out)?;
    for (o, bi) in out.iter_mut().zip(b) {
        *o -= bi;
    }
    Ok(())
}

/// Solver with a step-matrix cache that survives across steps.
#[derive(Debug, Clone)]
pub struct CondSolver {
    pub cfg: SolverConfig,
    cache: Option<(Vec<f64>, Vec<f64>)>,
    age: usize,
}

impl CondSolver {
    pub fn new(cfg: SolverConfig) -> Self {
        CondSolver { cfg, cache: None, age: 0 }
    }

    fn row_stats(&mut self, a: &SparseSymmetric) -> (Vec<f64>, Vec<f64>) {
        let fresh = match &self.cache {
            Some((d, _)) => d.len() != a.dim() || self.age >= self.cfg.recycle.max(1),
            None => true,
        };
        if fresh {
            self.cache = Some((a.diagonal(), a.row_norms_sq()));
            self.age = 0;
        }
        self.age += 1;
        self.cache.clone().unwrap()
    }

    pub fn solve(
        &mut self,
        dynamics: &AugmentedDynamics,
        set: &NodalContactSet,
        warm: &[f64],
        clock: &dyn Clock,
    ) -> Result<Solution> {
        let cfg = self.cfg;
        cfg.validate()?;
        let t0 = clock.now();
        let a = &dynamics.a;
        let b = &dynamics.b;
        let n = a.dim();
        if warm.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: warm.len() });
        }
        if set.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: set.dim() });
        }
        let pairs = cfg.operator == Operator::Proximal;
        let nc = set.len();

        let mut w = match cfg.step {
            StepStrategy::Fixed(alpha) => StepMatrix::uniform(n, alpha),
            _ => {
                let (d, r) = self.row_stats(a);
                frobenius_from_stats(&d, &r, &set.contacts, pairs)?
            }
        };
        w.check_ties(&set.contacts, pairs)?;
        let mut gamma = surrogate_gamma(&w, &set.contacts)?;

        let mut report = SolverReport::default();
        let mut v = warm.to_vec();
        let mut v_prev = warm.to_vec();
        let mut r = vec![0.0; n];
        let mut r_prev = vec![0.0; n];
        let mut lambda = vec![0.0; 3 * nc];
        let mut lambda_prev = set.warm_impulses();
        let mut force = vec![0.0; n];
        let mut v_star = vec![0.0; n];
        let mut alpha = 0.0;
        let mut rho = 0.0;
        let mut nu = 1.0;
        let mut theta = f64::INFINITY;

        let consistency_of = |r: &[f64], lam: &[f64], scratch: &mut [f64]| -> f64 {
            scratch.copy_from_slice(r);
            for x in scratch.iter_mut() {
                *x = -*x;
            }
            // scratch = −r + Jᵀλ, so its norm is ‖Av − b − Jᵀλ‖
            set.add_jct(lam, scratch);
            sqrt(dot(scratch, scratch))
        };
        let mut scratch = vec![0.0; n];

        let mut l = 1;
        loop {
            let ts = clock.now();
            residual_into(a, b, &v, &mut r)?;
            report.time_spmv += clock.now() - ts;

            if l > 1 {
                let small = theta < cfg.theta_th;
                if small || l > cfg.max_iter {
                    let cons = consistency_of(&r, &lambda_prev, &mut scratch);
                    report.consistency = cons;
                    if small && (!cfg.require_consistency || cons <= cfg.consistency_factor * cfg.theta_th) {
                        report.converged = true;
                        break;
                    }
                }
                if l > cfg.max_iter {
                    break;
                }
            }

            let bb = match cfg.step {
                StepStrategy::Bb1 => Some(BbVariant::Bb1),
                StepStrategy::Bb2 => Some(BbVariant::Bb2),
                StepStrategy::BbAlternating => Some(if l % 2 == 0 { BbVariant::Bb1 } else { BbVariant::Bb2 }),
                _ => None,
            };
            if let (Some(var), true) = (bb, l > 1) {
                let s: Vec<f64> = v.iter().zip(&v_prev).map(|(x, y)| x - y).collect();
                let z: Vec<f64> = r.iter().zip(&r_prev).map(|(x, y)| x - y).collect();
                let prev = if alpha > 0.0 { alpha } else { w.w.iter().cloned().fold(f64::INFINITY, f64::min) };
                alpha = step_matrix_bb(&s, &z, var, prev)?;
                w = StepMatrix::uniform(n, alpha);
                gamma = surrogate_gamma(&w, &set.contacts)?;
            }

            for i in 0..n {
                v_star[i] = v[i] - w.w[i] * r[i];
            }
            let tc = clock.now();
            let eta = set.apply_jc(&v_star);
            lambda = contact_solve_oneshot(&gamma, &eta, &set.contacts, cfg.operator, cfg.omega)?;
            force.iter_mut().for_each(|x| *x = 0.0);
            set.add_jct(&lambda, &mut force);
            report.time_contact += clock.now() - tc;
            for i in 0..n {
                v_star[i] += w.w[i] * force[i];
            }

            let next = if cfg.chebyshev {
                nu = chebyshev_nu(l, cfg.cheb_start, rho, nu);
                chebyshev_update(&v_star, &v, &v_prev, nu, cfg.under_relax)
            } else {
                v_star.clone()
            };
            let theta_new = dist(&next, &v);
            if !theta_new.is_finite() || next.iter().any(|x| !x.is_finite()) {
                report.trace.push(theta_new);
                return Err(Error::Divergence { iteration: l, trace: report.trace });
            }
            report.trace.push(theta_new);
            rho = estimate_rho(theta_new, theta, rho);
            theta = theta_new;
            core::mem::swap(&mut r_prev, &mut r);
            v_prev = core::mem::replace(&mut v, next);
            lambda_prev.clone_from(&lambda);
            l += 1;
        }

        report.iterations = report.trace.len();
        report.scc = scc_residual(&v, &lambda_prev, set);
        report.lambda = lambda_prev.clone();
        report.time_total = clock.now() - t0;
        Ok(Solution { v, lambda: lambda_prev, report })
    }
}

/// One-off solve without step-matrix caching.
pub fn solve_vfpi(dynamics: &AugmentedDynamics, set: &NodalContactSet, cfg: &SolverConfig, warm: &[f64]) -> Result<Solution> {
    CondSolver::new(*cfg).solve(dynamics, set, warm, &NoClock)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat3;
    use crate::sparse::{factor_spd, solve_with, TripletBuilder};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane_contact(i: usize, mu: f64) -> Contact {
        Contact {
            i,
            j: None,
            frame: Mat3([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
            mu: [mu, mu],
            depth: 0.0,
            phi: 0.0,
            point: Vec3::ZERO,
            warm: [0.0; 3],
        }
    }

    fn random_frame(rng: &mut ChaCha8Rng) -> Mat3 {
        loop {
            let n = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if n.norm() > 0.1 {
                return crate::contact::contact_frame(n).unwrap();
            }
        }
    }

    fn rv(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    #[test]
    fn frobenius_examples() {
        let w = step_matrix_frobenius(&SparseSymmetric::identity(4), &[], false).unwrap();
        assert_eq!(w.w, vec![1.0; 4]);
        let a = SparseSymmetric::from_diagonal(&[2.0, 2.0, 2.0]);
        let w = step_matrix_frobenius(&a, &[plane_contact(0, 0.5)], false).unwrap();
        assert_eq!(w.w, vec![0.5; 3]);
        let z = SparseSymmetric::from_diagonal(&[1.0, 0.0]);
        assert!(matches!(step_matrix_frobenius(&z, &[], false), Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn frobenius_is_locally_minimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 12;
        let mut tb = TripletBuilder::new(n);
        for i in 0..n {
            tb.push(i, i, rng.random_range(3.0..6.0));
            for j in 0..i {
                if rng.random::<f64>() < 0.3 {
                    tb.push_sym(i, j, rng.random_range(-0.5..0.5));
                }
            }
        }
        let a = tb.build().unwrap();
        let w = step_matrix_frobenius(&a, &[], false).unwrap();
        let ad = DMatrix::from_row_slice(n, n, &a.to_dense());
        let f = |w: &[f64]| (DMatrix::identity(n, n) - DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(w)) * &ad).norm();
        let base = f(&w.w);
        for i in 0..n {
            for s in [0.9, 0.95, 1.05, 1.1] {
                let mut w2 = w.w.clone();
                w2[i] *= s;
                assert!(f(&w2) >= base);
            }
        }
    }

    #[test]
    fn bb_examples() {
        assert_eq!(step_matrix_bb(&[1.0, 2.0], &[1.0, 2.0], BbVariant::Bb1, 0.0).unwrap(), 1.0);
        assert_eq!(step_matrix_bb(&[1.0, 2.0], &[1.0, 2.0], BbVariant::Bb2, 0.0).unwrap(), 1.0);
        assert_eq!(step_matrix_bb(&[1.0, 0.0], &[2.0, 0.0], BbVariant::Bb1, 0.0).unwrap(), 0.5);
        assert_eq!(step_matrix_bb(&[1.0, 0.0], &[2.0, 0.0], BbVariant::Bb2, 0.0).unwrap(), 0.5);
        assert_eq!(step_matrix_bb(&[1.0, 0.0], &[-2.0, 0.0], BbVariant::Bb1, 0.7).unwrap(), 0.7);
    }

    #[test]
    fn bb_rayleigh_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = 8;
            let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let a = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
            let eig = a.clone().symmetric_eigenvalues();
            let s = nalgebra::DVector::<f64>::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let z = &a * &s;
            let b1 = step_matrix_bb(s.as_slice(), z.as_slice(), BbVariant::Bb1, 0.0).unwrap();
            let b2 = step_matrix_bb(s.as_slice(), z.as_slice(), BbVariant::Bb2, 0.0).unwrap();
            let tol = 1e-12;
            assert!(1.0 / eig.min() >= b1 * (1.0 - tol));
            assert!(b1 >= b2 * (1.0 - tol));
            assert!(b2 >= (1.0 / eig.max()) * (1.0 - tol));
        }
    }

    #[test]
    fn gamma_examples() {
        let mut w = StepMatrix::uniform(6, 2.0);
        assert_eq!(surrogate_gamma(&w, &[plane_contact(0, 0.1)]).unwrap(), vec![2.0]);
        for k in 3..6 {
            w.w[k] = 3.0;
        }
        let mut c = plane_contact(0, 0.1);
        c.j = Some(3);
        assert_eq!(surrogate_gamma(&w, &[c]).unwrap(), vec![5.0]);
        w.w[4] = 3.5;
        assert!(matches!(surrogate_gamma(&w, &[c]), Err(Error::TieViolation { contact: 0 })));
    }

    #[test]
    fn strict_examples() {
        assert_eq!(project_strict(Vec3::new(1.0, 0.5, 0.0), 0.2), Vec3::new(1.0, 0.2, 0.0));
        assert_eq!(project_strict(Vec3::new(-1.0, 0.3, 0.4), 0.2), Vec3::ZERO);
        assert_eq!(project_strict(Vec3::new(1.0, 0.1, 0.0), 0.2), Vec3::new(1.0, 0.1, 0.0));
    }

    #[test]
    fn proximal_examples() {
        assert_eq!(project_proximal(Vec3::new(0.0, 1.0, 0.0), 1.0), Vec3::new(0.5, 0.5, 0.0));
        assert_eq!(project_proximal(Vec3::new(-1.0, 0.0, 0.0), 0.7), Vec3::ZERO);
        assert_eq!(project_proximal(Vec3::new(2.0, 0.1, 0.1), 0.5), Vec3::new(2.0, 0.1, 0.1));
    }

    /// Closest cone point by sampling the boundary (angle × height) and
    /// refining around the best sample.
    fn cone_projection_oracle(p: Vec3, mu: f64) -> Vec3 {
        let mut best = (p.norm_sq(), Vec3::ZERO);
        let consider = |q: Vec3, best: &mut (f64, Vec3)| {
            let d = (q - p).norm_sq();
            if d < best.0 {
                *best = (d, q);
            }
        };
        let hmax = 2.0 * p.norm() + 1.0;
        let (mut th_lo, mut th_hi, mut h_lo, mut h_hi) = (0.0, 2.0 * core::f64::consts::PI, 0.0, hmax);
        for _ in 0..30 {
            let steps = 60;
            let mut local = best;
            for a in 0..=steps {
                for b in 0..=steps {
                    let th = th_lo + (th_hi - th_lo) * a as f64 / steps as f64;
                    let h = h_lo + (h_hi - h_lo) * b as f64 / steps as f64;
                    let q = Vec3::new(h, mu * h * libm::cos(th), mu * h * libm::sin(th));
                    consider(q, &mut local);
                }
            }
            best = local;
            let bh = best.1.x();
            let bth = libm::atan2(best.1.z(), best.1.y());
            let (dth, dh) = ((th_hi - th_lo) / 10.0, (h_hi - h_lo) / 10.0);
            th_lo = bth - dth;
            th_hi = bth + dth;
            h_lo = f64::max(bh - dh, 0.0);
            h_hi = bh + dh;
        }
        // interior points project to themselves
        if p.x() >= 0.0 && mu * p.x() >= (p.y() * p.y() + p.z() * p.z()).sqrt_c() {
            return p;
        }
        best.1
    }

    trait SqrtC {
        fn sqrt_c(self) -> f64;
    }
    impl SqrtC for f64 {
        fn sqrt_c(self) -> f64 {
            sqrt(self)
        }
    }

    #[test]
    fn proximal_matches_sampling_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let p = rv(&mut rng, 1.0);
            let mu = rng.random_range(0.1..1.0);
            let got = project_proximal(p, mu);
            let oracle = cone_projection_oracle(p, mu);
            assert!((got - oracle).norm() < 1e-6, "{p:?} {mu} {got:?} {oracle:?}");
        }
    }

    #[test]
    fn dispatch_by_friction_shape() {
        let l = Vec3::new(1.0, 2.0, -1.0);
        let a = project(Operator::Strict, l, [0.1, 0.3]).unwrap();
        assert_eq!(a, project_strict_anisotropic(l, 0.1, 0.3).unwrap());
        assert_eq!(project(Operator::Anisotropic, l, [0.1, 0.3]).unwrap(), a);
        assert_eq!(project(Operator::Anisotropic, l, [0.2, 0.2]).unwrap(), project_strict(l, 0.2));
        assert!(project(Operator::Proximal, l, [0.1, 0.3]).is_err());
    }

    #[test]
    fn anisotropic_examples_and_isotropic_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = rv(&mut rng, 2.0);
            let mu = rng.random_range(0.05..1.0);
            let a = project_strict_anisotropic(p, mu, mu).unwrap();
            assert!((a - project_strict(p, mu)).norm() < 1e-10);
        }
        assert_eq!(project_strict_anisotropic(Vec3::new(-1.0, 0.5, 0.5), 0.1, 0.3).unwrap(), Vec3::ZERO);
    }

    #[test]
    fn anisotropic_matches_dense_mdp_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..5 {
            let ln = rng.random_range(0.5..2.0);
            let (m1, m2) = (rng.random_range(0.05..0.5), rng.random_range(0.05..0.5));
            let p = Vec3::new(ln, rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let got = project_strict_anisotropic(p, m1, m2).unwrap();
            let (a, b) = (m1 * ln, m2 * ln);
            let inside = (p.y() / a) * (p.y() / a) + (p.z() / b) * (p.z() / b) <= 1.0;
            let oracle = if inside {
                (p.y(), p.z())
            } else {
                let k = 1_000_000;
                let mut best = (f64::INFINITY, 0.0, 0.0);
                for s in 0..k {
                    let th = 2.0 * core::f64::consts::PI * s as f64 / k as f64;
                    let (x, y) = (a * libm::cos(th), b * libm::sin(th));
                    let d = (x - p.y()) * (x - p.y()) + (y - p.z()) * (y - p.z());
                    if d < best.0 {
                        best = (d, x, y);
                    }
                }
                (best.1, best.2)
            };
            assert!((got.y() - oracle.0).abs() < 1e-4 && (got.z() - oracle.1).abs() < 1e-4);
        }
    }

    #[test]
    fn oneshot_examples() {
        let c = [plane_contact(0, 0.5)];
        let l = contact_solve_oneshot(&[1.0], &[-9.81, 0.0, 0.0], &c, Operator::Strict, 0.0).unwrap();
        assert_eq!(l, vec![9.81, 0.0, 0.0]);
        let l = contact_solve_oneshot(&[1.0], &[0.5, 0.0, 0.0], &c, Operator::Strict, 0.0).unwrap();
        assert_eq!(l, vec![0.0, 0.0, 0.0]);
    }

    /// Per-contact NCP oracle for `u = γλ + η`, `u_n += φ`: the normal row
    /// decouples; a sliding tangential impulse sits on the disk boundary at an
    /// angle found by scanning for a sign change of `λ_t × u_t` with
    /// `λ_t · u_t < 0`, then bisecting.
    fn ncp_oracle(gamma: f64, eta: Vec3, phi: f64, mu: f64) -> Vec3 {
        let en = eta.x() + phi;
        if en >= 0.0 {
            return Vec3::ZERO;
        }
        let ln = -en / gamma;
        let et = [eta.y(), eta.z()];
        let stick = [-et[0] / gamma, -et[1] / gamma];
        if (stick[0] * stick[0] + stick[1] * stick[1]).sqrt_c() <= mu * ln {
            return Vec3::new(ln, stick[0], stick[1]);
        }
        let r = mu * ln;
        let lt = |th: f64| [r * libm::cos(th), r * libm::sin(th)];
        let cross = |th: f64| {
            let l = lt(th);
            let u = [gamma * l[0] + et[0], gamma * l[1] + et[1]];
            (l[0] * u[1] - l[1] * u[0], l[0] * u[0] + l[1] * u[1])
        };
        let k = 100_000;
        let step = 2.0 * core::f64::consts::PI / k as f64;
        for s in 0..k {
            let (a, b) = (s as f64 * step, (s + 1) as f64 * step);
            let (ca, da) = cross(a);
            let (cb, _) = cross(b);
            if ca == 0.0 && da < 0.0 {
                let l = lt(a);
                return Vec3::new(ln, l[0], l[1]);
            }
            if ca * cb < 0.0 && da < 0.0 {
                let (mut lo, mut hi) = (a, b);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if cross(lo).0 * cross(mid).0 <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let l = lt(0.5 * (lo + hi));
                return Vec3::new(ln, l[0], l[1]);
            }
        }
        panic!("no sliding solution found");
    }

    #[test]
    fn oneshot_matches_ncp_oracle_and_scc() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut contacts = Vec::new();
        let mut gamma = Vec::new();
        let mut eta = Vec::new();
        for m in 0..8 {
            let mut c = plane_contact(3 * m, rng.random_range(0.0..1.0));
            c.frame = random_frame(&mut rng);
            c.phi = rng.random_range(-0.5..0.1);
            contacts.push(c);
            gamma.push(rng.random_range(0.01..2.0));
            eta.extend_from_slice(&rv(&mut rng, 3.0).0);
        }
        let lam = contact_solve_oneshot(&gamma, &eta, &contacts, Operator::Strict, 0.0).unwrap();
        for (m, c) in contacts.iter().enumerate() {
            let l = Vec3::from_slice(&lam[3 * m..3 * m + 3]);
            let e = Vec3::from_slice(&eta[3 * m..3 * m + 3]);
            let u = l.scale(gamma[m]) + e;
            assert!(scc_residual_one(u, l, c.phi, c.mu) <= 1e-10);
            let o = ncp_oracle(gamma[m], e, c.phi, c.mu[0]);
            assert!((o - l).norm() <= 1e-8);
        }
    }

    #[test]
    fn chebyshev_schedule() {
        assert_eq!(chebyshev_nu(3, 10, 0.9, 1.0), 1.0);
        assert_eq!(chebyshev_nu(10, 10, 0.0, 1.0), 1.0);
        assert!((chebyshev_nu(11, 10, 0.9, 1.0) - 4.0 / 3.19).abs() < 1e-15);
        let v = chebyshev_update(&[1.0], &[0.5], &[0.2], 1.0, 0.9);
        assert!((v[0] - (0.9 + 0.05)).abs() < 1e-15);
    }

    #[test]
    fn rho_examples() {
        assert_eq!(estimate_rho(0.5, 1.0, 0.3), 0.5);
        assert_eq!(estimate_rho(2.0, 1.0, 0.3), 1.0);
        assert_eq!(estimate_rho(0.0, 1.0, 0.3), 0.0);
        assert_eq!(estimate_rho(1.0, 0.0, 0.3), 0.3);
    }

    #[test]
    fn scc_examples() {
        let mu = [0.2, 0.2];
        assert_eq!(scc_residual_one(Vec3::new(0.3, 0.0, 0.0), Vec3::ZERO, 0.0, mu), 0.0);
        assert_eq!(scc_residual_one(Vec3::ZERO, Vec3::new(1.0, 0.1, 0.0), 0.0, mu), 0.0);
        let r = scc_residual_one(Vec3::new(0.0, 0.7, 0.0), Vec3::new(1.0, -0.2, 0.0), 0.0, mu);
        assert!(r < 1e-15, "{r}");
        // friction along the motion is not a solution
        assert!(scc_residual_one(Vec3::new(0.0, 0.7, 0.0), Vec3::new(1.0, 0.2, 0.0), 0.0, mu) > 0.1);
    }

    #[test]
    fn inverse_examples() {
        let mut set = NodalContactSet::empty(3, 1.0);
        set.contacts.push(plane_contact(0, 0.5));
        assert_eq!(inverse_contact(&[0.0; 3], 1e-3, &set, Operator::Proximal).unwrap(), vec![0.0; 3]);
        assert_eq!(inverse_contact(&[0.0, 0.0, 0.2], 1e-3, &set, Operator::Proximal).unwrap(), vec![0.0; 3]);
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SparseSymmetric {
        let mut tb = TripletBuilder::new(n);
        let mut rs = vec![0.0; n];
        for i in 0..n {
            for j in 0..i {
                if rng.random::<f64>() < 0.2 {
                    let v = rng.random_range(-1.0..1.0);
                    tb.push_sym(i, j, v);
                    rs[i] += f64::abs(v);
                    rs[j] += f64::abs(v);
                }
            }
        }
        for i in 0..n {
            tb.push(i, i, rs[i] + rng.random_range(0.5..2.0));
        }
        tb.build().unwrap()
    }

    #[test]
    fn no_contacts_is_a_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_spd(&mut rng, 40);
        let b: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dynamics = AugmentedDynamics { a: a.clone(), b: b.clone(), n_orig: 40 };
        let set = NodalContactSet::empty(40, 1.0);
        let cfg = SolverConfig { theta_th: 1e-9, max_iter: 5000, ..Default::default() };
        let sol = solve_vfpi(&dynamics, &set, &cfg, &[0.0; 40]).unwrap();
        assert!(sol.report.converged);
        let x = solve_with(&factor_spd(&a).unwrap(), &b).unwrap();
        assert!(dist(&sol.v, &x) < 1e-6);
        assert_eq!(sol.report.trace.len(), sol.report.iterations);
    }

    #[test]
    fn resting_particle_equilibrium() {
        let a = SparseSymmetric::from_diagonal(&[200.0; 3]);
        let dynamics = AugmentedDynamics { a, b: vec![0.0, 0.0, -9.81], n_orig: 3 };
        let mut set = NodalContactSet::empty(3, 1.0);
        set.contacts.push(plane_contact(0, 0.0));
        let cfg = SolverConfig { theta_th: 1e-12, ..Default::default() };
        let sol = solve_vfpi(&dynamics, &set, &cfg, &[0.0; 3]).unwrap();
        assert!(sol.report.converged);
        assert!(sol.v[2].abs() < 1e-12);
        assert!((sol.lambda[0] - 9.81).abs() < 1e-9);
    }

    #[test]
    fn diagonalization_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let nodes = 40;
            let n = 3 * nodes;
            let mut perm: Vec<usize> = (0..nodes).collect();
            for i in (1..nodes).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let mut contacts = Vec::new();
            let mut k = 0;
            while k + 1 < nodes && contacts.len() < 12 {
                let mut c = plane_contact(3 * perm[k], 0.3);
                c.frame = random_frame(&mut rng);
                k += 1;
                if rng.random::<bool>() {
                    c.j = Some(3 * perm[k]);
                    k += 1;
                }
                contacts.push(c);
            }
            let mut w = StepMatrix::uniform(n, 0.0);
            for i in 0..nodes {
                let x = rng.random_range(0.1..2.0);
                w.w[3 * i..3 * i + 3].fill(x);
            }
            let gamma = surrogate_gamma(&w, &contacts).unwrap();
            let mut set = NodalContactSet::empty(n, 1.0);
            set.contacts = contacts;
            let mut jc = DMatrix::<f64>::zeros(3 * set.len(), n);
            for (r, c, x) in set.jc_triplets() {
                jc[(r, c)] += x;
            }
            let g = &jc * DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&w.w)) * jc.transpose();
            for r in 0..g.nrows() {
                for c in 0..g.ncols() {
                    let e = if r == c { gamma[r / 3] } else { 0.0 };
                    assert!((g[(r, c)] - e).abs() <= 1e-12);
                }
            }
        }
    }
}
