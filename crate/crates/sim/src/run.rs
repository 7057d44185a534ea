//! The outer simulation loop: assemble, detect, nodalize, augment, solve,
//! integrate.

use std::collections::HashMap;
use std::time::Instant;

use cond_core::baseline::{assemble_delassus, recover_velocity, solve_apgd, solve_pgs, BaselineConfig};
use cond_core::contact::{augment_dynamics, detect_contacts, nodalize, AugmentedDynamics, NodalContactSet, RawContact, Site};
use cond_core::dynamics::{assemble_step, integrate, kinetic_energy, SystemState};
use cond_core::math::{norm, Vec3};
use cond_core::solver::{Clock, CondSolver, NoClock, Operator, SolverConfig};
use cond_core::Error;

use crate::error::SimError;
use crate::scenario::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Cond,
    Pgs,
    Apgd,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Cond => "cond",
            SolverKind::Pgs => "pgs",
            SolverKind::Apgd => "apgd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub solver: SolverKind,
    pub cond: SolverConfig,
    pub baseline: BaselineConfig,
    /// Absolute `k_v` overriding the scene's.
    pub kv: Option<f64>,
    /// Report all timings as zero (byte-identical CSV across runs).
    pub zero_timings: bool,
    /// Stop after this many steps instead of the scenario duration.
    pub max_steps: Option<usize>,
}

impl RunConfig {
    pub fn new(solver: SolverKind, cond: SolverConfig) -> Self {
        RunConfig {
            solver,
            cond,
            baseline: BaselineConfig { operator: Operator::Proximal, theta_th: cond.theta_th, max_iter: cond.max_iter },
            kv: None,
            zero_timings: false,
            max_steps: None,
        }
    }

    pub fn for_scene(solver: SolverKind, scene: &Scene) -> Self {
        RunConfig::new(solver, scene.solver)
    }
}

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub dyn_ms: f64,
    pub solve_ms: f64,
    pub iters: usize,
    pub residual: f64,
    pub max_pen_m: f64,
    pub contacts: usize,
    pub ke_j: f64,
}

/// Per-step data that does not go into the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub converged: bool,
    pub diverged: bool,
    /// `‖Av̂ − b − J_cᵀλ‖` on the augmented system.
    pub consistency: f64,
    pub delassus_ms: f64,
    pub virtual_nodes: usize,
    /// Positions of the scene's named bodies after the step.
    pub positions: Vec<[f64; 3]>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub rows: Vec<MetricsRow>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub final_state: SystemState,
    pub diverged_steps: usize,
}

impl RunResult {
    pub fn max_penetration(&self) -> f64 {
        self.rows.iter().fold(0.0, |a, r| a.max(r.max_pen_m))
    }

    pub fn mean_iterations(&self) -> f64 {
        let n = self.rows.iter().filter(|r| r.contacts > 0).count();
        if n == 0 {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.contacts > 0).map(|r| r.iters as f64).sum::<f64>() / n as f64
    }

    pub fn mean_solve_ms(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.solve_ms).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_delassus_ms(&self) -> f64 {
        if self.diagnostics.is_empty() {
            return 0.0;
        }
        self.diagnostics.iter().map(|d| d.delassus_ms).sum::<f64>() / self.diagnostics.len() as f64
    }
}

struct Monotonic(Instant);

impl Clock for Monotonic {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

type ContactKey = (usize, Option<usize>);

fn key_of(rc: &RawContact) -> ContactKey {
    (rc.first.body(), rc.second.map(|s: Site| s.body()))
}

/// Impulses of the previous step keyed by the touching bodies.
#[derive(Default)]
struct ImpulseMemory {
    map: HashMap<ContactKey, Vec<(Vec3, [f64; 3])>>,
}

impl ImpulseMemory {
    fn store(&mut self, raw: &[RawContact], lambda: &[f64]) {
        self.map.clear();
        for (k, rc) in raw.iter().enumerate() {
            let l = [lambda[3 * k], lambda[3 * k + 1], lambda[3 * k + 2]];
            self.map.entry(key_of(rc)).or_default().push((rc.point, l));
        }
    }

    /// Nearest previous contact between the same bodies within `radius`.
    fn recall(&self, rc: &RawContact, radius: f64) -> [f64; 3] {
        let Some(cands) = self.map.get(&key_of(rc)) else { return [0.0; 3] };
        let mut best = (radius * radius, [0.0; 3]);
        for (p, l) in cands {
            let d = (*p - rc.point).norm_sq();
            if d <= best.0 {
                best = (d, *l);
            }
        }
        best.1
    }
}

fn consistency(aug: &AugmentedDynamics, set: &NodalContactSet, v: &[f64], lambda: &[f64]) -> Result<f64, Error> {
    let mut r = aug.a.spmv(v)?;
    for (ri, bi) in r.iter_mut().zip(&aug.b) {
        *ri = bi - *ri;
    }
    set.add_jct(lambda, &mut r);
    Ok(norm(&r))
}

/// Runs the scene for its full duration (or `cfg.max_steps`).
pub fn run(scene: &Scene, cfg: &RunConfig) -> Result<RunResult, SimError> {
    cfg.cond.validate()?;
    let model = &scene.model;
    let geom = &scene.geometry;
    let kv = cfg.kv.unwrap_or(scene.kv);
    let mut state = scene.state.clone();
    let steps = cfg.max_steps.map_or(scene.steps, |m| m.min(scene.steps));
    let clock: Box<dyn Clock> = if cfg.zero_timings { Box::new(NoClock) } else { Box::new(Monotonic(Instant::now())) };
    let clock = clock.as_ref();
    let ms = |dt: f64| if cfg.zero_timings { 0.0 } else { (dt * 1e3).max(0.0) };

    let mut cond = CondSolver::new(cfg.cond);
    let mut prev_vhat: Option<Vec<f64>> = None;
    let mut memory = ImpulseMemory::default();
    let mut result = RunResult { rows: Vec::with_capacity(steps), diagnostics: Vec::with_capacity(steps), final_state: state.clone(), diverged_steps: 0 };

    for step in 0..steps {
        let t_dyn = clock.now();
        let time = step as f64 * scene.stab.dt;
        let f_ext = scene.external_force(time);
        let dyn_o = assemble_step(&state, model, Some(&f_ext))?;
        let raw = detect_contacts(&state, model, geom)?;
        let mut set = nodalize(&raw, &state, model, kv, &scene.stab)?;
        for (c, rc) in set.contacts.iter_mut().zip(&raw) {
            c.warm = memory.recall(rc, 2.0 * geom.margin);
        }
        let aug = augment_dynamics(&dyn_o, &set)?;
        let dyn_ms = ms(clock.now() - t_dyn);

        let warm_v = set.lift_velocity(prev_vhat.as_deref().unwrap_or(&state.v));
        let mut diag = StepDiagnostics {
            converged: false,
            diverged: false,
            consistency: 0.0,
            delassus_ms: 0.0,
            virtual_nodes: set.n_virtual(),
            positions: Vec::new(),
            lambda: Vec::new(),
        };
        let (v_hat, lambda, iters, residual, solve_ms) = match cfg.solver {
            SolverKind::Cond => {
                let t0 = clock.now();
                match cond.solve(&aug, &set, &warm_v, clock) {
                    Ok(sol) => {
                        diag.converged = sol.report.converged;
                        let res = sol.report.trace.last().copied().unwrap_or(0.0);
                        (sol.v, sol.lambda, sol.report.iterations, res, ms(clock.now() - t0))
                    }
                    Err(Error::Divergence { iteration, trace }) => {
                        diag.diverged = true;
                        let v = fallback(&aug, &set, &cfg.cond, &warm_v);
                        (v, vec![0.0; 3 * set.len()], iteration, trace.last().copied().unwrap_or(f64::NAN), ms(clock.now() - t0))
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            SolverKind::Pgs | SolverKind::Apgd => {
                let p = assemble_delassus(&aug.a, &set, &aug.b, clock)?;
                diag.delassus_ms = ms(p.time_assembly);
                let warm = set.warm_impulses();
                let solved = if cfg.solver == SolverKind::Pgs {
                    solve_pgs(&p, &cfg.baseline, Some(&warm), clock)
                } else {
                    solve_apgd(&p, &cfg.baseline, Some(&warm), clock)
                };
                match solved {
                    Ok((lambda, rep)) => {
                        diag.converged = rep.converged;
                        let v = recover_velocity(&p, &lambda)?;
                        (v, lambda, rep.iterations, rep.trace.last().copied().unwrap_or(0.0), ms(rep.time_solve))
                    }
                    Err(Error::Divergence { iteration, trace }) => {
                        diag.diverged = true;
                        let lambda = vec![0.0; 3 * set.len()];
                        let v = recover_velocity(&p, &lambda)?;
                        (v, lambda, iteration, trace.last().copied().unwrap_or(f64::NAN), 0.0)
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        };
        diag.consistency = consistency(&aug, &set, &v_hat, &lambda)?;
        if diag.diverged {
            result.diverged_steps += 1;
        }

        let v_o = aug.strip(&v_hat).to_vec();
        state = integrate(model, &state, &v_o)?;
        memory.store(&raw, &lambda);
        prev_vhat = Some(v_o);

        let after = detect_contacts(&state, model, geom)?;
        let max_pen = after.iter().fold(0.0, |a: f64, c| a.max(c.depth));
        diag.positions = scene
            .tracked
            .iter()
            .map(|(_, b)| state.position(&model.bodies[*b]).0)
            .collect();
        diag.lambda = lambda;
        result.rows.push(MetricsRow {
            step,
            dyn_ms,
            solve_ms,
            iters,
            residual,
            max_pen_m: max_pen,
            contacts: set.len(),
            ke_j: kinetic_energy(&state, model),
        });
        result.diagnostics.push(diag);
    }
    result.final_state = state;
    Ok(result)
}

/// Contact-free solve used when the contact solve diverged.
fn fallback(aug: &AugmentedDynamics, set: &NodalContactSet, cfg: &SolverConfig, warm: &[f64]) -> Vec<f64> {
    let free = NodalContactSet { contacts: Vec::new(), ..set.clone() };
    match CondSolver::new(*cfg).solve(aug, &free, warm, &NoClock) {
        Ok(sol) if sol.v.iter().all(|x| x.is_finite()) => sol.v,
        _ => warm.to_vec(),
    }
}
