//! Acceptance checks shared by the `verify` subcommand and the test suite.
//! Each check builds its own inputs, compares against an independent
//! reference and reports a one-line verdict.

use std::time::Instant;

use cond_core::baseline::{assemble_delassus, solve_apgd, solve_pgs, BaselineConfig};
use cond_core::contact::{
    augment_dynamics, contact_frame, detect_contacts, nodalize, Contact, NodalContactSet,
};
use cond_core::dynamics::assemble_step;
use cond_core::math::Vec3;
use cond_core::solver::{
    contact_solve_oneshot, contact_update, inverse_contact, project_proximal, project_strict,
    project_strict_anisotropic, scc_residual_one, step_matrix_frobenius, surrogate_gamma, CondSolver, NoClock,
    Operator, SolverConfig, StepMatrix, StepStrategy,
};
use cond_core::sparse::{SparseSymmetric, TripletBuilder};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::{bench_scaling, loglog_fit};
use crate::oracle::{analytic_box_slide, mdp_slide, BoxSlideParams, MdpSlideParams};
use crate::run::{run, RunConfig, SolverKind};
use crate::scenario::{OperatorSpec, Scenario, DEFAULT_KV_SCALE};

/// Scenario files shipped with the crate.
pub const BUNDLED: &[(&str, &str)] = &[
    ("free_fall", include_str!("../scenarios/free_fall.json")),
    ("resting_particle", include_str!("../scenarios/resting_particle.json")),
    ("particle_stack", include_str!("../scenarios/particle_stack.json")),
    ("box_slide", include_str!("../scenarios/box_slide.json")),
    ("anisotropic_box", include_str!("../scenarios/anisotropic_box.json")),
    ("box_on_mat", include_str!("../scenarios/box_on_mat.json")),
    ("lattice_drag", include_str!("../scenarios/lattice_drag.json")),
];

pub fn bundled(name: &str) -> Scenario {
    let text = BUNDLED.iter().find(|(n, _)| *n == name).unwrap_or_else(|| panic!("no bundled scenario {name}")).1;
    Scenario::from_json(text).expect("bundled scenarios are valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{} {:>2} {}: {} ({:.2} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

pub struct Check {
    pub id: usize,
    pub name: &'static str,
    pub run: fn() -> CheckResult,
}

fn timed(id: usize, name: &'static str, f: impl FnOnce() -> Result<(bool, String), String>) -> CheckResult {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult { id, name, passed, detail, seconds: t.elapsed().as_secs_f64() }
}

macro_rules! check {
    ($id:expr, $name:expr, $body:ident) => {
        Check { id: $id, name: $name, run: || timed($id, $name, $body) }
    };
}

pub fn all_checks() -> Vec<Check> {
    vec![
        check!(1, "diagonalization equivalence", diagonalization),
        check!(2, "dynamics consistency", consistency),
        check!(3, "strict operator SCC exactness", strict_scc),
        check!(4, "proximal solution solves the CCP", proximal_ccp),
        check!(5, "virtual-node convergence", virtual_node_trend),
        check!(6, "contact update non-expansive", non_expansive),
        check!(7, "normal-cone monotonicity", monotonicity),
        check!(8, "Chebyshev ablation", chebyshev_ablation),
        check!(9, "scalability", scalability),
        check!(10, "anisotropic friction trajectory", anisotropic),
        check!(11, "invertible contact round trip", invertible),
        check!(12, "penetration bound", penetration),
        check!(13, "small-step contraction", contraction),
    ]
}

fn e2s(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n < 1.0 {
            return v.scale(1.0 / n);
        }
    }
}

/// Sparse SPD matrix with a dominant diagonal.
fn random_spd(rng: &mut ChaCha8Rng, n: usize, fill: f64) -> SparseSymmetric {
    let mut b = TripletBuilder::new(n);
    let mut rowsum = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < fill {
                let x: f64 = rng.random_range(-1.0..1.0);
                b.push_sym(i, j, x);
                rowsum[i] += x.abs();
                rowsum[j] += x.abs();
            }
        }
    }
    for (i, r) in rowsum.iter().enumerate() {
        b.push(i, i, r + rng.random_range(1.0..2.0));
    }
    b.build().expect("random SPD is symmetric")
}

/// Contacts on distinct nodes of an `nodes`-node system, a share of them
/// dynamic.
fn random_contacts(rng: &mut ChaCha8Rng, nodes: usize, count: usize, dyn_share: f64, aniso: bool) -> Vec<Contact> {
    let mut free: Vec<usize> = (0..nodes).collect();
    let take = |rng: &mut ChaCha8Rng, free: &mut Vec<usize>| {
        let k = rng.random_range(0..free.len());
        3 * free.swap_remove(k)
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        if free.is_empty() {
            break;
        }
        let i = take(rng, &mut free);
        let j = if !free.is_empty() && rng.random::<f64>() < dyn_share { Some(take(rng, &mut free)) } else { None };
        let m1 = rng.random_range(0.0..1.0);
        let mu = if aniso { [m1, rng.random_range(0.0..1.0)] } else { [m1, m1] };
        out.push(Contact {
            i,
            j,
            frame: contact_frame(random_unit(rng)).expect("unit normal"),
            mu,
            depth: 0.0,
            phi: rng.random_range(-0.5..0.5),
            point: Vec3::new(0.0, 0.0, 0.0),
            warm: [0.0; 3],
        });
    }
    out
}

fn contact_set(contacts: Vec<Contact>, n: usize) -> NodalContactSet {
    NodalContactSet { contacts, virtual_nodes: Vec::new(), kv: 1.0, n_orig: n }
}

fn dense_jc(set: &NodalContactSet) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(3 * set.len(), set.dim());
    for (r, c, x) in set.jc_triplets() {
        j[(r, c)] += x;
    }
    j
}

fn dense(a: &SparseSymmetric) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.dim(), a.dim(), &a.to_dense())
}

fn diagonalization() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1A6);
    let (mut off, mut diag) = (0.0f64, 0.0f64);
    for trial in 0..100 {
        let count = rng.random_range(1..=64);
        let nodes = 2 * count + rng.random_range(0..8);
        let n = 3 * nodes + rng.random_range(0..6);
        let a = random_spd(&mut rng, n, 4.0 / n as f64);
        let set = contact_set(random_contacts(&mut rng, nodes, count, 0.5, false), n);
        let pairs = trial % 2 == 1;
        let w = step_matrix_frobenius(&a, &set.contacts, pairs).map_err(e2s)?;
        let gamma = surrogate_gamma(&w, &set.contacts).map_err(e2s)?;
        let j = dense_jc(&set);
        let g = &j * DMatrix::from_diagonal(&DVector::from_vec(w.w.clone())) * j.transpose();
        for p in 0..set.len() {
            for q in 0..set.len() {
                for r in 0..3 {
                    for s in 0..3 {
                        let x = g[(3 * p + r, 3 * q + s)];
                        if p == q {
                            let expect = if r == s { gamma[p] } else { 0.0 };
                            diag = diag.max((x - expect).abs());
                        } else {
                            off = off.max(x.abs());
                        }
                    }
                }
            }
        }
    }
    Ok((off <= 1e-12 && diag <= 1e-12, format!("100 sets, max off-diagonal {off:.1e}, max diagonal mismatch {diag:.1e}")))
}

fn consistency() -> Result<(bool, String), String> {
    let mut worst = 0.0f64;
    let mut steps = 0;
    let mut ok = true;
    for (name, _) in BUNDLED {
        let scene = bundled(name).build().map_err(e2s)?;
        let cfg = RunConfig::for_scene(SolverKind::Cond, &scene);
        let r = run(&scene, &cfg).map_err(e2s)?;
        for d in r.diagnostics.iter().filter(|d| d.converged) {
            steps += 1;
            let ratio = d.consistency / cfg.cond.theta_th;
            worst = worst.max(ratio);
            ok &= ratio <= 10.0;
        }
        ok &= r.diagnostics.iter().any(|d| d.converged);
    }
    Ok((ok, format!("{steps} converged steps, worst residual {worst:.2}·θ_th")))
}

fn strict_scc() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5CC);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mut c = random_contacts(&mut rng, 2, 1, 0.5, false).remove(0);
        c.mu = [rng.random_range(0.0..1.2); 2];
        let gamma = rng.random_range(0.1..10.0);
        let eta = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let l = contact_solve_oneshot(&[gamma], &eta, std::slice::from_ref(&c), Operator::Strict, 0.0).map_err(e2s)?;
        let l = Vec3::from_slice(&l);
        let u = Vec3::from_slice(&eta) + l.scale(gamma);
        worst = worst.max(scc_residual_one(u, l, c.phi, c.mu));
    }
    Ok((worst <= 1e-10, format!("1000 solves, worst SCC residual {worst:.1e}")))
}

fn proximal_ccp() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCC9);
    let (mut kkt, mut dev_pgs, mut dev_apgd) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let count = rng.random_range(1..=8);
        let nodes = 2 * count + 2;
        let n = 3 * nodes;
        let a = random_spd(&mut rng, n, 0.3);
        let mut contacts = random_contacts(&mut rng, nodes, count, 0.3, false);
        for c in &mut contacts {
            c.mu = [rng.random_range(0.2..1.0); 2];
            c.phi = rng.random_range(-1.0..0.0);
        }
        let set = contact_set(contacts, n);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let aug = cond_core::contact::AugmentedDynamics { a: a.clone(), b: b.clone(), n_orig: n };
        let cfg = SolverConfig { operator: Operator::Proximal, theta_th: 1e-11, max_iter: 200_000, ..SolverConfig::default() };
        let sol = CondSolver::new(cfg).solve(&aug, &set, &vec![0.0; n], &NoClock).map_err(e2s)?;
        if !sol.report.converged {
            return Ok((false, "COND did not converge".into()));
        }
        // dense CCP data
        let ad = dense(&a);
        let ainv = ad.clone().try_inverse().ok_or("singular A")?;
        let j = dense_jc(&set);
        let ac = &j * &ainv * j.transpose();
        let bc = &j * &ainv * DVector::from_vec(b.clone());
        let lam = DVector::from_vec(sol.lambda.clone());
        let y = &ac * &lam + bc;
        for (k, c) in set.contacts.iter().enumerate() {
            let (ln, lt) = (lam[3 * k], (lam[3 * k + 1].powi(2) + lam[3 * k + 2].powi(2)).sqrt());
            let yn = y[3 * k] + c.phi;
            let yt = (y[3 * k + 1].powi(2) + y[3 * k + 2].powi(2)).sqrt();
            let comp = ln * yn + lam[3 * k + 1] * y[3 * k + 1] + lam[3 * k + 2] * y[3 * k + 2];
            kkt = kkt.max(lt - c.mu[0] * ln).max(c.mu[0] * yt - yn).max(comp.abs());
        }
        let p = assemble_delassus(&a, &set, &b, &NoClock).map_err(e2s)?;
        let bcfg = BaselineConfig { operator: Operator::Proximal, theta_th: 1e-13, max_iter: 500_000 };
        let (lp, _) = solve_pgs(&p, &bcfg, None, &NoClock).map_err(e2s)?;
        let (la, _) = solve_apgd(&p, &bcfg, None, &NoClock).map_err(e2s)?;
        let scale = lam.norm();
        let rel = |x: &[f64]| {
            let d = (DVector::from_column_slice(x) - &lam).norm();
            if scale > 1e-8 { d / scale } else { d }
        };
        dev_pgs = dev_pgs.max(rel(&lp));
        dev_apgd = dev_apgd.max(rel(&la));
    }
    Ok((
        kkt <= 1e-5 && dev_pgs <= 1e-3 && dev_apgd <= 1e-3,
        format!("20 scenes, KKT violation {kkt:.1e}, PGS deviation {dev_pgs:.1e}, APGD deviation {dev_apgd:.1e}"),
    ))
}

/// Largest distance between the simulated box centre and the analytic slide.
pub fn box_slide_error(kv: f64) -> Result<f64, String> {
    let s = bundled("box_slide");
    let scene = s.build().map_err(e2s)?;
    let mut cfg = RunConfig::for_scene(SolverKind::Cond, &scene);
    cfg.kv = Some(kv);
    cfg.cond.chebyshev = true;
    cfg.cond.theta_th = 1e-10;
    cfg.cond.max_iter = 100_000;
    let r = run(&scene, &cfg).map_err(e2s)?;
    let oracle = analytic_box_slide(&BoxSlideParams {
        mass: 0.5,
        mu: 0.2,
        force: 2.0,
        gravity: 9.81,
        duration: s.duration,
        step: s.step_size,
        y0: 0.0,
        half_width: 0.1,
        com_height: 0.1,
    })
    .map_err(e2s)?;
    let mut err = 0.0f64;
    for (d, y) in r.diagnostics.iter().zip(&oracle) {
        let p = d.positions[0];
        err = err.max((p[0].powi(2) + (p[1] - y).powi(2) + (p[2] - 0.1).powi(2)).sqrt());
    }
    Ok(err)
}

fn virtual_node_trend() -> Result<(bool, String), String> {
    let errs = [box_slide_error(1e3)?, box_slide_error(1e4)?, box_slide_error(1e5)?];
    let ratio = errs[0] / errs[2];
    let monotone = errs[0] > errs[1] && errs[1] > errs[2];
    Ok((
        monotone && (50.0..=200.0).contains(&ratio),
        format!("errors {:.3e} / {:.3e} / {:.3e} m, ratio {ratio:.1}", errs[0], errs[1], errs[2]),
    ))
}

fn non_expansive() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7E2);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let count = rng.random_range(1..=16);
        let nodes = 2 * count + 2;
        let n = 3 * nodes;
        let a = random_spd(&mut rng, n, 0.2);
        let sigma = dense(&a).symmetric_eigenvalues().max();
        let w = StepMatrix::uniform(n, 1.0 / sigma);
        let set = contact_set(random_contacts(&mut rng, nodes, count, 0.5, false), n);
        let v1: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v2: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (u1, _) = contact_update(&v1, &w, &set, Operator::Proximal, 0.0).map_err(e2s)?;
        let (u2, _) = contact_update(&v2, &w, &set, Operator::Proximal, 0.0).map_err(e2s)?;
        let before = cond_core::math::dist(&v1, &v2);
        let after = cond_core::math::dist(&u1, &u2);
        worst = worst.max(after - before);
    }
    Ok((worst <= 1e-12, format!("100 pairs, largest expansion {worst:.1e}")))
}

fn monotonicity() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1E3);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let mu = rng.random_range(0.0..1.5);
        let gamma = rng.random_range(0.1..10.0);
        let phi = rng.random_range(-0.5..0.5);
        let mut pair = [(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.0)); 2];
        for p in &mut pair {
            let eta = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let x = Vec3::new(-(eta.0[0] + phi) / gamma, -eta.0[1] / gamma, -eta.0[2] / gamma);
            let l = project_proximal(x, mu);
            *p = (x - l, l);
        }
        let d = (pair[0].0 - pair[1].0).dot(pair[0].1 - pair[1].1);
        worst = worst.min(d);
    }
    Ok((worst >= -1e-12, format!("1000 pairs, smallest inner product {worst:.1e}")))
}

/// Mean iterations on the lattice-drag scenario without and with Chebyshev.
pub fn chebyshev_iterations() -> Result<(f64, f64), String> {
    let scene = bundled("lattice_drag").build().map_err(e2s)?;
    let mut out = [0.0; 2];
    for (k, on) in [false, true].into_iter().enumerate() {
        let mut cfg = RunConfig::for_scene(SolverKind::Cond, &scene);
        cfg.cond.chebyshev = on;
        cfg.cond.max_iter = 20_000;
        out[k] = run(&scene, &cfg).map_err(e2s)?.mean_iterations();
    }
    Ok((out[0], out[1]))
}

fn chebyshev_ablation() -> Result<(bool, String), String> {
    let scene = bundled("lattice_drag").build().map_err(e2s)?;
    let contacts = detect_contacts(&scene.state, &scene.model, &scene.geometry).map_err(e2s)?.len();
    let dof = scene.model.v_len();
    let (off, on) = chebyshev_iterations()?;
    Ok((
        dof >= 900 && contacts >= 30 && on * 1.5 <= off,
        format!("{dof} DOF, {contacts} contacts, mean iterations {off:.1} without, {on:.1} with"),
    ))
}

fn scalability() -> Result<(bool, String), String> {
    let base = bundled("lattice_drag");
    let mut cond_cfg = RunConfig::new(SolverKind::Cond, base.solver.to_config());
    cond_cfg.max_steps = Some(20);
    let sizes = [300, 600, 1200, 2400, 4800];
    let cond = bench_scaling(&base, &sizes, &cond_cfg).map_err(e2s)?;
    let fit = cond.fit.ok_or("no fit")?;
    let small = &sizes[..4];
    let cond_small = {
        let pts: Vec<_> = cond.points.iter().filter(|p| small.contains(&p.size)).collect();
        let xs: Vec<f64> = pts.iter().map(|p| p.dof as f64).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.total_ms()).collect();
        loglog_fit(&xs, &ys).ok_or("no fit")?
    };
    let mut detail = format!("COND exponent {:.2} (R² {:.4})", fit.exponent, fit.r2);
    let mut ok = fit.exponent <= 1.3 && fit.r2 >= 0.95;
    for kind in [SolverKind::Pgs, SolverKind::Apgd] {
        let mut cfg = RunConfig::new(kind, base.solver.to_config());
        cfg.max_steps = Some(3);
        let rep = bench_scaling(&base, small, &cfg).map_err(e2s)?;
        let f = rep.fit.ok_or("no fit")?;
        ok &= f.exponent > cond_small.exponent;
        detail.push_str(&format!(", {} exponent {:.2} vs COND {:.2} on ≤2400", kind.name(), f.exponent, cond_small.exponent));
    }
    Ok((ok, detail))
}

/// Largest per-step distance between the anisotropic box and the MDP
/// point-mass oracle.
pub fn anisotropic_error(samples: usize) -> Result<(f64, [f64; 3]), String> {
    let s = bundled("anisotropic_box");
    let scene = s.build().map_err(e2s)?;
    let mut cfg = RunConfig::for_scene(SolverKind::Cond, &scene);
    cfg.kv = Some(1e5);
    cfg.cond.theta_th = 1e-8;
    cfg.cond.max_iter = 100_000;
    let r = run(&scene, &cfg).map_err(e2s)?;
    let oracle = mdp_slide(&MdpSlideParams {
        mass: 0.5,
        mu: [0.1, 0.3],
        gravity: 9.81,
        v0: [1.0, 1.0],
        p0: [0.0, 0.0],
        step: s.step_size,
        steps: scene.steps,
        samples,
    });
    let mut err = 0.0f64;
    for (d, o) in r.diagnostics.iter().zip(&oracle) {
        let p = d.positions[0];
        err = err.max(((p[0] - o[0]).powi(2) + (p[1] - o[1]).powi(2)).sqrt());
    }
    Ok((err, r.diagnostics.last().ok_or("no steps")?.positions[0]))
}

fn anisotropic() -> Result<(bool, String), String> {
    let (err, end) = anisotropic_error(1_000_000)?;
    let curved = end[0] - end[1] > 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(0xA15);
    let mut iso = 0.0f64;
    for _ in 0..1000 {
        let l = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mu = rng.random_range(0.0..1.5);
        let a = project_strict_anisotropic(l, mu, mu).map_err(e2s)?;
        iso = iso.max((a - project_strict(l, mu)).norm());
    }
    Ok((
        err <= 1e-3 && curved && iso <= 1e-10,
        format!("trajectory error {err:.1e} m, end ({:.3}, {:.3}), isotropic reduction {iso:.1e}", end[0], end[1]),
    ))
}

fn invertible() -> Result<(bool, String), String> {
    let mut s = bundled("lattice_drag");
    s.solver.operator = OperatorSpec::Proximal;
    s.solver.omega = 1e-3;
    s.solver.residual_tol = 1e-8;
    s.solver.max_iter = 100_000;
    let scene = s.build().map_err(e2s)?;
    let mut cfg = RunConfig::for_scene(SolverKind::Cond, &scene);
    cfg.max_steps = Some(10);
    let settled = run(&scene, &cfg).map_err(e2s)?.final_state;
    let model = &scene.model;
    let dyn_o = assemble_step(&settled, model, Some(&scene.external_force(0.1))).map_err(e2s)?;
    let raw = detect_contacts(&settled, model, &scene.geometry).map_err(e2s)?;
    let set = nodalize(&raw, &settled, model, scene.kv, &scene.stab).map_err(e2s)?;
    let aug = augment_dynamics(&dyn_o, &set).map_err(e2s)?;
    let sol = CondSolver::new(cfg.cond).solve(&aug, &set, &set.lift_velocity(&settled.v), &NoClock).map_err(e2s)?;
    let back = inverse_contact(&sol.v, cfg.cond.omega, &set, Operator::Proximal).map_err(e2s)?;
    let fwd = cond_core::math::norm(&sol.lambda);
    let inv = cond_core::math::norm(&back);
    let norm_err = (inv - fwd).abs() / fwd;
    let vec_err = cond_core::math::dist(&back, &sol.lambda) / fwd;
    Ok((
        !set.is_empty() && fwd > 0.0 && norm_err <= 1e-6 && vec_err <= 1e-6,
        format!("{} contacts, |λ| {fwd:.4} N, norm error {norm_err:.1e}, vector error {vec_err:.1e}", set.len()),
    ))
}

fn penetration() -> Result<(bool, String), String> {
    let mut worst = (0.0f64, "");
    for (name, _) in BUNDLED {
        let mut s = bundled(name);
        s.solver.operator = OperatorSpec::Strict;
        s.solver.residual_tol = 1e-4;
        s.contact.kv = None;
        s.contact.kv_scale = DEFAULT_KV_SCALE;
        let scene = s.build().map_err(e2s)?;
        let r = run(&scene, &RunConfig::for_scene(SolverKind::Cond, &scene)).map_err(e2s)?;
        if r.max_penetration() >= worst.0 {
            worst = (r.max_penetration(), name);
        }
    }
    Ok((worst.0 <= 5e-5, format!("{} scenarios, worst {:.2e} m ({})", BUNDLED.len(), worst.0, worst.1)))
}

/// Residual traces of the fixed-point iteration on a particle lattice
/// resting on a plane, one per random initial velocity. A soft lattice
/// reaches rounding level within a few dozen iterations, after which the
/// ratios are noise, so the check uses a stiff one.
pub fn contraction_traces(inits: usize, iters: usize, step: StepStrategy, stiffness: f64) -> Result<Vec<Vec<f64>>, String> {
    let s = Scenario::from_json(&format!(
        r#"{{"step_size": 0.001, "duration": 0.001,
            "lattices": [{{"name": "m", "dims": [6, 6, 2], "spacing": 0.02, "origin": [0, 0, 0],
                          "node_mass": 0.01, "stiffness": {stiffness:?}}}],
            "statics": [{{"type": "plane", "point": [0, 0, 0], "normal": [0, 0, 1], "friction": 0.4}}]}}"#
    ))
    .map_err(e2s)?;
    let scene = s.build().map_err(e2s)?;
    let model = &scene.model;
    let dyn_o = assemble_step(&scene.state, model, None).map_err(e2s)?;
    let raw = detect_contacts(&scene.state, model, &scene.geometry).map_err(e2s)?;
    let set = nodalize(&raw, &scene.state, model, scene.kv, &scene.stab).map_err(e2s)?;
    if set.n_virtual() != 0 {
        return Err("lattice is not completely nodal".into());
    }
    let aug = augment_dynamics(&dyn_o, &set).map_err(e2s)?;
    let cfg = SolverConfig {
        operator: Operator::Strict,
        step,
        theta_th: f64::MIN_POSITIVE,
        max_iter: iters,
        ..SolverConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x7A1);
    let mut out = Vec::with_capacity(inits);
    for _ in 0..inits {
        let warm: Vec<f64> = (0..aug.n()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let sol = CondSolver::new(cfg).solve(&aug, &set, &warm, &NoClock).map_err(e2s)?;
        out.push(sol.report.trace);
    }
    Ok(out)
}

fn contraction() -> Result<(bool, String), String> {
    let traces = contraction_traces(10, 200, StepStrategy::Frobenius, 4e5)?;
    let mut worst = 0.0f64;
    let mut shortest = usize::MAX;
    for t in &traces {
        shortest = shortest.min(t.len());
        for w in t.windows(2) {
            worst = worst.max(w[1] / w[0]);
        }
    }
    Ok((
        shortest >= 200 && worst < 1.0,
        format!("10 initializations, {shortest} iterations each, largest residual ratio {worst:.4}"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cond_core::math::Mat3;

    #[test]
    fn bundled_scenarios_parse() {
        for (name, _) in BUNDLED {
            bundled(name).build().unwrap();
        }
    }

    #[test]
    fn check_ids_are_one_through_thirteen() {
        let ids: Vec<usize> = all_checks().iter().map(|c| c.id).collect();
        assert_eq!(ids, (1..=13).collect::<Vec<_>>());
    }

    #[test]
    fn result_line_format() {
        let r = CheckResult { id: 3, name: "x", passed: true, detail: "ok".into(), seconds: 0.5 };
        assert_eq!(r.line(), "PASS  3 x: ok (0.50 s)");
    }

    #[test]
    fn random_contacts_use_distinct_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cs = random_contacts(&mut rng, 20, 8, 0.5, false);
        let mut seen = std::collections::HashSet::new();
        for c in &cs {
            assert!(seen.insert(c.i));
            if let Some(j) = c.j {
                assert!(seen.insert(j));
            }
        }
    }

    #[test]
    fn frame_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f: Mat3 = contact_frame(random_unit(&mut rng)).unwrap();
        let p = f.mul_mat(&f.transpose());
        for r in 0..3 {
            for c in 0..3 {
                assert!((p.0[r][c] - if r == c { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }
}
