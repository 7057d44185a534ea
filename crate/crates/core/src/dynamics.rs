//! Bodies, constraint potentials and the per-step linearized system.
//!
//! One step solves `A v̂ = b (+ contact forces)` with
//! `A = (2/t)M + ½(J_eᵀK J_e + E)t` and
//! `b = (2/t)M v − C v − J_eᵀK e + f_ext`, then advances with the midpoint
//! rule `v_{k+1} = 2v̂ − v_k`.
//!
//! Coordinates: a particle owns 3 position and 3 velocity slots. A rigid body
//! owns 7 position slots (position, then quaternion `w,x,y,z`) and 6 velocity
//! slots (linear velocity, then world-frame angular velocity).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{Mat3, Quat, Vec3};
use crate::sparse::{SparseSymmetric, TripletBuilder};

/// Default floor added to every geometric damping entry (N·s/m).
pub const DEFAULT_DAMPING_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BodyKind {
    Particle,
    /// Rigid body; `inertia` is expressed in the body frame.
    Rigid { inertia: Mat3 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub kind: BodyKind,
    pub mass: f64,
    pub q_offset: usize,
    pub v_offset: usize,
}

impl Body {
    pub fn q_dim(&self) -> usize {
        match self.kind {
            BodyKind::Particle => 3,
            BodyKind::Rigid { .. } => 7,
        }
    }

    pub fn v_dim(&self) -> usize {
        match self.kind {
            BodyKind::Particle => 3,
            BodyKind::Rigid { .. } => 6,
        }
    }

    pub fn is_particle(&self) -> bool {
        matches!(self.kind, BodyKind::Particle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DampingPolicy {
    /// Fixed diagonal value on every participating velocity coordinate.
    Constant(f64),
    /// Absolute column sums of the geometric stiffness `(∂J_e/∂q)ᵀK e`.
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintKind {
    /// `e = ‖p_b − p_a‖ − rest` between two particles.
    Distance { a: usize, b: usize, rest: f64 },
    /// `e = p − anchor` pinning a particle to a world point.
    Tie { body: usize, anchor: Vec3 },
}

/// Quadratic potential `½ eᵀK e` with `K = stiffness·I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintPotential {
    pub kind: ConstraintKind,
    pub stiffness: f64,
    pub damping: DampingPolicy,
}

impl ConstraintPotential {
    pub fn distance(a: usize, b: usize, rest: f64, stiffness: f64) -> Self {
        ConstraintPotential {
            kind: ConstraintKind::Distance { a, b, rest },
            stiffness,
            damping: DampingPolicy::Geometric,
        }
    }

    pub fn tie(body: usize, anchor: Vec3, stiffness: f64) -> Self {
        ConstraintPotential { kind: ConstraintKind::Tie { body, anchor }, stiffness, damping: DampingPolicy::Geometric }
    }

    pub fn with_damping(mut self, d: DampingPolicy) -> Self {
        self.damping = d;
        self
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            ConstraintKind::Distance { .. } => 1,
            ConstraintKind::Tie { .. } => 3,
        }
    }
}

/// Constraint error and Jacobian rows as `(velocity index, value)` lists.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintEval {
    pub e: Vec<f64>,
    pub rows: Vec<Vec<(usize, f64)>>,
}

/// Bodies, constraints and global parameters of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub bodies: Vec<Body>,
    pub constraints: Vec<ConstraintPotential>,
    pub gravity: Vec3,
    pub damping_floor: f64,
    q_len: usize,
    v_len: usize,
}

impl Default for Model {
    fn default() -> Self {
        Model::new(Vec3::new(0.0, 0.0, -9.81))
    }
}

impl Model {
    pub fn new(gravity: Vec3) -> Self {
        Model {
            bodies: Vec::new(),
            constraints: Vec::new(),
            gravity,
            damping_floor: DEFAULT_DAMPING_FLOOR,
            q_len: 0,
            v_len: 0,
        }
    }

    pub fn q_len(&self) -> usize {
        self.q_len
    }

    pub fn v_len(&self) -> usize {
        self.v_len
    }

    fn push_body(&mut self, kind: BodyKind, mass: f64) -> usize {
        let body = Body { kind, mass, q_offset: self.q_len, v_offset: self.v_len };
        self.q_len += body.q_dim();
        self.v_len += body.v_dim();
        self.bodies.push(body);
        self.bodies.len() - 1
    }

    pub fn add_particle(&mut self, mass: f64) -> Result<usize> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidArgument(alloc::format!("particle mass must be positive, got {mass}")));
        }
        Ok(self.push_body(BodyKind::Particle, mass))
    }

    pub fn add_rigid(&mut self, mass: f64, inertia: Mat3) -> Result<usize> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidArgument(alloc::format!("rigid mass must be positive, got {mass}")));
        }
        if !inertia.is_symmetric(1e-12) || !inertia.is_positive_definite() {
            return Err(Error::InvalidArgument("inertia must be symmetric positive definite".into()));
        }
        Ok(self.push_body(BodyKind::Rigid { inertia }, mass))
    }

    pub fn add_constraint(&mut self, c: ConstraintPotential) -> Result<usize> {
        if !(c.stiffness > 0.0) || !c.stiffness.is_finite() {
            return Err(Error::InvalidArgument("constraint stiffness must be positive".into()));
        }
        if let DampingPolicy::Constant(d) = c.damping {
            if !(d >= 0.0) {
                return Err(Error::InvalidArgument("damping must be non-negative".into()));
            }
        }
        let particle = |i: usize| self.bodies.get(i).is_some_and(|b| b.is_particle());
        let ok = match c.kind {
            ConstraintKind::Distance { a, b, rest } => particle(a) && particle(b) && a != b && rest >= 0.0,
            ConstraintKind::Tie { body, anchor } => particle(body) && anchor.is_finite(),
        };
        if !ok {
            return Err(Error::InvalidArgument("constraint must reference distinct particle bodies".into()));
        }
        self.constraints.push(c);
        Ok(self.constraints.len() - 1)
    }

    /// Median body mass (used to scale the virtual-node gain).
    pub fn median_mass(&self) -> f64 {
        let mut m: Vec<f64> = self.bodies.iter().map(|b| b.mass).collect();
        if m.is_empty() {
            return 1.0;
        }
        m.sort_by(f64::total_cmp);
        m[m.len() / 2]
    }
}

/// Generalized coordinates and velocity of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub dt: f64,
}

impl SystemState {
    /// Zero positions and velocities, identity orientations.
    pub fn new(model: &Model, dt: f64) -> Self {
        let mut q = vec![0.0; model.q_len()];
        for b in &model.bodies {
            if !b.is_particle() {
                q[b.q_offset + 3] = 1.0;
            }
        }
        SystemState { q, v: vec![0.0; model.v_len()], step: 0, dt }
    }

    pub fn position(&self, b: &Body) -> Vec3 {
        Vec3::from_slice(&self.q[b.q_offset..b.q_offset + 3])
    }

    pub fn set_position(&mut self, b: &Body, p: Vec3) {
        self.q[b.q_offset..b.q_offset + 3].copy_from_slice(&p.0);
    }

    pub fn orientation(&self, b: &Body) -> Quat {
        let o = b.q_offset + 3;
        Quat::new(self.q[o], self.q[o + 1], self.q[o + 2], self.q[o + 3])
    }

    pub fn set_orientation(&mut self, b: &Body, r: Quat) {
        let r = r.normalized();
        let o = b.q_offset + 3;
        self.q[o] = r.w;
        self.q[o + 1..o + 4].copy_from_slice(&r.v.0);
    }

    pub fn linear_velocity(&self, b: &Body) -> Vec3 {
        Vec3::from_slice(&self.v[b.v_offset..b.v_offset + 3])
    }

    pub fn set_linear_velocity(&mut self, b: &Body, v: Vec3) {
        self.v[b.v_offset..b.v_offset + 3].copy_from_slice(&v.0);
    }

    pub fn angular_velocity(&self, b: &Body) -> Vec3 {
        Vec3::from_slice(&self.v[b.v_offset + 3..b.v_offset + 6])
    }

    pub fn set_angular_velocity(&mut self, b: &Body, w: Vec3) {
        self.v[b.v_offset + 3..b.v_offset + 6].copy_from_slice(&w.0);
    }

    /// World-frame inertia `R I Rᵀ`.
    pub fn world_inertia(&self, b: &Body) -> Mat3 {
        match b.kind {
            BodyKind::Particle => Mat3::ZERO,
            BodyKind::Rigid { inertia } => {
                let r = self.orientation(b).to_matrix();
                let m = r.mul_mat(&inertia).mul_mat(&r.transpose());
                m.add(&m.transpose()).scale(0.5)
            }
        }
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        if self.q.len() != model.q_len() {
            return Err(Error::DimensionMismatch { expected: model.q_len(), found: self.q.len() });
        }
        if self.v.len() != model.v_len() {
            return Err(Error::DimensionMismatch { expected: model.v_len(), found: self.v.len() });
        }
        if let Some(i) = self.q.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidState(alloc::format!("non-finite coordinate q[{i}]")));
        }
        if let Some(i) = self.v.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidState(alloc::format!("non-finite velocity v[{i}]")));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidState(alloc::format!("step size must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledDynamics {
    pub a: SparseSymmetric,
    pub b: Vec<f64>,
}

impl AssembledDynamics {
    pub fn n(&self) -> usize {
        self.a.dim()
    }
}

pub fn constraint_eval(model: &Model, c: &ConstraintPotential, q: &[f64]) -> Result<ConstraintEval> {
    constraint_eval_indexed(model, c, q, usize::MAX)
}

fn constraint_eval_indexed(model: &Model, c: &ConstraintPotential, q: &[f64], index: usize) -> Result<ConstraintEval> {
    let pos = |i: usize| {
        let b = &model.bodies[i];
        (Vec3::from_slice(&q[b.q_offset..b.q_offset + 3]), b.v_offset)
    };
    match c.kind {
        ConstraintKind::Distance { a, b, rest } => {
            let (pa, va) = pos(a);
            let (pb, vb) = pos(b);
            let d = pb - pa;
            let len = d.norm();
            if len < 1e-12 {
                return Err(Error::DegenerateConstraint { index });
            }
            let u = d.scale(1.0 / len);
            let mut row = Vec::with_capacity(6);
            for k in 0..3 {
                row.push((va + k, -u.0[k]));
            }
            for k in 0..3 {
                row.push((vb + k, u.0[k]));
            }
            Ok(ConstraintEval { e: vec![len - rest], rows: vec![row] })
        }
        ConstraintKind::Tie { body, anchor } => {
            let (p, vo) = pos(body);
            let e = p - anchor;
            Ok(ConstraintEval { e: e.0.to_vec(), rows: (0..3).map(|k| vec![(vo + k, 1.0)]).collect() })
        }
    }
}

/// Diagonal of `E` for one constraint, over its participating velocity
/// coordinates, as `(index, value)` pairs.
pub fn damping_matrix(model: &Model, c: &ConstraintPotential, q: &[f64]) -> Result<Vec<(usize, f64)>> {
    let ev = constraint_eval(model, c, q)?;
    let idx: Vec<usize> = ev.rows.iter().flat_map(|r| r.iter().map(|&(i, _)| i)).collect();
    let mut idx_unique = idx.clone();
    idx_unique.sort_unstable();
    idx_unique.dedup();
    match c.damping {
        DampingPolicy::Constant(d) => Ok(idx_unique.into_iter().map(|i| (i, d)).collect()),
        DampingPolicy::Geometric => match c.kind {
            ConstraintKind::Tie { .. } => Ok(idx_unique.into_iter().map(|i| (i, model.damping_floor)).collect()),
            ConstraintKind::Distance { .. } => {
                // G = k·e·(1/L)[[P, −P], [−P, P]] with P = I − d̂d̂ᵀ
                let u: Vec<f64> = ev.rows[0][3..].iter().map(|&(_, x)| x).collect();
                let len = {
                    let ConstraintKind::Distance { rest, .. } = c.kind else { unreachable!() };
                    ev.e[0] + rest
                };
                let s = c.stiffness * ev.e[0] / len;
                let mut out = Vec::with_capacity(6);
                for (slot, &(i, _)) in ev.rows[0].iter().enumerate() {
                    let col = slot % 3;
                    let mut sum = 0.0;
                    for r in 0..3 {
                        let p = if r == col { 1.0 } else { 0.0 } - u[r] * u[col];
                        sum += 2.0 * f64::abs(s * p);
                    }
                    out.push((i, sum + model.damping_floor));
                }
                Ok(out)
            }
        },
    }
}

/// Builds `A` and `b` for one step. `f_ext` (length `v_len`) is added to
/// gravity when present.
pub fn assemble_step(state: &SystemState, model: &Model, f_ext: Option<&[f64]>) -> Result<AssembledDynamics> {
    state.validate(model)?;
    let n = model.v_len();
    if n == 0 {
        return Err(Error::InvalidArgument("model has no bodies".into()));
    }
    if let Some(f) = f_ext {
        if f.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: f.len() });
        }
    }
    let t = state.dt;
    let mut tb = TripletBuilder::with_capacity(n, n * 4 + model.constraints.len() * 40);
    let mut b = vec![0.0; n];

    for body in &model.bodies {
        let o = body.v_offset;
        let m = body.mass;
        for k in 0..3 {
            tb.push(o + k, o + k, 2.0 * m / t);
            b[o + k] += 2.0 * m / t * state.v[o + k] + m * model.gravity.0[k];
        }
        if let BodyKind::Rigid { .. } = body.kind {
            let iw = state.world_inertia(body);
            let w = state.angular_velocity(body);
            let iww = iw.mul_vec(w);
            let gyro = w.cross(iww);
            for r in 0..3 {
                for c in 0..3 {
                    tb.push(o + 3 + r, o + 3 + c, 2.0 / t * iw.0[r][c]);
                }
                b[o + 3 + r] += 2.0 / t * iww.0[r] - gyro.0[r];
            }
        }
    }

    for (ci, c) in model.constraints.iter().enumerate() {
        let ev = constraint_eval_indexed(model, c, &state.q, ci)?;
        let k = c.stiffness;
        for (row, e) in ev.rows.iter().zip(&ev.e) {
            for &(i, ji) in row {
                b[i] -= ji * k * e;
                for &(j, jj) in row {
                    tb.push(i, j, 0.5 * t * k * ji * jj);
                }
            }
        }
        for (i, d) in damping_matrix(model, c, &state.q)? {
            tb.push(i, i, 0.5 * t * d);
        }
    }

    if let Some(f) = f_ext {
        for (bi, fi) in b.iter_mut().zip(f) {
            *bi += fi;
        }
    }
    Ok(AssembledDynamics { a: tb.build()?, b })
}

/// Advances positions with `v̂` and stores `v_{k+1} = 2v̂ − v_k`.
pub fn integrate(model: &Model, state: &SystemState, v_hat: &[f64]) -> Result<SystemState> {
    if v_hat.len() != model.v_len() {
        return Err(Error::DimensionMismatch { expected: model.v_len(), found: v_hat.len() });
    }
    let t = state.dt;
    let mut next = state.clone();
    for body in &model.bodies {
        let (qo, vo) = (body.q_offset, body.v_offset);
        for k in 0..3 {
            next.q[qo + k] += t * v_hat[vo + k];
        }
        if !body.is_particle() {
            let w = Vec3::from_slice(&v_hat[vo + 3..vo + 6]);
            let dq = Quat::from_rotation_vector(w.scale(t));
            let r = dq.mul(&state.orientation(body)).normalized();
            next.set_orientation(body, r);
        }
    }
    for (i, nv) in next.v.iter_mut().enumerate() {
        *nv = 2.0 * v_hat[i] - state.v[i];
    }
    next.step += 1;
    Ok(next)
}

/// `½ vᵀM v`
pub fn kinetic_energy(state: &SystemState, model: &Model) -> f64 {
    let mut ke = 0.0;
    for body in &model.bodies {
        ke += 0.5 * body.mass * state.linear_velocity(body).norm_sq();
        if !body.is_particle() {
            let w = state.angular_velocity(body);
            ke += 0.5 * w.dot(state.world_inertia(body).mul_vec(w));
        }
    }
    ke
}
