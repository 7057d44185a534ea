//! JSON scenario files: schema, loading and construction of the simulation
//! objects.

use std::collections::HashMap;
use std::path::Path;

use cond_core::contact::{Friction, Geometry, Proxy, StabilizationParams, DEFAULT_MARGIN};
use cond_core::dynamics::{ConstraintPotential, Model, SystemState};
use cond_core::math::{Mat3, Quat, Vec3};
use cond_core::solver::{Operator, SolverConfig, StepStrategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;

pub const DEFAULT_STEP_SIZE: f64 = 0.01;
pub const DEFAULT_KV_SCALE: f64 = 1e5;

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}
fn zero3() -> [f64; 3] {
    [0.0; 3]
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub step_size: f64,
    pub duration: f64,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub contact: ContactParams,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub bodies: Vec<BodySpec>,
    #[serde(default)]
    pub lattices: Vec<LatticeSpec>,
    #[serde(default)]
    pub springs: Vec<SpringSpec>,
    #[serde(default)]
    pub ties: Vec<TieSpec>,
    #[serde(default)]
    pub statics: Vec<StaticSpec>,
    #[serde(default)]
    pub dynamic_friction: FrictionSpec,
    #[serde(default)]
    pub forces: Vec<ForceSpec>,
    #[serde(default)]
    pub randomize: RandomizeSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactParams {
    pub beta: f64,
    pub restitution: f64,
    pub rest_threshold: f64,
    /// `k_v = kv_scale · median mass / t` unless `kv` is given.
    pub kv_scale: f64,
    /// Absolute virtual-node gain (N·s/m).
    pub kv: Option<f64>,
    pub margin: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams { beta: 0.2, restitution: 0.0, rest_threshold: 0.01, kv_scale: DEFAULT_KV_SCALE, kv: None, margin: DEFAULT_MARGIN }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OperatorSpec {
    #[default]
    Strict,
    Proximal,
    Anisotropic,
}

impl From<OperatorSpec> for Operator {
    fn from(o: OperatorSpec) -> Self {
        match o {
            OperatorSpec::Strict => Operator::Strict,
            OperatorSpec::Proximal => Operator::Proximal,
            OperatorSpec::Anisotropic => Operator::Anisotropic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StepSpec {
    #[default]
    Frobenius,
    Bb1,
    Bb2,
    BbAlt,
}

impl From<StepSpec> for StepStrategy {
    fn from(s: StepSpec) -> Self {
        match s {
            StepSpec::Frobenius => StepStrategy::Frobenius,
            StepSpec::Bb1 => StepStrategy::Bb1,
            StepSpec::Bb2 => StepStrategy::Bb2,
            StepSpec::BbAlt => StepStrategy::BbAlternating,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub operator: OperatorSpec,
    pub step_matrix: StepSpec,
    pub residual_tol: f64,
    pub max_iter: usize,
    pub chebyshev: bool,
    pub cheb_start: usize,
    pub under_relax: f64,
    pub omega: f64,
    pub recycle: usize,
    /// Uniform step `W = αI`; replaces `step_matrix` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_step: Option<f64>,
}

impl Default for SolverParams {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverParams {
            operator: OperatorSpec::Strict,
            step_matrix: StepSpec::Frobenius,
            residual_tol: d.theta_th,
            max_iter: d.max_iter,
            chebyshev: d.chebyshev,
            cheb_start: d.cheb_start,
            under_relax: d.under_relax,
            omega: d.omega,
            recycle: d.recycle,
            fixed_step: None,
        }
    }
}

impl SolverParams {
    pub fn to_config(&self) -> SolverConfig {
        SolverConfig {
            operator: self.operator.into(),
            step: self.fixed_step.map_or(self.step_matrix.into(), StepStrategy::Fixed),
            theta_th: self.residual_tol,
            max_iter: self.max_iter,
            chebyshev: self.chebyshev,
            cheb_start: self.cheb_start,
            under_relax: self.under_relax,
            omega: self.omega,
            recycle: self.recycle,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FrictionSpec {
    Isotropic(f64),
    Anisotropic([f64; 2]),
}

impl Default for FrictionSpec {
    fn default() -> Self {
        FrictionSpec::Isotropic(0.0)
    }
}

impl FrictionSpec {
    pub fn to_friction(self) -> Friction {
        match self {
            FrictionSpec::Isotropic(m) => Friction::Isotropic(m),
            FrictionSpec::Anisotropic([a, b]) => Friction::Anisotropic(a, b),
        }
    }

    fn valid(self) -> bool {
        self.to_friction().coefficients().iter().all(|m| m.is_finite() && *m >= 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ContactPoints {
    Bottom,
    #[default]
    All,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum BodySpec {
    Particle {
        name: String,
        mass: f64,
        position: [f64; 3],
        #[serde(default = "zero3")]
        velocity: [f64; 3],
        #[serde(default)]
        radius: f64,
        #[serde(default = "default_true")]
        collide: bool,
        #[serde(default)]
        group: Option<u32>,
    },
    Box {
        name: String,
        mass: f64,
        size: [f64; 3],
        position: [f64; 3],
        #[serde(default = "zero3")]
        velocity: [f64; 3],
        #[serde(default = "zero3")]
        angular_velocity: [f64; 3],
        /// `[w, x, y, z]`
        #[serde(default)]
        orientation: Option<[f64; 4]>,
        #[serde(default)]
        contact_points: ContactPoints,
        #[serde(default)]
        group: Option<u32>,
    },
}

impl BodySpec {
    pub fn name(&self) -> &str {
        match self {
            BodySpec::Particle { name, .. } | BodySpec::Box { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub name: String,
    /// Node counts along x, y, z.
    pub dims: [usize; 3],
    pub spacing: f64,
    pub origin: [f64; 3],
    pub node_mass: f64,
    pub stiffness: f64,
    #[serde(default = "default_true")]
    pub shear: bool,
    #[serde(default)]
    pub radius: f64,
    #[serde(default)]
    pub group: Option<u32>,
    #[serde(default = "zero3")]
    pub velocity: [f64; 3],
    /// Only the `z = min` layer gets contact proxies.
    #[serde(default)]
    pub bottom_contacts_only: bool,
}

impl LatticeSpec {
    pub fn node_count(&self) -> usize {
        self.dims.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpringSpec {
    pub a: String,
    pub b: String,
    pub stiffness: f64,
    #[serde(default)]
    pub rest: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TieSpec {
    pub body: String,
    pub stiffness: f64,
    #[serde(default)]
    pub anchor: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum StaticSpec {
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        #[serde(default)]
        friction: FrictionSpec,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        #[serde(default)]
        friction: FrictionSpec,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Face {
    All,
    Top,
    Bottom,
    #[serde(rename = "+x")]
    PosX,
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "+y")]
    PosY,
    #[serde(rename = "-y")]
    NegY,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ForceTarget {
    Body(String),
    Lattice { lattice: String, face: Face },
}

/// Constant force on `[start, end)`. Lattice forces are split evenly over the
/// face nodes unless `per_node` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceSpec {
    pub target: ForceTarget,
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub end: Option<f64>,
    pub force: [f64; 3],
    #[serde(default = "zero3")]
    pub torque: [f64; 3],
    #[serde(default)]
    pub per_node: bool,
}

/// Uniform jitter in `[-x, x]` per coordinate, drawn from the scenario seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RandomizeSpec {
    pub position: f64,
    pub velocity: f64,
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::Validation(msg.into())
}

fn finite3(v: &[f64; 3], what: &str) -> Result<(), SimError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what} must be finite")))
    }
}

fn positive(x: f64, what: &str) -> Result<(), SimError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{what} must be positive, got {x}")))
    }
}

/// Body index, position, velocity and, for rigid bodies, orientation and
/// angular velocity.
type InitialState = (usize, [f64; 3], [f64; 3], Option<([f64; 4], [f64; 3])>);

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn step_count(&self) -> Result<usize, SimError> {
        positive(self.step_size, "step_size")?;
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(invalid(format!("duration must be non-negative, got {}", self.duration)));
        }
        let r = self.duration / self.step_size;
        let n = r.round();
        if (r - n).abs() > 1e-9 * n.max(1.0) {
            return Err(invalid(format!(
                "duration {} is not an integer multiple of step_size {}",
                self.duration, self.step_size
            )));
        }
        Ok(n as usize)
    }

    pub fn body_count(&self) -> usize {
        self.bodies.len() + self.lattices.iter().map(|l| l.node_count()).sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.step_count()?;
        finite3(&self.gravity, "gravity")?;
        let c = &self.contact;
        if !(c.beta >= 0.0 && c.beta <= 1.0) {
            return Err(invalid(format!("contact.beta must lie in [0, 1], got {}", c.beta)));
        }
        if !(c.restitution >= 0.0 && c.restitution <= 1.0) {
            return Err(invalid(format!("contact.restitution must lie in [0, 1], got {}", c.restitution)));
        }
        if !(c.rest_threshold >= 0.0) {
            return Err(invalid("contact.rest_threshold must be non-negative"));
        }
        positive(c.kv_scale, "contact.kv_scale")?;
        if let Some(kv) = c.kv {
            positive(kv, "contact.kv")?;
        }
        positive(c.margin, "contact.margin")?;
        self.solver.to_config().validate().map_err(|e| invalid(format!("solver: {e}")))?;
        if !self.dynamic_friction.valid() {
            return Err(invalid("dynamic_friction must be non-negative"));
        }
        if !(self.randomize.position >= 0.0 && self.randomize.velocity >= 0.0) {
            return Err(invalid("randomize ranges must be non-negative"));
        }

        let mut names: HashMap<&str, ()> = HashMap::new();
        for b in &self.bodies {
            if names.insert(b.name(), ()).is_some() {
                return Err(invalid(format!("duplicate body name {:?}", b.name())));
            }
            match b {
                BodySpec::Particle { name, mass, position, velocity, radius, .. } => {
                    positive(*mass, &format!("{name}.mass"))?;
                    finite3(position, &format!("{name}.position"))?;
                    finite3(velocity, &format!("{name}.velocity"))?;
                    if !(*radius >= 0.0) {
                        return Err(invalid(format!("{name}.radius must be non-negative")));
                    }
                }
                BodySpec::Box { name, mass, size, position, velocity, angular_velocity, orientation, .. } => {
                    positive(*mass, &format!("{name}.mass"))?;
                    for s in size {
                        positive(*s, &format!("{name}.size"))?;
                    }
                    finite3(position, &format!("{name}.position"))?;
                    finite3(velocity, &format!("{name}.velocity"))?;
                    finite3(angular_velocity, &format!("{name}.angular_velocity"))?;
                    if let Some(q) = orientation {
                        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if !(n > 1e-12) || !n.is_finite() {
                            return Err(invalid(format!("{name}.orientation must be a non-zero quaternion")));
                        }
                    }
                }
            }
        }
        for l in &self.lattices {
            if names.insert(&l.name, ()).is_some() {
                return Err(invalid(format!("duplicate body name {:?}", l.name)));
            }
            if l.dims.contains(&0) {
                return Err(invalid(format!("{}.dims must be positive", l.name)));
            }
            positive(l.spacing, &format!("{}.spacing", l.name))?;
            positive(l.node_mass, &format!("{}.node_mass", l.name))?;
            positive(l.stiffness, &format!("{}.stiffness", l.name))?;
            finite3(&l.origin, &format!("{}.origin", l.name))?;
            finite3(&l.velocity, &format!("{}.velocity", l.name))?;
            if !(l.radius >= 0.0) {
                return Err(invalid(format!("{}.radius must be non-negative", l.name)));
            }
        }
        let particle = |n: &str| {
            self.bodies.iter().any(|b| matches!(b, BodySpec::Particle { name, .. } if name == n))
        };
        for s in &self.springs {
            for end in [&s.a, &s.b] {
                if !particle(end) {
                    return Err(invalid(format!("spring end {end:?} is not a particle")));
                }
            }
            if s.a == s.b {
                return Err(invalid(format!("spring {:?} connects a particle to itself", s.a)));
            }
            positive(s.stiffness, "spring stiffness")?;
            if let Some(r) = s.rest {
                if !(r >= 0.0) {
                    return Err(invalid("spring rest length must be non-negative"));
                }
            }
        }
        for t in &self.ties {
            if !particle(&t.body) {
                return Err(invalid(format!("tie body {:?} is not a particle", t.body)));
            }
            positive(t.stiffness, "tie stiffness")?;
        }
        for s in &self.statics {
            match s {
                StaticSpec::Plane { point, normal, friction } => {
                    finite3(point, "plane point")?;
                    finite3(normal, "plane normal")?;
                    if normal.iter().map(|x| x * x).sum::<f64>() < 1e-24 {
                        return Err(invalid("plane normal must be non-zero"));
                    }
                    if !friction.valid() {
                        return Err(invalid("plane friction must be non-negative"));
                    }
                }
                StaticSpec::Sphere { center, radius, friction } => {
                    finite3(center, "sphere center")?;
                    positive(*radius, "sphere radius")?;
                    if !friction.valid() {
                        return Err(invalid("sphere friction must be non-negative"));
                    }
                }
            }
        }
        for f in &self.forces {
            finite3(&f.force, "force")?;
            finite3(&f.torque, "torque")?;
            match &f.target {
                ForceTarget::Body(n) => {
                    if !self.bodies.iter().any(|b| b.name() == n) {
                        return Err(invalid(format!("force target {n:?} not found")));
                    }
                }
                ForceTarget::Lattice { lattice, .. } => {
                    if !self.lattices.iter().any(|l| &l.name == lattice) {
                        return Err(invalid(format!("force target lattice {lattice:?} not found")));
                    }
                }
            }
            if let Some(e) = f.end {
                if !(e >= f.start) {
                    return Err(invalid("force end must not precede start"));
                }
            }
        }
        Ok(())
    }

    /// `k_v` in N·s/m for a built model.
    pub fn kv(&self, model: &Model) -> f64 {
        self.contact.kv.unwrap_or(self.contact.kv_scale * model.median_mass() / self.step_size)
    }

    pub fn build(&self) -> Result<Scene, SimError> {
        self.validate()?;
        let g = self.gravity;
        let mut model = Model::new(Vec3::new(g[0], g[1], g[2]));
        let mut geometry = Geometry { margin: self.contact.margin, dynamic_friction: self.dynamic_friction.to_friction(), ..Geometry::default() };
        let mut init: Vec<InitialState> = Vec::new();
        let mut names = HashMap::new();
        let mut tracked = Vec::new();
        let mut next_group = 1_000_000u32;
        let mut fresh_group = || {
            next_group += 1;
            next_group
        };

        for spec in &self.bodies {
            match spec {
                BodySpec::Particle { name, mass, position, velocity, radius, collide, group } => {
                    let b = model.add_particle(*mass)?;
                    if *collide {
                        geometry.proxies.push(Proxy::Sphere { body: b, radius: *radius, group: group.unwrap_or_else(&mut fresh_group) });
                    }
                    init.push((b, *position, *velocity, None));
                    names.insert(name.clone(), b);
                    tracked.push((name.clone(), b));
                }
                BodySpec::Box { name, mass, size, position, velocity, angular_velocity, orientation, contact_points, group } => {
                    let [a, bb, c] = *size;
                    let k = mass / 12.0;
                    let inertia = Mat3::diag([k * (bb * bb + c * c), k * (a * a + c * c), k * (a * a + bb * bb)]);
                    let b = model.add_rigid(*mass, inertia)?;
                    let (hx, hy, hz) = (a / 2.0, bb / 2.0, c / 2.0);
                    let mut pts = Vec::new();
                    for &sz in &[-1.0, 1.0] {
                        if sz > 0.0 && *contact_points == ContactPoints::Bottom {
                            continue;
                        }
                        for &sy in &[-1.0, 1.0] {
                            for &sx in &[-1.0, 1.0] {
                                pts.push(Vec3::new(sx * hx, sy * hy, sz * hz));
                            }
                        }
                    }
                    if *contact_points != ContactPoints::None {
                        geometry.proxies.push(Proxy::Points { body: b, points: pts, group: group.unwrap_or_else(&mut fresh_group) });
                    }
                    init.push((b, *position, *velocity, Some((orientation.unwrap_or([1.0, 0.0, 0.0, 0.0]), *angular_velocity))));
                    names.insert(name.clone(), b);
                    tracked.push((name.clone(), b));
                }
            }
        }

        let mut lattices = Vec::new();
        for l in &self.lattices {
            let [nx, ny, nz] = l.dims;
            let first = model.bodies.len();
            let group = l.group.unwrap_or_else(&mut fresh_group);
            let idx = |i: usize, j: usize, k: usize| first + i + nx * (j + ny * k);
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let b = model.add_particle(l.node_mass)?;
                        let p = [
                            l.origin[0] + i as f64 * l.spacing,
                            l.origin[1] + j as f64 * l.spacing,
                            l.origin[2] + k as f64 * l.spacing,
                        ];
                        if !l.bottom_contacts_only || k == 0 {
                            geometry.proxies.push(Proxy::Sphere { body: b, radius: l.radius, group });
                        }
                        init.push((b, p, l.velocity, None));
                    }
                }
            }
            let mut link = |a: usize, b: usize, rest: f64| model.add_constraint(ConstraintPotential::distance(a, b, rest, l.stiffness));
            let h = l.spacing;
            let d = h * std::f64::consts::SQRT_2;
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let a = idx(i, j, k);
                        if i + 1 < nx {
                            link(a, idx(i + 1, j, k), h)?;
                        }
                        if j + 1 < ny {
                            link(a, idx(i, j + 1, k), h)?;
                        }
                        if k + 1 < nz {
                            link(a, idx(i, j, k + 1), h)?;
                        }
                        if !l.shear {
                            continue;
                        }
                        if i + 1 < nx && j + 1 < ny {
                            link(a, idx(i + 1, j + 1, k), d)?;
                            link(idx(i + 1, j, k), idx(i, j + 1, k), d)?;
                        }
                        if i + 1 < nx && k + 1 < nz {
                            link(a, idx(i + 1, j, k + 1), d)?;
                            link(idx(i + 1, j, k), idx(i, j, k + 1), d)?;
                        }
                        if j + 1 < ny && k + 1 < nz {
                            link(a, idx(i, j + 1, k + 1), d)?;
                            link(idx(i, j + 1, k), idx(i, j, k + 1), d)?;
                        }
                    }
                }
            }
            lattices.push(LatticeInfo { name: l.name.clone(), first, dims: l.dims });
        }

        let mut state = SystemState::new(&model, self.step_size);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (jp, jv) = (self.randomize.position, self.randomize.velocity);
        let mut jitter = |x: [f64; 3], r: f64| -> Vec3 {
            if r > 0.0 {
                Vec3::new(x[0] + rng.random_range(-r..=r), x[1] + rng.random_range(-r..=r), x[2] + rng.random_range(-r..=r))
            } else {
                Vec3::new(x[0], x[1], x[2])
            }
        };
        for (b, p, v, rot) in &init {
            let body = model.bodies[*b];
            let p = jitter(*p, jp);
            let v = jitter(*v, jv);
            state.set_position(&body, p);
            state.set_linear_velocity(&body, v);
            if let Some((q, w)) = rot {
                state.set_orientation(&body, Quat::new(q[0], q[1], q[2], q[3]).normalized());
                state.set_angular_velocity(&body, Vec3::new(w[0], w[1], w[2]));
            }
        }

        for s in &self.springs {
            let (a, b) = (names[&s.a], names[&s.b]);
            let rest = match s.rest {
                Some(r) => r,
                None => (state.position(&model.bodies[a]) - state.position(&model.bodies[b])).norm(),
            };
            model.add_constraint(ConstraintPotential::distance(a, b, rest, s.stiffness))?;
        }
        for t in &self.ties {
            let b = names[&t.body];
            let anchor = match t.anchor {
                Some(p) => Vec3::new(p[0], p[1], p[2]),
                None => state.position(&model.bodies[b]),
            };
            model.add_constraint(ConstraintPotential::tie(b, anchor, t.stiffness))?;
        }
        for s in &self.statics {
            match s {
                StaticSpec::Plane { point, normal, friction } => geometry.add_plane(
                    Vec3::new(point[0], point[1], point[2]),
                    Vec3::new(normal[0], normal[1], normal[2]),
                    friction.to_friction(),
                )?,
                StaticSpec::Sphere { center, radius, friction } => {
                    geometry.add_sphere(Vec3::new(center[0], center[1], center[2]), *radius, friction.to_friction())?
                }
            }
        }
        geometry.validate(&model)?;
        state.validate(&model)?;

        let mut forces = Vec::new();
        for f in &self.forces {
            let mut entries = Vec::new();
            match &f.target {
                ForceTarget::Body(n) => {
                    let body = model.bodies[names[n]];
                    for k in 0..3 {
                        entries.push((body.v_offset + k, f.force[k]));
                    }
                    if !body.is_particle() {
                        for k in 0..3 {
                            entries.push((body.v_offset + 3 + k, f.torque[k]));
                        }
                    }
                }
                ForceTarget::Lattice { lattice, face } => {
                    let info = lattices.iter().find(|l| &l.name == lattice).expect("validated");
                    let nodes = info.face_nodes(*face);
                    let share = if f.per_node { 1.0 } else { 1.0 / nodes.len() as f64 };
                    for b in nodes {
                        let off = model.bodies[b].v_offset;
                        for k in 0..3 {
                            entries.push((off + k, f.force[k] * share));
                        }
                    }
                }
            }
            forces.push(ScheduledForce { start: f.start, end: f.end.unwrap_or(f64::INFINITY), entries });
        }

        let kv = self.kv(&model);
        let stab = StabilizationParams {
            beta: self.contact.beta,
            restitution: self.contact.restitution,
            rest_threshold: self.contact.rest_threshold,
            dt: self.step_size,
        };
        Ok(Scene {
            steps: self.step_count()?,
            model,
            state,
            geometry,
            forces,
            tracked,
            lattices,
            kv,
            stab,
            solver: self.solver.to_config(),
        })
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, SimError> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    Scenario::from_json(&text).map_err(|e| match e {
        SimError::Parse(m) => SimError::Parse(format!("{}: {m}", path.display())),
        SimError::Validation(m) => SimError::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledForce {
    pub start: f64,
    pub end: f64,
    /// `(velocity index, value)`
    pub entries: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeInfo {
    pub name: String,
    pub first: usize,
    pub dims: [usize; 3],
}

impl LatticeInfo {
    pub fn node(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.dims;
        self.first + i + nx * (j + ny * k)
    }

    pub fn face_nodes(&self, face: Face) -> Vec<usize> {
        let [nx, ny, nz] = self.dims;
        let mut out = Vec::new();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let keep = match face {
                        Face::All => true,
                        Face::Top => k + 1 == nz,
                        Face::Bottom => k == 0,
                        Face::PosX => i + 1 == nx,
                        Face::NegX => i == 0,
                        Face::PosY => j + 1 == ny,
                        Face::NegY => j == 0,
                    };
                    if keep {
                        out.push(self.node(i, j, k));
                    }
                }
            }
        }
        out
    }
}

/// A built scenario ready to simulate.
#[derive(Debug, Clone)]
pub struct Scene {
    pub model: Model,
    pub state: SystemState,
    pub geometry: Geometry,
    pub forces: Vec<ScheduledForce>,
    /// Named bodies (not lattice nodes), in file order.
    pub tracked: Vec<(String, usize)>,
    pub lattices: Vec<LatticeInfo>,
    pub kv: f64,
    pub stab: StabilizationParams,
    pub solver: SolverConfig,
    pub steps: usize,
}

impl Scene {
    /// External forces active at time `time`, gravity excluded.
    pub fn external_force(&self, time: f64) -> Vec<f64> {
        let mut f = vec![0.0; self.model.v_len()];
        for s in &self.forces {
            if time >= s.start && time < s.end {
                for &(i, x) in &s.entries {
                    f[i] += x;
                }
            }
        }
        f
    }

    pub fn body(&self, name: &str) -> Option<usize> {
        self.tracked.iter().find(|(n, _)| n == name).map(|(_, b)| *b)
    }
}
