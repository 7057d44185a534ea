//! Collision detection, contact nodalization and the augmented system.
//!
//! Every contact ends up acting on a 3-DOF node that no other contact
//! touches. Particle nodes are used directly the first time they are hit;
//! contacts on rigid surface points (and repeat hits on a particle) get a
//! massless virtual node tied to the true contact point by the viscous gain
//! `k_v`. The augmented system is
//!
//! ```text
//! [ A_o + k_v J_vᵀJ_v   −k_v J_vᵀ ] [v̂_o]   [b_o]
//! [ −k_v J_v             k_v I    ] [v̂_v] = [ 0 ]
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::{AssembledDynamics, Body, BodyKind, Model, SystemState};
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::sparse::{SparseSymmetric, TripletBuilder};

/// Default activation margin (m).
pub const DEFAULT_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Friction {
    Isotropic(f64),
    /// Coefficients along the first and second tangent of the contact frame.
    Anisotropic(f64, f64),
}

impl Friction {
    pub fn coefficients(&self) -> [f64; 2] {
        match *self {
            Friction::Isotropic(m) => [m, m],
            Friction::Anisotropic(a, b) => [a, b],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StaticShape {
    Plane { point: Vec3, normal: Vec3 },
    Sphere { center: Vec3, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticPrimitive {
    pub shape: StaticShape,
    pub friction: Friction,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Proxy {
    /// Sphere of radius `radius` centred on a particle.
    Sphere { body: usize, radius: f64, group: u32 },
    /// Points fixed in a rigid body's frame (e.g. box vertices).
    Points { body: usize, points: Vec<Vec3>, group: u32 },
}

impl Proxy {
    pub fn body(&self) -> usize {
        match self {
            Proxy::Sphere { body, .. } | Proxy::Points { body, .. } => *body,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub statics: Vec<StaticPrimitive>,
    pub proxies: Vec<Proxy>,
    pub margin: f64,
    /// Friction between dynamic bodies.
    pub dynamic_friction: Friction,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry { statics: Vec::new(), proxies: Vec::new(), margin: DEFAULT_MARGIN, dynamic_friction: Friction::Isotropic(0.0) }
    }
}

impl Geometry {
    pub fn add_plane(&mut self, point: Vec3, normal: Vec3, friction: Friction) -> Result<()> {
        let len = normal.norm();
        if !(len > 1e-12) || !len.is_finite() {
            return Err(Error::InvalidArgument("plane normal must be non-zero".into()));
        }
        self.statics.push(StaticPrimitive { shape: StaticShape::Plane { point, normal: normal.scale(1.0 / len) }, friction });
        Ok(())
    }

    pub fn add_sphere(&mut self, center: Vec3, radius: f64, friction: Friction) -> Result<()> {
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument("sphere radius must be positive".into()));
        }
        self.statics.push(StaticPrimitive { shape: StaticShape::Sphere { center, radius }, friction });
        Ok(())
    }

    /// Checks proxies against the model's body kinds.
    pub fn validate(&self, model: &Model) -> Result<()> {
        for p in &self.proxies {
            let b = model.bodies.get(p.body()).ok_or_else(|| Error::InvalidArgument("proxy body out of range".into()))?;
            match p {
                Proxy::Sphere { radius, .. } => {
                    if !b.is_particle() || !(*radius >= 0.0) {
                        return Err(Error::InvalidArgument("sphere proxies need a particle and radius >= 0".into()));
                    }
                }
                Proxy::Points { .. } => {
                    if b.is_particle() {
                        return Err(Error::InvalidArgument("point-set proxies need a rigid body".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Where a contact acts on a dynamic body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Site {
    Particle(usize),
    RigidPoint { body: usize, local: Vec3 },
}

impl Site {
    pub fn body(&self) -> usize {
        match *self {
            Site::Particle(b) | Site::RigidPoint { body: b, .. } => b,
        }
    }

    /// World position of the site.
    pub fn world_point(&self, model: &Model, state: &SystemState) -> Vec3 {
        let b = &model.bodies[self.body()];
        match *self {
            Site::Particle(_) => state.position(b),
            Site::RigidPoint { local, .. } => state.position(b) + state.orientation(b).rotate(local),
        }
    }

    /// Velocity of the site under the body velocities in `v`.
    pub fn velocity(&self, model: &Model, state: &SystemState, v: &[f64]) -> Vec3 {
        let b = &model.bodies[self.body()];
        let lin = Vec3::from_slice(&v[b.v_offset..b.v_offset + 3]);
        match *self {
            Site::Particle(_) => lin,
            Site::RigidPoint { local, .. } => {
                let w = Vec3::from_slice(&v[b.v_offset + 3..b.v_offset + 6]);
                lin + w.cross(state.orientation(b).rotate(local))
            }
        }
    }
}

/// Detected contact before nodalization. `normal` points from `second`
/// (or the static primitive) toward `first`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawContact {
    pub first: Site,
    pub second: Option<Site>,
    pub point: Vec3,
    pub normal: Vec3,
    pub depth: f64,
    pub friction: Friction,
}

fn static_distance(shape: &StaticShape, p: Vec3, r: f64) -> (f64, Vec3) {
    match *shape {
        StaticShape::Plane { point, normal } => (normal.dot(p - point) - r, normal),
        StaticShape::Sphere { center, radius } => {
            let d = p - center;
            let len = d.norm();
            let n = if len > 1e-15 { d.scale(1.0 / len) } else { Vec3::new(0.0, 0.0, 1.0) };
            (len - radius - r, n)
        }
    }
}

struct Item {
    site: Site,
    center: Vec3,
    radius: f64,
    group: u32,
    sphere: bool,
}

/// All contacts with separation below the margin, in deterministic order:
/// proxy–static pairs first (proxy order, then primitive order), then
/// proxy–proxy pairs sorted by item index.
pub fn detect_contacts(state: &SystemState, model: &Model, geom: &Geometry) -> Result<Vec<RawContact>> {
    state.validate(model)?;
    geom.validate(model)?;
    let mut items = Vec::new();
    for p in &geom.proxies {
        match p {
            Proxy::Sphere { body, radius, group } => {
                let b = &model.bodies[*body];
                items.push(Item { site: Site::Particle(*body), center: state.position(b), radius: *radius, group: *group, sphere: true });
            }
            Proxy::Points { body, points, group } => {
                for &local in points {
                    let site = Site::RigidPoint { body: *body, local };
                    items.push(Item { site, center: site.world_point(model, state), radius: 0.0, group: *group, sphere: false });
                }
            }
        }
    }

    let mut out = Vec::new();
    for it in &items {
        for s in &geom.statics {
            let (sd, n) = static_distance(&s.shape, it.center, it.radius);
            if sd < geom.margin {
                out.push(RawContact {
                    first: it.site,
                    second: None,
                    point: it.center - n.scale(it.radius),
                    normal: n,
                    depth: f64::max(0.0, -sd),
                    friction: s.friction,
                });
            }
        }
    }

    // sort-and-sweep along x
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| (items[a].center.x() - items[a].radius).total_cmp(&(items[b].center.x() - items[b].radius)).then(a.cmp(&b)));
    let mut pairs = Vec::new();
    for (k, &a) in order.iter().enumerate() {
        let hi = items[a].center.x() + items[a].radius + geom.margin;
        for &b in &order[k + 1..] {
            if items[b].center.x() - items[b].radius > hi {
                break;
            }
            let (ia, ib) = (&items[a], &items[b]);
            if ia.site.body() == ib.site.body() || ia.group == ib.group || !(ia.sphere || ib.sphere) {
                continue;
            }
            pairs.push((a.min(b), a.max(b)));
        }
    }
    pairs.sort_unstable();
    for (a, b) in pairs {
        // the sphere goes first so the normal points toward its centre
        let (f, s) = if items[a].sphere { (&items[a], &items[b]) } else { (&items[b], &items[a]) };
        let d = f.center - s.center;
        let len = d.norm();
        if len <= 1e-12 {
            continue;
        }
        let sd = len - f.radius - s.radius;
        if sd < geom.margin {
            let n = d.scale(1.0 / len);
            out.push(RawContact {
                first: f.site,
                second: Some(s.site),
                point: s.center + n.scale(s.radius),
                normal: n,
                depth: f64::max(0.0, -sd),
                friction: geom.dynamic_friction,
            });
        }
    }
    Ok(out)
}

/// Rows `(n, t1, t2)`; `t1` comes from the global axis least aligned with `n`
/// (lowest index on ties).
pub fn contact_frame(normal: Vec3) -> Result<Mat3> {
    let len = normal.norm();
    if !(len > 1e-12) || !len.is_finite() {
        return Err(Error::InvalidArgument("contact normal must be non-zero".into()));
    }
    let n = normal.scale(1.0 / len);
    let mut axis = 0;
    for k in 1..3 {
        if n.0[k].abs() < n.0[axis].abs() {
            axis = k;
        }
    }
    let mut ea = Vec3::ZERO;
    ea.0[axis] = 1.0;
    let t1 = ea - n.scale(ea.dot(n));
    let t1 = t1.scale(1.0 / t1.norm());
    let t2 = n.cross(t1);
    Ok(Mat3::from_rows(n, t1, t2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizationParams {
    pub beta: f64,
    pub restitution: f64,
    pub rest_threshold: f64,
    pub dt: f64,
}

impl StabilizationParams {
    pub fn new(dt: f64) -> Self {
        StabilizationParams { beta: 0.2, restitution: 0.0, rest_threshold: 0.01, dt }
    }
}

/// `φ_n = −(β/t)·depth + e·min(0, v_n_prev)`, the second term only above the
/// rest threshold.
pub fn stabilization_term(depth: f64, v_n_prev: f64, p: &StabilizationParams) -> f64 {
    let mut phi = -(p.beta / p.dt) * depth;
    if v_n_prev.abs() > p.rest_threshold {
        phi += p.restitution * f64::min(0.0, v_n_prev);
    }
    phi
}

/// A nodalized contact. `i` and `j` are velocity offsets of 3-DOF nodes in
/// the augmented system; the contact velocity is `R(v_i − v_j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub i: usize,
    pub j: Option<usize>,
    pub frame: Mat3,
    pub mu: [f64; 2],
    pub depth: f64,
    pub phi: f64,
    pub point: Vec3,
    pub warm: [f64; 3],
}

impl Contact {
    pub fn is_dynamic(&self) -> bool {
        self.j.is_some()
    }

    /// `J_{c,m} v`
    #[inline]
    pub fn velocity(&self, v: &[f64]) -> Vec3 {
        let mut rel = Vec3::from_slice(&v[self.i..self.i + 3]);
        if let Some(j) = self.j {
            rel -= Vec3::from_slice(&v[j..j + 3]);
        }
        self.frame.mul_vec(rel)
    }

    /// `out += J_{c,m}ᵀ λ`
    #[inline]
    pub fn add_force(&self, lambda: Vec3, out: &mut [f64]) {
        let f = self.frame.tr_mul_vec(lambda);
        for k in 0..3 {
            out[self.i + k] += f.0[k];
        }
        if let Some(j) = self.j {
            for k in 0..3 {
                out[j + k] -= f.0[k];
            }
        }
    }
}

/// Massless node tied to a body point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualNode {
    /// Velocity offset of the node in the augmented system.
    pub node: usize,
    pub body: usize,
    /// Body velocity offset.
    pub body_offset: usize,
    /// World lever arm from the body origin; `None` for particles.
    pub lever: Option<Vec3>,
}

impl VirtualNode {
    /// `J_v v_o`: velocity of the tied point.
    pub fn point_velocity(&self, v: &[f64]) -> Vec3 {
        let o = self.body_offset;
        let lin = Vec3::from_slice(&v[o..o + 3]);
        match self.lever {
            None => lin,
            Some(r) => lin + Vec3::from_slice(&v[o + 3..o + 6]).cross(r),
        }
    }

    /// Non-zero entries of the 3-row block `J_v` as `(row, col, value)`.
    pub fn jacobian_entries(&self) -> Vec<(usize, usize, f64)> {
        let o = self.body_offset;
        let mut e = Vec::with_capacity(12);
        for k in 0..3 {
            e.push((k, o + k, 1.0));
        }
        if let Some(r) = self.lever {
            let s = r.skew();
            for a in 0..3 {
                for b in 0..3 {
                    if s.0[a][b] != 0.0 {
                        e.push((a, o + 3 + b, -s.0[a][b]));
                    }
                }
            }
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodalContactSet {
    pub contacts: Vec<Contact>,
    pub virtual_nodes: Vec<VirtualNode>,
    pub kv: f64,
    /// Dimension of the original system.
    pub n_orig: usize,
}

impl NodalContactSet {
    pub fn empty(n_orig: usize, kv: f64) -> Self {
        NodalContactSet { contacts: Vec::new(), virtual_nodes: Vec::new(), kv, n_orig }
    }

    pub fn n_virtual(&self) -> usize {
        self.virtual_nodes.len()
    }

    pub fn dim(&self) -> usize {
        self.n_orig + 3 * self.virtual_nodes.len()
    }

    pub fn len(&self) -> usize {
        self.contacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contacts.is_empty()
    }

    /// Extends an original-space velocity with `v̂_v = J_v v̂_o`.
    pub fn lift_velocity(&self, v_orig: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&v_orig[..self.n_orig]);
        for vn in &self.virtual_nodes {
            v.extend_from_slice(&vn.point_velocity(v_orig).0);
        }
        v
    }

    /// `J_c v`, three entries per contact.
    pub fn apply_jc(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.contacts.len());
        for c in &self.contacts {
            out.extend_from_slice(&c.velocity(v).0);
        }
        out
    }

    /// `out += J_cᵀ λ`
    pub fn add_jct(&self, lambda: &[f64], out: &mut [f64]) {
        for (m, c) in self.contacts.iter().enumerate() {
            c.add_force(Vec3::from_slice(&lambda[3 * m..3 * m + 3]), out);
        }
    }

    /// Explicit `J_c` as `(row, col, value)` triplets.
    pub fn jc_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::new();
        for (m, c) in self.contacts.iter().enumerate() {
            for r in 0..3 {
                for k in 0..3 {
                    let x = c.frame.0[r][k];
                    if x != 0.0 {
                        t.push((3 * m + r, c.i + k, x));
                        if let Some(j) = c.j {
                            t.push((3 * m + r, j + k, -x));
                        }
                    }
                }
            }
        }
        t
    }

    pub fn warm_impulses(&self) -> Vec<f64> {
        self.contacts.iter().flat_map(|c| c.warm).collect()
    }

    /// Largest penetration depth among the contacts.
    pub fn max_depth(&self) -> f64 {
        self.contacts.iter().fold(0.0, |a, c| f64::max(a, c.depth))
    }
}

/// Turns raw contacts into node contacts, spawning virtual nodes where the
/// contact point is not a free original node.
pub fn nodalize(
    raw: &[RawContact],
    state: &SystemState,
    model: &Model,
    kv: f64,
    stab: &StabilizationParams,
) -> Result<NodalContactSet> {
    if !(kv > 0.0) || !kv.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!("k_v must be positive, got {kv}")));
    }
    let n_orig = model.v_len();
    let mut set = NodalContactSet::empty(n_orig, kv);
    let mut used = vec![false; model.bodies.len()];

    let mut node_for = |site: &Site, point: Vec3, set: &mut NodalContactSet| -> usize {
        let body: &Body = &model.bodies[site.body()];
        let lever = match (site, body.kind) {
            (Site::Particle(bi), BodyKind::Particle) => {
                if !used[*bi] {
                    used[*bi] = true;
                    return body.v_offset;
                }
                None
            }
            _ => Some(point - state.position(body)),
        };
        let node = n_orig + 3 * set.virtual_nodes.len();
        set.virtual_nodes.push(VirtualNode { node, body: site.body(), body_offset: body.v_offset, lever });
        node
    };

    for rc in raw {
        let frame = contact_frame(rc.normal)?;
        let pi = match rc.first {
            Site::RigidPoint { .. } => rc.first.world_point(model, state),
            Site::Particle(_) => rc.point,
        };
        let i = node_for(&rc.first, pi, &mut set);
        let j = match rc.second {
            None => None,
            Some(s) => {
                let pj = match s {
                    Site::RigidPoint { .. } => s.world_point(model, state),
                    Site::Particle(_) => rc.point,
                };
                Some(node_for(&s, pj, &mut set))
            }
        };
        let mut vrel = rc.first.velocity(model, state, &state.v);
        if let Some(s) = rc.second {
            vrel -= s.velocity(model, state, &state.v);
        }
        let phi = stabilization_term(rc.depth, rc.normal.dot(vrel), stab);
        set.contacts.push(Contact {
            i,
            j,
            frame,
            mu: rc.friction.coefficients(),
            depth: rc.depth,
            phi,
            point: rc.point,
            warm: [0.0; 3],
        });
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDynamics {
    pub a: SparseSymmetric,
    pub b: Vec<f64>,
    pub n_orig: usize,
}

impl AugmentedDynamics {
    pub fn n(&self) -> usize {
        self.a.dim()
    }

    /// Drops the virtual-node coordinates.
    pub fn strip<'a>(&self, v: &'a [f64]) -> &'a [f64] {
        &v[..self.n_orig]
    }
}

pub fn augment_dynamics(dyn_o: &AssembledDynamics, set: &NodalContactSet) -> Result<AugmentedDynamics> {
    let n_o = dyn_o.n();
    if n_o != set.n_orig {
        return Err(Error::DimensionMismatch { expected: set.n_orig, found: n_o });
    }
    if set.virtual_nodes.is_empty() {
        return Ok(AugmentedDynamics { a: dyn_o.a.clone(), b: dyn_o.b.clone(), n_orig: n_o });
    }
    let n = set.dim();
    let kv = set.kv;
    let mut tb = TripletBuilder::with_capacity(n, dyn_o.a.nnz() + set.virtual_nodes.len() * 100);
    dyn_o.a.extend_builder(&mut tb);
    for vn in &set.virtual_nodes {
        let jv = vn.jacobian_entries();
        for &(r1, c1, x1) in &jv {
            for &(r2, c2, x2) in &jv {
                if r1 == r2 {
                    tb.push(c1, c2, kv * x1 * x2);
                }
            }
            tb.push_sym(vn.node + r1, c1, -kv * x1);
        }
        for k in 0..3 {
            tb.push(vn.node + k, vn.node + k, kv);
        }
    }
    let mut b = dyn_o.b.clone();
    b.resize(n, 0.0);
    Ok(AugmentedDynamics { a: tb.build()?, b, n_orig: n_o })
}
