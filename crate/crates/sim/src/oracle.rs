//! Closed-form and brute-force reference trajectories for the sliding-box
//! scenarios, discretized with the same midpoint rule as the integrator.

use crate::error::SimError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSlideParams {
    pub mass: f64,
    pub mu: f64,
    /// Tangential force along +y (N), applied at the centre of mass.
    pub force: f64,
    /// Gravity magnitude (m/s²).
    pub gravity: f64,
    pub duration: f64,
    pub step: f64,
    pub y0: f64,
    /// Half the box footprint along y and the height of the centre of mass,
    /// used to reject tipping.
    pub half_width: f64,
    pub com_height: f64,
}

/// `y` after each step.
pub fn analytic_box_slide(p: &BoxSlideParams) -> Result<Vec<f64>, SimError> {
    for (v, name) in [(p.mass, "mass"), (p.step, "step"), (p.half_width, "half_width")] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(SimError::Validation(format!("{name} must be positive")));
        }
    }
    if !(p.mu >= 0.0) || !(p.duration >= 0.0) || !(p.com_height >= 0.0) || !p.force.is_finite() {
        return Err(SimError::Validation("box-slide parameters out of range".into()));
    }
    if !(p.gravity > 0.0) {
        return Err(SimError::Unsupported("no normal load: the box lifts off".into()));
    }
    let weight = p.mass * p.gravity;
    if p.force.abs() * p.com_height > weight * p.half_width {
        return Err(SimError::Unsupported("applied force tips the box over".into()));
    }
    let steps = (p.duration / p.step).round() as usize;
    let friction = p.mu * weight;
    if p.force.abs() <= friction {
        return Ok(vec![p.y0; steps]);
    }
    let a = (p.force - friction * p.force.signum()) / p.mass;
    let (mut y, mut v) = (p.y0, 0.0);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let vh = v + 0.5 * a * p.step;
        y += p.step * vh;
        v = 2.0 * vh - v;
        out.push(y);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdpSlideParams {
    pub mass: f64,
    /// Friction coefficients along x and y.
    pub mu: [f64; 2],
    pub gravity: f64,
    pub v0: [f64; 2],
    pub p0: [f64; 2],
    pub step: f64,
    pub steps: usize,
    /// Boundary samples of the friction ellipse.
    pub samples: usize,
}

/// Force in the ellipse `(f₁/a)² + (f₂/b)² ≤ 1` closest to `target`, by
/// exhaustive boundary sampling.
pub fn sampled_ellipse_projection(target: [f64; 2], a: f64, b: f64, samples: usize) -> [f64; 2] {
    if a <= 0.0 || b <= 0.0 {
        return [0.0, 0.0];
    }
    if (target[0] / a).powi(2) + (target[1] / b).powi(2) <= 1.0 {
        return target;
    }
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for i in 0..samples {
        let th = std::f64::consts::TAU * i as f64 / samples as f64;
        let f = [a * th.cos(), b * th.sin()];
        let d = (f[0] - target[0]).powi(2) + (f[1] - target[1]).powi(2);
        if d < best.0 {
            best = (d, f);
        }
    }
    best.1
}

/// Point-mass slide on a horizontal plane with an anisotropic friction
/// ellipse. Each step picks the friction force maximizing dissipation at the
/// midpoint velocity. Returns positions after each step.
pub fn mdp_slide(p: &MdpSlideParams) -> Vec<[f64; 2]> {
    let c = p.step / (2.0 * p.mass);
    let n = p.mass * p.gravity;
    let (mut x, mut v) = (p.p0, p.v0);
    let mut out = Vec::with_capacity(p.steps);
    for _ in 0..p.steps {
        let f = sampled_ellipse_projection([-v[0] / c, -v[1] / c], p.mu[0] * n, p.mu[1] * n, p.samples);
        for k in 0..2 {
            let vh = v[k] + c * f[k];
            x[k] += p.step * vh;
            v[k] = 2.0 * vh - v[k];
        }
        out.push(x);
    }
    out
}
