//! Randomized invariants of the sparse kernels, contact operators and
//! baseline solvers.

use cond_core::baseline::{assemble_delassus, solve_apgd, BaselineConfig};
use cond_core::contact::{contact_frame, Contact, NodalContactSet};
use cond_core::math::{dist, dot, Vec3};
use cond_core::solver::{
    contact_solve_oneshot, contact_update, project_proximal, project_strict_anisotropic, scc_residual_one, NoClock,
    Operator, StepMatrix,
};
use cond_core::sparse::{factor_spd, solve_with, SparseSymmetric, TripletBuilder};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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
        b.push(i, i, r + rng.random_range(0.1..2.0));
    }
    b.build().unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-r..r)).collect()
}

fn random_normal(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 {
            return v.scale(1.0 / v.norm());
        }
    }
}

/// One contact per pair of consecutive nodes, alternating static and dynamic.
fn contacts_on_nodes(rng: &mut ChaCha8Rng, count: usize) -> Vec<Contact> {
    (0..count)
        .map(|k| Contact {
            i: 6 * k,
            j: if k % 2 == 1 { Some(6 * k + 3) } else { None },
            frame: contact_frame(random_normal(rng)).unwrap(),
            mu: [rng.random_range(0.0..1.0); 2],
            depth: 0.0,
            phi: rng.random_range(-0.3..0.3),
            point: Vec3::ZERO,
            warm: [0.0; 3],
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spmv_is_symmetric(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(&mut rng, n, 0.2);
        let (x, y) = (random_vec(&mut rng, n, 1.0), random_vec(&mut rng, n, 1.0));
        let l = dot(&a.spmv(&x).unwrap(), &y);
        let r = dot(&a.spmv(&y).unwrap(), &x);
        prop_assert!((l - r).abs() <= 1e-10 * l.abs().max(r.abs()).max(1.0));
    }

    #[test]
    fn factor_solve_round_trip(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(&mut rng, n, 0.3);
        let x = random_vec(&mut rng, n, 1.0);
        let got = solve_with(&factor_spd(&a).unwrap(), &a.spmv(&x).unwrap()).unwrap();
        prop_assert!(dist(&got, &x) <= 1e-8 * dot(&x, &x).sqrt().max(1e-300));
    }

    #[test]
    fn row_norms_match_dense(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(&mut rng, n, 0.3);
        let d = a.to_dense();
        for (i, r) in a.row_norms_sq().iter().enumerate() {
            let oracle: f64 = (0..n).map(|j| d[i * n + j] * d[i * n + j]).sum();
            prop_assert!((r - oracle).abs() <= 1e-12 * oracle.max(1.0));
        }
    }

    /// Moreau decomposition: `x = Πx + r` with `Πx` in the cone, `r` in the
    /// polar cone and the two orthogonal.
    #[test]
    fn cone_projection_is_euclidean(l in prop::array::uniform3(-5.0f64..5.0), mu in 0.0f64..2.0) {
        let x = Vec3(l);
        let p = project_proximal(x, mu);
        let r = x - p;
        let scale = x.norm().max(1.0);
        prop_assert!(mu * p[0] - (p[1] * p[1] + p[2] * p[2]).sqrt() >= -1e-12 * scale);
        prop_assert!(p.dot(r).abs() <= 1e-12 * scale * scale);
        // polar of {μn ≥ |t|} is {−n ≥ μ|t|}
        prop_assert!(-r[0] - mu * (r[1] * r[1] + r[2] * r[2]).sqrt() >= -1e-12 * scale);
        prop_assert!((project_proximal(p, mu) - p).norm() <= 1e-12 * scale);
    }

    #[test]
    fn ellipse_projection_stays_feasible(l in prop::array::uniform3(-5.0f64..5.0), mu1 in 0.0f64..1.5, mu2 in 0.0f64..1.5) {
        let p = project_strict_anisotropic(Vec3(l), mu1, mu2).unwrap();
        prop_assert!(p[0] >= 0.0);
        let s = |x: f64, ax: f64| if ax > 0.0 { (x / ax).powi(2) } else if x == 0.0 { 0.0 } else { f64::INFINITY };
        prop_assert!(s(p[1], mu1 * p[0]) + s(p[2], mu2 * p[0]) <= 1.0 + 1e-9);
        let q = project_strict_anisotropic(p, mu1, mu2).unwrap();
        prop_assert!((q - p).norm() <= 1e-9 * p.norm().max(1.0));
    }

    #[test]
    fn strict_oneshot_satisfies_scc(seed in any::<u64>(), count in 1usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cs = contacts_on_nodes(&mut rng, count);
        let gamma: Vec<f64> = (0..count).map(|_| rng.random_range(0.01..10.0)).collect();
        let eta = random_vec(&mut rng, 3 * count, 2.0);
        let l = contact_solve_oneshot(&gamma, &eta, &cs, Operator::Strict, 0.0).unwrap();
        for (k, c) in cs.iter().enumerate() {
            let lk = Vec3::from_slice(&l[3 * k..]);
            let u = Vec3::from_slice(&eta[3 * k..]) + lk.scale(gamma[k]);
            prop_assert!(scc_residual_one(u, lk, c.phi, c.mu) <= 1e-10);
        }
    }

    #[test]
    fn proximal_normal_cone_is_monotone(
        e1 in prop::array::uniform3(-3.0f64..3.0),
        e2 in prop::array::uniform3(-3.0f64..3.0),
        gamma in 0.05f64..10.0,
        mu in 0.0f64..1.5,
        phi in -0.5f64..0.5,
    ) {
        let pair = |e: [f64; 3]| {
            let x = Vec3([-(e[0] + phi) / gamma, -e[1] / gamma, -e[2] / gamma]);
            let l = project_proximal(x, mu);
            (x - l, l)
        };
        let ((x1, l1), (x2, l2)) = (pair(e1), pair(e2));
        prop_assert!((x1 - x2).dot(l1 - l2) >= -1e-12);
    }

    #[test]
    fn contact_update_is_non_expansive(seed in any::<u64>(), count in 1usize..10, frac in 0.01f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6 * count;
        let a = random_spd(&mut rng, n, 0.2);
        let sigma = DMatrix::from_row_slice(n, n, &a.to_dense()).symmetric_eigenvalues().max();
        let w = StepMatrix::uniform(n, 2.0 * frac / sigma);
        let set = NodalContactSet { contacts: contacts_on_nodes(&mut rng, count), virtual_nodes: Vec::new(), kv: 1.0, n_orig: n };
        let (v1, v2) = (random_vec(&mut rng, n, 2.0), random_vec(&mut rng, n, 2.0));
        let (u1, _) = contact_update(&v1, &w, &set, Operator::Proximal, 0.0).unwrap();
        let (u2, _) = contact_update(&v2, &w, &set, Operator::Proximal, 0.0).unwrap();
        prop_assert!(dist(&u1, &u2) <= dist(&v1, &v2) + 1e-12);
    }

    #[test]
    fn apgd_restart_objective_does_not_increase(seed in any::<u64>(), count in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6 * count;
        let a = random_spd(&mut rng, n, 0.3);
        let mut cs = contacts_on_nodes(&mut rng, count);
        for c in &mut cs {
            c.phi = -c.phi.abs();
        }
        let set = NodalContactSet { contacts: cs, virtual_nodes: Vec::new(), kv: 1.0, n_orig: n };
        let b = random_vec(&mut rng, n, 1.0);
        let p = assemble_delassus(&a, &set, &b, &NoClock).unwrap();
        let cfg = BaselineConfig { operator: Operator::Proximal, theta_th: 1e-12, max_iter: 2000 };
        let (_, rep) = solve_apgd(&p, &cfg, None, &NoClock).unwrap();
        for w in rep.restarts.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
    }
}
