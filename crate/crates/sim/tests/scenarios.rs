use cond_core::contact::detect_contacts;
use cond_core::dynamics::kinetic_energy;
use cond_sim::scenario::{BodySpec, ContactPoints, FrictionSpec, StaticSpec};
use cond_sim::verify::bundled;
use cond_sim::{run, RunConfig, SolverKind};

fn cond_run(name: &str, steps: Option<usize>) -> cond_sim::RunResult {
    let scene = bundled(name).build().unwrap();
    let mut cfg = RunConfig::for_scene(SolverKind::Cond, &scene);
    cfg.max_steps = steps;
    run(&scene, &cfg).unwrap()
}

#[test]
fn free_fall_is_ballistic() {
    let r = cond_run("free_fall", Some(100));
    assert_eq!(r.rows.len(), 100);
    assert!(r.rows.iter().all(|row| row.contacts == 0));
    let vz = r.final_state.v[2];
    assert!((vz + 9.81).abs() <= 1e-9, "{vz}");
    let z = r.diagnostics.last().unwrap().positions[0][2];
    assert!((z - (10.0 - 0.5 * 9.81)).abs() <= 1e-9, "{z}");
}

#[test]
fn resting_particle_stays_put() {
    let r = cond_run("resting_particle", Some(100));
    assert!(r.max_penetration() <= 1e-6);
    let v = &r.final_state.v;
    assert!(v.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-6, "{v:?}");
}

#[test]
fn particle_stack_settles_within_fifty_steps() {
    let r = cond_run("particle_stack", None);
    assert_eq!(r.rows.len(), 100);
    for row in &r.rows[49..] {
        assert_eq!(row.contacts, 5);
        // all five bodies share one mass
        let speed = (2.0 * row.ke_j / 0.1).sqrt();
        assert!(speed < 1e-6, "step {}: |v| = {speed:e}", row.step);
    }
    let v = &r.final_state.v;
    assert!(v.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-6);
}

#[test]
fn box_slide_fixture_parameters() {
    let s = bundled("box_slide");
    assert_eq!(s.step_size, 0.01);
    assert_eq!(s.duration, 3.0);
    match &s.bodies[..] {
        [BodySpec::Box { mass, size, contact_points, .. }] => {
            assert_eq!(*mass, 0.5);
            assert_eq!(*size, [0.2; 3]);
            assert_eq!(*contact_points, ContactPoints::Bottom);
        }
        other => panic!("unexpected bodies {other:?}"),
    }
    match &s.statics[..] {
        [StaticSpec::Plane { friction, .. }] => assert_eq!(*friction, FrictionSpec::Isotropic(0.2)),
        other => panic!("unexpected statics {other:?}"),
    }
    assert_eq!(s.forces.len(), 1);
    assert_eq!(s.forces[0].force, [0.0, 2.0, 0.0]);
    let scene = s.build().unwrap();
    let contacts = detect_contacts(&scene.state, &scene.model, &scene.geometry).unwrap();
    assert_eq!(contacts.len(), 4);
}

#[test]
fn box_slide_follows_oracle() {
    let err = cond_sim::verify::box_slide_error(1e5).unwrap();
    assert!(err < 1e-5, "{err:e}");
}

#[test]
fn every_converged_step_is_consistent() {
    for (name, _) in cond_sim::verify::BUNDLED {
        let scene = bundled(name).build().unwrap();
        let cfg = RunConfig::for_scene(SolverKind::Cond, &scene);
        let r = run(&scene, &cfg).unwrap();
        assert_eq!(r.diverged_steps, 0, "{name}");
        for d in r.diagnostics.iter().filter(|d| d.converged) {
            assert!(d.consistency <= 10.0 * cfg.cond.theta_th, "{name}: {:e}", d.consistency);
        }
    }
}

#[test]
fn baselines_run_the_stack() {
    for kind in [SolverKind::Pgs, SolverKind::Apgd] {
        let scene = bundled("particle_stack").build().unwrap();
        let mut cfg = RunConfig::for_scene(SolverKind::Cond, &scene);
        cfg.solver = kind;
        cfg.max_steps = Some(20);
        let r = run(&scene, &cfg).unwrap();
        assert_eq!(r.diverged_steps, 0);
        assert!(r.rows.iter().all(|row| row.contacts == 5));
        assert!(r.max_penetration() < 1e-3, "{}: {:e}", kind.name(), r.max_penetration());
    }
}

#[test]
fn lattice_drag_moves_forward() {
    let scene = bundled("lattice_drag").build().unwrap();
    let r = cond_run("lattice_drag", Some(20));
    assert!(kinetic_energy(&r.final_state, &scene.model) > 0.0);
    let mean_x = |v: &[f64]| (0..v.len() / 3).map(|k| v[3 * k]).sum::<f64>() / (v.len() / 3) as f64;
    assert!(mean_x(&r.final_state.q) > mean_x(&scene.state.q));
}

#[test]
fn fixed_oversized_step_diverges_and_continues() {
    let s = cond_sim::Scenario::from_json(
        r#"{"step_size": 0.01, "duration": 0.05, "solver": {"fixed_step": 10.0},
            "lattices": [{"name": "m", "dims": [3, 3, 2], "spacing": 0.1, "origin": [0, 0, 0], "node_mass": 0.1, "stiffness": 100.0}],
            "statics": [{"type": "plane", "point": [0, 0, 0], "normal": [0, 0, 1], "friction": 0.5}]}"#,
    )
    .unwrap();
    let scene = s.build().unwrap();
    let r = run(&scene, &RunConfig::for_scene(SolverKind::Cond, &scene)).unwrap();
    assert_eq!(r.rows.len(), 5);
    assert_eq!(r.diverged_steps, 5);
    assert!(r.diagnostics.iter().all(|d| d.diverged && d.lambda.iter().all(|&l| l == 0.0)));
    assert!(r.final_state.v.iter().all(|x| x.is_finite()));
}
