mod common;

use adtsat::linalg::Matrix;
use adtsat::reproduce::example_plant;
use adtsat::synth::{assemble_closed_loop, verify_certificate, FactorizationMethod, HybridController};

#[test]
fn optimal_controller_is_certified() {
    let syn = common::optimal_synthesis();
    assert!(syn.report.pass, "{:?}", syn.report);
    assert!((syn.gamma() - 0.6953).abs() / 0.6953 < 0.1);
    assert!(syn.reconstruction.p_asymmetry.iter().all(|a| *a <= 1e-9), "{:?}", syn.reconstruction.p_asymmetry);
    assert!(syn.congruence.iter().all(|c| *c <= 1e-7), "{:?}", syn.congruence);
    assert!(syn.round_trip <= 1e-8);
    assert!(common::hatted_mismatch(syn, &example_plant()) <= 1e-8);
    for m in &syn.report.modes {
        assert!(m.dissipation_lambda_max < 0.0 && m.p_lambda_min > 0.0);
    }
}

#[test]
fn inflated_reset_fails_boundary_check() {
    let syn = common::optimal_synthesis();
    let mut c = syn.reconstruction.controller.clone();
    for d in c.resets.values_mut() {
        *d *= 1e6;
    }
    let rep = verify_certificate(&c, &example_plant(), &syn.spec).unwrap();
    assert!(!rep.pass);
    assert!(rep.boundaries.iter().all(|b| b.lambda_min < -syn.spec.delta));
    assert!(rep.modes.iter().all(|m| m.dissipation_lambda_max < 0.0));
}

#[test]
fn gamma_below_optimum_fails_dissipation() {
    let syn = common::optimal_synthesis();
    let mut c = syn.reconstruction.controller.clone();
    c.gamma /= 10.0;
    let rep = verify_certificate(&c, &example_plant(), &syn.spec).unwrap();
    assert!(!rep.pass);
    assert!(rep.modes.iter().any(|m| m.dissipation_lambda_max >= 0.0));
}

fn closed_loop_spectra(c: &HybridController) -> Vec<Vec<(f64, f64)>> {
    let plant = example_plant();
    c.modes
        .iter()
        .zip(plant.modes())
        .map(|(k, p)| {
            let a: Matrix = assemble_closed_loop(p, k).unwrap().a;
            let mut ev: Vec<(f64, f64)> = a.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect();
            ev.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
            ev
        })
        .collect()
}

#[test]
fn factorization_choice_preserves_invariants() {
    let a = common::relaxed_synthesis(FactorizationMethod::BalancedSvd);
    let b = common::relaxed_synthesis(FactorizationMethod::Identity);
    assert!(a.report.pass && b.report.pass);
    assert_eq!(a.gamma(), b.gamma());
    for (x, y) in a.report.inclusions.iter().zip(&b.report.inclusions) {
        assert!((x.slack - y.slack).abs() <= 1e-6 * (1.0 + x.slack.abs()), "{x:?} vs {y:?}");
    }
    // The two controllers differ by a state similarity, so closed-loop
    // spectra coincide while the gains do not.
    let (sa, sb) = (closed_loop_spectra(&a.reconstruction.controller), closed_loop_spectra(&b.reconstruction.controller));
    for (ma, mb) in sa.iter().zip(&sb) {
        for (p, q) in ma.iter().zip(mb) {
            let scale = 1.0 + p.0.hypot(p.1);
            assert!((p.0 - q.0).abs() <= 1e-6 * scale && (p.1 - q.1).abs() <= 1e-6 * scale, "{p:?} vs {q:?}");
        }
    }
    let ga = &a.reconstruction.controller.modes[0].a_k;
    let gb = &b.reconstruction.controller.modes[0].a_k;
    assert!((ga - gb).norm() > 1e-6 * ga.norm());
}

#[test]
fn synthesized_controller_file_round_trips() {
    let c = &common::optimal_synthesis().reconstruction.controller;
    let text = serde_json::to_string(c).unwrap();
    let back: HybridController = serde_json::from_str(&text).unwrap();
    assert_eq!(back.resets.len(), 2);
    let rep = verify_certificate(&back, &example_plant(), &common::optimal_synthesis().spec).unwrap();
    assert!(rep.pass);
}
