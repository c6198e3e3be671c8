mod common;

use std::time::Duration;

use occlusion_core::naive::{
    build_naive, emit_smtlib, eval_constraints, solve_external, solver_from_env, SolverAnswer,
};
use occlusion_core::occlusion::{enumerate_integer_placements, occlude, OcclusionSpec, PositionMode};
use occlusion_core::onn::PositionRegion;
use occlusion_core::Error;

/// Placements whose occluded image lets some other label tie or beat `q`.
fn satisfying(inst: &common::Instance) -> Vec<(f64, f64, bool)> {
    let q = inst.f.classify(inst.x.as_slice()).unwrap();
    enumerate_integer_placements(inst.x.height(), inst.x.width())
        .into_iter()
        .map(|p| {
            let y = inst
                .f
                .forward(occlude(&inst.x, &inst.spec, &p).unwrap().as_slice())
                .unwrap();
            let hit = (0..y.len()).any(|l| l != q.0 && y[l] >= y[q.0]);
            (p.a, p.b, hit)
        })
        .collect()
}

#[test]
fn constraints_hold_exactly_at_violating_placements() {
    for seed in 0..20 {
        let inst = common::tiny_instance(seed);
        let (m, n) = (inst.x.height(), inst.x.width());
        let q = inst.f.classify(inst.x.as_slice()).unwrap();
        let enc = build_naive(&inst.x, &inst.f, &inst.spec, &PositionRegion::full(m, n), q).unwrap();
        assert_eq!(enc.pixel_disjunctions(), m * n);
        assert_eq!(enc.label_disjuncts(), inst.f.output_dim() - 1);
        for (a, b, hit) in satisfying(&inst) {
            let occluded = occlude(&inst.x, &inst.spec, &occlusion_core::occlusion::Placement::at(a, b)).unwrap();
            let assignment = enc.assignment(&inst.f, &occluded, a, b).unwrap();
            assert_eq!(
                eval_constraints(&enc, &assignment).unwrap(),
                hit,
                "seed {seed} at ({a}, {b})"
            );
        }
    }
}

#[test]
fn wrong_images_break_the_pixel_constraints() {
    let inst = common::tiny_instance(4);
    let (m, n) = (inst.x.height(), inst.x.width());
    let q = inst.f.classify(inst.x.as_slice()).unwrap();
    let enc = build_naive(&inst.x, &inst.f, &inst.spec, &PositionRegion::full(m, n), q).unwrap();
    // Pixel (1, 1) sits under the occlusion and must carry its color.
    let p = occlusion_core::occlusion::Placement::at(1.0, 1.0);
    let occluded = occlude(&inst.x, &inst.spec, &p).unwrap();
    let mut data = occluded.as_slice().to_vec();
    data[0] = (data[0] + 0.25) % 1.0;
    let tampered = occlusion_core::image::Image::new(m, n, 1, data).unwrap();
    let assignment = enc.assignment(&inst.f, &tampered, 1.0, 1.0).unwrap();
    assert!(!eval_constraints(&enc, &assignment).unwrap());
}

#[test]
fn missing_variables_are_reported() {
    let inst = common::tiny_instance(1);
    let (m, n) = (inst.x.height(), inst.x.width());
    let q = inst.f.classify(inst.x.as_slice()).unwrap();
    let enc = build_naive(&inst.x, &inst.f, &inst.spec, &PositionRegion::full(m, n), q).unwrap();
    let err = eval_constraints(&enc, &Default::default()).unwrap_err();
    assert!(matches!(err, Error::IncompleteAssignment(_)), "{err}");
}

#[test]
fn only_uniform_integer_occlusions_are_encoded() {
    let inst = common::tiny_instance(2);
    let (m, n) = (inst.x.height(), inst.x.width());
    let q = inst.f.classify(inst.x.as_slice()).unwrap();
    let full = PositionRegion::full(m, n);
    let multi = OcclusionSpec::multiform(1, 1, 0.1, PositionMode::Integer);
    assert!(matches!(
        build_naive(&inst.x, &inst.f, &multi, &full, q),
        Err(Error::Unsupported(_))
    ));
    let real = OcclusionSpec::uniform(1, 1, 0.0, PositionMode::Real);
    assert!(matches!(
        build_naive(&inst.x, &inst.f, &real, &full, q),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn smtlib_text_declares_each_variable_once() {
    let inst = common::tiny_instance(3);
    let (m, n) = (inst.x.height(), inst.x.width());
    let q = inst.f.classify(inst.x.as_slice()).unwrap();
    let enc = build_naive(&inst.x, &inst.f, &inst.spec, &PositionRegion::full(m, n), q).unwrap();
    let text = emit_smtlib(&enc);
    for name in enc.variables() {
        let decl = format!("(declare-fun {name} () Real)");
        assert_eq!(text.matches(&decl).count(), 1, "{name}");
    }
    assert!(text.contains("(check-sat)"));
    assert_eq!(text, emit_smtlib(&enc));
    let opens = text.matches('(').count();
    assert_eq!(opens, text.matches(')').count());
}

#[test]
fn external_solver_agrees_with_enumeration() {
    let Some(solver) = solver_from_env() else {
        eprintln!("OCC_SMT_SOLVER not set; skipping the external solver comparison");
        return;
    };
    for seed in 0..8 {
        let inst = common::tiny_instance(seed);
        let (m, n) = (inst.x.height(), inst.x.width());
        let q = inst.f.classify(inst.x.as_slice()).unwrap();
        let enc = build_naive(&inst.x, &inst.f, &inst.spec, &PositionRegion::full(m, n), q).unwrap();
        let truth = satisfying(&inst).iter().any(|t| t.2);
        match solve_external(&enc, &solver, Some(Duration::from_secs(120))).unwrap() {
            SolverAnswer::Sat { model } => {
                assert!(truth, "seed {seed}: solver found a model enumeration missed");
                let (a, b) = (model["a"], model["b"]);
                assert_eq!((a.fract(), b.fract()), (0.0, 0.0));
                let p = occlusion_core::occlusion::Placement::at(a, b);
                let y = inst
                    .f
                    .forward(occlude(&inst.x, &inst.spec, &p).unwrap().as_slice())
                    .unwrap();
                assert!((0..y.len()).any(|l| l != q.0 && y[l] >= y[q.0] - 1e-6), "seed {seed}");
            }
            SolverAnswer::Unsat => assert!(!truth, "seed {seed}: solver missed a violation"),
            other => panic!("seed {seed}: {other:?}"),
        }
    }
}
