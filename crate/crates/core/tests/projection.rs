//! Invariants of Gram–Schmidt and the complement projection over random inputs.

use ogpsa::linalg::{gram_schmidt, project_complement, ParamVector, Threshold};
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `m` candidates of length `d` plus a gradient, all entries in [-10, 10].
fn problem() -> impl Strategy<Value = (Vec<ParamVector>, ParamVector)> {
    (1usize..40, 0usize..8).prop_flat_map(|(d, m)| {
        (
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), m),
            prop::collection::vec(-10.0f64..10.0, d),
        )
            .prop_map(|(c, g)| {
                (
                    c.into_iter().map(|v| ParamVector::new(v).unwrap()).collect(),
                    ParamVector::new(g).unwrap(),
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn basis_is_orthonormal_and_no_larger_than_the_space((cands, _g) in problem()) {
        let b = gram_schmidt(&cands, Threshold::default().resolve(&cands), 0.0).unwrap();
        prop_assert!(b.rank() <= cands.len().min(cands.first().map_or(0, |c| c.len())));
        prop_assert!(b.orthonormality_error() <= 1e-10);
    }

    #[test]
    fn projection_is_orthogonal_idempotent_and_contracting((cands, g) in problem()) {
        let b = gram_schmidt(&cands, Threshold::default().resolve(&cands), 0.0).unwrap();
        let gt = project_complement(&g, &b).unwrap();
        let gn = g.norm();
        for u in b.columns() {
            prop_assert!(dot(gt.as_slice(), u.as_slice()).abs() <= 1e-8 * gn.max(f64::MIN_POSITIVE));
        }
        prop_assert!(gt.norm() <= gn * (1.0 + 1e-15));
        let twice = project_complement(&gt, &b).unwrap();
        prop_assert!(twice.max_abs_diff(&gt).unwrap() <= 1e-12 * gn.max(1.0));
        let along: f64 = b.columns().iter().map(|u| dot(g.as_slice(), u.as_slice()).powi(2)).sum();
        if gn > 0.0 {
            prop_assert!((gn * gn - gt.norm().powi(2) - along).abs() <= 1e-9 * gn * gn);
        }
    }

    #[test]
    fn vectors_in_the_span_project_to_zero((cands, _g) in problem(), w in prop::collection::vec(-3.0f64..3.0, 8)) {
        prop_assume!(!cands.is_empty());
        let b = gram_schmidt(&cands, Threshold::default().resolve(&cands), 0.0).unwrap();
        let mut v = ParamVector::zeros(cands[0].len());
        for (c, wi) in cands.iter().zip(&w) {
            v = v.add_scaled(*wi, c).unwrap();
        }
        let scale = cands.iter().map(|c| c.norm()).fold(0.0, f64::max) * 3.0 * cands.len() as f64;
        let r = project_complement(&v, &b).unwrap();
        // Candidates dropped by δ leave a residual of at most δ·(their weight).
        prop_assert!(r.norm() <= 1e-5 * scale.max(1.0), "residual {}", r.norm());
    }

    #[test]
    fn duplicated_candidates_do_not_add_rank((cands, _g) in problem()) {
        let b = gram_schmidt(&cands, Threshold::default().resolve(&cands), 0.0).unwrap();
        let doubled: Vec<ParamVector> = cands.iter().chain(cands.iter()).cloned().collect();
        let b2 = gram_schmidt(&doubled, Threshold::default().resolve(&doubled), 0.0).unwrap();
        prop_assert_eq!(b.rank(), b2.rank());
    }
}

#[test]
fn threshold_text_round_trips() {
    for t in [Threshold::Absolute(1e-6), Threshold::Relative(2.5e-7)] {
        assert_eq!(t.to_string().parse::<Threshold>().unwrap(), t);
    }
    assert!("rel:-1".parse::<Threshold>().is_err());
    assert!("abc".parse::<Threshold>().is_err());
}
