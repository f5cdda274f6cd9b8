mod common;

use common::{heli, scalar};
use fdcert::autocoder::autocode;
use fdcert::checker::{check_derived, check_obligation, check_sidecar, Status};
use fdcert::model::Model;
use fdcert::numerics::Matrix;
use fdcert::sidecar::{Multipliers, Obligation, PreCondition, Sidecar, Tactic};
use fdcert::synthesis::Bundle;
use proptest::prelude::*;

const TOL: f64 = 1e-8;

fn heli_sidecar() -> Sidecar {
    let (m, b) = heli();
    let (_, side) = autocode(&Model::Detector(m.clone()), &Bundle::Detector(b.clone())).unwrap();
    Sidecar::parse(&side).unwrap()
}

fn scalar_sidecar() -> Sidecar {
    let (m, b) = scalar();
    let (_, side) = autocode(&Model::Loop(m.clone()), &Bundle::Loop(b.clone())).unwrap();
    Sidecar::parse(&side).unwrap()
}

/// Scales the claim of the `k`-th entry (obligations, then derived).
fn mutate(s: &Sidecar, k: usize, factor: f64) -> Sidecar {
    let mut s = s.clone();
    let n = s.obligations.len();
    if k < n {
        s.obligations[k].q_post = s.obligations[k].q_post.scale(factor);
    } else {
        // the derived claim is a radius; scale it like a shape
        s.derived[k - n].r_th *= factor.sqrt();
    }
    s
}

fn statuses(s: &Sidecar) -> Vec<Status> {
    check_sidecar(s, TOL)
        .verdicts
        .iter()
        .map(|v| v.status)
        .collect()
}

#[test]
fn generated_obligations_are_all_proved() {
    for s in [heli_sidecar(), scalar_sidecar()] {
        let r = check_sidecar(&s, TOL);
        assert!(r.all_proved(), "{}", r.to_text());
        assert_eq!(r.proved, s.obligations.len() + s.derived.len());
    }
    let r = check_sidecar(&scalar_sidecar(), 1e-6);
    assert!(r.all_proved());
}

#[test]
fn shrinking_one_claim_fails_exactly_that_claim() {
    for s in [heli_sidecar(), scalar_sidecar()] {
        let total = s.obligations.len() + s.derived.len();
        for k in 0..total {
            let got = statuses(&mutate(&s, k, 0.9));
            for (j, st) in got.iter().enumerate() {
                let want = if j == k {
                    Status::Failed
                } else {
                    Status::Proved
                };
                assert_eq!(*st, want, "mutating entry {k}, verdict {j}");
            }
        }
    }
}

#[test]
fn tight_claims_fail_just_below_the_tolerance() {
    // the back edges carry real slack from the certificates; every other
    // claim is an exact image and must not survive 1 - 10 tol
    let s = heli_sidecar();
    let r = check_sidecar(&s, TOL);
    let total = s.obligations.len() + s.derived.len();
    let mut tight = 0;
    for k in 0..total {
        let margin = r.verdicts[k].margin.unwrap();
        if r.verdicts[k].label.starts_with("back_edge") {
            continue;
        }
        assert!(margin.abs() <= TOL, "entry {k} has slack {margin:e}");
        let st = statuses(&mutate(&s, k, 1.0 - 10.0 * TOL))[k];
        assert_eq!(st, Status::Failed, "entry {k}");
        tight += 1;
    }
    assert_eq!(tight, 17);
}

#[test]
fn growing_a_claim_keeps_it_proved() {
    let s = heli_sidecar();
    let total = s.obligations.len() + s.derived.len();
    for k in 0..total {
        assert!(statuses(&mutate(&s, k, 1.1))
            .iter()
            .all(|st| *st == Status::Proved));
    }
}

#[test]
fn margins_grow_with_the_claim() {
    let s = heli_sidecar();
    let total = s.obligations.len() + s.derived.len();
    for k in 0..total {
        let mut last = f64::NEG_INFINITY;
        for f in [0.5, 0.8, 0.9, 0.99, 1.0, 1.01, 1.1, 2.0] {
            let m = check_sidecar(&mutate(&s, k, f), TOL).verdicts[k]
                .margin
                .unwrap();
            // degenerate posts have null directions where the margin is rounding
            assert!(m >= last - 1e-15, "entry {k} at {f}: {m} < {last}");
            last = m;
        }
    }
}

#[test]
fn halved_multiplier_is_rejected() {
    let s = heli_sidecar();
    let k = s
        .obligations
        .iter()
        .position(|o| o.certificate.is_some())
        .unwrap();
    let mut bad = s.clone();
    let c = bad.obligations[k].certificate.as_mut().unwrap();
    c.gamma *= 0.5;
    assert_eq!(
        check_obligation(&bad.obligations[k], TOL).status,
        Status::Failed
    );
    let c = bad.obligations[k].certificate.as_mut().unwrap();
    c.gamma = 1.0 - c.alpha;
    assert_eq!(
        check_obligation(&bad.obligations[k], TOL).status,
        Status::Error
    );
}

#[test]
fn tampered_statement_is_caught() {
    let s = heli_sidecar();
    let k = s
        .obligations
        .iter()
        .position(|o| o.label == "observer_update")
        .unwrap();
    let mut bad = s.clone();
    bad.obligations[k].t[(0, 0)] *= 1.01;
    assert_ne!(
        check_obligation(&bad.obligations[k], TOL).status,
        Status::Proved
    );
    let mut bad = s.clone();
    bad.obligations[k].pre.pop();
    assert_eq!(
        check_obligation(&bad.obligations[k], TOL).status,
        Status::Error
    );
}

#[test]
fn lowered_threshold_is_rejected() {
    let s = heli_sidecar();
    let mut d = s.derived[0].clone();
    assert_eq!(check_derived(&d, TOL).status, Status::Proved);
    d.r_th *= 0.999;
    assert_eq!(check_derived(&d, TOL).status, Status::Failed);
    d.kind = "something_else".into();
    assert_eq!(check_derived(&d, TOL).status, Status::Error);
}

#[test]
fn empty_sidecar_passes() {
    let r = check_sidecar(&Sidecar::new("empty"), TOL);
    assert!(r.all_proved());
    assert_eq!(r.verdicts.len(), 0);
}

#[test]
fn duplicate_ids_are_errors() {
    let mut s = scalar_sidecar();
    let mut dup = s.obligations[0].clone();
    dup.id = s.obligations[1].id;
    s.obligations.push(dup);
    assert!(!check_sidecar(&s, TOL).all_proved());
}

fn pair_obligation(qx: Matrix, qh: Matrix, alpha: f64, gamma: f64, post_scale: f64) -> Obligation {
    let n = qx.rows();
    let names = |b: &str| (0..n).map(|i| format!("{b}[{i}]")).collect::<Vec<_>>();
    let eye = Matrix::identity(n);
    let t = Matrix::hstack(&[&eye, &eye.scale(-1.0)]).unwrap();
    let wx = gamma;
    let wh = 1.0 - alpha - gamma;
    let post = &(&qx.scale(1.0 / wx) + &qh.scale(1.0 / wh)).scale(post_scale) * &eye;
    Obligation {
        id: 1,
        label: "error_state".into(),
        behavior: None,
        tactic: Tactic::SProcedure,
        in_vars: [names("x"), names("xhat")].concat(),
        out_vars: names("e"),
        t,
        b: vec![0.0; n],
        assumptions: vec![],
        weights: None,
        certificate: Some(Multipliers { alpha, gamma }),
        post_vars: names("e"),
        q_post: post,
        pre: vec![
            PreCondition {
                vars: names("x"),
                q: qx,
            },
            PreCondition {
                vars: names("xhat"),
                q: qh,
            },
        ],
    }
}

proptest! {
    #[test]
    fn random_error_claims_flip_below_the_tolerance(
        qx in common::spd(4, 1e-3),
        qh in common::spd(4, 1e-3),
        alpha in 0.01..0.5f64,
        frac in 0.05..0.95f64,
    ) {
        prop_assume!(qx.dim() == qh.dim());
        let gamma = (1.0 - alpha) * frac;
        let exact = pair_obligation(qx.as_matrix().clone(), qh.as_matrix().clone(), alpha, gamma, 1.0);
        prop_assert_eq!(check_obligation(&exact, TOL).status, Status::Proved);
        let shrunk = pair_obligation(qx.as_matrix().clone(), qh.as_matrix().clone(), alpha, gamma, 1.0 - 10.0 * TOL);
        prop_assert_eq!(check_obligation(&shrunk, TOL).status, Status::Failed);
        let grown = pair_obligation(qx.into_matrix(), qh.into_matrix(), alpha, gamma, 1.0 + 10.0 * TOL);
        prop_assert_eq!(check_obligation(&grown, TOL).status, Status::Proved);
    }
}
