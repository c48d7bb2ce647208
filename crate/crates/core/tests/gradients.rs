mod common;

use common::*;
use stseg_core::gradcheck::{grad_check, suite, EPS, SUITE_TOLERANCE};
use stseg_core::{Tape, Tensor, Var};

#[test]
fn primitive_and_temporal_suite_passes() {
    let cases = suite(0);
    assert!(cases.iter().filter(|c| !c.negative_control).count() >= 12 + 3);
    for case in &cases {
        let err = case.report.as_ref().map(|r| r.max_rel_error);
        println!("{:<24} {:?}", case.name, err);
        assert!(case.passed(), "{}: {:?}", case.name, case.report);
    }
}

#[test]
fn suite_holds_across_seeds() {
    for seed in 1..3 {
        for case in suite(seed) {
            assert!(case.passed(), "seed {seed} {}: {:?}", case.name, case.report);
        }
    }
}

#[test]
fn linear_map_error_is_tiny() {
    let mut r = rng(1);
    let (a, x) = (randn(&mut r, &[3, 4]), randn(&mut r, &[4, 1]));
    let rep = grad_check(&[a, x], |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.matmul(v[0], v[1])?;
        Ok(t.sum(y))
    }, EPS, 0)
    .unwrap();
    assert!(rep.max_rel_error < 1e-8, "{rep:?}");
}

#[test]
fn conv2d_error_below_1e6() {
    let mut r = rng(2);
    let inputs = [randn(&mut r, &[2, 3, 5, 5]), randn(&mut r, &[4, 3, 3, 3]), randn(&mut r, &[4])];
    let rep = grad_check(&inputs, |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), stseg_core::ops::ConvGeom::padded(1))?;
        let y = t.mul(y, y)?;
        Ok(t.sum(y))
    }, EPS, 0)
    .unwrap();
    assert!(rep.max_rel_error < 1e-6, "{rep:?}");
}

#[test]
fn non_finite_objective_is_reported() {
    let x = Tensor::new(&[2], vec![f64::INFINITY, 1.0]).unwrap();
    let res = grad_check(&[x], |t: &mut Tape<f64>, v: &[Var]| Ok(t.sum(v[0])), EPS, 0);
    assert!(matches!(res, Err(stseg_core::Error::NonFinite(_))));
}

#[test]
fn product_and_chain_rules() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::new(&[1], vec![3.0]).unwrap());
    let y = tape.input(Tensor::new(&[1], vec![-2.0]).unwrap());
    let xy = tape.mul(x, y).unwrap();
    let s = tape.tanh(xy);
    let loss = tape.sum(s);
    tape.backward(loss).unwrap();
    let d = 1.0 - (-6.0f64).tanh().powi(2);
    assert_eq!(tape.grad(x).unwrap()[0], d * -2.0);
    assert_eq!(tape.grad(y).unwrap()[0], d * 3.0);
}

#[test]
fn gradients_accumulate_over_reuse() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::new(&[2], vec![1.5, -0.5]).unwrap());
    let a = tape.add(x, x).unwrap();
    let b = tape.mul(a, x).unwrap();
    let loss = tape.sum(b);
    tape.backward(loss).unwrap();
    // d(2x²)/dx = 4x
    assert_eq!(tape.grad(x).unwrap(), &[6.0, -2.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::zeros(&[2, 2]));
    assert!(matches!(tape.backward(x), Err(stseg_core::Error::Contract(_))));
}

#[test]
fn backward_is_deterministic() {
    let mut r = rng(3);
    let inputs = [randn(&mut r, &[2, 3, 6, 6]), randn(&mut r, &[4, 3, 3, 3])];
    let run = || {
        let mut tape = Tape::new();
        let x = tape.input(inputs[0].clone());
        let w = tape.input(inputs[1].clone());
        let y = tape.conv2d(x, w, None, stseg_core::ops::ConvGeom::padded(1)).unwrap();
        let y = tape.sigmoid(y);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        (tape.grad(x).unwrap().to_vec(), tape.grad(w).unwrap().to_vec())
    };
    let (a, b) = (run(), run());
    assert!(a.0.iter().zip(&b.0).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert!(a.1.iter().zip(&b.1).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn suite_tolerance_is_pinned() {
    assert_eq!(SUITE_TOLERANCE, 1e-4);
    assert_eq!(EPS, 1e-4);
}
