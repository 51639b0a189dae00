mod common;

use common::{end_to_end_grad_check, single_precision_errors};
use lshr_core::sensing::{straight_through_grad, PatternBank, PatternMode};
use lshr_tensor::{Tape, Tensor};

#[test]
fn end_to_end_double_precision() {
    let report = end_to_end_grad_check(1);
    assert!(report.passed(), "{:?}", report.failure);
    assert_eq!(report.inputs.len(), 11);
}

#[test]
fn end_to_end_single_precision() {
    let errors = single_precision_errors(2);
    assert_eq!(errors.len(), 11);
    assert!(errors.iter().all(|&e| e < 1e-3), "{errors:?}");
}

#[test]
fn straight_through_moves_shadow_with_the_gradient_sign() {
    let shadow = Tensor::<f64>::new([1, 1, 2, 2], vec![0.3, -0.4, 0.9, -1.0]).unwrap();
    let bank = PatternBank::from_shadow(shadow, PatternMode::Learned, 0).unwrap();
    // d/dw of sum(c * binarize(w)) through the estimator is c everywhere.
    let c = Tensor::<f64>::new([1, 1, 2, 2], vec![1.5, -2.0, 0.0, 4.0]).unwrap();
    let g = straight_through_grad(&bank, &c).unwrap();
    assert_eq!(g, c);

    let mut tape = Tape::new();
    let w = tape.param(bank.shadow().clone());
    let b = tape.binarize_ste(w).unwrap();
    let cv = tape.constant(c.clone());
    let prod = tape.mul(b, cv).unwrap();
    let s = tape.sum(prod).unwrap();
    assert_eq!(tape.value(s).item().unwrap(), 1.5 + 0.0);
    let grads = tape.backward(s).unwrap();
    assert_eq!(grads.get(w).unwrap(), &c);

    let fixed = PatternBank::from_shadow(bank.shadow().clone(), PatternMode::Static, 0).unwrap();
    assert!(straight_through_grad(&fixed, &c).is_err());
}
