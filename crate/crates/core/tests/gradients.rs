mod common;

use common::*;
use dlmlab::objectives::ObjectiveKind;

#[test]
fn every_primitive_matches_central_differences() {
    let mut r = rng(1);
    for name in PRIMITIVES {
        for i in 0..8 {
            let (mut g, out, b) = primitive_instance(name, &mut r);
            if let Some(m) = check_graph(&mut g, out, &b) {
                panic!("{name} instance {i}: {m}");
            }
        }
    }
}

#[test]
fn random_composites_match_central_differences() {
    let mut r = rng(2);
    for i in 0..120 {
        let (mut g, out, b) = composite_instance(&mut r);
        if let Some(m) = check_graph(&mut g, out, &b) {
            panic!("composite {i}: {m}");
        }
    }
}

#[test]
fn batch_losses_match_central_differences() {
    let mut r = rng(3);
    for kind in [ObjectiveKind::Elbo, ObjectiveKind::Dlm] {
        for i in 0..60 {
            if let Some(m) = check_batch_loss(kind, &mut r) {
                panic!("instance {i}: {m}");
            }
        }
    }
}
