use std::time::Instant;

use tnlayers::autodiff::AdjointFault;
use tnlayers::nn::HeadKind;
use tnlayers::verify;

#[test]
fn primitive_gradchecks_pass() {
    for r in verify::gradcheck_primitives(3, None) {
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn model_gradchecks_pass_for_every_head() {
    for head in HeadKind::ALL {
        let t = Instant::now();
        let r = verify::gradcheck_model(head, 1, None);
        eprintln!("{} {:.2e} {} in {:?}", r.name, r.max_error, r.detail, t.elapsed());
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn wrong_adjoint_is_caught() {
    let prim = verify::gradcheck_primitives(3, Some(AdjointFault::ContractLhsTwice));
    assert!(!prim.iter().find(|r| r.name == "gradcheck_contract").unwrap().passed);
    assert!(!verify::gradcheck_model(HeadKind::Mera, 1, Some(AdjointFault::ContractLhsTwice)).passed);
}

#[test]
fn oracle_and_structure_suites_pass() {
    let t = Instant::now();
    for r in verify::oracle_equivalence(5, 100) {
        eprintln!("{} {:.2e} over {}", r.name, r.max_error, r.checked);
        assert!(r.passed, "{r:?}");
    }
    eprintln!("oracle suite {:?}", t.elapsed());
    assert!(verify::identity_reduction(2).passed);
    for r in verify::counts() {
        assert!(r.passed, "{r:?}");
    }
}
