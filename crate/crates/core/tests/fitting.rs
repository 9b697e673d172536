use formula_distill_core::constopt::{fit_constants, score_at, FitConfig};
use formula_distill_core::expr::parse_preorder_str;
use formula_distill_core::registry::Registry;

fn recovers(name: &str, skeleton: &[&str], truth: &[f64]) -> usize {
    let reg = Registry::builtin();
    let entry = reg.lookup(name).unwrap();
    let tree = parse_preorder_str(skeleton).unwrap();
    let mut ok = 0;
    for seed in 0..10 {
        let pts = entry.sample_default(seed).unwrap();
        assert_eq!(pts.len(), 100);
        let fit = fit_constants(&tree, pts.x.view(), &pts.y, &FitConfig { seed, ..FitConfig::default() }).unwrap();
        let close = fit.constants.iter().zip(truth).all(|(c, t)| (c - t).abs() < 1e-2);
        if close && fit.r2 > 0.999 {
            ok += 1;
        }
    }
    ok
}

#[test]
fn constant_one_cubic() {
    let skel = ["+", "+", "*", "C", "*", "x1", "*", "x1", "x1", "*", "C", "*", "x1", "x1", "*", "C", "x1"];
    assert!(recovers("Constant-1", &skel, &[3.39, 2.12, 1.78]) >= 9);
}

#[test]
fn constant_five_sqrt() {
    assert!(recovers("Constant-5", &["sqrt", "*", "C", "x1"], &[1.23]) >= 9);
}

#[test]
fn score_matches_fit_and_flags_domain_errors() {
    let reg = Registry::builtin();
    let pts = reg.lookup("Constant-5").unwrap().sample_default(3).unwrap();
    let tree = parse_preorder_str(&["sqrt", "*", "C", "x1"]).unwrap();
    let fit = fit_constants(&tree, pts.x.view(), &pts.y, &FitConfig::default()).unwrap();
    assert_eq!(score_at(&tree, pts.x.view(), &pts.y, &fit.constants).unwrap(), fit.r2);
    assert_eq!(score_at(&tree, pts.x.view(), &pts.y, &[-1.0]).unwrap(), f64::NEG_INFINITY);
}
