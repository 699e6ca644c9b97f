mod common;

use common::{brute_force, random_case};
use litefew_core::eval::{det_sweep, frr_at_fa};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn frr_at_fa_equals_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let c = random_case(&mut rng);
        let budget = rng.random_range(0.0..20.0);
        let r = frr_at_fa(&c.pos, &c.neg, c.hours, budget).unwrap();
        let (frr, fa) = brute_force(&c, budget);
        assert_eq!(r.frr, frr);
        assert_eq!(r.achieved_fa_per_hour, fa);
        assert!(r.achieved_fa_per_hour <= budget);
    }
}

#[test]
fn det_sweep_matches_per_budget_and_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let c = random_case(&mut rng);
        let mut budgets: Vec<f64> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0.01..30.0)).collect();
        budgets.sort_by(f64::total_cmp);
        budgets.dedup();
        let det = det_sweep(&c.pos, &c.neg, c.hours, &budgets).unwrap();
        for (&(b, frr), &budget) in det.iter().zip(&budgets) {
            assert_eq!(b, budget);
            assert_eq!(frr, brute_force(&c, budget).0);
        }
        assert!(det.windows(2).all(|w| w[1].1 <= w[0].1));
    }
}

#[test]
fn monotone_rescaling_leaves_frr_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let c = random_case(&mut rng);
        let f = |s: f64| if s > 0.0 { s.powi(3) * 0.5 } else { 0.0 };
        let pos: Vec<f64> = c.pos.iter().map(|&s| f(s)).collect();
        let neg: Vec<f64> = c.neg.iter().map(|&s| f(s)).collect();
        let budget = rng.random_range(0.0..10.0);
        let a = frr_at_fa(&c.pos, &c.neg, c.hours, budget).unwrap();
        let b = frr_at_fa(&pos, &neg, c.hours, budget).unwrap();
        assert_eq!(a.frr, b.frr);
    }
}
