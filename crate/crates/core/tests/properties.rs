//! Invariants checked over random inputs.

use proptest::prelude::*;
use rand::Rng;

use deposim::coupling::{CoupledState, CouplingError, Sandwich, SandwichMode, TagStart};
use deposim::dynamics::{current_from, RingState};
use deposim::equilibrium::{build_marginal, sample_configuration, DEFAULT_EPS};
use deposim::estimators::{coupling_soak, EstimatorError, run_correlations, ResolvedModel};
use deposim::models::*;
use deposim::rng::replica_rng;
use deposim::stats::{mean_estimate, RunningStats};

fn family(k: u8) -> ModelSpec {
    match k % 4 {
        0 => simple_exclusion(),
        1 => builtin(Family::PAExclusion, &ModelParams { c: Some(0.25), a: Some(1.0), ..Default::default() }).unwrap(),
        2 => builtin(Family::ZR, &ModelParams::default()).unwrap(),
        _ => builtin(Family::BL, &ModelParams { beta: Some(0.5), ..Default::default() }).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn coupled_pairs_stay_ordered(k in 0u8..4, t1 in -1.0f64..0.5, gap in 0.0f64..1.0, seed in any::<u64>()) {
        let spec = family(k);
        let lower = ResolvedModel::new(spec.clone(), t1).unwrap();
        let upper = lower.at_theta(t1 + gap).unwrap();
        let rep = coupling_soak(&lower, &upper, 24, 20_000, seed);
        // a product draw on a short ring can carry no discrepancy at all
        prop_assume!(!matches!(rep, Err(EstimatorError::Coupling(CouplingError::NoSecondClassParticles))));
        let rep = rep.unwrap();
        prop_assert!(rep.clean(), "{:?}", rep);
    }

    #[test]
    fn random_ordered_pairs_keep_labels(k in 0u8..4, seed in any::<u64>(), len in 4usize..20) {
        let spec = family(k);
        let mut rng = replica_rng(seed, 0);
        let m = build_marginal(&spec, 0.0, DEFAULT_EPS).unwrap();
        let lower = sample_configuration(&m, len, &mut rng);
        let (lo, hi) = (spec.support().lo(), spec.support().hi());
        let upper: Vec<i64> = lower.iter().map(|&x| if x < hi && rng.gen_bool(0.4) { x + 1 } else { x }).collect();
        let d: i64 = upper.iter().zip(&lower).map(|(u, l)| u - l).sum();
        prop_assume!(d > 0 && lower.iter().all(|&x| x >= lo));
        let mut s = CoupledState::new(&spec, lower, upper, TagStart::FirstAtOrAfterOrigin).unwrap();
        for _ in 0..2000 {
            if s.basic_step(&mut rng).is_err() {
                break;
            }
            prop_assert!(s.is_ordered());
            prop_assert_eq!(s.discrepancy(), d);
            prop_assert!(s.swarm().consistent(s.lower(), s.upper()));
        }
    }

    #[test]
    fn sandwich_order_holds(bl_family in any::<bool>(), seed in any::<u64>()) {
        let spec = family(if bl_family { 3 } else { 2 });
        let mut rng = replica_rng(seed, 1);
        let mut sw = Sandwich::new(&spec, SandwichMode::Both, -0.4, 0.0, 0.4, 32, &mut rng).unwrap();
        for k in 1..=10 {
            sw.run(k as f64, &mut rng).unwrap();
            let (sp, q, s) = (sw.s_prime().unwrap(), sw.q(), sw.s().unwrap());
            prop_assert!(sp <= q && q <= s);
            prop_assert!(sw.swarms_consistent());
        }
        prop_assert_eq!(sw.audit().order_violations, 0);
    }

    #[test]
    fn current_balances_mass(k in 0u8..4, seed in any::<u64>(), v in -0.9f64..0.9) {
        // J^(V)(t) - J^(0)(t) = mass that entered the window between 0 and Vt
        let spec = family(k);
        let mut rng = replica_rng(seed, 2);
        let m = build_marginal(&spec, 0.0, DEFAULT_EPS).unwrap();
        let mut s = RingState::init(&spec, &m, 40, &mut rng);
        let t = 10.0;
        s.advance(t, &mut rng);
        let j0 = s.current(0.0).unwrap();
        let jv = s.current(v).unwrap();
        let x = v * t;
        let now: i64 = if v >= 0.0 {
            (1..=x.floor() as i64).map(|j| s.omega()[j as usize]).sum()
        } else {
            -(x.ceil() as i64 + 1..=0).map(|j| s.omega()[j.rem_euclid(40) as usize]).sum::<i64>()
        };
        prop_assert_eq!(j0 - jv, now);
        prop_assert_eq!(current_from(s.bricks(), s.omega0(), v, t).unwrap(), jv);
    }

    #[test]
    fn running_stats_merge_any_split(xs in prop::collection::vec(-1e3f64..1e3, 2..200), cut in 0usize..200) {
        let cut = cut.min(xs.len());
        let mut a: RunningStats = xs[..cut].iter().cloned().collect();
        let b: RunningStats = xs[cut..].iter().cloned().collect();
        a.merge(&b);
        let all: RunningStats = xs.iter().cloned().collect();
        prop_assert_eq!(a.count(), all.count());
        prop_assert!((a.mean() - all.mean()).abs() <= 1e-9 * (1.0 + all.mean().abs()));
        prop_assert!((a.variance() - all.variance()).abs() <= 1e-9 * (1.0 + all.variance()));
    }
}

#[test]
fn ci_shrinks_like_inverse_root_of_replicas() {
    let se = simple_exclusion();
    let m = ResolvedModel::new(se, 0.0).unwrap();
    let ci = |n: usize| {
        let c = run_correlations(&m, 32, &[1.0], &[0], n, 11).unwrap();
        mean_estimate(&c.column(0, 0)).ci95()
    };
    let ratio = ci(4000) / ci(2000);
    assert!((ratio - 0.5f64.sqrt()).abs() < 0.1, "ratio {ratio}");
}
