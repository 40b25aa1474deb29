use henon_lab::cantor::{thickness, IntervalSet};
use henon_lab::census::{self, CensusConfig, OrbitKind, SeedStrategy};
use henon_lab::{henon, Exec, Params, PlanePoint};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_set(rng: &mut ChaCha8Rng, pieces: usize) -> IntervalSet {
    let mut cuts: Vec<f64> = (0..2 * pieces).map(|_| rng.gen_range(-1.0..1.0)).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let intervals = cuts
        .chunks_exact(2)
        .map(|c| (c[0], c[1]))
        .filter(|(l, r)| r > l)
        .collect();
    IntervalSet::new(intervals).unwrap()
}

fn small_seeds() -> SeedStrategy {
    SeedStrategy {
        grid: 8,
        unstable_images: 16,
        ..SeedStrategy::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inverse_undoes_the_map(a in -2.5..0.5f64, b in prop_oneof![-0.5..-0.01f64, 0.01..0.5f64],
                              x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let p = Params::new(a, b);
        let z = PlanePoint::new(x, y);
        let back = henon::apply_inverse(p, henon::apply(p, z)).unwrap();
        prop_assert!(back.sup_dist(z) < 1e-9);
        prop_assert!((henon::jacobian(p, z).det() - b).abs() < 1e-15);
    }

    #[test]
    fn multipliers_multiply_to_the_jacobian_power(
        a in -2.25..-1.3f64, b in prop_oneof![-0.2..-0.02f64, 0.02..0.2f64]
    ) {
        let p = Params::new(a, b);
        for orbit in census::find_periodic_orbits(p, 4, &small_seeds()) {
            prop_assert!(orbit.period >= 1 && orbit.period <= 4);
            prop_assert_eq!(orbit.points.len(), orbit.period);
            prop_assert!(orbit.closure_defect(p) < 1e-10, "closure {}", orbit.closure_defect(p));
            prop_assert!(orbit.determinant_defect(b) < 1e-6,
                "period {} defect {}", orbit.period, orbit.determinant_defect(b));
        }
    }

    #[test]
    fn thickness_is_exactly_invariant_under_dyadic_rescaling(seed in 0u64..10_000, k in -6i32..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, 10);
        let scaled = set.affine(2f64.powi(k), 0.0).unwrap();
        prop_assert_eq!(thickness(&set).tau, thickness(&scaled).tau);
    }

    #[test]
    fn refined_grids_share_their_coarse_points(lo in -3.0..0.0f64, width in 0.01..2.0f64, g in 2usize..60) {
        let iv = (lo, lo + width);
        for i in 0..g {
            prop_assert_eq!(census::grid_value(iv, g, i), census::grid_value(iv, 2 * g - 1, 2 * i));
        }
    }
}

#[test]
fn fixed_points_are_period_one_orbits() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let p = Params::new(rng.gen_range(-2.2..-0.5), rng.gen_range(0.05..0.3));
        let fixed = henon::fixed_points(p).unwrap();
        let orbits = census::find_periodic_orbits(p, 1, &small_seeds());
        assert_eq!(orbits.len(), fixed.len(), "{p:?}");
        for s in &fixed {
            assert!(orbits.iter().any(|o| o.points[0].sup_dist(s.point) < 1e-9));
        }
    }
}

#[test]
fn sweep_is_identical_on_both_execution_paths() {
    let cfg = CensusConfig {
        iterations: 20_000,
        basin_grid: 8,
        newton_seeds: small_seeds(),
        ..CensusConfig::default()
    };
    let run = |exec| census::sink_census_sweep_with(0.3, (-1.2, -0.2), 6, 6, &cfg, exec).unwrap();
    let par = run(Exec::Parallel);
    let seq = run(Exec::Sequential);
    assert_eq!(par, seq);
    assert_eq!(par.to_csv(), seq.to_csv());
    for point in &par.points {
        assert_eq!(
            point.record.classification,
            census::Classification::Sinks,
            "{:?}",
            point.record
        );
        assert!(point.orbits.iter().any(|o| o.kind == OrbitKind::Sink));
    }
}
