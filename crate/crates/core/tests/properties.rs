use proptest::prelude::*;

use rds_mdim::bowen::{greedy_separated, net_cover, span_count, structured_sep_count, CountKind, CountParams, CountRecord, Exactness, PointCloud};
use rds_mdim::config::config_hash;
use rds_mdim::measure::{
    bowen_ball_mass, cylinder_partition_entropy, katok_count, log_count_above, mass_spectrum, measure_provider,
    shapira_count, MeasureOptions,
};
use rds_mdim::setcover::sparse_mass_cover;
use rds_mdim::system::{make_system, BaseLaw, FiberPoint, FiberedSystem, SystemSpec};
use rds_mdim::topological::{growth_rate_logs, omega_sample};

fn sys(name: &str) -> FiberedSystem {
    make_system(&SystemSpec::catalog(name)).unwrap()
}

fn bernoulli(p: f64) -> String {
    format!("bernoulli({p},{})", 1.0 - p)
}

fn law(p: f64) -> BaseLaw {
    BaseLaw::Bernoulli(vec![p, 1.0 - p])
}

/// Words of length `d` over `{0, 1}` with their masses.
fn cylinders(p: f64, d: usize) -> Vec<f64> {
    (0..1u32 << d)
        .map(|m| {
            let ones = m.count_ones() as i32;
            p.powi(d as i32 - ones) * (1.0 - p).powi(ones)
        })
        .collect()
}

fn eps_strategy() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![0.5, 0.3, 0.25, 0.2, 0.125, 0.1, 0.0625])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectrum_is_normalized(p in 0.05f64..0.95, d in 0usize..12) {
        let spectrum = mass_spectrum(&law(p), d, 1 << 20).unwrap();
        // classes are (log mass, log multiplicity)
        let count: f64 = spectrum.iter().map(|(_, lc)| lc.exp()).sum();
        let mass: f64 = spectrum.iter().map(|(lm, lc)| (lm + lc).exp()).sum();
        prop_assert!((count - (1u64 << d) as f64).abs() < 1e-6 * count);
        prop_assert!((mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn count_above_matches_sorting(p in 0.05f64..0.95, d in 1usize..10, target in 0.01f64..0.99) {
        let mut masses = cylinders(p, d);
        masses.sort_by(|a, b| b.total_cmp(a));
        let mut acc = 0.0;
        let mut brute = 0;
        for m in masses {
            if acc > target {
                break;
            }
            acc += m;
            brute += 1;
        }
        let lc = log_count_above(&mass_spectrum(&law(p), d, 1 << 20).unwrap(), target).unwrap();
        prop_assert_eq!(lc.exp().round() as usize, brute);
    }

    #[test]
    fn partition_entropy_bounds(p in 0.01f64..0.99, d in 0usize..12) {
        let h = cylinder_partition_entropy(&law(p), d);
        let brute: f64 = cylinders(p, d).iter().map(|&m| if m > 0.0 { -m * m.ln() } else { 0.0 }).sum();
        prop_assert!(h >= -1e-12 && h <= d as f64 * 2f64.ln() + 1e-9);
        prop_assert!((h - brute).abs() < 1e-9);
    }

    #[test]
    fn katok_monotone_in_delta_and_eps(p in 0.05f64..0.95, n in 1usize..8, eps in eps_strategy(), d1 in 0.01f64..0.98, d2 in 0.01f64..0.98) {
        let f = sys("full-shift(2)");
        let opts = MeasureOptions::default();
        let mu = measure_provider(&f, &bernoulli(p), 0, &opts).unwrap();
        let env = omega_sample(&f, 0, 0, n).unwrap();
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let k = |e: f64, d: f64| katok_count(&mu, &f, &env, n, e, d, &opts).unwrap().value;
        prop_assert!(k(eps, hi) <= k(eps, lo));
        prop_assert!(k(eps, lo) <= k(eps / 2.0, lo));
    }

    #[test]
    fn katok_shapira_sandwich(p in 0.05f64..0.95, n in 1usize..8, eps in eps_strategy(), delta in 0.01f64..0.98) {
        let f = sys("full-shift(2)");
        let opts = MeasureOptions::default();
        let mu = measure_provider(&f, &bernoulli(p), 0, &opts).unwrap();
        let env = omega_sample(&f, 0, 0, n).unwrap();
        let cover = net_cover(&f.fiber, eps).unwrap();
        let k = |e: f64| katok_count(&mu, &f, &env, n, e, delta, &opts).unwrap().value;
        let s = shapira_count(&mu, &f, &env, &cover, n, delta, &opts).unwrap().value;
        prop_assert!(k(eps) <= s && s <= k(eps / 4.0), "{} {} {}", k(eps), s, k(eps / 4.0));
    }

    #[test]
    fn ball_mass_is_cylinder_mass(p in 0.05f64..0.95, n in 1usize..10, word in prop::collection::vec(0u8..2, 24)) {
        let f = sys("full-shift(2)");
        let mu = measure_provider(&f, &bernoulli(p), 0, &MeasureOptions::default()).unwrap();
        let env = omega_sample(&f, 0, 0, n).unwrap();
        // open (n, 1/4) ball: first n + 2 letters fixed
        let depth = n + 2;
        let brute: f64 = word[..depth].iter().map(|&a| if a == 0 { p } else { 1.0 - p }).product();
        let m = bowen_ball_mass(&mu, &f, &env, &FiberPoint::Word(word), n, 0.25).unwrap();
        prop_assert!((m - brute).abs() <= 1e-12 * brute.max(1e-300) + 1e-300);
    }

    #[test]
    fn span_sep_sandwich(n in 1usize..5, eps in eps_strategy(), seed in 0u64..100) {
        let f = sys("random-subshift(2)");
        let env = omega_sample(&f, seed, 0, n).unwrap();
        let cloud = PointCloud::cylinders(&f.fiber, n + 6, n + 8).unwrap();
        let sep = |e: f64| greedy_separated(&cloud, &f, &env, n, e).unwrap().1.value;
        let span = |e: f64| span_count(&cloud, &f, &env, n, e).unwrap().value;
        prop_assert!(span(eps) <= sep(eps));
        prop_assert!(sep(eps) <= span(eps / 2.0));
    }

    #[test]
    fn structured_sep_matches_cloud(n in 1usize..5, eps in eps_strategy()) {
        let f = sys("full-shift(2)");
        let env = omega_sample(&f, 0, 0, n).unwrap();
        let cloud = PointCloud::cylinders(&f.fiber, n + 6, n + 8).unwrap();
        let cloud_sep = greedy_separated(&cloud, &f, &env, n, eps).unwrap().1.value;
        prop_assert_eq!(structured_sep_count(&f, n, eps).unwrap().value, cloud_sep);
    }

    #[test]
    fn growth_of_exact_powers(rate in 0.0f64..3.0, start in 1usize..4, len in 3usize..10) {
        let raw: Vec<(usize, f64)> = (start..start + len).map(|n| (n, rate * n as f64)).collect();
        let g = growth_rate_logs(&raw).unwrap();
        prop_assert!((g.value - rate).abs() < 1e-9);
    }

    #[test]
    fn count_record_round_trip(v in 1usize..1_000_000) {
        let r = CountRecord::new(CountKind::Sep, v, Exactness::Exact, CountParams::default());
        let back = CountRecord::from_log(CountKind::Sep, r.log_value, Exactness::Exact, CountParams::default());
        prop_assert_eq!(back.value, v as f64);
    }

    #[test]
    fn mass_cover_is_minimal(
        sets in prop::collection::vec(prop::collection::btree_set(0u32..10, 1..5), 1..8),
        target in 0.0f64..0.9,
    ) {
        let sets: Vec<Vec<u32>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let weights = vec![0.1; 10];
        let mass = |mask: u32| {
            let mut hit = [false; 10];
            for (k, s) in sets.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    for &i in s {
                        hit[i as usize] = true;
                    }
                }
            }
            hit.iter().filter(|h| **h).count() as f64 * 0.1
        };
        let brute = (1u32..1 << sets.len()).filter(|&m| mass(m) > target).map(u32::count_ones).min();
        match sparse_mass_cover(&sets, &weights, target) {
            Ok((count, exact)) => {
                prop_assert!(exact);
                prop_assert_eq!(Some(count as u32), brute);
            }
            Err(_) => prop_assert_eq!(brute, None),
        }
    }

    #[test]
    fn config_hash_ignores_key_order(perm in Just(()).prop_perturb(|_, mut rng| {
        let mut v: Vec<usize> = (0..4).collect();
        for i in (1..v.len()).rev() {
            v.swap(i, rng.random_range(0..=i));
        }
        v
    })) {
        let grid = ["epsilon_max = 0.25", "epsilon_min = 0.03125", "n = [1, 2, 4]", "delta = [0.2, 0.1]"];
        let shuffled: Vec<&str> = perm.iter().map(|&i| grid[i]).collect();
        let a = format!("seed = 3\nsystem = \"doubling\"\n[grid]\n{}\n", grid.join("\n"));
        let b = format!("system = \"doubling\"\nseed = 3\n[grid]\n{}\n", shuffled.join("\n"));
        prop_assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    }
}
