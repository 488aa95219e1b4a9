//! Property tests for the invariants of the core numerics.

use awfisher::aw::{
    aw_search_brute, aw_search_fast, fisher_stat, PValueVector, PrefixSearch, WeightVector,
};
use awfisher::chi2::chi2_sf;
use awfisher::fdr::bh_qvalues;
use awfisher::interpolation::{fit_monotone_spline, LibraryInterpolator, StatLibrary};
use awfisher::oracle::pvalue_exact_k2;
use proptest::prelude::*;

/// Mix of ordinary, tiny and exactly-one p-values.
fn pvalue() -> impl Strategy<Value = f64> {
    prop_oneof![
        6 => 1e-6f64..=1.0,
        2 => (-40.0f64..0.0).prop_map(|x| 10f64.powf(x)),
        1 => Just(1.0),
    ]
}

fn pvalues(kmin: usize, kmax: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(pvalue(), kmin..=kmax)
}

fn desk_library() -> StatLibrary {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../data/awfisher_desk.awflib"
    );
    StatLibrary::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn naive_bh(p: &[f64]) -> Vec<f64> {
    let n = p.len();
    (0..n)
        .map(|i| {
            let mut q: f64 = 1.0;
            for j in 0..n {
                if p[j] >= p[i] {
                    let rank = p.iter().filter(|&&x| x <= p[j]).count();
                    q = q.min(p[j] * n as f64 / rank as f64);
                }
            }
            q
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn fast_search_matches_brute_force(p in pvalues(2, 15)) {
        let pv = PValueVector::new(p).unwrap();
        let fast = aw_search_fast(&pv);
        let brute = aw_search_brute(&pv).unwrap();
        prop_assert_eq!(&fast.weights, &brute.weights);
        let rel = (fast.statistic - brute.statistic).abs() / brute.statistic.max(f64::MIN_POSITIVE);
        prop_assert!(rel <= 1e-12 || fast.log_statistic == brute.log_statistic);
    }

    #[test]
    fn search_is_permutation_equivariant(p in pvalues(2, 12), rot in 0usize..12) {
        let k = p.len();
        let perm: Vec<usize> = (0..k).map(|i| (i + rot) % k).collect();
        let q: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let a = aw_search_fast(&PValueVector::new(p.clone()).unwrap());
        let b = aw_search_fast(&PValueVector::new(q).unwrap());
        prop_assert!((a.log_statistic - b.log_statistic).abs() <= 1e-12 * a.log_statistic.abs().max(1.0));
        // Ties can legitimately pick a different subset after relabelling.
        let distinct = p.iter().enumerate().all(|(i, x)| p[i + 1..].iter().all(|y| y != x));
        if distinct {
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(a.weights.as_slice()[i], b.weights.as_slice()[j]);
            }
        }
    }

    #[test]
    fn statistic_bounded_by_single_studies(p in pvalues(2, 10)) {
        let r = aw_search_fast(&PValueVector::new(p.clone()).unwrap());
        for k in 0..p.len() {
            let mut bits = vec![false; p.len()];
            bits[k] = true;
            let single = chi2_sf(fisher_stat(&p, &WeightVector::new(bits).unwrap()).unwrap(), 2).unwrap();
            prop_assert!(r.statistic <= single * (1.0 + 1e-12));
        }
    }

    #[test]
    fn pruned_search_equals_exhaustive(k in 2usize..=300, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // A few strong signals among null studies.
        let e: Vec<f64> = (0..k)
            .map(|_| {
                let u: f64 = 1.0 - rng.random::<f64>();
                if rng.random::<f64>() < 0.2 { -u.ln() * 8.0 } else { -u.ln() }
            })
            .collect();
        let mut s = PrefixSearch::new();
        let pruned = s.run(&e);
        let exact = s.run_exact(&e);
        prop_assert_eq!(pruned.1, exact.1);
        prop_assert_eq!(pruned.0.to_bits(), exact.0.to_bits());
    }

    #[test]
    fn chi2_sf_decreasing_and_exact_for_two_df(x in 0.0f64..200.0, dx in 1e-6f64..10.0, m in 1usize..50) {
        let df = 2 * m;
        let (a, b) = (chi2_sf(x, df).unwrap(), chi2_sf(x + dx, df).unwrap());
        prop_assert!(b <= a);
        // Strictness is only observable where the step moves the value by more than an ulp.
        if a > 1e-300 && a < 0.5 && dx >= 1e-3 {
            prop_assert!(b < a);
        }
        prop_assert_eq!(chi2_sf(x, 2).unwrap(), (-x / 2.0).exp());
    }

    #[test]
    fn bh_matches_naive_and_is_order_free(p in prop::collection::vec(1e-8f64..=1.0, 1..60), rot in 0usize..60) {
        let q = bh_qvalues(&p).unwrap();
        for (a, b) in q.iter().zip(naive_bh(&p)) {
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
        }
        for (qi, pi) in q.iter().zip(&p) {
            prop_assert!(qi >= pi && *qi <= 1.0);
        }
        let n = p.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let qp = bh_qvalues(&pp).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert_eq!(qp[j], q[i]);
        }
    }

    #[test]
    fn spline_preserves_monotone_data(
        steps in prop::collection::vec((0.01f64..3.0, 0.0f64..2.0), 2..20),
        probes in prop::collection::vec(0.0f64..1.0, 1..50),
    ) {
        let mut x = 0.0;
        let mut y = -5.0;
        let mut pts = vec![(x, y)];
        for (dx, dy) in steps {
            x += dx;
            y += dy;
            pts.push((x, y));
        }
        let sp = fit_monotone_spline(&pts).unwrap();
        for &(kx, ky) in &pts {
            prop_assert_eq!(sp.eval(kx), ky);
        }
        let mut qs: Vec<f64> = probes.iter().map(|t| t * x).collect();
        qs.sort_by(f64::total_cmp);
        for w in qs.windows(2) {
            prop_assert!(sp.eval(w[0]) <= sp.eval(w[1]));
        }
    }

    #[test]
    fn exact_k2_is_monotone_in_unit_interval(a in 1e-12f64..=1.0, b in 1e-12f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (plo, phi) = (pvalue_exact_k2(lo).unwrap(), pvalue_exact_k2(hi).unwrap());
        prop_assert!(plo > 0.0 && phi <= 1.0 && plo <= phi);
    }

    #[test]
    fn garbage_library_text_never_panics(lines in prop::collection::vec("[ -~\t]{0,40}", 0..12)) {
        let mut text = String::from("AWFLIB 1\n");
        text.push_str(&lines.join("\n"));
        let _ = StatLibrary::parse(&text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn library_interpolation_is_monotone(k in 2usize..=10, raw in prop::collection::vec(-30.0f64..0.0, 2..200)) {
        let lib = desk_library();
        let interp = LibraryInterpolator::new(&lib).unwrap();
        let mut ls = raw;
        ls.sort_by(f64::total_cmp);
        let mut prev = 0.0;
        for l in ls {
            let p = interp.pvalue_from_ln(k, l).unwrap();
            prop_assert!(p > 0.0 && p <= 1.0);
            prop_assert!(p >= prev);
            prev = p;
        }
    }
}

fn random_studies(
    seed: u64,
    k: usize,
    genes: usize,
    per_class: usize,
) -> Vec<awfisher::resample::StudyData> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<String> = (0..genes).map(|g| format!("g{g:03}")).collect();
    (0..k)
        .map(|s| {
            let labels: Vec<u8> = (0..2 * per_class)
                .map(|j| u8::from(j >= per_class))
                .collect();
            let expr: Vec<f64> = (0..genes * 2 * per_class)
                .map(|i| {
                    let shift =
                        if i % (2 * per_class) >= per_class && (i / (2 * per_class)) % 3 == 0 {
                            1.5
                        } else {
                            0.0
                        };
                    rng.random::<f64>() * 2.0 + shift
                })
                .collect();
            awfisher::resample::StudyData::new(format!("s{s}"), ids.clone(), labels, expr).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bootstrap_summaries_are_well_formed(seed in any::<u64>(), k in 2usize..4, b in 50usize..80) {
        let studies = random_studies(seed, k, 12, 5);
        let de: Vec<usize> = (0..12).collect();
        let s = awfisher::resample::bootstrap_summary(&studies, Some(&de), b, seed).unwrap();
        let u = &s.variability;
        for g in 0..12 {
            for (kk, &x) in u.row(g).iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(&x));
                let m = u.include_counts[g * k + kk] as f64 / b as f64;
                prop_assert!((x - 4.0 * m * (1.0 - m)).abs() <= 1e-12);
            }
        }
        let v = s.comembership.unwrap();
        for i in 0..v.len() {
            prop_assert_eq!(v.get(i, i), 1.0);
            for j in 0..v.len() {
                prop_assert_eq!(v.get(i, j), v.get(j, i));
                let scaled = v.get(i, j) * b as f64;
                prop_assert!((scaled - scaled.round()).abs() <= 1e-9);
            }
        }
    }
}
