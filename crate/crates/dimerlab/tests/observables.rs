use dimerlab::lattice::{block_sites, disc, hexagon_sites, DriftField, LatticeDomain, LatticeKind, Region, Symmetry};
use dimerlab::observables::*;
use dimerlab::walk::{Law, RngSeed};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use std::f64::consts::PI;

fn c(x: f64, y: f64) -> Complex64 {
    Complex64::new(x, y)
}

fn plan(n: usize, seed: u64) -> McPlan {
    McPlan::new(n, RngSeed::new(seed)).unwrap()
}

#[test]
fn winding_examples() {
    let square = [c(0.0, 0.0), c(1.0, 0.0), c(1.0, 1.0), c(0.0, 1.0), c(0.0, 0.0), c(1.0, 0.0)];
    assert!((winding(&square, 0, 5) - 2.0 * PI).abs() < 1e-12);
    let rev: Vec<Complex64> = square.iter().map(|z| z.conj()).collect();
    assert!((winding(&rev, 0, 5) + 2.0 * PI).abs() < 1e-12);
    assert_eq!(winding(&square, 2, 3), 0.0);
    let zigzag = [c(0.0, 0.0), c(1.0, 0.0), c(1.0, 1.0), c(2.0, 1.0), c(2.0, 2.0)];
    assert!((sup_winding(&zigzag, 0, 4) - PI / 2.0).abs() < 1e-12);
    assert!((winding(&zigzag, 0, 4) - PI / 2.0).abs() < 1e-12);
}

#[test]
fn winding_window_uses_last_visit() {
    let pts: Vec<Complex64> = [0.0, 0.5, 1.5, 2.0, 1.0, 3.0, 4.0].iter().map(|&x| c(x, 0.0)).collect();
    assert_eq!(winding_window(&pts, c(0.0, 0.0), 1.0), Some((2, 4)));
    assert_eq!(winding_window(&pts[..2], c(0.0, 0.0), 1.0), None);
}

fn winding_second_moments(delta: f64, field: &DriftField, scales: &[f64]) -> Vec<f64> {
    let d = disc(LatticeKind::DirectedTriangular, 1.0, delta, field).unwrap();
    let v = d.vertex_near(c(0.0, 0.0)).unwrap();
    let s = winding_moments(&d, Law::Drifted, v, scales, 2, &plan(1500, 11)).unwrap();
    s.observables.iter().map(|o| o.mean).collect()
}

fn spread(xs: &[f64]) -> f64 {
    let (lo, hi) = xs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    hi / lo
}

#[test]
fn winding_moments_depend_on_scale_through_mesh_ratio() {
    // the intrinsic winding includes turning around the window endpoints at
    // every scale down to δ, so moments are invariant at fixed r/δ
    let matched: Vec<f64> = [0.02, 0.01, 0.005].iter().map(|&d| winding_second_moments(d, &DriftField::zero(), &[8.0 * d])[0]).collect();
    assert!(spread(&matched) < 1.2, "{matched:?}");
    let crit = winding_second_moments(0.005, &DriftField::zero(), &[0.04, 0.113, 0.32]);
    assert!(crit.windows(2).all(|w| w[1] > w[0]), "{crit:?}");
    let per_log: Vec<f64> = crit.iter().zip([8.0f64, 22.6, 64.0]).map(|(m, q)| m / q.ln()).collect();
    assert!(spread(&per_log) < 1.2, "{per_log:?}");
    let drifted = winding_second_moments(0.005, &DriftField::constant_drift(c(1.0, 0.0)), &[0.04, 0.113, 0.32]);
    for (a, b) in crit.iter().zip(&drifted) {
        assert!(*b <= 4.0 * a, "{crit:?} {drifted:?}");
    }
}

#[test]
fn winding_below_two_meshes_is_zero() {
    let d = disc(LatticeKind::SquareZ2, 1.0, 0.05, &DriftField::zero()).unwrap();
    let s = winding_moments(&d, Law::Simple, 0, &[0.05], 2, &plan(20, 1)).unwrap();
    assert_eq!(s.observables[0].mean, 0.0);
}

#[test]
fn ball_avoidance_power_law() {
    let d = disc(LatticeKind::DirectedTriangular, 1.0, 0.005, &DriftField::zero()).unwrap();
    let v = d.vertex_near(c(0.0, 0.0)).unwrap();
    let fr = [1.0, 0.5, 0.25, 0.125, 0.0625];
    let rep = ball_avoidance(&d, Law::Drifted, v, c(0.5, 0.0), 0.25, &fr, &plan(3000, 12)).unwrap();
    let means: Vec<f64> = rep.summary.observables.iter().map(|o| o.mean).collect();
    assert!(means.windows(2).all(|w| w[0] >= w[1]));
    assert!(means[0] <= 1.0);
    let (slope, r2) = linear_fit(&fr[1..].iter().map(|e| e.ln()).collect::<Vec<_>>(), &means[1..].iter().map(|m| m.ln()).collect::<Vec<_>>());
    assert!((0.1..=2.0).contains(&slope), "{slope} {means:?}");
    assert!(r2 > 0.9, "{r2}");
}

#[test]
fn crossing_is_orientation_symmetric_and_cap_insensitive() {
    let delta = 0.02;
    let p = plan(40_000, 13);
    let h = CrossingSetup::new(LatticeKind::SquareZ2, delta, 0.5, c(0.0, 0.0), Orientation::Horizontal, &DriftField::zero()).unwrap();
    let v = CrossingSetup::new(LatticeKind::SquareZ2, delta, 0.5, c(0.0, 0.0), Orientation::Vertical, &DriftField::zero()).unwrap();
    let a = &crossing_probability(&h, Law::Drifted, None, &p).observables[0];
    let b = &crossing_probability(&v, Law::Drifted, None, &p.slice(0, p.replicas).plan).observables[0];
    let se = (a.variance / a.count as f64 + b.variance / b.count as f64).sqrt();
    assert!((a.mean - b.mean).abs() <= 3.0 * se, "{} {}", a.mean, b.mean);
    assert!(a.mean > 0.0);
    let cap = (1.0 / (delta * delta)) as u64;
    let capped = &crossing_probability(&h, Law::Drifted, Some(cap), &p).observables[0];
    assert!(capped.mean <= a.mean);
    assert!((a.mean - capped.mean) / a.mean < 0.5, "{} {}", a.mean, capped.mean);
}

#[test]
fn conditioned_laws_agree_on_triangular_domain() {
    let d = LatticeDomain::build(
        LatticeKind::DirectedTriangular,
        &Region::Sites(block_sites(10, 5)),
        0.1,
        &DriftField::constant_drift(c(1.5, -0.5)),
    )
    .unwrap();
    assert_eq!(d.len(), 50);
    let start = d.vertex_at((2, 2)).unwrap();
    let y = d.boundary_edges().len() / 2;
    let r = compare_conditioned_laws(&d, start, y, &plan(100_000, 14)).unwrap();
    assert!(r.ks_length_p > 0.01, "{r:?}");
    assert!(r.winding_ks_p > 0.01, "{r:?}");
    assert_eq!(r.conditioning_satisfied, 1.0);
}

#[test]
fn critical_conditioned_samplers_coincide() {
    let d = LatticeDomain::build(LatticeKind::DirectedTriangular, &Region::Sites(hexagon_sites(3)), 0.1, &DriftField::zero()).unwrap();
    let r = compare_conditioned_laws(&d, 0, 3, &plan(500, 15)).unwrap();
    assert_eq!(r.identical_fraction, 1.0);
    assert_eq!(r.ks_length, 0.0);
}

#[test]
fn plans_are_deterministic_and_merge() {
    let d = disc(LatticeKind::SquareZ2, 1.0, 0.1, &DriftField::constant_drift(c(0.5, 0.5))).unwrap();
    let p = plan(400, 16);
    let a = winding_moments(&d, Law::Drifted, 0, &[0.2, 0.3], 1, &p).unwrap();
    let b = winding_moments(&d, Law::Drifted, 0, &[0.2, 0.3], 1, &p).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.plan_hash, p.hash());
    let ex_a = exit_frequencies(&d, Law::Drifted, 3, &p).unwrap();
    assert_eq!(ex_a, exit_frequencies(&d, Law::Drifted, 3, &p).unwrap());
    let whole: Vec<f64> = p.run(|s| s.rng().random::<f64>());
    let mut merged = RunningStats::new();
    for k in 0..4 {
        let part: RunningStats = p.slice(k * 100, 100).run(|s| s.rng().random::<f64>()).into_iter().collect();
        merged.merge(&part);
    }
    let mono: RunningStats = whole.into_iter().collect();
    assert_eq!(merged.count, mono.count);
    assert!((merged.mean - mono.mean).abs() < 1e-14);
    assert!((merged.variance() - mono.variance()).abs() < 1e-14);
}

#[test]
fn identity_covariance_check_is_exact() {
    let d = disc(LatticeKind::DirectedTriangular, 1.0, 0.1, &DriftField::constant_drift(c(1.0, 0.0))).unwrap();
    let probes = [c(0.3, 0.1), c(-0.4, 0.2), c(0.0, -0.5)];
    let r = covariance_check(&d, CovarianceMap::Symmetry(Symmetry::Identity), &probes, &plan(300, 17)).unwrap();
    assert_eq!(r.original, r.transformed);
    assert_eq!(r.max_z, 0.0);
    assert!(r.within_3sigma);
}

#[test]
fn scaled_covariances_match() {
    let d = disc(LatticeKind::DirectedTriangular, 1.0, 0.1, &DriftField::constant_drift(c(1.0, 0.0))).unwrap();
    let probes = [c(0.1, 0.05), c(-0.05, 0.12)];
    let r = covariance_check(&d, CovarianceMap::Scale(2.0), &probes, &plan(10_000, 18)).unwrap();
    for (i, rd) in r.rel_diffs.iter().enumerate() {
        assert!(*rd < 0.1, "pair {i}: {rd} {:?} {:?} {:?} {:?}", r.z_scores, r.original.cov, r.original.cov_se, r.transformed.cov);
    }
}

#[test]
fn summary_csv_quotes_names() {
    let s = McSummary::new(&plan(1, 0), vec![ObservableSummary::from_stats("a,\"b\"", &[1.0, 3.0].into_iter().collect())]);
    let csv = s.to_csv();
    assert!(csv.contains("\"a,\"\"b\"\"\""), "{csv}");
    let o = &s.observables[0];
    assert!((o.ci95 - 1.96 * (o.variance / 2.0).sqrt()).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sup_winding_bounds_every_window(turns in proptest::collection::vec(-1.5f64..1.5, 3..30)) {
        let mut dir = c(1.0, 0.0);
        let mut pts = vec![c(0.0, 0.0)];
        for t in &turns {
            dir *= Complex64::from_polar(1.0, *t);
            let last = *pts.last().unwrap();
            pts.push(last + dir);
        }
        let n = pts.len() - 1;
        let sup = sup_winding(&pts, 0, n);
        for s in 0..n {
            for t in s..=n {
                prop_assert!(winding(&pts, s, t).abs() <= sup + 1e-12);
            }
        }
    }

    #[test]
    fn ks_of_equal_samples_is_zero(xs in proptest::collection::vec(-10.0f64..10.0, 1..50)) {
        let (d, p) = ks_two_sample(&xs, &xs);
        prop_assert_eq!(d, 0.0);
        prop_assert!(p > 0.99);
    }
}
