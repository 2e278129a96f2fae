use dimerlab::girsanov::local_coefficients;
use dimerlab::green::*;
use dimerlab::lattice::{block_sites, disc, hexagon_sites, DriftField, LatticeDomain, LatticeKind, Region, Target};
use dimerlab::walk::{conditioned_kernel, sample_lerw, sample_with_kernel, Conditioning, Kernel, Law, RngSeed, Terminal, DEFAULT_CAP};
use dimerlab::Error;
use num_complex::Complex64;
use proptest::prelude::*;

fn tri(sites: Vec<(i32, i32)>, delta: f64, field: &DriftField) -> LatticeDomain {
    LatticeDomain::build(LatticeKind::DirectedTriangular, &Region::Sites(sites), delta, field).unwrap()
}

fn drift(x: f64, y: f64) -> DriftField {
    DriftField::constant_drift(Complex64::new(x, y))
}

#[test]
fn single_vertex_is_visited_once() {
    let d = tri(vec![(0, 0)], 0.1, &DriftField::zero());
    let g = green_solve(&d, 0, Law::Simple).unwrap();
    assert!((g.values[0] - 1.0).abs() < 1e-15);
}

#[test]
fn two_vertex_green_matches_path_sum() {
    let d = tri(vec![(0, 0), (1, 0)], 0.1, &drift(1.0, 0.5));
    let k = Kernel::new(&d, Law::Drifted);
    let q = |a: usize, b: usize| -> f64 { (0..3).filter(|&j| d.target(a, j) == Target::Interior(b)).map(|j| k.prob(a, j)).sum() };
    // truncated series Σ Qⁿ until the remaining mass is below 1e-12
    let mut row = [1.0, 0.0];
    let mut acc = [0.0, 0.0];
    while row[0] + row[1] > 1e-14 {
        acc[0] += row[0];
        acc[1] += row[1];
        row = [row[0] * q(0, 0) + row[1] * q(1, 0), row[0] * q(0, 1) + row[1] * q(1, 1)];
    }
    let g = green_solve(&d, 0, Law::Drifted).unwrap();
    assert!((g.values[0] - acc[0]).abs() < 1e-12);
    assert!((g.values[1] - acc[1]).abs() < 1e-12);
    assert!(g.solver_residual < 1e-10);
}

#[test]
fn massive_green_floor_on_disc() {
    let d0 = disc(LatticeKind::DirectedTriangular, 1.0, 0.02, &DriftField::zero()).unwrap();
    let dm = disc(LatticeKind::DirectedTriangular, 1.0, 0.02, &DriftField::constant_mass(1.0)).unwrap();
    let s0 = AbsorbingSolver::new(&d0, &Kernel::new(&d0, Law::Simple), None).unwrap();
    let sm = AbsorbingSolver::new(&dm, &Kernel::new(&dm, Law::Massive), None).unwrap();
    let centre: Vec<usize> = (0..d0.len()).filter(|&v| d0.position(v).norm() < 0.25).collect();
    for &v in centre.iter().step_by(7) {
        let e0 = exit_distribution_with(&d0, &Kernel::new(&d0, Law::Simple), &s0, v).unwrap();
        let em = exit_distribution_with(&dm, &Kernel::new(&dm, Law::Massive), &sm, v).unwrap();
        for (a, b) in e0.iter().zip(&em) {
            if *a > 0.0 {
                assert!(b / a >= 0.05, "{}", b / a);
            }
        }
    }
}

#[test]
fn hitting_probabilities_sum_to_one() {
    let d = tri(hexagon_sites(3), 0.1, &drift(0.7, -1.4));
    let mut total = vec![0.0; d.len()];
    for e in 0..d.boundary_edges().len() {
        let h = hitting_probability(&d, ExitTarget::Edge(e), Law::Drifted).unwrap();
        assert!(h.values.iter().all(|&x| (-1e-15..=1.0 + 1e-15).contains(&x)));
        total.iter_mut().zip(&h.values).for_each(|(t, x)| *t += x);
    }
    assert!(total.iter().all(|t| (t - 1.0).abs() < 1e-12));
    let free = tri(hexagon_sites(3), 0.1, &DriftField::constant_mass(0.0));
    let alive = hitting_probability(&free, ExitTarget::Alive, Law::Massive).unwrap();
    assert!(alive.values.iter().all(|&x| (x - 1.0).abs() < 1e-12));
}

#[test]
fn harmonicity_and_duality() {
    let d = disc(LatticeKind::SquareZ2, 1.0, 0.1, &DriftField::constant_mass(1.5)).unwrap();
    let k = Kernel::new(&d, Law::Massive);
    let s = AbsorbingSolver::new(&d, &k, None).unwrap();
    let x = d.vertex_near(Complex64::new(0.1, -0.2)).unwrap();
    let exits = exit_distribution_with(&d, &k, &s, x).unwrap();
    for e in (0..d.boundary_edges().len()).step_by(5) {
        let ind = target_indicator(&d, ExitTarget::Edge(e)).unwrap();
        let h = hitting_with_kernel(&d, &k, &ind).unwrap();
        assert!(harmonicity_defect(&d, &k, &h.values, &ind) < 1e-10);
        assert!((h.values[x] - exits[e]).abs() < 1e-10 * exits[e].max(1e-300) + 1e-16);
    }
}

#[test]
fn exit_frequencies_match_solver() {
    let mut sites = hexagon_sites(3);
    sites.truncate(30);
    let d = tri(sites, 0.1, &drift(0.5, 1.0));
    let start = 10;
    let exact = exit_distribution(&d, start, Law::Drifted).unwrap();
    let k = Kernel::new(&d, Law::Drifted);
    let n = 1_000_000u64;
    let mut counts = vec![0u64; exact.len()];
    let mut rng = RngSeed::new(4).rng();
    for _ in 0..n {
        if let Terminal::ExitedBoundary(e) = sample_with_kernel(&d, &k, start, DEFAULT_CAP, &mut rng).terminal {
            counts[e] += 1;
        }
    }
    for (c, p) in counts.iter().zip(&exact) {
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((*c as f64 - n as f64 * p).abs() <= 3.0 * sigma.max(1.0), "{c} vs {}", n as f64 * p);
    }
}

#[test]
fn mystery_identity_holds() {
    let d0 = tri(hexagon_sites(3), 0.05, &DriftField::constant_mass(0.0));
    assert_eq!(mystery_identity_residual(&d0, 0, 5).unwrap(), 0.0);
    let d = disc(LatticeKind::DirectedTriangular, 0.5, 0.05, &DriftField::constant_mass(1.0)).unwrap();
    assert!(d.len() <= 500);
    for (w, z) in [(0, 0), (3, d.len() - 1), (d.len() / 2, 17)] {
        assert!(mystery_identity_residual(&d, w, z).unwrap() < 1e-10);
    }
    let var = disc(LatticeKind::DirectedTriangular, 0.6, 0.05, &DriftField::variable_mass(2.0, |z: Complex64| 1.0 + z.re)).unwrap();
    assert_eq!(mystery_identity_residual(&var, 0, 1).unwrap_err(), Error::NonConstantMass);
}

#[test]
fn mystery_residual_tracks_solver_tolerance() {
    let d = disc(LatticeKind::SquareZ2, 0.6, 0.05, &DriftField::constant_mass(1.0)).unwrap();
    let (w, z) = (0, d.len() / 2);
    let r1 = mystery_identity_residual_iterative(&d, w, z, 1e-6).unwrap();
    let r2 = mystery_identity_residual_iterative(&d, w, z, 1e-8).unwrap();
    let ratio = r1 / r2;
    assert!((10.0..1000.0).contains(&ratio), "{r1} {r2}");
}

#[test]
fn symmetric_domain_has_symmetric_exit_law() {
    let d = tri(hexagon_sites(3), 0.1, &DriftField::zero());
    let v = d.vertex_at((0, 0)).unwrap();
    let p = exit_distribution(&d, v, Law::Drifted).unwrap();
    let key = |m: Complex64| ((m.re * 1e6).round() as i64, (m.im * 1e6).round() as i64);
    let index: std::collections::HashMap<_, _> = (0..p.len()).map(|e| (key(d.boundary_midpoint(e)), e)).collect();
    let rot = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
    for e in 0..p.len() {
        let image = index[&key(d.boundary_midpoint(e) * rot)];
        assert!((p[e] - p[image]).abs() < 1e-14);
    }
}

#[test]
fn endpoint_radon_nikodym_identity() {
    let d = tri(hexagon_sites(4), 0.05, &drift(1.2, 0.9));
    let alpha = local_coefficients(&d, 0).alpha;
    for x in [0, 11, 30] {
        let pd = exit_distribution(&d, x, Law::Drifted).unwrap();
        let pm = exit_distribution(&d, x, Law::Massive).unwrap();
        for e in 0..pd.len() {
            let disp = d.boundary_outer_position(e) - d.position(x);
            let f = (2.0 / 3.0 * (alpha.re * disp.re + alpha.im * disp.im)).exp();
            assert!((pd[e] / (f * pm[e]) - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn exit_laws_converge_under_refinement() {
    let arcs = 32;
    let mut laws = Vec::new();
    for delta in [0.1, 0.05, 0.025] {
        let d = disc(LatticeKind::DirectedTriangular, 1.0, delta, &drift(1.0, 0.0)).unwrap();
        let v = d.vertex_near(Complex64::new(0.0, 0.0)).unwrap();
        let p = exit_distribution(&d, v, Law::Drifted).unwrap();
        let mut h = vec![0.0; arcs];
        for (e, pe) in p.iter().enumerate() {
            let a = d.boundary_midpoint(e).arg().rem_euclid(std::f64::consts::TAU);
            h[((a / std::f64::consts::TAU * arcs as f64) as usize).min(arcs - 1)] += pe;
        }
        laws.push(h);
    }
    let tv = |a: &[f64], b: &[f64]| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    assert!(tv(&laws[1], &laws[2]) < tv(&laws[0], &laws[1]));
}

#[test]
fn conditioned_transition_matrices_agree() {
    for sites in [hexagon_sites(2), block_sites(6, 5)] {
        let d = tri(sites, 0.1, &drift(-0.8, 1.3));
        for y in 0..d.boundary_edges().len() {
            let (kd, _) = conditioned_kernel(&d, Law::Drifted, Conditioning::Edge(y)).unwrap();
            let (km, _) = conditioned_kernel(&d, Law::Massive, Conditioning::Edge(y)).unwrap();
            for v in 0..d.len() {
                for k in 0..3 {
                    assert!((kd.prob(v, k) - km.prob(v, k)).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn martingale_one_step_identity() {
    let d = tri(block_sites(5, 5), 0.1, &DriftField::constant_mass(2.0));
    assert_eq!(d.len(), 25);
    let root = d.vertex_at((2, 2)).unwrap();
    let probe = d.vertex_at((1, 3)).unwrap();
    let (ck, _) = conditioned_kernel(&d, Law::Massive, Conditioning::Alive).unwrap();
    let mut worst = 0.0f64;
    for s in 0..20 {
        let curve = sample_lerw(&d, &ck, root, &mut RngSeed::new(3).child(s).rng());
        if curve.vertices.contains(&probe) {
            continue;
        }
        let tail = reversed_tail(&curve);
        for n in 0..tail.len().saturating_sub(1) {
            let c = martingale_one_step(&d, Law::Massive, curve.exit, &tail[..n], root, probe).unwrap();
            assert!((c.total_mass - 1.0).abs() < 1e-10, "{}", c.total_mass);
            worst = worst.max((c.expected_next - c.current).abs() / c.current);
        }
        let trace = martingale_observable(&d, Law::Massive, &curve, probe).unwrap();
        assert_eq!(trace.values.len(), tail.len() + 1);
    }
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn swallowed_probe_is_reported() {
    let d = tri(block_sites(4, 4), 0.1, &DriftField::constant_mass(1.0));
    let ck = conditioned_kernel(&d, Law::Massive, Conditioning::Alive).unwrap().0;
    let curve = sample_lerw(&d, &ck, 5, &mut RngSeed::new(1).rng());
    let on_curve = curve.vertices[curve.len() / 2];
    assert_eq!(martingale_observable(&d, Law::Massive, &curve, on_curve).unwrap_err(), Error::ProbeSwallowed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn green_values_are_nonnegative(x in -2.0f64..2.0, y in -2.0f64..2.0, src in 0usize..19) {
        let d = tri(hexagon_sites(2), 0.1, &drift(x, y));
        let g = green_solve(&d, src, Law::Drifted).unwrap();
        prop_assert!(g.values.iter().all(|&v| v >= 0.0));
        prop_assert!(g.values[src] >= 1.0);
        prop_assert!(g.solver_residual < 1e-10);
    }
}
