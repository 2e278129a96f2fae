use dimerlab::lattice::{disc, DriftField, LatticeKind, Region};
use dimerlab::loewner::*;
use dimerlab::walk::{sample_lerw, Kernel, Law, RngSeed};
use dimerlab::Error;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn radial_slit(theta: f64, r: f64, n: usize) -> Vec<Complex64> {
    (0..=n).map(|j| Complex64::from_polar(1.0 - (1.0 - r) * j as f64 / n as f64, theta)).collect()
}

fn sup_diff(a: &DrivingFunction, b: &DrivingFunction) -> f64 {
    let t_end = a.total_capacity().min(b.total_capacity());
    (0..=400)
        .map(|j| {
            let t = t_end * j as f64 / 400.0;
            (a.at(t).unwrap() - b.at(t).unwrap()).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn radial_slit_capacity_and_constant_driver() {
    for r in [0.2f64, 0.5, 0.9] {
        let exact = -(4.0 * r / ((1.0 + r) * (1.0 + r))).ln();
        let coarse = extract_driving(&radial_slit(0.0, r, 50), Complex64::new(0.0, 0.0)).unwrap();
        let fine = extract_driving(&radial_slit(0.0, r, 100), Complex64::new(0.0, 0.0)).unwrap();
        assert!((coarse.total_capacity() - fine.total_capacity()).abs() < 1e-4);
        assert!((fine.total_capacity() - exact).abs() < 1e-9 * exact.max(1.0));
        assert!(fine.xi.iter().all(|x| x.abs() < 1e-9));
        assert!(fine.times.windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn rotated_slit_shifts_driver() {
    let a = extract_driving(&radial_slit(0.0, 0.4, 80), Complex64::new(0.0, 0.0)).unwrap();
    let b = extract_driving(&radial_slit(1.1, 0.4, 80), Complex64::new(0.0, 0.0)).unwrap();
    assert!((a.total_capacity() - b.total_capacity()).abs() < 1e-12);
    for (x, y) in a.xi.iter().zip(&b.xi) {
        assert!((y - x - 1.1).abs() < 1e-9);
    }
}

#[test]
fn empty_curve_has_single_point() {
    let d = extract_driving(&[Complex64::from_polar(1.0, -2.0)], Complex64::new(0.0, 0.0)).unwrap();
    assert_eq!(d.times, vec![0.0]);
    assert!((d.xi[0] + 2.0).abs() < 1e-15);
}

#[test]
fn errors_are_reported() {
    let c = radial_slit(0.0, 0.0, 4);
    assert_eq!(extract_driving(&c, Complex64::new(0.0, 0.0)).unwrap_err(), Error::CurveHitsTarget);
    let loop_back = [Complex64::new(1.0, 0.0), Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.1), Complex64::new(0.5, 0.0)];
    assert_eq!(extract_driving(&loop_back, Complex64::new(0.0, 0.0)).unwrap_err(), Error::NonSimpleCurve);
    let d = disc(LatticeKind::SquareZ2, 1.0, 0.2, &DriftField::zero()).unwrap();
    let region = Region::Rectangle { min: Complex64::new(0.0, 0.0), max: Complex64::new(1.0, 1.0) };
    let curve = sample_lerw(&d, &Kernel::new(&d, Law::Simple), 0, &mut RngSeed::new(1).rng());
    assert!(matches!(lerw_driving(&d, &region, &curve, ZipperOptions::default()), Err(Error::MapUnavailable(_))));
}

#[test]
fn tip_maps_to_driving_point() {
    let c: Vec<Complex64> = (0..=60)
        .map(|j| {
            let s = j as f64 / 60.0;
            Complex64::from_polar(1.0 - 0.6 * s, 0.8 * s * s)
        })
        .collect();
    let d = extract_driving(&c, Complex64::new(0.0, 0.0)).unwrap();
    let mut zip = Zipper::new();
    for j in 1..c.len() {
        let w = zip.apply(c[j]);
        let theta = d.xi[j];
        zip.push(theta, w.norm());
        let tip = zip.apply(c[j]);
        assert!((tip - Complex64::from_polar(1.0, theta)).norm() < 1e-6, "step {j}: {tip}");
    }
}

#[test]
fn capacity_matches_conformal_radius() {
    let c: Vec<Complex64> = (0..=40).map(|j| Complex64::from_polar(1.0 - 0.015 * j as f64, 0.01 * j as f64)).collect();
    let d = extract_driving(&c, Complex64::new(0.0, 0.0)).unwrap();
    let mut zip = Zipper::new();
    for j in 1..c.len() {
        let w = zip.apply(c[j]);
        zip.push(d.xi[j], w.norm());
    }
    let e = 1e-7;
    let deriv = (zip.apply(Complex64::new(e, 0.0)) - zip.apply(Complex64::new(-e, 0.0))) / (2.0 * e);
    assert!(deriv.im.abs() < 1e-6 * deriv.re);
    assert!((deriv.re.ln() / d.total_capacity() - 1.0).abs() < 1e-6);
}

#[test]
fn refinement_is_stable_on_smooth_curves() {
    let c: Vec<Complex64> = (0..=200)
        .map(|j| {
            let s = j as f64 / 200.0;
            Complex64::from_polar(1.0 - 0.7 * s, 0.5 * (3.0 * s).sin())
        })
        .collect();
    // the scheme is first order: steps of about 1/800 of the radius are needed
    let a = extract_driving_with(&c, Complex64::new(0.0, 0.0), ZipperOptions { subdivide: 4, ..Default::default() }).unwrap();
    let b = extract_driving_with(&c, Complex64::new(0.0, 0.0), ZipperOptions { subdivide: 8, ..Default::default() }).unwrap();
    assert!(sup_diff(&a, &b) < 1e-3, "{}", sup_diff(&a, &b));
}

#[test]
fn synthetic_brownian_driver_calibrates() {
    let mut rng = RngSeed::new(5).rng();
    let dt: f64 = 0.01;
    let drivers: Vec<DrivingFunction> = (0..1000)
        .map(|_| {
            let mut x = 0.0;
            let mut times = vec![0.0];
            let mut xi = vec![0.0];
            for j in 1..=250 {
                let g: f64 = rng.sample(StandardNormal);
                x += 2f64.sqrt() * dt.sqrt() * g;
                times.push(j as f64 * dt);
                xi.push(x);
            }
            DrivingFunction { times, xi, curve_ref: String::new() }
        })
        .collect();
    let rep = diffusivity_estimate(&drivers, 0.2, 2.0, 0.05).unwrap();
    assert_eq!(rep.n_curves, 1000);
    assert!((rep.kappa_hat - 2.0).abs() < 0.1, "{}", rep.kappa_hat);
    assert!(rep.kappa_ci < 0.1);
}

#[test]
fn lerw_driver_is_well_formed() {
    let d = disc(LatticeKind::DirectedTriangular, 1.0, 0.05, &DriftField::zero()).unwrap();
    let region = Region::Disc { center: Complex64::new(0.0, 0.0), radius: 1.0 };
    let v = d.vertex_near(Complex64::new(0.0, 0.0)).unwrap();
    let k = Kernel::new(&d, Law::Drifted);
    for s in 0..5 {
        let curve = sample_lerw(&d, &k, v, &mut RngSeed::new(2).child(s).rng());
        let f = lerw_driving(&d, &region, &curve, ZipperOptions::default()).unwrap();
        assert_eq!(f.times[0], 0.0);
        assert!(f.times.windows(2).all(|w| w[1] > w[0]));
        assert!(f.xi.windows(2).all(|w| (w[1] - w[0]).abs() < std::f64::consts::PI));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn rotation_equivariance(theta in -3.0f64..3.0, bend in -1.0f64..1.0, r in 0.2f64..0.8) {
        let curve: Vec<Complex64> = (0..=40)
            .map(|j| {
                let s = j as f64 / 40.0;
                Complex64::from_polar(1.0 - (1.0 - r) * s, bend * s * s)
            })
            .collect();
        let rot: Vec<Complex64> = curve.iter().map(|p| p * Complex64::from_polar(1.0, theta)).collect();
        let a = extract_driving(&curve, Complex64::new(0.0, 0.0)).unwrap();
        let b = extract_driving(&rot, Complex64::new(0.0, 0.0)).unwrap();
        for (x, y) in a.times.iter().zip(&b.times) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let shift = b.xi[0] - a.xi[0];
        let m = (shift - theta).rem_euclid(std::f64::consts::TAU);
        prop_assert!(m < 1e-9 || std::f64::consts::TAU - m < 1e-9);
        for (x, y) in a.xi.iter().zip(&b.xi) {
            prop_assert!((y - x - shift).abs() < 1e-9);
        }
    }
}
