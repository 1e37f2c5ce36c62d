use super::*;
use ndarray::array;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(rng: &mut ChaCha8Rng, input: usize, max_layers: usize, max_width: usize, output: usize) -> MlpParams<f64> {
    let layers = rng.random_range(1..=max_layers);
    let mut sizes = vec![input];
    for _ in 1..layers {
        sizes.push(rng.random_range(1..=max_width));
    }
    sizes.push(output);
    MlpParams::init(&sizes, rng).unwrap()
}

fn sample_ball(rng: &mut ChaCha8Rng, center: &Array1<f64>, eps: f64) -> Array1<f64> {
    center.mapv(|c| c + rng.random_range(-eps..=eps))
}

const TOL: f64 = 1e-10;

#[test]
fn degenerate_box_is_the_forward_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = random_net(&mut rng, 5, 3, 12, 4);
    let x = array![0.1, -0.4, 0.3, 0.9, -1.0];
    let y = net.eval(x.view()).unwrap();
    let ib = ibp(&net, x.view(), 0.0).unwrap();
    let (lin, cb) = crown(&net, x.view(), 0.0, AlphaPolicy::Adaptive).unwrap();
    for j in 0..4 {
        assert!((ib.lower[j] - y[j]).abs() < 1e-12 && (ib.upper[j] - y[j]).abs() < 1e-12);
        assert!((cb.lower[j] - y[j]).abs() < 1e-12 && (cb.upper[j] - y[j]).abs() < 1e-12);
    }
    let again = lin.concretize(x.view(), Array1::zeros(5).view());
    for j in 0..4 {
        assert!((again.lower[j] - cb.lower[j]).abs() < 1e-12);
    }
}

#[test]
fn hand_computed_interval() {
    let layer = Dense {
        w: array![[1.0, -1.0], [2.0, 0.0]],
        b: array![0.0, 1.0],
    };
    let net = MlpParams::new(vec![layer.clone()]).unwrap();
    let b = ibp(&net, array![0.5, 0.5].view(), 0.5).unwrap();
    assert_eq!(b.lower, array![-1.0, 1.0]);
    assert_eq!(b.upper, array![1.0, 3.0]);
    let split = affine_bounds(&layer, array![0.0, 0.0].view(), array![1.0, 1.0].view());
    assert_eq!(split, b);
}

#[test]
fn all_stable_network_is_exact() {
    // Positive first layer on a positive box keeps every ReLU active, so the
    // network is affine on the box and its range is attained at corners.
    let l1 = Dense {
        w: array![[0.5, 0.2, 0.1], [0.3, 0.4, 0.9], [0.7, 0.1, 0.2]],
        b: array![0.1, 0.2, 0.05],
    };
    let l2 = Dense {
        w: array![[1.0, -2.0, 0.5], [-0.3, 0.8, -1.1]],
        b: array![0.0, 0.3],
    };
    let net = MlpParams::new(vec![l1, l2]).unwrap();
    let center = array![1.0, 1.0, 1.0];
    let eps = 0.5;
    let pre = ibp_layers(&net, center.view(), eps).unwrap();
    assert!(pre[0].lower.iter().all(|l| *l > 0.0));
    let mut lo = Array1::from_elem(2, f64::INFINITY);
    let mut hi = Array1::from_elem(2, f64::NEG_INFINITY);
    for corner in 0..8u32 {
        let x = Array1::from_shape_fn(3, |i| center[i] + if corner >> i & 1 == 1 { eps } else { -eps });
        let y = net.eval(x.view()).unwrap();
        lo.zip_mut_with(&y, |a, b| *a = a.min(*b));
        hi.zip_mut_with(&y, |a, b| *a = a.max(*b));
    }
    let (_, cb) = crown(&net, center.view(), eps, AlphaPolicy::Adaptive).unwrap();
    for j in 0..2 {
        assert!((cb.lower[j] - lo[j]).abs() < 1e-12);
        assert!((cb.upper[j] - hi[j]).abs() < 1e-12);
    }
    let ib = ibp(&net, center.view(), eps).unwrap();
    assert!(ib.width().iter().zip(cb.width().iter()).all(|(i, c)| i > &(c + 1e-6)));
}

#[test]
fn single_layer_ibp_is_exact_too() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = MlpParams::<f64>::init(&[4, 3], &mut rng).unwrap();
    let x = array![0.2, 0.1, -0.3, 0.5];
    let ib = ibp(&net, x.view(), 0.2).unwrap();
    let (_, cb) = crown(&net, x.view(), 0.2, AlphaPolicy::Adaptive).unwrap();
    for j in 0..3 {
        assert!((ib.lower[j] - cb.lower[j]).abs() < 1e-12);
        assert!((ib.upper[j] - cb.upper[j]).abs() < 1e-12);
    }
}

#[test]
fn boxes_contain_sampled_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let net = random_net(&mut rng, 6, 3, 24, 4);
        let center = Array1::from_shape_simple_fn(6, || rng.random_range(-1.0..1.0));
        for eps in [0.01, 0.1, 0.5] {
            let ib = ibp(&net, center.view(), eps).unwrap();
            let (_, cb) = crown(&net, center.view(), eps, AlphaPolicy::Adaptive).unwrap();
            let mixed = crown_ibp(&net, center.view(), eps, 0.3, AlphaPolicy::Adaptive).unwrap();
            for _ in 0..500 {
                let y = net.eval(sample_ball(&mut rng, &center, eps).view()).unwrap();
                assert!(ib.contains(y.view(), TOL));
                assert!(cb.contains(y.view(), TOL));
                assert!(mixed.contains(y.view(), TOL));
            }
        }
    }
}

#[test]
fn crown_never_wider_than_ibp() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let net = random_net(&mut rng, 5, 3, 32, 3);
        let center = Array1::from_shape_simple_fn(5, || rng.random_range(-1.0..1.0));
        for eps in [0.01, 0.1, 0.5] {
            let ib = ibp(&net, center.view(), eps).unwrap();
            for alpha in [AlphaPolicy::Adaptive, AlphaPolicy::Zero, AlphaPolicy::One] {
                let (_, cb) = crown(&net, center.view(), eps, alpha).unwrap();
                assert!(cb.width().iter().zip(ib.width().iter()).all(|(c, i)| c <= i));
            }
        }
    }
}

#[test]
fn zero_slope_planes_never_looser_than_intervals() {
    // Without clipping, the zero lower slope alone already orders the boxes
    // up to rounding.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let net = random_net(&mut rng, 5, 3, 32, 3);
        let center = Array1::from_shape_simple_fn(5, || rng.random_range(-1.0..1.0));
        for eps in [0.01, 0.1, 0.5] {
            let ib = ibp(&net, center.view(), eps).unwrap();
            let (lin, _) = crown(&net, center.view(), eps, AlphaPolicy::Zero).unwrap();
            let planes = lin.concretize(center.view(), Array1::from_elem(5, eps).view());
            for (c, i) in planes.width().iter().zip(ib.width().iter()) {
                assert!(*c <= i + 1e-12 * (1.0 + i.abs()));
            }
        }
    }
}

#[test]
fn mixing_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = random_net(&mut rng, 4, 3, 16, 3);
    let x = array![0.3, -0.2, 0.0, 0.8];
    let eps = 0.2;
    let ib = ibp(&net, x.view(), eps).unwrap();
    let (_, cb) = crown(&net, x.view(), eps, AlphaPolicy::Adaptive).unwrap();
    assert_eq!(crown_ibp(&net, x.view(), eps, 0.0, AlphaPolicy::Adaptive).unwrap(), ib);
    assert_eq!(crown_ibp(&net, x.view(), eps, 1.0, AlphaPolicy::Adaptive).unwrap(), cb);
    let mid = crown_ibp(&net, x.view(), eps, 0.5, AlphaPolicy::Adaptive).unwrap();
    for j in 0..3 {
        assert!((mid.lower[j] - 0.5 * (ib.lower[j] + cb.lower[j])).abs() < 1e-12);
        assert!((mid.upper[j] - 0.5 * (ib.upper[j] + cb.upper[j])).abs() < 1e-12);
    }
    assert!(crown_ibp(&net, x.view(), eps, 1.5, AlphaPolicy::Adaptive).is_err());
    assert!(ibp(&net, x.view(), -0.1).is_err());
    assert!(ibp(&net, array![0.0].view(), 0.1).is_err());
}

#[test]
fn regularizer_vanishes_at_zero_radius() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = random_net(&mut rng, 4, 3, 8, 2);
    let obs = Array2::from_shape_simple_fn((6, 4), || rng.random_range(-1.0..1.0));
    let (loss, g) = sa_regularizer(&net, obs.view(), 0.0, 0.5, AlphaPolicy::Adaptive).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g.values().all(|v| *v == 0.0));
}

#[test]
fn regularizer_matches_box_widths() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = random_net(&mut rng, 4, 3, 8, 3);
    let obs = Array2::from_shape_simple_fn((5, 4), || rng.random_range(-1.0..1.0));
    let (eps, beta) = (0.1, 0.4);
    let (loss, _) = sa_regularizer(&net, obs.view(), eps, beta, AlphaPolicy::Adaptive).unwrap();
    let expect: f64 = obs
        .rows()
        .into_iter()
        .map(|x| crown_ibp(&net, x, eps, beta, AlphaPolicy::Adaptive).unwrap().width().mapv(|w| w * w).sum())
        .sum::<f64>()
        / 5.0;
    assert!((loss - expect).abs() < 1e-12);
}

#[test]
fn regularizer_dominates_empirical_divergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let net = random_net(&mut rng, 5, 3, 16, 3);
        let s = Array1::from_shape_simple_fn(5, || rng.random_range(-1.0..1.0));
        let obs = s.clone().insert_axis(Axis(0));
        let (loss, _) = sa_regularizer(&net, obs.view(), 0.1, 0.5, AlphaPolicy::Adaptive).unwrap();
        let clean = net.eval(s.view()).unwrap();
        for _ in 0..200 {
            let y = net.eval(sample_ball(&mut rng, &s, 0.1).view()).unwrap();
            assert!((&y - &clean).mapv(|d| d * d).sum() <= loss + TOL);
        }
    }
}

/// Central differences on every parameter, skipping coordinates where the
/// relaxation pattern differs between the two probe points.
fn check_regularizer_gradient(net: &MlpParams<f64>, obs: &Array2<f64>, eps: f64, beta: f64, alpha: AlphaPolicy) -> (usize, usize) {
    let (_, g) = sa_regularizer(net, obs.view(), eps, beta, alpha).unwrap();
    let analytic = g.to_flat();
    let base = net.to_flat();
    let h = 1e-6;
    let pattern = |p: &MlpParams<f64>| {
        obs.rows()
            .into_iter()
            .flat_map(|x| relaxation_pattern(p, x, eps, alpha).unwrap())
            .collect::<Vec<_>>()
    };
    let mut probe = net.clone();
    let (mut checked, mut skipped) = (0, 0);
    for i in 0..base.len() {
        let mut x = base.clone();
        x[i] += h;
        probe.set_flat(&x).unwrap();
        let (up, p_up) = (sa_regularizer(&probe, obs.view(), eps, beta, alpha).unwrap().0, pattern(&probe));
        x[i] -= 2.0 * h;
        probe.set_flat(&x).unwrap();
        let (down, p_down) = (sa_regularizer(&probe, obs.view(), eps, beta, alpha).unwrap().0, pattern(&probe));
        if p_up != p_down {
            skipped += 1;
            continue;
        }
        checked += 1;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
        assert!(rel < 1e-3, "param {i}: fd {fd} vs analytic {}", analytic[i]);
    }
    (checked, skipped)
}

#[test]
fn regularizer_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = MlpParams::init(&[5, 16, 16, 3], &mut rng).unwrap();
    let obs = Array2::from_shape_simple_fn((4, 5), || rng.random_range(-1.0..1.0));
    for (beta, alpha) in [(0.0, AlphaPolicy::Adaptive), (1.0, AlphaPolicy::Adaptive), (0.5, AlphaPolicy::Adaptive), (0.5, AlphaPolicy::Zero)] {
        let (checked, skipped) = check_regularizer_gradient(&net, &obs, 0.05, beta, alpha);
        assert!(checked > 10 * skipped.max(1), "checked {checked}, skipped {skipped}");
    }
}

#[test]
fn regularizer_gradient_through_unstable_neurons() {
    // A wide radius forces many straddling neurons so the chord-slope
    // derivatives are exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let net = MlpParams::init(&[3, 8, 8, 2], &mut rng).unwrap();
    let obs = Array2::from_shape_simple_fn((3, 3), || rng.random_range(-1.0..1.0));
    let pre = ibp_layers(&net, obs.row(0), 0.5).unwrap();
    assert!(pre[0].lower.iter().zip(pre[0].upper.iter()).any(|(l, u)| *l < 0.0 && *u > 0.0));
    let (checked, _) = check_regularizer_gradient(&net, &obs, 0.5, 1.0, AlphaPolicy::Adaptive);
    assert!(checked > 50);
}

#[test]
fn single_precision_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = MlpParams::<f32>::init(&[3, 6, 2], &mut rng).unwrap();
    let x = array![0.1f32, 0.2, 0.3];
    let b = crown_ibp(&net, x.view(), 0.1, 0.5, AlphaPolicy::Adaptive).unwrap();
    let y = net.eval(x.view()).unwrap();
    assert!(b.contains(y.view(), 1e-5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regularizer_nondecreasing_in_radius(seed in 0u64..10_000, beta in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, 4, 3, 12, 2);
        let obs = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-1.0..1.0));
        let mut prev = 0.0;
        for eps in [0.0, 0.01, 0.05, 0.1, 0.2, 0.4] {
            let (loss, _) = sa_regularizer(&net, obs.view(), eps, beta, AlphaPolicy::Zero).unwrap();
            prop_assert!(loss + 1e-12 >= prev, "eps {}: {} < {}", eps, loss, prev);
            prev = loss;
        }
    }

    #[test]
    fn lower_never_exceeds_upper(seed in 0u64..10_000, eps in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, 4, 3, 12, 3);
        let x = Array1::from_shape_simple_fn(4, || rng.random_range(-1.0..1.0));
        for b in [
            ibp(&net, x.view(), eps).unwrap(),
            crown(&net, x.view(), eps, AlphaPolicy::Adaptive).unwrap().1,
        ] {
            prop_assert!(b.lower.iter().zip(b.upper.iter()).all(|(l, u)| *l <= *u + 1e-12));
        }
    }
}
