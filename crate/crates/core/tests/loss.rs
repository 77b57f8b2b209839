use heatmark::autograd::Tape;
use heatmark::gradcheck::gradient_check;
use heatmark::loss::{accuracy, mae, mse, wing_loss, MetricsReport, WING_CURVATURE, WING_WIDTH};
use heatmark::rng::RngStream;
use heatmark::tensor::Tensor;
use proptest::prelude::*;

fn t(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::from_f64(shape.to_vec(), v).unwrap()
}

fn wing1(e: f64) -> f64 {
    wing_loss(&t(&[1], &[e]), &t(&[1], &[0.0]), WING_WIDTH, WING_CURVATURE).unwrap()
}

#[test]
fn homogeneous_error_reconstructs_reported_pairs() {
    for (err, reported) in [(0.0153, 0.9175), (0.0128, 0.7628)] {
        let target = Tensor::<f64>::zeros(vec![1, 2, 6]);
        let pred = Tensor::filled(vec![1, 2, 6], err);
        let got = wing_loss(&pred, &target, 10.0, 2.0).unwrap();
        let closed = 12.0 * 10.0 * (1.0 + err / 2.0f64).ln();
        assert!((got - closed).abs() < 1e-12);
        assert!(((got - reported) / reported).abs() < 0.01, "{got} vs {reported}");
    }
}

#[test]
fn continuous_at_the_width() {
    let c = 10.0 - 10.0 * 6.0f64.ln();
    assert!((10.0 * 6.0f64.ln() - 17.9176).abs() < 1e-4);
    assert!((wing1(10.0) - (10.0 - c)).abs() < 1e-12);
    assert!((wing1(10.0 - 1e-9) - 10.0 * 6.0f64.ln()).abs() < 1e-8);
    let mut prev = -1.0;
    for i in 0..=400 {
        let e = i as f64 * 0.05;
        let v = wing1(e);
        assert!(v >= prev);
        prev = v;
    }
}

#[test]
fn zero_iff_equal_and_examples() {
    let a = t(&[1, 2], &[0.3, 0.4]);
    assert_eq!(wing_loss(&a, &a, 10.0, 2.0).unwrap(), 0.0);
    assert_eq!(mae(&a, &a).unwrap(), 0.0);
    let b = t(&[1, 2], &[0.4, 0.3]);
    assert!((mae(&a, &b).unwrap() - 0.1).abs() < 1e-15);
    assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-15);
    assert!(wing_loss(&a, &t(&[2, 1], &[0.0, 0.0]), 10.0, 2.0).is_err());
    assert!(mae(&a, &t(&[2], &[0.0, 0.0])).is_err());
}

#[test]
fn batch_mean_of_coordinate_sums() {
    let p = t(&[2, 2, 1], &[1.0, 0.0, 0.0, 3.0]);
    let z = Tensor::<f64>::zeros(vec![2, 2, 1]);
    let want = (10.0 * 1.5f64.ln() + 10.0 * 2.5f64.ln()) / 2.0;
    assert!((wing_loss(&p, &z, 10.0, 2.0).unwrap() - want).abs() < 1e-12);
}

fn pts(xs: [f64; 6], ys: [f64; 6]) -> Tensor {
    let mut v = xs.to_vec();
    v.extend(ys);
    t(&[1, 2, 6], &v)
}

#[test]
fn accuracy_counts_points() {
    let dims = (100, 100);
    let gt = pts([0.1, 0.2, 0.3, 0.4, 0.5, 0.5], [0.1, 0.2, 0.3, 0.4, 0.5, 0.1]);
    assert_eq!(accuracy(&gt, &gt, 0.25, dims).unwrap(), 1.0);
    // box 40 x 40 px, diagonal 56.57, threshold 14.14 px
    let mut half = gt.clone();
    for i in 0..3 {
        half.data_mut()[i] += 0.5;
    }
    assert_eq!(accuracy(&half, &gt, 0.25, dims).unwrap(), 0.5);
    let far = gt.map(|v| v + 10.0 * 0.5657);
    assert_eq!(accuracy(&far, &gt, 0.25, dims).unwrap(), 0.0);
}

#[test]
fn degenerate_box_uses_image_diagonal() {
    let gt = pts([0.5; 6], [0.5; 6]);
    let mut p = gt.clone();
    p.data_mut()[0] += 0.2; // 20 px off, image diagonal 141 px, threshold 35 px
    assert_eq!(accuracy(&p, &gt, 0.25, (100, 100)).unwrap(), 1.0);
    p.data_mut()[0] += 0.2;
    assert!((accuracy(&p, &gt, 0.25, (100, 100)).unwrap() - 5.0 / 6.0).abs() < 1e-15);
}

#[test]
fn report_row_has_five_fields() {
    let gt = pts([0.1, 0.2, 0.3, 0.4, 0.5, 0.5], [0.1, 0.2, 0.3, 0.4, 0.5, 0.1]);
    let r = MetricsReport::compute(&gt, &gt, (24, 32)).unwrap();
    assert_eq!(r, MetricsReport { accuracy: 1.0, wing_loss: 0.0, mae: 0.0, mse: 0.0, n_samples: 1 });
    assert_eq!(r.tsv_row().split('\t').count(), MetricsReport::TSV_HEADER.split('\t').count());
}

#[test]
fn loss_gradients_match_finite_differences() {
    let losses: [(&str, fn(&mut Tape, _, _) -> _); 3] = [
        ("wing", |tp: &mut Tape, p, q| tp.wing_loss(p, q, 10.0, 2.0)),
        ("mae", |tp: &mut Tape, p, q| tp.mae(p, q)),
        ("mse", |tp: &mut Tape, p, q| tp.mse(p, q)),
    ];
    for (name, f) in losses {
        let mut worst = 0.0f64;
        for seed in 0..20 {
            let mut rng = RngStream::new(seed, 3);
            let target = Tensor::randn(vec![2, 2, 6], 1.0, &mut rng);
            // spread the errors across both wing branches
            let pred = Tensor::randn(vec![2, 2, 6], 8.0, &mut rng);
            let err = gradient_check(
                |tp, p| {
                    let q = tp.constant(target.clone());
                    f(tp, p, q)
                },
                &pred,
                1e-5,
            )
            .unwrap();
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "{name}: {worst}");
    }
}

proptest! {
    #[test]
    fn wing_is_symmetric_and_even(v in prop::collection::vec(-30.0f64..30.0, 12), u in prop::collection::vec(-30.0f64..30.0, 12)) {
        let a = t(&[1, 2, 6], &v);
        let b = t(&[1, 2, 6], &u);
        let ab = wing_loss(&a, &b, 10.0, 2.0).unwrap();
        prop_assert!((ab - wing_loss(&b, &a, 10.0, 2.0).unwrap()).abs() < 1e-9);
        for (x, y) in v.iter().zip(&u) {
            prop_assert_eq!(wing1(x - y), wing1(y - x));
        }
    }

    #[test]
    fn mse_bounded_by_max_error_times_mae(v in prop::collection::vec(-2.0f64..2.0, 12)) {
        let a = t(&[1, 2, 6], &v);
        let z = Tensor::<f64>::zeros(vec![1, 2, 6]);
        let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(mse(&a, &z).unwrap() <= max * mae(&a, &z).unwrap() + 1e-12);
    }

    #[test]
    fn zero_only_at_equality(v in prop::collection::vec(-1.0f64..1.0, 12)) {
        let a = t(&[1, 2, 6], &v);
        let z = Tensor::<f64>::zeros(vec![1, 2, 6]);
        let nonzero = v.iter().any(|x| *x != 0.0);
        prop_assert_eq!(wing_loss(&a, &z, 10.0, 2.0).unwrap() > 0.0, nonzero);
        prop_assert_eq!(mae(&a, &z).unwrap() > 0.0, nonzero);
        prop_assert_eq!(mse(&a, &z).unwrap() > 0.0, nonzero);
    }
}

proptest! {
    #[test]
    fn homogeneous_errors_satisfy_the_reconstruction(m in 0.0f64..0.5, signs in prop::collection::vec(any::<bool>(), 12)) {
        let target = Tensor::filled(vec![1, 2, 6], 0.5);
        let v: Vec<f64> = signs.iter().map(|&s| 0.5 + if s { m } else { -m }).collect();
        let pred = t(&[1, 2, 6], &v);
        let w = wing_loss(&pred, &target, 10.0, 2.0).unwrap();
        let closed = 12.0 * 10.0 * (1.0 + mae(&pred, &target).unwrap() / 2.0).ln();
        prop_assert!((w - closed).abs() <= 0.05 * closed.max(1e-12));
    }
}
