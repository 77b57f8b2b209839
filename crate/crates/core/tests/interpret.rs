use heatmark::data::synth_generate;
use heatmark::interpret::*;
use heatmark::model::{build_model, catalog, BuiltModel, ModelSpec};
use heatmark::rng::RngStream;
use heatmark::tensor::Tensor;
use heatmark::training::{train, TrainConfig};
use proptest::prelude::*;

const SHAPE: [usize; 3] = [24, 32, 3];

fn spec() -> ModelSpec {
    ModelSpec { root_channels: (4, 8), stem_width: 8, ..catalog("A-1").unwrap().scaled() }
}

fn trained() -> BuiltModel {
    let d = synth_generate(20, (24, 32), &mut RngStream::new(3, 0)).unwrap();
    let m = build_model(&spec(), &SHAPE, &mut RngStream::new(3, 1)).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 5, ..Default::default() };
    train(m, &d, &d, &cfg).unwrap().model
}

fn linear(w: &Tensor, step_size: f64, steps: usize, seed: u64) -> Dream {
    let cfg = DreamConfig { steps, step_size, seed, ..Default::default() };
    ascend(&SHAPE, &cfg, |tape, x| {
        let wv = tape.constant(w.clone());
        let p = tape.mul(x, wv)?;
        Ok(tape.sum(p))
    })
    .unwrap()
}

#[test]
fn zero_weights_stall_on_the_initial_noise() {
    let mut m = build_model::<f64>(&spec(), &SHAPE, &mut RngStream::new(1, 1)).unwrap();
    m.params_mut().for_each(|p| p.data_mut().iter_mut().for_each(|v| *v = 0.0));
    let cfg = DreamConfig { layer: "stem.0".into(), steps: 50, ..Default::default() };
    let d = activation_maximize(&m, &cfg).unwrap();
    assert_eq!(d.status, DreamStatus::Stalled { step: STALL_STEPS });
    let noise = Tensor::<f64>::rand_uniform(SHAPE.to_vec(), 0.4, 0.6, &mut RngStream::new(0, NOISE_STREAM));
    assert_eq!(d.image, noise);
    assert!(d.trace.iter().all(|&v| v == 0.0));
}

#[test]
fn linear_objective_moves_along_its_weights() {
    let w = Tensor::randn(SHAPE.to_vec(), 1.0, &mut RngStream::new(2, 0));
    let norm = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    for steps in 1..=4 {
        let d = linear(&w, 1e-3, steps, 4);
        let init = Tensor::<f64>::rand_uniform(SHAPE.to_vec(), 0.4, 0.6, &mut RngStream::new(4, NOISE_STREAM));
        for ((x, x0), wi) in d.image.data().iter().zip(init.data()).zip(w.data()) {
            let expect = steps as f64 * 1e-3 * wi / (norm + 1e-8);
            assert!((x - x0 - expect).abs() < 1e-12, "{} vs {expect}", x - x0);
        }
        let gain = steps as f64 * 1e-3 * norm * norm / (norm + 1e-8);
        assert!((d.trace[steps] - d.trace[0] - gain).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn small_steps_never_lower_a_linear_objective(seed in 0u64..1000, step in 1e-5f64..1e-3) {
        let w = Tensor::randn(SHAPE.to_vec(), 1.0, &mut RngStream::new(seed, 7));
        let d = linear(&w, step, 20, seed);
        prop_assert!(d.trace.windows(2).all(|p| p[1] >= p[0]));
        prop_assert!(d.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn trained_model_dream_increases_activation() {
    let m = trained();
    let cfg = DreamConfig { layer: "stem.0".into(), channel: 1, steps: 50, seed: 5, ..Default::default() };
    let d = activation_maximize(&m, &cfg).unwrap();
    assert_eq!(d.status, DreamStatus::Completed);
    assert_eq!(d.trace.len(), 51);
    assert!(d.trace[50] > d.trace[0], "{:?}", d.trace);
    assert!(d.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(d, activation_maximize(&m, &cfg).unwrap());

    let dir = tempfile::tempdir().unwrap();
    d.write(dir.path()).unwrap();
    let trace = std::fs::read_to_string(dir.path().join(TRACE_FILE)).unwrap();
    assert_eq!(trace.lines().count(), 52);
    assert!(dir.path().join(IMAGE_FILE).exists());
}

#[test]
fn bad_targets_are_rejected() {
    let m = build_model::<f64>(&spec(), &SHAPE, &mut RngStream::new(1, 1)).unwrap();
    let bad_layer = DreamConfig { layer: "stem.99".into(), ..Default::default() };
    assert!(activation_maximize(&m, &bad_layer).is_err());
    let bad_channel = DreamConfig { channel: 999, ..Default::default() };
    assert!(activation_maximize(&m, &bad_channel).is_err());
    assert!(activation_maximize(&m, &DreamConfig { steps: 0, ..Default::default() }).is_err());
    assert!(activation_maximize(&m, &DreamConfig { step_size: 0.0, ..Default::default() }).is_err());
}
