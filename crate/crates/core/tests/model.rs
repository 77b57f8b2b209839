use heatmark::autograd::Tape;
use heatmark::checkpoint::read_manifest;
use heatmark::config::Config;
use heatmark::error::Error;
use heatmark::model::{
    ablate_last_block, build_ensemble, build_model, catalog, catalog_ids, Branch, BuiltModel, ModelSpec, Stem,
};
use heatmark::nn::Mode;
use heatmark::rng::RngStream;
use heatmark::tensor::Tensor;

const SMALL: [usize; 3] = [24, 32, 3];

fn build(spec: &ModelSpec, seed: u64) -> BuiltModel {
    build_ensemble(spec, &SMALL, &mut RngStream::new(seed, 1)).unwrap()
}

fn image(seed: u64) -> Tensor {
    Tensor::rand_uniform(SMALL.to_vec(), 0.0, 1.0, &mut RngStream::new(seed, 2))
}

#[test]
fn catalog_maps_table_entries() {
    let c1 = catalog("C-1").unwrap();
    assert_eq!((c1.stem, c1.branch), (Stem::Conv, Branch::None));
    let a4 = catalog("A-4").unwrap();
    assert_eq!((a4.stem, a4.branch), (Stem::AltConvResNeXt, Branch::VisionTransformer));
    let a3 = catalog("A-3").unwrap();
    assert_eq!((a3.stem, a3.branch), (Stem::AltConvResNeXt, Branch::Bahdanau));
    let l3 = catalog("L-3").unwrap();
    assert_eq!((l3.stem, l3.branch), (Stem::AltConvLuong, Branch::Bahdanau));
    let r2 = catalog("R-2").unwrap();
    assert_eq!((r2.stem, r2.branch), (Stem::ResNeXt, Branch::Luong));
    for bad in ["Z-9", "A-5", "A3", "", "A-33"] {
        assert!(matches!(catalog(bad), Err(Error::Lookup { .. })), "{bad}");
    }
    let ids = catalog_ids();
    assert_eq!(ids.len(), 20);
    let mut pairs: Vec<_> = ids.iter().map(|id| catalog(id).unwrap()).map(|s| (s.stem as u8, s.branch as u8)).collect();
    pairs.sort();
    pairs.dedup();
    assert_eq!(pairs.len(), 20);
    for id in &ids {
        assert_eq!(&catalog(id).unwrap().id(), id);
    }
}

#[test]
fn full_scale_root_reaches_120_by_160_by_64() {
    let m: BuiltModel = build_model(&catalog("C-1").unwrap(), &[480, 640, 3], &mut RngStream::new(0, 0)).unwrap();
    assert_eq!(m.root[1].out_shape, vec![120, 160, 64]);
    assert_eq!(m.output_shape(), [2, 6]);
}

#[test]
fn every_catalog_model_emits_two_by_n_finite() {
    for id in catalog_ids() {
        let m = build(&catalog(&id).unwrap(), 3);
        let y = m.predict(&image(4)).unwrap();
        assert_eq!(y.shape(), &[2, 6], "{id}");
        assert!(y.all_finite(), "{id}");
    }
}

#[test]
fn c1_param_count_by_hand() {
    let m = build(&catalog("C-1").unwrap(), 0);
    let root = (3 * 3 * 3 * 16 + 16) + (3 * 3 * 16 * 64 + 64);
    let stem = 3 * (3 * 3 * 64 * 64 + 64);
    let head = 6 * 8 * 64 * 12 + 12;
    assert_eq!(m.param_count(), root + stem + head);
    assert_eq!(m.param_count(), 157_388);
}

#[test]
fn a3_param_count_by_hand() {
    let m = build(&catalog("A-3").unwrap(), 0);
    let root = (3 * 3 * 3 * 16 + 16) + (3 * 3 * 16 * 64 + 64);
    let conv = 3 * 3 * 64 * 64 + 64;
    let path = (64 * 16 + 16) + (3 * 3 * 16 * 16 + 16);
    let stem = 3 * (conv + 4 * path);
    let head = 6 * 8 * 64 * 12 + 12;
    assert_eq!(m.param_count(), root + stem + head);
}

#[test]
fn ensemble_count_identity() {
    for id in ["A-1", "A-2", "A-3", "A-4"] {
        let spec = ModelSpec { ensemble_k: 3, ..catalog(id).unwrap() };
        let e = build(&spec, 5);
        let root: usize = e.root.iter().map(|l| l.param_count()).sum();
        let comp: usize = e.components[0].iter().map(|l| l.param_count()).sum();
        let flat = e.components[0].last().unwrap().out_shape[0];
        let head = 3 * flat * 12 + 12;
        assert_eq!(e.param_count(), root + 3 * comp + head, "{id}");
        assert_eq!(e.components.len(), 3);
        let y = e.predict(&image(6)).unwrap();
        assert_eq!(y.shape(), &[2, 6]);
        assert!(y.all_finite());
    }
}

#[test]
fn single_component_ensemble_equals_singular() {
    let spec = catalog("A-3").unwrap();
    let s: BuiltModel = build_model(&spec, &SMALL, &mut RngStream::new(9, 1)).unwrap();
    let e = build(&ModelSpec { ensemble_k: 1, ..spec }, 9);
    assert_eq!(s, e);
    assert_eq!(s.predict(&image(1)).unwrap(), e.predict(&image(1)).unwrap());
}

#[test]
fn identical_components_give_three_identical_feature_copies() {
    let spec = ModelSpec { ensemble_k: 3, ..catalog("L-2").unwrap() };
    let mut e = build(&spec, 2);
    let first = e.components[0].clone();
    for c in e.components.iter_mut().skip(1) {
        for (l, src) in c.iter_mut().zip(&first) {
            l.params = src.params.clone();
        }
    }
    let mut tape = Tape::new();
    let w = e.bind(&mut tape, false);
    let x = tape.constant(image(3));
    let f = e.forward(&mut tape, &w, x, Mode::Eval, &mut RngStream::new(0, 0)).unwrap();
    let feats: Vec<_> = (0..3).map(|j| tape.value(f.tap(&format!("c{j}.flatten")).unwrap()).clone()).collect();
    assert_eq!(feats[0], feats[1]);
    assert_eq!(feats[0], feats[2]);
}

#[test]
fn ablation_drops_last_block_and_params() {
    for id in catalog_ids() {
        let spec = catalog(&id).unwrap();
        let ab = ablate_last_block(&spec).unwrap();
        assert_eq!(ab.stem_depth, spec.stem_depth - 1);
        let full = build(&spec, 0);
        let cut = build(&ab, 0);
        assert!(cut.param_count() < full.param_count(), "{id}");
        let y = cut.predict(&image(0)).unwrap();
        assert_eq!(y.shape(), &[2, 6]);
        assert!(y.all_finite());
        let per_block = if spec.stem == Stem::Conv || spec.stem == Stem::ResNeXt { 1 } else { 2 };
        let stems = |m: &BuiltModel| m.layers().filter(|l| l.name.starts_with("stem.")).count();
        assert_eq!(stems(&full) - stems(&cut), per_block);
    }
    let shallow = ModelSpec { stem_depth: 1, ..ModelSpec::default() };
    assert!(ablate_last_block(&shallow).is_err());
}

#[test]
fn shape_chain_break_names_the_layer() {
    let spec = ModelSpec { patch: 5, ..catalog("A-4").unwrap() };
    let err = build_ensemble::<f64>(&spec, &SMALL, &mut RngStream::new(0, 0)).unwrap_err();
    match err {
        Error::Config(m) => assert!(m.contains("branch.0"), "{m}"),
        other => panic!("{other}"),
    }
}

#[test]
fn checkpoint_roundtrip_preserves_forward_and_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec { ensemble_k: 3, ..catalog("A-4").unwrap().scaled() };
    let m = build(&spec, 11);
    m.save(dir.path()).unwrap();
    let manifest_total: usize = read_manifest(dir.path()).unwrap().iter().map(|e| e.numel()).sum();
    assert_eq!(manifest_total, m.param_count());
    let back = BuiltModel::load(dir.path()).unwrap();
    assert_eq!(back.param_count(), m.param_count());
    assert_eq!(back.predict(&image(7)).unwrap(), m.predict(&image(7)).unwrap());
    let dir2 = tempfile::tempdir().unwrap();
    back.save(dir2.path()).unwrap();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(dir.path().join(&name)).unwrap();
        let b = std::fs::read(dir2.path().join(&name)).unwrap();
        assert_eq!(a, b, "{name:?}");
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = build(&catalog("C-1").unwrap().scaled(), 0);
    m.save(dir.path()).unwrap();
    let blob = dir.path().join("head.dense.bias.bin");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(BuiltModel::<f64>::load(dir.path()), Err(Error::CorruptCheckpoint(_))));
}

#[test]
fn spec_config_roundtrip() {
    for id in catalog_ids() {
        let spec = ModelSpec { ensemble_k: 3, dropout: 0.25, ..catalog(&id).unwrap().scaled() };
        let mut cfg = Config::new();
        spec.to_config(&mut cfg);
        assert_eq!(ModelSpec::from_config(&cfg).unwrap(), spec);
    }
    let cfg = Config::parse("model.id=A-3\nmodel.scale=desk\nmodel.stem_depth=2").unwrap();
    let spec = ModelSpec::from_config(&cfg).unwrap();
    assert_eq!(spec, ModelSpec { stem_depth: 2, ..catalog("A-3").unwrap().scaled() });
    let bad = Config::parse("model.stem=unet").unwrap();
    let e = ModelSpec::from_config(&bad).unwrap_err().to_string();
    assert!(e.contains("model.stem"), "{e}");
}
