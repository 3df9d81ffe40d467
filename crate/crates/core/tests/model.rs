mod common;

use std::fs;

use common::micro_model;
use mrparse::graph::validate_graph;
use mrparse::graph::Framework;
use mrparse::heads::predict_anchors;
use mrparse::model::{LossWeights, Model, ModelConfig, ModelError, ModelVocabs};
use mrparse::pipeline::{prepare, Instance, Resources};
use mrparse::synth::gen_synthetic;
use mrparse::tensor::no_grad;
use mrparse::train::parse_graph;
use proptest::prelude::*;

fn tiny_model(fw: Framework, seed: u64) -> (Model, Vec<Instance>) {
    let corpus = gen_synthetic(fw, 12, seed);
    let res = Resources::build(fw, &corpus);
    let instances: Vec<Instance> = corpus.iter().map(|(g, c)| prepare(g, c, &res).unwrap()).collect();
    let cfg = ModelConfig::tiny(fw);
    let vocabs = ModelVocabs::build(fw, &instances, 1);
    (Model::new(cfg, vocabs, res, seed), instances)
}

/// Independent reader for the checkpoint layout: magic, `u64` count, then
/// per tensor `u32` name length, name, `u32` rank, `u64` extents, `f64`s.
fn read_checkpoint(bytes: &[u8]) -> Vec<(String, Vec<u64>, Vec<f64>)> {
    assert_eq!(&bytes[..8], b"MRPTENS1");
    let mut at = 8;
    let mut take = |n: usize| {
        let s = &bytes[at..at + n];
        at += n;
        s
    };
    let u32_ = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let u64_ = |b: &[u8]| u64::from_le_bytes(b.try_into().unwrap());
    let count = u64_(take(8));
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u32_(take(4)) as usize;
        let name = String::from_utf8(take(len).to_vec()).unwrap();
        let rank = u32_(take(4)) as usize;
        let shape: Vec<u64> = (0..rank).map(|_| u64_(take(8))).collect();
        let n = shape.iter().product::<u64>() as usize;
        let data = (0..n).map(|_| f64::from_le_bytes(take(8).try_into().unwrap())).collect();
        out.push((name, shape, data));
    }
    assert_eq!(at, bytes.len());
    out
}

#[test]
fn loss_terms_are_finite_and_non_negative() {
    for fw in Framework::ALL {
        let (model, instances) = tiny_model(fw, 1);
        for inst in &instances {
            let parts = no_grad(|| model.loss(inst)).unwrap();
            for (k, v) in parts.values().iter().enumerate() {
                assert!(v.is_finite() && *v >= 0.0, "{fw} {} term {k} = {v}", inst.input.id);
            }
        }
    }
}

#[test]
fn weighted_total_is_linear_in_the_weights() {
    let (model, inst) = micro_model(Framework::Eds, 2);
    let parts = model.loss(&inst).unwrap();
    let [node, edge, label, prop, anchor] = parts.values();
    let w = LossWeights {
        edge: 0.5,
        label: 2.0,
        prop: 0.25,
        anchor: 3.0,
    };
    let expected = node + 0.5 * edge + 2.0 * label + 0.25 * prop + 3.0 * anchor;
    let total = parts.total(&w).unwrap().item();
    assert!((total - expected).abs() <= 1e-12 * expected.abs().max(1.0));
}

#[test]
fn zero_property_weight_leaves_property_heads_untouched() {
    for fw in [Framework::Dm, Framework::Eds] {
        let (model, instances) = tiny_model(fw, 3);
        let inst = &instances[0];
        let grads = |prop: f64| {
            model.store.zero_grad();
            let w = LossWeights {
                prop,
                ..LossWeights::default()
            };
            model.loss(inst).unwrap().total(&w).unwrap().backward().unwrap();
            model
                .store
                .iter()
                .filter(|(name, _)| name.starts_with("prop."))
                .map(|(_, t)| t.grad().unwrap_or_default().iter().map(|g| g.abs()).sum::<f64>())
                .sum::<f64>()
        };
        assert!(grads(1.0) > 0.0, "{fw}");
        assert_eq!(grads(0.0), 0.0, "{fw}");
    }
}

#[test]
fn checkpoints_reload_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for fw in [Framework::Psd, Framework::Ucca] {
        let (model, instances) = tiny_model(fw, 4);
        let path = dir.path().join(fw.as_str());
        model.save(&path).unwrap();
        let bytes = fs::read(path.join("params.bin")).unwrap();
        let entries = read_checkpoint(&bytes);
        assert_eq!(entries.len(), model.store.len());
        for (name, shape, data) in &entries {
            let t = model.store.get(name).unwrap();
            assert_eq!(shape.iter().map(|&d| d as usize).collect::<Vec<_>>(), t.shape());
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(data), bits(&t.to_vec()), "{name}");
        }
        let back = Model::load(&path).unwrap();
        let again = dir.path().join(format!("{}-again", fw.as_str()));
        back.save(&again).unwrap();
        assert_eq!(fs::read(again.join("params.bin")).unwrap(), bytes);
        for inst in &instances {
            assert_eq!(back.predict(&inst.input).unwrap(), model.predict(&inst.input).unwrap());
        }
    }
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = tiny_model(Framework::Dm, 5);
    model.save(dir.path()).unwrap();
    let path = dir.path().join("params.bin");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(Model::load(dir.path()), Err(ModelError::Checkpoint(_))));
}

#[test]
fn untrained_predictions_are_valid_graphs() {
    for fw in Framework::ALL {
        let (model, instances) = tiny_model(fw, 6);
        for inst in &instances {
            let g = parse_graph(&model, &inst.input).unwrap();
            assert_eq!(g.id, inst.input.id);
            assert_eq!(g.framework, fw);
            assert!(validate_graph(&g).is_empty(), "{fw} {}: {:?}", g.id, validate_graph(&g));
        }
    }
}

#[test]
fn framework_mismatch_is_an_error() {
    let (model, _) = tiny_model(Framework::Dm, 7);
    let (_, other) = tiny_model(Framework::Psd, 7);
    assert!(matches!(model.predict(&other[0].input), Err(ModelError::Framework { .. })));
    assert!(matches!(model.loss(&other[0]), Err(ModelError::Framework { .. })));
}

proptest! {
    #[test]
    fn predicted_anchors_are_ordered_and_in_range(
        (n, start, end) in (1usize..12, 1usize..6).prop_flat_map(|(n, m)| {
            let scores = proptest::collection::vec(-5.0f64..5.0, n * m);
            (Just(n), scores.clone(), scores)
        })
    ) {
        let spans = predict_anchors(&start, &end, n);
        prop_assert_eq!(spans.len(), start.len() / n);
        for s in spans {
            prop_assert!(s.start <= s.end && s.end < n);
        }
    }
}
