mod common;

use trisleep_core::{Branch, CoreError, ModelConfig, Schedule, TransformerLayer};
use trisleep_numcore::{gradcheck, Graph, NumError, ParamStore, SeedStream, Tensor};
use trisleep_sync::Modality;

fn layer(hidden: usize, heads: usize) -> (ParamStore, TransformerLayer) {
    let mut cfg = ModelConfig::toy().branches.audio;
    cfg.hidden = hidden;
    cfg.num_heads = heads;
    cfg.intermediate = 2 * hidden;
    cfg.dropout = 0.0;
    let mut store = ParamStore::new();
    let l = TransformerLayer::new(&mut store, SeedStream::new(11), "l", &cfg, false, 1e-5).unwrap();
    (store, l)
}

#[test]
fn schedule_presets_select_literal_layers() {
    let cases: [(&str, Vec<usize>); 7] = [
        ("none", vec![]),
        ("mod2", vec![1, 3, 5, 7, 9, 11]),
        ("mod4", vec![1, 5, 9]),
        ("mod6", vec![1, 7]),
        ("first4", vec![0, 1, 2, 3]),
        ("mid4", vec![4, 5, 6, 7]),
        ("last4", vec![8, 9, 10, 11]),
    ];
    for (name, layers) in cases {
        let s: Schedule = name.parse().unwrap();
        assert_eq!(s.cross_layers(12), layers, "{name}");
        assert_eq!(s.to_string(), name);
    }
    assert!("mod3".parse::<Schedule>().is_err());
    assert!(Schedule::Range(8, 12).validate(2).is_err());
    assert!(Schedule::Modulo(4).validate(2).is_ok());
}

#[test]
fn single_token_attention_is_one() {
    let (store, l) = layer(8, 2);
    let mut g = Graph::<f32>::inference(store.values());
    let h = g.constant(common::random_tensor(&[1, 8], 1, 1.0)).unwrap();
    for p in l.attention_probs(&mut g, &h, &h).unwrap() {
        assert_eq!(p.value().data(), &[1.0]);
    }
}

#[test]
fn zero_queries_average_values() {
    let (mut store, l) = layer(8, 2);
    let wq = store.get_mut(l.wq.weight);
    wq.value = Tensor::zeros(wq.value.shape());
    let h = common::random_tensor(&[5, 8], 2, 1.0);
    let mut g = Graph::<f64>::inference(store.values());
    let hv = g.constant(h.cast()).unwrap();
    for p in l.attention_probs(&mut g, &hv, &hv).unwrap() {
        assert!(p.value().data().iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }
    let mixed = l.attend(&mut g, &hv, &hv).unwrap();
    let v = l.wv.forward(&mut g, &hv).unwrap();
    let mean = g.mean_rows(&v).unwrap();
    for r in 0..5 {
        for c in 0..8 {
            assert!((mixed.value().at2(r, c) - mean.value().at2(0, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_rows_are_stochastic() {
    let (store, l) = layer(16, 4);
    let mut g = Graph::<f32>::inference(store.values());
    let h = g.constant(common::random_tensor(&[9, 16], 3, 3.0)).unwrap();
    let kv = g.constant(common::random_tensor(&[9, 16], 4, 3.0)).unwrap();
    for p in l.attention_probs(&mut g, &h, &kv).unwrap() {
        for r in 0..9 {
            let s: f32 = p.value().row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn tiny_layer_gradients() {
    let (store, l) = layer(8, 2);
    let h = common::random_tensor(&[3, 8], 5, 1.0);
    let target = common::random_tensor(&[3, 8], 6, 1.0);
    let report = gradcheck(&store, &Default::default(), |g| {
        let hv = g.constant(h.cast())?;
        let y = l.self_attention(g, &hv).map_err(|e| NumError::Config(e.to_string()))?;
        g.mse(&y, target.cast())
    })
    .unwrap();
    assert!(report.all_passed(), "{}", report.table());
}

#[test]
fn head_permutation_symmetry() {
    let (store, l) = layer(8, 2);
    let mut permuted = store.clone();
    let hd = 4;
    // Swap the two heads' column blocks in Q/K/V and row blocks in the output projection.
    for id in [l.wq.weight, l.wk.weight, l.wv.weight] {
        let w = &mut permuted.get_mut(id).value;
        let orig = w.clone();
        for r in 0..8 {
            for c in 0..8 {
                let src = (c + hd) % 8;
                w.data_mut()[r * 8 + c] = orig.at2(r, src);
            }
        }
    }
    let wo = &mut permuted.get_mut(l.wo.weight).value;
    let orig = wo.clone();
    for r in 0..8 {
        wo.data_mut()[r * 8..(r + 1) * 8].copy_from_slice(orig.row((r + hd) % 8));
    }
    let h = common::random_tensor(&[6, 8], 7, 1.0);
    let run = |s: &ParamStore| {
        let mut g = Graph::<f64>::inference(s.values());
        let hv = g.constant(h.cast()).unwrap();
        l.self_attention(&mut g, &hv).unwrap().value().clone()
    };
    let (a, b) = (run(&store), run(&permuted));
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn toy_branch(modality: Modality) -> (ParamStore, Branch) {
    let mut cfg = ModelConfig::toy().branches.get(modality).clone();
    cfg.dropout = 0.0;
    let mut store = ParamStore::new();
    let b = Branch::new(&mut store, SeedStream::new(1), &cfg, false, 1e-5, true).unwrap();
    (store, b)
}

#[test]
fn branch_preserves_shape_and_is_deterministic() {
    let (store, b) = toy_branch(Modality::Imu);
    let x = common::random_tensor(&[20, 8], 8, 1.0);
    let run = || {
        let mut g = Graph::<f32>::inference(store.values());
        let xv = g.constant(x.clone()).unwrap();
        let cross = vec![None, Some(xv.clone())];
        b.forward(&mut g, &xv, Schedule::Modulo(2), &cross).unwrap().value().clone()
    };
    let y = run();
    assert_eq!(y.shape(), &[20, 8]);
    assert_eq!(y, run());
}

#[test]
fn missing_cross_input_is_a_config_error() {
    let (store, b) = toy_branch(Modality::Imu);
    let mut g = Graph::<f32>::inference(store.values());
    let xv = g.constant(common::random_tensor(&[4, 8], 9, 1.0)).unwrap();
    let err = b.forward(&mut g, &xv, Schedule::Modulo(4), &[]).unwrap_err();
    assert!(matches!(err, CoreError::Config(_)), "{err}");
    // With no cross layers the schedule "none" is the plain encoder.
    assert!(b.forward(&mut g, &xv, Schedule::None, &[]).is_ok());
}
