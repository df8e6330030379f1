use clstx_core::models::{
    self, catalog, cnn_cls_forward, cnn_trans_enc_trace, encoder_layer1_forward, multi_head_attention, predict_proba,
    Mode, ModelConfig, ParameterStore, QkvMode, Variant,
};
use clstx_core::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn stack(seed: u64) -> Tensor {
    random(&mut ChaCha8Rng::seed_from_u64(seed), &[12, 768])
}

#[test]
fn default_shapes_follow_the_architecture() {
    let cfg = ModelConfig::new(Variant::CnnTransEnc, 5);
    let store = ParameterStore::init(&cfg, 1).unwrap();
    let x = stack(2);
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let vx = t.leaf_ref(&x, false);
    let trace = cnn_trans_enc_trace(&mut t, &p, &cfg, vx, &mut Mode::Eval).unwrap();
    for replica in &trace.qkv {
        let block = &replica[0];
        for m in block.maps {
            assert_eq!(t.shape(m), &[4, 382]);
        }
        for m in block.pooled {
            assert_eq!(t.shape(m), &[4, 380]);
        }
        assert_eq!(t.shape(block.out), &[12, 380]);
    }
    for v in trace.qkv_out {
        assert_eq!(t.shape(v), &[12, 380]);
    }
    assert_eq!(t.shape(trace.x0), &[12, 768]);
    assert_eq!(t.shape(trace.layer2.attention.concat), &[12, 380]);
    assert_eq!(t.shape(trace.layer2.z), &[1, 4560]);
    assert_eq!(t.shape(trace.layer2.output), &[1, 320]);
    assert_eq!(t.shape(trace.log_probs), &[1, 5]);
}

#[test]
fn vectorized_attention_is_row_major() {
    let cfg = ModelConfig::new(Variant::CnnTransEnc, 2);
    let store = ParameterStore::init(&cfg, 3).unwrap();
    let x = stack(4);
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let vx = t.leaf_ref(&x, false);
    let trace = cnn_trans_enc_trace(&mut t, &p, &cfg, vx, &mut Mode::Eval).unwrap();
    let concat = t.value(trace.layer2.attention.concat);
    let z = t.value(trace.layer2.z);
    for i in 0..12 {
        for j in 0..380 {
            assert_eq!(z[i * 380 + j], concat[i * 380 + j]);
        }
    }
}

/// Parameter count of the default CNN-Trans-Enc, summed by hand from the
/// architecture: three replicas of three 4x12x5 banks with 4 biases, two
/// attention layers with their projections and norms, a bias-free head.
#[test]
fn default_parameter_count() {
    let (l, dm, hid, out, c) = (5, 380, 768, 320, 2);
    let cnn = 3 * 3 * (4 * 12 * l + 4);
    let layer1 = 3 * dm * dm + dm * hid + 2 * 2 * hid;
    let layer2 = 3 * hid * dm + 3 * dm * dm + 12 * dm * out + 2 * 2 * out;
    let head = out * c;
    let expected = cnn + layer1 + layer2 + head;
    assert_eq!(expected, 3_500_148);
    let cfg = ModelConfig::new(Variant::CnnTransEnc, c);
    let from_catalog: usize = catalog(&cfg).iter().map(|s| s.numel()).sum();
    assert_eq!(from_catalog, expected);
    assert_eq!(ParameterStore::init(&cfg, 0).unwrap().numel(), expected);
}

#[test]
fn baseline_parameter_shapes() {
    let cfg = ModelConfig::new(Variant::CnnCls, 3);
    let store = ParameterStore::init(&cfg, 0).unwrap();
    assert_eq!(store.get("head.w").unwrap().shape(), &[4560, 3]);

    let cfg = ModelConfig::new(Variant::KimCnn, 3);
    assert_eq!(cfg.conv_len(5), 382);
    assert_eq!(cfg.conv_len(10), 380);
    assert_eq!(cfg.conv_len(15), 377);
    assert_eq!(cfg.kim_feature_len(), 380 + 380 + 377);
    let store = ParameterStore::init(&cfg, 0).unwrap();
    assert_eq!(store.get("head.w").unwrap().shape(), &[1137, 3]);

    let cfg = ModelConfig::new(Variant::Softmax, 4);
    let store = ParameterStore::init(&cfg, 0).unwrap();
    assert_eq!(store.numel(), 768 * 4);
}

#[test]
fn every_variant_emits_a_distribution() {
    for variant in Variant::ALL {
        let cfg = ModelConfig::new(variant, 4);
        let store = ParameterStore::init(&cfg, 5).unwrap();
        for seed in 0..3 {
            let probs = predict_proba(&store, &cfg, &stack(seed)).unwrap();
            assert_eq!(probs.len(), 4);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6, "{variant}");
        }
    }
}

#[test]
fn zero_inputs_give_uniform_baselines() {
    let zero = Tensor::zeros(&[12, 768]);
    for variant in [Variant::CnnCls, Variant::KimCnn] {
        let cfg = ModelConfig::new(variant, 4);
        let store = ParameterStore::init(&cfg, 6).unwrap();
        let probs = predict_proba(&store, &cfg, &zero).unwrap();
        assert!(probs.iter().all(|p| (p - 0.25).abs() < 1e-12), "{variant}: {probs:?}");
    }
    let cfg = ModelConfig::new(Variant::Softmax, 3);
    let mut store = ParameterStore::init(&cfg, 6).unwrap();
    store.get_mut("head.w").unwrap().data_mut().fill(0.0);
    let probs = predict_proba(&store, &cfg, &stack(1)).unwrap();
    assert!(probs.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
}

#[test]
fn zero_input_cnn_block_is_zero() {
    let cfg = ModelConfig::new(Variant::CnnCls, 2);
    let store = ParameterStore::init(&cfg, 7).unwrap();
    let x = Tensor::zeros(&[12, 768]);
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let vx = t.leaf_ref(&x, false);
    let block = cnn_cls_forward(&mut t, &p, "cnn", &cfg, vx, &mut Mode::Eval).unwrap();
    assert_eq!(t.shape(block.out), &[12, 380]);
    assert!(t.value(block.out).iter().all(|&v| v == 0.0));
}

#[test]
fn softmax_head_matches_direct_formula() {
    let cfg = ModelConfig::new(Variant::Softmax, 3);
    let store = ParameterStore::init(&cfg, 8).unwrap();
    let x = stack(9);
    let w = store.get("head.w").unwrap();
    let last = &x.data()[11 * 768..];
    let logits: Vec<f64> = (0..3).map(|c| (0..768).map(|i| last[i] * w.at(i, c)).sum()).collect();
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    let probs = predict_proba(&store, &cfg, &x).unwrap();
    for c in 0..3 {
        assert!((probs[c] - logits[c].exp() / z).abs() < 1e-12);
    }
}

#[test]
fn permuting_layers_changes_cnn_trans_enc() {
    let cfg = ModelConfig::new(Variant::CnnTransEnc, 3);
    let store = ParameterStore::init(&cfg, 10).unwrap();
    let x = stack(11);
    let mut rows: Vec<&[f64]> = x.data().chunks(768).collect();
    rows.reverse();
    let permuted = Tensor::from_rows(&rows);
    let a = predict_proba(&store, &cfg, &x).unwrap();
    let b = predict_proba(&store, &cfg, &permuted).unwrap();
    assert!(a.iter().zip(&b).any(|(p, q)| (p - q).abs() > 1e-9));
}

#[test]
fn trans_enc_differs_from_cnn_trans_enc() {
    let x = stack(12);
    let outs: Vec<Vec<f64>> = [Variant::CnnTransEnc, Variant::TransEnc]
        .iter()
        .map(|&v| {
            let cfg = ModelConfig::new(v, 3);
            predict_proba(&ParameterStore::init(&cfg, 13).unwrap(), &cfg, &x).unwrap()
        })
        .collect();
    assert!(outs[0].iter().zip(&outs[1]).any(|(p, q)| (p - q).abs() > 1e-9));
}

#[test]
fn trans_enc_identical_rows_attend_uniformly() {
    let cfg = ModelConfig::new(Variant::TransEnc, 3);
    let mut store = ParameterStore::init(&cfg, 14).unwrap();
    let w = store.get("proj.w_q").unwrap().clone();
    *store.get_mut("proj.w_k").unwrap() = w.clone();
    *store.get_mut("proj.w_v").unwrap() = w;
    let row: Vec<f64> = stack(15).data()[..768].to_vec();
    let x = Tensor::from_rows(&vec![row; 12]);
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let vx = t.leaf_ref(&x, false);
    let q = t.matmul(vx, p.get("proj.w_q")).unwrap();
    let att = multi_head_attention(&mut t, &p, "enc1", &cfg, q, q, q, 1).unwrap();
    for &w in &att.weights {
        assert!(t.value(w).iter().all(|a| (a - 1.0 / 12.0).abs() < 1e-12));
    }
    let probs = predict_proba(&store, &cfg, &x).unwrap();
    let mut rows: Vec<&[f64]> = x.data().chunks(768).collect();
    rows.rotate_left(5);
    assert_eq!(probs, predict_proba(&store, &cfg, &Tensor::from_rows(&rows)).unwrap());
}

#[test]
fn attention_rows_are_convex_weights() {
    let cfg = ModelConfig::new(Variant::CnnTransEnc, 2);
    let store = ParameterStore::init(&cfg, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (q, k) = (random(&mut rng, &[12, 380]), random(&mut rng, &[12, 380]));
    let v_row = random(&mut rng, &[1, 380]);
    let v = Tensor::from_rows(&[v_row.data(); 12]);
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let (vq, vk, vv) = (t.constant(q), t.constant(k), t.constant(v));
    let att = multi_head_attention(&mut t, &p, "enc1", &cfg, vq, vk, vv, 1).unwrap();
    assert_eq!(att.weights.len(), 20);
    for &w in &att.weights {
        for row in t.value(w).chunks(12) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
    // identical value rows: every output row is the projected value row
    let concat = t.value(att.concat);
    let wv = store.get("enc1.w_v").unwrap();
    for j in 0..380 {
        let expected: f64 = (0..380).map(|i| v_row.data()[i] * wv.at(i, j)).sum();
        for r in 0..12 {
            assert!((concat[r * 380 + j] - expected).abs() < 1e-9);
        }
    }
}

#[test]
fn single_head_matches_direct_attention() {
    let cfg = ModelConfig {
        d_model: 8,
        heads: 1,
        d_k: 8,
        ..ModelConfig::new(Variant::TransEnc, 2)
    };
    let store = ParameterStore::init(&cfg, 18).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let (q, k, v) = (
        random(&mut rng, &[5, 8]),
        random(&mut rng, &[5, 8]),
        random(&mut rng, &[5, 8]),
    );
    let proj = |x: &Tensor, w: &Tensor| -> Vec<Vec<f64>> {
        (0..5)
            .map(|r| (0..8).map(|j| (0..8).map(|i| x.at(r, i) * w.at(i, j)).sum()).collect())
            .collect()
    };
    let qp = proj(&q, store.get("enc1.w_q").unwrap());
    let kp = proj(&k, store.get("enc1.w_k").unwrap());
    let vp = proj(&v, store.get("enc1.w_v").unwrap());
    let mut expected = vec![0.0; 40];
    for r in 0..5 {
        let scores: Vec<f64> = (0..5)
            .map(|s| (0..8).map(|j| qp[r][j] * kp[s][j]).sum::<f64>() / 8f64.sqrt())
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        for s in 0..5 {
            let a = (scores[s] - max).exp() / z;
            for j in 0..8 {
                expected[r * 8 + j] += a * vp[s][j];
            }
        }
    }
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let (vq, vk, vv) = (t.constant(q), t.constant(k), t.constant(v));
    let att = multi_head_attention(&mut t, &p, "enc1", &cfg, vq, vk, vv, 1).unwrap();
    for (a, b) in t.value(att.concat).iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn layer1_residual_matters_and_rows_are_normalized() {
    let cfg = ModelConfig::new(Variant::TransEnc, 2);
    let store = ParameterStore::init(&cfg, 20).unwrap();
    let x = stack(21);
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let vx = t.leaf_ref(&x, false);
    let q = t.matmul(vx, p.get("proj.w_q")).unwrap();
    let k = t.matmul(vx, p.get("proj.w_k")).unwrap();
    let v = t.matmul(vx, p.get("proj.w_v")).unwrap();
    let x0 = encoder_layer1_forward(&mut t, &p, &cfg, vx, q, k, v, 1).unwrap();
    assert_eq!(t.shape(x0), &[12, 768]);
    for row in t.value(x0).chunks(768) {
        assert!((row.iter().sum::<f64>() / 768.0).abs() < 1e-6);
    }

    // the same layer with the residual removed
    let att = multi_head_attention(&mut t, &p, "enc1", &cfg, q, k, v, 1).unwrap();
    let m = t.matmul(att.concat, p.get("enc1.w_o")).unwrap();
    let a = t
        .layer_norm(m, p.get("enc1.ln1.gain"), p.get("enc1.ln1.shift"), 1e-5)
        .unwrap();
    let th = t.tanh(a).unwrap();
    let s = t.add(a, th).unwrap();
    let ablated = t
        .layer_norm(s, p.get("enc1.ln2.gain"), p.get("enc1.ln2.shift"), 1e-5)
        .unwrap();
    let diff = t
        .value(x0)
        .iter()
        .zip(t.value(ablated))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff > 1e-3, "{diff}");
}

#[test]
fn layer2_output_is_finite_across_seeds() {
    let cfg = ModelConfig::new(Variant::CnnTransEnc, 2);
    let store = ParameterStore::init(&cfg, 22).unwrap();
    let xs: Vec<Tensor> = (0..100).map(|s| stack(1000 + s)).collect();
    let batch = models::stack_batch(&xs).unwrap();
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let vx = t.leaf_ref(&batch, false);
    let trace = cnn_trans_enc_trace(&mut t, &p, &cfg, vx, &mut Mode::Eval).unwrap();
    assert_eq!(t.shape(trace.layer2.output), &[100, 320]);
    assert!(t.value(trace.layer2.output).iter().all(|v| v.is_finite()));
}

#[test]
fn batched_forward_matches_single_samples() {
    let xs: Vec<Tensor> = (0..3).map(|s| stack(30 + s)).collect();
    for variant in Variant::ALL {
        let cfg = ModelConfig::new(variant, 3);
        let store = ParameterStore::init(&cfg, 31).unwrap();
        let batch = models::stack_batch(&xs).unwrap();
        let mut t = Tape::new();
        let p = store.bind(&mut t, false);
        let vx = t.leaf_ref(&batch, false);
        let lp = models::forward(&mut t, &p, &cfg, vx, &mut Mode::Eval).unwrap();
        assert_eq!(t.shape(lp), &[3, 3]);
        for (i, x) in xs.iter().enumerate() {
            let single = predict_proba(&store, &cfg, x).unwrap();
            for (c, s) in single.iter().enumerate() {
                let batched = t.value(lp)[i * 3 + c].exp();
                assert!((batched - s).abs() < 1e-12, "{variant}");
            }
        }
    }
}

#[test]
fn evaluation_is_deterministic_and_training_mode_is_not() {
    let cfg = ModelConfig::new(Variant::CnnTransEnc, 2);
    let store = ParameterStore::init(&cfg, 23).unwrap();
    let x = stack(24);
    assert_eq!(
        predict_proba(&store, &cfg, &x).unwrap(),
        predict_proba(&store, &cfg, &x).unwrap()
    );

    let run = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::new();
        let p = store.bind(&mut t, false);
        let vx = t.leaf_ref(&x, false);
        let lp = models::forward(&mut t, &p, &cfg, vx, &mut Mode::Train(&mut rng)).unwrap();
        t.value(lp).to_vec()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn literal_mode_pads_a_zero_row() {
    let cfg = ModelConfig {
        qkv_mode: QkvMode::Literal,
        ..ModelConfig::new(Variant::CnnCls, 2)
    };
    let store = ParameterStore::init(&cfg, 25).unwrap();
    assert_eq!(store.get("cnn.h.w").unwrap().shape(), &[1, 4, 5]);
    let x = stack(26);
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let vx = t.leaf_ref(&x, false);
    let block = cnn_cls_forward(&mut t, &p, "cnn", &cfg, vx, &mut Mode::Eval).unwrap();
    for m in block.maps {
        assert_eq!(t.shape(m), &[4, 382]);
        assert!(t.value(m)[3 * 382..].iter().all(|&v| v == 0.0));
    }
    assert_eq!(t.shape(block.out), &[12, 380]);
}

#[test]
fn replicas_have_independent_parameters() {
    let cfg = ModelConfig::new(Variant::CnnTransEnc, 2);
    let store = ParameterStore::init(&cfg, 27).unwrap();
    let q = store.get("cnn_q.h.w").unwrap();
    let k = store.get("cnn_k.h.w").unwrap();
    assert_eq!(q.shape(), &[4, 12, 5]);
    assert_ne!(q, k);
}

#[test]
fn config_validation() {
    let bad = ModelConfig {
        heads: 7,
        ..ModelConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = ModelConfig {
        d_model: 383,
        heads: 383,
        d_k: 1,
        ..ModelConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = ModelConfig {
        outdim: 1,
        n_classes: 2,
        ..ModelConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = ModelConfig {
        dropout: 1.0,
        ..ModelConfig::default()
    };
    assert!(bad.validate().is_err());
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        assert_eq!(Variant::from_id(v.id()), Some(v));
    }
    assert!("bert".parse::<Variant>().is_err());
}
