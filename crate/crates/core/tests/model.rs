use armhand::datapipe::FEATURE_DIM;
use armhand::model::{Arch, Checkpoint, DiscConfig, Discriminator, Fusion, Model, ModelConfig};
use armhand::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(arch: Arch) -> ModelConfig {
    ModelConfig {
        frames: 8,
        d_t: 16,
        d_s: 8,
        layers_t: 1,
        layers_s: 1,
        heads_t: 2,
        heads_s: 2,
        embed_width: 12,
        head_width: 12,
        cnn_width: 12,
        cnn_blocks: 2,
        mlp_ratio: 2,
        ..ModelConfig::desk(arch)
    }
}

fn random_input(frames: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..frames * FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(&[frames, FEATURE_DIM], v).unwrap()
}

/// Gives every zero-initialized parameter random values so that positional
/// embeddings and the regression token actually matter.
fn randomize(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = model.params().names().to_vec();
    for n in names {
        let len = model.params().get(&n).unwrap().numel();
        let v = (0..len).map(|_| rng.random_range(-0.5..0.5)).collect();
        model.params_mut().set_data(&n, v).unwrap();
    }
}

fn set_zero(model: &mut Model, prefix: &str) {
    let names: Vec<String> = model.params().names().iter().filter(|n| n.starts_with(prefix)).cloned().collect();
    assert!(!names.is_empty(), "no parameters under {prefix}");
    for n in names {
        let len = model.params().get(&n).unwrap().numel();
        model.params_mut().set_data(&n, vec![0.0; len]).unwrap();
    }
}

#[test]
fn output_shapes() {
    for arch in [Arch::Cnn, Arch::Ahmt, Arch::Pahmt] {
        let m = Model::new(tiny(arch)).unwrap();
        let y = m.forward(&random_input(8, 1), None).unwrap();
        assert_eq!(y.shape(), &[8, 48, 3]);
        let batch = Tensor::concat(&[random_input(8, 1).unsqueeze(0).unwrap(), random_input(8, 2).unsqueeze(0).unwrap()], 0).unwrap();
        assert_eq!(m.forward(&batch, None).unwrap().shape(), &[2, 8, 48, 3]);
    }
}

#[test]
fn wrong_feature_width_is_shape_error() {
    let m = Model::new(tiny(Arch::Ahmt)).unwrap();
    let x = Tensor::zeros(&[8, FEATURE_DIM - 1]);
    assert!(matches!(m.forward(&x, None), Err(armhand::Error::Shape { .. })));
    let t = Tensor::zeros(&[3, 45, 3]);
    let p = Model::new(tiny(Arch::Pahmt)).unwrap();
    assert!(matches!(p.spatial_encode(&t, None), Err(armhand::Error::Shape { .. })));
}

#[test]
fn config_rejects_indivisible_heads() {
    let c = ModelConfig { d_t: 30, heads_t: 4, ..tiny(Arch::Ahmt) };
    assert!(Model::new(c).is_err());
}

#[test]
fn forwards_are_pure() {
    for arch in [Arch::Cnn, Arch::Ahmt, Arch::Pahmt] {
        let m = Model::new(tiny(arch)).unwrap();
        let x = random_input(8, 3);
        assert_eq!(m.forward(&x, None).unwrap().to_vec(), m.forward(&x, None).unwrap().to_vec());
    }
}

#[test]
fn zero_depth_temporal_encoder_is_embedding_plus_position() {
    let mut m = Model::new(ModelConfig { layers_t: 0, ..tiny(Arch::Ahmt) }).unwrap();
    randomize(&mut m, 4);
    let x = random_input(8, 5);
    let z = m.temporal_encode(&x, None).unwrap();

    // Oracle: two explicit same-padded convolutions then the positional table.
    let p = m.params();
    let conv = |input: &[f64], c_in: usize, name: &str| -> (Vec<f64>, usize) {
        let w = p.get(&format!("{name}.weight")).unwrap();
        let b = p.get(&format!("{name}.bias")).unwrap().to_vec();
        let (k, c_out) = (w.shape()[0], w.shape()[2]);
        let w = w.to_vec();
        let mut out = vec![0.0; 8 * c_out];
        for t in 0..8 {
            for o in 0..c_out {
                let mut s = b[o];
                for dk in 0..k {
                    let src = t as isize + dk as isize - (k as isize - 1) / 2;
                    if !(0..8).contains(&src) {
                        continue;
                    }
                    for i in 0..c_in {
                        s += input[src as usize * c_in + i] * w[(dk * c_in + i) * c_out + o];
                    }
                }
                out[t * c_out + o] = s;
            }
        }
        (out, c_out)
    };
    let (h, c1) = conv(&x.to_vec(), FEATURE_DIM, "temporal.embed.0");
    let gelu = |v: f64| 0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh());
    let h: Vec<f64> = h.into_iter().map(gelu).collect();
    let (e, _) = conv(&h, c1, "temporal.embed.1");
    let pos = p.get("temporal.pos").unwrap().to_vec();
    for ((a, b), c) in z.to_vec().iter().zip(&e).zip(&pos) {
        assert!((a - (b + c)).abs() < 1e-12);
    }
}

#[test]
fn frame_permutation_changes_temporal_output() {
    let mut m = Model::new(tiny(Arch::Ahmt)).unwrap();
    randomize(&mut m, 6);
    let x = random_input(8, 7);
    let perm: Vec<usize> = vec![3, 1, 7, 0, 5, 2, 6, 4];
    let xp = x.index_select(0, &perm).unwrap();
    let z = m.temporal_encode(&x, None).unwrap().index_select(1, &perm).unwrap();
    let zp = m.temporal_encode(&xp, None).unwrap();
    let diff = z.to_vec().iter().zip(zp.to_vec()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-6);
}

#[test]
fn spatial_encoding_is_per_frame_and_position_sensitive() {
    let mut m = Model::new(tiny(Arch::Pahmt)).unwrap();
    randomize(&mut m, 8);
    let frame = random_input(1, 9).reshape(&[1, 46, 3]).unwrap();
    let two = Tensor::concat(&[frame.clone(), frame.clone()], 0).unwrap();
    let out = m.spatial_encode(&two, None).unwrap().to_vec();
    assert_eq!(out.len(), 16);
    assert_eq!(out[..8], out[8..]);

    let swapped = frame.index_select(1, &{
        let mut idx: Vec<usize> = (0..46).collect();
        idx.swap(10, 30);
        idx
    });
    let a = m.spatial_encode(&frame, None).unwrap().to_vec();
    let b = m.spatial_encode(&swapped.unwrap(), None).unwrap().to_vec();
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-6);
}

#[test]
fn zero_fusion_reduces_pahmt_to_ahmt() {
    for fusion in [Fusion::Mean, Fusion::PerFrame] {
        let mut m = Model::new(ModelConfig { fusion, ..tiny(Arch::Pahmt) }).unwrap();
        randomize(&mut m, 10);
        let x = random_input(8, 11);
        let before = m.pahmt_forward(&x, None).unwrap().to_vec();
        assert_ne!(before, m.ahmt_forward(&x, None).unwrap().to_vec());
        set_zero(&mut m, "fusion");
        assert_eq!(m.pahmt_forward(&x, None).unwrap().to_vec(), m.ahmt_forward(&x, None).unwrap().to_vec());
    }
}

#[test]
fn zeroed_residual_branches_make_encoder_identity() {
    let mut m = Model::new(tiny(Arch::Ahmt)).unwrap();
    randomize(&mut m, 12);
    let x = random_input(8, 13);
    for n in ["temporal.block.0.attn.out", "temporal.block.0.mlp.fc2"] {
        set_zero(&mut m, n);
    }
    let deep = m.temporal_encode(&x, None).unwrap().to_vec();
    let mut shallow_cfg = m.config().clone();
    shallow_cfg.layers_t = 0;
    let mut store = armhand::model::ParamStore::new();
    for (n, t) in m.params().iter() {
        if !n.starts_with("temporal.block.") {
            store.insert(n, t.clone(), true).unwrap();
        }
    }
    let shallow = Model::from_params(shallow_cfg, store).unwrap();
    assert_eq!(deep, shallow.temporal_encode(&x, None).unwrap().to_vec());
}

#[test]
fn every_pahmt_group_receives_gradient() {
    let mut m = Model::new(tiny(Arch::Pahmt)).unwrap();
    randomize(&mut m, 14);
    let y = m.forward(&random_input(8, 15), None).unwrap();
    y.square().mean().backward().unwrap();
    for (name, t) in m.params().iter() {
        let g = t.grad().unwrap_or_default();
        let norm: f64 = g.iter().map(|v| v * v).sum();
        assert!(norm > 0.0, "{name} has no gradient");
    }
}

#[test]
fn cnn_receptive_field() {
    let mut m = Model::new(ModelConfig { frames: 16, ..tiny(Arch::Cnn) }).unwrap();
    randomize(&mut m, 16);
    let r = m.receptive_radius();
    assert_eq!(r, 5);
    let x = random_input(16, 17);
    let base = m.forward(&x, None).unwrap().to_vec();
    let t = 3;
    let far = t + r + 1;
    let mut v = x.to_vec();
    for c in 0..FEATURE_DIM {
        v[far * FEATURE_DIM + c] += 1.0;
    }
    let out = m.forward(&Tensor::new(&[16, FEATURE_DIM], v.clone()).unwrap(), None).unwrap().to_vec();
    let row = 48 * 3;
    assert_eq!(base[t * row..(t + 1) * row], out[t * row..(t + 1) * row]);

    let near = t + r;
    let mut v = x.to_vec();
    for c in 0..FEATURE_DIM {
        v[near * FEATURE_DIM + c] += 1.0;
    }
    let out = m.forward(&Tensor::new(&[16, FEATURE_DIM], v).unwrap(), None).unwrap().to_vec();
    assert_ne!(base[t * row..(t + 1) * row], out[t * row..(t + 1) * row]);
}

#[test]
fn cnn_with_zero_weights_outputs_final_bias() {
    let mut m = Model::new(tiny(Arch::Cnn)).unwrap();
    randomize(&mut m, 18);
    let weights: Vec<String> = m.params().names().iter().filter(|n| n.ends_with(".weight")).cloned().collect();
    for n in weights {
        set_zero(&mut m, &n);
    }
    let bias = m.params().get("cnn.output.bias").unwrap().to_vec();
    let y = m.forward(&random_input(8, 19), None).unwrap().to_vec();
    for frame in y.chunks(144) {
        assert_eq!(frame, &bias[..]);
    }
}

#[test]
fn parameter_census_is_additive() {
    for base in [tiny(Arch::Pahmt), ModelConfig::desk(Arch::Pahmt), ModelConfig::paper(Arch::Pahmt)] {
        let p = Model::new(base.clone()).unwrap();
        let a = Model::new(ModelConfig { arch: Arch::Ahmt, ..base }).unwrap();
        let census = p.params().census();
        assert_eq!(p.params().count(), a.params().count() + census["spatial"] + census["fusion"]);
        for (name, t) in a.params().iter() {
            assert_eq!(p.params().get(name).unwrap().to_vec(), t.to_vec(), "{name}");
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for arch in [Arch::Cnn, Arch::Ahmt, Arch::Pahmt] {
        let mut m = Model::new(tiny(arch)).unwrap();
        randomize(&mut m, 20);
        let x = random_input(8, 21);
        let path = dir.path().join(format!("{arch}.ckpt"));
        Checkpoint::new(m.clone(), "abc").save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.skeleton_fingerprint, "abc");
        assert_eq!(back.model.config(), m.config());
        assert_eq!(back.model.params().names(), m.params().names());
        for ((_, a), (_, b)) in back.model.params().iter().zip(m.params().iter()) {
            assert_eq!(a.to_vec(), b.to_vec());
        }
        assert_eq!(back.model.forward(&x, None).unwrap().to_vec(), m.forward(&x, None).unwrap().to_vec());
        assert_eq!(back.model.fingerprint(), m.fingerprint());
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let m = Model::new(tiny(Arch::Cnn)).unwrap();
    let mut bytes = Checkpoint::new(m, "abc").to_bytes();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let err = Checkpoint::from_bytes(&bytes, "model.ckpt").unwrap_err();
    assert!(matches!(err, armhand::Error::Integrity { .. }), "{err}");
    assert!(err.to_string().contains("model.ckpt"));
    assert!(Checkpoint::from_bytes(&bytes[..10], "x").is_err());
}

#[test]
fn discriminator_outputs_probabilities() {
    let d = Discriminator::new(DiscConfig::desk()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let v: Vec<f64> = (0..3 * 8 * 144).map(|_| rng.random_range(-3.0..3.0)).collect();
    let x = Tensor::new(&[3, 8, 48, 3], v).unwrap();
    let p = d.forward(&x).unwrap().to_vec();
    assert_eq!(p.len(), 3);
    assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(p, d.forward(&x).unwrap().to_vec());
}

#[test]
fn init_depends_only_on_seed_and_name() {
    let a = Model::new(tiny(Arch::Ahmt)).unwrap();
    let b = Model::new(tiny(Arch::Ahmt)).unwrap();
    let c = Model::new(ModelConfig { seed: 1, ..tiny(Arch::Ahmt) }).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_ne!(a.fingerprint(), c.fingerprint());
    let w = "temporal.block.0.attn.qkv.weight";
    assert_ne!(a.params().get(w).unwrap().to_vec(), c.params().get(w).unwrap().to_vec());
}
