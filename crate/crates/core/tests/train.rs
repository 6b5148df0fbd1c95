use armhand::datapipe::{preprocess, synthesize, windows_for_clip, SynthConfig, Window};
use armhand::kinematics::{fk_tensor, Camera, Skeleton};
use armhand::model::{Arch, DiscConfig, Discriminator, ModelConfig};
use armhand::tensor::Tensor;
use armhand::train::{
    loss_fk, loss_gan_step, loss_l1, loss_smooth, make_batch, run, Adam, AdamConfig, Event, Mode, StepLosses,
    TrainConfig, TrainState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const F: usize = 8;

fn tiny_model(arch: Arch) -> ModelConfig {
    ModelConfig {
        frames: F,
        d_t: 16,
        d_s: 8,
        layers_t: 1,
        layers_s: 1,
        heads_t: 2,
        heads_s: 2,
        embed_width: 12,
        head_width: 12,
        cnn_width: 12,
        cnn_blocks: 1,
        mlp_ratio: 2,
        ..ModelConfig::desk(arch)
    }
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        batch_size: 3,
        epochs: 4,
        disc: DiscConfig {
            widths: vec![8, 8],
            ..DiscConfig::desk()
        },
        ..TrainConfig::desk()
    }
}

fn windows(skel: &Skeleton) -> Vec<Window> {
    let cfg = SynthConfig {
        sequences: 2,
        frames: 20,
        seed: 3,
        ..SynthConfig::default()
    };
    let clips = synthesize(&cfg, skel, &Camera::facing_subject(3.0)).unwrap();
    let mut out = Vec::new();
    for (i, (m, k)) in clips.iter().enumerate() {
        out.extend(windows_for_clip(i, m, &preprocess(k), F, 4).unwrap());
    }
    out
}

fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

#[test]
fn l1_examples() {
    let a = random(&[4, 48, 3], 1, 1.0);
    assert_eq!(loss_l1(&a, &a).unwrap().item(), 0.0);
    let shifted = a.add_scalar(0.5);
    assert!((loss_l1(&shifted, &a).unwrap().item() - 0.5).abs() < 1e-12);
    let b = random(&[4, 48, 3], 2, 1.0);
    let oracle: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel() as f64;
    assert!((loss_l1(&a, &b).unwrap().item() - oracle).abs() < 1e-12);
    assert!(loss_l1(&a, &random(&[3, 48, 3], 2, 1.0)).is_err());
}

#[test]
fn smooth_examples() {
    let still = Tensor::new(&[5, 48, 3], [0.3; 5 * 144].to_vec()).unwrap();
    assert_eq!(loss_smooth(&still).unwrap().item(), 0.0);
    let c = -0.07;
    let ramp: Vec<f64> = (0..5).flat_map(|t| std::iter::repeat_n(0.2 + c * t as f64, 144)).collect();
    let ramp = Tensor::new(&[5, 48, 3], ramp).unwrap();
    assert!((loss_smooth(&ramp).unwrap().item() - c.abs()).abs() < 1e-12);
    assert!(loss_smooth(&random(&[1, 48, 3], 3, 1.0)).is_err());

    let x = random(&[6, 48, 3], 4, 1.0);
    let mut perm: Vec<usize> = (0..48).collect();
    perm.reverse();
    let y = x.index_select(1, &perm).unwrap();
    assert!((loss_smooth(&x).unwrap().item() - loss_smooth(&y).unwrap().item()).abs() < 1e-12);

    let batched = Tensor::concat(&[x.unsqueeze(0).unwrap(), x.unsqueeze(0).unwrap()], 0).unwrap();
    assert!((loss_smooth(&batched).unwrap().item() - loss_smooth(&x).unwrap().item()).abs() < 1e-12);
}

#[test]
fn fk_loss_examples() {
    let skel = Skeleton::default_rest();
    let rot = random(&[3, 48, 3], 5, 0.5);
    let pos = fk_tensor(&skel, &rot).unwrap();
    assert!(loss_fk(&rot, &pos, &skel).unwrap().item() < 1e-10);

    // A half turn of the left shoulder about z moves every point of the left
    // chain by twice its distance from the z axis through the shoulder.
    let identity = Tensor::zeros(&[1, 48, 3]);
    let shoulder = skel.arm_of(armhand::kinematics::Side::Left)[0];
    let mut v = vec![0.0; 144];
    v[shoulder * 3 + 2] = std::f64::consts::PI;
    let turned = Tensor::new(&[1, 48, 3], v).unwrap();
    let target = fk_tensor(&skel, &turned).unwrap();
    let rest = fk_tensor(&skel, &identity).unwrap().to_vec();
    let s = &rest[shoulder * 3..shoulder * 3 + 3];
    let side = skel.hand_of(armhand::kinematics::Side::Left).iter().copied().chain(skel.arm_of(armhand::kinematics::Side::Left));
    let mut expected = 0.0;
    for j in side {
        let p = &rest[j * 3..j * 3 + 3];
        let d = ((p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2)).sqrt();
        expected += 2.0 * d;
    }
    expected /= 48.0;
    assert!((loss_fk(&identity, &target, &skel).unwrap().item() - expected).abs() < 1e-10);
}

fn constant_disc() -> Discriminator {
    let mut d = Discriminator::new(DiscConfig::desk()).unwrap();
    let len = d.params().get("disc.out.weight").unwrap().numel();
    d.params_mut().set_data("disc.out.weight", vec![0.0; len]).unwrap();
    d
}

#[test]
fn gan_loss_closed_form_at_half() {
    let d = constant_disc();
    let real = random(&[2, F, 48, 3], 6, 1.0);
    let fake = random(&[2, F, 48, 3], 7, 1.0).tracked();
    let (gen, disc) = loss_gan_step(&d, &real, &fake).unwrap();
    assert!((disc.item() - 4f64.ln()).abs() < 1e-12);
    assert!((gen.item() - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn disc_loss_never_reaches_generator() {
    let skel = Skeleton::default_rest();
    let w = windows(&skel);
    let batch = make_batch(&w.iter().take(2).collect::<Vec<_>>(), &skel, Mode::Ah2ah).unwrap();
    let model = armhand::model::Model::new(tiny_model(Arch::Ahmt)).unwrap();
    let d = Discriminator::new(DiscConfig::desk()).unwrap();
    let fake = model.forward(&batch.features, None).unwrap();
    let (_, disc) = loss_gan_step(&d, &batch.targets, &fake).unwrap();
    disc.backward().unwrap();
    for (name, t) in model.params().iter() {
        assert!(t.grad().unwrap_or_default().iter().all(|&g| g == 0.0), "{name}");
    }
    assert!(d.params().iter().any(|(_, t)| t.grad().unwrap_or_default().iter().any(|&g| g != 0.0)));
}

#[test]
fn separated_discriminator_hits_the_floor() {
    let mut d = Discriminator::new(DiscConfig::desk()).unwrap();
    let names = d.params().names().to_vec();
    for n in names {
        let len = d.params().get(&n).unwrap().numel();
        d.params_mut().set_data(&n, vec![0.0; len]).unwrap();
    }
    // The score is then sigmoid(bias) ≈ 1 for every input.
    d.params_mut().set_data("disc.out.bias", vec![60.0]).unwrap();
    let x = random(&[2, F, 48, 3], 8, 1.0);
    let (_, disc_loss) = loss_gan_step(&d, &x, &x).unwrap();
    // log(1 − D(fake)) is floored at 1e-7.
    assert!((disc_loss.item() - (-(1e-7f64).ln())).abs() < 1e-9);
}

#[test]
fn weighted_total_matches_components() {
    let skel = Skeleton::default_rest();
    let w = windows(&skel);
    let batch = make_batch(&w.iter().take(3).collect::<Vec<_>>(), &skel, Mode::Ah2ah).unwrap();
    let pred = random(&[3, F, 48, 3], 9, 0.4).tracked();
    let d = Discriminator::new(DiscConfig::desk()).unwrap();
    let cfg = TrainConfig::paper();
    assert_eq!((cfg.lambda, cfg.beta, cfg.gamma), (0.05, 1.0, 1.0));
    let l = StepLosses::compute(&cfg, &pred, &batch, &skel, &d).unwrap();
    let sum = loss_l1(&pred, &batch.targets).unwrap().item()
        + 1.0 * loss_smooth(&pred).unwrap().item()
        + 1.0 * loss_fk(&pred, &batch.positions, &skel).unwrap().item()
        + 0.05 * loss_gan_step(&d, &batch.targets, &pred).unwrap().0.item();
    assert!((l.total.item() - sum).abs() < 1e-12);

    let only_l1 = TrainConfig {
        smooth: false,
        fk: false,
        gan: false,
        ..cfg
    };
    let l = StepLosses::compute(&only_l1, &pred, &batch, &skel, &d).unwrap();
    assert_eq!(l.total.item(), loss_l1(&pred, &batch.targets).unwrap().item());
    assert!(l.smooth.is_none() && l.fk.is_none() && l.gan_gen.is_none());
}

#[test]
fn every_enabled_term_moves_the_generator() {
    let skel = Skeleton::default_rest();
    let w = windows(&skel);
    let batch = make_batch(&w.iter().take(2).collect::<Vec<_>>(), &skel, Mode::Ah2ah).unwrap();
    let model = armhand::model::Model::new(tiny_model(Arch::Pahmt)).unwrap();
    let d = Discriminator::new(DiscConfig::desk()).unwrap();
    let cfg = TrainConfig::paper();
    let pred = model.forward(&batch.features, None).unwrap();
    let l = StepLosses::compute(&cfg, &pred, &batch, &skel, &d).unwrap();
    for (label, term) in [
        ("l1", Some(l.l1)),
        ("smooth", l.smooth),
        ("fk", l.fk),
        ("gan", l.gan_gen),
    ] {
        model.params().zero_grads();
        term.unwrap().backward().unwrap();
        let moved = model
            .params()
            .iter()
            .any(|(_, t)| t.grad().unwrap_or_default().iter().any(|&g| g != 0.0));
        assert!(moved, "{label} gives no generator gradient");
    }
}

#[test]
fn hand_only_mode_hides_arm_features_and_arm_targets() {
    let skel = Skeleton::default_rest();
    let w = windows(&skel);
    let refs: Vec<&Window> = w.iter().take(2).collect();
    let batch = make_batch(&refs, &skel, Mode::H2h).unwrap();
    for frame in batch.features.data().chunks(138) {
        assert!(frame[..12].iter().all(|&v| v == 0.0));
    }
    let cfg = TrainConfig {
        mode: Mode::H2h,
        gan: false,
        ..TrainConfig::paper()
    };
    let d = Discriminator::new(DiscConfig::desk()).unwrap();
    let pred = batch.targets.detach().tracked();
    // Arm outputs are unsupervised: perturbing them leaves every term alone.
    let mut v = pred.to_vec();
    for t in 0..2 * F {
        for &a in skel.arm_joints() {
            v[t * 144 + a * 3] += 0.3;
        }
    }
    let perturbed = Tensor::new(pred.shape(), v).unwrap();
    let a = StepLosses::compute(&cfg, &pred, &batch, &skel, &d).unwrap();
    let b = StepLosses::compute(&cfg, &perturbed, &batch, &skel, &d).unwrap();
    assert_eq!(a.l1.item(), 0.0);
    assert_eq!(a.fk.as_ref().unwrap().item(), 0.0);
    assert_eq!(a.total.item(), b.total.item());
}

#[test]
fn lr_schedule() {
    let p = TrainConfig::paper();
    assert_eq!(p.lr_at(0), 1e-3);
    assert_eq!(p.lr_at(49), 1e-3);
    assert_eq!(p.lr_at(50), 5e-4);
    assert_eq!(p.lr_at(100), 2.5e-4);
    let d = TrainConfig::desk();
    assert_eq!(d.lr_at(9), 1e-3);
    assert_eq!(d.lr_at(10), 5e-4);
}

#[test]
fn config_validation() {
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::desk() }.validate().is_err());
    assert!(TrainConfig { lambda: -0.1, ..TrainConfig::desk() }.validate().is_err());
    assert!(TrainConfig::paper().validate().is_ok());
}

#[test]
fn weight_decay_spares_biases_norms_and_embeddings() {
    let model = armhand::model::Model::new(tiny_model(Arch::Pahmt)).unwrap();
    let p = model.params();
    for name in p.names() {
        let expect = name.ends_with(".weight");
        assert_eq!(p.decays(name), expect, "{name}");
    }
    assert!(!p.decays("spatial.regress") && !p.decays("temporal.pos") && !p.decays("spatial.pos"));

    // Zero gradient: only decayed parameters move, by exactly lr·wd·w.
    let mut store = p.clone();
    for (_, t) in store.iter() {
        t.sum().scale(0.0).backward().unwrap();
    }
    let mut opt = Adam::new(AdamConfig::default());
    let before: Vec<Vec<f64>> = store.iter().map(|(_, t)| t.to_vec()).collect();
    opt.step(&mut store, 0.1).unwrap();
    for ((name, t), old) in store.iter().zip(before) {
        for (a, b) in t.data().iter().zip(&old) {
            let want = if p.decays(name) { b - 0.1 * 5e-4 * b } else { *b };
            assert!((a - want).abs() < 1e-15, "{name}");
        }
    }
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut store = armhand::model::ParamStore::new();
    store.insert("x.bias", Tensor::param(&[3], vec![1.0, -2.0, 0.5]).unwrap(), false).unwrap();
    store.get("x.bias").unwrap().mul(&Tensor::new(&[3], vec![2.0, -3.0, 0.25]).unwrap()).unwrap().sum().backward().unwrap();
    let mut opt = Adam::new(AdamConfig::default());
    opt.step(&mut store, 0.01).unwrap();
    let v = store.get("x.bias").unwrap().to_vec();
    // Bias-corrected first step is lr · g/(|g| + eps') ≈ lr · sign(g).
    for (a, b) in v.iter().zip([1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01]) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn small_step_does_not_increase_loss() {
    let skel = Skeleton::default_rest();
    let w = windows(&skel);
    let batch = make_batch(&w.iter().take(3).collect::<Vec<_>>(), &skel, Mode::Ah2ah).unwrap();
    let cfg = TrainConfig { gan: false, ..TrainConfig::paper() };
    let d = Discriminator::new(DiscConfig::desk()).unwrap();
    for arch in [Arch::Cnn, Arch::Ahmt, Arch::Pahmt] {
        let mut model = armhand::model::Model::new(tiny_model(arch)).unwrap();
        let pred = model.forward(&batch.features, None).unwrap();
        let before = StepLosses::compute(&cfg, &pred, &batch, &skel, &d).unwrap().total;
        before.backward().unwrap();
        let mut opt = Adam::new(AdamConfig { weight_decay: 0.0, ..AdamConfig::default() });
        opt.step(model.params_mut(), 1e-6).unwrap();
        let pred = model.forward(&batch.features, None).unwrap();
        let after = StepLosses::compute(&cfg, &pred, &batch, &skel, &d).unwrap().total;
        assert!(after.item() <= before.item(), "{arch}: {} -> {}", before.item(), after.item());
    }
}

fn train_curve(state: &mut TrainState, w: &[Window], skel: &Skeleton) -> Vec<f64> {
    let mut curve = Vec::new();
    run(state, w, skel, &mut |e| {
        if let Event::Step(r) = e {
            curve.push(r.total);
        }
        Ok(())
    })
    .unwrap();
    curve
}

#[test]
fn identical_seeds_give_identical_curves() {
    let skel = Skeleton::default_rest();
    let w = windows(&skel);
    let mk = || TrainState::new(tiny_model(Arch::Pahmt), tiny_train(), skel.fingerprint()).unwrap();
    let (mut a, mut b) = (mk(), mk());
    let ca = train_curve(&mut a, &w, &skel);
    let cb = train_curve(&mut b, &w, &skel);
    assert!(ca.len() > 4);
    assert_eq!(ca, cb);
    assert_eq!(a.generator.fingerprint(), b.generator.fingerprint());
}

#[test]
fn resume_mid_epoch_continues_exactly() {
    let skel = Skeleton::default_rest();
    let w = windows(&skel);
    let cfg = tiny_train();
    let model = ModelConfig { dropout: 0.1, ..tiny_model(Arch::Ahmt) };
    let mut full = TrainState::new(model.clone(), cfg.clone(), skel.fingerprint()).unwrap();
    let whole = train_curve(&mut full, &w, &skel);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.bin");
    let mut first = TrainState::new(model, TrainConfig { max_steps: Some(4), ..cfg.clone() }, skel.fingerprint()).unwrap();
    let mut head = train_curve(&mut first, &w, &skel);
    assert!(first.cursor > 0 && first.cursor < first.order.len(), "stop lands mid-epoch");
    first.save(&path).unwrap();

    let mut resumed = TrainState::load(&path).unwrap();
    resumed.config.max_steps = None;
    head.extend(train_curve(&mut resumed, &w, &skel));
    assert_eq!(head, whole);
    assert_eq!(resumed.generator.fingerprint(), full.generator.fingerprint());
    assert_eq!(resumed.history, full.history);
}

#[test]
fn state_rejects_other_skeleton() {
    let skel = Skeleton::default_rest();
    let w = windows(&skel);
    let mut state = TrainState::new(tiny_model(Arch::Cnn), tiny_train(), "0000").unwrap();
    assert!(matches!(run(&mut state, &w, &skel, &mut |_| Ok(())), Err(armhand::Error::Fingerprint(_))));
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let skel = Skeleton::default_rest();
    let mut w = windows(&skel);
    for win in &mut w {
        win.features[5] = f64::NAN;
    }
    let mut state = TrainState::new(tiny_model(Arch::Ahmt), tiny_train(), skel.fingerprint()).unwrap();
    let err = run(&mut state, &w, &skel, &mut |_| Ok(())).unwrap_err();
    match err {
        armhand::Error::NonFinite { step, detail, .. } => {
            assert_eq!(step, 0);
            assert!(detail.contains("windows"), "{detail}");
        }
        other => panic!("unexpected {other}"),
    }
}
