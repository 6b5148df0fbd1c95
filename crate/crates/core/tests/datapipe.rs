#![allow(clippy::needless_range_loop)]

use armhand::datapipe::{
    assemble_features, fill_missing, make_windows, normalize_hand, normalize_hands, preprocess, read_clip,
    split_indices, synthesize, synthesize_one, windows_for_clip, write_clip, ClipFile, Dataset, KeypointClip,
    KeypointFrame, MotionClip, Split, SynthConfig, FEATURE_DIM,
};
use armhand::kinematics::{Camera, Skeleton};
use proptest::prelude::*;

fn hand_strategy() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-500.0f64..500.0, -500.0f64..500.0).prop_map(|(x, y)| [x, y]), 21)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_ignores_translation(points in hand_strategy(), dx in -1e3f64..1e3, dy in -1e3f64..1e3) {
        let moved: Vec<[f64; 2]> = points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
        let (a, b) = (normalize_hand(&points).unwrap(), normalize_hand(&moved).unwrap());
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn normalization_ignores_power_of_two_scale(points in hand_strategy(), e in -6i32..6) {
        // Power-of-two scales commute exactly with every step.
        let s = 2f64.powi(e);
        let scaled: Vec<[f64; 2]> = points.iter().map(|p| [p[0] * s, p[1] * s]).collect();
        prop_assert_eq!(normalize_hand(&points).unwrap(), normalize_hand(&scaled).unwrap());
    }

    #[test]
    fn normalized_extent_is_one(points in hand_strategy()) {
        let n = normalize_hand(&points).unwrap();
        for k in 0..2 {
            let lo = n.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = n.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((hi - lo - 1.0).abs() < 1e-12);
            prop_assert!(n.iter().all(|p| p[k].abs() <= 1.0 + 1e-12));
        }
        prop_assert_eq!(n[0], [0.0, 0.0]);
    }

    #[test]
    fn clip_binary_round_trip(t in 1usize..6, seed in any::<u64>(), with_kp in any::<bool>()) {
        let skel = Skeleton::default_rest();
        let cfg = SynthConfig { sequences: 1, frames: t, seed, ..SynthConfig::default() };
        let (m, k) = synthesize_one(&cfg, &skel, &Camera::facing_subject(3.0), 0).unwrap();
        let file = ClipFile::from_motion(&m, with_kp.then_some(&k));
        let back = ClipFile::decode(&file.encode(), "mem").unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(back.to_motion(&skel).unwrap(), m);
        let json = ClipFile::from_json(&file.to_json()).unwrap();
        prop_assert_eq!(json, file);
    }

    #[test]
    fn window_count_formula(t in 32usize..400, len in 1usize..40, step in 1usize..12) {
        prop_assume!(t >= len);
        let w = make_windows(t, len, step).unwrap();
        prop_assert_eq!(w.len(), (t - len) / step + 1);
        prop_assert!(w.iter().all(|&s| s + len <= t && s % step == 0));
    }
}

#[test]
fn invalid_hands_are_zeroed_and_flagged() {
    let mut f = KeypointFrame::zeros();
    for (i, p) in f.hands.iter_mut().enumerate() {
        *p = [i as f64, (i * i) as f64];
    }
    f.valid = [false, true];
    let n = normalize_hands(&f);
    assert_eq!(n.valid, [false, true]);
    assert!(n.hand(0).iter().all(|p| *p == [0.0, 0.0]));
    // A collapsed box counts as a failed detection.
    let mut g = f;
    g.valid = [true, true];
    g.hand_mut(1).iter_mut().for_each(|p| p[1] = 4.0);
    assert_eq!(normalize_hands(&g).valid, [true, false]);
}

/// Fill oracle written from the rules: a missing hand repeats the last
/// detected one, or is zero if there was none.
#[test]
fn fill_missing_on_every_flag_pattern() {
    for len in 1..=6usize {
        for mask in 0u32..(1 << (2 * len)) {
            let frames: Vec<KeypointFrame> = (0..len)
                .map(|t| {
                    let mut f = KeypointFrame::zeros();
                    for side in 0..2 {
                        let valid = mask >> (2 * t + side) & 1 == 1;
                        f.valid[side] = valid;
                        let v = if valid { (10 * t + side + 1) as f64 } else { -99.0 };
                        f.hand_mut(side).iter_mut().for_each(|p| *p = [v, -v]);
                    }
                    f.arm[0] = [t as f64; 3];
                    f
                })
                .collect();
            let out = fill_missing(&KeypointClip { frames: frames.clone() });
            for side in 0..2 {
                let mut last: Option<f64> = None;
                for t in 0..len {
                    if frames[t].valid[side] {
                        last = Some((10 * t + side + 1) as f64);
                    }
                    let want = last.unwrap_or(0.0);
                    let got = &out.frames[t];
                    assert!(got.valid[side]);
                    assert!(got.hand(side).iter().all(|p| *p == [want, -want]), "len {len} mask {mask:b} t {t}");
                    assert_eq!(got.arm, frames[t].arm);
                }
            }
        }
    }
}

#[test]
fn windows_stay_frame_aligned() {
    let skel = Skeleton::default_rest();
    let t_len = 57;
    // Sentinels: every value encodes its frame index.
    let rotations: Vec<f64> = (0..t_len).flat_map(|t| std::iter::repeat_n(t as f64 * 1e-3, 144)).collect();
    let motion = MotionClip::new(&skel, 30.0, rotations, vec![[0.0; 3]; t_len]).unwrap();
    let frames: Vec<KeypointFrame> = (0..t_len)
        .map(|t| {
            let mut f = KeypointFrame::zeros();
            f.arm = [[t as f64; 3]; 4];
            f
        })
        .collect();
    let kp = KeypointClip { frames };
    for step in [1, 3, 5, 7] {
        for len in [1, 8, 32] {
            for w in windows_for_clip(4, &motion, &kp, len, step).unwrap() {
                assert_eq!(w.clip, 4);
                for i in 0..len {
                    let frame = (w.start + i) as f64;
                    assert_eq!(w.features[i * FEATURE_DIM], frame);
                    assert_eq!(w.targets[i * 144], frame * 1e-3);
                    assert_eq!(w.targets[i * 144 + 143], frame * 1e-3);
                }
            }
        }
    }
}

#[test]
fn assembled_tokens_are_padded_points() {
    let mut f = KeypointFrame::zeros();
    f.hands[0] = [0.5, 0.5];
    let x = assemble_features(&f);
    assert_eq!(x.len(), 138);
    assert_eq!(&x[12..15], &[0.5, 0.5, 0.0]);
    assert!(assemble_features(&KeypointFrame::zeros()).iter().all(|&v| v == 0.0));
}

#[test]
fn synthesis_is_seeded() {
    let skel = Skeleton::default_rest();
    let cam = Camera::facing_subject(3.0);
    let cfg = SynthConfig { sequences: 3, frames: 10, seed: 7, ..SynthConfig::default() };
    let a = synthesize(&cfg, &skel, &cam).unwrap();
    assert_eq!(a, synthesize(&cfg, &skel, &cam).unwrap());
    assert_eq!(a[2], synthesize_one(&cfg, &skel, &cam, 2).unwrap());
    let b = synthesize(&SynthConfig { seed: 8, ..cfg }, &skel, &cam).unwrap();
    assert_ne!(a, b);
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Largest |Pearson r| between any arm channel and any hand channel, pooled
/// over all frames of all clips.
fn max_arm_hand_correlation(correlation: f64) -> f64 {
    let skel = Skeleton::default_rest();
    let cfg = SynthConfig { sequences: 100, frames: 100, correlation, seed: 0, ..SynthConfig::default() };
    let clips = synthesize(&cfg, &skel, &Camera::facing_subject(3.0)).unwrap();
    let channel = |joint: usize, k: usize| -> Vec<f64> {
        let mut out = Vec::new();
        for (m, _) in &clips {
            out.extend((0..m.frame_count()).map(|t| m.rotation(t, joint).0[k]));
        }
        out
    };
    let arms: Vec<Vec<f64>> = skel.arm_joints().iter().flat_map(|&j| (0..3).map(move |k| (j, k))).map(|(j, k)| channel(j, k)).collect();
    let hands: Vec<Vec<f64>> = skel.hand_joints().iter().flat_map(|&j| (0..3).map(move |k| (j, k))).map(|(j, k)| channel(j, k)).collect();
    let mut worst: f64 = 0.0;
    for a in &arms {
        for h in &hands {
            worst = worst.max(pearson(a, h).abs());
        }
    }
    worst
}

#[test]
fn zero_correlation_decouples_arms_and_hands() {
    assert!(max_arm_hand_correlation(0.0) < 0.1);
    assert!(max_arm_hand_correlation(0.9) > 0.3);
}

#[test]
fn split_is_ninety_ten_and_seeded() {
    let (train, test) = split_indices(500, 3);
    assert_eq!((train.len(), test.len()), (450, 50));
    let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..500).collect::<Vec<_>>());
    assert_eq!(split_indices(500, 3), (train, test));
    assert_ne!(split_indices(500, 4).1, split_indices(500, 3).1);
}

#[test]
fn dataset_files_round_trip_and_detect_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let skel = Skeleton::default_rest();
    let cfg = SynthConfig { sequences: 5, frames: 40, ..SynthConfig::default() };
    let ds = Dataset::create(dir.path(), &cfg, &skel, &Camera::facing_subject(3.0)).unwrap();
    let reopened = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.content_hash(), reopened.content_hash());
    assert_eq!(reopened.indices(Split::Test).len(), 1);
    let expected = synthesize(&cfg, &skel, &Camera::facing_subject(3.0)).unwrap();
    for (i, clip) in expected.iter().enumerate() {
        assert_eq!(&reopened.load_clip(i).unwrap(), clip);
    }
    let windows = reopened.windows(Split::Train, 32, 5).unwrap();
    assert_eq!(windows.len(), 4 * 2);

    let path = dir.path().join(&reopened.manifest().clips[0].file);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[40] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    let err = reopened.load_clip(0).unwrap_err();
    assert!(matches!(err, armhand::Error::Integrity { .. }), "{err}");
}

#[test]
fn clip_file_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let skel = Skeleton::default_rest();
    let cfg = SynthConfig { sequences: 1, frames: 4, ..SynthConfig::default() };
    let (_, k) = synthesize_one(&cfg, &skel, &Camera::facing_subject(3.0), 0).unwrap();
    let file = ClipFile::from_keypoints(&k, 48, 30.0);
    let path = dir.path().join("k.armclip");
    write_clip(&path, &file).unwrap();
    assert_eq!(read_clip(&path).unwrap(), file);
    assert!(read_clip(dir.path().join("missing.armclip")).is_err());
    std::fs::write(&path, b"ARMHCLIPjunk").unwrap();
    let err = read_clip(&path).unwrap_err();
    assert!(err.to_string().contains("k.armclip"), "{err}");
}

#[test]
fn preprocess_is_idempotent_on_filled_output_flags() {
    let skel = Skeleton::default_rest();
    let cfg = SynthConfig { sequences: 1, frames: 30, dropout_rate: 0.5, ..SynthConfig::default() };
    let (_, k) = synthesize_one(&cfg, &skel, &Camera::facing_subject(3.0), 0).unwrap();
    let p = preprocess(&k);
    assert!(p.frames.iter().all(|f| f.valid == [true, true]));
    assert_eq!(p.frame_count(), 30);
}
