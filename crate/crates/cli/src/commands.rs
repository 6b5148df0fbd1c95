use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use armhand::datapipe::{
    read_clip, write_clip, ClipFile, Dataset, MotionClip, Split, MANIFEST_FILE, SKELETON_FILE, SPLIT_FILE,
};
use armhand::eval::{evaluate, predict_clip, render_table, run_ablation, AblationData, AblationSpec, EvalReport};
use armhand::kinematics::{Camera, Skeleton};
use armhand::model::{Arch, Checkpoint};
use armhand::train::{run, Event, Profile, TrainState};
use log::{info, warn};
use serde_json::json;

use crate::config::{self, ConfigFile};
use crate::manifest::{Artifact, RunManifest, MANIFEST_NAME};
use crate::{AblateArgs, EvalArgs, InferArgs, SynthArgs, TrainArgs};

const CAMERA_DISTANCE: f64 = 3.0;
const LOG_EVERY: u64 = 50;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_skeleton(path: Option<&Path>) -> Result<Skeleton> {
    match path {
        Some(p) => Skeleton::load(p).with_context(|| format!("loading skeleton {}", p.display())),
        None => Ok(Skeleton::default_rest()),
    }
}

fn open_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::open(dir).with_context(|| format!("opening dataset {}", dir.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn dataset_artifact(ds: &Dataset) -> Artifact {
    Artifact::digest(ds.root(), ds.content_hash())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut m = RunManifest::start("synth");
    let file = ConfigFile::load(a.config.as_deref())?;
    let mut cfg = config::synth_config(&file)?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.sequences {
        cfg.sequences = v;
    }
    if let Some(v) = a.frames {
        cfg.frames = v;
    }
    if let Some(v) = a.correlation {
        cfg.correlation = v;
    }
    if let Some(v) = a.dropout_rate {
        cfg.dropout_rate = v;
    }
    if let Some(v) = a.pixel_noise {
        cfg.pixel_noise = v;
    }
    cfg.validate()?;
    let skeleton = load_skeleton(a.skeleton.as_deref())?;
    let camera = Camera::facing_subject(CAMERA_DISTANCE);
    create_dir(&a.out)?;
    info!("synthesizing {} clips of {} frames into {}", cfg.sequences, cfg.frames, a.out.display());
    let ds = Dataset::create(&a.out, &cfg, &skeleton, &camera)?;
    let (train, test) = (ds.indices(Split::Train).len(), ds.indices(Split::Test).len());

    m.config = json!({ "synth": cfg, "camera_distance": CAMERA_DISTANCE });
    m.seed = Some(cfg.seed);
    if let Some(p) = &a.skeleton {
        m.inputs.push(Artifact::file(p)?);
    }
    m.outputs.push(dataset_artifact(&ds));
    for name in [MANIFEST_FILE, SPLIT_FILE, SKELETON_FILE] {
        m.outputs.push(Artifact::file(&a.out.join(name))?);
    }
    m.write(&a.out.join(MANIFEST_NAME))?;
    println!("wrote {} clips ({train} train / {test} test) to {}", cfg.sequences, a.out.display());
    println!("dataset hash {}", ds.content_hash());
    Ok(())
}

fn write_log(path: &Path, state: &TrainState) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for r in &state.history {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut m = RunManifest::start("train");
    let ds = open_dataset(&a.dataset)?;
    let skeleton = ds.skeleton().clone();
    let mut state = match &a.resume {
        Some(path) => {
            let st = TrainState::load(path).with_context(|| format!("loading training state {}", path.display()))?;
            if a.config.is_some() || a.profile.is_some() || a.arch.is_some() || a.mode.is_some() {
                warn!("resuming: configuration options other than --epochs and --max-steps are ignored");
            }
            info!("resuming from step {} (epoch {})", st.step, st.epoch);
            m.inputs.push(Artifact::file(path)?);
            st
        }
        None => {
            let file = ConfigFile::load(a.config.as_deref())?;
            let profile = a.profile.or(file.profile).unwrap_or(Profile::Desk);
            let arch = a.arch.or(file.arch).unwrap_or(Arch::Pahmt);
            let (mut model, mut cfg) = config::model_and_train(&file, profile, arch)?;
            if let Some(v) = a.mode {
                cfg.mode = v;
            }
            if let Some(v) = a.batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = a.lr {
                cfg.lr = v;
            }
            if let Some(v) = a.seed {
                cfg.seed = v;
                cfg.disc.seed = v.wrapping_add(1);
                model.seed = v;
            }
            cfg.smooth &= !a.no_smooth;
            cfg.fk &= !a.no_fk;
            cfg.gan &= !a.no_gan;
            TrainState::new(model, cfg, skeleton.fingerprint())?
        }
    };
    if let Some(v) = a.epochs {
        state.config.epochs = v;
    }
    if let Some(v) = a.max_steps {
        state.config.max_steps = Some(v);
    }
    state.config.validate()?;

    let windows = ds.windows(Split::Train, state.generator.config().frames, a.window_step)?;
    if windows.is_empty() {
        bail!("dataset {} has no training windows of {} frames", a.dataset.display(), state.generator.config().frames);
    }
    create_dir(&a.out)?;
    let state_path = a.out.join("state.bin");
    let log_path = a.out.join("train_log.jsonl");
    info!(
        "training {} ({} parameters) on {} windows",
        state.generator.config().arch,
        state.generator.params().count(),
        windows.len()
    );
    run(&mut state, &windows, &skeleton, &mut |ev| {
        match ev {
            Event::Step(r) if r.step % LOG_EVERY == 0 => {
                info!("step {} epoch {} lr {:.2e} loss {:.5} (l1 {:.5})", r.step, r.epoch, r.lr, r.total, r.l1)
            }
            Event::EpochEnd(st) => {
                st.save(&state_path)?;
                write_log(&log_path, st).map_err(|e| armhand::Error::Io(std::io::Error::other(e.to_string())))?;
            }
            _ => {}
        }
        Ok(())
    })?;
    state.save(&state_path)?;
    write_log(&log_path, &state)?;
    let ckpt_path = a.out.join("model.ckpt");
    Checkpoint::new(state.generator.clone(), skeleton.fingerprint())
        .with_mode(state.config.mode)
        .save(&ckpt_path)?;

    m.config = json!({ "model": state.generator.config(), "train": state.config, "window_step": a.window_step });
    m.seed = Some(state.config.seed);
    m.inputs.push(dataset_artifact(&ds));
    for p in [&ckpt_path, &state_path, &log_path] {
        m.outputs.push(Artifact::file(p)?);
    }
    m.write(&a.out.join(MANIFEST_NAME))?;
    match state.history.last() {
        Some(r) => println!("finished at step {} (epoch {}), last loss {:.6}", state.step, state.epoch, r.total),
        None => println!("nothing to do: the run was already complete"),
    }
    println!("checkpoint {}", ckpt_path.display());
    Ok(())
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.5}"))
}

pub fn render_report(r: &EvalReport) -> String {
    let mut s = String::new();
    s += &format!("mode            {}\n", r.mode);
    s += &format!("clips           {}\n", r.clips);
    s += &format!("frames          {}\n", r.frames);
    s += &format!("MPJPE hands     {:.5} m\n", r.mpjpe_hands);
    s += &format!("MPJPE overall   {} m\n", fmt_metric(r.mpjpe_overall));
    s += &format!("MPJPE arms      {} m\n", fmt_metric(r.mpjpe_arms));
    s += &format!("MPJRE arms      {} rad\n", fmt_metric(r.mpjre_arms));
    s += &format!("MPJRE arms geo  {} rad\n", fmt_metric(r.mpjre_arms_geodesic));
    s += &format!("inter-frame     {:.5} rad\n", r.inter_frame);
    s += "\nclip  frames  hands     overall   arms-rot\n";
    for c in &r.per_clip {
        s += &format!(
            "{:<5} {:<7} {:.5}   {:<9} {}\n",
            c.clip,
            c.frames,
            c.mpjpe_hands,
            fmt_metric(c.mpjpe_overall),
            fmt_metric(c.mpjre_arms)
        );
    }
    s
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut m = RunManifest::start("eval");
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let ds = open_dataset(&a.dataset)?;
    if ckpt.skeleton_fingerprint != ds.skeleton().fingerprint() {
        return Err(armhand::Error::Fingerprint(format!(
            "checkpoint {} was trained on skeleton {}, but dataset {} uses skeleton {}; \
             positions would be compared across different bone layouts",
            a.checkpoint.display(),
            ckpt.skeleton_fingerprint,
            a.dataset.display(),
            ds.skeleton().fingerprint()
        ))
        .into());
    }
    let test = ds.load_split(Split::Test)?;
    let rep = evaluate(&ckpt.model, &test, ds.skeleton(), ckpt.mode)?;
    create_dir(&a.out)?;
    let json_path = a.out.join("report.json");
    let txt_path = a.out.join("report.txt");
    std::fs::write(&json_path, serde_json::to_string_pretty(&rep)? + "\n")?;
    std::fs::write(&txt_path, render_report(&rep))?;

    m.config = json!({ "mode": ckpt.mode, "model": ckpt.model.config() });
    m.seed = Some(ckpt.model.config().seed);
    m.inputs.push(Artifact::file(&a.checkpoint)?);
    m.inputs.push(dataset_artifact(&ds));
    m.outputs.push(Artifact::file(&json_path)?);
    m.outputs.push(Artifact::file(&txt_path)?);
    m.write(&a.out.join(MANIFEST_NAME))?;
    println!("MPJPE hands   {:.5} m", rep.mpjpe_hands);
    println!("MPJPE overall {} m", fmt_metric(rep.mpjpe_overall));
    println!("MPJRE arms    {} rad", fmt_metric(rep.mpjre_arms));
    Ok(())
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn infer(a: InferArgs) -> Result<()> {
    let mut m = RunManifest::start("infer");
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let skeleton = load_skeleton(a.skeleton.as_deref())?;
    if ckpt.skeleton_fingerprint != skeleton.fingerprint() {
        bail!(armhand::Error::Fingerprint(format!(
            "checkpoint expects skeleton {}, got {}",
            ckpt.skeleton_fingerprint,
            skeleton.fingerprint()
        )));
    }
    let clip = read_clip(&a.input)?;
    let keypoints = clip
        .keypoints
        .as_ref()
        .ok_or_else(|| armhand::Error::Format(format!("{} has no keypoints", a.input.display())))?;
    let f = ckpt.model.config().frames;
    let rotations = predict_clip(&ckpt.model.frozen(), keypoints, ckpt.mode).with_context(|| {
        format!("{} has {} frames; inference needs at least f={f}", a.input.display(), keypoints.frame_count())
    })?;
    let frames = keypoints.frame_count();
    let motion = MotionClip::new(&skeleton, clip.fps, rotations, vec![[0.0; 3]; frames])?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_clip(&a.out, &ClipFile::from_motion(&motion, None))?;
    m.outputs.push(Artifact::file(&a.out)?);
    if let Some(csv) = &a.positions {
        let mut out = std::io::BufWriter::new(std::fs::File::create(csv)?);
        writeln!(out, "frame,joint,x,y,z")?;
        for t in 0..frames {
            for (j, p) in motion.positions(t).iter().enumerate() {
                writeln!(out, "{t},{j},{},{},{}", p[0], p[1], p[2])?;
            }
        }
        out.flush()?;
        m.outputs.push(Artifact::file(csv)?);
    }
    m.config = json!({ "mode": ckpt.mode, "model": ckpt.model.config() });
    m.inputs.push(Artifact::file(&a.checkpoint)?);
    m.inputs.push(Artifact::file(&a.input)?);
    m.write(&sibling_manifest(&a.out))?;
    println!("wrote {frames} frames of {} joints to {}", skeleton.joint_count(), a.out.display());
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let mut m = RunManifest::start("ablate");
    let spec = match &a.matrix {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading matrix {}", p.display()))?;
            m.inputs.push(Artifact::file(p)?);
            AblationSpec::from_toml_str(&text).with_context(|| format!("parsing matrix {}", p.display()))?
        }
        None => AblationSpec::default(),
    };
    let ds = open_dataset(&a.dataset)?;
    let frames = spec.model.as_ref().map_or(armhand::datapipe::WINDOW_LEN, |c| c.frames);
    let data = if spec.rows.is_empty() {
        AblationData {
            skeleton: ds.skeleton().clone(),
            train: Vec::new(),
            test: Vec::new(),
        }
    } else {
        AblationData::from_dataset(&ds, frames, armhand::datapipe::WINDOW_STEP)?
    };
    create_dir(&a.out)?;
    let rows_path = a.out.join("rows.jsonl");
    let mut rows = std::io::BufWriter::new(std::fs::File::create(&rows_path)?);
    let mut write_err = None;
    let results = run_ablation(&spec, &data, &mut |r| {
        match &r.report {
            Some(rep) => info!("{} seed {}: hands {:.5}", r.row.label, r.seed, rep.mpjpe_hands),
            None => info!("{} seed {}: unavailable", r.row.label, r.seed),
        }
        let line = serde_json::to_string(r).map_err(anyhow::Error::from);
        if let Err(e) = line.and_then(|l| writeln!(rows, "{l}").map_err(Into::into)) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.context(format!("writing {}", rows_path.display())));
    }
    rows.flush()?;
    drop(rows);
    let table = render_table(&results);
    let table_path = a.out.join("table.txt");
    std::fs::write(&table_path, &table)?;

    m.config = serde_json::to_value(&spec)?;
    m.inputs.push(dataset_artifact(&ds));
    m.outputs.push(Artifact::file(&table_path)?);
    m.outputs.push(Artifact::file(&rows_path)?);
    m.write(&a.out.join(MANIFEST_NAME))?;
    print!("{table}");
    Ok(())
}
