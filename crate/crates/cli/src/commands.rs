use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use palmpipe_core::cnn::{evaluate, load_checkpoint, save_checkpoint, train_with_progress, ModelConfig, ModelParams, TrainConfig};
use palmpipe_core::eval::{format_study_report, machine_observer_study, StudyConfig};
use palmpipe_core::pipeline::{self, Pipeline, PipelineMode, Pose, RealClock, SnapshotLog, SyntheticSource, TICK_BUDGET_MS};
use palmpipe_core::sensor::{generate_dataset, read_dataset, split_dataset, write_dataset, SimConfig, MAX_GRIP_STEP};
use palmpipe_core::types::PatternId;

use crate::args::*;
use crate::settings::{pick, Settings};
use crate::UsageError;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Gen(a) => gen(a, &settings, out),
        Command::Train(a) => train(a, &settings, out),
        Command::Run(a) => run(a, &settings, out),
        Command::Study(a) => study(a, &settings, out),
        Command::Bench(a) => bench(a, &settings, out),
        Command::Serve(a) => crate::serve::serve_blocking(a, &settings, out),
    }
}

fn sim_config(noise: Option<f64>, s: &Settings) -> Result<SimConfig> {
    let sim = SimConfig { noise_sigma: pick(noise, s.noise, SimConfig::default().noise_sigma), ..Default::default() };
    sim.validate().map_err(|e| usage(e.to_string()))?;
    Ok(sim)
}

fn load_model(path: &Path) -> Result<ModelParams> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn gen(a: GenArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let mut sim = sim_config(a.noise, s)?;
    sim.reps_per_config = pick(a.n_reps, s.n_reps, sim.reps_per_config);
    if sim.reps_per_config == 0 {
        return Err(usage("--n-reps must be at least 1"));
    }
    let seed = pick(a.seed, s.seed, 0);
    let data = generate_dataset(&sim, seed)?;
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_dataset(&data, BufWriter::new(file)).with_context(|| format!("writing {}", a.out.display()))?;
    writeln!(out, "wrote {} samples to {}", data.len(), a.out.display())?;
    Ok(())
}

fn history_path(a: &TrainArgs) -> PathBuf {
    a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        p.into()
    })
}

fn train(a: TrainArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: pick(a.epochs, s.epochs, defaults.epochs),
        batch_size: pick(a.batch_size, s.batch_size, defaults.batch_size),
        base_lr: pick(a.lr, s.lr, defaults.base_lr),
        seed: pick(a.seed, s.seed, defaults.seed),
        ..defaults
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let file = File::open(&a.data).with_context(|| format!("opening {}", a.data.display()))?;
    let data = read_dataset(BufReader::new(file)).with_context(|| format!("reading {}", a.data.display()))?;
    let (train_set, val_set, test_set) = split_dataset(&data, (0.5, 0.25, 0.25), cfg.seed)?;
    writeln!(out, "split: {} train, {} validation, {} test", train_set.len(), val_set.len(), test_set.len())?;

    let init = ModelParams::init(&ModelConfig::default(), cfg.seed);
    let mut progress = Vec::new();
    let (model, history) = train_with_progress(init, &train_set, &val_set, &cfg, |e| {
        progress.push(format!(
            "epoch {:>3}/{}  loss {:.5}  val_loss {:.5}  val_angle {:.4}  val_position {:.4}  lr {:.0e}",
            e.epoch + 1,
            cfg.epochs,
            e.train_loss,
            e.val_loss,
            e.val_angle_accuracy,
            e.val_pos_accuracy,
            e.lr
        ));
        eprintln!("{}", progress.last().unwrap());
    })?;
    for line in &progress {
        writeln!(out, "{line}")?;
    }

    save_checkpoint(&model, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let hist = history_path(&a);
    std::fs::write(&hist, history.to_csv()).with_context(|| format!("writing {}", hist.display()))?;

    let ev = evaluate(&model, &test_set)?;
    writeln!(out, "angle confusion (rows = true 0/45/90/135 deg)")?;
    write!(out, "{}", ev.angle_confusion.format_normalized())?;
    writeln!(out, "position confusion (rows = true center/left/right)")?;
    write!(out, "{}", ev.pos_confusion.format_normalized())?;
    writeln!(out, "test_angle_accuracy = {:.4}", ev.angle_accuracy)?;
    writeln!(out, "test_position_accuracy = {:.4}", ev.pos_accuracy)?;
    writeln!(out, "checkpoint = {}", a.out.display())?;
    writeln!(out, "history = {}", hist.display())?;
    Ok(())
}

/// Pose script for `run`: the twelve patterns in id order, one second
/// each; the grip closes over the first half second, then holds.
pub fn scripted_pose(t: f64) -> Pose {
    let k = t.max(0.0).floor() as usize;
    let id = PatternId::new(k % 12).expect("index below 12");
    let phase = (t - k as f64).clamp(0.0, 0.5) / 0.5;
    let grip = (phase * MAX_GRIP_STEP as f64).round() as u32;
    Pose::new(id.angle(), id.position(), grip).expect("grip within range")
}

fn run(a: RunArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let mode = match a.mode {
        ModeArg::Direct => PipelineMode::Direct,
        ModeArg::Masked => PipelineMode::masked(),
    };
    if mode != PipelineMode::Direct && a.ckpt.is_none() {
        return Err(usage("--mode masked needs --ckpt"));
    }
    let duration = pick(a.duration, s.duration, 10.0);
    if !(duration.is_finite() && duration > 0.0) {
        return Err(usage(format!("--duration must be positive, got {duration}")));
    }
    let sim = sim_config(a.noise, s)?;
    let model = a.ckpt.as_deref().map(load_model).transpose()?;
    let mut pipe = Pipeline::new(model, s.fusion, s.kinematics.clone())?;
    let mut source = SyntheticSource::new(sim, pick(a.seed, s.seed, 0), scripted_pose)?;
    let mut clock = RealClock::new();

    let report = match &a.log {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut log = SnapshotLog::new(BufWriter::new(file))?;
            let r = pipeline::run(&mut pipe, &mut source, mode, &mut log, &mut clock, duration)?;
            log.into_inner()?.flush()?;
            r
        }
        None => pipeline::run(&mut pipe, &mut source, mode, &mut pipeline::NullSink, &mut clock, duration)?,
    };
    write!(out, "{}", report.format())?;
    if let Some(path) = &a.log {
        writeln!(out, "log = {}", path.display())?;
    }
    Ok(())
}

fn study(a: StudyArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let trials = pick(a.trials, s.trials, 500);
    if trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let cfg = StudyConfig { sim: sim_config(a.noise, s)?, trials_per_pattern: trials, seed: pick(a.seed, s.seed, 0), fusion: s.fusion };
    let model = load_model(&a.ckpt)?;
    let direct = machine_observer_study(None, PipelineMode::Direct, &cfg)?;
    let masked = machine_observer_study(Some(&model), PipelineMode::masked(), &cfg)?;
    let report = format_study_report(&direct, &masked, &cfg);
    write!(out, "{report}")?;
    if let Some(path) = &a.out {
        std::fs::write(path, &report).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn bench(a: BenchArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let ticks = pick(a.ticks, s.ticks, 3000);
    if ticks == 0 {
        return Err(usage("--ticks must be at least 1"));
    }
    let seed = pick(a.seed, s.seed, 0);
    let model = match &a.ckpt {
        Some(p) => load_model(p)?,
        None => {
            writeln!(out, "note: no checkpoint; masked mode uses an untrained network of the default architecture")?;
            ModelParams::init(&ModelConfig::default(), seed)
        }
    };
    let mut pipe = Pipeline::new(Some(model), s.fusion, s.kinematics.clone())?;
    for mode in [PipelineMode::Direct, PipelineMode::masked()] {
        let table = pipeline::bench(&mut pipe, mode, ticks, seed)?;
        writeln!(out, "{mode} ({ticks} ticks)")?;
        write!(out, "{}", table.format())?;
        if mode != PipelineMode::Direct {
            let p99 = table.get("total").map(|t| t.p99).unwrap_or(f64::NAN);
            writeln!(out, "masked_total_p99_ms = {p99:.4}")?;
            writeln!(out, "budget_ms = {TICK_BUDGET_MS:.2}")?;
            writeln!(out, "within_budget = {}", p99 <= TICK_BUDGET_MS)?;
        }
    }
    Ok(())
}
