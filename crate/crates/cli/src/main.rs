//! `motseg`: synthesize scenes, train, segment, evaluate and sweep.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use motseg::autoencoder::{format_loss_curve, load_model, save_model, AeParameters};
use motseg::clustering::{load_gmm, save_gmm};
use motseg::config::{PipelineConfig, KEYS};
use motseg::evaluation::{sweep, SequenceEval, SweepCell};
use motseg::ingest::{write_labels, EXPORT_MOVING, EXPORT_STATIC};
use motseg::pipeline::{self, DiskSequence, FrameSource, PreparedFrame};
use motseg::synthetic::{preset, presets, write_scene, Occlusion, Scene, LABEL_MOVING};
use motseg::{Error, Result};

const PRESET_PREFIX: &str = "preset:";

fn config_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .short('c')
            .value_name("FILE")
            .value_parser(clap::value_parser!(PathBuf))
            .help("config file of `section.key = value` lines; flags below override it"),
    );
    KEYS.iter().fold(cmd, |cmd, (key, help)| {
        cmd.arg(
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .help(*help)
                .help_heading("Config overrides"),
        )
    })
}

fn cli() -> Command {
    Command::new("motseg")
        .about("Unsupervised moving-object segmentation for stationary LiDAR sequences")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("synth")
                .about("Write a synthetic labeled scene (velodyne/*.bin, labels/*.label, motseg.cfg)")
                .arg(
                    Arg::new("preset")
                        .long("preset")
                        .value_name("NAME")
                        .default_value("mixed-intersection")
                        .help("built-in scene"),
                )
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("DIR")
                        .value_parser(clap::value_parser!(PathBuf))
                        .required_unless_present("list")
                        .help("output directory"),
                )
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .value_name("N")
                        .value_parser(clap::value_parser!(u64))
                        .default_value("0")
                        .help("scene seed"),
                )
                .arg(
                    Arg::new("frames")
                        .long("frames")
                        .value_name("N")
                        .value_parser(clap::value_parser!(usize))
                        .help("override the preset's frame count"),
                )
                .arg(
                    Arg::new("occlusion")
                        .long("occlusion")
                        .action(ArgAction::SetTrue)
                        .help("cull points shadowed from the sensor origin"),
                )
                .arg(
                    Arg::new("list")
                        .long("list")
                        .action(ArgAction::SetTrue)
                        .help("print the preset names and exit"),
                ),
        )
        .subcommand(config_args(
            Command::new("train").about("Train the autoencoder; writes model.mae, loss.txt and config.txt to data.output"),
        ))
        .subcommand(config_args(
            Command::new("segment")
                .about("Segment every frame; writes predictions.csv (and gmm.mgmm, results.csv) to data.output")
                .arg(
                    Arg::new("model")
                        .long("model")
                        .value_name("FILE")
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("trained model [default: <data.output>/model.mae]"),
                )
                .arg(
                    Arg::new("gmm")
                        .long("gmm")
                        .value_name("FILE")
                        .value_parser(clap::value_parser!(PathBuf))
                        .conflicts_with("fit-gmm")
                        .help("use a fitted and mapped mixture instead of fitting one"),
                )
                .arg(
                    Arg::new("fit-gmm")
                        .long("fit-gmm")
                        .action(ArgAction::SetTrue)
                        .help("fit the mixture on the sequence (the default without --gmm)"),
                )
                .arg(
                    Arg::new("export-points")
                        .long("export-points")
                        .action(ArgAction::SetTrue)
                        .help("also write per-point label files to <data.output>/labels"),
                ),
        ))
        .subcommand(config_args(
            Command::new("eval")
                .about("Score exported predictions against the labels; writes results.csv")
                .arg(
                    Arg::new("predictions")
                        .long("predictions")
                        .value_name("FILE")
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("predictions CSV [default: <data.output>/predictions.csv]"),
                ),
        ))
        .subcommand(config_args(Command::new("sweep").about(
            "Run the pipeline over the sweep.r/e/k/w grid on sweep.scenes; writes sweep.csv and sweep_axes.csv",
        )))
}

fn load_config(m: &ArgMatches) -> Result<PipelineConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(p) => {
            let mut cfg = PipelineConfig::default();
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            cfg.apply_text(&text)
                .map_err(|e| Error::Config(format!("{}: {}", p.display(), message(&e))))?;
            cfg
        }
        None => PipelineConfig::default(),
    };
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)
                .map_err(|e| Error::Config(format!("--{key}: {}", message(&e))))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn message(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn cmd_synth(m: &ArgMatches) -> Result<()> {
    if m.get_flag("list") {
        for s in presets() {
            println!("{}", s.name);
        }
        return Ok(());
    }
    let name = m.get_one::<String>("preset").expect("defaulted");
    let mut spec = preset(name).ok_or_else(|| {
        let names: Vec<String> = presets().into_iter().map(|s| s.name).collect();
        Error::Config(format!("unknown preset {name:?}; available: {}", names.join(", ")))
    })?;
    spec.seed = *m.get_one::<u64>("seed").expect("defaulted");
    if let Some(&n) = m.get_one::<usize>("frames") {
        spec.frames = n;
    }
    if m.get_flag("occlusion") {
        spec.occlusion = Some(Occlusion::default());
    }
    let out = m.get_one::<PathBuf>("out").expect("required");
    create_dir(out)?;
    let out = &out
        .canonicalize()
        .map_err(|e| Error::Data(format!("cannot resolve {}: {e}", out.display())))?;
    let scene = Scene::new(spec)?;
    let n = write_scene(&scene, out, Default::default())?;
    let cfg_text = format!(
        "data.frames = {}\ndata.labels = {}\ndata.moving_labels = {LABEL_MOVING}\ndata.output = {}\n",
        out.join("velodyne").display(),
        out.join("labels").display(),
        out.join("run").display()
    );
    write_file(&out.join("motseg.cfg"), &cfg_text)?;
    log::info!("wrote {n} frames of {name:?} to {}", out.display());
    println!("{n}");
    Ok(())
}

fn open_sequence(cfg: &PipelineConfig) -> Result<DiskSequence> {
    DiskSequence::open(&cfg.data)
}

fn cmd_train(m: &ArgMatches) -> Result<()> {
    let cfg = load_config(m)?;
    let seq = open_sequence(&cfg)?;
    let frames = pipeline::prepare(&seq, &cfg)?;
    let report = pipeline::train_model(&frames, &cfg)?;
    let out = &cfg.data.output;
    create_dir(out)?;
    save_model(&out.join("model.mae"), &report.params)?;
    write_file(&out.join("loss.txt"), &format_loss_curve(&report.loss_curve))?;
    write_file(&out.join("config.txt"), &cfg.to_text())?;
    if let (Some(first), Some(last)) = (report.loss_curve.first(), report.loss_curve.last()) {
        log::info!("loss {:.6} -> {:.6} over {} steps", first.1, last.1, report.steps);
    }
    println!("{}", out.join("model.mae").display());
    Ok(())
}

fn check_model(params: &AeParameters, cfg: &PipelineConfig) -> Result<()> {
    let a = params.arch();
    if a.channels != cfg.grid.channels() || a.window != cfg.grid.window {
        return Err(Error::Config(format!(
            "model expects {} channels over {} frames but grid.r = {} and grid.w = {} give {} over {}",
            a.channels,
            a.window,
            cfg.grid.radius,
            cfg.grid.window,
            cfg.grid.channels(),
            cfg.grid.window
        )));
    }
    Ok(())
}

fn print_eval(eval: &SequenceEval) {
    println!("mIoU {:.6} over {} frames", eval.miou, eval.frames.len());
}

fn export_points(seq: &dyn FrameSource, frames: &[PreparedFrame], predictions: &[Vec<bool>], cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for (f, p) in frames.iter().zip(predictions) {
        let moving = pipeline::point_predictions(seq, f, p, cfg)?;
        write_labels(&dir.join(format!("{:06}.label", f.frame_index)), &moving, EXPORT_MOVING, EXPORT_STATIC)?;
    }
    Ok(())
}

fn cmd_segment(m: &ArgMatches) -> Result<()> {
    let cfg = load_config(m)?;
    let out = cfg.data.output.clone();
    let model_path = m.get_one::<PathBuf>("model").cloned().unwrap_or_else(|| out.join("model.mae"));
    let params = load_model(&model_path)?;
    check_model(&params, &cfg)?;
    let seq = open_sequence(&cfg)?;
    let frames = pipeline::prepare(&seq, &cfg)?;
    create_dir(&out)?;
    let (model, mapping) = match m.get_one::<PathBuf>("gmm") {
        Some(p) => {
            let (model, mapping) = load_gmm(p)?;
            let mapping = mapping.ok_or_else(|| Error::Data(format!("{} has no cluster mapping", p.display())))?;
            if model.dim != params.arch().code {
                return Err(Error::Data(format!(
                    "{} has dimension {} but the model encodes to {}",
                    p.display(),
                    model.dim,
                    params.arch().code
                )));
            }
            (model, mapping)
        }
        None => {
            let fit = pipeline::fit_clusters(&params, &frames, &cfg)?;
            save_gmm(&out.join("gmm.mgmm"), &fit.model, Some(&fit.mapping))?;
            (fit.model, fit.mapping)
        }
    };
    let predictions = pipeline::segment_sequence(&params, &model, &mapping, &frames, &cfg)?;
    pipeline::write_predictions_csv(&out.join("predictions.csv"), &frames, &predictions)?;
    if m.get_flag("export-points") {
        export_points(&seq, &frames, &predictions, &cfg, &out.join("labels"))?;
    }
    if let Some(eval) = pipeline::evaluate(&frames, &predictions)? {
        pipeline::write_results_csv(&out.join("results.csv"), &eval)?;
        print_eval(&eval);
    }
    Ok(())
}

fn cmd_eval(m: &ArgMatches) -> Result<()> {
    let cfg = load_config(m)?;
    let path = m
        .get_one::<PathBuf>("predictions")
        .cloned()
        .unwrap_or_else(|| cfg.data.output.join("predictions.csv"));
    let seq = open_sequence(&cfg)?;
    if cfg.data.labels.is_none() {
        return Err(Error::Config("eval needs data.labels".into()));
    }
    let frames = pipeline::prepare(&seq, &cfg)?;
    let predictions = pipeline::read_predictions_csv(&path)?;
    let eval = pipeline::evaluate_predictions(&frames, &predictions)?;
    create_dir(&cfg.data.output)?;
    pipeline::write_results_csv(&cfg.data.output.join("results.csv"), &eval)?;
    print_eval(&eval);
    Ok(())
}

fn open_scene(name: &str, cfg: &PipelineConfig) -> Result<Box<dyn FrameSource>> {
    if let Some(p) = name.strip_prefix(PRESET_PREFIX) {
        let spec = preset(p).ok_or_else(|| Error::Config(format!("unknown preset {p:?}")))?;
        return Ok(Box::new(Scene::new(spec)?));
    }
    let mut data = cfg.data.clone();
    let dir = PathBuf::from(name);
    data.frames = Some(dir.join("velodyne"));
    data.labels = Some(dir.join("labels"));
    Ok(Box::new(DiskSequence::open(&data)?))
}

fn run_cell(cell: &SweepCell, scenes: &[Box<dyn FrameSource>], base: &PipelineConfig) -> Result<Vec<f64>> {
    let mut cfg = base.clone();
    cfg.grid.radius = cell.radius;
    cfg.grid.window = cell.window;
    cfg.model.code = cell.code;
    cfg.model.conv = None;
    cfg.gmm.k = cell.clusters;
    cfg.validate()?;
    scenes
        .iter()
        .map(|s| {
            let run = pipeline::run(s.as_ref(), &cfg)?;
            run.eval
                .map(|e| e.miou)
                .ok_or_else(|| Error::Data("scene has no labels".into()))
        })
        .collect()
}

fn cmd_sweep(m: &ArgMatches) -> Result<()> {
    let cfg = load_config(m)?;
    if cfg.sweep.scenes.is_empty() {
        return Err(Error::Config("sweep.scenes is empty".into()));
    }
    let scenes = cfg
        .sweep
        .scenes
        .iter()
        .map(|s| open_scene(s, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let table = sweep(&cfg.sweep.grid, &cfg.sweep.scenes, |cell| run_cell(cell, &scenes, &cfg))?;
    let out = &cfg.data.output;
    create_dir(out)?;
    write_file(&out.join("sweep.csv"), &table.to_csv())?;
    write_file(&out.join("sweep_axes.csv"), &table.summary_csv())?;
    print!("{}", table.summary_csv());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Argument(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let matches = cli().get_matches();
    let result = match matches.subcommand() {
        Some(("synth", m)) => cmd_synth(m),
        Some(("train", m)) => cmd_train(m),
        Some(("segment", m)) => cmd_segment(m),
        Some(("eval", m)) => cmd_eval(m),
        Some(("sweep", m)) => cmd_sweep(m),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
