use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use emg_open_core::eval::{
    self, dataset_feature_maps, labelled_target_maps, roc_curve, run_experiment, train_extractor, write_report_dir,
    ExperimentConfig,
};
use emg_open_core::extractors::{load_model, save_model, CpnArchitecture, TrainConfig};
use emg_open_core::metricbench;
use emg_open_core::openset::Detector;
use emg_open_core::synthdata::{self, read_dataset, write_dataset};
use emg_open_core::{Method, SynthConfig, WindowConfig};

use crate::{BenchArgs, DetectArgs, EvalArgs, Failure, ProtocolOpts, RocArgs, SweepArgs, SynthArgs, TrainArgs, TrainOpts};

fn output(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>, Failure> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?)),
        None => Box::new(io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn train_config(method: Method, opts: &TrainOpts) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::for_metric(method.metric());
    if let Some(l) = opts.lambda_loss {
        cfg.lambda_loss = l;
    } else if method.is_cpn() {
        eprintln!("lambda_loss = {} (default for {method})", cfg.lambda_loss);
    }
    if let Some(e) = opts.epochs {
        cfg.epochs = e;
    }
    if let Some(p) = opts.ce_distance_power {
        cfg.ce_distance_power = p;
    }
    cfg.seed = opts.seed;
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn experiment_config(method: Method, protocol: &ProtocolOpts, train: TrainConfig, seed: u64) -> Result<ExperimentConfig, Failure> {
    let cfg = ExperimentConfig {
        folds: protocol.folds as usize,
        tpr_goal: protocol.tpr,
        seed,
        train,
        ..ExperimentConfig::for_method(method)
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn synth(a: SynthArgs) -> Result<(), Failure> {
    let cfg = SynthConfig {
        n_target: a.targets as usize,
        n_novel: a.novels as usize,
        reps: a.reps as usize,
        trial_seconds: a.trial_seconds,
        sampling_rate_hz: a.sampling_rate,
        amplitude_profiles: None,
        noise_floor: a.noise_floor,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let dataset = synthdata::generate(&cfg)?;
    write_dataset(&dataset, &a.out)?;
    println!(
        "wrote {} trials ({} target, {} novel motions, {} repetitions) to {}",
        dataset.recordings.len(),
        cfg.n_target,
        cfg.n_novel,
        cfg.reps,
        a.out.display()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let cfg = train_config(a.method, &a.train)?;
    let dataset = read_dataset(&a.data)?;
    let classes = dataset.target_ids().len();
    let maps = dataset_feature_maps(&dataset, &WindowConfig::default())?;
    let (xs, ys) = labelled_target_maps(&dataset, &maps, None);
    let trained = train_extractor(a.method, &xs, &ys, classes, &cfg, CpnArchitecture::default())?;
    save_model(&a.out, &trained.model, a.method.metric())?;
    println!("{}: trained on {} windows from {classes} target motions", a.method, xs.len());
    if let (Some(first), Some(last)) = (trained.history.first(), trained.history.last()) {
        println!("first epoch loss {:.6}, final epoch loss {:.6}", first.mean_loss, last.mean_loss);
    }
    println!("training accuracy {:.4}", trained.accuracy);
    println!("model written to {}", a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    let train = train_config(a.method, &a.train)?;
    let cfg = experiment_config(a.method, &a.protocol, train, a.train.seed)?;
    let dataset = read_dataset(&a.data)?;
    let report = run_experiment(&dataset, a.method, &cfg)?;
    write_report_dir(&report, &a.out_dir, !a.no_svg)?;
    println!("{}: mean AUC {:.4} over {} folds", a.method, report.auc, report.folds.len());
    println!(
        "novel detection accuracy {:.4} at target acceptance {:.4} (goal {})",
        report.novel_detection, report.tpr_at_threshold, cfg.tpr_goal
    );
    println!("target classification accuracy {:.4}", report.target_accuracy);
    println!("reports written to {}", a.out_dir.display());
    Ok(())
}

pub fn roc(a: RocArgs) -> Result<(), Failure> {
    let (model, metric) = load_model(&a.model)?;
    let dataset = read_dataset(&a.data)?;
    let det = Detector::new(model, metric, 0.0)?;
    let maps = dataset_feature_maps(&dataset, &WindowConfig::default())?;
    let (mut target, mut novel) = (Vec::new(), Vec::new());
    for (rec, rec_maps) in dataset.recordings.iter().zip(&maps) {
        let sink = if rec.is_target { &mut target } else { &mut novel };
        for f in det.extractor.extract_all(rec_maps) {
            sink.push(det.nearest(&f)?.1);
        }
    }
    let curve = roc_curve(&target, &novel)?;
    let area = eval::auc(&curve);
    std::fs::create_dir_all(&a.out_dir)?;
    let mut w = csv::Writer::from_path(a.out_dir.join("roc.csv"))?;
    w.write_record(["threshold", "fpr", "tpr"])?;
    for p in &curve.points {
        w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
    }
    w.flush()?;
    std::fs::write(a.out_dir.join("roc.svg"), eval::render_roc_svg(&curve, &format!("AUC {area:.3}")))?;
    println!("AUC {area:.4} ({} target, {} novel windows)", target.len(), novel.len());
    Ok(())
}

pub fn sweep_lambda(a: SweepArgs) -> Result<(), Failure> {
    if !a.method.is_cpn() {
        return Err(Failure::Usage(format!("sweep-lambda needs a CPN method, got {}", a.method)));
    }
    let mut grid: Vec<f64> = Vec::with_capacity(a.grid.len());
    for &v in &a.grid {
        if grid.contains(&v) {
            eprintln!("warning: duplicate lambda {v} ignored");
        } else {
            grid.push(v);
        }
    }
    let dataset = read_dataset(&a.data)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let opts = TrainOpts { lambda_loss: Some(lambda), ..a.train.clone() };
        let cfg = experiment_config(a.method, &a.protocol, train_config(a.method, &opts)?, a.train.seed)?;
        let report = run_experiment(&dataset, a.method, &cfg)?;
        eprintln!("lambda {lambda}: AUC {:.4}", report.auc);
        rows.push((lambda, report.auc));
    }
    let mut w = output(a.out.as_deref())?;
    w.write_record(["lambda", "auc"])?;
    for (lambda, auc) in rows {
        w.write_record([lambda.to_string(), auc.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn bench_metric(a: BenchArgs) -> Result<(), Failure> {
    let rows = metricbench::bench_metric(&a.dims, a.reps as usize, a.seed)?;
    let mut w = output(a.out.as_deref())?;
    w.write_record(["n", "sled_ns", "led_ns", "speedup"])?;
    for r in rows {
        w.write_record([r.n.to_string(), r.sled_ns.to_string(), r.led_ns.to_string(), r.speedup.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn detect(a: DetectArgs) -> Result<(), Failure> {
    if let Some(t) = a.calibrate_tpr {
        if !(t > 0.0 && t < 1.0) {
            return Err(Failure::Usage(format!("--calibrate-tpr must be in (0, 1), got {t}")));
        }
    }
    if a.threshold.is_some_and(|t| !t.is_finite()) {
        return Err(Failure::Usage("--threshold must be finite".into()));
    }
    let (model, metric) = load_model(&a.model)?;
    let manifest = synthdata::read_manifest(&a.data)?;
    let dataset = read_dataset(&a.data)?;
    let maps = dataset_feature_maps(&dataset, &WindowConfig::default())?;
    let mut det = Detector::new(model, metric, a.threshold.unwrap_or(0.0))?;
    if let Some(goal) = a.calibrate_tpr {
        let (target_maps, _) = labelled_target_maps(&dataset, &maps, None);
        det.calibrate(&target_maps, goal)?;
    }
    let names = dataset.target_ids();
    let label_name = |l: usize| match names.get(l).and_then(|&id| dataset.motion(id)) {
        Some(m) if names.len() == det.prototypes.len() => m.name.clone(),
        _ => l.to_string(),
    };
    let mut w = output(a.out.as_deref())?;
    w.write_record(["trial", "window", "predicted", "distance", "novel_flag"])?;
    let (mut total, mut flagged) = (0usize, 0usize);
    for (trial, rec_maps) in manifest.trials.iter().zip(&maps) {
        for (i, o) in det.detect_all(rec_maps)?.iter().enumerate() {
            total += 1;
            flagged += usize::from(o.is_novel());
            w.write_record([
                trial.file.clone(),
                i.to_string(),
                label_name(o.label()),
                o.distance().to_string(),
                u8::from(o.is_novel()).to_string(),
            ])?;
        }
    }
    w.flush()?;
    eprintln!("threshold {}; {flagged} of {total} windows flagged novel", det.threshold);
    Ok(())
}
