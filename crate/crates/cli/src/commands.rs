use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};

use reseg::autodiff::{gradient_check, random_batch};
use reseg::data::{load_image, synth_dataset, write_netpbm, Dataset, Raster, Split, SynthConfig};
use reseg::layers::FrontendStage;
use reseg::model::{load_model, Model, ModelConfig};
use reseg::training::{evaluate, median_frequency_weights, train as run_training, LossConfig, TrainState};
use reseg::Tensor;

use crate::run_config::{load_model_config, Balance, RunConfig};
use crate::{usage, EvalArgs, Failure, GradcheckArgs, PredictArgs, SynthArgs, TrainArgs};

pub fn synth(args: SynthArgs) -> Result<ExitCode, Failure> {
    let cfg = SynthConfig::new(args.n, args.size, args.size, args.classes, args.seed);
    cfg.validate().map_err(usage)?;
    if let Ok(mut entries) = fs::read_dir(&args.out) {
        if entries.next().is_some() && !args.force {
            return Err(anyhow!(
                "{} exists and is not empty; pass --force to write into it",
                args.out.display()
            )
            .into());
        }
    }
    let manifest = synth_dataset(&cfg, &args.out)?;
    println!(
        "wrote {} samples ({} train, {} valid, {} test) to {}",
        manifest.samples.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Valid),
        manifest.count(Split::Test),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Removes the run lock when the command ends, however it ends.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join("train.lock");
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| format!("{} is locked by another run (remove train.lock if stale)", dir.display()))?;
        Ok(RunLock(path))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

pub fn train(args: TrainArgs) -> Result<ExitCode, Failure> {
    let mut cfg = RunConfig::load(&args.config).map_err(usage)?;
    if let Some(e) = args.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = args.out {
        cfg.output_dir = o;
    }
    if let Some(b) = args.balance {
        cfg.balance = b;
    }
    cfg.train.checkpoint_dir = Some(cfg.output_dir.clone());
    cfg.validate().map_err(usage)?;
    if !cfg.dataset.is_file() {
        return Err(usage(anyhow!("dataset manifest {} not found", cfg.dataset.display())));
    }
    let dataset = Dataset::load(&cfg.dataset)?;
    if dataset.classes() != cfg.model.classes {
        return Err(usage(anyhow!(
            "model has {} classes but the dataset lists {}",
            cfg.model.classes,
            dataset.classes()
        )));
    }
    match (cfg.loss.void_class, dataset.void_index()) {
        (None, v) => cfg.loss.void_class = v,
        (Some(a), Some(b)) if a != b => {
            return Err(usage(anyhow!("loss void_class {a} differs from the manifest void_index {b}")));
        }
        _ => {}
    }
    if cfg.balance == Balance::MedianFrequency {
        let freqs = dataset.class_frequencies(Split::Train)?;
        cfg.loss.class_weights = Some(median_frequency_weights(&freqs)?);
    }
    cfg.validate().map_err(usage)?;

    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let _lock = RunLock::acquire(&out)?;
    let last = out.join("last.model");
    let mut state = if args.resume {
        let state = TrainState::resume(&last)?;
        if state.model.config() != &cfg.model {
            return Err(usage(anyhow!("{} was trained with a different model config", last.display())));
        }
        println!("resuming after epoch {}", state.epoch);
        state
    } else {
        if last.exists() {
            return Err(anyhow!("{} already holds a run; pass --resume to continue it", out.display()).into());
        }
        TrainState::new(Model::build(&cfg.model, cfg.model.seed)?)
    };
    fs::write(out.join("run_config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;

    let train_set = dataset.split(Split::Train);
    let valid_set = dataset.split(Split::Valid);
    let log = run_training(&mut state, &train_set, &valid_set, &cfg.train, &cfg.loss)?;
    match state.best_iou {
        Some(iou) => println!(
            "trained {} epochs ({} this run); best validation IoU {:.1}%",
            state.epoch,
            log.records.len(),
            100.0 * iou
        ),
        None => println!("trained {} epochs", state.epoch),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(args: EvalArgs) -> Result<ExitCode, Failure> {
    let split: Split = args.split.parse().map_err(usage)?;
    let model: Model<f32> = load_model(&args.model)?;
    let dataset = Dataset::load(&args.manifest)?;
    if dataset.classes() != model.config().classes {
        return Err(anyhow!(
            "model predicts {} classes but the dataset lists {}",
            model.config().classes,
            dataset.classes()
        )
        .into());
    }
    let samples = dataset.split(split);
    if samples.is_empty() {
        return Err(anyhow!("split {} is empty", split.name()).into());
    }
    let cm = evaluate(&model, &samples, dataset.void_index())?;
    let report = cm.report(&dataset.manifest.classes)?;
    print!("{}", report.to_table());
    if let Some(dir) = args.out {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("metrics.csv"), report.to_csv())?;
        fs::write(dir.join("metrics.txt"), report.to_table())?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn predict(args: PredictArgs) -> Result<ExitCode, Failure> {
    let model: Model<f32> = load_model(&args.model)?;
    let image: Tensor<f32> = load_image(&args.image)?;
    let want = model.config().input;
    let (h, w) = (image.shape()[0], image.shape()[1]);
    if (h, w) != (want.height, want.width) {
        return Err(anyhow!(
            "{} is {h}×{w} but the model expects {}×{} (height×width)",
            args.image.display(),
            want.height,
            want.width
        )
        .into());
    }
    let probs = model.forward(&image)?;
    let labels = reseg::model::argmax_channels(&probs);
    write_netpbm(&args.out, &Raster::gray(w, h, labels.iter().map(|&l| l as u8).collect())?)?;
    if args.probs {
        let k = model.config().classes;
        let stem = args.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for c in 0..k {
            let gray = probs.data().iter().skip(c).step_by(k).map(|p| (p * 255.0).round() as u8).collect();
            let path = args.out.with_file_name(format!("{stem}.prob{c}.pgm"));
            write_netpbm(&path, &Raster::gray(w, h, gray)?)?;
        }
    }
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(args: GradcheckArgs) -> Result<ExitCode, Failure> {
    let (mut model_cfg, loss) = match &args.config {
        Some(p) => load_model_config(p).map_err(usage)?,
        None => (ModelConfig::tiny(), LossConfig::default()),
    };
    if args.frozen_frontend {
        if !model_cfg.frontend.iter().any(|s| matches!(s, FrontendStage::Conv { .. })) {
            model_cfg.frontend.insert(
                0,
                FrontendStage::Conv {
                    kernel: 3,
                    out_channels: model_cfg.input.channels,
                    padding: 1,
                },
            );
            println!("note: added a 3×3 convolutional stem so there is something to freeze");
        }
        model_cfg.frozen_frontend = true;
    }
    model_cfg.validate().map_err(usage)?;
    if !(args.tolerance > 0.0) || args.batch == 0 {
        return Err(usage(anyhow!("tolerance must be positive and batch at least 1")));
    }
    let model: Model<f64> = Model::build(&model_cfg, model_cfg.seed)?;
    let (images, targets) = random_batch(&model_cfg, args.batch, args.seed);
    let report = gradient_check(&model, &images, &targets, &loss, args.tolerance)?;
    print!("{}", report.to_table());
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
