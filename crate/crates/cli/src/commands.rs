use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cfsr::complexity::{lr_size_for_hr, model_cost_with, CountMode};
use cfsr::data::{self, list_pngs, load_png, save_png, Dataset, ImageBuffer};
use cfsr::metrics::{aggregate, score, ImageScore};
use cfsr::model::fuse_store;
use cfsr::train::{train_loop, LrSchedule, TrainConfig};
use cfsr::{Cfsr, ModelConfig, StoreMode, WeightStore};

use crate::error::Failure;
use crate::{CountArgs, DegradeArgs, EvalArgs, FuseArgs, ModelArgs, SrArgs, TrainArgs};

fn model_config(m: &ModelArgs, scale: usize) -> Result<ModelConfig, Failure> {
    let cfg = ModelConfig::tiny(m.channels, m.blocks, m.layers, m.mixer_kernel, scale);
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(format!("cannot create {}: {e}", dir.display())))
}

/// Loads weights and checks that they were trained for `scale`.
fn load_model(path: &Path, scale: usize) -> Result<Cfsr, Failure> {
    let store = WeightStore::load(path)?;
    let model = Cfsr::from_store_inferred(&store)?;
    let found = model.config().scale;
    if found != scale {
        return Err(Failure::config(format!(
            "scale mismatch: {} holds x{found} weights but --scale is {scale}",
            path.display()
        )));
    }
    Ok(model)
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let model_cfg = model_config(&a.model, a.scale)?;
    let mut cfg = TrainConfig::new(a.iters);
    cfg.batch_size = a.batch;
    cfg.patch_size = a.patch;
    cfg.lr_init = a.lr;
    cfg.adam.beta1 = a.beta1;
    cfg.adam.beta2 = a.beta2;
    cfg.adam.eps = a.eps;
    cfg.schedule = match (&a.milestones, a.constant_lr) {
        (_, true) => LrSchedule::Constant,
        (Some(ms), false) => LrSchedule::HalveAt(ms.clone()),
        (None, false) => LrSchedule::default_for(a.iters),
    };
    cfg.clip_norm = a.clip_norm;
    cfg.seed = a.seed;
    cfg.checkpoint_every = a.checkpoint_every;
    cfg.augment = !a.no_augment;
    cfg.workers = a.workers;
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;

    let dataset = Dataset::from_dir(&a.data, a.lr_dir.as_deref(), a.scale)?;
    let mut model = match &a.init {
        Some(path) => {
            let m = load_model(path, a.scale)?;
            if m.mode() != StoreMode::Branched {
                return Err(Failure::config(format!("{} holds fused weights", path.display())));
            }
            m
        }
        None => Cfsr::init_seeded(model_cfg, a.seed)?,
    };
    log::info!(
        "training on {} image(s) for {} iterations, batch {} of {}x{} patches",
        dataset.len(),
        cfg.total_iters,
        cfg.batch_size,
        cfg.patch_size,
        cfg.patch_size
    );
    let report = train_loop(&mut model, &dataset, &cfg, Some(&a.out))?;
    match (report.losses.first(), report.losses.last()) {
        (Some(first), Some(last)) => println!("loss: first {first:.6}, final {last:.6}"),
        _ => println!("no iterations run"),
    }
    for p in &report.checkpoints {
        println!("checkpoint: {}", p.display());
    }
    Ok(())
}

/// (source, destination) pairs for a file or a directory of PNGs.
fn plan_io(input: &Path, out: &Path) -> Result<Vec<(PathBuf, PathBuf)>, Failure> {
    if input.is_dir() {
        let files = list_pngs(input)?;
        if files.is_empty() {
            return Err(Failure::config(format!("no PNG files in {}", input.display())));
        }
        create_dir(out)?;
        Ok(files.into_iter().map(|f| (f.clone(), out.join(file_name(&f)))).collect())
    } else if input.is_file() {
        let dst = if out.is_dir() { out.join(file_name(input)) } else { out.to_path_buf() };
        Ok(vec![(input.to_path_buf(), dst)])
    } else {
        Err(Failure::io(format!("file not found: {}", input.display())))
    }
}

pub fn sr(a: SrArgs) -> Result<(), Failure> {
    let model = load_model(&a.weights, a.scale)?;
    let (model, reference) = if a.fused && model.mode() == StoreMode::Branched {
        (model.fused(), Some(model))
    } else {
        (model, None)
    };
    let jobs = plan_io(&a.input, &a.out)?;
    for (i, (src, dst)) in jobs.iter().enumerate() {
        let x = load_png(src)?.to_tensor();
        let y = model.infer(&x)?;
        if let (0, Some(branched)) = (i, &reference) {
            let yb = branched.infer(&x)?;
            let float = yb.max_abs_diff(&y)?;
            let a8 = ImageBuffer::from_tensor(&yb, 0)?.to_u8();
            let b8 = ImageBuffer::from_tensor(&y, 0)?.to_u8();
            let levels = a8
                .as_u8()
                .into_iter()
                .flatten()
                .zip(b8.as_u8().into_iter().flatten())
                .map(|(p, q)| p.abs_diff(*q))
                .max()
                .unwrap_or(0);
            println!("fusion residual on {}: max abs {float:.3e}, {levels} u8 level(s)", file_name(src));
        }
        save_png(&ImageBuffer::from_tensor(&y, 0)?, dst)?;
        println!("{} -> {}", src.display(), dst.display());
    }
    Ok(())
}

pub fn fuse(a: FuseArgs) -> Result<(), Failure> {
    let store = WeightStore::load(&a.input)?;
    let fused = fuse_store(&store)?;
    println!("params before: {}", store.num_scalars());
    println!("params after: {}", fused.num_scalars());
    fused.save(&a.out)?;
    Ok(())
}

fn fmt_psnr(p: f64) -> String {
    if p.is_infinite() {
        "inf".to_string()
    } else {
        format!("{p:.4}")
    }
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    let border = a.border.unwrap_or(a.scale);
    let mut scores: Vec<ImageScore> = Vec::new();
    if let Some(weights) = &a.weights {
        let model = load_model(weights, a.scale)?;
        let dataset = Dataset::from_dir(&a.hr, a.lr_dir.as_deref(), a.scale)?;
        for pair in dataset.pairs() {
            let y = model.infer(&pair.lr.to_tensor())?;
            let sr = ImageBuffer::from_tensor(&y, 0)?;
            scores.push(score(&pair.name, &sr, &pair.hr, border)?);
        }
    } else {
        let sr_dir = a.sr.as_deref().ok_or_else(|| Failure::usage("--sr or --weights is required"))?;
        let files = list_pngs(&a.hr)?;
        if files.is_empty() {
            return Err(Failure::config(format!("no PNG files in {}", a.hr.display())));
        }
        for path in files {
            let name = file_name(&path);
            let hr = load_png(&path)?.center_crop_to_multiple(a.scale)?;
            let sr = load_png(sr_dir.join(&name))?;
            scores.push(score(&name, &sr, &hr, border)?);
        }
    }
    let mean = aggregate(&scores);
    let width = scores.iter().map(|s| s.name.len()).chain([4]).max().unwrap_or(4);
    println!("{:<width$}  {:>10}  {:>8}", "name", "psnr_db", "ssim");
    for s in &scores {
        println!("{:<width$}  {:>10}  {:>8.4}", s.name, fmt_psnr(s.psnr_db), s.ssim);
    }
    println!("{:<width$}  {:>10}  {:>8.4}", "mean", fmt_psnr(mean.psnr_db), mean.ssim);
    if let Some(path) = &a.csv {
        let mut out = String::from("name,psnr_db,ssim\n");
        for s in &scores {
            let _ = writeln!(out, "{},{},{}", s.name, s.psnr_db, s.ssim);
        }
        let _ = writeln!(out, "mean,{},{}", mean.psnr_db, mean.ssim);
        std::fs::write(path, out).map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn parse_size(s: &str) -> Result<(u64, u64), Failure> {
    let bad = || Failure::usage(format!("malformed size {s:?}; expected WIDTHxHEIGHT"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: u64 = w.trim().parse().map_err(|_| bad())?;
    let h: u64 = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

fn human(v: u128, unit: &[(u128, &str)]) -> String {
    for &(div, suffix) in unit {
        if v >= div {
            return format!("{:.2}{suffix}", v as f64 / div as f64);
        }
    }
    v.to_string()
}

pub fn count(a: CountArgs) -> Result<(), Failure> {
    let (w, h) = parse_size(&a.hr_size)?;
    let cfg = model_config(&a.model, a.scale)?;
    let (lh, lw) = lr_size_for_hr(h, w, a.scale as u64);
    if lh == 0 || lw == 0 {
        return Err(Failure::usage(format!("HR size {w}x{h} is smaller than the scale")));
    }
    let mode = if a.branched { CountMode::Branched } else { CountMode::Fused };
    let report = model_cost_with(&cfg, lh, lw, mode);
    if a.csv {
        print!("{}", report.to_csv());
        return Ok(());
    }
    let form = if a.branched { "branched" } else { "fused" };
    println!("x{} on {w}x{h} HR ({lw}x{lh} LR), {form} form", a.scale);
    print!("{}", report.to_text());
    let units = [(1_000_000_000, "G"), (1_000_000, "M"), (1_000, "K")];
    println!("params: {} ({})", report.params, human(report.params, &units));
    println!("flops: {} ({})", report.flops, human(report.flops, &units));
    Ok(())
}

pub fn degrade(a: DegradeArgs) -> Result<(), Failure> {
    let files = list_pngs(&a.input)?;
    if files.is_empty() {
        return Err(Failure::config(format!("no PNG files in {}", a.input.display())));
    }
    create_dir(&a.out)?;
    for path in &files {
        let (_, lr) = data::degrade(&load_png(path)?, a.scale)?;
        save_png(&lr, a.out.join(file_name(path)))?;
    }
    println!("wrote {} LR image(s) to {}", files.len(), a.out.display());
    Ok(())
}
