//! Subcommand bodies. Data goes to files under the workdir; progress and
//! summaries go to stderr and stdout respectively.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hfcseg::checkpoint::{
    push_featurizer, push_segmenter, push_swav, read_featurizer, read_latents, read_segmenter,
    write_latents, Checkpoint,
};
use hfcseg::config::PipelineConfig;
use hfcseg::generator::{GeneratedSample, Generator, LatentMode};
use hfcseg::metrics::{curve_csv, iou_pd_curve, precision_at_iou};
use hfcseg::pipeline::{
    evaluate_with_labels, fit_kmeans, infer as infer_one, select_one_shot,
    train_clustering_with_progress, train_segmenter, Evaluation, Featurizer,
};
use hfcseg::pnm::{read_mask, write_atomic, write_mask, PnmImage};
use hfcseg::rng::{derive_seed, streams};
use hfcseg::segmenter::{InputMode, Segmenter};
use hfcseg::swav::SwavModel;
use hfcseg::Error;

pub const WORKDIR_ENV: &str = "HFCSEG_WORKDIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Stage(#[from] Error),
}

impl CliError {
    pub fn status(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Stage(_) => 1,
        }
    }
}

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

pub struct Context {
    pub cfg: PipelineConfig,
    pub workdir: PathBuf,
}

impl Context {
    /// Config file, then the workdir variable, then `--workdir`, then
    /// `--set` overrides in order.
    pub fn load(
        config: Option<&Path>,
        env_workdir: Option<PathBuf>,
        workdir: Option<PathBuf>,
        overrides: &[String],
    ) -> Result<Self> {
        let mut cfg = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
                PipelineConfig::parse(&text).map_err(usage)?
            }
            None => PipelineConfig::default(),
        };
        for dir in [env_workdir, workdir].into_iter().flatten() {
            cfg.paths.workdir = dir.display().to_string();
        }
        for o in overrides {
            cfg.apply_override(o).map_err(usage)?;
        }
        cfg.validate().map_err(usage)?;
        let workdir = PathBuf::from(&cfg.paths.workdir);
        Ok(Self { cfg, workdir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.workdir.join(name)
    }

    fn generator(&self) -> Result<Generator> {
        Ok(Generator::new(self.cfg.generator.clone())?)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn write_sample(stem: &Path, sample: &GeneratedSample) -> Result<()> {
    write_atomic(
        &stem.with_extension("ppm"),
        &PnmImage::from_rgb(&sample.image)?.encode(),
    )?;
    write_mask(stem, &sample.gt_mask)?;
    write_latents(&stem.with_extension("latents"), &sample.latents)?;
    Ok(())
}

pub fn gen(ctx: &Context, n: usize, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(ctx.cfg.seed);
    let g = ctx.generator()?;
    let dir = ctx.path("samples");
    for i in 0..n {
        let latents = g.sample_latents(derive_seed(seed, streams::GEN, i as u64), LatentMode::Broadcast);
        let sample = g.generate(&latents)?;
        write_sample(&dir.join(format!("sample_{i:04}")), &sample)?;
    }
    eprintln!("wrote {n} samples to {}", dir.display());
    Ok(())
}

fn train_model(ctx: &Context, cfg: &PipelineConfig, quiet: bool) -> Result<SwavModel> {
    let g = Generator::new(cfg.generator.clone())?;
    let mut history = String::from("epoch,global,local,total\n");
    let report = train_clustering_with_progress(&g, &cfg.swav, cfg.seed, |e| {
        if !quiet {
            eprintln!(
                "swav epoch {:>4}  global {:.4}  local {:.4}  total {:.4}",
                e.epoch, e.global, e.local, e.total
            );
        }
        let _ = writeln!(history, "{},{},{},{}", e.epoch, e.global, e.local, e.total);
    })?;
    if !quiet {
        write_text(&ctx.path("swav_history.csv"), &history)?;
    }
    if let Some(reason) = report.aborted {
        return Err(Error::Training(reason).into());
    }
    Ok(report.model)
}

pub fn train_swav(ctx: &Context) -> Result<()> {
    let model = train_model(ctx, &ctx.cfg, false)?;
    let mut ckpt = Checkpoint {
        config: ctx.cfg.to_text(),
        ..Default::default()
    };
    push_swav(&mut ckpt, &model);
    let path = ctx.path(&ctx.cfg.paths.checkpoint);
    ckpt.save(&path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

/// Reads the one-shot sample at `stem`, or selects one and writes it there
/// when the default location is still empty.
fn one_shot_sample(ctx: &Context, g: &Generator, stem: Option<&Path>) -> Result<GeneratedSample> {
    let stem = match stem {
        Some(s) => s.to_path_buf(),
        None => {
            let s = ctx.path(&ctx.cfg.paths.one_shot_sample);
            if !s.with_extension("latents").exists() {
                let sample = select_one_shot(g, ctx.cfg.seed, ctx.cfg.generator.rare_label_id())?;
                write_sample(&s, &sample)?;
                eprintln!("selected one-shot sample {}", s.display());
                return Ok(sample);
            }
            s
        }
    };
    let latents = read_latents(&stem.with_extension("latents"))?;
    let annotation = read_mask(&stem)?;
    let mut sample = g.generate(&latents)?;
    if annotation.label_table() != sample.gt_mask.label_table()
        || annotation.height() != sample.gt_mask.height()
        || annotation.width() != sample.gt_mask.width()
    {
        return Err(Error::Contract(format!(
            "annotation {} does not match the generator's label table or size",
            stem.display()
        ))
        .into());
    }
    sample.gt_mask = annotation;
    Ok(sample)
}

fn load_swav_featurizer(ctx: &Context) -> Result<Featurizer> {
    if ctx.cfg.segmenter.input_mode == InputMode::Raw {
        return Ok(Featurizer::Raw);
    }
    let ckpt = Checkpoint::load(&ctx.path(&ctx.cfg.paths.checkpoint))?;
    Ok(read_featurizer(&ckpt, &ctx.cfg)?)
}

fn save_bundle(path: &Path, cfg: &PipelineConfig, f: &Featurizer, seg: &Segmenter) -> Result<()> {
    let mut ckpt = Checkpoint {
        config: cfg.to_text(),
        ..Default::default()
    };
    push_featurizer(&mut ckpt, f);
    push_segmenter(&mut ckpt, seg);
    ckpt.save(path)?;
    Ok(())
}

/// Featurizer and segmenter from a bundle, plus the config it was trained
/// with.
fn load_bundle(path: &Path) -> Result<(Featurizer, Segmenter, PipelineConfig)> {
    let ckpt = Checkpoint::load(path)?;
    let snapshot = PipelineConfig::parse(&ckpt.config)?;
    let f = read_featurizer(&ckpt, &snapshot)?;
    let seg = read_segmenter(&ckpt, &snapshot.segmenter)?;
    Ok((f, seg, snapshot))
}

fn history_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(s, "{i},{l}");
    }
    s
}

pub fn train_seg(ctx: &Context, sample: Option<&Path>) -> Result<()> {
    let g = ctx.generator()?;
    let sample = one_shot_sample(ctx, &g, sample)?;
    let f = load_swav_featurizer(ctx)?;
    let cfg = &ctx.cfg;
    let (seg, history) = train_segmenter(
        &g,
        &f,
        &cfg.segmenter,
        &cfg.one_shot,
        &sample,
        cfg.swav.upsample,
        cfg.seed,
    )?;
    write_text(&ctx.path("segmenter_history.csv"), &history_csv(&history))?;
    let path = ctx.path(&cfg.paths.segmenter);
    save_bundle(&path, cfg, &f, &seg)?;
    eprintln!(
        "segmenter loss {:.4} -> {:.4}; wrote {}",
        history.first().copied().unwrap_or(f64::NAN),
        history.last().copied().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

pub fn infer(ctx: &Context, n: usize, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(ctx.cfg.seed);
    let (f, seg, snapshot) = load_bundle(&ctx.path(&ctx.cfg.paths.segmenter))?;
    let g = Generator::new(snapshot.generator.clone())?;
    let dir = ctx.path("infer");
    let start = Instant::now();
    for i in 0..n {
        let latents = g.sample_latents(derive_seed(seed, streams::INFER, i as u64), LatentMode::Broadcast);
        let sample = g.generate(&latents)?;
        let (pred, _) = infer_one(&g, &f, &seg, &latents, snapshot.swav.upsample)?;
        write_atomic(
            &dir.join(format!("image_{i:04}.ppm")),
            &PnmImage::from_rgb(&sample.image)?.encode(),
        )?;
        write_mask(&dir.join(format!("pred_{i:04}")), &pred)?;
        write_mask(&dir.join(format!("gt_{i:04}")), &sample.gt_mask)?;
    }
    eprintln!(
        "segmented {n} images in {:.2}s into {}",
        start.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok(())
}

fn run_eval(ctx: &Context, f: &Featurizer, seg: &Segmenter, snapshot: &PipelineConfig) -> Result<Evaluation> {
    let g = Generator::new(snapshot.generator.clone())?;
    Ok(evaluate_with_labels(
        &g,
        f,
        seg,
        ctx.cfg.eval.test_images,
        snapshot.swav.upsample,
        ctx.cfg.seed,
        &snapshot.fg_labels(),
    )?)
}

/// Mean IoU of each label over the images where it occurs.
fn label_means(eval: &Evaluation) -> BTreeMap<u8, f64> {
    let mut sums: BTreeMap<u8, (f64, usize)> = BTreeMap::new();
    for r in &eval.reports {
        for (&l, &v) in &r.per_label_iou {
            let e = sums.entry(l).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(l, (s, n))| (l, s / n as f64)).collect()
}

fn write_eval(ctx: &Context, prefix: &str, eval: &Evaluation, snapshot: &PipelineConfig) -> Result<()> {
    let mut images = String::from("image,wiou,fg_iou,pixel_accuracy\n");
    for (i, r) in eval.reports.iter().enumerate() {
        let _ = writeln!(images, "{i},{},{},{}", r.wiou, r.fg_iou, r.pixel_accuracy);
    }
    write_text(&ctx.path(&format!("{prefix}_images.csv")), &images)?;
    let mut labels = String::from("label,iou\n");
    for (l, v) in label_means(eval) {
        let _ = writeln!(labels, "{l},{v}");
    }
    write_text(&ctx.path(&format!("{prefix}_labels.csv")), &labels)?;
    println!("mean_wiou {:.6}", eval.mean_wiou());
    println!("mean_fg_iou {:.6}", eval.mean_fg_iou());
    if let Some(rare) = snapshot.generator.rare_label_id() {
        let p = precision_at_iou(
            &eval.predictions,
            &eval.ground_truth,
            rare,
            ctx.cfg.eval.iou_threshold,
        )?;
        println!(
            "rare_precision {:.6} (tp {}, fp {})",
            p.precision, p.true_positives, p.false_positives
        );
    }
    Ok(())
}

fn bundle_path(ctx: &Context, path: Option<&Path>) -> PathBuf {
    path.map_or_else(|| ctx.path(&ctx.cfg.paths.segmenter), Path::to_path_buf)
}

pub fn eval(ctx: &Context, segmenter: Option<&Path>) -> Result<()> {
    let (f, seg, snapshot) = load_bundle(&bundle_path(ctx, segmenter))?;
    let eval = run_eval(ctx, &f, &seg, &snapshot)?;
    write_eval(ctx, "eval", &eval, &snapshot)
}

pub fn curves(ctx: &Context, segmenter: Option<&Path>) -> Result<()> {
    let (f, seg, snapshot) = load_bundle(&bundle_path(ctx, segmenter))?;
    let eval = run_eval(ctx, &f, &seg, &snapshot)?;
    let curve = iou_pd_curve(&eval.reports, &ctx.cfg.eval.thresholds)?;
    let path = ctx.path("curves.csv");
    write_text(&path, &curve_csv(&curve))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn baseline_kmeans(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let g = ctx.generator()?;
    let f = Featurizer::KMeans(fit_kmeans(&g, &cfg.kmeans, cfg.swav.upsample, cfg.seed)?);
    let sample = one_shot_sample(ctx, &g, None)?;
    let (seg, history) = train_segmenter(
        &g,
        &f,
        &cfg.segmenter,
        &cfg.one_shot,
        &sample,
        cfg.swav.upsample,
        cfg.seed,
    )?;
    write_text(&ctx.path("kmeans_segmenter_history.csv"), &history_csv(&history))?;
    save_bundle(&ctx.path("kmeans_segmenter.ckpt"), cfg, &f, &seg)?;
    let eval = run_eval(ctx, &f, &seg, cfg)?;
    write_eval(ctx, "kmeans_eval", &eval, cfg)
}

/// Keys that change stage one; cells agreeing on them share a SwAV model.
fn stage_one_key(cfg: &PipelineConfig) -> String {
    cfg.entries()
        .into_iter()
        .filter(|(k, _)| {
            ["run.", "generator.", "augment.", "swav."]
                .iter()
                .any(|p| k.starts_with(p))
        })
        .map(|(k, v)| format!("{k}={v};"))
        .collect()
}

pub fn ablate(ctx: &Context, key: &str, values: &str) -> Result<()> {
    if !PipelineConfig::keys().contains(&key) {
        return Err(CliError::Usage(format!("unknown config key {key:?}")));
    }
    let cells: Vec<PipelineConfig> = values
        .split(',')
        .map(|v| {
            let mut c = ctx.cfg.clone();
            c.set(key, v.trim()).map_err(usage)?;
            c.validate().map_err(usage)?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from("key,value,seed,config_hash,mean_wiou,mean_fg_iou\n");
    let mut cache: Option<(String, SwavModel)> = None;
    for (cell, v) in cells.iter().zip(values.split(',')) {
        let g = Generator::new(cell.generator.clone())?;
        let f = match cell.segmenter.input_mode {
            InputMode::Raw => Featurizer::Raw,
            mode => {
                let k = stage_one_key(cell);
                let model = match &cache {
                    Some((ck, m)) if *ck == k => m.clone(),
                    _ => {
                        eprintln!("ablate {key}={}: training SwAV", v.trim());
                        let m = train_model(ctx, cell, true)?;
                        cache = Some((k, m.clone()));
                        m
                    }
                };
                Featurizer::for_mode(mode, &model)
            }
        };
        let sample = select_one_shot(&g, cell.seed, cell.generator.rare_label_id())?;
        let (seg, _) = train_segmenter(
            &g,
            &f,
            &cell.segmenter,
            &cell.one_shot,
            &sample,
            cell.swav.upsample,
            cell.seed,
        )?;
        let eval = evaluate_with_labels(
            &g,
            &f,
            &seg,
            cell.eval.test_images,
            cell.swav.upsample,
            cell.seed,
            &cell.fg_labels(),
        )?;
        let row = format!(
            "{key},{},{},{},{},{}",
            v.trim(),
            cell.seed,
            cell.hash(),
            eval.mean_wiou(),
            eval.mean_fg_iou()
        );
        println!("{row}");
        csv.push_str(&row);
        csv.push('\n');
    }
    write_text(&ctx.path(&format!("ablate_{key}.csv")), &csv)
}
