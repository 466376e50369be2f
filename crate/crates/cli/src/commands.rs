use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use hazn_core::cascade::{multi_scale_average, run_hazn, MSA_SCALES};
use hazn_core::config::{RegionSource, RunConfig};
use hazn_core::experiment::{
    self, class_names, image_stage_samples, object_stage_samples, part_stage_samples, test_seed, train_stage_logged,
    DatasetDir, Method, SceneSource,
};
use hazn_core::grid::argmax_labels;
use hazn_core::io;
use hazn_core::metrics::Evaluator;
use hazn_core::scorer::{ScorerParams, Stage};
use hazn_core::{CascadeConfig, EvalReport, HaznError, StageModels, NUM_CLASSES};

use crate::{CliError, CliResult, ConfigArgs};

pub const CONFIG_NAME: &str = "config.txt";
pub const SEED_ENV: &str = "HAZN_SEED";

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn model_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("{}.model", stage.name()))
}

pub fn resolve_config(args: &ConfigArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &args.config {
        let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        cfg.apply_text(&text)
            .map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    if !args.set.is_empty() {
        cfg.apply_text(&args.set.join("\n"))
            .map_err(|e| usage(format!("--set: {e}")))?;
    }
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.seed = v.trim().parse().map_err(|e| usage(format!("{SEED_ENV}={v:?}: {e}")))?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn write_config(dir: &Path, name: &str, cfg: &RunConfig) -> CliResult<()> {
    io::write_atomic(&dir.join(name), cfg.to_text().as_bytes())?;
    Ok(())
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

pub fn synth(args: &ConfigArgs, n: usize, out: &Path) -> CliResult<()> {
    let cfg = resolve_config(args)?;
    let header = format!("hazn synthetic dataset\nseed {}\nscenes {n}", cfg.seed);
    experiment::write_dataset(out, cfg.seed, &cfg.scene, n, &header)?;
    write_config(out, CONFIG_NAME, &cfg)?;
    log(&format!("wrote {n} scenes to {}", out.display()));
    Ok(())
}

pub struct TrainArgs {
    pub cfg: ConfigArgs,
    pub data: PathBuf,
    pub stage: String,
    pub out: PathBuf,
    pub models: PathBuf,
    pub gt_boxes: bool,
    pub lr: Option<f64>,
    pub iterations: Option<usize>,
}

fn load_earlier(dir: &Path, stage: Stage, needed_by: Stage) -> CliResult<ScorerParams> {
    let p = model_path(dir, stage);
    if !p.exists() {
        return Err(usage(format!(
            "the {} stage needs {}; train the {} stage first or pass --gt-boxes",
            needed_by.name(),
            p.display(),
            stage.name()
        )));
    }
    let m = ScorerParams::load(&p)?;
    if m.stage != stage {
        return Err(usage(format!("{} holds a {} model", p.display(), m.stage.name())));
    }
    Ok(m)
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let stage = Stage::parse(&a.stage).map_err(usage)?;
    let mut cfg = resolve_config(&a.cfg)?;
    let t = &mut cfg.train[stage as usize];
    if let Some(lr) = a.lr {
        t.lr = lr;
    }
    if let Some(n) = a.iterations {
        t.iterations = n;
    }
    if a.gt_boxes {
        cfg.data.regions = RegionSource::GroundTruth;
    }
    cfg.validate().map_err(usage)?;

    let source = SceneSource::Directory(DatasetDir::open(&a.data)?);
    let start = Instant::now();
    let samples = match stage {
        Stage::Image => image_stage_samples(&source, &cfg)?,
        Stage::Object if a.gt_boxes => object_stage_samples(&source, &cfg, None)?,
        Stage::Object => {
            let image = load_earlier(&a.models, Stage::Image, stage)?;
            object_stage_samples(&source, &cfg, Some(&image))?
        }
        Stage::Part if a.gt_boxes => part_stage_samples(&source, &cfg, None)?,
        Stage::Part => {
            let image = load_earlier(&a.models, Stage::Image, stage)?;
            let object = load_earlier(&a.models, Stage::Object, stage)?;
            part_stage_samples(&source, &cfg, Some((&image, &object)))?
        }
    };
    log(&format!(
        "{}: {} training crops from {} scenes in {:.1}s",
        stage.name(),
        samples.len(),
        source.len(),
        start.elapsed().as_secs_f64()
    ));
    let out = train_stage_logged(stage, &samples, &cfg, &mut |m| log(m))?;
    out.params.save(&model_path(&a.out, stage))?;
    io::write_atomic(
        &a.out.join(format!("{}_loss.csv", stage.name())),
        out.curve_csv().as_bytes(),
    )?;
    write_config(&a.out, &format!("{}_{CONFIG_NAME}", stage.name()), &cfg)?;
    log(&format!(
        "saved {} in {:.1}s",
        model_path(&a.out, stage).display(),
        start.elapsed().as_secs_f64()
    ));
    Ok(())
}

pub struct InferArgs {
    pub cfg: ConfigArgs,
    pub models: PathBuf,
    pub images: Vec<PathBuf>,
    pub out: PathBuf,
    pub object_scale: bool,
    pub part_scale: bool,
    pub baseline_msa: bool,
}

/// Input images: files as given, directories expanded to their `img_*.png`
/// files, or every `.png` when there are none.
fn collect_images(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if !p.is_dir() {
            if !p.exists() {
                return Err(usage(format!("{} does not exist", p.display())));
            }
            out.push(p.clone());
            continue;
        }
        let rd = std::fs::read_dir(p).map_err(|e| HaznError::io(p, e))?;
        let mut pngs: Vec<PathBuf> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|f| f.extension().is_some_and(|x| x == "png"))
            .collect();
        pngs.sort();
        let named: Vec<PathBuf> = pngs.iter().filter(|f| stem(f).starts_with("img_")).cloned().collect();
        out.extend(if named.is_empty() { pngs } else { named });
    }
    if out.is_empty() {
        return Err(usage("no input images"));
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// `img_00007` becomes `pred_00007`, anything else gets a `_pred` suffix.
pub fn output_stem(input: &Path, kind: &str) -> String {
    let s = stem(input);
    match s.strip_prefix("img_") {
        Some(id) => format!("{kind}_{id}"),
        None => format!("{s}_{kind}"),
    }
}

pub fn infer(a: &InferArgs) -> CliResult<()> {
    let mut cfg = resolve_config(&a.cfg)?;
    cfg.cascade.enable_object_stage = a.object_scale;
    cfg.cascade.enable_part_stage = a.part_scale;
    let images = collect_images(&a.images)?;
    let mut names = std::collections::HashSet::new();
    for p in &images {
        if !names.insert(output_stem(p, "pred")) {
            return Err(usage(format!("two inputs map to the output name of {}", p.display())));
        }
    }
    let image = ScorerParams::load(&model_path(&a.models, Stage::Image))?;
    let uses_cascade = !a.baseline_msa;
    let object = if uses_cascade && (a.object_scale || a.part_scale) {
        Some(ScorerParams::load(&model_path(&a.models, Stage::Object))?)
    } else {
        None
    };
    let part = if uses_cascade && a.part_scale {
        Some(ScorerParams::load(&model_path(&a.models, Stage::Part))?)
    } else {
        None
    };
    let models = StageModels::new(image, object, part)?;
    let method = if a.baseline_msa {
        Method::MultiScale
    } else {
        match (a.object_scale, a.part_scale) {
            (false, false) => Method::Baseline,
            (false, true) => Method::NoObjectScale,
            (true, false) => Method::NoPartScale,
            (true, true) => Method::Full,
        }
    };
    std::fs::create_dir_all(&a.out).map_err(|e| HaznError::io(&a.out, e))?;
    write_config(&a.out, CONFIG_NAME, &cfg)?;

    let traces: Vec<String> = images
        .par_iter()
        .map(|p| infer_one(p, &a.out, &models, &cfg.cascade, a.baseline_msa))
        .collect::<CliResult<_>>()?;
    let mut manifest = format!("# hazn infer\nmethod {}\n", method.name());
    for t in traces {
        manifest.push_str(&t);
    }
    io::write_atomic(&a.out.join(experiment::MANIFEST_NAME), manifest.as_bytes())?;
    log(&format!("segmented {} images into {}", images.len(), a.out.display()));
    Ok(())
}

fn infer_one(path: &Path, out: &Path, models: &StageModels, cc: &CascadeConfig, msa: bool) -> CliResult<String> {
    let img = io::ensure_rgb(io::read_image(path)?)?;
    let pred = out.join(format!("{}.png", output_stem(path, "pred")));
    let overlay = out.join(format!("{}.png", output_stem(path, "overlay")));
    let mut entry = format!("image {} -> {}\n", path.display(), pred.display());
    let (labels, boxes) = if msa {
        let s = multi_scale_average(&img, &models.image, &MSA_SCALES)?;
        let scales: Vec<String> = MSA_SCALES.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(entry, "msa scales {}", scales.join(","));
        (argmax_labels(&s), Vec::new())
    } else {
        let r = run_hazn(&img, models, cc)?;
        entry.push_str(&r.trace());
        let boxes = r.stages[0].proposals.iter().map(|p| p.bbox).collect();
        (r.labels, boxes)
    };
    io::write_labels(&pred, &labels)?;
    io::write_image(&overlay, &io::render_overlay(&img, &labels, &boxes)?)?;
    Ok(entry)
}

pub fn pred_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("pred_{id:05}.png"))
}

pub fn eval(pred: &Path, gt: &Path, out: &Path, method: &str) -> CliResult<()> {
    let data = DatasetDir::open(gt)?;
    let mut e = Evaluator::new(NUM_CLASSES);
    for i in 0..data.len() {
        let s = data.load(i)?;
        let id = data.scenes[i].0;
        let p = io::read_labels(&pred_path(pred, id), NUM_CLASSES)?;
        if !p.same_size(&s.gt_parts) {
            return Err(HaznError::invalid(format!("prediction {id} differs in size from its ground truth")).into());
        }
        e.add_image(&p, &s.gt_parts, &s.instance_masks(), &s.instance_boxes)?;
    }
    let r = e.report(method);
    let csv = EvalReport::to_csv(std::slice::from_ref(&r), &class_names());
    io::write_atomic(out, csv.as_bytes())?;
    print!("{csv}");
    log(&r.bin_summary());
    Ok(())
}

pub struct CompareArgs {
    pub cfg: ConfigArgs,
    pub out: PathBuf,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub gt_boxes: bool,
    pub methods: Vec<String>,
}

pub fn compare(a: &CompareArgs) -> CliResult<()> {
    let mut cfg = resolve_config(&a.cfg)?;
    if a.gt_boxes {
        cfg.data.regions = RegionSource::GroundTruth;
    }
    let methods: Vec<Method> = if a.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        a.methods
            .iter()
            .map(|m| Method::parse(m))
            .collect::<Result<_, _>>()
            .map_err(usage)?
    };
    let start = Instant::now();
    let models_dir = a.out.join("models");
    let models = match &a.models {
        Some(dir) => StageModels::new(
            ScorerParams::load(&model_path(dir, Stage::Image))?,
            Some(ScorerParams::load(&model_path(dir, Stage::Object))?),
            Some(ScorerParams::load(&model_path(dir, Stage::Part))?),
        )?,
        None => {
            let train = match &a.train_data {
                Some(d) => SceneSource::Directory(DatasetDir::open(d)?),
                None => SceneSource::Synthetic {
                    seed: cfg.seed,
                    cfg: cfg.scene.clone(),
                    n: cfg.data.n_train,
                },
            };
            let t = experiment::train_all(&train, &cfg, |m| {
                log(&format!("[{:7.1}s] {m}", start.elapsed().as_secs_f64()))
            })?;
            for (stage, o) in &t.outcomes {
                o.params.save(&model_path(&models_dir, *stage))?;
                io::write_atomic(
                    &models_dir.join(format!("{}_loss.csv", stage.name())),
                    o.curve_csv().as_bytes(),
                )?;
            }
            t.models
        }
    };
    write_config(&a.out, CONFIG_NAME, &cfg)?;
    let test = match &a.test_data {
        Some(d) => SceneSource::Directory(DatasetDir::open(d)?),
        None => SceneSource::Synthetic {
            seed: test_seed(cfg.seed),
            cfg: cfg.scene.clone(),
            n: cfg.data.n_test,
        },
    };
    let mut manifest = String::from("# hazn compare\n");
    let reports = experiment::compare(&test, &models, &cfg.cascade, &methods, |id, preds| {
        for p in preds {
            io::write_labels(&pred_path(&a.out.join("labels").join(p.method.name()), id), &p.labels)?;
            if let Some(r) = &p.trace {
                let _ = writeln!(manifest, "image {id:05} method {}", p.method.name());
                manifest.push_str(&r.trace());
            }
        }
        Ok(())
    })?;
    io::write_atomic(&a.out.join(experiment::MANIFEST_NAME), manifest.as_bytes())?;
    let csv = EvalReport::to_csv(&reports, &class_names());
    io::write_atomic(&a.out.join("results.csv"), csv.as_bytes())?;
    print!("{csv}");
    if let Some(r) = reports.first() {
        log(&format!("test objects per size bin: {}", r.bin_summary()));
    }
    log(&format!("done in {:.1}s", start.elapsed().as_secs_f64()));
    Ok(())
}
