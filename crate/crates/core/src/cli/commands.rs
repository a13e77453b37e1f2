use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use super::Settings;
use crate::backbone::{read_checkpoint, write_checkpoint, Checkpoint, Model, ModelConfig, VelocityModel, WeightSet};
use crate::benchalign::{align_pair, CorrespondenceSet};
use crate::conditioning::{CondMode, Conditioner, GuidanceConfig, GuidanceStyle, LatentCodec, SemanticEncoder};
use crate::degrade::{degrade_batch, DegradeParams};
use crate::distill::{distill as run_distill, one_step_super_resolve, DistillConfig};
use crate::error::{Error, Result};
use crate::imagecore::{gen_procedural_hr, read_image, write_image, Image, ProceduralKind};
use crate::kv::KvDoc;
use crate::metrics::MetricReport;
use crate::numerics::{Graph, ParamSet, Tensor, Var};
use crate::par;
use crate::rng::Seed;
use crate::sampler::{super_resolve, SampleConfig, DEFAULT_STEPS};
use crate::train::{train as run_train, LossLog, TrainObserver, TrainPair, TrainRecipe};

const IMAGE_EXTENSIONS: [&str; 3] = ["ppm", "pgm", "pnm"];

/// Model keys a user may set; grid and channel counts follow from the data.
const MODEL_KEYS: [&str; 7] = ["dim", "depth", "heads", "patch", "mlp_ratio", "d_sem", "use_semantic"];

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

/// Image files of `dir` (or `dir` itself when it is a file), sorted by name.
fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if dir.is_file() {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![(name, dir.to_path_buf())]);
    }
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e));
        if is_image && path.is_file() {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            found.push((name, path));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::contract(format!("no images in {}", dir.display())));
    }
    Ok(found)
}

fn read_all(files: &[(String, PathBuf)]) -> Result<Vec<Image>> {
    par::try_map_indices(files.len(), |i| read_image(&files[i].1))
}

fn weights(settings: &Settings, key: &str) -> Result<WeightSet> {
    match settings.string(key).as_str() {
        "ema" => Ok(WeightSet::Ema),
        "raw" => Ok(WeightSet::Raw),
        other => Err(Error::Config(format!("{key} must be ema or raw, got {other:?}"))),
    }
}

fn delimiter(name: &str) -> Result<char> {
    match name {
        "tab" => Ok('\t'),
        "comma" => Ok(','),
        s if s.chars().count() == 1 => Ok(s.chars().next().unwrap_or('\t')),
        s => Err(Error::Config(format!("delimiter must be tab, comma or one character, got {s:?}"))),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// HR/LR images paired by file name, with their common integer scale.
struct Corpus {
    hr: Vec<Image>,
    lr: Vec<Image>,
    scale: usize,
}

fn load_corpus(hr_dir: &Path, lr_dir: &Path) -> Result<Corpus> {
    let hr_files = list_images(hr_dir)?;
    let lr_files: Vec<(String, PathBuf)> = hr_files
        .iter()
        .map(|(name, _)| {
            let path = lr_dir.join(name);
            if path.is_file() {
                Ok((name.clone(), path))
            } else {
                Err(Error::contract(format!("LR image {} is missing", path.display())))
            }
        })
        .collect::<Result<_>>()?;
    let hr = read_all(&hr_files)?;
    let lr = read_all(&lr_files)?;
    let scale = hr[0].height() / lr[0].height().max(1);
    for (name, (h, l)) in hr_files.iter().map(|f| &f.0).zip(hr.iter().zip(&lr)) {
        if l.height() * scale != h.height() || l.width() * scale != h.width() || l.channels() != h.channels() {
            return Err(Error::contract(format!(
                "{name}: HR {}x{} is not {scale}x the LR {}x{}",
                h.height(),
                h.width(),
                l.height(),
                l.width()
            )));
        }
    }
    Ok(Corpus { hr, lr, scale })
}

fn cond_header(c: &Conditioner, channels: usize) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.set("cond.fold", c.codec.fold);
    doc.set("cond.sem_patch", c.semantic.patch());
    doc.set("cond.sem_seed", c.semantic.seed().0);
    doc.set("cond.scale", c.scale);
    doc.set("cond.channels", channels);
    doc
}

fn conditioner_from(header: &KvDoc) -> Result<(Conditioner, usize)> {
    let channels: usize = header.require("cond.channels")?;
    let semantic = SemanticEncoder::new(
        Seed(header.require("cond.sem_seed")?),
        header.require("cond.sem_patch")?,
        header.require("model.d_sem")?,
        channels,
    )?;
    let conditioner = Conditioner {
        codec: LatentCodec::new(header.require("cond.fold")?)?,
        semantic,
        scale: header.require("cond.scale")?,
    };
    Ok((conditioner, channels))
}

fn build_pairs(corpus: &Corpus, conditioner: &Conditioner) -> Result<Vec<TrainPair<f32>>> {
    par::try_map_indices(corpus.hr.len(), |i| {
        TrainPair::new(&corpus.hr[i], &corpus.lr[i], &conditioner.codec, &conditioner.semantic)
    })
}

/// Loss log plus periodic checkpoints.
struct RunSink {
    log: LossLog<BufWriter<File>>,
    every: usize,
    kind: &'static str,
    checkpoint: PathBuf,
    header: KvDoc,
}

impl RunSink {
    fn new(log_path: &Path, every: usize, kind: &'static str, checkpoint: PathBuf, header: KvDoc) -> Result<Self> {
        let file = File::create(log_path).map_err(|e| Error::io(log_path, e))?;
        Ok(RunSink {
            log: LossLog { out: BufWriter::new(file) },
            every,
            kind,
            checkpoint,
            header,
        })
    }

    fn save(&self, model: &Model<f32>, ema: &ParamSet<f32>) -> Result<()> {
        write_checkpoint(&self.checkpoint, &Checkpoint::from_model(self.kind, model, ema, &self.header)?)
    }

    fn finish(mut self) -> Result<()> {
        self.log.out.flush().map_err(|e| Error::io("<loss log>", e))
    }
}

impl TrainObserver<f32> for RunSink {
    fn on_step(&mut self, step: usize, loss: f64) -> Result<()> {
        self.log.line(step, loss)
    }

    fn checkpoint_every(&self) -> usize {
        self.every
    }

    fn on_checkpoint(&mut self, _step: usize, model: &Model<f32>, ema: &ParamSet<f32>) -> Result<()> {
        self.save(model, ema)
    }
}

/// Counts forward evaluations of the wrapped model.
struct Counted<'a, M> {
    inner: &'a M,
    calls: AtomicUsize,
}

impl<'a, M> Counted<'a, M> {
    fn new(inner: &'a M) -> Self {
        Counted {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<M: VelocityModel<f32>> VelocityModel<f32> for Counted<'_, M> {
    fn record(
        &self,
        g: &mut Graph<f32>,
        z_t: &Tensor<f32>,
        t: f64,
        r: f64,
        mode: &CondMode<f32>,
        trainable: bool,
    ) -> Result<Var> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.record(g, z_t, t, r, mode, trainable)
    }

    fn to_output_layout(&self, latent: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.inner.to_output_layout(latent)
    }

    fn from_output_layout(&self, out: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.inner.from_output_layout(out)
    }
}

/// A checkpoint loaded for inference.
struct Loaded {
    model: Model<f32>,
    conditioner: Conditioner,
    student: bool,
}

fn load_for_inference(path: &Path, which: WeightSet) -> Result<Loaded> {
    let ckpt = read_checkpoint::<f32>(path)?;
    let student = match ckpt.kind() {
        Some("teacher") => false,
        Some("student") => true,
        other => {
            return Err(Error::contract(format!(
                "{} is not a teacher or student checkpoint (kind {other:?})",
                path.display()
            )))
        }
    };
    let (conditioner, _) = conditioner_from(&ckpt.header)?;
    Ok(Loaded {
        model: ckpt.model(which)?,
        conditioner,
        student,
    })
}

/// Super-resolve every LR image; image `i` draws its noise from
/// `Seed(seed).derive(i)`.
fn sample_all<M: VelocityModel<f32>>(
    model: &M,
    conditioner: &Conditioner,
    student: bool,
    lrs: &[Image],
    cfg: &SampleConfig,
) -> Result<Vec<Image>> {
    lrs.iter()
        .enumerate()
        .map(|(i, lr)| {
            let seed = Seed(cfg.seed).derive(i as u64).0;
            if student {
                one_step_super_resolve(model, conditioner, lr, seed)
            } else {
                super_resolve(model, conditioner, lr, &SampleConfig { seed, ..cfg.clone() })
            }
        })
        .collect()
}

pub fn gen_data(args: &[String], out: &mut dyn Write) -> Result<()> {
    let mut d = KvDoc::new();
    d.set("out", "");
    d.set("count", 8);
    d.set("size", 64);
    d.set("kind", "all");
    d.set("seed", 0);
    let s = Settings::resolve(d, args, &[])?;
    let dir = s.path("out")?;
    let count: usize = s.get("count")?;
    let size: usize = s.get("size")?;
    let seed: u64 = s.get("seed")?;
    let kind = s.string("kind");
    let kinds: Vec<ProceduralKind> = if kind == "all" {
        ProceduralKind::ALL.to_vec()
    } else {
        vec![kind.parse()?]
    };
    create_dir(&dir)?;
    s.write(&dir.join("gen-data.cfg"))?;
    let images = par::try_map_indices(count, |i| gen_procedural_hr(Seed(seed).derive(i as u64), size, kinds[i % kinds.len()]))?;
    for (i, img) in images.iter().enumerate() {
        write_image(img, dir.join(format!("hr_{i:04}.ppm")))?;
    }
    emit(out, &format!("wrote {count} images of {size}x{size} to {}\n", dir.display()))
}

pub fn degrade(args: &[String], out: &mut dyn Write) -> Result<()> {
    let mut d = KvDoc::new();
    d.set("input", "");
    d.set("out", "");
    d.set("params", "");
    d.set("seed", 0);
    DegradeParams::default().write_kv(&mut d, "degrade.");
    let s = Settings::resolve(d, args, &["params"])?;
    let input = s.path("input")?;
    let dir = s.path("out")?;
    let params = DegradeParams::default().read_kv(s.doc(), "degrade.")?;
    let files = list_images(&input)?;
    let hrs = read_all(&files)?;
    let lrs = degrade_batch(&hrs, &params, Seed(s.get("seed")?))?;
    create_dir(&dir)?;
    s.write(&dir.join("degrade.cfg"))?;
    for ((name, _), lr) in files.iter().zip(&lrs) {
        write_image(lr, dir.join(name))?;
    }
    emit(out, &format!("degraded {} images at x{} into {}\n", lrs.len(), params.scale, dir.display()))
}

fn model_defaults(doc: &mut KvDoc) {
    let mut full = KvDoc::new();
    ModelConfig::default().write_kv(&mut full, "model.");
    for key in MODEL_KEYS {
        let k = format!("model.{key}");
        doc.set(&k, full.get_raw(&k).unwrap_or(""));
    }
}

pub fn train(args: &[String], out: &mut dyn Write) -> Result<()> {
    let mut d = KvDoc::new();
    d.set("hr", "");
    d.set("lr", "");
    d.set("out", "");
    d.set("init_seed", 0);
    d.set("checkpoint_every", 0);
    d.set("cond.fold", 4);
    d.set("cond.sem_patch", SemanticEncoder::DEFAULT_PATCH);
    d.set("cond.sem_seed", 0);
    model_defaults(&mut d);
    TrainRecipe::default().write_kv(&mut d, "train.");
    let s = Settings::resolve(d, args, &[])?;
    let dir = s.path("out")?;
    let recipe = TrainRecipe::default().read_kv(s.doc(), "train.")?;
    let corpus = load_corpus(&s.path("hr")?, &s.path("lr")?)?;
    let codec = LatentCodec::new(s.get("cond.fold")?)?;
    let (h, w, channels) = corpus.hr[0].dims();
    let shape = codec.latent_shape(h, w, channels)?;
    let config = ModelConfig {
        latent_channels: shape[2],
        grid_height: shape[0],
        grid_width: shape[1],
        student_mode: false,
        ..ModelConfig::default()
    }
    .read_kv(s.doc(), "model.")?;
    let conditioner = Conditioner {
        codec,
        semantic: SemanticEncoder::new(Seed(s.get("cond.sem_seed")?), s.get("cond.sem_patch")?, config.d_sem, channels)?,
        scale: corpus.scale,
    };
    let pairs = build_pairs(&corpus, &conditioner)?;
    let model = Model::<f32>::init(config, Seed(s.get("init_seed")?))?;
    create_dir(&dir)?;
    s.write(&dir.join("train.cfg"))?;
    let mut header = cond_header(&conditioner, channels);
    recipe.write_kv(&mut header, "train.");
    let mut sink = RunSink::new(
        &dir.join("loss.log"),
        s.get("checkpoint_every")?,
        "teacher",
        dir.join("checkpoint.bin"),
        header,
    )?;
    let state = run_train(&pairs, &recipe, model, &mut sink)?;
    sink.save(&state.model, &state.ema)?;
    sink.finish()?;
    let last = state.losses.last().copied().unwrap_or(f64::NAN);
    emit(out, &format!("trained {} steps, final loss {last}, checkpoint {}\n", recipe.steps, dir.join("checkpoint.bin").display()))
}

pub fn distill(args: &[String], out: &mut dyn Write) -> Result<()> {
    let mut d = KvDoc::new();
    d.set("teacher", "");
    d.set("hr", "");
    d.set("lr", "");
    d.set("out", "");
    d.set("teacher_weights", "ema");
    d.set("student_seed", 0);
    DistillConfig::default().write_kv(&mut d);
    let s = Settings::resolve(d, args, &[])?;
    let teacher_path = s.path("teacher")?;
    let out_path = s.path("out")?;
    if out_path == teacher_path {
        return Err(Error::contract("--out must differ from --teacher"));
    }
    let cfg = DistillConfig::default().read_kv(s.doc())?;
    let ckpt = read_checkpoint::<f32>(&teacher_path)?;
    if ckpt.kind() != Some("teacher") {
        return Err(Error::contract(format!("{} is not a teacher checkpoint", teacher_path.display())));
    }
    let teacher = ckpt.model(weights(&s, "teacher_weights")?)?;
    let (conditioner, channels) = conditioner_from(&ckpt.header)?;
    let corpus = load_corpus(&s.path("hr")?, &s.path("lr")?)?;
    if corpus.scale != conditioner.scale {
        return Err(Error::contract(format!(
            "corpus scale {} differs from the teacher's {}",
            corpus.scale, conditioner.scale
        )));
    }
    let pairs = build_pairs(&corpus, &conditioner)?;
    let student = Model::student_from(&teacher, Seed(s.get("student_seed")?))?;
    if let Some(parent) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    s.write(&sibling(&out_path, "cfg"))?;
    let mut header = cond_header(&conditioner, channels);
    cfg.write_kv(&mut header);
    let mut sink = RunSink::new(&sibling(&out_path, "log"), 0, "student", out_path.clone(), header)?;
    let state = run_distill(&teacher, student, &pairs, &cfg, &mut sink)?;
    sink.save(&state.model, &state.ema)?;
    sink.finish()?;
    let last = state.losses.last().copied().unwrap_or(f64::NAN);
    emit(
        out,
        &format!(
            "distilled ({}) {} steps, final loss {last}, checkpoint {}\n",
            cfg.variant.name(),
            cfg.recipe.steps,
            out_path.display()
        ),
    )
}

fn guidance_from(s: &Settings) -> Result<GuidanceConfig> {
    Ok(GuidanceConfig {
        scale: s.get("guidance_scale")?,
        alpha_infer: s.get("alpha_infer")?,
        style: s.get("style")?,
    })
}

fn sampling_defaults(d: &mut KvDoc) {
    let g = GuidanceConfig::default();
    d.set("steps", DEFAULT_STEPS);
    d.set("guidance_scale", g.scale);
    d.set("alpha_infer", g.alpha_infer);
    d.set("seed", 0);
    d.set("weights", "ema");
}

pub fn sample(args: &[String], out: &mut dyn Write) -> Result<()> {
    let mut d = KvDoc::new();
    d.set("checkpoint", "");
    d.set("input", "");
    d.set("out", "");
    sampling_defaults(&mut d);
    d.set("style", GuidanceConfig::default().style.name());
    let s = Settings::resolve(d, args, &[])?;
    let dir = s.path("out")?;
    let cfg = SampleConfig {
        steps: s.get("steps")?,
        guidance: guidance_from(&s)?,
        seed: s.get("seed")?,
        use_ema: weights(&s, "weights")? == WeightSet::Ema,
    };
    cfg.validate()?;
    let which = if cfg.use_ema { WeightSet::Ema } else { WeightSet::Raw };
    let loaded = load_for_inference(&s.path("checkpoint")?, which)?;
    let files = list_images(&s.path("input")?)?;
    let lrs = read_all(&files)?;
    let counted = Counted::new(&loaded.model);
    let outputs = sample_all(&counted, &loaded.conditioner, loaded.student, &lrs, &cfg)?;
    create_dir(&dir)?;
    s.write(&dir.join("sample.cfg"))?;
    for ((name, _), img) in files.iter().zip(&outputs) {
        write_image(img, dir.join(name))?;
    }
    let calls = counted.calls();
    let per_image = calls / lrs.len();
    let line = if loaded.student {
        format!("sampled {} images (one-step student), {calls} evaluations, {per_image} per image\n", lrs.len())
    } else {
        format!(
            "sampled {} images, {} steps, {calls} evaluations, {} per step\n",
            lrs.len(),
            cfg.steps,
            per_image / cfg.steps
        )
    };
    emit(out, &line)
}

pub fn eval(args: &[String], out: &mut dyn Write) -> Result<()> {
    let mut d = KvDoc::new();
    d.set("ref", "");
    d.set("out", "");
    d.set("delimiter", "tab");
    d.set("table", "");
    let s = Settings::resolve(d, args, &[])?;
    let delim = delimiter(&s.string("delimiter"))?;
    let refs = list_images(&s.path("ref")?)?;
    let out_dir = s.path("out")?;
    let items = par::try_map_indices(refs.len(), |i| {
        let (name, ref_path) = &refs[i];
        let candidate = out_dir.join(name);
        if !candidate.is_file() {
            return Err(Error::contract(format!("output {} is missing", candidate.display())));
        }
        Ok((name.clone(), read_image(&candidate)?, read_image(ref_path)?))
    })?;
    let table = MetricReport::evaluate(&items)?.to_table(delim);
    let table_path = s.string("table");
    if !table_path.is_empty() {
        let path = PathBuf::from(table_path);
        write_text(&path, &table)?;
        s.write(&sibling(&path, "cfg"))?;
    }
    emit(out, &table)
}

pub fn align(args: &[String], out: &mut dyn Write) -> Result<()> {
    let mut d = KvDoc::new();
    d.set("source", "");
    d.set("photo", "");
    d.set("corners", "");
    d.set("levels", crate::benchalign::DEFAULT_LEVELS);
    d.set("output", "");
    let s = Settings::resolve(d, args, &[])?;
    let output = s.path("output")?;
    let source = read_image(s.path("source")?)?;
    let photo = read_image(s.path("photo")?)?;
    let corners_path = s.path("corners")?;
    let text = std::fs::read_to_string(&corners_path).map_err(|e| Error::io(&corners_path, e))?;
    let pts = CorrespondenceSet::parse_sidecar(&text)?;
    let (aligned, report) = align_pair(&source, &photo, &pts, s.get("levels")?)?;
    write_image(&aligned, &output)?;
    s.write(&sibling(&output, "cfg"))?;
    emit(
        out,
        &format!(
            "reprojection_mean {:.6}\nreprojection_max {:.6}\npsnr_y {:.6}\nvalid_fraction {:.6}\nclamped_fraction {:.6}\n",
            report.mean_reprojection_error,
            report.max_reprojection_error,
            report.psnr_y,
            report.valid_fraction,
            report.clamped_fraction
        ),
    )
}

fn parse_scales(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad guidance scale {v:?} in scales")))
        })
        .collect()
}

pub fn sweep(args: &[String], out: &mut dyn Write) -> Result<()> {
    let mut d = KvDoc::new();
    d.set("checkpoint", "");
    d.set("checkpoint_nosem", "");
    d.set("hr", "");
    d.set("lr", "");
    d.set("axis", "guidance_scale");
    d.set("scales", "0,0.5,1,1.5");
    sampling_defaults(&mut d);
    d.set("delimiter", "tab");
    d.set("table", "");
    let s = Settings::resolve(d, args, &[])?;
    let which = weights(&s, "weights")?;
    let delim = delimiter(&s.string("delimiter"))?;
    let base = SampleConfig {
        steps: s.get("steps")?,
        guidance: GuidanceConfig {
            scale: s.get("guidance_scale")?,
            alpha_infer: s.get("alpha_infer")?,
            style: GuidanceStyle::Restoration,
        },
        seed: s.get("seed")?,
        use_ema: which == WeightSet::Ema,
    };
    base.validate()?;
    let axis = s.string("axis");
    let other = s.string("checkpoint_nosem");
    if axis == "semantic_on_off" && other.is_empty() {
        return Err(Error::contract(
            "semantic_on_off needs --checkpoint-nosem, a checkpoint trained without semantic tokens",
        ));
    }
    let primary = load_for_inference(&s.path("checkpoint")?, which)?;
    let mut runs: Vec<(String, &Loaded, SampleConfig)> = Vec::new();
    let nosem;
    match axis.as_str() {
        "guidance_scale" => {
            for scale in parse_scales(&s.string("scales"))? {
                let guidance = GuidanceConfig { scale, ..base.guidance };
                runs.push((format!("scale={scale}"), &primary, SampleConfig { guidance, ..base.clone() }));
            }
        }
        "semantic_on_off" => {
            nosem = load_for_inference(Path::new(&other), which)?;
            if !primary.model.config.use_semantic || nosem.model.config.use_semantic {
                return Err(Error::contract(
                    "semantic_on_off needs --checkpoint with semantics and --checkpoint-nosem without",
                ));
            }
            runs.push(("semantic_on".into(), &primary, base.clone()));
            runs.push(("semantic_off".into(), &nosem, base.clone()));
        }
        "guidance_style" => {
            for style in [GuidanceStyle::Restoration, GuidanceStyle::T2iBaseline, GuidanceStyle::None] {
                let guidance = GuidanceConfig { style, ..base.guidance };
                runs.push((style.name().into(), &primary, SampleConfig { guidance, ..base.clone() }));
            }
        }
        other => {
            return Err(Error::Config(format!(
                "axis must be guidance_scale, semantic_on_off or guidance_style, got {other:?}"
            )))
        }
    }
    if runs.iter().any(|(_, m, _)| m.student) {
        return Err(Error::contract("sweeps need multi-step teacher checkpoints"));
    }
    let corpus = load_corpus(&s.path("hr")?, &s.path("lr")?)?;
    let mut table = format!("setting{delim}psnr_y{delim}ssim_y\n");
    for (label, loaded, cfg) in &runs {
        let outputs = sample_all(&loaded.model, &loaded.conditioner, false, &corpus.lr, cfg)?;
        let items: Vec<(String, Image, Image)> = outputs
            .into_iter()
            .zip(&corpus.hr)
            .enumerate()
            .map(|(i, (o, h))| (i.to_string(), o, h.clone()))
            .collect();
        let report = MetricReport::evaluate(&items)?;
        table.push_str(&format!("{label}{delim}{:.6}{delim}{:.6}\n", report.mean_psnr(), report.mean_ssim()));
    }
    let table_path = s.string("table");
    if !table_path.is_empty() {
        let path = PathBuf::from(table_path);
        write_text(&path, &table)?;
        s.write(&sibling(&path, "cfg"))?;
    }
    emit(out, &table)
}
