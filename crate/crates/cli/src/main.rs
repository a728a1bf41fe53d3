//! `rsalign`: the corpus pipeline and evaluation harness as subcommands.
//!
//! Exit codes: 0 success, 2 usage, 3 ingest/parse, 4 numeric failure, 5 I/O.

mod manifest;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rsalign::assembly::{
    self, corpus_stats, ingest_det, ingest_dota_dir, ingest_ret, ingest_seg, mask_to_detection,
    read_class_names, sorted_files, DedupConfig, MissingHash, SourceInfo, Split, UnifiedRecord,
    CLASS_SIDECAR,
};
use rsalign::box2caption::{
    generate_captions_with, parse_dota_annotation, CaptionRuleConfig, CaptionSet,
    CaptionTemplates, DetectionRecord,
};
use rsalign::contrastive::{
    alignment_report, embed_dataset, l2_normalize, toy_train, Augmentation, SyntheticSpec, ToyDataset,
    TrainConfig,
};
use rsalign::dedup::{decontaminate, hash_image_file, HashCacheEntry, PerceptualHash};
use rsalign::emb::{read_jsonl, read_sidecar, write_jsonl, EmbeddingMatrix, SidecarRow};
use rsalign::eval::{
    self, eval_counting, eval_retrieval, few_shot_sample, knn_classify, linear_probe_search,
    prompt_render, zero_shot_classify, KnnConfig, LabeledSet, PrecomputedVariants, ProbeConfig,
};
use rsalign::mask2box::LabelMask;
use rsalign::text::normalize_class_name;
use rsalign::ErrorKind;

use manifest::RunManifest;

const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pnm"];

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Ingest(String),
    Io(String),
    Core(rsalign::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        let kind = match self {
            CliError::Usage(_) => ErrorKind::Usage,
            CliError::Ingest(_) => ErrorKind::Ingest,
            CliError::Io(_) => ErrorKind::Io,
            CliError::Core(e) => e.kind(),
        };
        match kind {
            ErrorKind::Usage => 2,
            ErrorKind::Ingest => 3,
            ErrorKind::Numeric => 4,
            ErrorKind::Io => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Ingest(m) => write!(f, "ingest error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<rsalign::Error> for CliError {
    fn from(e: rsalign::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "rsalign", version, about = "Remote-sensing image-caption corpus tools and embedding evaluation")]
struct Cli {
    /// Worker threads for parallel stages. Output does not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert segmentation masks into per-image box annotations.
    M2b(M2bArgs),
    /// Generate five captions per image from box annotations.
    B2c(B2cArgs),
    /// Compute perceptual hashes for a directory of images.
    Hash(HashArgs),
    /// Remove training images that duplicate test images or each other.
    Dedup(DedupArgs),
    /// Ingest all sources, deduplicate and write the unified corpus.
    Assemble(AssembleArgs),
    /// Recompute statistics of an existing corpus.
    Stats(StatsArgs),
    /// Train the two-tower toy model with InfoNCE.
    ToyTrain(ToyTrainArgs),
    /// Evaluate precomputed embeddings.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Render zero-shot prompts for a list of class names.
    Prompts(PromptArgs),
    /// Expand counting captions into their ten number variants.
    CountVariants(CountVariantsArgs),
}

#[derive(Args, Serialize)]
struct CaptionArgs {
    /// Caption seed; falls back to RSALIGN_SEED, then 0.
    #[arg(long, env = "RSALIGN_SEED", default_value_t = 0)]
    seed: u64,
    /// Side of the central window as a fraction of the image side.
    #[arg(long, default_value_t = 0.5)]
    center_fraction: f64,
    /// Largest count still written as a number.
    #[arg(long, default_value_t = 10)]
    many_threshold: u32,
}

impl CaptionArgs {
    fn config(&self) -> CliResult<CaptionRuleConfig> {
        let cfg = CaptionRuleConfig {
            center_fraction: self.center_fraction,
            many_threshold: self.many_threshold,
            seed: self.seed,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Serialize)]
struct M2bArgs {
    /// Directory of 8-bit masks (pixel value = class id).
    #[arg(long)]
    masks: PathBuf,
    /// Class-name sidecar; defaults to classes.json inside the mask directory.
    #[arg(long)]
    classes: Option<PathBuf>,
    /// Drop components with fewer pixels than this.
    #[arg(long, default_value_t = 0)]
    min_area: usize,
    /// Output JSON Lines of detection records.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum AnnotationFormat {
    Canonical,
    Dota,
}

#[derive(Args, Serialize)]
struct B2cArgs {
    /// Canonical JSON Lines file, or a DOTA label file or directory.
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long, value_enum, default_value_t = AnnotationFormat::Canonical)]
    format: AnnotationFormat,
    /// JSON object of image id -> [width, height], required for DOTA.
    #[arg(long)]
    sizes: Option<PathBuf>,
    /// Custom caption template file.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[command(flatten)]
    caption: CaptionArgs,
    /// Output JSON Lines of {image_id, captions}.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct HashArgs {
    #[arg(long)]
    images: PathBuf,
    /// Output hash cache (JSON Lines of {image_id, phash_hex}).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct DedupArgs {
    /// Hash cache file or image directory.
    #[arg(long)]
    train: PathBuf,
    /// Hash cache file or image directory.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 2)]
    threshold: u32,
    #[arg(long, default_value_t = 4)]
    segments: usize,
    /// Removal report (JSON Lines).
    #[arg(long)]
    report: PathBuf,
    /// Optional hash cache of the surviving training images.
    #[arg(long)]
    kept: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct AssembleArgs {
    /// Caption-source JSON file (repeatable).
    #[arg(long)]
    ret: Vec<PathBuf>,
    /// SOURCE:SPLIT:FILE with canonical detection JSON Lines (repeatable).
    #[arg(long)]
    det: Vec<String>,
    /// SOURCE:SPLIT:DIR of DOTA label files (repeatable); needs --dota-sizes.
    #[arg(long)]
    dota: Vec<String>,
    #[arg(long)]
    dota_sizes: Option<PathBuf>,
    /// SOURCE:SPLIT:DIR of masks with a classes.json sidecar (repeatable).
    #[arg(long)]
    seg: Vec<String>,
    #[arg(long, default_value_t = 0)]
    min_area: usize,
    #[command(flatten)]
    caption: CaptionArgs,
    /// JSON file with threshold, n_segments, image_root and on_missing.
    #[arg(long)]
    dedup_config: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<u32>,
    #[arg(long)]
    segments: Option<usize>,
    /// Precomputed hashes (repeatable).
    #[arg(long)]
    hash_cache: Vec<PathBuf>,
    /// Directory that relative image paths are resolved against for hashing.
    #[arg(long)]
    image_root: Option<PathBuf>,
    /// Keep records whose image cannot be hashed instead of failing.
    #[arg(long)]
    allow_unhashed: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Caption-length histogram as CSV.
    #[arg(long)]
    stats_csv: Option<PathBuf>,
    /// Removal report (JSON Lines).
    #[arg(long)]
    removals: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ToyTrainArgs {
    /// JSON dataset {image, text, labels, grid_side}; synthetic when omitted.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Synthetic pair count.
    #[arg(long, default_value_t = 200)]
    n_pairs: usize,
    /// Synthetic class count.
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    batch_size: usize,
    #[arg(long, default_value_t = 6)]
    out_dim: usize,
    #[arg(long, default_value_t = 0.07)]
    tau: f64,
    /// Keep the temperature fixed.
    #[arg(long)]
    fixed_tau: bool,
    #[arg(long, default_value_t = 0)]
    warmup: usize,
    #[arg(long)]
    cosine: bool,
    /// Random 0/90/180/270 degree rotations of the image grids.
    #[arg(long)]
    rotations: bool,
    #[arg(long)]
    flip: bool,
    /// Break the pairing before training (control run).
    #[arg(long)]
    shuffle_pairs: bool,
    #[arg(long, env = "RSALIGN_SEED", default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Image-text retrieval recall at 1, 5 and 10.
    Retrieval(RetrievalArgs),
    /// Zero-shot classification against prompt embeddings.
    Zeroshot(ZeroshotArgs),
    /// Weighted k-nearest-neighbor classification.
    Knn(KnnArgs),
    /// Linear probe, optionally few-shot.
    Probe(ProbeArgs),
    /// Counting accuracy from number-variant embeddings.
    Count(CountArgs),
}

#[derive(Args, Serialize)]
struct RetrievalArgs {
    #[arg(long)]
    emb_img: PathBuf,
    #[arg(long)]
    emb_txt: PathBuf,
    /// Text sidecar; each row's image_id (or id) names its image.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Image sidecar giving the id of each image row; row numbers otherwise.
    #[arg(long)]
    img_sidecar: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Serialize)]
struct ZeroshotArgs {
    #[arg(long)]
    emb_img: PathBuf,
    /// Image sidecar with a label per row.
    #[arg(long)]
    sidecar: PathBuf,
    /// One prompt embedding per class.
    #[arg(long)]
    emb_txt: PathBuf,
    /// Prompt sidecar naming the class of each prompt row (label, else id).
    #[arg(long)]
    txt_sidecar: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Serialize)]
struct KnnArgs {
    /// Reference bank.
    #[arg(long)]
    emb_img: PathBuf,
    #[arg(long)]
    sidecar: PathBuf,
    #[arg(long)]
    emb_query: PathBuf,
    #[arg(long)]
    query_sidecar: PathBuf,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 0.07)]
    temperature: f64,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Serialize)]
struct ProbeArgs {
    #[arg(long)]
    emb_img: PathBuf,
    #[arg(long)]
    sidecar: PathBuf,
    #[arg(long)]
    emb_test: PathBuf,
    #[arg(long)]
    test_sidecar: PathBuf,
    #[arg(long, requires = "val_sidecar")]
    emb_val: Option<PathBuf>,
    #[arg(long)]
    val_sidecar: Option<PathBuf>,
    /// Train on this many examples per class.
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long, default_value_t = 0.8)]
    lr: f64,
    #[arg(long, default_value_t = 4e-5)]
    weight_decay: f64,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 10_000)]
    batch_size: usize,
    #[arg(long, default_value_t = 5)]
    search_iters: usize,
    #[arg(long, env = "RSALIGN_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Serialize)]
struct CountArgs {
    #[arg(long)]
    emb_img: PathBuf,
    /// Image sidecar; each row's caption holds the true count.
    #[arg(long)]
    sidecar: PathBuf,
    /// Variant bank: ten rows per image, counts 1..10 in order.
    #[arg(long)]
    emb_txt: PathBuf,
    /// Captions use digits instead of number words.
    #[arg(long)]
    digits: bool,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    confusion_csv: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct PromptArgs {
    /// Class names, one per line.
    #[arg(long)]
    classes: PathBuf,
    #[arg(long, default_value = eval::DEFAULT_PROMPT_TEMPLATE)]
    template: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct CountVariantsArgs {
    /// Sidecar whose captions contain one count each.
    #[arg(long)]
    sidecar: PathBuf,
    #[arg(long)]
    digits: bool,
    #[arg(long)]
    out: PathBuf,
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Ingest(format!("{}: {e}", path.display())))
}

fn require_file(path: &Path) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} does not exist", path.display())))
    }
}

fn run_m2b(args: &M2bArgs) -> CliResult {
    let classes = args.classes.clone().unwrap_or_else(|| args.masks.join(CLASS_SIDECAR));
    let names = read_class_names(&classes)?;
    let files = sorted_files(&args.masks, &["png", "pgm"])?;
    let records: Vec<DetectionRecord> = files
        .par_iter()
        .map(|path| {
            let mask = LabelMask::from_image_file(path, names.clone())?;
            let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(mask_to_detection(&id, &mask, args.min_area))
        })
        .collect::<Result<_, rsalign::Error>>()?;
    write_jsonl(&args.out, &records)?;
    RunManifest::new("m2b", args)?
        .inputs([&args.masks, &classes])?
        .write_for(&args.out)?;
    log::info!("{} masks -> {}", records.len(), args.out.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CaptionLine {
    image_id: String,
    captions: CaptionSet,
}

fn read_detection_lines(path: &Path) -> CliResult<Vec<DetectionRecord>> {
    Ok(read_jsonl(path)?)
}

fn run_b2c(args: &B2cArgs) -> CliResult {
    let cfg = args.caption.config()?;
    let templates = match &args.templates {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            CaptionTemplates::parse(&text)?
        }
        None => CaptionTemplates::builtin(),
    };
    let mut inputs = vec![args.annotations.clone()];
    let records = match args.format {
        AnnotationFormat::Canonical => read_detection_lines(&args.annotations)?,
        AnnotationFormat::Dota => {
            let sizes_path = args
                .sizes
                .as_ref()
                .ok_or_else(|| CliError::Usage("--format dota needs --sizes".into()))?;
            inputs.push(sizes_path.clone());
            let sizes: BTreeMap<String, [u32; 2]> = read_json(sizes_path)?;
            let files = if args.annotations.is_dir() {
                sorted_files(&args.annotations, &["txt"])?
            } else {
                vec![args.annotations.clone()]
            };
            let mut out = Vec::new();
            for f in files {
                let id = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let [w, h] = *sizes.get(&id).ok_or_else(|| {
                    CliError::Ingest(format!("{}: no size for `{id}`", sizes_path.display()))
                })?;
                let text = fs::read_to_string(&f).map_err(|e| CliError::io(&f, e))?;
                let parsed = parse_dota_annotation(&id, &text, w, h)
                    .map_err(|e| CliError::Ingest(format!("{}: {e}", f.display())))?;
                out.push(parsed.record);
            }
            out
        }
    };
    let lines = records
        .into_par_iter()
        .map(|mut rec| {
            for o in &mut rec.objects {
                o.class_name = normalize_class_name(&o.class_name);
            }
            rec.validate()?;
            Ok(CaptionLine {
                captions: generate_captions_with(&rec, &cfg, &templates),
                image_id: rec.image_id,
            })
        })
        .collect::<Result<Vec<_>, rsalign::Error>>()?;
    write_jsonl(&args.out, &lines)?;
    let mut m = RunManifest::new("b2c", args)?.seed("caption", cfg.seed);
    for p in inputs.iter().chain(&args.templates) {
        m.input(p)?;
    }
    m.write_for(&args.out)?;
    Ok(())
}

fn hash_directory(dir: &Path) -> CliResult<Vec<PerceptualHash>> {
    let files = sorted_files(dir, IMAGE_EXTENSIONS)?;
    Ok(files
        .par_iter()
        .map(|p| {
            let id = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            hash_image_file(id, p)
        })
        .collect::<Result<Vec<_>, _>>()?)
}

fn load_hashes(path: &Path) -> CliResult<Vec<PerceptualHash>> {
    if path.is_dir() {
        return hash_directory(path);
    }
    let entries: Vec<HashCacheEntry> = read_jsonl(path)?;
    entries
        .into_iter()
        .map(|e| PerceptualHash::try_from(e).map_err(|e| CliError::Ingest(e.to_string())))
        .collect()
}

fn cache_entries(hashes: &[PerceptualHash]) -> Vec<HashCacheEntry> {
    hashes.iter().map(HashCacheEntry::from).collect()
}

fn run_hash(args: &HashArgs) -> CliResult {
    let hashes = hash_directory(&args.images)?;
    write_jsonl(&args.out, &cache_entries(&hashes))?;
    RunManifest::new("hash", args)?
        .inputs([&args.images])?
        .write_for(&args.out)?;
    Ok(())
}

fn run_dedup(args: &DedupArgs) -> CliResult {
    require_file(&args.train)?;
    require_file(&args.test)?;
    let train = load_hashes(&args.train)?;
    let test = load_hashes(&args.test)?;
    let result = decontaminate(&train, &test, args.threshold, args.segments)?;
    write_jsonl(&args.report, &result.removals)?;
    if let Some(kept) = &args.kept {
        write_jsonl(kept, &cache_entries(&result.kept))?;
    }
    RunManifest::new("dedup", args)?
        .inputs([&args.train, &args.test])?
        .write_for(&args.report)?;
    log::info!(
        "kept {} of {} training images",
        result.kept.len(),
        train.len()
    );
    Ok(())
}

/// `SOURCE:SPLIT:PATH`; the path may itself contain colons.
fn parse_source_spec(spec: &str) -> CliResult<(SourceInfo, PathBuf)> {
    let mut parts = spec.splitn(3, ':');
    let (source, split, path) = match (parts.next(), parts.next(), parts.next()) {
        (Some(s), Some(sp), Some(p)) if !s.is_empty() && !p.is_empty() => (s, sp, p),
        _ => {
            return Err(CliError::Usage(format!(
                "source `{spec}` must look like NAME:SPLIT:PATH"
            )))
        }
    };
    let split = Split::parse(split).ok_or_else(|| {
        CliError::Usage(format!("unknown split `{split}` in `{spec}` (train, val or test)"))
    })?;
    Ok((SourceInfo::new(source, split), PathBuf::from(path)))
}

enum IngestJob {
    Ret(PathBuf),
    Det(SourceInfo, PathBuf),
    Dota(SourceInfo, PathBuf),
    Seg(SourceInfo, PathBuf),
}

fn run_assemble(args: &AssembleArgs) -> CliResult {
    let cfg = args.caption.config()?;
    let mut jobs: Vec<IngestJob> = args.ret.iter().cloned().map(IngestJob::Ret).collect();
    for spec in &args.det {
        let (info, path) = parse_source_spec(spec)?;
        jobs.push(IngestJob::Det(info, path));
    }
    for spec in &args.dota {
        let (info, path) = parse_source_spec(spec)?;
        jobs.push(IngestJob::Dota(info, path));
    }
    for spec in &args.seg {
        let (info, path) = parse_source_spec(spec)?;
        jobs.push(IngestJob::Seg(info, path));
    }
    let dota_sizes: BTreeMap<String, [u32; 2]> = match (&args.dota_sizes, args.dota.is_empty()) {
        (Some(p), _) => read_json(p)?,
        (None, true) => BTreeMap::new(),
        (None, false) => return Err(CliError::Usage("--dota needs --dota-sizes".into())),
    };

    let mut dedup: DedupConfig = match &args.dedup_config {
        Some(p) => read_json(p)?,
        None => DedupConfig::default(),
    };
    if let Some(t) = args.threshold {
        dedup.threshold = t;
    }
    if let Some(s) = args.segments {
        dedup.n_segments = s;
    }
    if args.image_root.is_some() {
        dedup.image_root = args.image_root.clone();
    }
    if args.allow_unhashed {
        dedup.on_missing = MissingHash::Keep;
    }
    for p in &args.hash_cache {
        dedup.load_cache(p)?;
    }

    let mut inputs: Vec<PathBuf> = Vec::new();
    for job in &jobs {
        let p = match job {
            IngestJob::Ret(p) => p,
            IngestJob::Det(_, p) | IngestJob::Dota(_, p) | IngestJob::Seg(_, p) => p,
        };
        require_file(p)?;
        inputs.push(p.clone());
    }

    let sources: Vec<Vec<UnifiedRecord>> = jobs
        .par_iter()
        .map(|job| match job {
            IngestJob::Ret(p) => ingest_ret(p).map(|r| r.records),
            IngestJob::Det(info, p) => ingest_det(p, info, &cfg),
            IngestJob::Dota(info, p) => ingest_dota_dir(p, &dota_sizes, info, &cfg),
            IngestJob::Seg(info, p) => ingest_seg(p, info, &cfg, args.min_area),
        })
        .collect::<Result<_, _>>()?;

    let result = assembly::assemble(sources, &dedup, &args.out)?;
    if let Some(p) = &args.stats {
        write_json(p, &result.stats)?;
    }
    if let Some(p) = &args.stats_csv {
        fs::write(p, result.stats.histogram_csv()).map_err(|e| CliError::io(p, e))?;
    }
    if let Some(p) = &args.removals {
        write_jsonl(p, &result.removals)?;
    }

    let mut m = RunManifest::new("assemble", args)?
        .seed("caption", cfg.seed)
        .inputs(&inputs)?;
    for p in args
        .hash_cache
        .iter()
        .chain(&args.dota_sizes)
        .chain(&args.dedup_config)
    {
        m.input(p)?;
    }
    m.write_for(&args.out)?;
    log::info!(
        "{} images, {} pairs, {} removed",
        result.stats.images,
        result.stats.pairs,
        result.removals.len()
    );
    Ok(())
}

fn run_stats(args: &StatsArgs) -> CliResult {
    let corpus = assembly::read_corpus(&args.corpus)?;
    let stats = corpus_stats(&corpus);
    write_json(&args.out, &stats)?;
    if let Some(p) = &args.csv {
        fs::write(p, stats.histogram_csv()).map_err(|e| CliError::io(p, e))?;
    }
    RunManifest::new("stats", args)?
        .inputs([&args.corpus])?
        .write_for(&args.out)?;
    Ok(())
}

#[derive(Serialize)]
struct ToyReport {
    initial_loss: f64,
    final_loss: f64,
    ln_n: f64,
    tau: f64,
    retrieval: eval::RetrievalResult,
    alignment: rsalign::contrastive::AlignmentReport,
}

fn run_toy_train(args: &ToyTrainArgs) -> CliResult {
    let mut data: ToyDataset = match &args.pairs {
        Some(p) => read_json(p)?,
        None => ToyDataset::synthetic(&SyntheticSpec {
            pairs: args.n_pairs,
            classes: args.classes,
            seed: args.seed,
            ..Default::default()
        }),
    };
    if args.shuffle_pairs {
        data = data.shuffled_pairs(args.seed.wrapping_add(1));
    }
    let mut augmentation = if args.rotations {
        Augmentation::rotations_only()
    } else {
        Augmentation::default()
    };
    augmentation.horizontal_flip = args.flip;
    let config = TrainConfig {
        batch_size: args.batch_size,
        epochs: args.epochs,
        learning_rate: args.lr,
        seed: args.seed,
        out_dim: args.out_dim,
        augmentation,
        init_tau: args.tau,
        learn_temperature: !args.fixed_tau,
        warmup_steps: args.warmup,
        cosine_schedule: args.cosine,
    };
    let (encoders, log) = toy_train(&data, &config)?;
    let (img, txt) = embed_dataset(&encoders, &data)?;
    let pairing: Vec<usize> = (0..data.len()).collect();
    let report = ToyReport {
        initial_loss: log.initial_loss,
        final_loss: log.final_loss(),
        ln_n: (args.batch_size as f64).ln(),
        tau: encoders.temperature.tau(),
        retrieval: eval_retrieval(&img, &txt, &pairing)?,
        alignment: alignment_report(&encoders, &data)?,
    };

    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_json(&out.join("encoders.json"), &encoders)?;
    write_json(&out.join("train_log.json"), &log)?;
    write_json(&out.join("report.json"), &report)?;
    img.save(&out.join("image.emb"))?;
    txt.save(&out.join("text.emb"))?;
    let rows = |prefix: &str| -> Vec<SidecarRow> {
        data.labels
            .iter()
            .enumerate()
            .map(|(i, l)| SidecarRow {
                id: format!("{prefix}{i}"),
                label: Some(format!("class{l}")),
                caption: None,
                image_id: (prefix == "t").then(|| format!("i{i}")),
            })
            .collect()
    };
    write_jsonl(&out.join("image.jsonl"), &rows("i"))?;
    write_jsonl(&out.join("text.jsonl"), &rows("t"))?;
    RunManifest::new("toy-train", args)?
        .seed("train", args.seed)
        .inputs(&args.pairs)?
        .write_for(out)?;
    log::info!(
        "loss {:.4} -> {:.4}, t2i R@1 {:.1}",
        report.initial_loss,
        report.final_loss,
        report.retrieval.t2i_r1
    );
    Ok(())
}

fn load_bank(emb: &Path, sidecar: Option<&Path>) -> CliResult<(EmbeddingMatrix, Option<Vec<SidecarRow>>)> {
    require_file(emb)?;
    // Banks may arrive unnormalized; scale does not affect any metric.
    let m = l2_normalize(&EmbeddingMatrix::load(emb)?)?;
    let rows = match sidecar {
        Some(p) => {
            require_file(p)?;
            Some(read_sidecar(p, m.rows())?)
        }
        None => None,
    };
    Ok((m, rows))
}

fn labels_of(rows: &[SidecarRow], path: &Path) -> CliResult<Vec<String>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            r.label.clone().ok_or_else(|| {
                CliError::Ingest(format!("{}: row {} has no label", path.display(), i + 1))
            })
        })
        .collect()
}

/// Map label strings to indices of `classes`.
fn index_labels(labels: &[String], classes: &[String], path: &Path) -> CliResult<Vec<usize>> {
    let lookup: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    labels
        .iter()
        .map(|l| {
            lookup.get(l.as_str()).copied().ok_or_else(|| {
                CliError::Ingest(format!("{}: unknown label `{l}`", path.display()))
            })
        })
        .collect()
}

fn sorted_classes<'a>(sets: impl IntoIterator<Item = &'a Vec<String>>) -> Vec<String> {
    let all: BTreeSet<String> = sets.into_iter().flatten().cloned().collect();
    all.into_iter().collect()
}

fn run_retrieval(args: &RetrievalArgs) -> CliResult {
    let (img, img_rows) = load_bank(&args.emb_img, args.img_sidecar.as_deref())?;
    let (txt, txt_rows) = load_bank(&args.emb_txt, args.sidecar.as_deref())?;
    let pairing: Vec<usize> = match &txt_rows {
        Some(rows) => {
            let ids: Vec<String> = match &img_rows {
                Some(r) => r.iter().map(|r| r.id.clone()).collect(),
                None => (0..img.rows()).map(|i| i.to_string()).collect(),
            };
            let lookup: HashMap<&str, usize> =
                ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
            rows.iter()
                .map(|r| {
                    let key = r.image_id.as_deref().unwrap_or(&r.id);
                    lookup.get(key).copied().ok_or_else(|| {
                        CliError::Core(rsalign::Error::Pairing(format!(
                            "caption `{}` refers to unknown image `{key}`",
                            r.id
                        )))
                    })
                })
                .collect::<CliResult<_>>()?
        }
        None if img.rows() > 0 && txt.rows() % img.rows() == 0 => {
            // k captions per image, grouped by image.
            let per = txt.rows() / img.rows();
            (0..txt.rows()).map(|t| t / per).collect()
        }
        None => {
            return Err(CliError::Usage(
                "text rows are not a multiple of image rows; pass --sidecar".into(),
            ))
        }
    };
    let result = eval_retrieval(&img, &txt, &pairing)?;
    write_json(&args.report, &result)?;
    RunManifest::new("eval retrieval", args)?
        .inputs([&args.emb_img, &args.emb_txt])?
        .inputs(args.sidecar.iter().chain(&args.img_sidecar))?
        .write_for(&args.report)?;
    Ok(())
}

#[derive(Serialize)]
struct LabeledReport<T: Serialize> {
    classes: Vec<String>,
    #[serde(flatten)]
    report: T,
}

fn run_zeroshot(args: &ZeroshotArgs) -> CliResult {
    let (img, img_rows) = load_bank(&args.emb_img, Some(&args.sidecar))?;
    let (prompts, prompt_rows) = load_bank(&args.emb_txt, Some(&args.txt_sidecar))?;
    let classes: Vec<String> = prompt_rows
        .unwrap_or_default()
        .into_iter()
        .map(|r| r.label.unwrap_or(r.id))
        .collect();
    let labels = labels_of(&img_rows.unwrap_or_default(), &args.sidecar)?;
    let idx = index_labels(&labels, &classes, &args.sidecar)?;
    let report = zero_shot_classify(&img, &prompts, &idx)?;
    write_json(&args.report, &LabeledReport { classes, report })?;
    RunManifest::new("eval zeroshot", args)?
        .inputs([&args.emb_img, &args.sidecar, &args.emb_txt, &args.txt_sidecar])?
        .write_for(&args.report)?;
    Ok(())
}

#[derive(Serialize)]
struct KnnReport {
    classes: Vec<String>,
    accuracy: f64,
    predictions: Vec<usize>,
}

fn run_knn(args: &KnnArgs) -> CliResult {
    let (train, train_rows) = load_bank(&args.emb_img, Some(&args.sidecar))?;
    let (query, query_rows) = load_bank(&args.emb_query, Some(&args.query_sidecar))?;
    let train_labels = labels_of(&train_rows.unwrap_or_default(), &args.sidecar)?;
    let query_labels = labels_of(&query_rows.unwrap_or_default(), &args.query_sidecar)?;
    let classes = sorted_classes([&train_labels, &query_labels]);
    let train_idx = index_labels(&train_labels, &classes, &args.sidecar)?;
    let query_idx = index_labels(&query_labels, &classes, &args.query_sidecar)?;
    let cfg = KnnConfig {
        k: args.k,
        temperature: args.temperature,
    };
    let predictions = knn_classify(&train, &train_idx, &query, &cfg)?;
    let correct = predictions.iter().zip(&query_idx).filter(|(a, b)| a == b).count();
    let report = KnnReport {
        classes,
        accuracy: correct as f64 / query_idx.len().max(1) as f64,
        predictions,
    };
    write_json(&args.report, &report)?;
    RunManifest::new("eval knn", args)?
        .inputs([&args.emb_img, &args.sidecar, &args.emb_query, &args.query_sidecar])?
        .write_for(&args.report)?;
    Ok(())
}

fn run_probe(args: &ProbeArgs) -> CliResult {
    let (train, train_rows) = load_bank(&args.emb_img, Some(&args.sidecar))?;
    let (test, test_rows) = load_bank(&args.emb_test, Some(&args.test_sidecar))?;
    let train_labels = labels_of(&train_rows.unwrap_or_default(), &args.sidecar)?;
    let test_labels = labels_of(&test_rows.unwrap_or_default(), &args.test_sidecar)?;
    let val = match (&args.emb_val, &args.val_sidecar) {
        (Some(e), Some(s)) => {
            let (m, rows) = load_bank(e, Some(s))?;
            Some((m, labels_of(&rows.unwrap_or_default(), s)?))
        }
        (None, None) => None,
        _ => return Err(CliError::Usage("--emb-val and --val-sidecar go together".into())),
    };
    let mut label_sets = vec![&train_labels, &test_labels];
    if let Some((_, l)) = &val {
        label_sets.push(l);
    }
    let classes = sorted_classes(label_sets);
    let mut train_idx = index_labels(&train_labels, &classes, &args.sidecar)?;
    let test_idx = index_labels(&test_labels, &classes, &args.test_sidecar)?;

    let mut train = train;
    if let Some(shots) = args.shots {
        let rows = few_shot_sample(&train_idx, shots, args.seed)?;
        train = train.select_rows(&rows);
        train_idx = rows.iter().map(|&i| train_idx[i]).collect();
    }
    let val_idx = match &val {
        Some((_, l)) => Some(index_labels(l, &classes, args.val_sidecar.as_deref().unwrap())?),
        None => None,
    };
    let cfg = ProbeConfig {
        learning_rate: args.lr,
        weight_decay: args.weight_decay,
        epochs: args.epochs,
        batch_size: args.batch_size,
        random_search_iters: args.search_iters,
        seed: args.seed,
        ..Default::default()
    };
    let validation = match (&val, &val_idx) {
        (Some((m, _)), Some(idx)) => Some(LabeledSet { x: m, labels: idx }),
        _ => None,
    };
    let result = linear_probe_search(
        LabeledSet {
            x: &train,
            labels: &train_idx,
        },
        validation,
        LabeledSet {
            x: &test,
            labels: &test_idx,
        },
        &cfg,
    )?;
    write_json(&args.report, &LabeledReport { classes, report: result })?;
    RunManifest::new("eval probe", args)?
        .seed("probe", args.seed)
        .inputs([&args.emb_img, &args.sidecar, &args.emb_test, &args.test_sidecar])?
        .inputs(args.emb_val.iter().chain(&args.val_sidecar))?
        .write_for(&args.report)?;
    Ok(())
}

fn run_count(args: &CountArgs) -> CliResult {
    let (img, rows) = load_bank(&args.emb_img, Some(&args.sidecar))?;
    let (bank, _) = load_bank(&args.emb_txt, None)?;
    let captions: Vec<String> = rows
        .unwrap_or_default()
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.caption.ok_or_else(|| {
                CliError::Ingest(format!("{}: row {} has no caption", args.sidecar.display(), i + 1))
            })
        })
        .collect::<CliResult<_>>()?;
    let report = eval_counting(&img, &captions, &PrecomputedVariants { bank: &bank }, args.digits)?;
    write_json(&args.report, &report)?;
    if let Some(p) = &args.confusion_csv {
        let mut csv = String::from("true\\predicted,1,2,3,4,5,6,7,8,9,10\n");
        for (t, row) in report.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            csv.push_str(&format!("{},{}\n", t + 1, cells.join(",")));
        }
        fs::write(p, csv).map_err(|e| CliError::io(p, e))?;
    }
    RunManifest::new("eval count", args)?
        .inputs([&args.emb_img, &args.sidecar, &args.emb_txt])?
        .write_for(&args.report)?;
    Ok(())
}

fn run_prompts(args: &PromptArgs) -> CliResult {
    let text = fs::read_to_string(&args.classes).map_err(|e| CliError::io(&args.classes, e))?;
    let rows = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|class| {
            Ok(SidecarRow {
                id: class.to_string(),
                label: Some(class.to_string()),
                caption: Some(prompt_render(&args.template, class)?),
                image_id: None,
            })
        })
        .collect::<Result<Vec<_>, rsalign::Error>>()?;
    write_jsonl(&args.out, &rows)?;
    RunManifest::new("prompts", args)?
        .inputs([&args.classes])?
        .write_for(&args.out)?;
    Ok(())
}

fn run_count_variants(args: &CountVariantsArgs) -> CliResult {
    let rows: Vec<SidecarRow> = read_jsonl(&args.sidecar)?;
    let mut out = Vec::with_capacity(rows.len() * 10);
    for (i, r) in rows.iter().enumerate() {
        let caption = r.caption.as_deref().ok_or_else(|| {
            CliError::Ingest(format!("{}: row {} has no caption", args.sidecar.display(), i + 1))
        })?;
        let (_, variants) = eval::count_variants(caption, args.digits)?;
        for (k, v) in variants.into_iter().enumerate() {
            out.push(SidecarRow {
                id: format!("{}#{}", r.id, k + 1),
                label: Some((k + 1).to_string()),
                caption: Some(v),
                image_id: Some(r.id.clone()),
            });
        }
    }
    write_jsonl(&args.out, &out)?;
    RunManifest::new("count-variants", args)?
        .inputs([&args.sidecar])?
        .write_for(&args.out)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    if cli.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    match &cli.command {
        Command::M2b(a) => run_m2b(a),
        Command::B2c(a) => run_b2c(a),
        Command::Hash(a) => run_hash(a),
        Command::Dedup(a) => run_dedup(a),
        Command::Assemble(a) => run_assemble(a),
        Command::Stats(a) => run_stats(a),
        Command::ToyTrain(a) => run_toy_train(a),
        Command::Eval(e) => match e {
            EvalCommand::Retrieval(a) => run_retrieval(a),
            EvalCommand::Zeroshot(a) => run_zeroshot(a),
            EvalCommand::Knn(a) => run_knn(a),
            EvalCommand::Probe(a) => run_probe(a),
            EvalCommand::Count(a) => run_count(a),
        },
        Command::Prompts(a) => run_prompts(a),
        Command::CountVariants(a) => run_count_variants(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rsalign: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
