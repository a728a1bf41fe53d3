//! Ingest caption, detection and segmentation sources into one corpus.
//!
//! Every source is reduced to [`UnifiedRecord`]s carrying exactly five
//! captions. [`assemble`] removes training images that duplicate evaluation
//! images (or each other), orders the survivors by `(source, image_id)` and
//! writes them as JSON Lines together with [`CorpusStats`].

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::box2caption::{
    generate_captions, parse_dota_annotation, CaptionRuleConfig, CaptionSet, DetectedObject,
    DetectionRecord, CAPTIONS_PER_IMAGE,
};
use crate::dedup::{
    decontaminate, hash_image_file, HashCacheEntry, PerceptualHash, Removal, DEFAULT_SEGMENTS,
    DEFAULT_THRESHOLD,
};
use crate::emb::read_jsonl;
use crate::error::{Error, Result};
use crate::mask2box::{mask_to_boxes, BoxRecord, LabelMask};
use crate::text::{normalize_class_name, stopwords, tokenize};

pub const TOP_KEYWORDS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// Accepts `train`, `val` and `test`; Karpathy-style `restval` counts as
    /// training data.
    pub fn parse(s: &str) -> Option<Split> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "restval" => Some(Split::Train),
            "val" | "valid" | "validation" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Ret,
    Det,
    Seg,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedRecord {
    pub image_id: String,
    pub source_dataset: String,
    pub split: Split,
    pub image_path: String,
    pub captions: CaptionSet,
    pub origin: Origin,
}

impl UnifiedRecord {
    /// `source/image_id`, unique within an assembled corpus.
    pub fn key(&self) -> String {
        format!("{}/{}", self.source_dataset, self.image_id)
    }
}

/// Records from one caption source plus how many images needed their caption
/// list fixed up.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RetIngest {
    pub records: Vec<UnifiedRecord>,
    /// Images with fewer than five captions, padded by cyclic repetition.
    pub padded: usize,
    /// Images with more than five captions, truncated to the first five.
    pub truncated: usize,
}

impl RetIngest {
    pub fn warnings(&self) -> usize {
        self.padded + self.truncated
    }
}

#[derive(Deserialize)]
struct RetFile {
    #[serde(default)]
    dataset: Option<String>,
    images: Vec<RetImage>,
}

#[derive(Deserialize)]
struct RetImage {
    filename: String,
    #[serde(default)]
    split: Option<String>,
    #[serde(default)]
    filepath: Option<String>,
    sentences: Vec<RetSentence>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RetSentence {
    Plain(String),
    Structured { raw: String },
}

impl RetSentence {
    fn text(&self) -> &str {
        match self {
            RetSentence::Plain(s) => s,
            RetSentence::Structured { raw } => raw,
        }
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Cycle or cut a caption list to exactly five entries.
pub fn fit_captions(captions: &[String]) -> Option<Vec<String>> {
    if captions.is_empty() {
        return None;
    }
    Some(
        captions
            .iter()
            .cycle()
            .take(CAPTIONS_PER_IMAGE)
            .cloned()
            .collect(),
    )
}

/// Read a Karpathy-style caption file:
/// `{"dataset"?: name, "images": [{"filename", "split"?, "filepath"?, "sentences": [...]}]}`
/// where each sentence is either a string or an object with a `raw` field.
/// The dataset name defaults to the file stem and a missing split to `train`.
pub fn ingest_ret(path: &Path) -> Result<RetIngest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: RetFile =
        serde_json::from_str(&text).map_err(|e| Error::ingest(path, e.to_string()))?;
    let source = file.dataset.unwrap_or_else(|| file_stem(path));

    let mut out = RetIngest::default();
    for (i, img) in file.images.into_iter().enumerate() {
        let split = match img.split.as_deref() {
            None => Split::Train,
            Some(s) => Split::parse(s).ok_or_else(|| {
                Error::ingest(path, format!("image {i} ({}): unknown split `{s}`", img.filename))
            })?,
        };
        let captions: Vec<String> = img
            .sentences
            .iter()
            .map(|s| s.text().trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let fitted = fit_captions(&captions).ok_or_else(|| {
            Error::ingest(path, format!("image {i} ({}) has no captions", img.filename))
        })?;
        match captions.len().cmp(&CAPTIONS_PER_IMAGE) {
            std::cmp::Ordering::Less => out.padded += 1,
            std::cmp::Ordering::Greater => out.truncated += 1,
            std::cmp::Ordering::Equal => {}
        }
        let image_path = match img.filepath {
            Some(dir) if !dir.is_empty() => format!("{dir}/{}", img.filename),
            _ => img.filename.clone(),
        };
        out.records.push(UnifiedRecord {
            image_id: img.filename,
            source_dataset: source.clone(),
            split,
            image_path,
            captions: CaptionSet::try_from(fitted)?,
            origin: Origin::Ret,
        });
    }
    if out.warnings() > 0 {
        log::warn!(
            "{}: padded {} and truncated {} caption lists",
            path.display(),
            out.padded,
            out.truncated
        );
    }
    Ok(out)
}

/// Where a detection or segmentation source comes from and how its records
/// are labelled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceInfo {
    pub source_dataset: String,
    pub split: Split,
}

impl SourceInfo {
    pub fn new(source_dataset: impl Into<String>, split: Split) -> Self {
        Self {
            source_dataset: source_dataset.into(),
            split,
        }
    }
}

fn normalize_record(mut rec: DetectionRecord) -> DetectionRecord {
    for o in &mut rec.objects {
        o.class_name = normalize_class_name(&o.class_name);
    }
    rec
}

/// Caption one detection record. Class names are normalized first.
pub fn detection_to_record(
    rec: DetectionRecord,
    image_path: String,
    info: &SourceInfo,
    origin: Origin,
    config: &CaptionRuleConfig,
) -> Result<UnifiedRecord> {
    let rec = normalize_record(rec);
    rec.validate()?;
    Ok(UnifiedRecord {
        captions: generate_captions(&rec, config),
        image_id: rec.image_id,
        source_dataset: info.source_dataset.clone(),
        split: info.split,
        image_path,
        origin,
    })
}

/// Canonical detection JSON Lines: one [`DetectionRecord`] per line. The
/// image path recorded for each image is its id.
pub fn ingest_det(
    path: &Path,
    info: &SourceInfo,
    config: &CaptionRuleConfig,
) -> Result<Vec<UnifiedRecord>> {
    config.validate()?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ctx = |m: String| Error::ingest(path, format!("line {}: {m}", i + 1));
        let rec: DetectionRecord = serde_json::from_str(line).map_err(|e| ctx(e.to_string()))?;
        let image_path = rec.image_id.clone();
        out.push(
            detection_to_record(rec, image_path, info, Origin::Det, config)
                .map_err(|e| ctx(e.to_string()))?,
        );
    }
    Ok(out)
}

/// A directory of DOTA label files (`<image_id>.txt`) plus image sizes,
/// which DOTA labels do not carry. `sizes` maps image id to `[width, height]`.
pub fn ingest_dota_dir(
    label_dir: &Path,
    sizes: &BTreeMap<String, [u32; 2]>,
    info: &SourceInfo,
    config: &CaptionRuleConfig,
) -> Result<Vec<UnifiedRecord>> {
    config.validate()?;
    let mut out = Vec::new();
    for path in sorted_files(label_dir, &["txt"])? {
        let id = file_stem(&path);
        let [w, h] = *sizes
            .get(&id)
            .ok_or_else(|| Error::ingest(&path, format!("no image size given for `{id}`")))?;
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let parsed = parse_dota_annotation(&id, &text, w, h)
            .map_err(|e| Error::ingest(&path, e.to_string()))?;
        if parsed.clamped > 0 {
            log::warn!("{}: clamped {} boxes into the image", path.display(), parsed.clamped);
        }
        let image_path = format!("{id}.png");
        out.push(detection_to_record(parsed.record, image_path, info, Origin::Det, config)?);
    }
    Ok(out)
}

/// Regular files in `dir` with one of the given extensions, sorted by name.
pub fn sorted_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| extensions.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub const CLASS_SIDECAR: &str = "classes.json";

/// Read `classes.json`: an object mapping class id (as a string) to name.
pub fn read_class_names(path: &Path) -> Result<BTreeMap<u32, String>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::ingest(path, "class-name sidecar is missing"),
        _ => Error::io(path, e),
    })?;
    let raw: BTreeMap<String, String> =
        serde_json::from_str(&text).map_err(|e| Error::ingest(path, e.to_string()))?;
    raw.into_iter()
        .map(|(k, v)| {
            let id = k
                .parse::<u32>()
                .map_err(|_| Error::ingest(path, format!("class id `{k}` is not an integer")))?;
            if id == 0 {
                return Err(Error::ingest(path, "class id 0 is reserved for background"));
            }
            Ok((id, v))
        })
        .collect()
}

/// Boxes of one mask converted to the detection schema.
pub fn mask_to_detection(image_id: &str, mask: &LabelMask, min_area: usize) -> DetectionRecord {
    let objects = mask_to_boxes(mask, min_area)
        .iter()
        .map(|b| {
            let r = BoxRecord::from_box(b, mask.class_names());
            DetectedObject {
                class_name: r.class,
                x_min: r.x_min,
                y_min: r.y_min,
                x_max: r.x_max,
                y_max: r.y_max,
            }
        })
        .collect();
    DetectionRecord {
        image_id: image_id.to_string(),
        width: mask.width() as u32,
        height: mask.height() as u32,
        objects,
    }
}

/// Segmentation masks (8-bit PNG or PGM, pixel value = class id) in
/// `mask_dir` with a `classes.json` sidecar next to them. Each mask goes
/// through mask-to-box and then box-to-caption.
pub fn ingest_seg(
    mask_dir: &Path,
    info: &SourceInfo,
    config: &CaptionRuleConfig,
    min_area: usize,
) -> Result<Vec<UnifiedRecord>> {
    config.validate()?;
    let names = read_class_names(&mask_dir.join(CLASS_SIDECAR))?;
    let mut out = Vec::new();
    for path in sorted_files(mask_dir, &["png", "pgm"])? {
        let id = file_stem(&path);
        let mask = LabelMask::from_image_file(&path, names.clone())?;
        let det = mask_to_detection(&id, &mask, min_area);
        let image_path = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| id.clone());
        out.push(
            detection_to_record(det, image_path, info, Origin::Seg, config)
                .map_err(|e| Error::ingest(&path, e.to_string()))?,
        );
    }
    Ok(out)
}

/// What to do with a record whose image cannot be hashed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingHash {
    /// Fail the assembly.
    #[default]
    Error,
    /// Keep the record without deduplicating it.
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupConfig {
    pub threshold: u32,
    pub n_segments: usize,
    /// Precomputed hashes, looked up by image id and then by image path.
    #[serde(skip)]
    pub hash_cache: HashMap<String, u64>,
    /// Directory against which relative image paths are resolved when a
    /// hash has to be computed.
    pub image_root: Option<PathBuf>,
    pub on_missing: MissingHash,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            n_segments: DEFAULT_SEGMENTS,
            hash_cache: HashMap::new(),
            image_root: None,
            on_missing: MissingHash::Error,
        }
    }
}

impl DedupConfig {
    /// Load a hash cache file (JSON Lines of `{image_id, phash_hex}`).
    pub fn load_cache(&mut self, path: &Path) -> Result<()> {
        let entries: Vec<HashCacheEntry> = read_jsonl(path)?;
        for e in entries {
            let h = PerceptualHash::try_from(e).map_err(|e| Error::ingest(path, e.to_string()))?;
            self.hash_cache.insert(h.image_id, h.bits);
        }
        Ok(())
    }

    fn lookup(&self, rec: &UnifiedRecord) -> Result<Option<u64>> {
        if let Some(&b) = self
            .hash_cache
            .get(&rec.image_id)
            .or_else(|| self.hash_cache.get(&rec.image_path))
        {
            return Ok(Some(b));
        }
        let path = match &self.image_root {
            Some(root) => root.join(&rec.image_path),
            None => PathBuf::from(&rec.image_path),
        };
        if path.is_file() {
            return Ok(Some(hash_image_file(rec.key(), &path)?.bits));
        }
        match self.on_missing {
            MissingHash::Keep => Ok(None),
            MissingHash::Error => Err(Error::ingest(
                path,
                format!("no hash available for image `{}`", rec.key()),
            )),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub images: usize,
    pub pairs: usize,
    pub per_source: BTreeMap<String, usize>,
    pub per_split: BTreeMap<Split, usize>,
    pub per_origin: BTreeMap<Origin, usize>,
    /// Token count -> number of captions with that many tokens.
    pub caption_length_histogram: BTreeMap<usize, usize>,
    /// Most frequent non-stop-words, by descending count then word.
    pub top_keywords: Vec<(String, usize)>,
}

impl CorpusStats {
    /// `tokens,captions` rows for external plotting.
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("tokens,captions\n");
        for (len, n) in &self.caption_length_histogram {
            s.push_str(&format!("{len},{n}\n"));
        }
        s
    }
}

pub fn corpus_stats(corpus: &[UnifiedRecord]) -> CorpusStats {
    let mut stats = CorpusStats {
        images: corpus.len(),
        pairs: corpus.len() * CAPTIONS_PER_IMAGE,
        ..Default::default()
    };
    let stop = stopwords();
    let mut freq: HashMap<String, usize> = HashMap::new();
    for rec in corpus {
        *stats.per_source.entry(rec.source_dataset.clone()).or_default() += 1;
        *stats.per_split.entry(rec.split).or_default() += 1;
        *stats.per_origin.entry(rec.origin).or_default() += 1;
        for caption in rec.captions.iter() {
            let tokens = tokenize(caption);
            *stats.caption_length_histogram.entry(tokens.len()).or_default() += 1;
            for t in tokens {
                let t = t.to_lowercase();
                if !stop.contains(t.as_str()) {
                    *freq.entry(t).or_default() += 1;
                }
            }
        }
    }
    let mut words: Vec<(String, usize)> = freq.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    words.truncate(TOP_KEYWORDS);
    stats.top_keywords = words;
    stats
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub corpus: Vec<UnifiedRecord>,
    pub removals: Vec<Removal>,
    /// Records kept without a hash under [`MissingHash::Keep`].
    pub unhashed: usize,
    pub stats: CorpusStats,
}

/// Merge, decontaminate and order records without touching the filesystem
/// beyond hash computation. Training records are checked against every
/// validation and test record, then against each other; evaluation splits
/// are never filtered.
pub fn merge(sources: Vec<Vec<UnifiedRecord>>, dedup: &DedupConfig) -> Result<Assembly> {
    let mut records: Vec<UnifiedRecord> = sources.into_iter().flatten().collect();
    records.sort_by(|a, b| {
        (&a.source_dataset, &a.image_id).cmp(&(&b.source_dataset, &b.image_id))
    });
    if let Some(w) = records
        .windows(2)
        .find(|w| w[0].source_dataset == w[1].source_dataset && w[0].image_id == w[1].image_id)
    {
        return Err(Error::Config(format!("image `{}` appears twice", w[0].key())));
    }

    let mut train = Vec::new();
    let mut eval = Vec::new();
    let mut unhashed = 0;
    for rec in &records {
        match dedup.lookup(rec)? {
            Some(bits) => {
                let h = PerceptualHash::new(rec.key(), bits);
                if rec.split == Split::Train {
                    train.push(h);
                } else {
                    eval.push(h);
                }
            }
            None => unhashed += 1,
        }
    }
    if unhashed > 0 {
        log::warn!("{unhashed} records kept without a perceptual hash");
    }

    let result = decontaminate(&train, &eval, dedup.threshold, dedup.n_segments)?;
    let dropped: std::collections::HashSet<&str> =
        result.removals.iter().map(|r| r.removed_id.as_str()).collect();
    let corpus: Vec<UnifiedRecord> = records
        .into_iter()
        .filter(|r| !dropped.contains(r.key().as_str()))
        .collect();
    let stats = corpus_stats(&corpus);
    Ok(Assembly {
        corpus,
        removals: result.removals,
        unhashed,
        stats,
    })
}

pub fn write_corpus(path: &Path, corpus: &[UnifiedRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in corpus {
        serde_json::to_writer(&mut w, rec).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<UnifiedRecord>> {
    read_jsonl(path)
}

/// [`merge`] and write the corpus to `output`.
pub fn assemble(
    sources: Vec<Vec<UnifiedRecord>>,
    dedup: &DedupConfig,
    output: &Path,
) -> Result<Assembly> {
    let assembly = merge(sources, dedup)?;
    write_corpus(output, &assembly.corpus)?;
    Ok(assembly)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(source: &str, id: &str, split: Split, caption: &str) -> UnifiedRecord {
        UnifiedRecord {
            image_id: id.into(),
            source_dataset: source.into(),
            split,
            image_path: format!("{id}.png"),
            captions: CaptionSet::try_from(vec![caption.to_string(); 5]).unwrap(),
            origin: Origin::Ret,
        }
    }

    fn cache(entries: &[(&str, u64)]) -> DedupConfig {
        DedupConfig {
            hash_cache: entries.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn cyclic_padding() {
        let c: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(fit_captions(&c).unwrap(), ["a", "b", "c", "a", "b"]);
        let seven: Vec<String> = (0..7).map(|i| i.to_string()).collect();
        assert_eq!(fit_captions(&seven).unwrap(), ["0", "1", "2", "3", "4"]);
        assert!(fit_captions(&[]).is_none());
    }

    #[test]
    fn two_token_histogram() {
        let stats = corpus_stats(&[record("s", "x", Split::Train, "a plane")]);
        assert_eq!(stats.caption_length_histogram, BTreeMap::from([(2, 5)]));
        assert_eq!(stats.top_keywords, vec![("plane".to_string(), 5)]);
        assert_eq!(stats.pairs, 5);
    }

    #[test]
    fn stopword_captions_have_no_keywords() {
        let stats = corpus_stats(&[record("s", "x", Split::Train, "There is an a.")]);
        assert!(stats.top_keywords.is_empty());
    }

    #[test]
    fn keyword_counts_match_hand_count() {
        let corpus = vec![
            record("s", "1", Split::Train, "Planes near the runway."),
            record("s", "2", Split::Train, "planes, ships and planes"),
        ];
        let stats = corpus_stats(&corpus);
        let top: BTreeMap<String, usize> = stats.top_keywords.into_iter().collect();
        assert_eq!(top["planes"], 15);
        assert_eq!(top["runway"], 5);
        assert_eq!(top["ships"], 5);
        assert_eq!(top.get("the"), None);
    }

    #[test]
    fn empty_merge() {
        let a = merge(vec![], &DedupConfig::default()).unwrap();
        assert!(a.corpus.is_empty());
        assert_eq!(a.stats, corpus_stats(&[]));
    }

    #[test]
    fn planted_duplicate_is_removed() {
        let sources = vec![
            vec![
                record("a", "t1", Split::Train, "x"),
                record("a", "t2", Split::Train, "y"),
            ],
            vec![record("b", "e1", Split::Test, "z")],
        ];
        let dedup = cache(&[("t1", 0xFFFF_0000_FFFF_0000), ("t2", 0x1234), ("e1", 0x1235)]);
        let a = merge(sources, &dedup).unwrap();
        let ids: Vec<&str> = a.corpus.iter().map(|r| r.image_id.as_str()).collect();
        assert_eq!(ids, ["t1", "e1"]);
        assert_eq!(a.removals.len(), 1);
        assert_eq!(a.removals[0].removed_id, "a/t2");
        assert_eq!(a.removals[0].kept_or_test_id, "b/e1");
        assert_eq!(a.stats.pairs, 5 * a.stats.images);
    }

    #[test]
    fn missing_hash_policy() {
        let sources = vec![vec![record("a", "t1", Split::Train, "x")]];
        assert!(merge(sources.clone(), &DedupConfig::default()).is_err());
        let keep = DedupConfig {
            on_missing: MissingHash::Keep,
            ..Default::default()
        };
        assert_eq!(merge(sources, &keep).unwrap().unhashed, 1);
    }

    #[test]
    fn duplicate_keys_rejected() {
        let r = record("a", "t1", Split::Train, "x");
        let keep = DedupConfig {
            on_missing: MissingHash::Keep,
            ..Default::default()
        };
        assert!(merge(vec![vec![r.clone()], vec![r]], &keep).is_err());
    }

    #[test]
    fn split_names() {
        assert_eq!(Split::parse("restval"), Some(Split::Train));
        assert_eq!(Split::parse("TEST"), Some(Split::Test));
        assert_eq!(Split::parse("dev"), None);
    }
}
