//! Box-to-caption generation.
//!
//! Every image receives exactly five captions: one for the classes whose
//! boxes sit in the central window, one for the remaining classes, and three
//! that each pick a random annotated object and state how many objects of its
//! class the image holds.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mask2box::BBox;
use crate::text::{indefinite_article, join_list, number_word, pluralize};

pub const CAPTIONS_PER_IMAGE: usize = 5;

const BUILTIN_TEMPLATES: &str = include_str!("../templates/b2c_v1.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub class_name: String,
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl DetectedObject {
    pub fn bbox(&self) -> BBox {
        BBox {
            class_id: 0,
            x_min: self.x_min,
            y_min: self.y_min,
            x_max: self.x_max,
            y_max: self.y_max,
        }
    }
}

/// Canonical detection annotation for one image (one JSON object per line in
/// the ingest format).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub objects: Vec<DetectedObject>,
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.objects.iter().enumerate() {
            let ok = o.x_min <= o.x_max
                && o.y_min <= o.y_max
                && o.x_max < self.width
                && o.y_max < self.height;
            if !ok {
                return Err(Error::InvalidImage(format!(
                    "object {i} of {} lies outside the {}x{} image",
                    self.image_id, self.width, self.height
                )));
            }
            if o.class_name.trim().is_empty() {
                return Err(Error::InvalidImage(format!(
                    "object {i} of {} has an empty class name",
                    self.image_id
                )));
            }
        }
        Ok(())
    }
}

/// Exactly five non-empty captions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct CaptionSet([String; CAPTIONS_PER_IMAGE]);

impl CaptionSet {
    pub fn captions(&self) -> &[String; CAPTIONS_PER_IMAGE] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &String> {
        self.0.iter()
    }
}

impl TryFrom<Vec<String>> for CaptionSet {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        if v.iter().any(|c| c.trim().is_empty()) {
            return Err(Error::CaptionFormat("empty caption".into()));
        }
        let arr: [String; CAPTIONS_PER_IMAGE] = v.try_into().map_err(|v: Vec<String>| {
            Error::CaptionFormat(format!("expected 5 captions, got {}", v.len()))
        })?;
        Ok(CaptionSet(arr))
    }
}

impl From<CaptionSet> for Vec<String> {
    fn from(c: CaptionSet) -> Self {
        c.0.into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRuleConfig {
    pub center_fraction: f64,
    pub many_threshold: u32,
    pub seed: u64,
    pub synonym_pool: Vec<String>,
}

impl Default for CaptionRuleConfig {
    fn default() -> Self {
        Self {
            center_fraction: 0.5,
            many_threshold: 10,
            seed: 0,
            synonym_pool: vec!["many".into(), "a lot of".into()],
        }
    }
}

impl CaptionRuleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.center_fraction > 0.0 && self.center_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "center_fraction must lie in (0, 1], got {}",
                self.center_fraction
            )));
        }
        if self.many_threshold < 1 {
            return Err(Error::Config("many_threshold must be at least 1".into()));
        }
        if self.synonym_pool.is_empty() {
            return Err(Error::Config("synonym_pool must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Location {
    Center,
    OffCenter,
}

/// Center iff the box's center point falls in the half-open central window
/// of side `center_fraction` times the image side.
///
/// Pixel `i` covers `[i, i + 1)`, so an inclusive box spans
/// `[x_min, x_max + 1)` and its center is `(x_min + x_max + 1) / 2`.
pub fn classify_location(b: &BBox, width: u32, height: u32, center_fraction: f64) -> Location {
    let inside = |lo: u32, hi: u32, side: u32| {
        let c = (lo as f64 + hi as f64 + 1.0) / 2.0;
        let side = side as f64;
        let half = center_fraction * side / 2.0;
        c >= side / 2.0 - half && c < side / 2.0 + half
    };
    if inside(b.x_min, b.x_max, width) && inside(b.y_min, b.y_max, height) {
        Location::Center
    } else {
        Location::OffCenter
    }
}

/// Quantity phrase for `n` objects: a number word up to the threshold, a
/// random general term from the pool above it.
pub fn count_phrase<R: Rng + ?Sized>(
    n: i64,
    config: &CaptionRuleConfig,
    rng: &mut R,
) -> Result<String> {
    if n <= 0 {
        return Err(Error::InvalidCount(n));
    }
    if n > config.many_threshold as i64 {
        let i = rng.gen_range(0..config.synonym_pool.len());
        return Ok(config.synonym_pool[i].clone());
    }
    Ok(number_word(n as u32)
        .map(str::to_string)
        .unwrap_or_else(|| n.to_string()))
}

/// Parsed caption grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionTemplates {
    center: String,
    center_none: String,
    off_center: String,
    off_center_none: String,
    count: String,
    empty: Vec<String>,
}

impl CaptionTemplates {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TEMPLATES).expect("builtin templates are valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut single: BTreeMap<&str, String> = BTreeMap::new();
        let mut empty = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected `key = template`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim().to_string());
            if value.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("template `{key}` is empty"),
                });
            }
            match key {
                "empty" => empty.push(value),
                "center" | "center_none" | "off_center" | "off_center_none" | "count" => {
                    single.insert(key, value);
                }
                other => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("unknown template key `{other}`"),
                    })
                }
            }
        }
        if empty.len() != CAPTIONS_PER_IMAGE {
            return Err(Error::Template(format!(
                "expected {CAPTIONS_PER_IMAGE} `empty` templates, found {}",
                empty.len()
            )));
        }
        let mut take = |k: &str| {
            single
                .remove(k)
                .ok_or_else(|| Error::Template(format!("missing template `{k}`")))
        };
        Ok(Self {
            center: take("center")?,
            center_none: take("center_none")?,
            off_center: take("off_center")?,
            off_center_none: take("off_center_none")?,
            count: take("count")?,
            empty,
        })
    }
}

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    slots.iter().fold(template.to_string(), |acc, (k, v)| {
        acc.replace(&format!("{{{k}}}"), v)
    })
}

/// Per-image RNG seed derived from the corpus seed and the image id, so
/// captions do not depend on the order records are processed in.
pub fn stream_seed(seed: u64, image_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(image_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Class names in first-appearance order with their object counts.
fn tally<'a>(objects: impl Iterator<Item = &'a DetectedObject>) -> Vec<(&'a str, usize)> {
    let mut out: Vec<(&str, usize)> = Vec::new();
    for o in objects {
        match out.iter_mut().find(|(c, _)| *c == o.class_name) {
            Some((_, n)) => *n += 1,
            None => out.push((&o.class_name, 1)),
        }
    }
    out
}

fn region_caption(tallies: &[(&str, usize)], template: &str, none: &str) -> String {
    if tallies.is_empty() {
        return none.to_string();
    }
    let phrases: Vec<String> = tallies
        .iter()
        .map(|&(c, n)| {
            if n == 1 {
                format!("{} {c}", indefinite_article(c))
            } else {
                pluralize(c)
            }
        })
        .collect();
    let be = if tallies.len() == 1 && tallies[0].1 == 1 {
        "is"
    } else {
        "are"
    };
    fill(template, &[("be", be), ("classes", &join_list(&phrases))])
}

pub fn generate_captions(record: &DetectionRecord, config: &CaptionRuleConfig) -> CaptionSet {
    generate_captions_with(record, config, &CaptionTemplates::builtin())
}

pub fn generate_captions_with(
    record: &DetectionRecord,
    config: &CaptionRuleConfig,
    templates: &CaptionTemplates,
) -> CaptionSet {
    if record.objects.is_empty() {
        return CaptionSet(
            templates
                .empty
                .clone()
                .try_into()
                .expect("template parser enforces five fallbacks"),
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, &record.image_id));
    let located = |want: Location| {
        record.objects.iter().filter(move |o| {
            classify_location(&o.bbox(), record.width, record.height, config.center_fraction)
                == want
        })
    };
    let first = region_caption(
        &tally(located(Location::Center)),
        &templates.center,
        &templates.center_none,
    );
    let second = region_caption(
        &tally(located(Location::OffCenter)),
        &templates.off_center,
        &templates.off_center_none,
    );

    let totals = tally(record.objects.iter());
    let mut captions = vec![first, second];
    for _ in 0..3 {
        let pick = &record.objects[rng.gen_range(0..record.objects.len())];
        let n = totals
            .iter()
            .find(|(c, _)| *c == pick.class_name)
            .map(|&(_, n)| n)
            .expect("picked class is tallied");
        let count = count_phrase(n as i64, config, &mut rng).expect("tallied counts are positive");
        let (be, noun) = if n == 1 {
            ("is", pick.class_name.clone())
        } else {
            ("are", pluralize(&pick.class_name))
        };
        captions.push(fill(
            &templates.count,
            &[("be", be), ("count", &count), ("noun", &noun)],
        ));
    }
    CaptionSet::try_from(captions).expect("five non-empty captions")
}

/// Result of parsing one DOTA label file.
#[derive(Debug, Clone, PartialEq)]
pub struct DotaParse {
    pub record: DetectionRecord,
    /// Number of objects whose coordinates had to be clamped into the image.
    pub clamped: usize,
}

/// Parse DOTA `x1 y1 ... x4 y4 class difficulty` lines, reducing every
/// oriented quadrilateral to its axis-aligned bounds.
pub fn parse_dota_annotation(
    image_id: &str,
    text: &str,
    width: u32,
    height: u32,
) -> Result<DotaParse> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage(format!("{image_id} has zero size")));
    }
    let mut objects = Vec::new();
    let mut clamped = 0;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with("imagesource") || trimmed.starts_with("gsd") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 9 && fields.len() != 10 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 10 fields, found {}", fields.len()),
            });
        }
        let mut coords = [0f64; 8];
        for (c, f) in coords.iter_mut().zip(&fields[..8]) {
            *c = f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("bad coordinate `{f}`"),
            })?;
        }
        if let Some(d) = fields.get(9) {
            d.parse::<u32>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad difficulty `{d}`"),
            })?;
        }
        let xs = coords.iter().step_by(2);
        let ys = coords.iter().skip(1).step_by(2);
        let (x_lo, x_hi) = xs.fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let (y_lo, y_hi) = ys.fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));

        let mut was_clamped = false;
        let mut clamp = |v: f64, side: u32| {
            let max = (side - 1) as f64;
            let f = v.floor();
            if f < 0.0 || f > max {
                was_clamped = true;
            }
            f.clamp(0.0, max) as u32
        };
        let obj = DetectedObject {
            class_name: fields[8].to_string(),
            x_min: clamp(x_lo, width),
            y_min: clamp(y_lo, height),
            x_max: clamp(x_hi, width),
            y_max: clamp(y_hi, height),
        };
        if was_clamped {
            clamped += 1;
        }
        objects.push(obj);
    }
    Ok(DotaParse {
        record: DetectionRecord {
            image_id: image_id.to_string(),
            width,
            height,
            objects,
        },
        clamped,
    })
}
