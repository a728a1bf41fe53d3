//! Near-duplicate detection with 64-bit perceptual hashes.
//!
//! Hashes are split into `n_segments` equal segments and indexed once per
//! segment. Two hashes closer than `threshold` bits differ in at most
//! `threshold - 1` bits, so with `n_segments >= threshold` they agree exactly
//! on at least one segment and meet in some bucket.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;
use std::sync::OnceLock;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: u32 = 2;
pub const DEFAULT_SEGMENTS: usize = 4;

const RESAMPLE: usize = 32;
const BLOCK: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PerceptualHash {
    pub bits: u64,
    pub image_id: String,
}

impl PerceptualHash {
    pub fn new(image_id: impl Into<String>, bits: u64) -> Self {
        Self {
            bits,
            image_id: image_id.into(),
        }
    }

    pub fn to_hex(&self) -> String {
        format!("{:016x}", self.bits)
    }
}

/// One line of a hash cache file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashCacheEntry {
    pub image_id: String,
    pub phash_hex: String,
}

impl From<&PerceptualHash> for HashCacheEntry {
    fn from(h: &PerceptualHash) -> Self {
        Self {
            image_id: h.image_id.clone(),
            phash_hex: h.to_hex(),
        }
    }
}

impl TryFrom<HashCacheEntry> for PerceptualHash {
    type Error = Error;

    fn try_from(e: HashCacheEntry) -> Result<Self> {
        if e.phash_hex.len() != 16 {
            return Err(Error::InvalidImage(format!(
                "hash for {} must be 16 hex digits",
                e.image_id
            )));
        }
        let bits = u64::from_str_radix(&e.phash_hex, 16).map_err(|err| {
            Error::InvalidImage(format!("bad hash for {}: {err}", e.image_id))
        })?;
        Ok(PerceptualHash::new(e.image_id, bits))
    }
}

/// Weights of an area-averaging resample from `src` samples to `dst` samples.
fn box_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

fn dct_basis() -> &'static [[f64; RESAMPLE]; RESAMPLE] {
    static BASIS: OnceLock<[[f64; RESAMPLE]; RESAMPLE]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; RESAMPLE]; RESAMPLE];
        for (k, row) in b.iter_mut().enumerate() {
            let norm = if k == 0 {
                (1.0 / RESAMPLE as f64).sqrt()
            } else {
                (2.0 / RESAMPLE as f64).sqrt()
            };
            for (n, v) in row.iter_mut().enumerate() {
                *v = norm * (PI * (n as f64 + 0.5) * k as f64 / RESAMPLE as f64).cos();
            }
        }
        b
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 0 {
        (values[m - 1] + values[m]) / 2.0
    } else {
        values[m]
    }
}

/// DCT-based 64-bit hash.
///
/// Luma (BT.601 weights) is area-resampled to 32x32 and rounded to 8-bit
/// levels, transformed with an orthonormal 2-D DCT-II, and the 8x8
/// lowest-frequency block is thresholded at its median after the DC term has
/// been replaced by the median of the 63 AC terms. Bit `8 * v + u` holds
/// coefficient `(u, v)`.
pub fn compute_phash(image_id: impl Into<String>, image: &RgbImage) -> Result<PerceptualHash> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidImage("image has zero width or height".into()));
    }
    let luma: Vec<f64> = image
        .pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();

    let wx = box_weights(w, RESAMPLE);
    let wy = box_weights(h, RESAMPLE);
    // Horizontal pass, then vertical.
    let mut rows = vec![[0.0f64; RESAMPLE]; h];
    for (y, row) in rows.iter_mut().enumerate() {
        for (ox, ws) in wx.iter().enumerate() {
            row[ox] = ws.iter().map(|&(x, wt)| wt * luma[y * w + x]).sum();
        }
    }
    let mut small = [[0.0f64; RESAMPLE]; RESAMPLE];
    for (oy, ws) in wy.iter().enumerate() {
        for ox in 0..RESAMPLE {
            let v: f64 = ws.iter().map(|&(y, wt)| wt * rows[y][ox]).sum();
            small[oy][ox] = v.round().clamp(0.0, 255.0);
        }
    }

    let basis = dct_basis();
    let mut coeffs = [0.0f64; BLOCK * BLOCK];
    for v in 0..BLOCK {
        for u in 0..BLOCK {
            let mut acc = 0.0;
            for (y, row) in small.iter().enumerate() {
                let mut inner = 0.0;
                for (x, &px) in row.iter().enumerate() {
                    inner += basis[u][x] * px;
                }
                acc += basis[v][y] * inner;
            }
            // Snap rounding noise so flat regions give exact zeros.
            coeffs[v * BLOCK + u] = (acc * 1e6).round() / 1e6;
        }
    }

    coeffs[0] = median(&mut coeffs[1..].to_vec());
    let threshold = median(&mut coeffs.to_vec());
    let bits = coeffs
        .iter()
        .enumerate()
        .fold(0u64, |acc, (i, &c)| if c > threshold { acc | 1 << i } else { acc });
    Ok(PerceptualHash::new(image_id, bits))
}

/// Decode an image file (PNG or PNM) and hash it.
pub fn hash_image_file(image_id: impl Into<String>, path: &std::path::Path) -> Result<PerceptualHash> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::ingest(path, other.to_string()),
    })?;
    compute_phash(image_id, &img.to_rgb8())
}

pub fn hamming(a: &PerceptualHash, b: &PerceptualHash) -> u32 {
    (a.bits ^ b.bits).count_ones()
}

/// Segment-bucketed index over a fixed list of hashes.
#[derive(Debug, Clone)]
pub struct HashIndex {
    n_segments: usize,
    hashes: Vec<PerceptualHash>,
    /// One table per segment: segment value -> positions in `hashes`.
    tables: Vec<HashMap<u64, Vec<usize>>>,
}

impl HashIndex {
    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn hashes(&self) -> &[PerceptualHash] {
        &self.hashes
    }

    pub fn tables(&self) -> &[HashMap<u64, Vec<usize>>] {
        &self.tables
    }

    /// Total number of bucket entries across all segment tables.
    pub fn entry_count(&self) -> usize {
        self.tables
            .iter()
            .flat_map(|t| t.values())
            .map(Vec::len)
            .sum()
    }

    fn segment(&self, bits: u64, s: usize) -> u64 {
        segment_value(bits, s, self.n_segments)
    }

    /// Positions of indexed hashes sharing at least one segment with `bits`,
    /// ascending and without repeats.
    pub fn candidates(&self, bits: u64) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.n_segments)
            .filter_map(|s| self.tables[s].get(&self.segment(bits, s)))
            .flatten()
            .copied()
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Indexed hashes strictly closer than `threshold` to `query`.
    pub fn query(&self, query: &PerceptualHash, threshold: u32) -> Result<Vec<(usize, u32)>> {
        check_threshold(self.n_segments, threshold)?;
        Ok(self
            .candidates(query.bits)
            .into_iter()
            .map(|i| (i, hamming(query, &self.hashes[i])))
            .filter(|&(_, d)| d < threshold)
            .collect())
    }
}

fn segment_value(bits: u64, s: usize, n_segments: usize) -> u64 {
    let width = 64 / n_segments;
    let mask = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
    (bits >> (s * width)) & mask
}

fn check_threshold(n_segments: usize, threshold: u32) -> Result<()> {
    if threshold < 1 {
        return Err(Error::Config("duplicate threshold must be at least 1".into()));
    }
    if n_segments < threshold as usize {
        return Err(Error::Config(format!(
            "{n_segments} segments cannot guarantee finding pairs below distance {threshold}"
        )));
    }
    Ok(())
}

pub fn build_index(hashes: &[PerceptualHash], n_segments: usize) -> Result<HashIndex> {
    if n_segments == 0 || 64 % n_segments != 0 {
        return Err(Error::Config(format!(
            "segment count {n_segments} does not divide 64"
        )));
    }
    let mut tables: Vec<HashMap<u64, Vec<usize>>> = vec![HashMap::new(); n_segments];
    for (i, h) in hashes.iter().enumerate() {
        for (s, table) in tables.iter_mut().enumerate() {
            table
                .entry(segment_value(h.bits, s, n_segments))
                .or_default()
                .push(i);
        }
    }
    Ok(HashIndex {
        n_segments,
        hashes: hashes.to_vec(),
        tables,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DuplicatePair {
    pub id_a: String,
    pub id_b: String,
    pub distance: u32,
}

/// All pairs of indexed hashes at Hamming distance below `threshold`, each
/// reported once with `id_a <= id_b`, sorted.
pub fn find_duplicates(index: &HashIndex, threshold: u32) -> Result<Vec<DuplicatePair>> {
    check_threshold(index.n_segments, threshold)?;
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut pairs = Vec::new();
    for table in &index.tables {
        for bucket in table.values() {
            for (k, &i) in bucket.iter().enumerate() {
                for &j in &bucket[k + 1..] {
                    if !seen.insert((i.min(j), i.max(j))) {
                        continue;
                    }
                    let (a, b) = (&index.hashes[i], &index.hashes[j]);
                    let d = hamming(a, b);
                    if d < threshold {
                        let (id_a, id_b) = if a.image_id <= b.image_id {
                            (a.image_id.clone(), b.image_id.clone())
                        } else {
                            (b.image_id.clone(), a.image_id.clone())
                        };
                        pairs.push(DuplicatePair {
                            id_a,
                            id_b,
                            distance: d,
                        });
                    }
                }
            }
        }
    }
    pairs.sort();
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    /// Duplicates an image of the evaluation split.
    TestOverlap,
    /// Duplicates an earlier kept training image.
    IntraTrain,
}

/// One line of the removal report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub removed_id: String,
    pub kept_or_test_id: String,
    pub distance: u32,
    pub reason: RemovalReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decontamination {
    pub kept: Vec<PerceptualHash>,
    pub removals: Vec<Removal>,
}

/// Drop training images that duplicate any test image, then walk the
/// remaining training images in id order and drop each one that duplicates an
/// image already kept. `kept` preserves the input order.
pub fn decontaminate(
    train: &[PerceptualHash],
    test: &[PerceptualHash],
    threshold: u32,
    n_segments: usize,
) -> Result<Decontamination> {
    let test_index = build_index(test, n_segments)?;
    check_threshold(n_segments, threshold)?;

    let mut removals = Vec::new();
    let mut removed = vec![false; train.len()];
    for (i, h) in train.iter().enumerate() {
        let best = test_index
            .query(h, threshold)?
            .into_iter()
            .map(|(j, d)| (d, &test[j].image_id))
            .min();
        if let Some((d, test_id)) = best {
            removed[i] = true;
            removals.push(Removal {
                removed_id: h.image_id.clone(),
                kept_or_test_id: test_id.clone(),
                distance: d,
                reason: RemovalReason::TestOverlap,
            });
        }
    }

    let mut order: Vec<usize> = (0..train.len()).filter(|&i| !removed[i]).collect();
    order.sort_by(|&a, &b| train[a].image_id.cmp(&train[b].image_id).then(a.cmp(&b)));

    // Incremental index over kept images, keyed by segment.
    let mut kept_tables: Vec<HashMap<u64, Vec<usize>>> = vec![HashMap::new(); n_segments];
    for &i in &order {
        let h = &train[i];
        let mut best: Option<(u32, &str)> = None;
        let mut checked = HashSet::new();
        for (s, table) in kept_tables.iter().enumerate() {
            if let Some(bucket) = table.get(&segment_value(h.bits, s, n_segments)) {
                for &j in bucket {
                    if !checked.insert(j) {
                        continue;
                    }
                    let d = hamming(h, &train[j]);
                    let cand = (d, train[j].image_id.as_str());
                    if d < threshold && best.is_none_or(|b| cand < b) {
                        best = Some(cand);
                    }
                }
            }
        }
        if let Some((d, kept_id)) = best {
            removed[i] = true;
            removals.push(Removal {
                removed_id: h.image_id.clone(),
                kept_or_test_id: kept_id.to_string(),
                distance: d,
                reason: RemovalReason::IntraTrain,
            });
        } else {
            for (s, table) in kept_tables.iter_mut().enumerate() {
                table
                    .entry(segment_value(h.bits, s, n_segments))
                    .or_default()
                    .push(i);
            }
        }
    }

    let kept = train
        .iter()
        .zip(&removed)
        .filter(|(_, &r)| !r)
        .map(|(h, _)| h.clone())
        .collect();
    Ok(Decontamination { kept, removals })
}

/// Brute-force pair search, used as a cross-check and for tiny inputs.
pub fn find_duplicates_exhaustive(hashes: &[PerceptualHash], threshold: u32) -> Vec<DuplicatePair> {
    let mut pairs = Vec::new();
    for i in 0..hashes.len() {
        for j in i + 1..hashes.len() {
            let d = hamming(&hashes[i], &hashes[j]);
            if d < threshold {
                let (a, b) = (&hashes[i].image_id, &hashes[j].image_id);
                let (id_a, id_b) = if a <= b { (a, b) } else { (b, a) };
                pairs.push(DuplicatePair {
                    id_a: id_a.clone(),
                    id_b: id_b.clone(),
                    distance: d,
                });
            }
        }
    }
    pairs.sort();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]))
    }

    fn random_hashes(n: usize, seed: u64) -> Vec<PerceptualHash> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| PerceptualHash::new(format!("img{i:05}"), rng.gen()))
            .collect()
    }

    #[test]
    fn phash_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = noise_image(&mut rng, 50, 40);
        assert_eq!(
            compute_phash("a", &img).unwrap(),
            compute_phash("a", &img).unwrap()
        );
    }

    #[test]
    fn phash_rejects_empty_image() {
        assert!(matches!(
            compute_phash("e", &RgbImage::new(0, 5)),
            Err(Error::InvalidImage(_))
        ));
    }

    #[test]
    fn imperceptible_change_keeps_hash() {
        let flat = RgbImage::from_pixel(256, 256, image::Rgb([128, 128, 128]));
        let mut tweaked = flat.clone();
        tweaked.put_pixel(100, 37, image::Rgb([129, 128, 128]));
        let a = compute_phash("a", &flat).unwrap();
        let b = compute_phash("b", &tweaked).unwrap();
        assert!(hamming(&a, &b) <= 2);
    }

    #[test]
    fn unrelated_noise_images_are_far_apart() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let total: u32 = (0..100)
            .map(|_| {
                let a = compute_phash("a", &noise_image(&mut rng, 64, 64)).unwrap();
                let b = compute_phash("b", &noise_image(&mut rng, 64, 64)).unwrap();
                hamming(&a, &b)
            })
            .sum();
        let mean = total as f64 / 100.0;
        assert!((20.0..=44.0).contains(&mean), "mean distance {mean}");
    }

    #[test]
    fn rescaled_image_is_near_duplicate() {
        let img = RgbImage::from_fn(128, 128, |x, y| {
            let (x, y) = (x as f64, y as f64);
            let v = ((x / 9.0).sin() * (y / 13.0).cos() * 60.0
                + ((x + 2.0 * y) / 17.0).sin() * 50.0
                + 128.0) as u8;
            image::Rgb([v, v / 2, 255 - v])
        });
        let half = image::imageops::resize(&img, 64, 64, image::imageops::FilterType::Triangle);
        let a = compute_phash("a", &img).unwrap();
        let b = compute_phash("b", &half).unwrap();
        assert!(hamming(&a, &b) <= 4, "distance {}", hamming(&a, &b));
    }

    #[test]
    fn hamming_basics() {
        let a = PerceptualHash::new("a", 0xdead_beef_0000_ffff);
        assert_eq!(hamming(&a, &a), 0);
        assert_eq!(hamming(&a, &PerceptualHash::new("b", a.bits ^ 1 << 40)), 1);
        assert_eq!(hamming(&a, &PerceptualHash::new("c", !a.bits)), 64);
    }

    #[test]
    fn index_entry_counts() {
        let one = build_index(&random_hashes(1, 1), 4).unwrap();
        assert_eq!(one.entry_count(), 4);
        let many = build_index(&random_hashes(1000, 2), 4).unwrap();
        assert_eq!(many.entry_count(), 4000);
        assert!(matches!(build_index(&[], 5), Err(Error::Config(_))));
        assert!(matches!(build_index(&[], 0), Err(Error::Config(_))));
    }

    #[test]
    fn shared_segment_shares_one_bucket() {
        let a = PerceptualHash::new("a", 0x0000_0000_0000_abcd);
        let b = PerceptualHash::new("b", 0xffff_ffff_ffff_abcd);
        let idx = build_index(&[a, b], 4).unwrap();
        let shared = idx
            .tables()
            .iter()
            .flat_map(|t| t.values())
            .filter(|v| v.len() == 2)
            .count();
        assert_eq!(shared, 1);
    }

    #[test]
    fn distant_corpus_has_no_duplicates() {
        let hashes: Vec<_> = (0..8u64)
            .map(|i| PerceptualHash::new(format!("h{i}"), 0x0101_0101_0101_0101u64.wrapping_mul(1 << i) ^ (i * 0x1111_0000_1111)))
            .collect();
        let oracle = find_duplicates_exhaustive(&hashes, 2);
        let idx = build_index(&hashes, 4).unwrap();
        assert_eq!(find_duplicates(&idx, 2).unwrap(), oracle);
        assert!(oracle.is_empty());
    }

    #[test]
    fn exact_duplicate_found() {
        let mut hashes = random_hashes(20, 5);
        hashes.push(PerceptualHash::new("copy", hashes[3].bits));
        let idx = build_index(&hashes, 4).unwrap();
        let pairs = find_duplicates(&idx, 2).unwrap();
        assert_eq!(
            pairs,
            vec![DuplicatePair {
                id_a: "copy".into(),
                id_b: "img00003".into(),
                distance: 0
            }]
        );
    }

    #[test]
    fn pigeonhole_precondition_enforced() {
        let idx = build_index(&random_hashes(3, 1), 2).unwrap();
        assert!(find_duplicates(&idx, 3).is_err());
        assert!(find_duplicates(&idx, 0).is_err());
        assert!(find_duplicates(&idx, 2).is_ok());
    }

    #[test]
    fn decontaminate_disjoint_is_noop() {
        let train = random_hashes(50, 8);
        let test: Vec<_> = random_hashes(10, 9)
            .into_iter()
            .map(|h| PerceptualHash::new(format!("t{}", h.image_id), h.bits))
            .collect();
        let out = decontaminate(&train, &test, 2, 4).unwrap();
        assert_eq!(out.kept, train);
        assert!(out.removals.is_empty());
    }

    #[test]
    fn decontaminate_removes_test_copy_and_later_twin() {
        let mut train = random_hashes(30, 12);
        let test = vec![PerceptualHash::new("test0", train[7].bits ^ 1)];
        train.push(PerceptualHash::new("img99999", train[2].bits));
        let out = decontaminate(&train, &test, 2, 4).unwrap();
        assert_eq!(out.removals.len(), 2);
        assert_eq!(out.removals[0].removed_id, "img00007");
        assert_eq!(out.removals[0].kept_or_test_id, "test0");
        assert_eq!(out.removals[0].reason, RemovalReason::TestOverlap);
        assert_eq!(out.removals[1].removed_id, "img99999");
        assert_eq!(out.removals[1].kept_or_test_id, "img00002");
        let again = decontaminate(&out.kept, &test, 2, 4).unwrap();
        assert!(again.removals.is_empty());
    }

    #[test]
    fn hash_cache_round_trip() {
        let h = PerceptualHash::new("x", 0x0123_4567_89ab_cdef);
        let line = serde_json::to_string(&HashCacheEntry::from(&h)).unwrap();
        assert_eq!(line, r#"{"image_id":"x","phash_hex":"0123456789abcdef"}"#);
        let back: HashCacheEntry = serde_json::from_str(&line).unwrap();
        assert_eq!(PerceptualHash::try_from(back).unwrap(), h);
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
            let (a, b, c) = (PerceptualHash::new("a", a), PerceptualHash::new("b", b), PerceptualHash::new("c", c));
            prop_assert_eq!(hamming(&a, &b), hamming(&b, &a));
            prop_assert_eq!(hamming(&a, &b) == 0, a.bits == b.bits);
            prop_assert!(hamming(&a, &c) <= hamming(&a, &b) + hamming(&b, &c));
        }

        #[test]
        fn bucketed_search_is_complete(
            seeds in proptest::collection::vec(any::<u64>(), 1..30),
            flips in proptest::collection::vec((0usize..30, 0u32..64, 0u32..64), 0..20),
            threshold in 1u32..=4,
        ) {
            let mut hashes: Vec<_> = seeds.iter().enumerate()
                .map(|(i, &b)| PerceptualHash::new(format!("s{i:03}"), b)).collect();
            for (k, (src, b1, b2)) in flips.into_iter().enumerate() {
                let base = hashes[src % hashes.len()].bits;
                hashes.push(PerceptualHash::new(format!("p{k:03}"), base ^ (1 << b1) ^ (1 << b2)));
            }
            let idx = build_index(&hashes, 4).unwrap();
            prop_assert_eq!(find_duplicates(&idx, threshold).unwrap(), find_duplicates_exhaustive(&hashes, threshold));
        }
    }
}
