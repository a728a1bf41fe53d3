//! Evaluation protocols over precomputed embedding banks.
//!
//! Every routine works on rows the caller has already L2-normalized, uses the
//! dot product as similarity, and breaks ties toward the lowest row index,
//! class index or count.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::emb::{dot, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::text::{normalize_class_name, NUMBER_WORDS};

pub const DEFAULT_PROMPT_TEMPLATE: &str = "a satellite photo of {class name}.";
pub const PROMPT_SLOT: &str = "{class name}";
pub const FEW_SHOT_SIZES: [usize; 5] = [1, 4, 8, 16, 32];
pub const RECALL_KS: [usize; 3] = [1, 5, 10];

fn check_dims(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "embedding dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Index of the largest value; the first one wins ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Zero-based rank of `target` when candidates are sorted by descending
/// score with lower indices first among equals.
fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < target))
        .count()
}

/// Cross-modal recall percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub i2t_r1: f64,
    pub i2t_r5: f64,
    pub i2t_r10: f64,
    pub t2i_r1: f64,
    pub t2i_r5: f64,
    pub t2i_r10: f64,
    pub mean_recall: f64,
}

impl RetrievalResult {
    pub fn from_recalls(v: [f64; 6]) -> Self {
        Self {
            i2t_r1: v[0],
            i2t_r5: v[1],
            i2t_r10: v[2],
            t2i_r1: v[3],
            t2i_r5: v[4],
            t2i_r10: v[5],
            mean_recall: mean_recall(&v),
        }
    }

    pub fn recalls(&self) -> [f64; 6] {
        [
            self.i2t_r1,
            self.i2t_r5,
            self.i2t_r10,
            self.t2i_r1,
            self.t2i_r5,
            self.t2i_r10,
        ]
    }
}

/// Arithmetic mean of the six recall values.
pub fn mean_recall(values: &[f64; 6]) -> f64 {
    values.iter().sum::<f64>() / 6.0
}

/// `pairing[t]` is the image row described by text row `t`.
///
/// Text-to-image: each caption hits at `k` when its image ranks in the top
/// `k`. Image-to-text: each image with at least one caption hits when any of
/// its captions ranks in the top `k`.
pub fn eval_retrieval(
    img: &EmbeddingMatrix,
    txt: &EmbeddingMatrix,
    pairing: &[usize],
) -> Result<RetrievalResult> {
    check_dims(img, txt)?;
    if pairing.len() != txt.rows() {
        return Err(Error::Pairing(format!(
            "{} pairing entries for {} text rows",
            pairing.len(),
            txt.rows()
        )));
    }
    if let Some((t, &i)) = pairing.iter().enumerate().find(|(_, &i)| i >= img.rows()) {
        return Err(Error::Pairing(format!(
            "text row {t} points at image row {i}, but there are {} images",
            img.rows()
        )));
    }
    if txt.rows() == 0 {
        return Err(Error::Pairing("no text rows to evaluate".into()));
    }

    let mut t2i_hits = [0usize; 3];
    for (t, &target) in pairing.iter().enumerate() {
        let scores: Vec<f64> = img.iter_rows().map(|r| dot(txt.row(t), r)).collect();
        let rank = rank_of(&scores, target);
        for (h, &k) in t2i_hits.iter_mut().zip(&RECALL_KS) {
            *h += usize::from(rank < k);
        }
    }

    let mut captions_of: Vec<Vec<usize>> = vec![Vec::new(); img.rows()];
    for (t, &i) in pairing.iter().enumerate() {
        captions_of[i].push(t);
    }
    let mut i2t_hits = [0usize; 3];
    let mut queries = 0usize;
    for (i, caps) in captions_of.iter().enumerate() {
        if caps.is_empty() {
            continue;
        }
        queries += 1;
        let scores: Vec<f64> = txt.iter_rows().map(|r| dot(img.row(i), r)).collect();
        let best = caps.iter().map(|&t| rank_of(&scores, t)).min().unwrap();
        for (h, &k) in i2t_hits.iter_mut().zip(&RECALL_KS) {
            *h += usize::from(best < k);
        }
    }

    let pct = |hits: usize, total: usize| 100.0 * hits as f64 / total as f64;
    Ok(RetrievalResult::from_recalls([
        pct(i2t_hits[0], queries),
        pct(i2t_hits[1], queries),
        pct(i2t_hits[2], queries),
        pct(t2i_hits[0], pairing.len()),
        pct(t2i_hits[1], pairing.len()),
        pct(t2i_hits[2], pairing.len()),
    ]))
}

/// Substitute the normalized class name into the `{class name}` slot.
pub fn prompt_render(template: &str, class_name: &str) -> Result<String> {
    if !template.contains(PROMPT_SLOT) {
        return Err(Error::Template(format!(
            "template `{template}` has no {PROMPT_SLOT} slot"
        )));
    }
    let name = normalize_class_name(class_name);
    if name.is_empty() {
        return Err(Error::Template("class name is empty".into()));
    }
    Ok(template.replace(PROMPT_SLOT, &name))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub support: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub per_class: Vec<ClassAccuracy>,
}

fn classification_report(predictions: Vec<usize>, labels: &[usize], n_classes: usize) -> ClassificationReport {
    let mut support = vec![0usize; n_classes];
    let mut correct = vec![0usize; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        support[l] += 1;
        correct[l] += usize::from(p == l);
    }
    let total_correct: usize = correct.iter().sum();
    let per_class = (0..n_classes)
        .map(|c| ClassAccuracy {
            class: c,
            support: support[c],
            correct: correct[c],
            accuracy: if support[c] == 0 {
                0.0
            } else {
                correct[c] as f64 / support[c] as f64
            },
        })
        .collect();
    ClassificationReport {
        accuracy: if labels.is_empty() {
            0.0
        } else {
            total_correct as f64 / labels.len() as f64
        },
        predictions,
        per_class,
    }
}

fn check_labels(labels: &[usize], n_classes: usize, rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Label(format!(
            "{} labels for {rows} embedding rows",
            labels.len()
        )));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
        return Err(Error::Label(format!(
            "row {i} has label {l}, but only {n_classes} classes exist"
        )));
    }
    Ok(())
}

/// Predict the class whose prompt embedding is most similar to each image.
pub fn zero_shot_classify(
    img: &EmbeddingMatrix,
    class_prompts: &EmbeddingMatrix,
    labels: &[usize],
) -> Result<ClassificationReport> {
    check_dims(img, class_prompts)?;
    let n_classes = class_prompts.rows();
    if n_classes == 0 {
        return Err(Error::Label("no class prompts".into()));
    }
    check_labels(labels, n_classes, img.rows())?;
    let predictions = img
        .iter_rows()
        .map(|r| {
            let sims: Vec<f64> = class_prompts.iter_rows().map(|p| dot(r, p)).collect();
            argmax(&sims)
        })
        .collect();
    Ok(classification_report(predictions, labels, n_classes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub temperature: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 20,
            temperature: 0.07,
        }
    }
}

/// Weighted k-NN: the `k` most similar training rows vote with weight
/// `exp(similarity / T)`.
pub fn knn_classify(
    train: &EmbeddingMatrix,
    train_labels: &[usize],
    query: &EmbeddingMatrix,
    config: &KnnConfig,
) -> Result<Vec<usize>> {
    check_dims(train, query)?;
    if config.k == 0 || config.k > train.rows() {
        return Err(Error::Config(format!(
            "k = {} must lie in 1..={}",
            config.k,
            train.rows()
        )));
    }
    if !(config.temperature > 0.0) {
        return Err(Error::Config("k-NN temperature must be positive".into()));
    }
    let n_classes = train_labels.iter().max().map_or(0, |&m| m + 1);
    check_labels(train_labels, n_classes, train.rows())?;

    Ok(query
        .iter_rows()
        .map(|q| {
            let mut sims: Vec<(usize, f64)> =
                train.iter_rows().map(|r| dot(q, r)).enumerate().collect();
            sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut votes = vec![0.0f64; n_classes];
            for &(j, s) in &sims[..config.k] {
                votes[train_labels[j]] += (s / config.temperature).exp();
            }
            argmax(&votes)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Cosine annealing of the learning rate over epochs.
    pub cosine_schedule: bool,
    pub random_search_iters: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.8,
            weight_decay: 4e-5,
            epochs: 1000,
            batch_size: 10_000,
            cosine_schedule: true,
            random_search_iters: 5,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0) || self.batch_size == 0 {
            return Err(Error::Config(
                "probe learning rate and weight decay must be non-negative, batch size positive"
                    .into(),
            ));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if !self.cosine_schedule || self.epochs == 0 {
            return self.learning_rate;
        }
        let progress = epoch as f64 / self.epochs as f64;
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Multinomial logistic regression weights: `d x C` plus a bias per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub dim: usize,
    pub n_classes: usize,
    /// Row-major `dim x n_classes`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    fn zeros(dim: usize, n_classes: usize) -> Self {
        Self {
            dim,
            n_classes,
            weights: vec![0.0; dim * n_classes],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (k, &xv) in x.iter().enumerate() {
            let row = &self.weights[k * self.n_classes..(k + 1) * self.n_classes];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xv as f64 * w;
            }
        }
        out
    }

    pub fn predict(&self, x: &EmbeddingMatrix) -> Vec<usize> {
        x.iter_rows().map(|r| argmax(&self.logits(r))).collect()
    }

    pub fn accuracy(&self, x: &EmbeddingMatrix, labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let hits = self
            .predict(x)
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        hits as f64 / labels.len() as f64
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Zero-initialized softmax regression trained by minibatch SGD on mean
/// cross-entropy. Weight decay is plain L2 added to the gradient, bias included.
pub fn train_linear_classifier(
    x: &EmbeddingMatrix,
    labels: &[usize],
    n_classes: usize,
    config: &ProbeConfig,
) -> Result<LinearClassifier> {
    config.validate()?;
    check_labels(labels, n_classes, x.rows())?;
    let (d, c) = (x.dim(), n_classes);
    let mut model = LinearClassifier::zeros(d, c);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut grad_w = vec![0.0f64; d * c];
    let mut grad_b = vec![0.0f64; c];

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        if x.rows() > config.batch_size {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(config.batch_size) {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let row = x.row(i);
                let mut p = model.logits(row);
                softmax_in_place(&mut p);
                p[labels[i]] -= 1.0;
                for (k, &xv) in row.iter().enumerate() {
                    let g = &mut grad_w[k * c..(k + 1) * c];
                    for (gv, &pv) in g.iter_mut().zip(&p) {
                        *gv += scale * xv as f64 * pv;
                    }
                }
                for (gb, &pv) in grad_b.iter_mut().zip(&p) {
                    *gb += scale * pv;
                }
            }
            for (w, g) in model.weights.iter_mut().zip(&grad_w) {
                *w -= lr * (g + config.weight_decay * *w);
            }
            for (b, g) in model.bias.iter_mut().zip(&grad_b) {
                *b -= lr * (g + config.weight_decay * *b);
            }
        }
        if model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::TrainingFailure { step: epoch });
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchRound {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub classifier: LinearClassifier,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub search: Vec<SearchRound>,
}

/// Labeled embedding rows.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a> {
    pub x: &'a EmbeddingMatrix,
    pub labels: &'a [usize],
}

fn class_count(sets: &[&LabeledSet<'_>]) -> usize {
    sets.iter()
        .flat_map(|s| s.labels.iter())
        .max()
        .map_or(0, |&m| m + 1)
}

fn check_trainable(train: &LabeledSet<'_>) -> Result<()> {
    let mut distinct: Vec<usize> = train.labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateLabels(format!(
            "linear probe needs at least two classes, found {}",
            distinct.len()
        )));
    }
    Ok(())
}

/// Train a linear probe with the configured hyperparameters.
pub fn linear_probe(
    train: LabeledSet<'_>,
    test: LabeledSet<'_>,
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    check_trainable(&train)?;
    check_dims(train.x, test.x)?;
    let n_classes = class_count(&[&train, &test]);
    let classifier = train_linear_classifier(train.x, train.labels, n_classes, config)?;
    check_labels(test.labels, n_classes, test.x.rows())?;
    Ok(ProbeResult {
        train_accuracy: classifier.accuracy(train.x, train.labels),
        test_accuracy: classifier.accuracy(test.x, test.labels),
        classifier,
        learning_rate: config.learning_rate,
        weight_decay: config.weight_decay,
        search: Vec::new(),
    })
}

/// Random search over (learning rate, weight decay).
///
/// Round 0 uses the configured values; later rounds draw both log-uniformly
/// within a factor of ten of them. The round with the best validation
/// accuracy (earliest on ties) is retrained and scored on `test`. Without a
/// validation set the training set is used for selection.
pub fn linear_probe_search(
    train: LabeledSet<'_>,
    validation: Option<LabeledSet<'_>>,
    test: LabeledSet<'_>,
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    check_trainable(&train)?;
    check_dims(train.x, test.x)?;
    let val = validation.unwrap_or(train);
    check_dims(train.x, val.x)?;
    let n_classes = class_count(&[&train, &val, &test]);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed);

    let mut rounds = Vec::new();
    for round in 0..config.random_search_iters.max(1) {
        let (lr, wd) = if round == 0 {
            (config.learning_rate, config.weight_decay)
        } else {
            (
                config.learning_rate * 10f64.powf(rng.gen_range(-1.0..1.0)),
                config.weight_decay * 10f64.powf(rng.gen_range(-1.0..1.0)),
            )
        };
        let cfg = ProbeConfig {
            learning_rate: lr,
            weight_decay: wd,
            ..*config
        };
        let model = train_linear_classifier(train.x, train.labels, n_classes, &cfg)?;
        check_labels(val.labels, n_classes, val.x.rows())?;
        rounds.push(SearchRound {
            learning_rate: lr,
            weight_decay: wd,
            validation_accuracy: model.accuracy(val.x, val.labels),
        });
    }
    let best = rounds
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| {
            if r.validation_accuracy > rounds[b].validation_accuracy {
                i
            } else {
                b
            }
        });
    let chosen = ProbeConfig {
        learning_rate: rounds[best].learning_rate,
        weight_decay: rounds[best].weight_decay,
        ..*config
    };
    let mut result = linear_probe(train, test, &chosen)?;
    result.search = rounds;
    Ok(result)
}

/// Draw exactly `shots` rows per class, uniformly without replacement.
/// Returns ascending row indices.
pub fn few_shot_sample(labels: &[usize], shots: usize, seed: u64) -> Result<Vec<usize>> {
    if shots == 0 {
        return Err(Error::Config("shots must be positive".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(shots * by_class.len());
    for (class, rows) in by_class {
        if rows.len() < shots {
            return Err(Error::Sampling {
                class,
                shots,
                available: rows.len(),
            });
        }
        out.extend(rows.choose_multiple(&mut rng, shots).copied());
    }
    out.sort_unstable();
    Ok(out)
}

/// Location and value of the single count token in a caption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountToken {
    pub count: u32,
    pub start: usize,
    pub end: usize,
}

fn token_count(token: &str) -> Option<u32> {
    let lower = token.to_ascii_lowercase();
    if let Some(i) = NUMBER_WORDS.iter().position(|w| *w == lower) {
        return Some(i as u32 + 1);
    }
    match token.parse::<u32>() {
        Ok(n) if (1..=10).contains(&n) && !token.starts_with('0') => Some(n),
        _ => None,
    }
}

/// Find the one number token ("one".."ten" or "1".."10") in a caption.
pub fn find_count_token(caption: &str) -> Result<CountToken> {
    let mut found = Vec::new();
    let mut start = None;
    let bytes = caption.char_indices().chain(std::iter::once((caption.len(), ' ')));
    for (i, ch) in bytes {
        if ch.is_alphanumeric() {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            if let Some(count) = token_count(&caption[s..i]) {
                found.push(CountToken {
                    count,
                    start: s,
                    end: i,
                });
            }
        }
    }
    match found.as_slice() {
        [one] => Ok(*one),
        [] => Err(Error::CaptionFormat(format!("no number token in `{caption}`"))),
        _ => Err(Error::CaptionFormat(format!(
            "more than one number token in `{caption}`"
        ))),
    }
}

/// The ten captions obtained by substituting 1..=10 (as words, or digits
/// when `digit_mode`) for the caption's number token. Entry `k` holds count
/// `k + 1`.
pub fn count_variants(caption: &str, digit_mode: bool) -> Result<(u32, Vec<String>)> {
    let tok = find_count_token(caption)?;
    let original = &caption[tok.start..tok.end];
    let capitalized = original.chars().next().is_some_and(char::is_uppercase);
    let variants = (1..=10u32)
        .map(|n| {
            let mut word = if digit_mode {
                n.to_string()
            } else {
                NUMBER_WORDS[n as usize - 1].to_string()
            };
            if capitalized {
                word[..1].make_ascii_uppercase();
            }
            format!("{}{}{}", &caption[..tok.start], word, &caption[tok.end..])
        })
        .collect();
    Ok((tok.count, variants))
}

/// Supplies embeddings for the ten count variants of an image's caption.
pub trait VariantEmbedder {
    /// Returns a `10 x d` matrix, row `k` embedding `variants[k]`.
    fn embed_variants(&self, image_row: usize, variants: &[String]) -> Result<EmbeddingMatrix>;
}

/// Variant embeddings precomputed into one bank, ten consecutive rows per
/// image in count order.
pub struct PrecomputedVariants<'a> {
    pub bank: &'a EmbeddingMatrix,
}

impl VariantEmbedder for PrecomputedVariants<'_> {
    fn embed_variants(&self, image_row: usize, _variants: &[String]) -> Result<EmbeddingMatrix> {
        let lo = image_row * 10;
        if lo + 10 > self.bank.rows() {
            return Err(Error::Shape(format!(
                "variant bank has {} rows, image {image_row} needs rows {lo}..{}",
                self.bank.rows(),
                lo + 10
            )));
        }
        Ok(self.bank.select_rows(&(lo..lo + 10).collect::<Vec<_>>()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingReport {
    /// Row-normalized confusion matrix; row `t` is true count `t + 1`,
    /// column `p` predicted count `p + 1`. Empty rows stay zero.
    pub confusion: [[f64; 10]; 10],
    /// `top_k[m - 1]` is the fraction of images whose true count ranks among
    /// the `m` most similar variants.
    pub top_k: [f64; 10],
    pub predictions: Vec<u32>,
}

/// Counting metrics from per-image similarities to the ten variants.
pub fn counting_from_similarities(sims: &[[f64; 10]], true_counts: &[u32]) -> Result<CountingReport> {
    if sims.len() != true_counts.len() {
        return Err(Error::Shape(format!(
            "{} similarity rows for {} images",
            sims.len(),
            true_counts.len()
        )));
    }
    if let Some(&c) = true_counts.iter().find(|&&c| !(1..=10).contains(&c)) {
        return Err(Error::Label(format!("true count {c} outside 1..=10")));
    }
    let mut counts = [[0.0f64; 10]; 10];
    let mut top_hits = [0usize; 10];
    let mut predictions = Vec::with_capacity(sims.len());
    for (s, &t) in sims.iter().zip(true_counts) {
        let pred = argmax(s);
        predictions.push(pred as u32 + 1);
        counts[t as usize - 1][pred] += 1.0;
        let rank = rank_of(s, t as usize - 1);
        for h in &mut top_hits[rank..] {
            *h += 1;
        }
    }
    for row in &mut counts {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    let n = sims.len().max(1) as f64;
    let mut top_k = [0.0; 10];
    for (o, &h) in top_k.iter_mut().zip(&top_hits) {
        *o = h as f64 / n;
    }
    Ok(CountingReport {
        confusion: counts,
        top_k,
        predictions,
    })
}

/// Counting protocol: each base caption's number is replaced by 1..=10 and
/// the variant most similar to the image gives the predicted count.
pub fn eval_counting(
    img: &EmbeddingMatrix,
    base_captions: &[String],
    embedder: &dyn VariantEmbedder,
    digit_mode: bool,
) -> Result<CountingReport> {
    if base_captions.len() != img.rows() {
        return Err(Error::Shape(format!(
            "{} captions for {} images",
            base_captions.len(),
            img.rows()
        )));
    }
    let mut sims = Vec::with_capacity(img.rows());
    let mut truth = Vec::with_capacity(img.rows());
    for (i, caption) in base_captions.iter().enumerate() {
        let (count, variants) = count_variants(caption, digit_mode)?;
        let emb = embedder.embed_variants(i, &variants)?;
        check_dims(img, &emb)?;
        if emb.rows() != 10 {
            return Err(Error::Shape(format!("expected 10 variant rows, got {}", emb.rows())));
        }
        let mut row = [0.0; 10];
        for (k, v) in row.iter_mut().enumerate() {
            *v = dot(img.row(i), emb.row(k));
        }
        sims.push(row);
        truth.push(count);
    }
    counting_from_similarities(&sims, &truth)
}
