//! Bidirectional InfoNCE and a small two-tower trainer.
//!
//! For unit-norm image rows `z_i` and text rows `t_j` with temperature `tau`,
//! the logits are `s_ij = z_i . t_j / tau` and the loss averages the
//! image-to-text and text-to-image cross-entropies of the matching pairs:
//!
//! ```text
//! L = -1/(2N) * sum_i [ log softmax_j(s_ij)[i] + log softmax_j(s_ji)[i] ]
//! ```

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::emb::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.07;
pub const MIN_TAU: f64 = 0.01;
const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    pub log_tau: f64,
}

impl Temperature {
    pub fn from_tau(tau: f64) -> Self {
        assert!(tau > 0.0, "temperature must be positive");
        Self {
            log_tau: tau.ln(),
        }
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn clamped(self, min_tau: f64) -> Self {
        Self {
            log_tau: self.log_tau.max(min_tau.ln()),
        }
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self::from_tau(DEFAULT_TAU)
    }
}

pub fn to_array(m: &EmbeddingMatrix) -> Array2<f64> {
    Array2::from_shape_fn((m.rows(), m.dim()), |(i, j)| m.row(i)[j] as f64)
}

pub fn from_array(a: &Array2<f64>) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::new(a.nrows(), a.ncols(), a.iter().map(|&v| v as f32).collect())
}

pub fn l2_normalize(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut values = Vec::with_capacity(m.values().len());
    for (i, row) in m.iter_rows().enumerate() {
        let norm = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateRow(i));
        }
        values.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
    }
    EmbeddingMatrix::new(m.rows(), m.dim(), values)
}

/// Row-normalize in place; returns the original norms.
fn normalize_rows(a: &mut Array2<f64>) -> Result<Array1<f64>> {
    let norms = a.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    for (i, (mut row, &n)) in a.rows_mut().into_iter().zip(&norms).enumerate() {
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateRow(i));
        }
        row /= n;
    }
    Ok(norms)
}

/// Entry `(i, j)` is `a_i . b_j`.
pub fn similarity_matrix(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<Array2<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "dimension {} does not match {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(to_array(a).dot(&to_array(b).t()))
}

/// Loss and its gradients with respect to both embedding sets and `log_tau`.
#[derive(Debug, Clone)]
pub struct InfoNceGrad {
    pub loss: f64,
    pub d_image: Array2<f64>,
    pub d_text: Array2<f64>,
    pub d_log_tau: f64,
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn check_batch(image: ArrayView2<f64>, text: ArrayView2<f64>) -> Result<()> {
    if image.dim() != text.dim() {
        return Err(Error::Shape(format!(
            "image batch {:?} and text batch {:?} differ",
            image.dim(),
            text.dim()
        )));
    }
    if image.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

/// InfoNCE with analytic gradients over raw `f64` batches. Rows are used as
/// given; callers that need the unit-norm contract check it themselves.
pub fn info_nce_raw(
    image: ArrayView2<f64>,
    text: ArrayView2<f64>,
    temperature: Temperature,
) -> Result<InfoNceGrad> {
    check_batch(image, text)?;
    let n = image.nrows();
    let inv_tau = (-temperature.log_tau).exp();
    let logits = image.dot(&text.t()) * inv_tau;

    let lp_i2t = log_softmax_rows(&logits);
    let lp_t2i = log_softmax_rows(&logits.t().to_owned());
    let diag: f64 = (0..n).map(|i| lp_i2t[[i, i]] + lp_t2i[[i, i]]).sum();
    let loss = -diag / (2.0 * n as f64);

    // dL/dlogits = ((P_row - I) + (P_col - I)^T) / (2N)
    let mut g = lp_i2t.mapv(f64::exp) + lp_t2i.mapv(f64::exp).t();
    for i in 0..n {
        g[[i, i]] -= 2.0;
    }
    g /= 2.0 * n as f64;

    let d_image = g.dot(&text) * inv_tau;
    let d_text = g.t().dot(&image) * inv_tau;
    let d_log_tau = -(&g * &logits).sum();
    Ok(InfoNceGrad {
        loss,
        d_image,
        d_text,
        d_log_tau,
    })
}

pub fn info_nce_loss_raw(
    image: ArrayView2<f64>,
    text: ArrayView2<f64>,
    temperature: Temperature,
) -> Result<f64> {
    check_batch(image, text)?;
    let n = image.nrows();
    let logits = image.dot(&text.t()) * (-temperature.log_tau).exp();
    let a = log_softmax_rows(&logits);
    let b = log_softmax_rows(&logits.t().to_owned());
    Ok(-(0..n).map(|i| a[[i, i]] + b[[i, i]]).sum::<f64>() / (2.0 * n as f64))
}

fn checked_arrays(
    image: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if image.rows() == 0 || text.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    image.ensure_normalized(NORM_TOLERANCE)?;
    text.ensure_normalized(NORM_TOLERANCE)?;
    Ok((to_array(image), to_array(text)))
}

/// Bidirectional InfoNCE over unit-norm rows.
pub fn info_nce(
    image: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    temperature: Temperature,
) -> Result<f64> {
    let (a, b) = checked_arrays(image, text)?;
    info_nce_loss_raw(a.view(), b.view(), temperature)
}

pub fn info_nce_grad(
    image: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    temperature: Temperature,
) -> Result<InfoNceGrad> {
    let (a, b) = checked_arrays(image, text)?;
    info_nce_raw(a.view(), b.view(), temperature)
}

/// Random augmentation of image vectors laid out as square grids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augmentation {
    /// Mirror left-right with probability 1/2.
    pub horizontal_flip: bool,
    /// Rotation angles (multiples of 90 degrees) drawn uniformly per sample.
    pub rotations: Vec<u16>,
}

impl Augmentation {
    /// The rotation set used for the large-scale corpus: 0, 90, 180, 270.
    pub fn rotations_only() -> Self {
        Self {
            horizontal_flip: false,
            rotations: vec![0, 90, 180, 270],
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.horizontal_flip && self.rotations.iter().all(|&r| r % 360 == 0)
    }

    fn validate(&self) -> Result<()> {
        if let Some(r) = self.rotations.iter().find(|&&r| r % 90 != 0) {
            return Err(Error::Config(format!("rotation {r} is not a multiple of 90")));
        }
        Ok(())
    }

    fn apply<R: Rng>(&self, grid: &[f64], side: usize, rng: &mut R) -> Vec<f64> {
        let mut out = grid.to_vec();
        if !self.rotations.is_empty() {
            let r = self.rotations[rng.gen_range(0..self.rotations.len())];
            out = rotate_grid(&out, side, r);
        }
        if self.horizontal_flip && rng.gen_bool(0.5) {
            out = flip_grid(&out, side);
        }
        out
    }
}

/// Rotate a row-major `side x side` grid clockwise by `degrees` (multiple of 90).
pub fn rotate_grid(grid: &[f64], side: usize, degrees: u16) -> Vec<f64> {
    let mut out = grid.to_vec();
    for _ in 0..(degrees / 90) % 4 {
        let src = out.clone();
        for y in 0..side {
            for x in 0..side {
                // (x, y) -> (side - 1 - y, x)
                out[x * side + (side - 1 - y)] = src[y * side + x];
            }
        }
    }
    out
}

pub fn flip_grid(grid: &[f64], side: usize) -> Vec<f64> {
    let mut out = grid.to_vec();
    for y in 0..side {
        out[y * side..(y + 1) * side].reverse();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Pairs per batch (`N`); must not exceed the dataset size `M`.
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub out_dim: usize,
    pub augmentation: Augmentation,
    pub init_tau: f64,
    pub learn_temperature: bool,
    /// Linear warm-up length in optimizer steps; 0 disables warm-up.
    pub warmup_steps: usize,
    /// Cosine decay of the learning rate after warm-up.
    pub cosine_schedule: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            epochs: 150,
            learning_rate: 0.5,
            seed: 0,
            // Narrow enough that randomly re-paired data cannot be memorized.
            out_dim: 6,
            augmentation: Augmentation::default(),
            init_tau: DEFAULT_TAU,
            learn_temperature: true,
            warmup_steps: 0,
            cosine_schedule: false,
        }
    }
}

impl TrainConfig {
    /// Learning rate at optimizer step `step` out of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup_steps {
            return self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64;
        }
        if !self.cosine_schedule {
            return self.learning_rate;
        }
        let span = total.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = (step - self.warmup_steps) as f64 / span;
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Paired raw vectors with latent class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDataset {
    /// `M x side^2` image vectors, each a row-major square grid.
    pub image: Array2<f64>,
    /// `M x text_dim` text vectors.
    pub text: Array2<f64>,
    pub labels: Vec<usize>,
    pub grid_side: usize,
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub pairs: usize,
    pub classes: usize,
    pub grid_side: usize,
    pub text_dim: usize,
    pub latent_dim: usize,
    /// Spread of class centers in latent space.
    pub class_scale: f64,
    /// Spread of each pair's own latent offset around its class center.
    pub instance_scale: f64,
    /// Independent observation noise per modality.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            pairs: 200,
            classes: 10,
            grid_side: 8,
            text_dim: 48,
            latent_dim: 16,
            class_scale: 1.0,
            instance_scale: 0.6,
            noise: 0.05,
            seed: 0,
        }
    }
}

fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

impl ToyDataset {
    /// Each pair shares a latent vector (class center plus a per-pair offset)
    /// that is linearly mixed into both modalities with independent noise.
    pub fn synthetic(spec: &SyntheticSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let centers = uniform_matrix(&mut rng, spec.classes, spec.latent_dim, spec.class_scale);
        let img_dim = spec.grid_side * spec.grid_side;
        let mix_img = uniform_matrix(&mut rng, spec.latent_dim, img_dim, 1.0);
        let mix_txt = uniform_matrix(&mut rng, spec.latent_dim, spec.text_dim, 1.0);
        let labels: Vec<usize> = (0..spec.pairs).map(|i| i % spec.classes).collect();
        let mut latent = Array2::zeros((spec.pairs, spec.latent_dim));
        for (i, mut row) in latent.rows_mut().into_iter().enumerate() {
            row.assign(&centers.row(labels[i]));
            row += &uniform_matrix(&mut rng, 1, spec.latent_dim, spec.instance_scale).row(0);
        }
        let image = latent.dot(&mix_img) + uniform_matrix(&mut rng, spec.pairs, img_dim, spec.noise);
        let text =
            latent.dot(&mix_txt) + uniform_matrix(&mut rng, spec.pairs, spec.text_dim, spec.noise);
        Self {
            image,
            text,
            labels,
            grid_side: spec.grid_side,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.labels.len();
        if self.image.nrows() != m || self.text.nrows() != m {
            return Err(Error::Shape(format!(
                "{} image rows, {} text rows, {m} labels",
                self.image.nrows(),
                self.text.nrows()
            )));
        }
        if self.image.ncols() != self.grid_side * self.grid_side {
            return Err(Error::Shape(format!(
                "image rows have {} values, expected a {}x{} grid",
                self.image.ncols(),
                self.grid_side,
                self.grid_side
            )));
        }
        if self.image.iter().chain(self.text.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite input value".into()));
        }
        Ok(())
    }

    /// Same data with the text rows permuted so pairs no longer correspond.
    pub fn shuffled_pairs(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..self.len()).collect();
        perm.shuffle(&mut rng);
        let text = self.text.select(Axis(0), &perm);
        Self {
            text,
            ..self.clone()
        }
    }
}

/// Linear projection tower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    /// `d_in x d_out`.
    pub weight: Array2<f64>,
}

impl ToyEncoder {
    /// Project and L2-normalize each row.
    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut h = x.dot(&self.weight);
        normalize_rows(&mut h)?;
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoders {
    pub image: ToyEncoder,
    pub text: ToyEncoder,
    pub temperature: Temperature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Loss over the fixed, unaugmented batch partition after this epoch.
    pub loss: f64,
    /// Mean loss of the optimizer's batches during this epoch.
    pub train_loss: f64,
    pub tau: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_loss, |e| e.loss)
    }

    /// Trailing moving average of the per-epoch loss.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        let losses: Vec<f64> = self.epochs.iter().map(|e| e.loss).collect();
        let w = window.max(1);
        (0..losses.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                losses[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect()
    }

    /// True when no smoothed value exceeds its predecessor by more than `tol`.
    pub fn is_non_increasing(&self, window: usize, tol: f64) -> bool {
        self.smoothed(window).windows(2).all(|p| p[1] <= p[0] + tol)
    }
}

/// Sequential batches of size `n`; a short tail joins the previous batch.
fn partition(order: &[usize], n: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(n).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < n) {
        let tail_start = (out.len() - 2) * n;
        out.truncate(out.len() - 2);
        out.push(&order[tail_start..]);
    }
    out
}

/// Loss of the encoders over the fixed batch partition of the data.
pub fn evaluate_loss(encoders: &ToyEncoders, data: &ToyDataset, batch_size: usize) -> Result<f64> {
    let zi = encoders.image.encode(data.image.view())?;
    let zt = encoders.text.encode(data.text.view())?;
    let order: Vec<usize> = (0..data.len()).collect();
    let batches = partition(&order, batch_size);
    let mut total = 0.0;
    for b in &batches {
        let a = zi.select(Axis(0), b);
        let t = zt.select(Axis(0), b);
        total += info_nce_loss_raw(a.view(), t.view(), encoders.temperature)?;
    }
    Ok(total / batches.len() as f64)
}

/// Backpropagate through row normalization `z = h / |h|`.
fn normalize_backward(z: &Array2<f64>, norms: &Array1<f64>, dz: &Array2<f64>) -> Array2<f64> {
    let mut dh = dz.clone();
    for (i, mut row) in dh.rows_mut().into_iter().enumerate() {
        let zr = z.row(i);
        let proj = zr.dot(&dz.row(i));
        row.scaled_add(-proj, &zr);
        row /= norms[i];
    }
    dh
}

/// Plain gradient descent on two linear towers and the log-temperature.
pub fn toy_train(data: &ToyDataset, config: &TrainConfig) -> Result<(ToyEncoders, TrainLog)> {
    data.validate()?;
    config.augmentation.validate()?;
    let m = data.len();
    if config.batch_size == 0 || config.batch_size > m {
        return Err(Error::Config(format!(
            "batch size {} must lie in 1..={m}",
            config.batch_size
        )));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::Config("learning rate must be finite and non-negative".into()));
    }
    if config.out_dim == 0 || !(config.init_tau > 0.0) {
        return Err(Error::Config("out_dim and init_tau must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d_img = data.image.ncols();
    let d_txt = data.text.ncols();
    let mut enc = ToyEncoders {
        image: ToyEncoder {
            weight: uniform_matrix(&mut rng, d_img, config.out_dim, (3.0 / d_img as f64).sqrt()),
        },
        text: ToyEncoder {
            weight: uniform_matrix(&mut rng, d_txt, config.out_dim, (3.0 / d_txt as f64).sqrt()),
        },
        temperature: Temperature::from_tau(config.init_tau).clamped(MIN_TAU),
    };

    let mut log = TrainLog {
        initial_loss: evaluate_loss(&enc, data, config.batch_size)?,
        epochs: Vec::with_capacity(config.epochs),
    };
    let steps_per_epoch = partition(&(0..m).collect::<Vec<_>>(), config.batch_size).len();
    let total_steps = steps_per_epoch * config.epochs;
    let mut step = 0;
    let mut order: Vec<usize> = (0..m).collect();

    for epoch in 0..config.epochs {
        if steps_per_epoch > 1 {
            order.shuffle(&mut rng);
        }
        let mut train_loss = 0.0;
        let mut lr = config.learning_rate;
        for batch in partition(&order, config.batch_size) {
            let mut x_img = data.image.select(Axis(0), batch);
            if !config.augmentation.is_identity() {
                for mut row in x_img.rows_mut() {
                    let aug = config.augmentation.apply(
                        row.as_slice().expect("standard layout"),
                        data.grid_side,
                        &mut rng,
                    );
                    row.assign(&Array1::from(aug));
                }
            }
            let x_txt = data.text.select(Axis(0), batch);

            let mut h_img = x_img.dot(&enc.image.weight);
            let mut h_txt = x_txt.dot(&enc.text.weight);
            let fail = |_| Error::TrainingFailure { step };
            let n_img = normalize_rows(&mut h_img).map_err(fail)?;
            let n_txt = normalize_rows(&mut h_txt).map_err(fail)?;
            let g = info_nce_raw(h_img.view(), h_txt.view(), enc.temperature)?;
            if !g.loss.is_finite() {
                return Err(Error::TrainingFailure { step });
            }
            train_loss += g.loss;

            lr = config.lr_at(step, total_steps);
            let dw_img = x_img.t().dot(&normalize_backward(&h_img, &n_img, &g.d_image));
            let dw_txt = x_txt.t().dot(&normalize_backward(&h_txt, &n_txt, &g.d_text));
            enc.image.weight.scaled_add(-lr, &dw_img);
            enc.text.weight.scaled_add(-lr, &dw_txt);
            if config.learn_temperature {
                enc.temperature = Temperature {
                    log_tau: enc.temperature.log_tau - lr * g.d_log_tau,
                }
                .clamped(MIN_TAU);
            }
            if enc.image.weight.iter().chain(enc.text.weight.iter()).any(|v| !v.is_finite()) {
                return Err(Error::TrainingFailure { step });
            }
            step += 1;
        }
        let loss = evaluate_loss(&enc, data, config.batch_size)
            .map_err(|_| Error::TrainingFailure { step })?;
        if !loss.is_finite() {
            return Err(Error::TrainingFailure { step });
        }
        log.epochs.push(EpochRecord {
            epoch: epoch + 1,
            loss,
            train_loss: train_loss / steps_per_epoch as f64,
            tau: enc.temperature.tau(),
            learning_rate: lr,
        });
    }
    Ok((enc, log))
}

/// Alignment and grouping diagnostics of trained towers on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub median_paired: f64,
    pub median_unpaired: f64,
    /// Mean image-image similarity within a class (excluding self-pairs).
    pub intra_class_image: f64,
    pub inter_class_image: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}

pub fn alignment_report(encoders: &ToyEncoders, data: &ToyDataset) -> Result<AlignmentReport> {
    let zi = encoders.image.encode(data.image.view())?;
    let zt = encoders.text.encode(data.text.view())?;
    let sim = zi.dot(&zt.t());
    let m = data.len();
    if m < 2 {
        return Err(Error::Config("alignment needs at least two pairs".into()));
    }
    let paired = (0..m).map(|i| sim[[i, i]]).collect();
    let unpaired = (0..m)
        .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| sim[[i, j]])
        .collect();

    let img_sim = zi.dot(&zi.t());
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            if data.labels[i] == data.labels[j] {
                intra += img_sim[[i, j]];
                n_intra += 1;
            } else {
                inter += img_sim[[i, j]];
                n_inter += 1;
            }
        }
    }
    Ok(AlignmentReport {
        median_paired: median(paired),
        median_unpaired: median(unpaired),
        intra_class_image: intra / n_intra.max(1) as f64,
        inter_class_image: inter / n_inter.max(1) as f64,
    })
}

/// Encode both modalities of a dataset into unit-norm embedding banks.
pub fn embed_dataset(
    encoders: &ToyEncoders,
    data: &ToyDataset,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let zi = encoders.image.encode(data.image.view())?;
    let zt = encoders.text.encode(data.text.view())?;
    Ok((from_array(&zi)?, from_array(&zt)?))
}
