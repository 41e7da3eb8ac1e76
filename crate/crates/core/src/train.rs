//! Losses, the ADAM optimizer, the training loop and the evaluation
//! harness.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::{cs_l1wavelet_solve, zero_filled, CsConfig};
use crate::diffmath::{ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::io::{csv_err, save_checkpoint, MetricsRow};
use crate::metrics::{self, weighted_average, SSIM_K1, SSIM_K2, SSIM_WINDOW};
use crate::mri_model::{ComplexImage, MaskKind};
use crate::nets::{clamp_recurrent, forward_graph, init_params, reconstruct, Measurement, ModelConfig, ModelKind, Session};
use crate::phantom::DatasetRecord;

/// Which end of the unrolled sequence the per-iteration loss weights favour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightOrientation {
    /// `w_τ = 10^{(τ−T)/(T−1)}`: the last estimate has weight 1.
    #[default]
    LaterHeavier,
    /// `w_τ = 10^{(T−τ)/(T−1)}`, kept for ablations.
    EarlierHeavier,
}

/// Per-iteration weights `w_1 … w_T`; a single iteration gets weight 1.
pub fn loss_weights(t: usize, orientation: WeightOrientation) -> Vec<f64> {
    if t == 1 {
        return vec![1.0];
    }
    let span = (t - 1) as f64;
    (1..=t)
        .map(|tau| {
            let e = match orientation {
                WeightOrientation::LaterHeavier => tau as f64 - t as f64,
                WeightOrientation::EarlierHeavier => t as f64 - tau as f64,
            };
            10f64.powf(e / span)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mean absolute magnitude error of the final estimate.
    L1,
    /// Iteration-weighted L1 over every estimate, averaged over cascades.
    Cirim,
    /// `1 − SSIM` of the final estimate.
    Ssim,
}

impl LossKind {
    /// Recurrent models train on the weighted sequence loss, the variational
    /// network on L1; line (1D) undersampling switches either to SSIM.
    pub fn for_model(config: &ModelConfig, mask: MaskKind) -> Self {
        if mask == MaskKind::Equidistant1d {
            return LossKind::Ssim;
        }
        match config.kind {
            ModelKind::Varnet => LossKind::L1,
            _ => LossKind::Cirim,
        }
    }
}

fn magnitude_const(tape: &mut Tape, x_ref: &ComplexImage) -> Result<Var> {
    let t = Tensor::new(vec![x_ref.height, x_ref.width], x_ref.magnitude())?;
    Ok(tape.constant(t))
}

/// `mean | |x̂| − r |` with `r` a real `[h,w]` node.
pub fn l1_loss_var(tape: &mut Tape, x_hat: Var, r: Var) -> Result<Var> {
    let m = tape.cabs(x_hat)?;
    let d = tape.sub(m, r)?;
    let a = tape.abs(d)?;
    tape.mean(a)
}

/// `1 − SSIM(|x̂|, r)` with the same windows and constants as
/// [`metrics::ssim`]; `range` is `max(r)`.
pub fn ssim_loss_var(tape: &mut Tape, x_hat: Var, r: Var, range: f64) -> Result<Var> {
    let (h, w) = match tape.shape(r) {
        [h, w] => (*h, *w),
        s => return Err(Error::Shape(format!("reference must be [h,w], got {s:?}"))),
    };
    if !(range > 0.0) {
        return Err(Error::Degenerate("reference has no positive maximum".into()));
    }
    let k = SSIM_WINDOW;
    let n = (k * k) as f64;
    let cov = n / (n - 1.0);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);

    let m = tape.cabs(x_hat)?;
    let x = tape.reshape(m, &[1, h, w])?;
    let y = tape.reshape(r, &[1, h, w])?;
    let mx = tape.box_mean(x, k)?;
    let my = tape.box_mean(y, k)?;
    let xx = tape.square(x)?;
    let yy = tape.square(y)?;
    let xy = tape.mul(x, y)?;
    let bxx = tape.box_mean(xx, k)?;
    let byy = tape.box_mean(yy, k)?;
    let bxy = tape.box_mean(xy, k)?;
    let mx2 = tape.square(mx)?;
    let my2 = tape.square(my)?;
    let mxy = tape.mul(mx, my)?;

    let vx = tape.sub(bxx, mx2)?;
    let vx = tape.scale(vx, cov)?;
    let vy = tape.sub(byy, my2)?;
    let vy = tape.scale(vy, cov)?;
    let vxy = tape.sub(bxy, mxy)?;
    let vxy = tape.scale(vxy, cov)?;

    let a = tape.scale(mxy, 2.0)?;
    let a = tape.add_scalar(a, c1)?;
    let b = tape.scale(vxy, 2.0)?;
    let b = tape.add_scalar(b, c2)?;
    let num = tape.mul(a, b)?;
    let c = tape.add(mx2, my2)?;
    let c = tape.add_scalar(c, c1)?;
    let d = tape.add(vx, vy)?;
    let d = tape.add_scalar(d, c2)?;
    let den = tape.mul(c, d)?;
    let map = tape.div(num, den)?;
    let s = tape.mean(map)?;
    let neg = tape.scale(s, -1.0)?;
    tape.add_scalar(neg, 1.0)
}

/// Per cascade `Σ_τ w_τ · L1(x̂_τ)`, averaged over cascades.
pub fn cirim_loss_var(tape: &mut Tape, estimates: &[Vec<Var>], r: Var, orientation: WeightOrientation) -> Result<Var> {
    if estimates.is_empty() || estimates.iter().any(Vec::is_empty) {
        return Err(Error::Contract("missing estimates".into()));
    }
    let mut per_cascade = Vec::with_capacity(estimates.len());
    for cascade in estimates {
        let weights = loss_weights(cascade.len(), orientation);
        let mut acc: Option<Var> = None;
        for (&x, &wt) in cascade.iter().zip(&weights) {
            let l = l1_loss_var(tape, x, r)?;
            let l = tape.scale(l, wt)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, l)?,
                None => l,
            });
        }
        per_cascade.push(acc.expect("non-empty cascade"));
    }
    let mut total = per_cascade[0];
    for &v in &per_cascade[1..] {
        total = tape.add(total, v)?;
    }
    tape.scale(total, 1.0 / estimates.len() as f64)
}

fn check_same(a: &ComplexImage, b: &ComplexImage) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

pub fn l1_loss(x_hat: &ComplexImage, x_ref: &ComplexImage) -> Result<f64> {
    check_same(x_hat, x_ref)?;
    let mut tape = Tape::new();
    let x = tape.constant_complex(x_hat.to_tensor());
    let r = magnitude_const(&mut tape, x_ref)?;
    let l = l1_loss_var(&mut tape, x, r)?;
    Ok(tape.real(l)?.item())
}

pub fn ssim_loss(x_hat: &ComplexImage, x_ref: &ComplexImage) -> Result<f64> {
    check_same(x_hat, x_ref)?;
    let mut tape = Tape::new();
    let x = tape.constant_complex(x_hat.to_tensor());
    let r = magnitude_const(&mut tape, x_ref)?;
    let l = ssim_loss_var(&mut tape, x, r, x_ref.max_magnitude())?;
    Ok(tape.real(l)?.item())
}

/// Weighted sequence loss over `cascades` blocks of `iterations` estimates
/// each.
pub fn cirim_loss(
    estimates: &[Vec<ComplexImage>],
    x_ref: &ComplexImage,
    iterations: usize,
    cascades: usize,
    orientation: WeightOrientation,
) -> Result<f64> {
    if estimates.len() != cascades || estimates.iter().any(|c| c.len() != iterations) {
        return Err(Error::Contract(format!(
            "missing estimates: expected {cascades}x{iterations}"
        )));
    }
    let mut tape = Tape::new();
    let r = magnitude_const(&mut tape, x_ref)?;
    let mut vars = Vec::with_capacity(cascades);
    for c in estimates {
        let mut row = Vec::with_capacity(iterations);
        for x in c {
            check_same(x, x_ref)?;
            row.push(tape.constant_complex(x.to_tensor()));
        }
        vars.push(row);
    }
    let l = cirim_loss_var(&mut tape, &vars, r, orientation)?;
    Ok(tape.real(l)?.item())
}

fn loss_on_tape(
    tape: &mut Tape,
    kind: LossKind,
    estimates: &[Vec<Var>],
    x_ref: &ComplexImage,
    orientation: WeightOrientation,
) -> Result<Var> {
    let r = magnitude_const(tape, x_ref)?;
    let last = *estimates
        .last()
        .and_then(|c| c.last())
        .ok_or_else(|| Error::Contract("missing estimates".into()))?;
    match kind {
        LossKind::L1 => l1_loss_var(tape, last, r),
        LossKind::Ssim => ssim_loss_var(tape, last, r, x_ref.max_magnitude()),
        LossKind::Cirim => cirim_loss_var(tape, estimates, r, orientation),
    }
}

fn loss_on_images(
    kind: LossKind,
    estimates: &[Vec<ComplexImage>],
    x_ref: &ComplexImage,
    orientation: WeightOrientation,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Vec<Var>> = estimates
        .iter()
        .map(|c| c.iter().map(|x| tape.constant_complex(x.to_tensor())).collect())
        .collect();
    let l = loss_on_tape(&mut tape, kind, &vars, x_ref, orientation)?;
    Ok(tape.real(l)?.item())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected ADAM update from the gradients held in `params`.
pub fn adam_step(params: &mut ParameterStore, cfg: &AdamConfig) -> Result<()> {
    for (name, e) in params.iter() {
        if !e.grad.is_finite() {
            return Err(Error::Contract(format!("non-finite gradient for '{name}'")));
        }
    }
    params.step += 1;
    let t = params.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (_, e) in params.iter_mut() {
        let g = e.grad.data();
        let m = e.moment1.data_mut();
        for (m, &g) in m.iter_mut().zip(g) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        }
        let v = e.moment2.data_mut();
        for (v, &g) in v.iter_mut().zip(g) {
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        }
        let (m, v) = (e.moment1.data(), e.moment2.data());
        for ((p, &m), &v) in e.value.data_mut().iter_mut().zip(m).zip(v) {
            *p -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Seeds parameter initialization and the per-epoch sample order.
    pub seed: u64,
    pub adam: AdamConfig,
    /// `None` picks [`LossKind::for_model`] per record.
    pub loss: Option<LossKind>,
    pub weight_orientation: WeightOrientation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            seed: 0,
            adam: AdamConfig::default(),
            loss: None,
            weight_orientation: WeightOrientation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub ssim: f64,
}

pub fn write_training_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    wr.write_record(["epoch", "split", "loss", "ssim"]).map_err(csv_err)?;
    for r in rows {
        wr.serialize(r).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss (the initial
    /// parameters if no epoch ran).
    pub best: ParameterStore,
    /// Parameters after the last update.
    pub last: ParameterStore,
    pub best_epoch: Option<usize>,
    pub log: Vec<LogRow>,
}

/// Where [`train`] writes its artifacts; either may be omitted.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOutputs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub log: Option<&'a Path>,
}

fn ssim_of(x: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    metrics::ssim(
        &metrics::normalized_magnitude(x),
        &metrics::normalized_magnitude(reference),
        x.height,
        x.width,
    )
}

fn record_loss_kind(tc: &TrainConfig, config: &ModelConfig, rec: &DatasetRecord) -> LossKind {
    tc.loss.unwrap_or_else(|| LossKind::for_model(config, rec.mask.kind))
}

/// Forward, loss and backward on one record; gradients land in `params`.
/// Returns `(loss, ssim of the final estimate)`.
fn train_sample(
    config: &ModelConfig,
    tc: &TrainConfig,
    params: &mut ParameterStore,
    rec: &DatasetRecord,
) -> Result<(f64, f64)> {
    let m = Measurement::new(&rec.kspace, &rec.maps, &rec.mask)?;
    let kind = record_loss_kind(tc, config, rec);
    let (tape, loss_var, out) = {
        let mut s = Session::recording(params);
        let g = forward_graph(&mut s, config, &m)?;
        let out = ComplexImage::from_tensor(s.complex(g.output())?.clone())?;
        let mut tape = s.into_tape();
        let l = loss_on_tape(&mut tape, kind, &g.estimates, &rec.reference, tc.weight_orientation)?;
        (tape, l, out)
    };
    let loss = tape.real(loss_var)?.item();
    if !loss.is_finite() {
        return Ok((loss, f64::NAN));
    }
    params.zero_grad();
    tape.backward(loss_var, params)?;
    Ok((loss, ssim_of(&out, &rec.reference)?))
}

/// Mean validation `(loss, ssim)` with inference-mode forward passes.
pub fn validate(
    config: &ModelConfig,
    tc: &TrainConfig,
    params: &ParameterStore,
    records: &[DatasetRecord],
) -> Result<(f64, f64)> {
    let per: Vec<(f64, f64)> = records
        .par_iter()
        .map(|rec| {
            let r = reconstruct(config, params, &rec.kspace, &rec.maps, &rec.mask)?;
            let kind = record_loss_kind(tc, config, rec);
            let loss = loss_on_images(kind, &r.estimates, &rec.reference, tc.weight_orientation)?;
            Ok((loss, ssim_of(&r.image, &rec.reference)?))
        })
        .collect::<Result<_>>()?;
    let n = per.len().max(1) as f64;
    Ok((
        per.iter().map(|p| p.0).sum::<f64>() / n,
        per.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

/// Batch-size-1 training with ADAM. The checkpoint is written before the
/// first epoch and rewritten whenever the validation loss improves (the
/// training loss when `val` is empty). A non-finite loss or gradient stops
/// training with [`Error::TrainingDiverged`]; the last good checkpoint and
/// the log so far stay on disk.
pub fn train(
    config: &ModelConfig,
    tc: &TrainConfig,
    train_set: &[DatasetRecord],
    val: &[DatasetRecord],
    outputs: TrainOutputs,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one record".into()));
    }
    let mut params = init_params(config, tc.seed)?;
    let save = |params: &ParameterStore, epoch: Option<usize>, val_loss: Option<f64>| -> Result<()> {
        match outputs.checkpoint {
            Some(p) => save_checkpoint(
                p,
                config,
                params,
                json!({ "epoch": epoch, "val_loss": val_loss, "train": tc }),
            ),
            None => Ok(()),
        }
    };
    let write_log = |rows: &[LogRow]| -> Result<()> {
        match outputs.log {
            Some(p) => write_training_log(p, rows),
            None => Ok(()),
        }
    };
    save(&params, None, None)?;
    write_log(&[])?;

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x6f72_6465_72ab_cdef);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = None;
    let mut log = Vec::new();
    let mut step = 0usize;

    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut ssim_sum) = (0.0, 0.0);
        for &i in &order {
            let diverged = || Error::TrainingDiverged { epoch, step };
            let (loss, ssim) = match train_sample(config, tc, &mut params, &train_set[i]) {
                Ok(v) => v,
                Err(Error::Diverged { .. }) => {
                    write_log(&log)?;
                    return Err(diverged());
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || adam_step(&mut params, &tc.adam).is_err() {
                write_log(&log)?;
                return Err(diverged());
            }
            clamp_recurrent(&mut params);
            loss_sum += loss;
            ssim_sum += ssim;
            step += 1;
        }
        let n = train_set.len() as f64;
        let (train_loss, train_ssim) = (loss_sum / n, ssim_sum / n);
        log.push(LogRow {
            epoch,
            split: "train".into(),
            loss: train_loss,
            ssim: train_ssim,
        });
        let selection = if val.is_empty() {
            train_loss
        } else {
            let (vl, vs) = validate(config, tc, &params, val)?;
            log.push(LogRow {
                epoch,
                split: "val".into(),
                loss: vl,
                ssim: vs,
            });
            vl
        };
        if !selection.is_finite() {
            write_log(&log)?;
            return Err(Error::TrainingDiverged { epoch, step });
        }
        if selection < best_loss {
            best_loss = selection;
            best_epoch = Some(epoch);
            best = params.clone();
            save(&best, best_epoch, Some(selection))?;
        }
        write_log(&log)?;
    }
    Ok(TrainOutcome {
        best,
        last: params,
        best_epoch,
        log,
    })
}

/// A reconstruction method under evaluation.
#[derive(Debug, Clone)]
pub enum Method {
    /// The fully sampled reference itself.
    Reference,
    ZeroFilled,
    Cs(CsConfig),
    Model {
        name: String,
        config: ModelConfig,
        params: ParameterStore,
    },
}

impl Method {
    pub fn name(&self) -> &str {
        match self {
            Method::Reference => "reference",
            Method::ZeroFilled => "zerofill",
            Method::Cs(_) => "cs",
            Method::Model { name, .. } => name,
        }
    }

    pub fn reconstruct(&self, rec: &DatasetRecord) -> Result<ComplexImage> {
        match self {
            Method::Reference => Ok(rec.reference.clone()),
            Method::ZeroFilled => zero_filled(&rec.kspace, &rec.maps, &rec.mask),
            Method::Cs(c) => Ok(cs_l1wavelet_solve(&rec.kspace, &rec.maps, &rec.mask, c)?.image),
            Method::Model { config, params, .. } => {
                Ok(reconstruct(config, params, &rec.kspace, &rec.maps, &rec.mask)?.image)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub dataset: String,
    /// Record wall-clock milliseconds per reconstruction. Off, the
    /// `wall_ms` column stays empty and the report is reproducible byte for
    /// byte.
    pub timing: bool,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// One row per record and method, record-major.
    pub rows: Vec<MetricsRow>,
    /// One row per method (id `mean`) with metrics averaged over records
    /// and WA recomputed across the methods' means.
    pub summary: Vec<MetricsRow>,
}

impl Evaluation {
    pub fn all_rows(&self) -> Vec<MetricsRow> {
        self.rows.iter().chain(&self.summary).cloned().collect()
    }

    pub fn summary_for(&self, method: &str) -> Option<&MetricsRow> {
        self.summary.iter().find(|r| r.method == method)
    }
}

/// Fill `wa` across a cohort of rows where every member has CR, WMN and BGN.
fn fill_wa(rows: &mut [MetricsRow]) {
    let triples: Option<Vec<(f64, f64, f64)>> = rows
        .iter()
        .map(|r| Some((r.cr?, r.wmn?, r.bgn?)))
        .collect();
    let wa = triples.and_then(|t| weighted_average(&t).ok());
    for (i, r) in rows.iter_mut().enumerate() {
        r.wa = wa.as_ref().map(|w| w[i]);
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Reconstruct every record with every method and score it. The
/// zero-filled baseline is always part of the cohort, as the first method.
/// Records are processed in parallel on the current rayon pool.
pub fn evaluate(methods: &[Method], records: &[DatasetRecord], opts: &EvalOptions) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one record".into()));
    }
    let mut cohort: Vec<&Method> = Vec::with_capacity(methods.len() + 1);
    if !methods.iter().any(|m| matches!(m, Method::ZeroFilled)) {
        cohort.push(&Method::ZeroFilled);
    }
    cohort.extend(methods);
    for m in &cohort {
        if let Method::Model { config, .. } = m {
            config.validate()?;
        }
    }

    let per_record: Vec<Vec<MetricsRow>> = records
        .par_iter()
        .map(|rec| {
            let reference = metrics::normalized_magnitude(&rec.reference);
            let mut rows = Vec::with_capacity(cohort.len());
            for m in &cohort {
                let start = Instant::now();
                let img = m.reconstruct(rec)?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                let r = metrics::report(&metrics::normalized_magnitude(&img), &reference, &rec.lesion_mask, &rec.wm_mask, &rec.kspace)?;
                rows.push(MetricsRow::new(
                    &rec.meta.id,
                    m.name(),
                    &opts.dataset,
                    rec.meta.acceleration,
                    &r,
                    opts.timing.then_some(ms),
                ));
            }
            fill_wa(&mut rows);
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let acc = records.iter().map(|r| r.meta.acceleration).sum::<f64>() / records.len() as f64;
    let mut summary: Vec<MetricsRow> = (0..cohort.len())
        .map(|j| {
            let col = || per_record.iter().map(move |rows| &rows[j]);
            let n = per_record.len() as f64;
            MetricsRow {
                id: "mean".into(),
                method: cohort[j].name().to_string(),
                dataset: opts.dataset.clone(),
                acc,
                ssim: col().map(|r| r.ssim).sum::<f64>() / n,
                psnr_db: col().map(|r| r.psnr_db).sum::<f64>() / n,
                cr: mean_of(col().map(|r| r.cr)),
                wmn: mean_of(col().map(|r| r.wmn)),
                bgn: mean_of(col().map(|r| r.bgn)),
                wa: None,
                snr: mean_of(col().map(|r| r.snr)),
                wall_ms: mean_of(col().map(|r| r.wall_ms)),
            }
        })
        .collect();
    fill_wa(&mut summary);
    Ok(Evaluation {
        rows: per_record.into_iter().flatten().collect(),
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn image(h: usize, w: usize, f: impl Fn(usize) -> Complex64) -> ComplexImage {
        ComplexImage::new(h, w, (0..h * w).map(f).collect()).unwrap()
    }

    #[test]
    fn weights_for_eight_iterations() {
        let w = loss_weights(8, WeightOrientation::LaterHeavier);
        assert!((w[0] - 0.1).abs() < 1e-15);
        assert_eq!(w[7], 1.0);
        let e = loss_weights(8, WeightOrientation::EarlierHeavier);
        for (a, b) in e.iter().zip(w.iter().rev()) {
            assert!((a - 10.0 * b).abs() < 1e-12);
        }
        assert_eq!(loss_weights(1, WeightOrientation::LaterHeavier), vec![1.0]);
    }

    #[test]
    fn l1_of_constant_offset() {
        let x = image(8, 8, |i| Complex64::new(0.0, (i % 5) as f64 * 0.1));
        let y = image(8, 8, |i| Complex64::new(0.0, (i % 5) as f64 * 0.1 + 0.1));
        assert!((l1_loss(&y, &x).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(l1_loss(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn ssim_loss_matches_metric() {
        let x = image(12, 10, |i| Complex64::new(((i * 7) % 11) as f64, 1.0));
        let y = image(12, 10, |i| Complex64::new(((i * 3) % 13) as f64, 0.0));
        let m = metrics::ssim(&x.magnitude(), &y.magnitude(), 12, 10).unwrap();
        assert!((ssim_loss(&x, &y).unwrap() - (1.0 - m)).abs() < 1e-12);
        assert!(ssim_loss(&y, &y).unwrap().abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = ParameterStore::new();
        p.insert("a", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        let before = p.flatten();
        adam_step(&mut p, &AdamConfig::default()).unwrap();
        assert_eq!(p.flatten(), before);
    }
}
