//! Reconstruction networks: RIM cells with GRU or IndRNN units, the
//! cascaded CIRIM with optional explicit data consistency, and a
//! variational-network cascade with a small UNet regularizer.

mod rim;
mod session;
mod unet;

use std::collections::HashMap;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

pub use session::{Measurement, Session};

use crate::diffmath::{CTensor, ParameterStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::mri_model::{adjoint_op, ComplexImage, MultiCoilKSpace, SamplingMask, SensitivityMaps};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Gru,
    Indrnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RimCellConfig {
    pub channels: usize,
    pub kernels: [usize; 3],
    pub dilations: [usize; 3],
    pub unit: UnitKind,
    /// Unrolled iterations `T` per block.
    pub iterations: usize,
}

impl Default for RimCellConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            kernels: [5, 3, 3],
            dilations: [1, 1, 1],
            unit: UnitKind::Indrnn,
            iterations: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub n_cascades: usize,
    pub explicit_dc: bool,
    pub dc_weight_init: f64,
    pub share_params: bool,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            n_cascades: 5,
            explicit_dc: false,
            dc_weight_init: 1.0,
            share_params: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnetConfig {
    pub pools: usize,
    pub channels: usize,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self { pools: 4, channels: 18 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cirim,
    Rim,
    Irim,
    Varnet,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cirim => "cirim",
            ModelKind::Rim => "rim",
            ModelKind::Irim => "irim",
            ModelKind::Varnet => "varnet",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cirim" => Ok(ModelKind::Cirim),
            "rim" => Ok(ModelKind::Rim),
            "irim" => Ok(ModelKind::Irim),
            "varnet" => Ok(ModelKind::Varnet),
            other => Err(Error::InvalidArgument(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub rim: RimCellConfig,
    pub cascade: CascadeConfig,
    pub unet: UnetConfig,
}

impl ModelConfig {
    /// Full-size configuration of each model family.
    pub fn full(kind: ModelKind) -> Self {
        let mut c = Self {
            kind,
            rim: RimCellConfig::default(),
            cascade: CascadeConfig::default(),
            unet: UnetConfig::default(),
        };
        match kind {
            ModelKind::Cirim => {}
            ModelKind::Rim => {
                c.rim.unit = UnitKind::Gru;
                c.cascade.n_cascades = 1;
            }
            ModelKind::Irim => c.cascade.n_cascades = 1,
            ModelKind::Varnet => {
                c.cascade.n_cascades = 8;
                c.cascade.explicit_dc = true;
            }
        }
        c
    }

    /// Small configurations that train in minutes on one CPU core. CIRIM
    /// (two 16-channel IndRNN cascades) and RIM (one 19-channel GRU block)
    /// have nearly equal parameter counts.
    pub fn desk(kind: ModelKind) -> Self {
        let mut c = Self::full(kind);
        c.rim.iterations = 4;
        match kind {
            ModelKind::Cirim => {
                c.rim.channels = 16;
                c.cascade.n_cascades = 2;
            }
            ModelKind::Rim => c.rim.channels = 19,
            ModelKind::Irim => c.rim.channels = 16,
            ModelKind::Varnet => {
                c.cascade.n_cascades = 4;
                c.unet = UnetConfig { pools: 2, channels: 8 };
            }
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.cascade.n_cascades == 0 {
            return Err(Error::InvalidArgument("at least one cascade is required".into()));
        }
        if self.kind == ModelKind::Varnet {
            if self.unet.channels == 0 {
                return Err(Error::InvalidArgument("UNet needs at least one channel".into()));
            }
        } else {
            if self.rim.iterations == 0 {
                return Err(Error::InvalidArgument("RIM needs at least one iteration".into()));
            }
            if self.rim.channels == 0 {
                return Err(Error::InvalidArgument("RIM needs at least one channel".into()));
            }
            if self.rim.dilations.contains(&0) {
                return Err(Error::InvalidArgument("dilations must be >= 1".into()));
            }
            if self.rim.kernels.iter().any(|k| k % 2 == 0) {
                return Err(Error::InvalidArgument(format!(
                    "kernel sizes must be odd, got {:?}",
                    self.rim.kernels
                )));
            }
        }
        if !self.cascade.dc_weight_init.is_finite() {
            return Err(Error::InvalidArgument("DC weight must be finite".into()));
        }
        Ok(())
    }

    /// Parameter names and shapes, in no particular order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let blocks = if self.cascade.share_params { 1 } else { self.cascade.n_cascades };
        for k in 0..blocks {
            let prefix = rim::cascade_prefix(&self.cascade, k);
            match self.kind {
                ModelKind::Varnet => unet_shapes(&self.unet, &prefix, &mut out),
                _ => rim_shapes(&self.rim, &prefix, &mut out),
            }
        }
        if self.cascade.explicit_dc {
            for k in 0..self.cascade.n_cascades {
                out.push((format!("cascade{k}.dc"), vec![1]));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

fn conv_shapes(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, c_in: usize, c_out: usize, k: usize) {
    out.push((format!("{prefix}.weight"), vec![c_out, c_in, k, k]));
    out.push((format!("{prefix}.bias"), vec![c_out]));
}

fn rim_shapes(cell: &RimCellConfig, prefix: &str, out: &mut Vec<(String, Vec<usize>)>) {
    let c = cell.channels;
    let [k0, k1, k2] = cell.kernels;
    conv_shapes(out, &format!("{prefix}.conv0"), 4, c, k0);
    conv_shapes(out, &format!("{prefix}.conv1"), c, c, k1);
    conv_shapes(out, &format!("{prefix}.conv2"), c, 2, k2);
    for u in 0..2 {
        let p = format!("{prefix}.unit{u}");
        match cell.unit {
            UnitKind::Gru => {
                for g in ["r", "z", "s"] {
                    out.push((format!("{p}.w_{g}"), vec![c, 2 * c, 1, 1]));
                    out.push((format!("{p}.b_{g}"), vec![c]));
                }
            }
            UnitKind::Indrnn => {
                out.push((format!("{p}.w"), vec![c, c, 1, 1]));
                out.push((format!("{p}.b"), vec![c]));
                out.push((format!("{p}.u"), vec![c]));
            }
        }
    }
}

fn unet_shapes(cfg: &UnetConfig, prefix: &str, out: &mut Vec<(String, Vec<usize>)>) {
    let ch = unet::level_channels(cfg);
    let mut c_in = 2;
    for l in 0..cfg.pools {
        conv_shapes(out, &format!("{prefix}.enc{l}"), c_in, ch[l], 3);
        c_in = ch[l];
    }
    conv_shapes(out, &format!("{prefix}.bottom"), c_in, ch[cfg.pools], 3);
    for l in (0..cfg.pools).rev() {
        conv_shapes(out, &format!("{prefix}.up{l}"), ch[l + 1], ch[l], 3);
        conv_shapes(out, &format!("{prefix}.dec{l}"), 2 * ch[l], ch[l], 3);
    }
    conv_shapes(out, &format!("{prefix}.out"), ch[0], 2, 1);
}

/// Random initialization following the usual deep-learning defaults:
/// convolution weights and biases uniform in `±1/√fan_in`, IndRNN recurrent
/// weights uniform in [0, 1], DC weights at `dc_weight_init`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParameterStore> {
    config.validate()?;
    let mut shapes = config.parameter_shapes();
    shapes.sort();
    let fan_in: HashMap<String, usize> = shapes
        .iter()
        .filter(|(_, s)| s.len() == 4)
        .map(|(n, s)| (n.clone(), s[1] * s[2] * s[3]))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = if name.ends_with(".dc") {
            vec![config.cascade.dc_weight_init]
        } else if name.ends_with(".u") {
            uniform(&mut rng, 0.0, 1.0, n)?
        } else {
            let fan = fan_in
                .get(&name)
                .or_else(|| fan_in.get(&weight_of(&name)))
                .copied()
                .ok_or_else(|| Error::Contract(format!("no weight for parameter '{name}'")))?;
            let bound = 1.0 / (fan as f64).sqrt();
            uniform(&mut rng, -bound, bound, n)?
        };
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

/// Name of the weight a bias belongs to.
fn weight_of(bias: &str) -> String {
    if let Some(p) = bias.strip_suffix(".bias") {
        format!("{p}.weight")
    } else if let Some(p) = bias.strip_suffix(".b") {
        format!("{p}.w")
    } else if let Some((p, gate)) = bias.rsplit_once(".b_") {
        format!("{p}.w_{gate}")
    } else {
        bias.to_string()
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    let dist = Uniform::new(lo, hi).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// All-zero parameters of the right shapes.
pub fn zero_params(config: &ModelConfig) -> Result<ParameterStore> {
    config.validate()?;
    let mut store = ParameterStore::new();
    for (name, shape) in config.parameter_shapes() {
        store.insert(name, Tensor::zeros(&shape))?;
    }
    Ok(store)
}

/// Clamp IndRNN recurrent weights to `[-1, 1]`.
pub fn clamp_recurrent(store: &mut ParameterStore) {
    for (name, e) in store.iter_mut() {
        if name.ends_with(".u") {
            e.value.data_mut().iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        }
    }
}

/// Everything an unrolled reconstruction produced.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: ComplexImage,
    /// Per cascade, per internal iteration (a single entry per cascade for
    /// the variational network).
    pub estimates: Vec<Vec<ComplexImage>>,
}

/// Graph nodes of an unrolled forward pass in a recording session.
pub struct ForwardGraph {
    pub estimates: Vec<Vec<Var>>,
    pub images: Vec<Vec<CTensor>>,
}

impl ForwardGraph {
    pub fn output(&self) -> Var {
        *self.estimates.last().and_then(|c| c.last()).expect("at least one estimate")
    }
}

/// Run `config`'s network from `x₀ = A*(y)` inside `s`.
pub fn forward_graph(s: &mut Session, config: &ModelConfig, m: &Measurement) -> Result<ForwardGraph> {
    config.validate()?;
    let x0 = zero_filled_tensor(m)?;
    let x0 = s.tape().constant_complex(x0);
    match config.kind {
        ModelKind::Varnet => {
            let (vars, images) = unet::varnet(s, &config.unet, &config.cascade, x0, m)?;
            Ok(ForwardGraph {
                estimates: vars.into_iter().map(|v| vec![v]).collect(),
                images: images.into_iter().map(|v| vec![v]).collect(),
            })
        }
        _ => {
            let u = rim::cirim(s, &config.rim, &config.cascade, x0, m)?;
            Ok(ForwardGraph {
                estimates: u.estimates,
                images: u.images,
            })
        }
    }
}

fn zero_filled_tensor(m: &Measurement) -> Result<CTensor> {
    use crate::diffmath::tape::{mask_kernel, reduce_kernel};
    let mut coils = mask_kernel(&m.y, &m.mask)?;
    crate::diffmath::fft::fft2c_slices(coils.data_mut(), m.height, m.width, true);
    reduce_kernel(&coils, &m.maps)
}

fn to_images(t: Vec<Vec<CTensor>>) -> Result<Vec<Vec<ComplexImage>>> {
    t.into_iter()
        .map(|c| c.into_iter().map(ComplexImage::from_tensor).collect())
        .collect()
}

/// Inference for any model kind with bounded memory.
pub fn reconstruct(
    config: &ModelConfig,
    params: &ParameterStore,
    y: &MultiCoilKSpace,
    maps: &SensitivityMaps,
    mask: &SamplingMask,
) -> Result<Reconstruction> {
    let m = Measurement::new(y, maps, mask)?;
    let mut s = Session::streaming(params);
    let g = forward_graph(&mut s, config, &m)?;
    let estimates = to_images(g.images)?;
    let image = estimates
        .last()
        .and_then(|c| c.last())
        .cloned()
        .ok_or_else(|| Error::Contract("network produced no estimate".into()))?;
    Ok(Reconstruction { image, estimates })
}

/// `A*(A x − y)`.
pub fn loglik_gradient(
    x: &ComplexImage,
    y: &MultiCoilKSpace,
    maps: &SensitivityMaps,
    mask: &SamplingMask,
) -> Result<ComplexImage> {
    maps.check_image(x.height, x.width)?;
    let m = Measurement::new(y, maps, mask)?;
    let store = ParameterStore::new();
    let mut s = Session::recording(&store);
    let xv = s.tape().constant_complex(x.to_tensor());
    let g = s.loglik_gradient(xv, &m)?;
    ComplexImage::from_tensor(s.complex(g)?.clone())
}

/// GRU weights: three 1×1 convolutions `[c, 2c, 1, 1]` with biases `[c]`.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_r: Tensor,
    pub b_r: Tensor,
    pub w_z: Tensor,
    pub b_z: Tensor,
    pub w_s: Tensor,
    pub b_s: Tensor,
}

impl GruParams {
    pub fn zeros(c: usize) -> Self {
        let w = Tensor::zeros(&[c, 2 * c, 1, 1]);
        let b = Tensor::zeros(&[c]);
        Self {
            w_r: w.clone(),
            b_r: b.clone(),
            w_z: w.clone(),
            b_z: b.clone(),
            w_s: w,
            b_s: b,
        }
    }
}

/// IndRNN weights: input 1×1 convolution `w [c, c_in, 1, 1]`, bias `[c]`
/// and recurrent weights `u [c]`.
#[derive(Debug, Clone)]
pub struct IndRnnParams {
    pub w: Tensor,
    pub b: Tensor,
    pub u: Tensor,
}

/// One GRU update on `[c,h,w]` input and hidden state.
pub fn gru_step(input: &Tensor, s_prev: &Tensor, p: &GruParams) -> Result<Tensor> {
    let mut store = ParameterStore::new();
    for (n, t) in [
        ("g.w_r", &p.w_r),
        ("g.b_r", &p.b_r),
        ("g.w_z", &p.w_z),
        ("g.b_z", &p.b_z),
        ("g.w_s", &p.w_s),
        ("g.b_s", &p.b_s),
    ] {
        store.insert(n, t.clone())?;
    }
    let mut s = Session::recording(&store);
    let x = s.tape().constant(input.clone());
    let h = s.tape().constant(s_prev.clone());
    let out = rim::gru(&mut s, "g", x, h)?;
    Ok(s.real(out)?.clone())
}

/// One IndRNN update `ReLU(W x + u⊙s_prev + b)`.
pub fn indrnn_step(input: &Tensor, s_prev: &Tensor, p: &IndRnnParams) -> Result<Tensor> {
    let mut store = ParameterStore::new();
    store.insert("i.w", p.w.clone())?;
    store.insert("i.b", p.b.clone())?;
    store.insert("i.u", p.u.clone())?;
    let mut s = Session::recording(&store);
    let x = s.tape().constant(input.clone());
    let h = s.tape().constant(s_prev.clone());
    let out = rim::indrnn(&mut s, "i", x, h)?;
    Ok(s.real(out)?.clone())
}

/// Hidden states of a RIM block, each `[channels, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RimHiddenState {
    pub s0: Tensor,
    pub s1: Tensor,
}

impl RimHiddenState {
    pub fn zeros(channels: usize, h: usize, w: usize) -> Self {
        Self {
            s0: Tensor::zeros(&[channels, h, w]),
            s1: Tensor::zeros(&[channels, h, w]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RimBlockOutput {
    pub image: ComplexImage,
    /// Estimate after each of the `T` iterations.
    pub estimates: Vec<ComplexImage>,
    pub hidden: RimHiddenState,
}

/// Run one RIM block of `T` iterations. `params` must hold the block's
/// weights under `prefix` (e.g. `cascade0`); a missing `hidden` starts from
/// zeros.
#[allow(clippy::too_many_arguments)]
pub fn rim_block(
    x_in: &ComplexImage,
    hidden: Option<&RimHiddenState>,
    y: &MultiCoilKSpace,
    maps: &SensitivityMaps,
    mask: &SamplingMask,
    cell: &RimCellConfig,
    params: &ParameterStore,
    prefix: &str,
) -> Result<RimBlockOutput> {
    maps.check_image(x_in.height, x_in.width)?;
    let m = Measurement::new(y, maps, mask)?;
    let mut s = Session::streaming(params);
    let x = s.tape().constant_complex(x_in.to_tensor());
    let h = hidden.map(|h| [s.tape().constant(h.s0.clone()), s.tape().constant(h.s1.clone())]);
    let out = rim::rim_block(&mut s, cell, prefix, x, h, &m, 0)?;
    Ok(RimBlockOutput {
        image: ComplexImage::from_tensor(s.complex(out.x)?.clone())?,
        estimates: out.images.into_iter().map(ComplexImage::from_tensor).collect::<Result<_>>()?,
        hidden: RimHiddenState {
            s0: s.real(out.hidden[0])?.clone(),
            s1: s.real(out.hidden[1])?.clone(),
        },
    })
}

/// Cascaded RIM from `x₀ = A*(y)`.
pub fn cirim_forward(
    y: &MultiCoilKSpace,
    maps: &SensitivityMaps,
    mask: &SamplingMask,
    config: &ModelConfig,
    params: &ParameterStore,
) -> Result<Reconstruction> {
    if config.kind == ModelKind::Varnet {
        return Err(Error::InvalidArgument("cirim_forward called with a varnet config".into()));
    }
    reconstruct(config, params, y, maps, mask)
}

/// Variational-network cascade from `A*(y)`.
pub fn varnet_forward(
    y: &MultiCoilKSpace,
    maps: &SensitivityMaps,
    mask: &SamplingMask,
    config: &ModelConfig,
    params: &ParameterStore,
) -> Result<ComplexImage> {
    if config.kind != ModelKind::Varnet {
        return Err(Error::InvalidArgument("varnet_forward called with a RIM config".into()));
    }
    Ok(reconstruct(config, params, y, maps, mask)?.image)
}

/// Soft data consistency `x̂ − d·A*(A x̂ − y)`.
pub fn soft_dc(
    x_hat: &ComplexImage,
    y: &MultiCoilKSpace,
    maps: &SensitivityMaps,
    mask: &SamplingMask,
    d: f64,
) -> Result<ComplexImage> {
    if !d.is_finite() {
        return Err(Error::InvalidArgument(format!("DC weight must be finite, got {d}")));
    }
    maps.check_image(x_hat.height, x_hat.width)?;
    let m = Measurement::new(y, maps, mask)?;
    let mut store = ParameterStore::new();
    store.insert("d", Tensor::scalar(d))?;
    let mut s = Session::recording(&store);
    let x = s.tape().constant_complex(x_hat.to_tensor());
    let dv = s.param("d")?;
    let out = s.soft_dc(x, dv, &m)?;
    ComplexImage::from_tensor(s.complex(out)?.clone())
}

/// Multicoil k-space after the soft DC rule, before coil combination:
/// `k = F(S x̂)`, and on sampled positions `k ← k − d·(k − y)`.
pub fn soft_dc_kspace(
    x_hat: &ComplexImage,
    y: &MultiCoilKSpace,
    maps: &SensitivityMaps,
    mask: &SamplingMask,
    d: f64,
) -> Result<MultiCoilKSpace> {
    crate::mri_model::check_kspace(y, maps, mask)?;
    let mut k = crate::mri_model::expand(x_hat, maps)?;
    crate::diffmath::fft::fft2c_slices(k.data_mut(), x_hat.height, x_hat.width, false);
    let n = x_hat.height * x_hat.width;
    for (kc, yc) in k.data_mut().chunks_exact_mut(n).zip(y.samples.data().chunks_exact(n)) {
        for ((kv, yv), &keep) in kc.iter_mut().zip(yc).zip(mask.keep()) {
            if keep {
                *kv -= d * (*kv - yv);
            }
        }
    }
    MultiCoilKSpace::new(k)
}

/// The zero-filled image every reconstructor starts from.
pub fn initial_estimate(y: &MultiCoilKSpace, maps: &SensitivityMaps, mask: &SamplingMask) -> Result<ComplexImage> {
    adjoint_op(y, maps, mask)
}
