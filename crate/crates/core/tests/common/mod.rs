#![allow(dead_code)]

use mrirecon::diffmath::{ParameterStore, Tape, Var};
use mrirecon::Result;

pub const FD_STEP: f64 = 1e-5;

/// Norm-wise relative error between the tape gradient of `build` and its
/// central finite difference with respect to every entry of `store`.
pub fn fd_relative_error(
    store: &ParameterStore,
    build: impl Fn(&mut Tape, &ParameterStore) -> Result<Var>,
) -> f64 {
    let mut analytic = store.clone();
    analytic.zero_grad();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store).unwrap();
    tape.backward(loss, &mut analytic).unwrap();
    let g = analytic.flatten_grad();

    let eval = |s: &ParameterStore| -> f64 {
        let mut t = Tape::new();
        let l = build(&mut t, s).unwrap();
        t.real(l).unwrap().item()
    };
    let base = store.flatten();
    let mut probe = store.clone();
    let mut num = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut v = base.clone();
        v[i] = base[i] + FD_STEP;
        probe.assign_flat(&v).unwrap();
        let up = eval(&probe);
        v[i] = base[i] - FD_STEP;
        probe.assign_flat(&v).unwrap();
        let down = eval(&probe);
        num.push((up - down) / (2.0 * FD_STEP));
    }
    let diff: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

use std::sync::Arc;

use mrirecon::diffmath::{CTensor, Tensor};
use mrirecon::nets::{forward_graph, Measurement, ModelConfig, ModelKind, Session};
use mrirecon::train::{cirim_loss_var, WeightOrientation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Builder = Box<dyn Fn(&mut Tape, &ParameterStore) -> Result<Var>>;

/// A differentiable op wrapped into a scalar loss, with its inputs.
pub struct OpCase {
    pub name: &'static str,
    pub store: ParameterStore,
    pub build: Builder,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `Σ c ⊙ v` for a fixed pseudo-random `c`; complex values are compared
/// through their (Re, Im) channels, or magnitudes for stacks.
pub fn contract(t: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let v = match t.value(v) {
        mrirecon::diffmath::Value::Real(_) => v,
        mrirecon::diffmath::Value::Complex(c) if c.shape().len() == 2 => t.to_channels(v)?,
        mrirecon::diffmath::Value::Complex(_) => t.cabs(v)?,
    };
    let shape = t.shape(v).to_vec();
    let c = t.constant(Tensor::randn(&shape, &mut rng(seed)));
    let p = t.mul(v, c)?;
    t.sum(p)
}

fn store(entries: &[(&str, Tensor)]) -> ParameterStore {
    let mut s = ParameterStore::new();
    for (n, v) in entries {
        s.insert(*n, v.clone()).unwrap();
    }
    s
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, &mut rng(seed))
}

fn case(name: &'static str, store: ParameterStore, f: impl Fn(&mut Tape, &ParameterStore) -> Result<Var> + 'static) -> OpCase {
    OpCase {
        name,
        store,
        build: Box::new(move |t, s| {
            let out = f(t, s)?;
            contract(t, out, 99)
        }),
    }
}

fn unary(name: &'static str, shape: &[usize], op: fn(&mut Tape, Var) -> Result<Var>) -> OpCase {
    case(name, store(&[("a", randn(shape, 1))]), move |t, s| {
        let a = t.param(s, "a")?;
        op(t, a)
    })
}

fn binary(name: &'static str, op: fn(&mut Tape, Var, Var) -> Result<Var>) -> OpCase {
    let b = randn(&[2, 4, 5], 2).map(|v| 1.5 + v.abs());
    case(name, store(&[("a", randn(&[2, 4, 5], 1)), ("b", b)]), move |t, s| {
        let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
        op(t, a, b)
    })
}

/// Complex `[h,w]` leaf built from a real `[2,h,w]` parameter.
fn cparam(t: &mut Tape, s: &ParameterStore, name: &str) -> Result<Var> {
    let p = t.param(s, name)?;
    t.from_channels(p)
}

fn complex_unary(name: &'static str, op: fn(&mut Tape, Var) -> Result<Var>) -> OpCase {
    case(name, store(&[("z", randn(&[2, 6, 5], 3))]), move |t, s| {
        let z = cparam(t, s, "z")?;
        op(t, z)
    })
}

pub fn test_maps(coils: usize, h: usize, w: usize, seed: u64) -> Arc<CTensor> {
    Arc::new(CTensor::randn(&[coils, h, w], &mut rng(seed)))
}

/// One case per differentiable tape operation.
pub fn op_cases() -> Vec<OpCase> {
    let maps = test_maps(3, 6, 5, 11);
    let mask: Arc<Vec<f64>> = Arc::new((0..30).map(|i| (i % 3 != 0) as u8 as f64).collect());
    let mut cases = vec![
        binary("add", |t, a, b| t.add(a, b)),
        binary("sub", |t, a, b| t.sub(a, b)),
        binary("mul", |t, a, b| t.mul(a, b)),
        binary("div", |t, a, b| t.div(a, b)),
        unary("scale", &[3, 4], |t, a| t.scale(a, -1.7)),
        unary("add_scalar", &[3, 4], |t, a| t.add_scalar(a, 0.3)),
        unary("sigmoid", &[3, 4], |t, a| t.sigmoid(a)),
        unary("tanh", &[3, 4], |t, a| t.tanh(a)),
        unary("relu", &[3, 4], |t, a| t.relu(a)),
        unary("abs", &[3, 4], |t, a| t.abs(a)),
        unary("square", &[3, 4], |t, a| t.square(a)),
        unary("sum", &[3, 4], |t, a| t.sum(a)),
        unary("mean", &[3, 4], |t, a| t.mean(a)),
        unary("reshape", &[3, 4], |t, a| t.reshape(a, &[2, 6])),
        unary("slice", &[4, 3, 2], |t, a| t.slice(a, 1, 2)),
        unary("avg_pool2", &[2, 4, 6], |t, a| t.avg_pool2(a)),
        unary("upsample2", &[2, 3, 2], |t, a| t.upsample2(a)),
        unary("pad", &[2, 3, 4], |t, a| t.pad(a, 1, 2, 5, 7)),
        unary("crop", &[2, 5, 6], |t, a| t.crop(a, 1, 2, 3, 3)),
        unary("box_mean", &[2, 6, 7], |t, a| t.box_mean(a, 3)),
        unary("from_channels", &[2, 3, 4], |t, a| t.from_channels(a)),
        complex_unary("to_channels", |t, z| t.to_channels(z)),
        complex_unary("cabs", |t, z| t.cabs(z)),
        complex_unary("fft2c", |t, z| t.fft2c(z)),
        complex_unary("ifft2c", |t, z| t.ifft2c(z)),
    ];
    cases.push(case(
        "concat",
        store(&[("a", randn(&[2, 3, 3], 1)), ("b", randn(&[1, 3, 3], 2))]),
        |t, s| {
            let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
            t.concat(&[a, b, a])
        },
    ));
    for (name, k, dil) in [("conv2d_3x3", 3, 1), ("conv2d_5x5", 5, 1), ("conv2d_1x1", 1, 1), ("conv2d_dilated", 3, 2)] {
        cases.push(case(
            name,
            store(&[
                ("x", randn(&[3, 6, 7], 1)),
                ("k", randn(&[2, 3, k, k], 2)),
                ("b", randn(&[2], 3)),
            ]),
            move |t, s| {
                let (x, k, b) = (t.param(s, "x")?, t.param(s, "k")?, t.param(s, "b")?);
                t.conv2d_dilated(x, k, b, dil)
            },
        ));
    }
    cases.push(case(
        "scale_channels",
        store(&[("x", randn(&[3, 4, 4], 1)), ("u", randn(&[3], 2))]),
        |t, s| {
            let (x, u) = (t.param(s, "x")?, t.param(s, "u")?);
            t.scale_channels(x, u)
        },
    ));
    cases.push(case(
        "cadd",
        store(&[("z", randn(&[2, 6, 5], 1)), ("w", randn(&[2, 6, 5], 2))]),
        |t, s| {
            let (a, b) = (cparam(t, s, "z")?, cparam(t, s, "w")?);
            t.cadd(a, b)
        },
    ));
    cases.push(case(
        "csub",
        store(&[("z", randn(&[2, 6, 5], 1)), ("w", randn(&[2, 6, 5], 2))]),
        |t, s| {
            let (a, b) = (cparam(t, s, "z")?, cparam(t, s, "w")?);
            t.csub(a, b)
        },
    ));
    cases.push(case(
        "cscale_by",
        store(&[("z", randn(&[2, 6, 5], 1)), ("d", randn(&[1], 2))]),
        |t, s| {
            let z = cparam(t, s, "z")?;
            let d = t.param(s, "d")?;
            t.cscale_by(z, d)
        },
    ));
    {
        let maps = Arc::clone(&maps);
        cases.push(case("expand", store(&[("z", randn(&[2, 6, 5], 1))]), move |t, s| {
            let z = cparam(t, s, "z")?;
            t.expand(z, &maps)
        }));
    }
    {
        // reduce needs a complex stack; build it linearly from the leaf
        let maps = Arc::clone(&maps);
        let other = test_maps(3, 6, 5, 12);
        cases.push(case("reduce", store(&[("z", randn(&[2, 6, 5], 1))]), move |t, s| {
            let z = cparam(t, s, "z")?;
            let stack = t.expand(z, &other)?;
            t.reduce(stack, &maps)
        }));
    }
    {
        let maps = Arc::clone(&maps);
        cases.push(case("mask", store(&[("z", randn(&[2, 6, 5], 1))]), move |t, s| {
            let z = cparam(t, s, "z")?;
            let stack = t.expand(z, &maps)?;
            let k = t.fft2c(stack)?;
            let k = t.mask(k, &mask)?;
            t.ifft2c(k)
        }));
    }
    cases
}

/// Small unrolled CIRIM on an 8×8, 2-coil problem.
pub fn tiny_cirim() -> (ModelConfig, Measurement, Tensor) {
    let mut config = ModelConfig::desk(ModelKind::Cirim);
    config.rim.channels = 4;
    config.rim.iterations = 2;
    config.cascade.n_cascades = 2;
    let (h, w) = (8, 8);
    let maps = test_maps(2, h, w, 21);
    let mut r = rng(22);
    let y = CTensor::randn(&[2, h, w], &mut r);
    let mask: Vec<f64> = (0..h * w).map(|i| ((i * 7) % 5 < 2) as u8 as f64).collect();
    let m = Measurement {
        y: y.clone(),
        maps,
        mask: Arc::new(mask),
        height: h,
        width: w,
    };
    let reference = Tensor::randn(&[h, w], &mut r).map(f64::abs);
    (config, m, reference)
}

/// Weighted sequence loss of the tiny CIRIM as a function of its weights.
pub fn tiny_cirim_loss(config: &ModelConfig, m: &Measurement, reference: &Tensor, store: &ParameterStore) -> Result<(Tape, Var)> {
    let mut s = Session::recording(store);
    let g = forward_graph(&mut s, config, m)?;
    let mut tape = s.into_tape();
    let r = tape.constant(reference.clone());
    let l = cirim_loss_var(&mut tape, &g.estimates, r, WeightOrientation::LaterHeavier)?;
    Ok((tape, l))
}

/// Like [`fd_relative_error`] but for losses that build their own tape.
pub fn fd_relative_error_owned(
    store: &ParameterStore,
    build: impl Fn(&ParameterStore) -> Result<(Tape, Var)>,
) -> f64 {
    let mut analytic = store.clone();
    analytic.zero_grad();
    let (tape, loss) = build(store).unwrap();
    tape.backward(loss, &mut analytic).unwrap();
    let g = analytic.flatten_grad();
    let eval = |s: &ParameterStore| -> f64 {
        let (t, l) = build(s).unwrap();
        t.real(l).unwrap().item()
    };
    let base = store.flatten();
    let mut probe = store.clone();
    let mut num = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut v = base.clone();
        v[i] = base[i] + FD_STEP;
        probe.assign_flat(&v).unwrap();
        let up = eval(&probe);
        v[i] = base[i] - FD_STEP;
        probe.assign_flat(&v).unwrap();
        let down = eval(&probe);
        num.push((up - down) / (2.0 * FD_STEP));
    }
    let diff: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

/// A 32×32 simulated acquisition (Gaussian 2D, 4x, σ = 0.02).
pub fn small_record(seed: u64, coils: usize) -> mrirecon::phantom::DatasetRecord {
    use mrirecon::mri_model::MaskKind;
    use mrirecon::phantom::{make_dataset, AcquisitionConfig, PhantomFamily};
    use mrirecon::sampling::MaskSpec;
    let family = PhantomFamily {
        height: 32,
        width: 32,
        ..PhantomFamily::default()
    };
    let acq = AcquisitionConfig {
        coils,
        mask: MaskSpec::new(MaskKind::Gaussian2d, 4.0),
        ..AcquisitionConfig::default()
    };
    make_dataset(&family, &acq, seed, 1).unwrap().remove(0)
}

/// Lesion-detection scores per method and contrast: `(name, CR, WMN, BGN, printed WA)`.
pub const LESION_SCORES: [(&str, f64, f64, f64, f64); 34] = [
    ("CascadeNet/T1", 0.128, 0.135, 0.292, 1.08),
    ("CascadeNet/T2", 0.087, 0.290, 0.302, 1.43),
    ("CascadeNet/FLAIR", 0.145, 0.126, 0.265, 0.96),
    ("CascadeNet/FLAIR1D", 0.139, 0.121, 0.309, 1.05),
    ("CIRIM/T1", 0.179, 0.145, 0.172, 0.69),
    ("CIRIM/T2", 0.097, 0.285, 0.322, 1.42),
    ("CIRIM/FLAIR", 0.183, 0.131, 0.104, 0.55),
    ("CIRIM/FLAIR1D", 0.173, 0.110, 0.137, 0.62),
    ("E2EVN/T1", 0.145, 0.144, 0.359, 1.13),
    ("E2EVN/T2", 0.109, 0.301, 0.576, 1.79),
    ("E2EVN/FLAIR", 0.159, 0.116, 0.358, 1.03),
    ("E2EVN/FLAIR1D", 0.134, 0.141, 0.360, 1.17),
    ("IRIM/T1", 0.159, 0.128, 0.200, 0.80),
    ("IRIM/T2", 0.078, 0.260, 0.348, 1.51),
    ("IRIM/FLAIR", 0.169, 0.145, 0.181, 0.74),
    ("IRIM/FLAIR1D", 0.176, 0.151, 0.213, 0.77),
    ("KIKINet/T1", 0.117, 0.184, 0.432, 1.40),
    ("KIKINet/T2", 0.149, 0.235, 0.294, 1.10),
    ("KIKINet/FLAIR", 0.105, 0.175, 0.626, 1.75),
    ("KIKINet/FLAIR1D", 0.103, 0.144, 0.352, 1.29),
    ("LPDNet/T1", 0.240, 0.206, 0.210, 0.56),
    ("LPDNet/T2", 0.030, 0.126, 0.204, 1.34),
    ("LPDNet/FLAIR", 0.117, 0.099, 0.332, 1.15),
    ("LPDNet/FLAIR1D", 0.066, 0.129, 0.338, 1.40),
    ("RIM/T1", 0.178, 0.168, 0.170, 0.71),
    ("RIM/T2", 0.091, 0.149, 0.251, 1.18),
    ("RIM/FLAIR", 0.197, 0.175, 0.134, 0.58),
    ("RIM/FLAIR1D", 0.183, 0.158, 0.165, 0.67),
    ("UNet/T1", 0.182, 0.174, 0.276, 0.87),
    ("UNet/T2", 0.125, 0.924, 0.285, 1.93),
    ("UNet/FLAIR", 0.087, 0.079, 0.625, 1.72),
    ("UNet/FLAIR1D", 0.065, 0.105, 0.348, 1.40),
    ("PICS", 0.178, 0.140, 0.147, 0.64),
    ("Zero-Filled", 0.072, 0.092, 0.372, 1.39),
];
