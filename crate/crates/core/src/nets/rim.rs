//! Recurrent inference machine: recurrent units, one RIM block and the
//! cascaded (CIRIM) unroll.

use super::session::{Measurement, Session};
use super::{CascadeConfig, RimCellConfig, UnitKind};
use crate::diffmath::{CTensor, Var};
use crate::error::Result;

/// `s = s_prev + z⊙(s̃ − s_prev)` with reset/update gates and candidate
/// computed by 1×1 convolutions over `[s_prev, x]`.
pub(crate) fn gru(s: &mut Session, prefix: &str, x: Var, s_prev: Var) -> Result<Var> {
    let (wr, br) = (s.param(&format!("{prefix}.w_r"))?, s.param(&format!("{prefix}.b_r"))?);
    let (wz, bz) = (s.param(&format!("{prefix}.w_z"))?, s.param(&format!("{prefix}.b_z"))?);
    let (ws, bs) = (s.param(&format!("{prefix}.w_s"))?, s.param(&format!("{prefix}.b_s"))?);
    let t = s.tape();
    let joint = t.concat(&[s_prev, x])?;
    let r = t.conv2d(joint, wr, br)?;
    let r = t.sigmoid(r)?;
    let z = t.conv2d(joint, wz, bz)?;
    let z = t.sigmoid(z)?;
    let reset = t.mul(r, s_prev)?;
    let joint = t.concat(&[reset, x])?;
    let cand = t.conv2d(joint, ws, bs)?;
    let cand = t.tanh(cand)?;
    let delta = t.sub(cand, s_prev)?;
    let delta = t.mul(z, delta)?;
    t.add(s_prev, delta)
}

/// `s = ReLU(W x + u⊙s_prev + b)` with `W` a 1×1 convolution and one
/// recurrent weight per channel.
pub(crate) fn indrnn(s: &mut Session, prefix: &str, x: Var, s_prev: Var) -> Result<Var> {
    let w = s.param(&format!("{prefix}.w"))?;
    let b = s.param(&format!("{prefix}.b"))?;
    let u = s.param(&format!("{prefix}.u"))?;
    let t = s.tape();
    let input = t.conv2d(x, w, b)?;
    let rec = t.scale_channels(s_prev, u)?;
    let pre = t.add(input, rec)?;
    t.relu(pre)
}

fn unit(s: &mut Session, kind: UnitKind, prefix: &str, x: Var, s_prev: Var) -> Result<Var> {
    match kind {
        UnitKind::Gru => gru(s, prefix, x, s_prev),
        UnitKind::Indrnn => indrnn(s, prefix, x, s_prev),
    }
}

fn conv(s: &mut Session, prefix: &str, x: Var, dilation: usize) -> Result<Var> {
    let w = s.param(&format!("{prefix}.weight"))?;
    let b = s.param(&format!("{prefix}.bias"))?;
    s.tape().conv2d_dilated(x, w, b, dilation)
}

/// One RIM update step: returns the new estimate and hidden states.
pub(crate) fn rim_step(
    s: &mut Session,
    cell: &RimCellConfig,
    prefix: &str,
    x: Var,
    hidden: [Var; 2],
    m: &Measurement,
) -> Result<(Var, [Var; 2])> {
    let grad = s.loglik_gradient(x, m)?;
    let t = s.tape();
    let gc = t.to_channels(grad)?;
    let xc = t.to_channels(x)?;
    let features = t.concat(&[gc, xc])?;

    let [d0, d1, d2] = cell.dilations;
    let h = conv(s, &format!("{prefix}.conv0"), features, d0)?;
    let h = s.tape().relu(h)?;
    let s0 = unit(s, cell.unit, &format!("{prefix}.unit0"), h, hidden[0])?;
    let h = conv(s, &format!("{prefix}.conv1"), s0, d1)?;
    let h = s.tape().relu(h)?;
    let s1 = unit(s, cell.unit, &format!("{prefix}.unit1"), h, hidden[1])?;
    let out = conv(s, &format!("{prefix}.conv2"), s1, d2)?;
    let t = s.tape();
    let update = t.from_channels(out)?;
    Ok((t.cadd(x, update)?, [s0, s1]))
}

/// Output of a RIM block: the final estimate, the estimate after each
/// internal iteration and the final hidden states. `images` holds the
/// estimate values, which outlive the tape in a streaming session.
pub(crate) struct BlockOutput {
    pub x: Var,
    pub estimates: Vec<Var>,
    pub images: Vec<CTensor>,
    pub hidden: [Var; 2],
}

/// Per-cascade, per-iteration estimates of an unrolled network.
pub(crate) struct Unrolled {
    pub estimates: Vec<Vec<Var>>,
    pub images: Vec<Vec<CTensor>>,
}

pub(crate) fn rim_block(
    s: &mut Session,
    cell: &RimCellConfig,
    prefix: &str,
    x_in: Var,
    hidden: Option<[Var; 2]>,
    m: &Measurement,
    cascade: usize,
) -> Result<BlockOutput> {
    let shape = [cell.channels, m.height, m.width];
    let mut hidden = match hidden {
        Some(h) => h,
        None => [s.zeros(&shape), s.zeros(&shape)],
    };
    let mut x = x_in;
    let mut estimates = Vec::with_capacity(cell.iterations);
    let mut images = Vec::with_capacity(cell.iterations);
    for it in 0..cell.iterations {
        let (nx, nh) = rim_step(s, cell, prefix, x, hidden, m)?;
        s.check_finite(nx, cascade, it)?;
        let carried = s.boundary(&[nx, nh[0], nh[1]])?;
        x = carried[0];
        hidden = [carried[1], carried[2]];
        estimates.push(x);
        images.push(s.complex(x)?.clone());
    }
    Ok(BlockOutput {
        x,
        estimates,
        images,
        hidden,
    })
}

pub(crate) fn cascade_prefix(cascade: &CascadeConfig, k: usize) -> String {
    if cascade.share_params {
        "shared".to_string()
    } else {
        format!("cascade{k}")
    }
}

/// Estimates for each cascade; within a cascade one per iteration, the last
/// one after the optional DC step.
pub(crate) fn cirim(
    s: &mut Session,
    cell: &RimCellConfig,
    cascade: &CascadeConfig,
    x0: Var,
    m: &Measurement,
) -> Result<Unrolled> {
    let mut x = x0;
    let mut estimates = Vec::with_capacity(cascade.n_cascades);
    let mut images = Vec::with_capacity(cascade.n_cascades);
    for k in 0..cascade.n_cascades {
        let prefix = cascade_prefix(cascade, k);
        let mut out = rim_block(s, cell, &prefix, x, None, m, k)?;
        x = out.x;
        if cascade.explicit_dc {
            let d = s.param(&format!("cascade{k}.dc"))?;
            x = s.soft_dc(x, d, m)?;
            s.check_finite(x, k, cell.iterations)?;
            x = s.boundary(&[x])?[0];
            if let (Some(last), Some(img)) = (out.estimates.last_mut(), out.images.last_mut()) {
                *last = x;
                *img = s.complex(x)?.clone();
            }
        }
        estimates.push(out.estimates);
        images.push(out.images);
    }
    Ok(Unrolled { estimates, images })
}
