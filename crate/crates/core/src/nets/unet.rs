//! Small encoder–decoder regularizer and the variational-network cascade.

use super::session::{Measurement, Session};
use super::{CascadeConfig, UnetConfig};
use crate::diffmath::{CTensor, Var};
use crate::error::{Error, Result};

fn conv(s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
    let w = s.param(&format!("{prefix}.weight"))?;
    let b = s.param(&format!("{prefix}.bias"))?;
    s.tape().conv2d(x, w, b)
}

fn conv_relu(s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
    let y = conv(s, prefix, x)?;
    s.tape().relu(y)
}

/// Channel widths per level: `channels·2^l` for `l = 0..=pools`.
pub(crate) fn level_channels(cfg: &UnetConfig) -> Vec<usize> {
    (0..=cfg.pools).map(|l| cfg.channels << l).collect()
}

/// `[h,w]` complex → `[h,w]` complex update. The input is zero-padded so
/// both sides are multiples of `2^pools`, and the output cropped back.
pub(crate) fn unet(s: &mut Session, cfg: &UnetConfig, prefix: &str, x: Var) -> Result<Var> {
    let (h, w) = match s.tape().shape(x) {
        [h, w] => (*h, *w),
        sh => return Err(Error::Shape(format!("unet expects [h,w], got {sh:?}"))),
    };
    let m = 1usize << cfg.pools;
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let (top, left) = ((ph - h) / 2, (pw - w) / 2);

    let xc = s.tape().to_channels(x)?;
    let mut cur = s.tape().pad(xc, top, left, ph, pw)?;
    let mut skips = Vec::with_capacity(cfg.pools);
    for l in 0..cfg.pools {
        let e = conv_relu(s, &format!("{prefix}.enc{l}"), cur)?;
        skips.push(e);
        cur = s.tape().avg_pool2(e)?;
    }
    cur = conv_relu(s, &format!("{prefix}.bottom"), cur)?;
    for l in (0..cfg.pools).rev() {
        let up = s.tape().upsample2(cur)?;
        let up = conv_relu(s, &format!("{prefix}.up{l}"), up)?;
        let joint = s.tape().concat(&[up, skips[l]])?;
        cur = conv_relu(s, &format!("{prefix}.dec{l}"), joint)?;
    }
    let out = conv(s, &format!("{prefix}.out"), cur)?;
    let t = s.tape();
    let out = t.crop(out, top, left, h, w)?;
    t.from_channels(out)
}

/// Cascade of `x ← x + UNet(x)`, each optionally followed by soft DC.
/// Returns the per-cascade outputs and their values.
pub(crate) fn varnet(
    s: &mut Session,
    cfg: &UnetConfig,
    cascade: &CascadeConfig,
    x0: Var,
    m: &Measurement,
) -> Result<(Vec<Var>, Vec<CTensor>)> {
    let mut x = x0;
    let mut vars = Vec::with_capacity(cascade.n_cascades);
    let mut images = Vec::with_capacity(cascade.n_cascades);
    for k in 0..cascade.n_cascades {
        let prefix = super::rim::cascade_prefix(cascade, k);
        let update = unet(s, cfg, &prefix, x)?;
        x = s.tape().cadd(x, update)?;
        if cascade.explicit_dc {
            let d = s.param(&format!("cascade{k}.dc"))?;
            x = s.soft_dc(x, d, m)?;
        }
        s.check_finite(x, k, 0)?;
        x = s.boundary(&[x])?[0];
        vars.push(x);
        images.push(s.complex(x)?.clone());
    }
    Ok((vars, images))
}
