//! Network assemblies: the residual block, the U-shaped single-branch model
//! and the two-branch model with user-adjustable mixing.

mod labnet;
mod lstea;
mod realnet;

pub use labnet::{labnet_forward, LabNet, LabNetConfig};
pub use lstea::{lstea_block_forward, lstea_module_forward, BlockSettings, LsteaBlockWeights};
pub use realnet::{
    adapter_forward, fusion_features, fusion_forward, realnet_forward, AdapterSide, AdapterWeights, FusionWeights,
    RealNet, RealNetConfig,
};

use crate::degrade::bicubic_upsample;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Spatial sizes are padded up to a multiple of this before the network.
pub const SIZE_MULTIPLE: usize = 4;

/// Reflect-pads the LR input to a multiple of [`SIZE_MULTIPLE`], returning
/// the padded input variable and its bicubic upsampling (a constant).
pub(crate) fn prepare_input(g: &mut Graph, lr: &Tensor, scale: usize) -> Result<(Var, Tensor, (usize, usize))> {
    let (c, h, w) = lr.dims3()?;
    if c != 3 {
        return Err(Error::shape("network input", lr.shape(), &[3, h, w]));
    }
    if h < SIZE_MULTIPLE || w < SIZE_MULTIPLE {
        return Err(Error::Size(format!("input {h}x{w} is smaller than {SIZE_MULTIPLE}x{SIZE_MULTIPLE}")));
    }
    let ph = h.next_multiple_of(SIZE_MULTIPLE) - h;
    let pw = w.next_multiple_of(SIZE_MULTIPLE) - w;
    let x = g.input(lr.clone());
    let x = if ph + pw > 0 { g.reflect_pad(x, ph, pw)? } else { x };
    let base = bicubic_upsample(g.value(x), scale)?;
    Ok((x, base, (h * scale, w * scale)))
}

/// Adds the bicubic base and crops away the padding.
pub(crate) fn finish_output(g: &mut Graph, y: Var, base: Tensor, out: (usize, usize)) -> Result<Var> {
    let b = g.input(base);
    let y = g.add(y, b)?;
    if g.shape(y)[1..] == [out.0, out.1] {
        Ok(y)
    } else {
        g.crop(y, out.0, out.1)
    }
}
