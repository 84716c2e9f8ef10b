//! Network building blocks: parameters and layers, the wide transformer
//! block, the spatial-frequency fusion block, the cross-frequency
//! conditioner and the assembled two-branch network.

pub mod cfc;
pub mod checkpoint;
pub mod layers;
pub mod net;
pub mod optim;
pub mod params;
pub mod sffb;
pub mod wtb;

pub use cfc::{Cfc, CfcOutput};
pub use checkpoint::Checkpoint;
pub use layers::{Conv2d, DepthwiseConv, LayerNorm, Linear};
pub use net::{WfiConfig, WfiNet};
pub use optim::Adam;
pub use params::{Ctx, Init, ParamId, ParamStore};
pub use sffb::{Sffb, SffbConfig};
pub use wtb::{Wtb, WtbConfig};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};
use crate::wavelet::SubbandSet;

/// Runs a block on plain tensors with its parameters held constant.
fn eval<F>(params: &ParamStore, f: F) -> Result<Tensor>
where
    F: for<'t> FnOnce(&Ctx<'t>) -> Result<crate::tensor::Var<'t>>,
{
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, params, false);
    Ok(f(&ctx)?.to_tensor())
}

pub fn wtb_forward(block: &Wtb, params: &ParamStore, x: &Tensor) -> Result<Tensor> {
    eval(params, |ctx| block.forward(ctx, ctx.input(x.clone())))
}

pub fn sffb_forward(block: &Sffb, params: &ParamStore, x: &Tensor) -> Result<Tensor> {
    eval(params, |ctx| block.forward(ctx, ctx.input(x.clone())))
}

/// `t_in` is `[3, C, h, w]`; returns `t_out` in the same layout and `f_out`.
pub fn cfc_forward(block: &Cfc, params: &ParamStore, t_in: &Tensor, f_in: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = t_in.shape();
    if s.len() != 4 || s[0] != 3 {
        return Err(Error::dim("cfc", format!("t_in must be [3, C, h, w], got {s:?}")));
    }
    let stacked = t_in.reshape(&[3 * s[1], s[2], s[3]])?;
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, params, false);
    let out = block.forward(&ctx, ctx.input(stacked), ctx.input(f_in.clone()))?;
    Ok((out.t_out.to_tensor().reshape(s)?, out.f_out.to_tensor()))
}

pub fn wfi2_forward(bands: &SubbandSet, net: &WfiNet) -> Result<SubbandSet> {
    net.enhance(bands)
}
