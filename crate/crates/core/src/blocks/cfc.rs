//! Cross-frequency conditioner exchanging information between branches.

use std::rc::Rc;

use super::layers::Conv2d;
use super::params::{Ctx, Init};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Single-head spatial cross-attention. Queries and the high-frequency
/// values come from the sum of the three coefficient slots; keys and the
/// low-frequency values from the low-frequency features. Both value sets
/// share one attention map.
#[derive(Clone, Debug)]
pub struct Cfc {
    pub channels: usize,
    q: Conv2d,
    k: Conv2d,
    v_t: Conv2d,
    v_f: Conv2d,
}

pub struct CfcOutput<'t> {
    /// `[3C, h, w]`, the same map replicated into each slot.
    pub t_out: Var<'t>,
    pub f_out: Var<'t>,
    /// `[1, n, n]` attention weights.
    pub attention: Rc<Tensor>,
}

impl Cfc {
    pub fn new(init: &mut Init<'_>, name: &str, channels: usize) -> Result<Self> {
        let mut s = init.sub(name);
        let c = channels;
        Ok(Self {
            channels,
            q: Conv2d::same(&mut s, "q", c, c, 1)?,
            k: Conv2d::same(&mut s, "k", c, c, 1)?,
            v_t: Conv2d::same(&mut s, "v_t", c, c, 1)?,
            v_f: Conv2d::same(&mut s, "v_f", c, c, 1)?,
        })
    }

    /// `t_in` is the slot-stacked `[3C, h, w]` layout, `f_in` is `[C, h, w]`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, t_in: Var<'t>, f_in: Var<'t>) -> Result<CfcOutput<'t>> {
        let c = self.channels;
        let (ts, fs) = (t_in.shape(), f_in.shape());
        if ts.len() != 3 || fs.len() != 3 || ts[0] != 3 * c || fs[0] != c || ts[1..] != fs[1..] {
            return Err(Error::mismatch("cfc", &ts, &fs));
        }
        let (h, w) = (fs[1], fs[2]);
        let n = h * w;
        let agg = t_in
            .narrow(0, 0, c)?
            .add(t_in.narrow(0, c, c)?)?
            .add(t_in.narrow(0, 2 * c, c)?)?;
        let q = self.q.forward(ctx, agg)?.reshape(&[1, c, n])?;
        let k = self.k.forward(ctx, f_in)?.reshape(&[1, c, n])?;
        let v = Var::cat(&[self.v_t.forward(ctx, agg)?, self.v_f.forward(ctx, f_in)?], 0)?
            .reshape(&[1, 2 * c, n])?;
        let (out, attention) = Var::attention(q, k, v, 1.0 / (c as f64).sqrt())?;
        let out = out.reshape(&[2 * c, h, w])?;
        let t = out.narrow(0, 0, c)?;
        Ok(CfcOutput {
            t_out: Var::cat(&[t, t, t], 0)?,
            f_out: out.narrow(0, c, c)?,
            attention,
        })
    }
}
