use crate::error::{Error, Result};
use crate::raster::DepthMap;

use super::LossResult;

/// `1 − cos(u, v)` between the jointly valid pixels of `d_gen` (u) and
/// `d_src` (v); the gradient is with respect to `d_gen`.
pub fn cosine_depth_loss(d_gen: &DepthMap, d_src: &DepthMap) -> Result<LossResult> {
    if d_gen.dims() != d_src.dims() {
        return Err(Error::DimensionMismatch {
            expected: d_src.dims(),
            found: d_gen.dims(),
        });
    }
    let idx: Vec<usize> = (0..d_gen.len())
        .filter(|&i| d_gen.valid()[i] && d_src.valid()[i])
        .collect();
    if idx.is_empty() {
        return Err(Error::Empty("no jointly valid depth pixels"));
    }
    let u = d_gen.values();
    let v = d_src.values();
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for &i in &idx {
        uv += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::Degenerate("zero-norm depth vector".into()));
    }
    let (nu, nv) = (uu.sqrt(), vv.sqrt());
    let cos = uv / (nu * nv);
    let mut grad = vec![0.0; d_gen.len()];
    for &i in &idx {
        grad[i] = -(v[i] / (nu * nv) - uv * u[i] / (uu * nu * nv));
    }
    Ok(LossResult {
        value: (1.0 - cos).max(0.0),
        grad,
        width: d_gen.width(),
        height: d_gen.height(),
    })
}
