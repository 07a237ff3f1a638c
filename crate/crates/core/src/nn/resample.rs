//! Image resampling: bilinear upscaling of target tiles, nearest-neighbour
//! mask resizing and integer-factor area averaging.

use candle_core::{DType, Tensor};

use crate::error::{Error, Result};

pub(crate) fn to_f64_vec(x: &Tensor) -> Result<Vec<f64>> {
    Ok(x.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

pub(crate) fn from_f64_vec(v: Vec<f64>, dims: &[usize], like: &Tensor) -> Result<Tensor> {
    Ok(Tensor::from_vec(v, dims, like.device())?.to_dtype(like.dtype())?)
}

/// Source sample positions for one axis under the half-pixel-centre
/// convention: `s = (d + 0.5)·(in/out) − 0.5`, clamped to `[0, in−1]`.
fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    // a + t·(b − a) keeps constant inputs exactly constant.
    a + t * (b - a)
}

/// Bilinear resize of `[B, C, H, W]` to `[B, C, out_h, out_w]`.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Contract(format!(
            "bilinear_resize target size must be >= 1, got {out_h}x{out_w}"
        )));
    }
    let src = to_f64_vec(x)?;
    let rows = bilinear_taps(h, out_h);
    let cols = bilinear_taps(w, out_w);
    let mut out = Vec::with_capacity(b * c * out_h * out_w);
    for plane in src.chunks_exact(h * w) {
        for &(y0, y1, ty) in &rows {
            let (r0, r1) = (&plane[y0 * w..(y0 + 1) * w], &plane[y1 * w..(y1 + 1) * w]);
            for &(x0, x1, tx) in &cols {
                let top = lerp(r0[x0], r0[x1], tx);
                let bottom = lerp(r1[x0], r1[x1], tx);
                out.push(lerp(top, bottom, ty));
            }
        }
    }
    from_f64_vec(out, &[b, c, out_h, out_w], x)
}

/// Nearest-neighbour resize; keeps binary masks binary.
pub fn nearest_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Contract(format!(
            "nearest_resize target size must be >= 1, got {out_h}x{out_w}"
        )));
    }
    let pick = |n_in: usize, n_out: usize| -> Vec<usize> {
        (0..n_out)
            .map(|d| (((d as f64 + 0.5) * n_in as f64 / n_out as f64) as usize).min(n_in - 1))
            .collect()
    };
    let (rows, cols) = (pick(h, out_h), pick(w, out_w));
    let src = to_f64_vec(x)?;
    let mut out = Vec::with_capacity(b * c * out_h * out_w);
    for plane in src.chunks_exact(h * w) {
        for &y in &rows {
            out.extend(cols.iter().map(|&x| plane[y * w + x]));
        }
    }
    from_f64_vec(out, &[b, c, out_h, out_w], x)
}

/// Mean over non-overlapping `factor x factor` blocks.
pub fn area_downsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!(
            "area_downsample: {:?} is not divisible by factor {factor}",
            x.dims()
        )));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    Ok(x.avg_pool2d(factor)?)
}

/// Area-downsamples a binary mask and re-binarizes it (`>= 0.5` is foreground).
pub fn downsample_mask(mask: &Tensor, factor: usize) -> Result<Tensor> {
    Ok(area_downsample(mask, factor)?
        .ge(0.5)?
        .to_dtype(mask.dtype())?)
}
