use candle_core::Tensor;

use crate::error::{Error, Result};

/// Rearranges `[B, C·r², H, W]` into `[B, C, H·r, W·r]` with
/// `out[b][c][h·r+i][w·r+j] = x[b][c·r²+i·r+j][h][w]`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::Shape(format!(
            "pixel_shuffle: channel count of {:?} is not divisible by r²={}",
            x.dims(),
            r * r
        )));
    }
    if r == 1 {
        return Ok(x.clone());
    }
    let c_out = c / (r * r);
    Ok(x.reshape(vec![b, c_out, r, r, h, w])?
        .permute(vec![0, 1, 4, 2, 5, 3])?
        .reshape((b, c_out, h * r, w * r))?)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::Shape(format!(
            "pixel_unshuffle: spatial size of {:?} is not divisible by r={r}",
            x.dims()
        )));
    }
    if r == 1 {
        return Ok(x.clone());
    }
    let (ho, wo) = (h / r, w / r);
    Ok(x.reshape(vec![b, c, ho, r, wo, r])?
        .permute(vec![0, 1, 3, 5, 2, 4])?
        .reshape((b, c * r * r, ho, wo))?)
}
