use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Channel concatenation `[a, b]`, with `a`'s channels first.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::shape("concat_channels", format!("{sa} vs {sb}")));
    }
    let shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut data = Vec::with_capacity(shape.len());
    for i in 0..sa.n {
        data.extend_from_slice(a.item(i));
        data.extend_from_slice(b.item(i));
    }
    Tensor::from_vec(shape, data)
}

/// Inverse of [`concat_channels`]: the first `first_channels` channels go to
/// the first tensor.
pub fn split_channels<T: Real>(
    t: &Tensor<T>,
    first_channels: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = t.shape();
    if first_channels == 0 || first_channels >= s.c {
        return Err(Error::shape(
            "split_channels",
            format!("cannot split {} channels at {first_channels}", s.c),
        ));
    }
    let cut = first_channels * s.plane();
    let mut a = Vec::with_capacity(s.n * cut);
    let mut b = Vec::with_capacity(s.len() - s.n * cut);
    for i in 0..s.n {
        let item = t.item(i);
        a.extend_from_slice(&item[..cut]);
        b.extend_from_slice(&item[cut..]);
    }
    Ok((
        Tensor::from_vec(Shape::new(s.n, first_channels, s.h, s.w), a)?,
        Tensor::from_vec(Shape::new(s.n, s.c - first_channels, s.h, s.w), b)?,
    ))
}
