//! Data rearrangement: sub-pixel shuffle, 2x2 max pooling, channel replication.

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// Depth-to-space: `[N, H, W, r*r*C] -> [N, r*H, r*W, C]`.
///
/// Input channel `(i*r + j)*C + c` lands at spatial offset `(i, j)` of output
/// channel `c`, so for `C = 1` the channels fill each `r x r` cell row by row.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, h, w, cin) = x.nhwc("pixel_shuffle input")?;
    if r == 0 || cin % (r * r) != 0 {
        return shape_err(format!(
            "pixel_shuffle needs channels divisible by r^2 = {}, got {cin}",
            r * r
        ));
    }
    let c = cin / (r * r);
    let (ho, wo) = (h * r, w * r);
    let mut out = vec![T::ZERO; x.len()];
    let src = x.data();
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let s = ((b * h + y) * w + xx) * cin;
                for i in 0..r {
                    for j in 0..r {
                        let d = ((b * ho + y * r + i) * wo + xx * r + j) * c;
                        let from = s + (i * r + j) * c;
                        out[d..d + c].copy_from_slice(&src[from..from + c]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, ho, wo, c], out)
}

/// Space-to-depth, the exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, ho, wo, c) = x.nhwc("pixel_unshuffle input")?;
    if r == 0 || ho % r != 0 || wo % r != 0 {
        return shape_err(format!(
            "pixel_unshuffle needs spatial dims divisible by {r}, got {ho}x{wo}"
        ));
    }
    let (h, w, cout) = (ho / r, wo / r, c * r * r);
    let mut out = vec![T::ZERO; x.len()];
    let src = x.data();
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let d = ((b * h + y) * w + xx) * cout;
                for i in 0..r {
                    for j in 0..r {
                        let s = ((b * ho + y * r + i) * wo + xx * r + j) * c;
                        let to = d + (i * r + j) * c;
                        out[to..to + c].copy_from_slice(&src[s..s + c]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, h, w, cout], out)
}

/// 2x2 max pooling with stride 2 (odd trailing rows/cols are dropped).
/// Returns the pooled tensor and, per output element, the flat input index of its max.
pub fn max_pool2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, h, w, c) = x.nhwc("max_pool input")?;
    let (ho, wo) = (h / 2, w / 2);
    if ho == 0 || wo == 0 {
        return shape_err(format!("max_pool needs at least 2x2 input, got {h}x{w}"));
    }
    let src = x.data();
    let mut out = Vec::with_capacity(n * ho * wo * c);
    let mut arg = Vec::with_capacity(n * ho * wo * c);
    for b in 0..n {
        for y in 0..ho {
            for xx in 0..wo {
                for ch in 0..c {
                    let mut best = ((b * h + 2 * y) * w + 2 * xx) * c + ch;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = ((b * h + 2 * y + dy) * w + 2 * xx + dx) * c + ch;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    out.push(src[best]);
                    arg.push(best);
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, ho, wo, c], out)?, arg))
}

pub fn max_pool2_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(dx)
}

/// Repeats a single-channel NHWC tensor across `c` channels.
pub fn replicate_channels<T: Real>(x: &Tensor<T>, c: usize) -> Result<Tensor<T>> {
    let (n, h, w, cin) = x.nhwc("replicate input")?;
    if cin != 1 {
        return shape_err(format!("channel replication expects 1 channel, got {cin}"));
    }
    let data = x
        .data()
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, c))
        .collect();
    Tensor::new(vec![n, h, w, c], data)
}

pub fn replicate_channels_backward<T: Real>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, c) = grad_out.nhwc("replicate gradient")?;
    let data = grad_out
        .data()
        .chunks(c)
        .map(|px| px.iter().copied().sum())
        .collect();
    Tensor::new(vec![n, h, w, 1], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shuffle_single_cell() {
        let x = Tensor::new(vec![1, 1, 1, 4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 1]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shuffle_shapes_and_errors() {
        let x = Tensor::<f32>::zeros(vec![1, 48, 48, 64]);
        assert_eq!(pixel_shuffle(&x, 4).unwrap().shape(), &[1, 192, 192, 4]);
        let bad = Tensor::<f32>::zeros(vec![1, 2, 2, 6]);
        assert!(pixel_shuffle(&bad, 2).is_err());
    }

    #[test]
    fn max_pool_picks_max() {
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0f32, 5.0, -3.0, 2.0]).unwrap();
        let (y, arg) = max_pool2(&x).unwrap();
        assert_eq!(y.data(), &[5.0]);
        assert_eq!(arg, vec![1]);
    }

    proptest! {
        #[test]
        fn shuffle_round_trip(n in 1usize..3, h in 1usize..5, w in 1usize..5, c in 1usize..3, r in 1usize..4, seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::<f32>::randn(vec![n, h, w, c * r * r], 1.0, &mut rng);
            let y = pixel_shuffle(&x, r).unwrap();
            prop_assert_eq!(y.shape(), &[n, h * r, w * r, c][..]);
            prop_assert_eq!(pixel_unshuffle(&y, r).unwrap(), x);
        }
    }
}
