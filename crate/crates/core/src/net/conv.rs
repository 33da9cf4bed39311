//! 3x3, stride 1, zero-padded convolution over CHW buffers.
//!
//! Weights are laid out `[cout][cin][3][3]`. All loops run over contiguous
//! row segments so the inner bodies vectorize.

use crate::Real;

/// Valid destination column range for a horizontal tap offset `dx`.
#[inline]
fn col_range(width: usize, dx: isize) -> (usize, usize) {
    let x0 = if dx < 0 { 1 } else { 0 };
    let x1 = if dx > 0 { width - 1 } else { width };
    (x0, x1.max(x0))
}

#[inline]
fn row_range(height: usize, dy: isize) -> (usize, usize) {
    let y0 = if dy < 0 { 1 } else { 0 };
    let y1 = if dy > 0 { height - 1 } else { height };
    (y0, y1.max(y0))
}

/// `out = conv(input) + bias`. `out` is overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward<T: Real>(
    input: &[T],
    cin: usize,
    height: usize,
    width: usize,
    weight: &[T],
    bias: &[T],
    cout: usize,
    out: &mut [T],
) {
    let hw = height * width;
    debug_assert_eq!(input.len(), cin * hw);
    debug_assert_eq!(out.len(), cout * hw);
    debug_assert_eq!(weight.len(), cout * cin * 9);
    for o in 0..cout {
        let out_plane = &mut out[o * hw..(o + 1) * hw];
        out_plane.fill(bias[o]);
        for i in 0..cin {
            let in_plane = &input[i * hw..(i + 1) * hw];
            let taps = &weight[(o * cin + i) * 9..(o * cin + i + 1) * 9];
            for (t, &wv) in taps.iter().enumerate() {
                if wv == T::zero() {
                    continue;
                }
                let dy = (t / 3) as isize - 1;
                let dx = (t % 3) as isize - 1;
                let (y0, y1) = row_range(height, dy);
                let (x0, x1) = col_range(width, dx);
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let src = &in_plane[sy * width..(sy + 1) * width];
                    let dst = &mut out_plane[y * width..(y + 1) * width];
                    let sx0 = (x0 as isize + dx) as usize;
                    let src = &src[sx0..sx0 + (x1 - x0)];
                    for (d, &s) in dst[x0..x1].iter_mut().zip(src) {
                        *d = *d + wv * s;
                    }
                }
            }
        }
    }
}

/// Accumulates parameter gradients and, when requested, the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    input: &[T],
    cin: usize,
    height: usize,
    width: usize,
    weight: &[T],
    grad_out: &[T],
    cout: usize,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    mut grad_input: Option<&mut [T]>,
) {
    let hw = height * width;
    for o in 0..cout {
        let go = &grad_out[o * hw..(o + 1) * hw];
        grad_bias[o] = grad_bias[o] + go.iter().copied().sum::<T>();
        for i in 0..cin {
            let in_plane = &input[i * hw..(i + 1) * hw];
            let base = (o * cin + i) * 9;
            for t in 0..9 {
                let dy = (t / 3) as isize - 1;
                let dx = (t % 3) as isize - 1;
                let (y0, y1) = row_range(height, dy);
                let (x0, x1) = col_range(width, dx);
                let sx0 = (x0 as isize + dx) as usize;
                let n = x1 - x0;
                let wv = weight[base + t];
                let mut acc = T::zero();
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let g = &go[y * width + x0..y * width + x1];
                    let s = &in_plane[sy * width + sx0..sy * width + sx0 + n];
                    acc = acc + g.iter().zip(s).map(|(&a, &b)| a * b).sum::<T>();
                    if let Some(gi) = grad_input.as_deref_mut() {
                        if wv != T::zero() {
                            let gi_row =
                                &mut gi[i * hw + sy * width + sx0..i * hw + sy * width + sx0 + n];
                            for (d, &a) in gi_row.iter_mut().zip(g) {
                                *d = *d + wv * a;
                            }
                        }
                    }
                }
                grad_weight[base + t] = grad_weight[base + t] + acc;
            }
        }
    }
}
