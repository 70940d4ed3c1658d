//! NHWC convolution with "same" zero padding and floor-division output extents.
//!
//! Kernels are laid out `[Cin, K, K, Cout]`. The output extent along each
//! spatial axis is `extent / stride`; output position `o` reads input rows
//! `o * stride + k - K/2` for `k in 0..K`, zero outside the image.

use rayon::prelude::*;

use super::gemm::{gemm, Layout};
use super::Tensor;
use crate::error::{Error, Result};

/// Spatial output extent of a convolution: floor division by the stride.
pub fn conv_output_extent(extent: usize, stride: usize) -> usize {
    extent / stride
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], bias: &[usize], stride: usize) -> Result<Self> {
        if stride < 1 {
            return Err(Error::invalid("conv2d: stride must be at least 1"));
        }
        let (&[n, h, w, cin], &[kcin, k, k2, cout]) = (input, kernel) else {
            return Err(Error::ShapeMismatch {
                op: "conv2d (expected rank-4 input and kernel)",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        };
        if kcin != cin || k != k2 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        if bias != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: kernel.to_vec(),
                rhs: bias.to_vec(),
            });
        }
        let pad = k / 2;
        if k == 0 || k > h + 2 * pad || k > w + 2 * pad {
            return Err(Error::ShapeMismatch {
                op: "conv2d (kernel larger than padded input)",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        let ho = conv_output_extent(h, stride);
        let wo = conv_output_extent(w, stride);
        if ho == 0 || wo == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv2d (empty output)",
                lhs: input.to_vec(),
                rhs: vec![stride],
            });
        }
        Ok(Self {
            n,
            h,
            w,
            cin,
            k,
            cout,
            stride,
            pad,
            ho,
            wo,
        })
    }

    pub fn positions(&self) -> usize {
        self.n * self.ho * self.wo
    }

    pub fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.n, self.ho, self.wo, self.cout]
    }

    /// Input offset read by output `(n, oy, ox)` for tap `(ky, kx)`, if inside.
    #[inline]
    fn source(&self, n: usize, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad)?;
        (iy < self.h && ix < self.w).then(|| ((n * self.h + iy) * self.w + ix) * self.cin)
    }
}

/// Unfolds the input into a `[positions, Cin*K*K]` patch matrix whose column
/// order `(ci, ky, kx)` matches the kernel's row-major `[Cin, K, K]` prefix.
fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let patch = g.patch_len();
    let mut cols = vec![0.0; g.positions() * patch];
    let kk = g.k * g.k;
    cols.par_chunks_mut(patch)
        .enumerate()
        .for_each(|(row, dst)| {
            let ox = row % g.wo;
            let oy = (row / g.wo) % g.ho;
            let n = row / (g.wo * g.ho);
            for ky in 0..g.k {
                for kx in 0..g.k {
                    if let Some(src) = g.source(n, oy, ox, ky, kx) {
                        let tap = ky * g.k + kx;
                        for ci in 0..g.cin {
                            dst[ci * kk + tap] = input[src + ci];
                        }
                    }
                }
            }
        });
    cols
}

/// Scatters patch-matrix gradients back onto the input (fixed row order).
fn col2im_add(cols: &[f64], g: &ConvGeometry, dinput: &mut [f64]) {
    let patch = g.patch_len();
    let kk = g.k * g.k;
    for (row, src) in cols.chunks_exact(patch).enumerate() {
        let ox = row % g.wo;
        let oy = (row / g.wo) % g.ho;
        let n = row / (g.wo * g.ho);
        for ky in 0..g.k {
            for kx in 0..g.k {
                if let Some(dst) = g.source(n, oy, ox, ky, kx) {
                    let tap = ky * g.k + kx;
                    for ci in 0..g.cin {
                        dinput[dst + ci] += src[ci * kk + tap];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
) -> Result<(Tensor, ConvGeometry)> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), bias.shape(), stride)?;
    let cols = im2col(input.data(), &g);
    let mut out = vec![0.0; g.positions() * g.cout];
    for row in out.chunks_exact_mut(g.cout) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        g.positions(),
        g.patch_len(),
        g.cout,
        1.0,
        &cols,
        Layout::Plain,
        kernel.data(),
        Layout::Plain,
        1.0,
        &mut out,
    );
    Ok((Tensor::new(g.output_shape(), out)?, g))
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    g: &ConvGeometry,
    dout: &[f64],
    want_input: bool,
) -> ConvGrads {
    let cols = im2col(input.data(), g);
    let mut dkernel = vec![0.0; g.patch_len() * g.cout];
    gemm(
        g.patch_len(),
        g.positions(),
        g.cout,
        1.0,
        &cols,
        Layout::Transposed,
        dout,
        Layout::Plain,
        0.0,
        &mut dkernel,
    );
    let mut dbias = vec![0.0; g.cout];
    for row in dout.chunks_exact(g.cout) {
        dbias.iter_mut().zip(row).for_each(|(b, d)| *b += d);
    }
    let dinput = want_input.then(|| {
        let mut dcols = cols;
        gemm(
            g.positions(),
            g.cout,
            g.patch_len(),
            1.0,
            dout,
            Layout::Plain,
            kernel.data(),
            Layout::Transposed,
            0.0,
            &mut dcols,
        );
        let mut dinput = vec![0.0; input.len()];
        col2im_add(&dcols, g, &mut dinput);
        dinput
    });
    ConvGrads {
        input: dinput,
        kernel: dkernel,
        bias: dbias,
    }
}
