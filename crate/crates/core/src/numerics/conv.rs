//! 3D convolution via im2col + GEMM.
//!
//! Layout is `C x T x H x W` for activations and
//! `C_out x C_in x kT x kH x kW` for kernels, no batch dimension.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dGeometry {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dGeometry {
    pub fn new(stride: [usize; 3], padding: [usize; 3]) -> Self {
        Self { stride, padding }
    }

    pub fn unit() -> Self {
        Self::new([1, 1, 1], [0, 0, 0])
    }
}

/// Resolved sizes of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvPlan {
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub geom: Conv3dGeometry,
}

impl ConvPlan {
    pub fn new(input: &[usize], kernel: &[usize], geom: Conv3dGeometry) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 5 {
            return Err(Error::invalid(
                "conv3d",
                format!("expected 4-d input and 5-d kernel, got {input:?} and {kernel:?}"),
            ));
        }
        if kernel[1] != input[0] {
            return Err(Error::Shape {
                op: "conv3d",
                expected: vec![kernel[0], input[0], kernel[2], kernel[3], kernel[4]],
                got: kernel.to_vec(),
            });
        }
        if geom.stride.contains(&0) {
            return Err(Error::invalid("conv3d", "strides must be at least 1"));
        }
        let mut output = [0; 3];
        for d in 0..3 {
            let padded = input[d + 1] + 2 * geom.padding[d];
            let k = kernel[d + 2];
            if k > padded {
                return Err(Error::invalid(
                    "conv3d",
                    format!("non-positive output dimension along axis {d}"),
                ));
            }
            output[d] = (padded - k) / geom.stride[d] + 1;
        }
        Ok(Self {
            c_in: input[0],
            c_out: kernel[0],
            input: [input[1], input[2], input[3]],
            kernel: [kernel[2], kernel[3], kernel[4]],
            output,
            geom,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.kernel.iter().product::<usize>()
    }

    pub fn out_positions(&self) -> usize {
        self.output.iter().product()
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.c_out, self.output[0], self.output[1], self.output[2]]
    }

    /// For one kernel offset along an axis, the range of output positions
    /// whose source coordinate lands inside the unpadded input.
    fn valid_range(&self, axis: usize, k: usize) -> (usize, usize) {
        let s = self.geom.stride[axis] as isize;
        let p = self.geom.padding[axis] as isize;
        let n = self.input[axis] as isize;
        let out = self.output[axis] as isize;
        let off = k as isize - p;
        // o * s + off in [0, n)
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = if n - off <= 0 {
            0
        } else {
            ((n - off - 1) / s + 1).min(out)
        };
        (lo.max(0) as usize, hi.max(lo.max(0)) as usize)
    }

    /// Unrolls the input into a `patch_len x out_positions` matrix.
    pub fn im2col<T: Scalar>(&self, input: &[T], cols: &mut [T]) {
        let [ti, hi, wi] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [_, ho, wo] = self.output;
        let [st, sh, sw] = self.geom.stride;
        let [pt, ph, pw] = self.geom.padding;
        let p = self.out_positions();
        cols.iter_mut().for_each(|v| *v = T::zero());
        let mut row = 0;
        for c in 0..self.c_in {
            let plane = &input[c * ti * hi * wi..(c + 1) * ti * hi * wi];
            for dt in 0..kt {
                let (t_lo, t_hi) = self.valid_range(0, dt);
                for dh in 0..kh {
                    let (h_lo, h_hi) = self.valid_range(1, dh);
                    for dw in 0..kw {
                        let (w_lo, w_hi) = self.valid_range(2, dw);
                        let dst = &mut cols[row * p..(row + 1) * p];
                        for o_t in t_lo..t_hi {
                            let it = o_t * st + dt - pt;
                            for o_h in h_lo..h_hi {
                                let ih = o_h * sh + dh - ph;
                                let src_base = (it * hi + ih) * wi;
                                let dst_base = (o_t * ho + o_h) * wo;
                                for o_w in w_lo..w_hi {
                                    dst[dst_base + o_w] = plane[src_base + o_w * sw + dw - pw];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Scatter-adds a column matrix back onto an input-shaped buffer.
    pub fn col2im<T: Scalar>(&self, cols: &[T], input: &mut [T]) {
        let [ti, hi, wi] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [_, ho, wo] = self.output;
        let [st, sh, sw] = self.geom.stride;
        let [pt, ph, pw] = self.geom.padding;
        let p = self.out_positions();
        let mut row = 0;
        for c in 0..self.c_in {
            let plane = &mut input[c * ti * hi * wi..(c + 1) * ti * hi * wi];
            for dt in 0..kt {
                let (t_lo, t_hi) = self.valid_range(0, dt);
                for dh in 0..kh {
                    let (h_lo, h_hi) = self.valid_range(1, dh);
                    for dw in 0..kw {
                        let (w_lo, w_hi) = self.valid_range(2, dw);
                        let src = &cols[row * p..(row + 1) * p];
                        for o_t in t_lo..t_hi {
                            let it = o_t * st + dt - pt;
                            for o_h in h_lo..h_hi {
                                let ih = o_h * sh + dh - ph;
                                let dst_base = (it * hi + ih) * wi;
                                let src_base = (o_t * ho + o_h) * wo;
                                for o_w in w_lo..w_hi {
                                    let d = &mut plane[dst_base + o_w * sw + dw - pw];
                                    *d = *d + src[src_base + o_w];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

/// Forward pass; returns the output and the im2col matrix for reuse in
/// the backward pass.
pub(crate) fn forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    geom: Conv3dGeometry,
) -> Result<(Tensor<T>, ConvPlan, Vec<T>)> {
    let plan = ConvPlan::new(input.shape(), kernel.shape(), geom)?;
    let k = plan.patch_len();
    let p = plan.out_positions();
    let mut cols = vec![T::zero(); k * p];
    plan.im2col(input.data(), &mut cols);
    let mut out = vec![T::zero(); plan.c_out * p];
    T::gemm(
        false,
        false,
        plan.c_out,
        p,
        k,
        T::one(),
        kernel.data(),
        &cols,
        T::zero(),
        &mut out,
    );
    let out = Tensor::new(&plan.output_shape(), out)?;
    Ok((out, plan, cols))
}

/// Kernel gradient `dOut · colsᵀ`.
pub(crate) fn kernel_grad<T: Scalar>(
    plan: &ConvPlan,
    cols: &[T],
    d_out: &[T],
    kernel_shape: &[usize],
) -> Tensor<T> {
    let k = plan.patch_len();
    let p = plan.out_positions();
    let mut dk = vec![T::zero(); plan.c_out * k];
    T::gemm(
        false,
        true,
        plan.c_out,
        k,
        p,
        T::one(),
        d_out,
        cols,
        T::zero(),
        &mut dk,
    );
    Tensor::new(kernel_shape, dk).expect("kernel gradient shape")
}

/// Input gradient `col2im(kernelᵀ · dOut)`.
pub(crate) fn input_grad<T: Scalar>(plan: &ConvPlan, kernel: &[T], d_out: &[T]) -> Tensor<T> {
    let k = plan.patch_len();
    let p = plan.out_positions();
    let mut dcols = vec![T::zero(); k * p];
    T::gemm(
        true,
        false,
        k,
        p,
        plan.c_out,
        T::one(),
        kernel,
        d_out,
        T::zero(),
        &mut dcols,
    );
    let [t, h, w] = plan.input;
    let mut dx = vec![T::zero(); plan.c_in * t * h * w];
    plan.col2im(&dcols, &mut dx);
    Tensor::new(&[plan.c_in, t, h, w], dx).expect("input gradient shape")
}

/// Stand-alone 3D convolution without gradient recording.
pub fn conv3d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<Tensor<T>> {
    forward(input, kernel, Conv3dGeometry::new(stride, padding)).map(|(out, _, _)| out)
}
