//! Per-sample forward/backward kernels. Feature maps are HWC, conv weights
//! are `[kh, kw, in, out]`, dense weights are `[out, in]`.

use super::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl MapShape {
    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub input: MapShape,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(input: MapShape, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            kernel,
            stride,
            pad,
            input,
            weight: Tensor::zeros(vec![kernel, kernel, input.c, out_channels]),
            bias: Tensor::zeros(vec![out_channels]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.bias.len()
    }

    pub fn output(&self) -> MapShape {
        let o = |n: usize| (n + 2 * self.pad - self.kernel) / self.stride + 1;
        MapShape {
            h: o(self.input.h),
            w: o(self.input.w),
            c: self.out_channels(),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.kernel * self.kernel * self.input.c
    }

    /// Input coordinate for output position `o` and kernel tap `k`, if inside.
    #[inline]
    fn tap(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (0..extent as isize).contains(&i).then_some(i as usize)
    }

    pub fn forward(&self, x: &[T], y: &mut [T]) {
        let (inp, out) = (self.input, self.output());
        let (cin, cout) = (inp.c, out.c);
        let w = self.weight.data();
        for oy in 0..out.h {
            for ox in 0..out.w {
                let yo = &mut y[(oy * out.w + ox) * cout..][..cout];
                yo.copy_from_slice(self.bias.data());
                for ky in 0..self.kernel {
                    let Some(iy) = self.tap(oy, ky, inp.h) else { continue };
                    for kx in 0..self.kernel {
                        let Some(ix) = self.tap(ox, kx, inp.w) else { continue };
                        let xi = &x[(iy * inp.w + ix) * cin..][..cin];
                        let wk = &w[(ky * self.kernel + kx) * cin * cout..][..cin * cout];
                        for (ci, &xv) in xi.iter().enumerate() {
                            let wr = &wk[ci * cout..][..cout];
                            for (acc, &wv) in yo.iter_mut().zip(wr) {
                                *acc = *acc + xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients into `gw`/`gb`; writes the input
    /// gradient into `dx` when given.
    pub fn backward(&self, x: &[T], dy: &[T], gw: &mut [T], gb: &mut [T], mut dx: Option<&mut [T]>) {
        let (inp, out) = (self.input, self.output());
        let (cin, cout) = (inp.c, out.c);
        let w = self.weight.data();
        if let Some(dx) = dx.as_deref_mut() {
            dx.fill(T::zero());
        }
        for oy in 0..out.h {
            for ox in 0..out.w {
                let g = &dy[(oy * out.w + ox) * cout..][..cout];
                for (b, &gv) in gb.iter_mut().zip(g) {
                    *b = *b + gv;
                }
                for ky in 0..self.kernel {
                    let Some(iy) = self.tap(oy, ky, inp.h) else { continue };
                    for kx in 0..self.kernel {
                        let Some(ix) = self.tap(ox, kx, inp.w) else { continue };
                        let base = (iy * inp.w + ix) * cin;
                        let koff = (ky * self.kernel + kx) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[base + ci];
                            let gwr = &mut gw[koff + ci * cout..][..cout];
                            for (acc, &gv) in gwr.iter_mut().zip(g) {
                                *acc = *acc + xv * gv;
                            }
                            if let Some(dx) = dx.as_deref_mut() {
                                let wr = &w[koff + ci * cout..][..cout];
                                dx[base + ci] = dx[base + ci] + dot(wr, g);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Tensor::zeros(vec![outputs, inputs]),
            bias: Tensor::zeros(vec![outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[T], y: &mut [T]) {
        let n = self.inputs();
        for ((yo, row), &b) in y
            .iter_mut()
            .zip(self.weight.data().chunks_exact(n))
            .zip(self.bias.data())
        {
            *yo = b + dot(row, x);
        }
    }

    pub fn backward(&self, x: &[T], dy: &[T], gw: &mut [T], gb: &mut [T], dx: Option<&mut [T]>) {
        let n = self.inputs();
        for (b, &g) in gb.iter_mut().zip(dy) {
            *b = *b + g;
        }
        for (gr, &g) in gw.chunks_exact_mut(n).zip(dy) {
            if g == T::zero() {
                continue;
            }
            for (acc, &v) in gr.iter_mut().zip(x) {
                *acc = *acc + g * v;
            }
        }
        if let Some(dx) = dx {
            dx.fill(T::zero());
            for (row, &g) in self.weight.data().chunks_exact(n).zip(dy) {
                if g == T::zero() {
                    continue;
                }
                for (d, &w) in dx.iter_mut().zip(row) {
                    *d = *d + g * w;
                }
            }
        }
    }
}

/// Dot product with eight independent partial sums so the loop vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub fn relu_forward<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `dy` in place by the ReLU output `y` (gradient 0 at the kink).
pub fn relu_backward<T: Scalar>(y: &[T], dy: &mut [T]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
