use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{relu_backward, relu_forward, sigmoid, Conv2d, Dense, MapShape};
use super::loss::{weighted_l1_grad, weighted_l1_loss};
use super::tensor::{Scalar, Tensor};
use crate::blendshape::NUM_HALF;
use crate::error::{Error, Result};

pub const DEFAULT_CONV_CHANNELS: [usize; 3] = [8, 16, 32];
pub const DEFAULT_HIDDEN: usize = 128;

/// Layer sizes of the regressor. Every conv is 3×3, stride 2, padding 1,
/// followed by ReLU; then dense(hidden) → ReLU → dense(outputs) → sigmoid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_h: usize,
    pub input_w: usize,
    pub input_c: usize,
    pub conv_channels: Vec<usize>,
    pub hidden: usize,
    pub outputs: usize,
}

impl Architecture {
    pub fn standard(input_h: usize, input_w: usize) -> Self {
        Architecture {
            input_h,
            input_w,
            input_c: 3,
            conv_channels: DEFAULT_CONV_CHANNELS.to_vec(),
            hidden: DEFAULT_HIDDEN,
            outputs: NUM_HALF,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_h * self.input_w * self.input_c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regressor<T = f32> {
    arch: Architecture,
    convs: Vec<Conv2d<T>>,
    hidden: Dense<T>,
    head: Dense<T>,
}

/// Gradients laid out like [`Regressor::params`].
pub type Gradients<T> = Vec<Vec<T>>;

/// Per-sample intermediate activations kept for the backward pass.
struct Trace<T> {
    conv_out: Vec<Vec<T>>,
    hidden_out: Vec<T>,
    output: Vec<T>,
}

impl<T: Scalar> Regressor<T> {
    /// All-zero parameters.
    pub fn zeroed(arch: Architecture) -> Result<Self> {
        if arch.input_h == 0 || arch.input_w == 0 || arch.input_c == 0 || arch.hidden == 0 || arch.outputs == 0 {
            return Err(Error::InvalidArgument(format!("degenerate architecture {arch:?}")));
        }
        let mut shape = MapShape {
            h: arch.input_h,
            w: arch.input_w,
            c: arch.input_c,
        };
        let mut convs = Vec::new();
        for &c in &arch.conv_channels {
            let conv = Conv2d::new(shape, c, 3, 2, 1);
            shape = conv.output();
            convs.push(conv);
        }
        let hidden = Dense::new(shape.len(), arch.hidden);
        let head = Dense::new(arch.hidden, arch.outputs);
        Ok(Regressor {
            arch,
            convs,
            hidden,
            head,
        })
    }

    /// Fan-in scaled uniform weights, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut m = Self::zeroed(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |t: &mut Tensor<T>, limit: f64| {
            for v in t.data_mut() {
                *v = T::of(rng.gen_range(-limit..limit));
            }
        };
        for c in &mut m.convs {
            let lim = (6.0 / c.fan_in() as f64).sqrt();
            fill(&mut c.weight, lim);
        }
        let lim = (6.0 / m.hidden.inputs() as f64).sqrt();
        fill(&mut m.hidden.weight, lim);
        let lim = (1.0 / m.head.inputs() as f64).sqrt();
        fill(&mut m.head.weight, lim);
        Ok(m)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    /// Named parameter tensors in a fixed order.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), &c.weight));
            out.push((format!("conv{}.bias", i + 1), &c.bias));
        }
        out.push(("dense1.weight".into(), &self.hidden.weight));
        out.push(("dense1.bias".into(), &self.hidden.bias));
        out.push(("dense2.weight".into(), &self.head.weight));
        out.push(("dense2.bias".into(), &self.head.bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.hidden.weight);
        out.push(&mut self.hidden.bias);
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        self.params().iter().map(|(_, t)| vec![T::zero(); t.len()]).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Regressor<U> {
        let mut out = Regressor::<U>::zeroed(self.arch.clone()).expect("valid architecture");
        for ((_, src), dst) in self.params().into_iter().zip(out.params_mut()) {
            *dst = src.cast();
        }
        out
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize> {
        let a = &self.arch;
        let expected = [batch.shape()[0], a.input_h, a.input_w, a.input_c];
        if batch.shape() != expected {
            return Err(Error::ShapeMismatch {
                expected: vec![0, a.input_h, a.input_w, a.input_c],
                found: batch.shape().to_vec(),
            });
        }
        Ok(batch.shape()[0])
    }

    fn trace(&self, x: &[T]) -> Trace<T> {
        let mut conv_out: Vec<Vec<T>> = Vec::with_capacity(self.convs.len());
        for (i, c) in self.convs.iter().enumerate() {
            let input = if i == 0 { x } else { &conv_out[i - 1] };
            let mut y = vec![T::zero(); c.output().len()];
            c.forward(input, &mut y);
            relu_forward(&mut y);
            conv_out.push(y);
        }
        let flat = conv_out.last().map_or(x, Vec::as_slice);
        let mut hidden_out = vec![T::zero(); self.hidden.outputs()];
        self.hidden.forward(flat, &mut hidden_out);
        relu_forward(&mut hidden_out);
        let mut output = vec![T::zero(); self.head.outputs()];
        self.head.forward(&hidden_out, &mut output);
        output.iter_mut().for_each(|v| *v = sigmoid(*v));
        Trace {
            conv_out,
            hidden_out,
            output,
        }
    }

    /// Network output for one HWC image.
    pub fn forward_one(&self, image: &[T]) -> Result<Vec<T>> {
        if image.len() != self.arch.input_len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.arch.input_h, self.arch.input_w, self.arch.input_c],
                found: vec![image.len()],
            });
        }
        Ok(self.trace(image).output)
    }

    /// `[N, h, w, c]` → `[N, outputs]`.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check_batch(batch)?;
        let mut out = Vec::with_capacity(n * self.arch.outputs);
        for x in batch.rows() {
            out.extend(self.trace(x).output);
        }
        Tensor::new(vec![n, self.arch.outputs], out)
    }

    /// Accumulates the gradient of `sum(output * d_out)` for one sample,
    /// where `d_out` is the loss gradient w.r.t. the sigmoid outputs.
    fn backprop(&self, x: &[T], tr: &Trace<T>, d_out: &[T], grads: &mut Gradients<T>) {
        let nconv = self.convs.len();
        let (gi_hidden, gi_head) = (2 * nconv, 2 * nconv + 2);

        let mut dz: Vec<T> = d_out
            .iter()
            .zip(&tr.output)
            .map(|(&g, &p)| g * p * (T::one() - p))
            .collect();
        let mut dh = vec![T::zero(); self.hidden.outputs()];
        {
            let (gw, rest) = grads[gi_head..].split_at_mut(1);
            self.head.backward(&tr.hidden_out, &dz, &mut gw[0], &mut rest[0], Some(&mut dh));
        }
        relu_backward(&tr.hidden_out, &mut dh);

        let flat = tr.conv_out.last().map_or(x, Vec::as_slice);
        let mut dflat = vec![T::zero(); flat.len()];
        {
            let (gw, rest) = grads[gi_hidden..].split_at_mut(1);
            let want_dx = nconv > 0;
            self.hidden.backward(
                flat,
                &dh,
                &mut gw[0],
                &mut rest[0],
                if want_dx { Some(&mut dflat) } else { None },
            );
        }
        dz = dflat;
        for i in (0..nconv).rev() {
            relu_backward(&tr.conv_out[i], &mut dz);
            let input = if i == 0 { x } else { &tr.conv_out[i - 1] };
            let mut dx = if i > 0 { vec![T::zero(); input.len()] } else { Vec::new() };
            let (gw, rest) = grads[2 * i..].split_at_mut(1);
            self.convs[i].backward(
                input,
                &dz,
                &mut gw[0],
                &mut rest[0],
                if i > 0 { Some(&mut dx) } else { None },
            );
            dz = dx;
        }
    }

    /// Mean weighted-L1 loss over the batch and its exact gradient.
    pub fn loss_and_gradients(
        &self,
        batch: &Tensor<T>,
        labels: &Tensor<T>,
        loss_base: f64,
    ) -> Result<(T, Gradients<T>)> {
        let n = self.check_batch(batch)?;
        if labels.shape() != [n, self.arch.outputs] {
            return Err(Error::ShapeMismatch {
                expected: vec![n, self.arch.outputs],
                found: labels.shape().to_vec(),
            });
        }
        let traces: Vec<Trace<T>> = batch.rows().map(|x| self.trace(x)).collect();
        let preds = Tensor::new(
            vec![n, self.arch.outputs],
            traces.iter().flat_map(|t| t.output.iter().copied()).collect(),
        )?;
        let loss = weighted_l1_loss(&preds, labels, loss_base)?;
        let d_out = weighted_l1_grad(&preds, labels, loss_base)?;
        let mut grads = self.zero_gradients();
        for ((x, tr), g) in batch.rows().zip(&traces).zip(d_out.rows()) {
            self.backprop(x, tr, g, &mut grads);
        }
        Ok((loss, grads))
    }

    pub fn gradients(&self, batch: &Tensor<T>, labels: &Tensor<T>, loss_base: f64) -> Result<Gradients<T>> {
        self.loss_and_gradients(batch, labels, loss_base).map(|(_, g)| g)
    }

    pub fn loss(&self, batch: &Tensor<T>, labels: &Tensor<T>, loss_base: f64) -> Result<T> {
        weighted_l1_loss(&self.forward(batch)?, labels, loss_base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> Architecture {
        Architecture::standard(8, 8)
    }

    fn batch<T: Scalar>(n: usize, arch: &Architecture, seed: u64) -> Tensor<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * arch.input_len()).map(|_| T::of(rng.gen::<f64>())).collect();
        Tensor::new(vec![n, arch.input_h, arch.input_w, arch.input_c], data).unwrap()
    }

    #[test]
    fn forward_matches_stored_fixture() {
        let m = Regressor::<f32>::init(Architecture::standard(16, 16), 42).unwrap();
        let x: Vec<f32> = (0..16 * 16 * 3).map(|i| ((i * 37 % 101) as f32) / 100.0).collect();
        let y = m.forward_one(&x).unwrap();
        let expected = [
            0.47380814, 0.5126694, 0.45614058, 0.381922, 0.53554326, 0.51678544, 0.5931634, 0.5423597, 0.5779305,
            0.52444047, 0.4943585, 0.5000924, 0.53238964, 0.49757558, 0.4667364, 0.52394754, 0.47523102, 0.4633803,
            0.4710816, 0.5016669, 0.41789463, 0.51378524, 0.47365052, 0.5738808, 0.38054246, 0.47198516, 0.5364272,
            0.52957076, 0.44833106, 0.48470065, 0.51848894, 0.46418718, 0.568919, 0.5107068,
        ];
        for (a, b) in y.iter().zip(expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = Regressor::<f32>::zeroed(Architecture::standard(64, 64)).unwrap();
        let x = Tensor::zeros(vec![2, 64, 64, 3]);
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 34]);
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn batch_rows_are_independent() {
        let arch = small_arch();
        let m = Regressor::<f32>::init(arch.clone(), 3).unwrap();
        let one = batch::<f32>(1, &arch, 9);
        let mut two = one.data().to_vec();
        two.extend_from_slice(one.data());
        let two = Tensor::new(vec![2, 8, 8, 3], two).unwrap();
        let y = m.forward(&two).unwrap();
        assert_eq!(y.row(0), y.row(1));
        assert_eq!(y.row(0), m.forward(&one).unwrap().row(0));
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let m = Regressor::<f32>::init(small_arch(), 3).unwrap();
        let bad = Tensor::zeros(vec![1, 8, 9, 3]);
        assert!(matches!(m.forward(&bad), Err(Error::ShapeMismatch { .. })));
        let x = Tensor::zeros(vec![1, 8, 8, 3]);
        let y = Tensor::zeros(vec![1, 33]);
        assert!(m.gradients(&x, &y, 50.0).is_err());
    }

    #[test]
    fn outputs_strictly_inside_unit_interval() {
        let arch = small_arch();
        for seed in 0..5 {
            let m = Regressor::<f32>::init(arch.clone(), seed).unwrap();
            let y = m.forward(&batch(4, &arch, seed + 100)).unwrap();
            assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let arch = small_arch();
        let m = Regressor::<f64>::init(arch.clone(), 1).unwrap();
        let x = batch::<f64>(3, &arch, 2);
        let labels = m.forward(&x).unwrap();
        let g = m.gradients(&x, &labels, 50.0).unwrap();
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let arch = small_arch();
        let m = Regressor::<f64>::init(arch.clone(), 5).unwrap();
        let x = batch::<f64>(3, &arch, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = Tensor::new(vec![3, 34], (0..102).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let dup = |t: &Tensor<f64>| {
            let mut s = t.shape().to_vec();
            s[0] *= 2;
            let mut d = t.data().to_vec();
            d.extend_from_slice(t.data());
            Tensor::new(s, d).unwrap()
        };
        let g1 = m.gradients(&x, &y, 50.0).unwrap();
        let g2 = m.gradients(&dup(&x), &dup(&y), 50.0).unwrap();
        for (a, b) in g1.iter().flatten().zip(g2.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-3));
        }
    }

    #[test]
    fn cast_round_trip_preserves_f32_params() {
        let m = Regressor::<f32>::init(small_arch(), 8).unwrap();
        assert_eq!(m.cast::<f64>().cast::<f32>(), m);
    }

    #[test]
    fn param_layout() {
        let m = Regressor::<f32>::init(Architecture::standard(64, 64), 0).unwrap();
        let shapes: Vec<(String, Vec<usize>)> =
            m.params().iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
        assert_eq!(shapes[0], ("conv1.weight".into(), vec![3, 3, 3, 8]));
        assert_eq!(shapes[4], ("conv3.weight".into(), vec![3, 3, 16, 32]));
        assert_eq!(shapes[6], ("dense1.weight".into(), vec![128, 8 * 8 * 32]));
        assert_eq!(shapes[8], ("dense2.weight".into(), vec![34, 128]));
    }
}
