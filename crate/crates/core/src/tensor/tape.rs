//! Reverse-mode autodiff over a linear tape.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order. Parameters are borrowed, not copied, and are tagged
//! with a slot number; [`Gradients::accumulate_into`] adds the computed
//! gradients into the matching tensors' `grad` buffers.

use super::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use super::gemm::{gemm, Layout};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'a> {
    Owned(Tensor),
    Borrowed(&'a Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geometry: ConvGeometry,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    Reshape(Var),
    Sum(Var),
    Scale(Var, f64),
    Add(Var, Var),
    SumSquares {
        inputs: Vec<Var>,
        weight: f64,
    },
    /// Scalar-valued function whose gradient w.r.t. its input was computed
    /// during the forward pass.
    ScalarFn {
        input: Var,
        local_grad: Vec<f64>,
    },
}

struct Node<'a> {
    value: Value<'a>,
    op: Op,
    needs_grad: bool,
    slot: Option<usize>,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value<'a>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            slot: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.get()
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Value::Owned(t), Op::Leaf, false)
    }

    /// A borrowed input that never receives a gradient.
    pub fn input(&mut self, t: &'a Tensor) -> Var {
        self.push(Value::Borrowed(t), Op::Leaf, false)
    }

    /// An owned leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(Value::Owned(t), Op::Leaf, true)
    }

    /// A borrowed trainable parameter; `slot` is its index in the parameter list.
    pub fn param(&mut self, slot: usize, t: &'a Tensor) -> Var {
        let v = self.push(Value::Borrowed(t), Op::Leaf, true);
        self.nodes[v.0].slot = Some(slot);
        v
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let (out, geometry) = conv2d_forward(
            self.value(input),
            self.value(kernel),
            self.value(bias),
            stride,
        )?;
        let needs = self.needs(input) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(
            Value::Owned(out),
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            },
            needs,
        ))
    }

    /// `input [N, Din] x weight [Din, Dout] + bias [Dout]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (&[n, din], &[wdin, dout]) = (x.shape(), w.shape()) else {
            return Err(Error::ShapeMismatch {
                op: "dense (expected rank-2 input and weight)",
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        };
        if din != wdin {
            return Err(Error::ShapeMismatch {
                op: "dense",
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        if b.shape() != [dout] {
            return Err(Error::ShapeMismatch {
                op: "dense bias",
                lhs: w.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; n * dout];
        for row in out.chunks_exact_mut(dout) {
            row.copy_from_slice(b.data());
        }
        gemm(
            n,
            din,
            dout,
            1.0,
            x.data(),
            Layout::Plain,
            w.data(),
            Layout::Plain,
            1.0,
            &mut out,
        );
        let out = Tensor::new(vec![n, dout], out)?;
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            Value::Owned(out),
            Op::Dense {
                input,
                weight,
                bias,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(Value::Owned(out), Op::Relu(x), needs)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(Value::Owned(out), Op::Reshape(x), needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Value::Owned(Tensor::scalar(total)), Op::Sum(x), needs)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(Value::Owned(out), Op::Scale(x, factor), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Value::Owned(out), Op::Add(a, b), needs))
    }

    /// `weight * sum over inputs of sum(x^2)`.
    pub fn l2_penalty(&mut self, inputs: &[Var], weight: f64) -> Result<Var> {
        if !(weight >= 0.0) {
            return Err(Error::invalid(format!(
                "l2 penalty weight must be nonnegative, got {weight}"
            )));
        }
        let tensors: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let total = super::l2_penalty_value(&tensors, weight);
        let needs = weight != 0.0 && inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Value::Owned(Tensor::scalar(total)),
            Op::SumSquares {
                inputs: inputs.to_vec(),
                weight,
            },
            needs,
        ))
    }

    /// Records a scalar function of `input` whose value and input-gradient were
    /// computed externally (used by the point-cloud losses).
    pub fn scalar_fn(&mut self, input: Var, value: f64, local_grad: Vec<f64>) -> Result<Var> {
        if local_grad.len() != self.value(input).len() {
            return Err(Error::ShapeMismatch {
                op: "scalar_fn gradient",
                lhs: self.value(input).shape().to_vec(),
                rhs: vec![local_grad.len()],
            });
        }
        let needs = self.needs(input);
        Ok(self.push(
            Value::Owned(Tensor::scalar(value)),
            Op::ScalarFn { input, local_grad },
            needs,
        ))
    }

    /// Propagates d(loss)/d(node) to every node that needs a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward (loss must be scalar)",
                lhs: loss_value.shape().to_vec(),
                rhs: Vec::new(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(upstream);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    geometry,
                } => {
                    let cg = conv2d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        geometry,
                        &upstream,
                        self.needs(*input),
                    );
                    if let Some(di) = cg.input {
                        accumulate(&mut grads, *input, &di);
                    }
                    self.accumulate_if(&mut grads, *kernel, &cg.kernel);
                    self.accumulate_if(&mut grads, *bias, &cg.bias);
                }
                Op::Dense {
                    input,
                    weight,
                    bias,
                } => {
                    let x = self.value(*input);
                    let w = self.value(*weight);
                    let (n, din, dout) = (x.shape()[0], x.shape()[1], w.shape()[1]);
                    if self.needs(*weight) {
                        let mut dw = vec![0.0; din * dout];
                        gemm(
                            din,
                            n,
                            dout,
                            1.0,
                            x.data(),
                            Layout::Transposed,
                            &upstream,
                            Layout::Plain,
                            0.0,
                            &mut dw,
                        );
                        accumulate(&mut grads, *weight, &dw);
                    }
                    if self.needs(*bias) {
                        let mut db = vec![0.0; dout];
                        for row in upstream.chunks_exact(dout) {
                            db.iter_mut().zip(row).for_each(|(b, d)| *b += d);
                        }
                        accumulate(&mut grads, *bias, &db);
                    }
                    if self.needs(*input) {
                        let mut dx = vec![0.0; n * din];
                        gemm(
                            n,
                            dout,
                            din,
                            1.0,
                            &upstream,
                            Layout::Plain,
                            w.data(),
                            Layout::Transposed,
                            0.0,
                            &mut dx,
                        );
                        accumulate(&mut grads, *input, &dx);
                    }
                }
                Op::Relu(x) => {
                    let dx: Vec<f64> = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(&upstream)
                        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, &upstream),
                Op::Sum(x) => {
                    let dx = vec![upstream[0]; self.value(*x).len()];
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Scale(x, factor) => {
                    let dx: Vec<f64> = upstream.iter().map(|g| g * factor).collect();
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Add(a, b) => {
                    self.accumulate_if(&mut grads, *a, &upstream);
                    self.accumulate_if(&mut grads, *b, &upstream);
                }
                Op::SumSquares { inputs, weight } => {
                    let coeff = 2.0 * weight * upstream[0];
                    for &v in inputs {
                        if self.needs(v) {
                            let dx: Vec<f64> =
                                self.value(v).data().iter().map(|x| coeff * x).collect();
                            accumulate(&mut grads, v, &dx);
                        }
                    }
                }
                Op::ScalarFn { input, local_grad } => {
                    let dx: Vec<f64> = local_grad.iter().map(|g| g * upstream[0]).collect();
                    accumulate(&mut grads, *input, &dx);
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.slot.map(|s| (s, Var(i))))
            .collect();
        Ok(Gradients {
            per_node: grads,
            params,
        })
    }

    fn accumulate_if(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
        if self.needs(v) {
            accumulate(grads, v, delta);
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
    match &mut grads[v.0] {
        Some(g) => g.iter_mut().zip(delta).for_each(|(g, d)| *g += d),
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

/// Result of [`Tape::backward`]: gradients for every leaf that needed one.
pub struct Gradients {
    per_node: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf (`None` if unreachable).
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.per_node.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds each parameter gradient into `params[slot].grad`. Parameters that
    /// were on the tape but unreachable from the loss receive zeros.
    pub fn accumulate_into(&self, params: &mut [Tensor]) -> Result<()> {
        for &(slot, var) in &self.params {
            let param = params.get_mut(slot).ok_or_else(|| {
                Error::invalid(format!("gradient slot {slot} outside parameter list"))
            })?;
            match self.wrt(var) {
                Some(g) => param.accumulate_grad(g)?,
                None => {
                    if param.grad().is_none() {
                        param.zero_grad();
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let mut tape = Tape::new();
        let v = tape.variable(x);
        let s = tape.sum(v);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(v).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn l2_gradient_is_twice_input() {
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.25]).unwrap();
        let mut tape = Tape::new();
        let v = tape.variable(x);
        let l = tape.l2_penalty(&[v], 1.0).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 1.0 + 4.0 + 0.0625);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(v).unwrap(), &[2.0, -4.0, 0.5]);
    }

    #[test]
    fn l2_rejects_negative_weight() {
        let mut tape = Tape::new();
        let v = tape.variable(Tensor::zeros(vec![1]));
        assert!(tape.l2_penalty(&[v], -1.0).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let v = tape.variable(Tensor::zeros(vec![3]));
        let r = tape.relu(v);
        assert!(matches!(
            tape.backward(r),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn relu_values_and_dead_region() {
        let mut tape = Tape::new();
        let v = tape.variable(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let r = tape.relu(v);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);

        let mut tape = Tape::new();
        let v = tape.variable(Tensor::full(vec![4], -3.0));
        let r = tape.relu(v);
        let s = tape.sum(r);
        assert_eq!(tape.value(r).data(), &[0.0; 4]);
        assert_eq!(tape.backward(s).unwrap().wrt(v).unwrap(), &[0.0; 4]);
    }

    #[test]
    fn dense_hand_computed() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let w = tape.constant(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::new(vec![1], vec![3.0]).unwrap());
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[6.0]);
    }

    #[test]
    fn dense_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![1, 3]));
        let w = tape.constant(Tensor::zeros(vec![2, 1]));
        let b = tape.constant(Tensor::zeros(vec![1]));
        let msg = tape.dense(x, w, b).unwrap_err().to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 1]"), "{msg}");
    }

    #[test]
    fn conv_affine_identity_case() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![1, 4, 4, 1], 1.0));
        let k = tape.constant(Tensor::full(vec![1, 1, 1, 1], 2.0));
        let b = tape.constant(Tensor::full(vec![1], 0.5));
        let y = tape.conv2d(x, k, b, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 4, 4, 1]);
        assert!(tape.value(y).data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn conv_rejects_bad_stride_and_channels() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![1, 4, 4, 2]));
        let k = tape.constant(Tensor::zeros(vec![3, 3, 3, 1]));
        let k_ok = tape.constant(Tensor::zeros(vec![2, 3, 3, 1]));
        let b = tape.constant(Tensor::zeros(vec![1]));
        let msg = tape.conv2d(x, k, b, 1).unwrap_err().to_string();
        assert!(msg.contains("[1, 4, 4, 2]") && msg.contains("[3, 3, 3, 1]"), "{msg}");
        assert!(matches!(
            tape.conv2d(x, k_ok, b, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn unreachable_params_get_zero_grads() {
        let a = Tensor::full(vec![2], 1.0);
        let b = Tensor::full(vec![2], 1.0);
        let grads = {
            let mut tape = Tape::new();
            let va = tape.param(0, &a);
            let _vb = tape.param(1, &b);
            let s = tape.sum(va);
            tape.backward(s).unwrap()
        };
        let mut params = vec![a.clone(), b.clone()];
        grads.accumulate_into(&mut params).unwrap();
        grads.accumulate_into(&mut params).unwrap();
        assert_eq!(params[0].grad().unwrap(), &[2.0, 2.0]);
        assert_eq!(params[1].grad().unwrap(), &[0.0, 0.0]);
    }
}
