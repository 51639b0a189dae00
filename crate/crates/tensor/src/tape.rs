//! Operation tape and reverse-mode gradients.
//!
//! A [`Tape`] is built fresh for each forward pass. Every operation appends
//! a node holding its output value and the handles of its inputs, so node
//! order is a topological order by construction. [`Tape::backward`] walks
//! the nodes once in reverse and sums gradients for values with several
//! consumers, which is what makes a weight tensor reused at many sites
//! receive the total of its per-site gradients.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::conv::{self, ConvSpec};
use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    /// Position of the value on its tape.
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        spec: ConvSpec,
    },
    TransposedConv2d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        stride: usize,
    },
    LeakyRelu {
        input: usize,
        slope: T,
    },
    PixelShuffle {
        input: usize,
        scale: usize,
    },
    PixelUnshuffle {
        input: usize,
        scale: usize,
    },
    Add {
        a: usize,
        b: usize,
        broadcast: bool,
    },
    Sub {
        a: usize,
        b: usize,
        broadcast: bool,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        input: usize,
        factor: T,
    },
    Sum {
        input: usize,
    },
    Mean {
        input: usize,
    },
    Charbonnier {
        input: usize,
    },
    BinarizeSte {
        input: usize,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::TransposedConv2d { .. } => "transposed_conv2d",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::PixelShuffle { .. } => "pixel_shuffle",
            Op::PixelUnshuffle { .. } => "pixel_unshuffle",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "subtract",
            Op::Mul { .. } => "multiply",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Charbonnier { .. } => "charbonnier",
            Op::BinarizeSte { .. } => "binarize_ste",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed operations.
pub struct Tape<T: Real = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Enables or disables the non-finite output check on every operation.
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    /// Records a value that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    /// Records a trainable leaf; [`Tape::backward`] returns its gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        assert_eq!(var.tape, self.id, "variable belongs to another tape");
        &self.nodes[var.index].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[self.idx(var).expect("own variable")].requires_grad
    }

    /// Number of recorded values (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded non-leaf operations.
    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|n| !matches!(n.op, Op::Leaf)).count()
    }

    fn idx(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(TensorError::Usage(format!(
                "variable {} does not belong to this tape",
                var.index
            )));
        }
        Ok(var.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let (i, k) = (self.idx(input)?, self.idx(kernel)?);
        let b = bias.map(|b| self.idx(b)).transpose()?;
        let out = conv::conv2d(
            &self.nodes[i].value,
            &self.nodes[k].value,
            b.map(|b| &self.nodes[b].value),
            spec,
        )?;
        let mut inputs = vec![i, k];
        inputs.extend(b);
        self.push(out, Op::Conv2d { input: i, kernel: k, bias: b, spec }, &inputs)
    }

    pub fn transposed_conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let (i, k) = (self.idx(input)?, self.idx(kernel)?);
        let b = bias.map(|b| self.idx(b)).transpose()?;
        let out = conv::transposed_conv2d(
            &self.nodes[i].value,
            &self.nodes[k].value,
            b.map(|b| &self.nodes[b].value),
            stride,
        )?;
        let mut inputs = vec![i, k];
        inputs.extend(b);
        self.push(
            out,
            Op::TransposedConv2d {
                input: i,
                kernel: k,
                bias: b,
                stride,
            },
            &inputs,
        )
    }

    /// Elementwise `max(x, p*x)` for `0 <= p < 1`.
    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Result<Var> {
        if !(slope >= T::zero() && slope < T::one()) {
            return Err(TensorError::argument("leaky_relu", format!("slope {slope} outside [0, 1)")));
        }
        let i = self.idx(input)?;
        let out = self.nodes[i].value.map(|v| if v > T::zero() { v } else { slope * v });
        self.push(out, Op::LeakyRelu { input: i, slope }, &[i])
    }

    pub fn pixel_shuffle(&mut self, input: Var, scale: usize) -> Result<Var> {
        let i = self.idx(input)?;
        let out = conv::pixel_shuffle(&self.nodes[i].value, scale)?;
        self.push(out, Op::PixelShuffle { input: i, scale }, &[i])
    }

    pub fn pixel_unshuffle(&mut self, input: Var, scale: usize) -> Result<Var> {
        let i = self.idx(input)?;
        let out = conv::pixel_unshuffle(&self.nodes[i].value, scale)?;
        self.push(out, Op::PixelUnshuffle { input: i, scale }, &[i])
    }

    /// Returns whether `b` broadcasts over the batch axis of `a`.
    fn broadcast_kind(&self, op: &'static str, a: usize, b: usize) -> Result<bool> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa == sb {
            return Ok(false);
        }
        if sa.len() == sb.len() && sb[0] == 1 && sa[1..] == sb[1..] {
            return Ok(true);
        }
        Err(TensorError::shape(op, format!("cannot broadcast {sb:?} onto {sa:?}")))
    }

    fn binary_broadcast(&self, a: usize, b: usize, broadcast: bool, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        let nb = tb.len();
        let data = if broadcast {
            ta.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, tb.data()[i % nb]))
                .collect()
        } else {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        };
        Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
    }

    /// `a + b`; `b` may have batch extent 1 and broadcast over `a`'s batch.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let broadcast = self.broadcast_kind("add", ia, ib)?;
        let out = self.binary_broadcast(ia, ib, broadcast, |x, y| x + y);
        self.push(out, Op::Add { a: ia, b: ib, broadcast }, &[ia, ib])
    }

    /// `a - b` with the same broadcasting as [`Tape::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let broadcast = self.broadcast_kind("subtract", ia, ib)?;
        let out = self.binary_broadcast(ia, ib, broadcast, |x, y| x - y);
        self.push(out, Op::Sub { a: ia, b: ib, broadcast }, &[ia, ib])
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = self.nodes[ia].value.zip_map(&self.nodes[ib].value, |x, y| x * y)?;
        self.push(out, Op::Mul { a: ia, b: ib }, &[ia, ib])
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let i = self.idx(input)?;
        let out = self.nodes[i].value.map(|v| v * factor);
        self.push(out, Op::Scale { input: i, factor }, &[i])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let i = self.idx(input)?;
        let out = Tensor::scalar(self.nodes[i].value.sum());
        self.push(out, Op::Sum { input: i }, &[i])
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let i = self.idx(input)?;
        let t = &self.nodes[i].value;
        let out = Tensor::scalar(t.sum() / T::from_usize(t.len()).expect("length fits"));
        self.push(out, Op::Mean { input: i }, &[i])
    }

    /// Elementwise `sqrt(u^2 + eps)`.
    pub fn charbonnier(&mut self, input: Var, eps: T) -> Result<Var> {
        if !(eps > T::zero()) {
            return Err(TensorError::argument("charbonnier", format!("epsilon {eps} must be > 0")));
        }
        let i = self.idx(input)?;
        let out = self.nodes[i].value.map(|u| (u * u + eps).sqrt());
        self.push(out, Op::Charbonnier { input: i }, &[i])
    }

    /// Forward: 1 where the input is > 0, else 0. Backward: identity
    /// (straight-through estimator).
    pub fn binarize_ste(&mut self, input: Var) -> Result<Var> {
        let i = self.idx(input)?;
        let out = self.nodes[i].value.map(binarize_value);
        self.push(out, Op::BinarizeSte { input: i }, &[i])
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.idx(loss)?;
        if self.op_count() == 0 {
            return Err(TensorError::Usage("backward on a tape with no recorded operations".into()));
        }
        if !self.nodes[root].value.is_scalar() {
            return Err(TensorError::Usage(format!(
                "loss must be a scalar, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::full(self.nodes[root].value.shape().to_vec(), T::one()));

        for index in (0..=root).rev() {
            let node = &self.nodes[index];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[index].take() else {
                continue;
            };
            for (target, grad) in self.local_grads(node, &upstream)? {
                if !self.nodes[target].requires_grad {
                    continue;
                }
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&grad)?,
                    slot @ None => *slot = Some(grad),
                }
            }
            // Non-leaf gradients are dropped once propagated.
        }
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn needs(&self, index: usize) -> bool {
        self.nodes[index].requires_grad
    }

    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(usize, Tensor<T>)>> {
        let val = |i: usize| &self.nodes[i].value;
        let mut out = Vec::with_capacity(3);
        match node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, spec } => {
                let grads = conv::conv2d_backward(
                    val(input),
                    val(kernel),
                    g,
                    spec,
                    (self.needs(input), self.needs(kernel), bias.is_some_and(|b| self.needs(b))),
                )?;
                out.extend(grads.input.map(|t| (input, t)));
                out.extend(grads.kernel.map(|t| (kernel, t)));
                if let (Some(b), Some(t)) = (bias, grads.bias) {
                    out.push((b, t));
                }
            }
            Op::TransposedConv2d { input, kernel, bias, stride } => {
                let grads = conv::transposed_conv2d_backward(
                    val(input),
                    val(kernel),
                    g,
                    stride,
                    (self.needs(input), self.needs(kernel), bias.is_some_and(|b| self.needs(b))),
                )?;
                out.extend(grads.input.map(|t| (input, t)));
                out.extend(grads.kernel.map(|t| (kernel, t)));
                if let (Some(b), Some(t)) = (bias, grads.bias) {
                    out.push((b, t));
                }
            }
            Op::LeakyRelu { input, slope } => {
                // Slope p is used at exactly zero.
                let d = val(input).zip_map(g, |x, gv| if x > T::zero() { gv } else { slope * gv })?;
                out.push((input, d));
            }
            Op::PixelShuffle { input, scale } => out.push((input, conv::pixel_unshuffle(g, scale)?)),
            Op::PixelUnshuffle { input, scale } => out.push((input, conv::pixel_shuffle(g, scale)?)),
            Op::Add { a, b, broadcast } | Op::Sub { a, b, broadcast } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -T::one() } else { T::one() };
                if self.needs(a) {
                    out.push((a, g.clone()));
                }
                if self.needs(b) {
                    let gb = if broadcast {
                        reduce_batch(g, val(b).shape())?
                    } else {
                        g.clone()
                    };
                    out.push((b, gb.map(|v| sign * v)));
                }
            }
            Op::Mul { a, b } => {
                if self.needs(a) {
                    out.push((a, g.zip_map(val(b), |gv, y| gv * y)?));
                }
                if self.needs(b) {
                    out.push((b, g.zip_map(val(a), |gv, x| gv * x)?));
                }
            }
            Op::Scale { input, factor } => out.push((input, g.map(|v| v * factor))),
            Op::Sum { input } => {
                let gv = g.item()?;
                out.push((input, Tensor::full(val(input).shape().to_vec(), gv)));
            }
            Op::Mean { input } => {
                let n = T::from_usize(val(input).len()).expect("length fits");
                let gv = g.item()? / n;
                out.push((input, Tensor::full(val(input).shape().to_vec(), gv)));
            }
            Op::Charbonnier { input, .. } => {
                let d = val(input).zip_map(&node.value, |u, r| u / r)?;
                out.push((input, d.zip_map(g, |a, b| a * b)?));
            }
            Op::BinarizeSte { input } => out.push((input, g.clone())),
        }
        Ok(out)
    }
}

fn reduce_batch<T: Real>(g: &Tensor<T>, target: &[usize]) -> Result<Tensor<T>> {
    let mut acc = Tensor::zeros(target.to_vec());
    let n = acc.len();
    for (i, &v) in g.data().iter().enumerate() {
        let slot = &mut acc.data_mut()[i % n];
        *slot = *slot + v;
    }
    Ok(acc)
}

/// The binarization rule: 1 for strictly positive inputs, otherwise 0.
pub fn binarize_value<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// Gradients of the trainable leaves of one tape.
pub struct Gradients<T: Real> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index).and_then(Option::take)
    }

    /// Number of leaves that received a gradient.
    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
