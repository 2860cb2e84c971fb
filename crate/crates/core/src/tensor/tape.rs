use std::f64::consts::PI;

use super::broadcast::{broadcast_shape, broadcast_strides, for_each_pair};
use super::conv::{self, Conv2dSpec};
use super::linalg;
use super::{strides_of, Real, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation whose backward rule lives outside the engine.
///
/// `backward` receives the input values, the recorded output, and the
/// upstream gradient; it returns one gradient per input (`None` when the
/// input does not need one).
pub trait CustomOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&[T]], output: &[T], grad_output: &[T]) -> Vec<Option<Vec<T>>>;
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum Unary<T> {
    Neg,
    Relu,
    Gelu,
    Exp,
    Sqrt,
    Scale(T),
    AddScalar(T),
}

enum Op<T: Real> {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary<T>, Var),
    Sum { x: Var, keep_shape: Vec<usize> },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Narrow { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    MatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize },
    Softmax { x: Var, axis: usize },
    Conv2d { x: Var, w: Var, spec: Conv2dSpec },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Dynamic computation graph recorded during one forward pass.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of leaf values after [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_finite<T: Real>(op: &'static str, data: &[T]) -> Result<(), TensorError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn gelu<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x / T::of(std::f64::consts::SQRT_2)).erf())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x / T::of(std::f64::consts::SQRT_2)).erf());
    cdf + x * T::of(normal_pdf(x.f64()))
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn permute_data<T: Real>(
    shape: &[usize],
    data: &[T],
    perm: &[usize],
) -> Result<(Vec<usize>, Vec<T>), TensorError> {
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(TensorError::invalid(
            "permute",
            format!("{perm:?} is not a permutation of {rank} axes"),
        ));
    }
    let src_strides = strides_of(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let gather: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let zeros = vec![0; rank];
    let mut out = vec![T::zero(); data.len()];
    for_each_pair(&out_shape, &gather, &zeros, |o, i, _| out[o] = data[i]);
    Ok((out_shape, out))
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn acc<T: Real>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node invariant")
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        needs_grad: bool,
    ) -> Result<Var, TensorError> {
        check_finite(name, &data)?;
        Ok(self.push(shape, data, op, needs_grad))
    }

    /// Records a leaf; it is differentiated iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    /// Records a trainable leaf regardless of the tensor's flag.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.push(Vec::new(), vec![v], Op::Leaf, false)
    }

    // ---- elementwise -------------------------------------------------

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb)?;
        let numel: usize = out_shape.iter().product();
        let mut out = vec![T::zero(); numel];
        let (da, db) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        if sa == sb {
            for ((o, &x), &y) in out.iter_mut().zip(da).zip(db) {
                *o = f(x, y);
            }
        } else {
            let (ta, tb) = (
                broadcast_strides(&sa, &out_shape),
                broadcast_strides(&sb, &out_shape),
            );
            for_each_pair(&out_shape, &ta, &tb, |o, i, j| out[o] = f(da[i], db[j]));
        }
        let ng = self.needs_grad(a) || self.needs_grad(b);
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        self.push_checked(name, out_shape, out, Op::Binary(kind, a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary<T>, x: Var) -> Result<Var, TensorError> {
        let src = &self.nodes[x.0].data;
        let out: Vec<T> = match kind {
            Unary::Neg => src.iter().map(|&v| -v).collect(),
            Unary::Relu => src.iter().map(|&v| v.max(T::zero())).collect(),
            Unary::Gelu => src.iter().map(|&v| gelu(v)).collect(),
            Unary::Exp => src.iter().map(|&v| v.exp()).collect(),
            Unary::Sqrt => src.iter().map(|&v| v.sqrt()).collect(),
            Unary::Scale(c) => src.iter().map(|&v| v * c).collect(),
            Unary::AddScalar(c) => src.iter().map(|&v| v + c).collect(),
        };
        let name = match kind {
            Unary::Neg => "neg",
            Unary::Relu => "relu",
            Unary::Gelu => "gelu",
            Unary::Exp => "exp",
            Unary::Sqrt => "sqrt",
            Unary::Scale(_) => "scale",
            Unary::AddScalar(_) => "add_scalar",
        };
        let shape = self.shape(x).to_vec();
        let ng = self.needs_grad(x);
        self.push_checked(name, shape, out, Op::Unary(kind, x), ng)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Neg, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Relu, x)
    }

    /// Exact (erf-based) GeLU.
    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Gelu, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Exp, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Sqrt, x)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var, TensorError> {
        self.unary(Unary::Scale(c), x)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var, TensorError> {
        self.unary(Unary::AddScalar(c), x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var, TensorError> {
        self.mul(x, x)
    }

    // ---- reductions --------------------------------------------------

    /// Sums over `axes`; reduced axes are kept with extent 1 when `keepdim`.
    pub fn sum(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axes.iter().any(|&a| a >= shape.len()) {
            return Err(TensorError::invalid(
                "sum",
                format!("axes {axes:?} out of range for rank {}", shape.len()),
            ));
        }
        let keep_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        let out_shape: Vec<usize> = if keepdim {
            keep_shape.clone()
        } else {
            shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect()
        };
        let mut out = vec![T::zero(); keep_shape.iter().product()];
        let src = &self.nodes[x.0].data;
        let own = strides_of(&shape);
        let red = broadcast_strides(&keep_shape, &shape);
        for_each_pair(&shape, &own, &red, |_, i, j| out[j] += src[i]);
        let ng = self.needs_grad(x);
        self.push_checked("sum", out_shape, out, Op::Sum { x, keep_shape }, ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.sum(x, &axes, false)
    }

    pub fn mean(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var, TensorError> {
        let count: usize = axes.iter().map(|&a| self.shape(x).get(a).copied().unwrap_or(1)).product();
        let s = self.sum(x, axes, keepdim)?;
        self.scale(s, T::one() / T::of(count.max(1) as f64))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.mean(x, &axes, false)
    }

    /// Population variance over `axes`.
    pub fn variance(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var, TensorError> {
        let mu = self.mean(x, axes, true)?;
        let centered = self.sub(x, mu)?;
        let sq = self.square(centered)?;
        self.mean(sq, axes, keepdim)
    }

    /// `x / sqrt(sum(x², axis) + eps)`.
    pub fn l2_normalize(&mut self, x: Var, axis: usize, eps: T) -> Result<Var, TensorError> {
        let sq = self.square(x)?;
        let s = self.sum(sq, &[axis], true)?;
        let s = self.add_scalar(s, eps)?;
        let norm = self.sqrt(s)?;
        self.div(x, norm)
    }

    // ---- shape -------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                expected: self.shape(x).to_vec(),
                got: shape.to_vec(),
            });
        }
        let data = self.value(x).to_vec();
        let ng = self.needs_grad(x);
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x), ng))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var, TensorError> {
        let (shape, data) = permute_data(self.shape(x), self.value(x), perm)?;
        let ng = self.needs_grad(x);
        Ok(self.push(shape, data, Op::Permute(x, perm.to_vec()), ng))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::invalid(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let src = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let ng = self.needs_grad(x);
        Ok(self.push(out_shape, out, Op::Narrow { x, axis, start }, ng))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = self.shape(*xs.first().ok_or_else(|| TensorError::invalid("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(TensorError::invalid("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    expected: first.clone(),
                    got: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis];
                let src = self.value(v);
                out.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut out_shape = first;
        out_shape[axis] = total;
        let ng = xs.iter().any(|&v| self.needs_grad(v));
        Ok(self.push(out_shape, out, Op::Concat { xs: xs.to_vec(), axis }, ng))
    }

    // ---- products ----------------------------------------------------

    /// Batched matrix product `[..., m, k] × [..., k, n]` with identical batch dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ra = sa.len();
        if ra < 2 || sb.len() != ra || sa[..ra - 2] != sb[..ra - 2] || sa[ra - 1] != sb[ra - 2] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                expected: sa,
                got: sb,
            });
        }
        let (m, k, n) = (sa[ra - 2], sa[ra - 1], sb[ra - 1]);
        let batch: usize = sa[..ra - 2].iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        let (da, db) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        for i in 0..batch {
            linalg::matmul_acc(
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = sa[..ra - 2].to_vec();
        shape.extend([m, n]);
        let ng = self.needs_grad(a) || self.needs_grad(b);
        self.push_checked("matmul", shape, out, Op::MatMul { a, b, batch, m, k, n }, ng)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::invalid("softmax", format!("axis {axis} out of range")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x);
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = T::neg_infinity();
                for l in 0..len {
                    mx = mx.max(src[base + l * inner]);
                }
                let mut total = T::zero();
                for l in 0..len {
                    let e = (src[base + l * inner] - mx).exp();
                    out[base + l * inner] = e;
                    total += e;
                }
                for l in 0..len {
                    out[base + l * inner] /= total;
                }
            }
        }
        let ng = self.needs_grad(x);
        self.push_checked("softmax", shape, out, Op::Softmax { x, axis }, ng)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, spec: Conv2dSpec) -> Result<Var, TensorError> {
        let (shape, out) = conv::conv2d_forward(
            self.shape(x),
            self.value(x),
            self.shape(w),
            self.value(w),
            spec,
        )?;
        let ng = self.needs_grad(x) || self.needs_grad(w);
        self.push_checked("conv2d", shape, out, Op::Conv2d { x, w, spec }, ng)
    }

    /// Records the result of an externally computed op.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        shape: Vec<usize>,
        data: Vec<T>,
        op: Box<dyn CustomOp<T>>,
    ) -> Result<Var, TensorError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::invalid(op.name(), "output length does not match shape"));
        }
        let name = op.name();
        let ng = inputs.iter().any(|&v| self.needs_grad(v));
        self.push_checked(
            name,
            shape,
            data,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            ng,
        )
    }

    // ---- reverse pass ------------------------------------------------

    /// Back-propagates from `root`, seeding its gradient with ones.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>, TensorError> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one(); self.nodes[root.0].data.len()]);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(TensorError::NonFiniteGradient {
                        param: format!("node {i}"),
                    });
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let ng = |v: Var| self.nodes[v.0].needs_grad;
        let val = |v: Var| &self.nodes[v.0].data;
        let shp = |v: Var| &self.nodes[v.0].shape;
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (a, b) = (*a, *b);
                let (da, db) = (val(a), val(b));
                let out_shape = &node.shape;
                let same = shp(a) == shp(b);
                let (ta, tb) = (
                    broadcast_strides(shp(a), out_shape),
                    broadcast_strides(shp(b), out_shape),
                );
                let visit = |f: &mut dyn FnMut(usize, usize, usize)| {
                    if same {
                        for i in 0..g.len() {
                            f(i, i, i);
                        }
                    } else {
                        for_each_pair(out_shape, &ta, &tb, |o, i, j| f(o, i, j));
                    }
                };
                if ng(a) {
                    let mut ga = grads[a.0].take().unwrap_or_else(|| vec![T::zero(); da.len()]);
                    match kind {
                        Binary::Add | Binary::Sub => visit(&mut |o, i, _| ga[i] += g[o]),
                        Binary::Mul => visit(&mut |o, i, j| ga[i] += g[o] * db[j]),
                        Binary::Div => visit(&mut |o, i, j| ga[i] += g[o] / db[j]),
                    }
                    grads[a.0] = Some(ga);
                }
                if ng(b) {
                    let mut gb = grads[b.0].take().unwrap_or_else(|| vec![T::zero(); db.len()]);
                    match kind {
                        Binary::Add => visit(&mut |o, _, j| gb[j] += g[o]),
                        Binary::Sub => visit(&mut |o, _, j| gb[j] -= g[o]),
                        Binary::Mul => visit(&mut |o, i, j| gb[j] += g[o] * da[i]),
                        Binary::Div => {
                            visit(&mut |o, i, j| gb[j] -= g[o] * da[i] / (db[j] * db[j]))
                        }
                    }
                    grads[b.0] = Some(gb);
                }
            }
            Op::Unary(kind, x) => {
                if !ng(*x) {
                    return;
                }
                let xs = val(*x);
                let y = &node.data;
                let gx = acc(&mut grads[x.0], xs.len());
                for i in 0..g.len() {
                    gx[i] += match kind {
                        Unary::Neg => -g[i],
                        Unary::Relu => {
                            if xs[i] > T::zero() {
                                g[i]
                            } else {
                                T::zero()
                            }
                        }
                        Unary::Gelu => g[i] * gelu_grad(xs[i]),
                        Unary::Exp => g[i] * y[i],
                        Unary::Sqrt => g[i] * T::of(0.5) / y[i],
                        Unary::Scale(c) => g[i] * *c,
                        Unary::AddScalar(_) => g[i],
                    };
                }
            }
            Op::Sum { x, keep_shape } => {
                if !ng(*x) {
                    return;
                }
                let shape = shp(*x);
                let own = strides_of(shape);
                let red = broadcast_strides(keep_shape, shape);
                let gx = acc(&mut grads[x.0], val(*x).len());
                for_each_pair(shape, &own, &red, |_, i, j| gx[i] += g[j]);
            }
            Op::Reshape(x) => {
                if ng(*x) {
                    let gx = acc(&mut grads[x.0], g.len());
                    for (d, s) in gx.iter_mut().zip(g) {
                        *d += *s;
                    }
                }
            }
            Op::Permute(x, perm) => {
                if ng(*x) {
                    let (_, back) = permute_data(&node.shape, g, &inverse_perm(perm))
                        .expect("inverse of a valid permutation");
                    let gx = acc(&mut grads[x.0], back.len());
                    for (d, s) in gx.iter_mut().zip(&back) {
                        *d += *s;
                    }
                }
            }
            Op::Narrow { x, axis, start } => {
                if !ng(*x) {
                    return;
                }
                let (outer, full, inner) = split_axis(shp(*x), *axis);
                let len = node.shape[*axis];
                let gx = acc(&mut grads[x.0], outer * full * inner);
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    for i in 0..len * inner {
                        gx[dst + i] += g[src + i];
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for &v in xs {
                    let len = shp(v)[*axis];
                    if ng(v) {
                        let gv = acc(&mut grads[v.0], outer * len * inner);
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            for i in 0..len * inner {
                                gv[o * len * inner + i] += g[src + i];
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::MatMul { a, b, batch, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if ng(*a) {
                    let db = val(*b);
                    let ga = acc(&mut grads[a.0], batch * m * k);
                    for i in 0..*batch {
                        linalg::matmul_a_bt_acc(
                            &g[i * m * n..(i + 1) * m * n],
                            &db[i * k * n..(i + 1) * k * n],
                            &mut ga[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if ng(*b) {
                    let da = val(*a);
                    let gb = acc(&mut grads[b.0], batch * k * n);
                    for i in 0..*batch {
                        linalg::matmul_at_b_acc(
                            &da[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            &mut gb[i * k * n..(i + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if !ng(*x) {
                    return;
                }
                let (outer, len, inner) = split_axis(&node.shape, *axis);
                let y = &node.data;
                let gx = acc(&mut grads[x.0], y.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = T::zero();
                        for l in 0..len {
                            dot += g[base + l * inner] * y[base + l * inner];
                        }
                        for l in 0..len {
                            let p = base + l * inner;
                            gx[p] += y[p] * (g[p] - dot);
                        }
                    }
                }
            }
            Op::Conv2d { x, w, spec } => {
                let (gx, gw) = conv::conv2d_backward(
                    shp(*x),
                    val(*x),
                    shp(*w),
                    val(*w),
                    g,
                    *spec,
                    ng(*x),
                    ng(*w),
                );
                if let Some(gx) = gx {
                    let dst = acc(&mut grads[x.0], gx.len());
                    for (d, s) in dst.iter_mut().zip(&gx) {
                        *d += *s;
                    }
                }
                if let Some(gw) = gw {
                    let dst = acc(&mut grads[w.0], gw.len());
                    for (d, s) in dst.iter_mut().zip(&gw) {
                        *d += *s;
                    }
                }
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&[T]> = inputs.iter().map(|&v| val(v).as_slice()).collect();
                let local = op.backward(&vals, &node.data, g);
                for (&v, gv) in inputs.iter().zip(local) {
                    if let (true, Some(gv)) = (ng(v), gv) {
                        let dst = acc(&mut grads[v.0], gv.len());
                        for (d, s) in dst.iter_mut().zip(&gv) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn relu_and_gelu_values() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap());
        let r = t.relu(x).unwrap();
        assert_eq!(t.value(r), &[0.0, 0.0, 2.0]);
        let g = t.gelu(x).unwrap();
        assert_eq!(t.value(g)[1], 0.0);
        // gelu(2) = 2 Φ(2)
        assert!((t.value(g)[2] - 2.0 * 0.977_249_868_051_820_8).abs() < 1e-12);
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::zeros([3]));
        let s = t.softmax(x, 0).unwrap();
        for v in t.value(s) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = t.constant(Tensor::new([2], vec![1000.0, 0.0]).unwrap());
        let s = t.softmax(y, 0).unwrap();
        assert!((t.value(s)[0] - 1.0).abs() < 1e-12);
        assert!(t.value(s)[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let x = rand_tensor(&[4, 7], 3).map(|v| v * 5.0);
        let mut t = Tape::<f64>::new();
        let v = t.constant(x.clone());
        let s = t.softmax(v, 1).unwrap();
        for r in 0..4 {
            let row = &x.data()[r * 7..(r + 1) * 7];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            for c in 0..7 {
                let direct = row[c].exp() / denom;
                assert!((t.value(s)[r * 7 + c] - direct).abs() < 1e-12);
            }
        }
        // along a non-trailing axis the columns normalise
        let s0 = t.softmax(v, 0).unwrap();
        for c in 0..7 {
            let col: f64 = (0..4).map(|r| t.value(s0)[r * 7 + c]).sum();
            assert!((col - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn broadcast_gradients_reduce() {
        let mut t = Tape::<f64>::new();
        let a = t.param(&rand_tensor(&[2, 3], 1));
        let b = t.param(&rand_tensor(&[3], 2));
        let y = t.mul(a, b).unwrap();
        let l = t.sum_all(y).unwrap();
        let g = t.backward(l).unwrap();
        let av = t.value(a).to_vec();
        let gb = g.get(b).unwrap();
        for j in 0..3 {
            assert!((gb[j] - (av[j] + av[3 + j])).abs() < 1e-14);
        }
    }

    #[test]
    fn narrow_concat_roundtrip() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(rand_tensor(&[2, 5, 3], 9));
        let a = t.narrow(x, 1, 0, 2).unwrap();
        let b = t.narrow(x, 1, 2, 3).unwrap();
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.value(c), t.value(x));
        assert!(t.narrow(x, 1, 4, 2).is_err());
    }

    #[test]
    fn variance_matches_definition() {
        let x = rand_tensor(&[3, 8], 4);
        let mut t = Tape::<f64>::new();
        let v = t.constant(x.clone());
        let var = t.variance(v, &[1], false).unwrap();
        for r in 0..3 {
            let row = &x.data()[r * 8..(r + 1) * 8];
            let mu = row.iter().sum::<f64>() / 8.0;
            let direct = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 8.0;
            assert!((t.value(var)[r] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn nonfinite_is_an_error() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::new([1], vec![-1.0]).unwrap());
        assert!(matches!(t.sqrt(x), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn matmul_shape_errors() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Tensor::zeros([2, 3]));
        let b = t.constant(Tensor::zeros([2, 3]));
        assert!(t.matmul(a, b).is_err());
    }
}
