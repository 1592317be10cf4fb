use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::{logsumexp, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The closed set of differentiable operations.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    /// Elementwise sum; the second operand may be a single row broadcast
    /// over every row of the first.
    Add,
    Mul,
    Exp,
    Log,
    Tanh,
    SoftmaxRows,
    /// `r × c → r × 1`.
    LogSumExpRows,
    ConcatCols,
    SelectRows(Vec<usize>),
    /// `r × c → 1 × c`.
    MeanRows,
    Scale(f64),
    Transpose,
    Reshape([usize; 2]),
    /// `r × c → 1 × 1`.
    Sum,
    /// Gradient passes only where the input lies inside the bounds.
    Clamp(f64, f64),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Tanh => "tanh",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::LogSumExpRows => "logsumexp_rows",
            OpKind::ConcatCols => "concat_cols",
            OpKind::SelectRows(_) => "select_rows",
            OpKind::MeanRows => "mean_rows",
            OpKind::Scale(_) => "scale",
            OpKind::Transpose => "transpose",
            OpKind::Reshape(_) => "reshape",
            OpKind::Sum => "sum",
            OpKind::Clamp(..) => "clamp",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Mul | OpKind::ConcatCols => 2,
            _ => 1,
        }
    }
}

#[derive(Debug)]
enum Source {
    Constant,
    Param,
    Op(OpKind, Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    source: Source,
    needs_grad: bool,
}

/// Gradient of a scalar loss with respect to every parameter registered on
/// the tape that produced it.
pub type Gradients = BTreeMap<String, Tensor>;

/// Single-use record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Source::Constant, false)
    }

    /// Registers a trainable tensor. Registering the same name twice returns
    /// the existing node.
    pub fn param_value(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(value.clone(), Source::Param, true);
        self.params.insert(name.to_owned(), v);
        v
    }

    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter `{name}`")))?;
        Ok(self.param_value(name, value))
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    fn push(&mut self, value: Tensor, source: Source, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            source,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != kind.arity() {
            return Err(Error::shape(
                kind.name(),
                format!("expected {} inputs, got {}", kind.arity(), inputs.len()),
            ));
        }
        let value = forward(&kind, inputs.iter().map(|&v| self.value(v)).collect())?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(value, Source::Op(kind, inputs.to_vec()), needs_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Log, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::SoftmaxRows, &[a])
    }

    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::LogSumExpRows, &[a])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::ConcatCols, &[a, b])
    }

    pub fn select_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        self.apply(OpKind::SelectRows(rows), &[a])
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::MeanRows, &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(OpKind::Scale(s), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Transpose, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: [usize; 2]) -> Result<Var> {
        self.apply(OpKind::Reshape(shape), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.apply(OpKind::Clamp(lo, hi), &[a])
    }

    /// `x · W + b` for row-major activations `x` (`r × in`), `W` (`in × out`)
    /// and bias row `b` (`1 × out`).
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Reverse pass from a `1 × 1` loss.
    ///
    /// The returned map has an entry for every parameter registered on this
    /// tape; parameters the loss does not depend on get exact zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let out = self.value(loss);
        if out.shape() != [1, 1] {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {}x{}", out.rows(), out.cols()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Source::Op(kind, inputs) = &node.source else {
                continue;
            };
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let input_values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
            let wants: Vec<bool> = inputs.iter().map(|v| self.nodes[v.0].needs_grad).collect();
            let local = backward_op(kind, &input_values, &node.value, &upstream, &wants);
            for ((input, g), want) in inputs.iter().zip(local).zip(wants) {
                if !want {
                    continue;
                }
                let g = g.expect("backward rule produced no gradient for a required input");
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let mut out = Gradients::new();
        for (name, &var) in &self.params {
            let g = if var.0 <= loss.0 {
                grads[var.0].take()
            } else {
                None
            };
            let value = self.value(var);
            out.insert(
                name.clone(),
                g.unwrap_or_else(|| Tensor::zeros(value.rows(), value.cols())),
            );
        }
        Ok(out)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!(
                "{}x{} vs {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            ),
        ));
    }
    Ok(())
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let lse = logsumexp(row);
    row.iter().map(|&x| (x - lse).exp()).collect()
}

fn forward(kind: &OpKind, inputs: Vec<&Tensor>) -> Result<Tensor> {
    let a = inputs[0];
    let op = kind.name();
    Ok(match kind {
        OpKind::MatMul => a.matmul(inputs[1])?,
        OpKind::Add => {
            let b = inputs[1];
            if b.rows() == 1 && a.rows() != 1 && a.cols() == b.cols() {
                let mut out = a.clone();
                let cols = a.cols();
                for (i, v) in out.values_mut().iter_mut().enumerate() {
                    *v += b.values()[i % cols];
                }
                out
            } else {
                same_shape(op, a, b)?;
                a.zip_map(b, |x, y| x + y)
            }
        }
        OpKind::Mul => {
            same_shape(op, a, inputs[1])?;
            a.zip_map(inputs[1], |x, y| x * y)
        }
        OpKind::Exp => a.map(f64::exp),
        OpKind::Log => a.map(f64::ln),
        OpKind::Tanh => a.map(f64::tanh),
        OpKind::SoftmaxRows => {
            if a.cols() == 0 {
                return Err(Error::shape(op, "zero columns"));
            }
            let mut values = Vec::with_capacity(a.len());
            for r in 0..a.rows() {
                values.extend(softmax_row(a.row_slice(r)));
            }
            Tensor::new(a.shape(), values)?
        }
        OpKind::LogSumExpRows => {
            if a.cols() == 0 {
                return Err(Error::shape(op, "zero columns"));
            }
            let values = (0..a.rows()).map(|r| logsumexp(a.row_slice(r))).collect();
            Tensor::new([a.rows(), 1], values)?
        }
        OpKind::ConcatCols => {
            let b = inputs[1];
            if a.rows() != b.rows() {
                return Err(Error::shape(
                    op,
                    format!("row counts {} vs {}", a.rows(), b.rows()),
                ));
            }
            let mut values = Vec::with_capacity(a.len() + b.len());
            for r in 0..a.rows() {
                values.extend_from_slice(a.row_slice(r));
                values.extend_from_slice(b.row_slice(r));
            }
            Tensor::new([a.rows(), a.cols() + b.cols()], values)?
        }
        OpKind::SelectRows(rows) => {
            let mut values = Vec::with_capacity(rows.len() * a.cols());
            for &r in rows {
                if r >= a.rows() {
                    return Err(Error::shape(
                        op,
                        format!("row {r} out of range for {} rows", a.rows()),
                    ));
                }
                values.extend_from_slice(a.row_slice(r));
            }
            Tensor::new([rows.len(), a.cols()], values)?
        }
        OpKind::MeanRows => {
            if a.rows() == 0 {
                return Err(Error::shape(op, "zero rows"));
            }
            let mut values = vec![0.0; a.cols()];
            for r in 0..a.rows() {
                for (acc, v) in values.iter_mut().zip(a.row_slice(r)) {
                    *acc += v;
                }
            }
            let n = a.rows() as f64;
            values.iter_mut().for_each(|v| *v /= n);
            Tensor::row(values)
        }
        OpKind::Scale(s) => a.map(|x| x * s),
        OpKind::Transpose => a.transpose(),
        OpKind::Reshape(shape) => Tensor::new(*shape, a.values().to_vec())
            .map_err(|_| Error::shape(op, format!("{:?} -> {:?}", a.shape(), shape)))?,
        OpKind::Sum => Tensor::scalar(a.values().iter().sum()),
        OpKind::Clamp(lo, hi) => a.map(|x| x.clamp(*lo, *hi)),
    })
}

fn backward_op(
    kind: &OpKind,
    inputs: &[&Tensor],
    out: &Tensor,
    up: &Tensor,
    wants: &[bool],
) -> Vec<Option<Tensor>> {
    let a = inputs[0];
    match kind {
        OpKind::MatMul => {
            let b = inputs[1];
            let ga = wants[0].then(|| up.matmul(&b.transpose()).expect("matmul grad"));
            let gb = wants[1].then(|| a.transpose().matmul(up).expect("matmul grad"));
            vec![ga, gb]
        }
        OpKind::Add => {
            let b = inputs[1];
            let gb = wants[1].then(|| {
                if b.shape() == up.shape() {
                    up.clone()
                } else {
                    let mut g = vec![0.0; b.cols()];
                    for r in 0..up.rows() {
                        for (acc, v) in g.iter_mut().zip(up.row_slice(r)) {
                            *acc += v;
                        }
                    }
                    Tensor::row(g)
                }
            });
            vec![wants[0].then(|| up.clone()), gb]
        }
        OpKind::Mul => {
            let b = inputs[1];
            vec![
                wants[0].then(|| up.zip_map(b, |g, y| g * y)),
                wants[1].then(|| up.zip_map(a, |g, x| g * x)),
            ]
        }
        OpKind::Exp => vec![Some(up.zip_map(out, |g, y| g * y))],
        OpKind::Log => vec![Some(up.zip_map(a, |g, x| g / x))],
        OpKind::Tanh => vec![Some(up.zip_map(out, |g, y| g * (1.0 - y * y)))],
        OpKind::SoftmaxRows => {
            let mut g = Tensor::zeros(a.rows(), a.cols());
            for r in 0..a.rows() {
                let y = out.row_slice(r);
                let dy = up.row_slice(r);
                let dot: f64 = y.iter().zip(dy).map(|(p, q)| p * q).sum();
                for c in 0..a.cols() {
                    g.set(r, c, y[c] * (dy[c] - dot));
                }
            }
            vec![Some(g)]
        }
        OpKind::LogSumExpRows => {
            let mut g = Tensor::zeros(a.rows(), a.cols());
            for r in 0..a.rows() {
                let lse = out.get(r, 0);
                let dy = up.get(r, 0);
                for (c, &x) in a.row_slice(r).iter().enumerate() {
                    g.set(r, c, dy * (x - lse).exp());
                }
            }
            vec![Some(g)]
        }
        OpKind::ConcatCols => {
            let b = inputs[1];
            let mut ga = Tensor::zeros(a.rows(), a.cols());
            let mut gb = Tensor::zeros(b.rows(), b.cols());
            for r in 0..a.rows() {
                let row = up.row_slice(r);
                for c in 0..a.cols() {
                    ga.set(r, c, row[c]);
                }
                for c in 0..b.cols() {
                    gb.set(r, c, row[a.cols() + c]);
                }
            }
            vec![wants[0].then_some(ga), wants[1].then_some(gb)]
        }
        OpKind::SelectRows(rows) => {
            let mut g = Tensor::zeros(a.rows(), a.cols());
            let cols = a.cols();
            for (i, &r) in rows.iter().enumerate() {
                let src = up.row_slice(i);
                let dst = &mut g.values_mut()[r * cols..(r + 1) * cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            vec![Some(g)]
        }
        OpKind::MeanRows => {
            let n = a.rows() as f64;
            let mut g = Tensor::zeros(a.rows(), a.cols());
            for r in 0..a.rows() {
                for c in 0..a.cols() {
                    g.set(r, c, up.get(0, c) / n);
                }
            }
            vec![Some(g)]
        }
        OpKind::Scale(s) => vec![Some(up.map(|g| g * s))],
        OpKind::Transpose => vec![Some(up.transpose())],
        OpKind::Reshape(_) => vec![Some(
            Tensor::new(a.shape(), up.values().to_vec()).expect("reshape grad"),
        )],
        OpKind::Sum => {
            let g = up.get(0, 0);
            vec![Some(Tensor::filled(a.rows(), a.cols(), g))]
        }
        OpKind::Clamp(lo, hi) => vec![Some(up.zip_map(a, |g, x| {
            if x >= *lo && x <= *hi {
                g
            } else {
                0.0
            }
        }))],
    }
}
