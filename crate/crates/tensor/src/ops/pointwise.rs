use std::fmt;
use std::str::FromStr;

use super::Op;
use crate::error::{Result, TensorError};
use crate::graph::{GradSink, Graph, Var};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Unary {
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Softplus,
    Exp,
    /// `ln(max(x, floor))`; zero gradient below the floor.
    Log(f64),
    Affine(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
}

/// Nonlinearities selectable from layer configs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
    /// Softmax over all non-batch axes of each sample.
    Softmax,
    Linear,
}

impl Activation {
    pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

    pub fn leaky() -> Self {
        Activation::LeakyRelu { slope: Self::DEFAULT_LEAKY_SLOPE }
    }
}

impl FromStr for Activation {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lrelu" | "leaky-relu" | "leaky_relu" => Ok(Activation::leaky()),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softmax" => Ok(Activation::Softmax),
            "linear" | "none" => Ok(Activation::Linear),
            other => Err(TensorError::arg("activation", format!("unknown kind `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::LeakyRelu { .. } => write!(f, "lrelu"),
            Activation::Tanh => write!(f, "tanh"),
            Activation::Sigmoid => write!(f, "sigmoid"),
            Activation::Softmax => write!(f, "softmax"),
            Activation::Linear => write!(f, "linear"),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn apply_unary<F: Element>(kind: Unary, x: F) -> F {
    match kind {
        Unary::LeakyRelu(slope) => {
            if x > F::zero() {
                x
            } else {
                x * F::from_f64(slope)
            }
        }
        Unary::Tanh => x.tanh(),
        Unary::Sigmoid => F::from_f64(sigmoid(x.as_f64())),
        Unary::Softplus => F::from_f64(softplus(x.as_f64())),
        Unary::Exp => x.exp(),
        Unary::Log(floor) => x.max(F::from_f64(floor)).ln(),
        Unary::Affine(a, b) => x * F::from_f64(a) + F::from_f64(b),
    }
}

impl<F: Element> Graph<F> {
    fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| apply_unary(kind, v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Unary { x, kind })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Unary::LeakyRelu(slope))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    /// Natural log of `max(x, floor)`.
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, Unary::Log(floor))
    }

    /// `a * x + b`.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        self.unary(x, Unary::Affine(a, b))
    }

    pub fn scale(&mut self, x: Var, a: f64) -> Var {
        self.unary(x, Unary::Affine(a, 0.0))
    }

    /// Softmax over each sample's flattened non-batch axes.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let per = xv.per_sample();
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(per) {
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let exps: Vec<f64> = row.iter().map(|&v| (v - max).as_f64().exp()).collect();
            let total: f64 = exps.iter().sum();
            out.extend(exps.iter().map(|e| F::from_f64(e / total)));
        }
        let value = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        self.push(value, Op::Softmax { x })
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        match act {
            Activation::LeakyRelu { slope } => self.leaky_relu(x, slope),
            Activation::Tanh => self.tanh(x),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Softmax => self.softmax(x),
            Activation::Linear => x,
        }
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::Dimension {
                op: "elementwise",
                axis: "shape",
                expected: av.numel(),
                got: bv.numel(),
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
            })
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Binary { a, b, kind }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }
}

pub(super) fn unary_backward<F: Element>(
    kind: Unary,
    xv: &Tensor<F>,
    yv: &Tensor<F>,
    x: Var,
    g: &[F],
    sink: &mut GradSink<'_, F>,
) {
    if !sink.wants(x) {
        return;
    }
    let one = F::one();
    let dx = sink.slot(x);
    let (xs, ys) = (xv.data(), yv.data());
    for i in 0..dx.len() {
        let d = match kind {
            Unary::LeakyRelu(slope) => {
                if xs[i] > F::zero() {
                    one
                } else {
                    F::from_f64(slope)
                }
            }
            Unary::Tanh => one - ys[i] * ys[i],
            Unary::Sigmoid => ys[i] * (one - ys[i]),
            Unary::Softplus => F::from_f64(sigmoid(xs[i].as_f64())),
            Unary::Exp => ys[i],
            Unary::Log(floor) => {
                if xs[i] > F::from_f64(floor) {
                    one / xs[i]
                } else {
                    F::zero()
                }
            }
            Unary::Affine(a, _) => F::from_f64(a),
        };
        dx[i] += g[i] * d;
    }
}

pub(super) fn softmax_backward<F: Element>(yv: &Tensor<F>, x: Var, g: &[F], sink: &mut GradSink<'_, F>) {
    if !sink.wants(x) {
        return;
    }
    let per = yv.per_sample();
    let dx = sink.slot(x);
    for ((drow, yrow), grow) in dx.chunks_mut(per).zip(yv.data().chunks(per)).zip(g.chunks(per)) {
        let dot: F = yrow.iter().zip(grow).map(|(&y, &gg)| y * gg).sum();
        for i in 0..per {
            drow[i] += yrow[i] * (grow[i] - dot);
        }
    }
}

pub(super) fn binary_backward<F: Element>(
    kind: Binary,
    av: &Tensor<F>,
    bv: &Tensor<F>,
    a: Var,
    b: Var,
    g: &[F],
    sink: &mut GradSink<'_, F>,
) {
    match kind {
        Binary::Add => {
            sink.add(a, g);
            sink.add(b, g);
        }
        Binary::Sub => {
            sink.add(a, g);
            if sink.wants(b) {
                for (d, &gi) in sink.slot(b).iter_mut().zip(g) {
                    *d -= gi;
                }
            }
        }
        Binary::Mul => {
            if sink.wants(a) {
                for ((d, &gi), &y) in sink.slot(a).iter_mut().zip(g).zip(bv.data()) {
                    *d += gi * y;
                }
            }
            if sink.wants(b) {
                for ((d, &gi), &x) in sink.slot(b).iter_mut().zip(g).zip(av.data()) {
                    *d += gi * x;
                }
            }
        }
    }
}
