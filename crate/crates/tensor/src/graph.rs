use crate::error::{Result, TensorError};
use crate::ops::{self, Op};
use crate::tensor::{Element, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Train/eval switch for layers with stochastic or batch-dependent behavior.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) struct Node<F> {
    pub value: Tensor<F>,
    pub op: Op<F>,
    pub requires_grad: bool,
}

/// Computation record for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and a single reverse sweep visits each node once. Gradients are reset at
/// the start of every backward call; calling `backward` twice on the same
/// record with two different losses yields two independent gradient sets.
pub struct Graph<F = f32> {
    pub(crate) nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Element> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Element> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient from the most recent backward call, if any flowed to `v`.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zeros when nothing flowed to it.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<F> {
        match self.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![F::zero(); self.nodes[v.0].value.numel()],
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    fn push_raw(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Populate gradients of every differentiable leaf with respect to a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.scalar_seed(loss).and_then(|seed| self.run_backward(loss, seed, None))
    }

    /// Like [`Graph::backward`], but only propagates along paths that reach `targets`.
    pub fn backward_to(&mut self, loss: Var, targets: &[Var]) -> Result<()> {
        self.scalar_seed(loss).and_then(|seed| self.run_backward(loss, seed, Some(targets)))
    }

    /// Vector-Jacobian product: backpropagate an arbitrary cotangent from `out`.
    pub fn backward_with_seed(&mut self, out: Var, seed: Vec<F>) -> Result<()> {
        let n = self.nodes[out.0].value.numel();
        if seed.len() != n {
            return Err(TensorError::Dimension {
                op: "backward",
                axis: "seed",
                expected: n,
                got: seed.len(),
            });
        }
        self.run_backward(out, seed, None)
    }

    fn scalar_seed(&self, loss: Var) -> Result<Vec<F>> {
        let value = &self.nodes[loss.0].value;
        if value.numel() != 1 {
            return Err(TensorError::arg(
                "backward",
                format!("loss must be scalar, got shape {:?}", value.shape()),
            ));
        }
        Ok(vec![F::one()])
    }

    fn run_backward(&mut self, out: Var, seed: Vec<F>, targets: Option<&[Var]>) -> Result<()> {
        let n = out.0 + 1;
        let reach: Vec<bool> = match targets {
            None => self.nodes[..n].iter().map(|node| node.requires_grad).collect(),
            Some(targets) => {
                let mut reach = vec![false; n];
                for t in targets {
                    if t.0 < n {
                        reach[t.0] = true;
                    }
                }
                for i in 0..n {
                    if !reach[i] && self.nodes[i].op.inputs().iter().any(|v| reach[v.0]) {
                        reach[i] = true;
                    }
                }
                reach
            }
        };

        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[out.0] = Some(seed);
        for i in (0..n).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if reach[i] {
                let mut sink = GradSink { slots: &mut self.grads, reach: &reach, nodes: &self.nodes };
                ops::backward(&self.nodes, i, &g, &mut sink);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

/// Accumulator handed to op backward functions.
pub(crate) struct GradSink<'a, F> {
    slots: &'a mut [Option<Vec<F>>],
    reach: &'a [bool],
    nodes: &'a [Node<F>],
}

impl<F: Element> GradSink<'_, F> {
    pub fn wants(&self, v: Var) -> bool {
        self.reach.get(v.0).copied().unwrap_or(false)
    }

    /// Accumulation buffer for `v`; callers must check [`GradSink::wants`] first.
    pub fn slot(&mut self, v: Var) -> &mut [F] {
        let n = self.nodes[v.0].value.numel();
        self.slots[v.0].get_or_insert_with(|| vec![F::zero(); n])
    }

    pub fn add(&mut self, v: Var, g: &[F]) {
        if self.wants(v) {
            for (s, &x) in self.slot(v).iter_mut().zip(g) {
                *s += x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three_has_gradient_six() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::zeros([2]));
        assert!(matches!(g.backward(x), Err(TensorError::Argument { .. })));
    }

    #[test]
    fn second_backward_resets_instead_of_accumulating() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(2.0));
        let sq = g.mul(x, x).unwrap();
        let cube = g.mul(sq, x).unwrap();
        g.backward(sq).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0]);
        g.backward(cube).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[12.0]);

        let mut fresh = Graph::<f64>::new();
        let x2 = fresh.param(Tensor::scalar(2.0));
        let sq2 = fresh.mul(x2, x2).unwrap();
        let cube2 = fresh.mul(sq2, x2).unwrap();
        fresh.backward(cube2).unwrap();
        assert_eq!(g.grad(x), fresh.grad(x2));
    }

    #[test]
    fn backward_to_skips_other_leaves() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::scalar(2.0));
        let b = g.param(Tensor::scalar(5.0));
        let y = g.mul(a, b).unwrap();
        g.backward_to(y, &[a]).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[5.0]);
        assert!(g.grad(b).is_none());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::scalar(2.0));
        let c = g.constant(Tensor::scalar(7.0));
        let y = g.mul(a, c).unwrap();
        g.backward(y).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(a).unwrap(), &[7.0]);
    }
}
