//! Reverse-mode differentiation over a recorded expression list.
//!
//! Every value is a dense `[c][h][w]` tensor. Nodes are appended in
//! evaluation order, so a reverse sweep visits each node after all of its
//! consumers. Linear operator nodes use the operator adjoint as their
//! derivative.

use std::sync::atomic::{AtomicU64, Ordering};

use super::conv;
use crate::error::{Error, Result};
use crate::geometry::{Image, LinearOperator, Sinogram};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// `[channels, rows, columns]`
pub type Shape = [usize; 3];

pub const SCALAR: Shape = [1, 1, 1];

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

enum Op<'a> {
    Leaf,
    Conv { x: usize, kernel: usize, bias: usize },
    Relu(usize),
    Abs(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    ScaleBy { s: usize, x: usize },
    MulConst(usize, &'a [f64]),
    Forward(usize, &'a dyn LinearOperator),
    Adjoint(usize, &'a dyn LinearOperator),
    Mse(usize, usize),
    HalfSquaredNorm(usize),
    Sum(usize),
}

struct Node<'a> {
    value: Vec<f64>,
    shape: Shape,
    op: Op<'a>,
}

pub struct Tape<'a> {
    id: u64,
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(s: Shape) -> usize {
    s[0] * s[1] * s[2]
}

fn tape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Tape(msg.into()))
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return tape_err("variable was recorded on a different tape");
        }
        if v.index >= self.nodes.len() {
            return tape_err(format!("variable {} is not recorded", v.index));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Vec<f64>, shape: Shape, op: Op<'a>) -> Var {
        debug_assert_eq!(value.len(), numel(shape));
        self.nodes.push(Node { value, shape, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Records an input. Gradients are reported for every leaf.
    pub fn leaf(&mut self, value: Vec<f64>, shape: Shape) -> Result<Var> {
        if value.len() != numel(shape) {
            return tape_err(format!("{} values for shape {shape:?}", value.len()));
        }
        Ok(self.push(value, shape, Op::Leaf))
    }

    pub fn image(&mut self, x: &Image) -> Var {
        let g = x.grid();
        self.push(x.values().to_vec(), [1, g.ny(), g.nx()], Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Result<&[f64]> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn shape(&self, v: Var) -> Result<Shape> {
        Ok(self.nodes[self.idx(v)?].shape)
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let i = self.idx(v)?;
        if self.nodes[i].shape != SCALAR {
            return tape_err("value is not a scalar");
        }
        Ok(self.nodes[i].value[0])
    }

    fn same_shape(&self, a: usize, b: usize) -> Result<Shape> {
        let (sa, sb) = (self.nodes[a].shape, self.nodes[b].shape);
        if sa != sb {
            return tape_err(format!("shape mismatch {sa:?} vs {sb:?}"));
        }
        Ok(sa)
    }

    /// 3×3 convolution, zero padded. `kernel` has `cout * cin * 9` entries and
    /// `bias` has `cout`.
    pub fn conv3x3(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (xi, ki, bi) = (self.idx(x)?, self.idx(kernel)?, self.idx(bias)?);
        let [cin, h, w] = self.nodes[xi].shape;
        let cout = self.nodes[bi].value.len();
        if self.nodes[ki].value.len() != cout * cin * 9 {
            return tape_err(format!(
                "kernel has {} entries, expected {}",
                self.nodes[ki].value.len(),
                cout * cin * 9
            ));
        }
        let out = conv::forward(
            &self.nodes[xi].value,
            cin,
            h,
            w,
            &self.nodes[ki].value,
            &self.nodes[bi].value,
            cout,
        );
        Ok(self.push(out, [cout, h, w], Op::Conv { x: xi, kernel: ki, bias: bi }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let out = self.nodes[i].value.iter().map(|v| v.max(0.0)).collect();
        Ok(self.push(out, self.nodes[i].shape, Op::Relu(i)))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let out = self.nodes[i].value.iter().map(|v| v.abs()).collect();
        Ok(self.push(out, self.nodes[i].shape, Op::Abs(i)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (i, j) = (self.idx(a)?, self.idx(b)?);
        let s = self.same_shape(i, j)?;
        let out = self.nodes[i].value.iter().zip(&self.nodes[j].value).map(|(p, q)| p + q).collect();
        Ok(self.push(out, s, Op::Add(i, j)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (i, j) = (self.idx(a)?, self.idx(b)?);
        let s = self.same_shape(i, j)?;
        let out = self.nodes[i].value.iter().zip(&self.nodes[j].value).map(|(p, q)| p - q).collect();
        Ok(self.push(out, s, Op::Sub(i, j)))
    }

    /// Multiplication by a fixed scalar.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let i = self.idx(x)?;
        let out = self.nodes[i].value.iter().map(|v| c * v).collect();
        Ok(self.push(out, self.nodes[i].shape, Op::Scale(i, c)))
    }

    /// Multiplication by a recorded scalar.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        let c = self.scalar(s)?;
        let (si, xi) = (self.idx(s)?, self.idx(x)?);
        let out = self.nodes[xi].value.iter().map(|v| c * v).collect();
        Ok(self.push(out, self.nodes[xi].shape, Op::ScaleBy { s: si, x: xi }))
    }

    /// Elementwise product with fixed weights.
    pub fn mul_const(&mut self, x: Var, weights: &'a [f64]) -> Result<Var> {
        let i = self.idx(x)?;
        if weights.len() != self.nodes[i].value.len() {
            return tape_err("weight length does not match value");
        }
        let out = self.nodes[i].value.iter().zip(weights).map(|(v, w)| v * w).collect();
        Ok(self.push(out, self.nodes[i].shape, Op::MulConst(i, weights)))
    }

    /// `A x` for an image-shaped value.
    pub fn forward_project(&mut self, x: Var, op: &'a dyn LinearOperator) -> Result<Var> {
        let i = self.idx(x)?;
        let g = op.grid();
        if self.nodes[i].shape != [1, g.ny(), g.nx()] {
            return tape_err("value does not match the operator grid");
        }
        let img = Image::with_values(g, self.nodes[i].value.clone());
        let out = op.apply(&img)?.into_values();
        let geo = op.geometry();
        Ok(self.push(out, [1, geo.n_views(), geo.n_dets()], Op::Forward(i, op)))
    }

    /// `Aᵀ y` for a sinogram-shaped value.
    pub fn back_project(&mut self, y: Var, op: &'a dyn LinearOperator) -> Result<Var> {
        let i = self.idx(y)?;
        let geo = op.geometry();
        if self.nodes[i].shape != [1, geo.n_views(), geo.n_dets()] {
            return tape_err("value does not match the operator geometry");
        }
        let s = Sinogram::with_values(geo.clone(), self.nodes[i].value.clone());
        let out = op.adjoint(&s)?.into_values();
        let g = op.grid();
        Ok(self.push(out, [1, g.ny(), g.nx()], Op::Adjoint(i, op)))
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (i, j) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(i, j)?;
        let n = self.nodes[i].value.len() as f64;
        let s: f64 = self.nodes[i]
            .value
            .iter()
            .zip(&self.nodes[j].value)
            .map(|(p, q)| (p - q) * (p - q))
            .sum();
        Ok(self.push(vec![s / n], SCALAR, Op::Mse(i, j)))
    }

    /// `½ ||x||²`
    pub fn half_squared_norm(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let s: f64 = self.nodes[i].value.iter().map(|v| v * v).sum();
        Ok(self.push(vec![0.5 * s], SCALAR, Op::HalfSquaredNorm(i)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let s = self.nodes[i].value.iter().sum();
        Ok(self.push(vec![s], SCALAR, Op::Sum(i)))
    }

    /// Sign pattern of every rectifier input, in recording order. Two
    /// evaluations with equal patterns lie on the same smooth piece.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::Relu(x) = n.op {
                out.extend(self.nodes[x].value.iter().map(|v| *v > 0.0));
            }
        }
        out
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backprop(&self, loss: Var) -> Result<Gradients> {
        let root = self.idx(loss)?;
        if self.nodes[root].shape != SCALAR {
            return tape_err("loss must be a scalar");
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(vec![1.0]);
        for n in (0..=root).rev() {
            let Some(g) = grads[n].take() else { continue };
            let node = &self.nodes[n];
            let acc = |k: usize, contrib: Vec<f64>, grads: &mut Vec<Option<Vec<f64>>>| match &mut grads[k] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contrib) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            };
            match node.op {
                // keep leaf gradients for the caller
                Op::Leaf => grads[n] = Some(g),
                Op::Conv { x, kernel, bias } => {
                    let [cin, h, w] = self.nodes[x].shape;
                    let cout = node.shape[0];
                    let (gx, gk, gb) =
                        conv::backward(&self.nodes[x].value, cin, h, w, &self.nodes[kernel].value, cout, &g);
                    acc(x, gx, &mut grads);
                    acc(kernel, gk, &mut grads);
                    acc(bias, gb, &mut grads);
                }
                Op::Relu(x) => {
                    let d = g
                        .iter()
                        .zip(&self.nodes[x].value)
                        .map(|(gi, v)| if *v > 0.0 { *gi } else { 0.0 })
                        .collect();
                    acc(x, d, &mut grads);
                }
                Op::Abs(x) => {
                    let d = g
                        .iter()
                        .zip(&self.nodes[x].value)
                        .map(|(gi, v)| {
                            if *v > 0.0 {
                                *gi
                            } else if *v < 0.0 {
                                -gi
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    acc(x, d, &mut grads);
                }
                Op::Add(a, b) => {
                    acc(a, g.clone(), &mut grads);
                    acc(b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(b, g.iter().map(|v| -v).collect(), &mut grads);
                    acc(a, g, &mut grads);
                }
                Op::Scale(x, c) => acc(x, g.iter().map(|v| c * v).collect(), &mut grads),
                Op::ScaleBy { s, x } => {
                    let c = self.nodes[s].value[0];
                    let ds: f64 = g.iter().zip(&self.nodes[x].value).map(|(a, b)| a * b).sum();
                    acc(s, vec![ds], &mut grads);
                    acc(x, g.iter().map(|v| c * v).collect(), &mut grads);
                }
                Op::MulConst(x, w) => acc(x, g.iter().zip(w).map(|(a, b)| a * b).collect(), &mut grads),
                Op::Forward(x, op) => {
                    let s = Sinogram::with_values(op.geometry().clone(), g);
                    acc(x, op.adjoint(&s)?.into_values(), &mut grads);
                }
                Op::Adjoint(y, op) => {
                    let img = Image::with_values(op.grid(), g);
                    acc(y, op.apply(&img)?.into_values(), &mut grads);
                }
                Op::Mse(a, b) => {
                    let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                    let c = 2.0 * g[0] / va.len() as f64;
                    let d: Vec<f64> = va.iter().zip(vb).map(|(p, q)| c * (p - q)).collect();
                    acc(b, d.iter().map(|v| -v).collect(), &mut grads);
                    acc(a, d, &mut grads);
                }
                Op::HalfSquaredNorm(x) => {
                    acc(x, self.nodes[x].value.iter().map(|v| g[0] * v).collect(), &mut grads)
                }
                Op::Sum(x) => acc(x, vec![g[0]; self.nodes[x].value.len()], &mut grads),
            }
        }
        let sizes = self.nodes.iter().map(|n| n.value.len()).collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            sizes,
        })
    }
}

/// Result of [`Tape::backprop`]; gradients are kept for leaves only.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to a leaf; zero when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Result<Vec<f64>> {
        if v.tape != self.tape || v.index >= self.grads.len() {
            return tape_err("variable is not part of this gradient set");
        }
        Ok(self.grads[v.index]
            .clone()
            .unwrap_or_else(|| vec![0.0; self.sizes[v.index]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let mut t = Tape::new();
        let theta = vec![0.5, -2.0, 3.25, 0.0];
        let p = t.leaf(theta.clone(), [1, 1, 4]).unwrap();
        let l = t.half_squared_norm(p).unwrap();
        assert_eq!(t.backprop(l).unwrap().get(p).unwrap(), theta);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut t = Tape::new();
        let p = t.leaf(vec![1.0, 2.0], [1, 1, 2]).unwrap();
        let c = t.leaf(vec![4.0], SCALAR).unwrap();
        let l = t.scale(c, 3.0).unwrap();
        let g = t.backprop(l).unwrap();
        assert_eq!(g.get(p).unwrap(), vec![0.0, 0.0]);
        assert_eq!(g.get(c).unwrap(), vec![3.0]);
    }

    #[test]
    fn foreign_and_unrecorded_vars_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.leaf(vec![1.0], SCALAR).unwrap();
        let _ = b.leaf(vec![1.0], SCALAR).unwrap();
        assert!(matches!(b.relu(x), Err(Error::Tape(_))));
        let ghost = Var { tape: a.id, index: 7 };
        assert!(matches!(a.relu(ghost), Err(Error::Tape(_))));
        assert!(a.backprop(ghost).is_err());
    }

    #[test]
    fn reused_value_accumulates() {
        // l = sum(x*c + x) with x used twice
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, -1.0, 2.0], [1, 1, 3]).unwrap();
        let s = t.scale(x, 2.5).unwrap();
        let y = t.add(s, x).unwrap();
        let l = t.sum(y).unwrap();
        assert_eq!(t.backprop(l).unwrap().get(x).unwrap(), vec![3.5; 3]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0], [1, 1, 2]).unwrap();
        assert!(t.backprop(x).is_err());
        assert!(t.leaf(vec![1.0], [1, 1, 2]).is_err());
    }
}
