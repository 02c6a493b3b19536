//! A small reverse-mode automatic differentiation tape over `f64` matrices.
//!
//! Each training sentence builds a fresh [`Graph`]; forward values are
//! computed eagerly as nodes are created, and [`Graph::backward`] walks the
//! tape once in reverse to accumulate gradients into the parameter slots of
//! a [`GradStore`]. Column vectors are `n x 1` matrices throughout.

use std::rc::Rc;

use ndarray::{concatenate, s, Array2, Axis};

use crate::lexicon::LexiconMatrix;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    /// Constant leaf; no gradient.
    Leaf,
    /// Trainable leaf; gradients accumulate into `GradStore` slot `slot`.
    Param {
        slot: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    /// Broadcast multiply of a 1x1 scalar node with a matrix node.
    ScalarMul(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    /// Stack two column vectors vertically.
    ConcatRows(Var, Var),
    SliceRows(Var, usize, usize),
    /// Stack column vectors side by side into a matrix.
    HStack(Vec<Var>),
    /// Extract column `col` of a matrix as an n x 1 vector.
    Column(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    Ln(Var),
    /// ln(max(x, floor)); gradient is zero where the floor is active.
    LnClamped(Var, f64),
    /// Column-wise softmax of an n x 1 vector, with max subtraction.
    Softmax(Var),
    /// Element `row` of an n x 1 vector as a 1x1 scalar.
    Pick(Var, usize),
    /// Sparse lexicon matrix times attention vector; the matrix entries are
    /// constants, gradients flow into the attention vector only.
    LexPred(Rc<LexiconMatrix>, Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradient accumulator aligned with a model's tensor slots.
#[derive(Debug, Clone)]
pub struct GradStore {
    pub slots: Vec<Array2<f64>>,
}

impl GradStore {
    pub fn zeros_like(shapes: &[(usize, usize)]) -> Self {
        GradStore {
            slots: shapes.iter().map(|&(r, c)| Array2::zeros((r, c))).collect(),
        }
    }

    pub fn zero(&mut self) {
        for slot in &mut self.slots {
            slot.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for slot in &mut self.slots {
            slot.mapv_inplace(|g| g * factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().all(|s| s.iter().all(|g| g.is_finite()))
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Graph {
            nodes: Vec::with_capacity(nodes),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registers a trainable tensor; its gradient accumulates into `slot`.
    pub fn param(&mut self, slot: usize, value: &Array2<f64>) -> Var {
        self.push(value.clone(), Op::Param { slot })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(value, Op::Mul(a, b))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x + c);
        self.push(value, Op::AddConst(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    /// `scalar` must be 1x1; broadcasts over `m`.
    pub fn scalar_mul(&mut self, scalar: Var, m: Var) -> Var {
        debug_assert_eq!(self.nodes[scalar.0].value.dim(), (1, 1));
        let s = self.nodes[scalar.0].value[[0, 0]];
        let value = self.nodes[m.0].value.mapv(|x| s * x);
        self.push(value, Op::ScalarMul(scalar, m))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let value = concatenate![Axis(0), self.nodes[a.0].value, self.nodes[b.0].value];
        self.push(value, Op::ConcatRows(a, b))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.nodes[a.0]
            .value
            .slice(s![start..start + len, ..])
            .to_owned();
        self.push(value, Op::SliceRows(a, start, len))
    }

    pub fn hstack(&mut self, cols: &[Var]) -> Var {
        debug_assert!(!cols.is_empty());
        let views: Vec<_> = cols.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let value = concatenate(Axis(1), &views).expect("hstack shape mismatch");
        self.push(value, Op::HStack(cols.to_vec()))
    }

    pub fn column(&mut self, a: Var, col: usize) -> Var {
        let value = self.nodes[a.0]
            .value
            .column(col)
            .to_owned()
            .insert_axis(Axis(1));
        self.push(value, Op::Column(a, col))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::ln);
        self.push(value, Op::Ln(a))
    }

    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.max(floor).ln());
        self.push(value, Op::LnClamped(a, floor))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        debug_assert_eq!(x.ncols(), 1);
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp = x.mapv(|v| (v - max).exp());
        let sum = exp.sum();
        self.push(exp / sum, Op::Softmax(a))
    }

    pub fn pick(&mut self, a: Var, row: usize) -> Var {
        let value = Array2::from_elem((1, 1), self.nodes[a.0].value[[row, 0]]);
        self.push(value, Op::Pick(a, row))
    }

    pub fn lex_predictive(&mut self, matrix: Rc<LexiconMatrix>, attention: Var) -> Var {
        let a = &self.nodes[attention.0].value;
        debug_assert_eq!(a.ncols(), 1);
        debug_assert_eq!(a.nrows(), matrix.num_cols());
        let weights: Vec<f64> = a.column(0).to_vec();
        let dense = matrix.weighted_columns(&weights);
        let value = Array2::from_shape_vec((matrix.num_rows(), 1), dense).unwrap();
        self.push(value, Op::LexPred(matrix, attention))
    }

    /// Reverse pass from the 1x1 `loss` node. Parameter gradients are added
    /// into `sink`; upstream nodes are visited in reverse creation order, so
    /// the accumulation order is fixed and results are bit-reproducible.
    pub fn backward(&self, loss: Var, sink: &mut GradStore) {
        debug_assert_eq!(self.nodes[loss.0].value.dim(), (1, 1));
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Param { slot } => {
                    sink.slots[*slot] += &grad;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, grad);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, -grad);
                }
                Op::Mul(a, b) => {
                    let da = &grad * &self.nodes[b.0].value;
                    let db = grad * &self.nodes[a.0].value;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddConst(a) => accumulate(&mut grads, *a, grad),
                Op::Scale(a, c) => accumulate(&mut grads, *a, grad * *c),
                Op::ScalarMul(scalar, m) => {
                    let s = self.nodes[scalar.0].value[[0, 0]];
                    let ds = (&grad * &self.nodes[m.0].value).sum();
                    accumulate(&mut grads, *scalar, Array2::from_elem((1, 1), ds));
                    accumulate(&mut grads, *m, grad * s);
                }
                Op::MatMul(a, b) => {
                    let da = grad.dot(&self.nodes[b.0].value.t());
                    let db = self.nodes[a.0].value.t().dot(&grad);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, grad.t().to_owned()),
                Op::ConcatRows(a, b) => {
                    let na = self.nodes[a.0].value.nrows();
                    let da = grad.slice(s![..na, ..]).to_owned();
                    let db = grad.slice(s![na.., ..]).to_owned();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::SliceRows(a, start, len) => {
                    let mut da = Array2::zeros(self.nodes[a.0].value.dim());
                    da.slice_mut(s![*start..start + len, ..]).assign(&grad);
                    accumulate(&mut grads, *a, da);
                }
                Op::HStack(cols) => {
                    for (j, &col) in cols.iter().enumerate() {
                        let dc = grad.column(j).to_owned().insert_axis(Axis(1));
                        accumulate(&mut grads, col, dc);
                    }
                }
                Op::Column(a, col) => {
                    let mut da = Array2::zeros(self.nodes[a.0].value.dim());
                    da.column_mut(*col).assign(&grad.column(0));
                    accumulate(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[id].value;
                    let da = grad * y * &y.mapv(|v| 1.0 - v);
                    accumulate(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[id].value;
                    let da = grad * &y.mapv(|v| 1.0 - v * v);
                    accumulate(&mut grads, *a, da);
                }
                Op::Ln(a) => {
                    let da = grad / &self.nodes[a.0].value;
                    accumulate(&mut grads, *a, da);
                }
                Op::LnClamped(a, floor) => {
                    let x = &self.nodes[a.0].value;
                    let mut da = grad / x;
                    ndarray::Zip::from(&mut da).and(x).for_each(|g, &v| {
                        if v <= *floor {
                            *g = 0.0;
                        }
                    });
                    accumulate(&mut grads, *a, da);
                }
                Op::Softmax(a) => {
                    let p = &self.nodes[id].value;
                    let dot = (&grad * p).sum();
                    let da = p * &grad.mapv(|g| g - dot);
                    accumulate(&mut grads, *a, da);
                }
                Op::Pick(a, row) => {
                    let mut da = Array2::zeros(self.nodes[a.0].value.dim());
                    da[[*row, 0]] = grad[[0, 0]];
                    accumulate(&mut grads, *a, da);
                }
                Op::LexPred(matrix, attention) => {
                    let mut da = Array2::zeros((matrix.num_cols(), 1));
                    for j in 0..matrix.num_cols() {
                        let mut acc = 0.0;
                        for &(e, p) in matrix.column(j) {
                            acc += p * grad[[e as usize, 0]];
                        }
                        da[[j, 0]] = acc;
                    }
                    accumulate(&mut grads, *attention, da);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}
