//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a `1×1` result returns the gradient of that scalar
//! with respect to every recorded node.

use std::cell::RefCell;

use nalgebra::DMatrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Ln(Var, f64),
    Sqrt(Var),
    SoftmaxRows(Var),
    Sum(Var),
    RowSums(Var),
    PairwiseSqDist(Var, Var),
    Transpose(Var),
    L2NormalizeRows(Var),
}

struct Node {
    value: DMatrix<f64>,
    op: Op,
}

/// Records values and the operations that produced them.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients indexed by [`Var`]; `None` for nodes the output does not depend on.
pub struct Gradients {
    grads: Vec<Option<DMatrix<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DMatrix<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or a `rows×cols` zero matrix when `v` was unused.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> DMatrix<f64> {
        self.get(v).cloned().unwrap_or_else(|| DMatrix::zeros(rows, cols))
    }
}

fn zip_map(a: &DMatrix<f64>, b: &DMatrix<f64>, f: impl Fn(f64, f64) -> f64) -> DMatrix<f64> {
    a.zip_map(b, f)
}

fn pairwise_sq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n, d) = (a.nrows(), b.nrows(), a.ncols());
    DMatrix::from_fn(m, n, |i, j| {
        let mut s = 0.0;
        for k in 0..d {
            let t = a[(i, k)] - b[(j, k)];
            s += t * t;
        }
        s
    })
}

fn row_norms(a: &DMatrix<f64>) -> Vec<f64> {
    (0..a.nrows()).map(|i| a.row(i).norm().max(1e-12)).collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: DMatrix<f64>, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// A constant or parameter input.
    pub fn leaf(&self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> DMatrix<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value[(0, 0)]
    }

    fn unary(&self, a: Var, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>, op: Op) -> Var {
        let value = f(&self.nodes.borrow()[a.0].value);
        self.push(value, op)
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>, op: Op) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value, &nodes[b.0].value)
        };
        self.push(value, op)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::MatMul(a, b))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x.component_mul(y), Op::Mul(a, b))
    }

    /// Elementwise quotient.
    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| zip_map(x, y, |p, q| p / q), Op::Div(a, b))
    }

    /// Adds the `1×m` row `row` to every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        self.binary(
            a,
            row,
            |x, r| {
                let mut out = x.clone();
                for mut line in out.row_iter_mut() {
                    line += r.row(0);
                }
                out
            },
            Op::AddRow(a, row),
        )
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x.add_scalar(c), Op::AddScalar(a))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(|v| v.max(0.0)), Op::Relu(a))
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        self.unary(a, |x| x.map(|v| if v > 0.0 { v } else { slope * v }), Op::LeakyRelu(a, slope))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(f64::exp), Op::Exp(a))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln(&self, a: Var, floor: f64) -> Var {
        self.unary(a, |x| x.map(|v| v.max(floor).ln()), Op::Ln(a, floor))
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(f64::sqrt), Op::Sqrt(a))
    }

    pub fn softmax_rows(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| {
                let mut out = x.clone();
                for mut row in out.row_iter_mut() {
                    let m = row.max();
                    row.apply(|v| *v = (*v - m).exp());
                    let s = row.sum();
                    row /= s;
                }
                out
            },
            Op::SoftmaxRows(a),
        )
    }

    /// Sum of all entries, as `1×1`.
    pub fn sum(&self, a: Var) -> Var {
        self.unary(a, |x| DMatrix::from_element(1, 1, x.sum()), Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.nodes.borrow()[a.0].value.len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an `n×1` column.
    pub fn row_sums(&self, a: Var) -> Var {
        self.unary(a, |x| DMatrix::from_fn(x.nrows(), 1, |i, _| x.row(i).sum()), Op::RowSums(a))
    }

    /// `D_ij = ‖a_i - b_j‖²`.
    pub fn pairwise_sq_dist(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, pairwise_sq, Op::PairwiseSqDist(a, b))
    }

    pub fn transpose(&self, a: Var) -> Var {
        self.unary(a, |x| x.transpose(), Op::Transpose(a))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize_rows(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| {
                let norms = row_norms(x);
                DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] / norms[i])
            },
            Op::L2NormalizeRows(a),
        )
    }

    /// Gradients of the `1×1` node `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[out.0].value.shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; nodes.len()];
        grads[out.0] = Some(DMatrix::from_element(1, 1, 1.0));

        fn acc(grads: &mut [Option<DMatrix<f64>>], v: Var, g: DMatrix<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            let val = |v: Var| &nodes[v.0].value;
            match node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(&mut grads, a, &g * val(b).transpose());
                    acc(&mut grads, b, val(a).transpose() * &g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, b, -g.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, a, g.component_mul(val(b)));
                    acc(&mut grads, b, g.component_mul(val(a)));
                }
                Op::Div(a, b) => {
                    let (x, y) = (val(a), val(b));
                    acc(&mut grads, a, zip_map(&g, y, |gi, yi| gi / yi));
                    let gb = DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| -g[(i, j)] * x[(i, j)] / (y[(i, j)] * y[(i, j)]));
                    acc(&mut grads, b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = DMatrix::from_fn(1, g.ncols(), |_, j| g.column(j).sum());
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, row, gr);
                }
                Op::Scale(a, c) => acc(&mut grads, a, &g * c),
                Op::AddScalar(a) => acc(&mut grads, a, g.clone()),
                Op::Relu(a) => {
                    let x = val(a);
                    acc(&mut grads, a, zip_map(&g, x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
                }
                Op::LeakyRelu(a, slope) => {
                    let x = val(a);
                    acc(&mut grads, a, zip_map(&g, x, |gi, xi| if xi > 0.0 { gi } else { slope * gi }));
                }
                Op::Exp(a) => acc(&mut grads, a, g.component_mul(&node.value)),
                Op::Ln(a, floor) => {
                    let x = val(a);
                    acc(&mut grads, a, zip_map(&g, x, |gi, xi| if xi > floor { gi / xi } else { 0.0 }));
                }
                Op::Sqrt(a) => {
                    acc(&mut grads, a, zip_map(&g, &node.value, |gi, yi| if yi > 0.0 { gi / (2.0 * yi) } else { 0.0 }));
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut gx = DMatrix::zeros(y.nrows(), y.ncols());
                    for i in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols()).map(|j| g[(i, j)] * y[(i, j)]).sum();
                        for j in 0..y.ncols() {
                            gx[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                        }
                    }
                    acc(&mut grads, a, gx);
                }
                Op::Sum(a) => {
                    let x = val(a);
                    acc(&mut grads, a, DMatrix::from_element(x.nrows(), x.ncols(), g[(0, 0)]));
                }
                Op::RowSums(a) => {
                    let x = val(a);
                    acc(&mut grads, a, DMatrix::from_fn(x.nrows(), x.ncols(), |i, _| g[(i, 0)]));
                }
                Op::PairwiseSqDist(a, b) => {
                    let (x, y) = (val(a), val(b));
                    // dD_ij/dx_i = 2(x_i - y_j), dD_ij/dy_j = 2(y_j - x_i)
                    let row_g: Vec<f64> = (0..g.nrows()).map(|i| g.row(i).sum()).collect();
                    let col_g: Vec<f64> = (0..g.ncols()).map(|j| g.column(j).sum()).collect();
                    let gy = &g * y;
                    let gtx = g.transpose() * x;
                    let ga = DMatrix::from_fn(x.nrows(), x.ncols(), |i, k| 2.0 * (row_g[i] * x[(i, k)] - gy[(i, k)]));
                    let gb = DMatrix::from_fn(y.nrows(), y.ncols(), |j, k| 2.0 * (col_g[j] * y[(j, k)] - gtx[(j, k)]));
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::Transpose(a) => acc(&mut grads, a, g.transpose()),
                Op::L2NormalizeRows(a) => {
                    let x = val(a);
                    let y = &node.value;
                    let norms = row_norms(x);
                    let mut gx = DMatrix::zeros(x.nrows(), x.ncols());
                    for i in 0..x.nrows() {
                        let dot: f64 = (0..x.ncols()).map(|j| g[(i, j)] * y[(i, j)]).sum();
                        for j in 0..x.ncols() {
                            gx[(i, j)] = (g[(i, j)] - y[(i, j)] * dot) / norms[i];
                        }
                    }
                    acc(&mut grads, a, gx);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}
