//! Tape-based reverse-mode automatic differentiation over `f64` matrices.
//!
//! Every value on the tape is a dense 2-D array: row vectors are `1 x d`,
//! scalars are `1 x 1`. Operations evaluate eagerly and record a backward
//! closure; [`Tape::backward`] walks the tape in reverse to accumulate
//! gradients for every node. A fresh tape is built per forward pass, so the
//! reverse index order is always a valid topological order.

use ndarray::{Array2, Axis};
use std::cell::RefCell;

pub type Matrix = Array2<f64>;

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(usize);

type BackwardFn = Box<dyn Fn(&Matrix, &mut dyn FnMut(usize, Matrix))>;

struct Node {
    value: Matrix,
    backward: Option<BackwardFn>,
}

/// Wengert list: values plus backward closures, built eagerly.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, if any path reached it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient as an owned matrix, zeros when no path reached `v`.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Matrix::zeros(shape),
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Gaussian error linear unit, tanh approximation.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Matrix, backward: Option<BackwardFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, backward });
        Var(nodes.len() - 1)
    }

    /// Leaf node. Parameters and constants alike; the caller decides which
    /// gradients it reads after the backward pass.
    pub fn leaf(&self, value: Matrix) -> Var {
        self.push(value, None)
    }

    pub fn value(&self, v: Var) -> Matrix {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn dim(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        let m = &nodes[v.0].value;
        assert_eq!(m.dim(), (1, 1), "scalar() on non 1x1 value");
        m[[0, 0]]
    }

    /// Matrix product `a @ b`.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = {
            let nodes = self.nodes.borrow();
            (nodes[a.0].value.clone(), nodes[b.0].value.clone())
        };
        let out = va.dot(&vb);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.0, g.dot(&vb.t()));
                sink(b.0, va.t().dot(g));
            })),
        )
    }

    /// Elementwise sum of two same-shape values.
    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            assert_eq!(nodes[a.0].value.dim(), nodes[b.0].value.dim());
            &nodes[a.0].value + &nodes[b.0].value
        };
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.0, g.clone());
                sink(b.0, g.clone());
            })),
        )
    }

    /// Adds a `1 x d` row vector to every row of an `m x d` matrix.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let r = &nodes[row.0].value;
            assert_eq!(r.nrows(), 1);
            &nodes[a.0].value + r
        };
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.0, g.clone());
                sink(row.0, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            })),
        )
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            &nodes[a.0].value * c
        };
        self.push(out, Some(Box::new(move |g, sink| sink(a.0, g * c))))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// Elementwise product of two same-shape values.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = {
            let nodes = self.nodes.borrow();
            (nodes[a.0].value.clone(), nodes[b.0].value.clone())
        };
        assert_eq!(va.dim(), vb.dim());
        let out = &va * &vb;
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.0, g * &vb);
                sink(b.0, g * &va);
            })),
        )
    }

    /// Multiplies every element of `a` by the `1 x 1` scalar `s`.
    pub fn scalar_mul(&self, a: Var, s: Var) -> Var {
        let (va, sv) = {
            let nodes = self.nodes.borrow();
            assert_eq!(nodes[s.0].value.dim(), (1, 1));
            (nodes[a.0].value.clone(), nodes[s.0].value[[0, 0]])
        };
        let out = &va * sv;
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.0, g * sv);
                let ds = (g * &va).sum();
                sink(s.0, Matrix::from_elem((1, 1), ds));
            })),
        )
    }

    pub fn transpose(&self, a: Var) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.t().to_owned()
        };
        self.push(out, Some(Box::new(move |g, sink| sink(a.0, g.t().to_owned()))))
    }

    /// Adds a constant (non-differentiated) matrix, e.g. an attention mask.
    pub fn add_mask(&self, a: Var, mask: &Matrix) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            assert_eq!(nodes[a.0].value.dim(), mask.dim());
            &nodes[a.0].value + mask
        };
        self.push(out, Some(Box::new(move |g, sink| sink(a.0, g.clone()))))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&self, a: Var) -> Var {
        let va = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.clone()
        };
        let mut out = va;
        for mut row in out.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let y = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut dx = g.clone();
                for (mut drow, yrow) in dx.rows_mut().into_iter().zip(y.rows()) {
                    let dot: f64 = drow.iter().zip(yrow.iter()).map(|(d, y)| d * y).sum();
                    for (d, y) in drow.iter_mut().zip(yrow.iter()) {
                        *d = (*d - dot) * y;
                    }
                }
                sink(a.0, dx);
            })),
        )
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&self, a: Var) -> Var {
        let va = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.clone()
        };
        let mut out = va;
        for mut row in out.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            row.mapv_inplace(|x| x - lse);
        }
        let probs = out.mapv(f64::exp);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut dx = g.clone();
                for (mut drow, prow) in dx.rows_mut().into_iter().zip(probs.rows()) {
                    let gsum: f64 = drow.sum();
                    for (d, p) in drow.iter_mut().zip(prow.iter()) {
                        *d -= p * gsum;
                    }
                }
                sink(a.0, dx);
            })),
        )
    }

    pub fn gelu(&self, a: Var) -> Var {
        let va = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.clone()
        };
        let out = va.mapv(gelu_scalar);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.0, g * &va.mapv(gelu_grad_scalar));
            })),
        )
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        let va = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.clone()
        };
        let out = va.mapv(|x| if x >= 0.0 { x } else { slope * x });
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.0, g * &va.mapv(|x| if x >= 0.0 { 1.0 } else { slope }));
            })),
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let va = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.clone()
        };
        let out = va.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let y = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.0, g * &(&y * &y.mapv(|v| 1.0 - v)));
            })),
        )
    }

    /// Per-row layer normalization with learned gain and bias (both `1 x d`).
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let (vx, vgain, vbias) = {
            let nodes = self.nodes.borrow();
            (
                nodes[x.0].value.clone(),
                nodes[gain.0].value.clone(),
                nodes[bias.0].value.clone(),
            )
        };
        let d = vx.ncols();
        assert_eq!(vgain.dim(), (1, d));
        assert_eq!(vbias.dim(), (1, d));
        let mut xhat = vx.clone();
        let mut inv_std = Vec::with_capacity(vx.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std.push(s);
            row.mapv_inplace(|v| (v - mean) * s);
        }
        let mut out = xhat.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * vgain[[0, j]] + vbias[[0, j]];
            }
        }
        let xhat_saved = xhat;
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let n = g.nrows();
                let dgain = (g * &xhat_saved).sum_axis(Axis(0)).insert_axis(Axis(0));
                let dbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                let mut dx = Matrix::zeros((n, d));
                for i in 0..n {
                    // dxhat_j = g_j * gain_j; standard layer-norm backward per row
                    let mut m1 = 0.0; // mean of dxhat
                    let mut m2 = 0.0; // mean of dxhat * xhat
                    for j in 0..d {
                        let dxh = g[[i, j]] * vgain[[0, j]];
                        m1 += dxh;
                        m2 += dxh * xhat_saved[[i, j]];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    for j in 0..d {
                        let dxh = g[[i, j]] * vgain[[0, j]];
                        dx[[i, j]] = inv_std[i] * (dxh - m1 - xhat_saved[[i, j]] * m2);
                    }
                }
                sink(x.0, dx);
                sink(gain.0, dgain);
                sink(bias.0, dbias);
            })),
        )
    }

    /// Selects rows by index (with repetition allowed), e.g. embedding lookup.
    pub fn gather_rows(&self, a: Var, indices: &[usize]) -> Var {
        let va = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.clone()
        };
        let d = va.ncols();
        let mut out = Matrix::zeros((indices.len(), d));
        for (i, &idx) in indices.iter().enumerate() {
            out.row_mut(i).assign(&va.row(idx));
        }
        let idx: Vec<usize> = indices.to_vec();
        let src_shape = va.dim();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut da = Matrix::zeros(src_shape);
                for (i, &j) in idx.iter().enumerate() {
                    let mut row = da.row_mut(j);
                    row += &g.row(i);
                }
                sink(a.0, da);
            })),
        )
    }

    /// One element per row: `out[i, 0] = a[i, cols[i]]`.
    pub fn gather_cols_per_row(&self, a: Var, cols: &[usize]) -> Var {
        let va = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.clone()
        };
        assert_eq!(va.nrows(), cols.len());
        let mut out = Matrix::zeros((cols.len(), 1));
        for (i, &c) in cols.iter().enumerate() {
            out[[i, 0]] = va[[i, c]];
        }
        let cols: Vec<usize> = cols.to_vec();
        let shape = va.dim();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut da = Matrix::zeros(shape);
                for (i, &c) in cols.iter().enumerate() {
                    da[[i, c]] = g[[i, 0]];
                }
                sink(a.0, da);
            })),
        )
    }

    /// Column slice `a[:, from..to]`.
    pub fn slice_cols(&self, a: Var, from: usize, to: usize) -> Var {
        let va = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.clone()
        };
        let out = va.slice(ndarray::s![.., from..to]).to_owned();
        let shape = va.dim();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut da = Matrix::zeros(shape);
                da.slice_mut(ndarray::s![.., from..to]).assign(g);
                sink(a.0, da);
            })),
        )
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let values: Vec<Matrix> = {
            let nodes = self.nodes.borrow();
            parts.iter().map(|p| nodes[p.0].value.clone()).collect()
        };
        let rows = values[0].nrows();
        let widths: Vec<usize> = values.iter().map(|v| v.ncols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Matrix::zeros((rows, total));
        let mut at = 0;
        for v in &values {
            out.slice_mut(ndarray::s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut at = 0;
                for (&id, &w) in ids.iter().zip(widths.iter()) {
                    sink(id, g.slice(ndarray::s![.., at..at + w]).to_owned());
                    at += w;
                }
            })),
        )
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let values: Vec<Matrix> = {
            let nodes = self.nodes.borrow();
            parts.iter().map(|p| nodes[p.0].value.clone()).collect()
        };
        let cols = values[0].ncols();
        let heights: Vec<usize> = values.iter().map(|v| v.nrows()).collect();
        let total: usize = heights.iter().sum();
        let mut out = Matrix::zeros((total, cols));
        let mut at = 0;
        for v in &values {
            out.slice_mut(ndarray::s![at..at + v.nrows(), ..]).assign(v);
            at += v.nrows();
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut at = 0;
                for (&id, &h) in ids.iter().zip(heights.iter()) {
                    sink(id, g.slice(ndarray::s![at..at + h, ..]).to_owned());
                    at += h;
                }
            })),
        )
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let (val, shape) = {
            let nodes = self.nodes.borrow();
            (nodes[a.0].value.sum(), nodes[a.0].value.dim())
        };
        self.push(
            Matrix::from_elem((1, 1), val),
            Some(Box::new(move |g, sink| {
                sink(a.0, Matrix::from_elem(shape, g[[0, 0]]));
            })),
        )
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = {
            let nodes = self.nodes.borrow();
            let (r, c) = nodes[a.0].value.dim();
            (r * c) as f64
        };
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Column means over rows: `m x d -> 1 x d`.
    pub fn mean_rows(&self, a: Var) -> Var {
        let (val, rows, cols) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            (
                v.mean_axis(Axis(0)).expect("nonempty").insert_axis(Axis(0)),
                v.nrows(),
                v.ncols(),
            )
        };
        self.push(
            val,
            Some(Box::new(move |g, sink| {
                let mut da = Matrix::zeros((rows, cols));
                let scaled = g / rows as f64;
                for mut row in da.rows_mut() {
                    row.assign(&scaled.row(0));
                }
                sink(a.0, da);
            })),
        )
    }

    /// Reverse pass from a `1 x 1` loss node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.dim(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            if grads[i].is_none() {
                continue;
            }
            if let Some(bwd) = &nodes[i].backward {
                let g = grads[i].clone().expect("checked above");
                let mut sink = |p: usize, m: Matrix| match &mut grads[p] {
                    Some(acc) => *acc += &m,
                    slot @ None => *slot = Some(m),
                };
                bwd(&g, &mut sink);
            }
        }
        Gradients { grads }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central finite differences of `f` w.r.t. `inputs[which]`.
    fn numeric_grad(
        f: &dyn Fn(&[Matrix]) -> f64,
        inputs: &[Matrix],
        which: usize,
        eps: f64,
    ) -> Matrix {
        let mut grad = Matrix::zeros(inputs[which].dim());
        for i in 0..grad.nrows() {
            for j in 0..grad.ncols() {
                let mut plus = inputs.to_vec();
                plus[which][[i, j]] += eps;
                let mut minus = inputs.to_vec();
                minus[which][[i, j]] -= eps;
                grad[[i, j]] = (f(&plus) - f(&minus)) / (2.0 * eps);
            }
        }
        grad
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64, what: &str) {
        assert_eq!(a.dim(), b.dim(), "{what}: shape mismatch");
        for (x, y) in a.iter().zip(b.iter()) {
            let denom = x.abs().max(y.abs()).max(1.0);
            assert!(
                (x - y).abs() / denom < tol,
                "{what}: {x} vs {y} (tol {tol})"
            );
        }
    }

    /// Runs `build` to a scalar loss and checks every input's analytic
    /// gradient against finite differences.
    fn check_grads(build: &dyn Fn(&Tape, &[Var]) -> Var, inputs: &[Matrix]) {
        let f = |vals: &[Matrix]| -> f64 {
            let tape = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
            let loss = build(&tape, &vars);
            tape.scalar(loss)
        };
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
        let loss = build(&tape, &vars);
        let grads = tape.backward(loss);
        for (k, v) in vars.iter().enumerate() {
            let analytic = grads.get_or_zeros(*v, inputs[k].dim());
            let numeric = numeric_grad(&f, inputs, k, 1e-6);
            assert_close(&analytic, &numeric, 1e-6, &format!("input {k}"));
        }
    }

    #[test]
    fn matmul_value_and_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 4, 2);
        let w = random_matrix(&mut rng, 3, 2);
        check_grads(
            &|tape, vars| {
                let prod = tape.matmul(vars[0], vars[1]);
                let weighted = tape.mul(prod, vars[2]);
                tape.sum_all(weighted)
            },
            &[a, b, w],
        );
    }

    #[test]
    fn elementwise_ops_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 2, 5);
        let b = random_matrix(&mut rng, 2, 5);
        check_grads(
            &|tape, vars| {
                let s = tape.add(vars[0], vars[1]);
                let m = tape.mul(s, vars[0]);
                let sc = tape.scale(m, 0.3);
                tape.mean_all(sc)
            },
            &[a, b],
        );
    }

    #[test]
    fn softmax_and_log_softmax_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 3, 6);
        let w = random_matrix(&mut rng, 3, 6);
        check_grads(
            &|tape, vars| {
                let sm = tape.softmax_rows(vars[0]);
                let weighted = tape.mul(sm, vars[1]);
                tape.sum_all(weighted)
            },
            &[a.clone(), w.clone()],
        );
        check_grads(
            &|tape, vars| {
                let lsm = tape.log_softmax_rows(vars[0]);
                let weighted = tape.mul(lsm, vars[1]);
                tape.sum_all(weighted)
            },
            &[a, w],
        );
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let tape = Tape::new();
        let a = tape.leaf(array![[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]]);
        let sm = tape.softmax_rows(a);
        let v = tape.value(sm);
        for row in v.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn activations_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_matrix(&mut rng, 2, 7);
        let w = random_matrix(&mut rng, 2, 7);
        for act in 0..3 {
            check_grads(
                &move |tape: &Tape, vars: &[Var]| {
                    let y = match act {
                        0 => tape.gelu(vars[0]),
                        1 => tape.leaky_relu(vars[0], 0.2),
                        _ => tape.sigmoid(vars[0]),
                    };
                    let weighted = tape.mul(y, vars[1]);
                    tape.sum_all(weighted)
                },
                &[a.clone(), w.clone()],
            );
        }
    }

    #[test]
    fn gelu_known_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        // gelu(x) -> x for large x, -> 0 for very negative x
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-9);
        assert!(gelu_scalar(-10.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 4, 6);
        let gain = random_matrix(&mut rng, 1, 6);
        let bias = random_matrix(&mut rng, 1, 6);
        let w = random_matrix(&mut rng, 4, 6);
        check_grads(
            &|tape, vars| {
                let y = tape.layer_norm(vars[0], vars[1], vars[2], 1e-5);
                let weighted = tape.mul(y, vars[3]);
                tape.sum_all(weighted)
            },
            &[x, gain, bias, w],
        );
    }

    #[test]
    fn gather_slice_concat_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_matrix(&mut rng, 5, 6);
        let w = random_matrix(&mut rng, 4, 6);
        check_grads(
            &|tape, vars| {
                // repeated index exercises scatter-add
                let rows = tape.gather_rows(vars[0], &[0, 2, 2, 4]);
                let left = tape.slice_cols(rows, 0, 3);
                let right = tape.slice_cols(rows, 3, 6);
                let joined = tape.concat_cols(&[left, right]);
                let weighted = tape.mul(joined, vars[1]);
                tape.sum_all(weighted)
            },
            &[a, w],
        );
    }

    #[test]
    fn concat_rows_and_mean_rows_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 2, 4);
        let b = random_matrix(&mut rng, 3, 4);
        let w = random_matrix(&mut rng, 1, 4);
        check_grads(
            &|tape, vars| {
                let stacked = tape.concat_rows(&[vars[0], vars[1]]);
                let pooled = tape.mean_rows(stacked);
                let weighted = tape.mul(pooled, vars[2]);
                tape.sum_all(weighted)
            },
            &[a, b, w],
        );
    }

    #[test]
    fn scalar_mul_and_gather_cols_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_matrix(&mut rng, 3, 4);
        let s = random_matrix(&mut rng, 1, 1);
        check_grads(
            &|tape, vars| {
                let scaled = tape.scalar_mul(vars[0], vars[1]);
                let picked = tape.gather_cols_per_row(scaled, &[1, 0, 3]);
                tape.sum_all(picked)
            },
            &[a, s],
        );
    }

    #[test]
    fn add_row_transpose_sub_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_matrix(&mut rng, 3, 4);
        let row = random_matrix(&mut rng, 1, 4);
        let b = random_matrix(&mut rng, 4, 3);
        check_grads(
            &|tape, vars| {
                let shifted = tape.add_row(vars[0], vars[1]);
                let diff = tape.sub(shifted, tape.transpose(vars[2]));
                let sq = tape.mul(diff, diff);
                tape.mean_all(sq)
            },
            &[a, row, b],
        );
    }

    #[test]
    fn mask_does_not_receive_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(array![[1.0, 2.0]]);
        let masked = tape.add_mask(a, &array![[0.0, -1e30]]);
        let sm = tape.softmax_rows(masked);
        let v = tape.value(sm);
        assert!((v[[0, 0]] - 1.0).abs() < 1e-12);
        assert_eq!(v[[0, 1]], 0.0);
        let loss = tape.sum_all(sm);
        let grads = tape.backward(loss);
        assert!(grads.get(a).is_some());
    }

    #[test]
    fn backward_reaches_shared_subexpression_twice() {
        // loss = sum(x * x) -> grad 2x
        let tape = Tape::new();
        let x = tape.leaf(array![[3.0, -2.0]]);
        let sq = tape.mul(x, x);
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss);
        let g = grads.get(x).unwrap();
        assert_eq!(g, &array![[6.0, -4.0]]);
    }
}
