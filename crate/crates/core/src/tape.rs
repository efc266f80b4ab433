//! A small reverse-mode autodiff tape over dense `f64` matrices.
//!
//! Every value is a 2-D array; vectors are `1 × d` rows. Each operation
//! records its inputs and whatever it needs for its hand-written backward
//! rule. [`Tape::backward`] walks the record in reverse and returns the
//! gradient of a scalar with respect to every value on the tape.

use ndarray::{concatenate, s, Array2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Normalize {
        x: Var,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    SmoothedKl {
        logits: Var,
        probs: Array2<f64>,
        target: Array2<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` where nothing flowed.
#[derive(Debug)]
pub struct Grads(Vec<Option<Array2<f64>>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.0[v.0].as_ref()
    }

    /// Gradient of `v`, zeros of the right shape if nothing flowed.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Row-wise softmax; entries with `mask == false` get probability zero.
/// Uses max subtraction. Rows with no allowed entry come out all zero.
pub fn softmax_rows(x: &Array2<f64>, mask: Option<&Array2<bool>>) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (i, row) in x.rows().into_iter().enumerate() {
        let allowed = |j: usize| mask.is_none_or(|m| m[[i, j]]);
        let max = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| allowed(j))
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if allowed(j) {
                let e = (v - max).exp();
                out[[i, j]] = e;
                total += e;
            }
        }
        out.row_mut(i).mapv_inplace(|e| e / total);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `x + row` with `row` (`1 × d`) broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let v = self.value(x) + self.value(row);
        self.push(v, Op::AddRow(x, row))
    }

    /// `x ⊙ row` with `row` broadcast over rows.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let v = self.value(x) * self.value(row);
        self.push(v, Op::MulRow(x, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    /// `a·x + b·y`.
    pub fn lincomb(&mut self, a: f64, x: Var, b: f64, y: Var) -> Var {
        let sx = self.scale(x, a);
        let sy = self.scale(y, b);
        self.add(sx, sy)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise standardisation `(x - mean) / sqrt(var + eps)`; gain and
    /// bias are applied separately.
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        self.push(out, Op::Normalize { x, inv_std })
    }

    pub fn softmax(&mut self, x: Var, mask: Option<&Array2<bool>>) -> Var {
        let v = softmax_rows(self.value(x), mask);
        self.push(v, Op::Softmax(x))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let v = self.value(x).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(x, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concatenated parts share a row count");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Rows of `table` picked by `index` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Var {
        let v = self.value(table).select(Axis(0), index);
        self.push(v, Op::GatherRows(table, index.to_vec()))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    /// Mean over rows of `KL(q_t ‖ softmax(logits_t))`, where `q_t` puts
    /// `1 - smoothing` on the target and spreads `smoothing` evenly over the
    /// other classes. The minimum is zero.
    pub fn smoothed_kl(&mut self, logits: Var, targets: &[usize], smoothing: f64) -> Var {
        let lv = self.value(logits);
        let (rows, classes) = lv.dim();
        assert_eq!(rows, targets.len(), "one target per logits row");
        let probs = softmax_rows(lv, None);
        let off = if classes > 1 {
            smoothing / (classes - 1) as f64
        } else {
            0.0
        };
        let mut target = Array2::from_elem((rows, classes), off);
        for (r, &t) in targets.iter().enumerate() {
            target[[r, t]] = 1.0 - smoothing;
        }
        let mut loss = 0.0;
        for (r, row) in lv.rows().into_iter().enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            for (q, &x) in target.row(r).iter().zip(row.iter()) {
                if *q > 0.0 {
                    loss += q * (q.ln() - (x - lse));
                }
            }
        }
        let v = Array2::from_elem((1, 1), loss / rows.max(1) as f64);
        self.push(
            v,
            Op::SmoothedKl {
                logits,
                probs,
                target,
            },
        )
    }

    /// Backpropagates from `out`, seeding with `seed` (ones if `None`).
    pub fn backward_with(&self, out: Var, seed: Option<Array2<f64>>) -> Grads {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] =
            Some(seed.unwrap_or_else(|| Array2::ones(self.nodes[out.0].value.raw_dim())));
        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(x, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *x, g.clone());
                }
                Op::MulRow(x, row) => {
                    let gx = &g * self.value(*row);
                    let grow = (&g * self.value(*x)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *row, grow);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, &g * *k),
                Op::Gelu(a) => {
                    let mut ga = self.value(*a).mapv(gelu_grad);
                    ga *= &g;
                    acc(&mut grads, *a, ga);
                }
                Op::Normalize { x, inv_std } => {
                    // dx = inv_std * (g - mean(g) - y * mean(g ⊙ y))
                    let y = &node.value;
                    let d = y.ncols() as f64;
                    let mut gx = Array2::zeros(y.raw_dim());
                    for (i, &is) in inv_std.iter().enumerate() {
                        let gr = g.row(i);
                        let yr = y.row(i);
                        let mg = gr.sum() / d;
                        let mgy = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
                        Zip::from(gx.row_mut(i))
                            .and(&gr)
                            .and(&yr)
                            .for_each(|o, &gv, &yv| *o = is * (gv - mg - yv * mgy));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Softmax(x) => {
                    // dx = y ⊙ (g - rowsum(g ⊙ y)); masked entries have y = 0.
                    let y = &node.value;
                    let mut gx = &g * y;
                    for (mut row, yr) in gx.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        Zip::from(&mut row)
                            .and(&yr)
                            .for_each(|o, &yv| *o -= yv * dot);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SliceCols(x, start) => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::GatherRows(table, index) => {
                    let mut gt = Array2::zeros(self.value(*table).raw_dim());
                    for (r, &i) in index.iter().enumerate() {
                        let mut dst = gt.row_mut(i);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::Sum(x) => {
                    let gx = Array2::from_elem(self.value(*x).raw_dim(), g[[0, 0]]);
                    acc(&mut grads, *x, gx);
                }
                Op::SmoothedKl {
                    logits,
                    probs,
                    target,
                } => {
                    let rows = probs.nrows().max(1) as f64;
                    let gl = (probs - target) * (g[[0, 0]] / rows);
                    acc(&mut grads, *logits, gl);
                }
            }
            grads[idx] = Some(g);
        }
        Grads(grads)
    }

    pub fn backward(&self, out: Var) -> Grads {
        self.backward_with(out, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central differences of `f` at `x`.
    fn numeric(f: &dyn Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let h = 1e-6;
        let mut out = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let mut p = x.clone();
            let mut m = x.clone();
            p.as_slice_mut().unwrap()[idx] += h;
            m.as_slice_mut().unwrap()[idx] -= h;
            out.as_slice_mut().unwrap()[idx] = (f(&p) - f(&m)) / (2.0 * h);
        }
        out
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{a:?}\nvs\n{b:?}");
        }
    }

    #[test]
    fn unary_op_gradients() {
        let x = array![[0.3, -1.2, 2.0], [0.5, 0.1, -0.7]];
        let w = array![[1.0, -2.0, 0.5], [0.3, 0.7, -1.1], [-0.4, 0.2, 0.9]];
        type Build = fn(&mut Tape, Var) -> Var;
        let cases: Vec<(&str, Build)> = vec![
            ("gelu", |t, v| t.gelu(v)),
            ("normalize", |t, v| t.normalize_rows(v, 1e-5)),
            ("softmax", |t, v| t.softmax(v, None)),
            ("slice", |t, v| t.slice_cols(v, 1, 3)),
            ("transpose", |t, v| t.transpose(v)),
            ("scale", |t, v| t.scale(v, -3.5)),
        ];
        for (name, build) in cases {
            let run = |xv: &Array2<f64>| {
                let mut t = Tape::new();
                let xv_ = t.leaf(xv.clone());
                let y = build(&mut t, xv_);
                let ys = t.value(y).clone();
                let wv = w.slice(s![..ys.nrows(), ..ys.ncols()]).to_owned();
                (ys * wv).sum()
            };
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let y = build(&mut t, xv);
            let ys = t.value(y).dim();
            let wv = t.leaf(w.slice(s![..ys.0, ..ys.1]).to_owned());
            let prod = t.mul(y, wv);
            let l = t.sum(prod);
            let g = t.backward(l);
            let analytic = g.get(xv).unwrap();
            let fd = numeric(&run, &x);
            assert!(
                analytic
                    .iter()
                    .zip(fd.iter())
                    .all(|(a, b)| (a - b).abs() < 1e-6 * (1.0 + b.abs())),
                "{name}: {analytic:?} vs {fd:?}"
            );
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let x = array![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]];
        let mask = array![[true, false, true], [false, true, false]];
        let y = softmax_rows(&x, Some(&mask));
        assert_eq!(y[[0, 1]], 0.0);
        assert_eq!(y[[1, 1]], 1.0);
        assert!((y.row(0).sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn smoothed_kl_is_zero_at_target_distribution() {
        // logits equal to log of the smoothed target give zero loss
        let q: Array2<f64> = array![[0.9, 0.05, 0.05]];
        let mut t = Tape::new();
        let l = t.leaf(q.mapv(f64::ln));
        let loss = t.smoothed_kl(l, &[0], 0.1);
        assert!(t.value(loss)[[0, 0]].abs() < 1e-12);
    }

    #[test]
    fn binary_and_structural_gradients() {
        let a = array![[0.2, -0.4], [1.1, 0.3], [-0.5, 0.9]];
        let b = array![[0.7, -0.2, 0.4], [0.1, 0.5, -0.3]];
        let row = array![[0.6, -1.3]];
        let f = |av: &Array2<f64>| {
            let mut t = Tape::new();
            let (x, y, r) = (t.leaf(av.clone()), t.leaf(b.clone()), t.leaf(row.clone()));
            let out = composite(&mut t, x, y, r);
            t.value(out)[[0, 0]]
        };
        let mut t = Tape::new();
        let (x, y, r) = (t.leaf(a.clone()), t.leaf(b.clone()), t.leaf(row.clone()));
        let out = composite(&mut t, x, y, r);
        let g = t.backward(out);
        assert_close(g.get(x).unwrap(), &numeric(&f, &a), 1e-6);
    }

    fn composite(t: &mut Tape, x: Var, y: Var, r: Var) -> Var {
        let m = t.matmul(x, y); // 3x3
        let g = t.gather_rows(m, &[2, 0, 2]);
        let c = t.concat_cols(&[g, x]); // 3x5
        let left = t.slice_cols(c, 0, 2);
        let shifted = t.add_row(left, r);
        let scaled = t.mul_row(shifted, r);
        let both = t.add(scaled, left);
        let sq = t.mul(both, both);
        let logits = t.concat_cols(&[sq, both]);
        let kl = t.smoothed_kl(logits, &[0, 3, 1], 0.1);
        let s = t.sum(sq);
        let s = t.scale(s, 0.01);
        t.add(kl, s)
    }
}
