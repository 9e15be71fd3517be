use ndarray::{concatenate, s, Array2, Axis};

use crate::scalar::Scalar;

use super::params::{Gradients, ParamId, ParamSet};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    /// Adds a `1 × m` row to every row.
    AddRow(Var, Var),
    Relu(Var),
    Scale(Var, T),
    SoftmaxRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    RepeatRows(Var),
}

struct Node<T> {
    op: Op<T>,
    /// `None` for parameters, which are read from the store.
    value: Option<Array2<T>>,
    needs_grad: bool,
}

/// Records a forward computation so gradients can be pulled back to the
/// parameters it read.
pub struct Tape<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(x), _) => x,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("only parameters are stored by reference"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, op: Op<T>, value: Array2<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { op, value: Some(value), needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.nodes.push(Node { op: Op::Constant, value: Some(value), needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { op: Op::Param(id), value: None, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v, &[a, b])
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulNt(a, b), v, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v, &[a, b])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(Op::AddRow(a, row), v, &[a, row])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let zero = T::zero();
        let v = self.value(a).mapv(|x| if x > zero { x } else { zero });
        self.push(Op::Relu(a), v, &[a])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a) * c;
        self.push(Op::Scale(a, c), v, &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum: T = row.iter().copied().sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(Op::SoftmaxRows(a), v, &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(Op::SliceCols(a, start), v, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("row counts agree");
        self.push(Op::ConcatCols(parts.to_vec()), v, parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("column counts agree");
        self.push(Op::ConcatRows(parts.to_vec()), v, parts)
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), rows);
        self.push(Op::GatherRows(a, rows.to_vec()), v, &[a])
    }

    /// Column means as a `1 × m` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = T::from_usize(x.nrows()).expect("row count fits");
        let v = (x.sum_axis(Axis(0)) / n).insert_axis(Axis(0));
        self.push(Op::MeanRows(a), v, &[a])
    }

    /// Stacks a `1 × m` row `n` times.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let row = self.value(a).row(0).to_owned();
        let v = row.broadcast((n, row.len())).expect("broadcast row").to_owned();
        self.push(Op::RepeatRows(a), v, &[a])
    }

    /// Back-propagates the given output gradients and returns gradients for
    /// every parameter in the store (zeros where unused).
    pub fn backward(&self, seeds: &[(Var, Array2<T>)]) -> Gradients<T> {
        let mut grads: Vec<Option<Array2<T>>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            accumulate(&mut grads[v.0], g.clone());
        }
        let mut out = Gradients::zeros_like(self.params);
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let send = |v: Var, d: Array2<T>, grads: &mut Vec<Option<Array2<T>>>| {
                if self.nodes[v.0].needs_grad {
                    accumulate(&mut grads[v.0], d);
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.add(*id, &g),
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        send(*a, g.dot(&self.value(*b).t()), &mut grads);
                    }
                    if self.nodes[b.0].needs_grad {
                        send(*b, self.value(*a).t().dot(&g), &mut grads);
                    }
                }
                Op::MatMulNt(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        send(*a, g.dot(self.value(*b)), &mut grads);
                    }
                    if self.nodes[b.0].needs_grad {
                        send(*b, g.t().dot(self.value(*a)), &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g, &mut grads);
                }
                Op::AddRow(a, row) => {
                    send(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)), &mut grads);
                    send(*a, g, &mut grads);
                }
                Op::Relu(a) => {
                    let y = node.value.as_ref().expect("owned");
                    let zero = T::zero();
                    let d = ndarray::Zip::from(&g).and(y).map_collect(|&g, &y| if y > zero { g } else { zero });
                    send(*a, d, &mut grads);
                }
                Op::Scale(a, c) => send(*a, g * *c, &mut grads),
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().expect("owned");
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    send(*a, y * &(&g - &dot), &mut grads);
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut d = Array2::zeros(src.raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    send(*a, d, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        send(p, g.slice(s![.., at..at + w]).to_owned(), &mut grads);
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        send(p, g.slice(s![at..at + h, ..]).to_owned(), &mut grads);
                        at += h;
                    }
                }
                Op::GatherRows(a, rows) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    for (r, &src) in rows.iter().enumerate() {
                        let mut dst = d.row_mut(src);
                        dst += &g.row(r);
                    }
                    send(*a, d, &mut grads);
                }
                Op::MeanRows(a) => {
                    let src = self.value(*a);
                    let n = T::from_usize(src.nrows()).expect("row count fits");
                    let row = g.row(0).mapv(|x| x / n);
                    send(*a, row.broadcast(src.raw_dim()).expect("broadcast").to_owned(), &mut grads);
                }
                Op::RepeatRows(a) => send(*a, g.sum_axis(Axis(0)).insert_axis(Axis(0)), &mut grads),
            }
        }
        out
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Array2<T>>, g: Array2<T>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central differences of `f` with respect to every entry of every
    /// parameter.
    fn numeric_grads(params: &mut ParamSet<f64>, f: &dyn Fn(&ParamSet<f64>) -> f64) -> Vec<Array2<f64>> {
        let h = 1e-6;
        let mut out = Vec::new();
        for id in params.ids() {
            let shape = params.get(id).raw_dim();
            let mut g = Array2::zeros(shape);
            for idx in ndarray::indices(shape) {
                let orig = params.get(id)[idx];
                params.get_mut(id)[idx] = orig + h;
                let up = f(params);
                params.get_mut(id)[idx] = orig - h;
                let down = f(params);
                params.get_mut(id)[idx] = orig;
                g[idx] = (up - down) / (2.0 * h);
            }
            out.push(g);
        }
        out
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut params = ParamSet::new();
        let a = params.add("a", array![[0.3, -0.7, 0.2], [1.1, 0.4, -0.5], [0.05, 0.9, -1.3]]);
        let b = params.add("b", array![[0.5, -0.2], [0.1, 0.8], [-0.6, 0.3]]);
        let r = params.add("r", array![[0.2, -0.1]]);
        let build = |tape: &mut Tape<'_, f64>| {
            let va = tape.param(a);
            let vb = tape.param(b);
            let vr = tape.param(r);
            let ab = tape.matmul(va, vb); // 3x2
            let ab = tape.add_row(ab, vr);
            let act = tape.relu(ab);
            let sm = tape.softmax_rows(va);
            let nt = tape.matmul_nt(sm, va); // 3x3
            let sc = tape.scale(nt, 0.7);
            let sl = tape.slice_cols(sc, 1, 2); // 3x2
            let cat = tape.concat_cols(&[act, sl]); // 3x4
            let g = tape.gather_rows(cat, &[2, 0, 2]);
            let m = tape.mean_rows(cat);
            let rep = tape.repeat_rows(m, 3);
            let sum = tape.add(g, rep);
            let rows = tape.concat_rows(&[sum, cat]); // 6x4
            rows
        };
        let weights = Array2::from_shape_fn((6, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin());
        let loss = |p: &ParamSet<f64>| {
            let mut tape = Tape::new(p);
            let out = build(&mut tape);
            (tape.value(out) * &weights).sum()
        };
        let analytic = {
            let mut tape = Tape::new(&params);
            let out = build(&mut tape);
            tape.backward(&[(out, weights.clone())])
        };
        let numeric = numeric_grads(&mut params, &loss);
        for (id, num) in params.ids().zip(numeric) {
            let ana = analytic.get(id);
            for (x, y) in ana.iter().zip(num.iter()) {
                assert!((x - y).abs() <= 1e-6 * (1.0 + y.abs()), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn constants_receive_no_gradient_work() {
        let mut params = ParamSet::<f32>::new();
        let w = params.add("w", array![[1.0, 2.0]]);
        let mut tape = Tape::new(&params);
        let c = tape.constant(array![[3.0], [4.0]]);
        let vw = tape.param(w);
        let y = tape.matmul(c, vw);
        let g = tape.backward(&[(y, Array2::ones((2, 2)))]);
        assert_eq!(g.get(w), &array![[7.0, 7.0]]);
    }
}
