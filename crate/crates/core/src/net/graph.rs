//! Reverse-mode differentiation over a tape of coarse NCHW operations.
//!
//! Every op records its inputs; [`Graph::backward`] walks the tape in
//! reverse and accumulates adjoints. Convolutions pad circularly along the
//! width (azimuth wraps around) and by edge replication along the height.

use super::tensor::{gemm, MatRef, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Var, k: usize },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, xhat: Vec<T>, inv_std: Vec<T> },
    Silu { x: Var },
    Add { a: Var, b: Var },
    /// `x[n, c, :, :] + s[n, c]`
    ChannelShift { x: Var, s: Var },
    Linear { x: Var, w: Var, b: Var },
    AvgPool2 { x: Var },
    Upsample2 { x: Var },
    Concat { a: Var, b: Var },
    /// `scale[n] * x[n] + offset`, `offset` constant.
    ScaleOffset { x: Var, scale: Vec<T> },
    WeightedSse { pred: Var, target: Vec<T>, weight: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn im2col3<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * hw;
                for y in 0..h {
                    let sy = (y + ky).saturating_sub(1).min(h - 1);
                    let src = &plane[sy * w..(sy + 1) * w];
                    let dst = &mut cols[row + y * w..row + (y + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = src[w - 1];
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = src[0];
                        }
                    }
                }
            }
        }
    }
}

fn col2im3<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * hw;
                for y in 0..h {
                    let sy = (y + ky).saturating_sub(1).min(h - 1);
                    let src = &cols[row + y * w..row + (y + 1) * w];
                    let dst = &mut plane[sy * w..(sy + 1) * w];
                    match kx {
                        0 => {
                            dst[w - 1] += src[0];
                            for (d, &s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            dst[0] += src[w - 1];
                            for (d, &s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape
    }

    /// Square `k x k` convolution, `k` in {1, 3}. `w` is `[cout, cin, k, k]`,
    /// `b` is `[cout, 1, 1, 1]`.
    pub fn conv(&mut self, x: Var, w: Var, b: Var) -> Var {
        let [n, cin, h, wd] = self.shape(x);
        let [cout, wcin, k, _] = self.shape(w);
        assert_eq!(cin, wcin, "conv input channels");
        assert!(k == 1 || k == 3, "kernel size {k}");
        let hw = h * wd;
        let kk = cin * k * k;
        let mut out = Tensor::zeros([n, cout, h, wd]);
        let mut cols = if k == 3 { vec![T::zero(); kk * hw] } else { Vec::new() };
        {
            let xv = &self.nodes[x.0].value.data;
            let wv = &self.nodes[w.0].value.data;
            let bv = &self.nodes[b.0].value.data;
            for bi in 0..n {
                let xs = &xv[bi * cin * hw..(bi + 1) * cin * hw];
                let ys = &mut out.data[bi * cout * hw..(bi + 1) * cout * hw];
                for (co, chunk) in ys.chunks_mut(hw).enumerate() {
                    chunk.fill(bv[co]);
                }
                let rhs = if k == 3 {
                    im2col3(xs, cin, h, wd, &mut cols);
                    &cols[..]
                } else {
                    xs
                };
                gemm(MatRef::new(wv, cout, kk), MatRef::new(rhs, kk, hw), T::one(), ys);
            }
        }
        self.push(out, Op::Conv { x, w, b, k })
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let [n, c, h, w] = self.shape(x);
        assert_eq!(c % groups, 0, "channels {c} not divisible by {groups} groups");
        let group_len = c / groups * h * w;
        let hw = h * w;
        let eps = T::of(1e-5);
        let xv = &self.nodes[x.0].value.data;
        let g = &self.nodes[gamma.0].value.data;
        let bt = &self.nodes[beta.0].value.data;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); n * groups];
        let mut out = Tensor::zeros([n, c, h, w]);
        let count = T::of(group_len as f64);
        for ng in 0..n * groups {
            let seg = ng * group_len..(ng + 1) * group_len;
            let xs = &xv[seg.clone()];
            let mean = xs.iter().fold(T::zero(), |a, &v| a + v) / count;
            let var = xs.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / count;
            let is = T::one() / (var + eps).sqrt();
            inv_std[ng] = is;
            for (i, &v) in xs.iter().enumerate() {
                let idx = seg.start + i;
                let ch = (idx / hw) % c;
                let xh = (v - mean) * is;
                xhat[idx] = xh;
                out.data[idx] = g[ch] * xh + bt[ch];
            }
        }
        self.push(out, Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let out = Tensor::from_vec(xv.shape, xv.data.iter().map(|&v| v * sigmoid(v)).collect());
        self.push(out, Op::Silu { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape, bv.shape, "add shapes");
        let out = Tensor::from_vec(av.shape, av.data.iter().zip(&bv.data).map(|(&p, &q)| p + q).collect());
        self.push(out, Op::Add { a, b })
    }

    pub fn channel_shift(&mut self, x: Var, s: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        assert_eq!(self.shape(s), [n, c, 1, 1], "shift shape");
        let hw = h * w;
        let mut out = self.nodes[x.0].value.clone();
        let sv = &self.nodes[s.0].value.data;
        for (i, chunk) in out.data.chunks_mut(hw).enumerate() {
            let sh = sv[i];
            chunk.iter_mut().for_each(|v| *v += sh);
        }
        self.push(out, Op::ChannelShift { x, s })
    }

    /// `x [N, in]`, `w [out, in]`, `b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let [n, fin, _, _] = self.shape(x);
        let [fout, win, _, _] = self.shape(w);
        assert_eq!(fin, win, "linear input features");
        let mut out = Tensor::zeros([n, fout, 1, 1]);
        let bv = &self.nodes[b.0].value.data;
        for row in out.data.chunks_mut(fout) {
            row.copy_from_slice(&bv[..fout]);
        }
        gemm(
            MatRef::new(&self.nodes[x.0].value.data, n, fin),
            MatRef::new(&self.nodes[w.0].value.data, fout, fin).t(),
            T::one(),
            &mut out.data,
        );
        self.push(out, Op::Linear { x, w, b })
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even sizes, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::of(0.25);
        let xv = &self.nodes[x.0].value.data;
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for p in 0..n * c {
            let src = &xv[p * h * w..(p + 1) * h * w];
            let dst = &mut out.data[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    let i = 2 * y * w + 2 * xx;
                    dst[y * ow + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
                }
            }
        }
        self.push(out, Op::AvgPool2 { x })
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        let (oh, ow) = (2 * h, 2 * w);
        let xv = &self.nodes[x.0].value.data;
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for p in 0..n * c {
            let src = &xv[p * h * w..(p + 1) * h * w];
            let dst = &mut out.data[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        self.push(out, Op::Upsample2 { x })
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let [n, ca, h, w] = self.shape(a);
        let [nb, cb, hb, wb] = self.shape(b);
        assert_eq!((n, h, w), (nb, hb, wb), "concat shapes");
        let hw = h * w;
        let (av, bv) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
        let mut data = Vec::with_capacity(n * (ca + cb) * hw);
        for bi in 0..n {
            data.extend_from_slice(&av[bi * ca * hw..(bi + 1) * ca * hw]);
            data.extend_from_slice(&bv[bi * cb * hw..(bi + 1) * cb * hw]);
        }
        self.push(Tensor::from_vec([n, ca + cb, h, w], data), Op::Concat { a, b })
    }

    /// `scale[n] * x[n, ...] + offset`, one scale per batch sample.
    pub fn scale_offset(&mut self, x: Var, scale: Vec<T>, offset: &[T]) -> Var {
        let xv = &self.nodes[x.0].value;
        assert!(scale.len() == xv.shape[0] && offset.len() == xv.len(), "scale_offset operands");
        let per = xv.len() / scale.len();
        let data = xv
            .data
            .iter()
            .zip(offset)
            .enumerate()
            .map(|(i, (&v, &o))| scale[i / per] * v + o)
            .collect();
        let out = Tensor::from_vec(xv.shape, data);
        self.push(out, Op::ScaleOffset { x, scale })
    }

    /// Scalar `sum_i weight_i * (pred_i - target_i)^2`.
    pub fn weighted_sse(&mut self, pred: Var, target: Vec<T>, weight: Vec<T>) -> Var {
        let pv = &self.nodes[pred.0].value.data;
        assert!(pv.len() == target.len() && pv.len() == weight.len(), "loss operand lengths");
        let loss = pv
            .iter()
            .zip(&target)
            .zip(&weight)
            .fold(T::zero(), |acc, ((&p, &t), &wt)| acc + wt * (p - t) * (p - t));
        self.push(Tensor::from_vec([1, 1, 1, 1], vec![loss]), Op::WeightedSse { pred, target, weight })
    }

    /// Adjoints of `root` with respect to every node on the tape.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let root_len = self.nodes[root.0].value.len();
        grads[root.0] = Some(vec![T::one(); root_len]);
        for id in (0..=root.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.backprop(node, &dy, &mut grads);
            grads[id] = Some(dy);
        }
        Gradients { grads }
    }

    fn accum<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> &'g mut Vec<T> {
        let len = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    fn backprop(&self, node: &Node<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, k } => {
                let [n, cin, h, wd] = self.shape(*x);
                let cout = node.value.shape[1];
                let hw = h * wd;
                let kk = cin * k * k;
                let xv = &self.nodes[x.0].value.data;
                let wv = &self.nodes[w.0].value.data;
                let mut cols = if *k == 3 { vec![T::zero(); kk * hw] } else { Vec::new() };
                let mut dcols = vec![T::zero(); kk * hw];
                {
                    let db = self.accum(grads, *b);
                    for bi in 0..n {
                        for co in 0..cout {
                            let s = &dy[(bi * cout + co) * hw..(bi * cout + co + 1) * hw];
                            db[co] += s.iter().fold(T::zero(), |a, &v| a + v);
                        }
                    }
                }
                for bi in 0..n {
                    let xs = &xv[bi * cin * hw..(bi + 1) * cin * hw];
                    let dys = &dy[bi * cout * hw..(bi + 1) * cout * hw];
                    let rhs = if *k == 3 {
                        im2col3(xs, cin, h, wd, &mut cols);
                        &cols[..]
                    } else {
                        xs
                    };
                    let dw = self.accum(grads, *w);
                    gemm(MatRef::new(dys, cout, hw), MatRef::new(rhs, kk, hw).t(), T::one(), dw);
                    let dx_all = self.accum(grads, *x);
                    let dxs = &mut dx_all[bi * cin * hw..(bi + 1) * cin * hw];
                    if *k == 3 {
                        gemm(MatRef::new(wv, cout, kk).t(), MatRef::new(dys, cout, hw), T::zero(), &mut dcols);
                        col2im3(&dcols, cin, h, wd, dxs);
                    } else {
                        gemm(MatRef::new(wv, cout, kk).t(), MatRef::new(dys, cout, hw), T::one(), dxs);
                    }
                }
            }
            Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std } => {
                let [n, c, h, w] = self.shape(*x);
                let hw = h * w;
                let group_len = c / groups * hw;
                let g = &self.nodes[gamma.0].value.data;
                {
                    let dg = self.accum(grads, *gamma);
                    for (i, (&d, &xh)) in dy.iter().zip(xhat).enumerate() {
                        dg[(i / hw) % c] += d * xh;
                    }
                }
                {
                    let dbt = self.accum(grads, *beta);
                    for (i, &d) in dy.iter().enumerate() {
                        dbt[(i / hw) % c] += d;
                    }
                }
                let count = T::of(group_len as f64);
                let dx = self.accum(grads, *x);
                for ng in 0..n * groups {
                    let start = ng * group_len;
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for i in start..start + group_len {
                        let dxh = dy[i] * g[(i / hw) % c];
                        sum_d += dxh;
                        sum_dx += dxh * xhat[i];
                    }
                    let (mean_d, mean_dx) = (sum_d / count, sum_dx / count);
                    for i in start..start + group_len {
                        let dxh = dy[i] * g[(i / hw) % c];
                        dx[i] += inv_std[ng] * (dxh - mean_d - xhat[i] * mean_dx);
                    }
                }
            }
            Op::Silu { x } => {
                let xv = &self.nodes[x.0].value.data;
                let dx = self.accum(grads, *x);
                for i in 0..dy.len() {
                    let s = sigmoid(xv[i]);
                    dx[i] += dy[i] * s * (T::one() + xv[i] * (T::one() - s));
                }
            }
            Op::ScaleOffset { x, scale } => {
                let per = dy.len() / scale.len();
                let dx = self.accum(grads, *x);
                for (i, &d) in dy.iter().enumerate() {
                    dx[i] += scale[i / per] * d;
                }
            }
            Op::Add { a, b } => {
                add_into(self.accum(grads, *a), dy);
                add_into(self.accum(grads, *b), dy);
            }
            Op::ChannelShift { x, s } => {
                add_into(self.accum(grads, *x), dy);
                let [_, _, h, w] = node.value.shape;
                let ds = self.accum(grads, *s);
                for (i, chunk) in dy.chunks(h * w).enumerate() {
                    ds[i] += chunk.iter().fold(T::zero(), |a, &v| a + v);
                }
            }
            Op::Linear { x, w, b } => {
                let [n, fin, _, _] = self.shape(*x);
                let fout = node.value.shape[1];
                {
                    let db = self.accum(grads, *b);
                    for row in dy.chunks(fout) {
                        add_into(db, row);
                    }
                }
                let xv = &self.nodes[x.0].value.data;
                let wv = &self.nodes[w.0].value.data;
                gemm(MatRef::new(dy, n, fout).t(), MatRef::new(xv, n, fin), T::one(), self.accum(grads, *w));
                gemm(MatRef::new(dy, n, fout), MatRef::new(wv, fout, fin), T::one(), self.accum(grads, *x));
            }
            Op::AvgPool2 { x } => {
                let [n, c, h, w] = self.shape(*x);
                let (oh, ow) = (h / 2, w / 2);
                let quarter = T::of(0.25);
                let dx = self.accum(grads, *x);
                for p in 0..n * c {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let d = dy[p * oh * ow + y * ow + xx] * quarter;
                            let i = p * h * w + 2 * y * w + 2 * xx;
                            dx[i] += d;
                            dx[i + 1] += d;
                            dx[i + w] += d;
                            dx[i + w + 1] += d;
                        }
                    }
                }
            }
            Op::Upsample2 { x } => {
                let [n, c, h, w] = self.shape(*x);
                let (oh, ow) = (2 * h, 2 * w);
                let dx = self.accum(grads, *x);
                for p in 0..n * c {
                    for y in 0..oh {
                        for xx in 0..ow {
                            dx[p * h * w + (y / 2) * w + xx / 2] += dy[p * oh * ow + y * ow + xx];
                        }
                    }
                }
            }
            Op::Concat { a, b } => {
                let [n, ca, h, w] = self.shape(*a);
                let cb = self.shape(*b)[1];
                let hw = h * w;
                for bi in 0..n {
                    let base = bi * (ca + cb) * hw;
                    add_into(
                        &mut self.accum(grads, *a)[bi * ca * hw..(bi + 1) * ca * hw],
                        &dy[base..base + ca * hw],
                    );
                    add_into(
                        &mut self.accum(grads, *b)[bi * cb * hw..(bi + 1) * cb * hw],
                        &dy[base + ca * hw..base + (ca + cb) * hw],
                    );
                }
            }
            Op::WeightedSse { pred, target, weight } => {
                let pv = &self.nodes[pred.0].value.data;
                let two = T::of(2.0) * dy[0];
                let dp = self.accum(grads, *pred);
                for i in 0..pv.len() {
                    if weight[i] != T::zero() {
                        dp[i] += two * weight[i] * (pv[i] - target[i]);
                    }
                }
            }
        }
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` if `root` does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}
