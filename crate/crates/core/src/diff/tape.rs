//! A reverse-mode tape over flat `f64` vectors.
//!
//! Every node holds a contiguous slice of an arena. Scalars are vectors of
//! length one and broadcast against any length in the elementwise binary
//! ops. Matrices are row-major flat vectors; the row width is passed to the
//! ops that need it. The primitive set is deliberately small: elementwise
//! arithmetic, exp/log/softplus, max/min, grouped sums, products and
//! softmaxes, row gathers from parameters, row dot products and weighted row
//! sums, plus `detach` and a straight-through value/gradient split.
//! Two fused ops, [`Tape::pool_rows`] and [`Tape::overlap_ratios`], cover
//! the hot inner loops of training without materialising per-member or
//! per-key intermediates.

use super::params::{ParamId, ParamStore, Real};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
}

#[derive(Clone, Copy, Debug)]
enum Un {
    Exp,
    Log,
    Sqrt,
    Relu,
    Softplus(f64),
}

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param {
        id: ParamId,
        rows: Vec<u32>,
        cols: usize,
    },
    Binary(Bin, Var, Var),
    Unary(Un, Var),
    Scale(Var, f64),
    AddConst(Var),
    GroupSum(Var, usize),
    GroupProd(Var, usize),
    GroupSoftmax(Var, usize),
    Dot(Var, Var),
    RowDot {
        mat: Var,
        vec: Var,
    },
    GroupWeightedSum {
        weights: Var,
        rows: Var,
        group: usize,
        width: usize,
    },
    Gather {
        x: Var,
        index: usize,
        n: usize,
        width: usize,
    },
    RepeatBlocks {
        x: Var,
        block: usize,
        times: usize,
    },
    Tile(Var, usize),
    Concat(Vec<Var>),
    Slice(Var, usize),
    StraightThrough {
        soft: Var,
    },
    PoolRows {
        table: Var,
        ctx: Var,
        index: usize,
        n: usize,
        aux: usize,
    },
    SubspaceDots {
        x: Var,
        keys: Var,
        k: usize,
        sub: usize,
    },
    RegionVolumes {
        boxes: Vec<(Var, Var)>,
        regions: Vec<Vec<usize>>,
        d: usize,
        beta: f64,
        aux: usize,
    },
    OverlapRatios {
        bc: Var,
        bf: Var,
        kc: Var,
        kf: Var,
        k: usize,
        sub: usize,
        beta: f64,
        aux: usize,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    start: usize,
    len: usize,
}

/// Recorded computation graph with forward values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<f64>,
    index: Vec<u32>,
    aux: Vec<f64>,
}

/// Per-node adjoints produced by [`Tape::gradients`].
pub struct Gradients {
    grads: Vec<f64>,
    spans: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v` (same length as its value).
    pub fn wrt(&self, v: Var) -> &[f64] {
        let (s, l) = self.spans[v.idx()];
        &self.grads[s..s + l]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize, values: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(nodes),
            values: Vec::with_capacity(values),
            ..Default::default()
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.idx()];
        &self.values[n.start..n.start + n.len]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let x = self.value(v);
        debug_assert_eq!(x.len(), 1);
        x[0]
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.idx()].len
    }

    fn push(&mut self, op: Op, values: impl IntoIterator<Item = f64>) -> Var {
        let start = self.values.len();
        self.values.extend(values);
        let len = self.values.len() - start;
        self.nodes.push(Node { op, start, len });
        Var(self.nodes.len() as u32 - 1)
    }

    fn span(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.idx()];
        (n.start, n.len)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, values: &[f64]) -> Var {
        self.push(Op::Const, values.iter().copied())
    }

    pub fn scalar_const(&mut self, x: f64) -> Var {
        self.push(Op::Const, [x])
    }

    /// Gathers `rows` of parameter `id` into a row-major matrix leaf.
    pub fn param_rows<S: Real>(&mut self, store: &ParamStore<S>, id: ParamId, rows: &[u32]) -> Var {
        let cols = store.cols(id);
        let data = store.values(id);
        let start = self.values.len();
        self.values.reserve(rows.len() * cols);
        for &r in rows {
            let off = r as usize * cols;
            self.values
                .extend(data[off..off + cols].iter().map(|x| x.to_f64()));
        }
        let len = self.values.len() - start;
        self.nodes.push(Node {
            op: Op::Param {
                id,
                rows: rows.to_vec(),
                cols,
            },
            start,
            len,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    /// The whole parameter as one leaf.
    pub fn param<S: Real>(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        let rows: Vec<u32> = (0..store.rows(id) as u32).collect();
        self.param_rows(store, id, &rows)
    }

    fn binary(&mut self, op: Bin, a: Var, b: Var) -> Var {
        let (sa, la) = self.span(a);
        let (sb, lb) = self.span(b);
        assert!(
            la == lb || la == 1 || lb == 1,
            "incompatible lengths {la} and {lb}"
        );
        let len = la.max(lb);
        let start = self.values.len();
        self.values.reserve(len);
        for t in 0..len {
            let x = self.values[sa + if la == 1 { 0 } else { t }];
            let y = self.values[sb + if lb == 1 { 0 } else { t }];
            let z = match op {
                Bin::Add => x + y,
                Bin::Sub => x - y,
                Bin::Mul => x * y,
                Bin::Div => x / y,
                Bin::Max => x.max(y),
                Bin::Min => x.min(y),
            };
            self.values.push(z);
        }
        self.nodes.push(Node {
            op: Op::Binary(op, a, b),
            start,
            len,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Bin::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Bin::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Bin::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(Bin::Div, a, b)
    }
    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.binary(Bin::Max, a, b)
    }
    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary(Bin::Min, a, b)
    }

    fn unary(&mut self, op: Un, a: Var) -> Var {
        let (s, l) = self.span(a);
        let start = self.values.len();
        self.values.reserve(l);
        for t in 0..l {
            let x = self.values[s + t];
            let y = match op {
                Un::Exp => x.exp(),
                Un::Log => x.ln(),
                Un::Sqrt => x.sqrt(),
                Un::Relu => x.max(0.0),
                Un::Softplus(beta) => softplus(x, beta),
            };
            self.values.push(y);
        }
        self.nodes.push(Node {
            op: Op::Unary(op, a),
            start,
            len: l,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Un::Exp, a)
    }
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Un::Log, a)
    }
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Un::Sqrt, a)
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Un::Relu, a)
    }
    /// `(1/β) ln(1 + exp(βx))`, elementwise.
    pub fn softplus(&mut self, a: Var, beta: f64) -> Var {
        self.unary(Un::Softplus(beta), a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (s, l) = self.span(a);
        let start = self.values.len();
        for t in 0..l {
            let x = self.values[s + t];
            self.values.push(c * x);
        }
        self.nodes.push(Node {
            op: Op::Scale(a, c),
            start,
            len: l,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let (s, l) = self.span(a);
        let start = self.values.len();
        for t in 0..l {
            let x = self.values[s + t];
            self.values.push(x + c);
        }
        self.nodes.push(Node {
            op: Op::AddConst(a),
            start,
            len: l,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// Sums consecutive groups of `group` elements.
    pub fn group_sum(&mut self, a: Var, group: usize) -> Var {
        let (s, l) = self.span(a);
        assert!(group > 0 && l % group == 0, "group {group} does not divide {l}");
        let start = self.values.len();
        for g in 0..l / group {
            let off = s + g * group;
            let acc: f64 = self.values[off..off + group].iter().sum();
            self.values.push(acc);
        }
        self.nodes.push(Node {
            op: Op::GroupSum(a, group),
            start,
            len: l / group,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let l = self.len_of(a);
        self.group_sum(a, l)
    }

    /// Multiplies consecutive groups of `group` elements.
    pub fn group_prod(&mut self, a: Var, group: usize) -> Var {
        let (s, l) = self.span(a);
        assert!(group > 0 && l % group == 0, "group {group} does not divide {l}");
        let start = self.values.len();
        for g in 0..l / group {
            let off = s + g * group;
            let acc: f64 = self.values[off..off + group].iter().product();
            self.values.push(acc);
        }
        self.nodes.push(Node {
            op: Op::GroupProd(a, group),
            start,
            len: l / group,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    pub fn prod(&mut self, a: Var) -> Var {
        let l = self.len_of(a);
        self.group_prod(a, l)
    }

    /// Numerically stable softmax within consecutive groups of `group`.
    pub fn group_softmax(&mut self, a: Var, group: usize) -> Var {
        let (s, l) = self.span(a);
        assert!(group > 0 && l % group == 0, "group {group} does not divide {l}");
        let start = self.values.len();
        self.values.resize(start + l, 0.0);
        for g in 0..l / group {
            let (src, dst) = self.values.split_at_mut(start);
            softmax_into(&src[s + g * group..s + (g + 1) * group], &mut dst[g * group..(g + 1) * group]);
        }
        self.nodes.push(Node {
            op: Op::GroupSoftmax(a, group),
            start,
            len: l,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let l = self.len_of(a);
        self.group_softmax(a, l)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (sa, la) = self.span(a);
        let (sb, lb) = self.span(b);
        assert_eq!(la, lb);
        let v: f64 = (0..la).map(|t| self.values[sa + t] * self.values[sb + t]).sum();
        self.push(Op::Dot(a, b), [v])
    }

    /// `out[r] = Σ_c mat[r, c] · vec[c]` for a row-major `mat` with
    /// `len(vec)` columns.
    pub fn row_dot(&mut self, mat: Var, vec: Var) -> Var {
        let (sm, lm) = self.span(mat);
        let (sv, k) = self.span(vec);
        assert!(k > 0 && lm % k == 0, "row width {k} does not divide {lm}");
        let start = self.values.len();
        for r in 0..lm / k {
            let mut acc = 0.0;
            for c in 0..k {
                acc += self.values[sm + r * k + c] * self.values[sv + c];
            }
            self.values.push(acc);
        }
        self.nodes.push(Node {
            op: Op::RowDot { mat, vec },
            start,
            len: lm / k,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    /// Weighted row sums per group: `weights` has one entry per row of
    /// `rows`; rows are combined in consecutive groups of `group`, giving
    /// `(n / group)` output rows of the same width.
    pub fn group_weighted_sum(&mut self, weights: Var, rows: Var, group: usize) -> Var {
        let n = self.len_of(weights);
        let lr = self.len_of(rows);
        assert!(n > 0 && lr % n == 0, "{n} weights for {lr} row values");
        self.mix_rows(weights, rows, lr / n, group)
    }

    /// Like [`Tape::group_weighted_sum`], but `rows` (of width `width`) is
    /// reused cyclically: weight `j` multiplies row `j mod m` for `m` rows.
    pub fn mix_rows(&mut self, weights: Var, rows: Var, width: usize, group: usize) -> Var {
        let (sw, n) = self.span(weights);
        let (sr, lr) = self.span(rows);
        assert!(width > 0 && lr % width == 0);
        let m = lr / width;
        assert!(m > 0 && n % m == 0, "{n} weights for {m} rows");
        assert!(group > 0 && n % group == 0);
        let k = width;
        let start = self.values.len();
        self.values.resize(start + (n / group) * k, 0.0);
        let (vals, out) = self.values.split_at_mut(start);
        for q in 0..n / group {
            let dst = &mut out[q * k..(q + 1) * k];
            for j in q * group..(q + 1) * group {
                let r = sr + (j % m) * k;
                axpy(vals[sw + j], &vals[r..r + k], dst);
            }
        }
        self.nodes.push(Node {
            op: Op::GroupWeightedSum {
                weights,
                rows,
                group,
                width,
            },
            start,
            len: (n / group) * k,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    /// Rows `rows` of the row-major `x` (row width `width`), in order.
    pub fn gather(&mut self, x: Var, rows: &[u32], width: usize) -> Var {
        let (sx, lx) = self.span(x);
        assert!(width > 0 && lx % width == 0);
        let index = self.index.len();
        self.index.extend_from_slice(rows);
        let start = self.values.len();
        self.values.reserve(rows.len() * width);
        for &r in rows {
            let o = sx + r as usize * width;
            assert!(r as usize * width < lx, "row {r} out of range");
            self.values.extend_from_within(o..o + width);
        }
        self.nodes.push(Node {
            op: Op::Gather {
                x,
                index,
                n: rows.len(),
                width,
            },
            start,
            len: rows.len() * width,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    /// `Σ_j weights[j] · row_j` over all rows.
    pub fn weighted_sum(&mut self, weights: Var, rows: Var) -> Var {
        let n = self.len_of(weights);
        self.group_weighted_sum(weights, rows, n)
    }

    /// Splits `x` into blocks of `block` values and repeats each block
    /// `times` times in place: `[a, b] -> [a, a, b, b]` for `times = 2`.
    pub fn repeat_blocks(&mut self, x: Var, block: usize, times: usize) -> Var {
        let (s, l) = self.span(x);
        assert!(block > 0 && l % block == 0);
        let start = self.values.len();
        self.values.reserve(l * times);
        for b in 0..l / block {
            for _ in 0..times {
                for c in 0..block {
                    let v = self.values[s + b * block + c];
                    self.values.push(v);
                }
            }
        }
        self.nodes.push(Node {
            op: Op::RepeatBlocks { x, block, times },
            start,
            len: l * times,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    /// Concatenates `times` copies of `x`.
    pub fn tile(&mut self, x: Var, times: usize) -> Var {
        let (s, l) = self.span(x);
        let start = self.values.len();
        self.values.reserve(l * times);
        for _ in 0..times {
            self.values.extend_from_within(s..s + l);
        }
        self.nodes.push(Node {
            op: Op::Tile(x, times),
            start,
            len: l * times,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let start = self.values.len();
        for &p in parts {
            let (s, l) = self.span(p);
            self.values.extend_from_within(s..s + l);
        }
        let len = self.values.len() - start;
        self.nodes.push(Node {
            op: Op::Concat(parts.to_vec()),
            start,
            len,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    pub fn slice(&mut self, x: Var, offset: usize, len: usize) -> Var {
        let (s, l) = self.span(x);
        assert!(offset + len <= l);
        let start = self.values.len();
        self.values.extend_from_within(s + offset..s + offset + len);
        self.nodes.push(Node {
            op: Op::Slice(x, offset),
            start,
            len,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    /// Copies the value of `x` into a leaf that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let (s, l) = self.span(x);
        let start = self.values.len();
        self.values.extend_from_within(s..s + l);
        self.nodes.push(Node {
            op: Op::Const,
            start,
            len: l,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    /// Value of `hard`, gradient routed to `soft` only.
    ///
    /// `hard` is detached; its value is copied bit for bit, so the forward
    /// pass is exactly the hard computation.
    pub fn straight_through(&mut self, hard: Var, soft: Var) -> Var {
        let (sh, lh) = self.span(hard);
        assert_eq!(lh, self.len_of(soft));
        let start = self.values.len();
        self.values.extend_from_within(sh..sh + lh);
        self.nodes.push(Node {
            op: Op::StraightThrough { soft },
            start,
            len: lh,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    /// Two-stage context attention pooling over selected rows of `table`.
    ///
    /// With `Q` the rows `rows` of the row-major `table` (row width
    /// `len(ctx)`): `α = softmax(Q a)`, `b = Σ α_i Q_i`, `ω = softmax(Q b)`,
    /// output `Σ ω_i Q_i`.
    pub fn pool_rows(&mut self, table: Var, rows: &[u32], ctx: Var) -> Var {
        let (st, lt) = self.span(table);
        let (sc, d) = self.span(ctx);
        assert!(d > 0 && lt % d == 0, "row width {d} does not divide {lt}");
        assert!(!rows.is_empty(), "pooling needs at least one row");
        let n = rows.len();
        let index = self.index.len();
        self.index.extend_from_slice(rows);
        let aux = self.aux.len();
        self.aux.resize(aux + 2 * n + d, 0.0);
        let start = self.values.len();
        self.values.resize(start + d, 0.0);
        let (vals, out) = self.values.split_at_mut(start);
        let (alpha, rest) = self.aux[aux..].split_at_mut(n);
        let (omega, b) = rest.split_at_mut(n);
        let row = |r: u32| &vals[st + r as usize * d..st + (r as usize + 1) * d];
        let a = &vals[sc..sc + d];
        for (s, &r) in alpha.iter_mut().zip(rows) {
            *s = dot(row(r), a);
        }
        softmax_in_place(alpha);
        for (&w, &r) in alpha.iter().zip(rows) {
            axpy(w, row(r), b);
        }
        for (s, &r) in omega.iter_mut().zip(rows) {
            *s = dot(row(r), b);
        }
        softmax_in_place(omega);
        for (&w, &r) in omega.iter().zip(rows) {
            axpy(w, row(r), out);
        }
        self.nodes.push(Node {
            op: Op::PoolRows {
                table,
                ctx,
                index,
                n,
                aux,
            },
            start,
            len: d,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    /// Dot products of every `sub`-wide block of the vectors in `x` with
    /// the `k` keys of its subspace. `keys` holds, per subspace in turn,
    /// `k` rows of width `sub`; the output has `n · (d / sub) · k` entries.
    pub fn subspace_dots(&mut self, x: Var, keys: Var, k: usize, sub: usize) -> Var {
        let (sx, lx) = self.span(x);
        let (sk, lk) = self.span(keys);
        assert!(k > 0 && sub > 0 && lk % (k * sub) == 0);
        let d = lk / k;
        assert!(lx % d == 0, "vector values {lx} do not match width {d}");
        let blocks = lx / sub;
        let parts = d / sub;
        let start = self.values.len();
        self.values.reserve(blocks * k);
        for q in 0..blocks {
            let i = q % parts;
            for j in 0..k {
                let ko = sk + (i * k + j) * sub;
                let v = dot(&self.values[sx + q * sub..sx + (q + 1) * sub], &self.values[ko..ko + sub]);
                self.values.push(v);
            }
        }
        self.nodes.push(Node {
            op: Op::SubspaceDots { x, keys, k, sub },
            start,
            len: blocks * k,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    /// Smoothed volumes of intersections of batched boxes.
    ///
    /// `boxes` are (center, offset) pairs, each holding `n` boxes of width
    /// `d`. Every region lists the boxes it intersects; its edge per
    /// coordinate is `min hi - max lo` over those boxes, and its volume the
    /// product of `softplus_β` edges. The output is region-major: `n`
    /// volumes for the first region, then the next.
    pub fn region_volumes(&mut self, boxes: &[(Var, Var)], regions: &[&[usize]], d: usize, beta: f64) -> Var {
        assert!(d > 0 && !boxes.is_empty());
        let spans: Vec<(usize, usize)> = boxes.iter().map(|&(c, f)| (self.span(c).0, self.span(f).0)).collect();
        let lb = self.len_of(boxes[0].0);
        assert!(lb % d == 0);
        for &(c, f) in boxes {
            assert!(self.len_of(c) == lb && self.len_of(f) == lb, "boxes differ in size");
        }
        for r in regions {
            assert!(!r.is_empty() && r.iter().all(|&i| i < boxes.len()));
        }
        let n = lb / d;
        let aux = self.aux.len();
        self.aux.reserve(regions.len() * lb);
        let start = self.values.len();
        self.values.reserve(regions.len() * n);
        for r in regions {
            for t in 0..n {
                let mut v = 1.0;
                for c in 0..d {
                    let o = t * d + c;
                    let (lo, hi) = region_edge(&self.values, &spans, r, o);
                    let e = softplus(hi - lo, beta);
                    self.aux.push(e);
                    v *= e;
                }
                self.values.push(v);
            }
        }
        self.nodes.push(Node {
            op: Op::RegionVolumes {
                boxes: boxes.to_vec(),
                regions: regions.iter().map(|r| r.to_vec()).collect(),
                d,
                beta,
                aux,
            },
            start,
            len: regions.len() * n,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    /// Overlap ratios between boxes and a grid of keys, per subspace.
    ///
    /// `bc` and `bf` hold the centers and offsets of `n` boxes of width
    /// `d`, each cut into `d / sub` consecutive subspaces. `kc` and `kf`
    /// hold, for each subspace in turn, `k` key boxes of width `sub`. The
    /// output has `n · (d / sub) · k` entries: for every box and subspace,
    /// [`overlap_ratio`] of the box part with each key.
    #[allow(clippy::too_many_arguments)]
    pub fn overlap_ratios(&mut self, bc: Var, bf: Var, kc: Var, kf: Var, k: usize, sub: usize, beta: f64) -> Var {
        let (sbc, lb) = self.span(bc);
        let (sbf, lbf) = self.span(bf);
        let (skc, lk) = self.span(kc);
        let (skf, lkf) = self.span(kf);
        assert!(sub > 0 && k > 0 && lbf == lb && lkf == lk);
        assert!(lk % (k * sub) == 0, "key grid does not divide into {k} keys of width {sub}");
        let parts = lk / (k * sub);
        let d = parts * sub;
        assert!(lb % d == 0, "box values {lb} do not match width {d}");
        let n = lb / d;
        // aux: key offset softplus, box offset softplus, edge softplus
        let aux = self.aux.len();
        self.aux.reserve(lk + lb + n * lk);
        for c in 0..lk {
            self.aux.push(softplus(2.0 * self.values[skf + c], beta));
        }
        for c in 0..lb {
            self.aux.push(softplus(2.0 * self.values[sbf + c], beta));
        }
        let start = self.values.len();
        self.values.reserve(n * parts * k);
        for s in 0..n {
            for i in 0..parts {
                let bo = s * d + i * sub;
                let va: f64 = self.aux[aux + lk + bo..aux + lk + bo + sub].iter().product();
                for j in 0..k {
                    let ko = (i * k + j) * sub;
                    let vb: f64 = self.aux[aux + ko..aux + ko + sub].iter().product();
                    let mut vi = 1.0;
                    for c in 0..sub {
                        let (ac, af) = (self.values[sbc + bo + c], self.values[sbf + bo + c]);
                        let (kcv, kfv) = (self.values[skc + ko + c], self.values[skf + ko + c]);
                        let e = softplus((ac + af).min(kcv + kfv) - (ac - af).max(kcv - kfv), beta);
                        self.aux.push(e);
                        vi *= e;
                    }
                    self.values.push(0.5 * (vi / va + vi / vb));
                }
            }
        }
        self.nodes.push(Node {
            op: Op::OverlapRatios {
                bc,
                bf,
                kc,
                kf,
                k,
                sub,
                beta,
                aux,
            },
            start,
            len: n * parts * k,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    /// Runs the backward pass from the scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let (ls, ll) = self.span(loss);
        if ll != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got length {ll}"
            )));
        }
        if !self.values[ls].is_finite() {
            return Err(Error::Divergence(format!(
                "loss is {}",
                self.values[ls]
            )));
        }
        let mut g = vec![0.0; self.values.len()];
        g[ls] = 1.0;
        let vals = &self.values;
        let mut suffix = Vec::new();
        for idx in (0..=loss.idx()).rev() {
            let node = &self.nodes[idx];
            let (os, ol) = (node.start, node.len);
            // Nodes are appended in topological order, so every input lives
            // strictly before `os` in the arena and can be updated through
            // the lower half of a split borrow.
            let (lower, upper) = g.split_at_mut(os);
            let go = &upper[..ol];
            if go.iter().all(|&x| x == 0.0) {
                continue;
            }
            match &node.op {
                Op::Const | Op::Param { .. } => {}
                Op::Binary(op, a, b) => {
                    let (sa, la) = self.span(*a);
                    let (sb, lb) = self.span(*b);
                    for t in 0..ol {
                        let ia = sa + if la == 1 { 0 } else { t };
                        let ib = sb + if lb == 1 { 0 } else { t };
                        let (x, y, gt) = (vals[ia], vals[ib], go[t]);
                        match op {
                            Bin::Add => {
                                lower[ia] += gt;
                                lower[ib] += gt;
                            }
                            Bin::Sub => {
                                lower[ia] += gt;
                                lower[ib] -= gt;
                            }
                            Bin::Mul => {
                                lower[ia] += gt * y;
                                lower[ib] += gt * x;
                            }
                            Bin::Div => {
                                lower[ia] += gt / y;
                                lower[ib] -= gt * x / (y * y);
                            }
                            Bin::Max => {
                                if x >= y {
                                    lower[ia] += gt;
                                } else {
                                    lower[ib] += gt;
                                }
                            }
                            Bin::Min => {
                                if x <= y {
                                    lower[ia] += gt;
                                } else {
                                    lower[ib] += gt;
                                }
                            }
                        }
                    }
                }
                Op::Unary(op, a) => {
                    let (sa, _) = self.span(*a);
                    for t in 0..ol {
                        let x = vals[sa + t];
                        let y = vals[os + t];
                        let d = match op {
                            Un::Exp => y,
                            Un::Log => 1.0 / x,
                            Un::Sqrt => 0.5 / y,
                            Un::Relu => {
                                if x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Un::Softplus(beta) => sigmoid(beta * x),
                        };
                        lower[sa + t] += go[t] * d;
                    }
                }
                Op::Scale(a, c) => {
                    let (sa, _) = self.span(*a);
                    for t in 0..ol {
                        lower[sa + t] += c * go[t];
                    }
                }
                Op::AddConst(a) => {
                    let (sa, _) = self.span(*a);
                    for t in 0..ol {
                        lower[sa + t] += go[t];
                    }
                }
                Op::GroupSum(a, group) => {
                    let (sa, la) = self.span(*a);
                    for t in 0..la {
                        lower[sa + t] += go[t / group];
                    }
                }
                Op::GroupProd(a, group) => {
                    let (sa, _) = self.span(*a);
                    for q in 0..ol {
                        let xs = &vals[sa + q * group..sa + (q + 1) * group];
                        // prefix/suffix products keep zero factors exact
                        suffix.clear();
                        suffix.resize(group + 1, 1.0);
                        for t in (0..*group).rev() {
                            suffix[t] = suffix[t + 1] * xs[t];
                        }
                        let mut prefix = 1.0;
                        for t in 0..*group {
                            lower[sa + q * group + t] += go[q] * prefix * suffix[t + 1];
                            prefix *= xs[t];
                        }
                    }
                }
                Op::GroupSoftmax(a, group) => {
                    let (sa, _) = self.span(*a);
                    for q in 0..ol / group {
                        let r = q * group..(q + 1) * group;
                        let ys = &vals[os + r.start..os + r.end];
                        let gs = &go[r.clone()];
                        let inner: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                        for (t, (y, g)) in ys.iter().zip(gs).enumerate() {
                            lower[sa + r.start + t] += y * (g - inner);
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let (sa, la) = self.span(*a);
                    let (sb, _) = self.span(*b);
                    for t in 0..la {
                        let (x, y) = (vals[sa + t], vals[sb + t]);
                        lower[sa + t] += go[0] * y;
                        lower[sb + t] += go[0] * x;
                    }
                }
                Op::RowDot { mat, vec } => {
                    let (sm, _) = self.span(*mat);
                    let (sv, k) = self.span(*vec);
                    for r in 0..ol {
                        let gr = go[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for c in 0..k {
                            let m = vals[sm + r * k + c];
                            let v = vals[sv + c];
                            lower[sm + r * k + c] += gr * v;
                            lower[sv + c] += gr * m;
                        }
                    }
                }
                Op::GroupWeightedSum {
                    weights,
                    rows,
                    group,
                    width,
                } => {
                    let (sw, n) = self.span(*weights);
                    let (sr, lr) = self.span(*rows);
                    let k = *width;
                    let m = lr / k;
                    for q in 0..n / group {
                        let gq = &go[q * k..(q + 1) * k];
                        for j in q * group..(q + 1) * group {
                            let w = vals[sw + j];
                            let r = sr + (j % m) * k;
                            lower[sw + j] += dot(gq, &vals[r..r + k]);
                            axpy(w, gq, &mut lower[r..r + k]);
                        }
                    }
                }
                Op::Gather { x, index, n, width } => {
                    let (sx, _) = self.span(*x);
                    for (slot, &r) in self.index[*index..*index + *n].iter().enumerate() {
                        let o = sx + r as usize * width;
                        let src = &go[slot * width..(slot + 1) * width];
                        for (d, s) in lower[o..o + width].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                Op::RepeatBlocks { x, block, times } => {
                    let (sx, lx) = self.span(*x);
                    for b in 0..lx / block {
                        for r in 0..*times {
                            for c in 0..*block {
                                lower[sx + b * block + c] += go[(b * times + r) * block + c];
                            }
                        }
                    }
                }
                Op::Tile(x, times) => {
                    let (sx, lx) = self.span(*x);
                    for r in 0..*times {
                        for c in 0..lx {
                            lower[sx + c] += go[r * lx + c];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (sp, lp) = self.span(*p);
                        for c in 0..lp {
                            lower[sp + c] += go[off + c];
                        }
                        off += lp;
                    }
                }
                Op::Slice(x, offset) => {
                    let (sx, _) = self.span(*x);
                    for c in 0..ol {
                        lower[sx + offset + c] += go[c];
                    }
                }
                Op::StraightThrough { soft } => {
                    let (ss, _) = self.span(*soft);
                    for c in 0..ol {
                        lower[ss + c] += go[c];
                    }
                }
                Op::PoolRows {
                    table,
                    ctx,
                    index,
                    n,
                    aux,
                } => {
                    let (st, _) = self.span(*table);
                    let (sc, d) = self.span(*ctx);
                    let rows = &self.index[*index..*index + *n];
                    let alpha = &self.aux[*aux..*aux + *n];
                    let omega = &self.aux[*aux + *n..*aux + 2 * *n];
                    let b = &self.aux[*aux + 2 * *n..*aux + 2 * *n + d];
                    let row = |r: u32| st + r as usize * d;
                    let a = &vals[sc..sc + d];
                    // second stage
                    let mut gt: Vec<f64> = rows.iter().map(|&r| dot(&vals[row(r)..row(r) + d], go)).collect();
                    let inner: f64 = omega.iter().zip(&gt).map(|(w, g)| w * g).sum();
                    for (g, w) in gt.iter_mut().zip(omega) {
                        *g = w * (*g - inner);
                    }
                    let mut gb = vec![0.0; d];
                    for (&g, &r) in gt.iter().zip(rows) {
                        axpy(g, &vals[row(r)..row(r) + d], &mut gb);
                    }
                    // first stage
                    let mut gs: Vec<f64> = rows.iter().map(|&r| dot(&vals[row(r)..row(r) + d], &gb)).collect();
                    let inner: f64 = alpha.iter().zip(&gs).map(|(w, g)| w * g).sum();
                    for (g, w) in gs.iter_mut().zip(alpha) {
                        *g = w * (*g - inner);
                    }
                    let mut ga = vec![0.0; d];
                    for (i, &r) in rows.iter().enumerate() {
                        axpy(gs[i], &vals[row(r)..row(r) + d], &mut ga);
                        let dst = &mut lower[row(r)..row(r) + d];
                        for c in 0..d {
                            dst[c] += omega[i] * go[c] + gt[i] * b[c] + alpha[i] * gb[c] + gs[i] * a[c];
                        }
                    }
                    for c in 0..d {
                        lower[sc + c] += ga[c];
                    }
                }
                Op::SubspaceDots { x, keys, k, sub } => {
                    let (sx, lx) = self.span(*x);
                    let (sk, lk) = self.span(*keys);
                    let parts = lk / (k * sub);
                    for q in 0..lx / sub {
                        let i = q % parts;
                        for j in 0..*k {
                            let g = go[q * k + j];
                            let ko = sk + (i * k + j) * sub;
                            for c in 0..*sub {
                                lower[sx + q * sub + c] += g * vals[ko + c];
                                lower[ko + c] += g * vals[sx + q * sub + c];
                            }
                        }
                    }
                }
                Op::RegionVolumes {
                    boxes,
                    regions,
                    d,
                    beta,
                    aux,
                } => {
                    let d = *d;
                    let spans: Vec<(usize, usize)> = boxes.iter().map(|&(c, f)| (self.span(c).0, self.span(f).0)).collect();
                    let n = ol / regions.len();
                    suffix.resize(d + 1, 1.0);
                    for (ri, r) in regions.iter().enumerate() {
                        for t in 0..n {
                            let gv = go[ri * n + t];
                            if gv == 0.0 {
                                continue;
                            }
                            let es = &self.aux[*aux + (ri * n + t) * d..*aux + (ri * n + t + 1) * d];
                            suffix[d] = 1.0;
                            for c in (0..d).rev() {
                                suffix[c] = suffix[c + 1] * es[c];
                            }
                            let mut prefix = 1.0;
                            for c in 0..d {
                                let ge = gv * sigmoid_from_softplus(es[c], *beta) * prefix * suffix[c + 1];
                                prefix *= es[c];
                                let o = t * d + c;
                                let (hi_box, lo_box) = region_extremes(vals, &spans, r, o);
                                let (hc, hf) = spans[hi_box];
                                lower[hc + o] += ge;
                                lower[hf + o] += ge;
                                let (lc, lf) = spans[lo_box];
                                lower[lc + o] -= ge;
                                lower[lf + o] += ge;
                            }
                        }
                    }
                }
                Op::OverlapRatios {
                    bc,
                    bf,
                    kc,
                    kf,
                    k,
                    sub,
                    beta,
                    aux,
                } => {
                    let (k, sub, beta) = (*k, *sub, *beta);
                    let (sbc, lb) = self.span(*bc);
                    let (sbf, _) = self.span(*bf);
                    let (skc, lk) = self.span(*kc);
                    let (skf, _) = self.span(*kf);
                    let parts = lk / (k * sub);
                    let d = parts * sub;
                    let n = lb / d;
                    let key_sp = &self.aux[*aux..*aux + lk];
                    let box_sp = &self.aux[*aux + lk..*aux + lk + lb];
                    let edge_sp = &self.aux[*aux + lk + lb..*aux + lk + lb + n * lk];
                    let mut g_key_vol = vec![0.0; parts * k];
                    let mut g_box_vol = vec![0.0; n * parts];
                    for s in 0..n {
                        for i in 0..parts {
                            let bo = s * d + i * sub;
                            let va: f64 = box_sp[bo..bo + sub].iter().product();
                            for j in 0..k {
                                let g = go[(s * parts + i) * k + j];
                                if g == 0.0 {
                                    continue;
                                }
                                let ko = (i * k + j) * sub;
                                let vb: f64 = key_sp[ko..ko + sub].iter().product();
                                let es = &edge_sp[s * lk + ko..s * lk + ko + sub];
                                let vi: f64 = es.iter().product();
                                let g_vi = 0.5 * g * (1.0 / va + 1.0 / vb);
                                g_box_vol[s * parts + i] -= 0.5 * g * vi / (va * va);
                                g_key_vol[i * k + j] -= 0.5 * g * vi / (vb * vb);
                                for c in 0..sub {
                                    let ge = g_vi * sigmoid_from_softplus(es[c], beta) * product_except(es, c);
                                    let (ia, ib) = (bo + c, ko + c);
                                    let (ac, af) = (vals[sbc + ia], vals[sbf + ia]);
                                    let (kcv, kfv) = (vals[skc + ib], vals[skf + ib]);
                                    // the edge is hi - lo with hi = c + f, lo = c - f
                                    if ac + af <= kcv + kfv {
                                        lower[sbc + ia] += ge;
                                        lower[sbf + ia] += ge;
                                    } else {
                                        lower[skc + ib] += ge;
                                        lower[skf + ib] += ge;
                                    }
                                    if ac - af >= kcv - kfv {
                                        lower[sbc + ia] -= ge;
                                        lower[sbf + ia] += ge;
                                    } else {
                                        lower[skc + ib] -= ge;
                                        lower[skf + ib] += ge;
                                    }
                                }
                            }
                        }
                    }
                    for (q, &gv) in g_box_vol.iter().enumerate() {
                        let sp = &box_sp[q * sub..(q + 1) * sub];
                        for c in 0..sub {
                            lower[sbf + q * sub + c] += gv * 2.0 * sigmoid_from_softplus(sp[c], beta) * product_except(sp, c);
                        }
                    }
                    for (q, &gv) in g_key_vol.iter().enumerate() {
                        let sp = &key_sp[q * sub..(q + 1) * sub];
                        for c in 0..sub {
                            lower[skf + q * sub + c] += gv * 2.0 * sigmoid_from_softplus(sp[c], beta) * product_except(sp, c);
                        }
                    }
                }
            }
        }
        Ok(Gradients {
            grads: g,
            spans: self.nodes.iter().map(|n| (n.start, n.len)).collect(),
        })
    }

    /// Backward pass accumulating parameter gradients into `store`.
    ///
    /// Parameters that do not take part in the graph keep their gradient
    /// buffers untouched, so after [`ParamStore::zero_grad`] they are exactly
    /// zero.
    pub fn backward<S: Real>(&self, loss: Var, store: &mut ParamStore<S>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param { id, rows, cols } = &node.op {
                let g = grads.wrt(Var(idx as u32));
                for (slot, &r) in rows.iter().enumerate() {
                    let src = &g[slot * cols..(slot + 1) * cols];
                    if src.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Divergence(format!(
                            "non-finite gradient for parameter {}",
                            store.name(*id)
                        )));
                    }
                    store.accumulate_row(*id, r as usize, src);
                }
            }
        }
        Ok(())
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn axpy(w: f64, x: &[f64], acc: &mut [f64]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += w * v;
    }
}

fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in x.iter_mut() {
        *v /= total;
    }
}

/// `½ (V(A∩B)/V(A) + V(A∩B)/V(B))` with softplus volumes, for boxes given
/// as center and offset slices of equal width.
pub fn overlap_ratio(ac: &[f64], af: &[f64], bc: &[f64], bf: &[f64], beta: f64) -> f64 {
    let (mut vi, mut va, mut vb) = (1.0, 1.0, 1.0);
    for c in 0..ac.len() {
        let lo = (ac[c] - af[c]).max(bc[c] - bf[c]);
        let hi = (ac[c] + af[c]).min(bc[c] + bf[c]);
        vi *= softplus(hi - lo, beta);
        va *= softplus(2.0 * af[c], beta);
        vb *= softplus(2.0 * bf[c], beta);
    }
    0.5 * (vi / va + vi / vb)
}

/// Lowest hi and highest lo over the boxes of a region at value offset `o`.
fn region_edge(vals: &[f64], spans: &[(usize, usize)], region: &[usize], o: usize) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for &b in region {
        let (c, f) = (vals[spans[b].0 + o], vals[spans[b].1 + o]);
        lo = lo.max(c - f);
        hi = hi.min(c + f);
    }
    (lo, hi)
}

/// Boxes supplying the region's hi and lo corners; ties go to the box
/// listed first.
fn region_extremes(vals: &[f64], spans: &[(usize, usize)], region: &[usize], o: usize) -> (usize, usize) {
    let (mut lo, mut hi) = ((region[0], f64::NEG_INFINITY), (region[0], f64::INFINITY));
    for &b in region {
        let (c, f) = (vals[spans[b].0 + o], vals[spans[b].1 + o]);
        if c - f > lo.1 {
            lo = (b, c - f);
        }
        if c + f < hi.1 {
            hi = (b, c + f);
        }
    }
    (hi.0, lo.0)
}

/// `σ(βx)` recovered from `y = softplus(x, β)`.
fn sigmoid_from_softplus(y: f64, beta: f64) -> f64 {
    -(-beta * y).exp_m1()
}

fn product_except(x: &[f64], skip: usize) -> f64 {
    x.iter()
        .enumerate()
        .filter(|&(c, _)| c != skip)
        .map(|(_, v)| v)
        .product()
}

/// `(1/β) ln(1 + exp(βx))`, switching to the linear branch for `βx > 30`.
pub fn softplus(x: f64, beta: f64) -> f64 {
    let z = beta * x;
    if z > 30.0 {
        x + (-z).exp().ln_1p() / beta
    } else {
        z.exp().ln_1p() / beta
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64, beta: f64) -> f64 {
    let z = beta * y;
    if z > 30.0 {
        y + (-(-z).exp()).ln_1p() / beta
    } else {
        z.exp_m1().ln() / beta
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable softmax of `src` written into `dst`.
pub fn softmax_into(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        total += *d;
    }
    for d in dst.iter_mut() {
        *d /= total;
    }
}
