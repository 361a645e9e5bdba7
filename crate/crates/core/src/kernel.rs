//! Transition kernels over an enumerable `[S]^d`, stored in whatever shape
//! keeps them cheap: sparse rows for single-site moves, per-token factors for
//! kernels where every token moves independently, dense for small tests.

use crate::error::{Error, Result};
use crate::state_space::{Pmf, StateSpace};

/// Kernel with explicitly stored rows, each sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseKernel {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseKernel {
    /// Builds from unsorted rows; duplicate columns are merged.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let rows = rows
            .into_iter()
            .map(|mut r| {
                r.sort_by_key(|(c, _)| *c);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(r.len());
                for (c, v) in r {
                    match merged.last_mut() {
                        Some((lc, lv)) if *lc == c => *lv += v,
                        _ => merged.push((c, v)),
                    }
                }
                merged
            })
            .collect();
        Self { rows }
    }

    /// Deterministic kernel `x -> map[x]`.
    pub fn deterministic(map: &[usize]) -> Self {
        Self { rows: map.iter().map(|&y| vec![(y, 1.0)]).collect() }
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// Entry `P(x, y)`.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        let row = &self.rows[x];
        row.binary_search_by_key(&y, |(c, _)| *c).map(|k| row[k].1).unwrap_or(0.0)
    }
}

/// Kernel under which every token moves independently given the current
/// state: `P(x, y) = prod_i m_i(x)[y_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductKernel {
    space: StateSpace,
    /// `factors[(x * d + i) * S + a]`.
    factors: Vec<f64>,
}

impl ProductKernel {
    pub fn new(space: StateSpace, factors: Vec<f64>) -> Result<Self> {
        let n = space.size()?;
        if factors.len() != n * space.d() * space.s() {
            return Err(Error::InvalidConfig("product kernel factor table has wrong size".into()));
        }
        Ok(Self { space, factors })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    /// Per-token move distribution of position `i` from state `x`.
    pub fn factor(&self, x: usize, i: usize) -> &[f64] {
        let (d, s) = (self.space.d(), self.space.s());
        &self.factors[(x * d + i) * s..(x * d + i + 1) * s]
    }

    /// Writes `scale * P(x, .)` into `out` (length `S^d`), using `tmp` as scratch.
    fn expand_row(&self, x: usize, scale: f64, out: &mut Vec<f64>, tmp: &mut Vec<f64>) {
        let (d, s) = (self.space.d(), self.space.s());
        out.clear();
        out.push(scale);
        for i in 0..d {
            let f = self.factor(x, i);
            tmp.clear();
            for &m in f {
                if m == 0.0 {
                    tmp.extend(std::iter::repeat_n(0.0, out.len()));
                } else {
                    tmp.extend(out.iter().map(|v| v * m));
                }
            }
            std::mem::swap(out, tmp);
        }
        debug_assert_eq!(out.len(), s.pow(d as u32));
    }
}

/// Dense row-major kernel. Only sensible for small spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseKernel {
    n: usize,
    data: Vec<f64>,
}

impl DenseKernel {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::InvalidConfig("dense kernel has wrong size".into()));
        }
        Ok(Self { n, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.n + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.n..(x + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// A Markov transition kernel on `{0, .., n-1}`.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    Sparse(SparseKernel),
    Product(ProductKernel),
    Dense(DenseKernel),
    /// Apply the kernels left to right: `P = P_0 P_1 ... P_m`.
    Chain(Vec<Kernel>),
}

impl Kernel {
    pub fn n(&self) -> usize {
        match self {
            Kernel::Sparse(k) => k.rows.len(),
            Kernel::Product(k) => k.factors.len() / (k.space.d() * k.space.s()),
            Kernel::Dense(k) => k.n,
            Kernel::Chain(ks) => ks.first().map_or(0, Kernel::n),
        }
    }

    /// Row vector times kernel: `p P`.
    pub fn push(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.n(), "distribution length does not match kernel");
        match self {
            Kernel::Sparse(k) => {
                let mut out = vec![0.0; p.len()];
                for (row, &px) in k.rows.iter().zip(p) {
                    if px == 0.0 {
                        continue;
                    }
                    for &(y, v) in row {
                        out[y] += px * v;
                    }
                }
                out
            }
            Kernel::Product(k) => {
                let n = p.len();
                let mut out = vec![0.0; n];
                let (mut buf, mut tmp) = (Vec::with_capacity(n), Vec::with_capacity(n));
                for (x, &px) in p.iter().enumerate() {
                    if px == 0.0 {
                        continue;
                    }
                    k.expand_row(x, px, &mut buf, &mut tmp);
                    for (o, v) in out.iter_mut().zip(&buf) {
                        *o += v;
                    }
                }
                out
            }
            Kernel::Dense(k) => {
                let mut out = vec![0.0; k.n];
                for (x, &px) in p.iter().enumerate() {
                    if px == 0.0 {
                        continue;
                    }
                    for (o, v) in out.iter_mut().zip(k.row(x)) {
                        *o += px * v;
                    }
                }
                out
            }
            Kernel::Chain(ks) => ks.iter().fold(p.to_vec(), |acc, k| k.push(&acc)),
        }
    }

    /// Kernel times column vector: `(P f)(x) = sum_y P(x, y) f(y)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.n(), "function length does not match kernel");
        match self {
            Kernel::Sparse(k) => k.rows.iter().map(|row| row.iter().map(|&(y, v)| v * f[y]).sum()).collect(),
            Kernel::Product(k) => {
                let n = f.len();
                let (mut buf, mut tmp) = (Vec::with_capacity(n), Vec::with_capacity(n));
                (0..n)
                    .map(|x| {
                        k.expand_row(x, 1.0, &mut buf, &mut tmp);
                        buf.iter().zip(f).map(|(a, b)| a * b).sum()
                    })
                    .collect()
            }
            Kernel::Dense(k) => (0..k.n).map(|x| k.row(x).iter().zip(f).map(|(a, b)| a * b).sum()).collect(),
            Kernel::Chain(ks) => ks.iter().rev().fold(f.to_vec(), |acc, k| k.apply(&acc)),
        }
    }

    /// Row `x` as a dense vector.
    pub fn dense_row(&self, x: usize) -> Vec<f64> {
        let n = self.n();
        let mut e = vec![0.0; n];
        e[x] = 1.0;
        self.push(&e)
    }

    pub fn to_dense(&self) -> DenseKernel {
        let n = self.n();
        let mut data = Vec::with_capacity(n * n);
        for x in 0..n {
            data.extend(self.dense_row(x));
        }
        DenseKernel { n, data }
    }

    /// Largest `|sum_y P(x, y) - 1|` over rows, and smallest entry seen.
    pub fn row_sum_error(&self) -> (f64, f64) {
        let n = self.n();
        let mut worst = 0.0f64;
        let mut min_entry = f64::INFINITY;
        for x in 0..n {
            let row = self.dense_row(x);
            let sum: f64 = row.iter().sum();
            worst = worst.max((sum - 1.0).abs());
            min_entry = row.iter().copied().fold(min_entry, f64::min);
        }
        (worst, min_entry)
    }

    /// Pushes a pmf through the kernel.
    pub fn push_pmf(&self, p: &Pmf) -> Result<Pmf> {
        if p.len() != self.n() {
            return Err(Error::SpecMismatch(format!("pmf has {} states, kernel has {}", p.len(), self.n())));
        }
        let out = self.push(p.mass());
        // Clamp tiny negative round-off from cancellation.
        Pmf::from_weights(*p.space(), out.into_iter().map(|v| v.max(0.0)).collect())
    }

    /// Largest violation of `pi(x) P(x, y) = pi(y) P(y, x)`.
    pub fn detailed_balance_violation(&self, pi: &[f64]) -> f64 {
        match self {
            Kernel::Sparse(k) => {
                let mut worst = 0.0f64;
                for (x, row) in k.rows.iter().enumerate() {
                    for &(y, v) in row {
                        worst = worst.max((pi[x] * v - pi[y] * k.get(y, x)).abs());
                    }
                }
                worst
            }
            other => {
                let dense = other.to_dense();
                let n = dense.n;
                let mut worst = 0.0f64;
                for x in 0..n {
                    for y in (x + 1)..n {
                        worst = worst.max((pi[x] * dense.get(x, y) - pi[y] * dense.get(y, x)).abs());
                    }
                }
                worst
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> Kernel {
        Kernel::Dense(DenseKernel::new(2, vec![0.9, 0.1, 0.3, 0.7]).unwrap())
    }

    #[test]
    fn dense_push_and_apply() {
        let k = two_state();
        let p = k.push(&[1.0, 0.0]);
        assert_eq!(p, vec![0.9, 0.1]);
        let f = k.apply(&[1.0, 0.0]);
        assert_eq!(f, vec![0.9, 0.3]);
        // Stationary law (0.75, 0.25).
        let s = k.push(&[0.75, 0.25]);
        assert!((s[0] - 0.75).abs() < 1e-15);
        assert!(k.detailed_balance_violation(&[0.75, 0.25]) < 1e-15);
    }

    #[test]
    fn product_kernel_matches_brute_force() {
        let space = StateSpace::new(2, 2).unwrap();
        // Each token flips with its own probability depending on the state.
        let mut factors = Vec::new();
        for x in 0..4 {
            for i in 0..2 {
                let cur = (x >> i) & 1;
                let flip = 0.1 + 0.05 * (x + i) as f64;
                let mut f = [0.0; 2];
                f[cur] = 1.0 - flip;
                f[1 - cur] = flip;
                factors.extend(f);
            }
        }
        let k = Kernel::Product(ProductKernel::new(space, factors).unwrap());
        let Kernel::Product(pk) = &k else { unreachable!() };
        for x in 0..4 {
            let row = k.dense_row(x);
            for (y, &v) in row.iter().enumerate() {
                let expect = pk.factor(x, 0)[y & 1] * pk.factor(x, 1)[(y >> 1) & 1];
                assert!((v - expect).abs() < 1e-15);
            }
        }
        let (err, min) = k.row_sum_error();
        assert!(err < 1e-15 && min >= 0.0);
        let f = [1.0, 2.0, 3.0, 4.0];
        let dense = Kernel::Dense(k.to_dense());
        let (a, b) = (k.apply(&f), dense.apply(&f));
        assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-14));
    }

    #[test]
    fn chain_composes_in_order() {
        let flip = Kernel::Sparse(SparseKernel::deterministic(&[1, 0]));
        let chain = Kernel::Chain(vec![two_state(), flip.clone()]);
        assert_eq!(chain.push(&[1.0, 0.0]), vec![0.1, 0.9]);
        assert_eq!(chain.apply(&[1.0, 0.0]), vec![0.1, 0.7]);
    }

    #[test]
    fn sparse_rows_merge_duplicates() {
        let k = SparseKernel::from_rows(vec![vec![(1, 0.25), (0, 0.5), (1, 0.25)]]);
        assert_eq!(k.rows()[0], vec![(0, 0.5), (1, 0.5)]);
        assert_eq!(k.get(0, 1), 0.5);
    }
}
