//! Dense multivariate polynomials with θ-dependent coefficients.
//!
//! Coefficients are stored by their values on the collocation grid, so all
//! arithmetic is node-wise. Monomials use a graded ordering: all monomials of
//! degree 0, then degree 1, and so on; inside a degree, exponent vectors are
//! in descending lexicographic order.

use std::collections::HashMap;
use std::fmt::Debug;
use std::ops::Range;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_traits::NumAssign;

use crate::fourier::{CollocationGrid, ShiftMatrix};

pub trait Scalar: Copy + Debug + PartialEq + Send + Sync + NumAssign + std::ops::Neg<Output = Self> + 'static {
    fn from_real(v: f64) -> Self;
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    fn from_real(v: f64) -> Self {
        v
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn from_real(v: f64) -> Self {
        Complex64::new(v, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// All monomials in `nvars` variables with total degree `≤ max_degree`.
#[derive(Debug)]
pub struct MonomialBasis {
    nvars: usize,
    max_degree: usize,
    exponents: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    degree_start: Vec<usize>,
    /// `(parent, var)` with `m = parent · x_var`; unused for the constant.
    parent: Vec<(usize, usize)>,
    /// `lower[m][v]` is the index of `m / x_v` when `x_v` divides `m`.
    lower: Vec<Vec<Option<usize>>>,
    products: OnceLock<Vec<(u32, u32, u32)>>,
}

impl MonomialBasis {
    pub fn new(nvars: usize, max_degree: usize) -> Arc<Self> {
        let mut exponents = Vec::new();
        let mut degree_start = Vec::new();
        for d in 0..=max_degree {
            degree_start.push(exponents.len());
            let mut current = vec![0u8; nvars];
            compositions(d, 0, &mut current, &mut exponents);
        }
        degree_start.push(exponents.len());
        let index: HashMap<Vec<u8>, usize> = exponents
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        let mut parent = vec![(0, 0); exponents.len()];
        let mut lower = vec![vec![None; nvars]; exponents.len()];
        for (i, e) in exponents.iter().enumerate() {
            for v in 0..nvars {
                if e[v] > 0 {
                    let mut p = e.clone();
                    p[v] -= 1;
                    lower[i][v] = Some(index[&p]);
                }
            }
            if let Some(v) = e.iter().position(|&x| x > 0) {
                parent[i] = (lower[i][v].unwrap(), v);
            }
        }
        Arc::new(Self {
            nvars,
            max_degree,
            exponents,
            index,
            degree_start,
            parent,
            lower,
            products: OnceLock::new(),
        })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponent(&self, m: usize) -> &[u8] {
        &self.exponents[m]
    }

    pub fn degree(&self, m: usize) -> usize {
        self.exponents[m].iter().map(|&e| e as usize).sum()
    }

    pub fn index_of(&self, exponent: &[u8]) -> Option<usize> {
        self.index.get(exponent).copied()
    }

    /// Index range of the monomials of total degree `d`.
    pub fn degree_range(&self, d: usize) -> Range<usize> {
        if d > self.max_degree {
            return self.len()..self.len();
        }
        self.degree_start[d]..self.degree_start[d + 1]
    }

    /// Index of the monomial `x_v`.
    pub fn linear(&self, v: usize) -> usize {
        1 + v
    }

    pub fn lower(&self, m: usize, v: usize) -> Option<usize> {
        self.lower[m][v]
    }

    /// Values of every monomial at `x`.
    pub fn eval<T: Scalar>(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.nvars);
        out[0] = T::one();
        for i in 1..self.len() {
            let (p, v) = self.parent[i];
            out[i] = out[p] * x[v];
        }
    }

    pub fn eval_vec<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.len()];
        self.eval(x, &mut out);
        out
    }

    /// Triples `(a, b, c)` with `x^a · x^b = x^c` inside the basis.
    pub fn products(&self) -> &[(u32, u32, u32)] {
        self.products.get_or_init(|| {
            let mut out = Vec::new();
            let mut buf = vec![0u8; self.nvars];
            for a in 0..self.len() {
                let da = self.degree(a);
                for b in 0..self.degree_start[self.max_degree - da + 1] {
                    for v in 0..self.nvars {
                        buf[v] = self.exponents[a][v] + self.exponents[b][v];
                    }
                    let c = self.index[&buf];
                    out.push((a as u32, b as u32, c as u32));
                }
            }
            out
        })
    }
}

fn compositions(rest: usize, var: usize, current: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    let n = current.len();
    if n == 0 {
        if rest == 0 {
            out.push(Vec::new());
        }
        return;
    }
    if var == n - 1 {
        current[var] = rest as u8;
        out.push(current.clone());
        current[var] = 0;
        return;
    }
    for e in (0..=rest).rev() {
        current[var] = e as u8;
        compositions(rest - e, var + 1, current, out);
    }
    current[var] = 0;
}

/// Vector-valued polynomial whose coefficients are sampled on a grid.
///
/// Layout of `coeffs`: node-major, then output, then monomial.
#[derive(Debug, Clone)]
pub struct GridPoly<T: Scalar> {
    basis: Arc<MonomialBasis>,
    nout: usize,
    grid: CollocationGrid,
    coeffs: Vec<T>,
}

pub type RealPoly = GridPoly<f64>;
pub type ComplexPoly = GridPoly<Complex64>;

impl<T: Scalar> PartialEq for GridPoly<T> {
    fn eq(&self, other: &Self) -> bool {
        self.nout == other.nout
            && self.grid == other.grid
            && self.basis.nvars == other.basis.nvars
            && self.basis.max_degree == other.basis.max_degree
            && self.coeffs == other.coeffs
    }
}

impl<T: Scalar> GridPoly<T> {
    pub fn zeros(basis: Arc<MonomialBasis>, nout: usize, grid: CollocationGrid) -> Self {
        let len = grid.len() * nout * basis.len();
        Self {
            basis,
            nout,
            grid,
            coeffs: vec![T::zero(); len],
        }
    }

    /// `z ↦ z`, requires `nout == nvars`.
    pub fn identity(basis: Arc<MonomialBasis>, grid: CollocationGrid) -> Self {
        let n = basis.nvars();
        let mut p = Self::zeros(basis, n, grid);
        for j in 0..grid.len() {
            for o in 0..n {
                let m = p.basis.linear(o);
                p.set(j, o, m, T::one());
            }
        }
        p
    }

    /// Linear polynomial `z ↦ M_j z` at every node `j`.
    pub fn linear_map(basis: Arc<MonomialBasis>, grid: CollocationGrid, mats: &[DMatrix<T>]) -> Self
    where
        T: nalgebra::Scalar,
    {
        let nout = mats[0].nrows();
        let mut p = Self::zeros(basis, nout, grid);
        for j in 0..grid.len() {
            for o in 0..nout {
                for v in 0..mats[j].ncols() {
                    let m = p.basis.linear(v);
                    p.set(j, o, m, mats[j][(o, v)]);
                }
            }
        }
        p
    }

    pub fn basis(&self) -> &Arc<MonomialBasis> {
        &self.basis
    }

    pub fn nout(&self) -> usize {
        self.nout
    }

    pub fn nvars(&self) -> usize {
        self.basis.nvars()
    }

    pub fn grid(&self) -> CollocationGrid {
        self.grid
    }

    pub fn max_degree(&self) -> usize {
        self.basis.max_degree()
    }

    #[inline]
    fn offset(&self, node: usize, out: usize, mono: usize) -> usize {
        (node * self.nout + out) * self.basis.len() + mono
    }

    #[inline]
    pub fn get(&self, node: usize, out: usize, mono: usize) -> T {
        self.coeffs[self.offset(node, out, mono)]
    }

    #[inline]
    pub fn set(&mut self, node: usize, out: usize, mono: usize, v: T) {
        let i = self.offset(node, out, mono);
        self.coeffs[i] = v;
    }

    #[inline]
    pub fn add_to(&mut self, node: usize, out: usize, mono: usize, v: T) {
        let i = self.offset(node, out, mono);
        self.coeffs[i] += v;
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [T] {
        &mut self.coeffs
    }

    /// Coefficients of one output at one node.
    pub fn row(&self, node: usize, out: usize) -> &[T] {
        let s = self.offset(node, out, 0);
        &self.coeffs[s..s + self.basis.len()]
    }

    pub fn row_mut(&mut self, node: usize, out: usize) -> &mut [T] {
        let s = self.offset(node, out, 0);
        let len = self.basis.len();
        &mut self.coeffs[s..s + len]
    }

    /// Evaluate at node `j`.
    pub fn eval_node(&self, node: usize, x: &[T]) -> Vec<T> {
        let phi = self.basis.eval_vec(x);
        self.eval_node_monomials(node, &phi)
    }

    pub fn eval_node_monomials(&self, node: usize, phi: &[T]) -> Vec<T> {
        (0..self.nout)
            .map(|o| dot(self.row(node, o), phi))
            .collect()
    }

    /// Evaluate at an arbitrary phase given interpolation weights `t`.
    pub fn eval_weights(&self, t: &[f64], x: &[T]) -> Vec<T> {
        let phi = self.basis.eval_vec(x);
        self.eval_weights_monomials(t, &phi)
    }

    pub fn eval_weights_monomials(&self, t: &[f64], phi: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.nout];
        for (j, &tj) in t.iter().enumerate() {
            if tj == 0.0 {
                continue;
            }
            let tj = T::from_real(tj);
            for (o, acc) in out.iter_mut().enumerate() {
                *acc += tj * dot(self.row(j, o), phi);
            }
        }
        out
    }

    /// Jacobian `∂p_o/∂x_v` at node `j`, as rows = outputs.
    pub fn jacobian_node(&self, node: usize, x: &[T]) -> Vec<Vec<T>> {
        let phi = self.basis.eval_vec(x);
        let t: Vec<f64> = (0..self.grid.len()).map(|j| if j == node { 1.0 } else { 0.0 }).collect();
        self.jacobian_weights_monomials(&t, &phi)
    }

    /// Jacobian with interpolation weights and precomputed monomials.
    pub fn jacobian_weights_monomials(&self, t: &[f64], phi: &[T]) -> Vec<Vec<T>> {
        let nv = self.nvars();
        let mut jac = vec![vec![T::zero(); nv]; self.nout];
        let eff = self.effective(t);
        for m in 1..self.basis.len() {
            for v in 0..nv {
                if let Some(l) = self.basis.lower(m, v) {
                    let factor = T::from_real(self.basis.exponent(m)[v] as f64) * phi[l];
                    for o in 0..self.nout {
                        jac[o][v] += eff[o * self.basis.len() + m] * factor;
                    }
                }
            }
        }
        jac
    }

    /// Coefficients interpolated at a phase: layout `[out][monomial]`.
    pub fn effective(&self, t: &[f64]) -> Vec<T> {
        let len = self.nout * self.basis.len();
        let mut eff = vec![T::zero(); len];
        for (j, &tj) in t.iter().enumerate() {
            if tj == 0.0 {
                continue;
            }
            let tj = T::from_real(tj);
            let s = j * len;
            for (e, c) in eff.iter_mut().zip(&self.coeffs[s..s + len]) {
                *e += tj * *c;
            }
        }
        eff
    }

    pub fn scale(&mut self, s: T) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += *b;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a -= *b;
        }
        out
    }

    /// Largest coefficient modulus over monomials of degree `d`.
    pub fn degree_norm(&self, d: usize) -> f64 {
        let r = self.basis.degree_range(d);
        let mut best = 0.0f64;
        for j in 0..self.grid.len() {
            for o in 0..self.nout {
                for m in r.clone() {
                    best = best.max(self.get(j, o, m).modulus());
                }
            }
        }
        best
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |a, c| a.max(c.modulus()))
    }

    /// Keep only monomials of degree in `range`.
    pub fn degree_part(&self, degrees: Range<usize>) -> Self {
        let mut out = self.clone();
        for j in 0..self.grid.len() {
            for o in 0..self.nout {
                for m in 0..self.basis.len() {
                    if !degrees.contains(&self.basis.degree(m)) {
                        out.set(j, o, m, T::zero());
                    }
                }
            }
        }
        out
    }

    /// Single output as a polynomial.
    pub fn output(&self, o: usize) -> Self {
        let mut out = Self::zeros(self.basis.clone(), 1, self.grid);
        for j in 0..self.grid.len() {
            out.row_mut(j, 0).copy_from_slice(self.row(j, o));
        }
        out
    }

    /// Stack outputs of several polynomials over the same basis.
    pub fn stack(parts: &[&Self]) -> Self {
        let nout = parts.iter().map(|p| p.nout).sum();
        let mut out = Self::zeros(parts[0].basis.clone(), nout, parts[0].grid);
        for j in 0..out.grid.len() {
            let mut o = 0;
            for p in parts {
                for po in 0..p.nout {
                    out.row_mut(j, o).copy_from_slice(p.row(j, po));
                    o += 1;
                }
            }
        }
        out
    }

    /// Truncated product of two single-output polynomials, node-wise.
    pub fn mul_scalar_poly(a: &[T], b: &[T], basis: &MonomialBasis, out: &mut [T]) {
        for v in out.iter_mut() {
            *v = T::zero();
        }
        for &(i, k, c) in basis.products() {
            let x = a[i as usize];
            if x == T::zero() {
                continue;
            }
            out[c as usize] += x * b[k as usize];
        }
    }

    /// Node-wise composition `self(inner(z, θ), θ)` truncated at the inner
    /// basis degree. `inner.nout` must equal `self.nvars`.
    pub fn compose(&self, inner: &GridPoly<T>) -> GridPoly<T> {
        assert_eq!(inner.nout, self.nvars(), "composition arity mismatch");
        assert_eq!(inner.grid, self.grid, "composition grid mismatch");
        let ib = inner.basis.clone();
        let mlen = ib.len();
        let mut result = GridPoly::zeros(ib.clone(), self.nout, self.grid);
        let mut powers: Vec<Vec<T>> = vec![vec![T::zero(); mlen]; self.basis.len()];
        for j in 0..self.grid.len() {
            powers[0].iter_mut().for_each(|v| *v = T::zero());
            powers[0][0] = T::one();
            for m in 1..self.basis.len() {
                let (p, v) = self.basis.parent[m];
                let (head, tail) = powers.split_at_mut(m);
                Self::mul_scalar_poly(&head[p], inner.row(j, v), &ib, &mut tail[0]);
            }
            for o in 0..self.nout {
                let row = self.row(j, o);
                let acc = result.row_mut(j, o);
                for (m, pm) in powers.iter().enumerate() {
                    let c = row[m];
                    if c == T::zero() {
                        continue;
                    }
                    for (a, b) in acc.iter_mut().zip(pm) {
                        *a += c * *b;
                    }
                }
            }
        }
        result
    }

    /// Apply a real node-mixing matrix to every coefficient: used for
    /// shifting along the torus (`x·𝕊`).
    pub fn mix_nodes(&self, mix: &DMatrix<f64>) -> Self {
        let m = self.grid.len();
        let stride = self.nout * self.basis.len();
        let mut out = Self::zeros(self.basis.clone(), self.nout, self.grid);
        for l in 0..m {
            for j in 0..m {
                let w = mix[(j, l)];
                if w == 0.0 {
                    continue;
                }
                let w = T::from_real(w);
                for s in 0..stride {
                    out.coeffs[l * stride + s] += w * self.coeffs[j * stride + s];
                }
            }
        }
        out
    }

    /// Values at `θ + ω` on the nodes.
    pub fn shifted_forward(&self, shift_minus: &ShiftMatrix) -> Self {
        self.mix_nodes(&shift_minus.entries)
    }

    /// Re-express the coefficients in a basis of higher or equal degree
    /// (same number of variables).
    pub fn with_basis(&self, basis: Arc<MonomialBasis>) -> Self {
        assert_eq!(basis.nvars(), self.nvars());
        let mut out = Self::zeros(basis.clone(), self.nout, self.grid);
        for m in 0..self.basis.len() {
            if let Some(k) = basis.index_of(self.basis.exponent(m)) {
                for j in 0..self.grid.len() {
                    for o in 0..self.nout {
                        out.set(j, o, k, self.get(j, o, m));
                    }
                }
            }
        }
        out
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> GridPoly<U> {
        GridPoly {
            basis: self.basis.clone(),
            nout: self.nout,
            grid: self.grid,
            coeffs: self.coeffs.iter().map(|&c| f(c)).collect(),
        }
    }
}

impl RealPoly {
    pub fn to_complex(&self) -> ComplexPoly {
        self.map(|c| Complex64::new(c, 0.0))
    }

    /// Evaluate at weights, returning an nalgebra vector.
    pub fn eval_vec(&self, t: &DVector<f64>, x: &[f64]) -> DVector<f64> {
        DVector::from_vec(self.eval_weights(t.as_slice(), x))
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}
