//! Fourier collocation on the circle.
//!
//! Functions `𝕋 → ℝⁿ` are stored by their values on the uniform grid of
//! `2ℓ+1` nodes and reconstructed with the Dirichlet cardinal kernel. The
//! shift matrix moves a sampled function along the circle by a fixed angle.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Map any angle onto `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TWO_PI);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if r >= TWO_PI {
        0.0
    } else {
        r
    }
}

/// Cardinal interpolation kernel `sin((2ℓ+1)θ/2) / ((2ℓ+1) sin(θ/2))`.
pub fn gamma(theta: f64, ell: usize) -> f64 {
    let m = (2 * ell + 1) as f64;
    // the kernel is 2π-periodic (2ℓ+1 is odd); working in (−π, π] keeps sin(θ/2) accurate near 2π
    let mut theta = normalize_angle(theta);
    if theta > PI {
        theta -= TWO_PI;
    }
    // exact cardinal values at grid offsets
    let u = theta * m / TWO_PI;
    let k = u.round();
    if (u - k).abs() < 1e-14 {
        return if k == 0.0 { 1.0 } else { 0.0 };
    }
    let s = (0.5 * theta).sin();
    if s.abs() < 1e-9 {
        return 1.0;
    }
    (0.5 * m * theta).sin() / (m * s)
}

/// Uniform collocation grid with `2ℓ+1` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CollocationGrid {
    ell: usize,
}

impl CollocationGrid {
    pub fn new(ell: usize) -> Self {
        Self { ell }
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    /// Number of nodes, always odd.
    pub fn len(&self) -> usize {
        2 * self.ell + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, j: usize) -> f64 {
        TWO_PI * j as f64 / self.len() as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.node(j)).collect()
    }

    /// Interpolation weights `t_j = γ(θ − ϑ_j)`.
    pub fn weights(&self, theta: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|j| gamma(theta - self.node(j), self.ell)),
        )
    }

    /// Interpolation weights at node `j` (a unit vector).
    pub fn node_weights(&self, j: usize) -> DVector<f64> {
        let mut t = DVector::zeros(self.len());
        t[j] = 1.0;
        t
    }

    pub fn shift(&self, omega: f64) -> ShiftMatrix {
        shift_matrix(*self, omega)
    }
}

/// Discrete shift `𝕊ʷ_{jk} = γ(ϑ_k − ϑ_j − w)`.
///
/// Right-multiplying nodal values `x_{ij}` by `𝕊ʷ` samples `x(θ − w)` at the
/// nodes, so `x·𝕊⁻ʷ` evaluates `x(θ + w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftMatrix {
    pub grid: CollocationGrid,
    pub omega: f64,
    pub entries: DMatrix<f64>,
}

impl ShiftMatrix {
    /// Apply to nodal values stored as `(coordinate, node)`.
    pub fn apply(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        values * &self.entries
    }
}

pub fn shift_matrix(grid: CollocationGrid, omega: f64) -> ShiftMatrix {
    let omega = normalize_angle(omega);
    let m = grid.len();
    let entries = DMatrix::from_fn(m, m, |j, k| {
        gamma(grid.node(k) - grid.node(j) - omega, grid.ell())
    });
    ShiftMatrix {
        grid,
        omega,
        entries,
    }
}

/// A map `𝕋 → ℝⁿ` sampled on the collocation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusFunction {
    pub grid: CollocationGrid,
    /// `values[(i, j)] = x_i(ϑ_j)`
    pub values: DMatrix<f64>,
}

impl TorusFunction {
    pub fn new(grid: CollocationGrid, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != grid.len() {
            return Err(Error::Dimension(format!(
                "torus function has {} columns, grid has {} nodes",
                values.ncols(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: CollocationGrid, dim: usize) -> Self {
        Self {
            grid,
            values: DMatrix::zeros(dim, grid.len()),
        }
    }

    /// Sample a function at the nodes.
    pub fn from_fn(grid: CollocationGrid, dim: usize, f: impl Fn(f64) -> DVector<f64>) -> Self {
        let mut values = DMatrix::zeros(dim, grid.len());
        for j in 0..grid.len() {
            values.set_column(j, &f(grid.node(j)));
        }
        Self { grid, values }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn interpolate(&self, theta: f64) -> DVector<f64> {
        interpolate(self, theta)
    }

    /// Evaluate with precomputed weights.
    pub fn eval_weights(&self, t: &DVector<f64>) -> DVector<f64> {
        &self.values * t
    }

    pub fn shifted(&self, shift: &ShiftMatrix) -> Self {
        Self {
            grid: self.grid,
            values: shift.apply(&self.values),
        }
    }

    /// Plain-text form: a header `ell=<ℓ>` then one row per coordinate.
    pub fn to_text(&self) -> String {
        let mut out = format!("ell={}\n", self.grid.ell());
        for i in 0..self.values.nrows() {
            let row: Vec<String> = (0..self.values.ncols())
                .map(|j| format!("{:e}", self.values[(i, j)]))
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty torus function".into()))?;
        let ell: usize = header
            .trim()
            .strip_prefix("ell=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad torus function header '{header}'")))?;
        let grid = CollocationGrid::new(ell);
        let mut rows = Vec::new();
        for line in lines {
            let row: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let row = row.map_err(|e| Error::Parse(format!("torus function row: {e}")))?;
            if row.len() != grid.len() {
                return Err(Error::Parse(format!(
                    "torus function row has {} entries, expected {}",
                    row.len(),
                    grid.len()
                )));
            }
            rows.push(row);
        }
        let values = DMatrix::from_fn(rows.len(), grid.len(), |i, j| rows[i][j]);
        Ok(Self { grid, values })
    }
}

/// `x(θ) = Σ_j γ(θ − ϑ_j) x_j`.
pub fn interpolate(f: &TorusFunction, theta: f64) -> DVector<f64> {
    f.eval_weights(&f.grid.weights(theta))
}

/// Discrete Fourier coefficients `ũ_{il} = Σ_j e^{−ilϑ_j} u_{ij}`.
///
/// Column `c` holds harmonic `l = c − ℓ`, so harmonics run `−ℓ..=ℓ`.
pub fn fourier_coefficients(f: &TorusFunction) -> DMatrix<Complex64> {
    dft_rows(&f.values.map(|v| Complex64::new(v, 0.0)), f.grid)
}

/// Forward DFT of complex nodal rows, same layout as [`fourier_coefficients`].
pub fn dft_rows(values: &DMatrix<Complex64>, grid: CollocationGrid) -> DMatrix<Complex64> {
    let ell = grid.ell() as i64;
    let m = grid.len();
    let basis = DMatrix::from_fn(m, m, |j, c| {
        let l = c as i64 - ell;
        Complex64::from_polar(1.0, -(l as f64) * grid.node(j))
    });
    values * basis
}

/// Inverse of [`dft_rows`]: nodal values from harmonic coefficients.
pub fn idft_rows(coeffs: &DMatrix<Complex64>, grid: CollocationGrid) -> DMatrix<Complex64> {
    let ell = grid.ell() as i64;
    let m = grid.len();
    let scale = 1.0 / m as f64;
    let basis = DMatrix::from_fn(m, m, |c, j| {
        let l = c as i64 - ell;
        Complex64::from_polar(scale, (l as f64) * grid.node(j))
    });
    coeffs * basis
}
