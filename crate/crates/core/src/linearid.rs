//! Affine model `F(x, θ) ≈ A(θ)x + b(θ)` near an invariant torus, identified by weighted regression.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::dataset::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::fourier::{CollocationGrid, TorusFunction};
use crate::linalg::rcond;
use crate::textio::Artifact;

pub const DEFAULT_EPSILON: f64 = 1.0 / 256.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AffineModel {
    pub grid: CollocationGrid,
    /// `A(ϑ_l)` for each node.
    pub a: Vec<DMatrix<f64>>,
    pub b: TorusFunction,
}

impl AffineModel {
    pub fn dim(&self) -> usize {
        self.b.dim()
    }

    pub fn a_at(&self, theta: f64) -> DMatrix<f64> {
        let t = self.grid.weights(theta);
        self.a_weights(&t)
    }

    pub fn a_weights(&self, t: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for (l, a) in self.a.iter().enumerate() {
            out += a * t[l];
        }
        out
    }

    pub fn eval(&self, x: &DVector<f64>, theta: f64) -> DVector<f64> {
        let t = self.grid.weights(theta);
        self.a_weights(&t) * x + self.b.eval_weights(&t)
    }

    /// Stacked parameters `Ã`: column `l(n+1) + j` holds `A_{·jl}` and `j = n` holds `b_{·l}`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.dim();
        let m = self.grid.len();
        let mut out = DMatrix::zeros(n, (n + 1) * m);
        for l in 0..m {
            out.view_mut((0, l * (n + 1)), (n, n)).copy_from(&self.a[l]);
            out.set_column(l * (n + 1) + n, &self.b.values.column(l));
        }
        out
    }

    fn from_stacked(grid: CollocationGrid, at: &DMatrix<f64>) -> Self {
        let n = at.nrows();
        let m = grid.len();
        let a = (0..m)
            .map(|l| at.view((0, l * (n + 1)), (n, n)).into_owned())
            .collect();
        let b = DMatrix::from_fn(n, m, |i, l| at[(i, l * (n + 1) + n)]);
        Self {
            grid,
            a,
            b: TorusFunction { grid, values: b },
        }
    }

    pub fn to_artifact(&self) -> Artifact {
        let mut art = Artifact::new("affine-model");
        art.set("ell", self.grid.ell());
        art.set("n", self.dim());
        for (l, a) in self.a.iter().enumerate() {
            art.push(&format!("A{l}"), a.clone());
        }
        art.push("b", self.b.values.clone());
        art
    }

    pub fn from_artifact(art: &Artifact) -> Result<Self> {
        art.expect_kind("affine-model")?;
        let grid = CollocationGrid::new(art.parse("ell")?);
        let n: usize = art.parse("n")?;
        let mut a = Vec::with_capacity(grid.len());
        for l in 0..grid.len() {
            let m = art.block(&format!("A{l}"))?;
            if m.shape() != (n, n) {
                return Err(Error::Parse(format!("block A{l} is not {n}x{n}")));
            }
            a.push(m.clone());
        }
        let b = TorusFunction::new(grid, art.block("b")?.clone())?;
        Ok(Self { grid, a, b })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TorusEmbedding {
    pub k: TorusFunction,
}

impl TorusEmbedding {
    pub fn at(&self, theta: f64) -> DVector<f64> {
        self.k.interpolate(theta)
    }

    pub fn to_artifact(&self) -> Artifact {
        let mut art = Artifact::new("torus");
        art.set("ell", self.k.grid.ell());
        art.push("K", self.k.values.clone());
        art
    }

    pub fn from_artifact(art: &Artifact) -> Result<Self> {
        art.expect_kind("torus")?;
        let grid = CollocationGrid::new(art.parse("ell")?);
        Ok(Self {
            k: TorusFunction::new(grid, art.block("K")?.clone())?,
        })
    }
}

/// Distances `‖xᵏ − K(θᵏ)‖`.
pub fn torus_distances(ds: &TrajectoryDataset, torus: &TorusEmbedding) -> Vec<f64> {
    (0..ds.len())
        .map(|k| (ds.x.column(k) - torus.at(ds.theta[k])).norm())
        .collect()
}

/// `δᵏ = 1/(ε² + ‖xᵏ − K(θᵏ)‖²)`.
pub fn scaling_weights(ds: &TrajectoryDataset, torus: &TorusEmbedding, epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    Ok(torus_distances(ds, torus)
        .into_iter()
        .map(|d| 1.0 / (epsilon * epsilon + d * d))
        .collect())
}

fn regressor_name(p: usize, n: usize) -> String {
    let (l, j) = (p / (n + 1), p % (n + 1));
    if j == n {
        format!("b at node {l}")
    } else {
        format!("column {} of A at node {l}", j + 1)
    }
}

/// Weighted least squares for `Ã`; points with zero weight are ignored.
pub fn fit_affine(ds: &TrajectoryDataset, weights: &[f64], grid: CollocationGrid) -> Result<AffineModel> {
    let n = ds.dim();
    let m = grid.len();
    let p = (n + 1) * m;
    if weights.len() != ds.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} samples",
            weights.len(),
            ds.len()
        )));
    }
    let active: Vec<usize> = (0..ds.len()).filter(|&k| weights[k] > 0.0).collect();
    if active.len() < p {
        return Err(Error::TooFewSamples {
            available: active.len(),
            required: p,
        });
    }
    let mut xx = DMatrix::<f64>::zeros(p, p);
    let mut yx = DMatrix::<f64>::zeros(n, p);
    const CHUNK: usize = 512;
    for chunk in active.chunks(CHUNK) {
        let c = chunk.len();
        let mut z = DMatrix::<f64>::zeros(p, c);
        let mut yc = DMatrix::<f64>::zeros(n, c);
        for (col, &k) in chunk.iter().enumerate() {
            let s = weights[k].sqrt();
            let t = grid.weights(ds.theta[k]);
            for l in 0..m {
                let tl = s * t[l];
                for j in 0..n {
                    z[(l * (n + 1) + j, col)] = ds.x[(j, k)] * tl;
                }
                z[(l * (n + 1) + n, col)] = tl;
            }
            for i in 0..n {
                yc[(i, col)] = s * ds.y[(i, k)];
            }
        }
        xx.gemm(1.0, &z, &z.transpose(), 1.0);
        yx.gemm(1.0, &yc, &z.transpose(), 1.0);
    }
    let scale = 1.0 / active.len() as f64;
    xx *= scale;
    yx *= scale;

    // Rank check on the diagonally equilibrated Gram matrix.
    let diag: Vec<f64> = (0..p).map(|i| xx[(i, i)]).collect();
    if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::RankDeficient {
            dimension: regressor_name(i, n),
        });
    }
    let corr = DMatrix::from_fn(p, p, |i, j| xx[(i, j)] / (diag[i] * diag[j]).sqrt());
    let eig = corr.clone().symmetric_eigen();
    let (imin, &lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    if lmin < 1e-13 * eig.eigenvalues.amax() {
        let v = eig.eigenvectors.column(imin);
        let worst = v.iamax();
        return Err(Error::RankDeficient {
            dimension: regressor_name(worst, n),
        });
    }
    let chol = xx.cholesky().ok_or_else(|| Error::RankDeficient {
        dimension: "Gram matrix is not positive definite".into(),
    })?;
    let at = chol.solve(&yx.transpose()).transpose();
    Ok(AffineModel::from_stacked(grid, &at))
}

/// Solves `K(θ+ω) = A(θ)K(θ) + b(θ)` at the nodes.
pub fn solve_torus(model: &AffineModel, omega: f64) -> Result<TorusEmbedding> {
    let n = model.dim();
    let grid = model.grid;
    let m = grid.len();
    let s = grid.shift(-omega).entries;
    let dim = n * m;
    let mut op = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for l in 0..m {
        for i in 0..n {
            let r = i + n * l;
            for q in 0..m {
                op[(r, i + n * q)] += s[(q, l)];
            }
            for pp in 0..n {
                op[(r, pp + n * l)] -= model.a[l][(i, pp)];
            }
            rhs[r] = model.b.values[(i, l)];
        }
    }
    if rcond(&op) < 1e-12 {
        return Err(Error::TorusResonant);
    }
    let sol = op.lu().solve(&rhs).ok_or(Error::TorusResonant)?;
    let values = DMatrix::from_column_slice(n, m, sol.as_slice());
    Ok(TorusEmbedding {
        k: TorusFunction { grid, values },
    })
}

/// `max |K𝕊⁻ʷ − (A∘K + b)|` over nodes and coordinates.
pub fn torus_residual(model: &AffineModel, torus: &TorusEmbedding, omega: f64) -> f64 {
    let grid = model.grid;
    let shifted = &torus.k.values * grid.shift(-omega).entries;
    let mut res: f64 = 0.0;
    for l in 0..grid.len() {
        let img = &model.a[l] * torus.k.values.column(l) + model.b.values.column(l);
        res = res.max((shifted.column(l) - img).amax());
    }
    res
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearIdOptions {
    pub ell: usize,
    pub epsilon: f64,
    /// Fraction of the active set removed per iteration.
    pub trim_fraction: f64,
    /// Trimming never reduces the active set below this fraction of the data.
    pub min_fraction: f64,
    pub max_iter: usize,
}

impl Default for LinearIdOptions {
    fn default() -> Self {
        Self {
            ell: 0,
            epsilon: DEFAULT_EPSILON,
            trim_fraction: 0.1,
            min_fraction: 0.5,
            max_iter: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearIdResult {
    pub model: AffineModel,
    pub torus: TorusEmbedding,
    pub iterations: usize,
    pub converged: bool,
    /// Weights of the last fit; trimmed points carry zero.
    pub weights: Vec<f64>,
}

/// Alternates fit, torus solve, reweighting and trimming until `Ã` stops changing.
pub fn iterate_linear_id(ds: &TrajectoryDataset, opts: &LinearIdOptions) -> Result<LinearIdResult> {
    if !(0.0..1.0).contains(&opts.trim_fraction) {
        return Err(Error::Config("trim_fraction must lie in [0, 1)".into()));
    }
    if opts.max_iter == 0 {
        return Err(Error::Config("max_iter must be at least 1".into()));
    }
    let grid = CollocationGrid::new(opts.ell);
    let n_total = ds.len();
    let floor = ((opts.min_fraction * n_total as f64).ceil() as usize).max((ds.dim() + 1) * grid.len());
    let mut active = vec![true; n_total];
    let mut weights = vec![1.0; n_total];
    let mut previous: Option<DMatrix<f64>> = None;
    let mut iterations = 0;
    let mut converged = false;
    let (model, torus) = loop {
        iterations += 1;
        let model = fit_affine(ds, &weights, grid)?;
        let torus = solve_torus(&model, ds.omega)?;
        let stacked = model.stacked();
        if let Some(prev) = &previous {
            let change = (&stacked - prev).amax() / stacked.amax().max(f64::MIN_POSITIVE);
            debug!("linear id iteration {iterations}: relative update {change:.3e}");
            if change < 1e-14 {
                converged = true;
                break (model, torus);
            }
        }
        if iterations >= opts.max_iter {
            break (model, torus);
        }
        previous = Some(stacked);

        let dist = torus_distances(ds, &torus);
        let count = active.iter().filter(|a| **a).count();
        let remove = ((opts.trim_fraction * count as f64).ceil() as usize).min(count.saturating_sub(floor));
        if opts.trim_fraction > 0.0 && remove > 0 {
            let mut order: Vec<usize> = (0..n_total).filter(|&k| active[k]).collect();
            order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
            for &k in &order[..remove] {
                active[k] = false;
            }
        }
        for k in 0..n_total {
            weights[k] = if active[k] {
                1.0 / (opts.epsilon * opts.epsilon + dist[k] * dist[k])
            } else {
                0.0
            };
        }
    };
    Ok(LinearIdResult {
        model,
        torus,
        iterations,
        converged,
        weights,
    })
}
