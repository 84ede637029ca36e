//! Coupled invariant foliations `(U, R)` and `(V, S)` fitted to data in the bundle frame.

use std::ops::Range;
use std::sync::Arc;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};

use crate::bundles::BundleFrame;
use crate::dataset::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::fourier::{CollocationGrid, TorusFunction};
use crate::linalg::quantile;
use crate::linearid::TorusEmbedding;
use crate::poly::{MonomialBasis, RealPoly};
use crate::textio::Artifact;

/// Data expressed in the bundle frame about the linear torus.
#[derive(Debug, Clone)]
pub struct TransformedDataset {
    pub dz: usize,
    pub dc: usize,
    pub xpar: DMatrix<f64>,
    pub xperp: DMatrix<f64>,
    pub ypar: DMatrix<f64>,
    pub yperp: DMatrix<f64>,
    /// Column `k` holds `tᵏ`.
    pub t: DMatrix<f64>,
    /// Column `k` holds `t^{ωk}`.
    pub tw: DMatrix<f64>,
    pub theta: Vec<f64>,
}

impl TransformedDataset {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn n(&self) -> usize {
        self.dz + self.dc
    }

    /// `(x∥, x⊥)` of point `k`.
    pub fn x_full(&self, k: usize) -> Vec<f64> {
        self.xpar.column(k).iter().chain(self.xperp.column(k).iter()).cloned().collect()
    }

    pub fn y_full(&self, k: usize) -> Vec<f64> {
        self.ypar.column(k).iter().chain(self.yperp.column(k).iter()).cloned().collect()
    }

    pub fn t_at(&self, k: usize) -> &[f64] {
        let m = self.t.nrows();
        &self.t.as_slice()[k * m..(k + 1) * m]
    }

    pub fn tw_at(&self, k: usize) -> &[f64] {
        let m = self.tw.nrows();
        &self.tw.as_slice()[k * m..(k + 1) * m]
    }
}

fn interp_mats(mats: &[DMatrix<f64>], t: &DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(mats[0].nrows(), mats[0].ncols());
    for (l, a) in mats.iter().enumerate() {
        out += a * t[l];
    }
    out
}

/// `x∥ = U□(θ)(x − K(θ))`, `y∥ = U□(θ+ω)(y − K(θ+ω))` and likewise for `V□`.
pub fn transform_dataset(
    ds: &TrajectoryDataset,
    frame: &BundleFrame,
    torus: &TorusEmbedding,
) -> Result<TransformedDataset> {
    let grid = frame.grid;
    if torus.k.grid != grid {
        return Err(Error::Dimension("bundle frame and torus use different grids".into()));
    }
    if frame.n() != ds.dim() {
        return Err(Error::Dimension(format!(
            "frame acts on {} coordinates, data has {}",
            frame.n(),
            ds.dim()
        )));
    }
    let (dz, dc) = (frame.dim_z(), frame.dim_zc());
    let count = ds.len();
    let m = grid.len();
    let mut out = TransformedDataset {
        dz,
        dc,
        xpar: DMatrix::zeros(dz, count),
        xperp: DMatrix::zeros(dc, count),
        ypar: DMatrix::zeros(dz, count),
        yperp: DMatrix::zeros(dc, count),
        t: DMatrix::zeros(m, count),
        tw: DMatrix::zeros(m, count),
        theta: ds.theta.clone(),
    };
    for k in 0..count {
        let t = grid.weights(ds.theta[k]);
        let tw = grid.weights(ds.theta[k] + ds.omega);
        let dx = ds.x.column(k) - torus.k.eval_weights(&t);
        let dy = ds.y.column(k) - torus.k.eval_weights(&tw);
        out.xpar.set_column(k, &(interp_mats(&frame.u, &t) * &dx));
        out.xperp.set_column(k, &(interp_mats(&frame.v, &t) * &dx));
        out.ypar.set_column(k, &(interp_mats(&frame.u, &tw) * &dy));
        out.yperp.set_column(k, &(interp_mats(&frame.v, &tw) * &dy));
        out.t.set_column(k, &t);
        out.tw.set_column(k, &tw);
    }
    Ok(out)
}

/// Physical state from frame coordinates at phase `θ`.
pub fn reconstruct(
    frame: &BundleFrame,
    torus: &TorusEmbedding,
    xpar: &DVector<f64>,
    xperp: &DVector<f64>,
    theta: f64,
) -> Result<DVector<f64>> {
    let t = frame.grid.weights(theta);
    let p = stacked_frame(frame, &t);
    let rhs = DVector::from_iterator(frame.n(), xpar.iter().chain(xperp.iter()).cloned());
    let local = p.lu().solve(&rhs).ok_or(Error::SingularFrame { node: 0 })?;
    Ok(torus.k.eval_weights(&t) + local)
}

/// `[U□(θ); V□(θ)]` at interpolation weights `t`.
pub fn stacked_frame(frame: &BundleFrame, t: &DVector<f64>) -> DMatrix<f64> {
    let u = interp_mats(&frame.u, t);
    let v = interp_mats(&frame.v, t);
    let n = frame.n();
    let mut p = DMatrix::zeros(n, n);
    p.view_mut((0, 0), (u.nrows(), n)).copy_from(&u);
    p.view_mut((u.nrows(), 0), (v.nrows(), n)).copy_from(&v);
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    U,
    V,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoliationModel {
    pub grid: CollocationGrid,
    pub omega: f64,
    pub sigma: usize,
    pub dz: usize,
    pub dc: usize,
    /// Encoder `U(x∥, x⊥, θ)`; variables are `x∥` followed by `x⊥`.
    pub u: RealPoly,
    pub v: RealPoly,
    /// Conjugate map on `Z`; the constant term stays zero.
    pub r: RealPoly,
    pub s: RealPoly,
    /// Torus in frame coordinates.
    pub kpar: TorusFunction,
    pub kperp: TorusFunction,
}

impl FoliationModel {
    /// Identity encoders, `R = R□`, `S = S□`, everything else zero.
    pub fn initial(frame: &BundleFrame, sigma: usize, s_degree: usize) -> Result<Self> {
        if sigma == 0 || s_degree == 0 {
            return Err(Error::Config("polynomial orders must be at least 1".into()));
        }
        let (dz, dc) = (frame.dim_z(), frame.dim_zc());
        if dc == 0 {
            return Err(Error::Config("the index set must leave a complementary bundle".into()));
        }
        let n = dz + dc;
        let grid = frame.grid;
        let basis = MonomialBasis::new(n, sigma);
        let mut u = RealPoly::zeros(basis.clone(), dz, grid);
        let mut v = RealPoly::zeros(basis.clone(), dc, grid);
        for l in 0..grid.len() {
            for o in 0..dz {
                u.set(l, o, basis.linear(o), 1.0);
            }
            for o in 0..dc {
                v.set(l, o, basis.linear(dz + o), 1.0);
            }
        }
        let r = RealPoly::linear_map(MonomialBasis::new(dz, sigma), grid, &frame.r);
        let s = RealPoly::linear_map(MonomialBasis::new(dc, s_degree), grid, &frame.s);
        Ok(Self {
            grid,
            omega: frame.omega,
            sigma,
            dz,
            dc,
            u,
            v,
            r,
            s,
            kpar: TorusFunction::zeros(grid, dz),
            kperp: TorusFunction::zeros(grid, dc),
        })
    }

    pub fn n(&self) -> usize {
        self.dz + self.dc
    }

    pub fn encoder(&self, side: Side) -> &RealPoly {
        match side {
            Side::U => &self.u,
            Side::V => &self.v,
        }
    }

    pub fn conjugate(&self, side: Side) -> &RealPoly {
        match side {
            Side::U => &self.r,
            Side::V => &self.s,
        }
    }

    fn encoder_mut(&mut self, side: Side) -> &mut RealPoly {
        match side {
            Side::U => &mut self.u,
            Side::V => &mut self.v,
        }
    }

    fn conjugate_mut(&mut self, side: Side) -> &mut RealPoly {
        match side {
            Side::U => &mut self.r,
            Side::V => &mut self.s,
        }
    }

    /// Variables of the encoder that carry the identity term.
    pub fn own_vars(&self, side: Side) -> Range<usize> {
        match side {
            Side::U => 0..self.dz,
            Side::V => self.dz..self.n(),
        }
    }

    /// Torus `(K∥, K⊥)` interpolated at weights `t`.
    pub fn torus_at(&self, t: &[f64]) -> Vec<f64> {
        let t = DVector::from_column_slice(t);
        self.kpar
            .eval_weights(&t)
            .iter()
            .chain(self.kperp.eval_weights(&t).iter())
            .cloned()
            .collect()
    }

    /// Invariance residual `conj(enc(x, t), t) − enc(y, tω)` of one side at one point.
    pub fn point_residual(&self, side: Side, x: &[f64], y: &[f64], t: &[f64], tw: &[f64]) -> Vec<f64> {
        let enc = self.encoder(side);
        let conj = self.conjugate(side);
        let zx = enc.eval_weights(t, x);
        let zy = enc.eval_weights(tw, y);
        let rz = conj.eval_weights(t, &zx);
        rz.iter().zip(&zy).map(|(a, b)| a - b).collect()
    }

    pub fn to_artifact(&self) -> Artifact {
        let mut art = Artifact::new("foliation-model");
        art.set("ell", self.grid.ell());
        art.set("omega", self.omega);
        art.set("sigma", self.sigma);
        art.set("dim_z", self.dz);
        art.set("dim_zc", self.dc);
        art.set("s_degree", self.s.max_degree());
        for (name, p) in [("U", &self.u), ("V", &self.v), ("R", &self.r), ("S", &self.s)] {
            for l in 0..self.grid.len() {
                art.push(&format!("{name}{l}"), node_matrix(p, l));
            }
        }
        art.push("Kpar", self.kpar.values.clone());
        art.push("Kperp", self.kperp.values.clone());
        art
    }

    pub fn from_artifact(art: &Artifact) -> Result<Self> {
        art.expect_kind("foliation-model")?;
        let grid = CollocationGrid::new(art.parse("ell")?);
        let sigma: usize = art.parse("sigma")?;
        let dz: usize = art.parse("dim_z")?;
        let dc: usize = art.parse("dim_zc")?;
        let s_degree: usize = art.parse("s_degree")?;
        let n = dz + dc;
        let load = |name: &str, basis: Arc<MonomialBasis>, nout: usize| -> Result<RealPoly> {
            let mut p = RealPoly::zeros(basis, nout, grid);
            for l in 0..grid.len() {
                let mat = art.block(&format!("{name}{l}"))?;
                if mat.shape() != (nout, p.basis().len()) {
                    return Err(Error::Parse(format!("block {name}{l} has the wrong shape")));
                }
                set_node_matrix(&mut p, l, mat);
            }
            Ok(p)
        };
        let basis = MonomialBasis::new(n, sigma);
        Ok(Self {
            grid,
            omega: art.parse("omega")?,
            sigma,
            dz,
            dc,
            u: load("U", basis.clone(), dz)?,
            v: load("V", basis, dc)?,
            r: load("R", MonomialBasis::new(dz, sigma), dz)?,
            s: load("S", MonomialBasis::new(dc, s_degree), dc)?,
            kpar: TorusFunction::new(grid, art.block("Kpar")?.clone())?,
            kperp: TorusFunction::new(grid, art.block("Kperp")?.clone())?,
        })
    }
}

/// Coefficients at one node as an `nout × monomials` matrix.
pub fn node_matrix(p: &RealPoly, node: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p.nout(), p.basis().len(), |o, m| p.get(node, o, m))
}

pub fn set_node_matrix(p: &mut RealPoly, node: usize, mat: &DMatrix<f64>) {
    for o in 0..p.nout() {
        for m in 0..p.basis().len() {
            p.set(node, o, m, mat[(o, m)]);
        }
    }
}

/// Encoder value at frame coordinates and interpolation weights.
pub fn eval_encoder(model: &FoliationModel, side: Side, xpar: &[f64], xperp: &[f64], t: &[f64]) -> Vec<f64> {
    let x: Vec<f64> = xpar.iter().chain(xperp).cloned().collect();
    model.encoder(side).eval_weights(t, &x)
}

/// `δᵏ = 1 + 1/(ε² + ‖x∥ − K∥‖² + ‖x⊥ − K⊥‖²)`.
pub fn foliation_weights(model: &FoliationModel, data: &TransformedDataset, epsilon: f64) -> Vec<f64> {
    (0..data.len())
        .map(|k| {
            let x = data.x_full(k);
            let kt = model.torus_at(data.t_at(k));
            let d2: f64 = x.iter().zip(&kt).map(|(a, b)| (a - b) * (a - b)).sum();
            1.0 + 1.0 / (epsilon * epsilon + d2)
        })
        .collect()
}

/// Weighted invariance loss of both foliations.
pub fn loss(model: &FoliationModel, data: &TransformedDataset, weights: &[f64]) -> f64 {
    let all: Vec<usize> = (0..data.len()).collect();
    side_loss(model, Side::U, data, weights, &all) + side_loss(model, Side::V, data, weights, &all)
}

fn side_loss(model: &FoliationModel, side: Side, data: &TransformedDataset, weights: &[f64], active: &[usize]) -> f64 {
    let enc = model.encoder(side);
    let conj = model.conjugate(side);
    let eb = enc.basis().clone();
    let cb = conj.basis().clone();
    let mut phx = vec![0.0; eb.len()];
    let mut phy = vec![0.0; eb.len()];
    let mut psi = vec![0.0; cb.len()];
    let mut total = 0.0;
    for &k in active {
        eb.eval(&data.x_full(k), &mut phx);
        eb.eval(&data.y_full(k), &mut phy);
        let zx = enc.eval_weights_monomials(data.t_at(k), &phx);
        let zy = enc.eval_weights_monomials(data.tw_at(k), &phy);
        cb.eval(&zx, &mut psi);
        let rz = conj.eval_weights_monomials(data.t_at(k), &psi);
        let r2: f64 = rz.iter().zip(&zy).map(|(a, b)| (a - b) * (a - b)).sum();
        total += weights[k] * r2;
    }
    total
}

/// A group of parameters optimised together.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub side: Side,
    /// Encoder monomials, or `None` for the nonconstant terms of the conjugate map.
    pub monomials: Option<Vec<usize>>,
}

/// Blocks in sweep order: `R; Uc; Ul; Unl(2..σ); S; Vc; Vl; Vnl(2..σ)`.
pub fn parameter_blocks(model: &FoliationModel) -> Vec<Block> {
    let basis = model.u.basis().clone();
    let mut blocks = Vec::new();
    for (side, cname, ename) in [(Side::U, "R", "U"), (Side::V, "S", "V")] {
        let own = model.own_vars(side);
        let other: Vec<usize> = (0..model.n()).filter(|v| !own.contains(v)).collect();
        blocks.push(Block {
            name: cname.into(),
            side,
            monomials: None,
        });
        blocks.push(Block {
            name: format!("{ename}c"),
            side,
            monomials: Some(vec![0]),
        });
        if !other.is_empty() {
            blocks.push(Block {
                name: format!("{ename}l"),
                side,
                monomials: Some(other.iter().map(|&v| basis.linear(v)).collect()),
            });
        }
        for d in 2..=model.sigma {
            let monos: Vec<usize> = basis
                .degree_range(d)
                .filter(|&m| own.clone().any(|v| basis.exponent(m)[v] > 0))
                .collect();
            blocks.push(Block {
                name: format!("{ename}nl{d}"),
                side,
                monomials: Some(monos),
            });
        }
    }
    blocks
}

fn block_monomials(model: &FoliationModel, block: &Block) -> Vec<usize> {
    match &block.monomials {
        Some(m) => m.clone(),
        None => (1..model.conjugate(block.side).basis().len()).collect(),
    }
}

fn block_poly<'a>(model: &'a FoliationModel, block: &Block) -> &'a RealPoly {
    if block.monomials.is_some() {
        model.encoder(block.side)
    } else {
        model.conjugate(block.side)
    }
}

fn get_params(model: &FoliationModel, block: &Block, monos: &[usize]) -> DVector<f64> {
    let p = block_poly(model, block);
    let (m, nout, s) = (model.grid.len(), p.nout(), monos.len());
    DVector::from_fn(m * nout * s, |i, _| {
        let (l, rest) = (i / (nout * s), i % (nout * s));
        p.get(l, rest / s, monos[rest % s])
    })
}

fn set_params(model: &mut FoliationModel, block: &Block, monos: &[usize], params: &DVector<f64>) {
    let p = if block.monomials.is_some() {
        model.encoder_mut(block.side)
    } else {
        model.conjugate_mut(block.side)
    };
    let (nout, s) = (p.nout(), monos.len());
    for (i, &v) in params.iter().enumerate() {
        let (l, rest) = (i / (nout * s), i % (nout * s));
        p.set(l, rest / s, monos[rest % s], v);
    }
}

/// Normal equations `JᵀJ`, `Jᵀr` and the loss of one block over the active points.
fn assemble(
    model: &FoliationModel,
    block: &Block,
    monos: &[usize],
    data: &TransformedDataset,
    weights: &[f64],
    active: &[usize],
) -> (DMatrix<f64>, DVector<f64>, f64) {
    const CHUNK: usize = 128;
    let side = block.side;
    let enc = model.encoder(side);
    let conj = model.conjugate(side);
    let eb = enc.basis().clone();
    let cb = conj.basis().clone();
    let d = enc.nout();
    let m = model.grid.len();
    let ns = monos.len();
    let np = m * d * ns;
    let is_conj = block.monomials.is_none();
    let mut h = DMatrix::<f64>::zeros(np, np);
    let mut g = DVector::<f64>::zeros(np);
    let mut total = 0.0;
    let mut phx = vec![0.0; eb.len()];
    let mut phy = vec![0.0; eb.len()];
    let mut psi = vec![0.0; cb.len()];
    for chunk in active.chunks(CHUNK) {
        let rows = d * chunk.len();
        let mut jt = DMatrix::<f64>::zeros(np, rows);
        let mut rv = DVector::<f64>::zeros(rows);
        for (ci, &k) in chunk.iter().enumerate() {
            let t = data.t_at(k);
            let tw = data.tw_at(k);
            eb.eval(&data.x_full(k), &mut phx);
            eb.eval(&data.y_full(k), &mut phy);
            let zx = enc.eval_weights_monomials(t, &phx);
            let zy = enc.eval_weights_monomials(tw, &phy);
            cb.eval(&zx, &mut psi);
            let rz = conj.eval_weights_monomials(t, &psi);
            let sw = weights[k].sqrt();
            for a in 0..d {
                let r = sw * (rz[a] - zy[a]);
                rv[ci * d + a] = r;
                total += r * r;
            }
            if is_conj {
                for a in 0..d {
                    let mut col = jt.column_mut(ci * d + a);
                    for (l, &tl) in t.iter().enumerate() {
                        if tl == 0.0 {
                            continue;
                        }
                        let base = (l * d + a) * ns;
                        for (si, &mo) in monos.iter().enumerate() {
                            col[base + si] = sw * tl * psi[mo];
                        }
                    }
                }
            } else {
                let dr = conj.jacobian_weights_monomials(t, &psi);
                for a in 0..d {
                    let mut col = jt.column_mut(ci * d + a);
                    for l in 0..m {
                        let (tl, twl) = (t[l], tw[l]);
                        for o in 0..d {
                            let base = (l * d + o) * ns;
                            let cx = sw * dr[a][o] * tl;
                            let cy = if a == o { sw * twl } else { 0.0 };
                            for (si, &mo) in monos.iter().enumerate() {
                                col[base + si] = cx * phx[mo] - cy * phy[mo];
                            }
                        }
                    }
                }
            }
        }
        h.gemm(1.0, &jt, &jt.transpose(), 1.0);
        g.gemv(1.0, &jt, &rv, 1.0);
    }
    (h, g, total)
}

/// Outcome of optimising one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockOutcome {
    pub initial: f64,
    pub last: f64,
    pub steps: usize,
}

fn damped_step(h: &DMatrix<f64>, g: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    let np = h.nrows();
    let scale = (0..np).map(|i| h[(i, i)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut a = h.clone();
    for i in 0..np {
        a[(i, i)] += mu * h[(i, i)] + 1e-14 * scale;
    }
    let chol = a.cholesky()?;
    let step = -chol.solve(g);
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Levenberg–Marquardt on one block with the weights held fixed.
pub fn optimize_block(
    model: &mut FoliationModel,
    block: &Block,
    data: &TransformedDataset,
    weights: &[f64],
    active: &[usize],
    max_iter: usize,
) -> Result<BlockOutcome> {
    let monos = block_monomials(model, block);
    if monos.is_empty() {
        let l = side_loss(model, block.side, data, weights, active);
        return Ok(BlockOutcome { initial: l, last: l, steps: 0 });
    }
    let linear = block.monomials.is_none();
    let mut mu = if linear { 0.0 } else { 1e-6 };
    let mut params = get_params(model, block, &monos);
    let mut outcome = None;
    let mut steps = 0;
    let mut current = f64::NAN;
    for _ in 0..max_iter {
        let (h, g, l0) = assemble(model, block, &monos, data, weights, active);
        if !l0.is_finite() {
            return Err(Error::Optimizer {
                block: block.name.clone(),
                reason: "non-finite loss".into(),
            });
        }
        current = l0;
        let initial = *outcome.get_or_insert(l0);
        let mut accepted = false;
        while mu <= 1e10 {
            let Some(step) = damped_step(&h, &g, mu) else {
                mu = (mu * 10.0).max(1e-8);
                continue;
            };
            let trial = &params + &step;
            set_params(model, block, &monos, &trial);
            let l1 = side_loss(model, block.side, data, weights, active);
            if l1.is_finite() && l1 <= l0 {
                params = trial;
                current = l1;
                mu = if mu < 1e-12 { 0.0 } else { mu / 10.0 };
                accepted = true;
                steps += 1;
                break;
            }
            set_params(model, block, &monos, &params);
            mu = (mu * 10.0).max(1e-8);
        }
        let _ = initial;
        if !accepted || linear || (l0 - current) <= 1e-10 * l0 {
            break;
        }
    }
    Ok(BlockOutcome {
        initial: outcome.unwrap_or(current),
        last: current,
        steps,
    })
}

/// Newton iteration for `U(K∥, K⊥, ϑ_l) = 0`, `V(K∥, K⊥, ϑ_l) = 0` at every node.
pub fn solve_inner_torus(model: &FoliationModel) -> Result<(TorusFunction, TorusFunction)> {
    let n = model.n();
    let (dz, dc) = (model.dz, model.dc);
    let grid = model.grid;
    let mut kpar = model.kpar.clone();
    let mut kperp = model.kperp.clone();
    for l in 0..grid.len() {
        let mut x: Vec<f64> = kpar.values.column(l).iter().chain(kperp.values.column(l).iter()).cloned().collect();
        let eval = |x: &[f64]| -> DVector<f64> {
            let mut f = model.u.eval_node(l, x);
            f.extend(model.v.eval_node(l, x));
            DVector::from_vec(f)
        };
        let mut f = eval(&x);
        let mut iter = 0;
        while f.amax() > 1e-13 && iter < 50 {
            let ju = model.u.jacobian_node(l, &x);
            let jv = model.v.jacobian_node(l, &x);
            let jac = DMatrix::from_fn(n, n, |i, j| if i < dz { ju[i][j] } else { jv[i - dz][j] });
            let Some(dx) = jac.lu().solve(&f) else {
                return Err(Error::NewtonDivergence { node: l, residual: f.amax() });
            };
            for i in 0..n {
                x[i] -= dx[i];
            }
            f = eval(&x);
            if !f.amax().is_finite() {
                return Err(Error::NewtonDivergence { node: l, residual: f64::INFINITY });
            }
            iter += 1;
        }
        if !(f.amax() < 1e-10) {
            return Err(Error::NewtonDivergence { node: l, residual: f.amax() });
        }
        for i in 0..dz {
            kpar.values[(i, l)] = x[i];
        }
        for i in 0..dc {
            kperp.values[(i, l)] = x[dz + i];
        }
    }
    Ok((kpar, kperp))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub sigma: usize,
    pub max_sweeps: usize,
    /// Stop when a sweep changes the loss by less than this fraction.
    pub tol: f64,
    pub epsilon: f64,
    /// Polynomial `S` of degree σ; `None` picks it for `n ≤ 6`.
    pub s_polynomial: Option<bool>,
    /// Shrink the active set of the `S`/`V` blocks to small `‖V‖`; `None` enables it when `S` is linear.
    pub v_filter: Option<bool>,
    pub filter_quantile: f64,
    pub filter_floor: f64,
    /// Gauss–Newton iterations per block visit.
    pub max_inner: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            sigma: 5,
            max_sweeps: 30,
            tol: 1e-5,
            epsilon: 1.0 / 256.0,
            s_polynomial: None,
            v_filter: None,
            filter_quantile: 0.6,
            filter_floor: 0.3,
            max_inner: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: FoliationModel,
    /// Loss after each sweep; entry 0 is the initial loss.
    pub history: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

fn refresh(model: &mut FoliationModel, data: &TransformedDataset, epsilon: f64) -> Result<Vec<f64>> {
    let (kpar, kperp) = solve_inner_torus(model)?;
    model.kpar = kpar;
    model.kperp = kperp;
    Ok(foliation_weights(model, data, epsilon))
}

fn v_norms(model: &FoliationModel, data: &TransformedDataset) -> Vec<f64> {
    (0..data.len())
        .map(|k| {
            model
                .v
                .eval_weights(data.t_at(k), &data.x_full(k))
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Points whose `‖V(x)‖` lies below the given quantile, never fewer than `floor` of all points.
pub fn v_filter(model: &FoliationModel, data: &TransformedDataset, q: f64, floor: f64) -> Vec<usize> {
    let norms = v_norms(model, data);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));
    let keep = ((q.max(floor) * data.len() as f64).ceil() as usize).clamp(1, data.len());
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    kept
}

/// Batch coordinate descent over the parameter blocks.
pub fn fit_foliations(data: &TransformedDataset, frame: &BundleFrame, cfg: &FitConfig) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::TooFewSamples { available: 0, required: 1 });
    }
    if cfg.sigma == 0 {
        return Err(Error::Config("sigma must be at least 1".into()));
    }
    let n = frame.n();
    let s_poly = cfg.s_polynomial.unwrap_or(n <= 6);
    let filter = cfg.v_filter.unwrap_or(!s_poly);
    let mut model = FoliationModel::initial(frame, cfg.sigma, if s_poly { cfg.sigma } else { 1 })?;
    let blocks = parameter_blocks(&model);
    let all: Vec<usize> = (0..data.len()).collect();
    let mut weights = refresh(&mut model, data, cfg.epsilon)?;
    let mut history = vec![loss(&model, data, &weights)];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let v_active = if filter {
            v_filter(&model, data, cfg.filter_quantile, cfg.filter_floor)
        } else {
            all.clone()
        };
        for block in &blocks {
            let active = if block.side == Side::V && filter { &v_active } else { &all };
            let out = optimize_block(&mut model, block, data, &weights, active, cfg.max_inner)?;
            debug!("sweep {sweeps} block {}: {:.6e} -> {:.6e}", block.name, out.initial, out.last);
            weights = refresh(&mut model, data, cfg.epsilon)?;
        }
        let current = loss(&model, data, &weights);
        let previous = *history.last().expect("initial loss recorded");
        history.push(current);
        info!("sweep {sweeps}: loss {current:.6e}");
        if ((previous - current) / previous).abs() < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        model,
        history,
        sweeps,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub median: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    pub error: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub bins: Vec<ErrorBin>,
}

impl ErrorSummary {
    /// Median error over points with amplitude in `(0, max_amplitude]`.
    pub fn median_below(&self, max_amplitude: f64) -> f64 {
        let vals: Vec<f64> = self
            .error
            .iter()
            .zip(&self.amplitude)
            .filter(|(e, a)| e.is_finite() && **a <= max_amplitude)
            .map(|(e, _)| *e)
            .collect();
        quantile(&vals, 0.5)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("amplitude_lo,amplitude_hi,count,median,p90\n");
        for b in &self.bins {
            out.push_str(&format!("{},{},{},{},{}\n", b.lo, b.hi, b.count, b.median, b.p90));
        }
        out
    }
}

/// `E_rel = ‖R(U(x), θ) − U(y, θ+ω)‖ / ‖(x∥ − K∥, x⊥ − K⊥)‖` per point, with binned quantiles.
/// `‖(x∥ − K∥, x⊥ − K⊥)‖` for every point: the amplitude measure shared with the backbone curves.
pub fn torus_distance(model: &FoliationModel, data: &TransformedDataset) -> Vec<f64> {
    (0..data.len())
        .map(|k| {
            let kt = model.torus_at(data.t_at(k));
            data.x_full(k).iter().zip(&kt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        })
        .collect()
}

pub fn relative_error(model: &FoliationModel, data: &TransformedDataset, n_bins: usize) -> ErrorSummary {
    let amplitude = torus_distance(model, data);
    let mut error = Vec::with_capacity(data.len());
    for (k, &amp) in amplitude.iter().enumerate() {
        let r = model.point_residual(Side::U, &data.x_full(k), &data.y_full(k), data.t_at(k), data.tw_at(k));
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        error.push(if amp < 1e-12 { f64::NAN } else { rn / amp });
    }
    let max_amp = amplitude.iter().cloned().fold(0.0, f64::max);
    let nb = n_bins.max(1);
    let bins = (0..nb)
        .map(|b| {
            let lo = max_amp * b as f64 / nb as f64;
            let hi = max_amp * (b + 1) as f64 / nb as f64;
            let vals: Vec<f64> = error
                .iter()
                .zip(&amplitude)
                .filter(|(e, a)| e.is_finite() && **a >= lo && (**a < hi || (b + 1 == nb && **a <= hi)))
                .map(|(e, _)| *e)
                .collect();
            ErrorBin {
                lo,
                hi,
                count: vals.len(),
                median: quantile(&vals, 0.5),
                p90: quantile(&vals, 0.9),
            }
        })
        .collect();
    ErrorSummary {
        error,
        amplitude,
        bins,
    }
}
