//! Invariant manifold decoder recovered from the two fitted encoders.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fourier::CollocationGrid;
use crate::foliation::FoliationModel;
use crate::linalg::{inverse_checked, rcond};
use crate::poly::{GridPoly, MonomialBasis, RealPoly, Scalar};
use crate::textio::Artifact;

/// `W(z, θ) = (W∥(z, θ), W⊥(z, θ))` in frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderPoly {
    pub dz: usize,
    pub dc: usize,
    /// Outputs `x∥` then `x⊥`, variables `z`.
    pub w: RealPoly,
}

impl DecoderPoly {
    pub fn sigma(&self) -> usize {
        self.w.max_degree()
    }

    pub fn grid(&self) -> CollocationGrid {
        self.w.grid()
    }

    pub fn w_par(&self) -> RealPoly {
        let parts: Vec<RealPoly> = (0..self.dz).map(|o| self.w.output(o)).collect();
        GridPoly::stack(&parts.iter().collect::<Vec<_>>())
    }

    pub fn w_perp(&self) -> RealPoly {
        let parts: Vec<RealPoly> = (self.dz..self.dz + self.dc).map(|o| self.w.output(o)).collect();
        GridPoly::stack(&parts.iter().collect::<Vec<_>>())
    }

    pub fn to_artifact(&self) -> Artifact {
        let mut art = Artifact::new("decoder");
        art.set("ell", self.grid().ell());
        art.set("sigma", self.sigma());
        art.set("dim_z", self.dz);
        art.set("dim_zc", self.dc);
        for l in 0..self.grid().len() {
            art.push(&format!("W{l}"), crate::foliation::node_matrix(&self.w, l));
        }
        art
    }

    pub fn from_artifact(art: &Artifact) -> Result<Self> {
        art.expect_kind("decoder")?;
        let grid = CollocationGrid::new(art.parse("ell")?);
        let sigma: usize = art.parse("sigma")?;
        let dz: usize = art.parse("dim_z")?;
        let dc: usize = art.parse("dim_zc")?;
        let mut w = RealPoly::zeros(MonomialBasis::new(dz, sigma), dz + dc, grid);
        for l in 0..grid.len() {
            let mat = art.block(&format!("W{l}"))?;
            if mat.shape() != (dz + dc, w.basis().len()) {
                return Err(Error::Parse(format!("block W{l} has the wrong shape")));
            }
            crate::foliation::set_node_matrix(&mut w, l, mat);
        }
        Ok(Self { dz, dc, w })
    }
}

/// `outer(inner(z, θ), θ)` node-wise, truncated at total degree `sigma`.
///
/// Callers that need `inner` or `outer` at `θ + ω` shift them beforehand.
pub fn poly_compose<T: Scalar>(outer: &GridPoly<T>, inner: &GridPoly<T>, sigma: usize) -> GridPoly<T> {
    let inner = inner.with_basis(MonomialBasis::new(inner.nvars(), sigma));
    outer.compose(&inner)
}

/// Node-wise `M_l · p_l` for per-node matrices `M_l`.
pub fn left_multiply<T: Scalar + nalgebra::Scalar>(mats: &[DMatrix<T>], p: &GridPoly<T>) -> GridPoly<T> {
    let nout = mats[0].nrows();
    let mut out = GridPoly::zeros(p.basis().clone(), nout, p.grid());
    for (l, mat) in mats.iter().enumerate() {
        for o in 0..nout {
            for i in 0..p.nout() {
                let c = mat[(o, i)];
                if c == T::zero() {
                    continue;
                }
                let src: Vec<T> = p.row(l, i).to_vec();
                for (a, b) in out.row_mut(l, o).iter_mut().zip(&src) {
                    *a += c * *b;
                }
            }
        }
    }
    out
}

/// Solve `U(W∥, W⊥, θ) = z`, `V(W∥, W⊥, θ) = 0` by the block fixed-point iteration.
///
/// The encoders are first re-expanded about the torus `(K∥, K⊥)`, so the iteration
/// starts at `W = K` and gains one polynomial degree per step.
pub fn recover_manifold(model: &FoliationModel) -> Result<DecoderPoly> {
    let grid = model.grid;
    let (dz, dc) = (model.dz, model.dc);
    let n = dz + dc;
    let sigma = model.sigma;
    let m = grid.len();
    // x = K(θ) + ξ
    let xb = MonomialBasis::new(n, sigma);
    let mut shift = RealPoly::identity(xb.clone(), grid);
    for l in 0..m {
        for i in 0..dz {
            shift.set(l, i, 0, model.kpar.values[(i, l)]);
        }
        for i in 0..dc {
            shift.set(l, dz + i, 0, model.kperp.values[(i, l)]);
        }
    }
    let enc = GridPoly::stack(&[&model.u, &model.v]).compose(&shift);
    let mut lin = Vec::with_capacity(m);
    for l in 0..m {
        let a = DMatrix::from_fn(n, n, |o, v| enc.get(l, o, xb.linear(v)));
        let inv = inverse_checked(&a, 1e-12).ok_or_else(|| {
            log::debug!("node {l}: block matrix rcond {:.3e}", rcond(&a));
            Error::EncoderFramesTangent { node: l }
        })?;
        lin.push(inv);
    }
    let nonlinear = enc.degree_part(2..sigma + 1);
    let zb = MonomialBasis::new(dz, sigma);
    let mut target = RealPoly::zeros(zb.clone(), n, grid);
    for l in 0..m {
        for o in 0..dz {
            target.set(l, o, zb.linear(o), 1.0);
        }
    }
    let mut xi = RealPoly::zeros(zb.clone(), n, grid);
    for _ in 0..sigma {
        let rhs = target.sub(&nonlinear.compose(&xi));
        xi = left_multiply(&lin, &rhs);
    }
    for l in 0..m {
        for i in 0..n {
            xi.add_to(l, i, 0, shift.get(l, i, 0));
        }
    }
    Ok(DecoderPoly { dz, dc, w: xi })
}

/// Coefficients of `U∘W − z` and `V∘W`, stacked, through degree σ.
pub fn composition_residual(model: &FoliationModel, decoder: &DecoderPoly) -> RealPoly {
    let enc = GridPoly::stack(&[&model.u, &model.v]);
    let mut res = poly_compose(&enc, &decoder.w, decoder.sigma());
    let zb = res.basis().clone();
    for l in 0..decoder.grid().len() {
        for o in 0..decoder.dz {
            res.add_to(l, o, zb.linear(o), -1.0);
        }
    }
    res
}
