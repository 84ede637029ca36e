//! Invariant vector bundles of the linear dynamics about the torus.

use log::debug;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fourier::CollocationGrid;
use crate::linalg::eig;
use crate::linearid::AffineModel;
use crate::textio::Artifact;

/// Eigenpairs of the discretised left-bundle problem; eigenvector entry `i + n·j` is `u_i(ϑ_j)`.
#[derive(Debug, Clone)]
pub struct BundleSpectrum {
    pub n: usize,
    pub grid: CollocationGrid,
    pub eigenvalues: Vec<Complex64>,
    pub eigenvectors: DMatrix<Complex64>,
}

impl BundleSpectrum {
    pub fn vector(&self, p: usize) -> DVector<Complex64> {
        self.eigenvectors.column(p).into_owned()
    }
}

/// Matrix of `λ u_i(ϑ_j) = Σ_l u_l(ϑ_j + ω) A_li(ϑ_j)`.
pub fn bundle_operator(model: &AffineModel, omega: f64) -> DMatrix<f64> {
    let n = model.dim();
    let grid = model.grid;
    let m = grid.len();
    let s = grid.shift(-omega).entries;
    let mut op = DMatrix::zeros(n * m, n * m);
    for j in 0..m {
        for i in 0..n {
            for k in 0..m {
                let skj = s[(k, j)];
                if skj == 0.0 {
                    continue;
                }
                for l in 0..n {
                    op[(i + n * j, l + n * k)] = skj * model.a[j][(l, i)];
                }
            }
        }
    }
    op
}

pub fn bundle_eigenproblem(model: &AffineModel, omega: f64) -> Result<BundleSpectrum> {
    let (eigenvalues, eigenvectors) = eig(&bundle_operator(model, omega))?;
    Ok(BundleSpectrum {
        n: model.dim(),
        grid: model.grid,
        eigenvalues,
        eigenvectors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumCluster {
    /// Indices into the eigenvalue list.
    pub members: Vec<usize>,
    pub eigenvalues: Vec<Complex64>,
    /// Magnitude range `[α, β]`.
    pub interval: (f64, f64),
}

impl SpectrumCluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn log_magnitude(l: &Complex64) -> f64 {
    l.norm().max(1e-300).ln()
}

/// Lloyd iterations on 1-D data with quantile initialisation; returns the labels.
fn kmeans_1d(x: &[f64], k: usize) -> Vec<usize> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let mut centers: Vec<f64> = (0..k).map(|c| q((c as f64 + 0.5) / k as f64)).collect();
    let mut labels = vec![usize::MAX; x.len()];
    for _ in 0..200 {
        let mut changed = false;
        for (i, &v) in x.iter().enumerate() {
            let mut best = 0;
            for c in 1..k {
                if (v - centers[c]).abs() < (v - centers[best]).abs() {
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let (sum, cnt) = x
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
            if cnt > 0 {
                *center = sum / cnt as f64;
            }
        }
    }
    labels
}

fn nearest(eigs: &[Complex64], z: Complex64) -> usize {
    let mut best = 0;
    for (i, l) in eigs.iter().enumerate() {
        if (l - z).norm() < (eigs[best] - z).norm() {
            best = i;
        }
    }
    best
}

/// Every admissible clustering, from the largest cluster count down.
///
/// A clustering is admissible when every cluster size is a multiple of `2ℓ+1`, there are at
/// least `n/2` clusters, and each cluster contains the nearest eigenvalue to the conjugate of
/// every member.
pub fn clustering_candidates(eigs: &[Complex64], n: usize, ell: usize) -> Vec<Vec<SpectrumCluster>> {
    let m = 2 * ell + 1;
    let x: Vec<f64> = eigs.iter().map(log_magnitude).collect();
    let mut out: Vec<Vec<SpectrumCluster>> = Vec::new();
    if eigs.is_empty() {
        return out;
    }
    for n_cl in (1..=n.min(eigs.len())).rev() {
        let labels = kmeans_1d(&x, n_cl);
        let mut groups: Vec<Vec<usize>> = (0..n_cl)
            .map(|c| (0..eigs.len()).filter(|&i| labels[i] == c).collect())
            .collect();
        groups.retain(|g| !g.is_empty());
        if 2 * groups.len() < n {
            continue;
        }
        if groups.iter().any(|g| g.len() % m != 0) {
            continue;
        }
        let conj_closed = groups.iter().all(|g| {
            g.iter()
                .all(|&i| g.contains(&nearest(eigs, eigs[i].conj())))
        });
        if !conj_closed {
            continue;
        }
        let mut clusters: Vec<SpectrumCluster> = groups
            .into_iter()
            .map(|g| {
                let mags: Vec<f64> = g.iter().map(|&i| eigs[i].norm()).collect();
                SpectrumCluster {
                    eigenvalues: g.iter().map(|&i| eigs[i]).collect(),
                    interval: (
                        mags.iter().cloned().fold(f64::INFINITY, f64::min),
                        mags.iter().cloned().fold(0.0, f64::max),
                    ),
                    members: g,
                }
            })
            .collect();
        clusters.sort_by(|a, b| b.interval.1.total_cmp(&a.interval.1));
        if !out.contains(&clusters) {
            out.push(clusters);
        }
    }
    out
}

/// Clusters of eigenvalue magnitudes sorted by decreasing magnitude.
pub fn cluster_spectrum(eigs: &[Complex64], n: usize, ell: usize) -> Result<Vec<SpectrumCluster>> {
    clustering_candidates(eigs, n, ell)
        .into_iter()
        .next()
        .ok_or_else(|| {
            Error::SpectralCirclesUnresolved(format!(
                "no clustering of {} eigenvalues into multiples of {} with at least {} clusters",
                eigs.len(),
                2 * ell + 1,
                n.div_ceil(2)
            ))
        })
}

/// Energy per wavenumber `|l| = 0..ℓ` of a nodal eigenvector.
pub fn harmonic_energy(u: &DVector<Complex64>, n: usize, grid: CollocationGrid) -> Vec<f64> {
    let m = grid.len();
    let ell = grid.ell() as i64;
    let mut energy = vec![0.0; grid.ell() + 1];
    for l in -ell..=ell {
        let mut e = 0.0;
        for i in 0..n {
            let mut c = Complex64::new(0.0, 0.0);
            for j in 0..m {
                c += Complex64::from_polar(1.0, -(l as f64) * grid.node(j)) * u[i + n * j];
            }
            e += c.norm_sqr();
        }
        energy[l.unsigned_abs() as usize] += e;
    }
    energy
}

pub fn dominant_harmonic(u: &DVector<Complex64>, n: usize, grid: CollocationGrid) -> usize {
    let e = harmonic_energy(u, n, grid);
    let mut best = 0;
    for (l, &v) in e.iter().enumerate() {
        if v > e[best] {
            best = l;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Representative {
    pub index: usize,
    pub eigenvalue: Complex64,
    pub vector: DVector<Complex64>,
    pub harmonic: usize,
}

/// Member with the smallest dominant wavenumber; ties go to the largest `|λ|` (relative
/// tolerance `1e-12`), then to `Im λ ≥ 0`, then to the lowest index.
pub fn select_representative(cluster: &SpectrumCluster, spectrum: &BundleSpectrum) -> Representative {
    let mut best: Option<(usize, usize)> = None;
    for &p in &cluster.members {
        let h = dominant_harmonic(&spectrum.eigenvectors.column(p).into_owned(), spectrum.n, spectrum.grid);
        let better = match best {
            None => true,
            Some((q, hq)) => {
                if h != hq {
                    h < hq
                } else {
                    let (lp, lq) = (spectrum.eigenvalues[p], spectrum.eigenvalues[q]);
                    let (mp, mq) = (lp.norm(), lq.norm());
                    if (mp - mq).abs() > 1e-12 * mp.max(mq) {
                        mp > mq
                    } else if (lp.im >= 0.0) != (lq.im >= 0.0) {
                        lp.im >= 0.0
                    } else {
                        p < q
                    }
                }
            }
        };
        if better {
            best = Some((p, h));
        }
    }
    let (index, harmonic) = best.expect("cluster is non-empty");
    Representative {
        index,
        eigenvalue: spectrum.eigenvalues[index],
        vector: spectrum.vector(index),
        harmonic,
    }
}

/// Real left bundle: per-node rows and the block `Λ` with `Λ U(θ) = U(θ+ω) A(θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealBundle {
    pub rows: Vec<DMatrix<f64>>,
    pub lambda: DMatrix<f64>,
    pub eigenvalue: Complex64,
}

pub fn realify(rep: &Representative, cluster_size: usize, n: usize, grid: CollocationGrid) -> Result<RealBundle> {
    let m = grid.len();
    let u = &rep.vector / Complex64::new(rep.vector.norm(), 0.0);
    let lam = rep.eigenvalue;
    if cluster_size == m {
        let big = u.iter().cloned().max_by(|a, b| a.norm().total_cmp(&b.norm())).expect("non-empty");
        let rot = Complex64::from_polar(1.0, -big.arg());
        let v = u.map(|c| c * rot);
        let residual = v.iter().map(|c| c.im * c.im).sum::<f64>().sqrt();
        if residual > 1e-6 {
            return Err(Error::NotRealizable { residual });
        }
        let rows = (0..m)
            .map(|j| DMatrix::from_fn(1, n, |_, i| v[i + n * j].re))
            .collect();
        Ok(RealBundle {
            rows,
            lambda: DMatrix::from_element(1, 1, lam.re),
            eigenvalue: Complex64::new(lam.re, 0.0),
        })
    } else if cluster_size == 2 * m {
        // Principal-axis phase: Re ⟂ Im with |Re| ≥ |Im|.
        let s: Complex64 = u.iter().map(|c| c * c).sum();
        let rot = Complex64::from_polar(1.0, -0.5 * s.arg());
        let v = u.map(|c| c * rot);
        let rows = (0..m)
            .map(|j| DMatrix::from_fn(2, n, |r, i| if r == 0 { v[i + n * j].re } else { v[i + n * j].im }))
            .collect();
        Ok(RealBundle {
            rows,
            lambda: DMatrix::from_row_slice(2, 2, &[lam.re, -lam.im, lam.im, lam.re]),
            eigenvalue: lam,
        })
    } else {
        Err(Error::UnsupportedMultiplicity {
            size: cluster_size,
            nodes: m,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Orthonormalized {
    pub u: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub t: Vec<DMatrix<f64>>,
}

/// Node-wise polar decomposition `Uᵈ = T U□` and `R□(θ) = T⁻¹(θ+ω) Rᵈ T(θ)`.
pub fn orthonormalize(
    ud: &[DMatrix<f64>],
    rd: &DMatrix<f64>,
    omega: f64,
    grid: CollocationGrid,
) -> Result<Orthonormalized> {
    let m = grid.len();
    if ud.len() != m {
        return Err(Error::Dimension(format!("{} nodes, grid has {m}", ud.len())));
    }
    let k = rd.nrows();
    let mut u = Vec::with_capacity(m);
    let mut t = Vec::with_capacity(m);
    let mut tinv = Vec::with_capacity(m);
    for (l, a) in ud.iter().enumerate() {
        if a.nrows() != k {
            return Err(Error::Dimension(format!("bundle rows {} vs block size {k}", a.nrows())));
        }
        let svd = a.clone().svd(true, true);
        let g = svd.u.expect("requested");
        let h = svd.v_t.expect("requested");
        let sig = &svd.singular_values;
        if sig.min() <= 1e-12 * sig.max().max(1.0) {
            return Err(Error::SingularFrame { node: l });
        }
        u.push(&g * &h);
        t.push(&g * DMatrix::from_diagonal(sig) * g.transpose());
        tinv.push(&g * DMatrix::from_diagonal(&sig.map(|s| 1.0 / s)) * g.transpose());
    }
    let s = grid.shift(-omega).entries;
    let r = (0..m)
        .map(|l| {
            let mut ti = DMatrix::zeros(k, k);
            for q in 0..m {
                ti += &tinv[q] * s[(q, l)];
            }
            ti * rd * &t[l]
        })
        .collect();
    Ok(Orthonormalized { u, r, t })
}

/// `max_l |R(ϑ_l) U(ϑ_l) − U(ϑ_l+ω) A(ϑ_l)|`.
pub fn invariance_residual(u: &[DMatrix<f64>], r: &[DMatrix<f64>], model: &AffineModel, omega: f64) -> f64 {
    let grid = model.grid;
    let m = grid.len();
    let s = grid.shift(-omega).entries;
    let mut res: f64 = 0.0;
    for l in 0..m {
        let mut ushift = DMatrix::zeros(u[0].nrows(), u[0].ncols());
        for q in 0..m {
            ushift += &u[q] * s[(q, l)];
        }
        res = res.max((&r[l] * &u[l] - ushift * &model.a[l]).amax());
    }
    res
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub eigenvalue: Complex64,
    pub size: usize,
    pub interval: (f64, f64),
    /// Rows this cluster contributes to the bundle (1 or 2).
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleFrame {
    pub grid: CollocationGrid,
    pub omega: f64,
    /// Selected clusters (0-based, in decreasing-magnitude order).
    pub index_set: Vec<usize>,
    pub modes: Vec<ModeSummary>,
    pub u: Vec<DMatrix<f64>>,
    pub v: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub s: Vec<DMatrix<f64>>,
}

impl BundleFrame {
    pub fn dim_z(&self) -> usize {
        self.u[0].nrows()
    }

    pub fn dim_zc(&self) -> usize {
        self.v[0].nrows()
    }

    pub fn n(&self) -> usize {
        self.u[0].ncols()
    }

    /// Eigenvalues of the selected clusters.
    pub fn selected_eigenvalues(&self) -> Vec<Complex64> {
        self.index_set.iter().map(|&i| self.modes[i].eigenvalue).collect()
    }

    /// `max_l |U□U□ᵀ − I|` and the same for `V□`.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for mats in [&self.u, &self.v] {
            for a in mats.iter() {
                if a.nrows() > 0 {
                    d = d.max((a * a.transpose() - DMatrix::identity(a.nrows(), a.nrows())).amax());
                }
            }
        }
        d
    }

    pub fn to_artifact(&self) -> Artifact {
        let mut art = Artifact::new("bundle-frame");
        art.set("ell", self.grid.ell());
        art.set("omega", self.omega);
        art.set("n", self.n());
        art.set("dim_z", self.dim_z());
        art.set("dim_zc", self.dim_zc());
        art.set(
            "index_set",
            self.index_set.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","),
        );
        let modes = DMatrix::from_fn(self.modes.len(), 6, |i, c| {
            let md = &self.modes[i];
            match c {
                0 => md.eigenvalue.re,
                1 => md.eigenvalue.im,
                2 => md.size as f64,
                3 => md.interval.0,
                4 => md.interval.1,
                _ => md.rank as f64,
            }
        });
        art.push("modes", modes);
        for l in 0..self.grid.len() {
            art.push(&format!("U{l}"), self.u[l].clone());
            art.push(&format!("V{l}"), self.v[l].clone());
            art.push(&format!("R{l}"), self.r[l].clone());
            art.push(&format!("S{l}"), self.s[l].clone());
        }
        art
    }

    pub fn from_artifact(art: &Artifact) -> Result<Self> {
        art.expect_kind("bundle-frame")?;
        let grid = CollocationGrid::new(art.parse("ell")?);
        let index_set = art
            .get("index_set")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.trim().parse::<usize>().map_err(|_| Error::Parse("bad index_set".into())))
            .collect::<Result<Vec<_>>>()?;
        let mb = art.block("modes")?;
        let modes = (0..mb.nrows())
            .map(|i| ModeSummary {
                eigenvalue: Complex64::new(mb[(i, 0)], mb[(i, 1)]),
                size: mb[(i, 2)] as usize,
                interval: (mb[(i, 3)], mb[(i, 4)]),
                rank: mb[(i, 5)] as usize,
            })
            .collect();
        let fetch = |p: &str| -> Result<Vec<DMatrix<f64>>> {
            (0..grid.len()).map(|l| art.block(&format!("{p}{l}")).cloned()).collect()
        };
        Ok(Self {
            grid,
            omega: art.parse("omega")?,
            index_set,
            modes,
            u: fetch("U")?,
            v: fetch("V")?,
            r: fetch("R")?,
            s: fetch("S")?,
        })
    }
}

fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let size: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(size, size);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, at), (b.nrows(), b.ncols())).copy_from(b);
        at += b.nrows();
    }
    out
}

fn stack_rows(parts: &[&RealBundle], node: usize, n: usize) -> DMatrix<f64> {
    let rows: usize = parts.iter().map(|p| p.rows[node].nrows()).sum();
    let mut out = DMatrix::zeros(rows, n);
    let mut at = 0;
    for p in parts {
        let b = &p.rows[node];
        out.view_mut((at, 0), (b.nrows(), n)).copy_from(b);
        at += b.nrows();
    }
    out
}

/// Full bundle stage: eigenproblem, clustering, representatives, real bundles and orthonormal frames.
///
/// Admissible clusterings are tried from the largest cluster count down; one whose
/// representatives cannot be realified is skipped.
pub fn decompose(model: &AffineModel, omega: f64, index_set: &[usize]) -> Result<BundleFrame> {
    let n = model.dim();
    let grid = model.grid;
    let spectrum = bundle_eigenproblem(model, omega)?;
    let candidates = clustering_candidates(&spectrum.eigenvalues, n, grid.ell());
    if candidates.is_empty() {
        cluster_spectrum(&spectrum.eigenvalues, n, grid.ell())?;
    }
    let mut last_err = None;
    for clusters in candidates {
        let mut bundles = Vec::with_capacity(clusters.len());
        let mut failed = None;
        for c in &clusters {
            let rep = select_representative(c, &spectrum);
            match realify(&rep, c.len(), n, grid) {
                Ok(b) => bundles.push(b),
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = failed {
            debug!("clustering with {} clusters rejected: {e}", clusters.len());
            last_err = Some(e);
            continue;
        }
        let total: usize = bundles.iter().map(|b| b.lambda.nrows()).sum();
        if total != n {
            last_err = Some(Error::SpectralCirclesUnresolved(format!(
                "bundles span {total} of {n} dimensions"
            )));
            continue;
        }
        return assemble(model, omega, index_set, &clusters, &bundles);
    }
    Err(last_err.unwrap_or_else(|| Error::SpectralCirclesUnresolved("no admissible clustering".into())))
}

fn assemble(
    model: &AffineModel,
    omega: f64,
    index_set: &[usize],
    clusters: &[SpectrumCluster],
    bundles: &[RealBundle],
) -> Result<BundleFrame> {
    let n = model.dim();
    let grid = model.grid;
    if index_set.is_empty() {
        return Err(Error::Config("index set must select at least one bundle".into()));
    }
    for (pos, &i) in index_set.iter().enumerate() {
        if i >= clusters.len() {
            return Err(Error::Config(format!(
                "index set refers to bundle {} but only {} exist",
                i + 1,
                clusters.len()
            )));
        }
        if index_set[..pos].contains(&i) {
            return Err(Error::Config(format!("bundle {} selected twice", i + 1)));
        }
    }
    let complement: Vec<usize> = (0..clusters.len()).filter(|i| !index_set.contains(i)).collect();
    let sel: Vec<&RealBundle> = index_set.iter().map(|&i| &bundles[i]).collect();
    let rest: Vec<&RealBundle> = complement.iter().map(|&i| &bundles[i]).collect();
    let rd = block_diag(&sel.iter().map(|b| &b.lambda).collect::<Vec<_>>());
    let sd = block_diag(&rest.iter().map(|b| &b.lambda).collect::<Vec<_>>());
    let ud: Vec<DMatrix<f64>> = (0..grid.len()).map(|l| stack_rows(&sel, l, n)).collect();
    let vd: Vec<DMatrix<f64>> = (0..grid.len()).map(|l| stack_rows(&rest, l, n)).collect();
    let uo = orthonormalize(&ud, &rd, omega, grid)?;
    let (v, s) = if rest.is_empty() {
        (
            vec![DMatrix::zeros(0, n); grid.len()],
            vec![DMatrix::zeros(0, 0); grid.len()],
        )
    } else {
        let vo = orthonormalize(&vd, &sd, omega, grid)?;
        (vo.u, vo.r)
    };
    for l in 0..grid.len() {
        let mut full = DMatrix::zeros(n, n);
        full.view_mut((0, 0), (uo.u[l].nrows(), n)).copy_from(&uo.u[l]);
        full.view_mut((uo.u[l].nrows(), 0), (v[l].nrows(), n)).copy_from(&v[l]);
        let sv = full.singular_values();
        if sv.min() <= 1e-8 {
            return Err(Error::SingularFrame { node: l });
        }
    }
    let modes = clusters
        .iter()
        .zip(bundles)
        .map(|(c, b)| ModeSummary {
            eigenvalue: b.eigenvalue,
            size: c.len(),
            interval: c.interval,
            rank: b.lambda.nrows(),
        })
        .collect();
    Ok(BundleFrame {
        grid,
        omega,
        index_set: index_set.to_vec(),
        modes,
        u: uo.u,
        v,
        r: uo.r,
        s,
    })
}

/// Continuous-time form `log(λ)/Δt` of a map eigenvalue.
pub fn vector_field_eigenvalue(lambda: Complex64, dt: f64) -> Complex64 {
    lambda.ln() / dt
}

/// `(frequency, damping ratio)` of a map eigenvalue.
pub fn frequency_damping(lambda: Complex64, dt: f64) -> (f64, f64) {
    let l = vector_field_eigenvalue(lambda, dt);
    (l.im.abs(), -l.re / l.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::TorusFunction;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_model(a: &DMatrix<f64>, ell: usize) -> AffineModel {
        let grid = CollocationGrid::new(ell);
        AffineModel {
            grid,
            a: vec![a.clone(); grid.len()],
            b: TorusFunction::zeros(grid, a.nrows()),
        }
    }

    fn rotation(phi: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[phi.cos(), -phi.sin(), phi.sin(), phi.cos()])
    }

    fn sorted_by_arg(v: &mut [Complex64]) {
        v.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    }

    #[test]
    fn constant_map_gives_rotated_copies() {
        let a = DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.3, 0.8]);
        let omega = 0.7;
        let sp = bundle_eigenproblem(&constant_model(&a, 2), omega).unwrap();
        for mu in [0.6, 0.8] {
            let mut expect: Vec<Complex64> = (-2..=2).map(|k| Complex64::from_polar(mu, k as f64 * omega)).collect();
            let mut got: Vec<Complex64> = sp.eigenvalues.iter().cloned().filter(|l| (l.norm() - mu).abs() < 1e-9).collect();
            assert_eq!(got.len(), 5);
            sorted_by_arg(&mut expect);
            sorted_by_arg(&mut got);
            for (e, g) in expect.iter().zip(&got) {
                assert!((e - g).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_rotation_decouples_nodes() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25]));
        let sp = bundle_eigenproblem(&constant_model(&a, 1), 0.0).unwrap();
        let count = |v: f64| sp.eigenvalues.iter().filter(|l| (*l - v).norm() < 1e-12).count();
        assert_eq!(count(0.5), 3);
        assert_eq!(count(0.25), 3);
    }

    fn reals(v: &[f64]) -> Vec<Complex64> {
        v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
    }

    #[test]
    fn clusters_of_equal_size() {
        let cl = cluster_spectrum(&reals(&[0.5, 0.9, 0.5, 0.9, 0.9, 0.5]), 2, 1).unwrap();
        assert_eq!(cl.len(), 2);
        assert_eq!(cl[0].len(), 3);
        assert!((cl[0].interval.1 - 0.9).abs() < 1e-15);
        assert_eq!(cl[1].members, vec![0, 2, 5]);
    }

    #[test]
    fn clusters_after_reducing_count() {
        let mut v = vec![0.9; 6];
        v.extend([0.5; 3]);
        // small spread inside the big circle
        v[1] = 0.91;
        v[4] = 0.89;
        let cl = cluster_spectrum(&reals(&v), 3, 1).unwrap();
        let sizes: Vec<usize> = cl.iter().map(|c| c.len()).collect();
        assert_eq!(sizes, vec![6, 3]);
    }

    #[test]
    fn degenerate_magnitudes() {
        let eq = reals(&[0.7; 6]);
        // n = 2 admits a single cluster
        assert_eq!(cluster_spectrum(&eq, 2, 1).unwrap().len(), 1);
        // n = 4 needs at least two clusters
        assert!(matches!(
            cluster_spectrum(&reals(&[0.7; 12]), 4, 1),
            Err(Error::SpectralCirclesUnresolved(_))
        ));
    }

    #[test]
    fn conjugates_stay_together() {
        let l = Complex64::new(0.3, 0.4);
        let eigs = vec![l, l.conj() * (1.0 + 1e-15), Complex64::new(0.2, 0.0), Complex64::new(0.1, 0.0)];
        let cl = cluster_spectrum(&eigs, 4, 0).unwrap();
        assert_eq!(cl.len(), 3);
        assert_eq!(cl[0].len(), 2);
    }

    fn synthetic_spectrum(vectors: Vec<DVector<Complex64>>, eigenvalues: Vec<Complex64>, n: usize, ell: usize) -> BundleSpectrum {
        let cols: Vec<_> = vectors.iter().map(|v| v.column(0)).collect();
        BundleSpectrum {
            n,
            grid: CollocationGrid::new(ell),
            eigenvalues,
            eigenvectors: DMatrix::from_columns(&cols),
        }
    }

    #[test]
    fn representative_prefers_constant_harmonic() {
        let grid = CollocationGrid::new(1);
        let flat = DVector::from_fn(3, |_, _| Complex64::new(1.0, 0.0));
        let wave = DVector::from_fn(3, |j, _| Complex64::from_polar(1.0, grid.node(j)));
        let sp = synthetic_spectrum(vec![wave, flat], reals(&[0.9, 0.5]), 1, 1);
        let cl = SpectrumCluster { members: vec![0, 1], eigenvalues: sp.eigenvalues.clone(), interval: (0.5, 0.9) };
        assert_eq!(select_representative(&cl, &sp).index, 1);
    }

    #[test]
    fn representative_of_constant_map_is_its_eigenvalue() {
        let a = DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.3, 0.8]);
        let model = constant_model(&a, 3);
        let sp = bundle_eigenproblem(&model, 0.9).unwrap();
        let cl = cluster_spectrum(&sp.eigenvalues, 2, 3).unwrap();
        assert_eq!(cl.len(), 2);
        assert!((select_representative(&cl[0], &sp).eigenvalue - 0.8).norm() < 1e-10);
        assert!((select_representative(&cl[1], &sp).eigenvalue - 0.6).norm() < 1e-10);
    }

    /// A(θ) = P(θ+ω) B P(θ)⁻¹ with a rotating frame P and constant B.
    fn rotated_model(b: &DMatrix<f64>, ell: usize, omega: f64, twist: f64) -> AffineModel {
        let grid = CollocationGrid::new(ell);
        let n = b.nrows();
        let frame = |t: f64| {
            let mut p = DMatrix::identity(n, n);
            p.view_mut((0, 0), (2, 2)).copy_from(&rotation(twist * t.sin()));
            p
        };
        let a = (0..grid.len())
            .map(|l| {
                let t = grid.node(l);
                frame(t + omega) * b * frame(t).transpose()
            })
            .collect();
        AffineModel { grid, a, b: TorusFunction::zeros(grid, n) }
    }

    #[test]
    fn representative_matches_exhaustive_search() {
        let b = DMatrix::from_row_slice(3, 3, &[0.9, 0.0, 0.0, 0.1, 0.6, 0.0, 0.0, 0.2, 0.3]);
        let omega = 0.8;
        let model = rotated_model(&b, 4, omega, 0.4);
        let sp = bundle_eigenproblem(&model, omega).unwrap();
        for c in cluster_spectrum(&sp.eigenvalues, 3, 4).unwrap() {
            let rep = select_representative(&c, &sp);
            let mut brute: Vec<(usize, usize)> = c
                .members
                .iter()
                .map(|&p| (dominant_harmonic(&sp.vector(p), 3, sp.grid), p))
                .collect();
            brute.sort();
            assert_eq!(rep.harmonic, brute[0].0);
            assert!(rep.harmonic <= 1);
            assert!((rep.eigenvalue.norm() - c.interval.1).abs() < 1e-6);
        }
    }

    #[test]
    fn realify_real_block() {
        let grid = CollocationGrid::new(1);
        let v = DVector::from_fn(6, |i, _| Complex64::from_polar(1.0 + i as f64, 0.7));
        let rep = Representative { index: 0, eigenvalue: Complex64::new(0.75, 0.0), vector: v, harmonic: 0 };
        let b = realify(&rep, 3, 2, grid).unwrap();
        assert_eq!(b.lambda, DMatrix::from_element(1, 1, 0.75));
        assert_eq!(b.rows.len(), 3);
        let bad = Representative {
            vector: DVector::from_fn(6, |i, _| Complex64::from_polar(1.0, i as f64)),
            ..rep.clone()
        };
        assert!(matches!(realify(&bad, 3, 2, grid), Err(Error::NotRealizable { .. })));
        assert!(matches!(realify(&rep, 9, 2, grid), Err(Error::UnsupportedMultiplicity { size: 9, nodes: 3 })));
    }

    #[test]
    fn complex_block_and_phase_independence() {
        let a = DMatrix::from_row_slice(3, 3, &[0.7, -0.4, 0.1, 0.4, 0.7, 0.0, 0.0, 0.1, 0.3]);
        let omega = 0.6;
        let model = rotated_model(&a, 2, omega, 0.3);
        let sp = bundle_eigenproblem(&model, omega).unwrap();
        let cl = cluster_spectrum(&sp.eigenvalues, 3, 2).unwrap();
        assert_eq!(cl[0].len(), 10);
        let rep = select_representative(&cl[0], &sp);
        let lam = rep.eigenvalue;
        let b1 = realify(&rep, 10, 3, model.grid).unwrap();
        assert_eq!(b1.lambda, DMatrix::from_row_slice(2, 2, &[lam.re, -lam.im, lam.im, lam.re]));
        let res1 = invariance_residual(&b1.rows, &vec![b1.lambda.clone(); 5], &model, omega);
        assert!(res1 < 1e-10, "{res1}");
        let turned = Representative { vector: &rep.vector * Complex64::from_polar(1.0, 1.234), ..rep.clone() };
        let b2 = realify(&turned, 10, 3, model.grid).unwrap();
        let res2 = invariance_residual(&b2.rows, &vec![b2.lambda.clone(); 5], &model, omega);
        assert!((res1 - res2).abs() < 1e-10);
        // Same span at every node.
        for l in 0..5 {
            let p1 = b1.rows[l].transpose() * (&b1.rows[l] * b1.rows[l].transpose()).try_inverse().unwrap() * &b1.rows[l];
            let p2 = b2.rows[l].transpose() * (&b2.rows[l] * b2.rows[l].transpose()).try_inverse().unwrap() * &b2.rows[l];
            assert!((p1 - p2).amax() < 1e-10);
        }
    }

    #[test]
    fn orthonormal_input_unchanged() {
        let grid = CollocationGrid::new(1);
        let ud: Vec<DMatrix<f64>> = (0..3)
            .map(|l| {
                let r = rotation(grid.node(l));
                DMatrix::from_fn(2, 3, |i, j| if j < 2 { r[(i, j)] } else { 0.0 })
            })
            .collect();
        let rd = DMatrix::from_row_slice(2, 2, &[0.5, -0.2, 0.2, 0.5]);
        let o = orthonormalize(&ud, &rd, 0.4, grid).unwrap();
        for l in 0..3 {
            assert!((&o.u[l] - &ud[l]).amax() < 1e-12);
            assert!((&o.t[l] - DMatrix::identity(2, 2)).amax() < 1e-12);
            assert!((&o.r[l] - &rd).amax() < 1e-12);
        }
        let scaled: Vec<DMatrix<f64>> = ud.iter().map(|u| u * 3.0).collect();
        let o3 = orthonormalize(&scaled, &rd, 0.4, grid).unwrap();
        for l in 0..3 {
            assert!((&o3.u[l] - &ud[l]).amax() < 1e-12);
            assert!((&o3.t[l] - DMatrix::identity(2, 2) * 3.0).amax() < 1e-12);
            assert!((&o3.r[l] - &rd).amax() < 1e-12);
        }
    }

    #[test]
    fn singular_frame_is_rejected() {
        let grid = CollocationGrid::new(0);
        let ud = vec![DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0])];
        assert!(matches!(
            orthonormalize(&ud, &DMatrix::identity(2, 2), 0.1, grid),
            Err(Error::SingularFrame { node: 0 })
        ));
    }

    #[test]
    fn orthonormalization_preserves_invariance_on_random_bundles() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..5 {
            let n = 4;
            let b = DMatrix::from_fn(n, n, |i, j| if i == j { 0.3 + 0.15 * i as f64 } else if j < i { rng.random_range(-0.2..0.2) } else { 0.0 });
            let omega = rng.random_range(0.1..3.0);
            // constant A keeps the nodal problem exact for every harmonic
            let model = constant_model(&b, 3);
            let sp = bundle_eigenproblem(&model, omega).unwrap();
            let cl = cluster_spectrum(&sp.eigenvalues, n, 3).unwrap();
            let rep = select_representative(&cl[0], &sp);
            let bd = realify(&rep, cl[0].len(), n, model.grid).unwrap();
            let rd = vec![bd.lambda.clone(); model.grid.len()];
            let res_d = invariance_residual(&bd.rows, &rd, &model, omega);
            let k = bd.lambda.nrows();
            let mix = DMatrix::from_fn(k, k, |i, j| if i == j { 2.0 } else { rng.random_range(-0.5..0.5) });
            let mixed: Vec<DMatrix<f64>> = bd.rows.iter().map(|r| &mix * r).collect();
            let lam = &mix * &bd.lambda * mix.clone().try_inverse().unwrap();
            let o = orthonormalize(&mixed, &lam, omega, model.grid).unwrap();
            let res_o = invariance_residual(&o.u, &o.r, &model, omega);
            assert!(res_d < 1e-10 && res_o < 1e-10, "trial {trial}: {res_d} {res_o}");
        }
    }

    #[test]
    fn decompose_constant_map() {
        let a = DMatrix::from_row_slice(4, 4, &[
            0.8, -0.5, 0.0, 0.0, //
            0.5, 0.8, 0.0, 0.0, //
            0.1, 0.0, 0.3, -0.6, //
            0.0, 0.2, 0.6, 0.3,
        ]);
        let model = constant_model(&a, 2);
        let frame = decompose(&model, 0.7, &[0]).unwrap();
        assert_eq!(frame.modes.len(), 2);
        assert_eq!(frame.dim_z(), 2);
        assert_eq!(frame.dim_zc(), 2);
        assert!(frame.orthonormality_defect() < 1e-10);
        assert!(invariance_residual(&frame.u, &frame.r, &model, 0.7) < 1e-8);
        assert!(invariance_residual(&frame.v, &frame.s, &model, 0.7) < 1e-8);
        let lam = frame.selected_eigenvalues()[0];
        assert!((lam - Complex64::new(0.8, 0.5)).norm() < 1e-10);
        let back = BundleFrame::from_artifact(&Artifact::from_text(&frame.to_artifact().to_text()).unwrap()).unwrap();
        assert_eq!(back, frame);
        assert!(matches!(decompose(&model, 0.7, &[2]), Err(Error::Config(_))));
    }

    #[test]
    fn decompose_phase_dependent_map() {
        let b = DMatrix::from_row_slice(4, 4, &[
            0.8, -0.5, 0.0, 0.0, //
            0.5, 0.8, 0.0, 0.0, //
            0.1, 0.0, 0.3, -0.6, //
            0.0, 0.2, 0.6, 0.3,
        ]);
        let omega = 0.9;
        let model = rotated_model(&b, 5, omega, 0.3);
        let frame = decompose(&model, omega, &[0]).unwrap();
        assert!(frame.orthonormality_defect() < 1e-10);
        assert!((frame.selected_eigenvalues()[0].norm() - b.fixed_view::<2, 2>(0, 0).determinant().sqrt()).abs() < 1e-6);
        assert!(invariance_residual(&frame.u, &frame.r, &model, omega) < 1e-6);
    }

    #[test]
    fn map_to_field_conversion() {
        let l = Complex64::from_polar(0.98, 0.8);
        let vf = vector_field_eigenvalue(l, 0.8);
        assert!((vf.exp().powf(0.8) - l).norm() < 1e-12 || ((vf * 0.8).exp() - l).norm() < 1e-12);
        assert!(vf.re < 0.0);
        let (w, z) = frequency_damping(l, 0.8);
        assert!((w - 1.0).abs() < 1e-12);
        assert!(z > 0.0);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn frames_are_orthonormal_invariant_and_complete(omega in 0.1f64..0.3, c in -0.2f64..0.2, mode in 0usize..2) {
            let a = DMatrix::from_row_slice(4, 4, &[
                0.8, -0.5, 0.0, 0.0, //
                0.5, 0.8, 0.0, 0.0, //
                c, 0.0, 0.3, -0.6, //
                0.0, 0.2, 0.6, 0.3,
            ]);
            let model = constant_model(&a, 1);
            let frame = decompose(&model, omega, &[mode]).unwrap();
            proptest::prop_assert!(frame.orthonormality_defect() < 1e-10);
            proptest::prop_assert!(invariance_residual(&frame.u, &frame.r, &model, omega) < 1e-8);
            proptest::prop_assert!(invariance_residual(&frame.v, &frame.s, &model, omega) < 1e-8);
            for l in 0..frame.u.len() {
                let stacked = DMatrix::from_fn(4, 4, |i, j| if i < 2 { frame.u[l][(i, j)] } else { frame.v[l][(i - 2, j)] });
                let smin = stacked.singular_values().min();
                proptest::prop_assert!(smin > 1e-8);
            }
        }
    }
}
