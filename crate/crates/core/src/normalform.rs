//! Autonomous normal form of the conjugate map and the composite decoder.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::bundles::{bundle_eigenproblem, dominant_harmonic};
use crate::error::{Error, Result};
use crate::fourier::{dft_rows, idft_rows, CollocationGrid, TorusFunction};
use crate::linalg::complex_inverse;
use crate::linearid::AffineModel;
use crate::manifold::{left_multiply, poly_compose, DecoderPoly};
use crate::poly::{ComplexPoly, MonomialBasis, RealPoly};
use crate::textio::Artifact;

pub const DEFAULT_RESONANCE_TOL: f64 = 0.1;

/// Complex diagonalisation of the linear part of `R`.
#[derive(Debug, Clone)]
pub struct LinearDiagonal {
    pub lambda: Vec<Complex64>,
    /// `Uᵈ(ϑ_l)` per node.
    pub ud: Vec<DMatrix<Complex64>>,
    pub ud_inv: Vec<DMatrix<Complex64>>,
    /// Index of the conjugate partner of every coordinate (itself for real ones).
    pub partner: Vec<usize>,
    /// `Rᵈ(z, θ) = Uᵈ(θ+ω) R(Uᵈ(θ)⁻¹ z, θ)`.
    pub rd: ComplexPoly,
}

fn linear_part(r: &RealPoly) -> Vec<DMatrix<f64>> {
    let b = r.basis().clone();
    (0..r.grid().len())
        .map(|l| DMatrix::from_fn(r.nout(), r.nvars(), |o, v| r.get(l, o, b.linear(v))))
        .collect()
}

/// Values of per-node matrices at `ϑ_l + ω`.
pub fn shift_matrices(mats: &[DMatrix<Complex64>], grid: CollocationGrid, omega: f64) -> Vec<DMatrix<Complex64>> {
    let s = grid.shift(-omega).entries;
    (0..grid.len())
        .map(|l| {
            let mut out = DMatrix::zeros(mats[0].nrows(), mats[0].ncols());
            for (j, mj) in mats.iter().enumerate() {
                out += mj * Complex64::new(s[(j, l)], 0.0);
            }
            out
        })
        .collect()
}

fn normalise_row(u: &nalgebra::DVector<Complex64>, m: usize) -> nalgebra::DVector<Complex64> {
    let big = u.iter().cloned().max_by(|a, b| a.norm().total_cmp(&b.norm())).expect("non-empty");
    let scale = Complex64::from_polar((m as f64).sqrt() / u.norm(), -big.arg());
    u.map(|c| c * scale)
}

pub fn diagonalize_linear(r: &RealPoly, omega: f64) -> Result<LinearDiagonal> {
    let grid = r.grid();
    let dz = r.nout();
    let m = grid.len();
    let ell = grid.ell() as i64;
    let a = linear_part(r);
    let model = AffineModel {
        grid,
        a: a.clone(),
        b: TorusFunction::zeros(grid, dz),
    };
    let spec = bundle_eigenproblem(&model, omega)?;
    let eigs = &spec.eigenvalues;
    let harm: Vec<usize> = (0..eigs.len()).map(|p| dominant_harmonic(&spec.vector(p), dz, grid)).collect();
    let mut order: Vec<usize> = (0..eigs.len()).collect();
    order.sort_by(|&p, &q| {
        harm[p]
            .cmp(&harm[q])
            .then(eigs[q].norm().total_cmp(&eigs[p].norm()))
            .then((eigs[q].im >= 0.0).cmp(&(eigs[p].im >= 0.0)))
            .then(p.cmp(&q))
    });
    let in_family = |q: usize, mu: Complex64| {
        (-2 * ell..=2 * ell).any(|k| (eigs[q] - mu * Complex64::from_polar(1.0, k as f64 * omega)).norm() < 1e-4 * mu.norm().max(1e-300))
    };
    // Groups of rows: (eigenvalues, per-coordinate rows as nodal vectors, key coordinate).
    let mut groups: Vec<(Vec<Complex64>, Vec<nalgebra::DVector<Complex64>>, usize)> = Vec::new();
    let mut remaining = order.clone();
    let mut count = 0;
    while count < dz {
        let Some(&p) = remaining.first() else { break };
        let lam = eigs[p];
        let u = normalise_row(&spec.vector(p), m);
        let key = (0..dz)
            .max_by(|&i, &j| u[i].norm().total_cmp(&u[j].norm()).then(j.cmp(&i)))
            .expect("dz > 0");
        if lam.im.abs() <= 1e-9 * lam.norm() {
            let imag = u.iter().map(|c| c.im * c.im).sum::<f64>().sqrt();
            if imag > 1e-6 * (m as f64).sqrt() {
                return Err(Error::NotRealizable { residual: imag });
            }
            groups.push((vec![Complex64::new(lam.re, 0.0)], vec![u.map(|c| Complex64::new(c.re, 0.0))], key));
            remaining.retain(|&q| !in_family(q, lam));
            count += 1;
        } else {
            groups.push((vec![lam, lam.conj()], vec![u.clone(), u.map(|c| c.conj())], key));
            remaining.retain(|&q| !in_family(q, lam) && !in_family(q, lam.conj()));
            count += 2;
        }
    }
    if count != dz {
        return Err(Error::UnsupportedMultiplicity { size: count * m, nodes: m });
    }
    groups.sort_by_key(|g| g.2);
    let mut lambda = Vec::with_capacity(dz);
    let mut rows = Vec::with_capacity(dz);
    let mut partner = Vec::with_capacity(dz);
    for (lams, us, _) in groups {
        let base = lambda.len();
        if lams.len() == 2 {
            partner.extend([base + 1, base]);
        } else {
            partner.push(base);
        }
        lambda.extend(lams);
        rows.extend(us);
    }
    let ud: Vec<DMatrix<Complex64>> = (0..m).map(|l| DMatrix::from_fn(dz, dz, |o, i| rows[o][i + dz * l])).collect();
    let mut ud_inv = Vec::with_capacity(m);
    for (l, u) in ud.iter().enumerate() {
        ud_inv.push(complex_inverse(u, 1e-12).ok_or(Error::SingularFrame { node: l })?);
    }
    let ud_next = shift_matrices(&ud, grid, omega);
    let inner = ComplexPoly::linear_map(r.basis().clone(), grid, &ud_inv);
    let rd = left_multiply(&ud_next, &r.to_complex().compose(&inner));
    Ok(LinearDiagonal {
        lambda,
        ud,
        ud_inv,
        partner,
        rd,
    })
}

/// Multi-index product `Π λ_i^{a_i}`.
fn lambda_power(lambda: &[Complex64], exponent: &[u8]) -> Complex64 {
    exponent
        .iter()
        .zip(lambda)
        .fold(Complex64::new(1.0, 0.0), |acc, (&e, &l)| acc * l.powu(e as u32))
}

/// One retained resonant coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonantTerm {
    pub output: usize,
    pub monomial: usize,
    pub harmonic: i64,
    pub divisor: f64,
}

#[derive(Debug, Clone)]
pub struct NormalFormModel {
    pub omega: f64,
    pub lambda: Vec<Complex64>,
    pub partner: Vec<usize>,
    pub ud: Vec<DMatrix<Complex64>>,
    pub ud_inv: Vec<DMatrix<Complex64>>,
    /// Near-identity transformation `T(z, θ)`.
    pub t: ComplexPoly,
    /// Autonomous normal form `R̆(z)`; identical at every node.
    pub rbreve: ComplexPoly,
    pub resonant: Vec<ResonantTerm>,
}

/// `T(R̆(z, θ), θ+ω) − Rᵈ(T(z, θ), θ)` truncated at the common degree.
pub fn conjugacy_residual(t: &ComplexPoly, rbreve: &ComplexPoly, rd: &ComplexPoly, omega: f64) -> ComplexPoly {
    let sigma = t.max_degree();
    let t_next = t.shifted_forward(&t.grid().shift(-omega));
    poly_compose(&t_next, rbreve, sigma).sub(&poly_compose(rd, t, sigma))
}

/// Degree-by-degree solution of the homological equations in harmonic space.
pub fn solve_homological(diag: &LinearDiagonal, omega: f64, resonance_tol: f64) -> Result<NormalFormModel> {
    let rd = &diag.rd;
    let grid = rd.grid();
    let basis = rd.basis().clone();
    let dz = rd.nout();
    let m = grid.len();
    let ell = grid.ell() as i64;
    let lambda = &diag.lambda;
    let mut t = ComplexPoly::identity(basis.clone(), grid);
    let mut rb = ComplexPoly::linear_map(basis.clone(), grid, &vec![DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lambda.clone())); m]);
    let mut resonant = Vec::new();
    for j in 2..=basis.max_degree() {
        let e = conjugacy_residual(&t, &rb, rd, omega);
        for i0 in 0..dz {
            for mono in basis.degree_range(j) {
                let nodal = DMatrix::from_fn(1, m, |_, l| -e.get(l, i0, mono));
                let gamma = dft_rows(&nodal, grid);
                let scale = gamma.iter().fold(0.0f64, |a, c| a.max(c.norm()));
                let lp = lambda_power(lambda, basis.exponent(mono));
                let mut t_hat = DMatrix::zeros(1, m);
                let mut r_hat = DMatrix::zeros(1, m);
                for c in 0..m {
                    let k = c as i64 - ell;
                    let g = gamma[(0, c)];
                    let div = lp * Complex64::from_polar(1.0, k as f64 * omega) - lambda[i0];
                    if div.norm() > resonance_tol * lambda[i0].norm() {
                        t_hat[(0, c)] = g / div;
                    } else if k == 0 {
                        r_hat[(0, c)] = g;
                        resonant.push(ResonantTerm {
                            output: i0,
                            monomial: mono,
                            harmonic: 0,
                            divisor: div.norm(),
                        });
                    } else if g.norm() > 1e-13 * scale {
                        return Err(Error::ParametricResonance {
                            harmonic: k,
                            divisor: div.norm(),
                        });
                    }
                }
                let tv = idft_rows(&t_hat, grid);
                let rv = idft_rows(&r_hat, grid);
                for l in 0..m {
                    t.set(l, i0, mono, tv[(0, l)]);
                    rb.set(l, i0, mono, rv[(0, l)]);
                }
            }
        }
    }
    Ok(NormalFormModel {
        omega,
        lambda: lambda.clone(),
        partner: diag.partner.clone(),
        ud: diag.ud.clone(),
        ud_inv: diag.ud_inv.clone(),
        t,
        rbreve: rb,
        resonant,
    })
}

/// Largest violation of `conj(c_{o,a}) = c_{Q(o),P(a)}` where `P` pairs conjugate variables
/// and `Q` pairs conjugate outputs (`None` for real outputs).
pub fn conjugation_defect(p: &ComplexPoly, partner: &[usize], outputs: Option<&[usize]>) -> f64 {
    let b = p.basis().clone();
    let mut worst = 0.0f64;
    let mut swapped = vec![0u8; b.nvars()];
    for mono in 0..b.len() {
        let e = b.exponent(mono);
        for (v, &pv) in partner.iter().enumerate() {
            swapped[pv] = e[v];
        }
        let q = b.index_of(&swapped).expect("swapped exponent has the same degree");
        for l in 0..p.grid().len() {
            for o in 0..p.nout() {
                let oq = outputs.map_or(o, |q| q[o]);
                worst = worst.max((p.get(l, o, mono).conj() - p.get(l, oq, q)).norm());
            }
        }
    }
    worst
}

/// `W̆(z, θ) = W(Uᵈ(θ)⁻¹ T(z, θ), θ)`.
pub fn compose_decoder(w: &DecoderPoly, nf: &NormalFormModel) -> Result<ComplexPoly> {
    let inner = left_multiply(&nf.ud_inv, &nf.t);
    let wb = poly_compose(&w.w.to_complex(), &inner, w.sigma());
    let defect = conjugation_defect(&wb, &nf.partner, None);
    let scale = wb.max_abs().max(1.0);
    if defect > 1e-9 * scale {
        return Err(Error::NotRealizable { residual: defect });
    }
    Ok(wb)
}

impl NormalFormModel {
    pub fn sigma(&self) -> usize {
        self.t.max_degree()
    }

    pub fn to_artifact(&self) -> Artifact {
        let mut art = Artifact::new("normal-form");
        let grid = self.t.grid();
        let dz = self.lambda.len();
        art.set("ell", grid.ell());
        art.set("omega", self.omega);
        art.set("sigma", self.sigma());
        art.set("dim_z", dz);
        art.set("partner", self.partner.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(","));
        art.push("lambda", DMatrix::from_fn(dz, 2, |i, c| if c == 0 { self.lambda[i].re } else { self.lambda[i].im }));
        let split = |name: &str, mats: &[DMatrix<Complex64>], art: &mut Artifact| {
            for (l, mat) in mats.iter().enumerate() {
                art.push(&format!("{name}{l}_re"), mat.map(|c| c.re));
                art.push(&format!("{name}{l}_im"), mat.map(|c| c.im));
            }
        };
        split("Ud", &self.ud, &mut art);
        split("UdInv", &self.ud_inv, &mut art);
        let nodes = |p: &ComplexPoly| -> Vec<DMatrix<Complex64>> {
            (0..grid.len())
                .map(|l| DMatrix::from_fn(p.nout(), p.basis().len(), |o, mo| p.get(l, o, mo)))
                .collect()
        };
        split("T", &nodes(&self.t), &mut art);
        split("Rbreve", &nodes(&self.rbreve), &mut art);
        let b = self.t.basis().clone();
        art.push(
            "resonant",
            DMatrix::from_fn(self.resonant.len(), 4 + dz, |r, c| {
                let term = &self.resonant[r];
                match c {
                    0 => term.output as f64,
                    1 => term.monomial as f64,
                    2 => term.harmonic as f64,
                    3 => term.divisor,
                    _ => b.exponent(term.monomial)[c - 4] as f64,
                }
            }),
        );
        art
    }

    pub fn from_artifact(art: &Artifact) -> Result<Self> {
        art.expect_kind("normal-form")?;
        let grid = CollocationGrid::new(art.parse("ell")?);
        let sigma: usize = art.parse("sigma")?;
        let dz: usize = art.parse("dim_z")?;
        let partner = art
            .get("partner")?
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| Error::Parse("bad partner list".into())))
            .collect::<Result<Vec<_>>>()?;
        let lam = art.block("lambda")?;
        let lambda = (0..dz).map(|i| Complex64::new(lam[(i, 0)], lam[(i, 1)])).collect();
        let join = |name: &str| -> Result<Vec<DMatrix<Complex64>>> {
            (0..grid.len())
                .map(|l| {
                    let re = art.block(&format!("{name}{l}_re"))?;
                    let im = art.block(&format!("{name}{l}_im"))?;
                    Ok(re.zip_map(im, Complex64::new))
                })
                .collect()
        };
        let basis = MonomialBasis::new(dz, sigma);
        let to_poly = |mats: Vec<DMatrix<Complex64>>| -> Result<ComplexPoly> {
            let mut p = ComplexPoly::zeros(basis.clone(), dz, grid);
            for (l, mat) in mats.iter().enumerate() {
                if mat.shape() != (dz, basis.len()) {
                    return Err(Error::Parse("normal-form block has the wrong shape".into()));
                }
                for o in 0..dz {
                    for mo in 0..basis.len() {
                        p.set(l, o, mo, mat[(o, mo)]);
                    }
                }
            }
            Ok(p)
        };
        let res = art.block("resonant")?;
        let resonant = (0..res.nrows())
            .map(|r| ResonantTerm {
                output: res[(r, 0)] as usize,
                monomial: res[(r, 1)] as usize,
                harmonic: res[(r, 2)] as i64,
                divisor: res[(r, 3)],
            })
            .collect();
        Ok(Self {
            omega: art.parse("omega")?,
            lambda,
            partner,
            ud: join("Ud")?,
            ud_inv: join("UdInv")?,
            t: to_poly(join("T")?)?,
            rbreve: to_poly(join("Rbreve")?)?,
            resonant,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn real_poly(dz: usize, sigma: usize, ell: usize, lin: &[DMatrix<f64>]) -> RealPoly {
        RealPoly::linear_map(MonomialBasis::new(dz, sigma), CollocationGrid::new(ell), lin)
    }

    #[test]
    fn diagonal_input_is_kept() {
        let r = real_poly(2, 2, 0, &[DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.3]))]);
        let d = diagonalize_linear(&r, 0.0).unwrap();
        assert!((d.lambda[0] - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        assert!((d.lambda[1] - Complex64::new(0.3, 0.0)).norm() < 1e-14);
        assert!((d.ud[0].clone() - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn rotation_scaling_block() {
        let (a, b) = (0.6, 0.7);
        let r = real_poly(2, 3, 0, &[DMatrix::from_row_slice(2, 2, &[a, -b, b, a])]);
        let d = diagonalize_linear(&r, 0.0).unwrap();
        assert!((d.lambda[0] - Complex64::new(a, b)).norm() < 1e-12);
        assert!((d.lambda[1] - Complex64::new(a, -b)).norm() < 1e-12);
        assert_eq!(d.partner, vec![1, 0]);
    }

    fn random_reducible(seed: u64, ell: usize, sigma: usize, omega: f64, nonlinear: f64) -> RealPoly {
        // A(θ) = P(θ+ω) B P(θ)⁻¹ with a constant rotation-scaling B.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = CollocationGrid::new(ell);
        let c = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
        let p = |th: f64| DMatrix::from_row_slice(2, 2, &[1.0 + c[0] * th.cos(), c[1] * th.sin(), 0.0, 1.0 + c[0] * th.sin()]);
        let b = DMatrix::from_row_slice(2, 2, &[0.9 * 0.8f64.cos(), -0.9 * 0.8f64.sin(), 0.9 * 0.8f64.sin(), 0.9 * 0.8f64.cos()]);
        let mats: Vec<DMatrix<f64>> = (0..grid.len())
            .map(|l| {
                let th = grid.node(l);
                p(th + omega) * &b * p(th).try_inverse().unwrap()
            })
            .collect();
        let mut r = real_poly(2, sigma, ell, &mats);
        let basis = r.basis().clone();
        for l in 0..grid.len() {
            for o in 0..2 {
                for mo in basis.degree_range(2).start..basis.len() {
                    r.set(l, o, mo, nonlinear * rng.random_range(-1.0..1.0));
                }
            }
        }
        r
    }

    #[test]
    fn diagonalisation_conjugacy_holds_on_reducible_inputs() {
        for seed in 0..5 {
            let omega = 0.9;
            let r = random_reducible(seed, 1, 1, omega, 0.0);
            let d = diagonalize_linear(&r, omega).unwrap();
            let b = d.rd.basis().clone();
            for l in 0..3 {
                for o in 0..2 {
                    for v in 0..2 {
                        let want = if o == v { d.lambda[o] } else { Complex64::new(0.0, 0.0) };
                        assert!((d.rd.get(l, o, b.linear(v)) - want).norm() < 1e-9);
                    }
                }
            }
            assert!((d.lambda[0].norm() - 0.9).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_map_gives_identity_transformation() {
        let r = real_poly(2, 3, 0, &[DMatrix::from_row_slice(2, 2, &[0.6, -0.7, 0.7, 0.6])]);
        let d = diagonalize_linear(&r, 0.0).unwrap();
        let nf = solve_homological(&d, 0.0, DEFAULT_RESONANCE_TOL).unwrap();
        assert!(nf.t.degree_part(2..4).max_abs() < 1e-15);
        assert!(nf.rbreve.degree_part(2..4).max_abs() < 1e-15);
    }

    fn one_dim_rd(lambda: Complex64, coeffs: &[(u8, u8, Complex64)], sigma: usize) -> LinearDiagonal {
        let grid = CollocationGrid::new(0);
        let basis = MonomialBasis::new(2, sigma);
        let mut rd = ComplexPoly::zeros(basis.clone(), 2, grid);
        rd.set(0, 0, basis.linear(0), lambda);
        rd.set(0, 1, basis.linear(1), lambda.conj());
        for &(a, b, c) in coeffs {
            let mo = basis.index_of(&[a, b]).unwrap();
            let mc = basis.index_of(&[b, a]).unwrap();
            rd.set(0, 0, mo, c);
            rd.set(0, 1, mc, c.conj());
        }
        LinearDiagonal {
            lambda: vec![lambda, lambda.conj()],
            ud: vec![DMatrix::identity(2, 2)],
            ud_inv: vec![DMatrix::identity(2, 2)],
            partner: vec![1, 0],
            rd,
        }
    }

    #[test]
    fn cubic_resonance_is_kept() {
        let lam = Complex64::from_polar(0.99, 0.8);
        let c = Complex64::new(0.3, -0.2);
        let d = one_dim_rd(lam, &[(2, 1, c)], 3);
        let nf = solve_homological(&d, 0.0, DEFAULT_RESONANCE_TOL).unwrap();
        let b = nf.t.basis().clone();
        let mo = b.index_of(&[2, 1]).unwrap();
        // λ²λ̄ − λ = λ(|λ|² − 1)
        let div = lam * lam * lam.conj() - lam;
        assert!((div - lam * (0.99 * 0.99 - 1.0)).norm() < 1e-15);
        assert!((nf.rbreve.get(0, 0, mo) - c).norm() < 1e-14);
        assert_eq!(nf.t.get(0, 0, mo), Complex64::new(0.0, 0.0));
        assert!(nf.resonant.iter().any(|r| r.output == 0 && r.monomial == mo && r.harmonic == 0));
    }

    #[test]
    fn non_resonant_quadratic_goes_into_transformation() {
        let lam = Complex64::from_polar(0.9, 1.1);
        let c = Complex64::new(0.25, 0.1);
        let d = one_dim_rd(lam, &[(2, 0, c)], 2);
        let nf = solve_homological(&d, 0.0, DEFAULT_RESONANCE_TOL).unwrap();
        let mo = nf.t.basis().index_of(&[2, 0]).unwrap();
        let div = lam * lam - lam;
        assert!(div.norm() > 0.1 * lam.norm());
        assert_eq!(nf.rbreve.get(0, 0, mo), Complex64::new(0.0, 0.0));
        assert!((nf.t.get(0, 0, mo) - c / div).norm() < 1e-14);
    }

    #[test]
    fn homological_residual_vanishes_and_terms_split() {
        for seed in 0..4 {
            let omega = 0.9;
            let r = random_reducible(seed + 10, 1, 4, omega, 0.2);
            let d = diagonalize_linear(&r, omega).unwrap();
            let nf = solve_homological(&d, omega, DEFAULT_RESONANCE_TOL).unwrap();
            let res = conjugacy_residual(&nf.t, &nf.rbreve, &d.rd, omega);
            assert!(res.max_abs() < 1e-9, "seed {seed}: {}", res.max_abs());
            let b = nf.t.basis().clone();
            let tc = dft_of(&nf.t);
            let rc = dft_of(&nf.rbreve);
            for o in 0..2 {
                for mo in b.degree_range(2).start..b.len() {
                    for c in 0..3 {
                        let (x, y) = (tc[o][mo][c].norm(), rc[o][mo][c].norm());
                        assert!(x < 1e-12 || y < 1e-12);
                        if c != 1 {
                            assert!(y < 1e-12, "non-autonomous normal form term");
                        }
                    }
                }
            }
            assert!(conjugation_defect(&nf.rbreve, &nf.partner, Some(&nf.partner)) < 1e-10);
        }
    }

    fn dft_of(p: &ComplexPoly) -> Vec<Vec<Vec<Complex64>>> {
        let grid = p.grid();
        (0..p.nout())
            .map(|o| {
                (0..p.basis().len())
                    .map(|mo| {
                        let nodal = DMatrix::from_fn(1, grid.len(), |_, l| p.get(l, o, mo));
                        dft_rows(&nodal, grid).iter().cloned().collect()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn parametric_resonance_is_rejected() {
        // λ² e^{-iω} = λ when λ = e^{iω}·0.999..., monomial z² at k = -1.
        let omega = 0.7;
        let lam = Complex64::from_polar(0.999, omega);
        let grid = CollocationGrid::new(1);
        let basis = MonomialBasis::new(2, 2);
        let mut rd = ComplexPoly::zeros(basis.clone(), 2, grid);
        for l in 0..3 {
            let th = grid.node(l);
            rd.set(l, 0, basis.linear(0), lam);
            rd.set(l, 1, basis.linear(1), lam.conj());
            let c = Complex64::from_polar(0.1, -th);
            rd.set(l, 0, basis.index_of(&[2, 0]).unwrap(), c);
            rd.set(l, 1, basis.index_of(&[0, 2]).unwrap(), c.conj());
        }
        let d = LinearDiagonal {
            lambda: vec![lam, lam.conj()],
            ud: vec![DMatrix::identity(2, 2); 3],
            ud_inv: vec![DMatrix::identity(2, 2); 3],
            partner: vec![1, 0],
            rd,
        };
        assert!(matches!(solve_homological(&d, omega, DEFAULT_RESONANCE_TOL), Err(Error::ParametricResonance { .. })));
    }

    #[test]
    fn identity_transformation_leaves_decoder() {
        let grid = CollocationGrid::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = RealPoly::zeros(MonomialBasis::new(2, 3), 3, grid);
        for c in w.coeffs_mut() {
            *c = rng.random_range(-1.0..1.0);
        }
        let dec = DecoderPoly { dz: 2, dc: 1, w: w.clone() };
        let nf = NormalFormModel {
            omega: 0.3,
            lambda: vec![Complex64::new(0.5, 0.0), Complex64::new(0.4, 0.0)],
            partner: vec![0, 1],
            ud: vec![DMatrix::identity(2, 2); 3],
            ud_inv: vec![DMatrix::identity(2, 2); 3],
            t: ComplexPoly::identity(MonomialBasis::new(2, 3), grid),
            rbreve: ComplexPoly::zeros(MonomialBasis::new(2, 3), 2, grid),
            resonant: vec![],
        };
        let wb = compose_decoder(&dec, &nf).unwrap();
        assert!((wb.sub(&w.to_complex())).max_abs() < 1e-15);
    }

    #[test]
    fn decoder_invariance_against_synthetic_map() {
        // F̆(x) = W(R(W⁻¹ x)) is never formed; instead check W̆(R̆(z)) = W(Uᵈ⁻¹ T(R̆ z))
        // = W(Uᵈ⁻¹ Rᵈ(T z)) = W(R(Uᵈ⁻¹ T z)) which only uses the conjugacy.
        let omega = 0.0;
        let r = random_reducible(40, 0, 3, omega, 0.3);
        let d = diagonalize_linear(&r, omega).unwrap();
        let nf = solve_homological(&d, omega, DEFAULT_RESONANCE_TOL).unwrap();
        let grid = r.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut w = RealPoly::zeros(MonomialBasis::new(2, 3), 3, grid);
        for c in w.coeffs_mut() {
            *c = rng.random_range(-1.0..1.0);
        }
        let dec = DecoderPoly { dz: 2, dc: 1, w };
        let wb = compose_decoder(&dec, &nf).unwrap();
        let lhs = poly_compose(&wb, &nf.rbreve, 3);
        let inner = left_multiply(&nf.ud_inv, &nf.t);
        let rhs = poly_compose(&dec.w.to_complex(), &poly_compose(&r.to_complex(), &inner, 3), 3);
        assert!(lhs.sub(&rhs).max_abs() < 1e-8);
    }

    #[test]
    fn artifact_round_trip() {
        let r = random_reducible(50, 1, 3, 0.9, 0.2);
        let d = diagonalize_linear(&r, 0.9).unwrap();
        let nf = solve_homological(&d, 0.9, DEFAULT_RESONANCE_TOL).unwrap();
        let back = NormalFormModel::from_artifact(&Artifact::from_text(&nf.to_artifact().to_text()).unwrap()).unwrap();
        assert_eq!(back.t, nf.t);
        assert_eq!(back.rbreve, nf.rbreve);
        assert_eq!(back.lambda, nf.lambda);
        assert_eq!(back.resonant, nf.resonant);
        assert_eq!(back.partner, nf.partner);
    }
}
