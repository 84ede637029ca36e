//! Instantaneous frequency and damping of a single oscillatory mode.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::normalform::NormalFormModel;
use crate::poly::ComplexPoly;

/// `s(z, z̄) = Σ c_p z^{p+1} z̄^p`, the `Im λ ≥ 0` component of the autonomous normal form.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarMap {
    /// `c_p` for `p = 0, 1, ...`.
    pub coeffs: Vec<Complex64>,
}

impl PolarMap {
    /// `e^{−iβ} s(r e^{iβ}, r e^{−iβ})`, which is independent of `β`.
    fn reduced(&self, r: f64) -> Complex64 {
        let r2 = r * r;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut pw = r;
        for c in &self.coeffs {
            acc += c * pw;
            pw *= r2;
        }
        acc
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        let r = z.norm();
        if r == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        self.reduced(r) * (z / r)
    }

    pub fn lambda(&self) -> Complex64 {
        self.coeffs[0]
    }

    /// `R(r) = |s|`.
    pub fn radius(&self, r: f64) -> f64 {
        self.reduced(r).norm()
    }

    /// `T(r) = arg e^{−iβ}s`, unwrapped continuously from `T(0) = arg λ`.
    pub fn angle(&self, r: f64) -> f64 {
        let lam = self.lambda();
        let q = |x: f64| {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut pw = 1.0;
            for c in &self.coeffs {
                acc += c / lam * pw;
                pw *= x * x;
            }
            acc
        };
        let steps = 64;
        let mut phase = 0.0;
        let mut prev = q(0.0);
        for i in 1..=steps {
            let cur = q(r * i as f64 / steps as f64);
            phase += (cur / prev).arg();
            prev = cur;
        }
        lam.arg() + phase
    }
}

/// `(a, b)` with `z^a z̄^b`, where `z` is coordinate `primary`.
fn zz_exponent(e: &[u8], primary: usize) -> (i32, i32) {
    (e[primary] as i32, e[1 - primary] as i32)
}

/// Largest coefficient of `s` that is not of the form `z^{p+1} z̄^p`.
pub fn polar_leak(s: &ComplexPoly, primary: usize) -> f64 {
    let b = s.basis().clone();
    (0..b.len())
        .filter(|&m| {
            let (a, c) = zz_exponent(b.exponent(m), primary);
            a - c != 1
        })
        .map(|m| s.get(0, 0, m).norm())
        .fold(0.0, f64::max)
}

/// Coordinate of the conjugate pair whose eigenvalue has `Im λ ≥ 0`.
pub fn primary_coordinate(nf: &NormalFormModel) -> Result<usize> {
    if nf.lambda.len() != 2 || nf.partner != [1, 0] {
        return Err(Error::Unsupported(
            "backbone curves need a single complex conjugate pair".into(),
        ));
    }
    Ok(if nf.lambda[0].im >= 0.0 { 0 } else { 1 })
}

pub fn polar_from_normal_form(nf: &NormalFormModel) -> Result<PolarMap> {
    let primary = primary_coordinate(nf)?;
    let s = nf.rbreve.output(primary);
    let deviation = polar_leak(&s, primary);
    if deviation > 1e-8 {
        return Err(Error::NonResonantLeak { deviation });
    }
    let b = s.basis().clone();
    let mut coeffs = Vec::new();
    let mut p = 0u8;
    let mut e = [0u8; 2];
    loop {
        e[primary] = p + 1;
        e[1 - primary] = p;
        match b.index_of(&e) {
            Some(m) => coeffs.push(s.get(0, 0, m)),
            None => break,
        }
        p += 1;
    }
    Ok(PolarMap { coeffs })
}

/// `Ŵ(r, β, θ) = W̆(r e^{iβ}, r e^{−iβ}, θ)` sampled on a uniform `(β, θ)` grid.
pub struct TorusDecoder {
    /// Exponents `(a, b)` of the monomials.
    exps: Vec<(i32, i32)>,
    /// Per θ-sample: coefficients `[out][mono]`.
    eff: Vec<Vec<Complex64>>,
    nout: usize,
    quad_n: usize,
}

impl TorusDecoder {
    /// `primary` selects which variable of `wb` plays the role of `z`.
    pub fn new(wb: &ComplexPoly, primary: usize, quad_n: usize) -> Result<Self> {
        if wb.nvars() != 2 {
            return Err(Error::Unsupported("the decoder must act on one conjugate pair".into()));
        }
        let grid = wb.grid();
        let b = wb.basis().clone();
        let exps = (0..b.len()).map(|m| zz_exponent(b.exponent(m), primary)).collect();
        let thetas = if grid.len() == 1 { 1 } else { quad_n };
        let eff = (0..thetas)
            .map(|q| {
                let th = std::f64::consts::TAU * q as f64 / thetas as f64;
                wb.effective(grid.weights(th).as_slice())
            })
            .collect();
        Ok(Self {
            exps,
            eff,
            nout: wb.nout(),
            quad_n: quad_n.max(1),
        })
    }

    /// Visit `(Ŵ − Ŵ(0), D₁Ŵ, D₂Ŵ)` at every quadrature point.
    fn visit(&self, r: f64, mut f: impl FnMut(&[f64], &[f64], &[f64])) {
        let nm = self.exps.len();
        let mut val = vec![0.0; self.nout];
        let mut dr = vec![0.0; self.nout];
        let mut db = vec![0.0; self.nout];
        let mut mono = vec![Complex64::new(0.0, 0.0); nm];
        let mut mono_r = vec![Complex64::new(0.0, 0.0); nm];
        let mut mono_b = vec![Complex64::new(0.0, 0.0); nm];
        for k in 0..self.quad_n {
            let beta = std::f64::consts::TAU * k as f64 / self.quad_n as f64;
            for (m, &(a, b)) in self.exps.iter().enumerate() {
                let deg = a + b;
                let ph = Complex64::from_polar(1.0, (a - b) as f64 * beta);
                let rp = if deg == 0 { 1.0 } else { r.powi(deg) };
                mono[m] = if deg == 0 { Complex64::new(0.0, 0.0) } else { ph * rp };
                mono_r[m] = if deg == 0 { Complex64::new(0.0, 0.0) } else { ph * (deg as f64 * r.powi(deg - 1)) };
                mono_b[m] = mono[m] * Complex64::new(0.0, (a - b) as f64);
            }
            for eff in &self.eff {
                for o in 0..self.nout {
                    let row = &eff[o * nm..(o + 1) * nm];
                    let (mut v, mut vr, mut vb) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
                    for m in 0..nm {
                        v += row[m] * mono[m];
                        vr += row[m] * mono_r[m];
                        vb += row[m] * mono_b[m];
                    }
                    val[o] = v.re;
                    dr[o] = vr.re;
                    db[o] = vb.re;
                }
                f(&val, &dr, &db);
            }
        }
    }

    fn samples(&self) -> f64 {
        (self.quad_n * self.eff.len()) as f64
    }

    /// Root-mean-square distance of the torus `Ŵ(r, ·, ·)` from `Ŵ(0, ·, ·)`.
    pub fn kappa(&self, r: f64) -> f64 {
        let mut acc = 0.0;
        self.visit(r, |v, _, _| acc += v.iter().map(|x| x * x).sum::<f64>());
        (acc / self.samples()).sqrt()
    }

    /// `α̇(r) = −∫⟨D₁Ŵ, D₂Ŵ⟩ / ∫⟨D₂Ŵ, D₂Ŵ⟩`.
    pub fn alpha_dot(&self, r: f64) -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        self.visit(r, |_, dr, db| {
            num += dr.iter().zip(db).map(|(a, b)| a * b).sum::<f64>();
            den += db.iter().map(|b| b * b).sum::<f64>();
        });
        if !(den > 1e-300) {
            return Err(Error::VanishingDenominator { r });
        }
        Ok(-num / den)
    }
}

pub fn kappa(wb: &ComplexPoly, r: f64, quad_n: usize) -> Result<f64> {
    Ok(TorusDecoder::new(wb, 0, quad_n)?.kappa(r))
}

/// Solve `f(ρ) = r` for every target by bisection, after checking that the samples
/// `f(grid)` increase strictly.
pub fn invert_kappa(f: impl Fn(f64) -> f64, grid: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    let vals: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    for i in 1..grid.len() {
        if !(vals[i] > vals[i - 1]) {
            return Err(Error::NonMonotone {
                lo: grid[i - 1],
                hi: grid[i],
            });
        }
    }
    targets
        .iter()
        .map(|&target| {
            if target <= vals[0] {
                return Ok(grid[0]);
            }
            let i = vals.partition_point(|&v| v < target);
            if i == vals.len() {
                return Err(Error::Config(format!(
                    "amplitude {target} lies beyond the sampled range ending at {}",
                    vals[vals.len() - 1]
                )));
            }
            let (mut lo, mut hi) = (grid[i - 1], grid[i]);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
                    break;
                }
            }
            Ok(0.5 * (lo + hi))
        })
        .collect()
}

/// `α` on `grid` (starting at 0) from `α̇` by cumulative trapezoid; also returns `α̇`.
pub fn phase_correction(dec: &TorusDecoder, grid: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rates = Vec::with_capacity(grid.len());
    for &r in grid {
        rates.push(if r > 0.0 { dec.alpha_dot(r)? } else { f64::NAN });
    }
    if grid.len() > 2 && grid[0] == 0.0 {
        rates[0] = 2.0 * rates[1] - rates[2];
    } else if grid.len() == 2 && grid[0] == 0.0 {
        rates[0] = rates[1];
    }
    let mut alpha = vec![0.0; grid.len()];
    for i in 1..grid.len() {
        alpha[i] = alpha[i - 1] + 0.5 * (grid[i] - grid[i - 1]) * (rates[i] + rates[i - 1]);
    }
    Ok((alpha, rates))
}

/// Cubic Hermite interpolation of samples with known slopes.
fn hermite(x: &[f64], y: &[f64], dy: &[f64], at: f64) -> f64 {
    let n = x.len();
    let i = x.partition_point(|&v| v <= at).clamp(1, n - 1);
    let (x0, x1) = (x[i - 1], x[i]);
    let h = x1 - x0;
    let s = (at - x0) / h;
    let (h00, h10, h01, h11) = (
        2.0 * s.powi(3) - 3.0 * s * s + 1.0,
        s.powi(3) - 2.0 * s * s + s,
        -2.0 * s.powi(3) + 3.0 * s * s,
        s.powi(3) - s * s,
    );
    h00 * y[i - 1] + h10 * h * dy[i - 1] + h01 * y[i] + h11 * h * dy[i]
}

/// Frequency and damping ratio of a linear map eigenvalue with the backbone conventions.
pub fn linear_values(lambda: Complex64, dt: f64) -> (f64, f64) {
    let t = lambda.arg();
    (t / dt, -lambda.norm().ln() / t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneCurve {
    pub dt: f64,
    pub r: Vec<f64>,
    pub omega: Vec<f64>,
    /// Positive for decaying motion.
    pub zeta: Vec<f64>,
    pub rho: Vec<f64>,
    /// `α(ρ(r))`.
    pub alpha: Vec<f64>,
}

impl BackboneCurve {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# dt = {}\n# zeta > 0 means decay\n# r is the rms distance from the torus in frame coordinates\nr,omega,zeta,rho,alpha\n",
            self.dt
        );
        for i in 0..self.r.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.r[i], self.omega[i], self.zeta[i], self.rho[i], self.alpha[i]
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut dt = f64::NAN;
        let mut cols: [Vec<f64>; 5] = Default::default();
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("dt =") {
                    dt = v.trim().parse().map_err(|_| Error::Parse("bad dt".into()))?;
                }
                continue;
            }
            if line.is_empty() || line.starts_with('r') {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad backbone row: {line}"))))
                .collect::<Result<_>>()?;
            if vals.len() != 5 {
                return Err(Error::Parse(format!("backbone row needs 5 columns: {line}")));
            }
            for (c, v) in cols.iter_mut().zip(vals) {
                c.push(v);
            }
        }
        let [r, omega, zeta, rho, alpha] = cols;
        Ok(Self { dt, r, omega, zeta, rho, alpha })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneOptions {
    pub n_samples: usize,
    pub quad_n: usize,
    /// Resolution of the `ρ` grid used for monotonicity and the phase integral.
    pub fine_samples: usize,
}

impl Default for BackboneOptions {
    fn default() -> Self {
        Self {
            n_samples: 100,
            quad_n: 64,
            fine_samples: 400,
        }
    }
}

/// `ω(r) = T̃(r)/Δt`, `ζ(r) = −log(R̃(r)/r)/T̃(r)` on `r ∈ [0, r_max]`.
pub fn backbone(nf: &NormalFormModel, wb: &ComplexPoly, dt: f64, r_max: f64, opts: &BackboneOptions) -> Result<BackboneCurve> {
    if !(r_max > 0.0) || opts.n_samples < 2 {
        return Err(Error::Config("backbone needs r_max > 0 and at least two samples".into()));
    }
    let polar = polar_from_normal_form(nf)?;
    let dec = TorusDecoder::new(wb, primary_coordinate(nf)?, opts.quad_n)?;
    let kap = |x: f64| dec.kappa(x);
    // Bracket ρ(r_max).
    let probe = 1e-3 * r_max;
    let slope = kap(probe) / probe;
    if !(slope > 0.0) {
        return Err(Error::VanishingDenominator { r: 0.0 });
    }
    let mut rho_hi = r_max / slope;
    let mut tries = 0;
    while kap(rho_hi) < r_max {
        rho_hi *= 1.25;
        tries += 1;
        if tries > 100 {
            return Err(Error::NonMonotone { lo: 0.0, hi: rho_hi });
        }
    }
    let nf_ = opts.fine_samples.max(8);
    let fine: Vec<f64> = (0..=nf_).map(|i| rho_hi * i as f64 / nf_ as f64).collect();
    let (alpha_f, rate_f) = phase_correction(&dec, &fine)?;
    let r: Vec<f64> = (0..opts.n_samples).map(|i| r_max * i as f64 / (opts.n_samples - 1) as f64).collect();
    let rho = invert_kappa(kap, &fine, &r)?;
    let (w0, z0) = linear_values(polar.lambda(), dt);
    let mut omega = Vec::with_capacity(r.len());
    let mut zeta = Vec::with_capacity(r.len());
    let mut alpha = Vec::with_capacity(r.len());
    for (&ri, &pi) in r.iter().zip(&rho) {
        let a = hermite(&fine, &alpha_f, &rate_f, pi);
        alpha.push(a);
        if ri == 0.0 {
            omega.push(w0);
            zeta.push(z0);
            continue;
        }
        let rr = polar.radius(pi);
        let rt = kap(rr);
        let tt = polar.angle(pi) + a - hermite(&fine, &alpha_f, &rate_f, rr);
        omega.push(tt / dt);
        zeta.push(-(rt / ri).ln() / tt);
    }
    Ok(BackboneCurve {
        dt,
        r,
        omega,
        zeta,
        rho,
        alpha,
    })
}
