//! Benchmark vector fields, a fixed-step RK4 integrator and synthetic data generation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::fourier::normalize_angle;

pub type Rhs = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
pub type Jacobian = dyn Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync;

/// `ẋ = f(x, θ)`, `θ̇ = ω₀`.
#[derive(Clone)]
pub struct ForcedSystem {
    pub name: String,
    pub dim: usize,
    pub omega0: f64,
    pub params: BTreeMap<String, f64>,
    /// Reference state: sampling balls are centred here.
    pub equilibrium: DVector<f64>,
    rhs: Arc<Rhs>,
    jacobian: Option<Arc<Jacobian>>,
}

impl std::fmt::Debug for ForcedSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForcedSystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("omega0", &self.omega0)
            .field("params", &self.params)
            .finish()
    }
}

impl ForcedSystem {
    pub fn new<F>(name: &str, dim: usize, omega0: f64, rhs: F) -> Self
    where
        F: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            name: name.to_string(),
            dim,
            omega0,
            params: BTreeMap::new(),
            equilibrium: DVector::zeros(dim),
            rhs: Arc::new(rhs),
            jacobian: None,
        }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn eval(&self, x: &[f64], theta: f64, out: &mut [f64]) {
        (self.rhs)(x, theta, out)
    }

    pub fn eval_vec(&self, x: &DVector<f64>, theta: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        (self.rhs)(x.as_slice(), theta, out.as_mut_slice());
        out
    }

    /// Analytic Jacobian when available, otherwise central differences.
    pub fn jacobian(&self, x: &DVector<f64>, theta: f64) -> DMatrix<f64> {
        if let Some(j) = &self.jacobian {
            return j(x.as_slice(), theta);
        }
        let n = self.dim;
        let mut jac = DMatrix::zeros(n, n);
        for c in 0..n {
            let h = 1e-6 * (1.0 + x[c].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let d = (self.eval_vec(&xp, theta) - self.eval_vec(&xm, theta)) / (2.0 * h);
            jac.set_column(c, &d);
        }
        jac
    }

    pub fn shaw_pierre(p: ShawPierreParams) -> Self {
        let mut sys = Self::new("shaw-pierre", 4, p.omega0, move |x, th, out| {
            out.copy_from_slice(&shaw_pierre_rhs(x, th, &p))
        })
        .with_jacobian(move |x, _| shaw_pierre_jacobian(x, &p));
        sys.params = BTreeMap::from([
            ("k".into(), p.k),
            ("kappa".into(), p.kappa),
            ("c".into(), p.c),
            ("A".into(), p.amplitude),
        ]);
        sys
    }

    pub fn traffic(p: TrafficParams) -> Self {
        let mut sys = Self::new("traffic", 2 * TRAFFIC_CARS - 1, p.omega0, move |x, th, out| {
            out.copy_from_slice(&traffic_rhs(x, th, &p))
        })
        .with_jacobian(move |x, th| traffic_jacobian(x, th, &p));
        sys.equilibrium = traffic_equilibrium(&p);
        sys.params = BTreeMap::from([
            ("alpha".into(), p.alpha),
            ("L".into(), p.track_length),
            ("A".into(), p.amplitude),
        ]);
        sys
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShawPierreParams {
    pub k: f64,
    pub kappa: f64,
    pub c: f64,
    pub amplitude: f64,
    pub omega0: f64,
}

impl Default for ShawPierreParams {
    fn default() -> Self {
        Self {
            k: 1.0,
            kappa: 0.2,
            c: 1.0 / 32.0,
            amplitude: 0.0,
            omega0: 2.0 * PI / 8.0,
        }
    }
}

pub fn shaw_pierre_rhs(x: &[f64], theta: f64, p: &ShawPierreParams) -> [f64; 4] {
    let (k, c) = (p.k, p.c);
    let [x1, x2, x3, x4] = [x[0], x[1], x[2], x[3]];
    [
        x3,
        x4,
        -c * x3 - k * x1 - p.kappa * x1 * x1 * x1 + k * (x2 - x1) + c * (x4 - x3)
            + p.amplitude * (theta + 0.1).cos(),
        -c * x4 - k * x2 - k * (x2 - x1) - c * (x4 - x3) + p.amplitude * theta.cos(),
    ]
}

pub fn shaw_pierre_jacobian(x: &[f64], p: &ShawPierreParams) -> DMatrix<f64> {
    let (k, c) = (p.k, p.c);
    let cubic = 3.0 * p.kappa * x[0] * x[0];
    DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            -2.0 * k - cubic, k, -2.0 * c, c, //
            k, -2.0 * k, c, -2.0 * c,
        ],
    )
}

pub const TRAFFIC_CARS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficParams {
    pub alpha: f64,
    pub track_length: f64,
    pub amplitude: f64,
    pub omega0: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            track_length: 2.0 * TRAFFIC_CARS as f64,
            amplitude: 0.0,
            omega0: 0.4374,
        }
    }
}

fn optimal_velocity(h: f64) -> f64 {
    let d = (h - 1.0) * (h - 1.0);
    d / (1.0 + d)
}

fn optimal_velocity_slope(h: f64) -> f64 {
    let s = h - 1.0;
    let d = 1.0 + s * s;
    2.0 * s / (d * d)
}

fn headways(x: &[f64], p: &TrafficParams) -> [f64; TRAFFIC_CARS] {
    let n = TRAFFIC_CARS;
    let mut h = [0.0; TRAFFIC_CARS];
    h[1..n].copy_from_slice(&x[n..2 * n - 1]);
    h[0] = p.track_length - h[1..].iter().sum::<f64>();
    h
}

/// State is `(v₁..v₅, h₂..h₅)`; `h₁` is eliminated through the track length.
pub fn traffic_rhs(x: &[f64], theta: f64, p: &TrafficParams) -> Vec<f64> {
    let n = TRAFFIC_CARS;
    let h = headways(x, p);
    let mut out = vec![0.0; 2 * n - 1];
    for k in 0..n {
        let vmax = if k == n - 1 { 1.0 + p.amplitude * theta.cos() } else { 1.0 };
        out[k] = p.alpha * (vmax * optimal_velocity(h[k]) - x[k]);
    }
    for k in 1..n {
        out[n + k - 1] = x[k - 1] - x[k];
    }
    out
}

pub fn traffic_jacobian(x: &[f64], theta: f64, p: &TrafficParams) -> DMatrix<f64> {
    let n = TRAFFIC_CARS;
    let h = headways(x, p);
    let mut j = DMatrix::zeros(2 * n - 1, 2 * n - 1);
    for k in 0..n {
        let vmax = if k == n - 1 { 1.0 + p.amplitude * theta.cos() } else { 1.0 };
        j[(k, k)] = -p.alpha;
        let slope = p.alpha * vmax * optimal_velocity_slope(h[k]);
        if k == 0 {
            for m in 1..n {
                j[(0, n + m - 1)] = -slope;
            }
        } else {
            j[(k, n + k - 1)] = slope;
        }
    }
    for k in 1..n {
        j[(n + k - 1, k - 1)] = 1.0;
        j[(n + k - 1, k)] = -1.0;
    }
    j
}

pub fn traffic_equilibrium(p: &TrafficParams) -> DVector<f64> {
    let n = TRAFFIC_CARS;
    let h = p.track_length / n as f64;
    let v = optimal_velocity(h);
    DVector::from_fn(2 * n - 1, |i, _| if i < n { v } else { h })
}

/// Classical RK4 over `steps` sampling intervals; returns `steps + 1` states including `x0`.
pub fn integrate(
    sys: &ForcedSystem,
    x0: &DVector<f64>,
    theta0: f64,
    dt: f64,
    steps: usize,
    substeps: usize,
) -> Result<Vec<DVector<f64>>> {
    if substeps == 0 {
        return Err(Error::Config("substeps must be at least 1".into()));
    }
    if x0.len() != sys.dim {
        return Err(Error::Dimension(format!(
            "initial state has {} components, system has {}",
            x0.len(),
            sys.dim
        )));
    }
    let n = sys.dim;
    let h = dt / substeps as f64;
    let mut x = x0.clone();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x.clone());
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for step in 0..steps {
        for sub in 0..substeps {
            let t = step as f64 * dt + sub as f64 * h;
            let th = theta0 + sys.omega0 * t;
            let th_mid = th + 0.5 * h * sys.omega0;
            let th_end = th + h * sys.omega0;
            sys.eval(x.as_slice(), th, &mut k1);
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * h * k1[i];
            }
            sys.eval(&tmp, th_mid, &mut k2);
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * h * k2[i];
            }
            sys.eval(&tmp, th_mid, &mut k3);
            for i in 0..n {
                tmp[i] = x[i] + h * k3[i];
            }
            sys.eval(&tmp, th_end, &mut k4);
            for i in 0..n {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                step: step + 1,
                time: (step + 1) as f64 * dt,
            });
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Uniform sample from the ball of given radius centred at the origin.
pub fn sample_ball<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 0.0 {
            let u: f64 = rng.random();
            return g * (radius * u.powf(1.0 / dim as f64) / norm);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    pub n_traj: usize,
    pub n_points: usize,
    pub dt: f64,
    pub radius: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub substeps: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            n_traj: 600,
            n_points: 50,
            dt: 0.8,
            radius: 1.0,
            noise_sigma: 0.0,
            seed: 1,
            substeps: 16,
        }
    }
}

/// Trajectories started uniformly in a ball about `sys.equilibrium` with uniform phases.
/// Each trajectory draws from its own ChaCha stream, so the output does not depend on order.
pub fn generate_dataset(sys: &ForcedSystem, opts: &GenerateOptions) -> Result<TrajectoryDataset> {
    if opts.n_traj == 0 || opts.n_points == 0 {
        return Err(Error::Config("n_traj and n_points must be at least 1".into()));
    }
    if !(opts.dt > 0.0) || opts.radius < 0.0 || opts.noise_sigma < 0.0 {
        return Err(Error::Config("dt must be positive, radius and noise_sigma non-negative".into()));
    }
    let n = sys.dim;
    let pairs = opts.n_points - 1;
    let total = opts.n_traj * pairs;
    let mut xs = DMatrix::zeros(n, total);
    let mut ys = DMatrix::zeros(n, total);
    let mut theta = Vec::with_capacity(total);
    let mut ids = Vec::with_capacity(total);
    let omega = sys.omega0 * opts.dt;
    let mut col = 0;
    for traj in 0..opts.n_traj {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(traj as u64);
        let mut x = &sys.equilibrium + sample_ball(&mut rng, n, opts.radius);
        let th0: f64 = rng.random::<f64>() * 2.0 * PI;
        for k in 0..pairs {
            let th = th0 + k as f64 * omega;
            let mut y = integrate(sys, &x, th, opts.dt, 1, opts.substeps)
                .map_err(|e| match e {
                    Error::NonFiniteState { .. } => Error::NonFiniteState {
                        step: k + 1,
                        time: (k + 1) as f64 * opts.dt,
                    },
                    e => e,
                })?
                .pop()
                .expect("one step");
            if opts.noise_sigma > 0.0 {
                for v in y.iter_mut() {
                    *v += opts.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
            xs.set_column(col, &x);
            ys.set_column(col, &y);
            theta.push(normalize_angle(th));
            ids.push(traj);
            col += 1;
            x = y;
        }
    }
    let mut ds = TrajectoryDataset::new(xs, ys, theta, ids, opts.dt, omega)?;
    ds.seed = Some(opts.seed);
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eig;
    use approx::assert_abs_diff_eq;

    #[test]
    fn shaw_pierre_origin_is_equilibrium() {
        let p = ShawPierreParams::default();
        assert_eq!(shaw_pierre_rhs(&[0.0; 4], 1.3, &p), [0.0; 4]);
    }

    #[test]
    fn shaw_pierre_cubic_term() {
        let p = ShawPierreParams::default();
        let f = shaw_pierre_rhs(&[1.0, 0.0, 0.0, 0.0], 0.0, &p);
        // -k - kappa - k = -2.2 ; second mass sees +k
        assert_abs_diff_eq!(f[2], -2.2, epsilon = 1e-15);
        assert_abs_diff_eq!(f[3], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn shaw_pierre_jacobian_matches_differences() {
        let p = ShawPierreParams { amplitude: 0.3, ..Default::default() };
        let sys = ForcedSystem::shaw_pierre(p);
        let x = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.5]);
        let analytic = sys.jacobian(&x, 0.4);
        let mut fd = sys.clone();
        fd.jacobian = None;
        assert!((analytic - fd.jacobian(&x, 0.4)).amax() < 1e-8);
    }

    #[test]
    fn shaw_pierre_linear_spectrum() {
        let p = ShawPierreParams::default();
        let (vals, _) = eig(&shaw_pierre_jacobian(&[0.0; 4], &p)).unwrap();
        let mut freq: Vec<(f64, f64)> = vals
            .iter()
            .filter(|l| l.im > 0.0)
            .map(|l| (l.im, -l.re / l.norm()))
            .collect();
        freq.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((freq[0].0 - 1.0).abs() < 1e-3);
        assert!((freq[1].0 - 1.7314).abs() < 1e-4);
        assert!((freq[0].1 - 0.0156).abs() < 1e-4);
        assert!((freq[1].1 - 0.0271).abs() < 1e-4);
    }

    #[test]
    fn traffic_equilibrium_is_stationary() {
        let p = TrafficParams::default();
        let eq = traffic_equilibrium(&p);
        assert_abs_diff_eq!(eq[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(eq[5], 2.0, epsilon = 1e-15);
        let f = traffic_rhs(eq.as_slice(), 0.7, &p);
        assert!(f.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn traffic_unforced_is_phase_independent() {
        let p = TrafficParams::default();
        let x: Vec<f64> = (0..9).map(|i| 0.3 + 0.2 * i as f64).collect();
        assert_eq!(traffic_rhs(&x, 0.0, &p), traffic_rhs(&x, 2.1, &p));
    }

    #[test]
    fn traffic_jacobian_matches_differences() {
        let p = TrafficParams { amplitude: 0.2, ..Default::default() };
        let sys = ForcedSystem::traffic(p);
        let x = DVector::from_fn(9, |i, _| if i < 5 { 0.4 + 0.05 * i as f64 } else { 1.8 + 0.1 * i as f64 });
        let mut fd = sys.clone();
        fd.jacobian = None;
        assert!((sys.jacobian(&x, 1.0) - fd.jacobian(&x, 1.0)).amax() < 1e-8);
    }

    #[test]
    fn integrator_matches_exponential() {
        let sys = ForcedSystem::new("decay", 1, 0.0, |x, _, out| out[0] = -x[0]);
        let traj = integrate(&sys, &DVector::from_element(1, 1.0), 0.0, 0.1, 1, 10).unwrap();
        assert_abs_diff_eq!(traj[1][0], (-0.1f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn integrator_matches_matrix_exponential() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.1, 1.0, -1.0, -0.1]);
        let a2 = a.clone();
        let sys = ForcedSystem::new("linear", 2, 0.0, move |x, _, out| {
            out[0] = a2[(0, 0)] * x[0] + a2[(0, 1)] * x[1];
            out[1] = a2[(1, 0)] * x[0] + a2[(1, 1)] * x[1];
        });
        let x0 = DVector::from_vec(vec![1.0, 0.5]);
        let traj = integrate(&sys, &x0, 0.0, 0.8, 3, 80).unwrap();
        for (k, x) in traj.iter().enumerate() {
            let exact = (a.clone() * (0.8 * k as f64)).exp() * &x0;
            assert!((x - exact).amax() < 1e-8);
        }
    }

    #[test]
    fn zero_field_is_constant() {
        let sys = ForcedSystem::new("zero", 3, 1.0, |_, _, out| out.fill(0.0));
        let x0 = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        for x in integrate(&sys, &x0, 0.0, 0.5, 5, 4).unwrap() {
            assert_eq!(x, x0);
        }
    }

    #[test]
    fn non_finite_state_is_reported() {
        let sys = ForcedSystem::new("blowup", 1, 0.0, |x, _, out| out[0] = x[0] * x[0]);
        let err = integrate(&sys, &DVector::from_element(1, 1.0), 0.0, 1.0, 5, 1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { .. }));
    }

    #[test]
    fn unforced_shaw_pierre_decays() {
        let sys = ForcedSystem::shaw_pierre(ShawPierreParams::default());
        let x0 = DVector::from_vec(vec![1e-3, 0.0, 0.0, 0.0]);
        let traj = integrate(&sys, &x0, 0.0, 0.8, 50, 16).unwrap();
        // The quadratic energy of the linearisation is a Lyapunov function.
        let energy = |x: &DVector<f64>| {
            0.5 * (x[2] * x[2] + x[3] * x[3]) + 0.5 * (x[0] * x[0] + x[1] * x[1] + (x[1] - x[0]).powi(2))
        };
        for w in traj.windows(2) {
            assert!(energy(&w[1]) < energy(&w[0]));
        }
    }

    fn small_opts() -> GenerateOptions {
        GenerateOptions { n_traj: 7, n_points: 6, dt: 0.8, radius: 0.5, noise_sigma: 0.0, seed: 11, substeps: 16 }
    }

    #[test]
    fn dataset_counts_pairs() {
        let sys = ForcedSystem::shaw_pierre(ShawPierreParams::default());
        let ds = generate_dataset(&sys, &small_opts()).unwrap();
        assert_eq!(ds.len(), 7 * 5);
    }

    #[test]
    fn dataset_consecutive_pairs_link() {
        let sys = ForcedSystem::shaw_pierre(ShawPierreParams { amplitude: 0.25, ..Default::default() });
        let ds = generate_dataset(&sys, &small_opts()).unwrap();
        for k in 0..ds.len() - 1 {
            if ds.trajectory[k] != ds.trajectory[k + 1] {
                continue;
            }
            assert_eq!(ds.y.column(k), ds.x.column(k + 1));
            let d = normalize_angle(ds.theta[k + 1] - ds.theta[k] - ds.omega);
            assert!(d.min(2.0 * PI - d) < 1e-12);
        }
        let traj = integrate(&sys, &ds.x_at(3), ds.theta[3], 0.8, 1, 16).unwrap();
        assert!((&traj[1] - ds.y_at(3)).amax() < 1e-14);
    }

    #[test]
    fn dataset_is_deterministic() {
        let sys = ForcedSystem::shaw_pierre(ShawPierreParams::default());
        let opts = GenerateOptions { noise_sigma: 1e-3, ..small_opts() };
        assert_eq!(generate_dataset(&sys, &opts).unwrap(), generate_dataset(&sys, &opts).unwrap());
        let other = GenerateOptions { seed: 12, ..opts };
        assert_ne!(generate_dataset(&sys, &opts).unwrap(), generate_dataset(&sys, &other).unwrap());
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mean_r = 0.0;
        for _ in 0..4000 {
            let r = sample_ball(&mut rng, 4, 2.0).norm();
            assert!(r <= 2.0);
            mean_r += r / 4000.0;
        }
        // E|x| = 2·4/5 for the uniform 4-ball of radius 2
        assert!((mean_r - 1.6).abs() < 0.03);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn phases_advance_by_omega(seed in 0u64..1000, omega0 in 0.1f64..3.0, dt in 0.1f64..2.0) {
            let mut sys = ForcedSystem::shaw_pierre(ShawPierreParams { amplitude: 0.1, ..Default::default() });
            sys.omega0 = omega0;
            let opts = GenerateOptions { n_traj: 3, n_points: 5, dt, radius: 0.3, noise_sigma: 0.0, seed, substeps: 4 };
            let ds = generate_dataset(&sys, &opts).unwrap();
            for k in 0..ds.len() - 1 {
                if ds.trajectory[k] == ds.trajectory[k + 1] {
                    let d = normalize_angle(ds.theta[k + 1] - ds.theta[k] - ds.omega);
                    proptest::prop_assert!(d.min(2.0 * PI - d) < 1e-12);
                    proptest::prop_assert_eq!(ds.y.column(k), ds.x.column(k + 1));
                }
            }
        }
    }
}
