//! End-to-end identification: data, linear model, bundles, foliation, manifold, normal form, backbone.
//!
//! Every stage writes plain-text artifacts into the output directory and records a content key in
//! `cache.toml`. A stage whose key and files are unchanged is loaded instead of recomputed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{backbone, linear_values, BackboneCurve, BackboneOptions};
use crate::bundles::{decompose, frequency_damping, vector_field_eigenvalue, BundleFrame};
use crate::dataset::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::foliation::{fit_foliations, relative_error, torus_distance, transform_dataset, FitConfig, FoliationModel, TransformedDataset};
use crate::linalg::quantile;
use crate::linearid::{iterate_linear_id, AffineModel, LinearIdOptions, TorusEmbedding, DEFAULT_EPSILON};
use crate::manifold::{recover_manifold, DecoderPoly};
use crate::normalform::{compose_decoder, diagonalize_linear, solve_homological, NormalFormModel, DEFAULT_RESONANCE_TOL};
use crate::systems::{generate_dataset, ForcedSystem, GenerateOptions, ShawPierreParams, TrafficParams};
use crate::textio::Artifact;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// `shawpierre` or `traffic`; ignored when `dataset` is given.
    pub name: String,
    /// Externally supplied dataset file.
    pub dataset: Option<PathBuf>,
    /// Forcing amplitude.
    pub amplitude: f64,
    /// Forcing frequency; the system default when absent.
    pub omega0: Option<f64>,
    pub stiffness: f64,
    pub kappa: f64,
    pub damping: f64,
    pub alpha: f64,
    pub track_length: Option<f64>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let sp = ShawPierreParams::default();
        Self {
            name: "shawpierre".into(),
            dataset: None,
            amplitude: 0.0,
            omega0: None,
            stiffness: sp.k,
            kappa: sp.kappa,
            damping: sp.c,
            alpha: TrafficParams::default().alpha,
            track_length: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub trajectories: usize,
    pub points: usize,
    pub dt: f64,
    pub radius: f64,
    pub noise: f64,
    pub seed: u64,
    pub substeps: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let g = GenerateOptions::default();
        Self {
            trajectories: g.n_traj,
            points: g.n_points,
            dt: g.dt,
            radius: g.radius,
            noise: g.noise_sigma,
            seed: g.seed,
            substeps: g.substeps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    /// Fourier resolution; 0 for unforced data and 3 otherwise when absent.
    pub ell: Option<usize>,
    pub epsilon: f64,
    pub trim_fraction: f64,
    pub min_fraction: f64,
    pub max_iter: usize,
}

impl Default for LinearConfig {
    fn default() -> Self {
        let o = LinearIdOptions::default();
        Self {
            ell: None,
            epsilon: DEFAULT_EPSILON,
            trim_fraction: o.trim_fraction,
            min_fraction: o.min_fraction,
            max_iter: o.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BundleConfig {
    /// Selected bundles, numbered from 1 in order of decreasing spectral radius.
    pub modes: Vec<usize>,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self { modes: vec![1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoliationConfig {
    pub order: usize,
    pub sweeps: usize,
    pub tol: f64,
    pub epsilon: f64,
    pub s_polynomial: Option<bool>,
    pub v_filter: Option<bool>,
    pub filter_quantile: f64,
    pub filter_floor: f64,
    pub max_inner: usize,
    pub error_bins: usize,
}

impl Default for FoliationConfig {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            order: f.sigma,
            sweeps: f.max_sweeps,
            tol: f.tol,
            epsilon: f.epsilon,
            s_polynomial: f.s_polynomial,
            v_filter: f.v_filter,
            filter_quantile: f.filter_quantile,
            filter_floor: f.filter_floor,
            max_inner: f.max_inner,
            error_bins: 10,
        }
    }
}

impl FoliationConfig {
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            sigma: self.order,
            max_sweeps: self.sweeps,
            tol: self.tol,
            epsilon: self.epsilon,
            s_polynomial: self.s_polynomial,
            v_filter: self.v_filter,
            filter_quantile: self.filter_quantile,
            filter_floor: self.filter_floor,
            max_inner: self.max_inner,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalFormConfig {
    pub resonance_tol: f64,
}

impl Default for NormalFormConfig {
    fn default() -> Self {
        Self {
            resonance_tol: DEFAULT_RESONANCE_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub samples: usize,
    pub quad_n: usize,
    pub fine_samples: usize,
    /// The curve extends to this quantile of the data amplitude.
    pub amplitude_quantile: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        let b = BackboneOptions::default();
        Self {
            samples: b.n_samples,
            quad_n: b.quad_n,
            fine_samples: b.fine_samples,
            amplitude_quantile: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub system: SystemConfig,
    pub data: DataConfig,
    pub linear: LinearConfig,
    pub bundles: BundleConfig,
    pub foliation: FoliationConfig,
    pub normal_form: NormalFormConfig,
    pub backbone: BackboneConfig,
}

pub const BUILTIN_CONFIGS: [&str; 3] = ["shawpierre", "shawpierre-forced", "traffic"];

impl PipelineConfig {
    pub fn builtin(name: &str) -> Result<Self> {
        let mut cfg = Self {
            output_dir: PathBuf::from(format!("out-{name}")),
            ..Default::default()
        };
        match name {
            "shawpierre" => {}
            "shawpierre-forced" => cfg.system.amplitude = 0.25,
            "traffic" => {
                cfg.system.name = "traffic".into();
                cfg.data.radius = 1.2;
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown built-in configuration {name}; choose one of {}",
                    BUILTIN_CONFIGS.join(", ")
                )))
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn ell(&self) -> usize {
        self.linear.ell.unwrap_or(if self.system.amplitude == 0.0 { 0 } else { 3 })
    }

    /// The system to simulate, or `None` for external data.
    pub fn system(&self) -> Result<Option<ForcedSystem>> {
        if self.system.dataset.is_some() {
            return Ok(None);
        }
        let s = &self.system;
        match s.name.as_str() {
            "shawpierre" => {
                let d = ShawPierreParams::default();
                Ok(Some(ForcedSystem::shaw_pierre(ShawPierreParams {
                    k: s.stiffness,
                    kappa: s.kappa,
                    c: s.damping,
                    amplitude: s.amplitude,
                    omega0: s.omega0.unwrap_or(d.omega0),
                })))
            }
            "traffic" => {
                let d = TrafficParams::default();
                Ok(Some(ForcedSystem::traffic(TrafficParams {
                    alpha: s.alpha,
                    track_length: s.track_length.unwrap_or(d.track_length),
                    amplitude: s.amplitude,
                    omega0: s.omega0.unwrap_or(d.omega0),
                })))
            }
            other => Err(Error::Config(format!("unknown system {other}"))),
        }
    }

    /// Checks everything that can be checked without running a stage.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.bundles.modes.is_empty() {
            return fail("modes must select at least one bundle".into());
        }
        for (i, &m) in self.bundles.modes.iter().enumerate() {
            if m == 0 {
                return fail("modes are numbered from 1".into());
            }
            if self.bundles.modes[..i].contains(&m) {
                return fail(format!("mode {m} selected twice"));
            }
        }
        let dim = match (self.system()?, &self.system.dataset) {
            (Some(sys), _) => sys.dim,
            (None, Some(path)) if !path.exists() => return fail(format!("dataset {} does not exist", path.display())),
            _ => usize::MAX,
        };
        if let Some(&m) = self.bundles.modes.iter().find(|&&m| m > dim) {
            return fail(format!("mode {m} does not exist: the system has at most {dim} bundles"));
        }
        if !(self.data.dt > 0.0) || self.data.trajectories == 0 || self.data.points == 0 {
            return fail("data needs dt > 0 and at least one trajectory point".into());
        }
        if self.foliation.order < 1 || self.foliation.sweeps == 0 {
            return fail("foliation order and sweeps must be positive".into());
        }
        if !(self.normal_form.resonance_tol > 0.0) {
            return fail("resonance_tol must be positive".into());
        }
        let q = self.backbone.amplitude_quantile;
        if !(q > 0.0 && q <= 1.0) || self.backbone.samples < 2 || self.backbone.quad_n == 0 {
            return fail("backbone needs amplitude_quantile in (0, 1], two samples and quad_n > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Data,
    Linear,
    Bundles,
    Foliation,
    Manifold,
    NormalForm,
    Backbone,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Data,
        Stage::Linear,
        Stage::Bundles,
        Stage::Foliation,
        Stage::Manifold,
        Stage::NormalForm,
        Stage::Backbone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Linear => "linear",
            Stage::Bundles => "bundles",
            Stage::Foliation => "foliation",
            Stage::Manifold => "manifold",
            Stage::NormalForm => "normal-form",
            Stage::Backbone => "backbone",
        }
    }

    pub fn files(self) -> &'static [&'static str] {
        match self {
            Stage::Data => &["dataset.csv"],
            Stage::Linear => &["linear-model.txt", "torus.txt"],
            Stage::Bundles => &["bundles.txt", "spectrum.txt"],
            Stage::Foliation => &["foliation.txt", "error.csv"],
            Stage::Manifold => &["decoder.txt"],
            Stage::NormalForm => &["normal-form.txt"],
            Stage::Backbone => &["backbone.csv"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
struct StageRecord {
    key: String,
    files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
struct Manifest {
    stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Computed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    pub status: CacheStatus,
}

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Human-readable spectrum table of the bundle stage.
pub fn mode_report(frame: &BundleFrame, dt: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# bundle spectrum, dt = {dt}");
    let _ = writeln!(out, "{:>4} {:>4} {:>3}  {:<30} {:<26} {:>10} {:>10}", "mode", "size", "sel", "map eigenvalue", "field eigenvalue", "frequency", "damping");
    let mut warnings = Vec::new();
    for (i, m) in frame.modes.iter().enumerate() {
        let lam = m.eigenvalue;
        let vf = vector_field_eigenvalue(lam, dt);
        let (freq, damp) = frequency_damping(lam, dt);
        let pair = m.rank == 2 && lam.im != 0.0;
        let fmt = |z: Complex64, p: usize| {
            if pair {
                format!("{:.p$} ± {:.p$}i", z.re, z.im.abs())
            } else if z.im == 0.0 {
                format!("{:.p$}", z.re)
            } else {
                format!("{:.p$} {:+.p$}i", z.re, z.im)
            }
        };
        let sel = if frame.index_set.contains(&i) { "*" } else { "" };
        let _ = writeln!(
            out,
            "{:>4} {:>4} {:>3}  {:<30} {:<26} {:>10.6} {:>10.6}",
            i + 1,
            m.size,
            sel,
            fmt(lam, 6),
            fmt(vf, 4),
            freq,
            damp
        );
        if lam.im == 0.0 && lam.re < 0.0 {
            warnings.push(format!("mode {}: complex logarithm branch ambiguity, principal branch used", i + 1));
        }
        if lam.norm() >= 1.0 {
            warnings.push(format!("mode {}: unstable bundle (|lambda| = {:.6})", i + 1, lam.norm()));
        }
    }
    for w in warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

/// Stage products held in memory while the pipeline runs.
#[derive(Default)]
pub struct Products {
    pub dataset: Option<TrajectoryDataset>,
    pub linear: Option<(AffineModel, TorusEmbedding)>,
    pub frame: Option<BundleFrame>,
    pub foliation: Option<FoliationModel>,
    pub decoder: Option<DecoderPoly>,
    pub normal_form: Option<NormalFormModel>,
    pub backbone: Option<BackboneCurve>,
    transformed: Option<TransformedDataset>,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    manifest: Manifest,
    keys: BTreeMap<Stage, String>,
    pub products: Products,
    pub reports: Vec<StageReport>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(&config.output_dir)?;
        let path = config.output_dir.join("cache.toml");
        let manifest = match std::fs::read_to_string(&path) {
            Ok(text) => toml::from_str(&text).unwrap_or_default(),
            Err(_) => Manifest::default(),
        };
        Ok(Self {
            config,
            manifest,
            keys: BTreeMap::new(),
            products: Products::default(),
            reports: Vec::new(),
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.config.output_dir.join(file)
    }

    /// Content key of a stage: its own settings chained with the key of the previous stage.
    fn key(&self, stage: Stage) -> Result<String> {
        let c = &self.config;
        let settings = match stage {
            Stage::Data => {
                let mut s = toml::to_string(&c.system).unwrap() + &toml::to_string(&c.data).unwrap();
                if let Some(p) = &c.system.dataset {
                    s.push_str(&sha_hex(&std::fs::read(p)?));
                }
                s
            }
            Stage::Linear => format!("{}ell={}", toml::to_string(&c.linear).unwrap(), c.ell()),
            Stage::Bundles => toml::to_string(&c.bundles).unwrap(),
            Stage::Foliation => toml::to_string(&c.foliation).unwrap(),
            Stage::Manifold => String::new(),
            Stage::NormalForm => toml::to_string(&c.normal_form).unwrap(),
            Stage::Backbone => toml::to_string(&c.backbone).unwrap(),
        };
        let prev = match Stage::ALL.iter().position(|&s| s == stage).unwrap() {
            0 => String::new(),
            i => self.keys[&Stage::ALL[i - 1]].clone(),
        };
        Ok(sha_hex(
            format!("{}\n{}\n{prev}\n{settings}", env!("CARGO_PKG_VERSION"), stage.name()).as_bytes(),
        ))
    }

    fn cached(&self, stage: Stage, key: &str) -> bool {
        let Some(rec) = self.manifest.stages.get(stage.name()) else {
            return false;
        };
        rec.key == key
            && stage.files().iter().all(|f| match (std::fs::read(self.path(f)), rec.files.get(*f)) {
                (Ok(bytes), Some(h)) => &sha_hex(&bytes) == h,
                _ => false,
            })
    }

    fn record(&mut self, stage: Stage, key: String, contents: &[(&str, String)]) -> Result<()> {
        let mut files = BTreeMap::new();
        for (name, text) in contents {
            std::fs::write(self.path(name), text)?;
            files.insert(name.to_string(), sha_hex(text.as_bytes()));
        }
        self.manifest.stages.insert(stage.name().into(), StageRecord { key, files });
        std::fs::write(self.path("cache.toml"), toml::to_string(&self.manifest).unwrap())?;
        Ok(())
    }

    /// Runs every stage up to and including `last`.
    pub fn run_until(&mut self, last: Stage) -> Result<()> {
        for stage in Stage::ALL {
            if stage > last {
                break;
            }
            self.run_stage(stage).map_err(|e| e.in_stage(stage.name()))?;
        }
        Ok(())
    }

    fn run_stage(&mut self, stage: Stage) -> Result<()> {
        let key = self.key(stage)?;
        self.keys.insert(stage, key.clone());
        let status = if self.cached(stage, &key) {
            self.load(stage)?;
            CacheStatus::Hit
        } else {
            let outputs = self.compute(stage)?;
            let refs: Vec<(&str, String)> = stage.files().iter().copied().zip(outputs).collect();
            self.record(stage, key, &refs)?;
            CacheStatus::Computed
        };
        info!("stage {}: {:?}", stage.name(), status);
        self.reports.push(StageReport { stage, status });
        Ok(())
    }

    fn read(&self, file: &str) -> Result<Artifact> {
        Artifact::read(&self.path(file))
    }

    fn load(&mut self, stage: Stage) -> Result<()> {
        let p = &mut self.products;
        match stage {
            Stage::Data => p.dataset = Some(TrajectoryDataset::read(&self.config.output_dir.join("dataset.csv"))?),
            Stage::Linear => {
                let m = AffineModel::from_artifact(&self.read("linear-model.txt")?)?;
                let t = TorusEmbedding::from_artifact(&self.read("torus.txt")?)?;
                self.products.linear = Some((m, t));
            }
            Stage::Bundles => self.products.frame = Some(BundleFrame::from_artifact(&self.read("bundles.txt")?)?),
            Stage::Foliation => self.products.foliation = Some(FoliationModel::from_artifact(&self.read("foliation.txt")?)?),
            Stage::Manifold => self.products.decoder = Some(DecoderPoly::from_artifact(&self.read("decoder.txt")?)?),
            Stage::NormalForm => self.products.normal_form = Some(NormalFormModel::from_artifact(&self.read("normal-form.txt")?)?),
            Stage::Backbone => {
                self.products.backbone = Some(BackboneCurve::from_csv(&std::fs::read_to_string(self.path("backbone.csv"))?)?)
            }
        }
        Ok(())
    }

    fn transformed(&mut self) -> Result<&TransformedDataset> {
        if self.products.transformed.is_none() {
            let p = &self.products;
            let td = transform_dataset(p.dataset.as_ref().unwrap(), p.frame.as_ref().unwrap(), &p.linear.as_ref().unwrap().1)?;
            self.products.transformed = Some(td);
        }
        Ok(self.products.transformed.as_ref().unwrap())
    }

    fn compute(&mut self, stage: Stage) -> Result<Vec<String>> {
        let cfg = self.config.clone();
        match stage {
            Stage::Data => {
                let ds = match (&cfg.system.dataset, cfg.system()?) {
                    (Some(path), _) => TrajectoryDataset::read(path)?,
                    (None, Some(sys)) => generate_dataset(
                        &sys,
                        &GenerateOptions {
                            n_traj: cfg.data.trajectories,
                            n_points: cfg.data.points,
                            dt: cfg.data.dt,
                            radius: cfg.data.radius,
                            noise_sigma: cfg.data.noise,
                            seed: cfg.data.seed,
                            substeps: cfg.data.substeps,
                        },
                    )?,
                    (None, None) => unreachable!(),
                };
                let text = ds.to_text();
                self.products.dataset = Some(ds);
                Ok(vec![text])
            }
            Stage::Linear => {
                let ds = self.products.dataset.as_ref().unwrap();
                let r = iterate_linear_id(
                    ds,
                    &LinearIdOptions {
                        ell: cfg.ell(),
                        epsilon: cfg.linear.epsilon,
                        trim_fraction: cfg.linear.trim_fraction,
                        min_fraction: cfg.linear.min_fraction,
                        max_iter: cfg.linear.max_iter,
                    },
                )?;
                let out = vec![r.model.to_artifact().to_text(), r.torus.to_artifact().to_text()];
                self.products.linear = Some((r.model, r.torus));
                Ok(out)
            }
            Stage::Bundles => {
                let ds = self.products.dataset.as_ref().unwrap();
                let (model, _) = self.products.linear.as_ref().unwrap();
                let index: Vec<usize> = cfg.bundles.modes.iter().map(|m| m - 1).collect();
                let frame = decompose(model, ds.omega, &index)?;
                let out = vec![frame.to_artifact().to_text(), mode_report(&frame, ds.dt)];
                self.products.frame = Some(frame);
                Ok(out)
            }
            Stage::Foliation => {
                let frame = self.products.frame.clone().unwrap();
                let bins = cfg.foliation.error_bins;
                let td = self.transformed()?;
                let fit = fit_foliations(td, &frame, &cfg.foliation.fit_config())?;
                info!("foliation: {} sweeps, converged {}", fit.sweeps, fit.converged);
                let err = relative_error(&fit.model, td, bins);
                let out = vec![fit.model.to_artifact().to_text(), err.to_csv()];
                self.products.foliation = Some(fit.model);
                Ok(out)
            }
            Stage::Manifold => {
                let dec = recover_manifold(self.products.foliation.as_ref().unwrap())?;
                let out = vec![dec.to_artifact().to_text()];
                self.products.decoder = Some(dec);
                Ok(out)
            }
            Stage::NormalForm => {
                let model = self.products.foliation.as_ref().unwrap();
                let diag = diagonalize_linear(&model.r, model.omega)?;
                let nf = solve_homological(&diag, model.omega, cfg.normal_form.resonance_tol)?;
                let out = vec![nf.to_artifact().to_text()];
                self.products.normal_form = Some(nf);
                Ok(out)
            }
            Stage::Backbone => {
                let dt = self.products.dataset.as_ref().unwrap().dt;
                let amplitudes = self.amplitudes()?;
                let r_max = quantile(&amplitudes, cfg.backbone.amplitude_quantile);
                let p = &self.products;
                let nf = p.normal_form.as_ref().unwrap();
                let wb = compose_decoder(p.decoder.as_ref().unwrap(), nf)?;
                let curve = backbone(
                    nf,
                    &wb,
                    dt,
                    r_max,
                    &BackboneOptions {
                        n_samples: cfg.backbone.samples,
                        quad_n: cfg.backbone.quad_n,
                        fine_samples: cfg.backbone.fine_samples,
                    },
                )?;
                let out = vec![curve.to_csv()];
                self.products.backbone = Some(curve);
                Ok(out)
            }
        }
    }

    /// Distance of every data point from the fitted torus in frame coordinates.
    pub fn amplitudes(&mut self) -> Result<Vec<f64>> {
        let model = self.products.foliation.clone().unwrap();
        Ok(torus_distance(&model, self.transformed()?))
    }

    /// `(ω, ζ)` of the first selected bundle with the backbone conventions.
    pub fn linear_mode_values(&self) -> Option<(f64, f64)> {
        let frame = self.products.frame.as_ref()?;
        let dt = self.products.dataset.as_ref()?.dt;
        let lam = frame.modes[frame.index_set[0]].eigenvalue;
        Some(linear_values(Complex64::new(lam.re, lam.im.abs()), dt))
    }
}

/// Runs the full pipeline and returns it with all products loaded.
pub fn run_pipeline(config: PipelineConfig) -> Result<Pipeline> {
    let mut p = Pipeline::new(config)?;
    p.run_until(Stage::Backbone)?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = PipelineConfig::builtin("shawpierre-forced").unwrap();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = PipelineConfig::from_toml("[foliation]\norder = 3\n").unwrap();
        assert_eq!(partial.foliation.order, 3);
        assert_eq!(partial.foliation.sweeps, FitConfig::default().max_sweeps);
        assert_eq!(partial.ell(), 0);
        assert_eq!(cfg.ell(), 3);
        assert!(PipelineConfig::from_toml("[foliation]\nordr = 3\n").unwrap_err().is_validation());
    }

    #[test]
    fn bad_mode_selection_fails_validation() {
        let mut cfg = PipelineConfig::builtin("shawpierre").unwrap();
        cfg.bundles.modes = vec![7];
        assert!(cfg.validate().unwrap_err().is_validation());
        cfg.bundles.modes = vec![];
        assert!(cfg.validate().is_err());
        cfg.bundles.modes = vec![1, 1];
        assert!(cfg.validate().is_err());
        assert!(PipelineConfig::builtin("nope").is_err());
    }

    #[test]
    fn field_form_display_round_trip() {
        let dt = 0.8;
        let lam = (Complex64::new(-0.0163, 0.4971) * dt).exp();
        let frame = BundleFrame {
            grid: crate::fourier::CollocationGrid::new(0),
            omega: 0.0,
            index_set: vec![0],
            modes: vec![
                crate::bundles::ModeSummary { eigenvalue: lam, size: 2, interval: (lam.norm(), lam.norm()), rank: 2 },
                crate::bundles::ModeSummary { eigenvalue: Complex64::new(-0.5, 0.0), size: 1, interval: (0.5, 0.5), rank: 1 },
                crate::bundles::ModeSummary { eigenvalue: Complex64::new(1.01, 0.0), size: 1, interval: (1.01, 1.01), rank: 1 },
            ],
            u: vec![],
            v: vec![],
            r: vec![],
            s: vec![],
        };
        let rep = mode_report(&frame, dt);
        assert!(rep.contains("-0.0163 ± 0.4971i"), "{rep}");
        assert!(rep.contains("mode 2: complex logarithm branch ambiguity"));
        assert!(rep.contains("mode 3: unstable bundle"));
        assert!(!rep.contains("mode 1: unstable"));
    }
}
