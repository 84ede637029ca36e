use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use folrom::pipeline::{Pipeline, PipelineConfig, Stage};
use folrom::Error;

#[derive(Parser)]
#[command(name = "folrom", version, about = "Identify reduced-order models of forced systems from trajectory data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or import the trajectory dataset
    Generate(Opts),
    /// Linear model, invariant torus and vector bundles
    Identify(Opts),
    /// Fit the invariant foliations
    Fit(Opts),
    /// Invariant manifold, normal form and backbone curves
    Analyze(Opts),
    /// Run every stage
    Run(Opts),
    /// Print the spectrum, error summary and backbone of a finished run
    Report(Opts),
    /// Print the effective configuration as TOML
    Config(Opts),
}

#[derive(Args, Clone)]
struct Opts {
    /// Configuration file (TOML)
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Built-in configuration used when no file is given
    #[arg(long, default_value = "shawpierre")]
    builtin: String,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// External dataset instead of simulation
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    forcing_frequency: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// Fourier resolution of the forcing phase
    #[arg(long)]
    ell: Option<usize>,
    /// Selected bundles, numbered from 1
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<usize>>,
    /// Polynomial order of the foliations
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    resonance_tol: Option<f64>,
    #[arg(long)]
    backbone_samples: Option<usize>,
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

impl Opts {
    fn config(&self) -> folrom::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::read(p)?,
            None => PipelineConfig::builtin(&self.builtin)?,
        };
        macro_rules! set {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.output, cfg.output_dir);
        if self.dataset.is_some() {
            cfg.system.dataset = self.dataset.clone();
        }
        set!(self.amplitude, cfg.system.amplitude);
        if self.forcing_frequency.is_some() {
            cfg.system.omega0 = self.forcing_frequency;
        }
        set!(self.seed, cfg.data.seed);
        set!(self.trajectories, cfg.data.trajectories);
        set!(self.points, cfg.data.points);
        set!(self.dt, cfg.data.dt);
        set!(self.noise, cfg.data.noise);
        if self.ell.is_some() {
            cfg.linear.ell = self.ell;
        }
        set!(self.modes, cfg.bundles.modes);
        set!(self.order, cfg.foliation.order);
        set!(self.sweeps, cfg.foliation.sweeps);
        set!(self.tol, cfg.foliation.tol);
        if let Some(e) = self.epsilon {
            cfg.linear.epsilon = e;
            cfg.foliation.epsilon = e;
        }
        set!(self.resonance_tol, cfg.normal_form.resonance_tol);
        set!(self.backbone_samples, cfg.backbone.samples);
        Ok(cfg)
    }
}

fn report(p: &mut Pipeline) -> anyhow::Result<()> {
    for file in ["spectrum.txt", "error.csv"] {
        println!("== {file}");
        print!("{}", std::fs::read_to_string(p.path(file))?);
    }
    if let (Some(curve), Some((w0, z0))) = (p.products.backbone.clone(), p.linear_mode_values()) {
        println!("== backbone (linear mode: omega {w0:.6}, zeta {z0:.6})");
        println!("{:>10} {:>10} {:>10}", "r", "omega", "zeta");
        let step = (curve.r.len() / 10).max(1);
        for i in (0..curve.r.len()).step_by(step) {
            println!("{:>10.4} {:>10.6} {:>10.6}", curve.r[i], curve.omega[i], curve.zeta[i]);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (opts, last) = match &cli.command {
        Command::Generate(o) => (o, Stage::Data),
        Command::Identify(o) => (o, Stage::Bundles),
        Command::Fit(o) => (o, Stage::Foliation),
        Command::Analyze(o) | Command::Run(o) | Command::Report(o) => (o, Stage::Backbone),
        Command::Config(o) => {
            print!("{}", o.config()?.to_toml());
            return Ok(());
        }
    };
    env_logger::Builder::new()
        .filter_level(match opts.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .init();
    let mut p = Pipeline::new(opts.config()?)?;
    p.run_until(last)?;
    for r in &p.reports {
        eprintln!("{:<12} {:?}", r.stage.name(), r.status);
    }
    match cli.command {
        Command::Identify(_) => print!("{}", std::fs::read_to_string(p.path("spectrum.txt"))?),
        Command::Analyze(_) | Command::Run(_) | Command::Report(_) => report(&mut p)?,
        _ => {}
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.downcast_ref::<Error>() {
                Some(err) if err.is_validation() => ExitCode::from(2),
                Some(Error::Io(_)) | None => ExitCode::from(1),
                Some(_) => ExitCode::from(3),
            }
        }
    }
}
