use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use voroto_core::catalog::{Catalog, Problem};
use voroto_core::dataset::{self, Dataset};
use voroto_core::homogenize::{BaseMaterial, Homogenizer};
use voroto_core::io::{self as vio, Header};
use voroto_core::optimize::{DesignState, Optimizer};
use voroto_core::surrogate::{self, MlpModel};
use voroto_core::verify::{self, ExactHomogenizer, VerificationReport};

use crate::config::{parse_mesh, parse_split, RunConfig};

/// Bad invocation or configuration; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "voroto", version, about = "Multiscale Voronoi topology optimization")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Config file with `[section]` headers and `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: VOROTO_THREADS, else all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Override any config setting.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Log more (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample neighborhoods and homogenize them into a training corpus.
    GenData(GenDataArgs),
    /// Train the surrogate on a corpus.
    Train(TrainArgs),
    /// Optimize a catalog problem with a trained surrogate.
    Optimize(OptimizeArgs),
    /// Re-homogenize an optimized design and compare with the surrogate.
    Verify(VerifyArgs),
    /// Write the stitched density of a design as a PGM image.
    Render(RenderArgs),
    /// Repeat an optimization over values of one setting.
    Sweep(SweepArgs),
    /// List the catalog problems.
    Problems(ProblemsArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of samples
    #[arg(long)]
    pub count: Option<usize>,
    /// Sampling seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Micro-mesh pixels per side
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Softmax sharpness k of the density field
    #[arg(long)]
    pub sharpness: Option<f64>,
    /// Binary corpus file
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the corpus as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus written by gen-data
    #[arg(long)]
    pub data: PathBuf,
    /// Model file
    #[arg(long)]
    pub out: PathBuf,
    /// Initialization and shuffling seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Minibatch size
    #[arg(long)]
    pub batch: Option<usize>,
    /// Stop after this many epochs without a better validation loss
    #[arg(long)]
    pub patience: Option<usize>,
    /// Train, validation and test sizes, e.g. `2500,250,250`.
    #[arg(long)]
    pub split: Option<String>,
    /// Per-epoch losses (default: next to the model).
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct ProblemArgs {
    /// Catalog problem name (see `voroto problems`)
    #[arg(long)]
    pub problem: Option<String>,
    /// Mesh override, e.g. `40x20`.
    #[arg(long)]
    pub mesh: Option<String>,
    /// Problem catalog file (default: built-in).
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct DesignArgs {
    /// Volume fraction bound
    #[arg(long)]
    pub vmax: Option<f64>,
    /// Iteration cap
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// Adam learning rate on the design latents
    #[arg(long)]
    pub lr: Option<f64>,
    /// Upper bound of the wall-thickness parameter
    #[arg(long = "beta-max")]
    pub beta_max: Option<f64>,
    /// Upper bound of the anisotropy parameter
    #[arg(long = "alpha-max")]
    pub alpha_max: Option<f64>,
    /// Fix the orientation at this angle.
    #[arg(long)]
    pub theta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Trained surrogate
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub design: DesignArgs,
    /// Run directory for the state, log and config echo.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Design state written by optimize
    #[arg(long)]
    pub state: PathBuf,
    /// Surrogate used for the design
    #[arg(long)]
    pub model: PathBuf,
    /// Summary CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Per-element comparison CSV.
    #[arg(long)]
    pub elements: Option<PathBuf>,
    /// Also render the reconstructed design.
    #[arg(long)]
    pub render: Option<PathBuf>,
    /// Pixels per element side of the render.
    #[arg(long = "render-resolution", default_value_t = 24)]
    pub render_resolution: usize,
    /// Micro resolution of the ground truth (default: training resolution).
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Problem catalog file (default: built-in)
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Design state written by optimize
    #[arg(long)]
    pub state: PathBuf,
    /// PGM image
    #[arg(long)]
    pub out: PathBuf,
    /// Pixels per element side
    #[arg(long, default_value_t = 24)]
    pub resolution: usize,
    /// Softmax sharpness (default: the one recorded in the state).
    #[arg(long)]
    pub sharpness: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// `beta_max`, `alpha_max`, `theta_max`, `vmax` or any `optimize.*` key.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values.
    #[arg(long)]
    pub values: String,
    /// Trained surrogate
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub design: DesignArgs,
    /// Directory for the runs and sweep.csv
    #[arg(long)]
    pub out: PathBuf,
    /// Verify every run against exact homogenization.
    #[arg(long)]
    pub verify: bool,
    /// Ground-truth micro resolution for `--verify`.
    #[arg(long)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProblemsArgs {
    /// Problem catalog file (default: built-in)
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let from_env = match std::env::var("VOROTO_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| usage(format!("VOROTO_THREADS=`{v}` is not a number")))?,
        ),
        Err(_) => None,
    };
    if let Some(n) = flag.or(from_env) {
        if n == 0 {
            return Err(usage("thread count must be at least 1"));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path).map_err(|e| usage(format!("{e:#}")))?;
    }
    for s in &cli.set {
        cfg.apply_override(s).map_err(|e| usage(format!("{e:#}")))?;
    }
    checked(&cfg)?;
    Ok(cfg)
}

pub fn dispatch(cli: Cli) -> Result<()> {
    init_logging(cli.verbose);
    init_threads(cli.threads)?;
    let mut cfg = resolve_config(&cli)?;
    match cli.command {
        Command::GenData(a) => gen_data(&mut cfg, a),
        Command::Train(a) => train(&mut cfg, a),
        Command::Optimize(a) => optimize(&mut cfg, a),
        Command::Verify(a) => verify_cmd(a),
        Command::Render(a) => render(a),
        Command::Sweep(a) => sweep(&mut cfg, a),
        Command::Problems(a) => {
            let cat = load_catalog(a.catalog.as_deref())?;
            let mut out = std::io::stdout().lock();
            for name in cat.names() {
                let p = cat.problem(name, None)?;
                writeln!(out, "{name}\t{}x{}", p.mesh.nelx, p.mesh.nely)?;
            }
            Ok(())
        }
    }
}

fn checked(cfg: &RunConfig) -> Result<()> {
    cfg.validate().map_err(|e| usage(format!("{e:#}")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn gen_data(cfg: &mut RunConfig, a: GenDataArgs) -> Result<()> {
    if let Some(v) = a.count {
        cfg.count = v;
    }
    if let Some(v) = a.seed {
        cfg.gen.seed = v;
    }
    if let Some(v) = a.resolution {
        cfg.gen.resolution = v;
    }
    if let Some(v) = a.sharpness {
        cfg.gen.sharpness = v;
    }
    checked(cfg)?;
    log::info!(
        "generating {} samples at {}x{} (seed {})",
        cfg.count,
        cfg.gen.resolution,
        cfg.gen.resolution,
        cfg.gen.seed
    );
    let data = dataset::generate(cfg.count, &cfg.gen).context("corpus generation failed")?;
    let mut w = create(&a.out)?;
    data.write(&mut w)?;
    w.flush()?;
    if let Some(csv) = &a.csv {
        let mut w = create(csv)?;
        data.write_csv(&mut w)?;
        w.flush()?;
    }
    log::info!("wrote {} samples to {}", data.samples.len(), a.out.display());
    Ok(())
}

fn train(cfg: &mut RunConfig, a: TrainArgs) -> Result<()> {
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = a.batch {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.patience {
        cfg.train.patience = v;
    }
    if let Some(v) = &a.split {
        cfg.split = parse_split(v).map_err(|e| usage(format!("{e:#}")))?;
    }
    checked(cfg)?;
    let data = Dataset::load(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let splits = dataset::split(&data.samples, cfg.split, cfg.train.seed)
        .map_err(|e| usage(e.to_string()))?;
    log::info!(
        "training on {} / {} / {} samples",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    let (mut model, history) = surrogate::train(&splits, &cfg.train)?;
    let mut meta = data.config.header();
    cfg.train.write_header(&mut meta);
    meta.push(
        "train.split",
        format!("{},{},{}", cfg.split.0, cfg.split.1, cfg.split.2),
    );
    meta.push("train.best_epoch", history.best_epoch);
    model.meta = meta;
    model.save(&a.out)?;
    let acc = surrogate::accuracy(&model, &splits.test);
    log::info!(
        "best epoch {}; test median relative error C {:.2}%, v {:.2}%",
        history.best_epoch,
        100.0 * acc.c_median,
        100.0 * acc.v_median
    );
    let hist_path = a
        .history
        .unwrap_or_else(|| a.out.with_extension("history.csv"));
    let mut w = create(&hist_path)?;
    history.write_csv(&mut w, &model.header())?;
    w.flush()?;
    Ok(())
}

fn load_catalog(path: Option<&Path>) -> Result<Catalog> {
    match path {
        Some(p) => Catalog::load(p).with_context(|| format!("loading catalog {}", p.display())),
        None => Ok(Catalog::builtin()),
    }
}

fn load_model(path: &Path) -> Result<MlpModel> {
    MlpModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn model_sharpness(model: &MlpModel) -> Result<f64> {
    model
        .meta
        .parse("voronoi.sharpness")
        .context("model does not record its softmax sharpness")
}

fn apply_problem_args(cfg: &mut RunConfig, a: &ProblemArgs) -> Result<()> {
    if let Some(p) = &a.problem {
        cfg.problem = p.clone();
    }
    if let Some(m) = &a.mesh {
        cfg.mesh = Some(parse_mesh(m).map_err(|e| usage(format!("{e:#}")))?);
    }
    Ok(())
}

fn apply_design_args(cfg: &mut RunConfig, a: &DesignArgs) {
    if let Some(v) = a.vmax {
        cfg.opt.v_max = v;
    }
    if let Some(v) = a.max_iter {
        cfg.opt.max_iterations = v;
    }
    if let Some(v) = a.lr {
        cfg.opt.learning_rate = v;
    }
    if let Some(v) = a.beta_max {
        cfg.opt.bounds.beta.1 = v;
    }
    if let Some(v) = a.alpha_max {
        cfg.opt.bounds.alpha.1 = v;
    }
    if let Some(v) = a.theta {
        cfg.opt.bounds.theta = (v, v);
    }
}

/// Final numbers of one optimization run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub compliance: f64,
    pub g_v: f64,
    pub volume: f64,
    pub iterations: usize,
    pub state: PathBuf,
}

/// Runs one optimization into `dir`: `state.bin`, `log.csv`, `config.txt`.
fn run_optimization(
    cfg: &RunConfig,
    model: &MlpModel,
    problem: &Problem,
    dir: &Path,
) -> Result<RunSummary> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut header = cfg.header();
    header.push("problem", &problem.name);
    for (k, v) in model.meta.entries() {
        header.push(format!("model.{k}"), v);
    }
    fs::write(dir.join("config.txt"), header.to_text())?;

    let state0 = DesignState::start(problem.mesh, &cfg.opt)?;
    let mut opt = Optimizer::new(model, &problem.bc, state0, cfg.opt)?;
    let outcome = opt.run();
    let state_path = dir.join("state.bin");
    opt.state.save(&state_path, &header)?;
    let mut w = create(&dir.join("log.csv"))?;
    opt.log.write_csv(&mut w, &header)?;
    w.flush()?;
    outcome.context("optimization aborted; last finite state saved")?;

    let last = opt.log.last().expect("at least one iteration");
    let volume = opt.last.as_ref().map_or(f64::NAN, |e| e.mean_volume);
    log::info!(
        "{}: J = {:.4} after {} iterations, g_V = {:+.4}, v = {:.4}",
        problem.name,
        last.compliance,
        opt.log.len(),
        last.g_v,
        volume
    );
    Ok(RunSummary {
        compliance: last.compliance,
        g_v: last.g_v,
        volume,
        iterations: opt.log.len(),
        state: state_path,
    })
}

fn optimize(cfg: &mut RunConfig, a: OptimizeArgs) -> Result<()> {
    apply_problem_args(cfg, &a.problem)?;
    apply_design_args(cfg, &a.design);
    checked(cfg)?;
    let catalog = load_catalog(a.problem.catalog.as_deref())?;
    let problem = catalog
        .problem(&cfg.problem, cfg.mesh)
        .map_err(|e| usage(e.to_string()))?;
    let model = load_model(&a.model)?;
    run_optimization(cfg, &model, &problem, &a.out)?;
    Ok(())
}

fn truth_for(model: &MlpModel, resolution: Option<usize>) -> Result<ExactHomogenizer> {
    let m = &model.meta;
    let material = BaseMaterial {
        youngs: m.parse("material.youngs")?,
        poisson: m.parse("material.poisson")?,
        void_eps: m.parse("material.void_eps")?,
    };
    let r = match resolution {
        Some(r) => r,
        None => m.parse("homogenize.resolution")?,
    };
    Ok(ExactHomogenizer {
        homogenizer: Homogenizer::new(r, r, material)?,
        sharpness: model_sharpness(model)?,
    })
}

fn problem_for_state(state: &DesignState, header: &Header, catalog: &Catalog) -> Result<Problem> {
    let name = header.require("problem")?;
    Ok(catalog.problem(name, Some(state.mesh))?)
}

fn run_verification(
    state: &DesignState,
    model: &MlpModel,
    truth: &ExactHomogenizer,
    problem: &Problem,
) -> Result<VerificationReport> {
    log::info!(
        "verifying {} elements at {}x{}",
        state.mesh.n_elements(),
        truth.homogenizer.resolution().0,
        truth.homogenizer.resolution().1
    );
    let r = verify::verify(state, model, truth, &problem.bc)?;
    log::info!(
        "compliance {:.4} (surrogate) vs {:.4} (true), error {:.2}%; volume {:.4} vs {:.4}, error {:.2}%",
        r.compliance_nn,
        r.compliance_fe,
        100.0 * r.compliance_error,
        r.volume_nn,
        r.volume_fe,
        100.0 * r.volume_error
    );
    Ok(r)
}

fn write_pgm(path: &Path, state: &DesignState, resolution: usize, sharpness: f64, header: &Header) -> Result<()> {
    let field = verify::reconstruct(state, resolution, sharpness)?;
    let mut comment = Header::new();
    comment
        .push("problem", header.get("problem").unwrap_or("unknown"))
        .push("resolution", resolution)
        .push("sharpness", sharpness);
    let mut w = create(path)?;
    vio::write_pgm(&mut w, &field, &comment)?;
    w.flush()?;
    Ok(())
}

fn verify_cmd(a: VerifyArgs) -> Result<()> {
    let (state, header) = DesignState::load(&a.state)
        .with_context(|| format!("loading state {}", a.state.display()))?;
    let model = load_model(&a.model)?;
    let catalog = load_catalog(a.catalog.as_deref())?;
    let problem = problem_for_state(&state, &header, &catalog)?;
    let truth = truth_for(&model, a.resolution)?;
    let report = run_verification(&state, &model, &truth, &problem)?;
    let mut h = header.clone();
    h.push("verify.truth_resolution", truth.homogenizer.resolution().0);
    let mut w = create(&a.out)?;
    report.write_csv(&mut w, &h)?;
    w.flush()?;
    if let Some(path) = &a.elements {
        let mut w = create(path)?;
        report.write_elements_csv(&mut w, &h)?;
        w.flush()?;
    }
    if let Some(path) = &a.render {
        write_pgm(path, &state, a.render_resolution, truth.sharpness, &header)?;
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    if a.resolution == 0 {
        return Err(usage("resolution must be at least 1"));
    }
    let (state, header) = DesignState::load(&a.state)
        .with_context(|| format!("loading state {}", a.state.display()))?;
    let sharpness = match a.sharpness {
        Some(k) => k,
        None => header
            .parse("model.voronoi.sharpness")
            .context("state does not record a sharpness; pass --sharpness")?,
    };
    write_pgm(&a.out, &state, a.resolution, sharpness, &header)
}

fn sweep_key(param: &str) -> Result<String> {
    Ok(match param {
        "beta_max" => "optimize.beta_max".into(),
        "alpha_max" => "optimize.alpha_max".into(),
        "theta_max" => "optimize.theta_max".into(),
        "vmax" | "v_max" => "optimize.v_max".into(),
        k if k.starts_with("optimize.") => k.into(),
        other => return Err(usage(format!("cannot sweep `{other}`"))),
    })
}

fn sweep(cfg: &mut RunConfig, a: SweepArgs) -> Result<()> {
    apply_problem_args(cfg, &a.problem)?;
    apply_design_args(cfg, &a.design);
    let key = sweep_key(&a.param)?;
    let values: Vec<String> = a
        .values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(usage("no sweep values"));
    }
    let mut runs = Vec::new();
    for v in &values {
        let mut c = cfg.clone();
        c.set(&key, v).map_err(|e| usage(format!("{e:#}")))?;
        checked(&c)?;
        runs.push(c);
    }
    let catalog = load_catalog(a.problem.catalog.as_deref())?;
    let model = load_model(&a.model)?;
    let truth = if a.verify {
        Some(truth_for(&model, a.resolution)?)
    } else {
        None
    };
    fs::create_dir_all(&a.out)?;
    let mut rows = Vec::new();
    for (i, (c, v)) in runs.iter().zip(&values).enumerate() {
        log::info!("sweep {} = {v} ({}/{})", a.param, i + 1, runs.len());
        let problem = catalog
            .problem(&c.problem, c.mesh)
            .map_err(|e| usage(e.to_string()))?;
        let dir = a.out.join(format!("run-{i}"));
        let s = run_optimization(c, &model, &problem, &dir)?;
        let mut row = format!(
            "{v},{:e},{:e},{:e},{}",
            s.compliance, s.g_v, s.volume, s.iterations
        );
        if let Some(truth) = &truth {
            let (state, _) = DesignState::load(&s.state)?;
            let r = run_verification(&state, &model, truth, &problem)?;
            row.push_str(&format!(
                ",{:e},{:e},{:e},{:e}",
                r.compliance_fe, r.volume_fe, r.compliance_error, r.volume_error
            ));
        }
        rows.push(row);
    }
    let mut header = cfg.header();
    header.push("sweep.param", &key);
    let mut w = create(&a.out.join("sweep.csv"))?;
    w.write_all(header.to_comment().as_bytes())?;
    let mut cols = String::from("value,compliance,g_v,volume,iterations");
    if truth.is_some() {
        cols.push_str(",compliance_true,volume_true,compliance_error,volume_error");
    }
    writeln!(w, "{cols}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    log::info!("sweep written to {}", a.out.join("sweep.csv").display());
    Ok(())
}
