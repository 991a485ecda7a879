//! Acceptance suite. Prints one PASS/FAIL line per criterion. Failures make
//! the exit status nonzero only with `VOROTO_ACCEPTANCE_STRICT=1`, so known
//! gaps stay visible without breaking the workspace test run.
//!
//! The 12000-sample corpus and the trained surrogates are cached under
//! `target/voroto-acceptance/` and reused while their recorded settings
//! match; set `VOROTO_ACCEPTANCE_FRESH=1` to rebuild them. Set
//! `VOROTO_ACCEPTANCE_ONLY=1,3,9` to run a subset.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voroto_core::catalog::Catalog;
use voroto_core::dataset::{self, cholesky, Dataset, GenConfig, INPUT_DIM, TARGET_DIM};
use voroto_core::fea::MacroMesh;
use voroto_core::homogenize::{BaseMaterial, ElasticityMatrix, Homogenizer};
use voroto_core::optimize::{build_surrogate_inputs, DesignState, Evaluator, OptConfig};
use voroto_core::surrogate::{self, MlpModel, DIAG_FLOOR};
use voroto_core::voronoi::DensityField;

const CORPUS_SEED: u64 = 1;
const FULL_COUNT: usize = 12000;
const DESK_COUNT: usize = 3000;
const TRAIN_SEED: u64 = 1;

type Check = Result<(bool, String), String>;

struct Ctx {
    dir: PathBuf,
    fresh: bool,
}

fn exe() -> &'static str {
    env!("CARGO_BIN_EXE_voroto")
}

fn run_cli(args: &[String]) -> Result<Duration, String> {
    let t = Instant::now();
    let out = Command::new(exe())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| format!("spawning voroto: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "voroto {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(t.elapsed())
}

fn args(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn path(p: &Path) -> String {
    p.to_str().expect("utf-8 path").to_string()
}

/// Data rows of a CSV with `#` comments, keyed by the header row.
fn read_table(p: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let cols: Vec<String> = lines
        .next()
        .ok_or("empty table")?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| {
            l.split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|e| format!("`{f}`: {e}")))
                .collect()
        })
        .collect::<Result<Vec<Vec<f64>>, String>>()?;
    Ok((cols, rows))
}

fn column(cols: &[String], rows: &[Vec<f64>], name: &str) -> Result<Vec<f64>, String> {
    let i = cols
        .iter()
        .position(|c| c == name)
        .ok_or(format!("no column {name}"))?;
    Ok(rows.iter().map(|r| r[i]).collect())
}

impl Ctx {
    fn corpus(&self) -> Result<PathBuf, String> {
        let p = self.dir.join("corpus-12000.bin");
        let want = GenConfig {
            seed: CORPUS_SEED,
            ..GenConfig::default()
        };
        if !self.fresh && p.exists() {
            if let Ok(d) = Dataset::load(&p) {
                if d.config == want && d.samples.len() == FULL_COUNT {
                    return Ok(p);
                }
            }
        }
        eprintln!("generating the {FULL_COUNT}-sample corpus (about half an hour on one core)");
        let t = run_cli(&args(&[
            "gen-data",
            "--count",
            &FULL_COUNT.to_string(),
            "--seed",
            &CORPUS_SEED.to_string(),
            "--out",
            &path(&p),
        ]))?;
        eprintln!("corpus generated in {:.1} min", t.as_secs_f64() / 60.0);
        Ok(p)
    }

    /// The first 3000 samples; per-sample streams make this identical to a
    /// 3000-sample run with the same seed.
    fn desk_corpus(&self) -> Result<PathBuf, String> {
        let p = self.dir.join("corpus-3000.bin");
        if !self.fresh && p.exists() {
            return Ok(p);
        }
        let mut d = Dataset::load(&self.corpus()?).map_err(|e| e.to_string())?;
        d.samples.truncate(DESK_COUNT);
        d.save(&p).map_err(|e| e.to_string())?;
        Ok(p)
    }

    fn model(&self, name: &str, corpus: &Path, split: &str) -> Result<PathBuf, String> {
        let p = self.dir.join(format!("model-{name}.bin"));
        let a = args(&[
            "train",
            "--data",
            &path(corpus),
            "--out",
            &path(&p),
            "--split",
            split,
            "--seed",
            &TRAIN_SEED.to_string(),
        ]);
        let stamp = self.dir.join(format!("model-{name}.args"));
        let key = a.join(" ");
        if !self.fresh && p.exists() && fs::read_to_string(&stamp).ok().as_deref() == Some(&key) {
            return Ok(p);
        }
        eprintln!("training the {name} surrogate");
        let t = run_cli(&a)?;
        eprintln!("trained in {:.1} min", t.as_secs_f64() / 60.0);
        fs::write(&stamp, key).map_err(|e| e.to_string())?;
        Ok(p)
    }

    fn full_model(&self) -> Result<PathBuf, String> {
        self.model("full", &self.corpus()?, "10000,1000,1000")
    }

    fn desk_model(&self) -> Result<PathBuf, String> {
        self.model("desk", &self.desk_corpus()?, "2500,250,250")
    }

    fn optimize(&self, dir: &Path, extra: &[&str]) -> Result<Duration, String> {
        let mut a = args(&["optimize", "--model", &path(&self.full_model()?), "--out", &path(dir)]);
        a.extend(args(extra));
        run_cli(&a)
    }

    fn sweep(&self, name: &str, extra: &[&str]) -> Result<(Vec<String>, Vec<Vec<f64>>, Duration), String> {
        let out = self.dir.join("runs").join(name);
        let mut a = args(&["sweep", "--model", &path(&self.full_model()?), "--out", &path(&out)]);
        a.extend(args(extra));
        let t = run_cli(&a)?;
        let (cols, rows) = read_table(&out.join("sweep.csv"))?;
        Ok((cols, rows, t))
    }
}

// 1 ------------------------------------------------------------------------

fn homogeneous_medium(_: &Ctx) -> Check {
    let (e, nu): (f64, f64) = (1.0, 0.3);
    let d = e / (1.0 - nu * nu);
    let want = [[d, nu * d, 0.0], [nu * d, d, 0.0], [0.0, 0.0, e / (2.0 * (1.0 + nu))]];
    let t = Instant::now();
    let hom = Homogenizer::new(120, 120, BaseMaterial::default()).map_err(|e| e.to_string())?;
    let got = hom
        .homogenize(&DensityField::uniform(120, 120, 1.0))
        .map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            // zero entries are measured against the largest modulus
            let scale = if want[i][j] != 0.0 { want[i][j].abs() } else { d };
            worst = worst.max((got.c.0[i][j] - want[i][j]).abs() / scale);
        }
    }
    let detail = format!(
        "C00={:.6} C01={:.6} C22={:.6}, max rel err {worst:.1e}, {secs:.2} s",
        got.c.0[0][0], got.c.0[0][1], got.c.0[2][2]
    );
    Ok((worst < 1e-8 && secs < 5.0, detail))
}

// 2 ------------------------------------------------------------------------

fn cholesky_pipeline(ctx: &Ctx) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_roundtrip = 0.0f64;
    for _ in 0..1000 {
        // A A^T + shift, entries of order one
        let a: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = (0..3).map(|k| a[i][k] * a[j][k]).sum::<f64>();
            }
            c[i][i] += rng.random_range(1e-3..0.5);
        }
        let f = cholesky(&ElasticityMatrix(c)).map_err(|e| e.to_string())?;
        let l = f.lower();
        for i in 0..3 {
            for j in 0..3 {
                let llt: f64 = (0..3).map(|k| l[i][k] * l[j][k]).sum();
                worst_roundtrip = worst_roundtrip.max((llt - c[i][j]).abs());
            }
        }
    }

    let mut models: Vec<MlpModel> = (0..4).map(MlpModel::random).collect();
    if let Ok(p) = ctx.full_model() {
        models.push(MlpModel::load(&p).map_err(|e| e.to_string())?);
    }
    let per = 100_000usize.div_ceil(models.len());
    let (mut min_eig, mut min_diag, mut n, mut indefinite) = (f64::INFINITY, f64::INFINITY, 0usize, 0usize);
    for m in &models {
        for _ in 0..per {
            let x: [f64; INPUT_DIM] = std::array::from_fn(|_| rng.random_range(-3.0..4.0));
            let c = m.forward(&x).map_err(|e| e.to_string())?.elasticity();
            min_eig = min_eig.min(c.eigenvalues()[0]);
            min_diag = min_diag.min(c.0[0][0].min(c.0[1][1]).min(c.0[2][2]));
            if !exactly_positive_definite(&c) {
                indefinite += 1;
            }
            n += 1;
        }
    }
    let detail = format!(
        "roundtrip max {worst_roundtrip:.1e}; {n} predictions: {indefinite} not positive definite in exact arithmetic, \
         min float eigenvalue {min_eig:.2e}, min diagonal {min_diag:.2e} (floor {DIAG_FLOOR:e})"
    );
    Ok((worst_roundtrip < 1e-12 && indefinite == 0 && min_diag >= 1e-12 && n >= 100_000, detail))
}

/// Sylvester's criterion on the stored doubles, evaluated with exact
/// rationals. A float eigen-solve cannot resolve eigenvalues below
/// eps * |C|, which is where a floored factor puts the smallest one.
fn exactly_positive_definite(c: &ElasticityMatrix) -> bool {
    let q = |i: usize, j: usize| BigRational::from_float(c.0[i][j]).expect("finite entry");
    let zero = BigRational::from_integer(0.into());
    let m1 = q(0, 0);
    let m2 = q(0, 0) * q(1, 1) - q(0, 1) * q(1, 0);
    let m3 = q(0, 0) * (q(1, 1) * q(2, 2) - q(1, 2) * q(2, 1))
        - q(0, 1) * (q(1, 0) * q(2, 2) - q(1, 2) * q(2, 0))
        + q(0, 2) * (q(1, 0) * q(2, 1) - q(1, 1) * q(2, 0));
    m1 > zero && m2 > zero && m3 > zero
}

// 3 ------------------------------------------------------------------------

fn gradient_oracle(_: &Ctx) -> Check {
    let t = Instant::now();
    let p = Catalog::builtin()
        .problem("mid-cantilever", Some(MacroMesh::new(3, 2).unwrap()))
        .map_err(|e| e.to_string())?;
    // random weights with the output biases lifted off the diagonal clip
    let mut model = MlpModel::random(33);
    let n = model.params().len();
    let out = &mut model.params_mut()[n - TARGET_DIM..];
    for s in [0, 2, 5] {
        out[s] += 1.0;
    }
    out[6] += 0.5;
    let config = OptConfig::default();
    let ev = Evaluator::new(&model, p.mesh, &p.bc, config.filter_radius, config.bounds, config.v_max)
        .map_err(|e| e.to_string())?;
    let mut state = DesignState::initial(p.mesh, config.bounds, config.filter_radius)
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for z in &mut state.latents {
        *z += rng.random_range(-1.5..1.5);
    }
    let masks = |z: &[f64]| -> Result<Vec<Vec<bool>>, String> {
        let s = DesignState {
            latents: z.to_vec(),
            ..state.clone()
        };
        let designs = s.designs().map_err(|e| e.to_string())?;
        build_surrogate_inputs(&p.mesh, &designs)
            .iter()
            .map(|x| model.record(x).map(|t| t.active_mask()).map_err(|e| e.to_string()))
            .collect()
    };
    let (j0, gamma) = (2.5, 0.85);
    let at = ev.evaluate(&state.latents, Some(j0), gamma).map_err(|e| e.to_string())?;
    let reference = masks(&state.latents)?;
    let scale = at.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let h = 1e-4;
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for i in 0..state.latents.len() {
        let (mut zp, mut zm) = (state.latents.clone(), state.latents.clone());
        zp[i] += h;
        zm[i] -= h;
        if masks(&zp)? != reference || masks(&zm)? != reference {
            continue;
        }
        let lp = ev.evaluate(&zp, Some(j0), gamma).map_err(|e| e.to_string())?.loss;
        let lm = ev.evaluate(&zm, Some(j0), gamma).map_err(|e| e.to_string())?.loss;
        let fd = (lp - lm) / (2.0 * h);
        let a = at.gradient[i];
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3 * scale));
        checked += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    let total = state.latents.len();
    let detail = format!("{checked}/{total} latents, max relative error {worst:.2e}, {secs:.1} s");
    Ok((worst < 1e-4 && checked * 4 >= total * 3 && secs < 60.0, detail))
}

// 4 ------------------------------------------------------------------------

fn held_out(model: &Path, corpus: &Path, split: (usize, usize, usize)) -> Result<surrogate::Accuracy, String> {
    let m = MlpModel::load(model).map_err(|e| e.to_string())?;
    let d = Dataset::load(corpus).map_err(|e| e.to_string())?;
    let s = dataset::split(&d.samples, split, TRAIN_SEED).map_err(|e| e.to_string())?;
    Ok(surrogate::accuracy(&m, &s.test))
}

fn surrogate_accuracy(ctx: &Ctx) -> Check {
    let desk = held_out(&ctx.desk_model()?, &ctx.desk_corpus()?, (2500, 250, 250))?;
    let full = held_out(&ctx.full_model()?, &ctx.corpus()?, (10000, 1000, 1000))?;
    let pass = desk.c_median < 0.15 && desk.v_median < 0.15 && full.c_median < 0.10 && full.v_median < 0.10;
    let detail = format!(
        "3000: C {:.1}% v {:.1}% (n={}); 12000: C {:.1}% v {:.1}% (n={})",
        100.0 * desk.c_median,
        100.0 * desk.v_median,
        desk.count,
        100.0 * full.c_median,
        100.0 * full.v_median,
        full.count
    );
    Ok((pass, detail))
}

// 5 and 8 ------------------------------------------------------------------

fn cantilever_run(ctx: &Ctx) -> Result<(PathBuf, Duration), String> {
    let dir = ctx.dir.join("runs").join("mid-cantilever");
    let t = ctx.optimize(&dir, &["--problem", "mid-cantilever", "--mesh", "40x20", "--vmax", "0.6"])?;
    Ok((dir, t))
}

fn mid_cantilever(ctx: &Ctx) -> Check {
    let (dir, t) = cantilever_run(ctx)?;
    let (cols, rows) = read_table(&dir.join("log.csv"))?;
    let j = *column(&cols, &rows, "compliance")?.last().ok_or("empty log")?;
    let report = dir.join("verify.csv");
    run_cli(&args(&[
        "verify",
        "--state",
        &path(&dir.join("state.bin")),
        "--model",
        &path(&ctx.full_model()?),
        "--out",
        &path(&report),
        "--render",
        &path(&dir.join("design.pgm")),
    ]))?;
    let (vc, vr) = read_table(&report)?;
    let ce = column(&vc, &vr, "compliance_error")?[0];
    let ve = column(&vc, &vr, "volume_error")?[0];
    let secs = t.as_secs_f64();
    let detail = format!(
        "J = {j:.2} in {} iterations ({secs:.0} s); verify: compliance error {:.1}%, volume error {:.1}%",
        rows.len(),
        100.0 * ce,
        100.0 * ve
    );
    Ok(((55.0..=85.0).contains(&j) && ce < 0.15 && ve < 0.10 && secs < 300.0, detail))
}

fn convergence(ctx: &Ctx) -> Check {
    let dir = ctx.dir.join("runs").join("mid-cantilever");
    if !dir.join("log.csv").exists() {
        cantilever_run(ctx)?;
    }
    let (cols, rows) = read_table(&dir.join("log.csv"))?;
    let loss = column(&cols, &rows, "loss")?;
    let g = column(&cols, &rows, "g_v")?;
    if loss.len() < 10 {
        return Ok((false, format!("only {} iterations logged", loss.len())));
    }
    let tail = &loss[loss.len() - 10..];
    let mean = tail.iter().sum::<f64>() / 10.0;
    let var = tail.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / 10.0;
    let (first, last) = (loss[0], *loss.last().unwrap());
    let gv = *g.last().unwrap();
    let detail = format!(
        "loss {first:.4} -> {last:.4}, final |g_V| = {:.4}, last-10 variance {var:.2e}",
        gv.abs()
    );
    Ok((last < first && gv.abs() < 0.05 && var < 1e-3, detail))
}

// 6 ------------------------------------------------------------------------

fn tensile_bar(ctx: &Ctx) -> Check {
    let dir = ctx.dir.join("runs").join("tensile-bar");
    ctx.optimize(&dir, &["--problem", "tensile-bar", "--vmax", "0.4"])?;
    let (cols, rows) = read_table(&dir.join("log.csv"))?;
    let j = *column(&cols, &rows, "compliance")?.last().ok_or("empty log")?;
    let g = *column(&cols, &rows, "g_v")?.last().unwrap();
    let detail = format!("J = {j:.2} (g_V = {g:+.4}) in {} iterations", rows.len());
    Ok(((170.0..=260.0).contains(&j), detail))
}

// 7 ------------------------------------------------------------------------

fn non_increasing(js: &[f64]) -> bool {
    js.windows(2).all(|w| w[1] <= w[0] * 1.02)
}

fn fmt_js(js: &[f64]) -> String {
    js.iter().map(|j| format!("{j:.2}")).collect::<Vec<_>>().join(", ")
}

fn trends(ctx: &Ctx) -> Check {
    const SWEEP_LIMIT: f64 = 15.0 * 60.0;
    let cant = ["--problem", "mid-cantilever", "--vmax", "0.5"];
    let mut pass = true;
    let mut parts = Vec::new();

    let (c, r, t) = ctx.sweep("beta", &[&cant[..], &["--param", "beta_max", "--values", "1,2,3"]].concat())?;
    let js = column(&c, &r, "compliance")?;
    let ok = non_increasing(&js) && t.as_secs_f64() < SWEEP_LIMIT;
    pass &= ok;
    parts.push(format!("beta_max 1,2,3: [{}] {:.0} s", fmt_js(&js), t.as_secs_f64()));

    let (c, r, t) =
        ctx.sweep("alpha", &[&cant[..], &["--param", "alpha_max", "--values", "1.5,2.5,3.5"]].concat())?;
    let js = column(&c, &r, "compliance")?;
    let ok = non_increasing(&js) && t.as_secs_f64() < SWEEP_LIMIT;
    pass &= ok;
    parts.push(format!("alpha_max 1.5,2.5,3.5: [{}] {:.0} s", fmt_js(&js), t.as_secs_f64()));

    let values = format!("0,{PI}");
    let (c, r, t) = ctx.sweep("theta", &[&cant[..], &["--param", "theta_max", "--values", &values]].concat())?;
    let js = column(&c, &r, "compliance")?;
    // fixed at 0 against free in [0, pi]
    let ok = js[0] >= js[1] * 0.98 && t.as_secs_f64() < SWEEP_LIMIT;
    pass &= ok;
    parts.push(format!("theta fixed/free: [{}] {:.0} s", fmt_js(&js), t.as_secs_f64()));

    let (c, r, t) = ctx.sweep(
        "pareto",
        &["--problem", "heel-bone", "--param", "vmax", "--values", "0.6,0.5,0.4,0.3", "--verify"],
    )?;
    let mut js = column(&c, &r, "compliance")?;
    let ce = column(&c, &r, "compliance_error")?;
    let ve = column(&c, &r, "volume_error")?;
    // listed from large to small volume: compliance must not drop as v_max shrinks
    js.reverse();
    let errs_ok = ce.iter().chain(&ve).all(|e| *e < 0.10);
    let ok = non_increasing(&js) && errs_ok && t.as_secs_f64() < SWEEP_LIMIT;
    pass &= ok;
    let worst = ce.iter().chain(&ve).fold(0.0f64, |m, e| m.max(*e));
    parts.push(format!(
        "pareto v_max 0.3..0.6: [{}], worst verify error {:.1}%, {:.0} s",
        fmt_js(&js),
        100.0 * worst,
        t.as_secs_f64()
    ));
    Ok((pass, parts.join("; ")))
}

// 9 ------------------------------------------------------------------------

fn determinism(ctx: &Ctx) -> Check {
    let dir = ctx.dir.join("runs").join("determinism");
    let (a, b) = (dir.join("a.bin"), dir.join("b.bin"));
    for p in [&a, &b] {
        run_cli(&args(&["gen-data", "--count", "64", "--seed", "9", "--out", &path(p)]))?;
    }
    let same_data = fs::read(&a).map_err(|e| e.to_string())? == fs::read(&b).map_err(|e| e.to_string())?;

    let mut logs = Vec::new();
    for r in ["r1", "r2"] {
        let out = dir.join(r);
        let model = path(&ctx.full_model()?);
        run_cli(&args(&[
            "--threads", "1", "optimize", "--model", &model, "--problem", "mid-cantilever", "--max-iter",
            "40", "--out", &path(&out),
        ]))?;
        logs.push(read_table(&out.join("log.csv"))?);
    }
    let (cols, r1) = &logs[0];
    let (_, r2) = &logs[1];
    let mut worst = 0.0f64;
    let mut same_shape = r1.len() == r2.len();
    for (x, y) in r1.iter().zip(r2) {
        for (i, c) in cols.iter().enumerate() {
            if c != "wall_time" {
                worst = worst.max((x[i] - y[i]).abs());
            }
        }
        same_shape &= x.len() == y.len();
    }
    let detail = format!(
        "corpus bytes identical: {same_data}; {} log rows, max difference {worst:.1e}",
        r1.len()
    );
    Ok((same_data && same_shape && worst <= 1e-12, detail))
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let target = std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| root.join("target"));
    let ctx = Ctx {
        dir: target.join("voroto-acceptance"),
        fresh: std::env::var_os("VOROTO_ACCEPTANCE_FRESH").is_some_and(|v| v != "0"),
    };
    fs::create_dir_all(ctx.dir.join("runs")).expect("cache directory");
    let only: Option<BTreeSet<usize>> = std::env::var("VOROTO_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());

    let criteria: [(&str, fn(&Ctx) -> Check); 9] = [
        ("homogeneous medium", homogeneous_medium),
        ("cholesky pipeline", cholesky_pipeline),
        ("end-to-end gradient", gradient_oracle),
        ("surrogate accuracy", surrogate_accuracy),
        ("mid-cantilever", mid_cantilever),
        ("tensile bar", tensile_bar),
        ("trend sweeps", trends),
        ("convergence", convergence),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match f(&ctx) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {n} {name}: {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        if std::env::var_os("VOROTO_ACCEPTANCE_STRICT").is_some_and(|v| v != "0") {
            std::process::exit(1);
        }
    }
}
