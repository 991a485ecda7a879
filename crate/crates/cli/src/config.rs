//! Resolved run settings: defaults, then a `key = value` config file with
//! `[section]` headers, then command-line overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use voroto_core::dataset::GenConfig;
use voroto_core::fea::MacroMesh;
use voroto_core::io::Header;
use voroto_core::optimize::{OptConfig, SiteInit};
use voroto_core::surrogate::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub count: usize,
    pub train: TrainConfig,
    /// Train / validation / test sizes.
    pub split: (usize, usize, usize),
    pub opt: OptConfig,
    pub problem: String,
    /// Overrides the catalog mesh.
    pub mesh: Option<MacroMesh>,
    /// Micro resolution for verification and renders; `None` uses the
    /// training resolution.
    pub verify_resolution: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gen: GenConfig::default(),
            count: 12000,
            train: TrainConfig::default(),
            split: (10000, 1000, 1000),
            opt: OptConfig::default(),
            problem: "mid-cantilever".into(),
            mesh: None,
            verify_resolution: None,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .ok()
        .with_context(|| format!("`{key}`: cannot parse `{value}`"))
}

pub fn parse_mesh(value: &str) -> Result<MacroMesh> {
    let (x, y) = value
        .split_once(['x', 'X', ' '])
        .with_context(|| format!("mesh `{value}` is not NXxNY"))?;
    Ok(MacroMesh::new(num("mesh", x)?, num("mesh", y)?)?)
}

pub fn parse_split(value: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| num("split", p))
        .collect::<Result<_>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => bail!("split `{value}` needs three sizes"),
    }
}

impl RunConfig {
    /// Sets one `section.key` value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let g = &mut self.gen;
        let o = &mut self.opt;
        let t = &mut self.train;
        match key {
            "data.count" => self.count = num(key, v)?,
            "data.seed" => g.seed = num(key, v)?,
            "data.resolution" => g.resolution = num(key, v)?,
            "data.sharpness" => g.sharpness = num(key, v)?,
            "data.delta_min" => g.ranges.delta.0 = num(key, v)?,
            "data.delta_max" => g.ranges.delta.1 = num(key, v)?,
            "data.beta_min" => g.ranges.beta.0 = num(key, v)?,
            "data.beta_max" => g.ranges.beta.1 = num(key, v)?,
            "data.alpha_min" => g.ranges.alpha.0 = num(key, v)?,
            "data.alpha_max" => g.ranges.alpha.1 = num(key, v)?,
            "data.theta_min" => g.ranges.theta.0 = num(key, v)?,
            "data.theta_max" => g.ranges.theta.1 = num(key, v)?,
            "data.min_separation" => g.ranges.min_separation = num(key, v)?,
            "material.youngs" => g.material.youngs = num(key, v)?,
            "material.poisson" => g.material.poisson = num(key, v)?,
            "material.void_eps" => g.material.void_eps = num(key, v)?,
            "train.learning_rate" => t.learning_rate = num(key, v)?,
            "train.batch_size" => t.batch_size = num(key, v)?,
            "train.max_epochs" => t.max_epochs = num(key, v)?,
            "train.patience" => t.patience = num(key, v)?,
            "train.seed" => t.seed = num(key, v)?,
            "train.split" => self.split = parse_split(v)?,
            "optimize.problem" => self.problem = v.to_string(),
            "optimize.mesh" => self.mesh = Some(parse_mesh(v)?),
            "optimize.v_max" => o.v_max = num(key, v)?,
            "optimize.gamma0" => o.gamma0 = num(key, v)?,
            "optimize.gamma_step" => o.gamma_step = num(key, v)?,
            "optimize.learning_rate" => o.learning_rate = num(key, v)?,
            "optimize.filter_radius" => o.filter_radius = num(key, v)?,
            "optimize.tolerance" => o.tolerance = num(key, v)?,
            "optimize.max_iterations" => o.max_iterations = num(key, v)?,
            "optimize.tolerance_window" => o.tolerance_window = num(key, v)?,
            "optimize.delta_min" => o.bounds.delta.0 = num(key, v)?,
            "optimize.delta_max" => o.bounds.delta.1 = num(key, v)?,
            "optimize.beta_min" => o.bounds.beta.0 = num(key, v)?,
            "optimize.beta_max" => o.bounds.beta.1 = num(key, v)?,
            "optimize.alpha_min" => o.bounds.alpha.0 = num(key, v)?,
            "optimize.alpha_max" => o.bounds.alpha.1 = num(key, v)?,
            "optimize.theta_min" => o.bounds.theta.0 = num(key, v)?,
            "optimize.theta_max" => o.bounds.theta.1 = num(key, v)?,
            "optimize.init" => {
                o.init = match (v, o.init) {
                    ("grid", _) => SiteInit::Grid,
                    ("random", SiteInit::Random { .. }) => o.init,
                    ("random", SiteInit::Grid) => OptConfig::default().init,
                    _ => bail!("optimize.init must be `grid` or `random`, got `{v}`"),
                }
            }
            "optimize.init_seed" | "optimize.init_separation" => {
                let SiteInit::Random { seed, min_separation } = &mut o.init else {
                    bail!("{key} needs optimize.init = random");
                };
                if key.ends_with("seed") {
                    *seed = num(key, v)?;
                } else {
                    *min_separation = num(key, v)?;
                }
            }
            "verify.resolution" => self.verify_resolution = Some(num(key, v)?),
            _ => bail!("unknown setting `{key}`"),
        }
        Ok(())
    }

    /// Applies a config file. Keys before any section header are an error.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(name.trim().to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key = value", n + 1))?;
            let s = section
                .as_deref()
                .with_context(|| format!("line {}: setting outside a [section]", n + 1))?;
            self.set(&format!("{s}.{}", k.trim()), v)
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text)
            .with_context(|| format!("in config {}", path.display()))
    }

    /// `section.key=value` override from the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .with_context(|| format!("override `{assignment}` is not key=value"))?;
        self.set(k.trim(), v)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.ranges.validate()?;
        self.gen.material.validate()?;
        self.train.validate()?;
        self.opt.validate()?;
        if self.gen.resolution < 2 {
            bail!("data.resolution must be at least 2");
        }
        Ok(())
    }

    /// Every resolved setting, for output headers.
    pub fn header(&self) -> Header {
        let mut h = Header::new();
        let g = &self.gen;
        h.push("data.count", self.count)
            .push("data.seed", g.seed)
            .push("data.resolution", g.resolution)
            .push("data.sharpness", g.sharpness)
            .push("data.delta_min", g.ranges.delta.0)
            .push("data.delta_max", g.ranges.delta.1)
            .push("data.beta_min", g.ranges.beta.0)
            .push("data.beta_max", g.ranges.beta.1)
            .push("data.alpha_min", g.ranges.alpha.0)
            .push("data.alpha_max", g.ranges.alpha.1)
            .push("data.theta_min", g.ranges.theta.0)
            .push("data.theta_max", g.ranges.theta.1)
            .push("data.min_separation", g.ranges.min_separation)
            .push("material.youngs", g.material.youngs)
            .push("material.poisson", g.material.poisson)
            .push("material.void_eps", g.material.void_eps)
            .push("train.learning_rate", self.train.learning_rate)
            .push("train.batch_size", self.train.batch_size)
            .push("train.max_epochs", self.train.max_epochs)
            .push("train.patience", self.train.patience)
            .push("train.seed", self.train.seed)
            .push(
                "train.split",
                format!("{},{},{}", self.split.0, self.split.1, self.split.2),
            )
            .push("optimize.problem", &self.problem)
            .push(
                "optimize.mesh",
                self.mesh
                    .map_or("catalog".to_string(), |m| format!("{}x{}", m.nelx, m.nely)),
            );
        let o = &self.opt;
        h.push("optimize.v_max", o.v_max)
            .push("optimize.gamma0", o.gamma0)
            .push("optimize.gamma_step", o.gamma_step)
            .push("optimize.learning_rate", o.learning_rate)
            .push("optimize.filter_radius", o.filter_radius)
            .push("optimize.tolerance", o.tolerance)
            .push("optimize.max_iterations", o.max_iterations)
            .push("optimize.tolerance_window", o.tolerance_window)
            .push("optimize.delta_min", o.bounds.delta.0)
            .push("optimize.delta_max", o.bounds.delta.1)
            .push("optimize.beta_min", o.bounds.beta.0)
            .push("optimize.beta_max", o.bounds.beta.1)
            .push("optimize.alpha_min", o.bounds.alpha.0)
            .push("optimize.alpha_max", o.bounds.alpha.1)
            .push("optimize.theta_min", o.bounds.theta.0)
            .push("optimize.theta_max", o.bounds.theta.1)
            .push(
                "verify.resolution",
                self.verify_resolution
                    .map_or("training".to_string(), |r| r.to_string()),
            );
        match o.init {
            SiteInit::Grid => {
                h.push("optimize.init", "grid");
            }
            SiteInit::Random { seed, min_separation } => {
                h.push("optimize.init", "random")
                    .push("optimize.init_seed", seed)
                    .push("optimize.init_separation", min_separation);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_and_overrides() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# sample\n[data]\ncount = 50\nsharpness=12.5\n\n[optimize]\nmesh = 6x3 # small\nv_max = 0.4\n",
        )
        .unwrap();
        c.apply_override("train.split=40,5,5").unwrap();
        assert_eq!(c.count, 50);
        assert_eq!(c.gen.sharpness, 12.5);
        assert_eq!(c.mesh, Some(MacroMesh::new(6, 3).unwrap()));
        assert_eq!(c.opt.v_max, 0.4);
        assert_eq!(c.split, (40, 5, 5));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("count = 5").is_err());
        assert!(c.apply_text("[data]\ncolour = 5").is_err());
        assert!(c.apply_text("[data]\ncount = five").is_err());
        assert!(c.apply_override("optimize.mesh=0x3").is_err());
        assert!(c.apply_override("optimize.init=lattice").is_err());
    }

    #[test]
    fn site_initialization_keys() {
        let mut c = RunConfig::default();
        c.set("optimize.init_seed", "7").unwrap();
        c.set("optimize.init_separation", "0.05").unwrap();
        assert_eq!(
            c.opt.init,
            SiteInit::Random {
                seed: 7,
                min_separation: 0.05
            }
        );
        c.set("optimize.init", "grid").unwrap();
        assert_eq!(c.opt.init, SiteInit::Grid);
        assert!(c.set("optimize.init_seed", "1").is_err());
        c.set("optimize.init", "random").unwrap();
        assert_eq!(c.opt.init, OptConfig::default().init);
    }

    #[test]
    fn header_echoes_every_setting() {
        let mut c = RunConfig::default();
        c.set("optimize.beta_max", "2").unwrap();
        c.set("optimize.init_seed", "9").unwrap();
        let h = c.header();
        assert_eq!(h.get("optimize.beta_max"), Some("2"));
        let mut back = RunConfig::default();
        for (k, v) in h.entries() {
            if v != "catalog" && v != "training" {
                back.set(k, v).unwrap();
            }
        }
        assert_eq!(back, c);
    }
}
