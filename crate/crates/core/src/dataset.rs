//! Offline training corpus: neighborhood sampling, homogenization, Cholesky
//! encoding, persistence and splitting.
//!
//! Input vector layout (75 values): the 9 elements of the neighborhood in
//! slot order (bottom to top, then left to right), each contributing its 4
//! sites in base-grid order as `x, y` pairs; then `beta, alpha, theta` of the
//! center element. Target layout (7 values): `L00, L10, L11, L20, L21, L22, v`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::homogenize::{BaseMaterial, ElasticityMatrix, Homogenized, Homogenizer};
use crate::io::{self, Header};
use crate::voronoi::{
    self, neighbor_offset, CellParams, MicrostructureSpec, Site, DEFAULT_SHARPNESS, NEIGHBORHOOD,
};

pub const SITES_PER_ELEMENT: usize = 4;
pub const INPUT_DIM: usize = NEIGHBORHOOD * 2 * SITES_PER_ELEMENT + 3;
pub const TARGET_DIM: usize = 7;

/// Unperturbed site positions inside an element, in input order.
pub const BASE_GRID: [(f64, f64); SITES_PER_ELEMENT] =
    [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)];

const MAX_PLACEMENT_ATTEMPTS: usize = 100;
const MAX_SAMPLE_ATTEMPTS: u64 = 4;
const CORPUS_MAGIC: &[u8; 8] = b"VRTCORP1";
pub const CORPUS_FORMAT: &str = "voroto-corpus/1";

/// Closed interval.
pub type Range = (f64, f64);

/// Sampling ranges of the neighborhood generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingRanges {
    pub delta: Range,
    pub beta: Range,
    pub alpha: Range,
    pub theta: Range,
    pub min_separation: f64,
}

impl Default for SamplingRanges {
    fn default() -> Self {
        Self {
            delta: (-0.225, 0.225),
            beta: (0.3, 3.0),
            alpha: (1.0, 3.5),
            theta: (0.0, std::f64::consts::PI),
            min_separation: 0.1,
        }
    }
}

impl SamplingRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (lo, hi): Range| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} range [{lo}, {hi}] is invalid")))
            }
        };
        ordered("delta", self.delta)?;
        ordered("beta", self.beta)?;
        ordered("alpha", self.alpha)?;
        ordered("theta", self.theta)?;
        if self.delta.0 < -0.25 || self.delta.1 > 0.25 {
            return Err(Error::Config(format!(
                "delta range [{}, {}] lets sites leave their element",
                self.delta.0, self.delta.1
            )));
        }
        if self.beta.0 <= 0.0 || self.alpha.0 <= 0.0 {
            return Err(Error::Config("beta and alpha must be positive".into()));
        }
        // base sites are 0.5 apart; perturbations can spread them at most
        // by the width of the delta range
        let reach = 0.5 + (self.delta.1 - self.delta.0);
        if !(self.min_separation >= 0.0 && self.min_separation <= reach) {
            return Err(Error::Config(format!(
                "min separation {} infeasible with delta range [{}, {}]",
                self.min_separation, self.delta.0, self.delta.1
            )));
        }
        if self.delta.0 == self.delta.1 && self.min_separation > 0.5 {
            return Err(Error::Config("fixed grid violates min separation".into()));
        }
        Ok(())
    }

    pub fn write_header(&self, h: &mut Header) {
        h.push("sampling.delta_min", self.delta.0)
            .push("sampling.delta_max", self.delta.1)
            .push("sampling.beta_min", self.beta.0)
            .push("sampling.beta_max", self.beta.1)
            .push("sampling.alpha_min", self.alpha.0)
            .push("sampling.alpha_max", self.alpha.1)
            .push("sampling.theta_min", self.theta.0)
            .push("sampling.theta_max", self.theta.1)
            .push("sampling.min_separation", self.min_separation);
    }
}

/// Everything that determines a corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub ranges: SamplingRanges,
    pub sharpness: f64,
    /// Micro grid per element side.
    pub resolution: usize,
    pub material: BaseMaterial,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            ranges: SamplingRanges::default(),
            sharpness: DEFAULT_SHARPNESS,
            resolution: 120,
            material: BaseMaterial::default(),
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn header(&self) -> Header {
        let mut h = Header::new();
        self.ranges.write_header(&mut h);
        h.push("voronoi.sharpness", self.sharpness)
            .push("homogenize.resolution", self.resolution)
            .push("material.youngs", self.material.youngs)
            .push("material.poisson", self.material.poisson)
            .push("material.void_eps", self.material.void_eps)
            .push("seed", self.seed);
        h
    }

    pub fn from_header(h: &Header) -> Result<Self> {
        Ok(Self {
            ranges: SamplingRanges {
                delta: (h.parse("sampling.delta_min")?, h.parse("sampling.delta_max")?),
                beta: (h.parse("sampling.beta_min")?, h.parse("sampling.beta_max")?),
                alpha: (h.parse("sampling.alpha_min")?, h.parse("sampling.alpha_max")?),
                theta: (h.parse("sampling.theta_min")?, h.parse("sampling.theta_max")?),
                min_separation: h.parse("sampling.min_separation")?,
            },
            sharpness: h.parse("voronoi.sharpness")?,
            resolution: h.parse("homogenize.resolution")?,
            material: BaseMaterial {
                youngs: h.parse("material.youngs")?,
                poisson: h.parse("material.poisson")?,
                void_eps: h.parse("material.void_eps")?,
            },
            seed: h.parse("seed")?,
        })
    }
}

/// Independent random stream for sample `index` (and retry `attempt`).
pub fn sample_rng(seed: u64, index: u64, attempt: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16..24].copy_from_slice(&attempt.to_le_bytes());
    key[24..].copy_from_slice(b"voroto-s");
    ChaCha8Rng::from_seed(key)
}

fn uniform(rng: &mut impl Rng, (lo, hi): Range) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws a random neighborhood: 4 perturbed base-grid sites in each of the
/// 9 elements and uniform shape parameters for the center element.
pub fn sample_spec(
    rng: &mut impl Rng,
    ranges: &SamplingRanges,
    sharpness: f64,
) -> Result<MicrostructureSpec> {
    ranges.validate()?;
    let mut sites = Vec::with_capacity(NEIGHBORHOOD * SITES_PER_ELEMENT);
    for j in 0..NEIGHBORHOOD {
        let (dx, dy) = neighbor_offset(j);
        let start = sites.len();
        for (bx, by) in BASE_GRID {
            let mut placed = None;
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let s = Site::new(
                    dx as f64 + bx + uniform(rng, ranges.delta),
                    dy as f64 + by + uniform(rng, ranges.delta),
                );
                let ok = sites[start..]
                    .iter()
                    .all(|q: &Site| (s.x - q.x).hypot(s.y - q.y) >= ranges.min_separation);
                if ok {
                    placed = Some(s);
                    break;
                }
            }
            sites.push(placed.ok_or_else(|| {
                Error::Config(format!(
                    "could not place a site {} apart after {MAX_PLACEMENT_ATTEMPTS} attempts",
                    ranges.min_separation
                ))
            })?);
        }
    }
    let params = CellParams::new(
        uniform(rng, ranges.beta),
        uniform(rng, ranges.alpha),
        uniform(rng, ranges.theta),
    )?;
    MicrostructureSpec::new(sites, params, sharpness)
}

/// Flattens a neighborhood spec into the network input layout.
pub fn encode_input(spec: &MicrostructureSpec) -> Result<[f64; INPUT_DIM]> {
    if spec.sites.len() != NEIGHBORHOOD * SITES_PER_ELEMENT {
        return Err(Error::InvalidParameter(format!(
            "expected {} sites, got {}",
            NEIGHBORHOOD * SITES_PER_ELEMENT,
            spec.sites.len()
        )));
    }
    let mut v = [0.0; INPUT_DIM];
    for (i, s) in spec.sites.iter().enumerate() {
        v[2 * i] = s.x;
        v[2 * i + 1] = s.y;
    }
    v[INPUT_DIM - 3] = spec.params.beta;
    v[INPUT_DIM - 2] = spec.params.alpha;
    v[INPUT_DIM - 1] = spec.params.theta;
    Ok(v)
}

/// Inverse of [`encode_input`].
pub fn decode_input(input: &[f64; INPUT_DIM], sharpness: f64) -> Result<MicrostructureSpec> {
    let sites = (0..NEIGHBORHOOD * SITES_PER_ELEMENT)
        .map(|i| Site::new(input[2 * i], input[2 * i + 1]))
        .collect();
    let params = CellParams::new(
        input[INPUT_DIM - 3],
        input[INPUT_DIM - 2],
        input[INPUT_DIM - 1],
    )?;
    MicrostructureSpec::new(sites, params, sharpness)
}

/// Lower-triangular factor `L` with `C = L L^T`, stored as
/// `[L00, L10, L11, L20, L21, L22]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CholeskyFactor(pub [f64; 6]);

impl CholeskyFactor {
    pub fn lower(&self) -> [[f64; 3]; 3] {
        let l = &self.0;
        [[l[0], 0.0, 0.0], [l[1], l[2], 0.0], [l[3], l[4], l[5]]]
    }

    pub fn diagonal(&self) -> [f64; 3] {
        [self.0[0], self.0[2], self.0[5]]
    }

    /// `L L^T`, with each diagonal entry raised by a bound on the rounding
    /// error of its row. A floored but nearly singular `L` otherwise rounds
    /// to an indefinite matrix; with the margin the stored doubles stay
    /// positive definite. The margin is of order eps * |C| and is treated
    /// as a constant by the reverse pass.
    pub fn reconstruct(&self) -> ElasticityMatrix {
        let l = self.lower();
        let mut c = [[0.0; 3]; 3];
        let mut bound = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = (0..3).map(|k| l[i][k] * l[j][k]).sum();
                bound[i] += (0..3).map(|k| (l[i][k] * l[j][k]).abs()).sum::<f64>();
            }
        }
        for i in 0..3 {
            c[i][i] += 4.0 * f64::EPSILON * bound[i];
        }
        ElasticityMatrix(c)
    }
}

/// Cholesky decomposition of a symmetric positive definite 3x3 matrix.
pub fn cholesky(c: &ElasticityMatrix) -> Result<CholeskyFactor> {
    let a = &c.0;
    if a.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("elasticity matrix".into()));
    }
    let mut l = [[0.0; 3]; 3];
    for j in 0..3 {
        let d = a[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d <= 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        l[j][j] = d.sqrt();
        for i in j + 1..3 {
            let s = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = s / l[j][j];
        }
    }
    Ok(CholeskyFactor([
        l[0][0], l[1][0], l[1][1], l[2][0], l[2][1], l[2][2],
    ]))
}

/// One training pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub input: [f64; INPUT_DIM],
    pub target: [f64; TARGET_DIM],
}

impl Sample {
    pub fn new(spec: &MicrostructureSpec, hom: &Homogenized) -> Result<Self> {
        let l = cholesky(&hom.c)?;
        let mut target = [0.0; TARGET_DIM];
        target[..6].copy_from_slice(&l.0);
        target[6] = hom.volume_fraction;
        Ok(Self {
            input: encode_input(spec)?,
            target,
        })
    }

    pub fn factor(&self) -> CholeskyFactor {
        CholeskyFactor(self.target[..6].try_into().expect("six entries"))
    }

    pub fn volume_fraction(&self) -> f64 {
        self.target[6]
    }
}

/// Generated corpus with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: GenConfig,
    pub samples: Vec<Sample>,
}

fn generate_one(config: &GenConfig, hom: &Homogenizer, index: usize) -> Result<Sample> {
    let mut last = None;
    for attempt in 0..MAX_SAMPLE_ATTEMPTS {
        let mut rng = sample_rng(config.seed, index as u64, attempt);
        let spec = sample_spec(&mut rng, &config.ranges, config.sharpness)?;
        let field = voronoi::rasterize(&spec, config.resolution, config.resolution)?;
        let h = hom.homogenize(&field)?;
        match Sample::new(&spec, &h) {
            Ok(s) => return Ok(s),
            Err(e @ Error::NotPositiveDefinite { .. }) => {
                log::warn!("sample {index} attempt {attempt} dropped: {e}");
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Generates `count` samples. Each sample draws from its own stream derived
/// from `(seed, index)`, so the corpus does not depend on the worker count
/// and its first `n` samples equal a corpus of size `n`.
pub fn generate(count: usize, config: &GenConfig) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    config.ranges.validate()?;
    config.material.validate()?;
    let done = AtomicUsize::new(0);
    let res = config.resolution;
    let samples = (0..count)
        .into_par_iter()
        .map_init(
            || Homogenizer::new(res, res, config.material),
            |hom, index| {
                let hom = hom.as_ref().map_err(|e| Error::Config(e.to_string()))?;
                let s = generate_one(config, hom, index).map_err(|e| Error::Sample {
                    index,
                    source: Box::new(e),
                })?;
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if n % 500 == 0 {
                    log::info!("generated {n}/{count} samples");
                }
                Ok(s)
            },
        )
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: *config,
        samples,
    })
}

impl Dataset {
    pub fn header(&self) -> Header {
        let mut h = Header::new();
        h.push("format", CORPUS_FORMAT)
            .push("count", self.samples.len())
            .push("input_dim", INPUT_DIM)
            .push("target_dim", TARGET_DIM);
        h.extend(&self.config.header());
        h
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        io::write_header(w, CORPUS_MAGIC, &self.header())?;
        io::write_u64(w, self.samples.len() as u64)?;
        for s in &self.samples {
            io::write_f64s(w, &s.input)?;
            io::write_f64s(w, &s.target)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(r: &mut impl std::io::Read) -> Result<Self> {
        let h = io::read_header(r, CORPUS_MAGIC)?;
        if h.require("format")? != CORPUS_FORMAT {
            return Err(Error::Format(format!("unsupported corpus format {:?}", h.get("format"))));
        }
        if h.parse::<usize>("input_dim")? != INPUT_DIM || h.parse::<usize>("target_dim")? != TARGET_DIM {
            return Err(Error::Format("corpus record width mismatch".into()));
        }
        let config = GenConfig::from_header(&h)?;
        let count = io::read_u64(r)? as usize;
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let v = io::read_f64s(r, INPUT_DIM + TARGET_DIM)?;
            samples.push(Sample {
                input: v[..INPUT_DIM].try_into().expect("input width"),
                target: v[INPUT_DIM..].try_into().expect("target width"),
            });
        }
        Ok(Self { config, samples })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }

    /// CSV mirror for inspection, with the header as `#` comments.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(self.header().to_comment().as_bytes())?;
        let mut cols: Vec<String> = (0..NEIGHBORHOOD * SITES_PER_ELEMENT)
            .flat_map(|i| [format!("x{i}"), format!("y{i}")])
            .collect();
        cols.extend(
            ["beta", "alpha", "theta", "L00", "L10", "L11", "L20", "L21", "L22", "v"]
                .map(String::from),
        );
        writeln!(w, "{}", cols.join(","))?;
        for s in &self.samples {
            let row: Vec<String> = s
                .input
                .iter()
                .chain(&s.target)
                .map(|v| format!("{v:e}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Train / validation / test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Seeded shuffle followed by a disjoint partition into the given sizes.
pub fn split(samples: &[Sample], sizes: (usize, usize, usize), seed: u64) -> Result<Splits> {
    let (a, b, c) = sizes;
    let need = a + b + c;
    if need > samples.len() {
        return Err(Error::Config(format!(
            "split sizes {a}+{b}+{c} = {need} exceed {} samples",
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |r: std::ops::Range<usize>| order[r].iter().map(|&i| samples[i]).collect();
    Ok(Splits {
        train: pick(0..a),
        val: pick(a..a + b),
        test: pick(a + b..need),
    })
}

/// Index-level version of [`split`] (same permutation).
pub fn split_indices(n: usize, sizes: (usize, usize, usize), seed: u64) -> Result<[Vec<usize>; 3]> {
    let (a, b, c) = sizes;
    if a + b + c > n {
        return Err(Error::Config(format!("split sizes exceed {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok([
        order[..a].to_vec(),
        order[a..a + b].to_vec(),
        order[a + b..a + b + c].to_vec(),
    ])
}
