//! Multiscale design loop: latent variables, bound map, radial filter,
//! surrogate, macro solve, penalty loss and the reverse pass back to the
//! latents.
//!
//! Each element carries 11 latents: `dx, dy` for each of its 4 sites (in
//! base-grid order) followed by `beta, alpha, theta`. A latent `z` maps to
//! `lo + (hi - lo) * sigmoid(z)`. The shape parameters are filtered across
//! elements; site perturbations are not.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adam::Adam;
use crate::dataset::{Range, BASE_GRID, INPUT_DIM, SITES_PER_ELEMENT, TARGET_DIM};
use crate::error::{Error, Result};
use crate::fea::{compliance_gradient_wrt_c, BoundaryConditions, FeaSolver, MacroMesh};
use crate::homogenize::ElasticityMatrix;
use crate::io::{self, Header};
use crate::surrogate::MlpModel;
use crate::voronoi::{neighbor_offset, CellParams, NEIGHBORHOOD};

pub const LATENTS_PER_ELEMENT: usize = 2 * SITES_PER_ELEMENT + 3;
const BETA: usize = 2 * SITES_PER_ELEMENT;
const ALPHA: usize = BETA + 1;
const THETA: usize = BETA + 2;

const STATE_MAGIC: &[u8; 8] = b"VRTSTAT1";
pub const STATE_FORMAT: &str = "voroto-state/1";

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn bound_map(z: f64, (lo, hi): Range) -> f64 {
    lo + (hi - lo) * sigmoid(z)
}

fn bound_map_derivative(z: f64, (lo, hi): Range) -> f64 {
    let s = sigmoid(z);
    (hi - lo) * s * (1.0 - s)
}

/// Latent value whose mapped value is `x`, kept away from saturation.
fn bound_inverse(x: f64, (lo, hi): Range) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let f = ((x - lo) / (hi - lo)).clamp(0.01, 0.99);
    (f / (1.0 - f)).ln()
}

/// Box bounds of the mapped design parameters. `lo == hi` fixes a parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    pub delta: Range,
    pub beta: Range,
    pub alpha: Range,
    pub theta: Range,
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            delta: (-0.225, 0.225),
            beta: (0.3, 3.0),
            alpha: (1.0, 3.5),
            theta: (0.0, std::f64::consts::PI),
        }
    }
}

impl ParamBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("delta", self.delta),
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("theta", self.theta),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("bounds of {name}: [{lo}, {hi}]")));
            }
        }
        if self.beta.0 <= 0.0 || self.alpha.0 <= 0.0 {
            return Err(Error::Config("beta and alpha bounds must be positive".into()));
        }
        if self.delta.0 <= -0.25 || self.delta.1 >= 0.25 {
            return Err(Error::Config(format!(
                "site perturbation bounds {:?} would leave the element",
                self.delta
            )));
        }
        Ok(())
    }

    fn range(&self, slot: usize) -> Range {
        match slot {
            BETA => self.beta,
            ALPHA => self.alpha,
            THETA => self.theta,
            _ => self.delta,
        }
    }

    pub fn write_header(&self, h: &mut Header) {
        for (name, (lo, hi)) in [
            ("delta", self.delta),
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("theta", self.theta),
        ] {
            h.push(format!("bounds.{name}"), format!("{lo},{hi}"));
        }
    }

    pub fn from_header(h: &Header) -> Result<Self> {
        let range = |name: &str| -> Result<Range> {
            let raw = h.require(&format!("bounds.{name}"))?;
            let bad = || Error::Format(format!("bounds.{name} = `{raw}`"));
            let (a, b) = raw.split_once(',').ok_or_else(bad)?;
            Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
        };
        let b = Self {
            delta: range("delta")?,
            beta: range("beta")?,
            alpha: range("alpha")?,
            theta: range("theta")?,
        };
        b.validate()?;
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptConfig {
    pub v_max: f64,
    pub gamma0: f64,
    pub gamma_step: f64,
    pub learning_rate: f64,
    pub filter_radius: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Consecutive iterations whose loss change must stay below
    /// `tolerance` before the run stops.
    pub tolerance_window: usize,
    pub bounds: ParamBounds,
    pub init: SiteInit,
}

/// Starting positions of the cell sites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SiteInit {
    /// Every site at its regular grid position.
    Grid,
    /// Offsets drawn uniformly from the delta bounds, as in the corpus.
    Random { seed: u64, min_separation: f64 },
}

impl std::fmt::Display for SiteInit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SiteInit::Grid => f.write_str("grid"),
            SiteInit::Random { seed, min_separation } => {
                write!(f, "random(seed={seed},min_separation={min_separation})")
            }
        }
    }
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            v_max: 0.6,
            gamma0: 0.1,
            gamma_step: 0.25,
            learning_rate: 1e-2,
            filter_radius: 3.0,
            tolerance: 1e-3,
            max_iterations: 300,
            tolerance_window: 10,
            bounds: ParamBounds::default(),
            init: SiteInit::Random {
                seed: 0,
                min_separation: 0.1,
            },
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_max > 0.0 && self.v_max <= 1.0) {
            return Err(Error::Config(format!("v_max must be in (0, 1], got {}", self.v_max)));
        }
        if !(self.filter_radius.is_finite() && self.filter_radius > 0.0) {
            return Err(Error::Config(format!(
                "filter radius must be > 0, got {}",
                self.filter_radius
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite())
            || !(self.tolerance >= 0.0)
            || !self.gamma0.is_finite()
            || !self.gamma_step.is_finite()
            || self.max_iterations == 0
            || self.tolerance_window == 0
        {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        self.bounds.validate()
    }

    pub fn write_header(&self, h: &mut Header) {
        h.push("opt.v_max", self.v_max)
            .push("opt.gamma0", self.gamma0)
            .push("opt.gamma_step", self.gamma_step)
            .push("opt.learning_rate", self.learning_rate)
            .push("opt.filter_radius", self.filter_radius)
            .push("opt.tolerance", self.tolerance)
            .push("opt.max_iterations", self.max_iterations)
            .push("opt.tolerance_window", self.tolerance_window)
            .push("opt.init", self.init);
        self.bounds.write_header(h);
    }
}

/// `gamma_t = gamma0 + step * t`.
pub fn gamma_schedule(t: usize, gamma0: f64, step: f64) -> f64 {
    gamma0 + step * t as f64
}

/// `mean(v) / v_max - 1`.
pub fn volume_constraint(volumes: &[f64], v_max: f64) -> f64 {
    let mean = volumes.iter().sum::<f64>() / volumes.len().max(1) as f64;
    mean / v_max - 1.0
}

/// `J / J0 + gamma g_V^2`.
pub fn penalty_loss(j: f64, j0: f64, g_v: f64, gamma: f64) -> Result<f64> {
    if !(j0 > 0.0) {
        return Err(Error::InvalidParameter(format!("reference compliance {j0} must be > 0")));
    }
    Ok(j / j0 + gamma * g_v * g_v)
}

/// Cone-weighted average over element centroids within a radius.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialFilter {
    rows: Vec<Vec<(usize, f64)>>,
}

impl RadialFilter {
    pub fn new(mesh: &MacroMesh, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidParameter(format!("filter radius {radius}")));
        }
        let reach = radius.ceil() as i64;
        let rows = (0..mesh.n_elements())
            .map(|e| {
                let (i, j) = mesh.element_coords(e);
                let mut row = Vec::new();
                for dj in -reach..=reach {
                    for di in -reach..=reach {
                        let (ni, nj) = (i as i64 + di, j as i64 + dj);
                        if ni < 0 || nj < 0 || ni >= mesh.nelx as i64 || nj >= mesh.nely as i64 {
                            continue;
                        }
                        let w = radius - ((di * di + dj * dj) as f64).sqrt();
                        if w > 0.0 {
                            row.push((mesh.element(ni as usize, nj as usize), w));
                        }
                    }
                }
                if row.is_empty() {
                    // radius 0: identity
                    row.push((e, 1.0));
                }
                let total: f64 = row.iter().map(|(_, w)| w).sum();
                row.iter_mut().for_each(|(_, w)| *w /= total);
                row
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Written as `x_i + sum_j w_ij (x_j - x_i)` so constant fields pass
    /// through bit-exactly.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| x[i] + row.iter().map(|(j, w)| w * (x[*j] - x[i])).sum::<f64>())
            .collect()
    }

    /// Adjoint of [`RadialFilter::apply`].
    pub fn transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut x = y.to_vec();
        for (i, (row, yi)) in self.rows.iter().zip(y).enumerate() {
            for (j, w) in row {
                x[*j] += w * yi;
                x[i] -= w * yi;
            }
        }
        x
    }
}

/// Effective parameters of one element: mapped site perturbations and
/// filtered shape parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementDesign {
    pub deltas: [(f64, f64); SITES_PER_ELEMENT],
    pub params: CellParams,
}

/// Latent design variables of a macro mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignState {
    pub mesh: MacroMesh,
    pub bounds: ParamBounds,
    pub filter_radius: f64,
    pub latents: Vec<f64>,
}

impl DesignState {
    /// Regular grid, mid-range thickness, near-isotropic cells with
    /// `theta = pi/2` (all clamped into the bounds).
    pub fn initial(mesh: MacroMesh, bounds: ParamBounds, filter_radius: f64) -> Result<Self> {
        bounds.validate()?;
        let mut one = [0.0; LATENTS_PER_ELEMENT];
        for (s, z) in one.iter_mut().enumerate().take(BETA) {
            *z = bound_inverse(0.0, bounds.range(s));
        }
        one[BETA] = 0.0;
        one[ALPHA] = bound_inverse(bounds.alpha.0 + 0.1, bounds.alpha);
        one[THETA] = bound_inverse(std::f64::consts::FRAC_PI_2, bounds.theta);
        let latents = one
            .iter()
            .copied()
            .cycle()
            .take(LATENTS_PER_ELEMENT * mesh.n_elements())
            .collect();
        Ok(Self {
            mesh,
            bounds,
            filter_radius,
            latents,
        })
    }

    /// Like [`DesignState::initial`], with every site offset drawn uniformly
    /// from the delta bounds. Sites of one element stay `min_separation`
    /// apart.
    pub fn jittered(
        mesh: MacroMesh,
        bounds: ParamBounds,
        filter_radius: f64,
        min_separation: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut state = Self::initial(mesh, bounds, filter_radius)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = bounds.delta;
        for e in 0..mesh.n_elements() {
            let mut sites = [(0.0, 0.0); SITES_PER_ELEMENT];
            for _ in 0..1000 {
                for (k, (bx, by)) in BASE_GRID.iter().enumerate() {
                    let (dx, dy) = if hi > lo {
                        (rng.random_range(lo..=hi), rng.random_range(lo..=hi))
                    } else {
                        (lo, lo)
                    };
                    sites[k] = (bx + dx, by + dy);
                }
                let spread = (0..SITES_PER_ELEMENT).all(|a| {
                    (a + 1..SITES_PER_ELEMENT).all(|b| {
                        let (x, y) = (sites[a].0 - sites[b].0, sites[a].1 - sites[b].1);
                        (x * x + y * y).sqrt() >= min_separation
                    })
                });
                if spread {
                    break;
                }
            }
            let z = &mut state.latents[e * LATENTS_PER_ELEMENT..];
            for (k, (bx, by)) in BASE_GRID.iter().enumerate() {
                z[2 * k] = bound_inverse(sites[k].0 - bx, bounds.delta);
                z[2 * k + 1] = bound_inverse(sites[k].1 - by, bounds.delta);
            }
        }
        Ok(state)
    }

    /// Starting design for `config`.
    pub fn start(mesh: MacroMesh, config: &OptConfig) -> Result<Self> {
        match config.init {
            SiteInit::Grid => Self::initial(mesh, config.bounds, config.filter_radius),
            SiteInit::Random { seed, min_separation } => {
                Self::jittered(mesh, config.bounds, config.filter_radius, min_separation, seed)
            }
        }
    }

    /// Bound-mapped (unfiltered) values, same layout as the latents.
    pub fn mapped(&self) -> Vec<f64> {
        self.latents
            .iter()
            .enumerate()
            .map(|(i, z)| bound_map(*z, self.bounds.range(i % LATENTS_PER_ELEMENT)))
            .collect()
    }

    pub fn filter(&self) -> Result<RadialFilter> {
        RadialFilter::new(&self.mesh, self.filter_radius)
    }

    /// Per-element designs after the radial filter.
    pub fn designs(&self) -> Result<Vec<ElementDesign>> {
        designs_from_mapped(&self.mapped(), &self.filter()?)
    }

    pub fn header(&self) -> Header {
        let mut h = Header::new();
        h.push("format", STATE_FORMAT)
            .push("nelx", self.mesh.nelx)
            .push("nely", self.mesh.nely)
            .push("filter_radius", self.filter_radius);
        self.bounds.write_header(&mut h);
        h
    }

    /// Writes the state; `extra` is appended to the header.
    pub fn write(&self, w: &mut impl Write, extra: &Header) -> Result<()> {
        let mut h = self.header();
        h.extend(extra);
        io::write_header(w, STATE_MAGIC, &h)?;
        io::write_u64(w, self.latents.len() as u64)?;
        io::write_f64s(w, &self.latents)
    }

    pub fn save(&self, path: &Path, extra: &Header) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w, extra)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<(Self, Header)> {
        let h = io::read_header(r, STATE_MAGIC)?;
        if h.require("format")? != STATE_FORMAT {
            return Err(Error::Format(format!("unsupported state format {}", h.require("format")?)));
        }
        let mesh = MacroMesh::new(h.parse("nelx")?, h.parse("nely")?)?;
        let n = io::read_u64(r)? as usize;
        if n != LATENTS_PER_ELEMENT * mesh.n_elements() {
            return Err(Error::Format(format!("{n} latents for a {}x{} mesh", mesh.nelx, mesh.nely)));
        }
        let state = Self {
            mesh,
            bounds: ParamBounds::from_header(&h)?,
            filter_radius: h.parse("filter_radius")?,
            latents: io::read_f64s(r, n)?,
        };
        Ok((state, h))
    }

    pub fn load(path: &Path) -> Result<(Self, Header)> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}

fn designs_from_mapped(mapped: &[f64], filter: &RadialFilter) -> Result<Vec<ElementDesign>> {
    let n = filter.len();
    let column = |slot: usize| -> Vec<f64> {
        filter.apply(&(0..n).map(|e| mapped[e * LATENTS_PER_ELEMENT + slot]).collect::<Vec<_>>())
    };
    let (beta, alpha, theta) = (column(BETA), column(ALPHA), column(THETA));
    (0..n)
        .map(|e| {
            let m = &mapped[e * LATENTS_PER_ELEMENT..(e + 1) * LATENTS_PER_ELEMENT];
            let mut deltas = [(0.0, 0.0); SITES_PER_ELEMENT];
            for (k, d) in deltas.iter_mut().enumerate() {
                *d = (m[2 * k], m[2 * k + 1]);
            }
            Ok(ElementDesign {
                deltas,
                params: CellParams::new(beta[e], alpha[e], theta[e])?,
            })
        })
        .collect()
}

/// Where a neighborhood slot takes its sites from: the source element and
/// whether the source is mirrored in x and y.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotSource {
    pub element: usize,
    pub mirror_x: bool,
    pub mirror_y: bool,
}

fn reflect(i: i64, n: usize) -> (usize, bool) {
    if i < 0 {
        (0, true)
    } else if i >= n as i64 {
        (n - 1, true)
    } else {
        (i as usize, false)
    }
}

/// Source of neighborhood slot `slot` of element `e`. Slots beyond the
/// domain edge reflect the adjacent element across the edge.
pub fn slot_source(mesh: &MacroMesh, e: usize, slot: usize) -> SlotSource {
    let (i, j) = mesh.element_coords(e);
    let (dx, dy) = neighbor_offset(slot);
    let (si, mirror_x) = reflect(i as i64 + dx as i64, mesh.nelx);
    let (sj, mirror_y) = reflect(j as i64 + dy as i64, mesh.nely);
    SlotSource {
        element: mesh.element(si, sj),
        mirror_x,
        mirror_y,
    }
}

/// Site `k` of a mirrored copy comes from site `mirrored_site(k, ..)` of
/// the source, with the mirrored perturbation components negated.
fn mirrored_site(k: usize, mirror_x: bool, mirror_y: bool) -> usize {
    // base-grid index is 2 * (x > 1/2) + (y > 1/2)
    k ^ (if mirror_x { 2 } else { 0 }) ^ (if mirror_y { 1 } else { 0 })
}

/// Surrogate input of every element: the 36 sites of its neighborhood in the
/// element's own frame, then its filtered `beta, alpha, theta`.
pub fn build_surrogate_inputs(
    mesh: &MacroMesh,
    designs: &[ElementDesign],
) -> Vec<[f64; INPUT_DIM]> {
    (0..mesh.n_elements())
        .map(|e| {
            let mut v = [0.0; INPUT_DIM];
            for slot in 0..NEIGHBORHOOD {
                let src = slot_source(mesh, e, slot);
                let (ox, oy) = neighbor_offset(slot);
                for (k, (bx, by)) in BASE_GRID.iter().enumerate() {
                    let (dx, dy) =
                        designs[src.element].deltas[mirrored_site(k, src.mirror_x, src.mirror_y)];
                    let dx = if src.mirror_x { -dx } else { dx };
                    let dy = if src.mirror_y { -dy } else { dy };
                    let at = 2 * (slot * SITES_PER_ELEMENT + k);
                    v[at] = ox as f64 + bx + dx;
                    v[at + 1] = oy as f64 + by + dy;
                }
            }
            let p = designs[e].params;
            v[INPUT_DIM - 3] = p.beta;
            v[INPUT_DIM - 2] = p.alpha;
            v[INPUT_DIM - 1] = p.theta;
            v
        })
        .collect()
}

/// Forward and reverse pass at one design point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub compliance: f64,
    pub g_v: f64,
    pub gamma: f64,
    pub mean_volume: f64,
    pub elasticity: Vec<ElasticityMatrix>,
    pub volumes: Vec<f64>,
    /// `dL/dz` for every latent.
    pub gradient: Vec<f64>,
}

/// Fixed pieces of a design problem: surrogate, macro solver and filter.
pub struct Evaluator<'a> {
    model: &'a MlpModel,
    mesh: MacroMesh,
    solver: FeaSolver,
    filter: RadialFilter,
    bounds: ParamBounds,
    v_max: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        model: &'a MlpModel,
        mesh: MacroMesh,
        bc: &BoundaryConditions,
        filter_radius: f64,
        bounds: ParamBounds,
        v_max: f64,
    ) -> Result<Self> {
        bounds.validate()?;
        Ok(Self {
            model,
            mesh,
            solver: FeaSolver::new(mesh, bc)?,
            filter: RadialFilter::new(&mesh, filter_radius)?,
            bounds,
            v_max,
        })
    }

    /// Loss and gradient at `latents`. `j0 = None` takes the reference
    /// compliance from this evaluation.
    pub fn evaluate(&self, latents: &[f64], j0: Option<f64>, gamma: f64) -> Result<Evaluation> {
        let n = self.mesh.n_elements();
        if latents.len() != n * LATENTS_PER_ELEMENT {
            return Err(Error::InvalidParameter(format!(
                "{} latents for {n} elements",
                latents.len()
            )));
        }
        let mapped: Vec<f64> = latents
            .iter()
            .enumerate()
            .map(|(i, z)| bound_map(*z, self.bounds.range(i % LATENTS_PER_ELEMENT)))
            .collect();
        let designs = designs_from_mapped(&mapped, &self.filter)?;
        let inputs = build_surrogate_inputs(&self.mesh, &designs);
        let tapes = inputs
            .par_iter()
            .map(|x| self.model.record(x))
            .collect::<Result<Vec<_>>>()?;
        let preds: Vec<_> = tapes.iter().map(|t| t.prediction()).collect();
        let elasticity: Vec<ElasticityMatrix> = preds.iter().map(|p| p.elasticity()).collect();
        let volumes: Vec<f64> = preds.iter().map(|p| p.volume).collect();

        let solved = self.solver.solve(&elasticity)?;
        let j = solved.compliance;
        let j0 = j0.unwrap_or(j);
        let g_v = volume_constraint(&volumes, self.v_max);
        let loss = penalty_loss(j, j0, g_v, gamma)?;

        // reverse pass
        let dj_dc = compliance_gradient_wrt_c(&solved, &self.mesh);
        let dl_dv = 2.0 * gamma * g_v / (n as f64 * self.v_max);
        let input_grads: Vec<[f64; INPUT_DIM]> = (0..n)
            .into_par_iter()
            .map(|e| {
                let l = preds[e].factor.lower();
                let g = dj_dc[e];
                let mut out = [0.0; TARGET_DIM];
                // d/dL of sum_ab G_ab (L L^T)_ab = (G + G^T) L, lower part
                let mut slot = 0;
                for r in 0..3 {
                    for c in 0..=r {
                        out[slot] = (0..3).map(|a| (g[r][a] + g[a][r]) * l[a][c]).sum::<f64>() / j0;
                        slot += 1;
                    }
                }
                out[6] = dl_dv;
                self.model.vjp(&tapes[e], &out)
            })
            .collect();

        let mut d_mapped = vec![0.0; mapped.len()];
        let mut d_filtered = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (e, gin) in input_grads.iter().enumerate() {
            for slot in 0..NEIGHBORHOOD {
                let src = slot_source(&self.mesh, e, slot);
                for k in 0..SITES_PER_ELEMENT {
                    let sk = mirrored_site(k, src.mirror_x, src.mirror_y);
                    let at = 2 * (slot * SITES_PER_ELEMENT + k);
                    let sx = if src.mirror_x { -1.0 } else { 1.0 };
                    let sy = if src.mirror_y { -1.0 } else { 1.0 };
                    let base = src.element * LATENTS_PER_ELEMENT + 2 * sk;
                    d_mapped[base] += sx * gin[at];
                    d_mapped[base + 1] += sy * gin[at + 1];
                }
            }
            for (p, d) in d_filtered.iter_mut().enumerate() {
                d[e] = gin[INPUT_DIM - 3 + p];
            }
        }
        for (p, d) in d_filtered.iter().enumerate() {
            for (e, v) in self.filter.transpose(d).into_iter().enumerate() {
                d_mapped[e * LATENTS_PER_ELEMENT + BETA + p] += v;
            }
        }
        let gradient = latents
            .iter()
            .zip(&d_mapped)
            .enumerate()
            .map(|(i, (z, d))| d * bound_map_derivative(*z, self.bounds.range(i % LATENTS_PER_ELEMENT)))
            .collect();

        Ok(Evaluation {
            loss,
            compliance: j,
            g_v,
            gamma,
            mean_volume: volumes.iter().sum::<f64>() / n as f64,
            elasticity,
            volumes,
            gradient,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub compliance: f64,
    pub compliance_ratio: f64,
    pub g_v: f64,
    pub gamma: f64,
    pub loss: f64,
    /// Seconds since the start of the run; not reproducible.
    pub wall_time: f64,
}

/// Append-only per-iteration record of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceLog {
    entries: Vec<LogEntry>,
}

impl ConvergenceLog {
    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn last(&self) -> Option<&LogEntry> {
        self.entries.last()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, mut entry: LogEntry) {
        entry.iteration = self.entries.len();
        self.entries.push(entry);
    }

    pub fn write_csv(&self, w: &mut impl Write, header: &Header) -> Result<()> {
        w.write_all(header.to_comment().as_bytes())?;
        writeln!(w, "iteration,compliance,compliance_ratio,g_v,gamma,loss,wall_time")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{:.3}",
                e.iteration, e.compliance, e.compliance_ratio, e.g_v, e.gamma, e.loss, e.wall_time
            )?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut log = Self::default();
        for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
            let f: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format(format!("bad log line `{line}`")))?;
            if f.len() != 7 {
                return Err(Error::Format(format!("bad log line `{line}`")));
            }
            log.push(LogEntry {
                iteration: 0,
                compliance: f[1],
                compliance_ratio: f[2],
                g_v: f[3],
                gamma: f[4],
                loss: f[5],
                wall_time: f[6],
            });
        }
        Ok(log)
    }
}

/// Stateful optimization loop. After an error `state` still holds the last
/// design whose loss and gradient were finite.
pub struct Optimizer<'a> {
    evaluator: Evaluator<'a>,
    config: OptConfig,
    adam: Adam,
    j0: Option<f64>,
    started: Instant,
    done: bool,
    pub state: DesignState,
    pub log: ConvergenceLog,
    /// Most recent evaluation, at `state`.
    pub last: Option<Evaluation>,
}

impl<'a> Optimizer<'a> {
    pub fn new(
        model: &'a MlpModel,
        bc: &BoundaryConditions,
        state: DesignState,
        config: OptConfig,
    ) -> Result<Self> {
        config.validate()?;
        if state.bounds != config.bounds {
            return Err(Error::Config("state bounds differ from the optimizer bounds".into()));
        }
        let evaluator = Evaluator::new(
            model,
            state.mesh,
            bc,
            state.filter_radius,
            state.bounds,
            config.v_max,
        )?;
        Ok(Self {
            evaluator,
            config,
            adam: Adam::new(state.latents.len(), config.learning_rate),
            j0: None,
            started: Instant::now(),
            done: false,
            state,
            log: ConvergenceLog::default(),
            last: None,
        })
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reference_compliance(&self) -> Option<f64> {
        self.j0
    }

    /// Evaluates the current design, logs it, and unless the run has
    /// terminated updates the latents with one Adam step.
    pub fn step(&mut self) -> Result<LogEntry> {
        let t = self.log.len();
        let gamma = gamma_schedule(t, self.config.gamma0, self.config.gamma_step);
        let ev = self.evaluator.evaluate(&self.state.latents, self.j0, gamma)?;
        if !ev.loss.is_finite() {
            return Err(Error::Diverged {
                epoch: t,
                detail: format!("loss {}", ev.loss),
            });
        }
        if let Some(i) = ev.gradient.iter().position(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                epoch: t,
                detail: format!("gradient of latent {i} is {}", ev.gradient[i]),
            });
        }
        let j0 = *self.j0.get_or_insert(ev.compliance);
        let entry = LogEntry {
            iteration: t,
            compliance: ev.compliance,
            compliance_ratio: ev.compliance / j0,
            g_v: ev.g_v,
            gamma,
            loss: ev.loss,
            wall_time: self.started.elapsed().as_secs_f64(),
        };
        self.log.push(entry);
        let w = self.config.tolerance_window;
        let converged = t >= w
            && self.log.entries()[t - w..]
                .windows(2)
                .all(|p| (p[1].loss - p[0].loss).abs() < self.config.tolerance);
        self.done = converged || t + 1 >= self.config.max_iterations;
        if !self.done {
            self.adam.step(&mut self.state.latents, &ev.gradient);
        }
        log::debug!(
            "iter {t}: J={:.4} J/J0={:.4} gV={:+.4} loss={:.5}",
            entry.compliance,
            entry.compliance_ratio,
            entry.g_v,
            entry.loss
        );
        self.last = Some(ev);
        Ok(entry)
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.done {
            self.step()?;
        }
        Ok(())
    }
}

/// Runs the loop to termination from `state0`.
pub fn optimize(
    state0: DesignState,
    model: &MlpModel,
    bc: &BoundaryConditions,
    config: &OptConfig,
) -> Result<(DesignState, ConvergenceLog)> {
    let mut opt = Optimizer::new(model, bc, state0, *config)?;
    opt.run()?;
    Ok((opt.state, opt.log))
}
