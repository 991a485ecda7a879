//! Parametric anisotropic Voronoi density field.
//!
//! Each site `s` owns a soft-max weight `w_s = exp(-k d_s) / sum_t exp(-k d_t)`
//! of the anisotropic distance `d_s`; the cell density is `w_s^beta` and the
//! structure density is `clamp(1 - sum_s w_s^beta, 0, 1)`. Cell interiors are
//! void and material collects along the bisectors between sites.
//!
//! Coordinates are in macro-element lengths, measured from the lower-left
//! corner of the center element of a 3x3 neighborhood.

use crate::error::{Error, Result};

/// A point or a cell site in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub x: f64,
    pub y: f64,
}

impl Site {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Shape parameters shared by every cell of a microstructure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellParams {
    /// Wall thickness exponent.
    pub beta: f64,
    /// Anisotropy ratio.
    pub alpha: f64,
    /// Orientation in radians.
    pub theta: f64,
}

impl CellParams {
    pub fn new(beta: f64, alpha: f64, theta: f64) -> Result<Self> {
        if !(beta.is_finite() && alpha.is_finite() && theta.is_finite()) {
            return Err(Error::NonFinite(format!(
                "cell params beta={beta} alpha={alpha} theta={theta}"
            )));
        }
        if beta <= 0.0 {
            return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
        }
        if alpha <= 0.0 {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
        }
        Ok(Self { beta, alpha, theta })
    }
}

/// Default soft-max sharpness, per element length.
pub const DEFAULT_SHARPNESS: f64 = 10.0;

/// Number of macro elements in a neighborhood.
pub const NEIGHBORHOOD: usize = 9;

/// Offset `(dx, dy)` of neighborhood slot `j`; slots run bottom to top, then
/// left to right.
pub fn neighbor_offset(j: usize) -> (i32, i32) {
    ((j / 3) as i32 - 1, (j % 3) as i32 - 1)
}

/// Sites of a macro element and its eight neighbors together with the
/// center element's shape parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MicrostructureSpec {
    pub sites: Vec<Site>,
    pub params: CellParams,
    pub sharpness: f64,
}

impl MicrostructureSpec {
    pub fn new(sites: Vec<Site>, params: CellParams, sharpness: f64) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidParameter("spec needs at least one site".into()));
        }
        if let Some(s) = sites.iter().find(|s| !(s.x.is_finite() && s.y.is_finite())) {
            return Err(Error::NonFinite(format!("site ({}, {})", s.x, s.y)));
        }
        if !(sharpness.is_finite() && sharpness > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sharpness must be > 0, got {sharpness}"
            )));
        }
        CellParams::new(params.beta, params.alpha, params.theta)?;
        Ok(Self {
            sites,
            params,
            sharpness,
        })
    }

    /// Checks the neighborhood layout: `9 * per_element` sites, each inside
    /// its element, pairwise at least `min_separation` apart within an element.
    pub fn check_layout(&self, per_element: usize, min_separation: f64) -> Result<()> {
        if self.sites.len() != NEIGHBORHOOD * per_element {
            return Err(Error::InvalidParameter(format!(
                "expected {} sites, got {}",
                NEIGHBORHOOD * per_element,
                self.sites.len()
            )));
        }
        for (j, chunk) in self.sites.chunks(per_element).enumerate() {
            let (dx, dy) = neighbor_offset(j);
            let (x0, y0) = (dx as f64, dy as f64);
            for s in chunk {
                if s.x < x0 || s.x > x0 + 1.0 || s.y < y0 || s.y > y0 + 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "site ({}, {}) outside element {j}",
                        s.x, s.y
                    )));
                }
            }
            for (a, p) in chunk.iter().enumerate() {
                for q in &chunk[a + 1..] {
                    let d = (p.x - q.x).hypot(p.y - q.y);
                    if d < min_separation {
                        return Err(Error::InvalidParameter(format!(
                            "sites in element {j} only {d:.4} apart"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rasterized scalar density on a cell-centered grid, `values[iy * nx + ix]`
/// with `iy` counted from the bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl DensityField {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(Error::InvalidParameter(format!(
                "field {nx}x{ny} needs {} values, got {}",
                nx * ny,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!("density {v} outside [0, 1]")));
        }
        Ok(Self { nx, ny, values })
    }

    pub fn uniform(nx: usize, ny: usize, value: f64) -> Self {
        Self {
            nx,
            ny,
            values: vec![value; nx * ny],
        }
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }
}

/// `R(theta) * (point - site)`.
pub fn rotated_offset(point: Site, site: Site, theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    let dx = point.x - site.x;
    let dy = point.y - site.y;
    (c * dx - s * dy, s * dx + c * dy)
}

/// Anisotropic oriented distance `sqrt(alpha dx'^2 + dy'^2 / alpha)`.
pub fn anisotropic_distance(point: Site, site: Site, params: &CellParams) -> Result<f64> {
    if params.alpha <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "alpha must be > 0, got {}",
            params.alpha
        )));
    }
    let (a, b) = rotated_offset(point, site, params.theta);
    Ok(metric(a, b, params.alpha))
}

#[inline]
fn metric(a: f64, b: f64, alpha: f64) -> f64 {
    (alpha * a * a + b * b / alpha).sqrt()
}

/// Evaluates the density of one spec; caches the rotation.
struct Evaluator<'a> {
    spec: &'a MicrostructureSpec,
    sin: f64,
    cos: f64,
}

impl<'a> Evaluator<'a> {
    fn new(spec: &'a MicrostructureSpec) -> Self {
        let (sin, cos) = spec.params.theta.sin_cos();
        Self { spec, sin, cos }
    }

    fn offsets(&self, p: Site, s: Site) -> (f64, f64) {
        let dx = p.x - s.x;
        let dy = p.y - s.y;
        (self.cos * dx - self.sin * dy, self.sin * dx + self.cos * dy)
    }

    /// Soft-max weights of every site at `p`, written into `w`.
    fn weights(&self, p: Site, w: &mut Vec<f64>) {
        let alpha = self.spec.params.alpha;
        let k = self.spec.sharpness;
        w.clear();
        w.extend(self.spec.sites.iter().map(|s| {
            let (a, b) = self.offsets(p, *s);
            metric(a, b, alpha)
        }));
        // shift by the minimum distance; the soft-max is shift-invariant
        let dmin = w.iter().copied().fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for v in w.iter_mut() {
            *v = (-k * (*v - dmin)).exp();
            total += *v;
        }
        for v in w.iter_mut() {
            *v /= total;
        }
    }

    fn raw_density(&self, p: Site, w: &mut Vec<f64>) -> f64 {
        self.weights(p, w);
        let beta = self.spec.params.beta;
        1.0 - w.iter().map(|v| v.powf(beta)).sum::<f64>()
    }
}

/// Soft-max weights (before the thickness exponent) of every site at `point`.
pub fn softmax_weights(point: Site, spec: &MicrostructureSpec) -> Vec<f64> {
    let mut w = Vec::with_capacity(spec.sites.len());
    Evaluator::new(spec).weights(point, &mut w);
    w
}

/// Cell density `w_s^beta` of site `s` (zero-based) at `point`.
pub fn site_density(point: Site, spec: &MicrostructureSpec, s: usize) -> Result<f64> {
    if s >= spec.sites.len() {
        return Err(Error::InvalidParameter(format!(
            "site index {s} out of range ({} sites)",
            spec.sites.len()
        )));
    }
    Ok(softmax_weights(point, spec)[s].powf(spec.params.beta))
}

/// Unclamped `1 - sum_s w_s^beta`.
pub fn raw_total_density(point: Site, spec: &MicrostructureSpec) -> f64 {
    let mut w = Vec::with_capacity(spec.sites.len());
    Evaluator::new(spec).raw_density(point, &mut w)
}

/// Structure density at `point`, clamped to `[0, 1]`.
pub fn total_density(point: Site, spec: &MicrostructureSpec) -> f64 {
    raw_total_density(point, spec).clamp(0.0, 1.0)
}

/// Samples the density at micro-element centroids of an `nx x ny` grid over
/// the center element `[0, 1]^2`.
pub fn rasterize(spec: &MicrostructureSpec, nx: usize, ny: usize) -> Result<DensityField> {
    rasterize_window(spec, nx, ny, (0.0, 0.0), (1.0, 1.0))
}

/// Samples the density on an `nx x ny` cell-centered grid covering the
/// rectangle `origin .. origin + size`.
pub fn rasterize_window(
    spec: &MicrostructureSpec,
    nx: usize,
    ny: usize,
    origin: (f64, f64),
    size: (f64, f64),
) -> Result<DensityField> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidParameter(format!("resolution {nx}x{ny}")));
    }
    let ev = Evaluator::new(spec);
    let mut w = Vec::with_capacity(spec.sites.len());
    let mut values = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        let y = origin.1 + size.1 * (iy as f64 + 0.5) / ny as f64;
        for ix in 0..nx {
            let x = origin.0 + size.0 * (ix as f64 + 0.5) / nx as f64;
            values.push(ev.raw_density(Site::new(x, y), &mut w).clamp(0.0, 1.0));
        }
    }
    Ok(DensityField { nx, ny, values })
}

/// Gradient of the unclamped density with respect to the spec.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGradient {
    /// `(d/dx_s, d/dy_s)` per site.
    pub sites: Vec<(f64, f64)>,
    pub beta: f64,
    pub alpha: f64,
    pub theta: f64,
}

/// Analytic gradient of `1 - sum_s w_s^beta` at `point`.
///
/// With `g_t = d rho / d d_t = k beta (w_t^beta - w_t sum_s w_s^beta)` the
/// chain rule runs through the distance of each site. Undefined at a site
/// (zero distance).
pub fn density_gradient(point: Site, spec: &MicrostructureSpec) -> DensityGradient {
    let ev = Evaluator::new(spec);
    let CellParams { beta, alpha, .. } = spec.params;
    let k = spec.sharpness;
    let mut w = Vec::new();
    ev.weights(point, &mut w);
    let wb: Vec<f64> = w.iter().map(|v| v.powf(beta)).collect();
    let sum_wb: f64 = wb.iter().sum();

    let mut grad = DensityGradient {
        sites: Vec::with_capacity(w.len()),
        beta: -w
            .iter()
            .zip(&wb)
            .map(|(v, vb)| if *v > 0.0 { vb * v.ln() } else { 0.0 })
            .sum::<f64>(),
        alpha: 0.0,
        theta: 0.0,
    };
    let (sin, cos) = (ev.sin, ev.cos);
    for (t, site) in spec.sites.iter().enumerate() {
        let g = k * beta * (wb[t] - w[t] * sum_wb);
        let (a, b) = ev.offsets(point, *site);
        let d = metric(a, b, alpha);
        let dd_dalpha = (a * a - b * b / (alpha * alpha)) / (2.0 * d);
        let dd_dtheta = a * b * (1.0 / alpha - alpha) / d;
        let dd_dxs = (-alpha * a * cos - b / alpha * sin) / d;
        let dd_dys = (alpha * a * sin - b / alpha * cos) / d;
        grad.alpha += g * dd_dalpha;
        grad.theta += g * dd_dtheta;
        grad.sites.push((g * dd_dxs, g * dd_dys));
    }
    grad
}
