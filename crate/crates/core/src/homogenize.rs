//! Periodic numerical homogenization of a rasterized microstructure.
//!
//! The unit cell `[0,1]^2` is meshed with bilinear quads, one per density
//! pixel. Opposite boundary nodes are identified (node-pairing periodicity),
//! one node is pinned to remove the rigid translation, and the three unit
//! macro-strain load cases are solved against a single factorization. The
//! effective matrix follows from the element strain energies
//! `C_ab = sum_e (chi0_a - chi_a)^T k_e (chi0_b - chi_b) / |Y|`.

use crate::error::{Error, Result};
use crate::quad::{self, Mat3, Mat8};
use crate::sparse::{ElementDofs, SpdPattern};
use crate::voronoi::DensityField;

/// 3x3 elasticity matrix in Voigt notation (engineering shear strain).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticityMatrix(pub Mat3);

impl ElasticityMatrix {
    pub const ZERO: Self = Self([[0.0; 3]; 3]);

    pub fn identity() -> Self {
        Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.0;
        m.iter_mut().flatten().for_each(|v| *v *= s);
        Self(m)
    }

    /// Largest `|C_ij - C_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let c = &self.0;
        let scale = c.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let d = (c[0][1] - c[1][0])
            .abs()
            .max((c[0][2] - c[2][0]).abs())
            .max((c[1][2] - c[2][1]).abs());
        d / scale
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn eigenvalues(&self) -> [f64; 3] {
        let c = &self.0;
        let mut a = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] = 0.5 * (c[i][j] + c[j][i]);
            }
        }
        let mut ev = jacobi_eigenvalues(a);
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// Cyclic Jacobi sweeps; plenty for 3x3.
fn jacobi_eigenvalues(mut a: Mat3) -> [f64; 3] {
    for _ in 0..50 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let diag = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if off <= f64::EPSILON * diag * 1e-3 || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut r = a;
            for k in 0..3 {
                r[k][p] = c * a[k][p] - s * a[k][q];
                r[k][q] = s * a[k][p] + c * a[k][q];
            }
            let mut out = r;
            for k in 0..3 {
                out[p][k] = c * r[p][k] - s * r[q][k];
                out[q][k] = s * r[p][k] + c * r[q][k];
            }
            a = out;
        }
    }
    [a[0][0], a[1][1], a[2][2]]
}

/// Isotropic base material of the micro structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseMaterial {
    pub youngs: f64,
    pub poisson: f64,
    /// Relative stiffness of void pixels.
    pub void_eps: f64,
}

impl Default for BaseMaterial {
    fn default() -> Self {
        Self {
            youngs: 1.0,
            poisson: 0.3,
            void_eps: 1e-6,
        }
    }
}

impl BaseMaterial {
    pub fn validate(&self) -> Result<()> {
        if !(self.youngs.is_finite() && self.youngs > 0.0) {
            return Err(Error::InvalidParameter(format!("E = {}", self.youngs)));
        }
        if !(0.0..0.5).contains(&self.poisson) {
            return Err(Error::InvalidParameter(format!("nu = {}", self.poisson)));
        }
        if !(self.void_eps > 0.0 && self.void_eps < 1e-2) {
            return Err(Error::InvalidParameter(format!("void_eps = {}", self.void_eps)));
        }
        Ok(())
    }

    /// Plane-stress constitutive matrix.
    pub fn plane_stress(&self) -> ElasticityMatrix {
        let (e, nu) = (self.youngs, self.poisson);
        let f = e / (1.0 - nu * nu);
        ElasticityMatrix([
            [f, nu * f, 0.0],
            [nu * f, f, 0.0],
            [0.0, 0.0, f * (1.0 - nu) / 2.0],
        ])
    }
}

/// Closed-form plane-stress stiffness of the unit-square bilinear quad.
pub fn q4_element_stiffness(material: &BaseMaterial) -> Mat8 {
    let nu = material.poisson;
    let k = [
        0.5 - nu / 6.0,
        0.125 + nu / 8.0,
        -0.25 - nu / 12.0,
        -0.125 + 3.0 * nu / 8.0,
        -0.25 + nu / 12.0,
        -0.125 - nu / 8.0,
        nu / 6.0,
        0.125 - 3.0 * nu / 8.0,
    ];
    const LAYOUT: [[usize; 8]; 8] = [
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ];
    let f = material.youngs / (1.0 - nu * nu);
    let mut ke = [[0.0; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            ke[i][j] = f * k[LAYOUT[i][j]];
        }
    }
    ke
}

/// Mean density.
pub fn volume_fraction(field: &DensityField) -> f64 {
    if field.values.is_empty() {
        return 0.0;
    }
    field.values.iter().sum::<f64>() / field.values.len() as f64
}

/// Homogenized properties of one microstructure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homogenized {
    pub c: ElasticityMatrix,
    pub volume_fraction: f64,
}

/// Reusable homogenization solver for one grid size.
///
/// Holds the periodic DOF map and symbolic factorization. Not shared between
/// threads; use one per worker.
pub struct Homogenizer {
    nx: usize,
    ny: usize,
    material: BaseMaterial,
    ke: Mat8,
    /// Nodal displacements of the three unit strains on one element.
    chi0: [[f64; 8]; 3],
    dofs: Vec<ElementDofs>,
    pattern: SpdPattern,
}

impl Homogenizer {
    pub fn new(nx: usize, ny: usize, material: BaseMaterial) -> Result<Self> {
        material.validate()?;
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidParameter(format!(
                "homogenization grid {nx}x{ny} must be at least 2x2"
            )));
        }
        let (a, b) = (1.0 / nx as f64, 1.0 / ny as f64);
        let ke = quad::rect_stiffness(&material.plane_stress().0, a, b);
        let corners = [(0.0, 0.0), (a, 0.0), (a, b), (0.0, b)];
        let mut chi0 = [[0.0; 8]; 3];
        for (n, (x, y)) in corners.iter().enumerate() {
            chi0[0][2 * n] = *x;
            chi0[1][2 * n + 1] = *y;
            chi0[2][2 * n] = y / 2.0;
            chi0[2][2 * n + 1] = x / 2.0;
        }
        // node (i, j) -> periodic index; node 0 is pinned
        let free = |i: usize, j: usize, c: usize| -> Option<usize> {
            let node = (j % ny) * nx + (i % nx);
            (node != 0).then(|| 2 * (node - 1) + c)
        };
        let mut dofs = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let nodes = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
                let mut d = [None; 8];
                for (n, (ni, nj)) in nodes.iter().enumerate() {
                    d[2 * n] = free(*ni, *nj, 0);
                    d[2 * n + 1] = free(*ni, *nj, 1);
                }
                dofs.push(d);
            }
        }
        let pattern = SpdPattern::new(2 * nx * ny - 2, &dofs)?;
        Ok(Self {
            nx,
            ny,
            material,
            ke,
            chi0,
            dofs,
            pattern,
        })
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn material(&self) -> &BaseMaterial {
        &self.material
    }

    pub fn homogenize(&self, field: &DensityField) -> Result<Homogenized> {
        if (field.nx, field.ny) != (self.nx, self.ny) {
            return Err(Error::InvalidParameter(format!(
                "field is {}x{}, homogenizer expects {}x{}",
                field.nx, field.ny, self.nx, self.ny
            )));
        }
        if let Some(v) = field.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!("density {v} outside [0, 1]")));
        }
        let eps = self.material.void_eps;
        let scale: Vec<f64> = field.values.iter().map(|r| r.max(eps)).collect();
        let ke = &self.ke;
        let values = self.pattern.assemble(|e| {
            let mut k = *ke;
            k.iter_mut().flatten().for_each(|v| *v *= scale[e]);
            k
        });
        let factor = self
            .pattern
            .factorize(&values)
            .map_err(|e| Error::Singular(format!("homogenization system: {e}")))?;

        // element load vectors k_e chi0 per unit strain
        let mut fe = [[0.0; 8]; 3];
        for c in 0..3 {
            for i in 0..8 {
                fe[c][i] = (0..8).map(|j| ke[i][j] * self.chi0[c][j]).sum();
            }
        }
        let n = self.pattern.dim();
        let mut rhs = vec![vec![0.0; n]; 3];
        for (e, d) in self.dofs.iter().enumerate() {
            for (i, dof) in d.iter().enumerate() {
                if let Some(g) = dof {
                    for c in 0..3 {
                        rhs[c][*g] += scale[e] * fe[c][i];
                    }
                }
            }
        }
        let chi = factor.solve(&rhs);
        if chi.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite fluctuation field".into()));
        }

        let mut c = [[0.0; 3]; 3];
        let mut ue = [[0.0; 8]; 3];
        for (e, d) in self.dofs.iter().enumerate() {
            for lc in 0..3 {
                for i in 0..8 {
                    let fluct = d[i].map_or(0.0, |g| chi[lc][g]);
                    ue[lc][i] = self.chi0[lc][i] - fluct;
                }
            }
            for a in 0..3 {
                for b in a..3 {
                    c[a][b] += scale[e] * quad::bilinear(ke, &ue[a], &ue[b]);
                }
            }
        }
        for a in 0..3 {
            for b in 0..a {
                c[a][b] = c[b][a];
            }
        }
        Ok(Homogenized {
            c: ElasticityMatrix(c),
            volume_fraction: volume_fraction(field),
        })
    }
}

/// One-shot homogenization; builds a [`Homogenizer`] for the field's grid.
pub fn homogenize(field: &DensityField, material: &BaseMaterial) -> Result<Homogenized> {
    Homogenizer::new(field.nx, field.ny, *material)?.homogenize(field)
}
