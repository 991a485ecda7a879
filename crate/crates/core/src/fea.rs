//! Macro-scale linear elasticity on a structured grid of unit-square
//! elements, each with its own constitutive matrix.
//!
//! Element `(i, j)` has index `j * nelx + i`; node `(i, j)` has index
//! `j * (nelx + 1) + i` with DOFs `2n` (x) and `2n + 1` (y). `j` counts from
//! the bottom.

use std::io::Write;

use crate::error::{Error, Result};
use crate::homogenize::ElasticityMatrix;
use crate::quad::{self, Mat3, Mat8};
use crate::sparse::{ElementDofs, SpdFactor, SpdPattern};

pub use crate::catalog::{Catalog, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacroMesh {
    pub nelx: usize,
    pub nely: usize,
}

impl Default for MacroMesh {
    fn default() -> Self {
        Self { nelx: 40, nely: 20 }
    }
}

impl MacroMesh {
    pub fn new(nelx: usize, nely: usize) -> Result<Self> {
        if nelx == 0 || nely == 0 {
            return Err(Error::InvalidParameter(format!("mesh {nelx}x{nely}")));
        }
        Ok(Self { nelx, nely })
    }

    pub fn n_elements(&self) -> usize {
        self.nelx * self.nely
    }

    pub fn n_nodes(&self) -> usize {
        (self.nelx + 1) * (self.nely + 1)
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.nelx + 1) + i
    }

    pub fn element(&self, i: usize, j: usize) -> usize {
        j * self.nelx + i
    }

    /// `(i, j)` of element `e`.
    pub fn element_coords(&self, e: usize) -> (usize, usize) {
        (e % self.nelx, e / self.nelx)
    }

    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        let (i, j) = self.element_coords(e);
        let nodes = [
            self.node(i, j),
            self.node(i + 1, j),
            self.node(i + 1, j + 1),
            self.node(i, j + 1),
        ];
        let mut d = [0; 8];
        for (k, n) in nodes.iter().enumerate() {
            d[2 * k] = 2 * n;
            d[2 * k + 1] = 2 * n + 1;
        }
        d
    }
}

/// Prescribed zero displacements and point loads.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryConditions {
    pub fixed: Vec<usize>,
    pub loads: Vec<(usize, f64)>,
}

impl BoundaryConditions {
    pub fn validate(&self, mesh: &MacroMesh) -> Result<()> {
        let n = mesh.n_dofs();
        if let Some(d) = self.fixed.iter().chain(self.loads.iter().map(|(d, _)| d)).find(|d| **d >= n) {
            return Err(Error::InvalidParameter(format!("DOF {d} outside mesh with {n} DOFs")));
        }
        if let Some((d, f)) = self.loads.iter().find(|(_, f)| !f.is_finite()) {
            return Err(Error::NonFinite(format!("load {f} on DOF {d}")));
        }
        let mut fixed = self.fixed.clone();
        fixed.sort_unstable();
        fixed.dedup();
        let nx = fixed.iter().filter(|d| *d % 2 == 0).count();
        let ny = fixed.len() - nx;
        let null = if nx == 0 {
            Some("rigid translation in x")
        } else if ny == 0 {
            Some("rigid translation in y")
        } else if fixed.len() < 3 {
            Some("rigid rotation")
        } else {
            None
        };
        if let Some(mode) = null {
            return Err(Error::Singular(format!(
                "stiffness matrix has an unconstrained {mode}; fix more DOFs"
            )));
        }
        Ok(())
    }

    pub fn force_vector(&self, mesh: &MacroMesh) -> Vec<f64> {
        let mut f = vec![0.0; mesh.n_dofs()];
        for (d, v) in &self.loads {
            f[*d] += v;
        }
        f
    }

    /// Scales every load by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            fixed: self.fixed.clone(),
            loads: self.loads.iter().map(|(d, f)| (*d, f * s)).collect(),
        }
    }
}

/// `K_e = sum_g B^T C B |J|` of a unit-square element.
pub fn element_stiffness_from_c(c: &ElasticityMatrix) -> Result<Mat8> {
    if c.0.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("constitutive matrix".into()));
    }
    if c.asymmetry() > 1e-10 {
        return Err(Error::InvalidParameter(format!(
            "constitutive matrix is not symmetric (relative asymmetry {:e})",
            c.asymmetry()
        )));
    }
    Ok(quad::rect_stiffness(&c.0, 1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    /// Full displacement vector, zeros on fixed DOFs.
    pub u: Vec<f64>,
    /// `f^T u`.
    pub compliance: f64,
    /// `||K u - f|| / ||f||` on the free DOFs.
    pub residual: f64,
}

impl SolveResult {
    pub fn element_displacements(&self, mesh: &MacroMesh, e: usize) -> [f64; 8] {
        mesh.element_dofs(e).map(|d| self.u[d])
    }

    /// CSV dump: `node,i,j,ux,uy`.
    pub fn write_csv(&self, w: &mut impl Write, mesh: &MacroMesh) -> Result<()> {
        writeln!(w, "# compliance={:e}", self.compliance)?;
        writeln!(w, "node,i,j,ux,uy")?;
        for j in 0..=mesh.nely {
            for i in 0..=mesh.nelx {
                let n = mesh.node(i, j);
                writeln!(w, "{n},{i},{j},{:e},{:e}", self.u[2 * n], self.u[2 * n + 1])?;
            }
        }
        Ok(())
    }
}

/// Assembly and solve for one mesh and set of boundary conditions. The
/// symbolic factorization is computed once and reused by every solve.
pub struct FeaSolver {
    mesh: MacroMesh,
    free: Vec<Option<usize>>,
    pattern: SpdPattern,
    force: Vec<f64>,
    force_free: Vec<f64>,
}

impl FeaSolver {
    pub fn new(mesh: MacroMesh, bc: &BoundaryConditions) -> Result<Self> {
        bc.validate(&mesh)?;
        let mut free = vec![Some(0); mesh.n_dofs()];
        for d in &bc.fixed {
            free[*d] = None;
        }
        let mut next = 0;
        for slot in free.iter_mut().filter(|s| s.is_some()) {
            *slot = Some(next);
            next += 1;
        }
        let dofs: Vec<ElementDofs> = (0..mesh.n_elements())
            .map(|e| mesh.element_dofs(e).map(|d| free[d]))
            .collect();
        let pattern = SpdPattern::new(next, &dofs)?;
        let force = bc.force_vector(&mesh);
        let mut force_free = vec![0.0; next];
        for (d, slot) in free.iter().enumerate() {
            if let Some(k) = slot {
                force_free[*k] = force[d];
            }
        }
        Ok(Self {
            mesh,
            free,
            pattern,
            force,
            force_free,
        })
    }

    pub fn mesh(&self) -> &MacroMesh {
        &self.mesh
    }

    fn apply(&self, kes: &[Mat8], u_free: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; u_free.len()];
        for (e, ke) in kes.iter().enumerate() {
            let d = self.mesh.element_dofs(e).map(|d| self.free[d]);
            let ue = d.map(|s| s.map_or(0.0, |k| u_free[k]));
            for i in 0..8 {
                if let Some(k) = d[i] {
                    r[k] += (0..8).map(|j| ke[i][j] * ue[j]).sum::<f64>();
                }
            }
        }
        r
    }

    /// Solves `K u = f` with one `C` per element.
    pub fn solve(&self, cs: &[ElasticityMatrix]) -> Result<SolveResult> {
        if cs.len() != self.mesh.n_elements() {
            return Err(Error::InvalidParameter(format!(
                "{} constitutive matrices for {} elements",
                cs.len(),
                self.mesh.n_elements()
            )));
        }
        let kes = cs
            .iter()
            .map(element_stiffness_from_c)
            .collect::<Result<Vec<_>>>()?;
        let values = self.pattern.assemble(|e| kes[e]);
        let factor: SpdFactor = self.pattern.factorize(&values).map_err(|e| {
            Error::Singular(format!(
                "global stiffness is not positive definite ({e}); a mechanism or \
                 zero-stiffness region leaves a null mode"
            ))
        })?;
        let mut u_free = factor.solve(std::slice::from_ref(&self.force_free)).remove(0);
        // one step of iterative refinement
        let r: Vec<f64> = self
            .apply(&kes, &u_free)
            .iter()
            .zip(&self.force_free)
            .map(|(ku, f)| f - ku)
            .collect();
        let du = factor.solve(std::slice::from_ref(&r)).remove(0);
        u_free.iter_mut().zip(&du).for_each(|(u, d)| *u += d);

        let ku = self.apply(&kes, &u_free);
        let fnorm = self.force_free.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rnorm = ku
            .iter()
            .zip(&self.force_free)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let residual = if fnorm > 0.0 { rnorm / fnorm } else { rnorm };
        if !residual.is_finite() || residual > 1e-6 {
            return Err(Error::Singular(format!(
                "solve residual {residual:e}; stiffness is numerically singular"
            )));
        }
        let mut u = vec![0.0; self.mesh.n_dofs()];
        for (d, slot) in self.free.iter().enumerate() {
            if let Some(k) = slot {
                u[d] = u_free[*k];
            }
        }
        let compliance = self.force.iter().zip(&u).map(|(f, u)| f * u).sum();
        Ok(SolveResult {
            u,
            compliance,
            residual,
        })
    }
}

/// One-shot assembly and solve.
pub fn assemble_solve(
    mesh: &MacroMesh,
    bc: &BoundaryConditions,
    cs: &[ElasticityMatrix],
) -> Result<SolveResult> {
    FeaSolver::new(*mesh, bc)?.solve(cs)
}

/// Adjoint sensitivity of the compliance with respect to every entry of
/// every element's `C`: `dJ/dC_ab = -u_e^T M_ab u_e` with
/// `K_e = sum_ab C_ab M_ab` (compliance is self-adjoint).
pub fn compliance_gradient_wrt_c(result: &SolveResult, mesh: &MacroMesh) -> Vec<Mat3> {
    let basis = quad::unit_stiffness_basis();
    (0..mesh.n_elements())
        .map(|e| {
            let ue = result.element_displacements(mesh, e);
            let mut g = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    g[a][b] = -quad::bilinear(&basis[a][b], &ue, &ue);
                }
            }
            g
        })
        .collect()
}
