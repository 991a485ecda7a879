//! Ground-truth check of a design: rasterize every element from its
//! neighborhood, homogenize it, re-solve the macro problem and compare with
//! the surrogate path.

use std::io::Write;

use rayon::prelude::*;

use crate::dataset::{decode_input, INPUT_DIM};
use crate::error::{Error, Result};
use crate::fea::{BoundaryConditions, FeaSolver};
use crate::homogenize::{ElasticityMatrix, Homogenizer};
use crate::io::Header;
use crate::optimize::{build_surrogate_inputs, DesignState};
use crate::surrogate::ConstitutiveModel;
use crate::voronoi::{rasterize, DensityField};

/// Exact homogenization of the decoded neighborhood, usable wherever a
/// surrogate is expected.
pub struct ExactHomogenizer {
    pub homogenizer: Homogenizer,
    pub sharpness: f64,
}

impl ExactHomogenizer {
    pub fn tile(&self, input: &[f64; INPUT_DIM]) -> Result<DensityField> {
        let (nx, ny) = self.homogenizer.resolution();
        rasterize(&decode_input(input, self.sharpness)?, nx, ny)
    }
}

impl ConstitutiveModel for ExactHomogenizer {
    fn predict(&self, input: &[f64; INPUT_DIM]) -> Result<(ElasticityMatrix, f64)> {
        let h = self.homogenizer.homogenize(&self.tile(input)?)?;
        Ok((h.c, h.volume_fraction))
    }
}

/// Stitched density of the whole design at `resolution` pixels per element
/// side.
pub fn reconstruct(state: &DesignState, resolution: usize, sharpness: f64) -> Result<DensityField> {
    if resolution == 0 {
        return Err(Error::InvalidParameter("resolution must be > 0".into()));
    }
    let mesh = state.mesh;
    let inputs = build_surrogate_inputs(&mesh, &state.designs()?);
    let tiles = inputs
        .par_iter()
        .map(|x| rasterize(&decode_input(x, sharpness)?, resolution, resolution))
        .collect::<Result<Vec<_>>>()?;
    let (nx, ny) = (mesh.nelx * resolution, mesh.nely * resolution);
    let mut values = vec![0.0; nx * ny];
    for (e, tile) in tiles.iter().enumerate() {
        let (i, j) = mesh.element_coords(e);
        for ty in 0..resolution {
            let row = (j * resolution + ty) * nx + i * resolution;
            values[row..row + resolution]
                .copy_from_slice(&tile.values[ty * resolution..(ty + 1) * resolution]);
        }
    }
    DensityField::new(nx, ny, values)
}

fn relative_error(estimate: f64, truth: f64) -> f64 {
    (estimate - truth).abs() / truth.abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementCheck {
    /// `||C_nn - C_fe||_F / ||C_fe||_F`.
    pub c_error: f64,
    pub v_nn: f64,
    pub v_fe: f64,
    pub min_eigenvalue_fe: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub compliance_nn: f64,
    pub compliance_fe: f64,
    pub volume_nn: f64,
    pub volume_fe: f64,
    pub compliance_error: f64,
    pub volume_error: f64,
    pub c_error_mean: f64,
    pub c_error_median: f64,
    pub c_error_max: f64,
    pub elements: Vec<ElementCheck>,
}

impl VerificationReport {
    pub fn write_csv(&self, w: &mut impl Write, header: &Header) -> Result<()> {
        w.write_all(header.to_comment().as_bytes())?;
        writeln!(
            w,
            "compliance_nn,compliance_true,compliance_error,volume_nn,volume_true,volume_error,c_error_mean,c_error_median,c_error_max"
        )?;
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.compliance_nn,
            self.compliance_fe,
            self.compliance_error,
            self.volume_nn,
            self.volume_fe,
            self.volume_error,
            self.c_error_mean,
            self.c_error_median,
            self.c_error_max
        )?;
        Ok(())
    }

    pub fn write_elements_csv(&self, w: &mut impl Write, header: &Header) -> Result<()> {
        w.write_all(header.to_comment().as_bytes())?;
        writeln!(w, "element,c_error,v_nn,v_fe,min_eigenvalue_fe")?;
        for (e, c) in self.elements.iter().enumerate() {
            writeln!(
                w,
                "{e},{:e},{:e},{:e},{:e}",
                c.c_error, c.v_nn, c.v_fe, c.min_eigenvalue_fe
            )?;
        }
        Ok(())
    }
}

/// Compares `model` against `truth` on the design `state`.
pub fn verify(
    state: &DesignState,
    model: &dyn ConstitutiveModel,
    truth: &ExactHomogenizer,
    bc: &BoundaryConditions,
) -> Result<VerificationReport> {
    let mesh = state.mesh;
    let inputs = build_surrogate_inputs(&mesh, &state.designs()?);
    let nn = inputs
        .par_iter()
        .map(|x| model.predict(x))
        .collect::<Result<Vec<_>>>()?;
    let fe = inputs
        .par_iter()
        .map(|x| truth.predict(x))
        .collect::<Result<Vec<_>>>()?;

    let solver = FeaSolver::new(mesh, bc)?;
    let solve = |pairs: &[(ElasticityMatrix, f64)]| -> Result<(f64, f64)> {
        let cs: Vec<_> = pairs.iter().map(|(c, _)| *c).collect();
        let v = pairs.iter().map(|(_, v)| v).sum::<f64>() / pairs.len() as f64;
        Ok((solver.solve(&cs)?.compliance, v))
    };
    let (compliance_nn, volume_nn) = solve(&nn)?;
    let (compliance_fe, volume_fe) = solve(&fe)?;

    let elements: Vec<ElementCheck> = nn
        .iter()
        .zip(&fe)
        .map(|((c_nn, v_nn), (c_fe, v_fe))| {
            let mut diff = *c_nn;
            for a in 0..3 {
                for b in 0..3 {
                    diff.0[a][b] -= c_fe.0[a][b];
                }
            }
            ElementCheck {
                c_error: diff.frobenius() / c_fe.frobenius(),
                v_nn: *v_nn,
                v_fe: *v_fe,
                min_eigenvalue_fe: c_fe.eigenvalues()[0],
            }
        })
        .collect();
    let mut errs: Vec<f64> = elements.iter().map(|c| c.c_error).collect();
    errs.sort_by(f64::total_cmp);
    let median = if errs.len() % 2 == 1 {
        errs[errs.len() / 2]
    } else {
        0.5 * (errs[errs.len() / 2 - 1] + errs[errs.len() / 2])
    };
    Ok(VerificationReport {
        compliance_nn,
        compliance_fe,
        volume_nn,
        volume_fe,
        compliance_error: relative_error(compliance_nn, compliance_fe),
        volume_error: relative_error(volume_nn, volume_fe),
        c_error_mean: errs.iter().sum::<f64>() / errs.len() as f64,
        c_error_median: median,
        c_error_max: *errs.last().expect("non-empty mesh"),
        elements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::fea::MacroMesh;
    use crate::homogenize::BaseMaterial;
    use crate::optimize::ParamBounds;
    use crate::voronoi::DEFAULT_SHARPNESS;

    fn exact(r: usize) -> ExactHomogenizer {
        ExactHomogenizer {
            homogenizer: Homogenizer::new(r, r, BaseMaterial::default()).unwrap(),
            sharpness: DEFAULT_SHARPNESS,
        }
    }

    #[test]
    fn uniform_state_tiles_periodically() {
        let mesh = MacroMesh::new(3, 2).unwrap();
        let s = DesignState::initial(mesh, ParamBounds::default(), 3.0).unwrap();
        let f = reconstruct(&s, 8, DEFAULT_SHARPNESS).unwrap();
        assert_eq!((f.nx, f.ny), (24, 16));
        assert!(f.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let tile = |i: usize, j: usize| -> Vec<f64> {
            (0..8)
                .flat_map(|y| (0..8).map(move |x| (i * 8 + x, j * 8 + y)))
                .map(|(x, y)| f.get(x, y))
                .collect()
        };
        let t0 = tile(0, 0);
        for (i, j) in [(1, 0), (2, 0), (0, 1), (2, 1)] {
            assert_eq!(tile(i, j), t0);
        }
    }

    #[test]
    fn self_comparison_has_zero_error() {
        let p = Catalog::builtin()
            .problem("mid-cantilever", Some(MacroMesh::new(3, 2).unwrap()))
            .unwrap();
        let s = DesignState::initial(p.mesh, ParamBounds::default(), 3.0).unwrap();
        let truth = exact(12);
        let r = verify(&s, &truth, &truth, &p.bc).unwrap();
        assert_eq!(r.compliance_error, 0.0);
        assert_eq!(r.volume_error, 0.0);
        assert_eq!(r.c_error_max, 0.0);
        assert!(r.elements.iter().all(|e| e.min_eigenvalue_fe > 0.0));
    }
}
