//! Sparse macro solve against an independent dense assembly and elimination.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voroto_core::catalog::Catalog;
use voroto_core::fea::{assemble_solve, BoundaryConditions, MacroMesh};
use voroto_core::{BaseMaterial, ElasticityMatrix};

/// Unit-square bilinear element by 2x2 Gauss quadrature, nodes counter-
/// clockwise from the lower left.
fn dense_element(c: &[[f64; 3]; 3]) -> [[f64; 8]; 8] {
    let g = 1.0 / 3f64.sqrt();
    let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let mut k = [[0.0; 8]; 8];
    for (xi, eta) in [(-g, -g), (g, -g), (g, g), (-g, g)] {
        let mut b = [[0.0; 8]; 3];
        for (n, (sx, sy)) in corners.iter().enumerate() {
            // d/dx = 2 d/dxi on a unit element
            let dx = 2.0 * 0.25 * sx * (1.0 + sy * eta);
            let dy = 2.0 * 0.25 * sy * (1.0 + sx * xi);
            b[0][2 * n] = dx;
            b[1][2 * n + 1] = dy;
            b[2][2 * n] = dy;
            b[2][2 * n + 1] = dx;
        }
        let w = 0.25; // |J| for the unit square
        for i in 0..8 {
            for j in 0..8 {
                let mut s = 0.0;
                for a in 0..3 {
                    for bb in 0..3 {
                        s += b[a][i] * c[a][bb] * b[bb][j];
                    }
                }
                k[i][j] += w * s;
            }
        }
    }
    k
}

fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn dense_reference(mesh: &MacroMesh, bc: &BoundaryConditions, cs: &[ElasticityMatrix]) -> Vec<f64> {
    let n = mesh.n_dofs();
    let mut k = vec![vec![0.0; n]; n];
    for e in 0..mesh.n_elements() {
        let (i, j) = (e % mesh.nelx, e / mesh.nelx);
        let nodes = [
            j * (mesh.nelx + 1) + i,
            j * (mesh.nelx + 1) + i + 1,
            (j + 1) * (mesh.nelx + 1) + i + 1,
            (j + 1) * (mesh.nelx + 1) + i,
        ];
        let dofs: Vec<usize> = nodes.iter().flat_map(|n| [2 * n, 2 * n + 1]).collect();
        let ke = dense_element(&cs[e].0);
        for a in 0..8 {
            for b in 0..8 {
                k[dofs[a]][dofs[b]] += ke[a][b];
            }
        }
    }
    let mut f = vec![0.0; n];
    for (d, v) in &bc.loads {
        f[*d] += v;
    }
    let free: Vec<usize> = (0..n).filter(|d| !bc.fixed.contains(d)).collect();
    let kr = free.iter().map(|&i| free.iter().map(|&j| k[i][j]).collect()).collect();
    let fr = free.iter().map(|&i| f[i]).collect();
    let ur = dense_solve(kr, fr);
    let mut u = vec![0.0; n];
    for (slot, &d) in free.iter().enumerate() {
        u[d] = ur[slot];
    }
    u
}

#[test]
fn sparse_solve_matches_dense_elimination() {
    let cat = Catalog::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = BaseMaterial::default().plane_stress();
    for name in ["tensile-bar", "mid-cantilever", "heel-bone"] {
        let p = cat.problem(name, Some(MacroMesh::new(7, 4).unwrap())).unwrap();
        let cs: Vec<_> = (0..p.mesh.n_elements())
            .map(|_| {
                let mut c = base.scaled(rng.random_range(0.05..1.0));
                // mild anisotropy keeps the oracle honest about C01 and C02
                let t = rng.random_range(-0.02..0.02);
                c.0[0][2] += t;
                c.0[2][0] += t;
                c
            })
            .collect();
        let res = assemble_solve(&p.mesh, &p.bc, &cs).unwrap();
        let want = dense_reference(&p.mesh, &p.bc, &cs);
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in res.u.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10 * scale, "{name}: {a} vs {b}");
        }
        let j: f64 = p.bc.loads.iter().map(|(d, f)| f * want[*d]).sum();
        assert!((res.compliance - j).abs() < 1e-10 * j);
        assert!(res.residual < 1e-8, "{name}: residual {}", res.residual);
        for d in &p.bc.fixed {
            assert_eq!(res.u[*d], 0.0);
        }
    }
}

#[test]
fn solid_cantilever_reference_values() {
    let cat = Catalog::builtin();
    let solid = vec![BaseMaterial::default().plane_stress(); 800];
    let mid = cat.problem("mid-cantilever", None).unwrap();
    let j = assemble_solve(&mid.mesh, &mid.bc, &solid).unwrap().compliance;
    let want = {
        let u = dense_reference(&mid.mesh, &mid.bc, &solid);
        mid.bc.loads.iter().map(|(d, f)| f * u[*d]).sum::<f64>()
    };
    assert!((j - want).abs() < 1e-9 * want);
    // slender-beam tip deflection 4 L^3 / (E h^3); the 2:1 aspect ratio and
    // the clamped edge add shear and end effects on top
    let beam = 4.0 * 40f64.powi(3) / 20f64.powi(3);
    assert!(j > beam && j < 1.4 * beam, "J = {j}, beam {beam}");
}
