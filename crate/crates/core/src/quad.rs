//! Bilinear four-node quadrilateral kernels shared by the micro and macro
//! finite element models.
//!
//! Node order is counter-clockwise from the lower-left corner and DOFs are
//! interleaved `[u0x, u0y, u1x, u1y, ...]`.

/// Dense 8x8 element matrix.
pub type Mat8 = [[f64; 8]; 8];

/// Dense 3x3 matrix in Voigt notation.
pub type Mat3 = [[f64; 3]; 3];

const GAUSS: f64 = 0.577_350_269_189_625_8;

/// Strain-displacement matrix of an `a x b` rectangle at natural coordinates
/// `(xi, eta)` in `[-1, 1]^2`.
pub fn strain_displacement(xi: f64, eta: f64, a: f64, b: f64) -> [[f64; 8]; 3] {
    // dN/dxi, dN/deta for the four nodes
    let dxi = [-(1.0 - eta), 1.0 - eta, 1.0 + eta, -(1.0 + eta)];
    let deta = [-(1.0 - xi), -(1.0 + xi), 1.0 + xi, 1.0 - xi];
    let mut bmat = [[0.0; 8]; 3];
    for n in 0..4 {
        let dx = dxi[n] * 0.25 * 2.0 / a;
        let dy = deta[n] * 0.25 * 2.0 / b;
        bmat[0][2 * n] = dx;
        bmat[1][2 * n + 1] = dy;
        bmat[2][2 * n] = dy;
        bmat[2][2 * n + 1] = dx;
    }
    bmat
}

/// Gauss points of the 2x2 rule with their `B` matrices and weights
/// (weight already includes the Jacobian determinant).
fn gauss_points(a: f64, b: f64) -> impl Iterator<Item = ([[f64; 8]; 3], f64)> {
    let det = a * b / 4.0;
    [(-GAUSS, -GAUSS), (GAUSS, -GAUSS), (GAUSS, GAUSS), (-GAUSS, GAUSS)]
        .into_iter()
        .map(move |(xi, eta)| (strain_displacement(xi, eta, a, b), det))
}

/// `K = sum_g w_g B_g^T C B_g |J|` over the 2x2 Gauss rule of an `a x b`
/// rectangle. Exact for bilinear displacement fields.
pub fn rect_stiffness(c: &Mat3, a: f64, b: f64) -> Mat8 {
    let mut k = [[0.0; 8]; 8];
    for (bm, w) in gauss_points(a, b) {
        // cb = C * B  (3x8)
        let mut cb = [[0.0; 8]; 3];
        for i in 0..3 {
            for j in 0..8 {
                cb[i][j] = (0..3).map(|m| c[i][m] * bm[m][j]).sum();
            }
        }
        for i in 0..8 {
            for j in 0..8 {
                k[i][j] += w * (0..3).map(|m| bm[m][i] * cb[m][j]).sum::<f64>();
            }
        }
    }
    k
}

/// Basis matrices `M_ab` with `K(C) = sum_ab C_ab M_ab` for a unit square,
/// used to differentiate element energies with respect to `C`.
pub fn unit_stiffness_basis() -> [[Mat8; 3]; 3] {
    let mut basis = [[[[0.0; 8]; 8]; 3]; 3];
    for (bm, w) in gauss_points(1.0, 1.0) {
        for a in 0..3 {
            for b in 0..3 {
                for i in 0..8 {
                    for j in 0..8 {
                        basis[a][b][i][j] += w * bm[a][i] * bm[b][j];
                    }
                }
            }
        }
    }
    basis
}

/// `x^T M y` for 8-vectors.
pub fn bilinear(m: &Mat8, x: &[f64; 8], y: &[f64; 8]) -> f64 {
    let mut s = 0.0;
    for i in 0..8 {
        let row: f64 = (0..8).map(|j| m[i][j] * y[j]).sum();
        s += x[i] * row;
    }
    s
}
