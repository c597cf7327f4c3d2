//! 8-node hexahedral element stiffness for a cube-shaped voxel.

use crate::error::{Error, Result};

/// Natural coordinates of the 8 corners, node order
/// (-,-,-), (+,-,-), (+,+,-), (-,+,-), then the same with ζ = +1.
const XI: [f64; 8] = [-1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0];
const ETA: [f64; 8] = [-1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0];
const ZETA: [f64; 8] = [-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0];

const GAUSS: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

/// Dense 24×24 stiffness of a cube element with edge length `edge`,
/// Young's modulus `e_modulus` and Poisson ratio `poisson`, stored
/// row-major. Dof order is (ux,uy,uz) per node in the corner order above.
pub fn hex8_stiffness(e_modulus: f64, poisson: f64, edge: f64) -> Result<Vec<f64>> {
    if !(0.0 < poisson && poisson < 0.5) {
        return Err(Error::config(
            "material.poisson",
            format!("Poisson ratio must lie in (0, 0.5), got {poisson}"),
        ));
    }
    if edge <= 0.0 || !edge.is_finite() {
        return Err(Error::config("mesh", "element edge length must be positive"));
    }
    // Isotropic elasticity matrix in Voigt order (xx,yy,zz,yz,xz,xy).
    let f = e_modulus / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    let d_diag = f * (1.0 - poisson);
    let d_off = f * poisson;
    let d_shear = f * (1.0 - 2.0 * poisson) / 2.0;

    let half = edge / 2.0; // d x / d ξ for the cube geometry
    let det_j = half * half * half;
    let inv_j = 1.0 / half;

    let mut k = vec![0.0; 24 * 24];
    for gp in 0..8 {
        let (xi, eta, zeta) = (GAUSS * XI[gp], GAUSS * ETA[gp], GAUSS * ZETA[gp]);
        // Shape function derivatives with respect to physical coordinates.
        let mut dn = [[0.0f64; 3]; 8];
        for a in 0..8 {
            dn[a][0] = 0.125 * XI[a] * (1.0 + ETA[a] * eta) * (1.0 + ZETA[a] * zeta) * inv_j;
            dn[a][1] = 0.125 * (1.0 + XI[a] * xi) * ETA[a] * (1.0 + ZETA[a] * zeta) * inv_j;
            dn[a][2] = 0.125 * (1.0 + XI[a] * xi) * (1.0 + ETA[a] * eta) * ZETA[a] * inv_j;
        }
        // B matrix, 6×24: rows ε_xx, ε_yy, ε_zz, γ_yz, γ_xz, γ_xy.
        let mut b = [[0.0f64; 24]; 6];
        for a in 0..8 {
            let c = 3 * a;
            b[0][c] = dn[a][0];
            b[1][c + 1] = dn[a][1];
            b[2][c + 2] = dn[a][2];
            b[3][c + 1] = dn[a][2];
            b[3][c + 2] = dn[a][1];
            b[4][c] = dn[a][2];
            b[4][c + 2] = dn[a][0];
            b[5][c] = dn[a][1];
            b[5][c + 1] = dn[a][0];
        }
        // K += Bᵀ D B detJ with the block-diagonal isotropic D.
        let mut db = [[0.0f64; 24]; 6];
        for j in 0..24 {
            db[0][j] = d_diag * b[0][j] + d_off * (b[1][j] + b[2][j]);
            db[1][j] = d_diag * b[1][j] + d_off * (b[0][j] + b[2][j]);
            db[2][j] = d_diag * b[2][j] + d_off * (b[0][j] + b[1][j]);
            db[3][j] = d_shear * b[3][j];
            db[4][j] = d_shear * b[4][j];
            db[5][j] = d_shear * b[5][j];
        }
        for i in 0..24 {
            for j in 0..24 {
                let mut acc = 0.0;
                for r in 0..6 {
                    acc += b[r][i] * db[r][j];
                }
                k[i * 24 + j] += acc * det_j;
            }
        }
    }
    Ok(k)
}

/// ueᵀ·K·ue for a flat row-major 24×24 `k`.
pub fn quadratic_form(k: &[f64], ue: &[f64; 24]) -> f64 {
    let mut total = 0.0;
    for i in 0..24 {
        let row = &k[i * 24..i * 24 + 24];
        let mut acc = 0.0;
        for j in 0..24 {
            acc += row[j] * ue[j];
        }
        total += ue[i] * acc;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn stiffness_is_symmetric() {
        let k = hex8_stiffness(1.0, 0.3, 1.0).unwrap();
        let mut max = 0.0f64;
        for i in 0..24 {
            for j in 0..24 {
                max = max.max((k[i * 24 + j] - k[j * 24 + i]).abs());
            }
        }
        assert_eq!(max, 0.0);
    }

    #[test]
    fn stiffness_has_exactly_six_rigid_modes() {
        let k = hex8_stiffness(1.0, 0.3, 1.0).unwrap();
        let m = DMatrix::from_row_slice(24, 24, &k);
        let eig = m.symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let zeros = eig
            .eigenvalues
            .iter()
            .filter(|&&v| v.abs() < 1e-10 * max)
            .count();
        assert_eq!(zeros, 6);
        assert!(eig.eigenvalues.iter().all(|&v| v > -1e-10 * max));
    }

    #[test]
    fn translation_modes_are_in_the_nullspace() {
        let k = hex8_stiffness(2.0, 0.25, 0.5).unwrap();
        for dir in 0..3 {
            let mut u = [0.0f64; 24];
            for a in 0..8 {
                u[3 * a + dir] = 1.0;
            }
            for i in 0..24 {
                let row = &k[i * 24..i * 24 + 24];
                let dot: f64 = row.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                assert!(dot.abs() < 1e-12, "row {i} not orthogonal to translation");
            }
        }
    }

    #[test]
    fn rejects_invalid_poisson() {
        assert!(hex8_stiffness(1.0, 0.5, 1.0).is_err());
        assert!(hex8_stiffness(1.0, -0.1, 1.0).is_err());
    }

    #[test]
    fn stiffness_scales_linearly_with_edge_length() {
        let k1 = hex8_stiffness(1.0, 0.3, 1.0).unwrap();
        let k2 = hex8_stiffness(1.0, 0.3, 2.0).unwrap();
        for (a, b) in k1.iter().zip(k2.iter()) {
            assert!((2.0 * a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }
}
