//! Voxel finite-element analysis: structured hex8 mesh, SIMP material
//! interpolation, matrix-free preconditioned conjugate gradients with a
//! dense direct path for small problems, and adjoint compliance
//! sensitivities.

mod hex8;

pub use hex8::{hex8_stiffness, quadratic_form};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Structured voxel mesh. Nodes are numbered x-major, then y, then z;
/// each node carries dofs (3·node, 3·node+1, 3·node+2) = (ux, uy, uz).
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nelx: usize,
    pub nely: usize,
    pub nelz: usize,
    /// Element edge length in normalized units.
    pub edge: f64,
}

impl Mesh {
    pub fn new(nelx: usize, nely: usize, nelz: usize, edge: f64) -> Result<Self> {
        if nelx == 0 || nely == 0 || nelz == 0 {
            return Err(Error::config("mesh", "element counts must be ≥ 1"));
        }
        if edge <= 0.0 || !edge.is_finite() {
            return Err(Error::config("mesh", "element edge length must be positive"));
        }
        Ok(Mesh {
            nelx,
            nely,
            nelz,
            edge,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.nelx * self.nely * self.nelz
    }

    pub fn n_nodes(&self) -> usize {
        (self.nelx + 1) * (self.nely + 1) * (self.nelz + 1)
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.n_nodes()
    }

    pub fn node_id(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * (self.nely + 1) + iy) * (self.nelz + 1) + iz
    }

    pub fn element_index(&self, ex: usize, ey: usize, ez: usize) -> usize {
        (ex * self.nely + ey) * self.nelz + ez
    }

    /// The 24 global dofs of element (ex,ey,ez) in hex8 corner order.
    pub fn element_dofs(&self, ex: usize, ey: usize, ez: usize) -> [u32; 24] {
        const CORNERS: [(usize, usize, usize); 8] = [
            (0, 0, 0),
            (1, 0, 0),
            (1, 1, 0),
            (0, 1, 0),
            (0, 0, 1),
            (1, 0, 1),
            (1, 1, 1),
            (0, 1, 1),
        ];
        let mut dofs = [0u32; 24];
        for (a, (dx, dy, dz)) in CORNERS.iter().enumerate() {
            let node = self.node_id(ex + dx, ey + dy, ez + dz) as u32;
            dofs[3 * a] = 3 * node;
            dofs[3 * a + 1] = 3 * node + 1;
            dofs[3 * a + 2] = 3 * node + 2;
        }
        dofs
    }
}

/// SIMP material model: E(ρ) = E_min + ρ^p (E_0 − E_min).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub e0: f64,
    pub e_min: f64,
    pub poisson: f64,
    pub penal: f64,
}

impl Default for Material {
    fn default() -> Self {
        Material {
            e0: 1.0,
            e_min: 1e-9,
            poisson: 0.3,
            penal: 3.0,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_min > 0.0 && self.e_min < self.e0) {
            return Err(Error::config(
                "material.e_min",
                "void stiffness must satisfy 0 < E_min < E_0",
            ));
        }
        if !(0.0 < self.poisson && self.poisson < 0.5) {
            return Err(Error::config(
                "material.poisson",
                "Poisson ratio must lie in (0, 0.5)",
            ));
        }
        if self.penal < 1.0 {
            return Err(Error::config("material.penal", "SIMP exponent must be ≥ 1"));
        }
        Ok(())
    }

    #[inline]
    pub fn modulus(&self, rho: f64) -> f64 {
        self.e_min + rho.powf(self.penal) * (self.e0 - self.e_min)
    }

    #[inline]
    pub fn modulus_grad(&self, rho: f64) -> f64 {
        self.penal * rho.powf(self.penal - 1.0) * (self.e0 - self.e_min)
    }
}

/// Dirichlet dofs and nodal loads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryConditions {
    pub fixed_dofs: Vec<usize>,
    pub loads: Vec<(usize, f64)>,
}

impl BoundaryConditions {
    pub fn validate(&self, n_dofs: usize) -> Result<()> {
        if self.fixed_dofs.len() < 6 {
            return Err(Error::Structural(
                "at least 6 constrained dofs are required to remove rigid-body modes".into(),
            ));
        }
        if self.fixed_dofs.iter().any(|&d| d >= n_dofs)
            || self.loads.iter().any(|&(d, _)| d >= n_dofs)
        {
            return Err(Error::invalid("boundary condition dof index out of range"));
        }
        if self.loads.is_empty() || self.loads.iter().all(|&(_, f)| f == 0.0) {
            return Err(Error::config("load", "no nonzero load case is defined"));
        }
        let fixed: std::collections::HashSet<usize> = self.fixed_dofs.iter().copied().collect();
        if self.loads.iter().any(|(d, _)| fixed.contains(d)) {
            return Err(Error::config(
                "load",
                "loaded dofs overlap the fixed dof set",
            ));
        }
        Ok(())
    }
}

/// Linear solver selection for the equilibrium system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearSolver {
    /// Jacobi-preconditioned conjugate gradients; `tol` is the relative
    /// residual target, iteration cap is `max_iter_factor·n_dofs`.
    Cg { tol: f64, max_iter_factor: usize },
    /// Dense LU on the reduced system; intended for small validation meshes.
    Dense,
}

impl Default for LinearSolver {
    fn default() -> Self {
        LinearSolver::Cg {
            tol: 1e-6,
            max_iter_factor: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeaResult {
    pub displacement: Vec<f64>,
    pub compliance: f64,
    pub dc_drho: Vec<f64>,
    pub cg_iterations: usize,
}

/// Prepared equilibrium problem: mesh tables, unit-modulus element
/// stiffness and boundary data. Reusable across density updates.
pub struct FeaProblem {
    pub mesh: Mesh,
    pub material: Material,
    pub bc: BoundaryConditions,
    pub solver: LinearSolver,
    ke: Vec<f64>,          // hex8 stiffness at E = 1, row-major 24×24
    edofs: Vec<u32>,       // 24 entries per element
    fixed_mask: Vec<bool>, // per dof
    force: Vec<f64>,       // full-length load vector, zero at fixed dofs
}

impl FeaProblem {
    pub fn new(
        mesh: Mesh,
        material: Material,
        bc: BoundaryConditions,
        solver: LinearSolver,
    ) -> Result<Self> {
        material.validate()?;
        bc.validate(mesh.n_dofs())?;
        let ke = hex8_stiffness(1.0, material.poisson, mesh.edge)?;
        let mut edofs = Vec::with_capacity(24 * mesh.n_elements());
        for ex in 0..mesh.nelx {
            for ey in 0..mesh.nely {
                for ez in 0..mesh.nelz {
                    edofs.extend_from_slice(&mesh.element_dofs(ex, ey, ez));
                }
            }
        }
        let mut fixed_mask = vec![false; mesh.n_dofs()];
        for &d in &bc.fixed_dofs {
            fixed_mask[d] = true;
        }
        let mut force = vec![0.0; mesh.n_dofs()];
        for &(d, f) in &bc.loads {
            force[d] += f;
        }
        Ok(FeaProblem {
            mesh,
            material,
            bc,
            solver,
            ke,
            edofs,
            fixed_mask,
            force,
        })
    }

    pub fn force(&self) -> &[f64] {
        &self.force
    }

    /// The unit-modulus element stiffness used for every voxel.
    pub fn unit_stiffness(&self) -> &[f64] {
        &self.ke
    }

    fn element_moduli(&self, densities: &[f64]) -> Result<Vec<f64>> {
        if densities.len() != self.mesh.n_elements() {
            return Err(Error::invalid(format!(
                "density array length {} does not match element count {}",
                densities.len(),
                self.mesh.n_elements()
            )));
        }
        if densities.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::invalid("densities must lie in [0, 1]"));
        }
        Ok(densities.iter().map(|&r| self.material.modulus(r)).collect())
    }

    /// y = K(ρ)·x with identity rows on fixed dofs.
    fn matvec(&self, moduli: &[f64], x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (e, dofs) in self.edofs.chunks_exact(24).enumerate() {
            let s = moduli[e];
            let mut ue = [0.0f64; 24];
            for a in 0..24 {
                ue[a] = x[dofs[a] as usize];
            }
            for i in 0..24 {
                let row = &self.ke[i * 24..i * 24 + 24];
                let mut acc = 0.0;
                for j in 0..24 {
                    acc += row[j] * ue[j];
                }
                y[dofs[i] as usize] += s * acc;
            }
        }
        for (d, &fixed) in self.fixed_mask.iter().enumerate() {
            if fixed {
                y[d] = x[d];
            }
        }
    }

    fn diagonal(&self, moduli: &[f64]) -> Vec<f64> {
        let mut diag = vec![0.0; self.mesh.n_dofs()];
        for (e, dofs) in self.edofs.chunks_exact(24).enumerate() {
            let s = moduli[e];
            for a in 0..24 {
                diag[dofs[a] as usize] += s * self.ke[a * 24 + a];
            }
        }
        for (d, &fixed) in self.fixed_mask.iter().enumerate() {
            if fixed {
                diag[d] = 1.0;
            }
        }
        diag
    }

    /// Solve K(ρ)u = F and return compliance plus adjoint sensitivities.
    /// `warm_start` seeds the CG iteration when provided.
    pub fn solve(&self, densities: &[f64], warm_start: Option<&[f64]>) -> Result<FeaResult> {
        let moduli = self.element_moduli(densities)?;
        let (displacement, cg_iterations) = match self.solver {
            LinearSolver::Cg {
                tol,
                max_iter_factor,
            } => self.solve_cg(&moduli, warm_start, tol, max_iter_factor)?,
            LinearSolver::Dense => (self.solve_dense(&moduli)?, 0),
        };
        let compliance: f64 = self
            .force
            .iter()
            .zip(displacement.iter())
            .map(|(f, u)| f * u)
            .sum();
        let mut dc_drho = vec![0.0; self.mesh.n_elements()];
        for (e, dofs) in self.edofs.chunks_exact(24).enumerate() {
            let mut ue = [0.0f64; 24];
            for a in 0..24 {
                ue[a] = displacement[dofs[a] as usize];
            }
            let q = quadratic_form(&self.ke, &ue);
            dc_drho[e] = -self.material.modulus_grad(densities[e]) * q;
        }
        Ok(FeaResult {
            displacement,
            compliance,
            dc_drho,
            cg_iterations,
        })
    }

    fn solve_cg(
        &self,
        moduli: &[f64],
        warm_start: Option<&[f64]>,
        tol: f64,
        max_iter_factor: usize,
    ) -> Result<(Vec<f64>, usize)> {
        let n = self.mesh.n_dofs();
        let b = &self.force;
        let b_norm = norm(b);
        if b_norm == 0.0 {
            return Ok((vec![0.0; n], 0));
        }
        let diag = self.diagonal(moduli);
        let mut x = match warm_start {
            Some(w) if w.len() == n => w.to_vec(),
            _ => vec![0.0; n],
        };
        for (d, &fixed) in self.fixed_mask.iter().enumerate() {
            if fixed {
                x[d] = 0.0;
            }
        }
        let mut r = vec![0.0; n];
        self.matvec(moduli, &x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let mut z: Vec<f64> = r.iter().zip(diag.iter()).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut q = vec![0.0; n];
        let max_iter = max_iter_factor.saturating_mul(n).max(1);
        let target = tol * b_norm;
        let mut res = norm(&r);
        if res <= target {
            return Ok((x, 0));
        }
        for it in 1..=max_iter {
            self.matvec(moduli, &p, &mut q);
            let pq = dot(&p, &q);
            if pq <= 0.0 || !pq.is_finite() {
                return Err(Error::Structural(format!(
                    "conjugate gradients broke down at iteration {it}: pᵀKp = {pq:.3e}; \
                     the reduced system is not positive definite"
                )));
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            res = norm(&r);
            if res <= target {
                return Ok((x, it));
            }
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::Numerical {
            message: format!(
                "conjugate gradients did not reach tolerance {tol:.1e} within {max_iter} iterations"
            ),
            residual: res / b_norm,
        })
    }

    /// Direct dense solve on the reduced (free-dof) system.
    fn solve_dense(&self, moduli: &[f64]) -> Result<Vec<f64>> {
        let n = self.mesh.n_dofs();
        let free: Vec<usize> = (0..n).filter(|&d| !self.fixed_mask[d]).collect();
        if free.len() > 6_000 {
            return Err(Error::Resource(format!(
                "dense solver limited to 6000 free dofs, got {}",
                free.len()
            )));
        }
        let mut index = vec![usize::MAX; n];
        for (i, &d) in free.iter().enumerate() {
            index[d] = i;
        }
        let m = free.len();
        let mut k = DMatrix::<f64>::zeros(m, m);
        for (e, dofs) in self.edofs.chunks_exact(24).enumerate() {
            let s = moduli[e];
            for a in 0..24 {
                let ia = index[dofs[a] as usize];
                if ia == usize::MAX {
                    continue;
                }
                for bidx in 0..24 {
                    let ib = index[dofs[bidx] as usize];
                    if ib == usize::MAX {
                        continue;
                    }
                    k[(ia, ib)] += s * self.ke[a * 24 + bidx];
                }
            }
        }
        let rhs = DVector::from_iterator(m, free.iter().map(|&d| self.force[d]));
        let lu = k.lu();
        let sol = lu.solve(&rhs).ok_or_else(|| {
            Error::Structural(
                "reduced stiffness matrix is singular (insufficient constraints)".into(),
            )
        })?;
        let mut u = vec![0.0; n];
        for (i, &d) in free.iter().enumerate() {
            u[d] = sol[i];
        }
        Ok(u)
    }

    /// Central finite-difference check of the adjoint sensitivities over a
    /// subset of elements; returns the maximum relative deviation.
    pub fn sensitivity_check(&self, densities: &[f64], probe: &[usize], step: f64) -> Result<f64> {
        let base = self.solve(densities, None)?;
        let mut worst = 0.0f64;
        let mut work = densities.to_vec();
        for &e in probe {
            let r = densities[e];
            let hi_r = (r + step).min(1.0);
            let lo_r = (r - step).max(0.0);
            work[e] = hi_r;
            let hi = self.solve(&work, None)?.compliance;
            work[e] = lo_r;
            let lo = self.solve(&work, None)?.compliance;
            work[e] = r;
            let fd = (hi - lo) / (hi_r - lo_r);
            let denom = base.dc_drho[e].abs().max(fd.abs()).max(1e-12);
            worst = worst.max((base.dc_drho[e] - fd).abs() / denom);
        }
        Ok(worst)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests;
