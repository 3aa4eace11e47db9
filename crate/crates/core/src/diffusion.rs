//! Graph diffusion operator on node masses.
//!
//! For masses `m_i` in balls of volume `v_i` joined by conductances `Q_ij`,
//! Fick's law between touching balls gives `dM/dt = D Δ̂ M` with
//!
//! ```text
//! Δ̂_ii = −(1/v_i) Σ_j Q_ij        Δ̂_ij = Q_ij / v_j   (i ≠ j, adjacent)
//! ```
//!
//! Columns of `Δ̂` sum to zero, which is mass conservation, and `Δ̂` is
//! Metzler, which keeps masses nonnegative under the implicit step.
//!
//! `Δ̂ = L V⁻¹` with `L` the symmetric weighted graph Laplacian, so the
//! implicit step `(I − dt D Δ̂) M⁺ = M` is solved for concentrations as the
//! SPD system `(V − dt D L) c⁺ = M` with preconditioned conjugate gradients.

use crate::error::{Error, Result};
use crate::network::PoreNetwork;

/// Compressed sparse rows, columns sorted within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists; each list is sorted here.
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.vals[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `(row, col, value)` for every stored entry.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }
}

/// The assembled `Δ̂` together with the data needed for implicit solves.
#[derive(Clone, Debug)]
pub struct DiffusionOperator {
    matrix: CsrMatrix,
    volumes: Vec<f64>,
    /// `(i, j, Q_ij)` with `i < j`, sorted.
    links: Vec<(usize, usize, f64)>,
}

impl DiffusionOperator {
    pub fn assemble(net: &PoreNetwork) -> Result<Self> {
        let n = net.node_count();
        if n == 0 {
            return Err(Error::EmptyNetwork);
        }
        let volumes = net.volumes();
        if let Some(i) = volumes.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::input(format!("node {i} has non-positive volume {}", volumes[i])));
        }
        let mut links: Vec<(usize, usize, f64)> = net
            .edges
            .iter()
            .map(|e| (e.i.min(e.j), e.i.max(e.j), e.conductance))
            .collect();
        links.sort_by_key(|&(i, j, _)| (i, j));

        let mut qsum = vec![0.0; n];
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, q) in &links {
            qsum[i] += q;
            qsum[j] += q;
            rows[i].push((j, q / volumes[j]));
            rows[j].push((i, q / volumes[i]));
        }
        for i in 0..n {
            rows[i].push((i, -qsum[i] / volumes[i]));
        }
        Ok(Self {
            matrix: CsrMatrix::from_rows(rows),
            volumes,
            links,
        })
    }

    pub fn dim(&self) -> usize {
        self.volumes.len()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Column sums of `Δ̂`; zero up to rounding.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.dim()];
        for (_, j, v) in self.matrix.triplets() {
            sums[j] += v;
        }
        sums
    }

    /// Mass rates `D Δ̂ M`.
    pub fn apply(&self, masses: &[f64], d: f64) -> Vec<f64> {
        assert_eq!(masses.len(), self.dim(), "mass vector length");
        let mut out = self.matrix.mul_vec(masses);
        for v in &mut out {
            *v *= d;
        }
        out
    }

    /// Backward-Euler system for a fixed `D dt`, reusable across steps.
    pub fn implicit(&self, d: f64, dt: f64) -> ImplicitDiffusion {
        ImplicitDiffusion::new(self, d, dt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSolverOptions {
    /// Relative residual target, `‖M − A c‖₂ ≤ tol ‖M‖₂`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LinearSolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// `(V − dt D L) c = M`, assembled once.
#[derive(Clone, Debug)]
pub struct ImplicitDiffusion {
    volumes: Vec<f64>,
    links: Vec<(usize, usize, f64)>,
    scale: f64,
    system: CsrMatrix,
    inv_diag: Vec<f64>,
}

impl ImplicitDiffusion {
    fn new(op: &DiffusionOperator, d: f64, dt: f64) -> Self {
        let n = op.dim();
        let scale = d * dt;
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut diag = op.volumes.clone();
        for &(i, j, q) in &op.links {
            diag[i] += scale * q;
            diag[j] += scale * q;
            rows[i].push((j, -scale * q));
            rows[j].push((i, -scale * q));
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row.push((i, diag[i]));
        }
        Self {
            volumes: op.volumes.clone(),
            links: op.links.clone(),
            scale,
            system: CsrMatrix::from_rows(rows),
            inv_diag: diag.iter().map(|v| 1.0 / v).collect(),
        }
    }

    /// Advances masses by one implicit step.
    ///
    /// Masses are updated through antisymmetric edge fluxes computed from the
    /// solved concentrations, so the total is preserved to rounding whatever
    /// the solver residual.
    pub fn step(&self, masses: &[f64], opts: &LinearSolverOptions) -> Result<(Vec<f64>, SolveStats)> {
        let n = self.volumes.len();
        assert_eq!(masses.len(), n, "mass vector length");
        if self.scale == 0.0 || self.links.is_empty() {
            return Ok((masses.to_vec(), SolveStats::default()));
        }
        let mut conc: Vec<f64> = masses.iter().zip(&self.volumes).map(|(m, v)| m / v).collect();
        let stats = self.solve(masses, &mut conc, opts)?;
        let mut out = masses.to_vec();
        for &(i, j, q) in &self.links {
            let flux = self.scale * q * (conc[j] - conc[i]);
            out[i] += flux;
            out[j] -= flux;
        }
        Ok((out, stats))
    }

    /// Jacobi-preconditioned CG, warm-started from `x`.
    fn solve(&self, b: &[f64], x: &mut [f64], opts: &LinearSolverOptions) -> Result<SolveStats> {
        let n = b.len();
        let b_norm = norm(b);
        if b_norm == 0.0 {
            x.fill(0.0);
            return Ok(SolveStats::default());
        }
        let target = opts.tol * b_norm;
        let mut r = self.system.mul_vec(x);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let mut res = norm(&r);
        if res <= target {
            return Ok(SolveStats {
                iterations: 0,
                relative_residual: res / b_norm,
            });
        }
        let mut z: Vec<f64> = r.iter().zip(&self.inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        for it in 1..=opts.max_iter {
            self.system.mul_vec_into(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            res = norm(&r);
            if res <= target {
                // recompute the true residual to guard against drift of the recurrence
                let ax = self.system.mul_vec(x);
                let true_res = norm(&b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect::<Vec<_>>());
                if true_res <= target {
                    return Ok(SolveStats {
                        iterations: it,
                        relative_residual: true_res / b_norm,
                    });
                }
                for i in 0..n {
                    r[i] = b[i] - ax[i];
                }
            }
            for i in 0..n {
                z[i] = r[i] * self.inv_diag[i];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::LinearSolver {
            iterations: opts.max_iter,
            residual: res / b_norm,
        })
    }
}

/// One backward-Euler diffusion step with default solver options.
pub fn implicit_diffusion_step(op: &DiffusionOperator, masses: &[f64], d: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::input(format!("dt must be > 0, got {dt}")));
    }
    op.implicit(d, dt)
        .step(masses, &LinearSolverOptions::default())
        .map(|(m, _)| m)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Ball, NetworkMeta, PoreEdge};

    fn two_node(v: f64, q: f64) -> PoreNetwork {
        let mut net = PoreNetwork {
            balls: vec![Ball::new([0.0; 3], 1.0), Ball::new([1.0, 0.0, 0.0], 1.0)],
            edges: vec![PoreEdge {
                i: 0,
                j: 1,
                contact_area: q,
                center_distance: 1.0,
                conductance: q,
            }],
            meta: NetworkMeta {
                resolution_um: 1.0,
                source: String::new(),
            },
        };
        for b in &mut net.balls {
            b.volume = v;
        }
        net
    }

    #[test]
    fn isolated_node_is_zero() {
        let net = PoreNetwork::from_balls(
            vec![Ball::new([0.0; 3], 2.0)],
            NetworkMeta {
                resolution_um: 1.0,
                source: String::new(),
            },
        )
        .unwrap();
        let op = DiffusionOperator::assemble(&net).unwrap();
        assert_eq!(op.matrix().triplets(), vec![(0, 0, 0.0)]);
    }

    #[test]
    fn two_node_matrix_and_rates() {
        let (v, q) = (3.0, 0.7);
        let op = DiffusionOperator::assemble(&two_node(v, q)).unwrap();
        let m = op.matrix();
        assert_eq!(m.get(0, 0), -q / v);
        assert_eq!(m.get(0, 1), q / v);
        assert_eq!(m.get(1, 0), q / v);
        assert_eq!(m.get(1, 1), -q / v);
        let (d, mass) = (2.5, 1.3);
        let rates = op.apply(&[mass, 0.0], d);
        assert!((rates[0] + d * q * mass / v).abs() < 1e-15);
        assert!((rates[1] - d * q * mass / v).abs() < 1e-15);
    }

    #[test]
    fn zero_volume_rejected() {
        let net = two_node(0.0, 1.0);
        assert!(DiffusionOperator::assemble(&net).is_err());
    }

    #[test]
    fn two_node_implicit_step_matches_closed_form() {
        let (v, q, d, dt) = (2.0, 0.9, 1.7, 0.3);
        let op = DiffusionOperator::assemble(&two_node(v, q)).unwrap();
        let m0 = [1.0, 0.25];
        let out = implicit_diffusion_step(&op, &m0, d, dt).unwrap();
        // (I − a [[-1, 1], [1, -1]]) M⁺ = M  with a = dt D Q / V
        let a = dt * d * q / v;
        let det = (1.0 + a) * (1.0 + a) - a * a;
        let e0 = ((1.0 + a) * m0[0] + a * m0[1]) / det;
        let e1 = (a * m0[0] + (1.0 + a) * m0[1]) / det;
        assert!((out[0] - e0).abs() < 1e-10);
        assert!((out[1] - e1).abs() < 1e-10);
    }

    #[test]
    fn zero_diffusion_is_identity() {
        let op = DiffusionOperator::assemble(&two_node(1.0, 1.0)).unwrap();
        let m = [0.3, 0.9];
        assert_eq!(implicit_diffusion_step(&op, &m, 0.0, 0.1).unwrap(), m.to_vec());
    }

    #[test]
    fn uniform_concentration_is_fixed() {
        let mut net = two_node(1.0, 1.0);
        net.balls[1].volume = 4.0;
        let op = DiffusionOperator::assemble(&net).unwrap();
        let m = [0.5, 2.0];
        assert_eq!(op.apply(&m, 3.0), vec![0.0, 0.0]);
        let out = implicit_diffusion_step(&op, &m, 3.0, 0.5).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-14 && (out[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn negative_dt_rejected() {
        let op = DiffusionOperator::assemble(&two_node(1.0, 1.0)).unwrap();
        assert!(implicit_diffusion_step(&op, &[1.0, 0.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn solver_reports_non_convergence() {
        let op = DiffusionOperator::assemble(&two_node(1.0, 1.0)).unwrap();
        let sys = op.implicit(1.0, 1.0);
        let opts = LinearSolverOptions {
            tol: 1e-300,
            max_iter: 1,
        };
        let err = sys.step(&[1.0, 0.0], &opts);
        assert!(matches!(err, Err(Error::LinearSolver { .. })), "{err:?}");
    }
}
