//! Voxel finite-volume solver of the continuum equations.
//!
//! Each pore voxel holds five carbon densities (μgC·μm⁻³). Diffusion uses the
//! 7-point stencil with zero flux across solid faces and the volume boundary;
//! reactions are the same local kinetics as the network model. Time stepping
//! is explicit Euler, only inside the stability bound `dt ≤ 0.9 h² / (6 D_max)`,
//! with extra equal substeps whenever the Monod uptake becomes stiff.
//!
//! The solver is meant for small volumes (at most 64 voxels per axis) and
//! serves as an independent reference for the pore-network model.
//!
//! The half-saturation constant of the network is a mass. On the grid it is
//! converted per voxel to a density by dividing by the pore volume of the ball
//! region the voxel belongs to, so a well-mixed region reproduces the Monod
//! term of its node exactly.

use serde::{Deserialize, Serialize};

use crate::analysis::{agg1, Totals};
use crate::error::{Error, Result};
use crate::image_io::VolumeImage;
use crate::integrator::{Integrator, SolverConfig};
use crate::kinetics::{reaction_rhs, BioParams, NodeState, SystemState, SPECIES};
use crate::network::{extract_network, PoreNetwork};

pub const MAX_AXIS: usize = 64;

/// Fraction of the explicit diffusion limit `h² / (6 D)` used at most.
pub const STABILITY_FACTOR: f64 = 0.9;

/// Bound on substep times loss rate inside one oracle step.
const SUBSTEP_LIMIT: f64 = 0.5;

/// Work buffers reused across oracle steps.
#[derive(Clone, Debug, Default)]
pub struct Scratch {
    rates: [Vec<f64>; 5],
    lap: Vec<f64>,
}

/// Explicit diffusion limit `0.9 h² / (6 D_max)` over the mobile compounds,
/// infinite when nothing diffuses.
pub fn max_stable_dt(bio: &BioParams, h: f64) -> f64 {
    let d_max = [bio.d_b, bio.d_n, bio.d_c].into_iter().fold(0.0, f64::max);
    if d_max == 0.0 {
        f64::INFINITY
    } else {
        STABILITY_FACTOR * h * h / (6.0 * d_max)
    }
}

/// Pore voxels of a volume and their face neighbors, in compact numbering.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    dims: [usize; 3],
    h: f64,
    /// Grid index of each pore voxel, ascending.
    pore: Vec<usize>,
    nbr_ptr: Vec<usize>,
    nbrs: Vec<usize>,
}

impl VoxelGrid {
    pub fn new(img: &VolumeImage) -> Result<Self> {
        let dims = img.dims();
        if dims.iter().any(|&n| n > MAX_AXIS) {
            return Err(Error::input(format!(
                "voxel oracle accepts at most {MAX_AXIS} voxels per axis, got {dims:?}"
            )));
        }
        let pore: Vec<usize> = (0..img.len()).filter(|&i| img.voxels()[i]).collect();
        if pore.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        let mut compact = vec![usize::MAX; img.len()];
        for (k, &g) in pore.iter().enumerate() {
            compact[g] = k;
        }
        let mut nbr_ptr = Vec::with_capacity(pore.len() + 1);
        let mut nbrs = Vec::with_capacity(6 * pore.len());
        nbr_ptr.push(0);
        for &g in &pore {
            let [x, y, z] = img.coords(g);
            let mut push = |x: usize, y: usize, z: usize| {
                let c = compact[img.index(x, y, z)];
                if c != usize::MAX {
                    nbrs.push(c);
                }
            };
            if x > 0 {
                push(x - 1, y, z);
            }
            if x + 1 < dims[0] {
                push(x + 1, y, z);
            }
            if y > 0 {
                push(x, y - 1, z);
            }
            if y + 1 < dims[1] {
                push(x, y + 1, z);
            }
            if z > 0 {
                push(x, y, z - 1);
            }
            if z + 1 < dims[2] {
                push(x, y, z + 1);
            }
            nbr_ptr.push(nbrs.len());
        }
        Ok(Self {
            dims,
            h: img.resolution(),
            pore,
            nbr_ptr,
            nbrs,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn resolution(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.pore.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pore.is_empty()
    }

    /// Grid indices of the pore voxels, in compact order.
    pub fn pore_indices(&self) -> &[usize] {
        &self.pore
    }

    pub fn voxel_volume(&self) -> f64 {
        self.h.powi(3)
    }

    /// `out[k] = Σ_faces (u_j − u_k) / h²` over pore neighbors.
    pub fn laplacian_into(&self, u: &[f64], out: &mut [f64]) {
        let inv_h2 = 1.0 / (self.h * self.h);
        for (k, o) in out.iter_mut().enumerate() {
            let uk = u[k];
            let mut acc = 0.0;
            for &j in &self.nbrs[self.nbr_ptr[k]..self.nbr_ptr[k + 1]] {
                acc += u[j] - uk;
            }
            *o = acc * inv_h2;
        }
    }

    /// Scatters a compact field to a full grid, zero on solid voxels.
    pub fn to_grid(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dims.iter().product()];
        for (&g, &v) in self.pore.iter().zip(u) {
            out[g] = v;
        }
        out
    }

    /// Gathers the pore values of a full grid field.
    pub fn from_grid(&self, field: &[f64]) -> Vec<f64> {
        self.pore.iter().map(|&g| field[g]).collect()
    }
}

/// Seven-point Laplacian of a full-grid field with no-flux faces against
/// solid voxels and the volume boundary. Solid entries of the result are 0.
pub fn fd_laplacian(img: &VolumeImage, field: &[f64]) -> Result<Vec<f64>> {
    if field.len() != img.len() {
        return Err(Error::input(format!(
            "field has {} entries, volume has {}",
            field.len(),
            img.len()
        )));
    }
    let grid = VoxelGrid::new(img)?;
    let u = grid.from_grid(field);
    let mut out = vec![0.0; u.len()];
    grid.laplacian_into(&u, &mut out);
    Ok(grid.to_grid(&out))
}

/// Five density fields over the pore voxels of a [`VoxelGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridState {
    pub time: f64,
    /// `[B, N, M1, M2, C]`, each indexed by compact pore number.
    pub fields: [Vec<f64>; 5],
}

impl GridState {
    pub fn zeros(len: usize) -> Self {
        Self {
            time: 0.0,
            fields: std::array::from_fn(|_| vec![0.0; len]),
        }
    }

    /// Same densities in every pore voxel.
    pub fn uniform(len: usize, densities: [f64; 5]) -> Self {
        Self {
            time: 0.0,
            fields: std::array::from_fn(|s| vec![densities[s]; len]),
        }
    }

    pub fn len(&self) -> usize {
        self.fields[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total mass of each compound, μgC.
    pub fn totals(&self, voxel_volume: f64) -> Totals {
        std::array::from_fn(|s| self.fields[s].iter().sum::<f64>() * voxel_volume)
    }

    pub fn min_density(&self) -> f64 {
        self.fields
            .iter()
            .flat_map(|f| f.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}

/// DOM confined to the pore voxels of the lower half of the x axis, MB and
/// FOM spread over all pore voxels. Arguments are total masses, μgC.
pub fn split_state(grid: &VoxelGrid, dom: f64, mb: f64, fom: f64) -> GridState {
    let [nx, _, _] = grid.dims;
    let vol = grid.voxel_volume();
    let mut left: Vec<bool> = grid.pore.iter().map(|&g| 2 * (g % nx) < nx).collect();
    if !left.contains(&true) {
        left.fill(true);
    }
    let n_left = left.iter().filter(|l| **l).count();
    let n = grid.len() as f64;
    let mut s = GridState::zeros(grid.len());
    for (k, &l) in left.iter().enumerate() {
        s.fields[0][k] = mb / (n * vol);
        s.fields[3][k] = fom / (n * vol);
        if l {
            s.fields[1][k] = dom / (n_left as f64 * vol);
        }
    }
    s
}

/// Explicit solver on one voxel grid.
#[derive(Clone, Debug)]
pub struct VoxelOracle {
    grid: VoxelGrid,
    bio: BioParams,
    /// Half-saturation density per pore voxel, μgC·μm⁻³.
    k_b_density: Vec<f64>,
}

impl VoxelOracle {
    /// Uniform half-saturation density.
    pub fn new(img: &VolumeImage, bio: BioParams, k_b_density: f64) -> Result<Self> {
        let grid = VoxelGrid::new(img)?;
        let n = grid.len();
        Self::with_half_saturation(grid, bio, vec![k_b_density; n])
    }

    pub fn with_half_saturation(grid: VoxelGrid, bio: BioParams, k_b_density: Vec<f64>) -> Result<Self> {
        bio.validate()?;
        if k_b_density.len() != grid.len() {
            return Err(Error::input("one half-saturation density per pore voxel is required"));
        }
        if let Some(v) = k_b_density.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::input(format!("half-saturation density must be > 0, got {v}")));
        }
        Ok(Self { grid, bio, k_b_density })
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    fn coefficients(&self) -> [f64; 5] {
        [self.bio.d_b, self.bio.d_n, 0.0, 0.0, self.bio.d_c]
    }

    /// Largest admissible step, infinite when nothing diffuses.
    pub fn max_stable_dt(&self) -> f64 {
        max_stable_dt(&self.bio, self.grid.h)
    }

    /// One step of length `dt`, split into as many equal explicit Euler
    /// substeps as needed to keep every density nonnegative.
    ///
    /// A substep `τ` is admissible when `τ · ℓ ≤ 0.5` for the loss rate `ℓ`
    /// of every compound in every voxel (reaction losses per unit density
    /// plus `6 D / h²`). Under that bound each update is a nonnegative
    /// combination of old values.
    pub fn step(&self, state: &mut GridState, dt: f64, scratch: &mut Scratch) -> Result<usize> {
        if !(dt > 0.0 && dt <= self.max_stable_dt()) {
            return Err(Error::input(format!(
                "oracle step {dt} outside (0, {}]",
                self.max_stable_dt()
            )));
        }
        let n = self.grid.len();
        if state.len() != n {
            return Err(Error::input(format!("state has {} voxels, grid has {n}", state.len())));
        }
        let t0 = state.time;
        let mut done = 0.0;
        let mut substeps = 0;
        while done < dt {
            let rate = self.max_loss_rate(state);
            let remaining = dt - done;
            let tau = if rate * remaining <= SUBSTEP_LIMIT {
                remaining
            } else {
                // equal pieces of what is left
                remaining / (rate * remaining / SUBSTEP_LIMIT).ceil()
            };
            self.euler(state, tau, scratch);
            substeps += 1;
            done = if tau == remaining { dt } else { done + tau };
        }
        state.time = t0 + dt;
        for (s, field) in state.fields.iter().enumerate() {
            if let Some((k, &v)) = field.iter().enumerate().find(|(_, v)| **v < 0.0) {
                return Err(Error::Negativity {
                    node: k,
                    species: SPECIES[s],
                    value: v,
                });
            }
        }
        Ok(substeps)
    }

    fn max_loss_rate(&self, state: &GridState) -> f64 {
        let p = &self.bio;
        let inv_h2 = 6.0 / (self.grid.h * self.grid.h);
        let mut uptake: f64 = 0.0;
        for k in 0..state.len() {
            uptake = uptake.max(p.k * state.fields[0][k] / (self.k_b_density[k] + state.fields[1][k]));
        }
        let losses = [
            p.mu + p.eta + p.d_b * inv_h2,
            uptake + p.d_n * inv_h2,
            p.c1,
            p.c2,
            p.d_c * inv_h2,
        ];
        losses.into_iter().fold(0.0, f64::max)
    }

    fn euler(&self, state: &mut GridState, tau: f64, scratch: &mut Scratch) {
        let n = self.grid.len();
        for r in scratch.rates.iter_mut() {
            r.resize(n, 0.0);
        }
        scratch.lap.resize(n, 0.0);
        let mut p = self.bio;
        for k in 0..n {
            p.k_b = self.k_b_density[k];
            let f = &state.fields;
            let s = NodeState::new(f[0][k], f[1][k], f[2][k], f[3][k], f[4][k]);
            let r = reaction_rhs(&s, &p).to_array();
            for (rate, v) in scratch.rates.iter_mut().zip(r) {
                rate[k] = v;
            }
        }
        for (s, d) in self.coefficients().into_iter().enumerate() {
            if d > 0.0 {
                self.grid.laplacian_into(&state.fields[s], &mut scratch.lap);
                for (r, l) in scratch.rates[s].iter_mut().zip(&scratch.lap) {
                    *r += d * l;
                }
            }
        }
        for (field, rate) in state.fields.iter_mut().zip(&scratch.rates) {
            for (u, r) in field.iter_mut().zip(rate) {
                *u += tau * r;
            }
        }
    }

    /// Integrates to `t_end` with `steps` equal steps, returning compound
    /// totals every `record_stride` steps and at the end.
    pub fn run(
        &self,
        state: &mut GridState,
        t_end: f64,
        steps: usize,
        record_stride: usize,
    ) -> Result<Vec<(f64, Totals)>> {
        if steps == 0 || record_stride == 0 {
            return Err(Error::input("oracle needs at least one step and a nonzero stride"));
        }
        let dt = (t_end - state.time) / steps as f64;
        let vol = self.grid.voxel_volume();
        let t0 = state.time;
        let mut out = vec![(t0, state.totals(vol))];
        let mut scratch = Scratch::default();
        for k in 1..=steps {
            self.step(state, dt, &mut scratch).map_err(|e| Error::AtTime {
                time: state.time,
                source: Box::new(e),
            })?;
            // avoid drift of the accumulated clock
            state.time = t0 + k as f64 * dt;
            if k % record_stride == 0 || k == steps {
                out.push((state.time, state.totals(vol)));
            }
        }
        Ok(out)
    }
}

/// Ball index owning each pore voxel (compact order): the nearest ball whose
/// interior contains the voxel center, ties to the larger ball and then the
/// lower index.
pub fn assign_voxels(grid: &VoxelGrid, net: &PoreNetwork) -> Vec<usize> {
    let h = grid.h;
    let [nx, ny, nz] = grid.dims;
    let mut compact = vec![usize::MAX; nx * ny * nz];
    for (k, &g) in grid.pore.iter().enumerate() {
        compact[g] = k;
    }
    // (distance², -radius, index) of the best candidate so far
    let mut best: Vec<Option<(f64, f64, usize)>> = vec![None; grid.len()];
    for (b, ball) in net.balls.iter().enumerate() {
        let c = ball.center.map(|v| v / h - 0.5);
        let r = ball.radius / h;
        let r2 = r * r * (1.0 + 1e-12);
        let lo = |v: f64| (v - r).floor().max(0.0) as usize;
        let hi = |v: f64, n: usize| ((v + r).ceil() as usize).min(n - 1);
        for z in lo(c[2])..=hi(c[2], nz) {
            for y in lo(c[1])..=hi(c[1], ny) {
                for x in lo(c[0])..=hi(c[0], nx) {
                    let k = compact[x + nx * (y + ny * z)];
                    if k == usize::MAX {
                        continue;
                    }
                    let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2);
                    if d2 >= r2 {
                        continue;
                    }
                    let cand = (d2, -r, b);
                    let better = match best[k] {
                        None => true,
                        Some(cur) => cand
                            .0
                            .total_cmp(&cur.0)
                            .then(cand.1.total_cmp(&cur.1))
                            .then(cand.2.cmp(&cur.2))
                            .is_lt(),
                    };
                    if better {
                        best[k] = Some(cand);
                    }
                }
            }
        }
    }
    best.iter()
        .enumerate()
        .map(|(k, b)| match b {
            Some((_, _, i)) => *i,
            None => nearest_center(grid, net, k),
        })
        .collect()
}

fn nearest_center(grid: &VoxelGrid, net: &PoreNetwork, k: usize) -> usize {
    let [nx, ny, _] = grid.dims;
    let g = grid.pore[k];
    let p = [g % nx, (g / nx) % ny, g / (nx * ny)].map(|v| (v as f64 + 0.5) * grid.h);
    let dist2 = |c: &[f64; 3]| (0..3).map(|a| (c[a] - p[a]).powi(2)).sum::<f64>();
    (0..net.balls.len())
        .min_by(|&a, &b| dist2(&net.balls[a].center).total_cmp(&dist2(&net.balls[b].center)))
        .expect("network has at least one ball")
}

/// Number of pore voxels owned by each ball.
pub fn region_sizes(assignment: &[usize], nodes: usize) -> Vec<usize> {
    let mut sizes = vec![0; nodes];
    for &b in assignment {
        sizes[b] += 1;
    }
    sizes
}

/// Node masses obtained by integrating grid densities over ball regions.
pub fn restrict(state: &GridState, assignment: &[usize], nodes: usize, voxel_volume: f64) -> SystemState {
    let mut out = vec![[0.0; 5]; nodes];
    for (k, &b) in assignment.iter().enumerate() {
        for (acc, field) in out[b].iter_mut().zip(&state.fields) {
            *acc += field[k] * voxel_volume;
        }
    }
    SystemState::new(state.time, out.into_iter().map(NodeState::from_array).collect())
}

/// Spreads node masses evenly over their ball regions.
pub fn prolong(state: &SystemState, assignment: &[usize], voxel_volume: f64) -> GridState {
    let sizes = region_sizes(assignment, state.len());
    let mut out = GridState::zeros(assignment.len());
    out.time = state.time;
    for (k, &b) in assignment.iter().enumerate() {
        let node = state.nodes[b].to_array();
        let region = sizes[b] as f64 * voxel_volume;
        for (field, &m) in out.fields.iter_mut().zip(&node) {
            field[k] = m / region;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub bio: BioParams,
    /// Horizon, days.
    pub t_end: f64,
    /// Network step, days.
    pub network_dt: f64,
    /// Oracle step, days; must respect the stability bound.
    pub oracle_dt: f64,
    /// Spacing of the compared records, days. A multiple of both steps.
    pub record_interval: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub nodes: usize,
    pub edges: usize,
    pub pore_voxels: usize,
    pub times: Vec<f64>,
    pub network_totals: Vec<Totals>,
    pub oracle_totals: Vec<Totals>,
    /// `‖net − oracle‖₁ / ‖oracle‖₁` of the compound totals at each time.
    pub totals_discrepancy: Vec<f64>,
    pub max_totals_discrepancy: f64,
    /// Relative MB discrepancy at the horizon.
    pub final_mb_discrepancy: f64,
    /// Relative DOM discrepancy at the horizon.
    pub final_dom_discrepancy: f64,
    /// Largest relative drift of total carbon in the oracle run.
    pub oracle_conservation_error: f64,
}

fn whole_steps(span: f64, dt: f64, what: &str) -> Result<usize> {
    let ratio = span / dt;
    let n = ratio.round();
    if !(dt > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::input(format!(
            "{what}: {span} is not a whole number of steps of {dt}"
        )));
    }
    Ok(n as usize)
}

/// `0/0 = 0`; otherwise `|a − b| / |b|`.
fn relative(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / b.abs()
    }
}

/// Runs the network model and the voxel oracle from the same initial
/// densities and compares compound totals over time.
///
/// The network is extracted from `img`; node masses are the integrals of
/// `initial` over the ball regions given by [`assign_voxels`].
pub fn compare_with_network(
    img: &VolumeImage,
    initial: &GridState,
    cfg: &ComparisonConfig,
) -> Result<ComparisonReport> {
    cfg.bio.validate()?;
    let grid = VoxelGrid::new(img)?;
    if initial.len() != grid.len() {
        return Err(Error::input(format!(
            "initial state has {} voxels, volume has {} pore voxels",
            initial.len(),
            grid.len()
        )));
    }
    if initial.min_density() < 0.0 {
        return Err(Error::input("initial densities must be >= 0"));
    }
    let span = cfg.t_end - initial.time;
    let net_steps = whole_steps(span, cfg.network_dt, "horizon")?;
    let orc_steps = whole_steps(span, cfg.oracle_dt, "horizon")?;
    let net_stride = whole_steps(cfg.record_interval, cfg.network_dt, "record interval")?;
    let orc_stride = whole_steps(cfg.record_interval, cfg.oracle_dt, "record interval")?;

    let net = extract_network(img, "oracle comparison")?;
    let vol = grid.voxel_volume();
    let assignment = assign_voxels(&grid, &net);
    let sizes = region_sizes(&assignment, net.node_count());
    let k_b_density: Vec<f64> = assignment
        .iter()
        .map(|&b| cfg.bio.k_b / (sizes[b] as f64 * vol))
        .collect();

    let state0 = restrict(initial, &assignment, net.node_count(), vol);
    let solver = SolverConfig {
        dt: cfg.network_dt,
        t_end: cfg.t_end - initial.time,
        snapshot_stride: net_stride,
        ..SolverConfig::default()
    };
    let integrator = Integrator::new(&net, cfg.bio, solver)?;
    let mut net_totals = vec![agg1(&state0)];
    let mut state = SystemState::new(0.0, state0.nodes.clone());
    for k in 1..=net_steps {
        state = integrator.step(&state)?;
        if k % net_stride == 0 || k == net_steps {
            net_totals.push(agg1(&state));
        }
    }

    let oracle = VoxelOracle::with_half_saturation(grid, cfg.bio, k_b_density)?;
    let mut grid_state = initial.clone();
    let orc = oracle.run(&mut grid_state, cfg.t_end, orc_steps, orc_stride)?;
    if orc.len() != net_totals.len() {
        return Err(Error::input("record times of the two models do not line up"));
    }

    let c0: f64 = orc[0].1.iter().sum();
    let mut oracle_conservation_error: f64 = 0.0;
    let mut discrepancy = Vec::with_capacity(orc.len());
    for ((_, o), n) in orc.iter().zip(&net_totals) {
        let c: f64 = o.iter().sum();
        oracle_conservation_error = oracle_conservation_error.max(relative(c, c0));
        let num: f64 = o.iter().zip(n).map(|(a, b)| (a - b).abs()).sum();
        let den: f64 = o.iter().map(|a| a.abs()).sum();
        discrepancy.push(if num == 0.0 { 0.0 } else { num / den });
    }
    let (last_o, last_n) = (orc.last().unwrap().1, net_totals.last().unwrap());
    Ok(ComparisonReport {
        nodes: net.node_count(),
        edges: net.edge_count(),
        pore_voxels: oracle.grid().len(),
        times: orc.iter().map(|(t, _)| *t).collect(),
        network_totals: net_totals.clone(),
        oracle_totals: orc.iter().map(|(_, o)| *o).collect(),
        max_totals_discrepancy: discrepancy.iter().copied().fold(0.0, f64::max),
        totals_discrepancy: discrepancy,
        final_mb_discrepancy: relative(last_n[0], last_o[0]),
        final_dom_discrepancy: relative(last_n[1], last_o[1]),
        oracle_conservation_error,
    })
}
