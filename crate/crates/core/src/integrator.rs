//! Time integration of the coupled network system.
//!
//! One step is a Lie splitting of backward-Euler substeps:
//!
//! 1. reaction: per node, `s⁺ = s + dt f(s⁺)` solved by damped Newton on the
//!    5×5 system;
//! 2. diffusion: `(I − dt D_n Δ̂) N⁺ = N` on the DOM masses only. Biomass,
//!    SOM, FOM and CO₂ stay in their ball.
//!
//! Both substeps write their result as `old + dt · flux(solution)`, with
//! fluxes that cancel pairwise, so total carbon is conserved to rounding
//! independently of solver tolerances. Negative masses beyond rounding are
//! reported as errors, never clamped.

use nalgebra::{Matrix5, Vector5};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::Trajectory;
use crate::diffusion::{DiffusionOperator, ImplicitDiffusion, LinearSolverOptions};
use crate::error::{Error, Result};
use crate::kinetics::{reaction_jacobian, reaction_rhs, BioParams, NodeState, SystemState, SPECIES};
use crate::network::PoreNetwork;

/// Negative masses down to `-NEGATIVITY_FLOOR * total carbon` are rounding.
pub const NEGATIVITY_FLOOR: f64 = 1e-14;

const MAX_HALVINGS: usize = 5;
const PAR_THRESHOLD: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Step, days.
    pub dt: f64,
    /// Horizon, days.
    pub t_end: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub linear_tol: f64,
    pub linear_max_iter: usize,
    /// Steps between trajectory records.
    pub snapshot_stride: usize,
    /// Keep full node states at each record.
    pub keep_snapshots: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_end: 918.0,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            linear_tol: 1e-10,
            linear_max_iter: 10_000,
            snapshot_stride: 100,
            keep_snapshots: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::input(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::input(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        for (name, tol) in [("newton_tol", self.newton_tol), ("linear_tol", self.linear_tol)] {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(Error::input(format!("{name} must lie in (0, 1), got {tol}")));
            }
        }
        if self.snapshot_stride == 0 || self.newton_max_iter == 0 || self.linear_max_iter == 0 {
            return Err(Error::input("snapshot_stride and iteration limits must be >= 1"));
        }
        Ok(())
    }

    /// Number of steps to reach `t_end`; the last step may overshoot by less than `dt`.
    pub fn step_count(&self) -> usize {
        let ratio = self.t_end / self.dt;
        let rounded = ratio.round();
        if (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
            rounded as usize
        } else {
            ratio.ceil() as usize
        }
    }
}

/// Backward-Euler reaction update for one node.
///
/// Returns `s + dt f(x)` where `x` is the Newton solution of
/// `x = s + dt f(x)`; the residual is carried as a second value on failure.
pub fn reaction_substep(
    s: &NodeState,
    p: &BioParams,
    dt: f64,
    tol: f64,
    max_iter: usize,
) -> std::result::Result<NodeState, f64> {
    let s0 = s.to_vector();
    let scale = s0.iter().map(|v| v.abs()).sum::<f64>();
    if scale == 0.0 {
        return Ok(*s);
    }
    let residual = |x: &Vector5<f64>| -> Vector5<f64> {
        let f = reaction_rhs(&NodeState::from_vector(x), p).to_vector();
        x - s0 - dt * f
    };
    let mut x = s0;
    let mut g = residual(&x);
    let mut res = g.lp_norm(1);
    let target = tol * scale;
    let round_off = 8.0 * f64::EPSILON * scale;
    let mut converged = res <= target;
    let mut iter = 0;
    while !converged {
        if iter == max_iter {
            return Err(res / scale);
        }
        iter += 1;
        let Some(delta) = newton_direction(&x, &g, p, dt) else {
            return Err(res / scale);
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            if let Some(trial) = admissible(x + lambda * delta, round_off) {
                let g_trial = residual(&trial);
                let res_trial = g_trial.lp_norm(1);
                if res_trial < res {
                    x = trial;
                    g = g_trial;
                    res = res_trial;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(res / scale);
        }
        converged = res <= target;
    }
    // one undamped polish step takes the quadratic tail down to rounding
    if res > 0.0 {
        if let Some(delta) = newton_direction(&x, &g, p, dt) {
            if let Some(trial) = admissible(x + delta, round_off) {
                if residual(&trial).lp_norm(1) <= res {
                    x = trial;
                }
            }
        }
    }
    let f = reaction_rhs(&NodeState::from_vector(&x), p).to_vector();
    Ok(NodeState::from_vector(&(s0 + dt * f)))
}

/// Rejects iterates with a clearly negative entry; entries that are negative
/// only by solver round-off are snapped to zero.
fn admissible(mut x: Vector5<f64>, round_off: f64) -> Option<Vector5<f64>> {
    for v in x.iter_mut() {
        if *v < -round_off {
            return None;
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Some(x)
}

fn newton_direction(x: &Vector5<f64>, g: &Vector5<f64>, p: &BioParams, dt: f64) -> Option<Vector5<f64>> {
    let jac = Matrix5::identity() - dt * reaction_jacobian(&NodeState::from_vector(x), p);
    jac.lu().solve(&(-g))
}

/// Receives every recorded state during [`Integrator::run`].
pub trait Observer {
    fn observe(&mut self, state: &SystemState) -> Result<()>;
}

impl<F: FnMut(&SystemState) -> Result<()>> Observer for F {
    fn observe(&mut self, state: &SystemState) -> Result<()> {
        self(state)
    }
}

/// Integrates one network with fixed parameters and step size.
#[derive(Clone, Debug)]
pub struct Integrator {
    params: BioParams,
    cfg: SolverConfig,
    diffusion: ImplicitDiffusion,
    nodes: usize,
}

impl Integrator {
    pub fn new(net: &PoreNetwork, params: BioParams, cfg: SolverConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        let op = DiffusionOperator::assemble(net)?;
        Ok(Self {
            params,
            cfg,
            diffusion: op.implicit(params.d_n, cfg.dt),
            nodes: net.node_count(),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn params(&self) -> &BioParams {
        &self.params
    }

    fn check_state(&self, state: &SystemState) -> Result<()> {
        if state.len() != self.nodes {
            return Err(Error::input(format!(
                "state has {} nodes, network has {}",
                state.len(),
                self.nodes
            )));
        }
        check_nonnegative(state, 0.0)
    }

    /// Advances `state` by one step of `dt`.
    pub fn step(&self, state: &SystemState) -> Result<SystemState> {
        let p = &self.params;
        let (dt, tol, max_iter) = (self.cfg.dt, self.cfg.newton_tol, self.cfg.newton_max_iter);
        let react = |(i, s): (usize, &NodeState)| {
            reaction_substep(s, p, dt, tol, max_iter).map_err(|residual| Error::Newton { node: i, residual })
        };
        let mut nodes: Vec<NodeState> = if state.len() >= PAR_THRESHOLD {
            state.nodes.par_iter().enumerate().map(react).collect::<Result<_>>()?
        } else {
            state.nodes.iter().enumerate().map(react).collect::<Result<_>>()?
        };

        let dom: Vec<f64> = nodes.iter().map(|s| s.n).collect();
        let opts = LinearSolverOptions {
            tol: self.cfg.linear_tol,
            max_iter: self.cfg.linear_max_iter,
        };
        let (dom, _) = self.diffusion.step(&dom, &opts)?;
        for (s, n) in nodes.iter_mut().zip(dom) {
            s.n = n;
        }
        let next = SystemState::new(state.time + dt, nodes);
        let floor = -NEGATIVITY_FLOOR * state.total_carbon();
        check_nonnegative(&next, floor)?;
        Ok(next)
    }

    /// Steps from `state0` to `t_end`, recording every `snapshot_stride`
    /// steps and at the end. Observers see each recorded state.
    pub fn run(&self, state0: &SystemState, observers: &mut [&mut dyn Observer]) -> Result<Trajectory> {
        self.check_state(state0)?;
        let steps = self.cfg.step_count();
        let stride = self.cfg.snapshot_stride;
        let mut traj = Trajectory::new();
        let mut record = |traj: &mut Trajectory, s: &SystemState| -> Result<()> {
            traj.record(s)?;
            if self.cfg.keep_snapshots {
                traj.snapshots.push(s.clone());
            }
            for obs in observers.iter_mut() {
                obs.observe(s)?;
            }
            Ok(())
        };
        record(&mut traj, state0)?;
        let mut state = state0.clone();
        for k in 1..=steps {
            state = self.step(&state).map_err(|e| Error::AtTime {
                time: state.time,
                source: Box::new(e),
            })?;
            // multiply rather than accumulate so record times stay on the step grid
            state.time = state0.time + k as f64 * self.cfg.dt;
            traj.min_component = traj.min_component.min(state.min_component());
            if k % stride == 0 || k == steps {
                record(&mut traj, &state)?;
            }
        }
        Ok(traj)
    }

    /// Final state after `steps` steps, without recording.
    pub fn advance(&self, state0: &SystemState, steps: usize) -> Result<SystemState> {
        self.check_state(state0)?;
        let mut state = state0.clone();
        for _ in 0..steps {
            state = self.step(&state)?;
        }
        state.time = state0.time + steps as f64 * self.cfg.dt;
        Ok(state)
    }
}

fn check_nonnegative(state: &SystemState, floor: f64) -> Result<()> {
    match state.first_negative(floor) {
        Some((node, k, value)) => Err(Error::Negativity {
            node,
            species: SPECIES[k],
            value,
        }),
        None => Ok(()),
    }
}

/// Observed temporal order by Richardson extrapolation.
///
/// `dts` must hold at least three steps in geometric progression; `solve`
/// returns the solution at a fixed final time for a given step. The order is
/// `ln(‖u₀ − u₁‖ / ‖u₁ − u₂‖) / ln(r)` on the three finest steps.
pub fn convergence_order<F>(dts: &[f64], mut solve: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    if dts.len() < 3 {
        return Err(Error::input(format!("need at least 3 step sizes, got {}", dts.len())));
    }
    let ratio = dts[0] / dts[1];
    if !(ratio > 1.0) || dts.windows(2).any(|w| ((w[0] / w[1]) / ratio - 1.0).abs() > 1e-9) {
        return Err(Error::input("step sizes must decrease in geometric progression"));
    }
    let k = dts.len() - 3;
    let sols = dts[k..].iter().map(|&dt| solve(dt)).collect::<Result<Vec<_>>>()?;
    let diff = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum() };
    let e01 = diff(&sols[0], &sols[1]);
    let e12 = diff(&sols[1], &sols[2]);
    Ok((e01 / e12).ln() / ratio.ln())
}

/// Observed order against a known exact solution: least-squares slope of
/// `ln(error)` versus `ln(dt)`.
pub fn convergence_order_exact<F>(dts: &[f64], exact: &[f64], mut solve: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    if dts.len() < 2 {
        return Err(Error::input("need at least 2 step sizes"));
    }
    let mut pts = Vec::with_capacity(dts.len());
    for &dt in dts {
        let u = solve(dt)?;
        let err: f64 = u.iter().zip(exact).map(|(a, b)| (a - b).abs()).sum();
        pts.push((dt.ln(), err.ln()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
