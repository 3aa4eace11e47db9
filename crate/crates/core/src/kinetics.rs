//! Per-node transformation terms of the five-compound carbon model.
//!
//! Compounds, in state-vector order: microbial biomass (MB, `b`), dissolved
//! organic matter (DOM, `n`), soil organic matter (SOM, `m1`), fresh organic
//! matter (FOM, `m2`) and respired CO₂ (`c`). Masses are μgC.
//!
//! ```text
//! db/dt  = g(n) b − (η + μ) b
//! dn/dt  = ρ μ b − g(n) b + c1 m1 + c2 m2      (+ diffusion, see `diffusion`)
//! dm1/dt = −c1 m1 + (1 − ρ) μ b
//! dm2/dt = −c2 m2
//! dc/dt  = η b
//! g(n)   = K n / (K_b + n)
//! ```

use nalgebra::{Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kinetic constants and diffusion coefficients.
///
/// `k_b` is a half-saturation *mass* in the same unit as node DOM (μgC):
/// the Monod law is applied to node masses. Convert beforehand if the value
/// at hand is a concentration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BioParams {
    /// Maximal growth rate, day⁻¹.
    pub k: f64,
    /// Half-saturation constant, μgC.
    pub k_b: f64,
    /// Mortality rate, day⁻¹.
    pub mu: f64,
    /// Respiration rate, day⁻¹.
    pub eta: f64,
    /// Fraction of dead biomass recycled to DOM (the rest goes to SOM).
    pub rho: f64,
    /// SOM decomposition rate, day⁻¹.
    pub c1: f64,
    /// FOM decomposition rate, day⁻¹.
    pub c2: f64,
    /// DOM diffusion coefficient, μm²·day⁻¹.
    pub d_n: f64,
    /// MB diffusion coefficient, μm²·day⁻¹. Only the voxel oracle uses it.
    pub d_b: f64,
    /// CO₂ diffusion coefficient, μm²·day⁻¹. Only the voxel oracle uses it.
    pub d_c: f64,
}

/// Aqueous diffusivity of a small organic molecule, about 1e-9 m²/s,
/// expressed in μm²/day. Used when no DOM diffusion coefficient is supplied.
pub const DEFAULT_DOM_DIFFUSION: f64 = 8.64e7;

impl Default for BioParams {
    fn default() -> Self {
        Self::arthrobacter(DEFAULT_DOM_DIFFUSION)
    }
}

impl BioParams {
    /// Arthrobacter sp. 9R kinetics with the given DOM diffusion coefficient.
    pub fn arthrobacter(d_n: f64) -> Self {
        Self {
            k: 9.6,
            k_b: 0.001,
            mu: 0.5,
            eta: 0.2,
            rho: 0.55,
            c1: 0.01,
            c2: 0.3,
            d_n,
            d_b: 0.0,
            d_c: 0.0,
        }
    }

    /// All rates zero; only diffusion acts.
    pub fn diffusion_only(d_n: f64) -> Self {
        Self {
            k: 0.0,
            k_b: 1.0,
            mu: 0.0,
            eta: 0.0,
            rho: 0.0,
            c1: 0.0,
            c2: 0.0,
            d_n,
            d_b: 0.0,
            d_c: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("k", self.k),
            ("mu", self.mu),
            ("eta", self.eta),
            ("c1", self.c1),
            ("c2", self.c2),
            ("d_n", self.d_n),
            ("d_b", self.d_b),
            ("d_c", self.d_c),
        ];
        for (name, v) in rates {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::input(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::input(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.k_b > 0.0 && self.k_b.is_finite()) {
            return Err(Error::input(format!("k_b must be > 0, got {}", self.k_b)));
        }
        Ok(())
    }

    /// Monod growth rate `K n / (K_b + n)`, day⁻¹.
    #[inline]
    pub fn monod(&self, n: f64) -> f64 {
        debug_assert!(n >= 0.0, "monod evaluated at negative DOM {n}");
        self.k * n / (self.k_b + n)
    }

    /// Derivative of [`monod`](Self::monod) with respect to `n`.
    #[inline]
    pub fn monod_slope(&self, n: f64) -> f64 {
        let s = self.k_b + n;
        self.k * self.k_b / (s * s)
    }
}

/// Masses of the five compounds held by one node, μgC.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub b: f64,
    pub n: f64,
    pub m1: f64,
    pub m2: f64,
    pub c: f64,
}

pub const SPECIES: [&str; 5] = ["MB", "DOM", "SOM", "FOM", "CO2"];

impl NodeState {
    pub const ZERO: NodeState = NodeState {
        b: 0.0,
        n: 0.0,
        m1: 0.0,
        m2: 0.0,
        c: 0.0,
    };

    pub fn new(b: f64, n: f64, m1: f64, m2: f64, c: f64) -> Self {
        Self { b, n, m1, m2, c }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.b, self.n, self.m1, self.m2, self.c]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn to_vector(self) -> Vector5<f64> {
        Vector5::from(self.to_array())
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    /// Sum of the five masses.
    pub fn total(&self) -> f64 {
        self.b + self.n + self.m1 + self.m2 + self.c
    }

    pub fn min_component(&self) -> f64 {
        self.b.min(self.n).min(self.m1).min(self.m2).min(self.c)
    }
}

/// Per-node compound masses at one time point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    /// Days.
    pub time: f64,
    pub nodes: Vec<NodeState>,
}

impl SystemState {
    pub fn new(time: f64, nodes: Vec<NodeState>) -> Self {
        Self { time, nodes }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(0.0, vec![NodeState::ZERO; n])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sum over nodes and compounds, μgC.
    pub fn total_carbon(&self) -> f64 {
        self.nodes.iter().map(NodeState::total).sum()
    }

    /// Smallest single compound mass over all nodes.
    pub fn min_component(&self) -> f64 {
        self.nodes
            .iter()
            .map(NodeState::min_component)
            .fold(f64::INFINITY, f64::min)
    }

    /// First negative entry, as `(node, species index, value)`.
    pub fn first_negative(&self, floor: f64) -> Option<(usize, usize, f64)> {
        self.nodes.iter().enumerate().find_map(|(i, s)| {
            s.to_array()
                .iter()
                .position(|&v| v < floor)
                .map(|k| (i, k, s.to_array()[k]))
        })
    }

    pub fn dom(&self) -> Vec<f64> {
        self.nodes.iter().map(|s| s.n).collect()
    }
}

/// Reaction rates `(db, dn, dm1, dm2, dc)` in μgC·day⁻¹, diffusion excluded.
///
/// Every flux is computed once and added to one compound and subtracted from
/// another, so the five rates cancel up to the rounding of the final sum.
pub fn reaction_rhs(s: &NodeState, p: &BioParams) -> NodeState {
    let uptake = p.monod(s.n) * s.b;
    let death = p.mu * s.b;
    let respired = p.eta * s.b;
    let recycled = p.rho * death;
    let to_som = death - recycled;
    let from_som = p.c1 * s.m1;
    let from_fom = p.c2 * s.m2;
    NodeState {
        b: uptake - respired - death,
        n: recycled - uptake + from_som + from_fom,
        m1: to_som - from_som,
        m2: -from_fom,
        c: respired,
    }
}

/// Exact Jacobian of [`reaction_rhs`]; rows are rates, columns state entries,
/// both in `(b, n, m1, m2, c)` order.
pub fn reaction_jacobian(s: &NodeState, p: &BioParams) -> Matrix5<f64> {
    let g = p.monod(s.n);
    let dg = p.monod_slope(s.n) * s.b;
    #[rustfmt::skip]
    let j = Matrix5::new(
        g - p.eta - p.mu,       dg,   0.0,   0.0, 0.0,
        p.rho * p.mu - g,      -dg,  p.c1,  p.c2, 0.0,
        (1.0 - p.rho) * p.mu,  0.0, -p.c1,   0.0, 0.0,
        0.0,                   0.0,   0.0, -p.c2, 0.0,
        p.eta,                 0.0,   0.0,   0.0, 0.0,
    );
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_params() -> BioParams {
        BioParams::arthrobacter(1.0)
    }

    #[test]
    fn monod_reference_points() {
        let p = reference_params();
        assert_eq!(p.monod(0.0), 0.0);
        assert_eq!(p.monod(p.k_b), p.k / 2.0);
        assert!((p.monod(0.001) - 4.8).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_set_has_zero_rates() {
        let p = reference_params();
        for &(n, c) in &[(0.0, 0.0), (3.7, 1.2), (1e-9, 42.0)] {
            let r = reaction_rhs(&NodeState::new(0.0, n, 0.0, 0.0, c), &p);
            assert_eq!(r, NodeState::ZERO);
        }
    }

    #[test]
    fn unit_biomass_hand_evaluated() {
        let r = reaction_rhs(&NodeState::new(1.0, 0.0, 0.0, 0.0, 0.0), &reference_params());
        let expected = [-0.7, 0.275, 0.225, 0.0, 0.2];
        for (got, want) in r.to_array().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn fom_column_is_linear() {
        let j = reaction_jacobian(&NodeState::new(0.0, 0.4, 0.1, 0.2, 0.0), &reference_params());
        assert_eq!(j[(3, 3)], -0.3);
    }

    #[test]
    fn validation() {
        assert!(reference_params().validate().is_ok());
        let mut p = reference_params();
        p.rho = 1.5;
        assert!(p.validate().is_err());
        let mut p = reference_params();
        p.k_b = 0.0;
        assert!(p.validate().is_err());
        let mut p = reference_params();
        p.mu = -0.1;
        assert!(p.validate().is_err());
    }

    fn state() -> impl Strategy<Value = NodeState> {
        let mass = prop_oneof![Just(0.0), 0.0..1e-3, 0.0..10.0];
        (mass.clone(), mass.clone(), mass.clone(), mass.clone(), mass)
            .prop_map(|(b, n, m1, m2, c)| NodeState::new(b, n, m1, m2, c))
    }

    fn params() -> impl Strategy<Value = BioParams> {
        (0.0..20.0, 1e-4..1.0, 0.0..2.0, 0.0..2.0, 0.0..=1.0, 0.0..1.0, 0.0..1.0).prop_map(
            |(k, k_b, mu, eta, rho, c1, c2)| BioParams {
                k,
                k_b,
                mu,
                eta,
                rho,
                c1,
                c2,
                d_n: 0.0,
                d_b: 0.0,
                d_c: 0.0,
            },
        )
    }

    proptest! {
        #[test]
        fn rates_sum_to_zero(s in state(), p in params()) {
            let r = reaction_rhs(&s, &p).to_array();
            let scale: f64 = r.iter().map(|v| v.abs()).sum();
            let sum: f64 = r.iter().sum();
            prop_assert!(sum.abs() <= 4.0 * f64::EPSILON * scale);
        }

        #[test]
        fn quasi_positive(s in state(), p in params()) {
            let a = s.to_array();
            let r = reaction_rhs(&s, &p).to_array();
            for k in 0..5 {
                if a[k] == 0.0 {
                    prop_assert!(r[k] >= 0.0, "component {} rate {}", k, r[k]);
                }
            }
            prop_assert!(r[4] >= 0.0);
        }

        #[test]
        fn monod_monotone_and_bounded(a in 0.0..10.0f64, b in 0.0..10.0f64, p in params()) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(p.monod(lo) <= p.monod(hi));
            prop_assert!(p.monod(hi) <= p.k);
        }

        #[test]
        fn fom_rate_depends_only_on_fom(s in state(), t in state(), p in params()) {
            let mut u = t;
            u.m2 = s.m2;
            prop_assert_eq!(reaction_rhs(&s, &p).m2, reaction_rhs(&u, &p).m2);
        }

        #[test]
        fn jacobian_columns_sum_to_zero(s in state(), p in params()) {
            let j = reaction_jacobian(&s, &p);
            for col in 0..5 {
                let sum: f64 = (0..5).map(|row| j[(row, col)]).sum();
                let scale: f64 = (0..5).map(|row| j[(row, col)].abs()).sum();
                prop_assert!(sum.abs() <= 8.0 * f64::EPSILON * scale.max(1.0));
            }
        }
    }
}
