//! Randomized initial conditions.
//!
//! A scenario draws a DOM density per voxel volume, spreads the resulting
//! DOM mass over the balls (uniform concentration or random weights), and
//! places microbial biomass as a fraction of DOM in a few patches of
//! neighboring balls. All draws come from a ChaCha8 stream seeded with the
//! scenario's 64-bit seed (`rand_chacha::ChaCha8Rng::seed_from_u64`), so the
//! same seed gives the same state on every platform.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{NodeState, SystemState};
use crate::network::PoreNetwork;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomMode {
    /// Equal DOM concentration in every ball.
    Homogeneous,
    /// DOM split by normalized uniform random weights, independent of volume.
    Heterogeneous,
    /// Coin flip between the two, drawn from the scenario's stream.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub dom_mode: DomMode,
    /// DOM density bounds, μgC per voxel volume.
    pub dom_density_range: [f64; 2],
    /// Total MB as a fraction of total DOM.
    pub mb_fraction_range: [f64; 2],
    /// Inclusive bounds on the number of MB patches.
    pub patch_count_range: [usize; 2],
    /// Patch extent in graph hops around its center.
    pub patch_radius: usize,
    pub seed: u64,
    /// Per-node initial masses, μgC.
    pub initial_som: f64,
    pub initial_fom: f64,
    pub initial_co2: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            dom_mode: DomMode::Random,
            dom_density_range: [1e-7, 9e-4],
            mb_fraction_range: [0.0005, 0.0015],
            patch_count_range: [3, 10],
            patch_radius: 1,
            seed: 0,
            initial_som: 0.0,
            initial_fom: 0.0,
            initial_co2: 0.0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let [d0, d1] = self.dom_density_range;
        if !(0.0 <= d0 && d0 <= d1 && d1.is_finite()) {
            return Err(Error::input(format!(
                "bad dom_density_range {:?}",
                self.dom_density_range
            )));
        }
        let [f0, f1] = self.mb_fraction_range;
        if !(0.0 <= f0 && f0 <= f1 && f1 <= 1.0) {
            return Err(Error::input(format!(
                "bad mb_fraction_range {:?}",
                self.mb_fraction_range
            )));
        }
        let [p0, p1] = self.patch_count_range;
        if !(1 <= p0 && p0 <= p1) {
            return Err(Error::input(format!(
                "bad patch_count_range {:?}",
                self.patch_count_range
            )));
        }
        for (name, v) in [
            ("initial_som", self.initial_som),
            ("initial_fom", self.initial_fom),
            ("initial_co2", self.initial_co2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::input(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// What was drawn for one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub seed: u64,
    pub dom_mode: DomMode,
    /// μgC per voxel volume.
    pub dom_density: f64,
    pub initial_dom: f64,
    pub initial_mb: f64,
    pub mb_fraction: f64,
    /// Center node of each MB patch.
    pub patch_centers: Vec<usize>,
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

pub fn generate(net: &PoreNetwork, spec: &ScenarioSpec) -> Result<(SystemState, ScenarioSummary)> {
    spec.validate()?;
    let n = net.node_count();
    if n == 0 {
        return Err(Error::EmptyNetwork);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let volumes = net.volumes();
    let total_volume: f64 = volumes.iter().sum();
    let voxel_volume = net.meta.resolution_um.powi(3);

    let dom_mode = match spec.dom_mode {
        DomMode::Random => {
            if rng.gen_bool(0.5) {
                DomMode::Homogeneous
            } else {
                DomMode::Heterogeneous
            }
        }
        mode => mode,
    };
    let dom_density = uniform(&mut rng, spec.dom_density_range);
    let total_dom = dom_density * (total_volume / voxel_volume);

    let mut nodes = vec![NodeState::new(0.0, 0.0, spec.initial_som, spec.initial_fom, spec.initial_co2); n];
    match dom_mode {
        DomMode::Homogeneous => {
            let conc = total_dom / total_volume;
            for (s, v) in nodes.iter_mut().zip(&volumes) {
                s.n = conc * v;
            }
        }
        _ => {
            let weights: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let wsum: f64 = weights.iter().sum();
            for (s, w) in nodes.iter_mut().zip(&weights) {
                s.n = total_dom * (w / wsum);
            }
        }
    }

    let mb_fraction = uniform(&mut rng, spec.mb_fraction_range);
    let total_mb = mb_fraction * total_dom;
    let [k0, k1] = spec.patch_count_range;
    let patches = rng.gen_range(k0..=k1);
    let adj = net.adjacency();
    let per_patch = total_mb / patches as f64;
    let mut patch_centers = Vec::with_capacity(patches);
    for _ in 0..patches {
        let center = rng.gen_range(0..n);
        patch_centers.push(center);
        let members = net.neighborhood(center, spec.patch_radius, &adj);
        let vol: f64 = members.iter().map(|&i| volumes[i]).sum();
        for &i in &members {
            nodes[i].b += per_patch * (volumes[i] / vol);
        }
    }

    let initial_dom = nodes.iter().map(|s| s.n).sum();
    let initial_mb = nodes.iter().map(|s| s.b).sum();
    Ok((
        SystemState::new(0.0, nodes),
        ScenarioSummary {
            seed: spec.seed,
            dom_mode,
            dom_density,
            initial_dom,
            initial_mb,
            mb_fraction,
            patch_centers,
        },
    ))
}

/// `count` scenarios with seeds `base_seed, base_seed + 1, …`.
pub fn batch(
    net: &PoreNetwork,
    template: &ScenarioSpec,
    count: usize,
    base_seed: u64,
) -> Result<Vec<(SystemState, ScenarioSummary)>> {
    if count == 0 {
        return Err(Error::input("scenario count must be >= 1"));
    }
    (0..count as u64)
        .map(|k| {
            let spec = ScenarioSpec {
                seed: base_seed.wrapping_add(k),
                ..template.clone()
            };
            generate(net, &spec)
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "seed,dom_mode,dom_density,initial_dom,initial_mb,mb_fraction,patches";

/// Initial masses per scenario as CSV.
pub fn summary_csv(rows: &[ScenarioSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let mode = match r.dom_mode {
            DomMode::Homogeneous => "homogeneous",
            DomMode::Heterogeneous => "heterogeneous",
            DomMode::Random => "random",
        };
        let _ = writeln!(
            out,
            "{},{mode},{},{},{},{},{}",
            r.seed,
            r.dom_density,
            r.initial_dom,
            r.initial_mb,
            r.mb_fraction,
            r.patch_centers.len()
        );
    }
    out
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    time: f64,
    nodes: Vec<NodeEntry>,
}

#[derive(Serialize, Deserialize)]
struct NodeEntry {
    id: usize,
    #[serde(flatten)]
    masses: NodeState,
}

/// `{"time": t, "nodes": [{"id", "b", "n", "m1", "m2", "c"}, …]}`.
pub fn export_state(state: &SystemState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = StateFile {
        time: state.time,
        nodes: state
            .nodes
            .iter()
            .enumerate()
            .map(|(id, &masses)| NodeEntry { id, masses })
            .collect(),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn import_state(path: impl AsRef<Path>) -> Result<SystemState> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: StateFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let mut nodes = vec![None; file.nodes.len()];
    for e in file.nodes {
        match nodes.get_mut(e.id) {
            Some(slot @ None) => *slot = Some(e.masses),
            _ => return Err(Error::input(format!("bad or duplicate node id {} in state", e.id))),
        }
    }
    let nodes = nodes.into_iter().map(|s| s.unwrap()).collect();
    Ok(SystemState::new(file.time, nodes))
}
