//! Reproducible scenarios.
//!
//! The two skewed fixtures realise fixed edge-level class tables: a 3-class,
//! 3-edge, 13-user layout and a 5-class, 5-edge, 18-user layout. Only the
//! edge totals are fixed by those tables; the split into individual users is
//! a choice made here (mostly single-class users, plus one minority-class
//! user per edge in the 3-class layout).
//!
//! Geometry: edges sit on a circle of radius 100 m and every user is placed
//! 8–16 m from the edge it initially belongs to, so the nearest-edge baseline
//! reproduces the skewed tables exactly. Radio defaults are chosen so that at
//! unit distance scale every user-edge link satisfies the energy budget, while
//! beyond roughly 3× only the nearest edge does.

use std::f64::consts::PI;

use crate::radio::{ChannelParams, ComputeParams};
use crate::scenario::{ClassHistogram, EdgeNodeSpec, EndUserSpec, Scenario};

/// Parameters of a 14,789-parameter model with 32-bit floats.
pub const MODEL_BITS: f64 = 14_789.0 * 32.0;
pub const EDGE_RADIUS_M: f64 = 100.0;

pub fn default_radio() -> ChannelParams {
    ChannelParams {
        noise_density: 4e-21,
        antenna_constant: 1e-3,
        path_loss_exponent: 3.0,
        ber_target: 1e-4,
        max_tx_power: 0.2,
        access_delay_up: 0.01,
        access_delay_down: 0.01,
        download_rate: 1e8,
        fixed_uplink_rate: None,
    }
}

pub fn default_compute() -> ComputeParams {
    ComputeParams {
        upsilon: 2.0,
        epsilon: 0.01,
    }
}

pub const DEFAULT_PSI: f64 = 1e4;
pub const DEFAULT_CPU_HZ: f64 = 2e9;
pub const DEFAULT_ENERGY_BUDGET_J: f64 = 2e-4;
pub const DEFAULT_DEADLINE_S: f64 = 2.0;
pub const DEFAULT_EDGE_BANDWIDTH_HZ: f64 = 10e6;
pub const DEFAULT_REFERENCE_BANDWIDTH_HZ: f64 = 1e6;

fn user(id: usize, position: [f64; 2], histogram: ClassHistogram) -> EndUserSpec {
    EndUserSpec {
        id,
        position,
        histogram,
        cycles_per_sample: DEFAULT_PSI,
        cpu_frequency: DEFAULT_CPU_HZ,
        energy_budget: DEFAULT_ENERGY_BUDGET_J,
        fading_magnitude: 1.0,
    }
}

/// Builds a scenario whose user `i` of group `j` sits next to edge `j`.
pub fn clustered_scenario(num_classes: usize, groups: &[Vec<ClassHistogram>]) -> Scenario {
    let n = groups.len();
    let edge_pos = |j: usize| {
        let a = PI / 2.0 + 2.0 * PI * j as f64 / n as f64;
        [EDGE_RADIUS_M * a.cos(), EDGE_RADIUS_M * a.sin()]
    };
    let edges = (0..n)
        .map(|j| EdgeNodeSpec {
            id: j,
            position: edge_pos(j),
            bandwidth_budget: DEFAULT_EDGE_BANDWIDTH_HZ,
        })
        .collect();
    let mut users = Vec::new();
    for (j, group) in groups.iter().enumerate() {
        let [ex, ey] = edge_pos(j);
        for (s, h) in group.iter().enumerate() {
            let a = 0.3 + 2.0 * PI * s as f64 / group.len() as f64;
            let r = 8.0 + 2.0 * s as f64;
            let id = users.len();
            users.push(user(id, [ex + r * a.cos(), ey + r * a.sin()], h.clone()));
        }
    }
    Scenario {
        users,
        edges,
        num_classes,
        radio: default_radio(),
        compute: default_compute(),
        deadline: DEFAULT_DEADLINE_S,
        model_bits: MODEL_BITS,
        reference_bandwidth: DEFAULT_REFERENCE_BANDWIDTH_HZ,
    }
}

/// Edge-level class counts of the 3-class layout.
pub const TABLE2_EDGE_COUNTS: [[u64; 3]; 3] = [[1459, 25, 25], [25, 1160, 25], [25, 25, 1238]];

/// Edge-level class counts (thousands) of the 5-class layout.
pub const TABLE3_EDGE_CLASSES: [[usize; 2]; 5] = [[0, 1], [2, 3], [0, 4], [1, 2], [3, 4]];

/// Splits `total` into `parts` near-equal integers, larger parts first.
fn split(total: u64, parts: u64) -> Vec<u64> {
    (0..parts)
        .map(|p| total / parts + u64::from(p < total % parts))
        .collect()
}

/// 13 users over 3 edges: the majority class is split over four users at
/// edge 0 and three users at edges 1 and 2; each edge adds one user holding
/// its two minority classes.
pub fn table2_scenario() -> Scenario {
    let groups: Vec<Vec<ClassHistogram>> = TABLE2_EDGE_COUNTS
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let mut g: Vec<ClassHistogram> = split(row[j], if j == 0 { 4 } else { 3 })
                .into_iter()
                .map(|c| ClassHistogram::from_pairs(3, &[(j, c)]).expect("class in range"))
                .collect();
            let minority: Vec<(usize, u64)> =
                (0..3).filter(|&k| k != j).map(|k| (k, row[k])).collect();
            g.push(ClassHistogram::from_pairs(3, &minority).expect("class in range"));
            g
        })
        .collect();
    clustered_scenario(3, &groups)
}

/// 18 users over 5 edges, each edge holding two classes with
/// `10_000 / divisor` samples apiece. Edges 0–2 have four single-class users
/// (two per class); edges 3–4 have three (the first class split in two).
pub fn table3_scenario(divisor: u64) -> Scenario {
    assert!(divisor >= 1, "divisor must be positive");
    let per_class = 10_000 / divisor;
    let groups: Vec<Vec<ClassHistogram>> = TABLE3_EDGE_CLASSES
        .iter()
        .enumerate()
        .map(|(j, classes)| {
            let splits = if j < 3 { [2, 2] } else { [2, 1] };
            classes
                .iter()
                .zip(splits)
                .flat_map(|(&k, parts)| {
                    split(per_class, parts)
                        .into_iter()
                        .map(move |c| ClassHistogram::from_pairs(5, &[(k, c)]).expect("class in range"))
                })
                .collect()
        })
        .collect();
    clustered_scenario(5, &groups)
}

/// Random instance with `m` users, `n` edges and `k` classes.
///
/// Users hold one or two classes with 10–100 samples each and are scattered
/// over a 200 m square together with the edges. With `slack` set, energy and
/// bandwidth budgets are large enough that no link is ever infeasible.
pub fn random_scenario(seed: u64, m: usize, n: usize, k: usize, slack: bool) -> Scenario {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let pos = |rng: &mut rand_chacha::ChaCha8Rng| [rng.gen_range(0.0..200.0), rng.gen_range(0.0..200.0)];
    let edges = (0..n)
        .map(|j| EdgeNodeSpec {
            id: j,
            position: pos(&mut rng),
            bandwidth_budget: if slack { 1e12 } else { DEFAULT_EDGE_BANDWIDTH_HZ },
        })
        .collect();
    let users = (0..m)
        .map(|i| {
            let mut counts = vec![0u64; k];
            let first = rng.gen_range(0..k);
            counts[first] = rng.gen_range(10..=100);
            if rng.gen_bool(0.5) {
                counts[rng.gen_range(0..k)] += rng.gen_range(10..=100);
            }
            let mut u = user(i, pos(&mut rng), ClassHistogram::from_counts(counts));
            if slack {
                u.energy_budget = 1.0;
            }
            u
        })
        .collect();
    Scenario {
        users,
        edges,
        num_classes: k,
        radio: default_radio(),
        compute: default_compute(),
        deadline: DEFAULT_DEADLINE_S,
        model_bits: MODEL_BITS,
        reference_bandwidth: DEFAULT_REFERENCE_BANDWIDTH_HZ,
    }
}
