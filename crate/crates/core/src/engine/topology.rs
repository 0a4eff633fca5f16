use std::collections::BTreeMap;

use thiserror::Error;

use super::config::MixSpec;
use crate::routing::Capacity;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("no mixes registered")]
    NoMixes,
    #[error("mix-{mix} has zero throughput")]
    ZeroThroughput { mix: u32 },
    #[error("mix-{mix} is pinned to layer {layer}, outside 1..={layers}")]
    LayerOutOfRange { mix: u32, layer: u32, layers: u32 },
    #[error("organization `{org}` spans layers {first} and {second}")]
    OrganizationSpansLayers { org: String, first: u32, second: u32 },
    #[error("organization `{org}` has throughput {total}, more than one layer's {per_layer}, so it would span layers")]
    OrganizationTooLarge { org: String, total: u64, per_layer: u64 },
    #[error("total throughput {total} cannot be split equally across {layers} layers")]
    UnequalThroughput { total: u64, layers: u32 },
    #[error("no placement gives every layer throughput {per_layer} with at least {min_mixes} mix(es) and organizations unsplit")]
    Infeasible { per_layer: u64, min_mixes: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopologyMix {
    pub id: u32,
    pub throughput: u64,
    pub org: String,
}

/// Ordered layers of mixes. Layer `i` (1-based) is `layers[i - 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerTopology {
    pub layers: Vec<Vec<TopologyMix>>,
    pub per_layer: u64,
}

impl LayerTopology {
    pub fn layer_count(&self) -> u32 {
        self.layers.len() as u32
    }

    pub fn capacities(&self, layer: u32) -> Vec<Capacity> {
        self.layers[layer as usize - 1]
            .iter()
            .map(|m| Capacity {
                mix: m.id,
                throughput: m.throughput,
            })
            .collect()
    }

    pub fn layer_of(&self, mix: u32) -> Option<u32> {
        self.layers
            .iter()
            .position(|l| l.iter().any(|m| m.id == mix))
            .map(|i| i as u32 + 1)
    }
}

struct Unit {
    members: Vec<usize>,
    total: u64,
    pin: Option<u32>,
}

/// Partition mixes (ids `1..=n` in registry order) into `l` layers of equal
/// total throughput, keeping each organization inside one layer.
/// Mixes with an empty organization are their own unit.
pub fn build_topology(mixes: &[MixSpec], l: u32, min_mixes: usize) -> Result<LayerTopology, TopologyError> {
    if mixes.is_empty() {
        return Err(TopologyError::NoMixes);
    }
    let mut units: Vec<Unit> = Vec::new();
    let mut by_org: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, m) in mixes.iter().enumerate() {
        let id = i as u32 + 1;
        if m.throughput == 0 {
            return Err(TopologyError::ZeroThroughput { mix: id });
        }
        if let Some(layer) = m.layer {
            if layer == 0 || layer > l {
                return Err(TopologyError::LayerOutOfRange {
                    mix: id,
                    layer,
                    layers: l,
                });
            }
        }
        let slot = if m.org.is_empty() {
            None
        } else {
            by_org.get(m.org.as_str()).copied()
        };
        match slot {
            Some(u) => {
                let unit = &mut units[u];
                match (unit.pin, m.layer) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(TopologyError::OrganizationSpansLayers {
                            org: m.org.clone(),
                            first: a.min(b),
                            second: a.max(b),
                        })
                    }
                    (None, Some(b)) => unit.pin = Some(b),
                    _ => {}
                }
                unit.members.push(i);
                unit.total += m.throughput;
            }
            None => {
                if !m.org.is_empty() {
                    by_org.insert(&m.org, units.len());
                }
                units.push(Unit {
                    members: vec![i],
                    total: m.throughput,
                    pin: m.layer,
                });
            }
        }
    }

    let total: u64 = units.iter().map(|u| u.total).sum();
    if !total.is_multiple_of(l as u64) {
        return Err(TopologyError::UnequalThroughput { total, layers: l });
    }
    let per_layer = total / l as u64;
    if let Some(big) = units.iter().find(|u| u.total > per_layer) {
        let org = &mixes[big.members[0]].org;
        if !org.is_empty() {
            return Err(TopologyError::OrganizationTooLarge {
                org: org.clone(),
                total: big.total,
                per_layer,
            });
        }
    }

    // Pinned units first, then largest first; stable on registry order.
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by_key(|&u| (units[u].pin.is_none(), std::cmp::Reverse(units[u].total)));

    let mut placement = vec![0usize; units.len()];
    let mut load = vec![0u64; l as usize];
    let mut count = vec![0usize; l as usize];
    let min = min_mixes.max(1);
    if !place(
        &units,
        &order,
        0,
        (per_layer, min),
        &mut load,
        &mut count,
        &mut placement,
    ) {
        return Err(TopologyError::Infeasible { per_layer, min_mixes });
    }

    let mut layers: Vec<Vec<TopologyMix>> = vec![Vec::new(); l as usize];
    for (u, unit) in units.iter().enumerate() {
        for &i in &unit.members {
            layers[placement[u]].push(TopologyMix {
                id: i as u32 + 1,
                throughput: mixes[i].throughput,
                org: mixes[i].org.clone(),
            });
        }
    }
    for layer in &mut layers {
        layer.sort_by_key(|m| m.id);
    }
    Ok(LayerTopology { layers, per_layer })
}

fn place(
    units: &[Unit],
    order: &[usize],
    at: usize,
    (per_layer, min): (u64, usize),
    load: &mut [u64],
    count: &mut [usize],
    placement: &mut [usize],
) -> bool {
    let Some(&u) = order.get(at) else {
        return load.iter().all(|&x| x == per_layer) && count.iter().all(|&c| c >= min);
    };
    let unit = &units[u];
    let candidates: Vec<usize> = match unit.pin {
        Some(p) => vec![p as usize - 1],
        None => (0..load.len()).collect(),
    };
    for layer in candidates {
        if load[layer] + unit.total > per_layer {
            continue;
        }
        // Empty layers are interchangeable for unpinned units.
        if unit.pin.is_none() && load[layer] == 0 && load[..layer].contains(&0) {
            continue;
        }
        load[layer] += unit.total;
        count[layer] += unit.members.len();
        placement[u] = layer;
        if place(units, order, at + 1, (per_layer, min), load, count, placement) {
            return true;
        }
        load[layer] -= unit.total;
        count[layer] -= unit.members.len();
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mix(b: u64, org: &str) -> MixSpec {
        MixSpec {
            throughput: b,
            org: org.into(),
            layer: None,
        }
    }

    #[test]
    fn nine_equal_mixes_three_layers() {
        let mixes: Vec<MixSpec> = (0..9).map(|_| mix(1, "")).collect();
        let t = build_topology(&mixes, 3, 2).unwrap();
        assert_eq!(t.per_layer, 3);
        assert!(t.layers.iter().all(|l| l.len() == 3));
        let mut ids: Vec<u32> = t.layers.iter().flatten().map(|m| m.id).collect();
        ids.sort();
        assert_eq!(ids, (1..=9).collect::<Vec<_>>());
    }

    #[test]
    fn organizations_stay_together() {
        let mixes = vec![mix(1, "a"), mix(1, "b"), mix(1, "a"), mix(1, "b")];
        let t = build_topology(&mixes, 2, 2).unwrap();
        for layer in &t.layers {
            assert_eq!(layer[0].org, layer[1].org);
        }
    }

    #[test]
    fn odd_total_is_infeasible() {
        let mixes = vec![mix(1, ""), mix(1, ""), mix(3, "")];
        assert_eq!(
            build_topology(&mixes, 2, 1),
            Err(TopologyError::UnequalThroughput { total: 5, layers: 2 })
        );
    }

    #[test]
    fn pinned_org_across_layers_is_named() {
        let mut mixes = vec![mix(1, "acme"), mix(1, "acme")];
        mixes[0].layer = Some(1);
        mixes[1].layer = Some(2);
        match build_topology(&mixes, 2, 1) {
            Err(TopologyError::OrganizationSpansLayers { org, .. }) => assert_eq!(org, "acme"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uneven_units_are_packed() {
        // 3 + 1 | 2 + 2
        let mixes = vec![mix(2, ""), mix(3, ""), mix(2, ""), mix(1, "")];
        let t = build_topology(&mixes, 2, 1).unwrap();
        assert_eq!(t.per_layer, 4);
        for l in 1..=2 {
            assert_eq!(t.capacities(l).iter().map(|c| c.throughput).sum::<u64>(), 4);
        }
        assert!(build_topology(&[mix(3, ""), mix(3, ""), mix(2, "")], 2, 1).is_err());
        match build_topology(&[mix(1, "big"), mix(1, "big"), mix(1, "big"), mix(1, "")], 2, 1) {
            Err(TopologyError::OrganizationTooLarge { org, .. }) => assert_eq!(org, "big"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn minimum_mixes_per_layer() {
        let mixes = vec![mix(2, ""), mix(1, ""), mix(1, "")];
        assert!(build_topology(&mixes, 2, 1).is_ok());
        assert!(matches!(
            build_topology(&mixes, 2, 2),
            Err(TopologyError::Infeasible { .. })
        ));
    }
}
