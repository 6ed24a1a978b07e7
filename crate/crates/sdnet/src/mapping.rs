//! Rule back-propagation: maps output-space classification rules to
//! input-space explicit and implicit rules per activation pattern, and keeps
//! the mapped regions in an ordered index keyed by serial number.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{sda_slopes, SdNetwork};
use crate::pattern::{pattern_number, ActivationPattern, DoorAssignment, PatternKey};
use crate::rules::{bounding_box, AffineMap, Bounds, LinearInequality, RuleConjunction, RuleDnf};

fn group_neurons(g: usize, group_size: usize) -> std::ops::Range<usize> {
    g * group_size..(g + 1) * group_size
}

/// Output-space rule of class k, `y_k > y_j` for every other class j, mapped
/// through the output map onto the last hidden layer's coordinates:
/// `sum_i (w_ik - w_ij) x_i + (b_k - b_j) > 0`.
pub fn map_out(output_map: &AffineMap, class: usize) -> RuleConjunction {
    assert!(class < output_map.out_dim());
    let mut out = RuleConjunction::new(output_map.source);
    for j in 0..output_map.out_dim() {
        if j == class {
            continue;
        }
        let coeffs: Vec<f64> = (0..output_map.in_dim())
            .map(|i| output_map.weights[[i, class]] - output_map.weights[[i, j]])
            .collect();
        out.push(LinearInequality::new(
            output_map.source,
            coeffs,
            output_map.biases[class] - output_map.biases[j],
        ));
    }
    out
}

/// One layer of rule back-propagation under a fixed door assignment:
/// inherited rules (active-door variables scaled by alpha, inactive-door
/// variables deleted) plus the door sign conditions, one inequality per
/// door neuron.
pub fn map_fix(
    doors: DoorAssignment,
    rules: &RuleConjunction,
    map: &AffineMap,
    group_count: usize,
    group_size: usize,
    alpha: f64,
) -> RuleConjunction {
    assert_eq!(rules.layer, map.target);
    let slopes = sda_slopes(doors, group_count, group_size, alpha);
    let mut out = RuleConjunction::new(map.source);
    for ineq in &rules.terms {
        out.push(ineq.substitute_affine(map, &slopes));
    }
    if let Some(g) = doors.active {
        for t in group_neurons(g, group_size) {
            out.push(map.neuron_positive(t));
        }
    }
    if let Some(g) = doors.inactive {
        for t in group_neurons(g, group_size) {
            out.push(map.neuron_positive(t).negated());
        }
    }
    out
}

/// Door-minimality constraints: each entry is a disjunction of inequalities
/// over the input, satisfied when at least one disjunct holds. They pin the
/// doors to the minimal qualifying group but never contribute region
/// boundaries, so adjacency search ignores them; membership tests use them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImplicitRules {
    pub disjunctions: Vec<Vec<LinearInequality>>,
}

impl ImplicitRules {
    pub fn satisfied(&self, point: &[f64]) -> bool {
        self.disjunctions
            .iter()
            .all(|d| d.iter().any(|ineq| ineq.evaluate(point)))
    }
}

/// Minimality constraints of one layer, over the previous layer's
/// coordinates. For a door at group g every earlier group (other than the
/// opposite door) must fail the door's sign condition somewhere; for an
/// absent door every group must.
fn layer_implicit_disjunctions(
    map: &AffineMap,
    doors: DoorAssignment,
    group_count: usize,
    group_size: usize,
) -> Vec<Vec<LinearInequality>> {
    let mut out = Vec::new();
    let targets = |door: Option<usize>, other: Option<usize>| -> Vec<usize> {
        match door {
            Some(g) => (0..g).filter(|&j| Some(j) != other).collect(),
            None => (0..group_count).collect(),
        }
    };
    for j in targets(doors.active, doors.inactive) {
        // Group j is not all-positive: some neuron is negative.
        out.push(
            group_neurons(j, group_size)
                .map(|t| map.neuron_positive(t).negated())
                .collect(),
        );
    }
    for j in targets(doors.inactive, doors.active) {
        // Group j is not all-negative: some neuron is positive.
        out.push(
            group_neurons(j, group_size)
                .map(|t| map.neuron_positive(t))
                .collect(),
        );
    }
    out
}

/// A classification region: one (class, pattern) cell of the input space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Region {
    pub class: usize,
    pub pattern: ActivationPattern,
    pub key: PatternKey,
    pub explicit: RuleConjunction,
    pub implicit: ImplicitRules,
    #[serde(rename = "box")]
    pub bounding_box: Bounds,
    pub populated: bool,
}

impl Region {
    /// Full symbolic membership: explicit conjunction plus every implicit
    /// existential.
    pub fn contains(&self, point: &[f64]) -> bool {
        self.explicit.satisfied(point) && self.implicit.satisfied(point)
    }

    pub fn region_key(&self) -> RegionKey {
        RegionKey { class: self.class, number: self.key }
    }
}

/// Back-propagates class k's rules through every hidden layer under the
/// given pattern, yielding the input-space region. Implicit constraints of
/// layer h are carried down through the remaining layers by the same
/// variable scaling as rule inheritance. `populated` starts false; region
/// discovery flips it when a witness point is observed.
pub fn region_rules(net: &SdNetwork, class: usize, pattern: &ActivationPattern) -> Result<Region> {
    assert_eq!(pattern.num_layers(), net.hidden_layers());
    let mut explicit = map_out(net.output_map(), class);
    let mut implicit: Vec<Vec<LinearInequality>> = Vec::new();
    for h in (1..=net.hidden_layers()).rev() {
        let map = net.hidden_map(h);
        let (gc, gs) = (net.group_count[h - 1], net.group_size[h - 1]);
        let doors = pattern.layer(h - 1);
        let slopes = sda_slopes(doors, gc, gs, net.alpha);
        for disj in &mut implicit {
            for ineq in disj.iter_mut() {
                *ineq = ineq.substitute_affine(map, &slopes);
            }
        }
        explicit = map_fix(doors, &explicit, map, gc, gs, net.alpha);
        implicit.extend(layer_implicit_disjunctions(map, doors, gc, gs));
    }
    let bbox = bounding_box(&explicit, &net.input_bounds);
    Ok(Region {
        class,
        pattern: pattern.clone(),
        key: pattern_number(pattern, &net.group_count)?,
        explicit,
        implicit: ImplicitRules { disjunctions: implicit },
        bounding_box: bbox,
        populated: false,
    })
}

// ---------------------------------------------------------------------------
// Ordered region index
// ---------------------------------------------------------------------------

/// Index key: class first, then the pattern serial number, so one class's
/// regions traverse contiguously in serial order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionKey {
    pub class: usize,
    pub number: PatternKey,
}

/// Ordered in-memory index over regions with exact lookup and in-order
/// traversal.
#[derive(Debug, Default, Clone)]
pub struct RegionIndex {
    map: BTreeMap<RegionKey, Region>,
}

impl RegionIndex {
    pub fn new() -> Self {
        RegionIndex { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, region: Region) -> Result<()> {
        let key = region.region_key();
        if self.map.contains_key(&key) {
            return Err(Error::DuplicateRegionKey { class: key.class, key: key.number.0 });
        }
        self.map.insert(key, region);
        Ok(())
    }

    pub fn get(&self, key: &RegionKey) -> Option<&Region> {
        self.map.get(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// In-order traversal, ascending by (class, serial number).
    pub fn iter(&self) -> impl Iterator<Item = (&RegionKey, &Region)> {
        self.map.iter()
    }

    pub fn into_regions(self) -> Vec<Region> {
        self.map.into_values().collect()
    }
}

/// Builds the index from mapped regions. Duplicate (class, key) pairs are a
/// caller bug and are rejected.
pub fn build_region_index(regions: Vec<Region>) -> Result<RegionIndex> {
    let mut index = RegionIndex::new();
    for r in regions {
        index.insert(r)?;
    }
    Ok(index)
}

/// On-disk rules artifact: the populated regions found for one model,
/// together with the run parameters that produced them.
#[derive(Debug, Serialize, Deserialize)]
pub struct RulesFile {
    pub version: String,
    pub seed: u64,
    pub discovery_budget: usize,
    pub model: Option<String>,
    pub data: Option<String>,
    pub regions: Vec<Region>,
}

impl RulesFile {
    pub fn new(seed: u64, discovery_budget: usize, regions: Vec<Region>) -> Self {
        RulesFile {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            discovery_budget,
            model: None,
            data: None,
            regions,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Indexes the carried regions, rejecting duplicate keys.
    pub fn index(self) -> Result<RegionIndex> {
        build_region_index(self.regions)
    }
}

// ---------------------------------------------------------------------------
// Toy ReLU reference mapper
// ---------------------------------------------------------------------------

/// Plain ReLU feedforward net, used only as the exponential-enumeration
/// reference.
#[derive(Debug, Clone)]
pub struct ReluNetwork {
    pub layers: Vec<AffineMap>,
    pub classes: usize,
}

impl ReluNetwork {
    pub fn new(layers: Vec<AffineMap>, classes: usize) -> Self {
        assert_eq!(layers.last().unwrap().out_dim(), classes);
        ReluNetwork { layers, classes }
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_dim())
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut a = ndarray::Array1::from_iter(x.iter().copied());
        for (i, map) in self.layers.iter().enumerate() {
            a = map.apply(a.view());
            if i + 1 < self.layers.len() {
                a.mapv_inplace(|v| v.max(0.0));
            }
        }
        a.to_vec()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for k in 1..logits.len() {
            if logits[k] > logits[best] {
                best = k;
            }
        }
        best
    }
}

/// Hidden neurons above this and the full 2^n enumeration is refused.
pub const RELU_ENUM_CAP: usize = 14;

/// Exhaustive input-space rule DNF of one class of a toy ReLU net: one
/// clause per combination of per-layer active sets. Exponential by nature,
/// hence the hard cap.
pub fn dnn_map_reference(net: &ReluNetwork, class: usize) -> Result<RuleDnf> {
    let widths = net.hidden_widths();
    let total: usize = widths.iter().sum();
    if total > RELU_ENUM_CAP {
        return Err(Error::ReluEnumerationCap { total, cap: RELU_ENUM_CAP });
    }
    let top = map_out(net.layers.last().unwrap(), class);
    let mut clauses = vec![top];
    for h in (0..widths.len()).rev() {
        let map = &net.layers[h];
        let w = widths[h];
        let mut next = Vec::with_capacity(clauses.len() << w);
        for clause in &clauses {
            for mask in 0..(1usize << w) {
                let scale: Vec<f64> =
                    (0..w).map(|t| f64::from(mask >> t & 1 == 1)).collect();
                let mut mapped = RuleConjunction::new(map.source);
                for ineq in &clause.terms {
                    mapped.push(ineq.substitute_affine(map, &scale));
                }
                for t in 0..w {
                    let pos = map.neuron_positive(t);
                    mapped.push(if mask >> t & 1 == 1 { pos } else { pos.negated() });
                }
                next.push(mapped);
            }
        }
        clauses = next;
    }
    let layer = clauses[0].layer;
    Ok(RuleDnf { layer, clauses })
}
