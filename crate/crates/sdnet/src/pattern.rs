//! Activation patterns (per-layer door assignments), their enumeration, and
//! the serial numbering used as the region index key.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Doors of one hidden layer: `active` is the minimal-index all-positive
/// group, `inactive` the minimal-index all-negative group. Either may be
/// absent; they never coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(Option<usize>, Option<usize>)", into = "(Option<usize>, Option<usize>)")]
pub struct DoorAssignment {
    pub active: Option<usize>,
    pub inactive: Option<usize>,
}

impl DoorAssignment {
    pub fn new(active: Option<usize>, inactive: Option<usize>) -> Self {
        if let (Some(a), Some(i)) = (active, inactive) {
            assert_ne!(a, i, "a group cannot be both doors");
        }
        DoorAssignment { active, inactive }
    }

    pub fn both_present(&self) -> bool {
        self.active.is_some() && self.inactive.is_some()
    }
}

impl From<(Option<usize>, Option<usize>)> for DoorAssignment {
    fn from(t: (Option<usize>, Option<usize>)) -> Self {
        DoorAssignment::new(t.0, t.1)
    }
}

impl From<DoorAssignment> for (Option<usize>, Option<usize>) {
    fn from(d: DoorAssignment) -> Self {
        (d.active, d.inactive)
    }
}

/// Full pattern: doors of every hidden layer, first hidden layer first.
/// Serializes as a bare list of `[active, inactive]` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActivationPattern {
    pub doors: Vec<DoorAssignment>,
}

impl ActivationPattern {
    pub fn new(doors: Vec<DoorAssignment>) -> Self {
        ActivationPattern { doors }
    }

    pub fn layer(&self, h: usize) -> DoorAssignment {
        self.doors[h]
    }

    pub fn num_layers(&self) -> usize {
        self.doors.len()
    }
}

impl std::fmt::Display for ActivationPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let fmt_door = |d: Option<usize>| match d {
            Some(g) => g.to_string(),
            None => "-".to_string(),
        };
        write!(f, "[")?;
        for (i, d) in self.doors.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "[{},{}]", fmt_door(d.active), fmt_door(d.inactive))?;
        }
        write!(f, "]")
    }
}

/// Serial number of a pattern; bijective over the pattern universe and
/// strictly increasing under `pattern_cmp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatternKey(pub u64);

/// Number of door assignments of one layer with `m` groups:
/// m(m-1) both-door patterns, m active-only, m inactive-only, 1 doorless.
pub fn layer_pattern_count(m: usize) -> u64 {
    let m = m as u64;
    m * (m - 1) + 2 * m + 1
}

/// All door assignments of one layer, in ascending serial-number order.
pub fn enumerate_layer_patterns(m: usize) -> Vec<DoorAssignment> {
    assert!(m >= 1, "a layer has at least one group");
    let mut out = Vec::with_capacity(layer_pattern_count(m) as usize);
    // Sentinel m encodes an absent door and sorts after every group index.
    for g in 0..=m {
        for gp in 0..=m {
            if g == gp && g < m {
                continue;
            }
            out.push(DoorAssignment::new(
                (g < m).then_some(g),
                (gp < m).then_some(gp),
            ));
        }
    }
    out
}

/// Sentinel encoding: an absent door behaves as group index `m`.
fn door_code(d: Option<usize>, m: usize) -> usize {
    d.unwrap_or(m)
}

/// Serial number of one layer's assignment within `0..layer_pattern_count(m)`.
/// Skipping the diagonal (g = g' is invalid below the sentinel) costs exactly
/// one slot whenever g' lands past it, hence the correction term.
fn layer_code(d: DoorAssignment, m: usize) -> u64 {
    let g = door_code(d.active, m);
    let gp = door_code(d.inactive, m);
    debug_assert!(g <= m && gp <= m && (g != gp || g == m));
    let correction = u64::from(g < m && gp > g);
    (g as u64) * (m as u64) + gp as u64 - correction
}

/// Mixed-radix serial number over all hidden layers, first layer most
/// significant. Fails rather than wraps when the pattern universe exceeds
/// u64.
pub fn pattern_number(pattern: &ActivationPattern, group_counts: &[usize]) -> Result<PatternKey> {
    assert_eq!(pattern.doors.len(), group_counts.len(), "pattern layer count mismatch");
    let overflow = || Error::PatternKeyOverflow { group_counts: group_counts.to_vec() };
    let mut number: u64 = 0;
    for (d, &m) in pattern.doors.iter().zip(group_counts) {
        number = number
            .checked_mul(layer_pattern_count(m))
            .and_then(|n| n.checked_add(layer_code(*d, m)))
            .ok_or_else(overflow)?;
    }
    Ok(PatternKey(number))
}

/// Total number of full patterns, when it fits in u64.
pub fn pattern_universe_size(group_counts: &[usize]) -> Result<u64> {
    let mut total: u64 = 1;
    for &m in group_counts {
        total = total
            .checked_mul(layer_pattern_count(m))
            .ok_or_else(|| Error::PatternKeyOverflow { group_counts: group_counts.to_vec() })?;
    }
    Ok(total)
}

/// Lexicographic order over the flattened door sequence
/// (g_1, g'_1, g_2, g'_2, ...) with absent doors as the sentinel.
pub fn pattern_cmp(a: &ActivationPattern, b: &ActivationPattern, group_counts: &[usize]) -> Ordering {
    for h in 0..group_counts.len() {
        let m = group_counts[h];
        let ord = door_code(a.doors[h].active, m)
            .cmp(&door_code(b.doors[h].active, m))
            .then_with(|| door_code(a.doors[h].inactive, m).cmp(&door_code(b.doors[h].inactive, m)));
        if ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}

/// Cartesian product of per-layer assignments, in ascending serial order.
/// Materializes the full universe; callers enumerate lazily for large nets.
pub fn enumerate_patterns(group_counts: &[usize]) -> Vec<ActivationPattern> {
    let per_layer: Vec<Vec<DoorAssignment>> =
        group_counts.iter().map(|&m| enumerate_layer_patterns(m)).collect();
    let mut out = vec![ActivationPattern::new(Vec::new())];
    for layer in &per_layer {
        let mut next = Vec::with_capacity(out.len() * layer.len());
        for p in &out {
            for &d in layer {
                let mut doors = p.doors.clone();
                doors.push(d);
                next.push(ActivationPattern::new(doors));
            }
        }
        out = next;
    }
    out
}
