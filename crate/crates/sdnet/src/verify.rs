//! Region-based global robustness verification: discovers populated
//! classification regions, connects them into a graph by probing explicit
//! rule boundaries, estimates limiting balls by rejection sampling, and
//! flags small isolated components and protruding regions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::exec::{self, chunk_count, chunk_range, run_tasks};
use crate::mapping::{region_rules, Region, RegionKey};
use crate::net::SdNetwork;
use crate::pattern::{pattern_number, ActivationPattern};
use crate::rules::{Bounds, LinearInequality};

// Stream namespaces keep every stage's draws disjoint under one seed.
const DISCOVER_STREAM: u64 = 1 << 32;
const SAMPLE_STREAM: u64 = 2 << 32;
const BALL_STREAM: u64 = 3 << 32;
const EXTRACT_STREAM: u64 = 4 << 32;

/// User thresholds: `R` is the absolute radius below which a component is
/// small and isolated, `r` the class-volume fraction below which a region
/// protrudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyParams {
    #[serde(rename = "R")]
    pub radius_threshold: f64,
    #[serde(rename = "r")]
    pub ratio_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyBudgets {
    pub discovery_samples: usize,
    pub region_samples: usize,
    pub boundary_probes: usize,
    pub ball_samples: usize,
}

impl Default for VerifyBudgets {
    fn default() -> Self {
        VerifyBudgets {
            discovery_samples: 4096,
            region_samples: 4096,
            boundary_probes: 64,
            ball_samples: 4096,
        }
    }
}

/// Probe step across a boundary, scaled to the input domain.
pub fn probe_epsilon(bounds: &Bounds) -> f64 {
    1e-6 * bounds.diagonal()
}

fn uniform_point(rng: &mut impl rand::Rng, bounds: &Bounds) -> Vec<f64> {
    bounds
        .lower
        .iter()
        .zip(&bounds.upper)
        .map(|(&l, &u)| if l < u { rng.random_range(l..u) } else { l })
        .collect()
}

/// Forward-passes every dataset point plus `samples` uniform draws and maps
/// each distinct realized (class, pattern) cell into a populated region.
/// Regions never observed stay out; the result is sorted by region key.
pub fn discover_populated_regions(
    net: &SdNetwork,
    dataset: Option<&Dataset>,
    samples: usize,
    seed: u64,
) -> Result<Vec<Region>> {
    let mut seen: BTreeMap<RegionKey, (usize, ActivationPattern)> = BTreeMap::new();
    let mut absorb = |cells: Vec<(RegionKey, (usize, ActivationPattern))>| {
        for (k, v) in cells {
            seen.entry(k).or_insert(v);
        }
    };
    if let Some(data) = dataset {
        let chunks = chunk_count(data.len());
        let parts = run_tasks(chunks, |c| {
            let mut local = Vec::new();
            for i in chunk_range(c, data.len()) {
                let row = data.inputs.row(i);
                let (class, pattern) = net.realized(row.as_slice().unwrap());
                let key = pattern_number(&pattern, &net.group_count)?;
                local.push((RegionKey { class, number: key }, (class, pattern)));
            }
            Ok(local)
        });
        for part in parts {
            absorb(part?);
        }
    }
    let chunks = chunk_count(samples);
    let parts = run_tasks(chunks, |c| {
        let mut rng = exec::stream_rng(seed, DISCOVER_STREAM + c as u64);
        let mut local = Vec::new();
        for _ in chunk_range(c, samples) {
            let x = uniform_point(&mut rng, &net.input_bounds);
            let (class, pattern) = net.realized(&x);
            let key = pattern_number(&pattern, &net.group_count)?;
            local.push((RegionKey { class, number: key }, (class, pattern)));
        }
        Ok(local)
    });
    for part in parts {
        absorb(part?);
    }
    seen.into_iter()
        .map(|(_, (class, pattern))| {
            let mut region = region_rules(net, class, &pattern)?;
            region.populated = true;
            Ok(region)
        })
        .collect()
}

/// Rejection-sampling record of one region.
#[derive(Debug, Clone)]
pub struct RegionStats {
    pub accepted: Vec<Vec<f64>>,
    pub draws: usize,
    pub accepts: usize,
    pub volume_estimate: f64,
    pub thin: bool,
}

impl RegionStats {
    pub fn acceptance_ratio(&self) -> f64 {
        if self.draws == 0 {
            0.0
        } else {
            self.accepts as f64 / self.draws as f64
        }
    }

    /// Mean of accepted samples, the estimated center of gravity.
    pub fn center(&self) -> Option<Vec<f64>> {
        if self.thin {
            return None;
        }
        let dim = self.accepted[0].len();
        let mut c = vec![0.0; dim];
        for p in &self.accepted {
            for (acc, x) in c.iter_mut().zip(p) {
                *acc += x;
            }
        }
        for acc in &mut c {
            *acc /= self.accepts as f64;
        }
        Some(c)
    }
}

/// Uniform rejection sampling in the region's bounding box. Membership is
/// the forward pass: realized (class, pattern) equality, which enforces the
/// implicit rules for free. The volume estimate is
/// `accepts/draws * vol(box)`. Zero acceptances flag the region thin.
pub fn sample_region(
    net: &SdNetwork,
    region: &Region,
    n: usize,
    seed: u64,
    vertex: usize,
) -> RegionStats {
    assert!(n >= 1);
    assert!(region.populated, "only populated regions are sampled");
    let bbox = &region.bounding_box;
    assert!(!bbox.is_empty(), "populated region with empty box");
    let chunks = chunk_count(n);
    let parts = run_tasks(chunks, |c| {
        let stream = SAMPLE_STREAM + (vertex * chunks + c) as u64;
        let mut rng = exec::stream_rng(seed, stream);
        let mut local = Vec::new();
        for _ in chunk_range(c, n) {
            let x = uniform_point(&mut rng, bbox);
            let (class, pattern) = net.realized(&x);
            if class == region.class && pattern == region.pattern {
                debug_assert!(region.explicit.satisfied(&x));
                local.push(x);
            }
        }
        local
    });
    let accepted: Vec<Vec<f64>> = parts.into_iter().flatten().collect();
    let accepts = accepted.len();
    RegionStats {
        volume_estimate: accepts as f64 / n as f64 * bbox.volume(),
        thin: accepts == 0,
        draws: n,
        accepts,
        accepted,
    }
}

/// Same oriented hyperplane up to positive scale. Duplicated boundaries
/// arise when an inherited rule coincides with a door condition; crossing
/// one crosses the other, so the duplicate is exempt from the margin check.
fn same_hyperplane(a: &LinearInequality, b: &LinearInequality) -> bool {
    let (na, nb) = (a.coeff_norm(), b.coeff_norm());
    if na == 0.0 || nb == 0.0 {
        return false;
    }
    let coeffs_close = a
        .coeffs
        .iter()
        .zip(&b.coeffs)
        .all(|(&x, &y)| (x / na - y / nb).abs() <= 1e-9);
    coeffs_close && (a.offset / na - b.offset / nb).abs() <= 1e-9 * (1.0 + (a.offset / na).abs())
}

/// Walks from an interior point along inequality `f_idx`'s normal onto its
/// hyperplane, verifies every other boundary keeps a clear margin there,
/// then steps `epsilon` across and forward-classifies. Returns the far
/// side's realized cell, or None when the hit point is not a clean witness
/// of this single boundary.
pub fn boundary_cross(
    net: &SdNetwork,
    region: &Region,
    f_idx: usize,
    interior: &[f64],
    epsilon: f64,
) -> Option<(usize, ActivationPattern)> {
    let f = &region.explicit.terms[f_idx];
    if f.is_degenerate() {
        return None;
    }
    let norm = f.coeff_norm();
    let norm2 = norm * norm;
    let mut hit = interior.to_vec();
    // Newton steps along the normal; exact for a linear rule up to float
    // noise, refined until the hyperplane is met to within 1e-10.
    for _ in 0..8 {
        let v = f.value(&hit);
        if v.abs() / norm <= 1e-10 {
            break;
        }
        for (h, c) in hit.iter_mut().zip(&f.coeffs) {
            *h -= v / norm2 * c;
        }
    }
    if f.value(&hit).abs() / norm > 1e-10 {
        return None;
    }
    for (k, g) in region.explicit.terms.iter().enumerate() {
        if k == f_idx || g.is_degenerate() || same_hyperplane(f, g) {
            continue;
        }
        if g.value(&hit) <= 2.0 * epsilon * g.coeff_norm() {
            return None;
        }
    }
    let step: Vec<f64> = f.coeffs.iter().map(|c| epsilon * c / norm).collect();
    let near: Vec<f64> = hit.iter().zip(&step).map(|(h, s)| h + s).collect();
    let far: Vec<f64> = hit.iter().zip(&step).map(|(h, s)| h - s).collect();
    if !net.input_bounds.contains(&near) || !net.input_bounds.contains(&far) {
        return None;
    }
    let (nc, np) = net.realized(&near);
    if nc != region.class || np != region.pattern {
        return None;
    }
    let cell = net.realized(&far);
    if cell.0 == region.class && cell.1 == region.pattern {
        return None;
    }
    Some(cell)
}

/// Connected component of same-class vertices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub class: usize,
    pub vertices: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ClassificationGraph {
    pub vertices: Vec<Region>,
    pub stats: Vec<RegionStats>,
    pub edges: BTreeSet<(usize, usize)>,
    pub components: Vec<Component>,
}

/// Builds the graph over populated regions. Only explicit-rule boundaries
/// are probed; interior probe points are the accepted samples nearest each
/// boundary's hyperplane (their perpendicular feet land on the shared facet
/// even when it is a sliver), so the whole construction is a pure function
/// of the sampling stage. Edges are recorded symmetrically regardless of
/// which side witnessed the crossing.
pub fn build_graph(
    net: &SdNetwork,
    vertices: Vec<Region>,
    stats: Vec<RegionStats>,
    probes_per_boundary: usize,
) -> ClassificationGraph {
    assert_eq!(vertices.len(), stats.len());
    let index: BTreeMap<RegionKey, usize> = vertices
        .iter()
        .enumerate()
        .map(|(i, r)| (r.region_key(), i))
        .collect();
    let epsilon = probe_epsilon(&net.input_bounds);
    let witnessed = run_tasks(vertices.len(), |i| {
        let region = &vertices[i];
        let samples = &stats[i].accepted;
        let mut local = BTreeSet::new();
        let probes = probes_per_boundary.min(samples.len());
        for f_idx in 0..region.explicit.terms.len() {
            let f = &region.explicit.terms[f_idx];
            let mut nearest: Vec<(f64, usize)> = samples
                .iter()
                .enumerate()
                .map(|(s, x)| (f.value(x).abs(), s))
                .collect();
            nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, s) in &nearest[..probes] {
                let interior = &samples[s];
                let Some((class, pattern)) = boundary_cross(net, region, f_idx, interior, epsilon)
                else {
                    continue;
                };
                let Ok(number) = pattern_number(&pattern, &net.group_count) else {
                    continue;
                };
                if let Some(&j) = index.get(&RegionKey { class, number }) {
                    if j != i {
                        local.insert((i.min(j), i.max(j)));
                    }
                }
            }
        }
        local
    });
    let mut edges = BTreeSet::new();
    for local in witnessed {
        edges.extend(local);
    }
    let components = class_components(&vertices, &edges);
    ClassificationGraph { vertices, stats, edges, components }
}

/// Partitions same-class vertices by the same-class subgraph's
/// connectivity. Components are ordered by (class, smallest member).
fn class_components(vertices: &[Region], edges: &BTreeSet<(usize, usize)>) -> Vec<Component> {
    let mut uf = crate::unionfind::UnionFind::new(vertices.len());
    for &(i, j) in edges {
        if vertices[i].class == vertices[j].class {
            uf.union(i, j);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..vertices.len() {
        groups.entry(uf.find(v)).or_default().push(v);
    }
    let mut components: Vec<Component> = groups
        .into_values()
        .map(|vs| Component { class: vertices[vs[0]].class, vertices: vs })
        .collect();
    components.sort_by_key(|c| (c.class, c.vertices[0]));
    components
}

/// Ball bounding a vertex set: center at the volume-weighted combination of
/// member centers of gravity, radius the largest L-infinity distance of any
/// member sample from that center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitingBall {
    pub center: Vec<f64>,
    pub radius: f64,
    pub volume_estimate: f64,
    pub sample_count: usize,
}

/// None when every member region is thin; such components need a bigger
/// sample budget before any radius claim can be made.
pub fn limiting_ball(members: &[usize], stats: &[RegionStats]) -> Option<LimitingBall> {
    let live: Vec<usize> = members.iter().copied().filter(|&v| !stats[v].thin).collect();
    if live.is_empty() {
        return None;
    }
    let dim = stats[live[0]].accepted[0].len();
    let total_volume: f64 = live.iter().map(|&v| stats[v].volume_estimate).sum();
    let mut center = vec![0.0; dim];
    for &v in &live {
        let weight = if total_volume > 0.0 {
            stats[v].volume_estimate / total_volume
        } else {
            1.0 / live.len() as f64
        };
        for (c, x) in center.iter_mut().zip(stats[v].center().unwrap()) {
            *c += weight * x;
        }
    }
    let mut radius: f64 = 0.0;
    let mut sample_count = 0;
    for &v in &live {
        sample_count += stats[v].accepts;
        for p in &stats[v].accepted {
            let dist = p
                .iter()
                .zip(&center)
                .map(|(x, c)| (x - c).abs())
                .fold(0.0, f64::max);
            radius = radius.max(dist);
        }
    }
    Some(LimitingBall { center, radius, volume_estimate: total_volume, sample_count })
}

/// A component whose ball fits under the absolute threshold is small and
/// isolated. Strict comparison: radius equal to the threshold is not small.
pub fn detect_small_isolated(ball: &LimitingBall, radius_threshold: f64) -> bool {
    ball.radius < radius_threshold
}

/// Samples the vertex's limiting ball uniformly and measures the fraction
/// classified into the vertex's class. The region protrudes when that
/// fraction stays under `ratio_threshold` (the definition compares class
/// volume against ball volume, so the small fraction is the flag).
pub fn detect_protruding(
    net: &SdNetwork,
    class: usize,
    ball: &LimitingBall,
    ratio_threshold: f64,
    n: usize,
    seed: u64,
    vertex: usize,
) -> (bool, f64) {
    assert!(n >= 1);
    let bbox = Bounds::new(
        ball.center.iter().map(|c| c - ball.radius).collect(),
        ball.center.iter().map(|c| c + ball.radius).collect(),
    );
    let chunks = chunk_count(n);
    let hits: usize = run_tasks(chunks, |c| {
        let stream = BALL_STREAM + (vertex * chunks + c) as u64;
        let mut rng = exec::stream_rng(seed, stream);
        let mut m = 0usize;
        for _ in chunk_range(c, n) {
            let x = uniform_point(&mut rng, &bbox);
            if net.forward(&x).predicted_class() == class {
                m += 1;
            }
        }
        m
    })
    .into_iter()
    .sum();
    let fraction = hits as f64 / n as f64;
    (fraction < ratio_threshold, fraction)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    SmallIsolated,
    Protruding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub class: usize,
    pub component: usize,
    pub vertices: Vec<usize>,
    pub ball: LimitingBall,
    /// Class-volume fraction m/n for protruding findings.
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    GloballyRobust,
    NotGloballyRobust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexReport {
    pub id: usize,
    pub class: usize,
    pub pattern: ActivationPattern,
    pub key: u64,
    #[serde(rename = "box")]
    pub bounding_box: Bounds,
    pub draws: usize,
    pub accepts: usize,
    pub volume_estimate: f64,
    pub thin: bool,
    pub ball: Option<LimitingBall>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub id: usize,
    pub class: usize,
    pub vertices: Vec<usize>,
    pub ball: Option<LimitingBall>,
    pub small_isolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub version: String,
    pub params: VerifyParams,
    pub budgets: VerifyBudgets,
    pub seed: u64,
    pub vertices: Vec<VertexReport>,
    pub edges: Vec<(usize, usize)>,
    pub components: Vec<ComponentReport>,
    pub findings: Vec<Finding>,
    pub verdict: Verdict,
    /// Set when some stage ran out of budget (thin regions, unavailable
    /// balls); the verdict then only covers what was assessed.
    pub incomplete: bool,
    pub notes: Vec<String>,
    pub assumptions: Vec<String>,
}

/// Full pipeline: discover, back-map rules, sample, build the graph,
/// measure balls, detect both finding kinds. Deterministic for a given
/// seed and budgets: every random draw derives from (seed, stage, task).
pub fn verify_global(
    net: &SdNetwork,
    dataset: Option<&Dataset>,
    params: VerifyParams,
    budgets: VerifyBudgets,
    seed: u64,
) -> Result<VerificationReport> {
    verify_with_graph(net, dataset, params, budgets, seed).map(|(report, _)| report)
}

/// `verify_global` that also hands back the graph with its sample clouds,
/// for rendering and point-cloud export.
pub fn verify_with_graph(
    net: &SdNetwork,
    dataset: Option<&Dataset>,
    params: VerifyParams,
    budgets: VerifyBudgets,
    seed: u64,
) -> Result<(VerificationReport, ClassificationGraph)> {
    let regions = discover_populated_regions(net, dataset, budgets.discovery_samples, seed)?;
    let stats: Vec<RegionStats> = regions
        .iter()
        .enumerate()
        .map(|(v, r)| sample_region(net, r, budgets.region_samples, seed, v))
        .collect();
    let graph = build_graph(net, regions, stats, budgets.boundary_probes);
    let mut notes = Vec::new();
    let mut incomplete = false;
    for (v, s) in graph.stats.iter().enumerate() {
        if s.thin {
            incomplete = true;
            notes.push(format!(
                "vertex {v} is thin: 0 of {} box samples landed in the region; its ball and detections are unavailable",
                s.draws
            ));
        }
    }

    let component_balls: Vec<Option<LimitingBall>> = graph
        .components
        .iter()
        .map(|c| limiting_ball(&c.vertices, &graph.stats))
        .collect();
    let mut component_of = vec![0usize; graph.vertices.len()];
    for (cid, c) in graph.components.iter().enumerate() {
        for &v in &c.vertices {
            component_of[v] = cid;
        }
    }
    let mut findings = Vec::new();
    let mut small_isolated = vec![false; graph.components.len()];
    for (cid, c) in graph.components.iter().enumerate() {
        match &component_balls[cid] {
            Some(ball) => {
                if detect_small_isolated(ball, params.radius_threshold) {
                    small_isolated[cid] = true;
                    findings.push(Finding {
                        kind: FindingKind::SmallIsolated,
                        class: c.class,
                        component: cid,
                        vertices: c.vertices.clone(),
                        ball: ball.clone(),
                        fraction: None,
                    });
                }
            }
            None => {
                incomplete = true;
                notes.push(format!(
                    "component {cid} (class {}) has no limiting ball: every member region is thin",
                    c.class
                ));
            }
        }
    }
    let vertex_balls: Vec<Option<LimitingBall>> = (0..graph.vertices.len())
        .map(|v| limiting_ball(&[v], &graph.stats))
        .collect();
    for v in 0..graph.vertices.len() {
        if small_isolated[component_of[v]] {
            continue;
        }
        let Some(ball) = &vertex_balls[v] else {
            continue;
        };
        let (flag, fraction) = detect_protruding(
            net,
            graph.vertices[v].class,
            ball,
            params.ratio_threshold,
            budgets.ball_samples,
            seed,
            v,
        );
        if flag {
            findings.push(Finding {
                kind: FindingKind::Protruding,
                class: graph.vertices[v].class,
                component: component_of[v],
                vertices: vec![v],
                ball: ball.clone(),
                fraction: Some(fraction),
            });
        }
    }
    findings.sort_by_key(|f| (f.kind as usize, f.vertices.clone()));

    let verdict = if findings.is_empty() {
        Verdict::GloballyRobust
    } else {
        Verdict::NotGloballyRobust
    };
    let vertices = graph
        .vertices
        .iter()
        .zip(&graph.stats)
        .enumerate()
        .map(|(id, (r, s))| VertexReport {
            id,
            class: r.class,
            pattern: r.pattern.clone(),
            key: r.key.0,
            bounding_box: r.bounding_box.clone(),
            draws: s.draws,
            accepts: s.accepts,
            volume_estimate: s.volume_estimate,
            thin: s.thin,
            ball: vertex_balls[id].clone(),
        })
        .collect();
    let components = graph
        .components
        .iter()
        .enumerate()
        .map(|(id, c)| ComponentReport {
            id,
            class: c.class,
            vertices: c.vertices.clone(),
            ball: component_balls[id].clone(),
            small_isolated: small_isolated[id],
        })
        .collect();
    let report = VerificationReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        params,
        budgets,
        seed,
        vertices,
        edges: graph.edges.iter().copied().collect(),
        components,
        findings,
        verdict,
        incomplete,
        notes,
        assumptions: vec![
            "discovery is sampling based: regions never hit by the dataset or the uniform draws stay out of the graph, so a globally_robust verdict is relative to the sampled coverage".to_string(),
        ],
    };
    Ok((report, graph))
}

/// Draws up to `count` points from a flagged region by rejection sampling
/// within `max_draws` attempts. Every returned point forward-classifies to
/// the region's class. Thin regions return fewer points than asked.
pub fn extract_adversarial_examples(
    net: &SdNetwork,
    region: &Region,
    count: usize,
    max_draws: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let bbox = &region.bounding_box;
    let chunks = chunk_count(max_draws);
    let parts = run_tasks(chunks, |c| {
        let mut rng = exec::stream_rng(seed, EXTRACT_STREAM + c as u64);
        let mut local = Vec::new();
        for _ in chunk_range(c, max_draws) {
            let x = uniform_point(&mut rng, bbox);
            let (class, pattern) = net.realized(&x);
            if class == region.class && pattern == region.pattern {
                local.push(x);
            }
        }
        local
    });
    let mut out: Vec<Vec<f64>> = parts.into_iter().flatten().collect();
    out.truncate(count);
    out
}

/// Exhaustive 2D adjacency oracle for cross-checking the probe-based graph:
/// realizes every cell of a `resolution`-squared grid, then verifies each
/// 4-adjacent straddling cell pair by bisecting the connecting segment.
/// Pairs whose segment first passes through a third region (wedge corners
/// pinching below cell size) are rejected, so only genuine one-boundary
/// transitions count. Uses forward passes only, no rule machinery.
/// Returns the realized region keys in sorted order and the edge set over
/// their indices.
pub fn grid_adjacency_2d(
    net: &SdNetwork,
    resolution: usize,
) -> (Vec<RegionKey>, BTreeSet<(usize, usize)>) {
    let b = &net.input_bounds;
    assert_eq!(b.dim(), 2, "grid oracle covers 2D inputs only");
    let (dx, dy) = (
        (b.upper[0] - b.lower[0]) / resolution as f64,
        (b.upper[1] - b.lower[1]) / resolution as f64,
    );
    // Unequal sub-cell offsets keep grid rows off horizontal boundaries.
    let point = |i: usize, j: usize| {
        [
            b.lower[0] + (i as f64 + 0.5) * dx,
            b.lower[1] + (j as f64 + 0.47) * dy,
        ]
    };
    let realize = |p: &[f64]| {
        let (class, pattern) = net.realized(p);
        RegionKey { class, number: pattern_number(&pattern, &net.group_count).unwrap() }
    };
    let cell_keys: Vec<Vec<RegionKey>> = run_tasks(resolution, |i| {
        (0..resolution).map(|j| realize(&point(i, j))).collect()
    });
    let mut keys: Vec<RegionKey> = cell_keys.iter().flatten().copied().collect();
    keys.sort();
    keys.dedup();
    let key_index: BTreeMap<RegionKey, usize> =
        keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    // Direct transition iff bisection never leaves the two labels before the
    // bracket collapses. A third region between the endpoints always stays
    // inside the bracket, so it cannot be stepped over.
    let direct = |mut a: [f64; 2], mut c: [f64; 2], ka: RegionKey, kc: RegionKey| -> bool {
        for _ in 0..60 {
            let mid = [(a[0] + c[0]) / 2.0, (a[1] + c[1]) / 2.0];
            let km = realize(&mid);
            if km == ka {
                a = mid;
            } else if km == kc {
                c = mid;
            } else {
                return false;
            }
        }
        true
    };
    let rows = run_tasks(resolution, |i| {
        let mut local = BTreeSet::new();
        for j in 0..resolution {
            let here = cell_keys[i][j];
            for (ni, nj) in [(i + 1, j), (i, j + 1)] {
                if ni >= resolution || nj >= resolution {
                    continue;
                }
                let there = cell_keys[ni][nj];
                if here == there {
                    continue;
                }
                let (u, v) = (key_index[&here], key_index[&there]);
                if direct(point(i, j), point(ni, nj), here, there) {
                    local.insert((u.min(v), u.max(v)));
                }
            }
        }
        local
    });
    let mut edges = BTreeSet::new();
    for local in rows {
        edges.extend(local);
    }
    (keys, edges)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Architecture;
    use crate::rules::STRICTNESS_TOLERANCE;
    use ndarray::{Array1, Array2};
    use proptest::prelude::*;

    /// Zero weights with distinct output biases: one doorless region with a
    /// strict constant winner everywhere.
    fn const_net() -> SdNetwork {
        let layers = vec![
            crate::rules::AffineMap::new(0, 1, Array2::zeros((2, 4)), Array1::zeros(4)),
            crate::rules::AffineMap::new(1, 2, Array2::zeros((4, 2)), ndarray::array![0.3, -0.1]),
        ];
        SdNetwork::new(layers, vec![2], vec![2], 2.0, 2, Bounds::cube(2, -1.0, 1.0))
    }

    #[test]
    fn constant_net_discovers_one_region() {
        let net = const_net();
        let regions = discover_populated_regions(&net, None, 500, 3).unwrap();
        assert_eq!(regions.len(), 1);
        assert!(regions[0].populated);
        assert_eq!(regions[0].class, 0);
    }

    #[test]
    fn discovery_covers_dataset_cells_in_key_order() {
        let net = testnet::halfspace_net(&[1.0, 0.0], 0.0, Bounds::cube(2, -1.0, 1.0));
        let inputs = ndarray::array![[0.5, 0.2], [-0.5, 0.1], [0.9, -0.3]];
        let data = Dataset::new(inputs, vec![0, 1, 0], Bounds::cube(2, -1.0, 1.0), 2, "toy");
        let regions = discover_populated_regions(&net, Some(&data), 1, 3).unwrap();
        assert_eq!(regions.len(), 2);
        let keys: Vec<RegionKey> = regions.iter().map(|r| r.region_key()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn whole_box_region_accepts_every_draw() {
        let net = const_net();
        let regions = discover_populated_regions(&net, None, 100, 5).unwrap();
        let stats = sample_region(&net, &regions[0], 2000, 5, 0);
        assert_eq!(stats.accepts, 2000);
        assert!((stats.acceptance_ratio() - 1.0).abs() < 1e-12);
        assert!((stats.volume_estimate - 4.0).abs() < 1e-9);
    }

    #[test]
    fn axis_halfspace_box_tightens_to_the_region() {
        let net = testnet::halfspace_net(&[1.0, 0.0], 0.5, Bounds::cube(2, 0.0, 1.0));
        let region = region_rules(&net, 0, &testnet::upper_pattern()).map(|mut r| {
            r.populated = true;
            r
        })
        .unwrap();
        // The box clips to [0.5,1]x[0,1], so every draw is a member.
        assert_eq!(region.bounding_box, Bounds::new(vec![0.5, 0.0], vec![1.0, 1.0]));
        let n = 4096;
        let stats = sample_region(&net, &region, n, 11, 0);
        assert_eq!(stats.accepts, n);
        assert!((stats.volume_estimate - 0.5).abs() < 1e-9);
        let ball = limiting_ball(&[0], &[stats]).unwrap();
        // Analytic ball of [0.5,1]x[0,1]: center (0.75, 0.5), radius 0.5.
        assert!((ball.center[0] - 0.75).abs() < 0.02);
        assert!((ball.center[1] - 0.5).abs() < 0.02);
        assert!((ball.radius - 0.5).abs() < 0.01);
    }

    #[test]
    fn tilted_halfspace_volume_and_ball_match_analytic_values() {
        // x0 + 0.2 x1 > 0.6 in the unit box: area exactly 0.5, box loosens
        // to [0.4,1]x[0,1], so acceptance is a genuine Monte-Carlo ratio.
        let net = testnet::halfspace_net(&[1.0, 0.2], 0.6, Bounds::cube(2, 0.0, 1.0));
        let region = region_rules(&net, 0, &testnet::upper_pattern()).map(|mut r| {
            r.populated = true;
            r
        })
        .unwrap();
        assert!((region.bounding_box.volume() - 0.6).abs() < 1e-12);
        let n = 4096;
        let stats = sample_region(&net, &region, n, 11, 0);
        let p = 0.5 / 0.6;
        let sigma = (p * (1.0 - p) / n as f64).sqrt() * 0.6;
        assert!((stats.volume_estimate - 0.5).abs() < 3.0 * sigma);
        let ball = limiting_ball(&[0], &[stats]).unwrap();
        // Trapezoid centroid (56/75, 8/15); the radius is the distance to
        // the bottom edge, attained along its whole length.
        assert!((ball.center[0] - 56.0 / 75.0).abs() < 0.02);
        assert!((ball.center[1] - 8.0 / 15.0).abs() < 0.02);
        let analytic = 8.0 / 15.0;
        assert!(
            (ball.radius - analytic).abs() / analytic < 0.02,
            "radius {} vs analytic {analytic}",
            ball.radius
        );
    }

    #[test]
    fn boundary_cross_reaches_the_other_halfspace() {
        let bounds = Bounds::cube(2, -1.0, 1.0);
        let net = testnet::halfspace_net(&[1.0, 0.0], 0.0, bounds.clone());
        let mut region = region_rules(&net, 0, &testnet::upper_pattern()).unwrap();
        region.populated = true;
        let epsilon = probe_epsilon(&bounds);
        let interior = [0.5, 0.0];
        let expected = net.realized(&[-1e-4, 0.0]);
        let mut crossings = 0;
        for f_idx in 0..region.explicit.terms.len() {
            if let Some(cell) = boundary_cross(&net, &region, f_idx, &interior, epsilon) {
                assert_eq!(cell, expected);
                crossings += 1;
            }
        }
        assert!(crossings >= 1, "no boundary produced a witness");
    }

    #[test]
    fn boundary_cross_rejects_probes_near_other_boundaries() {
        // Quadrant-like region pair: crossing x1 = 0 close to the corner
        // where x0 = 0 also binds must be rejected.
        let net = random_net(77);
        let mut rng = exec::stream_rng(78, 0);
        let epsilon = probe_epsilon(&net.input_bounds);
        for _ in 0..2000 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (class, pattern) = net.realized(&x);
            let mut region = region_rules(&net, class, &pattern).unwrap();
            region.populated = true;
            for f_idx in 0..region.explicit.terms.len() {
                if let Some((fc, fp)) = boundary_cross(&net, &region, f_idx, &x, epsilon) {
                    assert!(fc != class || fp != pattern);
                }
            }
        }
    }

    fn random_net(seed: u64) -> SdNetwork {
        let mut rng = exec::stream_rng(seed, 0);
        SdNetwork::init(
            2,
            &Architecture { hidden: vec![(2, 2)] },
            2,
            2.0,
            Bounds::cube(2, -1.0, 1.0),
            &mut rng,
        )
    }

    #[test]
    fn single_region_graph_has_no_edges() {
        let net = const_net();
        let regions = discover_populated_regions(&net, None, 200, 9).unwrap();
        let stats: Vec<RegionStats> = regions
            .iter()
            .enumerate()
            .map(|(v, r)| sample_region(&net, r, 256, 9, v))
            .collect();
        let graph = build_graph(&net, regions, stats, 16);
        assert!(graph.edges.is_empty());
        assert_eq!(graph.components.len(), 1);
    }

    #[test]
    fn halfspace_pair_forms_one_edge_two_components() {
        let net = testnet::halfspace_net(&[1.0, 0.0], 0.0, Bounds::cube(2, -1.0, 1.0));
        let regions = discover_populated_regions(&net, None, 2000, 13).unwrap();
        assert_eq!(regions.len(), 2);
        let stats: Vec<RegionStats> = regions
            .iter()
            .enumerate()
            .map(|(v, r)| sample_region(&net, r, 1024, 13, v))
            .collect();
        let graph = build_graph(&net, regions, stats, 32);
        assert_eq!(graph.edges.iter().collect::<Vec<_>>(), vec![&(0, 1)]);
        // Different classes: the cross-class edge never merges components.
        assert_eq!(graph.components.len(), 2);
    }

    #[test]
    fn graph_matches_grid_oracle_on_random_net() {
        let net = random_net(101);
        let (oracle_keys, oracle_edges) = grid_adjacency_2d(&net, 200);
        // Discover with the oracle's own grid so the vertex sets coincide.
        let b = &net.input_bounds;
        let mut rows = Vec::new();
        for i in 0..200 {
            for j in 0..200 {
                rows.push([
                    b.lower[0] + (i as f64 + 0.5) * (b.upper[0] - b.lower[0]) / 200.0,
                    b.lower[1] + (j as f64 + 0.47) * (b.upper[1] - b.lower[1]) / 200.0,
                ]);
            }
        }
        let inputs = Array2::from_shape_fn((rows.len(), 2), |(r, c)| rows[r][c]);
        let labels = vec![0; rows.len()];
        let data = Dataset::new(inputs, labels, b.clone(), 2, "grid");
        let regions = discover_populated_regions(&net, Some(&data), 1, 21).unwrap();
        let keys: Vec<RegionKey> = regions.iter().map(|r| r.region_key()).collect();
        assert_eq!(keys, oracle_keys);
        let stats: Vec<RegionStats> = regions
            .iter()
            .enumerate()
            .map(|(v, r)| sample_region(&net, r, 4096, 21, v))
            .collect();
        let graph = build_graph(&net, regions, stats, 64);
        assert_eq!(graph.edges, oracle_edges);
    }

    #[test]
    fn limiting_ball_weights_centers_by_volume() {
        // Two fabricated unit squares of equal volume at x in [0,1] and
        // [2,3]: combined center sits at the midpoint.
        let square = |x0: f64, pts: usize| {
            let mut rng = exec::stream_rng(33, x0 as u64);
            let accepted: Vec<Vec<f64>> = (0..pts)
                .map(|_| vec![x0 + rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
                .collect();
            RegionStats {
                accepted,
                draws: pts,
                accepts: pts,
                volume_estimate: 1.0,
                thin: false,
            }
        };
        let stats = vec![square(0.0, 2000), square(2.0, 2000)];
        let ball = limiting_ball(&[0, 1], &stats).unwrap();
        assert!((ball.center[0] - 1.5).abs() < 0.03);
        assert!((ball.center[1] - 0.5).abs() < 0.03);
        // Furthest samples sit near x = 0 and x = 3.
        assert!((ball.radius - 1.5).abs() < 0.05);
        assert_eq!(ball.sample_count, 4000);
        assert!((ball.volume_estimate - 2.0).abs() < 1e-12);
    }

    #[test]
    fn thin_members_are_excluded_and_all_thin_is_none() {
        let live = RegionStats {
            accepted: vec![vec![0.5, 0.5]],
            draws: 10,
            accepts: 1,
            volume_estimate: 0.1,
            thin: false,
        };
        let thin = RegionStats {
            accepted: Vec::new(),
            draws: 10,
            accepts: 0,
            volume_estimate: 0.0,
            thin: true,
        };
        let stats = vec![live, thin];
        let ball = limiting_ball(&[0, 1], &stats).unwrap();
        assert_eq!(ball.center, vec![0.5, 0.5]);
        assert!(limiting_ball(&[1], &stats).is_none());
    }

    #[test]
    fn small_isolated_threshold_is_strict() {
        let ball = |radius| LimitingBall {
            center: vec![0.0, 0.0],
            radius,
            volume_estimate: 1.0,
            sample_count: 10,
        };
        assert!(detect_small_isolated(&ball(0.03), 0.04));
        assert!(!detect_small_isolated(&ball(0.04), 0.04));
        assert!(!detect_small_isolated(&ball(10.0), 0.04));
    }

    #[test]
    fn protruding_compares_class_fraction_against_ratio() {
        let net = testnet::halfspace_net(&[1.0, 0.0], 0.5, Bounds::cube(2, 0.0, 1.0));
        let ball = LimitingBall {
            center: vec![0.75, 0.5],
            radius: 0.5,
            volume_estimate: 0.5,
            sample_count: 4096,
        };
        // Ball box [0.25,1.25]x[0,1]: class 0 fills 0.75 of it.
        let (flag, fraction) = detect_protruding(&net, 0, &ball, 0.2, 8192, 7, 0);
        assert!(!flag);
        assert!((fraction - 0.75).abs() < 0.02);
        // The fraction is m/n, not n/m: 0.75 < 0.8 flags, 1/0.75 would not.
        let (flag, _) = detect_protruding(&net, 0, &ball, 0.8, 8192, 7, 0);
        assert!(flag);
    }

    #[test]
    fn generous_thresholds_verify_the_halfspace_net() {
        let net = testnet::halfspace_net(&[1.0, 0.0], 0.0, Bounds::cube(2, -1.0, 1.0));
        let params = VerifyParams { radius_threshold: 0.05, ratio_threshold: 0.2 };
        let report = verify_global(&net, None, params, VerifyBudgets::default(), 5).unwrap();
        assert_eq!(report.verdict, Verdict::GloballyRobust);
        assert!(report.findings.is_empty());
        assert!(!report.incomplete);
        assert_eq!(report.vertices.len(), 2);
        assert_eq!(report.edges, vec![(0, 1)]);
        assert_eq!(report.components.len(), 2);
    }

    #[test]
    fn reports_are_byte_deterministic() {
        let net = random_net(55);
        let params = VerifyParams { radius_threshold: 0.1, ratio_threshold: 0.2 };
        let budgets = VerifyBudgets {
            discovery_samples: 512,
            region_samples: 512,
            boundary_probes: 16,
            ball_samples: 512,
        };
        let a = verify_global(&net, None, params, budgets, 9).unwrap();
        let b = verify_global(&net, None, params, budgets, 9).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = verify_global(&net, None, params, budgets, 10).unwrap();
        assert_eq!(a.vertices.len(), c.vertices.len());
    }

    #[test]
    fn volume_estimates_cover_the_box_within_mc_error() {
        let net = random_net(60);
        let regions = discover_populated_regions(&net, None, 4096, 14).unwrap();
        let n = 4096;
        let stats: Vec<RegionStats> = regions
            .iter()
            .enumerate()
            .map(|(v, r)| sample_region(&net, r, n, 14, v))
            .collect();
        let total: f64 = stats.iter().map(|s| s.volume_estimate).sum();
        let box_volume = net.input_bounds.volume();
        // Each estimate has variance p(1-p)/n scaled by its box volume.
        let sigma: f64 = stats
            .iter()
            .zip(&regions)
            .map(|(s, r)| {
                let p = s.acceptance_ratio();
                p * (1.0 - p) / n as f64 * r.bounding_box.volume().powi(2)
            })
            .sum::<f64>()
            .sqrt();
        assert!(
            total <= box_volume * (1.0 + 3.0 * sigma / box_volume.max(1e-12)),
            "total {total} box {box_volume} sigma {sigma}"
        );
        // Estimates also cannot collapse: discovered regions partition the
        // box up to measure-zero boundaries.
        assert!(total >= box_volume - 6.0 * sigma - STRICTNESS_TOLERANCE);
    }

    #[test]
    fn extraction_returns_only_points_of_the_region() {
        let net = testnet::halfspace_net(&[1.0, 0.0], 0.5, Bounds::cube(2, 0.0, 1.0));
        let mut region = region_rules(&net, 0, &testnet::upper_pattern()).unwrap();
        region.populated = true;
        let points = extract_adversarial_examples(&net, &region, 64, 4096, 3);
        assert_eq!(points.len(), 64);
        for p in &points {
            assert_eq!(net.forward(p).predicted_class(), 0);
            assert!(region.contains(p));
        }
        // A geometrically empty cell yields nothing.
        let mut empty = region_rules(&net, 1, &testnet::upper_pattern()).unwrap();
        empty.populated = true;
        let none = extract_adversarial_examples(&net, &empty, 64, 2048, 3);
        assert!(none.is_empty());
    }

    #[test]
    fn ball_samples_stay_within_radius() {
        let net = random_net(91);
        let regions = discover_populated_regions(&net, None, 2048, 8).unwrap();
        let stats: Vec<RegionStats> = regions
            .iter()
            .enumerate()
            .map(|(v, r)| sample_region(&net, r, 1024, 8, v))
            .collect();
        for v in 0..regions.len() {
            let Some(ball) = limiting_ball(&[v], &stats) else { continue };
            for p in &stats[v].accepted {
                let d = p
                    .iter()
                    .zip(&ball.center)
                    .map(|(x, c)| (x - c).abs())
                    .fold(0.0, f64::max);
                assert!(d <= ball.radius + 1e-12);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn flagged_vertices_grow_with_thresholds(
            seed in 0u64..12,
            radius in 0.01f64..0.6,
            ratio in 0.05f64..0.6,
            radius_growth in 0.0f64..0.6,
            ratio_growth in 0.0f64..0.4,
        ) {
            let net = random_net(seed + 300);
            let budgets = VerifyBudgets {
                discovery_samples: 512,
                region_samples: 512,
                boundary_probes: 8,
                ball_samples: 256,
            };
            let flagged = |rep: &VerificationReport| -> BTreeSet<usize> {
                rep.findings.iter().flat_map(|f| f.vertices.iter().copied()).collect()
            };
            let small = verify_global(
                &net,
                None,
                VerifyParams { radius_threshold: radius, ratio_threshold: ratio },
                budgets,
                7,
            ).unwrap();
            let large = verify_global(
                &net,
                None,
                VerifyParams {
                    radius_threshold: radius + radius_growth,
                    ratio_threshold: ratio + ratio_growth,
                },
                budgets,
                7,
            ).unwrap();
            let (fs, fl) = (flagged(&small), flagged(&large));
            prop_assert!(fs.is_subset(&fl), "shrunk from {fs:?} to {fl:?}");
            if !fs.is_empty() {
                prop_assert_eq!(small.verdict, Verdict::NotGloballyRobust);
            }
        }
    }
}
