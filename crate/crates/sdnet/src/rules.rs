//! Symbolic core: linear inequalities over a layer's coordinates, affine
//! substitution, and bounding boxes.
//!
//! Every rule is kept in the single normal form `sum_i c_i * x_i + b > 0`.
//! A `<` relation is stored by negating all coefficients and the offset, so
//! no other relational forms exist anywhere in the pipeline.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

/// Identifies the coordinate space a rule's variables range over.
/// Layer 0 is the input space; hidden layer h has id h.
pub type LayerId = usize;

/// Numeric strictness slack for `>`: a point is accepted when the left-hand
/// side exceeds `-STRICTNESS_TOLERANCE`. Boundaries are measure-zero, so the
/// slack only guards against float noise flipping membership of points that
/// sit essentially on a hyperplane.
pub const STRICTNESS_TOLERANCE: f64 = 1e-9;

/// One rule `sum_i coeffs[i] * x_i + offset > 0` over layer `layer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearInequality {
    pub layer: LayerId,
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

impl LinearInequality {
    pub fn new(layer: LayerId, coeffs: Vec<f64>, offset: f64) -> Self {
        LinearInequality { layer, coeffs, offset }.canonicalized()
    }

    /// Normalizes `-0.0` to `0.0` so serialized artifacts are byte-stable.
    /// Idempotent.
    pub fn canonicalized(mut self) -> Self {
        for c in &mut self.coeffs {
            if *c == 0.0 {
                *c = 0.0;
            }
        }
        if self.offset == 0.0 {
            self.offset = 0.0;
        }
        self
    }

    /// The stored relation with `<` instead of `>`: negates coefficients and
    /// offset, which is the canonical encoding of `sum c_i x_i + b < 0`.
    pub fn negated(&self) -> Self {
        LinearInequality::new(
            self.layer,
            self.coeffs.iter().map(|c| -c).collect(),
            -self.offset,
        )
    }

    /// Left-hand side value `sum c_i x_i + b` at `point`.
    pub fn value(&self, point: &[f64]) -> f64 {
        assert_eq!(
            point.len(),
            self.coeffs.len(),
            "point dimension {} does not match rule dimension {}",
            point.len(),
            self.coeffs.len()
        );
        let mut acc = 0.0;
        for (c, x) in self.coeffs.iter().zip(point) {
            acc += c * x;
        }
        acc + self.offset
    }

    /// All coefficients exactly zero. Arises after inactive-door variable
    /// deletion; the rule degenerates to a constant.
    pub fn is_degenerate(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// Strict-inequality test with the numeric slack. Degenerate rules are
    /// decided by the exact sign of the offset (no slack): `b > 0`.
    pub fn evaluate(&self, point: &[f64]) -> bool {
        if self.is_degenerate() {
            return self.offset > 0.0;
        }
        self.value(point) > -STRICTNESS_TOLERANCE
    }

    /// Euclidean norm of the coefficient vector.
    pub fn coeff_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Rewrites a rule over `map.target` coordinates into one over
    /// `map.source` coordinates by substituting every variable `x_i` with
    /// `scale[i] * (sum_t w[t][i] * y_t + b_i)`. A zero scale deletes the
    /// variable, which is how inactive-door neurons are removed.
    pub fn substitute_affine(&self, map: &AffineMap, scale: &[f64]) -> LinearInequality {
        assert_eq!(map.target, self.layer, "map target must match rule layer");
        assert_eq!(scale.len(), self.coeffs.len(), "scale length must match rule dimension");
        assert_eq!(map.out_dim(), self.coeffs.len(), "map width must match rule dimension");
        let scaled: Array1<f64> =
            Array1::from_iter(self.coeffs.iter().zip(scale).map(|(c, s)| c * s));
        let coeffs = map.weights.dot(&scaled);
        let offset = scaled.dot(&map.biases) + self.offset;
        LinearInequality::new(map.source, coeffs.to_vec(), offset)
    }
}

/// Conjunction of inequalities over one layer. Empty means always true.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleConjunction {
    pub layer: LayerId,
    pub terms: Vec<LinearInequality>,
}

impl RuleConjunction {
    pub fn new(layer: LayerId) -> Self {
        RuleConjunction { layer, terms: Vec::new() }
    }

    pub fn push(&mut self, ineq: LinearInequality) {
        assert_eq!(ineq.layer, self.layer, "conjunctions mix layers");
        self.terms.push(ineq);
    }

    pub fn satisfied(&self, point: &[f64]) -> bool {
        self.terms.iter().all(|t| t.evaluate(point))
    }
}

/// Disjunctive normal form over one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleDnf {
    pub layer: LayerId,
    pub clauses: Vec<RuleConjunction>,
}

impl RuleDnf {
    pub fn satisfied(&self, point: &[f64]) -> bool {
        self.clauses.iter().any(|c| c.satisfied(point))
    }
}

/// Dense affine map between adjacent layers: `y = x . weights + biases`.
/// `weights[i][j]` connects source neuron i to target neuron j.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub source: LayerId,
    pub target: LayerId,
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl AffineMap {
    pub fn new(source: LayerId, target: LayerId, weights: Array2<f64>, biases: Array1<f64>) -> Self {
        assert_eq!(weights.ncols(), biases.len(), "bias width must match weight columns");
        AffineMap { source, target, weights, biases }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        x.dot(&self.weights) + &self.biases
    }

    /// The inequality `preactivation_t > 0` expressed over source coordinates.
    pub fn neuron_positive(&self, t: usize) -> LinearInequality {
        LinearInequality::new(self.source, self.weights.column(t).to_vec(), self.biases[t])
    }
}

/// Axis-aligned box, one `[lower, upper]` interval per dimension. A box where
/// some `lower > upper` certifies an empty region and is kept as evidence
/// rather than rejected at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "bound vectors must have equal length");
        Bounds { lower, upper }
    }

    /// Uniform cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Bounds { lower: vec![lo; dim], upper: vec![hi; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.iter().zip(&self.upper).any(|(l, u)| l > u)
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .enumerate()
            .all(|(i, &x)| x >= self.lower[i] && x <= self.upper[i])
    }

    pub fn volume(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    /// Euclidean length of the main diagonal.
    pub fn diagonal(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }
}

/// Tightens `input_bounds` against every inequality of `rules`: for each
/// dimension k with c_k != 0 the remaining variables are replaced by their
/// worst-case values from `input_bounds`, yielding a one-sided bound
/// `x_k > -(M_k + b) / c_k` (or the mirrored upper bound for c_k < 0).
/// Single pass; the result may be empty, which certifies the region empty.
pub fn bounding_box(rules: &RuleConjunction, input_bounds: &Bounds) -> Bounds {
    let dim = input_bounds.dim();
    let mut out = input_bounds.clone();
    for ineq in &rules.terms {
        assert_eq!(ineq.coeffs.len(), dim, "rule dimension must match bounds");
        for k in 0..dim {
            let ck = ineq.coeffs[k];
            if ck == 0.0 {
                continue;
            }
            // Largest achievable sum of the other terms over the box.
            let mut m = 0.0;
            for i in 0..dim {
                if i == k {
                    continue;
                }
                let ci = ineq.coeffs[i];
                m += if ci > 0.0 { ci * input_bounds.upper[i] } else { ci * input_bounds.lower[i] };
            }
            let bound = -(m + ineq.offset) / ck;
            if ck > 0.0 {
                if bound > out.lower[k] {
                    out.lower[k] = bound;
                }
            } else if bound < out.upper[k] {
                out.upper[k] = bound;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn evaluate_basic_orientation() {
        let ineq = LinearInequality::new(0, vec![1.0, -1.0], 0.0);
        assert!(ineq.evaluate(&[2.0, 1.0]));
        assert!(!ineq.evaluate(&[1.0, 2.0]));
    }

    #[test]
    fn evaluate_example1_class_rule() {
        // y0 > y1 maps to x1 > x0, i.e. -x0 + x1 > 0.
        let ineq = LinearInequality::new(0, vec![-1.0, 1.0], 0.0);
        assert!(ineq.evaluate(&[0.2, 0.7]));
    }

    #[test]
    fn degenerate_rule_is_decided_by_offset_sign() {
        let t = LinearInequality::new(0, vec![0.0, 0.0], 1.0);
        let f = LinearInequality::new(0, vec![0.0, 0.0], 0.0);
        assert!(t.evaluate(&[5.0, 5.0]));
        assert!(!f.evaluate(&[5.0, 5.0]));
        assert!(!f.negated().evaluate(&[5.0, 5.0]));
    }

    #[test]
    fn substitute_identity_is_noop() {
        let ineq = LinearInequality::new(1, vec![2.0, -3.0], 0.5);
        let map = AffineMap::new(0, 1, Array2::eye(2), Array1::zeros(2));
        let got = ineq.substitute_affine(&map, &[1.0, 1.0]);
        assert_eq!(got.coeffs, ineq.coeffs);
        assert_eq!(got.offset, ineq.offset);
        assert_eq!(got.layer, 0);
    }

    #[test]
    fn substitute_example1_swap() {
        // Hidden map y'0 = x1, y'1 = x0; rule y0 - y1 > 0 becomes x1 - x0 > 0.
        let map = AffineMap::new(0, 1, array![[0.0, 1.0], [1.0, 0.0]], Array1::zeros(2));
        let rule = LinearInequality::new(1, vec![1.0, -1.0], 0.0);
        let got = rule.substitute_affine(&map, &[1.0, 1.0]);
        assert_eq!(got.coeffs, vec![-1.0, 1.0]);
        assert_eq!(got.offset, 0.0);
    }

    #[test]
    fn substitution_commutes_with_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let w = Array2::from_shape_fn((3, 3), |_| rng.random_range(-2.0..2.0));
            let b = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
            let map = AffineMap::new(0, 1, w, b);
            let rule = LinearInequality::new(
                1,
                (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
                rng.random_range(-1.0..1.0),
            );
            let scale: Vec<f64> = (0..3)
                .map(|_| [0.0, 1.0, 2.0][rng.random_range(0..3)])
                .collect();
            let sub = rule.substitute_affine(&map, &scale);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y = map.apply(ArrayView1::from(&x));
            let scaled_y: Vec<f64> = y.iter().zip(&scale).map(|(v, s)| v * s).collect();
            let direct = rule.value(&scaled_y);
            let substituted = sub.value(&x);
            assert!(
                (direct - substituted).abs() <= 1e-9 * (1.0 + direct.abs()),
                "direct {direct} vs substituted {substituted}"
            );
        }
    }

    #[test]
    fn bounding_box_single_variable() {
        let mut rules = RuleConjunction::new(0);
        rules.push(LinearInequality::new(0, vec![1.0, 0.0], -1.0));
        let b = bounding_box(&rules, &Bounds::cube(2, -2.0, 2.0));
        assert_eq!(b.lower, vec![1.0, -2.0]);
        assert_eq!(b.upper, vec![2.0, 2.0]);
    }

    #[test]
    fn bounding_box_worst_case_formula() {
        // c = (2, 1, -1), b = 0.5 over [-2, 2]^3. For k = 0 the other terms
        // reach at most 1*2 + (-1)*(-2) = 4, so x0 > -(4 + 0.5)/2 = -2.25
        // which is looser than the box. For k = 2 (c < 0): others reach
        // 2*2 + 1*2 = 6, upper bound x2 < -(6 + 0.5)/(-1) = 6.5, also loose.
        let mut rules = RuleConjunction::new(0);
        rules.push(LinearInequality::new(0, vec![2.0, 1.0, -1.0], 0.5));
        let b = bounding_box(&rules, &Bounds::cube(3, -2.0, 2.0));
        assert_eq!(b.lower, vec![-2.0, -2.0, -2.0]);
        assert_eq!(b.upper, vec![2.0, 2.0, 2.0]);
        // Tighter instance: x0 alone must beat the worst case of the rest.
        let mut rules = RuleConjunction::new(0);
        rules.push(LinearInequality::new(0, vec![2.0, 1.0, -1.0], -6.5));
        let b = bounding_box(&rules, &Bounds::cube(3, -2.0, 2.0));
        assert!((b.lower[0] - 1.25).abs() < 1e-12, "got {}", b.lower[0]);
    }

    #[test]
    fn bounding_box_detects_empty() {
        let mut rules = RuleConjunction::new(0);
        rules.push(LinearInequality::new(0, vec![1.0], -10.0));
        let b = bounding_box(&rules, &Bounds::cube(1, -2.0, 2.0));
        assert!(b.is_empty());
        assert_eq!(b.volume(), 0.0);
    }

    #[test]
    fn empty_conjunction_is_always_true() {
        let rules = RuleConjunction::new(0);
        assert!(rules.satisfied(&[1.0, -1.0]));
    }

    proptest! {
        #[test]
        fn canonicalization_is_idempotent(
            coeffs in proptest::collection::vec(-10.0f64..10.0, 1..6),
            offset in -10.0f64..10.0,
        ) {
            let once = LinearInequality::new(0, coeffs, offset);
            let twice = once.clone().canonicalized();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn bounding_box_contains_region_samples(
            seed in 0u64..500,
            n_rules in 1usize..4,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = 3;
            let mut rules = RuleConjunction::new(0);
            for _ in 0..n_rules {
                rules.push(LinearInequality::new(
                    0,
                    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    rng.random_range(-0.5..0.5),
                ));
            }
            let bounds = Bounds::cube(dim, -2.0, 2.0);
            let boxed = bounding_box(&rules, &bounds);
            for _ in 0..200 {
                let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                if rules.satisfied(&p) {
                    prop_assert!(boxed.contains(&p), "satisfying point {:?} escaped box {:?}", p, boxed);
                }
            }
        }
    }
}
