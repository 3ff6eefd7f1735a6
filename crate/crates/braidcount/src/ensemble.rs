//! Random sparse braid construction: reproducible hash-based edge sampling
//! and the layer-sizing plan that matches register budgets to per-digit
//! entropies.
//!
//! Every edge is a pure function of `(seed, layer, node id, edge slot)`, so a
//! topology is reproducible byte for byte from its parameters, and new input
//! columns can be appended without re-randomizing existing links.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::braid::{BraidError, BraidTopology, EnsembleMeta, LayerMatrix};

/// Horizon below which a digit entropy is treated as zero.
pub const DIGIT_ENTROPY_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("invalid ensemble parameters: {0}")]
    InvalidParams(String),
    #[error("digit entropy list is too short to reach the layer-count stopping rule")]
    InsufficientDigitList,
    #[error(transparent)]
    Braid(#[from] BraidError),
}

/// Parameters of the sparse layered ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    /// Register capacity; decoding paths prefer a prime.
    pub q: u64,
    /// Edges per node in the sampled layers.
    pub k: usize,
    /// Slack factor in (0, 1) controlling layer shrinkage.
    pub delta: f64,
    /// Typicality exponent for the set-size bound, in (1 - gamma/2, 1).
    pub beta: f64,
    /// Typicality exponent for the divergence radius, in (0, 1).
    pub gamma: f64,
    /// Sizing constant multiplying the n^beta slack term.
    pub a_q: f64,
    pub seed: u64,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        EnsembleParams {
            q: 2,
            k: 3,
            delta: 0.1,
            beta: 7.0 / 8.0,
            gamma: 0.5,
            a_q: 1.0,
            seed: 0,
        }
    }
}

impl EnsembleParams {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.q < 2 {
            return Err(PlanError::InvalidParams(format!("q must be >= 2, got {}", self.q)));
        }
        if self.k < 2 {
            return Err(PlanError::InvalidParams(format!("k must be >= 2, got {}", self.k)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(PlanError::InvalidParams(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(PlanError::InvalidParams(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        let lo = 1.0 - self.gamma / 2.0;
        if !(self.beta > lo && self.beta < 1.0) {
            return Err(PlanError::InvalidParams(format!(
                "beta must lie in ({lo}, 1), got {}",
                self.beta
            )));
        }
        if !(self.a_q > 0.0) {
            return Err(PlanError::InvalidParams(format!(
                "a_q must be positive, got {}",
                self.a_q
            )));
        }
        Ok(())
    }

    /// Decoder-side analyses assume the column weight is not a multiple of q.
    pub fn k_multiple_of_q(&self) -> bool {
        self.k as u64 % self.q == 0
    }
}

/// Sizes and stage counts for a planned braid: `m[0..l0]` hash-sampled layers
/// followed by `l1` identity stages of size `m_star`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub m: Vec<usize>,
    pub l0: usize,
    pub l1: usize,
    pub m_star: usize,
    /// Reported upper bound on the achievable rate, in bits per flow.
    pub rate_bound_bits: f64,
    /// Whether the shrink-threshold stopping rule fired, or the plan stopped
    /// at the digit-entropy horizon instead.
    pub threshold_met: bool,
}

impl LayerPlan {
    pub fn total_registers(&self) -> usize {
        self.m.iter().sum::<usize>() + self.l1 * self.m_star
    }

    pub fn all_layer_sizes(&self) -> Vec<usize> {
        let mut sizes = self.m.clone();
        sizes.extend(std::iter::repeat(self.m_star).take(self.l1));
        sizes
    }

    /// Rescales every layer size by `factor` (at least one register each).
    /// Identity stages stay square because they all track `m_star`.
    pub fn scaled(&self, factor: f64) -> LayerPlan {
        let scale = |m: usize| ((m as f64 * factor).ceil() as usize).max(1);
        LayerPlan {
            m: self.m.iter().map(|&m| scale(m)).collect(),
            l0: self.l0,
            l1: self.l1,
            m_star: scale(self.m_star),
            rate_bound_bits: self.rate_bound_bits,
            threshold_met: self.threshold_met,
        }
    }
}

/// Lower-bound layer size for stage `l` (1-based), given the entropy of digit
/// `l-1`. The inner ceiling is applied first, then the (1+delta) headroom is
/// rounded up again so sizes stay integral and err large.
fn m_under(n: usize, h_prev: f64, params: &EnsembleParams) -> usize {
    let inner = (n as f64 * h_prev * (1.0 + params.delta)
        + params.a_q * (n as f64).powf(params.beta))
    .ceil();
    ((1.0 + params.delta) * inner).ceil() as usize
}

/// Chooses stage counts and sizes for `n` flows with per-digit entropies
/// `digit_entropies` (q-ary units, entry `l` for digit `l`).
///
/// The sampled-stage count is the smallest `L0` from which every further
/// lower-bound size fits under `n / (ln n)^2`. At desk scales the `n^beta`
/// slack term can keep that rule out of reach for any stage count; the plan
/// then stops at the digit-entropy horizon and reports `threshold_met: false`.
pub fn plan_layers(
    n: usize,
    digit_entropies: &[f64],
    params: &EnsembleParams,
) -> Result<LayerPlan, PlanError> {
    params.validate()?;
    if n < 2 {
        return Err(PlanError::InvalidParams(format!("n must be >= 2, got {n}")));
    }
    for (l, &h) in digit_entropies.iter().enumerate() {
        if !(0.0..=1.0 + 1e-12).contains(&h) {
            return Err(PlanError::InvalidParams(format!(
                "digit entropy h[{l}] = {h} outside [0, 1]"
            )));
        }
    }

    // Effective horizon: entropies below the floor are treated as zero.
    let horizon = digit_entropies
        .iter()
        .position(|&h| h < DIGIT_ENTROPY_FLOOR)
        .unwrap_or(digit_entropies.len());
    let reached_floor = horizon < digit_entropies.len();

    let h_at = |l: usize| if l < horizon { digit_entropies[l] } else { 0.0 };
    let nf = n as f64;
    let threshold = nf / nf.ln().powi(2);
    // Stage sizes use h_{l-1}; one extra stage covers the all-zero tail.
    let max_stage = horizon + 1;
    let m_under_at: Vec<usize> = (1..=max_stage).map(|l| m_under(n, h_at(l - 1), params)).collect();
    let m_inf = m_under(n, 0.0, params);

    let (l0, threshold_met) = if m_inf as f64 <= threshold {
        // Scan for the first stage from which all lower bounds fit under the
        // threshold (the all-zero tail already does).
        let mut suffix_ok = vec![true; max_stage + 2];
        for l in (1..=max_stage).rev() {
            suffix_ok[l] = suffix_ok[l + 1] && (m_under_at[l - 1] as f64) <= threshold;
        }
        let l0 = (1..=max_stage + 1).find(|&l| suffix_ok[l]).unwrap();
        if l0 > max_stage && !reached_floor {
            // The rule would only fire beyond the supplied list, and the list
            // never decayed below the floor, so stages out there are unsized.
            return Err(PlanError::InsufficientDigitList);
        }
        (l0.min(max_stage), true)
    } else {
        // The slack floor alone exceeds the threshold at this n, so the rule
        // can never fire; stop where the digits stop carrying information.
        if !reached_floor {
            return Err(PlanError::InsufficientDigitList);
        }
        (horizon.max(1), false)
    };

    let mut m = Vec::with_capacity(l0);
    let mut prev = n;
    for l in 1..=l0 {
        let lower = m_under_at[l - 1];
        let shrink = (params.delta * prev as f64).ceil() as usize;
        let ml = lower.max(shrink).max(1);
        m.push(ml);
        prev = ml;
    }

    let l1 = nf.ln().powf(1.5).ceil() as usize;
    let m_star = *m.last().unwrap();
    let sum_h: f64 = (0..horizon).map(h_at).sum();
    let rate_bound_bits =
        (1.0 + params.delta) / (1.0 - params.delta) * sum_h * (params.q as f64).log2();

    Ok(LayerPlan {
        m,
        l0,
        l1,
        m_star,
        rate_bound_bits,
        threshold_met,
    })
}

/// 64-bit finalizer with full avalanche (the splitmix64 mixing function).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// The k descendants of node `id` in target layer `layer`, as a pure function
/// of `(seed, layer, id, slot)`. Stable across runs and platforms; the modulo
/// reduction biases bucket probabilities by less than 2^-40 at desk sizes.
pub fn hash_edges(id: u64, layer: u32, k: usize, m_next: usize, seed: u64) -> Vec<u32> {
    assert!(m_next >= 1, "target layer must be non-empty");
    let base = mix64(mix64(seed) ^ mix64(layer as u64) ^ id.wrapping_mul(0x9e3779b97f4a7c15));
    (0..k)
        .map(|slot| (mix64(base ^ slot as u64) % m_next as u64) as u32)
        .collect()
}

/// Samples one layer of the ensemble: each of the `m_prev` columns picks `k`
/// iid uniform targets in the next layer, with repetition.
pub fn sample_layer(m_prev: usize, m_next: usize, k: usize, seed: u64, layer: u32) -> LayerMatrix {
    let cols = (0..m_prev as u64)
        .map(|id| hash_edges(id, layer, k, m_next, seed))
        .collect();
    LayerMatrix::from_columns(m_next, cols).expect("hash indices are reduced mod m_next")
}

/// Samples the first layer keyed by arbitrary per-flow tokens rather than
/// column indices, so register links survive renumbering of the flow set.
pub fn sample_input_layer(tokens: &[u64], m_next: usize, k: usize, seed: u64) -> LayerMatrix {
    let cols = tokens
        .iter()
        .map(|&t| hash_edges(t, 1, k, m_next, seed))
        .collect();
    LayerMatrix::from_columns(m_next, cols).expect("hash indices are reduced mod m_next")
}

/// Builds the planned topology: `l0` hash-sampled layers followed by `l1`
/// identity stages of size `m_star`. Flow columns are keyed by their index.
pub fn build_topology(
    n: usize,
    plan: &LayerPlan,
    params: &EnsembleParams,
) -> Result<BraidTopology, PlanError> {
    params.validate()?;
    let mut sizes = plan.m.clone();
    sizes.extend(std::iter::repeat(plan.m_star).take(plan.l1));
    Ok(rebuild_topology(
        params.q, n, &sizes, params.seed, params.k, plan.l0, None,
    )?)
}

/// As [`build_topology`], with explicit first-layer tokens (one per flow).
/// The tokens are retained on the topology so serialized forms stay
/// reconstructible and flows stay addressable by token.
pub fn build_topology_with_tokens(
    tokens: &[u64],
    plan: &LayerPlan,
    params: &EnsembleParams,
) -> Result<BraidTopology, PlanError> {
    params.validate()?;
    let n = tokens.len();
    let mut layers = Vec::with_capacity(plan.l0 + plan.l1);
    for (idx, &size) in plan.m.iter().enumerate() {
        let layer_no = (idx + 1) as u32;
        if idx == 0 {
            layers.push(sample_input_layer(tokens, size, params.k, params.seed));
        } else {
            layers.push(sample_layer(plan.m[idx - 1], size, params.k, params.seed, layer_no));
        }
    }
    for _ in 0..plan.l1 {
        layers.push(LayerMatrix::identity(plan.m_star));
    }
    let topo = BraidTopology::new(params.q, n, layers)?
        .with_meta(EnsembleMeta {
            seed: params.seed,
            k: params.k,
            l0: plan.l0,
        })
        .with_tokens(tokens.to_vec());
    Ok(topo)
}

/// Reconstructs a topology from serialized `(seed, k, l0)` metadata, for
/// topology files that omit explicit edges. The first layer is keyed by the
/// stored tokens when present, by column index otherwise.
pub fn rebuild_topology(
    q: u64,
    n: usize,
    layer_sizes: &[usize],
    seed: u64,
    k: usize,
    l0: usize,
    tokens: Option<&[u64]>,
) -> Result<BraidTopology, BraidError> {
    let mut layers = Vec::with_capacity(layer_sizes.len());
    let mut prev = n;
    for (idx, &size) in layer_sizes.iter().enumerate() {
        if idx < l0 {
            match (idx, tokens) {
                (0, Some(tokens)) => layers.push(sample_input_layer(tokens, size, k, seed)),
                _ => layers.push(sample_layer(prev, size, k, seed, (idx + 1) as u32)),
            }
        } else {
            layers.push(LayerMatrix::identity(size));
        }
        prev = size;
    }
    let mut topo = BraidTopology::new(q, n, layers)?.with_meta(EnsembleMeta { seed, k, l0 });
    if let Some(tokens) = tokens {
        topo = topo.with_tokens(tokens.to_vec());
    }
    Ok(topo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(q: u64, k: usize, a_q: f64, seed: u64) -> EnsembleParams {
        EnsembleParams {
            q,
            k,
            a_q,
            seed,
            ..EnsembleParams::default()
        }
    }

    #[test]
    fn hash_is_deterministic_and_total() {
        let a = hash_edges(42, 3, 5, 100, 7);
        let b = hash_edges(42, 3, 5, 100, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert_eq!(hash_edges(9, 1, 3, 1, 0), vec![0, 0, 0]);
    }

    #[test]
    fn hash_differs_across_seeds() {
        let mut differs = false;
        for id in 0..40u64 {
            if hash_edges(id, 1, 3, 64, 1) != hash_edges(id, 1, 3, 64, 2) {
                differs = true;
                break;
            }
        }
        assert!(differs, "two seeds produced identical edge sets on 120 draws");
    }

    #[test]
    fn hash_uniformity_chi_square() {
        // 1e5 draws into 64 buckets; reject at significance 0.001.
        let buckets = 64usize;
        let draws = 100_000usize;
        let mut counts = vec![0u64; buckets];
        let mut drawn = 0usize;
        let mut id = 0u64;
        while drawn < draws {
            for idx in hash_edges(id, 1, 4, buckets, 0xfeed) {
                if drawn == draws {
                    break;
                }
                counts[idx as usize] += 1;
                drawn += 1;
            }
            id += 1;
        }
        let expected = draws as f64 / buckets as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // Wilson-Hilferty approximation of the chi-square 0.999 quantile.
        let df = (buckets - 1) as f64;
        let z = 3.090_232_306_167_813_f64;
        let crit = df * (1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt()).powi(3);
        assert!(chi2 < crit, "chi2 = {chi2} exceeds critical value {crit}");
    }

    #[test]
    fn sample_layer_columns_have_weight_k() {
        let h = sample_layer(50, 20, 3, 99, 1);
        assert_eq!(h.rows(), 20);
        assert_eq!(h.cols(), 50);
        assert!(h.column_weights().iter().all(|&w| w == 3));
        let h2 = sample_layer(50, 20, 3, 99, 1);
        assert_eq!(h, h2);
    }

    #[test]
    fn sample_layer_k1_single_target() {
        let h = sample_layer(7, 1, 1, 0, 1);
        for j in 0..7 {
            assert_eq!(h.column(j), &[0]);
        }
    }

    #[test]
    fn plan_zero_entropy_list() {
        // With h identically zero the lower bound is flat; a small slack
        // constant keeps it under the threshold so a single stage suffices.
        // The stage size still respects the delta * m_0 shrink floor.
        let p = params(2, 3, 0.001, 0);
        let n = 10_000;
        let plan = plan_layers(n, &[0.0, 0.0, 0.0], &p).unwrap();
        assert_eq!(plan.l0, 1);
        assert!(plan.threshold_met);
        let expect = m_under(n, 0.0, &p).max((p.delta * n as f64).ceil() as usize);
        assert_eq!(plan.m, vec![expect]);
        assert_eq!(plan.m, vec![1000]);
    }

    #[test]
    fn plan_recursion_matches_independent_recomputation() {
        // Geometric(1/2) digit entropies at q=2, recomputed here from the
        // closed form p_l(1) = rho^(2^l) / (1 + rho^(2^l)).
        let mut h = Vec::new();
        for l in 0..12u32 {
            let p1 = 0.5f64.powi(2i32.pow(l)) / (1.0 + 0.5f64.powi(2i32.pow(l)));
            let ent = if p1 == 0.0 {
                0.0
            } else {
                -(p1 * p1.log2() + (1.0 - p1) * (1.0 - p1).log2())
            };
            h.push(ent);
        }
        let p = params(2, 3, 1.0, 0);
        let n = 10_000usize;
        let plan = plan_layers(n, &h, &p).unwrap();

        // Independent spreadsheet-style evaluation of the two-line recursion.
        let nf = n as f64;
        let slack = 1.0 * nf.powf(7.0 / 8.0);
        let horizon = h.iter().position(|&e| e < 1e-9).unwrap();
        assert!(!plan.threshold_met); // A(q)=1 keeps the floor above n/(ln n)^2
        assert_eq!(plan.l0, horizon);
        let mut expect = Vec::new();
        let mut prev = nf;
        for l in 1..=horizon {
            let lower = (1.1 * (nf * h[l - 1] * 1.1 + slack).ceil()).ceil();
            let ml = lower.max((0.1 * prev).ceil());
            expect.push(ml as usize);
            prev = ml;
        }
        assert_eq!(plan.m, expect);
        assert_eq!(plan.m_star, *expect.last().unwrap());
        assert_eq!(plan.l1, (nf.ln().powf(1.5)).ceil() as usize);
        let bound = 1.1 / 0.9 * h.iter().take(horizon).sum::<f64>() * 1.0f64;
        assert!((plan.rate_bound_bits - bound).abs() < 1e-9);
    }

    #[test]
    fn plan_monotone_in_a_q() {
        let h = [0.9, 0.6, 0.2, 0.001, 1e-12];
        let n = 5000;
        let p1 = params(2, 3, 1.0, 0);
        let p2 = params(2, 3, 2.0, 0);
        let plan1 = plan_layers(n, &h, &p1).unwrap();
        let plan2 = plan_layers(n, &h, &p2).unwrap();
        assert_eq!(plan1.m.len(), plan2.m.len());
        for (a, b) in plan1.m.iter().zip(&plan2.m) {
            assert!(b >= a);
        }
    }

    #[test]
    fn plan_sizes_non_increasing_once_lower_bound_dominates() {
        let mut h = Vec::new();
        for l in 0..10u32 {
            let p1 = 0.5f64.powi(2i32.pow(l)) / (1.0 + 0.5f64.powi(2i32.pow(l)));
            h.push(if p1 > 0.0 {
                -(p1 * p1.log2() + (1.0 - p1) * (1.0 - p1).log2())
            } else {
                0.0
            });
        }
        let p = params(2, 3, 0.01, 3);
        let plan = plan_layers(10_000, &h, &p).unwrap();
        let first_dominated = (1..=plan.m.len())
            .position(|l| plan.m[l - 1] == m_under(10_000, h[l - 1], &p))
            .unwrap();
        for w in plan.m[first_dominated..].windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn plan_insufficient_list_errors() {
        // List truncated while still informative, and the threshold cannot be
        // established inside it.
        let p = params(2, 3, 1.0, 0);
        assert_eq!(
            plan_layers(10_000, &[0.9, 0.8, 0.7], &p),
            Err(PlanError::InsufficientDigitList)
        );
    }

    #[test]
    fn plan_rejects_bad_params() {
        let mut p = params(2, 3, 1.0, 0);
        p.delta = 1.5;
        assert!(matches!(
            plan_layers(100, &[0.5, 1e-12], &p),
            Err(PlanError::InvalidParams(_))
        ));
        let mut p = params(2, 1, 1.0, 0);
        p.k = 1;
        assert!(plan_layers(100, &[0.5, 1e-12], &p).is_err());
    }

    #[test]
    fn build_topology_identity_tail_and_sparsity() {
        let h = [0.7, 0.2, 1e-12];
        let p = params(3, 2, 0.02, 11);
        let n = 2000;
        let plan = plan_layers(n, &h, &p).unwrap();
        let topo = build_topology(n, &plan, &p).unwrap();
        assert_eq!(topo.num_layers(), plan.l0 + plan.l1);
        for l in plan.l0..topo.num_layers() {
            assert!(topo.layer(l).is_identity());
            assert_eq!(topo.layer(l).rows(), plan.m_star);
        }
        for l in 0..plan.l0 {
            assert!(topo.layer(l).column_weights().iter().all(|&w| w == p.k));
        }
        // Sparsity: edges per input stay under k (1 + 1/(1-delta)) + 1.
        let bound = p.k as f64 * (1.0 + 1.0 / (1.0 - p.delta)) + 1.0;
        assert!(topo.edges_per_input() <= bound);
    }

    #[test]
    fn topology_rebuild_round_trip() {
        let h = [0.6, 0.1, 1e-12];
        let p = params(5, 3, 0.05, 1234);
        let plan = plan_layers(500, &h, &p).unwrap();
        let topo = build_topology(500, &plan, &p).unwrap();
        let json = topo.to_json().unwrap();
        assert!(!json.contains("edges"));
        let back = BraidTopology::from_json(&json).unwrap();
        assert_eq!(topo, back);
        assert_eq!(json, back.to_json().unwrap());
    }

    #[test]
    fn determinism_same_params_same_topology() {
        let h = [0.5, 1e-10];
        let p = params(2, 3, 0.05, 77);
        let plan = plan_layers(300, &h, &p).unwrap();
        let a = build_topology(300, &plan, &p).unwrap();
        let b = build_topology(300, &plan, &p).unwrap();
        assert_eq!(a, b);
    }
}
