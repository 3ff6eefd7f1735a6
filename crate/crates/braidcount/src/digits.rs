//! Source distributions over flow sizes, their q-ary digit laws, entropies,
//! divergence, and the admissibility checks (power-law tails and decreasing
//! digit entropies).
//!
//! Unit conventions follow the formulas this module implements: per-digit
//! entropies `h_l` are q-ary, the source entropy is in bits, and divergences
//! are in nats. Conversions are explicit, never implicit.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// All entropy and digit-law sums truncate the support once the remaining
/// tail mass drops below this threshold; the residual is reported alongside.
pub const TAIL_TRUNCATION: f64 = 1e-12;

/// Digit entropies below this value are treated as zero by the layer planner.
pub use crate::ensemble::DIGIT_ENTROPY_FLOOR;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("pmf entries must be non-negative and sum to 1 within 1e-12 (sum = {0})")]
    Unnormalized(f64),
    #[error("invalid distribution parameter: {0}")]
    InvalidParameter(String),
    #[error("value {value} does not fit in {digits} base-{q} digits")]
    DigitOverflow { value: u64, q: u64, digits: usize },
}

/// Distribution shapes in the catalog. All are exact pmfs over the
/// non-negative integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistKind {
    /// All mass on a single value.
    Point { value: u64 },
    /// Uniform on {0, ..., max}.
    Uniform { max: u64 },
    /// p(x) = (1 - rho) rho^x.
    Geometric { rho: f64 },
    /// p(x) proportional to (x + 1)^(-exponent), exponent > 1.
    Powerlaw { exponent: f64 },
    /// Explicit pmf over {0, ..., len-1}, e.g. measured from a trace.
    Empirical { pmf: Vec<f64> },
}

/// JSON form of a source distribution: the shape plus optional tail-bound
/// parameters `P{X >= x} <= tail_a * x^(-tail_eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistSpec {
    #[serde(flatten)]
    pub kind: DistKind,
    #[serde(default)]
    pub tail_a: Option<f64>,
    #[serde(default)]
    pub tail_eps: Option<f64>,
}

/// A source distribution with exact pmf evaluation and tail metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDistribution {
    kind: DistKind,
    tail_a: f64,
    tail_eps: f64,
    /// Hurwitz normalizer for the power law; 1 elsewhere.
    zeta: f64,
}

/// Distribution of one q-ary digit of the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitLaw {
    pub q: u64,
    pub index: usize,
    pub pmf: Vec<f64>,
    /// Entropy of this digit in q-ary units, in [0, 1].
    pub entropy_q: f64,
}

impl DigitLaw {
    pub fn from_pmf(q: u64, index: usize, pmf: Vec<f64>) -> Result<Self, DistError> {
        let sum: f64 = pmf.iter().sum();
        if pmf.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(DistError::Unnormalized(sum));
        }
        let entropy_q = entropy_base_q(&pmf, q);
        Ok(DigitLaw {
            q,
            index,
            pmf,
            entropy_q,
        })
    }

    /// Point mass at digit zero; entropy 0.
    pub fn point_at_zero(q: u64, index: usize) -> Self {
        let mut pmf = vec![0.0; q as usize];
        pmf[0] = 1.0;
        DigitLaw {
            q,
            index,
            pmf,
            entropy_q: 0.0,
        }
    }

    pub fn uniform(q: u64, index: usize) -> Self {
        DigitLaw {
            q,
            index,
            pmf: vec![1.0 / q as f64; q as usize],
            entropy_q: 1.0,
        }
    }
}

/// Empirical type (normalized histogram) of a q-ary vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmpiricalType {
    counts: Vec<u64>,
    n: u64,
}

impl EmpiricalType {
    pub fn new(counts: Vec<u64>) -> Self {
        let n = counts.iter().sum();
        EmpiricalType { counts, n }
    }

    pub fn from_symbols(symbols: &[u64], q: u64) -> Self {
        let mut counts = vec![0u64; q as usize];
        for &s in symbols {
            counts[s as usize] += 1;
        }
        EmpiricalType {
            counts,
            n: symbols.len() as u64,
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn theta(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n as f64).collect()
    }
}

/// Kullback-Leibler divergence D(theta || p) in nats, with 0 ln 0 = 0.
/// Mass of `theta` outside the support of `p` makes the divergence infinite.
pub fn kl_divergence(theta: &EmpiricalType, p_star: &DigitLaw) -> f64 {
    kl_divergence_probs(&theta.theta(), &p_star.pmf)
}

pub fn kl_divergence_probs(theta: &[f64], p: &[f64]) -> f64 {
    debug_assert_eq!(theta.len(), p.len());
    let mut d = 0.0;
    for (&t, &pd) in theta.iter().zip(p) {
        if t > 0.0 {
            if pd <= 0.0 {
                return f64::INFINITY;
            }
            d += t * (t / pd).ln();
        }
    }
    d
}

/// Little-endian base-q digits of `x`, padded to `digits` entries.
pub fn qary_expand(x: u64, q: u64, digits: usize) -> Result<Vec<u64>, DistError> {
    assert!(q >= 2);
    let mut out = vec![0u64; digits];
    let mut v = x;
    for slot in out.iter_mut() {
        *slot = v % q;
        v /= q;
    }
    if v != 0 {
        return Err(DistError::DigitOverflow { value: x, q, digits });
    }
    Ok(out)
}

/// Inverse of [`qary_expand`].
pub fn qary_assemble(digits: &[u64], q: u64) -> u64 {
    digits
        .iter()
        .rev()
        .fold(0u64, |acc, &d| acc * q + d)
}

/// Number of base-q digits needed to write `x` (at least one).
pub fn digits_needed(x: u64, q: u64) -> usize {
    let mut n = 1;
    let mut v = x / q;
    while v > 0 {
        n += 1;
        v /= q;
    }
    n
}

/// Entropy of a probability vector in base-q units.
pub fn entropy_base_q(pmf: &[f64], q: u64) -> f64 {
    let lnq = (q as f64).ln();
    -pmf.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln() / lnq)
        .sum::<f64>()
}

/// Truncated-tail bookkeeping attached to entropy and digit-law outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    /// Largest support value included in the sums.
    pub support_max: u64,
    /// Probability mass beyond the truncation point.
    pub residual_mass: f64,
    /// Upper bound on the entropy contribution of the dropped tail, in bits.
    pub entropy_bound_bits: f64,
}

/// Source entropy in bits together with its truncation bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub bits: f64,
    pub truncation: TruncationReport,
}

/// Tail of the Hurwitz sum `sum_{j >= a} j^(-s)` via Euler-Maclaurin, exact to
/// well below the truncation threshold for the exponents used here.
fn hurwitz_tail(s: f64, a: u64) -> f64 {
    let cutoff = 16u64.max(a);
    let mut head = 0.0;
    for j in a..cutoff {
        head += (j as f64).powf(-s);
    }
    let af = cutoff as f64;
    head + af.powf(1.0 - s) / (s - 1.0) + 0.5 * af.powf(-s) + s * af.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * af.powf(-s - 3.0) / 720.0
}

impl SourceDistribution {
    pub fn new(kind: DistKind) -> Result<Self, DistError> {
        Self::with_tail(kind, None, None)
    }

    pub fn from_spec(spec: &DistSpec) -> Result<Self, DistError> {
        Self::with_tail(spec.kind.clone(), spec.tail_a, spec.tail_eps)
    }

    pub fn with_tail(
        kind: DistKind,
        tail_a: Option<f64>,
        tail_eps: Option<f64>,
    ) -> Result<Self, DistError> {
        let zeta = match &kind {
            DistKind::Geometric { rho } => {
                if !(*rho > 0.0 && *rho < 1.0) {
                    return Err(DistError::InvalidParameter(format!(
                        "geometric rho must lie in (0, 1), got {rho}"
                    )));
                }
                1.0
            }
            DistKind::Powerlaw { exponent } => {
                if !(*exponent > 1.0) {
                    return Err(DistError::InvalidParameter(format!(
                        "power-law exponent must exceed 1, got {exponent}"
                    )));
                }
                hurwitz_tail(*exponent, 1)
            }
            DistKind::Empirical { pmf } => {
                let sum: f64 = pmf.iter().sum();
                if pmf.is_empty() || pmf.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-12 {
                    return Err(DistError::Unnormalized(sum));
                }
                1.0
            }
            _ => 1.0,
        };
        let mut dist = SourceDistribution {
            kind,
            tail_a: 0.0,
            tail_eps: 0.0,
            zeta,
        };
        let (def_a, def_eps) = dist.default_tail_params();
        dist.tail_a = tail_a.unwrap_or(def_a);
        dist.tail_eps = tail_eps.unwrap_or(def_eps);
        Ok(dist)
    }

    pub fn geometric(rho: f64) -> Result<Self, DistError> {
        Self::new(DistKind::Geometric { rho })
    }

    pub fn power_law(exponent: f64) -> Result<Self, DistError> {
        Self::new(DistKind::Powerlaw { exponent })
    }

    pub fn uniform(max: u64) -> Self {
        Self::new(DistKind::Uniform { max }).unwrap()
    }

    pub fn point(value: u64) -> Self {
        Self::new(DistKind::Point { value }).unwrap()
    }

    pub fn empirical(pmf: Vec<f64>) -> Result<Self, DistError> {
        Self::new(DistKind::Empirical { pmf })
    }

    /// Empirical pmf of a list of observed sizes.
    pub fn from_sizes(sizes: &[u64]) -> Result<Self, DistError> {
        let max = sizes.iter().copied().max().unwrap_or(0);
        let mut pmf = vec![0.0; max as usize + 1];
        for &s in sizes {
            pmf[s as usize] += 1.0 / sizes.len() as f64;
        }
        Self::empirical(pmf)
    }

    pub fn kind(&self) -> &DistKind {
        &self.kind
    }

    pub fn tail_a(&self) -> f64 {
        self.tail_a
    }

    pub fn tail_eps(&self) -> f64 {
        self.tail_eps
    }

    fn default_tail_params(&self) -> (f64, f64) {
        match &self.kind {
            DistKind::Point { value } => (1.0f64.max(*value as f64), 1.0),
            DistKind::Uniform { max } => ((*max as f64 + 1.0) / 4.0 + 1.0, 1.0),
            DistKind::Geometric { rho } => {
                let eps = 3.0;
                let xmax = (TAIL_TRUNCATION.ln() / rho.ln()).ceil() as u64 + 1;
                let a = (1..=xmax)
                    .map(|x| (x as f64).powf(eps) * rho.powi(x as i32))
                    .fold(1.0f64, f64::max);
                (a, eps)
            }
            DistKind::Powerlaw { exponent } => {
                let eps = exponent - 1.0;
                // sup_x x^eps P{X >= x} approaches 1 / ((s-1) zeta) from below.
                (1.0 / (eps * self.zeta) * 1.01 + 0.01, eps)
            }
            DistKind::Empirical { pmf } => {
                let mut a: f64 = 1.0;
                let mut tail = 1.0;
                for (x, p) in pmf.iter().enumerate() {
                    if x >= 1 {
                        a = a.max(x as f64 * tail);
                    }
                    tail -= p;
                }
                (a + 1e-9, 1.0)
            }
        }
    }

    /// Exact probability of the value `x`.
    pub fn pmf(&self, x: u64) -> f64 {
        match &self.kind {
            DistKind::Point { value } => {
                if x == *value {
                    1.0
                } else {
                    0.0
                }
            }
            DistKind::Uniform { max } => {
                if x <= *max {
                    1.0 / (*max as f64 + 1.0)
                } else {
                    0.0
                }
            }
            DistKind::Geometric { rho } => (1.0 - rho) * rho.powf(x as f64),
            DistKind::Powerlaw { exponent } => (x as f64 + 1.0).powf(-exponent) / self.zeta,
            DistKind::Empirical { pmf } => pmf.get(x as usize).copied().unwrap_or(0.0),
        }
    }

    /// `P{X >= x}`.
    pub fn tail(&self, x: u64) -> f64 {
        if x == 0 {
            return 1.0;
        }
        match &self.kind {
            DistKind::Point { value } => {
                if x <= *value {
                    1.0
                } else {
                    0.0
                }
            }
            DistKind::Uniform { max } => {
                if x <= *max {
                    (*max - x + 1) as f64 / (*max as f64 + 1.0)
                } else {
                    0.0
                }
            }
            DistKind::Geometric { rho } => rho.powf(x as f64),
            DistKind::Powerlaw { exponent } => hurwitz_tail(*exponent, x + 1) / self.zeta,
            DistKind::Empirical { pmf } => {
                pmf.iter().skip(x as usize).sum::<f64>().clamp(0.0, 1.0)
            }
        }
    }

    /// Largest support value included in truncated sums: the tail beyond it
    /// carries less than [`TAIL_TRUNCATION`] probability.
    pub fn truncation_point(&self) -> u64 {
        match &self.kind {
            DistKind::Point { value } => *value,
            DistKind::Uniform { max } => *max,
            DistKind::Empirical { pmf } => pmf.len() as u64 - 1,
            DistKind::Geometric { rho } => {
                let x = (TAIL_TRUNCATION.ln() / rho.ln()).ceil() as u64;
                x.max(1)
            }
            DistKind::Powerlaw { exponent } => {
                let eps = exponent - 1.0;
                let mut x = ((eps * self.zeta * TAIL_TRUNCATION).powf(-1.0 / eps)).ceil() as u64;
                while self.tail(x + 1) > TAIL_TRUNCATION {
                    x = x * 2 + 1;
                }
                x.max(1)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.kind {
            DistKind::Point { value } => *value as f64,
            DistKind::Uniform { max } => *max as f64 / 2.0,
            DistKind::Geometric { rho } => rho / (1.0 - rho),
            DistKind::Powerlaw { exponent } => {
                if *exponent > 2.0 {
                    // E[X] = E[X+1] - 1 = zeta(s-1)/zeta(s) - 1.
                    hurwitz_tail(exponent - 1.0, 1) / self.zeta - 1.0
                } else {
                    f64::INFINITY
                }
            }
            DistKind::Empirical { pmf } => {
                pmf.iter().enumerate().map(|(x, p)| x as f64 * p).sum()
            }
        }
    }

    /// Draws one value. Exact for every catalog shape; the power law uses
    /// rejection from the continuous Pareto envelope.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.kind {
            DistKind::Point { value } => *value,
            DistKind::Uniform { max } => rng.gen_range(0..=*max),
            DistKind::Geometric { rho } => {
                let u: f64 = rng.gen();
                ((1.0 - u).ln() / rho.ln()).floor() as u64
            }
            DistKind::Powerlaw { exponent } => {
                // Zipf sampler on {1, 2, ...}, shifted down by one.
                let s = *exponent;
                let b = 2.0f64.powf(s - 1.0);
                loop {
                    let u: f64 = rng.gen();
                    let v: f64 = rng.gen();
                    let x = u.powf(-1.0 / (s - 1.0)).floor();
                    if x < 1.0 || x >= 1e18 {
                        continue;
                    }
                    let t = (1.0 + 1.0 / x).powf(s - 1.0);
                    if v * x * (t - 1.0) / (b - 1.0) <= t / b {
                        return x as u64 - 1;
                    }
                }
            }
            DistKind::Empirical { pmf } => {
                let u: f64 = rng.gen();
                let mut cum = 0.0;
                for (x, &p) in pmf.iter().enumerate() {
                    cum += p;
                    if u < cum {
                        return x as u64;
                    }
                }
                pmf.len() as u64 - 1
            }
        }
    }

    /// Upper bound, in bits, on the entropy contribution of the tail beyond
    /// the truncation point. Zero for finite-support shapes.
    fn tail_entropy_bound_bits(&self, support_max: u64) -> f64 {
        let ln2 = std::f64::consts::LN_2;
        match &self.kind {
            DistKind::Point { .. } | DistKind::Uniform { .. } | DistKind::Empirical { .. } => 0.0,
            DistKind::Geometric { rho } => {
                // sum_{x > X} p(x) [x ln(1/rho) + ln(1/(1-rho))], closed form.
                let x1 = support_max as f64 + 1.0;
                let t = rho.powf(x1);
                let mean_excess = t * (x1 + rho / (1.0 - rho));
                (mean_excess * (1.0 / rho).ln() + t * (1.0 / (1.0 - rho)).ln()) / ln2
            }
            DistKind::Powerlaw { exponent } => {
                // sum_{x > X} p(x) [s ln(x+1) + ln zeta], integral comparison.
                let s = *exponent;
                let a = support_max as f64 + 1.0;
                let int_ln = a.powf(1.0 - s) * (a.ln() / (s - 1.0) + 1.0 / (s - 1.0) / (s - 1.0));
                let tail = self.tail(support_max + 1);
                (s * int_ln / self.zeta + tail * self.zeta.ln().abs() + tail) / ln2
            }
        }
    }

    fn truncation_report(&self, support_max: u64) -> TruncationReport {
        TruncationReport {
            support_max,
            residual_mass: self.tail(support_max + 1),
            entropy_bound_bits: self.tail_entropy_bound_bits(support_max),
        }
    }

    /// Entropy of the source in bits, summed over the truncated support.
    pub fn binary_entropy(&self) -> EntropyReport {
        let xmax = self.truncation_point();
        let mut bits = 0.0;
        for x in 0..=xmax {
            let p = self.pmf(x);
            if p > 0.0 {
                bits -= p * p.log2();
            }
        }
        EntropyReport {
            bits,
            truncation: self.truncation_report(xmax),
        }
    }

    /// Marginal masses of every q-ary digit in one pass over the truncated
    /// support. Returns one histogram per digit, plus one past the top digit
    /// of the truncation point (exactly zero over the whole support).
    fn digit_masses(&self, q: u64) -> (Vec<Vec<f64>>, u64) {
        let xmax = self.truncation_point();
        let ndig = digits_needed(xmax, q) + 1;
        let mut acc = vec![vec![0.0f64; q as usize]; ndig];
        let mut last_cum = vec![0.0f64; ndig];
        let mut digit = vec![0u64; ndig];
        let mut cum = 0.0f64;
        for x in 0..=xmax {
            if x > 0 {
                // Advance the digit counter, flushing each level whose digit
                // changes: the mass accumulated while it held its old value.
                let mut l = 0;
                loop {
                    acc[l][digit[l] as usize] += cum - last_cum[l];
                    last_cum[l] = cum;
                    digit[l] += 1;
                    if digit[l] == q {
                        digit[l] = 0;
                        l += 1;
                    } else {
                        break;
                    }
                }
            }
            cum += self.pmf(x);
        }
        for l in 0..ndig {
            acc[l][digit[l] as usize] += cum - last_cum[l];
        }
        (acc, xmax)
    }

    /// Law of the l-th least significant q-ary digit.
    pub fn digit_law(&self, l: usize, q: u64) -> DigitLaw {
        let (acc, _) = self.digit_masses(q);
        let pmf = acc.get(l).cloned().unwrap_or_else(|| {
            let mut p = vec![0.0; q as usize];
            p[0] = 1.0;
            p
        });
        let entropy_q = entropy_base_q(&pmf, q);
        DigitLaw {
            q,
            index: l,
            pmf,
            entropy_q,
        }
    }

    /// All digit laws over the truncated support. The list always ends with
    /// at least one exactly-zero-entropy law, so the layer planner can see
    /// the horizon.
    pub fn digit_laws(&self, q: u64) -> Vec<DigitLaw> {
        let (acc, _) = self.digit_masses(q);
        acc.into_iter()
            .enumerate()
            .map(|(l, pmf)| {
                let entropy_q = entropy_base_q(&pmf, q);
                DigitLaw {
                    q,
                    index: l,
                    pmf,
                    entropy_q,
                }
            })
            .collect()
    }

    pub fn digit_entropies(&self, q: u64) -> Vec<f64> {
        self.digit_laws(q).iter().map(|law| law.entropy_q).collect()
    }

    /// Checks the two admissibility properties at capacity `q` and evaluates
    /// the entropy sandwich. Failures are flagged in the report, not errors.
    pub fn admissibility_check(&self, q: u64) -> AdmissibilityReport {
        let xmax = self.truncation_point();
        // Tail bound on the evaluated support: dense head plus a log-spaced
        // sweep out to the truncation point.
        let mut points: Vec<u64> = (1..=1000.min(xmax)).collect();
        let mut x = 1024u64;
        while x <= xmax {
            points.push(x);
            x = x.saturating_mul(2);
        }
        points.push(xmax);
        points.sort_unstable();
        points.dedup();
        let mut tail_violations = Vec::new();
        for &x in &points {
            let bound = self.tail_a * (x as f64).powf(-self.tail_eps);
            if self.tail(x) > bound * (1.0 + 1e-9) {
                tail_violations.push(x);
            }
        }

        let laws = self.digit_laws(q);
        let h: Vec<f64> = laws.iter().map(|l| l.entropy_q).collect();
        let h_monotone = h.windows(2).all(|w| w[1] <= w[0] + 1e-12);
        let log2q = (q as f64).log2();
        let h2 = self.binary_entropy();
        let h0_bits = h.first().copied().unwrap_or(0.0) * log2q;
        let sum_bits: f64 = h.iter().sum::<f64>() * log2q;
        let slack = 1e-9 + h2.truncation.entropy_bound_bits;
        let sandwich_ok = h0_bits <= h2.bits + slack && h2.bits <= sum_bits + slack;

        // Fitted decay constant: smallest B with h_l <= B l q^(-l eps).
        let mut b_fit = 0.0f64;
        for (l, &hl) in h.iter().enumerate().skip(1) {
            if hl > 0.0 {
                let denom = l as f64 * (q as f64).powf(-(l as f64) * self.tail_eps);
                b_fit = b_fit.max(hl / denom);
            }
        }

        AdmissibilityReport {
            q,
            tail_bound_ok: tail_violations.is_empty(),
            tail_violations,
            digit_entropies: h,
            h_monotone_decreasing: h_monotone,
            h2_bits: h2.bits,
            h0_log2q_bits: h0_bits,
            sum_h_log2q_bits: sum_bits,
            gap_bits: (sum_bits - h2.bits).abs(),
            sandwich_ok,
            lemma_decay_b: b_fit,
            truncation: h2.truncation,
        }
    }
}

/// Output of [`SourceDistribution::admissibility_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub q: u64,
    pub tail_bound_ok: bool,
    pub tail_violations: Vec<u64>,
    pub digit_entropies: Vec<f64>,
    pub h_monotone_decreasing: bool,
    pub h2_bits: f64,
    pub h0_log2q_bits: f64,
    pub sum_h_log2q_bits: f64,
    pub gap_bits: f64,
    pub sandwich_ok: bool,
    /// Fitted B in the decay bound h_l <= B l q^(-l eps).
    pub lemma_decay_b: f64,
    pub truncation: TruncationReport,
}
