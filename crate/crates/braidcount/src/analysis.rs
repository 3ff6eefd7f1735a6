//! Collision probabilities, nullspace bounds, typical-set counting, and
//! Monte Carlo error-rate experiments.
//!
//! Each closed-form quantity here is paired with an independent oracle in the
//! test suite: exhaustive placement enumeration for the exact collision
//! probability, sampling for Q(lambda), vector-level brute force for the
//! typical-set counts, and exhaustive small-weight searches for the
//! nullspace bound. Free constants that the theory leaves unspecified are
//! parameters with a fit-and-report mode rather than baked-in values.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::braid::OverflowPolicy;
use crate::decoder::{layered_minsum_decode, recovery_multilayer, DecodeStatus};
use crate::digits::{entropy_base_q, DigitLaw, DistSpec, SourceDistribution};
use crate::ensemble::{build_topology, mix64, plan_layers, EnsembleParams, LayerPlan, PlanError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("instance too large: {0}")]
    InstanceTooLarge(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// How many entries of a q-ary vector equal each nonzero residue: `n_z[z-1]`
/// counts the entries equal to `z`, for `z = 1 .. q-1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightProfile {
    pub n_z: Vec<u64>,
}

impl WeightProfile {
    pub fn new(n_z: Vec<u64>) -> Self {
        WeightProfile { n_z }
    }

    pub fn from_vector(x: &[u64], q: u64) -> Self {
        let mut n_z = vec![0u64; q as usize - 1];
        for &v in x {
            let r = v % q;
            if r != 0 {
                n_z[r as usize - 1] += 1;
            }
        }
        WeightProfile { n_z }
    }

    /// Number of nonzero entries.
    pub fn n_star(&self) -> u64 {
        self.n_z.iter().sum()
    }

    /// Sum of entry values, `sum_z z * n_z`.
    pub fn weighted_sum(&self) -> u64 {
        self.n_z
            .iter()
            .enumerate()
            .map(|(i, &c)| (i as u64 + 1) * c)
            .sum()
    }
}

/// Probability that a vector of independent Poisson counts with means
/// `lambda[z-1]` has label sum `sum_z z W_z` divisible by q, evaluated by a
/// discrete Fourier sum. The imaginary part must cancel; a residue above
/// 1e-10 indicates a transcription error and panics.
pub fn q_lambda(lambda: &[f64], q: u64) -> f64 {
    assert_eq!(
        lambda.len(),
        q as usize - 1,
        "lambda must carry one rate per nonzero residue"
    );
    assert!(lambda.iter().all(|&l| l >= 0.0), "rates must be nonnegative");
    let mut total = Complex64::new(0.0, 0.0);
    for l in 0..q {
        let mut expo = Complex64::new(0.0, 0.0);
        for (zi, &lam) in lambda.iter().enumerate() {
            let z = zi as u64 + 1;
            let theta = 2.0 * std::f64::consts::PI * (l as f64) * (z as f64) / (q as f64);
            expo -= lam * (Complex64::new(1.0, 0.0) - Complex64::new(0.0, theta).exp());
        }
        total += expo.exp();
    }
    total /= q as f64;
    assert!(
        total.im.abs() <= 1e-10,
        "imaginary residue {} in the Fourier sum",
        total.im
    );
    total.re
}

/// Streaming log-sum-exp accumulator.
#[derive(Clone, Copy)]
struct LogSum {
    max: f64,
    acc: f64,
}

impl LogSum {
    fn new() -> Self {
        LogSum {
            max: f64::NEG_INFINITY,
            acc: 0.0,
        }
    }

    fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.acc = self.acc * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.acc += (v - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.acc == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.acc.ln()
        }
    }
}

fn ln_factorials(up_to: usize) -> Vec<f64> {
    let mut t = vec![0.0f64; up_to + 1];
    for i in 1..=up_to {
        t[i] = t[i - 1] + (i as f64).ln();
    }
    t
}

/// Exact probability that a random column-weight-k matrix annihilates a
/// vector with the given weight profile, modulo q.
///
/// Evaluated through the balls-in-urns form: `k n_z` balls of each label z
/// land uniformly in m urns, and every urn's label sum must vanish mod q.
/// The coefficient of the per-urn generating function is extracted by a
/// dynamic program over urns, run in log space so the factorial weights
/// cannot overflow.
pub fn prob_collision_exact(
    profile: &WeightProfile,
    m: usize,
    k: usize,
    q: u64,
) -> Result<f64, AnalysisError> {
    let n_star = profile.n_star();
    if n_star == 0 {
        return Ok(1.0);
    }
    let guard = (m as u64) * (k as u64) * n_star * q;
    if guard > 100_000_000 {
        return Err(AnalysisError::InstanceTooLarge(format!(
            "m * k * n_star * q = {guard} exceeds 1e8"
        )));
    }
    if profile.n_z.len() != q as usize - 1 {
        return Err(AnalysisError::InvalidArgument(format!(
            "profile has {} residue counts, expected {}",
            profile.n_z.len(),
            q - 1
        )));
    }

    // Ball counts per label and the mixed-radix state lattice over
    // "balls still unplaced", restricted to labels that actually occur.
    let balls: Vec<u64> = profile.n_z.iter().map(|&nz| nz * k as u64).collect();
    let labels: Vec<usize> = (0..balls.len()).filter(|&z| balls[z] > 0).collect();
    let dims: Vec<usize> = labels.iter().map(|&z| balls[z] as usize + 1).collect();
    let states: usize = dims.iter().product();
    let max_balls = labels.iter().map(|&z| balls[z] as usize).max().unwrap();
    let lnf = ln_factorials(max_balls.max(m));

    // Per-urn terms: label multisets with q | sum of labels, within the caps.
    let mut terms: Vec<(usize, f64)> = Vec::new(); // (state offset, -sum ln l_z!)
    let mut counts = vec![0usize; labels.len()];
    loop {
        let label_sum: u64 = counts
            .iter()
            .zip(&labels)
            .map(|(&c, &z)| c as u64 * (z as u64 + 1))
            .sum();
        if label_sum % q == 0 {
            let mut offset = 0usize;
            let mut weight = 0.0;
            for (i, &c) in counts.iter().enumerate() {
                offset = offset * dims[i] + c;
                weight -= lnf[c];
            }
            terms.push((offset, weight));
        }
        //

        let mut i = counts.len();
        loop {
            if i == 0 {
                break;
            }
            i -= 1;
            counts[i] += 1;
            if counts[i] < dims[i] {
                break;
            }
            counts[i] = 0;
            if i == 0 {
                i = usize::MAX;
                break;
            }
        }
        if i == usize::MAX {
            break;
        }
        if counts.iter().all(|&c| c == 0) {
            break;
        }
    }
    if states.saturating_mul(terms.len()).saturating_mul(m) > 400_000_000 {
        return Err(AnalysisError::InstanceTooLarge(format!(
            "DP size {} states x {} terms x {} urns too large",
            states,
            terms.len(),
            m
        )));
    }

    // Offsets index states mixed-radix; a term fits under a state when every
    // per-label count does, checked by digit-wise comparison.
    let decompose = |mut s: usize| -> Vec<usize> {
        let mut d = vec![0usize; dims.len()];
        for i in (0..dims.len()).rev() {
            d[i] = s % dims[i];
            s /= dims[i];
        }
        d
    };

    let mut f = vec![f64::NEG_INFINITY; states];
    f[0] = 0.0;
    let mut next = vec![f64::NEG_INFINITY; states];
    for _ in 0..m {
        for v in next.iter_mut() {
            *v = f64::NEG_INFINITY;
        }
        for s in 0..states {
            let sd = decompose(s);
            let mut sum = LogSum::new();
            for &(t_off, w) in &terms {
                let td = decompose(t_off);
                if td.iter().zip(&sd).all(|(a, b)| a <= b) {
                    let prev = s - t_off; // mixed-radix subtraction is exact here
                    let prev_ok = decompose(prev)
                        .iter()
                        .zip(sd.iter().zip(&td))
                        .all(|(p, (s, t))| *p == s - t);
                    if prev_ok && f[prev] > f64::NEG_INFINITY {
                        sum.add(f[prev] + w);
                    }
                }
            }
            next[s] = sum.value();
        }
        std::mem::swap(&mut f, &mut next);
    }

    let full = states - 1;
    let mut ln_p = f[full];
    for &z in &labels {
        ln_p += lnf[balls[z] as usize] - balls[z] as f64 * (m as f64).ln();
    }
    Ok(ln_p.exp())
}

/// Output of [`prob_collision_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionBound {
    pub bound: f64,
    pub q_factor: f64,
    pub prefactor: f64,
    pub r_factor: f64,
}

/// The three-factor upper bound on the collision probability, with the
/// universal constant exposed as `c_const` (default 1; see the fit helpers).
pub fn prob_collision_bound(
    profile: &WeightProfile,
    m: usize,
    k: usize,
    q: u64,
    c_const: f64,
) -> CollisionBound {
    let n_star = profile.n_star() as f64;
    if n_star == 0.0 {
        return CollisionBound {
            bound: 1.0,
            q_factor: 1.0,
            prefactor: 1.0,
            r_factor: 1.0,
        };
    }
    let lambda: Vec<f64> = profile
        .n_z
        .iter()
        .map(|&nz| k as f64 * nz as f64 / m as f64)
        .collect();
    let q_factor = q_lambda(&lambda, q).powi(m as i32);
    let prefactor = (c_const * k as f64 * n_star).powf((q as f64 - 1.0) / 2.0);
    let n_big = k as f64 / q as f64 * profile.weighted_sum() as f64;
    let r_factor = if n_big == 0.0 {
        1.0
    } else {
        (c_const * (q * q) as f64 * n_big / m as f64).powf(n_big).min(1.0)
    };
    CollisionBound {
        bound: prefactor * q_factor * r_factor,
        q_factor,
        prefactor,
        r_factor,
    }
}

/// Closed-form envelope for Q at rates `k n_z / m`: the uniform value 1/q
/// plus an exponentially decaying excess in the total rate.
pub fn q_lambda_envelope(total_rate: f64, q: u64) -> f64 {
    let d_q = 1.0 - (2.0 * std::f64::consts::PI / q as f64).cos();
    (1.0 + (q as f64 - 1.0) * (-d_q * total_rate).exp()) / q as f64
}

/// Output of [`small_weight_bound`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallWeightBound {
    /// Weight threshold below which the per-vector bound switches regimes.
    pub e0: f64,
    /// Largest weight the probability bound covers.
    pub e: f64,
    /// Bound on the probability that some vector of weight at most `e` lies
    /// in the nullspace.
    pub bound: f64,
    /// The expansion margin (m / nk)^(1/k).
    pub delta: f64,
    pub hypothesis_violations: Vec<String>,
}

/// Nullspace bound for small-weight vectors, with its free constants
/// `(B, C, rho)` passed in. Hypothesis violations are reported, not fatal.
pub fn small_weight_bound(
    n: usize,
    m: usize,
    k: usize,
    q: u64,
    b_const: f64,
    c_const: f64,
    rho_const: f64,
) -> SmallWeightBound {
    let mut violations = Vec::new();
    if k as u64 % q == 0 {
        violations.push(format!("k = {k} is a multiple of q = {q}"));
    }
    if k < 3 {
        violations.push(format!("k = {k} below 3"));
    }
    if (k as f64) > m as f64 / (m as f64).ln() {
        violations.push(format!("k = {k} exceeds m / ln m = {}", m as f64 / (m as f64).ln()));
    }
    if m > n {
        violations.push(format!("m = {m} exceeds n = {n}"));
    }
    let ratio = m as f64 / (n as f64 * k as f64);
    let delta = ratio.powf(1.0 / k as f64);
    let e0 = if k > 2 {
        rho_const * m as f64 / k as f64 * ratio.powf(2.0 / (k as f64 - 2.0))
    } else {
        f64::NAN
    };
    let log_arg = n as f64 * k as f64 / m as f64;
    let e = c_const * m as f64 / log_arg.ln();
    let bound = (n as f64).powi(2) * (b_const * k as f64 / m as f64).powf(k as f64 / q as f64);
    SmallWeightBound {
        e0,
        e,
        bound,
        delta,
        hypothesis_violations: violations,
    }
}

/// Output of [`typical_set_size`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalSetSize {
    /// Exact count as a float (always well defined at guarded sizes).
    pub count: f64,
    /// Exact integer count when it fits in 128 bits.
    pub count_exact: Option<u128>,
    /// The q^(n H + A n^beta) envelope for the supplied constant.
    pub bound: f64,
    /// q-ary entropy of the reference law.
    pub entropy_q: f64,
}

fn type_guard(n: usize, q: u64) -> Result<(), AnalysisError> {
    let classes = (n as f64 + 1.0).powi(q as i32);
    if classes > 1e7 {
        return Err(AnalysisError::InstanceTooLarge(format!(
            "(n+1)^q = {classes:.3e} type classes exceed 1e7"
        )));
    }
    Ok(())
}

/// Visits every type (composition of n into q parts) with its divergence
/// from `p` and its log-multinomial size.
fn for_each_type<F: FnMut(&[usize], f64, f64)>(n: usize, p: &[f64], mut visit: F) {
    let q = p.len();
    let lnf = ln_factorials(n);
    let mut counts = vec![0usize; q];
    fn rec<F: FnMut(&[usize], f64, f64)>(
        pos: usize,
        remaining: usize,
        n: usize,
        p: &[f64],
        lnf: &[f64],
        counts: &mut Vec<usize>,
        visit: &mut F,
    ) {
        if pos == p.len() - 1 {
            counts[pos] = remaining;
            let mut div = 0.0;
            let mut ln_multi = lnf[n];
            for (&c, &pd) in counts.iter().zip(p) {
                ln_multi -= lnf[c];
                if c > 0 {
                    if pd <= 0.0 {
                        div = f64::INFINITY;
                    } else if div.is_finite() {
                        let t = c as f64 / n as f64;
                        div += t * (t / pd).ln();
                    }
                }
            }
            visit(counts, div, ln_multi);
            return;
        }
        for c in 0..=remaining {
            counts[pos] = c;
            rec(pos + 1, remaining - c, n, p, lnf, counts, visit);
        }
    }
    rec(0, n, n, p, &lnf, &mut counts, &mut visit);
}

fn multinomial_u128(n: usize, counts: &[usize]) -> Option<u128> {
    if n > 33 {
        return None;
    }
    let mut fact = vec![1u128; n + 1];
    for i in 1..=n {
        fact[i] = fact[i - 1] * i as u128;
    }
    let mut v = fact[n];
    for &c in counts {
        v /= fact[c];
    }
    Some(v)
}

/// Exact size of the typical set by full type enumeration, next to the
/// exponential envelope for a given constant `a_const`.
pub fn typical_set_size(
    n: usize,
    p_star: &DigitLaw,
    gamma: f64,
    beta: f64,
    a_const: f64,
) -> Result<TypicalSetSize, AnalysisError> {
    type_guard(n, p_star.q)?;
    let radius = (n as f64).powf(-gamma);
    let mut count = 0.0f64;
    let mut count_exact: Option<u128> = Some(0);
    for_each_type(n, &p_star.pmf, |counts, div, ln_multi| {
        if div <= radius {
            count += ln_multi.exp();
            count_exact = count_exact
                .and_then(|acc| multinomial_u128(n, counts).map(|m| acc + m));
        }
    });
    if let Some(exact) = count_exact {
        count = exact as f64;
    }
    let h = p_star.entropy_q;
    let bound = (p_star.q as f64).powf(n as f64 * h + a_const * (n as f64).powf(beta));
    Ok(TypicalSetSize {
        count,
        count_exact,
        bound,
        entropy_q: h,
    })
}

/// Smallest constant A for which the count envelope holds across the given
/// sizes. Reported alongside bound checks rather than assumed.
pub fn fit_typical_set_constant(
    ns: &[usize],
    p_star: &DigitLaw,
    gamma: f64,
    beta: f64,
) -> Result<f64, AnalysisError> {
    let mut a_fit = 0.0f64;
    for &n in ns {
        let ts = typical_set_size(n, p_star, gamma, beta, 0.0)?;
        let log_count = ts.count.ln() / (p_star.q as f64).ln();
        let need = (log_count - n as f64 * ts.entropy_q) / (n as f64).powf(beta);
        a_fit = a_fit.max(need);
    }
    Ok(a_fit)
}

/// Output of [`sanov_tail`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SanovTail {
    /// Exact probability that an iid vector falls outside the typical set.
    pub exact: f64,
    /// The (n+1)^q exp(-n^(1-gamma)) envelope.
    pub bound: f64,
    /// The envelope exceeds one and says nothing at this size.
    pub vacuous: bool,
}

/// Exact atypicality probability by summing multinomial type masses, next to
/// the counting envelope.
pub fn sanov_tail(n: usize, p_star: &DigitLaw, gamma: f64) -> Result<SanovTail, AnalysisError> {
    type_guard(n, p_star.q)?;
    let radius = (n as f64).powf(-gamma);
    let mut exact = 0.0f64;
    for_each_type(n, &p_star.pmf, |counts, div, ln_multi| {
        if div > radius {
            let mut ln_p = ln_multi;
            let mut possible = true;
            for (&c, &pd) in counts.iter().zip(&p_star.pmf) {
                if c > 0 {
                    if pd <= 0.0 {
                        possible = false;
                        break;
                    }
                    ln_p += c as f64 * pd.ln();
                }
            }
            if possible {
                exact += ln_p.exp();
            }
        }
    });
    let bound = (n as f64 + 1.0).powi(p_star.q as i32) * (-(n as f64).powf(1.0 - gamma)).exp();
    Ok(SanovTail {
        exact,
        bound,
        vacuous: bound > 1.0,
    })
}

/// Decoder selection for experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Typical,
    Minsum,
}

/// One encode-decode trial outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub rate_multiplier: f64,
    pub seed: u64,
    pub n: usize,
    pub q: u64,
    pub k: usize,
    pub decoder: DecoderKind,
    pub rate_bits: f64,
    pub h2_bits: f64,
    pub block_error: u8,
    pub flow_error_frac: f64,
    /// Every layer had more registers than incoming nonzero loads.
    pub headroom_ok: bool,
    /// Total terminal carry-out units absorbed by the permissive policy.
    pub terminal_units: u64,
}

/// Aggregate over seeds at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub rate_multiplier: f64,
    pub decoder: DecoderKind,
    pub seeds: usize,
    pub rate_bits_mean: f64,
    pub block_error_rate: f64,
    pub flow_error_mean: f64,
    pub headroom_all_seeds: bool,
}

/// Spec for [`monte_carlo_error_rate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n: usize,
    pub dist: DistSpec,
    pub params: EnsembleParams,
    pub rate_multipliers: Vec<f64>,
    pub seeds: Vec<u64>,
    pub decoder: DecoderKind,
    #[serde(default = "default_iterations")]
    pub minsum_iterations: usize,
}

fn default_iterations() -> usize {
    100
}

/// Everything a single trial needs that is shared across seeds.
pub struct SweepContext {
    pub dist: SourceDistribution,
    pub laws: Vec<DigitLaw>,
    pub plan: LayerPlan,
    pub h2_bits: f64,
}

pub fn prepare_sweep(cfg: &SweepConfig) -> Result<SweepContext, AnalysisError> {
    let dist = SourceDistribution::from_spec(&cfg.dist)
        .map_err(|e| AnalysisError::InvalidArgument(e.to_string()))?;
    let laws = dist.digit_laws(cfg.params.q);
    let entropies: Vec<f64> = laws.iter().map(|l| l.entropy_q).collect();
    let plan = plan_layers(cfg.n, &entropies, &cfg.params)?;
    let h2_bits = dist.binary_entropy().bits;
    Ok(SweepContext {
        dist,
        laws,
        plan,
        h2_bits,
    })
}

/// Runs one seeded encode-decode trial at a given rate multiplier. The
/// multiplier rescales the planned layer sizes so the realized rate is close
/// to `multiplier * H2(p)` bits per flow.
pub fn run_trial(
    ctx: &SweepContext,
    cfg: &SweepConfig,
    multiplier: f64,
    seed: u64,
) -> Result<TrialRow, AnalysisError> {
    let q = cfg.params.q;
    let n = cfg.n;
    let target_registers = multiplier * ctx.h2_bits * n as f64 / (q as f64).log2();
    let factor = target_registers / ctx.plan.total_registers() as f64;
    let scaled = ctx.plan.scaled(factor);

    let mut params = cfg.params;
    params.seed = mix64(seed ^ 0x746f706f);
    let topo = build_topology(n, &scaled, &params)?;

    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x74726163));
    let x: Vec<u64> = (0..n).map(|_| ctx.dist.sample(&mut rng)).collect();
    let enc = topo
        .encode_closed_form(&x, OverflowPolicy::Permissive)
        .expect("length matches");

    // Structural headroom: every layer offers more registers than it sees
    // nonzero incoming loads.
    let headroom_ok = (0..topo.num_layers()).all(|l| {
        let nonzero = enc.z[l].iter().filter(|&&v| v != 0).count();
        topo.layer(l).rows() > nonzero
    });

    let report = match cfg.decoder {
        DecoderKind::Minsum => layered_minsum_decode(
            &enc.y,
            enc.terminal(),
            &topo,
            u64::MAX,
            cfg.minsum_iterations,
        )
        .map_err(|e| AnalysisError::InvalidArgument(e.to_string()))?,
        DecoderKind::Typical => {
            let l_max = topo.num_layers().min(ctx.laws.len());
            recovery_multilayer(&enc.y, &topo, &ctx.laws, cfg.params.gamma, l_max)
                .map_err(|e| AnalysisError::InstanceTooLarge(e.to_string()))?
        }
    };

    let (block_error, flow_error_frac) = match (&report.status, &report.x_hat) {
        (DecodeStatus::Success, Some(xh)) => {
            let wrong = xh.iter().zip(&x).filter(|(a, b)| a != b).count();
            ((wrong > 0) as u8, wrong as f64 / n as f64)
        }
        (_, Some(xh)) => {
            let wrong = xh.iter().zip(&x).filter(|(a, b)| a != b).count();
            (1, wrong as f64 / n as f64)
        }
        _ => (1, 1.0),
    };

    Ok(TrialRow {
        rate_multiplier: multiplier,
        seed,
        n,
        q,
        k: cfg.params.k,
        decoder: cfg.decoder,
        rate_bits: topo.rate_bits_per_flow(),
        h2_bits: ctx.h2_bits,
        block_error,
        flow_error_frac,
        headroom_ok,
        terminal_units: enc.terminal().iter().sum(),
    })
}

/// Runs the full sweep: every (multiplier, seed) pair, in parallel, with
/// deterministic per-seed derivation and a stable output order.
pub fn monte_carlo_error_rate(
    cfg: &SweepConfig,
) -> Result<(Vec<TrialRow>, Vec<SweepPoint>), AnalysisError> {
    let ctx = prepare_sweep(cfg)?;
    let jobs: Vec<(f64, u64)> = cfg
        .rate_multipliers
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(m, s)| run_trial(&ctx, cfg, m, s))
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| {
        a.rate_multiplier
            .partial_cmp(&b.rate_multiplier)
            .unwrap()
            .then(a.seed.cmp(&b.seed))
    });
    let points = aggregate_rows(&rows);
    Ok((rows, points))
}

/// Aggregates trial rows by (multiplier, decoder), in multiplier order.
pub fn aggregate_rows(rows: &[TrialRow]) -> Vec<SweepPoint> {
    let mut keys: Vec<(f64, DecoderKind)> = rows
        .iter()
        .map(|r| (r.rate_multiplier, r.decoder))
        .collect();
    keys.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    keys.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    keys.iter()
        .map(|&(m, d)| {
            let group: Vec<&TrialRow> = rows
                .iter()
                .filter(|r| r.rate_multiplier == m && r.decoder == d)
                .collect();
            let count = group.len() as f64;
            SweepPoint {
                rate_multiplier: m,
                decoder: d,
                seeds: group.len(),
                rate_bits_mean: group.iter().map(|r| r.rate_bits).sum::<f64>() / count,
                block_error_rate: group.iter().map(|r| r.block_error as f64).sum::<f64>() / count,
                flow_error_mean: group.iter().map(|r| r.flow_error_frac).sum::<f64>() / count,
                headroom_all_seeds: group.iter().all(|r| r.headroom_ok),
            }
        })
        .collect()
}

/// Entropy in base q of a probability vector; re-exported helper for the
/// typical-set formulas.
pub fn entropy_q(pmf: &[f64], q: u64) -> f64 {
    entropy_base_q(pmf, q)
}
