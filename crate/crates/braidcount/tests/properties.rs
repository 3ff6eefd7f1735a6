//! Slower derived-property checks that sit between the unit tests and the
//! acceptance suite: sizing bounds recomputed independently, fitted-constant
//! scaling laws, and monotonicity sweeps.

use braidcount::analysis::{prob_collision_bound, prob_collision_exact, q_lambda, WeightProfile};
use braidcount::digits::SourceDistribution;
use braidcount::ensemble::{build_topology, plan_layers, EnsembleParams};

/// The planned register total stays under the sizing bound
/// n (1+d) sum_l (h_l + A n^(b-1)) / (1-d) + n (ln n)^(-1/2)
/// whenever the shrink-threshold rule fires.
#[test]
fn planned_register_count_bound() {
    let n = 10_000usize;
    let dist = SourceDistribution::geometric(0.5).unwrap();
    let params = EnsembleParams {
        q: 7,
        k: 3,
        delta: 0.1,
        beta: 7.0 / 8.0,
        gamma: 0.5,
        a_q: 0.01,
        seed: 0,
    };
    let h = dist.digit_entropies(7);
    let plan = plan_layers(n, &h, &params).unwrap();
    assert!(plan.threshold_met);
    let topo = build_topology(n, &plan, &params).unwrap();
    assert_eq!(topo.register_count(), plan.total_registers());

    let nf = n as f64;
    let slack = params.a_q * nf.powf(params.beta - 1.0);
    let sum: f64 = h.iter().take(plan.l0).map(|&hl| hl + slack).sum();
    let bound = nf * (1.0 + params.delta) * sum / (1.0 - params.delta) + nf / nf.ln().sqrt();
    assert!(
        (plan.total_registers() as f64) <= bound,
        "{} registers exceed the sizing bound {bound}",
        plan.total_registers()
    );

    // Sparsity in the same breath: edges per input under k (1 + 1/(1-d)) + 1.
    let sparsity_bound = params.k as f64 * (1.0 + 1.0 / (1.0 - params.delta)) + 1.0;
    assert!(topo.edges_per_input() <= sparsity_bound);
}

/// The digit-independence gap of the power law scales like q^(-eps) (log2 q)^2:
/// fit the constant over the capacity ladder and check the scaling with it.
#[test]
fn power_law_gap_scaling_fit() {
    let dist = SourceDistribution::power_law(2.5).unwrap();
    let eps = dist.tail_eps();
    let h2 = dist.binary_entropy().bits;
    let ladder = [4u64, 8, 16, 32];
    let mut gaps = Vec::new();
    for &q in &ladder {
        let sum: f64 = dist.digit_entropies(q).iter().sum::<f64>() * (q as f64).log2();
        gaps.push((q, (sum - h2).abs()));
    }
    let c_fit = gaps
        .iter()
        .map(|&(q, gap)| gap / ((q as f64).powf(-eps) * (q as f64).log2().powi(2)))
        .fold(0.0f64, f64::max);
    assert!(c_fit.is_finite() && c_fit > 0.0);
    for &(q, gap) in &gaps {
        let envelope = c_fit * (q as f64).powf(-eps) * (q as f64).log2().powi(2);
        assert!(
            gap <= envelope * (1.0 + 1e-9),
            "q={q}: gap {gap} above fitted envelope {envelope}"
        );
    }
    println!(
        "power-law gap scaling: fitted C = {c_fit:.4}, gaps {:?}",
        gaps.iter().map(|(q, g)| format!("q={q}:{g:.3e}")).collect::<Vec<_>>()
    );
}

/// The decay bound h_l <= B l q^(-l eps) holds with the fitted constant for
/// every computed digit of a tail-bounded source.
#[test]
fn digit_entropy_decay_with_fitted_constant() {
    for (dist, q) in [
        (SourceDistribution::geometric(0.5).unwrap(), 2u64),
        (SourceDistribution::power_law(2.5).unwrap(), 4),
    ] {
        let report = dist.admissibility_check(q);
        let b = report.lemma_decay_b;
        assert!(b.is_finite());
        for (l, &hl) in report.digit_entropies.iter().enumerate().skip(1) {
            let envelope = b * l as f64 * (q as f64).powf(-(l as f64) * dist.tail_eps());
            assert!(
                hl <= envelope * (1.0 + 1e-9) + 1e-300,
                "q={q} l={l}: h={hl} above {envelope}"
            );
        }
    }
}

/// At capacity two, Q is monotone non-increasing in its rate. For larger
/// capacities Q oscillates (damped) around 1/q, so the monotone statement
/// that actually holds is the two-sided envelope: the distance from 1/q is
/// bounded by a decaying exponential in the total rate, coordinatewise.
#[test]
fn q_lambda_envelopes_and_binary_monotonicity() {
    let mut prev = f64::INFINITY;
    for step in 0..20 {
        let v = q_lambda(&[0.3 * step as f64], 2);
        assert!(v <= prev + 1e-12, "binary Q increased");
        prev = v;
    }
    for q in [3u64, 5, 7] {
        let d_q = 1.0 - (2.0 * std::f64::consts::PI / q as f64).cos();
        let base: Vec<f64> = (1..q).map(|z| 0.1 * z as f64).collect();
        for coord in 0..(q as usize - 1) {
            for step in 0..12 {
                let mut lambda = base.clone();
                lambda[coord] += 0.25 * step as f64;
                let v = q_lambda(&lambda, q);
                assert!(v >= -1e-10 && v <= 1.0 + 1e-10);
                let total: f64 = lambda.iter().sum();
                let excess = (q as f64 - 1.0) / q as f64 * (-d_q * total).exp();
                assert!(
                    (v - 1.0 / q as f64).abs() <= excess + 1e-12,
                    "q={q}: |Q - 1/q| = {} above envelope {excess}",
                    (v - 1.0 / q as f64).abs()
                );
            }
        }
    }
}

/// The three-factor collision bound never increases with the urn count.
#[test]
fn collision_bound_monotone_in_m() {
    let cases = [
        (WeightProfile::new(vec![2]), 2usize, 2u64),
        (WeightProfile::new(vec![1, 1]), 2, 3),
        (WeightProfile::new(vec![2, 0, 1, 0]), 3, 5),
    ];
    for (profile, k, q) in &cases {
        let mut prev = f64::INFINITY;
        for m in 2..40usize {
            let b = prob_collision_bound(profile, m, *k, *q, 1.0).bound;
            assert!(
                b <= prev + 1e-12,
                "profile {:?} q={q}: bound rose at m={m}",
                profile.n_z
            );
            prev = b;
        }
    }
}

/// Exact collision probabilities stay inside [0, 1] across a parameter sweep.
#[test]
fn collision_exact_stays_in_unit_interval() {
    for q in [2u64, 3, 5] {
        for m in [1usize, 2, 5, 9] {
            for k in [1usize, 2, 3] {
                let mut n_z = vec![0u64; q as usize - 1];
                n_z[0] = 2;
                if q > 2 {
                    *n_z.last_mut().unwrap() = 1;
                }
                let p = prob_collision_exact(&WeightProfile::new(n_z), m, k, q).unwrap();
                assert!((-1e-10..=1.0 + 1e-10).contains(&p), "p = {p}");
            }
        }
    }
}
