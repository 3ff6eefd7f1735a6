//! Trace synthesis, experiment orchestration, and report emission.
//!
//! Two trace formats exist, documented bit-exactly here:
//!
//! - `flowids`: UTF-8 text, one decimal 64-bit flow id per line, one line per
//!   packet, in arrival order.
//! - `sizes`: UTF-8 text, one line per flow, `<flow_id> <size>` separated by
//!   a single space, sorted by flow id ascending. Flows of size zero appear
//!   here but never in a `flowids` stream.
//!
//! Both carry the same ground truth; streaming the packets through the
//! update rule and batch-encoding the sizes must produce identical register
//! values, which every experiment run asserts.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, DecoderKind, SweepConfig};
use crate::braid::{BraidTopology, OverflowPolicy};
use crate::decoder::{layered_minsum_decode, recovery_multilayer, DecodeReport, DecodeStatus};
use crate::digits::{DistSpec, SourceDistribution};
use crate::ensemble::{build_topology_with_tokens, mix64, plan_layers, EnsembleParams};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trace line {line}: {reason}")]
    MalformedTrace { line: usize, reason: String },
    #[error("register file length {got} matches neither {registers} nor {with_terminal}")]
    RegisterLength {
        got: usize,
        registers: usize,
        with_terminal: usize,
    },
    #[error("streaming and batch encodings disagree; this is a bug")]
    StreamBatchMismatch,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Braid(#[from] crate::braid::BraidError),
    #[error(transparent)]
    Decode(#[from] crate::decoder::DecodeError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Trace file flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    FlowIds,
    Sizes,
}

/// What to synthesize: `n_flows` iid sizes from `distribution`, keyed by
/// pseudorandom 64-bit flow ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub n_flows: usize,
    pub distribution: DistSpec,
    pub seed: u64,
    pub format: TraceFormat,
}

/// An in-memory trace: tokens sorted ascending with their final sizes, plus
/// the packet arrival order for the streaming path.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceData {
    pub tokens: Vec<u64>,
    pub sizes: Vec<u64>,
    /// Packet stream as indices into `tokens`.
    pub packets: Vec<u32>,
}

/// Synthesizes a trace: distinct flow ids, iid sizes, and a seeded shuffle of
/// the packet multiset. Deterministic given the spec.
pub fn gen_trace(spec: &TraceSpec) -> Result<TraceData, HarnessError> {
    let dist = SourceDistribution::from_spec(&spec.distribution)
        .map_err(|e| HarnessError::Invalid(e.to_string()))?;
    let mut tokens: Vec<u64> = Vec::with_capacity(spec.n_flows);
    let mut seen = std::collections::HashSet::new();
    for i in 0..spec.n_flows as u64 {
        let mut t = mix64(spec.seed ^ mix64(i + 1));
        while !seen.insert(t) {
            t = mix64(t);
        }
        tokens.push(t);
    }
    tokens.sort_unstable();

    let mut rng = ChaCha8Rng::seed_from_u64(mix64(spec.seed ^ 0x73697a65));
    let sizes: Vec<u64> = (0..spec.n_flows).map(|_| dist.sample(&mut rng)).collect();

    let mut packets: Vec<u32> = Vec::new();
    for (i, &s) in sizes.iter().enumerate() {
        for _ in 0..s {
            packets.push(i as u32);
        }
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix64(spec.seed ^ 0x7061636b));
    for i in (1..packets.len()).rev() {
        let j = shuffle_rng.gen_range(0..=i);
        packets.swap(i, j);
    }
    Ok(TraceData {
        tokens,
        sizes,
        packets,
    })
}

impl TraceData {
    pub fn to_flowids_text(&self) -> String {
        let mut out = String::new();
        for &p in &self.packets {
            out.push_str(&self.tokens[p as usize].to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_sizes_text(&self) -> String {
        let mut out = String::new();
        for (t, s) in self.tokens.iter().zip(&self.sizes) {
            out.push_str(&format!("{t} {s}\n"));
        }
        out
    }

    pub fn total_packets(&self) -> u64 {
        self.sizes.iter().sum()
    }
}

/// Parses a `sizes` trace: `<flow_id> <size>` per line.
pub fn parse_sizes_text(text: &str) -> Result<(Vec<u64>, Vec<u64>), HarnessError> {
    let mut tokens = Vec::new();
    let mut sizes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tok = parts
            .next()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| HarnessError::MalformedTrace {
                line: i + 1,
                reason: "expected <flow_id> <size>".into(),
            })?;
        let size = parts
            .next()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| HarnessError::MalformedTrace {
                line: i + 1,
                reason: "expected <flow_id> <size>".into(),
            })?;
        tokens.push(tok);
        sizes.push(size);
    }
    Ok((tokens, sizes))
}

/// Parses a `flowids` trace into the packet token stream.
pub fn parse_flowids_text(text: &str) -> Result<Vec<u64>, HarnessError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(line.parse::<u64>().map_err(|e| HarnessError::MalformedTrace {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Parses a register-values file: either a JSON array of integers or
/// newline-delimited integers.
pub fn parse_registers_text(text: &str) -> Result<Vec<u64>, HarnessError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return Ok(serde_json::from_str::<Vec<u64>>(trimmed)?);
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(line.parse::<u64>().map_err(|e| HarnessError::MalformedTrace {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Splits a flat register array into per-layer vectors, with the terminal
/// carry vector appended when present (its presence is determined by
/// length).
pub fn split_registers(
    topo: &BraidTopology,
    flat: &[u64],
) -> Result<(Vec<Vec<u64>>, Vec<u64>), HarnessError> {
    let sizes = topo.layer_sizes();
    let registers: usize = sizes.iter().sum();
    let last = *sizes.last().unwrap_or(&0);
    let terminal = if flat.len() == registers {
        vec![0; last]
    } else if flat.len() == registers + last {
        flat[registers..].to_vec()
    } else {
        return Err(HarnessError::RegisterLength {
            got: flat.len(),
            registers,
            with_terminal: registers + last,
        });
    };
    let mut layers = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for &s in &sizes {
        layers.push(flat[at..at + s].to_vec());
        at += s;
    }
    Ok((layers, terminal))
}

/// Streams a packet token sequence through the update rule on a topology
/// whose first layer is keyed by those tokens.
pub fn stream_encode(
    topo: &BraidTopology,
    token_index: &HashMap<u64, usize>,
    packets: &[u64],
) -> Result<crate::braid::BraidState, HarnessError> {
    let mut state = topo.zero_state();
    for &tok in packets {
        let &i = token_index
            .get(&tok)
            .ok_or_else(|| HarnessError::Invalid(format!("unknown flow id {tok}")))?;
        topo.increment(&mut state, i, OverflowPolicy::Permissive)?;
    }
    Ok(state)
}

/// A full experiment: a synthetic trace pushed through plan, build, encode
/// (both paths), decode, and the re-encode gate, once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub trace: TraceSpec,
    pub q: u64,
    pub k: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_a_q")]
    pub a_q: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub rate_multiplier: f64,
    pub decoder: DecoderKind,
    #[serde(default = "default_iters")]
    pub minsum_iterations: usize,
    pub seeds: Vec<u64>,
    /// Include wall-clock timings in rows. Off by default so that identical
    /// specs and seeds produce byte-identical reports.
    #[serde(default)]
    pub include_timing: bool,
}

fn default_delta() -> f64 {
    0.1
}
fn default_a_q() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    0.5
}
fn default_beta() -> f64 {
    7.0 / 8.0
}
fn default_iters() -> usize {
    100
}

impl ExperimentSpec {
    pub fn params(&self, seed: u64) -> EnsembleParams {
        EnsembleParams {
            q: self.q,
            k: self.k,
            delta: self.delta,
            beta: self.beta,
            gamma: self.gamma,
            a_q: self.a_q,
            seed,
        }
    }
}

/// One per-seed result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub schema: u32,
    pub seed: u64,
    pub n: usize,
    pub q: u64,
    pub k: usize,
    pub decoder: DecoderKind,
    pub rate_multiplier: f64,
    pub rate_bits: f64,
    pub h2_bits: f64,
    pub block_error: u8,
    pub flow_error_frac: f64,
    pub terminal_units: u64,
    pub headroom_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

/// The aggregate row appended after the per-seed rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub schema: u32,
    pub seeds: usize,
    pub rate_bits_mean: f64,
    pub block_error_rate: f64,
    pub flow_error_mean: f64,
    pub headroom_all_seeds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub schema: u32,
    pub rows: Vec<SeedRow>,
    pub aggregate: AggregateRow,
}

/// Runs every seed of the experiment (in parallel, deterministically) and
/// aggregates. Every seed run checks the streaming/batch equivalence of the
/// two trace ingestion paths.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput, HarnessError> {
    let dist = SourceDistribution::from_spec(&spec.trace.distribution)
        .map_err(|e| HarnessError::Invalid(e.to_string()))?;
    let laws = dist.digit_laws(spec.q);
    let entropies: Vec<f64> = laws.iter().map(|l| l.entropy_q).collect();
    let plan = plan_layers(spec.trace.n_flows, &entropies, &spec.params(0))
        .map_err(analysis::AnalysisError::Plan)?;
    let h2_bits = dist.binary_entropy().bits;

    let mut rows = spec
        .seeds
        .par_iter()
        .map(|&seed| run_seed(spec, &laws, &plan, h2_bits, seed))
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by_key(|r| r.seed);

    let count = rows.len().max(1) as f64;
    let aggregate = AggregateRow {
        schema: 1,
        seeds: rows.len(),
        rate_bits_mean: rows.iter().map(|r| r.rate_bits).sum::<f64>() / count,
        block_error_rate: rows.iter().map(|r| r.block_error as f64).sum::<f64>() / count,
        flow_error_mean: rows.iter().map(|r| r.flow_error_frac).sum::<f64>() / count,
        headroom_all_seeds: rows.iter().all(|r| r.headroom_ok),
    };
    Ok(ExperimentOutput {
        schema: 1,
        rows,
        aggregate,
    })
}

fn run_seed(
    spec: &ExperimentSpec,
    laws: &[crate::digits::DigitLaw],
    plan: &crate::ensemble::LayerPlan,
    h2_bits: f64,
    seed: u64,
) -> Result<SeedRow, HarnessError> {
    let start = Instant::now();
    let trace_spec = TraceSpec {
        seed: mix64(spec.trace.seed ^ mix64(seed)),
        ..spec.trace.clone()
    };
    let trace = gen_trace(&trace_spec)?;
    let n = trace.tokens.len();

    let target_registers = spec.rate_multiplier * h2_bits * n as f64 / (spec.q as f64).log2();
    let factor = target_registers / plan.total_registers() as f64;
    let scaled = plan.scaled(factor);
    let params = spec.params(mix64(seed ^ 0x746f706f));
    let topo = build_topology_with_tokens(&trace.tokens, &scaled, &params)
        .map_err(analysis::AnalysisError::Plan)?;

    // Batch path: closed form over the ground-truth sizes.
    let enc = topo.encode_closed_form(&trace.sizes, OverflowPolicy::Permissive)?;
    // Streaming path: packet-by-packet increments, same registers required.
    let token_index: HashMap<u64, usize> =
        trace.tokens.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let packet_tokens: Vec<u64> = trace
        .packets
        .iter()
        .map(|&p| trace.tokens[p as usize])
        .collect();
    let streamed = stream_encode(&topo, &token_index, &packet_tokens)?;
    if streamed.y != enc.y || streamed.terminal != *enc.terminal() {
        return Err(HarnessError::StreamBatchMismatch);
    }

    let headroom_ok = (0..topo.num_layers()).all(|l| {
        let nonzero = enc.z[l].iter().filter(|&&v| v != 0).count();
        topo.layer(l).rows() > nonzero
    });

    let report: DecodeReport = match spec.decoder {
        DecoderKind::Minsum => layered_minsum_decode(
            &enc.y,
            enc.terminal(),
            &topo,
            u64::MAX,
            spec.minsum_iterations,
        )?,
        DecoderKind::Typical => {
            let l_max = topo.num_layers().min(laws.len());
            recovery_multilayer(&enc.y, &topo, laws, spec.gamma, l_max)?
        }
    };

    let (block_error, flow_error_frac) = match (&report.status, &report.x_hat) {
        (DecodeStatus::Success, Some(xh)) => {
            let wrong = xh.iter().zip(&trace.sizes).filter(|(a, b)| a != b).count();
            ((wrong > 0) as u8, wrong as f64 / n as f64)
        }
        (_, Some(xh)) => {
            let wrong = xh.iter().zip(&trace.sizes).filter(|(a, b)| a != b).count();
            (1, wrong as f64 / n as f64)
        }
        _ => (1, 1.0),
    };

    Ok(SeedRow {
        schema: 1,
        seed,
        n,
        q: spec.q,
        k: spec.k,
        decoder: spec.decoder,
        rate_multiplier: spec.rate_multiplier,
        rate_bits: topo.rate_bits_per_flow(),
        h2_bits,
        block_error,
        flow_error_frac,
        terminal_units: enc.terminal().iter().sum(),
        headroom_ok,
        wall_ms: spec
            .include_timing
            .then(|| start.elapsed().as_millis() as u64),
    })
}

/// Aggregates rows (possibly from several experiment outputs) into an
/// RFC 4180 CSV summary, grouped by (rate_multiplier, decoder), with a
/// stable column and row order regardless of input order.
pub fn report_summary(rows: &[SeedRow]) -> Result<String, HarnessError> {
    let mut sorted: Vec<&SeedRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.rate_multiplier
            .partial_cmp(&b.rate_multiplier)
            .unwrap()
            .then_with(|| format!("{:?}", a.decoder).cmp(&format!("{:?}", b.decoder)))
            .then(a.seed.cmp(&b.seed))
    });

    let mut groups: Vec<((u64, String), Vec<&SeedRow>)> = Vec::new();
    for row in sorted {
        let key = (row.rate_multiplier.to_bits(), format!("{:?}", row.decoder));
        match groups.last_mut() {
            Some((k, v)) if *k == key => v.push(row),
            _ => groups.push((key, vec![row])),
        }
    }

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "schema",
        "rate_multiplier",
        "decoder",
        "seeds",
        "rate_bits_mean",
        "block_error_rate",
        "block_error_ci95",
        "flow_error_mean",
        "flow_error_ci95",
    ])
    .map_err(|e| HarnessError::Invalid(e.to_string()))?;
    for ((_, decoder), group) in &groups {
        let nseeds = group.len() as f64;
        let mean = |f: &dyn Fn(&SeedRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / nseeds;
        let block_mean = mean(&|r| r.block_error as f64);
        let flow_mean = mean(&|r| r.flow_error_frac);
        let ci = |m: f64, f: &dyn Fn(&SeedRow) -> f64| {
            let var = group.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>()
                / (nseeds - 1.0).max(1.0);
            1.96 * (var / nseeds).sqrt()
        };
        wtr.write_record([
            "1".to_string(),
            format!("{}", group[0].rate_multiplier),
            decoder.to_lowercase(),
            format!("{}", group.len()),
            format!("{}", mean(&|r| r.rate_bits)),
            format!("{block_mean}"),
            format!("{}", ci(block_mean, &|r| r.block_error as f64)),
            format!("{flow_mean}"),
            format!("{}", ci(flow_mean, &|r| r.flow_error_frac)),
        ])
        .map_err(|e| HarnessError::Invalid(e.to_string()))?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| HarnessError::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Convenience wrapper tying the sweep engine to the trace-level experiment
/// spec, for rate sweeps sharing one trace distribution.
pub fn sweep_config(spec: &ExperimentSpec, multipliers: Vec<f64>) -> SweepConfig {
    SweepConfig {
        n: spec.trace.n_flows,
        dist: spec.trace.distribution.clone(),
        params: spec.params(0),
        rate_multipliers: multipliers,
        seeds: spec.seeds.clone(),
        decoder: spec.decoder,
        minsum_iterations: spec.minsum_iterations,
    }
}
