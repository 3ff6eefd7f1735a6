//! `braidcount`: plan, build, exercise, and analyze counter braids.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use braidcount::analysis::{
    monte_carlo_error_rate, prob_collision_bound, prob_collision_exact, q_lambda, sanov_tail,
    small_weight_bound, typical_set_size, DecoderKind, SweepConfig, WeightProfile,
};
use braidcount::braid::{BraidTopology, OverflowPolicy};
use braidcount::decoder::{layered_minsum_decode, recovery_multilayer};
use braidcount::digits::{DigitLaw, DistSpec, SourceDistribution};
use braidcount::ensemble::{build_topology, plan_layers, EnsembleParams};
use braidcount::harness::{
    self, gen_trace, parse_flowids_text, parse_registers_text, parse_sizes_text, report_summary,
    run_experiment, split_registers, stream_encode, ExperimentSpec, TraceFormat, TraceSpec,
};

#[derive(Parser)]
#[command(name = "braidcount", version, about = "Counter-braid per-flow measurement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ParamArgs {
    /// Register capacity.
    #[arg(long, default_value_t = 2)]
    q: u64,
    /// Edges per node in sampled layers.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Sizing constant in front of the n^beta slack term.
    #[arg(long = "a-q", default_value_t = 1.0)]
    a_q: f64,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 0.875)]
    beta: f64,
    /// Seed; falls back to BRAIDCOUNT_SEED, then 0.
    #[arg(long, env = "BRAIDCOUNT_SEED", default_value_t = 0)]
    seed: u64,
}

impl ParamArgs {
    fn ensemble(&self) -> EnsembleParams {
        EnsembleParams {
            q: self.q,
            k: self.k,
            delta: self.delta,
            beta: self.beta,
            gamma: self.gamma,
            a_q: self.a_q,
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the layer-sizing plan for a flow count and distribution.
    Plan {
        #[arg(long)]
        n: usize,
        /// Distribution JSON, e.g. '{"kind":"geometric","rho":0.5}'.
        #[arg(long)]
        dist: String,
        #[command(flatten)]
        params: ParamArgs,
        /// Override the number of trailing identity stages (0 leans on the
        /// permissive terminal side counters instead).
        #[arg(long)]
        identity_stages: Option<usize>,
        /// Also emit the built topology to this path.
        #[arg(long)]
        topology_out: Option<PathBuf>,
    },
    /// Synthesize a trace file.
    GenTrace {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        dist: String,
        #[arg(long, value_parser = ["flowids", "sizes"], default_value = "sizes")]
        format: String,
        #[arg(long, env = "BRAIDCOUNT_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a trace through a topology and write the register values.
    Encode {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_parser = ["flowids", "sizes"], default_value = "sizes")]
        format: String,
        #[arg(long, value_parser = ["strict", "permissive"], default_value = "permissive")]
        policy: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode register values back into flow sizes.
    Decode {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        registers: PathBuf,
        #[arg(long, value_parser = ["minsum", "typical"], default_value = "minsum")]
        decoder: String,
        /// Distribution JSON (typical decoder only).
        #[arg(long)]
        dist: Option<String>,
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
        #[arg(long, default_value_t = u64::MAX)]
        max_value: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form analyses, each emitting JSON.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Run a seeded experiment from a JSON spec (flags override spec fields).
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long = "rate-multiplier")]
        rate_multiplier: Option<f64>,
        #[arg(long, value_parser = ["minsum", "typical"])]
        decoder: Option<String>,
        #[arg(long)]
        include_timing: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate experiment row files into a CSV summary.
    Report {
        /// Experiment output JSON files.
        rows: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Probability that a Poisson label sum vanishes mod q.
    Qlambda {
        /// Comma-separated rates for residues 1..q-1.
        #[arg(long)]
        lambda: String,
        #[arg(long)]
        q: u64,
    },
    /// Exact collision probability for a weight profile.
    CollisionExact {
        /// Comma-separated counts of entries equal to 1..q-1.
        #[arg(long)]
        nz: String,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        q: u64,
    },
    /// Three-factor collision probability bound.
    CollisionBound {
        #[arg(long)]
        nz: String,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        q: u64,
        #[arg(long = "c-const", default_value_t = 1.0)]
        c_const: f64,
    },
    /// Small-weight nullspace probability bound.
    SmallWeight {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        q: u64,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
    },
    /// Exact typical-set size with its exponential envelope.
    TypicalSize {
        #[arg(long)]
        n: usize,
        /// Comma-separated reference law over 0..q-1.
        #[arg(long)]
        pstar: String,
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
        #[arg(long, default_value_t = 0.875)]
        beta: f64,
        #[arg(long = "a-const", default_value_t = 1.0)]
        a_const: f64,
    },
    /// Exact atypicality probability with the counting envelope.
    Sanov {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        pstar: String,
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
    },
    /// Monte Carlo encode-decode error rates over a rate sweep.
    ErrorRate {
        /// SweepConfig JSON file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect()
}

fn parse_u64_list(s: &str) -> Result<Vec<u64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|e| e.to_string()))
        .collect()
}

fn law_from_probs(probs: Vec<f64>) -> Result<DigitLaw, String> {
    let q = probs.len() as u64;
    DigitLaw::from_pmf(q, 0, probs).map_err(|e| e.to_string())
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<(), String> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| e.to_string()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run() -> Result<(), String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Plan {
            n,
            dist,
            params,
            identity_stages,
            topology_out,
        } => {
            let spec: DistSpec = serde_json::from_str(&dist).map_err(|e| e.to_string())?;
            let source = SourceDistribution::from_spec(&spec).map_err(|e| e.to_string())?;
            let entropies = source.digit_entropies(params.q);
            let mut plan =
                plan_layers(n, &entropies, &params.ensemble()).map_err(|e| e.to_string())?;
            if let Some(l1) = identity_stages {
                plan.l1 = l1;
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&plan).map_err(|e| e.to_string())?
            );
            if let Some(path) = topology_out {
                let topo = build_topology(n, &plan, &params.ensemble())
                    .map_err(|e| e.to_string())?;
                fs::write(&path, topo.to_json().map_err(|e| e.to_string())?)
                    .map_err(|e| e.to_string())?;
            }
            Ok(())
        }
        Command::GenTrace {
            n,
            dist,
            format,
            seed,
            out,
        } => {
            let spec = TraceSpec {
                n_flows: n,
                distribution: serde_json::from_str(&dist).map_err(|e| e.to_string())?,
                seed,
                format: if format == "flowids" {
                    TraceFormat::FlowIds
                } else {
                    TraceFormat::Sizes
                },
            };
            let trace = gen_trace(&spec).map_err(|e| e.to_string())?;
            let text = match spec.format {
                TraceFormat::FlowIds => trace.to_flowids_text(),
                TraceFormat::Sizes => trace.to_sizes_text(),
            };
            fs::write(&out, text).map_err(|e| e.to_string())
        }
        Command::Encode {
            topology,
            trace,
            format,
            policy,
            out,
        } => {
            let topo = load_topology(&topology)?;
            let text = fs::read_to_string(&trace).map_err(|e| e.to_string())?;
            let policy = if policy == "strict" {
                OverflowPolicy::Strict
            } else {
                OverflowPolicy::Permissive
            };
            // Flows address topology columns by token: the stored token list
            // when the topology carries one, the identity keying otherwise.
            let token_index: HashMap<u64, usize> = match topo.tokens() {
                Some(tokens) => tokens.iter().enumerate().map(|(i, &t)| (t, i)).collect(),
                None => (0..topo.inputs() as u64).map(|t| (t, t as usize)).collect(),
            };
            let (y, terminal) = if format == "sizes" {
                let (tokens, sizes) = parse_sizes_text(&text).map_err(|e| e.to_string())?;
                let mut x = vec![0u64; topo.inputs()];
                for (tok, size) in tokens.iter().zip(&sizes) {
                    let &i = token_index
                        .get(tok)
                        .ok_or(format!("flow id {tok} not addressable by this topology"))?;
                    x[i] = *size;
                }
                let enc = topo.encode_closed_form(&x, policy).map_err(|e| e.to_string())?;
                (enc.y.clone(), enc.terminal().to_vec())
            } else {
                let packets = parse_flowids_text(&text).map_err(|e| e.to_string())?;
                let state = stream_encode(&topo, &token_index, &packets).map_err(|e| e.to_string())?;
                (state.y.clone(), state.terminal.clone())
            };
            let mut flat: Vec<u64> = y.into_iter().flatten().collect();
            if terminal.iter().any(|&v| v != 0) {
                flat.extend(terminal);
            }
            fs::write(&out, serde_json::to_string(&flat).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())
        }
        Command::Decode {
            topology,
            registers,
            decoder,
            dist,
            gamma,
            iterations,
            max_value,
            out,
        } => {
            let topo = load_topology(&topology)?;
            let text = fs::read_to_string(&registers).map_err(|e| e.to_string())?;
            let flat = parse_registers_text(&text).map_err(|e| e.to_string())?;
            let (y, terminal) = split_registers(&topo, &flat).map_err(|e| e.to_string())?;
            let report = if decoder == "minsum" {
                layered_minsum_decode(&y, &terminal, &topo, max_value, iterations)
                    .map_err(|e| e.to_string())?
            } else {
                let dist = dist.ok_or("typical decoding needs --dist")?;
                let spec: DistSpec = serde_json::from_str(&dist).map_err(|e| e.to_string())?;
                let source = SourceDistribution::from_spec(&spec).map_err(|e| e.to_string())?;
                let laws = source.digit_laws(topo.q());
                let l_max = topo.num_layers().min(laws.len());
                recovery_multilayer(&y, &topo, &laws, gamma, l_max).map_err(|e| e.to_string())?
            };
            let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
            emit(out.as_ref(), &json)
        }
        Command::Analyze(cmd) => run_analyze(cmd),
        Command::Experiment {
            config,
            seeds,
            rate_multiplier,
            decoder,
            include_timing,
            out,
        } => {
            let text = fs::read_to_string(&config).map_err(|e| e.to_string())?;
            let mut spec: ExperimentSpec = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            if let Some(seeds) = seeds {
                spec.seeds = parse_u64_list(&seeds)?;
            }
            if let Some(m) = rate_multiplier {
                spec.rate_multiplier = m;
            }
            if let Some(d) = decoder {
                spec.decoder = if d == "typical" {
                    DecoderKind::Typical
                } else {
                    DecoderKind::Minsum
                };
            }
            if include_timing {
                spec.include_timing = true;
            }
            let output = run_experiment(&spec).map_err(|e| e.to_string())?;
            let json = serde_json::to_string_pretty(&output).map_err(|e| e.to_string())?;
            emit(out.as_ref(), &json)?;
            if output.aggregate.block_error_rate > 0.0 {
                // Callers treating decode failures as fatal see it in the
                // exit code.
                return Err(format!(
                    "block error rate {} over {} seeds",
                    output.aggregate.block_error_rate, output.aggregate.seeds
                ));
            }
            Ok(())
        }
        Command::Report { rows, out } => {
            let mut all = Vec::new();
            for path in rows {
                let text = fs::read_to_string(&path).map_err(|e| e.to_string())?;
                let parsed: harness::ExperimentOutput =
                    serde_json::from_str(&text).map_err(|e| e.to_string())?;
                all.extend(parsed.rows);
            }
            let csv = report_summary(&all).map_err(|e| e.to_string())?;
            emit(out.as_ref(), &csv)
        }
    }
}

fn load_topology(path: &PathBuf) -> Result<BraidTopology, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    BraidTopology::from_json(&text).map_err(|e| e.to_string())
}

fn run_analyze(cmd: AnalyzeCommand) -> Result<(), String> {
    match cmd {
        AnalyzeCommand::Qlambda { lambda, q } => {
            let rates = parse_f64_list(&lambda)?;
            let value = q_lambda(&rates, q);
            println!(
                "{}",
                serde_json::json!({ "q": q, "lambda": rates, "q_lambda": value })
            );
            Ok(())
        }
        AnalyzeCommand::CollisionExact { nz, m, k, q } => {
            let profile = WeightProfile::new(parse_u64_list(&nz)?);
            let exact = prob_collision_exact(&profile, m, k, q).map_err(|e| e.to_string())?;
            println!(
                "{}",
                serde_json::json!({ "n_z": profile.n_z, "m": m, "k": k, "q": q, "exact": exact })
            );
            Ok(())
        }
        AnalyzeCommand::CollisionBound {
            nz,
            m,
            k,
            q,
            c_const,
        } => {
            let profile = WeightProfile::new(parse_u64_list(&nz)?);
            let bound = prob_collision_bound(&profile, m, k, q, c_const);
            println!(
                "{}",
                serde_json::json!({
                    "n_z": profile.n_z, "m": m, "k": k, "q": q, "c_const": c_const,
                    "bound": bound.bound, "q_factor": bound.q_factor,
                    "prefactor": bound.prefactor, "r_factor": bound.r_factor,
                })
            );
            Ok(())
        }
        AnalyzeCommand::SmallWeight {
            n,
            m,
            k,
            q,
            b,
            c,
            rho,
        } => {
            let r = small_weight_bound(n, m, k, q, b, c, rho);
            println!("{}", serde_json::to_string_pretty(&r).map_err(|e| e.to_string())?);
            Ok(())
        }
        AnalyzeCommand::TypicalSize {
            n,
            pstar,
            gamma,
            beta,
            a_const,
        } => {
            let law = law_from_probs(parse_f64_list(&pstar)?)?;
            let ts = typical_set_size(n, &law, gamma, beta, a_const).map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&ts).map_err(|e| e.to_string())?);
            Ok(())
        }
        AnalyzeCommand::Sanov { n, pstar, gamma } => {
            let law = law_from_probs(parse_f64_list(&pstar)?)?;
            let s = sanov_tail(n, &law, gamma).map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&s).map_err(|e| e.to_string())?);
            Ok(())
        }
        AnalyzeCommand::ErrorRate { config, out } => {
            let text = fs::read_to_string(&config).map_err(|e| e.to_string())?;
            let cfg: SweepConfig = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            let (rows, points) = monte_carlo_error_rate(&cfg).map_err(|e| e.to_string())?;
            let json = serde_json::to_string_pretty(&serde_json::json!({
                "schema": 1,
                "rows": rows,
                "points": points,
            }))
            .map_err(|e| e.to_string())?;
            emit(out.as_ref(), &json)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("braidcount: {e}");
            ExitCode::FAILURE
        }
    }
}
