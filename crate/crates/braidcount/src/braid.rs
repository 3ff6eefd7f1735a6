//! The counter braid data structure: a layered register graph with capacity-q
//! cells, the carry-propagating update that absorbs one packet at a time, and
//! the closed-form storage map used as its algebraic twin.
//!
//! A braid holds `n` input nodes and `L` register layers. Every edge goes from
//! layer `l-1` to layer `l` (layer 0 being the inputs), so the graph is acyclic
//! by construction. Incrementing an input bumps its first-layer registers; any
//! register that reaches `q` wraps around and forwards one carry unit to each
//! of its descendants. Carries that would leave the last layer are governed by
//! an [`OverflowPolicy`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::collections::VecDeque;

/// Errors produced by braid construction and encoding.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BraidError {
    /// A column references a register outside the target layer.
    #[error("edge target {target} out of bounds for layer {layer} of size {size}")]
    EdgeOutOfBounds {
        layer: usize,
        target: u32,
        size: usize,
    },
    /// Adjacent layer matrices have incompatible dimensions.
    #[error("layer {layer} has {cols} columns but previous layer has {expected} nodes")]
    LayerMismatch {
        layer: usize,
        cols: usize,
        expected: usize,
    },
    #[error("register capacity must be at least 2, got {0}")]
    CapacityTooSmall(u64),
    #[error("input index {index} out of range for {n} inputs")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("flow vector has length {got}, braid has {expected} inputs")]
    FlowLengthMismatch { got: usize, expected: usize },
    /// A carry exited the final layer under [`OverflowPolicy::Strict`].
    #[error("carry left the final layer at register {register} under the strict overflow policy")]
    TerminalOverflow { register: usize },
    /// The carry loop exceeded its iteration budget; this indicates a bug.
    #[error("carry loop exceeded its iteration budget of {budget} steps")]
    IterationBudget { budget: u64 },
}

/// What to do when a carry exits the final register layer.
///
/// The strict policy treats terminal overflow as an error. The permissive
/// policy accumulates the carry-out units in an unbounded side counter per
/// final-layer register; decoders consume that vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverflowPolicy {
    Strict,
    Permissive,
}

/// Adjacency of one register layer, stored as per-column descendant lists.
///
/// Column `j` lists the descendants of node `j` in the previous layer, with
/// repetitions allowed (a multi-edge adds with multiplicity). The matrix view
/// used by the analysis formulas is materialized on demand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMatrix {
    rows: usize,
    cols: usize,
    edges: Vec<Vec<u32>>,
}

impl LayerMatrix {
    pub fn from_columns(rows: usize, edges: Vec<Vec<u32>>) -> Result<Self, BraidError> {
        for col in &edges {
            for &t in col {
                if t as usize >= rows {
                    return Err(BraidError::EdgeOutOfBounds {
                        layer: 0,
                        target: t,
                        size: rows,
                    });
                }
            }
        }
        Ok(LayerMatrix {
            rows,
            cols: edges.len(),
            edges,
        })
    }

    /// The m-by-m identity stage: node `i` forwards to node `i`.
    pub fn identity(m: usize) -> Self {
        LayerMatrix {
            rows: m,
            cols: m,
            edges: (0..m as u32).map(|i| vec![i]).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, j: usize) -> &[u32] {
        &self.edges[j]
    }

    pub fn is_identity(&self) -> bool {
        self.rows == self.cols
            && self
                .edges
                .iter()
                .enumerate()
                .all(|(j, col)| col.len() == 1 && col[0] as usize == j)
    }

    /// Number of edges counted with multiplicity.
    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Integer matrix-vector product `H z`.
    pub fn apply(&self, z: &[u64]) -> Vec<u64> {
        debug_assert_eq!(z.len(), self.cols);
        let mut out = vec![0u64; self.rows];
        for (j, col) in self.edges.iter().enumerate() {
            let v = z[j];
            if v != 0 {
                for &t in col {
                    out[t as usize] += v;
                }
            }
        }
        out
    }

    /// Matrix-vector product `H x` reduced modulo `q`.
    pub fn apply_mod(&self, x: &[u64], q: u64) -> Vec<u64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = vec![0u64; self.rows];
        for (j, col) in self.edges.iter().enumerate() {
            let v = x[j] % q;
            if v != 0 {
                for &t in col {
                    let cell = &mut out[t as usize];
                    *cell = (*cell + v) % q;
                }
            }
        }
        out
    }

    /// Dense entry counts, row-major. Intended for the analysis formulas and
    /// small instances only.
    pub fn counts_dense(&self) -> Vec<Vec<u32>> {
        let mut m = vec![vec![0u32; self.cols]; self.rows];
        for (j, col) in self.edges.iter().enumerate() {
            for &t in col {
                m[t as usize][j] += 1;
            }
        }
        m
    }

    /// Per-column entry weight (the ensemble keeps this equal to k).
    pub fn column_weights(&self) -> Vec<usize> {
        self.edges.iter().map(Vec::len).collect()
    }
}

/// Metadata allowing a topology's edges to be re-derived from the ensemble
/// hash instead of being stored explicitly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub seed: u64,
    pub k: usize,
    /// Number of hash-sampled layers; layers beyond `l0` are identity stages.
    pub l0: usize,
}

/// A layered counter braid: `n` inputs, register layers `H_1 .. H_L`, and the
/// register capacity `q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BraidTopology {
    q: u64,
    n: usize,
    layers: Vec<LayerMatrix>,
    meta: Option<EnsembleMeta>,
    /// Flow tokens keying the first layer's hash, when it was built from
    /// explicit tokens rather than column indices.
    tokens: Option<Vec<u64>>,
}

impl BraidTopology {
    pub fn new(q: u64, n: usize, layers: Vec<LayerMatrix>) -> Result<Self, BraidError> {
        if q < 2 {
            return Err(BraidError::CapacityTooSmall(q));
        }
        let mut prev = n;
        for (l, h) in layers.iter().enumerate() {
            if h.cols() != prev {
                return Err(BraidError::LayerMismatch {
                    layer: l + 1,
                    cols: h.cols(),
                    expected: prev,
                });
            }
            for col in &h.edges {
                for &t in col {
                    if t as usize >= h.rows() {
                        return Err(BraidError::EdgeOutOfBounds {
                            layer: l + 1,
                            target: t,
                            size: h.rows(),
                        });
                    }
                }
            }
            prev = h.rows();
        }
        Ok(BraidTopology {
            q,
            n,
            layers,
            meta: None,
            tokens: None,
        })
    }

    pub fn with_meta(mut self, meta: EnsembleMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn with_tokens(mut self, tokens: Vec<u64>) -> Self {
        self.tokens = Some(tokens);
        self
    }

    /// Flow tokens keying the first layer, when not simply column indices.
    pub fn tokens(&self) -> Option<&[u64]> {
        self.tokens.as_deref()
    }

    /// Column index of the flow with the given token: the stored token list
    /// when present, otherwise the identity keying (token = index).
    pub fn column_of_token(&self, token: u64) -> Option<usize> {
        match &self.tokens {
            Some(tokens) => tokens.iter().position(|&t| t == token),
            None => (token < self.n as u64).then_some(token as usize),
        }
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    pub fn inputs(&self) -> usize {
        self.n
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> &LayerMatrix {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[LayerMatrix] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(LayerMatrix::rows).collect()
    }

    pub fn meta(&self) -> Option<&EnsembleMeta> {
        self.meta.as_ref()
    }

    /// Total number of registers across all layers.
    pub fn register_count(&self) -> usize {
        self.layers.iter().map(LayerMatrix::rows).sum()
    }

    /// Edges per input node, counted with multiplicity.
    pub fn edges_per_input(&self) -> f64 {
        let e: usize = self.layers.iter().map(LayerMatrix::edge_count).sum();
        e as f64 / self.n as f64
    }

    /// Design rate in bits of register memory per flow: `|R| log2(q) / |I|`.
    pub fn rate_bits_per_flow(&self) -> f64 {
        self.register_count() as f64 * (self.q as f64).log2() / self.n as f64
    }

    /// Fresh all-zero state for this braid.
    pub fn zero_state(&self) -> BraidState {
        BraidState {
            x: vec![0; self.n],
            y: self.layers.iter().map(|h| vec![0; h.rows()]).collect(),
            terminal: vec![0; self.layers.last().map_or(0, LayerMatrix::rows)],
        }
    }

    /// Registers one arriving packet for flow `i` and propagates carries until
    /// the state is valid again. Overflowing registers are processed in FIFO
    /// order; the result does not depend on that order.
    pub fn increment(
        &self,
        state: &mut BraidState,
        i: usize,
        policy: OverflowPolicy,
    ) -> Result<(), BraidError> {
        if i >= self.n {
            return Err(BraidError::IndexOutOfRange { index: i, n: self.n });
        }
        state.x[i] += 1;
        let total: u64 = state.x.iter().sum();
        let budget = self.register_count() as u64 * (1 + total);
        let mut steps = 0u64;

        let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
        let mut queued: Vec<Vec<bool>> = state
            .y
            .iter()
            .map(|layer| vec![false; layer.len()])
            .collect();

        let bump = |state: &mut BraidState,
                        queue: &mut VecDeque<(usize, usize)>,
                        queued: &mut Vec<Vec<bool>>,
                        layer: usize,
                        reg: usize| {
            state.y[layer][reg] += 1;
            if state.y[layer][reg] >= self.q && !queued[layer][reg] {
                queued[layer][reg] = true;
                queue.push_back((layer, reg));
            }
        };

        for &t in self.layers[0].column(i) {
            bump(state, &mut queue, &mut queued, 0, t as usize);
        }

        while let Some((layer, reg)) = queue.pop_front() {
            queued[layer][reg] = false;
            if state.y[layer][reg] < self.q {
                continue;
            }
            steps += 1;
            if steps > budget {
                return Err(BraidError::IterationBudget { budget });
            }
            state.y[layer][reg] -= self.q;
            if layer + 1 < self.layers.len() {
                // Borrow dance: collect targets first, then bump.
                let targets: Vec<u32> = self.layers[layer + 1].column(reg).to_vec();
                for t in targets {
                    bump(state, &mut queue, &mut queued, layer + 1, t as usize);
                }
            } else {
                match policy {
                    OverflowPolicy::Permissive => state.terminal[reg] += 1,
                    OverflowPolicy::Strict => {
                        return Err(BraidError::TerminalOverflow { register: reg })
                    }
                }
            }
            if state.y[layer][reg] >= self.q && !queued[layer][reg] {
                queued[layer][reg] = true;
                queue.push_back((layer, reg));
            }
        }
        Ok(())
    }

    /// The storage map evaluated packet by packet: applies [`Self::increment`]
    /// once per unit of `x`, starting from the zero state. The resulting
    /// registers do not depend on the order of increments.
    pub fn encode_sequential(
        &self,
        x: &[u64],
        policy: OverflowPolicy,
    ) -> Result<BraidState, BraidError> {
        if x.len() != self.n {
            return Err(BraidError::FlowLengthMismatch {
                got: x.len(),
                expected: self.n,
            });
        }
        let mut state = self.zero_state();
        for (i, &count) in x.iter().enumerate() {
            for _ in 0..count {
                self.increment(&mut state, i, policy)?;
            }
        }
        Ok(state)
    }

    /// The storage map in closed form: with `z0 = x`, each layer splits its
    /// integer load `H_l z_{l-1}` into a register part (mod q) and a carry
    /// part (integer division by q) that feeds the next layer.
    pub fn encode_closed_form(
        &self,
        x: &[u64],
        policy: OverflowPolicy,
    ) -> Result<Encoding, BraidError> {
        if x.len() != self.n {
            return Err(BraidError::FlowLengthMismatch {
                got: x.len(),
                expected: self.n,
            });
        }
        let mut z: Vec<Vec<u64>> = vec![x.to_vec()];
        let mut y: Vec<Vec<u64>> = Vec::with_capacity(self.layers.len());
        for h in &self.layers {
            let load = h.apply(z.last().unwrap());
            y.push(load.iter().map(|&v| v % self.q).collect());
            z.push(load.iter().map(|&v| v / self.q).collect());
        }
        if policy == OverflowPolicy::Strict {
            if let Some(j) = z.last().unwrap().iter().position(|&v| v != 0) {
                return Err(BraidError::TerminalOverflow { register: j });
            }
        }
        Ok(Encoding { y, z })
    }
}

/// Output of the closed-form encoder: register layers `y[0..L]` (for layers
/// 1..=L) and carry vectors `z[0..=L]` with `z[0] = x` and `z[L]` the
/// terminal carry-out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub y: Vec<Vec<u64>>,
    pub z: Vec<Vec<u64>>,
}

impl Encoding {
    pub fn terminal(&self) -> &[u64] {
        self.z.last().unwrap()
    }

    /// Registers flattened layer by layer, as written to register-value files.
    pub fn flat_registers(&self) -> Vec<u64> {
        self.y.iter().flatten().copied().collect()
    }
}

/// A braid state: the flow counts `x` and one register value per node,
/// grouped by layer, plus the terminal carry-out side counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BraidState {
    pub x: Vec<u64>,
    pub y: Vec<Vec<u64>>,
    pub terminal: Vec<u64>,
}

impl BraidState {
    /// A state is valid when every register holds a value below `q`.
    pub fn is_valid(&self, q: u64) -> bool {
        self.y.iter().flatten().all(|&v| v < q)
    }

    pub fn flat_registers(&self) -> Vec<u64> {
        self.y.iter().flatten().copied().collect()
    }
}

/// Versioned JSON form of a topology. Edges may be omitted when they are
/// derivable from `(seed, k, l0)` through the ensemble hash; `l0` marks the
/// boundary between hash-sampled layers and trailing identity stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyFile {
    pub version: u32,
    pub q: u64,
    pub n: usize,
    pub layer_sizes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l0: Option<usize>,
    /// First-layer token keys, for topologies hashed from explicit tokens.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<Vec<Vec<u32>>>>,
}

#[derive(Debug, Error)]
pub enum TopologyFileError {
    #[error("unsupported topology file version {0}")]
    UnsupportedVersion(u32),
    #[error("topology file must carry either explicit edges or (seed, k, l0)")]
    MissingEdgeSource,
    #[error(transparent)]
    Braid(#[from] BraidError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BraidTopology {
    pub fn to_file(&self) -> TopologyFile {
        match &self.meta {
            Some(meta) => TopologyFile {
                version: 1,
                q: self.q,
                n: self.n,
                layer_sizes: self.layer_sizes(),
                seed: Some(meta.seed),
                k: Some(meta.k),
                l0: Some(meta.l0),
                tokens: self.tokens.clone(),
                edges: None,
            },
            None => TopologyFile {
                version: 1,
                q: self.q,
                n: self.n,
                layer_sizes: self.layer_sizes(),
                seed: None,
                k: None,
                l0: None,
                tokens: None,
                edges: Some(self.layers.iter().map(|h| h.edges.clone()).collect()),
            },
        }
    }

    pub fn from_file(file: &TopologyFile) -> Result<Self, TopologyFileError> {
        if file.version != 1 {
            return Err(TopologyFileError::UnsupportedVersion(file.version));
        }
        if let Some(edges) = &file.edges {
            let mut layers = Vec::with_capacity(edges.len());
            for (l, cols) in edges.iter().enumerate() {
                layers.push(LayerMatrix::from_columns(file.layer_sizes[l], cols.clone())?);
            }
            return Ok(BraidTopology::new(file.q, file.n, layers)?);
        }
        match (file.seed, file.k, file.l0) {
            (Some(seed), Some(k), Some(l0)) => Ok(crate::ensemble::rebuild_topology(
                file.q,
                file.n,
                &file.layer_sizes,
                seed,
                k,
                l0,
                file.tokens.as_deref(),
            )?),
            _ => Err(TopologyFileError::MissingEdgeSource),
        }
    }

    pub fn to_json(&self) -> Result<String, TopologyFileError> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self, TopologyFileError> {
        let file: TopologyFile = serde_json::from_str(s)?;
        Self::from_file(&file)
    }
}
