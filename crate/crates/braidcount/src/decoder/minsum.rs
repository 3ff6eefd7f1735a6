//! Layered min-sum decoding.
//!
//! Works in carry space rather than digit space. Unknowns are the flow
//! vector and every layer's carry vector; layer l couples them through the
//! exact integer relation `H_l z_{l-1} = q * z_l + y_l`, with the terminal
//! carry-out known (all zeros for a strict encode). Interval bounds on every
//! unknown are tightened by min-sum messages: a counter offers each source
//! "my load minus what the others could still account for", clamped at zero,
//! and a source keeps the tightest bound any of its counters offers; the
//! same relation read upward bounds a layer's carries by its sources. Upper
//! bounds only ever decrease and lower bounds only ever increase, so sweeps
//! reach a fixed point. Identity stages collapse in one step.

use crate::braid::{BraidTopology, LayerMatrix, OverflowPolicy};

use super::{DecodeError, DecodeReport, DecodeStatus};

#[derive(Debug, Clone, Copy)]
pub struct MinsumOptions {
    /// Full sweeps over all layers before giving up.
    pub iterations: usize,
    /// Initial upper bound clamp on the unknowns (flow values in the full
    /// decoder; the solved vector in a single-layer solve).
    pub cap: u64,
    /// Record per-sweep bound snapshots, for diagnostics and tests.
    pub track_history: bool,
}

impl Default for MinsumOptions {
    fn default() -> Self {
        MinsumOptions {
            iterations: 100,
            cap: u64::MAX,
            track_history: false,
        }
    }
}

/// Result of one layer's interval solve.
#[derive(Debug, Clone)]
pub struct LayerSolve {
    pub lower: Vec<u64>,
    pub upper: Vec<u64>,
    /// Every interval collapsed to a single value.
    pub exact: bool,
    /// The constraints stayed mutually consistent (they always do when the
    /// loads are the true loads).
    pub feasible: bool,
    pub sweeps: usize,
    pub history: Option<Vec<(Vec<u64>, Vec<u64>)>>,
}

/// Column incidence with multi-edges collapsed to (row, multiplicity).
fn column_incidence(h: &LayerMatrix) -> Vec<Vec<(u32, u32)>> {
    (0..h.cols())
        .map(|j| {
            let mut sorted = h.column(j).to_vec();
            sorted.sort_unstable();
            let mut pairs: Vec<(u32, u32)> = Vec::new();
            for &r in &sorted {
                match pairs.last_mut() {
                    Some(last) if last.0 == r => last.1 += 1,
                    _ => pairs.push((r, 1)),
                }
            }
            pairs
        })
        .collect()
}

fn row_incidence(cols: &[Vec<(u32, u32)>], rows: usize) -> Vec<Vec<(u32, u32)>> {
    let mut out = vec![Vec::new(); rows];
    for (j, pairs) in cols.iter().enumerate() {
        for &(r, mu) in pairs {
            out[r as usize].push((j as u32, mu));
        }
    }
    out
}

/// Solves `H z = loads` over nonnegative integers by interval propagation.
/// This is the single-layer engine; [`layered_minsum_decode`] runs the same
/// messages jointly over the whole braid.
pub fn solve_layer(h: &LayerMatrix, loads: &[u64], opts: &MinsumOptions) -> LayerSolve {
    let n = h.cols();
    debug_assert_eq!(loads.len(), h.rows());
    let col_inc = column_incidence(h);
    let row_inc = row_incidence(&col_inc, h.rows());

    let mut upper: Vec<u64> = (0..n)
        .map(|j| {
            col_inc[j]
                .iter()
                .map(|&(r, mu)| loads[r as usize] / mu as u64)
                .min()
                .unwrap_or(opts.cap)
                .min(opts.cap)
        })
        .collect();
    let mut lower: Vec<u64> = vec![0; n];
    let mut feasible = true;
    let mut history = opts.track_history.then(Vec::new);
    if let Some(hist) = history.as_mut() {
        hist.push((lower.clone(), upper.clone()));
    }

    let mut sweeps = 0;
    for _ in 0..opts.iterations {
        sweeps += 1;
        let mut changed = false;
        for (r, row) in row_inc.iter().enumerate() {
            let load = loads[r] as u128;
            let sum_hi: u128 = row.iter().map(|&(j, mu)| mu as u128 * upper[j as usize] as u128).sum();
            let sum_lo: u128 = row.iter().map(|&(j, mu)| mu as u128 * lower[j as usize] as u128).sum();
            for &(j, mu) in row {
                let j = j as usize;
                let mu = mu as u128;
                let others_lo = sum_lo - mu * lower[j] as u128;
                let ub = if load >= others_lo {
                    ((load - others_lo) / mu) as u64
                } else {
                    feasible = false;
                    0
                };
                let others_hi = sum_hi - mu * upper[j] as u128;
                let lb = if load > others_hi {
                    (load - others_hi).div_ceil(mu) as u64
                } else {
                    0
                };
                if ub < upper[j] {
                    upper[j] = ub;
                    changed = true;
                }
                if lb > lower[j] {
                    lower[j] = lb;
                    changed = true;
                }
                if lower[j] > upper[j] {
                    feasible = false;
                    lower[j] = upper[j];
                }
            }
        }
        if let Some(hist) = history.as_mut() {
            hist.push((lower.clone(), upper.clone()));
        }
        if !changed {
            break;
        }
    }

    let exact = feasible && lower == upper;
    LayerSolve {
        lower,
        upper,
        exact,
        feasible,
        sweeps,
        history,
    }
}

/// Interval state for the joint solve: level 0 is the flow vector, level l
/// is the carry vector out of layer l. Level L is pinned to the terminal.
struct Levels {
    lo: Vec<Vec<u64>>,
    hi: Vec<Vec<u64>>,
    feasible: bool,
}

impl Levels {
    fn tighten_hi(&mut self, level: usize, idx: usize, v: u64) -> bool {
        if v < self.hi[level][idx] {
            self.hi[level][idx] = v;
            if self.lo[level][idx] > v {
                self.feasible = false;
                self.lo[level][idx] = v;
            }
            true
        } else {
            false
        }
    }

    fn tighten_lo(&mut self, level: usize, idx: usize, v: u64) -> bool {
        if v > self.lo[level][idx] {
            self.lo[level][idx] = v;
            if v > self.hi[level][idx] {
                self.feasible = false;
                self.hi[level][idx] = self.lo[level][idx];
            }
            true
        } else {
            false
        }
    }
}

/// Decodes flow sizes from register values and the terminal carry-out
/// vector (all zeros for a strict encode). Success requires the estimate to
/// re-encode to exactly the given registers and terminal carries; anything
/// else is reported as ambiguous with the best estimate attached.
pub fn layered_minsum_decode(
    y_layers: &[Vec<u64>],
    terminal: &[u64],
    topo: &BraidTopology,
    max_value: u64,
    iterations: usize,
) -> Result<DecodeReport, DecodeError> {
    let q = topo.q();
    let layers = topo.num_layers();
    if y_layers.len() != layers {
        return Err(DecodeError::LengthMismatch {
            got: y_layers.len(),
            expected: layers,
        });
    }
    for (l, y) in y_layers.iter().enumerate() {
        if y.len() != topo.layer(l).rows() {
            return Err(DecodeError::LengthMismatch {
                got: y.len(),
                expected: topo.layer(l).rows(),
            });
        }
    }
    let last_rows = topo.layer(layers - 1).rows();
    if terminal.len() != last_rows {
        return Err(DecodeError::LengthMismatch {
            got: terminal.len(),
            expected: last_rows,
        });
    }

    let col_inc: Vec<Vec<Vec<(u32, u32)>>> =
        topo.layers().iter().map(column_incidence).collect();
    let row_inc: Vec<Vec<Vec<(u32, u32)>>> = col_inc
        .iter()
        .enumerate()
        .map(|(l, cols)| row_incidence(cols, topo.layer(l).rows()))
        .collect();

    // Level sizes: n, m_1, ..., m_L.
    let mut sizes = vec![topo.inputs()];
    sizes.extend(topo.layer_sizes());
    let mut state = Levels {
        lo: sizes.iter().map(|&s| vec![0u64; s]).collect(),
        hi: sizes.iter().map(|&s| vec![u64::MAX; s]).collect(),
        feasible: true,
    };
    state.lo[layers] = terminal.to_vec();
    state.hi[layers] = terminal.to_vec();

    // Downward initialization: each source's upper bound from its counters'
    // largest possible loads, which are known once the deeper level is
    // bounded.
    for l in (0..layers).rev() {
        let y = &y_layers[l];
        for (j, pairs) in col_inc[l].iter().enumerate() {
            let mut hi = if l == 0 { max_value } else { u64::MAX };
            for &(r, mu) in pairs {
                let r = r as usize;
                let load_hi = (q as u128 * state.hi[l + 1][r] as u128 + y[r] as u128)
                    .min(u64::MAX as u128) as u64;
                hi = hi.min(load_hi / mu as u64);
            }
            state.hi[l][j] = hi;
        }
    }

    // Joint sweeps: each layer's relation tightens both its sources and its
    // carries. In-place updates in a fixed order keep runs deterministic.
    let mut sweeps = 0;
    for _ in 0..iterations {
        sweeps += 1;
        let mut changed = false;
        for l in 0..layers {
            let y = &y_layers[l];
            for (r, row) in row_inc[l].iter().enumerate() {
                let yr = y[r] as u128;
                let sum_hi: u128 = row
                    .iter()
                    .map(|&(j, mu)| mu as u128 * state.hi[l][j as usize] as u128)
                    .sum();
                let sum_lo: u128 = row
                    .iter()
                    .map(|&(j, mu)| mu as u128 * state.lo[l][j as usize] as u128)
                    .sum();

                // Counter side: the carry out of this register is pinned
                // between the source sums, shifted by the register value.
                // The terminal level is already collapsed, so these messages
                // only flag inconsistency there.
                let z_hi = if sum_hi >= yr {
                    ((sum_hi - yr) / q as u128).min(u64::MAX as u128) as u64
                } else {
                    state.feasible = false;
                    0
                };
                changed |= state.tighten_hi(l + 1, r, z_hi);
                let z_lo = if sum_lo > yr {
                    (sum_lo - yr).div_ceil(q as u128).min(u64::MAX as u128) as u64
                } else {
                    0
                };
                changed |= state.tighten_lo(l + 1, r, z_lo);

                // Source side: load interval from the carry interval, minus
                // what the other sources can account for.
                let load_lo = q as u128 * state.lo[l + 1][r] as u128 + yr;
                let load_hi = q as u128 * state.hi[l + 1][r] as u128 + yr;
                for &(j, mu) in row {
                    let j = j as usize;
                    let mu = mu as u128;
                    let others_lo = sum_lo - mu * state.lo[l][j] as u128;
                    let ub = if load_hi >= others_lo {
                        (((load_hi - others_lo) / mu).min(u64::MAX as u128)) as u64
                    } else {
                        state.feasible = false;
                        0
                    };
                    changed |= state.tighten_hi(l, j, ub);
                    let others_hi = sum_hi - mu * state.hi[l][j] as u128;
                    if load_lo > others_hi {
                        let lb = ((load_lo - others_hi).div_ceil(mu)).min(u64::MAX as u128) as u64;
                        changed |= state.tighten_lo(l, j, lb);
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut report = DecodeReport::new(DecodeStatus::Ambiguous);
    // Collapsed levels counted from the deepest carry downward.
    let mut exact_levels = 0usize;
    for l in (0..=layers).rev() {
        if state.lo[l] == state.hi[l] {
            exact_levels += 1;
        } else {
            break;
        }
    }
    report.digits_recovered = exact_levels;
    if !state.feasible {
        report
            .warnings
            .push("interval constraints became inconsistent".into());
    }
    if sweeps == iterations && state.lo[0] != state.hi[0] {
        report
            .warnings
            .push(format!("bounds did not collapse within {iterations} sweeps"));
    }

    let x_hat = state.hi[0].clone();
    let enc = topo
        .encode_closed_form(&x_hat, OverflowPolicy::Permissive)
        .expect("x_hat has braid input length");
    report.residual_layers = enc.y.clone();
    report.x_hat = Some(x_hat);
    if enc.y == y_layers && enc.terminal() == terminal {
        report.status = DecodeStatus::Success;
    } else {
        report.status = DecodeStatus::Ambiguous;
    }
    Ok(report)
}
