//! Slow, independent reference implementations used to verify the fast
//! paths. Everything here is written as plain scalar loops over `f64` and
//! never calls into [`crate::crf`] or the scan code in [`crate::network`];
//! tests compare the two routes.

use crate::network::{GruCellGrads, GruCellParams, NetworkGradients, NetworkParams};
use crate::numkernel::DenseMatrix;

/// Hand-summed sequence score: start + transitions + emissions, term by
/// term.
pub fn sequence_score_by_terms(
    emissions: &DenseMatrix<f64>,
    labels: &[usize],
    transitions: &DenseMatrix<f64>,
    start_scores: &[f64],
) -> f64 {
    let mut score = start_scores[labels[0]];
    for t in 1..labels.len() {
        score += transitions.get(labels[t - 1], labels[t]);
    }
    for (t, &l) in labels.iter().enumerate() {
        score += emissions.get(t, l);
    }
    score
}

fn for_each_sequence(len: usize, num_labels: usize, mut visit: impl FnMut(&[usize])) {
    let mut seq = vec![0usize; len];
    loop {
        visit(&seq);
        // Odometer increment in lexicographic order.
        let mut pos = len;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            seq[pos] += 1;
            if seq[pos] < num_labels {
                break;
            }
            seq[pos] = 0;
        }
    }
}

fn sequence_is_legal(seq: &[usize], start_mask: &[bool], transition_mask: &[bool], num_labels: usize) -> bool {
    if !start_mask[seq[0]] {
        return false;
    }
    seq.windows(2).all(|w| transition_mask[w[0] * num_labels + w[1]])
}

/// `log Σ exp(score)` over every one of the `L^T` label sequences, with its
/// own max-shift. The normalizer is unconstrained: IOB2-illegal sequences
/// are included.
pub fn log_partition_by_enumeration(
    emissions: &DenseMatrix<f64>,
    transitions: &DenseMatrix<f64>,
    start_scores: &[f64],
) -> f64 {
    let mut scores = Vec::new();
    for_each_sequence(emissions.rows(), emissions.cols(), |seq| {
        scores.push(sequence_score_by_terms(emissions, seq, transitions, start_scores));
    });
    let mut max = f64::NEG_INFINITY;
    for &s in &scores {
        if s > max {
            max = s;
        }
    }
    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    max + sum.ln()
}

/// True iff `a` precedes `b` when sequences are compared from their last
/// element backwards. This is the order induced by Viterbi backtracking
/// with lowest-id tie-breaks.
fn reverse_lex_less(a: &[usize], b: &[usize]) -> bool {
    for i in (0..a.len()).rev() {
        if a[i] != b[i] {
            return a[i] < b[i];
        }
    }
    false
}

/// Best sequence by explicit enumeration, optionally restricted to legal
/// sequences. Ties on score resolve to the reverse-lexicographically
/// smallest sequence, matching the decoder's tie-break.
pub fn best_sequence_by_enumeration(
    emissions: &DenseMatrix<f64>,
    transitions: &DenseMatrix<f64>,
    start_scores: &[f64],
    masks: Option<(&[bool], &[bool])>,
) -> (Vec<usize>, f64) {
    let num_labels = emissions.cols();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_sequence(emissions.rows(), num_labels, |seq| {
        if let Some((start_mask, transition_mask)) = masks {
            if !sequence_is_legal(seq, start_mask, transition_mask, num_labels) {
                return;
            }
        }
        let score = sequence_score_by_terms(emissions, seq, transitions, start_scores);
        let better = match &best {
            None => true,
            Some((bseq, bscore)) => {
                score > *bscore || (score == *bscore && reverse_lex_less(seq, bseq))
            }
        };
        if better {
            best = Some((seq.to_vec(), score));
        }
    });
    best.expect("at least one legal sequence")
}

/// One GRU step evaluated scalar by scalar with naive accumulation order:
/// update gate, reset gate, candidate state, convex combination.
pub fn gru_step_scalar(p: &GruCellParams<f64>, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
    let hidden = p.hidden_size();
    let naive_dot = |row: &[f64], v: &[f64]| -> f64 {
        let mut s = 0.0;
        for (a, b) in row.iter().zip(v) {
            s += a * b;
        }
        s
    };
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut h_out = vec![0.0; hidden];
    let mut reset = vec![0.0; hidden];
    for i in 0..hidden {
        reset[i] = sigmoid(naive_dot(p.w_rx.row(i), x) + naive_dot(p.w_rh.row(i), h_prev) + p.b_r[i]);
    }
    let reset_h: Vec<f64> = reset.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    for i in 0..hidden {
        let update = sigmoid(naive_dot(p.w_ux.row(i), x) + naive_dot(p.w_uh.row(i), h_prev) + p.b_u[i]);
        let cand = (naive_dot(p.w_cx.row(i), x) + naive_dot(p.w_ch.row(i), &reset_h) + p.b_c[i]).tanh();
        h_out[i] = (1.0 - update) * h_prev[i] + update * cand;
    }
    h_out
}

/// Central finite difference of a scalar function at `x0`.
pub fn central_difference(f: &mut dyn FnMut(f64) -> f64, x0: f64, step: f64) -> f64 {
    (f(x0 + step) - f(x0 - step)) / (2.0 * step)
}

/// Gradient-check comparison: relative error with an absolute floor for
/// near-zero entries.
pub fn gradients_close(analytic: f64, numeric: f64, rel_tol: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_floor || diff <= rel_tol * analytic.abs().max(numeric.abs())
}

fn cell_coordinates(c: &GruCellParams<f64>, out: &mut Vec<f64>) {
    out.extend_from_slice(c.w_ux.data());
    out.extend_from_slice(c.w_uh.data());
    out.extend_from_slice(&c.b_u);
    out.extend_from_slice(c.w_rx.data());
    out.extend_from_slice(c.w_rh.data());
    out.extend_from_slice(&c.b_r);
    out.extend_from_slice(c.w_cx.data());
    out.extend_from_slice(c.w_ch.data());
    out.extend_from_slice(&c.b_c);
}

fn cell_grad_coordinates(c: &GruCellGrads<f64>, out: &mut Vec<f64>) {
    out.extend_from_slice(c.w_ux.data());
    out.extend_from_slice(c.w_uh.data());
    out.extend_from_slice(&c.b_u);
    out.extend_from_slice(c.w_rx.data());
    out.extend_from_slice(c.w_rh.data());
    out.extend_from_slice(&c.b_r);
    out.extend_from_slice(c.w_cx.data());
    out.extend_from_slice(c.w_ch.data());
    out.extend_from_slice(&c.b_c);
}

fn assign_cell(c: &mut GruCellParams<f64>, flat: &[f64], pos: &mut usize) {
    for m in [&mut c.w_ux, &mut c.w_uh] {
        let n = m.data().len();
        m.data_mut().copy_from_slice(&flat[*pos..*pos + n]);
        *pos += n;
    }
    let n = c.b_u.len();
    c.b_u.copy_from_slice(&flat[*pos..*pos + n]);
    *pos += n;
    for m in [&mut c.w_rx, &mut c.w_rh] {
        let n = m.data().len();
        m.data_mut().copy_from_slice(&flat[*pos..*pos + n]);
        *pos += n;
    }
    let n = c.b_r.len();
    c.b_r.copy_from_slice(&flat[*pos..*pos + n]);
    *pos += n;
    for m in [&mut c.w_cx, &mut c.w_ch] {
        let n = m.data().len();
        m.data_mut().copy_from_slice(&flat[*pos..*pos + n]);
        *pos += n;
    }
    let n = c.b_c.len();
    c.b_c.copy_from_slice(&flat[*pos..*pos + n]);
    *pos += n;
}

/// Every network parameter as one flat coordinate vector, in a fixed order
/// (embedding, per-layer forward then backward cell, projection). Used by
/// finite-difference sweeps.
pub fn flatten_network(p: &NetworkParams<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    out.extend_from_slice(p.embedding.rows.data());
    for layer in &p.layers {
        cell_coordinates(&layer.forward, &mut out);
        cell_coordinates(&layer.backward, &mut out);
    }
    out.extend_from_slice(p.projection_w.data());
    out.extend_from_slice(&p.projection_b);
    out
}

/// Gradient record in the same coordinate order as [`flatten_network`].
pub fn flatten_network_grads(g: &NetworkGradients<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    out.extend_from_slice(g.embedding.data());
    for layer in &g.layers {
        cell_grad_coordinates(&layer.forward, &mut out);
        cell_grad_coordinates(&layer.backward, &mut out);
    }
    out.extend_from_slice(g.projection_w.data());
    out.extend_from_slice(&g.projection_b);
    out
}

/// Writes a flat coordinate vector produced by [`flatten_network`] back
/// into a parameter record of the same shape.
pub fn assign_network(p: &mut NetworkParams<f64>, flat: &[f64]) {
    let mut pos = 0usize;
    let n = p.embedding.rows.data().len();
    p.embedding.rows.data_mut().copy_from_slice(&flat[pos..pos + n]);
    pos += n;
    for layer in &mut p.layers {
        assign_cell(&mut layer.forward, flat, &mut pos);
        assign_cell(&mut layer.backward, flat, &mut pos);
    }
    let n = p.projection_w.data().len();
    p.projection_w.data_mut().copy_from_slice(&flat[pos..pos + n]);
    pos += n;
    let n = p.projection_b.len();
    p.projection_b.copy_from_slice(&flat[pos..pos + n]);
    pos += n;
    assert_eq!(pos, flat.len(), "coordinate count mismatch");
}
