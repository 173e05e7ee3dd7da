//! Character embedding, stacked Bi-GRU layers and the emission projection.
//!
//! One GRU step computes, with sigmoid gates and a tanh candidate:
//!
//! ```text
//! u = sigmoid(W_ux x + W_uh h_prev + b_u)        (update gate)
//! r = sigmoid(W_rx x + W_rh h_prev + b_r)        (reset gate)
//! c = tanh   (W_cx x + W_ch (r ⊙ h_prev) + b_c)  (candidate state)
//! h = (1 - u) ⊙ h_prev + u ⊙ c
//! ```
//!
//! A Bi-GRU layer runs two cells over the same input in opposite directions
//! (initial states zero) and concatenates their per-position states. Layers
//! stack; a final linear projection turns the topmost output into per-label
//! emission scores for the CRF.
//!
//! The forward scan fuses the three input-side gate matrices into one tall
//! matrix (pure row concatenation, so results are bit-identical to separate
//! products). Training retains a per-call tape of gate activations that the
//! hand-derived backward pass consumes; inference skips retention.

use crate::error::{Error, Result};
use crate::numkernel::{
    axpy, matvec_into, matvec_transpose_acc, outer_acc, sigmoid_scalar, DenseMatrix, DenseVector,
    Scalar,
};

/// Reserved embedding row for out-of-vocabulary characters.
pub const UNK_ID: usize = 0;
/// Reserved embedding row used only when batching; masked out of loss and
/// metrics.
pub const PAD_ID: usize = 1;

/// Character embedding lookup table. Rows 0 and 1 are always the reserved
/// UNK and PAD entries.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<S> {
    pub rows: DenseMatrix<S>,
}

impl<S: Scalar> EmbeddingTable<S> {
    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        assert!(vocab_size >= 2, "vocabulary must include the reserved UNK and PAD rows");
        EmbeddingTable { rows: DenseMatrix::zeros(vocab_size, dim) }
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.rows()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    /// Stacks the embedding rows of a character-id sequence into a `T x dim`
    /// matrix.
    pub fn embed(&self, char_ids: &[usize]) -> Result<DenseMatrix<S>> {
        assert!(!char_ids.is_empty(), "cannot embed an empty sequence");
        let mut out = DenseMatrix::zeros(char_ids.len(), self.dim());
        for (t, &id) in char_ids.iter().enumerate() {
            if id >= self.vocab_size() {
                return Err(Error::CharOutOfRange { id, size: self.vocab_size() });
            }
            out.row_mut(t).copy_from_slice(self.rows.row(id));
        }
        Ok(out)
    }
}

/// Weights of one GRU cell.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCellParams<S> {
    pub w_ux: DenseMatrix<S>,
    pub w_uh: DenseMatrix<S>,
    pub b_u: DenseVector<S>,
    pub w_rx: DenseMatrix<S>,
    pub w_rh: DenseMatrix<S>,
    pub b_r: DenseVector<S>,
    pub w_cx: DenseMatrix<S>,
    pub w_ch: DenseMatrix<S>,
    pub b_c: DenseVector<S>,
}

impl<S: Scalar> GruCellParams<S> {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        GruCellParams {
            w_ux: DenseMatrix::zeros(hidden, input),
            w_uh: DenseMatrix::zeros(hidden, hidden),
            b_u: vec![S::ZERO; hidden],
            w_rx: DenseMatrix::zeros(hidden, input),
            w_rh: DenseMatrix::zeros(hidden, hidden),
            b_r: vec![S::ZERO; hidden],
            w_cx: DenseMatrix::zeros(hidden, input),
            w_ch: DenseMatrix::zeros(hidden, hidden),
            b_c: vec![S::ZERO; hidden],
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.b_u.len()
    }

    pub fn input_size(&self) -> usize {
        self.w_ux.cols()
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden_size();
        let d = self.input_size();
        let shapes = [
            (self.w_ux.rows(), self.w_ux.cols(), h, d, "w_ux"),
            (self.w_rx.rows(), self.w_rx.cols(), h, d, "w_rx"),
            (self.w_cx.rows(), self.w_cx.cols(), h, d, "w_cx"),
            (self.w_uh.rows(), self.w_uh.cols(), h, h, "w_uh"),
            (self.w_rh.rows(), self.w_rh.cols(), h, h, "w_rh"),
            (self.w_ch.rows(), self.w_ch.cols(), h, h, "w_ch"),
        ];
        for (r, c, er, ec, name) in shapes {
            if (r, c) != (er, ec) {
                return Err(Error::LengthMismatch(format!(
                    "{name} is {r}x{c}, expected {er}x{ec}"
                )));
            }
        }
        if self.b_r.len() != h || self.b_c.len() != h {
            return Err(Error::LengthMismatch("bias length".into()));
        }
        Ok(())
    }

    /// One recurrence step. `x` has the cell's input size, `h_prev` its
    /// hidden size; panics on mismatch.
    pub fn step(&self, x: &[S], h_prev: &[S]) -> DenseVector<S> {
        let h = self.hidden_size();
        assert_eq!(x.len(), self.input_size(), "gru step: input length");
        assert_eq!(h_prev.len(), h, "gru step: state length");
        let mut x_part = vec![S::ZERO; 3 * h];
        matvec_into(&self.w_ux, x, &mut x_part[..h]);
        matvec_into(&self.w_rx, x, &mut x_part[h..2 * h]);
        matvec_into(&self.w_cx, x, &mut x_part[2 * h..]);
        let mut h_part = vec![S::ZERO; 2 * h];
        matvec_into(&self.w_uh, h_prev, &mut h_part[..h]);
        matvec_into(&self.w_rh, h_prev, &mut h_part[h..]);
        let mut scratch = StepScratch::new(h);
        let mut out = vec![S::ZERO; h];
        gru_elementwise(self, &x_part, &h_part, h_prev, &mut scratch, &mut out, None);
        out
    }
}

struct StepScratch<S> {
    reset: Vec<S>,
    reset_h: Vec<S>,
    cand_h: Vec<S>,
}

impl<S: Scalar> StepScratch<S> {
    fn new(hidden: usize) -> Self {
        StepScratch {
            reset: vec![S::ZERO; hidden],
            reset_h: vec![S::ZERO; hidden],
            cand_h: vec![S::ZERO; hidden],
        }
    }
}

struct TapeRow<'a, S> {
    update: &'a mut [S],
    reset: &'a mut [S],
    cand: &'a mut [S],
}

/// Elementwise tail of one GRU step, shared by the single-step path and the
/// fused scans so both produce bit-identical states. `x_part` is
/// `[W_ux x | W_rx x | W_cx x]`, `h_part` is `[W_uh h | W_rh h]`.
fn gru_elementwise<S: Scalar>(
    p: &GruCellParams<S>,
    x_part: &[S],
    h_part: &[S],
    h_prev: &[S],
    scratch: &mut StepScratch<S>,
    h_out: &mut [S],
    tape: Option<TapeRow<'_, S>>,
) {
    let h = h_prev.len();
    let (xu, rest) = x_part.split_at(h);
    let (xr, xc) = rest.split_at(h);
    let (hu, hr) = h_part.split_at(h);

    // Reset gate first: the candidate's recurrent term needs r ⊙ h_prev.
    for i in 0..h {
        let r = sigmoid_scalar(xr[i] + hr[i] + p.b_r[i]);
        scratch.reset[i] = r;
        scratch.reset_h[i] = r * h_prev[i];
    }
    let StepScratch { reset, reset_h, cand_h } = scratch;
    matvec_into(&p.w_ch, reset_h, cand_h);
    match tape {
        Some(TapeRow { update, reset: tape_reset, cand }) => {
            for i in 0..h {
                let u = sigmoid_scalar(xu[i] + hu[i] + p.b_u[i]);
                let c = (xc[i] + cand_h[i] + p.b_c[i]).tanh();
                update[i] = u;
                tape_reset[i] = reset[i];
                cand[i] = c;
                h_out[i] = (S::ONE - u) * h_prev[i] + u * c;
            }
        }
        None => {
            for i in 0..h {
                let u = sigmoid_scalar(xu[i] + hu[i] + p.b_u[i]);
                let c = (xc[i] + cand_h[i] + p.b_c[i]).tanh();
                h_out[i] = (S::ONE - u) * h_prev[i] + u * c;
            }
        }
    }
}

/// Forward and backward cells of one Bi-GRU layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BiGruLayerParams<S> {
    pub forward: GruCellParams<S>,
    pub backward: GruCellParams<S>,
}

impl<S: Scalar> BiGruLayerParams<S> {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        BiGruLayerParams {
            forward: GruCellParams::zeros(hidden, input),
            backward: GruCellParams::zeros(hidden, input),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size()
    }

    pub fn input_size(&self) -> usize {
        self.forward.input_size()
    }
}

/// Row-fused copies of a cell's input and recurrent gate matrices, built
/// once and reused across steps. Fusing only concatenates rows, so each
/// output element is the same dot product as in the unfused form.
struct CellPlan<S> {
    w_x_all: DenseMatrix<S>, // 3H x D: [w_ux; w_rx; w_cx]
    w_h_ur: DenseMatrix<S>,  // 2H x H: [w_uh; w_rh]
}

impl<S: Scalar> CellPlan<S> {
    fn new(p: &GruCellParams<S>) -> Self {
        CellPlan {
            w_x_all: DenseMatrix::vstack(&[&p.w_ux, &p.w_rx, &p.w_cx]),
            w_h_ur: DenseMatrix::vstack(&[&p.w_uh, &p.w_rh]),
        }
    }
}

/// Gate activations and states of one directional scan, in scan order.
#[derive(Clone, Debug)]
struct DirectionTape<S> {
    update: DenseMatrix<S>,
    reset: DenseMatrix<S>,
    cand: DenseMatrix<S>,
    states: DenseMatrix<S>,
}

impl<S: Scalar> DirectionTape<S> {
    fn new(len: usize, hidden: usize) -> Self {
        DirectionTape {
            update: DenseMatrix::zeros(len, hidden),
            reset: DenseMatrix::zeros(len, hidden),
            cand: DenseMatrix::zeros(len, hidden),
            states: DenseMatrix::zeros(len, hidden),
        }
    }
}

/// Runs one directional scan over `inputs` (already in scan order), writing
/// states to `states` and, when given, gate activations to the tape.
fn gru_scan<S: Scalar>(
    p: &GruCellParams<S>,
    plan: &CellPlan<S>,
    inputs: &DenseMatrix<S>,
    states: &mut DenseMatrix<S>,
    mut tape: Option<&mut DirectionTape<S>>,
) {
    let len = inputs.rows();
    let hidden = p.hidden_size();
    let mut x_part = vec![S::ZERO; 3 * hidden];
    let mut h_part = vec![S::ZERO; 2 * hidden];
    let mut h_prev = vec![S::ZERO; hidden];
    let mut scratch = StepScratch::new(hidden);
    for t in 0..len {
        matvec_into(&plan.w_x_all, inputs.row(t), &mut x_part);
        matvec_into(&plan.w_h_ur, &h_prev, &mut h_part);
        let tape_row = tape.as_deref_mut().map(|tp| {
            let DirectionTape { update, reset, cand, .. } = tp;
            TapeRow {
                update: update.row_mut(t),
                reset: reset.row_mut(t),
                cand: cand.row_mut(t),
            }
        });
        gru_elementwise(p, &x_part, &h_part, &h_prev, &mut scratch, states.row_mut(t), tape_row);
        h_prev.copy_from_slice(states.row(t));
    }
    if let Some(tp) = tape {
        tp.states.data_mut().copy_from_slice(states.data());
    }
}

fn reverse_rows<S: Scalar>(m: &DenseMatrix<S>) -> DenseMatrix<S> {
    let mut out = DenseMatrix::zeros(m.rows(), m.cols());
    for t in 0..m.rows() {
        out.row_mut(t).copy_from_slice(m.row(m.rows() - 1 - t));
    }
    out
}

/// Tape of one Bi-GRU layer: both directional tapes (scan order) plus the
/// layer input.
struct LayerTape<S> {
    input: DenseMatrix<S>,
    fwd: DirectionTape<S>,
    bwd: DirectionTape<S>,
}

fn bi_gru_layer_core<S: Scalar>(
    p: &BiGruLayerParams<S>,
    fwd_plan: &CellPlan<S>,
    bwd_plan: &CellPlan<S>,
    inputs: &DenseMatrix<S>,
    mut tapes: Option<(&mut DirectionTape<S>, &mut DirectionTape<S>)>,
) -> DenseMatrix<S> {
    let len = inputs.rows();
    let hidden = p.hidden_size();
    let mut fwd_states = DenseMatrix::zeros(len, hidden);
    gru_scan(
        &p.forward,
        fwd_plan,
        inputs,
        &mut fwd_states,
        tapes.as_mut().map(|(f, _)| &mut **f),
    );
    let reversed = reverse_rows(inputs);
    let mut bwd_states = DenseMatrix::zeros(len, hidden);
    gru_scan(
        &p.backward,
        bwd_plan,
        &reversed,
        &mut bwd_states,
        tapes.as_mut().map(|(_, b)| &mut **b),
    );
    let mut out = DenseMatrix::zeros(len, 2 * hidden);
    for t in 0..len {
        let row = out.row_mut(t);
        row[..hidden].copy_from_slice(fwd_states.row(t));
        row[hidden..].copy_from_slice(bwd_states.row(len - 1 - t));
    }
    out
}

/// One Bi-GRU layer: both directions from zero initial states, outputs
/// concatenated per position into a `T x 2H` matrix.
pub fn bi_gru_layer<S: Scalar>(p: &BiGruLayerParams<S>, inputs: &DenseMatrix<S>) -> DenseMatrix<S> {
    assert!(inputs.rows() >= 1, "empty input sequence");
    assert_eq!(inputs.cols(), p.input_size(), "bi_gru_layer: input width");
    let fwd_plan = CellPlan::new(&p.forward);
    let bwd_plan = CellPlan::new(&p.backward);
    bi_gru_layer_core(p, &fwd_plan, &bwd_plan, inputs, None)
}

/// Full network parameters: embedding, Bi-GRU stack, emission projection.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<S> {
    pub embedding: EmbeddingTable<S>,
    pub layers: Vec<BiGruLayerParams<S>>,
    pub projection_w: DenseMatrix<S>, // L x 2H
    pub projection_b: DenseVector<S>, // L
}

impl<S: Scalar> NetworkParams<S> {
    pub fn num_labels(&self) -> usize {
        self.projection_b.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.layers.first().map_or(0, BiGruLayerParams::hidden_size)
    }

    /// Checks the whole shape chain: embedding feeds layer 0, each layer's
    /// `2H` feeds the next, the topmost `2H` feeds the projection.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::LengthMismatch("network has no Bi-GRU layers".into()));
        }
        let mut width = self.embedding.dim();
        for (k, layer) in self.layers.iter().enumerate() {
            layer.forward.validate()?;
            layer.backward.validate()?;
            if layer.forward.hidden_size() != layer.backward.hidden_size() {
                return Err(Error::LengthMismatch(format!("layer {k}: direction sizes differ")));
            }
            if layer.input_size() != width || layer.backward.input_size() != width {
                return Err(Error::LengthMismatch(format!(
                    "layer {k} expects input width {}, got {width}",
                    layer.input_size()
                )));
            }
            width = 2 * layer.hidden_size();
        }
        if self.projection_w.cols() != width || self.projection_w.rows() != self.projection_b.len() {
            return Err(Error::LengthMismatch(format!(
                "projection is {}x{}, expected {}x{width}",
                self.projection_w.rows(),
                self.projection_w.cols(),
                self.projection_b.len()
            )));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> NetworkParams<T> {
        NetworkParams {
            embedding: EmbeddingTable { rows: self.embedding.rows.cast() },
            layers: self
                .layers
                .iter()
                .map(|l| BiGruLayerParams {
                    forward: cast_cell(&l.forward),
                    backward: cast_cell(&l.backward),
                })
                .collect(),
            projection_w: self.projection_w.cast(),
            projection_b: self.projection_b.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

fn cast_cell<S: Scalar, T: Scalar>(c: &GruCellParams<S>) -> GruCellParams<T> {
    let v = |x: &[S]| x.iter().map(|v| T::from_f64(v.to_f64())).collect();
    GruCellParams {
        w_ux: c.w_ux.cast(),
        w_uh: c.w_uh.cast(),
        b_u: v(&c.b_u),
        w_rx: c.w_rx.cast(),
        w_rh: c.w_rh.cast(),
        b_r: v(&c.b_r),
        w_cx: c.w_cx.cast(),
        w_ch: c.w_ch.cast(),
        b_c: v(&c.b_c),
    }
}

/// Reusable fused weight copies for repeated forward calls over one fixed
/// parameter set (the inference hot path). Invalidated by any parameter
/// update; training rebuilds per call through [`network_forward_training`].
pub struct Forwarder<'a, S> {
    params: &'a NetworkParams<S>,
    plans: Vec<(CellPlan<S>, CellPlan<S>)>,
}

impl<'a, S: Scalar> Forwarder<'a, S> {
    pub fn new(params: &'a NetworkParams<S>) -> Result<Self> {
        params.validate()?;
        let plans = params
            .layers
            .iter()
            .map(|l| (CellPlan::new(&l.forward), CellPlan::new(&l.backward)))
            .collect();
        Ok(Forwarder { params, plans })
    }

    /// Emission scores for a character-id sequence, no retention.
    pub fn forward(&self, char_ids: &[usize]) -> Result<DenseMatrix<S>> {
        let (emissions, _) = self.run(char_ids, false)?;
        Ok(emissions)
    }

    /// Emission scores plus the tape needed by [`network_backward`].
    pub fn forward_training(&self, char_ids: &[usize]) -> Result<(DenseMatrix<S>, ForwardTape<S>)> {
        let (emissions, tape) = self.run(char_ids, true)?;
        Ok((emissions, tape.expect("tape requested")))
    }

    fn run(&self, char_ids: &[usize], retain: bool) -> Result<(DenseMatrix<S>, Option<ForwardTape<S>>)> {
        if char_ids.is_empty() {
            return Err(Error::LengthMismatch("empty character sequence".into()));
        }
        let p = self.params;
        let len = char_ids.len();
        let mut layer_tapes = Vec::new();
        let mut current = p.embedding.embed(char_ids)?;
        for (layer, (fwd_plan, bwd_plan)) in p.layers.iter().zip(&self.plans) {
            let hidden = layer.hidden_size();
            let output = if retain {
                let mut fwd = DirectionTape::new(len, hidden);
                let mut bwd = DirectionTape::new(len, hidden);
                let out = bi_gru_layer_core(layer, fwd_plan, bwd_plan, &current, Some((&mut fwd, &mut bwd)));
                layer_tapes.push(LayerTape { input: current, fwd, bwd });
                out
            } else {
                bi_gru_layer_core(layer, fwd_plan, bwd_plan, &current, None)
            };
            current = output;
        }
        let mut emissions = DenseMatrix::zeros(len, p.num_labels());
        for t in 0..len {
            matvec_into(&p.projection_w, current.row(t), emissions.row_mut(t));
            let row = emissions.row_mut(t);
            for (e, b) in row.iter_mut().zip(&p.projection_b) {
                *e += *b;
            }
        }
        let tape = retain.then(|| ForwardTape { char_ids: char_ids.to_vec(), layers: layer_tapes, top: current });
        Ok((emissions, tape))
    }
}

/// Intermediate states retained by a training forward call.
pub struct ForwardTape<S> {
    char_ids: Vec<usize>,
    layers: Vec<LayerTape<S>>,
    top: DenseMatrix<S>,
}

/// Emission scores for a character-id sequence.
pub fn network_forward<S: Scalar>(p: &NetworkParams<S>, char_ids: &[usize]) -> Result<DenseMatrix<S>> {
    Forwarder::new(p)?.forward(char_ids)
}

/// Emission scores for the first `len` positions of a padded id sequence.
/// Positions at `len` and beyond (the PAD region) are never scanned, so
/// they contribute nothing to emissions, loss or gradients.
pub fn network_forward_masked<S: Scalar>(
    p: &NetworkParams<S>,
    char_ids: &[usize],
    len: usize,
) -> Result<DenseMatrix<S>> {
    assert!(len >= 1 && len <= char_ids.len(), "mask length out of range");
    network_forward(p, &char_ids[..len])
}

/// Forward pass retaining the tape for [`network_backward`].
pub fn network_forward_training<S: Scalar>(
    p: &NetworkParams<S>,
    char_ids: &[usize],
) -> Result<(DenseMatrix<S>, ForwardTape<S>)> {
    Forwarder::new(p)?.forward_training(char_ids)
}

/// Gradient record mirroring [`GruCellParams`].
#[derive(Clone, Debug)]
pub struct GruCellGrads<S> {
    pub w_ux: DenseMatrix<S>,
    pub w_uh: DenseMatrix<S>,
    pub b_u: DenseVector<S>,
    pub w_rx: DenseMatrix<S>,
    pub w_rh: DenseMatrix<S>,
    pub b_r: DenseVector<S>,
    pub w_cx: DenseMatrix<S>,
    pub w_ch: DenseMatrix<S>,
    pub b_c: DenseVector<S>,
}

impl<S: Scalar> GruCellGrads<S> {
    fn zeros(hidden: usize, input: usize) -> Self {
        GruCellGrads {
            w_ux: DenseMatrix::zeros(hidden, input),
            w_uh: DenseMatrix::zeros(hidden, hidden),
            b_u: vec![S::ZERO; hidden],
            w_rx: DenseMatrix::zeros(hidden, input),
            w_rh: DenseMatrix::zeros(hidden, hidden),
            b_r: vec![S::ZERO; hidden],
            w_cx: DenseMatrix::zeros(hidden, input),
            w_ch: DenseMatrix::zeros(hidden, hidden),
            b_c: vec![S::ZERO; hidden],
        }
    }

    fn scale(&mut self, c: S) {
        self.w_ux.scale(c);
        self.w_uh.scale(c);
        self.w_rx.scale(c);
        self.w_rh.scale(c);
        self.w_cx.scale(c);
        self.w_ch.scale(c);
        for v in [&mut self.b_u, &mut self.b_r, &mut self.b_c] {
            for x in v.iter_mut() {
                *x *= c;
            }
        }
    }

    fn clear(&mut self) {
        self.w_ux.fill(S::ZERO);
        self.w_uh.fill(S::ZERO);
        self.w_rx.fill(S::ZERO);
        self.w_rh.fill(S::ZERO);
        self.w_cx.fill(S::ZERO);
        self.w_ch.fill(S::ZERO);
        self.b_u.fill(S::ZERO);
        self.b_r.fill(S::ZERO);
        self.b_c.fill(S::ZERO);
    }
}

/// Gradient record mirroring [`BiGruLayerParams`].
#[derive(Clone, Debug)]
pub struct BiGruLayerGrads<S> {
    pub forward: GruCellGrads<S>,
    pub backward: GruCellGrads<S>,
}

/// Gradient record mirroring [`NetworkParams`]. The embedding gradient is
/// dense over the vocabulary; only rows of characters that actually
/// occurred are nonzero.
#[derive(Clone, Debug)]
pub struct NetworkGradients<S> {
    pub embedding: DenseMatrix<S>,
    pub layers: Vec<BiGruLayerGrads<S>>,
    pub projection_w: DenseMatrix<S>,
    pub projection_b: DenseVector<S>,
}

impl<S: Scalar> NetworkGradients<S> {
    pub fn zeros_like(p: &NetworkParams<S>) -> Self {
        NetworkGradients {
            embedding: DenseMatrix::zeros(p.embedding.vocab_size(), p.embedding.dim()),
            layers: p
                .layers
                .iter()
                .map(|l| BiGruLayerGrads {
                    forward: GruCellGrads::zeros(l.hidden_size(), l.input_size()),
                    backward: GruCellGrads::zeros(l.hidden_size(), l.input_size()),
                })
                .collect(),
            projection_w: DenseMatrix::zeros(p.projection_w.rows(), p.projection_w.cols()),
            projection_b: vec![S::ZERO; p.projection_b.len()],
        }
    }

    pub fn scale(&mut self, c: S) {
        self.embedding.scale(c);
        for layer in &mut self.layers {
            layer.forward.scale(c);
            layer.backward.scale(c);
        }
        self.projection_w.scale(c);
        for x in self.projection_b.iter_mut() {
            *x *= c;
        }
    }

    pub fn clear(&mut self) {
        self.embedding.fill(S::ZERO);
        for layer in &mut self.layers {
            layer.forward.clear();
            layer.backward.clear();
        }
        self.projection_w.fill(S::ZERO);
        self.projection_b.fill(S::ZERO);
    }
}

/// BPTT through one directional scan. All matrices are in scan order;
/// `d_states` holds the gradient arriving from above at each emitted state.
fn gru_scan_backward<S: Scalar>(
    p: &GruCellParams<S>,
    inputs: &DenseMatrix<S>,
    tape: &DirectionTape<S>,
    d_states: &DenseMatrix<S>,
    grads: &mut GruCellGrads<S>,
    d_inputs: &mut DenseMatrix<S>,
) {
    let len = inputs.rows();
    let hidden = p.hidden_size();
    let zero_state = vec![S::ZERO; hidden];
    let mut carry = vec![S::ZERO; hidden];
    let mut d_h = vec![S::ZERO; hidden];
    let mut d_gate_u = vec![S::ZERO; hidden];
    let mut d_gate_r = vec![S::ZERO; hidden];
    let mut d_gate_c = vec![S::ZERO; hidden];
    let mut d_reset_h = vec![S::ZERO; hidden];
    let mut reset_h = vec![S::ZERO; hidden];
    for t in (0..len).rev() {
        let h_prev: &[S] = if t == 0 { &zero_state } else { tape.states.row(t - 1) };
        let update = tape.update.row(t);
        let reset = tape.reset.row(t);
        let cand = tape.cand.row(t);
        for i in 0..hidden {
            d_h[i] = d_states.get(t, i) + carry[i];
        }
        for i in 0..hidden {
            let du = d_h[i] * (cand[i] - h_prev[i]);
            d_gate_u[i] = du * update[i] * (S::ONE - update[i]);
            let dc = d_h[i] * update[i];
            d_gate_c[i] = dc * (S::ONE - cand[i] * cand[i]);
            carry[i] = d_h[i] * (S::ONE - update[i]);
            reset_h[i] = reset[i] * h_prev[i];
        }
        d_reset_h.fill(S::ZERO);
        matvec_transpose_acc(&p.w_ch, &d_gate_c, &mut d_reset_h);
        for i in 0..hidden {
            let dr = d_reset_h[i] * h_prev[i];
            d_gate_r[i] = dr * reset[i] * (S::ONE - reset[i]);
            carry[i] += d_reset_h[i] * reset[i];
        }

        let x = inputs.row(t);
        outer_acc(&mut grads.w_ux, &d_gate_u, x);
        outer_acc(&mut grads.w_uh, &d_gate_u, h_prev);
        axpy(S::ONE, &d_gate_u, &mut grads.b_u);
        outer_acc(&mut grads.w_rx, &d_gate_r, x);
        outer_acc(&mut grads.w_rh, &d_gate_r, h_prev);
        axpy(S::ONE, &d_gate_r, &mut grads.b_r);
        outer_acc(&mut grads.w_cx, &d_gate_c, x);
        outer_acc(&mut grads.w_ch, &d_gate_c, &reset_h);
        axpy(S::ONE, &d_gate_c, &mut grads.b_c);

        let d_x = d_inputs.row_mut(t);
        matvec_transpose_acc(&p.w_ux, &d_gate_u, d_x);
        matvec_transpose_acc(&p.w_rx, &d_gate_r, d_x);
        matvec_transpose_acc(&p.w_cx, &d_gate_c, d_x);
        matvec_transpose_acc(&p.w_uh, &d_gate_u, &mut carry);
        matvec_transpose_acc(&p.w_rh, &d_gate_r, &mut carry);
    }
}

/// Exact gradients of any scalar loss whose emission gradient is
/// `d_emissions`, with respect to every network parameter, accumulated into
/// `grads`. Consumes the tape of the matching forward call.
pub fn network_backward_acc<S: Scalar>(
    p: &NetworkParams<S>,
    tape: &ForwardTape<S>,
    d_emissions: &DenseMatrix<S>,
    grads: &mut NetworkGradients<S>,
) {
    let len = tape.top.rows();
    assert_eq!(d_emissions.rows(), len, "emission gradient row count");
    assert_eq!(d_emissions.cols(), p.num_labels(), "emission gradient width");

    // Projection layer.
    let mut d_current = DenseMatrix::zeros(len, tape.top.cols());
    for t in 0..len {
        let d_e = d_emissions.row(t);
        outer_acc(&mut grads.projection_w, d_e, tape.top.row(t));
        axpy(S::ONE, d_e, &mut grads.projection_b);
        matvec_transpose_acc(&p.projection_w, d_e, d_current.row_mut(t));
    }

    // Layers, top down.
    for (k, layer) in p.layers.iter().enumerate().rev() {
        let hidden = layer.hidden_size();
        let layer_tape = &tape.layers[k];
        let layer_grads = &mut grads.layers[k];
        let mut d_input = DenseMatrix::zeros(len, layer.input_size());

        // Forward direction reads columns 0..H of d_current as is.
        let mut d_fwd = DenseMatrix::zeros(len, hidden);
        for t in 0..len {
            d_fwd.row_mut(t).copy_from_slice(&d_current.row(t)[..hidden]);
        }
        gru_scan_backward(
            &layer.forward,
            &layer_tape.input,
            &layer_tape.fwd,
            &d_fwd,
            &mut layer_grads.forward,
            &mut d_input,
        );

        // Backward direction ran over reversed input; map gradients into
        // scan order, run BPTT, then un-reverse its input gradient.
        let mut d_bwd = DenseMatrix::zeros(len, hidden);
        for t in 0..len {
            d_bwd.row_mut(t).copy_from_slice(&d_current.row(len - 1 - t)[hidden..]);
        }
        let reversed_input = reverse_rows(&layer_tape.input);
        let mut d_reversed_input = DenseMatrix::zeros(len, layer.input_size());
        gru_scan_backward(
            &layer.backward,
            &reversed_input,
            &layer_tape.bwd,
            &d_bwd,
            &mut layer_grads.backward,
            &mut d_reversed_input,
        );
        for t in 0..len {
            axpy(S::ONE, d_reversed_input.row(len - 1 - t), d_input.row_mut(t));
        }
        d_current = d_input;
    }

    // Embedding rows.
    for (t, &id) in tape.char_ids.iter().enumerate() {
        axpy(S::ONE, d_current.row(t), grads.embedding.row_mut(id));
    }
}

/// Single-call convenience wrapper around [`network_backward_acc`].
pub fn network_backward<S: Scalar>(
    p: &NetworkParams<S>,
    tape: &ForwardTape<S>,
    d_emissions: &DenseMatrix<S>,
) -> NetworkGradients<S> {
    let mut grads = NetworkGradients::zeros_like(p);
    network_backward_acc(p, tape, d_emissions, &mut grads);
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::{log_likelihood, CrfParams};
    use crate::numkernel::matvec;
    use crate::reference;
    use crate::training::{init_network, seeded_rng, uniform, NetworkShape};
    use rand::Rng;

    fn random_cell(rng: &mut impl Rng, hidden: usize, input: usize) -> GruCellParams<f64> {
        let mut cell = GruCellParams::zeros(hidden, input);
        for m in [
            &mut cell.w_ux,
            &mut cell.w_uh,
            &mut cell.w_rx,
            &mut cell.w_rh,
            &mut cell.w_cx,
            &mut cell.w_ch,
        ] {
            for v in m.data_mut() {
                *v = uniform(rng, -0.6, 0.6);
            }
        }
        for b in [&mut cell.b_u, &mut cell.b_r, &mut cell.b_c] {
            for v in b.iter_mut() {
                *v = uniform(rng, -0.3, 0.3);
            }
        }
        cell
    }

    fn random_network(rng: &mut impl Rng, shape: &NetworkShape) -> NetworkParams<f64> {
        init_network(shape, rng)
    }

    fn small_shape() -> NetworkShape {
        NetworkShape {
            vocab_size: 11,
            embedding_dim: 5,
            num_layers: 2,
            hidden_size: 6,
            num_labels: 6,
        }
    }

    #[test]
    fn embed_shapes_and_lookup() {
        let mut table = EmbeddingTable::<f64>::zeros(8, 128);
        for v in table.rows.row_mut(5).iter_mut() {
            *v = 1.5;
        }
        let out = table.embed(&[5]).unwrap();
        assert_eq!((out.rows(), out.cols()), (1, 128));
        assert!(out.row(0).iter().all(|&v| v == 1.5));

        let unk = table.embed(&[UNK_ID]).unwrap();
        assert!(unk.row(0).iter().all(|&v| v == 0.0));

        let seq = table.embed(&[2, 3, 5, 7, 5, 0, 1]).unwrap();
        assert_eq!((seq.rows(), seq.cols()), (7, 128));

        assert!(matches!(table.embed(&[8]), Err(Error::CharOutOfRange { .. })));
    }

    #[test]
    fn gru_step_zero_weights() {
        let cell = GruCellParams::<f64>::zeros(4, 3);
        // All-zero weights, zero state: u = 0.5, candidate = 0, h stays 0.
        let h = cell.step(&[1.0, -2.0, 3.0], &[0.0; 4]);
        assert_eq!(h, vec![0.0; 4]);
        // Nonzero previous state halves: h = (1 - 0.5) * h_prev.
        let h = cell.step(&[1.0, -2.0, 3.0], &[0.8, -0.4, 0.2, 1.0]);
        assert_eq!(h, vec![0.4, -0.2, 0.1, 0.5]);
    }

    #[test]
    fn gru_step_matches_scalar_reference() {
        let mut rng = seeded_rng(31);
        for _ in 0..30 {
            let cell = random_cell(&mut rng, 3, 3);
            let x: Vec<f64> = (0..3).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
            let h_prev: Vec<f64> = (0..3).map(|_| uniform(&mut rng, -0.9, 0.9)).collect();
            let fast = cell.step(&x, &h_prev);
            let slow = reference::gru_step_scalar(&cell, &x, &h_prev);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    #[should_panic(expected = "input length")]
    fn gru_step_dimension_mismatch_panics() {
        let cell = GruCellParams::<f64>::zeros(4, 3);
        cell.step(&[1.0, 2.0], &[0.0; 4]);
    }

    #[test]
    fn bi_gru_layer_single_step_is_two_independent_cells() {
        let mut rng = seeded_rng(37);
        let layer = BiGruLayerParams {
            forward: random_cell(&mut rng, 5, 4),
            backward: random_cell(&mut rng, 5, 4),
        };
        let input = DenseMatrix::from_vec(1, 4, (0..4).map(|_| uniform(&mut rng, -1.0, 1.0)).collect());
        let out = bi_gru_layer(&layer, &input);
        assert_eq!((out.rows(), out.cols()), (1, 10));
        let fwd = layer.forward.step(input.row(0), &[0.0; 5]);
        let bwd = layer.backward.step(input.row(0), &[0.0; 5]);
        assert_eq!(&out.row(0)[..5], fwd.as_slice());
        assert_eq!(&out.row(0)[5..], bwd.as_slice());
    }

    #[test]
    fn bi_gru_layer_zero_params_zero_output() {
        let layer = BiGruLayerParams::<f64>::zeros(3, 2);
        let input = DenseMatrix::from_vec(4, 2, vec![1.0; 8]);
        let out = bi_gru_layer(&layer, &input);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bi_gru_layer_matches_reversal_reference() {
        // Reference route: reverse the input, run the backward cell as a
        // plain forward composition of single steps, reverse the result.
        let mut rng = seeded_rng(41);
        let layer = BiGruLayerParams {
            forward: random_cell(&mut rng, 4, 3),
            backward: random_cell(&mut rng, 4, 3),
        };
        let len = 7;
        let input =
            DenseMatrix::from_vec(len, 3, (0..len * 3).map(|_| uniform(&mut rng, -1.0, 1.0)).collect());
        let out = bi_gru_layer(&layer, &input);

        let mut h = vec![0.0; 4];
        for t in 0..len {
            h = layer.forward.step(input.row(t), &h);
            assert!(out.row(t)[..4].iter().zip(&h).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
        let mut h = vec![0.0; 4];
        for t in (0..len).rev() {
            h = layer.backward.step(input.row(t), &h);
            assert!(out.row(t)[4..].iter().zip(&h).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let mut rng = seeded_rng(43);
        let p = random_network(&mut rng, &small_shape());
        let ids = [2usize, 3, 4, 5, 6, 7, 8, 9, 10, 2];
        let a = network_forward(&p, &ids).unwrap();
        assert_eq!((a.rows(), a.cols()), (10, 6));
        let b = network_forward(&p, &ids).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_matches_composed_layer_calls() {
        let mut rng = seeded_rng(47);
        let p = random_network(&mut rng, &small_shape());
        let ids = [4usize, 9, 2, 6, 3];
        let full = network_forward(&p, &ids).unwrap();

        let embedded = p.embedding.embed(&ids).unwrap();
        let l1 = bi_gru_layer(&p.layers[0], &embedded);
        let l2 = bi_gru_layer(&p.layers[1], &l1);
        let mut composed = DenseMatrix::zeros(5, 6);
        for t in 0..5 {
            let mut row = matvec(&p.projection_w, l2.row(t));
            for (e, b) in row.iter_mut().zip(&p.projection_b) {
                *e += *b;
            }
            composed.row_mut(t).copy_from_slice(&row);
        }
        assert_eq!(full, composed);
    }

    #[test]
    fn hidden_states_stay_in_open_unit_interval() {
        let mut rng = seeded_rng(53);
        for _ in 0..5 {
            let cell = random_cell(&mut rng, 6, 4);
            let mut h = vec![0.0; 6];
            for _ in 0..40 {
                let x: Vec<f64> = (0..4).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
                h = cell.step(&x, &h);
                assert!(h.iter().all(|&v| v > -1.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn masked_forward_ignores_padding() {
        let mut rng = seeded_rng(59);
        let p = random_network(&mut rng, &small_shape());
        let ids = [4usize, 9, 2];
        let mut padded = ids.to_vec();
        padded.extend([PAD_ID; 5]);
        let plain = network_forward(&p, &ids).unwrap();
        let masked = network_forward_masked(&p, &padded, 3).unwrap();
        assert_eq!(plain, masked);
    }

    #[test]
    fn backward_zero_emission_gradient_gives_zero_grads() {
        let mut rng = seeded_rng(61);
        let p = random_network(&mut rng, &small_shape());
        let ids = [2usize, 5, 7];
        let (_, tape) = network_forward_training(&p, &ids).unwrap();
        let grads = network_backward(&p, &tape, &DenseMatrix::zeros(3, 6));
        assert!(grads.embedding.data().iter().all(|&v| v == 0.0));
        assert!(grads.projection_w.data().iter().all(|&v| v == 0.0));
        for layer in &grads.layers {
            assert!(layer.forward.w_ux.data().iter().all(|&v| v == 0.0));
            assert!(layer.backward.w_ch.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn projection_bias_gradient_is_column_sum() {
        let mut rng = seeded_rng(67);
        let p = random_network(&mut rng, &small_shape());
        let ids = [2usize, 5, 7, 9];
        let (_, tape) = network_forward_training(&p, &ids).unwrap();
        let d = DenseMatrix::from_vec(4, 6, (0..24).map(|_| uniform(&mut rng, -1.0, 1.0)).collect());
        let grads = network_backward(&p, &tape, &d);
        for l in 0..6 {
            let col_sum: f64 = (0..4).map(|t| d.get(t, l)).sum();
            assert!((grads.projection_b[l] - col_sum).abs() <= 1e-12);
        }
    }

    /// Full finite-difference check of every parameter group through the
    /// composed loss `crf::log_likelihood(network_forward(params, ids))`.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded_rng(71);
        let shape = small_shape();
        let p = random_network(&mut rng, &shape);
        let ids = [2usize, 5, 7, 9, 4];
        let labels = [0usize, 3, 2, 2, 5];
        let crf = CrfParams {
            transitions: DenseMatrix::from_vec(6, 6, (0..36).map(|_| uniform(&mut rng, -0.5, 0.5)).collect()),
            start_scores: (0..6).map(|_| uniform(&mut rng, -0.5, 0.5)).collect(),
        };

        let (emissions, tape) = network_forward_training(&p, &ids).unwrap();
        let ll = log_likelihood(&emissions, &labels, &crf).unwrap();
        let grads = network_backward(&p, &tape, &ll.d_emissions);
        let analytic = reference::flatten_network_grads(&grads);
        let flat = reference::flatten_network(&p);
        assert_eq!(analytic.len(), flat.len());

        let loss_at = |coords: &[f64]| -> f64 {
            let mut probe = p.clone();
            reference::assign_network(&mut probe, coords);
            let e = network_forward(&probe, &ids).unwrap();
            log_likelihood(&e, &labels, &crf).unwrap().value
        };

        let step = 1e-4;
        let mut probe = flat.clone();
        for k in 0..flat.len() {
            probe[k] = flat[k] + step;
            let up = loss_at(&probe);
            probe[k] = flat[k] - step;
            let down = loss_at(&probe);
            probe[k] = flat[k];
            let fd = (up - down) / (2.0 * step);
            assert!(
                reference::gradients_close(analytic[k], fd, 1e-5, 1e-8),
                "coordinate {k}: analytic {} vs fd {fd}",
                analytic[k]
            );
        }
        assert!(flat.len() > 1000, "expected to sweep every parameter, got {}", flat.len());
    }
}
