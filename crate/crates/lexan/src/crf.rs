//! Linear-chain CRF over externally supplied emission scores.
//!
//! Scores live in the log domain. A labeling `y` of a length-`T` sentence
//! scores `start[y_1] + Σ trans[y_{i-1}][y_i] + Σ emit[i][y_i]`; training
//! maximizes the conditional log-likelihood with the normalizer taken over
//! all `L^T` sequences, including IOB2-illegal ones. The IOB2 rules are
//! applied only at decode time, by masking inside the Viterbi DP, so they
//! never affect training values.

use crate::error::{Error, Result};
use crate::numkernel::{logsumexp, DenseMatrix, DenseVector, Scalar};
use crate::tagset::LabelSpace;

/// Transition table and start-score vector. No end scores: only sequence
/// starts are constrained.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams<S> {
    /// `[from][to]` score of label `from` followed by label `to`.
    pub transitions: DenseMatrix<S>,
    /// Score of beginning a sequence with each label.
    pub start_scores: DenseVector<S>,
}

impl<S: Scalar> CrfParams<S> {
    pub fn zeros(num_labels: usize) -> Self {
        CrfParams {
            transitions: DenseMatrix::zeros(num_labels, num_labels),
            start_scores: vec![S::ZERO; num_labels],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.start_scores.len()
    }

    pub fn cast<T: Scalar>(&self) -> CrfParams<T> {
        CrfParams {
            transitions: self.transitions.cast(),
            start_scores: self.start_scores.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }

    fn check_emissions(&self, emissions: &DenseMatrix<S>) {
        assert!(emissions.rows() >= 1, "empty emission matrix");
        assert_eq!(
            emissions.cols(),
            self.num_labels(),
            "emission width {} does not match label count {}",
            emissions.cols(),
            self.num_labels()
        );
    }
}

/// Start/transition legality masks applied during decoding.
#[derive(Clone, Copy, Debug)]
pub struct DecodeConstraints<'a> {
    start: &'a [bool],
    transition: &'a [bool],
    num_labels: usize,
}

impl<'a> DecodeConstraints<'a> {
    /// Borrows the masks of a label space. IOB2 masks always admit at least
    /// one start label and one successor per label.
    pub fn from_label_space(space: &'a LabelSpace) -> Self {
        DecodeConstraints {
            start: space.start_mask(),
            transition: space.transition_mask(),
            num_labels: space.len(),
        }
    }

    /// Builds constraints from raw masks, validating that a legal sequence
    /// of any length exists: at least one legal start, and at least one
    /// legal successor for every label.
    pub fn from_masks(start: &'a [bool], transition: &'a [bool]) -> Result<Self> {
        let num_labels = start.len();
        if transition.len() != num_labels * num_labels {
            return Err(Error::LengthMismatch(format!(
                "transition mask length {} for {} labels",
                transition.len(),
                num_labels
            )));
        }
        if !start.iter().any(|&b| b) {
            return Err(Error::Scheme("no legal start label".into()));
        }
        for from in 0..num_labels {
            if !transition[from * num_labels..(from + 1) * num_labels].iter().any(|&b| b) {
                return Err(Error::Scheme(format!("label {from} has no legal successor")));
            }
        }
        Ok(DecodeConstraints { start, transition, num_labels })
    }

    #[inline(always)]
    pub fn start_allowed(&self, label: usize) -> bool {
        self.start[label]
    }

    #[inline(always)]
    pub fn transition_allowed(&self, from: usize, to: usize) -> bool {
        self.transition[from * self.num_labels + to]
    }
}

/// Log-domain score of one labeling.
pub fn sequence_score<S: Scalar>(
    emissions: &DenseMatrix<S>,
    labels: &[usize],
    params: &CrfParams<S>,
) -> Result<S> {
    params.check_emissions(emissions);
    if labels.len() != emissions.rows() {
        return Err(Error::LengthMismatch(format!(
            "{} labels for {} emission rows",
            labels.len(),
            emissions.rows()
        )));
    }
    let num_labels = params.num_labels();
    for &l in labels {
        if l >= num_labels {
            return Err(Error::LabelOutOfRange { id: l, count: num_labels });
        }
    }
    let mut score = params.start_scores[labels[0]];
    for pair in labels.windows(2) {
        score += params.transitions.get(pair[0], pair[1]);
    }
    for (t, &l) in labels.iter().enumerate() {
        score += emissions.get(t, l);
    }
    Ok(score)
}

/// Log-partition over all `L^T` sequences via the forward recursion.
pub fn log_partition<S: Scalar>(emissions: &DenseMatrix<S>, params: &CrfParams<S>) -> S {
    params.check_emissions(emissions);
    let num_labels = params.num_labels();
    let mut alpha: Vec<S> = (0..num_labels)
        .map(|l| params.start_scores[l] + emissions.get(0, l))
        .collect();
    let mut next = vec![S::ZERO; num_labels];
    let mut terms = vec![S::ZERO; num_labels];
    for t in 1..emissions.rows() {
        for to in 0..num_labels {
            for (from, term) in terms.iter_mut().enumerate() {
                *term = alpha[from] + params.transitions.get(from, to);
            }
            next[to] = emissions.get(t, to) + logsumexp(&terms);
        }
        std::mem::swap(&mut alpha, &mut next);
    }
    logsumexp(&alpha)
}

/// Log-likelihood of a labeling, with exact gradients.
///
/// Gradients follow the likelihood-ascent convention: empirical indicator
/// counts minus model marginals (computed by forward–backward).
/// `d_emissions` is what the encoder's backward pass consumes.
#[derive(Clone, Debug)]
pub struct Likelihood<S> {
    pub value: S,
    pub d_emissions: DenseMatrix<S>,
    pub d_transitions: DenseMatrix<S>,
    pub d_start: DenseVector<S>,
}

pub fn log_likelihood<S: Scalar>(
    emissions: &DenseMatrix<S>,
    labels: &[usize],
    params: &CrfParams<S>,
) -> Result<Likelihood<S>> {
    let score = sequence_score(emissions, labels, params)?;
    let len = emissions.rows();
    let num_labels = params.num_labels();

    // Forward and backward tables in the log domain.
    let mut alpha = DenseMatrix::zeros(len, num_labels);
    for l in 0..num_labels {
        alpha.set(0, l, params.start_scores[l] + emissions.get(0, l));
    }
    let mut terms = vec![S::ZERO; num_labels];
    for t in 1..len {
        for to in 0..num_labels {
            for (from, term) in terms.iter_mut().enumerate() {
                *term = alpha.get(t - 1, from) + params.transitions.get(from, to);
            }
            alpha.set(t, to, emissions.get(t, to) + logsumexp(&terms));
        }
    }
    let log_z = logsumexp(alpha.row(len - 1));

    let mut beta = DenseMatrix::zeros(len, num_labels);
    for t in (0..len.saturating_sub(1)).rev() {
        for from in 0..num_labels {
            for (to, term) in terms.iter_mut().enumerate() {
                *term =
                    params.transitions.get(from, to) + emissions.get(t + 1, to) + beta.get(t + 1, to);
            }
            beta.set(t, from, logsumexp(&terms));
        }
    }

    // Unary marginals -> emission and start gradients.
    let mut d_emissions = DenseMatrix::zeros(len, num_labels);
    for t in 0..len {
        for l in 0..num_labels {
            let marginal = (alpha.get(t, l) + beta.get(t, l) - log_z).exp();
            d_emissions.set(t, l, -marginal);
        }
        let row = d_emissions.row_mut(t);
        row[labels[t]] += S::ONE;
    }
    let mut d_start = vec![S::ZERO; num_labels];
    for l in 0..num_labels {
        d_start[l] = -(alpha.get(0, l) + beta.get(0, l) - log_z).exp();
    }
    d_start[labels[0]] += S::ONE;

    // Pairwise marginals -> transition gradients.
    let mut d_transitions = DenseMatrix::zeros(num_labels, num_labels);
    for t in 1..len {
        for from in 0..num_labels {
            let base = alpha.get(t - 1, from);
            let row = d_transitions.row_mut(from);
            for (to, slot) in row.iter_mut().enumerate() {
                let joint = base
                    + params.transitions.get(from, to)
                    + emissions.get(t, to)
                    + beta.get(t, to)
                    - log_z;
                *slot -= joint.exp();
            }
        }
    }
    for pair in labels.windows(2) {
        let v = d_transitions.get(pair[0], pair[1]);
        d_transitions.set(pair[0], pair[1], v + S::ONE);
    }

    Ok(Likelihood {
        value: score - log_z,
        d_emissions,
        d_transitions,
        d_start,
    })
}

/// Highest-scoring label sequence and its score.
///
/// With constraints, illegal starts and transitions are masked to
/// [`Scalar::mask_score`] inside the DP only; parameters are never touched.
/// Ties break toward the lowest label id at the final position and at every
/// backtrack decision, making decoding deterministic.
pub fn viterbi_decode<S: Scalar>(
    emissions: &DenseMatrix<S>,
    params: &CrfParams<S>,
    constraints: Option<&DecodeConstraints<'_>>,
) -> (Vec<usize>, S) {
    params.check_emissions(emissions);
    let len = emissions.rows();
    let num_labels = params.num_labels();

    let mut delta: Vec<S> = (0..num_labels)
        .map(|l| {
            if constraints.is_some_and(|c| !c.start_allowed(l)) {
                S::mask_score()
            } else {
                params.start_scores[l] + emissions.get(0, l)
            }
        })
        .collect();
    let mut next = vec![S::ZERO; num_labels];
    let mut backpointers: Vec<Vec<usize>> = Vec::with_capacity(len.saturating_sub(1));

    for t in 1..len {
        let mut bp = vec![0usize; num_labels];
        for to in 0..num_labels {
            let mut best = S::mask_score();
            let mut best_from = 0usize;
            for from in 0..num_labels {
                if constraints.is_some_and(|c| !c.transition_allowed(from, to)) {
                    continue;
                }
                let cand = delta[from] + params.transitions.get(from, to);
                if cand > best {
                    best = cand;
                    best_from = from;
                }
            }
            next[to] = best + emissions.get(t, to);
            bp[to] = best_from;
        }
        std::mem::swap(&mut delta, &mut next);
        backpointers.push(bp);
    }

    let mut best_label = 0usize;
    let mut best_score = delta[0];
    for (l, &score) in delta.iter().enumerate().skip(1) {
        if score > best_score {
            best_score = score;
            best_label = l;
        }
    }

    let mut labels = vec![best_label; len];
    for t in (1..len).rev() {
        labels[t - 1] = backpointers[t - 1][labels[t]];
    }

    // Report the exact term-by-term score of the chosen sequence rather
    // than the incrementally accumulated DP value.
    let score = sequence_score(emissions, &labels, params).expect("decoded labels are in range");
    (labels, score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use crate::training::{seeded_rng, uniform};
    use rand::Rng;

    fn random_instance(
        rng: &mut impl rand::Rng,
        len: usize,
        num_labels: usize,
    ) -> (DenseMatrix<f64>, CrfParams<f64>) {
        let emissions = DenseMatrix::from_vec(
            len,
            num_labels,
            (0..len * num_labels).map(|_| uniform(rng, -2.0, 2.0)).collect(),
        );
        let params = CrfParams {
            transitions: DenseMatrix::from_vec(
                num_labels,
                num_labels,
                (0..num_labels * num_labels).map(|_| uniform(rng, -1.0, 1.0)).collect(),
            ),
            start_scores: (0..num_labels).map(|_| uniform(rng, -1.0, 1.0)).collect(),
        };
        (emissions, params)
    }

    /// IOB2-like masks for an arbitrary label count: even ids act as
    /// B-labels of tag id/2, odd ids as the matching I-labels.
    fn synthetic_masks(num_labels: usize) -> (Vec<bool>, Vec<bool>) {
        let start: Vec<bool> = (0..num_labels).map(|l| l % 2 == 0).collect();
        let mut transition = vec![false; num_labels * num_labels];
        for from in 0..num_labels {
            for to in 0..num_labels {
                let legal = to % 2 == 0 || from / 2 == to / 2;
                transition[from * num_labels + to] = legal;
            }
        }
        (start, transition)
    }

    #[test]
    fn sequence_score_zero_params() {
        let emissions = DenseMatrix::<f64>::zeros(3, 4);
        let params = CrfParams::zeros(4);
        for labels in [[0, 1, 2], [3, 3, 3]] {
            assert_eq!(sequence_score(&emissions, &labels, &params).unwrap(), 0.0);
        }
    }

    #[test]
    fn sequence_score_single_step() {
        let mut rng = seeded_rng(2);
        let (emissions, params) = random_instance(&mut rng, 1, 5);
        for l in 0..5 {
            let expected = params.start_scores[l] + emissions.get(0, l);
            assert_eq!(sequence_score(&emissions, &[l], &params).unwrap(), expected);
        }
    }

    #[test]
    fn sequence_score_matches_hand_summed_terms() {
        let mut rng = seeded_rng(3);
        for _ in 0..50 {
            let (emissions, params) = random_instance(&mut rng, 4, 6);
            let labels = [2usize, 0, 5, 0];
            let by_terms = reference::sequence_score_by_terms(
                &emissions,
                &labels,
                &params.transitions,
                &params.start_scores,
            );
            let got = sequence_score(&emissions, &labels, &params).unwrap();
            assert!((got - by_terms).abs() <= 1e-12);
        }
    }

    #[test]
    fn sequence_score_errors() {
        let emissions = DenseMatrix::<f64>::zeros(2, 3);
        let params = CrfParams::zeros(3);
        assert!(matches!(
            sequence_score(&emissions, &[0], &params),
            Err(Error::LengthMismatch(_))
        ));
        assert!(matches!(
            sequence_score(&emissions, &[0, 9], &params),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn log_partition_uniform_cases() {
        let emissions = DenseMatrix::<f64>::zeros(1, 56);
        let params = CrfParams::zeros(56);
        assert!((log_partition(&emissions, &params) - 56f64.ln()).abs() <= 1e-12);

        let emissions = DenseMatrix::<f64>::zeros(2, 3);
        let params = CrfParams::zeros(3);
        assert!((log_partition(&emissions, &params) - 2.0 * 3f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn log_partition_matches_enumeration() {
        let mut rng = seeded_rng(5);
        for len in 1..=6 {
            for num_labels in 2..=8 {
                let (emissions, params) = random_instance(&mut rng, len, num_labels);
                let fast = log_partition(&emissions, &params);
                let slow = reference::log_partition_by_enumeration(
                    &emissions,
                    &params.transitions,
                    &params.start_scores,
                );
                assert!(
                    (fast - slow).abs() <= 1e-8,
                    "T={len} L={num_labels}: {fast} vs {slow}"
                );
            }
        }
    }

    #[test]
    fn likelihood_degenerate_single_label() {
        let emissions = DenseMatrix::from_vec(4, 1, vec![0.3, -1.0, 2.0, 0.0]);
        let params = CrfParams::zeros(1);
        let ll = log_likelihood(&emissions, &[0, 0, 0, 0], &params).unwrap();
        assert_eq!(ll.value, 0.0);
        assert!(ll.d_emissions.data().iter().all(|&g| g.abs() <= 1e-15));
        assert!(ll.d_transitions.data().iter().all(|&g| g.abs() <= 1e-15));
        assert!(ll.d_start.iter().all(|&g| g.abs() <= 1e-15));
    }

    #[test]
    fn likelihood_uniform_distribution() {
        let emissions = DenseMatrix::<f64>::zeros(2, 3);
        let params = CrfParams::zeros(3);
        for labels in [[0usize, 0], [1, 2], [2, 0]] {
            let ll = log_likelihood(&emissions, &labels, &params).unwrap();
            assert!((ll.value - (-2.0 * 3f64.ln())).abs() <= 1e-12);
        }
    }

    #[test]
    fn likelihood_is_never_positive_and_marginals_normalize() {
        let mut rng = seeded_rng(7);
        for _ in 0..40 {
            let len = 1 + rng.gen_range(0..5);
            let num_labels = 2 + rng.gen_range(0..5);
            let (emissions, params) = random_instance(&mut rng, len, num_labels);
            let labels: Vec<usize> = (0..len).map(|_| rng.gen_range(0..num_labels)).collect();
            let ll = log_likelihood(&emissions, &labels, &params).unwrap();
            assert!(ll.value <= 1e-12);
            let score = sequence_score(&emissions, &labels, &params).unwrap();
            assert!(log_partition(&emissions, &params) >= score - 1e-12);
            for t in 0..len {
                // Indicator row sums to 1, marginal row sums to 1.
                let row_sum: f64 = ll.d_emissions.row(t).iter().sum();
                assert!(row_sum.abs() <= 1e-10, "row {t} sums to {row_sum}");
            }
        }
    }

    #[test]
    fn likelihood_gradients_match_finite_differences() {
        let mut rng = seeded_rng(11);
        let len = 5;
        let num_labels = 6;
        let (emissions, params) = random_instance(&mut rng, len, num_labels);
        let labels: Vec<usize> = (0..len).map(|_| rng.gen_range(0..num_labels)).collect();
        let ll = log_likelihood(&emissions, &labels, &params).unwrap();
        let step = 1e-4;

        for t in 0..len {
            for l in 0..num_labels {
                let mut f = |x: f64| {
                    let mut e = emissions.clone();
                    e.set(t, l, x);
                    log_likelihood(&e, &labels, &params).unwrap().value
                };
                let fd = reference::central_difference(&mut f, emissions.get(t, l), step);
                assert!(
                    reference::gradients_close(ll.d_emissions.get(t, l), fd, 1e-6, 1e-9),
                    "emission ({t},{l}): {} vs {fd}",
                    ll.d_emissions.get(t, l)
                );
            }
        }
        for a in 0..num_labels {
            for b in 0..num_labels {
                let mut f = |x: f64| {
                    let mut p = params.clone();
                    p.transitions.set(a, b, x);
                    log_likelihood(&emissions, &labels, &p).unwrap().value
                };
                let fd = reference::central_difference(&mut f, params.transitions.get(a, b), step);
                assert!(
                    reference::gradients_close(ll.d_transitions.get(a, b), fd, 1e-6, 1e-9),
                    "transition ({a},{b})"
                );
            }
        }
        for l in 0..num_labels {
            let mut f = |x: f64| {
                let mut p = params.clone();
                p.start_scores[l] = x;
                log_likelihood(&emissions, &labels, &p).unwrap().value
            };
            let fd = reference::central_difference(&mut f, params.start_scores[l], step);
            assert!(reference::gradients_close(ll.d_start[l], fd, 1e-6, 1e-9), "start {l}");
        }
    }

    #[test]
    fn viterbi_single_step_constrained_takes_best_b_label() {
        let mut rng = seeded_rng(13);
        let (start, transition) = synthetic_masks(6);
        let constraints = DecodeConstraints::from_masks(&start, &transition).unwrap();
        for _ in 0..20 {
            let (emissions, params) = random_instance(&mut rng, 1, 6);
            let (labels, score) = viterbi_decode(&emissions, &params, Some(&constraints));
            let mut expect_label = 0;
            let mut expect_score = f64::NEG_INFINITY;
            for l in (0..6).step_by(2) {
                let s = params.start_scores[l] + emissions.get(0, l);
                if s > expect_score {
                    expect_score = s;
                    expect_label = l;
                }
            }
            assert_eq!(labels, vec![expect_label]);
            assert!((score - expect_score).abs() <= 1e-12);
        }
    }

    #[test]
    fn viterbi_all_equal_scores_breaks_ties_to_first_b_label() {
        let emissions = DenseMatrix::<f64>::zeros(5, 6);
        let params = CrfParams::zeros(6);
        let (start, transition) = synthetic_masks(6);
        let constraints = DecodeConstraints::from_masks(&start, &transition).unwrap();
        let (labels, score) = viterbi_decode(&emissions, &params, Some(&constraints));
        assert_eq!(labels, vec![0; 5]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn viterbi_matches_enumeration_on_grid() {
        let mut rng = seeded_rng(17);
        for len in 1..=6 {
            for num_labels in 2..=8 {
                let (start, transition) = synthetic_masks(num_labels);
                let constraints = DecodeConstraints::from_masks(&start, &transition).unwrap();
                for _ in 0..10 {
                    let (emissions, params) = random_instance(&mut rng, len, num_labels);

                    let (labels, score) = viterbi_decode(&emissions, &params, None);
                    let (ref_labels, ref_score) = reference::best_sequence_by_enumeration(
                        &emissions,
                        &params.transitions,
                        &params.start_scores,
                        None,
                    );
                    assert!((score - ref_score).abs() <= 1e-9);
                    assert_eq!(labels, ref_labels, "unconstrained T={len} L={num_labels}");

                    let (clabels, cscore) = viterbi_decode(&emissions, &params, Some(&constraints));
                    let (ref_clabels, ref_cscore) = reference::best_sequence_by_enumeration(
                        &emissions,
                        &params.transitions,
                        &params.start_scores,
                        Some((&start, &transition)),
                    );
                    assert!((cscore - ref_cscore).abs() <= 1e-9);
                    assert_eq!(clabels, ref_clabels, "constrained T={len} L={num_labels}");
                    assert!(cscore <= score + 1e-12);
                }
            }
        }
    }

    #[test]
    fn constrained_decode_never_mutates_params() {
        let mut rng = seeded_rng(19);
        let (emissions, params) = random_instance(&mut rng, 4, 6);
        let before = params.clone();
        let (start, transition) = synthetic_masks(6);
        let constraints = DecodeConstraints::from_masks(&start, &transition).unwrap();
        let _ = viterbi_decode(&emissions, &params, Some(&constraints));
        assert_eq!(params, before);
        // Training values are unaffected by constraints by construction:
        // the likelihood never sees the masks.
        let labels = [0usize, 2, 3, 2];
        let ll = log_likelihood(&emissions, &labels, &params).unwrap();
        let ll_again = log_likelihood(&emissions, &labels, &params).unwrap();
        assert_eq!(ll.value, ll_again.value);
    }

    #[test]
    fn per_step_emission_shift_preserves_argmax_and_gradients() {
        let mut rng = seeded_rng(23);
        let (emissions, params) = random_instance(&mut rng, 4, 5);
        let labels = [1usize, 0, 4, 2];
        let base_ll = log_likelihood(&emissions, &labels, &params).unwrap();
        let (base_path, base_score) = viterbi_decode(&emissions, &params, None);

        let mut shifted = emissions.clone();
        let shift = 3.7;
        for t in 0..shifted.rows() {
            for l in 0..shifted.cols() {
                let v = shifted.get(t, l);
                shifted.set(t, l, v + shift);
            }
        }
        let (path, score) = viterbi_decode(&shifted, &params, None);
        assert_eq!(path, base_path);
        assert!((score - (base_score + shift * 4.0)).abs() <= 1e-9);

        let ll = log_likelihood(&shifted, &labels, &params).unwrap();
        assert!((ll.value - base_ll.value).abs() <= 1e-9);
        for (a, b) in ll.d_emissions.data().iter().zip(base_ll.d_emissions.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn from_masks_validates() {
        let start = [false, false];
        let transition = [true, true, true, true];
        assert!(DecodeConstraints::from_masks(&start, &transition).is_err());
        let start = [true, true];
        let transition = [false, false, true, true];
        assert!(DecodeConstraints::from_masks(&start, &transition).is_err());
        let transition = [true, false, true, false];
        assert!(DecodeConstraints::from_masks(&start, &transition).is_ok());
        assert!(DecodeConstraints::from_masks(&start, &[true; 3]).is_err());
    }

    #[test]
    fn narrow_precision_decode_agrees_with_wide() {
        let mut rng = seeded_rng(29);
        let (start, transition) = synthetic_masks(8);
        let constraints = DecodeConstraints::from_masks(&start, &transition).unwrap();
        for _ in 0..30 {
            let (emissions, params) = random_instance(&mut rng, 6, 8);
            let narrow_emissions: DenseMatrix<f32> = emissions.cast();
            let narrow_params: CrfParams<f32> = params.cast();
            let (wide, _) = viterbi_decode(&emissions, &params, Some(&constraints));
            let (narrow, _) = viterbi_decode(&narrow_emissions, &narrow_params, Some(&constraints));
            assert_eq!(wide, narrow);
        }
    }
}
