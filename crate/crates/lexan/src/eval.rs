//! Word-level evaluation: overall accuracy over boundaries and tags, plus
//! NER precision/recall/F1 on entity mentions.
//!
//! A system word counts as correct iff a gold word with the identical
//! character span *and* identical tag exists; accuracy divides by the
//! system-produced word count. An entity mention is a single word whose tag
//! is a named-entity tag; low-confidence variants (`nr`, `ns`, `nt`, `t`)
//! count as plain POS tags unless explicitly included.

use std::collections::{BTreeMap, HashSet};

use crate::corpus::WordSentence;
use crate::error::{Error, Result};
use crate::tagset::{LabelSpace, LOW_CONFIDENCE_NE_CODES};

/// Word-level counts behind the accuracy number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AccuracyCounts {
    pub produced: usize,
    pub gold: usize,
    pub correct: usize,
}

/// Precision/recall/F1 with the counts they came from.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Prf {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        Prf {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Full evaluation result.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub counts: AccuracyCounts,
    pub ner: Prf,
    pub per_tag: BTreeMap<String, Prf>,
}

fn spans(sentence: &WordSentence) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::with_capacity(sentence.words.len());
    let mut offset = 0usize;
    for w in &sentence.words {
        let len = w.surface.chars().count();
        out.push((offset, offset + len, w.tag.as_str()));
        offset += len;
    }
    out
}

fn check_alignment(gold: &[WordSentence], sys: &[WordSentence]) -> Result<()> {
    if gold.len() != sys.len() {
        return Err(Error::Alignment(format!(
            "{} gold sentences vs {} system sentences",
            gold.len(),
            sys.len()
        )));
    }
    for (i, (g, s)) in gold.iter().zip(sys).enumerate() {
        if g.chars() != s.chars() {
            return Err(Error::Alignment(format!(
                "sentence {}: character streams differ",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Overall accuracy: correct system words over produced system words,
/// where correct means identical span and identical tag.
pub fn overall_accuracy(gold: &[WordSentence], sys: &[WordSentence]) -> Result<(f64, AccuracyCounts)> {
    check_alignment(gold, sys)?;
    let mut counts = AccuracyCounts::default();
    for (g, s) in gold.iter().zip(sys) {
        let gold_spans: HashSet<(usize, usize, &str)> = spans(g).into_iter().collect();
        counts.gold += g.words.len();
        for span in spans(s) {
            counts.produced += 1;
            if gold_spans.contains(&span) {
                counts.correct += 1;
            }
        }
    }
    let accuracy = if counts.produced == 0 {
        0.0
    } else {
        counts.correct as f64 / counts.produced as f64
    };
    Ok((accuracy, counts))
}

fn ne_tag_codes(space: &LabelSpace, include_low_confidence: bool) -> HashSet<&str> {
    let mut codes: HashSet<&str> = space
        .tags()
        .iter()
        .filter(|t| t.is_named_entity)
        .map(|t| t.code.as_str())
        .collect();
    if include_low_confidence {
        for code in LOW_CONFIDENCE_NE_CODES {
            if space.tag_id(code).is_some() {
                codes.insert(code);
            }
        }
    }
    codes
}

/// NER precision/recall/F1, per entity tag and aggregated. A mention
/// matches iff span and tag are both identical. `include_low_confidence`
/// additionally counts the low-confidence variants as mentions of their own
/// tags.
pub fn ner_prf(
    gold: &[WordSentence],
    sys: &[WordSentence],
    space: &LabelSpace,
    include_low_confidence: bool,
) -> Result<(Prf, BTreeMap<String, Prf>)> {
    check_alignment(gold, sys)?;
    let ne_codes = ne_tag_codes(space, include_low_confidence);
    let mut per_tag: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for code in &ne_codes {
        per_tag.insert((*code).to_string(), (0, 0, 0));
    }
    for (g, s) in gold.iter().zip(sys) {
        let gold_mentions: HashSet<(usize, usize, &str)> = spans(g)
            .into_iter()
            .filter(|(_, _, tag)| ne_codes.contains(tag))
            .collect();
        let sys_mentions: HashSet<(usize, usize, &str)> = spans(s)
            .into_iter()
            .filter(|(_, _, tag)| ne_codes.contains(tag))
            .collect();
        for m in &sys_mentions {
            let slot = per_tag.get_mut(m.2).expect("tag in NE set");
            if gold_mentions.contains(m) {
                slot.0 += 1;
            } else {
                slot.1 += 1;
            }
        }
        for m in &gold_mentions {
            if !sys_mentions.contains(m) {
                per_tag.get_mut(m.2).expect("tag in NE set").2 += 1;
            }
        }
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut by_tag = BTreeMap::new();
    for (code, (t, f, n)) in per_tag {
        tp += t;
        fp += f;
        fn_ += n;
        by_tag.insert(code, Prf::from_counts(t, f, n));
    }
    Ok((Prf::from_counts(tp, fp, fn_), by_tag))
}

/// Runs both metrics and bundles the report.
pub fn evaluate(
    gold: &[WordSentence],
    sys: &[WordSentence],
    space: &LabelSpace,
    include_low_confidence: bool,
) -> Result<EvalReport> {
    let (accuracy, counts) = overall_accuracy(gold, sys)?;
    let (ner, per_tag) = ner_prf(gold, sys, space, include_low_confidence)?;
    Ok(EvalReport { accuracy, counts, ner, per_tag })
}

impl EvalReport {
    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "overall accuracy: {:.3}  ({} correct / {} produced, {} gold)\n",
            self.accuracy, self.counts.correct, self.counts.produced, self.counts.gold
        ));
        out.push_str(&format!(
            "NER aggregate:    P {:.3}  R {:.3}  F1 {:.3}  (tp {}, fp {}, fn {})\n",
            self.ner.precision,
            self.ner.recall,
            self.ner.f1,
            self.ner.true_positives,
            self.ner.false_positives,
            self.ner.false_negatives
        ));
        for (tag, prf) in &self.per_tag {
            out.push_str(&format!(
                "  {:<5} P {:.3}  R {:.3}  F1 {:.3}  (tp {}, fp {}, fn {})\n",
                tag,
                prf.precision,
                prf.recall,
                prf.f1,
                prf.true_positives,
                prf.false_positives,
                prf.false_negatives
            ));
        }
        out
    }

    /// Machine-readable `key=value` lines, one metric per line.
    pub fn to_machine(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("accuracy={:.6}\n", self.accuracy));
        out.push_str(&format!("words_produced={}\n", self.counts.produced));
        out.push_str(&format!("words_gold={}\n", self.counts.gold));
        out.push_str(&format!("words_correct={}\n", self.counts.correct));
        out.push_str(&format!("ner_precision={:.6}\n", self.ner.precision));
        out.push_str(&format!("ner_recall={:.6}\n", self.ner.recall));
        out.push_str(&format!("ner_f1={:.6}\n", self.ner.f1));
        for (tag, prf) in &self.per_tag {
            out.push_str(&format!("ner_{tag}_precision={:.6}\n", prf.precision));
            out.push_str(&format!("ner_{tag}_recall={:.6}\n", prf.recall));
            out.push_str(&format!("ner_{tag}_f1={:.6}\n", prf.f1));
        }
        out
    }
}
