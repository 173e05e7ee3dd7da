//! Training: uniform initialization, balanced non-replacement batch
//! sampling over multiple corpora, SGD with a separate embedding learning
//! rate, periodic CRF-only fine-tuning on the human corpus, and early
//! stopping on a development set.
//!
//! Everything is seeded and single-writer, so a run is reproducible from
//! `(seed, corpora, config)`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    build_vocabulary, to_iob2, CorpusSet, SourceKind, Vocabulary, WordSentence,
};
use crate::crf::{log_likelihood, viterbi_decode, CrfParams, DecodeConstraints};
use crate::error::{Error, Result};
use crate::eval::overall_accuracy;
use crate::model::LexModel;
use crate::network::{
    network_backward_acc, BiGruLayerParams, EmbeddingTable, Forwarder, GruCellParams,
    NetworkGradients, NetworkParams,
};
use crate::numkernel::{axpy, DenseMatrix, Scalar};
use crate::tagset::LabelSpace;

/// The project-wide seeded generator.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

// ---------------------------------------------------------------------------
// Initialization

/// Architecture of a fresh network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkShape {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_labels: usize,
}

const INIT_RANGE: f64 = 0.1;

fn init_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix<f64> {
    DenseMatrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| uniform(rng, -INIT_RANGE, INIT_RANGE)).collect(),
    )
}

fn init_vector(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| uniform(rng, -INIT_RANGE, INIT_RANGE)).collect()
}

fn init_cell(hidden: usize, input: usize, rng: &mut impl Rng) -> GruCellParams<f64> {
    GruCellParams {
        w_ux: init_matrix(hidden, input, rng),
        w_uh: init_matrix(hidden, hidden, rng),
        b_u: init_vector(hidden, rng),
        w_rx: init_matrix(hidden, input, rng),
        w_rh: init_matrix(hidden, hidden, rng),
        b_r: init_vector(hidden, rng),
        w_cx: init_matrix(hidden, input, rng),
        w_ch: init_matrix(hidden, hidden, rng),
        b_c: init_vector(hidden, rng),
    }
}

/// Fresh network with every element drawn i.i.d. uniform in [-0.1, 0.1).
pub fn init_network(shape: &NetworkShape, rng: &mut impl Rng) -> NetworkParams<f64> {
    let mut input = shape.embedding_dim;
    let mut layers = Vec::with_capacity(shape.num_layers);
    let embedding = EmbeddingTable { rows: init_matrix(shape.vocab_size, shape.embedding_dim, rng) };
    for _ in 0..shape.num_layers {
        layers.push(BiGruLayerParams {
            forward: init_cell(shape.hidden_size, input, rng),
            backward: init_cell(shape.hidden_size, input, rng),
        });
        input = 2 * shape.hidden_size;
    }
    NetworkParams {
        embedding,
        layers,
        projection_w: init_matrix(shape.num_labels, input, rng),
        projection_b: init_vector(shape.num_labels, rng),
    }
}

/// Fresh CRF with the same uniform initialization.
pub fn init_crf(num_labels: usize, rng: &mut impl Rng) -> CrfParams<f64> {
    CrfParams {
        transitions: init_matrix(num_labels, num_labels, rng),
        start_scores: init_vector(num_labels, rng),
    }
}

/// Seeded initialization of the whole parameter set, in a fixed draw order
/// so identical seeds give bit-identical parameters.
pub fn init_params(seed: u64, shape: &NetworkShape) -> (NetworkParams<f64>, CrfParams<f64>) {
    let mut rng = seeded_rng(seed);
    let network = init_network(shape, &mut rng);
    let crf = init_crf(shape.num_labels, &mut rng);
    (network, crf)
}

// ---------------------------------------------------------------------------
// Balanced non-replacement sampling

struct CorpusCursor {
    permutation: Vec<usize>,
    cursor: usize,
    restarts: usize,
}

/// Per-corpus shuffled cursors implementing balanced draws without
/// replacement. When a corpus is exhausted mid-draw its permutation is
/// reshuffled and the cursor restarts.
pub struct SamplerState {
    corpora: Vec<CorpusCursor>,
    rng: ChaCha8Rng,
}

impl SamplerState {
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Corpus("sampler needs at least one corpus".into()));
        }
        let mut rng = seeded_rng(seed);
        let corpora = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                if n == 0 {
                    return Err(Error::Corpus(format!("corpus {i} is empty")));
                }
                let mut permutation: Vec<usize> = (0..n).collect();
                permutation.shuffle(&mut rng);
                Ok(CorpusCursor { permutation, cursor: 0, restarts: 0 })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SamplerState { corpora, rng })
    }

    /// Draws exactly `per_corpus` sentences from every corpus, grouped in
    /// corpus order. Returns `(corpus index, sentence index)` pairs.
    pub fn next_batch(&mut self, per_corpus: usize) -> Vec<(usize, usize)> {
        let mut batch = Vec::with_capacity(per_corpus * self.corpora.len());
        for (c, cur) in self.corpora.iter_mut().enumerate() {
            for _ in 0..per_corpus {
                if cur.cursor == cur.permutation.len() {
                    cur.permutation.shuffle(&mut self.rng);
                    cur.cursor = 0;
                    cur.restarts += 1;
                }
                batch.push((c, cur.permutation[cur.cursor]));
                cur.cursor += 1;
            }
        }
        batch
    }

    /// How many times a corpus has been reshuffled so far.
    pub fn restarts(&self, corpus: usize) -> usize {
        self.corpora[corpus].restarts
    }
}

// ---------------------------------------------------------------------------
// Optimizer

/// Learning rates and batch composition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub embedding_lr: f64,
    pub batch_size: usize,
    pub per_corpus: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { base_lr: 1e-3, embedding_lr: 5e-3, batch_size: 250, per_corpus: 50 }
    }
}

impl OptimizerConfig {
    /// Balanced batches must satisfy `batch_size = per_corpus x corpora`.
    pub fn validate(&self, corpus_count: usize) -> Result<()> {
        if self.per_corpus == 0 {
            return Err(Error::Config("per_corpus must be positive".into()));
        }
        if self.batch_size != self.per_corpus * corpus_count {
            return Err(Error::Config(format!(
                "batch_size {} != per_corpus {} x {corpus_count} corpora",
                self.batch_size, self.per_corpus
            )));
        }
        Ok(())
    }
}

/// Cadences of the training loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    /// Fine-tune the CRF on the human corpus after every this many batches.
    pub finetune_every: usize,
    pub max_epochs: usize,
    /// Evaluate on the dev set after every this many batches.
    pub eval_every: usize,
    /// Stop after this many consecutive non-improving evaluations.
    pub patience: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { finetune_every: 10_000, max_epochs: 1, eval_every: 1_000, patience: 3 }
    }
}

/// Batch-level gradient accumulator for network and CRF parameters.
pub struct BatchGradients<S: Scalar> {
    pub network: NetworkGradients<S>,
    pub transitions: DenseMatrix<S>,
    pub start_scores: Vec<S>,
}

impl<S: Scalar> BatchGradients<S> {
    pub fn zeros_like(network: &NetworkParams<S>, num_labels: usize) -> Self {
        BatchGradients {
            network: NetworkGradients::zeros_like(network),
            transitions: DenseMatrix::zeros(num_labels, num_labels),
            start_scores: vec![S::ZERO; num_labels],
        }
    }

    pub fn clear(&mut self) {
        self.network.clear();
        self.transitions.fill(S::ZERO);
        self.start_scores.fill(S::ZERO);
    }

    pub fn scale(&mut self, c: S) {
        self.network.scale(c);
        self.transitions.scale(c);
        for v in self.start_scores.iter_mut() {
            *v *= c;
        }
    }
}

fn apply_matrix<S: Scalar>(p: &mut DenseMatrix<S>, g: &DenseMatrix<S>, lr: S) {
    assert_eq!((p.rows(), p.cols()), (g.rows(), g.cols()), "sgd shape mismatch");
    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
        *x += lr * *d;
    }
}

fn apply_cell<S: Scalar>(p: &mut GruCellParams<S>, g: &crate::network::GruCellGrads<S>, lr: S) {
    apply_matrix(&mut p.w_ux, &g.w_ux, lr);
    apply_matrix(&mut p.w_uh, &g.w_uh, lr);
    axpy(lr, &g.b_u, &mut p.b_u);
    apply_matrix(&mut p.w_rx, &g.w_rx, lr);
    apply_matrix(&mut p.w_rh, &g.w_rh, lr);
    axpy(lr, &g.b_r, &mut p.b_r);
    apply_matrix(&mut p.w_cx, &g.w_cx, lr);
    apply_matrix(&mut p.w_ch, &g.w_ch, lr);
    axpy(lr, &g.b_c, &mut p.b_c);
}

/// One SGD step in the likelihood-ascent direction: `p += lr * g`, with the
/// embedding learning rate applied to embedding rows and the base rate
/// everywhere else. `grads` must already be averaged over the batch.
pub fn sgd_step<S: Scalar>(
    network: &mut NetworkParams<S>,
    crf: &mut CrfParams<S>,
    grads: &BatchGradients<S>,
    cfg: &OptimizerConfig,
) {
    let base = S::from_f64(cfg.base_lr);
    let emb = S::from_f64(cfg.embedding_lr);
    apply_matrix(&mut network.embedding.rows, &grads.network.embedding, emb);
    for (layer, g) in network.layers.iter_mut().zip(&grads.network.layers) {
        apply_cell(&mut layer.forward, &g.forward, base);
        apply_cell(&mut layer.backward, &g.backward, base);
    }
    apply_matrix(&mut network.projection_w, &grads.network.projection_w, base);
    axpy(base, &grads.network.projection_b, &mut network.projection_b);
    apply_matrix(&mut crf.transitions, &grads.transitions, base);
    axpy(base, &grads.start_scores, &mut crf.start_scores);
}

// ---------------------------------------------------------------------------
// Sentence encoding

/// A sentence ready for the network: character ids and gold label ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSentence {
    pub char_ids: Vec<usize>,
    pub labels: Vec<usize>,
}

pub fn encode_sentence(
    sentence: &WordSentence,
    space: &LabelSpace,
    vocab: &Vocabulary,
) -> Result<EncodedSentence> {
    let char_sentence = to_iob2(sentence, space)?;
    Ok(EncodedSentence {
        char_ids: vocab.encode(&char_sentence.chars),
        labels: char_sentence.labels,
    })
}

/// Forward/likelihood/backward over one batch, accumulating averaged
/// gradients into `grads` and applying one SGD step. Returns the mean
/// per-sentence log-likelihood.
pub fn train_batch_step<S: Scalar>(
    network: &mut NetworkParams<S>,
    crf: &mut CrfParams<S>,
    sentences: &[&EncodedSentence],
    grads: &mut BatchGradients<S>,
    cfg: &OptimizerConfig,
) -> Result<f64> {
    assert!(!sentences.is_empty(), "empty batch");
    grads.clear();
    let forwarder = Forwarder::new(network)?;
    let mut total = 0.0;
    for sentence in sentences {
        let (emissions, tape) = forwarder.forward_training(&sentence.char_ids)?;
        let ll = log_likelihood(&emissions, &sentence.labels, crf)?;
        total += ll.value.to_f64();
        network_backward_acc(network, &tape, &ll.d_emissions, &mut grads.network);
        grads.transitions.add_assign(&ll.d_transitions);
        axpy(S::ONE, &ll.d_start, &mut grads.start_scores);
    }
    let inv = S::from_f64(1.0 / sentences.len() as f64);
    grads.scale(inv);
    sgd_step(network, crf, grads, cfg);
    Ok(total / sentences.len() as f64)
}

// ---------------------------------------------------------------------------
// CRF fine-tuning

/// Re-estimates the CRF on the human corpus with the network frozen.
///
/// Emissions are computed once under the frozen network; each step applies
/// one full-corpus averaged likelihood-ascent update to the transition and
/// start scores only.
pub fn finetune_crf<S: Scalar>(
    network: &NetworkParams<S>,
    crf: &mut CrfParams<S>,
    human: &[EncodedSentence],
    steps: usize,
    lr: f64,
) -> Result<()> {
    if human.is_empty() {
        return Err(Error::Corpus("fine-tuning requires a non-empty human corpus".into()));
    }
    let forwarder = Forwarder::new(network)?;
    let emissions = human
        .iter()
        .map(|s| forwarder.forward(&s.char_ids))
        .collect::<Result<Vec<_>>>()?;
    let num_labels = crf.num_labels();
    let rate = S::from_f64(lr);
    let inv = S::from_f64(1.0 / human.len() as f64);
    for _ in 0..steps {
        let mut d_transitions = DenseMatrix::zeros(num_labels, num_labels);
        let mut d_start = vec![S::ZERO; num_labels];
        for (e, sentence) in emissions.iter().zip(human) {
            let ll = log_likelihood(e, &sentence.labels, crf)?;
            d_transitions.add_assign(&ll.d_transitions);
            axpy(S::ONE, &ll.d_start, &mut d_start);
        }
        d_transitions.scale(inv);
        apply_matrix(&mut crf.transitions, &d_transitions, rate);
        for (s, d) in crf.start_scores.iter_mut().zip(&d_start) {
            *s += rate * inv * *d;
        }
    }
    Ok(())
}

/// Mean log-likelihood of a sentence set under fixed parameters.
pub fn mean_log_likelihood<S: Scalar>(
    network: &NetworkParams<S>,
    crf: &CrfParams<S>,
    sentences: &[EncodedSentence],
) -> Result<f64> {
    let forwarder = Forwarder::new(network)?;
    let mut total = 0.0;
    for s in sentences {
        let emissions = forwarder.forward(&s.char_ids)?;
        total += log_likelihood(&emissions, &s.labels, crf)?.value.to_f64();
    }
    Ok(total / sentences.len() as f64)
}

// ---------------------------------------------------------------------------
// The training loop

/// Everything `train` needs besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub seed: u64,
    pub embedding_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub min_count: usize,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            seed: 42,
            embedding_dim: 128,
            hidden_size: 256,
            num_layers: 2,
            min_count: 2,
            optimizer: OptimizerConfig::default(),
            schedule: Schedule::default(),
        }
    }
}

/// One evaluation record in the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub batch: usize,
    /// Mean per-sentence log-likelihood since the previous evaluation;
    /// `None` for the pre-training baseline entry.
    pub mean_log_likelihood: Option<f64>,
    pub dev_accuracy: f64,
}

/// Full record of a training run.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
    pub batches_run: usize,
    pub stopped_early: bool,
    pub best_batch: usize,
    pub best_accuracy: f64,
}

impl TrainingLog {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            match e.mean_log_likelihood {
                Some(ll) => out.push_str(&format!(
                    "batch={} mean_ll={:.6} dev_accuracy={:.6}\n",
                    e.batch, ll, e.dev_accuracy
                )),
                None => out.push_str(&format!(
                    "batch={} mean_ll=baseline dev_accuracy={:.6}\n",
                    e.batch, e.dev_accuracy
                )),
            }
        }
        out.push_str(&format!(
            "batches_run={} stopped_early={} best_batch={} best_accuracy={:.6}\n",
            self.batches_run, self.stopped_early, self.best_batch, self.best_accuracy
        ));
        out
    }
}

fn decode_dev(
    network: &NetworkParams<f64>,
    crf: &CrfParams<f64>,
    space: &LabelSpace,
    vocab: &Vocabulary,
    dev: &[WordSentence],
) -> Result<f64> {
    let forwarder = Forwarder::new(network)?;
    let constraints = DecodeConstraints::from_label_space(space);
    let mut system = Vec::with_capacity(dev.len());
    for gold in dev {
        let chars = gold.chars();
        let emissions = forwarder.forward(&vocab.encode(&chars))?;
        let (labels, _) = viterbi_decode(&emissions, crf, Some(&constraints));
        let words = space.labels_to_words(&chars, &labels)?;
        system.push(WordSentence {
            words: words
                .into_iter()
                .map(|(surface, tag)| crate::corpus::Word { surface, tag })
                .collect(),
        });
    }
    let (accuracy, _) = overall_accuracy(dev, &system)?;
    Ok(accuracy)
}

/// Trains a model from scratch.
///
/// The loop draws balanced batches, updates by averaged likelihood ascent,
/// fine-tunes the CRF every `finetune_every` batches on the human corpora,
/// and evaluates word-level dev accuracy every `eval_every` batches
/// (plus once before training as the baseline). Training stops when the
/// epoch budget is exhausted or after `patience + 1` consecutive
/// evaluations without improvement; the best-dev parameters are returned.
///
/// One epoch is the number of batches after which the largest corpus has
/// been fully consumed once.
pub fn train(
    corpora: &CorpusSet,
    dev: &[WordSentence],
    space: &LabelSpace,
    settings: &TrainSettings,
) -> Result<(LexModel<f64>, TrainingLog)> {
    settings.optimizer.validate(corpora.corpora.len())?;
    if dev.is_empty() {
        return Err(Error::Config("development set is empty".into()));
    }

    let vocab = build_vocabulary(corpora, settings.min_count);
    let mut encoded: Vec<Vec<EncodedSentence>> = Vec::with_capacity(corpora.corpora.len());
    let mut human = Vec::new();
    for corpus in &corpora.corpora {
        if corpus.sentences.is_empty() {
            return Err(Error::Corpus(format!("corpus `{}` is empty", corpus.name)));
        }
        let sentences = corpus
            .sentences
            .iter()
            .map(|s| encode_sentence(s, space, &vocab))
            .collect::<Result<Vec<_>>>()?;
        if corpus.kind == SourceKind::Human {
            human.extend(sentences.iter().cloned());
        }
        encoded.push(sentences);
    }

    let shape = NetworkShape {
        vocab_size: vocab.size(),
        embedding_dim: settings.embedding_dim,
        num_layers: settings.num_layers,
        hidden_size: settings.hidden_size,
        num_labels: space.len(),
    };
    let (mut network, mut crf) = init_params(settings.seed, &shape);
    let mut sampler = SamplerState::new(&corpora.sizes(), settings.seed.wrapping_add(1))?;

    let max_size = corpora.sizes().into_iter().max().unwrap_or(1);
    let epoch_batches = max_size.div_ceil(settings.optimizer.per_corpus).max(1);
    let budget = settings.schedule.max_epochs * epoch_batches;
    if human.is_empty() && budget >= settings.schedule.finetune_every {
        return Err(Error::Corpus(
            "schedule reaches a fine-tune point but no human corpus is present".into(),
        ));
    }

    let mut log = TrainingLog::default();
    let baseline = decode_dev(&network, &crf, space, &vocab, dev)?;
    log.entries.push(LogEntry { batch: 0, mean_log_likelihood: None, dev_accuracy: baseline });
    let mut best_accuracy = baseline;
    let mut best_batch = 0usize;
    let mut best_params = (network.clone(), crf.clone());
    let mut bad_evaluations = 0usize;

    let mut grads = BatchGradients::zeros_like(&network, space.len());
    let mut window_ll = 0.0;
    let mut window_batches = 0usize;

    for batch_index in 1..=budget {
        let batch = sampler.next_batch(settings.optimizer.per_corpus);
        let sentences: Vec<&EncodedSentence> =
            batch.iter().map(|&(c, i)| &encoded[c][i]).collect();
        let mean_ll =
            train_batch_step(&mut network, &mut crf, &sentences, &mut grads, &settings.optimizer)?;
        window_ll += mean_ll;
        window_batches += 1;
        log.batches_run = batch_index;

        if batch_index % settings.schedule.finetune_every == 0 {
            finetune_crf(&network, &mut crf, &human, 1, settings.optimizer.base_lr)?;
        }

        if batch_index % settings.schedule.eval_every == 0 {
            let accuracy = decode_dev(&network, &crf, space, &vocab, dev)?;
            log.entries.push(LogEntry {
                batch: batch_index,
                mean_log_likelihood: Some(window_ll / window_batches as f64),
                dev_accuracy: accuracy,
            });
            window_ll = 0.0;
            window_batches = 0;
            if accuracy > best_accuracy {
                best_accuracy = accuracy;
                best_batch = batch_index;
                best_params = (network.clone(), crf.clone());
                bad_evaluations = 0;
            } else {
                bad_evaluations += 1;
                if bad_evaluations > settings.schedule.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }

    log.best_batch = best_batch;
    log.best_accuracy = best_accuracy;
    let (network, crf) = if best_batch > 0 || best_accuracy >= baseline {
        best_params
    } else {
        (network, crf)
    };
    Ok((LexModel { space: space.clone(), vocab, network, crf }, log))
}

// ---------------------------------------------------------------------------
// Training config file

/// Parsed `key=value` training configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub settings: TrainSettings,
    pub scheme: Option<PathBuf>,
    pub manifest: PathBuf,
    pub dev: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub wide_checkpoints: bool,
}

/// Parses a training config. Relative paths resolve against `base`.
/// Unknown keys are rejected; `manifest`, `dev` and `checkpoint_dir` are
/// required.
pub fn parse_train_config(text: &str, base: &Path) -> Result<TrainConfig> {
    let mut settings = TrainSettings::default();
    let mut scheme = None;
    let mut manifest = None;
    let mut dev = None;
    let mut checkpoint_dir = None;
    let mut wide_checkpoints = false;

    let resolve = |v: &str| -> PathBuf {
        let p = Path::new(v);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };

    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        let parse_usize = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("line {}: `{key}` wants an integer", i + 1)))
        };
        let parse_f64 = || -> Result<f64> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("line {}: `{key}` wants a number", i + 1)))
        };
        match key {
            "seed" => {
                settings.seed = value.parse().map_err(|_| {
                    Error::Config(format!("line {}: `seed` wants an integer", i + 1))
                })?
            }
            "embedding_dim" => settings.embedding_dim = parse_usize()?,
            "hidden_size" => settings.hidden_size = parse_usize()?,
            "layers" => settings.num_layers = parse_usize()?,
            "min_count" => settings.min_count = parse_usize()?,
            "base_lr" => settings.optimizer.base_lr = parse_f64()?,
            "embedding_lr" => settings.optimizer.embedding_lr = parse_f64()?,
            "batch_size" => settings.optimizer.batch_size = parse_usize()?,
            "per_corpus" => settings.optimizer.per_corpus = parse_usize()?,
            "finetune_every" => settings.schedule.finetune_every = parse_usize()?,
            "max_epochs" => settings.schedule.max_epochs = parse_usize()?,
            "eval_every" => settings.schedule.eval_every = parse_usize()?,
            "patience" => settings.schedule.patience = parse_usize()?,
            "scheme" => scheme = Some(resolve(value)),
            "manifest" => manifest = Some(resolve(value)),
            "dev" => dev = Some(resolve(value)),
            "checkpoint_dir" => checkpoint_dir = Some(resolve(value)),
            "wide_checkpoints" => {
                wide_checkpoints = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => {
                        return Err(Error::Config(format!(
                            "line {}: `wide_checkpoints` wants true or false",
                            i + 1
                        )))
                    }
                }
            }
            other => {
                return Err(Error::Config(format!("line {}: unknown key `{other}`", i + 1)))
            }
        }
    }

    Ok(TrainConfig {
        settings,
        scheme,
        manifest: manifest.ok_or_else(|| Error::Config("missing required key `manifest`".into()))?,
        dev: dev.ok_or_else(|| Error::Config("missing required key `dev`".into()))?,
        checkpoint_dir: checkpoint_dir
            .ok_or_else(|| Error::Config("missing required key `checkpoint_dir`".into()))?,
        wide_checkpoints,
    })
}
