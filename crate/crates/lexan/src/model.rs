//! The binary model file format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic           8 bytes  "LEXAN001"
//! version         u32      (1)
//! vocab_size      u64      including the UNK and PAD rows
//! embedding_dim   u64
//! layer_count     u64
//! hidden_size     u64
//! label_count     u64      (2 x tag count)
//! scheme block    u64 byte length + UTF-8 scheme-file text
//! vocab block     u64 char count + per char: u8 UTF-8 length + bytes,
//!                 in id order starting at id 2
//! parameter blocks, each: u64 rows + u64 cols + rows*cols f32 (row-major):
//!   embedding
//!   per layer, forward then backward cell, gates in update/reset/candidate
//!   order: W_ux W_uh b_u  W_rx W_rh b_r  W_cx W_ch b_c
//!   projection weights, projection bias
//!   CRF transitions, CRF start scores
//! ```
//!
//! Vectors store as `len x 1` blocks. The header dims determine the
//! parameter section's byte size exactly ([`ModelDims::param_bytes`]);
//! loading validates that and rejects trailing bytes, so `save(load(f))`
//! reproduces `f` byte for byte.
//!
//! Training checkpoints may carry a wide (f64) sidecar with magic
//! `LEXANW01` and the same layout, for bit-exact resumption of wide
//! parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::Vocabulary;
use crate::crf::CrfParams;
use crate::error::{Error, Result};
use crate::network::{EmbeddingTable, GruCellParams, NetworkParams};
use crate::numkernel::{DenseMatrix, Scalar};
use crate::tagset::{build_label_space, format_scheme, parse_scheme, LabelSpace};

pub const MAGIC: &[u8; 8] = b"LEXAN001";
pub const WIDE_MAGIC: &[u8; 8] = b"LEXANW01";
pub const FORMAT_VERSION: u32 = 1;

/// A complete trained model: scheme, vocabulary, encoder and CRF.
#[derive(Clone, Debug)]
pub struct LexModel<S> {
    pub space: LabelSpace,
    pub vocab: Vocabulary,
    pub network: NetworkParams<S>,
    pub crf: CrfParams<S>,
}

impl<S: Scalar> LexModel<S> {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab_size: self.vocab.size() as u64,
            embedding_dim: self.network.embedding.dim() as u64,
            layer_count: self.network.layers.len() as u64,
            hidden_size: self.network.hidden_size() as u64,
            label_count: self.space.len() as u64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.network.embedding.vocab_size() != self.vocab.size() {
            return Err(Error::Model(format!(
                "embedding has {} rows for a vocabulary of {}",
                self.network.embedding.vocab_size(),
                self.vocab.size()
            )));
        }
        if self.network.num_labels() != self.space.len()
            || self.crf.num_labels() != self.space.len()
        {
            return Err(Error::Model("label count mismatch between components".into()));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> LexModel<T> {
        LexModel {
            space: self.space.clone(),
            vocab: self.vocab.clone(),
            network: self.network.cast(),
            crf: self.crf.cast(),
        }
    }
}

/// Header dimensions; they fix the parameter payload size exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab_size: u64,
    pub embedding_dim: u64,
    pub layer_count: u64,
    pub hidden_size: u64,
    pub label_count: u64,
}

impl ModelDims {
    /// Exact byte size of the parameter section for a value width of
    /// `value_bytes` (4 for the model file, 8 for the wide sidecar).
    pub fn param_bytes_with(self, value_bytes: u64) -> u64 {
        let block = |rows: u64, cols: u64| 16 + rows * cols * value_bytes;
        let h = self.hidden_size;
        let mut total = block(self.vocab_size, self.embedding_dim);
        let mut input = self.embedding_dim;
        for _ in 0..self.layer_count {
            // Two cells; per cell three gates of W_x + W_h + b.
            total += 2 * (3 * (block(h, input) + block(h, h) + block(h, 1)));
            input = 2 * h;
        }
        total += block(self.label_count, input) + block(self.label_count, 1);
        total += block(self.label_count, self.label_count) + block(self.label_count, 1);
        total
    }

    /// Parameter-section size of the standard (f32) model file.
    pub fn param_bytes(self) -> u64 {
        self.param_bytes_with(4)
    }
}

// ---------------------------------------------------------------------------
// Writing

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_block<S: Scalar>(w: &mut impl Write, rows: usize, cols: usize, data: &[S], wide: bool) -> Result<()> {
    debug_assert_eq!(rows * cols, data.len());
    write_u64(w, rows as u64)?;
    write_u64(w, cols as u64)?;
    let mut buf = Vec::with_capacity(data.len() * if wide { 8 } else { 4 });
    if wide {
        for v in data {
            buf.extend_from_slice(&v.to_f64().to_le_bytes());
        }
    } else {
        for v in data {
            buf.extend_from_slice(&v.to_f32().to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn write_cell<S: Scalar>(w: &mut impl Write, c: &GruCellParams<S>, wide: bool) -> Result<()> {
    write_block(w, c.w_ux.rows(), c.w_ux.cols(), c.w_ux.data(), wide)?;
    write_block(w, c.w_uh.rows(), c.w_uh.cols(), c.w_uh.data(), wide)?;
    write_block(w, c.b_u.len(), 1, &c.b_u, wide)?;
    write_block(w, c.w_rx.rows(), c.w_rx.cols(), c.w_rx.data(), wide)?;
    write_block(w, c.w_rh.rows(), c.w_rh.cols(), c.w_rh.data(), wide)?;
    write_block(w, c.b_r.len(), 1, &c.b_r, wide)?;
    write_block(w, c.w_cx.rows(), c.w_cx.cols(), c.w_cx.data(), wide)?;
    write_block(w, c.w_ch.rows(), c.w_ch.cols(), c.w_ch.data(), wide)?;
    write_block(w, c.b_c.len(), 1, &c.b_c, wide)?;
    Ok(())
}

fn save_impl<S: Scalar>(model: &LexModel<S>, path: &Path, magic: &[u8; 8], wide: bool) -> Result<()> {
    model.validate()?;
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(magic)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    let dims = model.dims();
    write_u64(&mut w, dims.vocab_size)?;
    write_u64(&mut w, dims.embedding_dim)?;
    write_u64(&mut w, dims.layer_count)?;
    write_u64(&mut w, dims.hidden_size)?;
    write_u64(&mut w, dims.label_count)?;

    let scheme_text = format_scheme(model.space.tags());
    write_u64(&mut w, scheme_text.len() as u64)?;
    w.write_all(scheme_text.as_bytes())?;

    write_u64(&mut w, model.vocab.chars().len() as u64)?;
    let mut char_buf = [0u8; 4];
    for &c in model.vocab.chars() {
        let encoded = c.encode_utf8(&mut char_buf);
        w.write_all(&[encoded.len() as u8])?;
        w.write_all(encoded.as_bytes())?;
    }

    let n = &model.network;
    write_block(&mut w, n.embedding.rows.rows(), n.embedding.rows.cols(), n.embedding.rows.data(), wide)?;
    for layer in &n.layers {
        write_cell(&mut w, &layer.forward, wide)?;
        write_cell(&mut w, &layer.backward, wide)?;
    }
    write_block(&mut w, n.projection_w.rows(), n.projection_w.cols(), n.projection_w.data(), wide)?;
    write_block(&mut w, n.projection_b.len(), 1, &n.projection_b, wide)?;
    write_block(&mut w, model.crf.transitions.rows(), model.crf.transitions.cols(), model.crf.transitions.data(), wide)?;
    write_block(&mut w, model.crf.start_scores.len(), 1, &model.crf.start_scores, wide)?;
    w.flush()?;
    Ok(())
}

/// Saves the model in the standard 32-bit format.
pub fn save_model<S: Scalar>(model: &LexModel<S>, path: &Path) -> Result<()> {
    save_impl(model, path, MAGIC, false)
}

/// Saves a wide-precision sidecar (64-bit values, `LEXANW01` magic).
pub fn save_wide_sidecar(model: &LexModel<f64>, path: &Path) -> Result<()> {
    save_impl(model, path, WIDE_MAGIC, true)
}

// ---------------------------------------------------------------------------
// Reading

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn block<S: Scalar>(&mut self, rows: usize, cols: usize, what: &str, wide: bool) -> Result<DenseMatrix<S>> {
        let (r, c) = (self.u64()? as usize, self.u64()? as usize);
        if (r, c) != (rows, cols) {
            return Err(Error::Model(format!(
                "{what}: stored as {r}x{c}, header implies {rows}x{cols}"
            )));
        }
        let width = if wide { 8 } else { 4 };
        let raw = self.bytes(rows * cols * width)?;
        let data = if wide {
            raw.chunks_exact(8)
                .map(|b| S::from_f64(f64::from_le_bytes(b.try_into().unwrap())))
                .collect()
        } else {
            raw.chunks_exact(4)
                .map(|b| S::from_f32(f32::from_le_bytes(b.try_into().unwrap())))
                .collect()
        };
        Ok(DenseMatrix::from_vec(rows, cols, data))
    }

    fn vector<S: Scalar>(&mut self, len: usize, what: &str, wide: bool) -> Result<Vec<S>> {
        let m = self.block::<S>(len, 1, what, wide)?;
        Ok(m.data().to_vec())
    }

    fn cell<S: Scalar>(&mut self, hidden: usize, input: usize, what: &str, wide: bool) -> Result<GruCellParams<S>> {
        Ok(GruCellParams {
            w_ux: self.block(hidden, input, &format!("{what}/W_ux"), wide)?,
            w_uh: self.block(hidden, hidden, &format!("{what}/W_uh"), wide)?,
            b_u: self.vector(hidden, &format!("{what}/b_u"), wide)?,
            w_rx: self.block(hidden, input, &format!("{what}/W_rx"), wide)?,
            w_rh: self.block(hidden, hidden, &format!("{what}/W_rh"), wide)?,
            b_r: self.vector(hidden, &format!("{what}/b_r"), wide)?,
            w_cx: self.block(hidden, input, &format!("{what}/W_cx"), wide)?,
            w_ch: self.block(hidden, hidden, &format!("{what}/W_ch"), wide)?,
            b_c: self.vector(hidden, &format!("{what}/b_c"), wide)?,
        })
    }
}

fn load_impl<S: Scalar>(path: &Path, magic: &[u8; 8], wide: bool) -> Result<LexModel<S>> {
    let file = File::open(path).map_err(|e| Error::Model(format!("cannot open {}: {e}", path.display())))?;
    let mut r = Reader { inner: BufReader::new(file) };

    let got_magic = r.bytes(8)?;
    if got_magic != magic {
        return Err(Error::Model(format!("bad magic {:?}", &got_magic)));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Model(format!("unsupported format version {version}")));
    }
    let dims = ModelDims {
        vocab_size: r.u64()?,
        embedding_dim: r.u64()?,
        layer_count: r.u64()?,
        hidden_size: r.u64()?,
        label_count: r.u64()?,
    };
    if dims.vocab_size < 2 || dims.layer_count < 1 || dims.hidden_size < 1 || dims.embedding_dim < 1 {
        return Err(Error::Model("degenerate dimensions in header".into()));
    }

    let scheme_len = r.u64()? as usize;
    let scheme_text = String::from_utf8(r.bytes(scheme_len)?)
        .map_err(|_| Error::Model("scheme block is not UTF-8".into()))?;
    let tags = parse_scheme(&scheme_text)?;
    let space = build_label_space(tags)?;
    if space.len() as u64 != dims.label_count {
        return Err(Error::Model(format!(
            "scheme implies {} labels, header says {}",
            space.len(),
            dims.label_count
        )));
    }

    let char_count = r.u64()? as usize;
    if char_count as u64 != dims.vocab_size - 2 {
        return Err(Error::Model(format!(
            "vocabulary block has {char_count} characters, header implies {}",
            dims.vocab_size - 2
        )));
    }
    let mut chars = Vec::with_capacity(char_count);
    for _ in 0..char_count {
        let len = r.bytes(1)?[0] as usize;
        if !(1..=4).contains(&len) {
            return Err(Error::Model(format!("vocabulary character of length {len}")));
        }
        let raw = r.bytes(len)?;
        let s = std::str::from_utf8(&raw).map_err(|_| Error::Model("vocabulary is not UTF-8".into()))?;
        let mut it = s.chars();
        let c = it.next().ok_or_else(|| Error::Model("empty vocabulary entry".into()))?;
        if it.next().is_some() {
            return Err(Error::Model("vocabulary entry holds more than one character".into()));
        }
        chars.push(c);
    }
    let vocab = Vocabulary::from_chars(chars)?;

    // The header dims alone determine the parameter payload; check before
    // reading it.
    let pos = r.inner.stream_position()?;
    let total = r.inner.get_ref().metadata()?.len();
    let expected = dims.param_bytes_with(if wide { 8 } else { 4 });
    if total - pos != expected {
        return Err(Error::Model(format!(
            "parameter section is {} bytes, header dims imply {expected}",
            total - pos
        )));
    }

    let (v, d, h, l) = (
        dims.vocab_size as usize,
        dims.embedding_dim as usize,
        dims.hidden_size as usize,
        dims.label_count as usize,
    );
    let embedding = EmbeddingTable { rows: r.block(v, d, "embedding", wide)? };
    let mut layers = Vec::with_capacity(dims.layer_count as usize);
    let mut input = d;
    for k in 0..dims.layer_count {
        let forward = r.cell(h, input, &format!("layer{k}/forward"), wide)?;
        let backward = r.cell(h, input, &format!("layer{k}/backward"), wide)?;
        layers.push(crate::network::BiGruLayerParams { forward, backward });
        input = 2 * h;
    }
    let projection_w = r.block(l, input, "projection", wide)?;
    let projection_b = r.vector(l, "projection bias", wide)?;
    let transitions = r.block(l, l, "transitions", wide)?;
    let start_scores = r.vector(l, "start scores", wide)?;

    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe)? != 0 {
        return Err(Error::Model("trailing bytes after parameter section".into()));
    }

    let model = LexModel {
        space,
        vocab,
        network: NetworkParams { embedding, layers, projection_w, projection_b },
        crf: CrfParams { transitions, start_scores },
    };
    model.validate()?;
    Ok(model)
}

/// Loads a standard model file into the requested precision.
pub fn load_model<S: Scalar>(path: &Path) -> Result<LexModel<S>> {
    load_impl(path, MAGIC, false)
}

/// Loads a wide-precision sidecar.
pub fn load_wide_sidecar(path: &Path) -> Result<LexModel<f64>> {
    load_impl(path, WIDE_MAGIC, true)
}

// ---------------------------------------------------------------------------
// Digests

fn hash_matrix<S: Scalar>(hasher: &mut Sha256, m: &DenseMatrix<S>) {
    hasher.update((m.rows() as u64).to_le_bytes());
    hasher.update((m.cols() as u64).to_le_bytes());
    for v in m.data() {
        hasher.update(v.to_f64().to_le_bytes());
    }
}

fn hash_vector<S: Scalar>(hasher: &mut Sha256, v: &[S]) {
    hasher.update((v.len() as u64).to_le_bytes());
    for x in v {
        hasher.update(x.to_f64().to_le_bytes());
    }
}

fn hash_cell<S: Scalar>(hasher: &mut Sha256, c: &GruCellParams<S>) {
    hash_matrix(hasher, &c.w_ux);
    hash_matrix(hasher, &c.w_uh);
    hash_vector(hasher, &c.b_u);
    hash_matrix(hasher, &c.w_rx);
    hash_matrix(hasher, &c.w_rh);
    hash_vector(hasher, &c.b_r);
    hash_matrix(hasher, &c.w_cx);
    hash_matrix(hasher, &c.w_ch);
    hash_vector(hasher, &c.b_c);
}

/// Hex digest over every network parameter, canonicalized to f64 bytes.
pub fn network_digest<S: Scalar>(p: &NetworkParams<S>) -> String {
    let mut hasher = Sha256::new();
    hash_matrix(&mut hasher, &p.embedding.rows);
    for layer in &p.layers {
        hash_cell(&mut hasher, &layer.forward);
        hash_cell(&mut hasher, &layer.backward);
    }
    hash_matrix(&mut hasher, &p.projection_w);
    hash_vector(&mut hasher, &p.projection_b);
    hex(&hasher.finalize())
}

/// Hex digest over the CRF parameters.
pub fn crf_digest<S: Scalar>(p: &CrfParams<S>) -> String {
    let mut hasher = Sha256::new();
    hash_matrix(&mut hasher, &p.transitions);
    hash_vector(&mut hasher, &p.start_scores);
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{init_params, NetworkShape};

    fn toy_model() -> LexModel<f64> {
        let space = LabelSpace::default_scheme();
        let vocab = Vocabulary::from_chars("天地人水火".chars().collect()).unwrap();
        let shape = NetworkShape {
            vocab_size: vocab.size(),
            embedding_dim: 6,
            num_layers: 2,
            hidden_size: 5,
            num_labels: space.len(),
        };
        let (network, crf) = init_params(99, &shape);
        LexModel { space, vocab, network, crf }
    }

    #[test]
    fn save_load_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let model = toy_model();
        let p1 = dir.path().join("a.lexan");
        let p2 = dir.path().join("b.lexan");
        save_model(&model, &p1).unwrap();
        let loaded: LexModel<f32> = load_model(&p1).unwrap();
        save_model(&loaded, &p2).unwrap();
        let a = std::fs::read(&p1).unwrap();
        let b = std::fs::read(&p2).unwrap();
        assert_eq!(a, b);

        // Loading wide and re-saving narrows back to the identical file.
        let wide: LexModel<f64> = load_model(&p1).unwrap();
        let p3 = dir.path().join("c.lexan");
        save_model(&wide, &p3).unwrap();
        assert_eq!(a, std::fs::read(&p3).unwrap());
    }

    #[test]
    fn loaded_model_preserves_values_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let model = toy_model();
        let path = dir.path().join("m.lexan");
        save_model(&model, &path).unwrap();
        let loaded: LexModel<f32> = load_model(&path).unwrap();
        assert_eq!(loaded.space.len(), model.space.len());
        assert_eq!(loaded.vocab, model.vocab);
        assert_eq!(loaded.network.cast::<f32>(), model.network.cast::<f32>());
        assert_eq!(loaded.crf.cast::<f32>(), model.crf.cast::<f32>());
    }

    #[test]
    fn header_dims_pin_the_parameter_section_size() {
        let dir = tempfile::tempdir().unwrap();
        let model = toy_model();
        let path = dir.path().join("m.lexan");
        save_model(&model, &path).unwrap();

        let dims = model.dims();
        let bytes = std::fs::read(&path).unwrap();
        let scheme_len = format_scheme(model.space.tags()).len() as u64;
        let vocab_block: u64 = 8 + model
            .vocab
            .chars()
            .iter()
            .map(|c| 1 + c.len_utf8() as u64)
            .sum::<u64>();
        let header = 8 + 4 + 5 * 8;
        assert_eq!(
            bytes.len() as u64,
            header + 8 + scheme_len + vocab_block + dims.param_bytes()
        );

        // A truncated or padded file is rejected.
        let mut truncated = bytes.clone();
        truncated.pop();
        let bad = dir.path().join("bad.lexan");
        std::fs::write(&bad, &truncated).unwrap();
        assert!(load_model::<f32>(&bad).is_err());
        let mut padded = bytes;
        padded.push(0);
        std::fs::write(&bad, &padded).unwrap();
        assert!(load_model::<f32>(&bad).is_err());
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"NOTAMODELFILE___").unwrap();
        assert!(matches!(load_model::<f32>(&path), Err(Error::Model(_))));
    }

    #[test]
    fn wide_sidecar_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let model = toy_model();
        let path = dir.path().join("m.lexan.f64");
        save_wide_sidecar(&model, &path).unwrap();
        let loaded = load_wide_sidecar(&path).unwrap();
        assert_eq!(loaded.network, model.network);
        assert_eq!(loaded.crf, model.crf);
        assert_eq!(network_digest(&loaded.network), network_digest(&model.network));
    }

    #[test]
    fn digests_separate_components() {
        let mut model = toy_model();
        let net = network_digest(&model.network);
        let crf = crf_digest(&model.crf);
        model.crf.start_scores[0] += 1.0;
        assert_eq!(network_digest(&model.network), net);
        assert_ne!(crf_digest(&model.crf), crf);
    }
}
