//! Sentence encoder: character-CNN word features concatenated with
//! pretrained word vectors, a bidirectional LSTM, and statistics pooling
//! (elementwise min, max, mean over token positions).
//!
//! The character convolution runs 1-D over character positions with the
//! one-hot dimension as input channels. Convolving the position x channel
//! matrix with a kernel spanning all channels is the equivalent 2-D view of
//! the same operation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CharAlphabet, EmbeddingTable, CHAR_ONE_HOT_DIM};
use crate::numerics::{init, BoundParams, Mode, NodeId, NumericsError, ParameterSet, Result, Tape, Tensor};

pub const ENCODER_PREFIX: &str = "encoder/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub char_dim: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel_size: usize,
    pub dropout: f64,
    pub word_dim: usize,
    /// Recurrent hidden size per direction.
    pub hidden: usize,
    /// Mean-of-word-vectors fallback encoder (single dense layer). Fast and
    /// deliberately weaker; for test runs only.
    pub lightweight: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            char_dim: CHAR_ONE_HOT_DIM,
            conv1_filters: 32,
            conv2_filters: 64,
            kernel_size: 5,
            dropout: 0.2,
            word_dim: 100,
            hidden: 128,
            lightweight: false,
        }
    }
}

impl EncoderConfig {
    /// min/max/mean over forward+backward hidden states: 3 × 2 × hidden.
    pub fn sentence_dim(&self) -> usize {
        3 * 2 * self.hidden
    }

    fn token_dim(&self) -> usize {
        self.conv2_filters + self.word_dim
    }
}

pub struct Encoder {
    pub cfg: EncoderConfig,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Self {
        Encoder { cfg }
    }

    /// Registers all encoder parameters (trainable) under `encoder/`.
    pub fn init_params(&self, params: &mut ParameterSet, rng: &mut impl Rng) {
        let c = &self.cfg;
        if c.lightweight {
            params.insert(
                "encoder/light/weight",
                init::uniform_fan_in(vec![c.sentence_dim(), c.word_dim], c.word_dim, rng),
                true,
            );
            params.insert("encoder/light/bias", Tensor::zeros(vec![c.sentence_dim()]), true);
            return;
        }
        params.insert(
            "encoder/char_conv1/kernel",
            init::uniform_fan_in(
                vec![c.conv1_filters, c.kernel_size, c.char_dim],
                c.kernel_size * c.char_dim,
                rng,
            ),
            true,
        );
        params.insert("encoder/char_conv1/bias", Tensor::zeros(vec![c.conv1_filters]), true);
        params.insert(
            "encoder/char_conv2/kernel",
            init::uniform_fan_in(
                vec![c.conv2_filters, c.kernel_size, c.conv1_filters],
                c.kernel_size * c.conv1_filters,
                rng,
            ),
            true,
        );
        params.insert("encoder/char_conv2/bias", Tensor::zeros(vec![c.conv2_filters]), true);
        for dir in ["fwd", "bwd"] {
            params.insert(
                format!("encoder/lstm_{dir}/input_weights"),
                init::uniform_fan_in(vec![4 * c.hidden, c.token_dim()], c.token_dim(), rng),
                true,
            );
            params.insert(
                format!("encoder/lstm_{dir}/recurrent_weights"),
                init::stacked_orthogonal(4, c.hidden, rng),
                true,
            );
            params.insert(format!("encoder/lstm_{dir}/bias"), Tensor::zeros(vec![4 * c.hidden]), true);
        }
    }

    /// Char-CNN word features: one-hot characters through two convolution
    /// blocks (conv → ReLU → dropout → max-pool) and a temporal max.
    /// Output length equals the second layer's filter count regardless of
    /// word length.
    pub fn encode_word_chars(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        word: &str,
        alphabet: &CharAlphabet,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        if word.is_empty() {
            return Err(NumericsError::EmptyInput {
                op: "encode_word_chars",
            });
        }
        let chars: Vec<char> = word.chars().collect();
        let mut onehot = Tensor::zeros(vec![chars.len(), self.cfg.char_dim]);
        for (i, ch) in chars.iter().enumerate() {
            onehot.data_mut()[i * self.cfg.char_dim + alphabet.index_of(*ch)] = 1.0;
        }
        let mut x = tape.constant(onehot);
        for layer in ["char_conv1", "char_conv2"] {
            let kernel = bound.id(&format!("encoder/{layer}/kernel"))?;
            let bias = bound.id(&format!("encoder/{layer}/bias"))?;
            x = tape.conv1d_same(x, kernel, bias)?;
            x = tape.relu(x);
            x = tape.dropout(x, self.cfg.dropout, mode, rng)?;
            x = tape.maxpool_pairs(x);
        }
        Ok(tape.max_rows(x))
    }

    /// Full sentence encoding to a `sentence_dim()` vector.
    #[allow(clippy::too_many_arguments)]
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        tokens: &[String],
        table: &EmbeddingTable,
        alphabet: &CharAlphabet,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(NumericsError::EmptyInput { op: "encode_sentence" });
        }
        if self.cfg.lightweight {
            let mut mean = vec![0.0; self.cfg.word_dim];
            for t in tokens {
                for (m, v) in mean.iter_mut().zip(table.lookup(t)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|v| *v /= tokens.len() as f64);
            let x = tape.constant(Tensor::from_vec(mean));
            let w = bound.id("encoder/light/weight")?;
            let b = bound.id("encoder/light/bias")?;
            return tape.dense(x, w, b);
        }

        let mut token_nodes = Vec::with_capacity(tokens.len());
        for t in tokens {
            let char_feat = self.encode_word_chars(tape, bound, t, alphabet, mode, rng)?;
            let word_vec = tape.constant(Tensor::from_vec(table.lookup(t).to_vec()));
            token_nodes.push(tape.concat(&[char_feat, word_vec])?);
        }
        let fwd = self.lstm_direction(tape, bound, &token_nodes, "fwd", false)?;
        let bwd = self.lstm_direction(tape, bound, &token_nodes, "bwd", true)?;
        let mut per_token = Vec::with_capacity(tokens.len());
        for (f, b) in fwd.iter().zip(&bwd) {
            per_token.push(tape.concat(&[*f, *b])?);
        }
        stats_pool(tape, &per_token)
    }

    /// One LSTM direction; returns the hidden state per token position in
    /// the original token order.
    fn lstm_direction(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        tokens: &[NodeId],
        dir: &str,
        reverse: bool,
    ) -> Result<Vec<NodeId>> {
        let h_dim = self.cfg.hidden;
        let w_ih = bound.id(&format!("encoder/lstm_{dir}/input_weights"))?;
        let w_hh = bound.id(&format!("encoder/lstm_{dir}/recurrent_weights"))?;
        let bias = bound.id(&format!("encoder/lstm_{dir}/bias"))?;
        let zero_bias = tape.constant(Tensor::zeros(vec![4 * h_dim]));
        let mut h = tape.constant(Tensor::zeros(vec![h_dim]));
        let mut c = tape.constant(Tensor::zeros(vec![h_dim]));
        let order: Vec<usize> = if reverse {
            (0..tokens.len()).rev().collect()
        } else {
            (0..tokens.len()).collect()
        };
        let mut states = vec![h; tokens.len()];
        for pos in order {
            let from_input = tape.dense(tokens[pos], w_ih, bias)?;
            let from_hidden = tape.dense(h, w_hh, zero_bias)?;
            let gates = tape.add(from_input, from_hidden)?;
            let i_gate = tape.slice(gates, 0, h_dim)?;
            let i_gate = tape.sigmoid(i_gate);
            let f_gate = tape.slice(gates, h_dim, h_dim)?;
            let f_gate = tape.sigmoid(f_gate);
            let g_gate = tape.slice(gates, 2 * h_dim, h_dim)?;
            let g_gate = tape.tanh(g_gate);
            let o_gate = tape.slice(gates, 3 * h_dim, h_dim)?;
            let o_gate = tape.sigmoid(o_gate);
            let keep = tape.mul(f_gate, c)?;
            let write = tape.mul(i_gate, g_gate)?;
            c = tape.add(keep, write)?;
            let c_act = tape.tanh(c);
            h = tape.mul(o_gate, c_act)?;
            states[pos] = h;
        }
        Ok(states)
    }
}

/// Statistics pooling: concatenated elementwise min, max, and mean over a
/// set of equally sized vectors. Permutation-invariant in its inputs.
pub fn stats_pool(tape: &mut Tape, rows: &[NodeId]) -> Result<NodeId> {
    let stacked = tape.stack(rows)?;
    let mn = tape.min_rows(stacked);
    let mx = tape.max_rows(stacked);
    let mean = tape.mean_rows(stacked);
    tape.concat(&[mn, mx, mean])
}

/// Marks every encoder parameter non-trainable. Idempotent; parameters
/// outside the `encoder/` prefix are untouched.
pub fn freeze(params: &mut ParameterSet) {
    params.freeze_prefix(ENCODER_PREFIX);
}

/// Anything that can place a sample on the tape as an embedding node.
/// The text embedder runs the full encoder; pre-embedded samples pass
/// through as constants.
pub trait Embedder<T> {
    fn embed(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        item: &T,
        mode: Mode,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<NodeId>;

    /// Dimension of produced embeddings.
    fn dim(&self) -> usize;
}

pub struct TextEmbedder<'a> {
    pub encoder: Encoder,
    pub table: &'a EmbeddingTable,
    pub alphabet: &'a CharAlphabet,
}

impl Embedder<crate::corpus::Utterance> for TextEmbedder<'_> {
    fn embed(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        item: &crate::corpus::Utterance,
        mode: Mode,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<NodeId> {
        self.encoder
            .encode(tape, bound, &item.tokens, self.table, self.alphabet, mode, rng)
    }

    fn dim(&self) -> usize {
        self.encoder.cfg.sentence_dim()
    }
}

/// Passes pre-embedded samples straight to the head.
pub struct IdentityEmbedder {
    pub dim: usize,
}

impl Embedder<Vec<f64>> for IdentityEmbedder {
    fn embed(
        &self,
        tape: &mut Tape,
        _bound: &BoundParams,
        item: &Vec<f64>,
        _mode: Mode,
        _rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<NodeId> {
        if item.len() != self.dim {
            return Err(NumericsError::ShapeMismatch {
                op: "IdentityEmbedder",
                left: vec![item.len()],
                right: vec![self.dim],
            });
        }
        Ok(tape.constant(Tensor::from_vec(item.clone())))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}
