//! Contrastive language–pose pre-training.
//!
//! Paired text and pose encoders project into a shared ℓ2-normalized
//! embedding space, trained with symmetric cross-entropy over in-batch
//! similarity logits. The pose-encoder summary feature (before the
//! projection) doubles as the feature extractor for the evaluation
//! metrics, and the pooled text state provides the 1024-d conditioning
//! vector consumed by the denoiser.

use crate::checkpoint::Archive;
use crate::error::{Error, Result};
use crate::nn::{
    sinusoidal_embedding, FeedForward, Init, LayerNorm, Linear, MultiHeadAttention, ParamId,
    ParamStore, TapeParams,
};
use crate::pose::{PoseSequence, CHANNELS};
use crate::tensor::{AdamW, AdamWConfig, Element, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::path::Path;

/// Dimensionality of the conditioning interface exposed to the
/// denoiser (matches the pretrained-text-model embedding width).
pub const CONDITION_DIM: usize = 1024;

/// Token budget per caption, including begin/end markers.
pub const MAX_TOKENS: usize = 77;

const BOS: &str = "<bos>";
const EOS: &str = "<eos>";

/// Newline-delimited token vocabulary with implicit ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from a caption corpus: begin/end markers first, then the
    /// sorted unique lowercase words.
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<String> = captions
            .into_iter()
            .flat_map(split_words)
            .collect();
        words.sort();
        words.dedup();
        let mut tokens = vec![BOS.to_string(), EOS.to_string()];
        tokens.extend(words);
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// bos + words + eos, truncated to [`MAX_TOKENS`].
    pub fn tokenize(&self, caption: &str) -> Result<Vec<u32>> {
        let mut ids = vec![self.index[BOS]];
        for w in split_words(caption) {
            let id = self
                .index
                .get(&w)
                .ok_or_else(|| Error::Tokenizer(format!("unknown token '{w}'")))?;
            ids.push(*id);
        }
        ids.truncate(MAX_TOKENS - 1);
        ids.push(self.index[EOS]);
        Ok(ids)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = self.tokens.join("\n") + "\n";
        crate::util::atomic_write(path.as_ref(), text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < 2 || tokens[0] != BOS || tokens[1] != EOS {
            return Err(Error::Format("vocabulary file lacks <bos>/<eos> header".into()));
        }
        Ok(Self::from_tokens(tokens))
    }
}

fn split_words(caption: &str) -> Vec<String> {
    caption
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Caption input: either token ids against the model vocabulary or a
/// precomputed 1024-d caption vector. Exactly one source per sample.
#[derive(Clone, Debug)]
pub enum TextInput {
    Tokens(Vec<u32>),
    Precomputed(Vec<f32>),
}

impl TextInput {
    pub fn from_caption(vocab: &Vocabulary, caption: &str) -> Result<Self> {
        Ok(Self::Tokens(vocab.tokenize(caption)?))
    }

    pub fn precomputed(vector: Vec<f32>) -> Result<Self> {
        if vector.len() != CONDITION_DIM {
            return Err(Error::Argument(format!(
                "precomputed caption vector has {} dims, expected {CONDITION_DIM}",
                vector.len()
            )));
        }
        Ok(Self::Precomputed(vector))
    }
}

/// ℓ2-normalized embedding in the shared text–pose space.
#[derive(Clone, Debug, PartialEq)]
pub struct ClopEmbedding {
    pub vector: Vec<f32>,
    pub normalized: bool,
}

impl ClopEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// Dot product of two normalized embeddings, in [-1, 1].
    pub fn similarity(&self, other: &ClopEmbedding) -> Result<f64> {
        if !self.normalized || !other.normalized {
            return Err(Error::Argument("similarity requires normalized embeddings".into()));
        }
        if self.vector.len() != other.vector.len() {
            return Err(Error::Argument(format!(
                "embedding dims differ: {} vs {}",
                self.vector.len(),
                other.vector.len()
            )));
        }
        Ok(self
            .vector
            .iter()
            .zip(&other.vector)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }
}

/// Checkpoint role: the filter instance screens captions during
/// curation; the eval instance feeds training and metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClopTag {
    Filter,
    Eval,
}

#[derive(Clone, Debug)]
pub struct ClopConfig {
    pub vocab_size: usize,
    /// Keypoints per pose frame.
    pub keypoints: usize,
    /// Transformer width shared by both encoders.
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    /// Shared embedding dimensionality d.
    pub embed_dim: usize,
}

impl ClopConfig {
    pub fn with_vocab(vocab_size: usize) -> Self {
        Self { vocab_size, keypoints: 128, width: 64, layers: 2, heads: 4, embed_dim: 256 }
    }
}

struct EncoderBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

impl EncoderBlock {
    fn new<T: Element>(
        ps: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        width: usize,
        heads: usize,
    ) -> Self {
        Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), width),
            attn: MultiHeadAttention::new(ps, rng, &format!("{name}.attn"), width, width, heads, false),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), width),
            ffn: FeedForward::new(ps, rng, &format!("{name}.ffn"), width, width * 4, false),
        }
    }

    fn forward<T: Element>(&self, tape: &mut Tape<T>, tp: &TapeParams, x: Var) -> Result<Var> {
        let h = self.ln1.forward(tape, tp, x)?;
        let h = self.attn.forward(tape, tp, h, h)?;
        let x = tape.add(x, h)?;
        let h = self.ln2.forward(tape, tp, x)?;
        let h = self.ffn.forward(tape, tp, h)?;
        tape.add(x, h)
    }
}

/// The contrastive text–pose model.
pub struct Clop<T = f32> {
    pub cfg: ClopConfig,
    pub params: ParamStore<T>,
    pub tag: ClopTag,
    vocab: Vocabulary,
    token_embed: ParamId,
    text_blocks: Vec<EncoderBlock>,
    text_ln: LayerNorm,
    import_proj: Linear,
    proj_text: Linear,
    cond_proj: Linear,
    frame_proj: Linear,
    summary: ParamId,
    pose_blocks: Vec<EncoderBlock>,
    pose_ln: LayerNorm,
    proj_pose: Linear,
    log_tau: ParamId,
}

impl<T: Element> Clop<T> {
    pub fn new(cfg: ClopConfig, vocab: Vocabulary, tag: ClopTag, seed: u64) -> Result<Self> {
        if vocab.len() != cfg.vocab_size {
            return Err(Error::Config(format!(
                "vocab has {} tokens, config says {}",
                vocab.len(),
                cfg.vocab_size
            )));
        }
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = cfg.width;

        let token_embed = {
            let mut t = Tensor::<T>::randn(&[cfg.vocab_size, w], &mut rng);
            let s = T::from_f64(0.02);
            for v in t.data_mut().iter_mut() {
                *v *= s;
            }
            ps.add("clop.text.token_embed", t)
        };
        let text_blocks = (0..cfg.layers)
            .map(|i| EncoderBlock::new(&mut ps, &mut rng, &format!("clop.text.block{i}"), w, cfg.heads))
            .collect();
        let text_ln = LayerNorm::new(&mut ps, "clop.text.ln", w);
        let import_proj =
            Linear::new(&mut ps, &mut rng, "clop.text.import", CONDITION_DIM, w, Init::ScaledNormal);
        let proj_text =
            Linear::new_no_bias(&mut ps, &mut rng, "clop.text.proj", w, cfg.embed_dim, Init::ScaledNormal);
        // conditioning lift: fixed at init (never on a loss path), it
        // only widens the pooled state to the 1024-d interface
        let cond_proj =
            Linear::new_no_bias(&mut ps, &mut rng, "clop.text.cond", w, CONDITION_DIM, Init::ScaledNormal);

        let frame_proj = Linear::new(
            &mut ps,
            &mut rng,
            "clop.pose.frame_proj",
            cfg.keypoints * CHANNELS,
            w,
            Init::ScaledNormal,
        );
        let summary = {
            let mut t = Tensor::<T>::randn(&[1, w], &mut rng);
            let s = T::from_f64(0.02);
            for v in t.data_mut().iter_mut() {
                *v *= s;
            }
            ps.add("clop.pose.summary", t)
        };
        let pose_blocks = (0..cfg.layers)
            .map(|i| EncoderBlock::new(&mut ps, &mut rng, &format!("clop.pose.block{i}"), w, cfg.heads))
            .collect();
        let pose_ln = LayerNorm::new(&mut ps, "clop.pose.ln", w);
        let proj_pose =
            Linear::new_no_bias(&mut ps, &mut rng, "clop.pose.proj", w, cfg.embed_dim, Init::ScaledNormal);
        let log_tau = ps.add("clop.log_tau", Tensor::scalar(T::from_f64(0.07f64.ln())));

        Ok(Self {
            cfg,
            params: ps,
            tag,
            vocab,
            token_embed,
            text_blocks,
            text_ln,
            import_proj,
            proj_text,
            cond_proj,
            frame_proj,
            summary,
            pose_blocks,
            pose_ln,
            proj_pose,
            log_tau,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn temperature(&self) -> f64 {
        self.params.get(self.log_tau).data()[0].as_f64().exp()
    }

    /// Pooled text state [1, width] before any projection.
    fn text_pooled_t(&self, tape: &mut Tape<T>, tp: &TapeParams, input: &TextInput) -> Result<Var> {
        match input {
            TextInput::Tokens(ids) => {
                if ids.is_empty() {
                    return Err(Error::Argument("empty token sequence".into()));
                }
                let w = self.cfg.width;
                // gather token embeddings by building a one-hot matrix;
                // sequences are short (<= 77) so this stays cheap
                let mut onehot = Tensor::<T>::zeros(&[ids.len(), self.cfg.vocab_size]);
                for (r, &id) in ids.iter().enumerate() {
                    if id as usize >= self.cfg.vocab_size {
                        return Err(Error::Tokenizer(format!("token id {id} out of vocabulary")));
                    }
                    onehot.data_mut()[r * self.cfg.vocab_size + id as usize] = T::one();
                }
                let oh = tape.constant(onehot);
                let tok = tape.matmul(oh, tp.var(self.token_embed))?;
                let pos = tape.constant(sinusoidal_embedding(
                    &(0..ids.len()).map(|i| i as f64).collect::<Vec<_>>(),
                    w,
                ));
                let mut h = tape.add(tok, pos)?;
                h = tape.reshape(h, &[1, ids.len(), w])?;
                for b in &self.text_blocks {
                    h = b.forward(tape, tp, h)?;
                }
                let h = self.text_ln.forward(tape, tp, h)?;
                let h = tape.reshape(h, &[ids.len(), w])?;
                let pooled = tape.mean_axis0(h)?;
                tape.reshape(pooled, &[1, w])
            }
            TextInput::Precomputed(vec) => {
                let data: Vec<T> = vec.iter().map(|&v| T::from_f32(v)).collect();
                let t = Tensor::new(vec![1, CONDITION_DIM], data)?;
                let v = tape.constant(t);
                self.import_proj.forward(tape, tp, v)
            }
        }
    }

    /// Normalized text embedding h_e as a tape var [1, d].
    pub fn embed_text_t(&self, tape: &mut Tape<T>, tp: &TapeParams, input: &TextInput) -> Result<Var> {
        let pooled = self.text_pooled_t(tape, tp, input)?;
        let proj = self.proj_text.forward(tape, tp, pooled)?;
        tape.l2_normalize_rows(proj, 1e-12)
    }

    /// Pose summary features [B, width] before projection.
    /// `x` is [B, f, N·3].
    pub fn pose_summary_t(&self, tape: &mut Tape<T>, tp: &TapeParams, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.cfg.keypoints * CHANNELS {
            return Err(Error::Shape {
                op: "clop.pose_summary",
                detail: format!("{:?} vs [B, f, {}]", shape, self.cfg.keypoints * CHANNELS),
            });
        }
        let (bsz, frames) = (shape[0], shape[1]);
        let w = self.cfg.width;
        let tok = self.frame_proj.forward(tape, tp, x)?; // [B, f, w]
        // prepend the learnable summary token to each sequence
        let tok_flat = tape.reshape(tok, &[bsz, frames * w])?;
        let s_row = tape.reshape(tp.var(self.summary), &[w])?;
        let s_rep = tape.stack_rows(&vec![s_row; bsz])?; // [B, w]
        let seq = tape.concat_last(s_rep, tok_flat)?; // [B, (f+1)·w]
        let mut h = tape.reshape(seq, &[bsz, frames + 1, w])?;
        let pos = {
            let one = sinusoidal_embedding::<T>(
                &(0..=frames).map(|i| i as f64).collect::<Vec<_>>(),
                w,
            );
            let mut data = Vec::with_capacity(bsz * one.len());
            for _ in 0..bsz {
                data.extend_from_slice(one.data());
            }
            tape.constant(Tensor::new(vec![bsz, frames + 1, w], data)?)
        };
        h = tape.add(h, pos)?;
        for blk in &self.pose_blocks {
            h = blk.forward(tape, tp, h)?;
        }
        let h = self.pose_ln.forward(tape, tp, h)?;
        // summary-token output per batch row
        let h_flat = tape.reshape(h, &[bsz, (frames + 1) * w])?;
        tape.slice_last(h_flat, 0, w)
    }

    /// Normalized pose embeddings h_p [B, d] from [B, f, N·3] input.
    pub fn embed_pose_t(&self, tape: &mut Tape<T>, tp: &TapeParams, x: Var) -> Result<Var> {
        let summary = self.pose_summary_t(tape, tp, x)?;
        let proj = self.proj_pose.forward(tape, tp, summary)?;
        tape.l2_normalize_rows(proj, 1e-12)
    }

    /// Tensor-level text embedding.
    pub fn embed_text(&self, input: &TextInput) -> Result<ClopEmbedding> {
        let mut tape = Tape::new();
        let tp = self.params.inject(&mut tape, false);
        let v = self.embed_text_t(&mut tape, &tp, input)?;
        Ok(embedding_from(tape.value(v)))
    }

    pub fn embed_caption(&self, caption: &str) -> Result<ClopEmbedding> {
        self.embed_text(&TextInput::from_caption(&self.vocab, caption)?)
    }

    /// Tensor-level pose embedding for one normalized sequence.
    pub fn embed_pose(&self, p: &PoseSequence) -> Result<ClopEmbedding> {
        if p.keypoints() != self.cfg.keypoints {
            return Err(Error::Argument(format!(
                "pose has {} keypoints, model expects {}",
                p.keypoints(),
                self.cfg.keypoints
            )));
        }
        let mut tape = Tape::new();
        let tp = self.params.inject(&mut tape, false);
        let x = pose_batch_tensor::<T>(std::slice::from_ref(p))?;
        let vx = tape.leaf(x, false);
        let v = self.embed_pose_t(&mut tape, &tp, vx)?;
        Ok(embedding_from(tape.value(v)))
    }

    /// Unnormalized pose-encoder summary features (pre-projection),
    /// the feature space used by FID/Diversity/MultiModality.
    pub fn pose_features(&self, poses: &[&PoseSequence]) -> Result<Tensor<f64>> {
        let mut tape = Tape::new();
        let tp = self.params.inject(&mut tape, false);
        let seqs: Vec<PoseSequence> = poses.iter().map(|p| (*p).clone()).collect();
        let x = pose_batch_tensor::<T>(&seqs)?;
        let vx = tape.leaf(x, false);
        let v = self.pose_summary_t(&mut tape, &tp, vx)?;
        Ok(tape.value(v).cast())
    }

    /// The 1024-d conditioning vector for a caption: pooled text state
    /// lifted through the fixed conditioning projection. Precomputed
    /// inputs pass through unchanged.
    pub fn caption_condition(&self, input: &TextInput) -> Result<Vec<f32>> {
        if let TextInput::Precomputed(v) = input {
            return Ok(v.clone());
        }
        let mut tape = Tape::new();
        let tp = self.params.inject(&mut tape, false);
        let pooled = self.text_pooled_t(&mut tape, &tp, input)?;
        let cond = self.cond_proj.forward(&mut tape, &tp, pooled)?;
        Ok(tape.value(cond).data().iter().map(|v| v.as_f32()).collect())
    }

    pub fn checkpoint(&self) -> Archive {
        let mut ar = self.params.to_archive();
        ar.push_scalar("__config.vocab_size", self.cfg.vocab_size as f64);
        ar.push_scalar("__config.keypoints", self.cfg.keypoints as f64);
        ar.push_scalar("__config.width", self.cfg.width as f64);
        ar.push_scalar("__config.layers", self.cfg.layers as f64);
        ar.push_scalar("__config.heads", self.cfg.heads as f64);
        ar.push_scalar("__config.embed_dim", self.cfg.embed_dim as f64);
        ar.push_scalar("__config.tag", if self.tag == ClopTag::Filter { 0.0 } else { 1.0 });
        ar
    }

    pub fn from_checkpoint(ar: &Archive, vocab: Vocabulary) -> Result<Self> {
        let cfg = ClopConfig {
            vocab_size: ar.scalar("__config.vocab_size")? as usize,
            keypoints: ar.scalar("__config.keypoints")? as usize,
            width: ar.scalar("__config.width")? as usize,
            layers: ar.scalar("__config.layers")? as usize,
            heads: ar.scalar("__config.heads")? as usize,
            embed_dim: ar.scalar("__config.embed_dim")? as usize,
        };
        let tag = if ar.scalar("__config.tag")? == 0.0 { ClopTag::Filter } else { ClopTag::Eval };
        let mut model = Self::new(cfg, vocab, tag, 0)?;
        model.params.load_from(ar)?;
        Ok(model)
    }

    /// Save checkpoint and sidecar vocabulary (`<path>` and
    /// `<path>.vocab.txt`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.checkpoint().save(path)?;
        self.vocab.save(vocab_sidecar(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let vocab = Vocabulary::load(vocab_sidecar(path))?;
        Self::from_checkpoint(&Archive::load(path)?, vocab)
    }
}

fn vocab_sidecar(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".vocab.txt");
    std::path::PathBuf::from(os)
}

fn embedding_from<T: Element>(t: &Tensor<T>) -> ClopEmbedding {
    ClopEmbedding { vector: t.data().iter().map(|v| v.as_f32()).collect(), normalized: true }
}

/// Flatten pose sequences into a [B, f, N·3] batch tensor.
pub fn pose_batch_tensor<T: Element>(poses: &[PoseSequence]) -> Result<Tensor<T>> {
    let first = poses.first().ok_or_else(|| Error::Argument("empty pose batch".into()))?;
    let (f, n) = (first.frames(), first.keypoints());
    let mut data = Vec::with_capacity(poses.len() * f * n * CHANNELS);
    for p in poses {
        if p.frames() != f || p.keypoints() != n {
            return Err(Error::Shape {
                op: "pose_batch_tensor",
                detail: "mixed pose shapes in batch".into(),
            });
        }
        data.extend(p.data().iter().map(|&v| T::from_f32(v)));
    }
    Tensor::new(vec![poses.len(), f, n * CHANNELS], data)
}

/// Symmetric contrastive loss on normalized embedding batches:
/// mean of text-to-pose and pose-to-text cross-entropy with diagonal
/// labels, logits scaled by 1/τ.
pub fn contrastive_loss_t<T: Element>(
    tape: &mut Tape<T>,
    h_e: Var,
    h_p: Var,
    inv_tau: Var,
) -> Result<Var> {
    let (se, sp) = (tape.shape(h_e).to_vec(), tape.shape(h_p).to_vec());
    if se != sp || se.len() != 2 {
        return Err(Error::Shape {
            op: "contrastive_loss",
            detail: format!("{:?} vs {:?}", se, sp),
        });
    }
    let b = se[0];
    let labels: Vec<usize> = (0..b).collect();
    let hp_t = tape.swap_last2(h_p)?;
    let logits = tape.matmul(h_e, hp_t)?;
    let logits = tape.mul_scalar_var(logits, inv_tau)?;
    let ce_text = tape.cross_entropy_rows(logits, &labels)?;
    let logits_t = tape.swap_last2(logits)?;
    let ce_pose = tape.cross_entropy_rows(logits_t, &labels)?;
    let sum = tape.add(ce_text, ce_pose)?;
    Ok(tape.scale(sum, 0.5))
}

/// Plain-value contrastive loss for oracles.
pub fn contrastive_loss<T: Element>(h_e: &Tensor<T>, h_p: &Tensor<T>, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let ve = tape.leaf(h_e.clone(), false);
    let vp = tape.leaf(h_p.clone(), false);
    let inv = tape.constant(Tensor::scalar(T::from_f64(1.0 / tau)));
    let l = contrastive_loss_t(&mut tape, ve, vp, inv)?;
    Ok(tape.value(l).data()[0].as_f64())
}

#[derive(Clone, Debug)]
pub struct ClopTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// `None`: learnable temperature initialized at 0.07, clamped to
    /// [0.01, 1]. `Some(t)`: fixed temperature (1.0 reproduces the
    /// unscaled similarity logits of the written objective).
    pub fixed_tau: Option<f64>,
}

impl Default for ClopTrainConfig {
    fn default() -> Self {
        Self { steps: 3000, batch_size: 16, lr: 1e-3, seed: 0, fixed_tau: None }
    }
}

#[derive(Clone, Debug)]
pub struct ClopTrainStats {
    pub steps_run: usize,
    pub final_loss: f64,
    pub initial_loss: f64,
    pub loss_history: Vec<f64>,
}

/// Train on (caption tokens, pose) pairs with in-batch negatives.
pub fn train_clop<T: Element>(
    model: &mut Clop<T>,
    pairs: &[(TextInput, PoseSequence)],
    tc: &ClopTrainConfig,
) -> Result<ClopTrainStats> {
    if pairs.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut opt = AdamW::<T>::new(AdamWConfig { lr: tc.lr, ..Default::default() });
    let mut stats =
        ClopTrainStats { steps_run: 0, final_loss: 0.0, initial_loss: 0.0, loss_history: Vec::new() };
    if let Some(tau) = tc.fixed_tau {
        let id = model.log_tau;
        model.params.set(id, Tensor::scalar(T::from_f64(tau.ln())));
    }
    let log_tau_id = model.log_tau;

    for step in 0..tc.steps {
        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(tc.batch_size.min(pairs.len()));

        let mut tape = Tape::new();
        let tp = model.params.inject(&mut tape, true);

        let mut text_rows = Vec::with_capacity(idx.len());
        for &i in &idx {
            let e = model.embed_text_t(&mut tape, &tp, &pairs[i].0)?;
            let w = model.cfg.embed_dim;
            text_rows.push(tape.reshape(e, &[w])?);
        }
        let h_e = tape.stack_rows(&text_rows)?;

        let poses: Vec<PoseSequence> = idx.iter().map(|&i| pairs[i].1.clone()).collect();
        let x = pose_batch_tensor::<T>(&poses)?;
        let vx = tape.leaf(x, false);
        let h_p = model.embed_pose_t(&mut tape, &tp, vx)?;

        let inv_tau = {
            let lt = tp.var(log_tau_id);
            let neg = tape.neg(lt);
            tape.exp(neg)
        };
        let loss = contrastive_loss_t(&mut tape, h_e, h_p, inv_tau)?;
        let loss_v = tape.value(loss).data()[0].as_f64();

        let mut grads = tape.backward(loss)?;
        let grad_list = model.params.collect_grads(&tp, &mut grads);
        let names = model.params.names().to_vec();
        if tc.fixed_tau.is_some() {
            // hold the temperature fixed
            let mut grad_list = grad_list;
            let tau_pos = names.iter().position(|n| n == "clop.log_tau").expect("present");
            grad_list[tau_pos] = None;
            opt.step(&names, model.params.tensors_mut(), &grad_list)?;
        } else {
            opt.step(&names, model.params.tensors_mut(), &grad_list)?;
            // clamp tau to [0.01, 1]
            let lt = model.params.get(log_tau_id).data()[0].as_f64();
            let clamped = lt.clamp(0.01f64.ln(), 0.0);
            if clamped != lt {
                model.params.set(log_tau_id, Tensor::scalar(T::from_f64(clamped)));
            }
        }

        if step == 0 {
            stats.initial_loss = loss_v;
        }
        stats.final_loss = loss_v;
        stats.loss_history.push(loss_v);
        stats.steps_run = step + 1;
    }
    Ok(stats)
}
