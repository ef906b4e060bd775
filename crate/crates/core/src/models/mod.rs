//! The eight sentence classifiers, all ending in a 9-way softmax.

mod checkpoint;
mod config;
mod fasttext;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{ablation_grid, Family, ModelConfig, DROPOUT_GRID, HIDDEN_GRID};
pub use fasttext::{bigram_bucket, fnv1a, FastTextVocab, BIGRAM_SEPARATOR};

use crate::autodiff::{
    attention_pool, init, lstm_sequence, AttentionParams, AttentionVariant, Direction, Gradients, Graph, LstmParams,
    Mask, ParamId, ParamSet, Tensor, Var,
};
use crate::corpus::{Datapoint, NUM_CLASSES};
use crate::embeddings::{encode, EmbeddingTable, EncodedBatch};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A classifier: configuration plus its parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    /// Width of the pretrained vectors the model reads (unused by fasttext).
    pub input_dim: usize,
    pub fasttext: Option<FastTextVocab>,
}

fn add_glorot<T: Scalar>(
    p: &mut ParamSet<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) {
    p.add(name, init::glorot_uniform(rng, shape, fan_in, fan_out));
}

fn add_lstm<T: Scalar>(p: &mut ParamSet<T>, rng: &mut ChaCha8Rng, prefix: &str, input: usize, hidden: usize) {
    add_glorot(
        p,
        rng,
        &format!("{prefix}.kernel"),
        &[input, 4 * hidden],
        input,
        4 * hidden,
    );
    p.add(format!("{prefix}.recurrent"), init::orthogonal(rng, hidden, 4 * hidden));
    let mut bias = Tensor::zeros(&[4 * hidden]);
    bias.data_mut()[hidden..2 * hidden]
        .iter_mut()
        .for_each(|b| *b = T::one());
    p.add(format!("{prefix}.bias"), bias);
}

fn add_head<T: Scalar>(p: &mut ParamSet<T>, rng: &mut ChaCha8Rng, input: usize, hidden: usize) {
    add_glorot(p, rng, "head.hidden.w", &[input, hidden], input, hidden);
    p.add("head.hidden.b", Tensor::zeros(&[hidden]));
    add_glorot(p, rng, "head.out.w", &[hidden, NUM_CLASSES], hidden, NUM_CLASSES);
    p.add("head.out.b", Tensor::zeros(&[NUM_CLASSES]));
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    probs
        .data()
        .chunks(probs.cols())
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters seeded from `config.seed`.
    pub fn init(config: ModelConfig, input_dim: usize, fasttext: Option<FastTextVocab>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamSet::new();
        let (d, h) = (input_dim, config.hidden_units);
        if config.family.uses_pretrained() && d == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        match config.family {
            Family::BowConc => add_head(&mut p, &mut rng, config.max_len * d, h),
            Family::BowSum => add_head(&mut p, &mut rng, d, h),
            Family::Fasttext => {
                let vocab = fasttext
                    .as_ref()
                    .ok_or_else(|| Error::Config("fasttext needs a vocabulary".into()))?;
                let dim = config.fasttext_dim;
                let mut table: Tensor<T> = Tensor::zeros(&[vocab.rows(), dim]);
                let words = init::uniform::<T, _>(&mut rng, &[vocab.first_bucket_row(), dim], 1.0 / dim as f64);
                table.data_mut()[..words.len()].copy_from_slice(words.data());
                p.add_sparse("fasttext.embedding", table);
                add_glorot(
                    &mut p,
                    &mut rng,
                    "fasttext.out.w",
                    &[dim, NUM_CLASSES],
                    dim,
                    NUM_CLASSES,
                );
                p.add("fasttext.out.b", Tensor::zeros(&[NUM_CLASSES]));
            }
            Family::Cnn => {
                let w = config.cnn_width;
                add_glorot(&mut p, &mut rng, "conv1.w", &[w * d, h], w * d, w * h);
                p.add("conv1.b", Tensor::zeros(&[h]));
                add_glorot(&mut p, &mut rng, "conv2.w", &[w * h, h], w * h, w * h);
                p.add("conv2.b", Tensor::zeros(&[h]));
                add_head(&mut p, &mut rng, h, h);
            }
            Family::Lstm => {
                add_lstm(&mut p, &mut rng, "lstm", d, h);
                add_head(&mut p, &mut rng, h, h);
            }
            Family::Bilstm => {
                add_lstm(&mut p, &mut rng, "lstm", d, h);
                add_lstm(&mut p, &mut rng, "lstm_back", d, h);
                add_head(&mut p, &mut rng, 2 * h, h);
            }
            Family::AttLstm | Family::AttconLstm => {
                add_lstm(&mut p, &mut rng, "lstm", d, h);
                add_glorot(&mut p, &mut rng, "attention.w", &[h, h], h, h);
                p.add("attention.b", Tensor::zeros(&[h]));
                if config.family == Family::AttLstm {
                    add_glorot(&mut p, &mut rng, "attention.v", &[h, 1], h, 1);
                } else {
                    add_glorot(&mut p, &mut rng, "attention.u", &[h], h, 1);
                }
                add_head(&mut p, &mut rng, h, h);
            }
        }
        let family = config.family;
        Ok(Model {
            config,
            params: p,
            input_dim: if family.uses_pretrained() { d } else { 0 },
            fasttext: if family == Family::Fasttext { fasttext } else { None },
        })
    }

    /// Initialises a model for `train`, building the fasttext vocabulary when needed.
    pub fn for_data(config: ModelConfig, train: &[Datapoint], table: Option<&EmbeddingTable>) -> Result<Self> {
        if config.family == Family::Fasttext {
            let vocab = FastTextVocab::build(train, config.condition, config.fasttext_buckets);
            Model::init(config, 0, Some(vocab))
        } else {
            let table = table.ok_or_else(|| Error::Config(format!("{} needs pretrained vectors", config.family)))?;
            Model::init(config, table.dim(), None)
        }
    }

    /// Encodes datapoints the way this model reads them.
    pub fn encode(&self, data: &[Datapoint], table: Option<&EmbeddingTable>) -> Result<EncodedBatch> {
        match &self.fasttext {
            Some(v) => v.encode(data, self.config.condition, self.config.max_len),
            None => {
                let table =
                    table.ok_or_else(|| Error::Config(format!("{} needs pretrained vectors", self.config.family)))?;
                encode(data, table, self.config.condition, self.config.max_len)
            }
        }
    }

    fn id(&self, name: &str) -> Result<ParamId> {
        self.params.by_name(name)
    }

    fn lstm_params(&self, prefix: &str) -> Result<LstmParams> {
        Ok(LstmParams {
            kernel: self.id(&format!("{prefix}.kernel"))?,
            recurrent: self.id(&format!("{prefix}.recurrent"))?,
            bias: self.id(&format!("{prefix}.bias"))?,
            hidden: self.config.hidden_units,
        })
    }

    fn embed(&self, batch: &EncodedBatch, table: Option<&EmbeddingTable>) -> Result<Tensor<T>> {
        let table = table.ok_or_else(|| Error::Config(format!("{} needs pretrained vectors", self.config.family)))?;
        if table.dim() != self.input_dim {
            return Err(Error::Config(format!(
                "vectors have dimension {}, model expects {}",
                table.dim(),
                self.input_dim
            )));
        }
        let d = self.input_dim;
        let mut data = Vec::with_capacity(batch.indices.len() * d);
        for (&i, &real) in batch.indices.iter().zip(&batch.mask) {
            if i >= table.rows() {
                return Err(Error::invalid(
                    "embed",
                    format!("row {i} outside table of {}", table.rows()),
                ));
            }
            if real {
                data.extend(table.row(i).iter().map(|&v| <T as Scalar>::from_f32(v)));
            } else {
                data.extend(std::iter::repeat_n(T::zero(), d));
            }
        }
        Tensor::new(&[batch.batch, batch.max_len, d], data)
    }

    fn head(&self, g: &mut Graph<'_, T>, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let (w1, b1) = (g.param(self.id("head.hidden.w")?), g.param(self.id("head.hidden.b")?));
        let h = g.dense(x, w1, b1)?;
        let h = g.relu(h);
        let h = match rng {
            Some(r) => g.dropout(h, self.config.dropout_rate, r, true)?,
            None => h,
        };
        let (w2, b2) = (g.param(self.id("head.out.w")?), g.param(self.id("head.out.b")?));
        let logits = g.dense(h, w2, b2)?;
        Ok(g.softmax(logits))
    }

    fn fasttext_forward(&self, g: &mut Graph<'_, T>, batch: &EncodedBatch) -> Result<Var> {
        let bigrams = batch
            .bigrams
            .as_ref()
            .ok_or_else(|| Error::invalid("fasttext", "batch has no bigram features"))?;
        let rows: Vec<Vec<usize>> = (0..batch.batch)
            .map(|i| batch.row(i).iter().chain(&bigrams[i]).copied().collect())
            .collect();
        let m = rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut ids = vec![0; batch.batch * m];
        let mut live = vec![false; batch.batch * m];
        for (i, r) in rows.iter().enumerate() {
            ids[i * m..i * m + r.len()].copy_from_slice(r);
            live[i * m..i * m + r.len()].iter_mut().for_each(|l| *l = true);
        }
        let dim = self.config.fasttext_dim;
        let e = g.gather_rows_masked(self.id("fasttext.embedding")?, &ids, &live)?;
        let e = g.reshape(e, &[batch.batch, m, dim])?;
        let live: Mask = live.into();
        let avg = g.masked_mean_time(e, &live)?;
        let (w, b) = (g.param(self.id("fasttext.out.w")?), g.param(self.id("fasttext.out.b")?));
        let logits = g.dense(avg, w, b)?;
        Ok(g.softmax(logits))
    }

    /// Class probabilities `[batch, 9]`. Passing an rng enables dropout (training).
    pub fn forward(
        &self,
        g: &mut Graph<'_, T>,
        batch: &EncodedBatch,
        table: Option<&EmbeddingTable>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let c = &self.config;
        if batch.condition != c.condition {
            return Err(Error::Config(format!(
                "batch encoded for {}, model trained on {}",
                batch.condition, c.condition
            )));
        }
        if batch.max_len > c.max_len || batch.batch == 0 {
            return Err(Error::shape("forward", &[batch.batch, batch.max_len], &[c.max_len]));
        }
        if c.family == Family::Fasttext {
            return self.fasttext_forward(g, batch);
        }
        let mask: Mask = batch.mask.clone().into();
        let x = g.input(self.embed(batch, table)?);
        let (b, d) = (batch.batch, self.input_dim);
        let features = match c.family {
            Family::BowConc => {
                if batch.max_len != c.max_len {
                    return Err(Error::shape("bow_conc", &[b, batch.max_len], &[b, c.max_len]));
                }
                g.reshape(x, &[b, c.max_len * d])?
            }
            Family::BowSum => g.masked_sum_time(x, &mask)?,
            Family::Cnn => {
                let (w1, b1) = (g.param(self.id("conv1.w")?), g.param(self.id("conv1.b")?));
                let h = g.conv1d(x, w1, b1, c.cnn_width, &mask)?;
                let h = g.relu(h);
                let (h, pooled_mask) = g.maxpool1d(h, &mask, c.cnn_pool)?;
                let (w2, b2) = (g.param(self.id("conv2.w")?), g.param(self.id("conv2.b")?));
                let h = g.conv1d(h, w2, b2, c.cnn_width, &pooled_mask)?;
                let h = g.relu(h);
                g.masked_max_time(h, &pooled_mask)?
            }
            Family::Lstm => lstm_sequence(g, x, &mask, &self.lstm_params("lstm")?, Direction::Forward)?.final_hidden,
            Family::Bilstm => {
                let fwd = lstm_sequence(g, x, &mask, &self.lstm_params("lstm")?, Direction::Forward)?;
                let back = lstm_sequence(g, x, &mask, &self.lstm_params("lstm_back")?, Direction::Backward)?;
                g.concat_cols(&[fwd.final_hidden, back.final_hidden])?
            }
            Family::AttLstm | Family::AttconLstm => {
                let out = lstm_sequence(g, x, &mask, &self.lstm_params("lstm")?, Direction::Forward)?;
                let (score, variant) = if c.family == Family::AttLstm {
                    (self.id("attention.v")?, AttentionVariant::Feedforward)
                } else {
                    (self.id("attention.u")?, AttentionVariant::ContextCosine)
                };
                let ap = AttentionParams {
                    proj: self.id("attention.w")?,
                    proj_bias: self.id("attention.b")?,
                    score,
                    variant,
                };
                attention_pool(g, out.states, &mask, &ap)?.0
            }
            Family::Fasttext => unreachable!(),
        };
        self.head(g, features, rng)
    }

    /// Mean cross-entropy of the batch; returns `(probs, loss)`.
    pub fn loss(
        &self,
        g: &mut Graph<'_, T>,
        batch: &EncodedBatch,
        table: Option<&EmbeddingTable>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var)> {
        let probs = self.forward(g, batch, table, rng)?;
        let loss = g.cross_entropy(probs, &batch.labels)?;
        Ok((probs, loss))
    }

    /// Loss value and parameter gradients for one batch.
    pub fn loss_and_grad(
        &self,
        batch: &EncodedBatch,
        table: Option<&EmbeddingTable>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(T, Gradients<T>)> {
        let mut g = Graph::new(&self.params);
        let (_, loss) = self.loss(&mut g, batch, table, rng)?;
        let value = g.value(loss).data()[0];
        Ok((value, g.backward(loss)?))
    }

    /// Inference probabilities, evaluated in chunks of `chunk` rows.
    pub fn probabilities(
        &self,
        batch: &EncodedBatch,
        table: Option<&EmbeddingTable>,
        chunk: usize,
    ) -> Result<Tensor<T>> {
        let mut out = Vec::with_capacity(batch.batch * NUM_CLASSES);
        let rows: Vec<usize> = (0..batch.batch).collect();
        for part in rows.chunks(chunk.max(1)) {
            let sub = self.prepare(&batch.select(part));
            let mut g = Graph::new(&self.params);
            let probs = self.forward(&mut g, &sub, table, None)?;
            out.extend_from_slice(g.value(probs).data());
        }
        Tensor::new(&[batch.batch, NUM_CLASSES], out)
    }

    /// Drops padding columns the family does not need.
    pub fn prepare(&self, batch: &EncodedBatch) -> EncodedBatch {
        if self.config.family == Family::BowConc {
            batch.with_len(self.config.max_len)
        } else {
            batch.trimmed()
        }
    }

    pub fn predict(&self, batch: &EncodedBatch, table: Option<&EmbeddingTable>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.probabilities(batch, table, 256)?))
    }

    /// `(name, shape, count)` per parameter tensor.
    pub fn describe(&self) -> Vec<(String, Vec<usize>, usize)> {
        self.params
            .iter()
            .map(|(_, name, t)| (name.to_string(), t.shape().to_vec(), t.len()))
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            input_dim: self.input_dim,
            fasttext: self.fasttext.clone(),
        }
    }
}

#[cfg(test)]
mod tests;
