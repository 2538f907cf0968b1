//! Recurrent forecasters over lag windows: RNN, LSTM, GRU and LSTM
//! encoder-decoder models with and without additive attention.

mod cells;
mod checkpoint;
mod dataset;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Axis, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::series::ScaleParams;

pub use cells::{additive_attention, gru_cell, lstm_cell, rnn_cell, AttentionWeights, Gates};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{make_windows, split, WindowedDataset, DEFAULT_TRAIN_FRAC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "RNN")]
    Rnn,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "GRU")]
    Gru,
    #[serde(rename = "LSTM_Seq2Seq")]
    LstmSeq2Seq,
    #[serde(rename = "LSTM_Seq2Seq_ATN")]
    LstmSeq2SeqAtn,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Rnn,
        Architecture::Lstm,
        Architecture::Gru,
        Architecture::LstmSeq2Seq,
        Architecture::LstmSeq2SeqAtn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Rnn => "RNN",
            Architecture::Lstm => "LSTM",
            Architecture::Gru => "GRU",
            Architecture::LstmSeq2Seq => "LSTM_Seq2Seq",
            Architecture::LstmSeq2SeqAtn => "LSTM_Seq2Seq_ATN",
        }
    }

    fn code(self) -> u8 {
        Self::ALL.iter().position(|&a| a == self).expect("listed") as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Ok(match key.as_str() {
            "rnn" => Architecture::Rnn,
            "lstm" => Architecture::Lstm,
            "gru" => Architecture::Gru,
            "lstm_seq2seq" | "seq2seq" => Architecture::LstmSeq2Seq,
            "lstm_seq2seq_atn" | "lstm_seq2seq_attention" | "seq2seq_atn" => Architecture::LstmSeq2SeqAtn,
            _ => return Err(Error::Config(format!("unknown architecture '{s}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub hidden_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            architecture: Architecture::LstmSeq2SeqAtn,
            hidden_size: 64,
            epochs: 50,
            batch_size: 32,
            learning_rate: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            seed: 42,
        }
    }
}

impl ModelSpec {
    pub fn with_architecture(architecture: Architecture) -> Self {
        Self {
            architecture,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "hidden_size, epochs and batch_size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("invalid optimiser settings".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Named parameter tensors in the fixed order the forward pass expects.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

fn layout(arch: Architecture, h: usize) -> Vec<(&'static str, [usize; 2], usize)> {
    // (name, shape, fan-in)
    let lstm_enc = [
        ("enc.w", [1, 4 * h], 1),
        ("enc.u", [h, 4 * h], h),
        ("enc.b", [1, 4 * h], h),
    ];
    let decoder = [
        ("dec.token", [1, 1], 1),
        ("dec.w", [1, 4 * h], 1),
        ("dec.u", [h, 4 * h], h),
        ("dec.b", [1, 4 * h], h),
    ];
    let mut out = match arch {
        Architecture::Rnn => vec![("enc.w", [1, h], 1), ("enc.u", [h, h], h), ("enc.b", [1, h], h)],
        Architecture::Lstm => lstm_enc.to_vec(),
        Architecture::Gru => vec![
            ("enc.w_zr", [1, 2 * h], 1),
            ("enc.u_zr", [h, 2 * h], h),
            ("enc.b_zr", [1, 2 * h], h),
            ("enc.w_n", [1, h], 1),
            ("enc.u_n", [h, h], h),
            ("enc.b_n", [1, h], h),
        ],
        Architecture::LstmSeq2Seq => [&lstm_enc[..], &decoder[..]].concat(),
        Architecture::LstmSeq2SeqAtn => [
            &lstm_enc[..],
            &decoder[..],
            &[
                ("att.w", [h, h], h),
                ("att.u", [h, h], h),
                ("att.b", [1, h], h),
                ("att.v", [h, 1], h),
            ][..],
        ]
        .concat(),
    };
    let head_in = if arch == Architecture::LstmSeq2SeqAtn { 2 * h } else { h };
    out.push(("out.w", [head_in, 1], head_in));
    out.push(("out.b", [1, 1], head_in));
    out
}

impl Params {
    pub fn init(arch: Architecture, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, fan_in) in layout(arch, hidden) {
            let mut t = Tensor::uniform_fan_in(shape, fan_in, &mut rng);
            if name == "dec.token" {
                t = Tensor::zeros(shape);
            }
            names.push(name.to_string());
            tensors.push(t);
        }
        Self { names, tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    fn check_layout(&self, arch: Architecture, hidden: usize) -> Result<()> {
        let expected = layout(arch, hidden);
        let ok = expected.len() == self.tensors.len()
            && expected
                .iter()
                .zip(self.names.iter().zip(&self.tensors))
                .all(|((n, s, _), (name, t))| n == name && *s == t.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!("parameters do not match {arch} with hidden size {hidden}")))
        }
    }
}

/// Forward pass outputs.
pub struct Forward<'t> {
    /// `batch x 1`.
    pub prediction: Var<'t>,
    /// `batch x p` attention weights, for the attention model only.
    pub attention: Option<Var<'t>>,
}

/// Runs `arch` over a `batch x p` window matrix, oldest lag first.
pub fn forward<'t>(
    arch: Architecture,
    params: &[Var<'t>],
    windows: Var<'t>,
) -> Result<Forward<'t>> {
    let tape = windows.tape();
    let [batch, p] = windows.shape();
    let hidden = params[1].shape()[0];
    let zeros = || tape.constant(Tensor::zeros([batch, hidden]));
    let step = |t: usize| windows.slice(Axis::Cols, t, t + 1);
    let n = params.len();
    let head = |features: Var<'t>| features.matmul(params[n - 2])?.add_bias(params[n - 1]);
    let mut attention = None;

    let prediction = match arch {
        Architecture::Rnn => {
            let g = Gates { w: params[0], u: params[1], b: params[2] };
            let mut h = zeros();
            for t in 0..p {
                h = rnn_cell(step(t)?, h, &g)?;
            }
            head(h)?
        }
        Architecture::Gru => {
            let zr = Gates { w: params[0], u: params[1], b: params[2] };
            let nn = Gates { w: params[3], u: params[4], b: params[5] };
            let mut h = zeros();
            for t in 0..p {
                h = gru_cell(step(t)?, h, &zr, &nn)?;
            }
            head(h)?
        }
        Architecture::Lstm | Architecture::LstmSeq2Seq | Architecture::LstmSeq2SeqAtn => {
            let g = Gates { w: params[0], u: params[1], b: params[2] };
            let (mut h, mut c) = (zeros(), zeros());
            let mut states = Vec::with_capacity(p);
            for t in 0..p {
                (h, c) = lstm_cell(step(t)?, h, c, &g)?;
                states.push(h);
            }
            if arch == Architecture::Lstm {
                head(h)?
            } else {
                let (token, dw, du, db) = (params[3], params[4], params[5], params[6]);
                let start = token.matmul(dw)?.add(db)?;
                let (s, _) = cells::lstm_from_pre(h.matmul(du)?.add_bias(start)?, c)?;
                if arch == Architecture::LstmSeq2Seq {
                    head(s)?
                } else {
                    let a = AttentionWeights { w: params[7], u: params[8], b: params[9], v: params[10] };
                    let (context, weights) = additive_attention(s, &states, &a)?;
                    attention = Some(weights);
                    head(Var::concat(&[s, context], Axis::Cols)?)?
                }
            }
        }
    };
    Ok(Forward { prediction, attention })
}

/// Mean squared error of `arch` on a batch, for gradient checking.
pub fn batch_loss<'t>(
    arch: Architecture,
    params: &[Var<'t>],
    windows: &Tensor,
    targets: &Tensor,
) -> Result<Var<'t>> {
    let tape = params[0].tape();
    let out = forward(arch, params, tape.constant(windows.clone()))?;
    out.prediction.mse(tape.constant(targets.clone()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub p: usize,
    /// Min-max scaling fitted on the training windows.
    pub scale: ScaleParams,
    pub params: Params,
    /// Mean training loss per epoch, in scaled units.
    pub loss_history: Vec<f64>,
}

impl FittedModel {
    pub fn final_loss(&self) -> f64 {
        self.loss_history.last().copied().unwrap_or(f64::NAN)
    }
}

fn batch_tensors(ds: &WindowedDataset, rows: &[usize], scale: &ScaleParams) -> (Tensor, Tensor) {
    let p = ds.p();
    let mut x = Vec::with_capacity(rows.len() * p);
    let mut y = Vec::with_capacity(rows.len());
    for &r in rows {
        x.extend(ds.input(r).iter().map(|&v| scale.transform(v)));
        y.push(scale.transform(ds.targets()[r]));
    }
    (
        Tensor::new([rows.len(), p], x).expect("batch shape"),
        Tensor::new([rows.len(), 1], y).expect("batch shape"),
    )
}

/// Fits `spec` to `train` by mini-batch Adam on the mean squared error of
/// min-max scaled values.
pub fn train(train: &WindowedDataset, spec: &ModelSpec) -> Result<FittedModel> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut all = train.inputs().to_vec();
    all.extend_from_slice(train.targets());
    let scale = ScaleParams::fit(&all)?;
    let mut params = Params::init(spec.architecture, spec.hidden_size, spec.seed);
    let mut state = AdamState::new(&params.tensors);
    let adam = spec.adam();
    let mut shuffle = ChaCha8Rng::seed_from_u64(spec.seed);
    shuffle.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut loss_history = Vec::with_capacity(spec.epochs);

    for epoch in 1..=spec.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for rows in order.chunks(spec.batch_size) {
            let (x, y) = batch_tensors(train, rows, &scale);
            let tape = Tape::new();
            let vars: Vec<Var<'_>> = params.tensors.iter().map(|t| tape.param(t.clone())).collect();
            let loss = batch_loss(spec.architecture, &vars, &x, &y)?;
            let value = loss.value().item();
            if !value.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            total += value * rows.len() as f64;
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
            adam_step(&mut params.tensors, &grads, &mut state, &adam)?;
        }
        let mean = total / train.len() as f64;
        if !mean.is_finite() || params.tensors.iter().any(|t| !t.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
        log::debug!("{} epoch {epoch}: loss {mean:.6e}", spec.architecture);
        loss_history.push(mean);
    }
    Ok(FittedModel {
        spec: *spec,
        p: train.p(),
        scale,
        params,
        loss_history,
    })
}

const PREDICT_CHUNK: usize = 512;

/// One-step forecasts for every row of `ds`, in original units.
pub fn predict(model: &FittedModel, ds: &WindowedDataset) -> Result<Vec<f64>> {
    if ds.p() != model.p {
        return Err(Error::shape(format!(
            "model expects {} lags, dataset has {}",
            model.p,
            ds.p()
        )));
    }
    model.params.check_layout(model.spec.architecture, model.spec.hidden_size)?;
    let mut out = Vec::with_capacity(ds.len());
    let rows: Vec<usize> = (0..ds.len()).collect();
    for chunk in rows.chunks(PREDICT_CHUNK) {
        let (x, _) = batch_tensors(ds, chunk, &model.scale);
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = model.params.tensors.iter().map(|t| tape.constant(t.clone())).collect();
        let f = forward(model.spec.architecture, &vars, tape.constant(x))?;
        let pred = f.prediction.value();
        out.extend(pred.data().iter().map(|&v| model.scale.inverse(v)));
    }
    Ok(out)
}
