use crate::autodiff::{Axis, Var};
use crate::error::Result;

/// Input, recurrent and bias weights of a recurrent layer.
///
/// Gated cells fuse their gates column-wise: LSTM as `[i | f | g | o]`,
/// GRU update/reset as `[z | r]`.
#[derive(Debug, Clone, Copy)]
pub struct Gates<'t> {
    pub w: Var<'t>,
    pub u: Var<'t>,
    pub b: Var<'t>,
}

impl<'t> Gates<'t> {
    fn pre(&self, x: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
        x.matmul(self.w)?.add(h.matmul(self.u)?)?.add_bias(self.b)
    }
}

/// `h' = tanh(x W + h U + b)`.
pub fn rnn_cell<'t>(x: Var<'t>, h: Var<'t>, g: &Gates<'t>) -> Result<Var<'t>> {
    Ok(g.pre(x, h)?.tanh())
}

pub fn lstm_cell<'t>(x: Var<'t>, h: Var<'t>, c: Var<'t>, g: &Gates<'t>) -> Result<(Var<'t>, Var<'t>)> {
    lstm_from_pre(g.pre(x, h)?, c)
}

pub(crate) fn lstm_from_pre<'t>(z: Var<'t>, c: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let hidden = c.shape()[1];
    let gate = |k: usize| z.slice(Axis::Cols, k * hidden, (k + 1) * hidden);
    let i = gate(0)?.sigmoid();
    let f = gate(1)?.sigmoid();
    let g = gate(2)?.tanh();
    let o = gate(3)?.sigmoid();
    let c_next = f.mul(c)?.add(i.mul(g)?)?;
    let h_next = o.mul(c_next.tanh())?;
    Ok((h_next, c_next))
}

/// Gated recurrent unit:
/// `n = tanh(x Wn + (r * h) Un + bn)`, `h' = n + z * (h - n)`.
pub fn gru_cell<'t>(x: Var<'t>, h: Var<'t>, zr: &Gates<'t>, n: &Gates<'t>) -> Result<Var<'t>> {
    let hidden = h.shape()[1];
    let gates = zr.pre(x, h)?.sigmoid();
    let z = gates.slice(Axis::Cols, 0, hidden)?;
    let r = gates.slice(Axis::Cols, hidden, 2 * hidden)?;
    let cand = x
        .matmul(n.w)?
        .add(r.mul(h)?.matmul(n.u)?)?
        .add_bias(n.b)?
        .tanh();
    cand.add(z.mul(h.sub(cand)?)?)
}

/// Additive attention weights.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights<'t> {
    /// Applied to the decoder state.
    pub w: Var<'t>,
    /// Applied to each encoder state.
    pub u: Var<'t>,
    pub b: Var<'t>,
    /// Scoring vector, `A x 1`.
    pub v: Var<'t>,
}

/// Scores `v . tanh(s W + h_t U + b)` over encoder steps, normalised with
/// softmax. Returns the context `sum_t a_t h_t` and the `batch x steps` weights.
pub fn additive_attention<'t>(
    s: Var<'t>,
    encoder: &[Var<'t>],
    a: &AttentionWeights<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let query = s.matmul(a.w)?.add_bias(a.b)?;
    let scores = encoder
        .iter()
        .map(|&h| query.add(h.matmul(a.u)?)?.tanh().matmul(a.v))
        .collect::<Result<Vec<_>>>()?;
    let weights = Var::concat(&scores, Axis::Cols)?.softmax(Axis::Cols);
    let mut context: Option<Var<'t>> = None;
    for (t, &h) in encoder.iter().enumerate() {
        let term = h.mul_col(weights.slice(Axis::Cols, t, t + 1)?)?;
        context = Some(match context {
            None => term,
            Some(acc) => acc.add(term)?,
        });
    }
    let context = context.ok_or_else(|| crate::Error::shape("attention over zero encoder steps"))?;
    Ok((context, weights))
}
