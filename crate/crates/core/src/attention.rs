//! Task-specific attention over the shared token states:
//! `o_i = w_aᵀ tanh(W (cond ⊕ h_i) + b)`, `α = softmax(o)` over real tokens,
//! context `Σ α_i h_i`. `cond` is `s_{t-1} ⊕ g_{t-1}` for dual attention and
//! `g_{t-1}` alone for single attention.

use dahcrf_tensor::{Float, Tensor};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// `W` is stored as its two column blocks: `w_cond` acting on the tagger
/// states and `w_token` acting on the token states.
pub struct TaskAttention<F: Float> {
    pub w_cond: Tensor<F>,
    pub w_token: Tensor<F>,
    pub b: Tensor<F>,
    /// `[d_a × 1]`.
    pub w_a: Tensor<F>,
}

impl<F: Float> TaskAttention<F> {
    pub fn new(store: &mut ParamStore<F>, name: &str, d_cond: usize, d_token: usize, d_a: usize) -> Self {
        let fan = d_cond + d_token;
        TaskAttention {
            w_cond: store.fan_in(&format!("{name}.w_cond"), &[d_cond, d_a], fan),
            w_token: store.fan_in(&format!("{name}.w_token"), &[d_token, d_a], fan),
            b: store.zeros(&format!("{name}.b"), &[d_a]),
            w_a: store.fan_in(&format!("{name}.w_a"), &[d_a, 1], d_a),
        }
    }

    pub fn cond_dim(&self) -> usize {
        self.w_cond.shape()[0]
    }

    /// `W_token h_i` for every row of `h`; can be computed once for a whole
    /// batch of token states and gathered per utterance.
    pub fn project_tokens(&self, h: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(h.matmul(&self.w_token)?)
    }

    /// Attention weights from projected tokens `hp [K × d_a]` and the
    /// conditioning row `cond [1 × d_cond]`.
    pub fn weights_projected(&self, hp: &Tensor<F>, cond: &Tensor<F>, mask: &[bool]) -> Result<Tensor<F>> {
        let k = hp.shape()[0];
        if mask.len() != k {
            return Err(Error::Argument(format!(
                "mask has {} entries for {k} positions",
                mask.len()
            )));
        }
        let d_a = self.b.numel();
        let q = cond.matmul(&self.w_cond)?.reshape(&[d_a])?.add(&self.b)?;
        let scores = hp.add_row(&q)?.tanh().matmul(&self.w_a)?.reshape(&[k])?;
        Ok(scores.masked_softmax(mask)?)
    }

    pub fn weights(&self, h: &Tensor<F>, cond: &Tensor<F>, mask: &[bool]) -> Result<Tensor<F>> {
        self.weights_projected(&self.project_tokens(h)?, cond, mask)
    }

    /// Context row `[1 × d_token]` and the weights that produced it.
    pub fn attend(&self, h: &Tensor<F>, cond: &Tensor<F>, mask: &[bool]) -> Result<(Tensor<F>, Tensor<F>)> {
        let a = self.weights(h, cond, mask)?;
        Ok((weighted_sum(&a, h)?, a))
    }
}

/// Joins the tagger states into one conditioning row.
pub fn condition<F: Float>(s_prev: Option<&Tensor<F>>, g_prev: &Tensor<F>) -> Result<Tensor<F>> {
    Ok(match s_prev {
        Some(s) => Tensor::concat(&[s.clone(), g_prev.clone()], 1)?,
        None => g_prev.clone(),
    })
}

/// Attention weights of one task conditioned on both tagger states.
pub fn attention_weights<F: Float>(
    params: &TaskAttention<F>,
    h: &Tensor<F>,
    s_prev: Option<&Tensor<F>>,
    g_prev: &Tensor<F>,
    mask: &[bool],
) -> Result<Tensor<F>> {
    params.weights(h, &condition(s_prev, g_prev)?, mask)
}

/// `Σ_i a_i h_i` as a `[1 × d]` row.
pub fn weighted_sum<F: Float>(a: &Tensor<F>, h: &Tensor<F>) -> Result<Tensor<F>> {
    let k = a.numel();
    Ok(a.reshape(&[1, k])?.matmul(h)?)
}

/// Uniform average over unmasked rows; the context used when attention is
/// ablated.
pub fn mean_pool<F: Float>(h: &Tensor<F>, mask: &[bool]) -> Result<Tensor<F>> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::Argument("mean pooling over an all-masked row".into()));
    }
    let w: Vec<F> = mask
        .iter()
        .map(|&m| if m { F::of(1.0 / n as f64) } else { F::zero() })
        .collect();
    weighted_sum(&Tensor::vector(w), h)
}

pub struct DualStep<F: Float> {
    pub l: Tensor<F>,
    pub v: Tensor<F>,
    pub alpha: Tensor<F>,
    pub beta: Tensor<F>,
}

/// Both task attentions on the same token states, each conditioned on
/// `s_{t-1} ⊕ g_{t-1}`.
pub fn dual_step<F: Float>(
    h: &Tensor<F>,
    s_prev: &Tensor<F>,
    g_prev: &Tensor<F>,
    act: &TaskAttention<F>,
    topic: &TaskAttention<F>,
    mask: &[bool],
) -> Result<DualStep<F>> {
    let cond = condition(Some(s_prev), g_prev)?;
    let (l, alpha) = act.attend(h, &cond, mask)?;
    let (v, beta) = topic.attend(h, &cond, mask)?;
    Ok(DualStep { l, v, alpha, beta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attn(d_cond: usize, d_tok: usize, d_a: usize) -> TaskAttention<f64> {
        TaskAttention::new(&mut ParamStore::new(3), "a", d_cond, d_tok, d_a)
    }

    #[test]
    fn single_position_gets_all_weight() {
        let a = attn(2, 3, 4);
        let h = Tensor::new(vec![0.3, -1.0, 2.0], &[1, 3]).unwrap();
        let w = a.weights(&h, &Tensor::zeros(&[1, 2]), &[true]).unwrap();
        assert_eq!(w.to_vec(), vec![1.0]);
    }

    #[test]
    fn zero_score_vector_is_uniform_over_real_tokens() {
        let a = attn(2, 3, 4);
        a.w_a.data_mut().fill(0.0);
        let h = Tensor::new((0..12).map(|x| x as f64).collect(), &[4, 3]).unwrap();
        let w = a
            .weights(&h, &Tensor::zeros(&[1, 2]), &[true, true, false, true])
            .unwrap()
            .to_vec();
        let third = 1.0 / 3.0;
        assert_eq!(w[2], 0.0);
        for i in [0, 1, 3] {
            assert!((w[i] - third).abs() < 1e-15);
        }
    }

    #[test]
    fn all_masked_is_an_error() {
        let a = attn(2, 3, 4);
        let h = Tensor::zeros(&[2, 3]);
        assert!(a.weights(&h, &Tensor::zeros(&[1, 2]), &[false, false]).is_err());
        assert!(mean_pool(&h, &[false, false]).is_err());
    }

    #[test]
    fn identical_task_params_give_identical_contexts() {
        let act = attn(4, 3, 5);
        let topic = attn(4, 3, 5);
        let h = Tensor::new((0..9).map(|x| (x as f64).cos()).collect(), &[3, 3]).unwrap();
        let s = Tensor::new(vec![0.1, 0.2], &[1, 2]).unwrap();
        let g = Tensor::new(vec![-0.3, 0.4], &[1, 2]).unwrap();
        let out = dual_step(&h, &s, &g, &act, &topic, &[true; 3]).unwrap();
        assert_eq!(out.l.to_vec(), out.v.to_vec());
        assert_eq!(out.alpha.to_vec(), out.beta.to_vec());
    }

    #[test]
    fn mean_pool_ignores_masked_rows() {
        let h = Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 100.0, 100.0], &[3, 2]).unwrap();
        let m = mean_pool(&h, &[true, true, false]).unwrap();
        assert_eq!(m.to_vec(), vec![2.0, 3.0]);
    }
}
