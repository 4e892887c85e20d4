//! Conversation-level BiGRU over utterance contexts.
//!
//! Inside the model the forward direction advances one utterance at a time
//! because attention at step `t` reads its state `→g_{t-1}`; the backward
//! direction runs once all contexts exist.

use dahcrf_tensor::{Float, Tensor};

use crate::encoder::GruCell;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub struct ConversationTagger<F: Float> {
    pub fwd: GruCell<F>,
    pub bwd: GruCell<F>,
}

impl<F: Float> ConversationTagger<F> {
    pub fn new(store: &mut ParamStore<F>, name: &str, d_in: usize, d_h: usize) -> Self {
        ConversationTagger {
            fwd: GruCell::new(store, &format!("{name}.fwd"), d_in, d_h),
            bwd: GruCell::new(store, &format!("{name}.bwd"), d_in, d_h),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.fwd.hidden_dim()
    }

    /// `→g_0`, a zero row.
    pub fn initial(&self) -> Tensor<F> {
        self.fwd.zero_state(1)
    }

    /// Combines forward states (one `[1 × d_h]` row per utterance) with a
    /// backward pass over the stacked contexts `[T × d_in]`, giving
    /// `[T × 2d_h]` rows `→g_t ⊕ ←g_t`.
    pub fn finish(&self, fwd: &[Tensor<F>], contexts: &Tensor<F>) -> Result<Tensor<F>> {
        let t_len = fwd.len();
        if t_len == 0 || contexts.shape()[0] != t_len {
            return Err(Error::Argument(format!(
                "{t_len} forward states for contexts {:?}",
                contexts.shape()
            )));
        }
        let xp = self.bwd.project_inputs(contexts)?;
        let mut bwd = vec![Tensor::zeros(&[0]); t_len];
        let mut h = self.bwd.zero_state(1);
        for t in (0..t_len).rev() {
            h = self.bwd.step_projected(&h, &xp.narrow(0, t, 1)?)?;
            bwd[t] = h.clone();
        }
        Ok(Tensor::concat(
            &[Tensor::concat(fwd, 0)?, Tensor::concat(&bwd, 0)?],
            1,
        )?)
    }

    /// Full bidirectional pass over precomputed contexts `[1 × d_in]`.
    pub fn tag(&self, contexts: &[Tensor<F>]) -> Result<Tensor<F>> {
        if contexts.is_empty() {
            return Err(Error::Argument("cannot tag an empty conversation".into()));
        }
        let mut h = self.initial();
        let mut fwd = Vec::with_capacity(contexts.len());
        for c in contexts {
            h = self.fwd.step(&h, c)?;
            fwd.push(h.clone());
        }
        self.finish(&fwd, &Tensor::concat(contexts, 0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_row_per_utterance() {
        let t = ConversationTagger::<f64>::new(&mut ParamStore::new(2), "t", 4, 3);
        let ctx: Vec<_> = (0..5)
            .map(|i| Tensor::new(vec![i as f64 * 0.1; 4], &[1, 4]).unwrap())
            .collect();
        assert_eq!(t.tag(&ctx).unwrap().shape(), &[5, 6]);
        assert_eq!(t.tag(&ctx[..1]).unwrap().shape(), &[1, 6]);
        assert!(t.tag(&[]).is_err());
    }

    #[test]
    fn zero_parameters_give_zero_states() {
        let t = ConversationTagger::<f64>::new(&mut ParamStore::new(2), "t", 2, 3);
        for c in [&t.fwd, &t.bwd] {
            for p in [&c.w, &c.b, &c.u_zr, &c.u_h] {
                p.data_mut().fill(0.0);
            }
        }
        let ctx = vec![Tensor::new(vec![1.0, -2.0], &[1, 2]).unwrap(); 3];
        assert!(t.tag(&ctx).unwrap().to_vec().iter().all(|&v| v == 0.0));
    }
}
