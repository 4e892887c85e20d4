use dahcrf_tensor::{Float, Tensor};

/// Adam with weight decay either added to the gradient (classic L2) or
/// applied to the weights directly.
pub struct Adam<F: Float> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decoupled: bool,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(params: &[Tensor<F>], lr: f64, weight_decay: f64, decoupled: bool) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            decoupled,
            step: 0,
            m: params.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every parameter from its accumulated gradient. Parameters
    /// without a gradient still decay.
    pub fn step(&mut self, params: &[Tensor<F>]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let wd = F::of(self.weight_decay);
        let lr = self.lr;
        for (i, p) in params.iter().enumerate() {
            let grad = p.grad();
            let mut data = p.data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..data.len() {
                let mut g = grad.as_ref().map_or(F::zero(), |g| g[j]);
                if !self.decoupled {
                    g = g + wd * data[j];
                }
                m[j] = b1 * m[j] + (F::one() - b1) * g;
                v[j] = b2 * v[j] + (F::one() - b2) * g * g;
                let mh = m[j].to_f64_lossy() / bc1;
                let vh = v[j].to_f64_lossy() / bc2;
                let mut x = data[j].to_f64_lossy() - lr * mh / (vh.sqrt() + self.eps);
                if self.decoupled {
                    x -= lr * self.weight_decay * data[j].to_f64_lossy();
                }
                data[j] = F::of(x);
            }
        }
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm<F: Float>(params: &[Tensor<F>]) -> f64 {
    params
        .iter()
        .filter_map(|p| p.grad())
        .flatten()
        .map(|g| g.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<F: Float>(params: &[Tensor<F>], max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if norm > max_norm && norm > 0.0 {
        let s = F::of(max_norm / norm);
        for p in params {
            p.scale_grad(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: Vec<f64>) -> Tensor<f64> {
        let n = v.len();
        Tensor::param(v, &[n]).unwrap()
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let p = param(vec![1.0, -2.0]);
        p.mul(&p).unwrap().sum().backward().unwrap();
        let mut opt = Adam::new(std::slice::from_ref(&p), 0.0, 0.0, false);
        opt.step(std::slice::from_ref(&p));
        assert_eq!(p.to_vec(), vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient() {
        let p = param(vec![1.0, -2.0]);
        p.mul(&p).unwrap().sum().backward().unwrap();
        let mut opt = Adam::new(std::slice::from_ref(&p), 0.1, 0.0, false);
        opt.step(std::slice::from_ref(&p));
        let v = p.to_vec();
        assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] + 1.9).abs() < 1e-6, "{v:?}");
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let p = param(vec![3.0, 4.0]);
        p.mul(&Tensor::vector(vec![3.0, 4.0])).unwrap().sum().backward().unwrap();
        let before = clip_grad_norm(std::slice::from_ref(&p), 1.0);
        assert!((before - 5.0).abs() < 1e-12);
        let g = p.grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
