use dahcrf_tensor::Tensor;
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_is_a_probability_vector(xs in prop::collection::vec(-500.0f64..500.0, 1..40)) {
        let p = Tensor::vector(xs).softmax().unwrap().to_vec();
        prop_assert!(p.iter().all(|&v| v >= 0.0 && v.is_finite()));
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_f32_is_a_probability_vector(xs in prop::collection::vec(-80.0f32..80.0, 1..40)) {
        let p = Tensor::vector(xs).softmax().unwrap().to_vec();
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        let total: f32 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-6 * 8.0);
    }

    #[test]
    fn log_sum_exp_bounds(xs in prop::collection::vec(-1e3f64..1e3, 1..30)) {
        let n = xs.len() as f64;
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = Tensor::vector(xs).log_sum_exp().unwrap().item().unwrap();
        prop_assert!(lse >= max - 1e-9);
        prop_assert!(lse <= max + n.ln() + 1e-9);
    }

    #[test]
    fn gradients_are_finite_and_deterministic(
        xs in prop::collection::vec(-5.0f64..5.0, 6),
        ws in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        let run = || {
            let x = Tensor::param(xs.clone(), &[2, 3]).unwrap();
            let w = Tensor::param(ws.clone(), &[3, 2]).unwrap();
            let loss = x.matmul(&w).unwrap().tanh().log_sum_exp_rows().unwrap().sum();
            loss.backward().unwrap();
            (loss.item().unwrap(), x.grad().unwrap(), w.grad().unwrap())
        };
        let a = run();
        let b = run();
        prop_assert!(a.1.iter().chain(&a.2).all(|g| g.is_finite()));
        prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
        prop_assert_eq!(a.1, b.1);
        prop_assert_eq!(a.2, b.2);
    }
}
