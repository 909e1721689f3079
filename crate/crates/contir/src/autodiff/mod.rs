//! Reverse-mode automatic differentiation over dense `f64` tensors, plus a
//! first-order optimizer. Everything the rankers and learning strategies
//! need and nothing more: no higher-order derivatives, no sparse storage.

mod gradcheck;
mod params;
mod sgd;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use params::{GradientMap, ParameterSet, TapeParams};
pub use sgd::SgdOptimizer;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn backward_of_elementwise_square() {
        // root = sum(p * p) with p = (3,) -> gradient 6
        let mut params = ParameterSet::new();
        params.insert("p", Tensor::from_vec(vec![3.0]));
        let tape = Tape::new();
        let tp = params.attach(&tape);
        let p = tp.var("p");
        let root = p.mul(p).sum_all();
        let grads = tape.backward(&root, &params).unwrap();
        assert_eq!(grads.get("p").unwrap().data(), &[6.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut params = ParameterSet::new();
        params.insert("p", Tensor::from_vec(vec![1.0, 2.0]));
        params.insert("q", Tensor::from_vec(vec![4.0]));
        let tape = Tape::new();
        let tp = params.attach(&tape);
        let root = tp.var("q").sum_all();
        let grads = tape.backward(&root, &params).unwrap();
        assert_eq!(grads.get("p").unwrap().data(), &[0.0, 0.0]);
        assert_eq!(grads.get("q").unwrap().data(), &[1.0]);
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let mut params = ParameterSet::new();
        params.insert("p", Tensor::from_vec(vec![2.0, -1.0]));
        let tape = Tape::new();
        let tp = params.attach(&tape);
        let root = tp.var("p").stop_gradient().sum_all();
        let grads = tape.backward(&root, &params).unwrap();
        assert_eq!(grads.get("p").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_is_linear_over_sums() {
        // grad of (f + g) equals grad f + grad g
        let mut params = ParameterSet::new();
        params.insert("p", Tensor::from_vec(vec![1.5, -0.5]));
        let grad_of = |build: &dyn Fn(&Var) -> Var| {
            let tape = Tape::new();
            let tp = params.attach(&tape);
            let root = build(tp.var("p"));
            tape.backward(&root, &params)
                .unwrap()
                .get("p")
                .unwrap()
                .clone()
        };
        let gf = grad_of(&|p| p.mul(p).sum_all());
        let gg = grad_of(&|p| p.tanh().sum_all());
        let gsum = grad_of(&|p| p.mul(p).sum_all().add(&p.tanh().sum_all()));
        for i in 0..2 {
            assert!((gsum.data()[i] - (gf.data()[i] + gg.data()[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn second_backward_on_same_tape_fails() {
        let mut params = ParameterSet::new();
        params.insert("p", Tensor::scalar(1.0));
        let tape = Tape::new();
        let tp = params.attach(&tape);
        let root = tp.var("p").mul_scalar(2.0);
        tape.backward(&root, &params).unwrap();
        assert!(tape.backward(&root, &params).is_err());
    }

    #[test]
    fn non_scalar_root_fails() {
        let mut params = ParameterSet::new();
        params.insert("p", Tensor::from_vec(vec![1.0, 2.0]));
        let tape = Tape::new();
        let tp = params.attach(&tape);
        let root = tp.var("p").mul_scalar(2.0);
        assert!(tape.backward(&root, &params).is_err());
    }

    #[test]
    fn matmul_identity_and_cosine_values() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let eye = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        assert_eq!(a.matmul(&eye).value().data(), &[1.0, 2.0, 3.0, 4.0]);

        let q = tape.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]));
        let d = tape.constant(Tensor::matrix(1, 2, vec![0.6, 0.8]));
        let cos = q.cosine_matrix(&d).value();
        assert!((cos.data()[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn tanh_at_origin_is_zero() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        assert_eq!(x.tanh().value().item(), 0.0);
    }

    #[test]
    fn max_axis_ties_go_to_first_index() {
        let mut params = ParameterSet::new();
        params.insert("p", Tensor::from_vec(vec![2.0, 2.0, 1.0]));
        let tape = Tape::new();
        let tp = params.attach(&tape);
        let root = tp.var("p").max_axis(0);
        let grads = tape.backward(&root, &params).unwrap();
        assert_eq!(grads.get("p").unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    #[should_panic(expected = "broadcast-compatible")]
    fn incompatible_shapes_panic() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]));
        let b = tape.constant(Tensor::matrix(3, 2, vec![0.0; 6]));
        let _ = a.add(&b);
    }

    #[test]
    #[should_panic(expected = "ln domain")]
    fn ln_of_nonpositive_panics() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![1.0, 0.0]));
        let _ = x.ln();
    }

    #[test]
    #[should_panic(expected = "division by zero")]
    fn divide_by_zero_panics() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(vec![1.0]));
        let b = tape.constant(Tensor::from_vec(vec![0.0]));
        let _ = a.div(&b);
    }

    #[test]
    fn broadcast_over_leading_axes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.constant(Tensor::from_vec(vec![10.0, 20.0, 30.0]));
        let sum = a.add(&b).value();
        assert_eq!(sum.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    }

    #[test]
    fn replay_with_same_inputs_is_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut params = ParameterSet::new();
            params.insert("w", randn(&mut rng, &[4, 3]));
            params.insert("v", randn(&mut rng, &[3]));
            let tape = Tape::new();
            let tp = params.attach(&tape);
            let w = tp.var("w");
            let v = tp.var("v");
            let root = w
                .matmul(&v.reshape(&[3, 1]))
                .tanh()
                .sum_all();
            let grads = tape.backward(&root, &params).unwrap();
            (root.scalar_value().unwrap(), grads.flatten())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1.to_bits(), v2.to_bits());
        assert_eq!(
            g1.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            g2.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    /// Gradient check for every differentiable primitive at seeded random
    /// points. Inputs are kept away from kinks (max ties, |x| near 0 for
    /// masked comparisons) by construction of the random draws.
    #[test]
    #[allow(clippy::type_complexity)]
    fn every_primitive_passes_gradient_check() {
        type Build = fn(&Tape, &TapeParams) -> Var;
        let cases: Vec<(&str, Vec<(&str, Vec<usize>)>, Build)> = vec![
            ("add", vec![("a", vec![2, 3]), ("b", vec![3])], |_t, tp| {
                tp.var("a").add(tp.var("b")).tanh().sum_all()
            }),
            ("sub", vec![("a", vec![2, 3]), ("b", vec![3])], |_t, tp| {
                tp.var("a").sub(tp.var("b")).tanh().sum_all()
            }),
            ("mul", vec![("a", vec![2, 3]), ("b", vec![3])], |_t, tp| {
                tp.var("a").mul(tp.var("b")).tanh().sum_all()
            }),
            ("div", vec![("a", vec![2, 2]), ("b", vec![2, 2])], |_t, tp| {
                let shifted = tp.var("b").mul_scalar(0.25).add_scalar(3.0);
                tp.var("a").div(&shifted).tanh().sum_all()
            }),
            ("matmul", vec![("a", vec![2, 3]), ("b", vec![3, 2])], |_t, tp| {
                tp.var("a").matmul(tp.var("b")).tanh().sum_all()
            }),
            ("transpose", vec![("a", vec![2, 3])], |_t, tp| {
                tp.var("a").transpose().tanh().sum_all()
            }),
            ("concat", vec![("a", vec![2, 2]), ("b", vec![2, 3])], |t, tp| {
                t.concat(&[tp.var("a"), tp.var("b")], 1).tanh().sum_all()
            }),
            ("reshape", vec![("a", vec![2, 3])], |_t, tp| {
                tp.var("a").reshape(&[3, 2]).tanh().sum_all()
            }),
            ("sum_axis", vec![("a", vec![2, 3])], |_t, tp| {
                tp.var("a").sum_axis(1).tanh().sum_all()
            }),
            ("max_axis", vec![("a", vec![3, 4])], |_t, tp| {
                tp.var("a").max_axis(1).tanh().sum_all()
            }),
            ("tanh", vec![("a", vec![5])], |_t, tp| {
                tp.var("a").tanh().sum_all()
            }),
            ("sigmoid", vec![("a", vec![5])], |_t, tp| {
                tp.var("a").sigmoid().sum_all()
            }),
            ("exp", vec![("a", vec![5])], |_t, tp| {
                tp.var("a").exp().sum_all()
            }),
            ("ln", vec![("a", vec![5])], |_t, tp| {
                tp.var("a").add_scalar(3.0).ln().sum_all()
            }),
            ("lookup", vec![("a", vec![4, 3])], |_t, tp| {
                tp.var("a").lookup(&[0, 2, 2, 1]).tanh().sum_all()
            }),
            ("masked_fill", vec![("a", vec![2, 3])], |_t, tp| {
                let mask = Tensor::matrix(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
                tp.var("a").masked_fill(&mask, 0.5).tanh().sum_all()
            }),
            (
                "conv1d",
                vec![("x", vec![5, 2]), ("w", vec![3, 2, 2]), ("b", vec![3])],
                |_t, tp| {
                    tp.var("x")
                        .conv1d(tp.var("w"), tp.var("b"))
                        .tanh()
                        .sum_all()
                },
            ),
            ("l2_normalize", vec![("a", vec![3, 4])], |_t, tp| {
                tp.var("a").add_scalar(2.0).l2_normalize().tanh().sum_all()
            }),
            (
                "cosine_matrix",
                vec![("a", vec![2, 3]), ("b", vec![3, 3])],
                |_t, tp| {
                    let a = tp.var("a").add_scalar(2.0);
                    let b = tp.var("b").add_scalar(2.0);
                    a.cosine_matrix(&b).tanh().sum_all()
                },
            ),
            // The stopped side must be a constant here: its analytic
            // gradient is zero by contract while a finite difference on it
            // would not be. Only flow through the live operand is checked.
            ("stop_gradient", vec![("b", vec![4])], |t, tp| {
                let frozen = t
                    .constant(Tensor::from_vec(vec![0.3, -0.7, 1.1, 0.4]))
                    .stop_gradient();
                frozen.mul(tp.var("b")).tanh().sum_all()
            }),
        ];

        for (name, param_specs, build) in cases {
            for trial in 0..10u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
                let params: ParameterSet = param_specs
                    .iter()
                    .map(|(pname, shape)| (pname.to_string(), randn(&mut rng, shape)))
                    .collect();
                let err = grad_check(&build, &params, 1e-5)
                    .unwrap_or_else(|e| panic!("grad_check {name} trial {trial}: {e}"));
                assert!(err < 1e-4, "{name} trial {trial}: relative error {err}");
            }
        }
    }
}
