//! Graph evaluation helpers and the finite-difference gradient oracle.

use crate::error::{Error, Result};
use crate::tensor::{Gradients, NodeId, Tape, Tensor};

/// A completed forward pass: the tape, the handles of the registered
/// inputs, and the output node.
pub struct Evaluation {
    pub tape: Tape,
    pub inputs: Vec<NodeId>,
    pub output: NodeId,
}

impl Evaluation {
    pub fn value(&self) -> &Tensor {
        self.tape.value(self.output)
    }
}

/// Runs `graph` over the given inputs, returning the function value and
/// a tape sufficient for backward passes.
pub fn forward_eval<F>(graph: F, inputs: &[Tensor]) -> Result<Evaluation>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let output = graph(&mut tape, &ids)?;
    Ok(Evaluation {
        tape,
        inputs: ids,
        output,
    })
}

/// Gradients of a scalar-valued evaluation with respect to the requested
/// nodes.
pub fn backward_grad(eval: &Evaluation, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
    let grads: Gradients = eval.tape.backward(eval.output)?;
    wrt.iter().map(|&id| grads.wrt(id)).collect()
}

/// Compares the tape gradient of a scalar graph against central finite
/// differences with step `h`, returning the maximum relative error
/// `|fd_i - g_i| / max(|g_i|, 1e-8)` over all input coordinates.
pub fn finite_diff_check<F>(graph: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if h <= 0.0 {
        return Err(Error::InvalidArgument("h must be positive".to_string()));
    }
    let eval = forward_eval(&graph, inputs)?;
    if eval.value().numel() != 1 {
        return Err(Error::NotScalarLoss {
            shape: eval.value().shape().to_vec(),
        });
    }
    let grads = backward_grad(&eval, &eval.inputs)?;

    let loss_at = |perturbed: &[Tensor]| -> Result<f64> {
        forward_eval(&graph, perturbed)?.value().item()
    };

    let mut max_rel = 0.0_f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (t_idx, input) in inputs.iter().enumerate() {
        for i in 0..input.numel() {
            let orig = input.data()[i];

            let mut bumped = input.clone();
            bumped.data[i] = orig + h;
            work[t_idx] = bumped;
            let up = loss_at(&work)?;

            let mut bumped = input.clone();
            bumped.data[i] = orig - h;
            work[t_idx] = bumped;
            let down = loss_at(&work)?;

            work[t_idx] = input.clone();

            let fd = (up - down) / (2.0 * h);
            if !fd.is_finite() {
                return Err(Error::NonFinite {
                    op: "finite_diff_check",
                });
            }
            let g = grads[t_idx].data()[i];
            let rel = (fd - g).abs() / g.abs().max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn identity_value() {
        let eval = forward_eval(|_, ids| Ok(ids[0]), &[Tensor::from_vec(vec![2.0]).unwrap()]).unwrap();
        assert_eq!(eval.value().data(), &[2.0]);
    }

    #[test]
    fn sum_of_squares_value_and_grad() {
        let graph = |tape: &mut Tape, ids: &[NodeId]| {
            let sq = tape.mul(ids[0], ids[0])?;
            tape.sum(sq)
        };
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]).unwrap();
        let eval = forward_eval(graph, &[x]).unwrap();
        assert_eq!(eval.value().item().unwrap(), 14.0);
        let grads = backward_grad(&eval, &eval.inputs).unwrap();
        assert_eq!(grads[0].data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn forward_is_deterministic_bitwise() {
        let graph = |tape: &mut Tape, ids: &[NodeId]| {
            let t = tape.tanh(ids[0])?;
            let s = tape.softmax_last(t)?;
            tape.mean(s)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, vec![4, 5]);
        let a = forward_eval(graph, std::slice::from_ref(&x)).unwrap();
        let b = forward_eval(graph, std::slice::from_ref(&x)).unwrap();
        assert_eq!(a.value().data(), b.value().data());
        let ga = backward_grad(&a, &a.inputs).unwrap();
        let gb = backward_grad(&b, &b.inputs).unwrap();
        assert_eq!(ga[0].data(), gb[0].data());
    }

    #[test]
    fn cosine_gradient_vanishes_at_alignment() {
        // loss = cos(x, c); at x = c the gradient is orthogonal to x and
        // the directional derivative along any direction orthogonal to
        // scaling is zero, so the whole gradient collapses to ~0.
        let c = Tensor::from_vec(vec![0.6, -0.8]).unwrap();
        let graph = move |tape: &mut Tape, ids: &[NodeId]| {
            let cn = tape.constant(c.clone());
            let xn = tape.normalize_last(ids[0])?;
            let cn = tape.normalize_last(cn)?;
            let prod = tape.mul(xn, cn)?;
            tape.sum(prod)
        };
        let x = Tensor::from_vec(vec![0.6, -0.8]).unwrap();
        let eval = forward_eval(&graph, std::slice::from_ref(&x)).unwrap();
        assert!((eval.value().item().unwrap() - 1.0).abs() < 1e-12);
        let grads = backward_grad(&eval, &eval.inputs).unwrap();
        for g in grads[0].data() {
            assert!(g.abs() < 1e-12, "gradient {g} not ~0 at perfect alignment");
        }
    }

    #[test]
    fn finite_diff_exact_for_linear() {
        let graph = |tape: &mut Tape, ids: &[NodeId]| {
            let s = tape.scale(ids[0], 3.0)?;
            let o = tape.offset(s, 1.0)?;
            tape.sum(o)
        };
        let x = Tensor::from_vec(vec![0.3, -0.7, 2.0]).unwrap();
        let err = finite_diff_check(graph, &[x], 1e-4).unwrap();
        assert!(err < 1e-10, "linear FD error {err}");
    }

    #[test]
    fn finite_diff_quadratic() {
        let graph = |tape: &mut Tape, ids: &[NodeId]| {
            let sq = tape.mul(ids[0], ids[0])?;
            tape.sum(sq)
        };
        let x = Tensor::from_vec(vec![0.5, -1.5, 0.25]).unwrap();
        let err = finite_diff_check(graph, &[x], 1e-4).unwrap();
        assert!(err < 1e-8, "quadratic FD error {err}");
    }

    #[test]
    fn finite_diff_every_primitive() {
        // One composite graph touching each differentiable primitive at
        // inputs away from kinks, checked on 10 seeds.
        let graph = |tape: &mut Tape, ids: &[NodeId]| {
            let x = ids[0]; // [2,3]
            let w = ids[1]; // [3,2]
            let b = ids[2]; // [2]
            let mm = tape.matmul(x, w)?;
            let biased = tape.add(mm, b)?;
            let t = tape.tanh(biased)?;
            let s = tape.sigmoid(t)?;
            let sm = tape.softmax_last(s)?;
            let shifted = tape.offset(sm, 1.5)?; // keep ln/powf/div inputs positive
            let ln = tape.ln(shifted)?;
            let p = tape.powf(shifted, 1.7)?;
            let q = tape.div(ln, p)?;
            let r = tape.relu(q)?;
            let nl = tape.normalize_last(r)?;
            let sl = tape.sum_last(nl)?;
            let resh = tape.reshape(sl, vec![1, 2])?;
            let back = tape.reshape(resh, vec![2])?;
            let diff = tape.sub(back, b)?;
            let sc = tape.scale(diff, 0.75)?;
            let m = tape.mul(sc, sc)?;
            let perm = tape.permute(m, std::rc::Rc::new(vec![1, 0]), vec![2])?;
            let row = tape.reshape(perm, vec![1, 2])?;
            let stacked = tape.concat_rows(&[row, resh])?;
            let flipped = tape.transpose(stacked)?;
            let total = tape.sum(flipped)?;
            let avg = tape.mean(m)?;
            tape.add(total, avg)
        };
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, vec![2, 3]);
            let w = rand_tensor(&mut rng, vec![3, 2]);
            let b = rand_tensor(&mut rng, vec![2]);
            let err = finite_diff_check(graph, &[x, w, b], 1e-4).unwrap();
            assert!(err < 1e-3, "seed {seed}: FD error {err}");
        }
    }

    #[test]
    fn backward_is_linear_in_loss() {
        // grad(a*L1 + b*L2) == a*grad(L1) + b*grad(L2)
        let l1 = |tape: &mut Tape, ids: &[NodeId]| {
            let sq = tape.mul(ids[0], ids[0])?;
            tape.sum(sq)
        };
        let l2 = |tape: &mut Tape, ids: &[NodeId]| {
            let t = tape.tanh(ids[0])?;
            tape.mean(t)
        };
        let (a, b) = (2.5, -1.25);
        let combined = move |tape: &mut Tape, ids: &[NodeId]| {
            let v1 = l1(tape, ids)?;
            let v2 = l2(tape, ids)?;
            let s1 = tape.scale(v1, a)?;
            let s2 = tape.scale(v2, b)?;
            tape.add(s1, s2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, vec![6]);

        let g1 = {
            let e = forward_eval(l1, std::slice::from_ref(&x)).unwrap();
            backward_grad(&e, &e.inputs).unwrap().remove(0)
        };
        let g2 = {
            let e = forward_eval(l2, std::slice::from_ref(&x)).unwrap();
            backward_grad(&e, &e.inputs).unwrap().remove(0)
        };
        let gc = {
            let e = forward_eval(combined, std::slice::from_ref(&x)).unwrap();
            backward_grad(&e, &e.inputs).unwrap().remove(0)
        };
        for i in 0..x.numel() {
            let expect = a * g1.data()[i] + b * g2.data()[i];
            assert!((gc.data()[i] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn tape_reusable_for_repeated_backward() {
        let graph = |tape: &mut Tape, ids: &[NodeId]| {
            let sq = tape.mul(ids[0], ids[0])?;
            tape.sum(sq)
        };
        let x = Tensor::from_vec(vec![1.0, -2.0]).unwrap();
        let eval = forward_eval(graph, &[x]).unwrap();
        let g1 = backward_grad(&eval, &eval.inputs).unwrap();
        let g2 = backward_grad(&eval, &eval.inputs).unwrap();
        assert_eq!(g1[0].data(), g2[0].data());
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_vec(vec![1.0, 2.0]).unwrap());
        let b = tape.input(Tensor::from_vec(vec![1.0, 2.0, 3.0]).unwrap());
        assert!(tape.mul(a, b).is_err());
        assert!(tape.matmul(a, b).is_err());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_vec(vec![1.0, 2.0]).unwrap());
        assert!(matches!(
            tape.backward(a),
            Err(Error::NotScalarLoss { .. })
        ));
    }

    #[test]
    fn division_guard_trips() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_vec(vec![1.0]).unwrap());
        let b = tape.input(Tensor::from_vec(vec![1e-13]).unwrap());
        assert!(matches!(tape.div(a, b), Err(Error::DivisionGuard { .. })));
    }

    #[test]
    fn non_finite_intermediate_reported() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_vec(vec![-1.0]).unwrap());
        // ln of a negative number is NaN.
        assert!(matches!(tape.ln(a), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn broadcast_add_bias_over_rows() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = tape.input(Tensor::from_vec(vec![10.0, 20.0, 30.0]).unwrap());
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let loss = tape.sum(s).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }
}
