//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Build a fresh [`Graph`] per step: create leaves, apply operations, call
//! [`Graph::backward`] once on a scalar loss, then read leaf gradients.

mod check;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use check::{finite_difference_gradient, relative_error};
pub use graph::{Graph, OpKind, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn exp_of_zero_is_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0));
        let y = g.exp(x).unwrap();
        assert_eq!(g.value(y).item(), 1.0);
    }

    #[test]
    fn relu_clips_negatives() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-2.0, 0.0, 3.0]).unwrap());
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::identity(2));
        let m = g.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let y = g.matmul(i, m).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.value(y).shape(), &[2, 2]);
    }

    #[test]
    fn shape_mismatch_names_the_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(Error::ShapeMismatch { op, shapes }) => {
                assert_eq!(op, "matmul");
                assert_eq!(shapes, vec![vec![2, 3], vec![2, 3]]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
        let c = g.constant(Tensor::zeros(&[4]));
        assert!(matches!(g.add(a, c), Err(Error::ShapeMismatch { op: "add", .. })));
    }

    #[test]
    fn divide_by_zero_is_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::vector(vec![1.0, 0.0]).unwrap());
        assert!(matches!(g.div(a, b), Err(Error::DivideByZero)));
    }

    #[test]
    fn overflow_is_reported() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(1000.0));
        assert!(matches!(g.exp(a), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn grad_of_square() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.square(x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn grad_of_sum_exp() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let e = g.exp(x).unwrap();
        let s = g.sum(e).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn grad_of_mean_relu() {
        // Expected value frozen from a central-difference run (step 1e-6).
        let oracle = finite_difference_gradient(
            |p| Ok(p[0].data().iter().map(|v| v.max(0.0)).sum::<f64>() / 2.0),
            &[Tensor::vector(vec![-1.0, 2.0]).unwrap()],
            1e-6,
        )
        .unwrap();
        assert!((oracle[0].data()[0] - 0.0).abs() < 1e-9);
        assert!((oracle[0].data()[1] - 0.5).abs() < 1e-9);

        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![-1.0, 2.0]).unwrap());
        let r = g.relu(x).unwrap();
        let m = g.mean(r).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.5]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let y = g.square(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn second_backward_is_an_error() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(1.0));
        let y = g.square(x).unwrap();
        g.backward(y).unwrap();
        assert!(matches!(g.backward(y), Err(Error::BackwardAlreadyRun)));
        assert_eq!(g.grad(x).unwrap().item(), 2.0);
    }

    #[test]
    fn detached_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(1.0));
        let unused = g.param(Tensor::vector(vec![5.0, 6.0]).unwrap());
        let c = g.constant(Tensor::scalar(2.0));
        let y = g.mul(x, c).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(unused).unwrap().data(), &[0.0, 0.0]);
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().item(), 2.0);
    }

    #[test]
    fn bias_broadcast_reduces_gradient_over_rows() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap());
        let b = g.param(Tensor::vector(vec![0.5, -0.5]).unwrap());
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.5, 1.5, 3.5, 3.5, 5.5, 5.5]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn broadcast_to_column_and_scalar() {
        let mut g = Graph::new();
        let col = g.param(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let wide = g.broadcast_to(col, &[2, 3]).unwrap();
        assert_eq!(g.value(wide).data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let s = g.constant(Tensor::scalar(4.0));
        let full = g.broadcast_to(s, &[2, 3]).unwrap();
        let prod = g.mul(wide, full).unwrap();
        let total = g.sum(prod).unwrap();
        g.backward(total).unwrap();
        assert_eq!(g.grad(col).unwrap().data(), &[12.0, 12.0]);
        assert!(g.broadcast_to(col, &[3, 3]).is_err());
    }

    #[test]
    fn concat_columns_and_split_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::from_rows(&[[1.0], [2.0]]).unwrap());
        let b = g.param(Tensor::from_rows(&[[3.0, 4.0], [5.0, 6.0]]).unwrap());
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let sq = g.square(c).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[2.0, 4.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[6.0, 8.0, 10.0, 12.0]);
    }
}
