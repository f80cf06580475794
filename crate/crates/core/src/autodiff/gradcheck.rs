//! Central finite-difference verification of the reverse pass.

use alloc::format;
use alloc::vec::Vec;

use super::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compares the analytic gradient of a scalar-valued graph against central
/// finite differences, coordinate by coordinate, over every input.
///
/// Returns the maximum relative error with denominator
/// `max(|analytic|, |numeric|, 1e-8)`. Coordinates where the two sides
/// agree within 1e-7 absolute count as matched: the probe itself carries
/// `~|f| * 1e-14 / eps` rounding noise, which swamps the relative test for
/// structurally tiny gradients (a bias feeding a train-mode batch norm has
/// an exactly-zero gradient, for instance) while leaving real formula
/// errors, which shift whole coordinates, well above the floor.
/// The builder must be pure: it is re-invoked twice per input coordinate.
pub fn grad_check<F>(build: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(
            "grad_check",
            format!("eps {eps} outside [1e-7, 1e-3]"),
        ));
    }

    let eval = |tensors: &[Tensor]| -> Result<(Graph, Vec<NodeId>, NodeId)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let root = build(&mut g, &ids)?;
        if g.value(root).numel() != 1 {
            return Err(Error::invalid(
                "grad_check",
                format!("builder must produce a scalar, got {:?}", g.value(root).shape()),
            ));
        }
        if !g.value(root).item().is_finite() {
            return Err(Error::NonFinite { op: "grad_check" });
        }
        Ok((g, ids, root))
    };

    let (graph, ids, root) = eval(inputs)?;
    let grads = graph.backward(root)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, input)| {
            grads
                .get(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(input.shape()))
        })
        .collect();
    drop(graph);

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel: f64 = 0.0;
    for (ti, analytic_t) in analytic.iter().enumerate() {
        for ci in 0..work[ti].numel() {
            let orig = work[ti].data()[ci];

            work[ti].data_mut()[ci] = orig + eps;
            let (g_plus, _, r_plus) = eval(&work)?;
            let f_plus = g_plus.value(r_plus).item();
            drop(g_plus);

            work[ti].data_mut()[ci] = orig - eps;
            let (g_minus, _, r_minus) = eval(&work)?;
            let f_minus = g_minus.value(r_minus).item();
            drop(g_minus);

            work[ti].data_mut()[ci] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic_t.data()[ci];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite { op: "grad_check" });
            }
            if (a - numeric).abs() < 1e-7 {
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exactly_linear_in_fd() {
        // f(x) = sum x^2 at [1, 2]: analytic [2, 4]; central differences are
        // exact for quadratics up to rounding.
        let x = Tensor::new(&[2], alloc::vec![1.0, 2.0]).unwrap();
        let err = grad_check(
            |g, ids| {
                let sq = g.mul(ids[0], ids[0])?;
                Ok(g.sum_all(sq))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn clamp_is_locally_linear_away_from_kinks() {
        let x = Tensor::new(&[3], alloc::vec![0.3, 0.7, 0.5]).unwrap();
        let err = grad_check(
            |g, ids| {
                let c = g.clamp(ids[0], 0.0, 1.0);
                let sq = g.mul(c, c)?;
                Ok(g.sum_all(sq))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn rejects_bad_eps_and_nonscalar_roots() {
        let x = Tensor::new(&[2], alloc::vec![1.0, 2.0]).unwrap();
        assert!(grad_check(|g, ids| Ok(g.sum_all(ids[0])), &[x.clone()], 1e-2).is_err());
        assert!(grad_check(|_, ids| Ok(ids[0]), &[x], 1e-5).is_err());
    }
}
