//! Cross-checks analytic gradients against central finite differences.
//!
//! The closure rebuilds the loss graph from scratch on every call, so any
//! stochastic choices (permutation plans) must be frozen by the caller.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::tensor::{Real, Tensor};

/// Central-difference step used by the test suites.
pub const DEFAULT_STEP: Real = 1e-5;

/// Max over all parameter coordinates of
/// `|analytic - central_difference| / max(1, |analytic|)`.
pub fn finite_difference_check<F>(params: &mut [Tensor], h: Real, f: F) -> Result<Real>
where
    F: Fn(&mut Graph, &[TensorId]) -> Result<TensorId>,
{
    let eval = |params: &[Tensor]| -> Result<Real> {
        let mut g = Graph::new();
        let ids: Vec<TensorId> = params.iter().map(|p| g.constant(p.clone())).collect();
        let loss = f(&mut g, &ids)?;
        let v = g.value(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("finite_difference_check objective".into()));
        }
        Ok(v)
    };

    // Analytic gradients from one taped pass.
    let analytic: Vec<Vec<Real>> = {
        let mut g = Graph::new();
        let ids: Vec<TensorId> = params.iter().map(|p| g.leaf(p.clone())).collect();
        let loss = f(&mut g, &ids)?;
        if !g.value(loss).item().is_finite() {
            return Err(Error::NonFinite("finite_difference_check objective".into()));
        }
        g.backward(loss)?;
        ids.iter().map(|&id| g.grad(id).unwrap().to_vec()).collect()
    };

    let mut max_rel = 0.0;
    for pi in 0..params.len() {
        for ci in 0..params[pi].numel() {
            let orig = params[pi].data()[ci];
            params[pi].data_mut()[ci] = orig + h;
            let plus = eval(params)?;
            params[pi].data_mut()[ci] = orig - h;
            let minus = eval(params)?;
            params[pi].data_mut()[ci] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let a = analytic[pi][ci];
            let rel = (a - fd).abs() / (1.0 as Real).max(a.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn half_squared_norm_gradient_is_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = vec![random_tensor(&mut rng, vec![10])];
        let err = finite_difference_check(&mut params, DEFAULT_STEP, |g, ids| {
            let sq = g.mul(ids[0], ids[0])?;
            let s = g.sum(sq);
            Ok(g.scale(s, 0.5))
        })
        .unwrap();
        assert!(err < 1e-7, "max rel error {err}");
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut params = vec![Tensor::from_vec(vec![Real::NAN])];
        let res = finite_difference_check(&mut params, DEFAULT_STEP, |g, ids| {
            let _ = g;
            Ok(ids[0])
        });
        assert!(res.is_err());
    }

    #[test]
    fn composite_graph_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = vec![
            random_tensor(&mut rng, vec![4, 3]),
            random_tensor(&mut rng, vec![3, 5]),
            random_tensor(&mut rng, vec![5]),
        ];
        let err = finite_difference_check(&mut params, DEFAULT_STEP, |g, ids| {
            let h = g.matmul(ids[0], ids[1])?;
            let hb = g.add(h, ids[2])?;
            let t = g.tanh(hb);
            let sm = g.softmax(t)?;
            let lg = g.log(sm);
            Ok(g.sum(lg))
        })
        .unwrap();
        assert!(err < 1e-5, "max rel error {err}");
    }

    // Property: every primitive's analytic gradient matches central finite
    // differences on random shapes with extents <= 8.
    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn primitive_gradients_match_fd(seed in 0u64..1000, m in 1usize..8, k in 1usize..8, n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_tensor(&mut rng, vec![m, k]);
            let b = random_tensor(&mut rng, vec![k, n]);
            let c = random_tensor(&mut rng, vec![m, k]);
            let bias = random_tensor(&mut rng, vec![k]);
            let idx: Vec<usize> = (0..m + 1).map(|_| rng.random_range(0..m)).collect();

            // matmul + transpose + scale + sum
            let mut p = vec![a.clone(), b.clone()];
            let err = finite_difference_check(&mut p, DEFAULT_STEP, |g, ids| {
                let t = g.transpose(ids[1])?;
                let tt = g.transpose(t)?;
                let prod = g.matmul(ids[0], tt)?;
                let sc = g.scale(prod, 1.7);
                Ok(g.sum(sc))
            }).unwrap();
            prop_assert!(err < 1e-5, "matmul chain: {err}");

            // add (same-shape and bias broadcast), mul, relu, tanh
            let mut p = vec![a.clone(), c.clone(), bias.clone()];
            let err = finite_difference_check(&mut p, DEFAULT_STEP, |g, ids| {
                let s = g.add(ids[0], ids[1])?;
                let sb = g.add(s, ids[2])?;
                let r = g.relu(sb);
                let t = g.tanh(r);
                let pm = g.mul(t, ids[0])?;
                Ok(g.sum(pm))
            }).unwrap();
            prop_assert!(err < 1e-5, "elementwise chain: {err}");

            // exp + log + softmax + gather_rows + concat + sum
            let mut p = vec![a.clone(), c.clone()];
            let err = finite_difference_check(&mut p, DEFAULT_STEP, |g, ids| {
                let e = g.exp(ids[0]);
                let lp = g.add_scalar(e, 1.0);
                let lg = g.log(lp);
                let sm = g.softmax(ids[1])?;
                let cc = g.concat_cols(&[lg, sm])?;
                let stacked = g.concat_rows(&[cc, cc])?;
                let gr = g.gather_rows(stacked, &idx)?;
                Ok(g.sum(gr))
            }).unwrap();
            prop_assert!(err < 1e-5, "exp/log/softmax chain: {err}");
        }

        #[test]
        fn masked_softmax_rows_sum_to_one(seed in 0u64..1000, r in 1usize..8, c in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_tensor(&mut rng, vec![r, c]);
            // mask out a random strict subset of each row
            let mask_data: Vec<Real> = (0..r * c)
                .map(|i| if i % c != 0 && rng.random_bool(0.4) { Real::NEG_INFINITY } else { 0.0 })
                .collect();
            let mask = Tensor::new(vec![r, c], mask_data.clone()).unwrap();
            let mut g = Graph::new();
            let xid = g.constant(x);
            let mid = g.constant(mask);
            let y = g.masked_softmax(xid, mid).unwrap();
            let out = g.value(y);
            for row in 0..r {
                let s: Real = out.row(row).iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12, "row {row} sums to {s}");
                for col in 0..c {
                    if mask_data[row * c + col] == Real::NEG_INFINITY {
                        prop_assert_eq!(out.at(row, col), 0.0);
                    }
                }
            }
        }
    }
}
