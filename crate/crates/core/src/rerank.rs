//! Diversity rerankers: MMR and fast greedy DPP MAP inference.
//!
//! Both operate on per-impression relevance scores plus the fixed semantic
//! similarity matrix. The DPP path maintains an incremental Cholesky
//! factorization so each greedy step costs O(M) per remaining item; the
//! much slower determinant-ratio greedy lives here too as the oracle the
//! fast version is tested against.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::Real;
use crate::text::SimilarityMatrix;

/// Numerical floor below which a remaining item adds no determinant mass.
const DPP_STOP_EPS: Real = 1e-10;

/// Symmetric positive-semidefinite kernel for DPP selection, row-major.
#[derive(Debug, Clone)]
pub struct DppKernel {
    pub size: usize,
    data: Vec<Real>,
}

impl DppKernel {
    pub fn get(&self, i: usize, j: usize) -> Real {
        self.data[i * self.size + j]
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn from_raw(size: usize, data: Vec<Real>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::invalid(format!(
                "kernel of size {size} needs {} entries, got {}",
                size * size,
                data.len()
            )));
        }
        Ok(DppKernel { size, data })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RerankMethod {
    None,
    Mmr,
    Dpp,
}

impl std::str::FromStr for RerankMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RerankMethod::None),
            "mmr" => Ok(RerankMethod::Mmr),
            "dpp" => Ok(RerankMethod::Dpp),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

/// One reranking request: relevance scores, the similarity matrix, how many
/// items to select and the accuracy-diversity knob (theta for DPP, beta for
/// MMR).
#[derive(Debug, Clone)]
pub struct RerankRequest<'a> {
    pub relevance: &'a [Real],
    pub similarity: &'a SimilarityMatrix,
    pub k: usize,
    pub tradeoff: Real,
}

impl RerankRequest<'_> {
    fn validate(&self, op: &'static str) -> Result<()> {
        let m = self.relevance.len();
        if self.similarity.size != m {
            return Err(Error::ShapeMismatch {
                op: "rerank",
                lhs: vec![m],
                rhs: vec![self.similarity.size, self.similarity.size],
            });
        }
        if self.k == 0 || self.k > m {
            return Err(Error::invalid(format!(
                "{op}: k = {} outside 1..={m}",
                self.k
            )));
        }
        if self.relevance.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("rerank relevance scores".into()));
        }
        Ok(())
    }
}

/// Greedy maximal-marginal-relevance selection: repeatedly append the
/// unselected item maximizing `beta * r_i - (1 - beta) * max_sim_to_selected`,
/// ties to the lowest index. The first pick maximizes `beta * r_i` (the
/// max over an empty selected set counts as zero).
pub fn mmr_rerank(req: &RerankRequest) -> Result<Vec<usize>> {
    req.validate("mmr")?;
    let beta = req.tradeoff;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("mmr: beta = {beta} outside [0, 1]")));
    }
    let m = req.relevance.len();
    let mut selected: Vec<usize> = Vec::with_capacity(req.k);
    let mut taken = vec![false; m];
    while selected.len() < req.k {
        let mut best: Option<(usize, Real)> = None;
        for i in 0..m {
            if taken[i] {
                continue;
            }
            let max_sim = selected
                .iter()
                .map(|&j| req.similarity.get(i, j))
                .fold(0.0 as Real, Real::max);
            let score = beta * req.relevance[i] - (1.0 - beta) * max_sim;
            match best {
                Some((_, b)) if score <= b => {}
                _ => best = Some((i, score)),
            }
        }
        let (i, _) = best.unwrap();
        taken[i] = true;
        selected.push(i);
    }
    Ok(selected)
}

/// Clips negative eigenvalues of a symmetric matrix to zero. Cosine
/// similarity matrices of mean word vectors are PSD up to rounding; the
/// clip protects the Cholesky recursion from that rounding.
pub fn psd_floor(size: usize, data: &[Real]) -> Vec<Real> {
    let mat = DMatrix::from_row_slice(size, size, &data.iter().map(|&v| v as f64).collect::<Vec<_>>());
    let eig = SymmetricEigen::new(mat);
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return data.to_vec();
    }
    let clipped = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
    let rebuilt = &eig.eigenvectors * clipped * eig.eigenvectors.transpose();
    (0..size * size)
        .map(|i| rebuilt[(i / size, i % size)] as Real)
        .collect()
}

/// Quality-weighted DPP kernel
/// `L_ij = exp(alpha r_i) * s_ij * exp(alpha r_j)` with
/// `alpha = theta / (2 (1 - theta))`; larger theta favors relevance. The
/// similarity matrix is floored to PSD first, which keeps L PSD under the
/// diagonal congruence.
pub fn build_dpp_kernel(
    relevance: &[Real],
    similarity: &SimilarityMatrix,
    theta: Real,
) -> Result<DppKernel> {
    if !(0.0 < theta && theta < 1.0) {
        return Err(Error::invalid(format!(
            "dpp: theta = {theta} outside (0, 1)"
        )));
    }
    let m = relevance.len();
    if similarity.size != m {
        return Err(Error::ShapeMismatch {
            op: "build_dpp_kernel",
            lhs: vec![m],
            rhs: vec![similarity.size, similarity.size],
        });
    }
    let alpha = theta / (2.0 * (1.0 - theta));
    let s = psd_floor(m, similarity.data());
    let quality: Vec<Real> = relevance.iter().map(|&r| (alpha * r).exp()).collect();
    let mut data = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            data[i * m + j] = quality[i] * s[i * m + j] * quality[j];
        }
    }
    Ok(DppKernel { size: m, data })
}

/// Fast greedy MAP inference: maintains, for every remaining item, the
/// squared marginal gain `d2_i = L_ii - ||c_i||^2` of appending it to the
/// current selection, where `c_i` collects the incremental Cholesky
/// coefficients. Stops at `k` items or when no remaining item has positive
/// gain. Ties go to the lowest index.
pub fn dpp_fast_greedy(kernel: &DppKernel, k: usize) -> Result<Vec<usize>> {
    let m = kernel.size;
    if k > m {
        return Err(Error::invalid(format!("dpp: k = {k} exceeds {m} items")));
    }
    let mut d2: Vec<Real> = (0..m).map(|i| kernel.get(i, i)).collect();
    let mut cholesky: Vec<Vec<Real>> = vec![Vec::new(); m];
    let mut taken = vec![false; m];
    let mut selected = Vec::with_capacity(k);
    while selected.len() < k {
        let mut best: Option<(usize, Real)> = None;
        for i in 0..m {
            if taken[i] {
                continue;
            }
            match best {
                Some((_, b)) if d2[i] <= b => {}
                _ => best = Some((i, d2[i])),
            }
        }
        let (j, gain) = best.unwrap();
        if gain <= DPP_STOP_EPS {
            break; // remaining items add no volume
        }
        taken[j] = true;
        selected.push(j);
        let dj = gain.sqrt();
        let cj = cholesky[j].clone();
        for i in 0..m {
            if taken[i] {
                continue;
            }
            let dot: Real = cj.iter().zip(&cholesky[i]).map(|(&a, &b)| a * b).sum();
            let e = (kernel.get(j, i) - dot) / dj;
            cholesky[i].push(e);
            d2[i] -= e * e;
        }
    }
    Ok(selected)
}

/// Determinant of a square matrix by partial-pivot LU; kept free of any
/// Cholesky machinery so the greedy oracle stays an independent route.
pub fn determinant(size: usize, data: &[Real]) -> Real {
    let mut a: Vec<f64> = data.iter().map(|&v| v as f64).collect();
    let mut det = 1.0f64;
    for col in 0..size {
        let mut pivot = col;
        for row in col + 1..size {
            if a[row * size + col].abs() > a[pivot * size + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * size + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for c in 0..size {
                a.swap(col * size + c, pivot * size + c);
            }
            det = -det;
        }
        let p = a[col * size + col];
        det *= p;
        for row in col + 1..size {
            let factor = a[row * size + col] / p;
            for c in col..size {
                a[row * size + c] -= factor * a[col * size + c];
            }
        }
    }
    det as Real
}

/// Reference greedy: at each step pick the item maximizing
/// `det(L_{T + i})` by direct determinant evaluation. Exponential in
/// nothing but quadratic-times-determinant in cost, so only for small M.
pub fn dpp_naive_greedy(kernel: &DppKernel, k: usize) -> Result<Vec<usize>> {
    let m = kernel.size;
    if k > m {
        return Err(Error::invalid(format!("dpp: k = {k} exceeds {m} items")));
    }
    let submatrix = |items: &[usize]| -> Vec<Real> {
        let n = items.len();
        let mut sub = vec![0.0; n * n];
        for (a, &i) in items.iter().enumerate() {
            for (b, &j) in items.iter().enumerate() {
                sub[a * n + b] = kernel.get(i, j);
            }
        }
        sub
    };
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut taken = vec![false; m];
    let mut current_det = 1.0;
    while selected.len() < k {
        let mut best: Option<(usize, Real)> = None;
        for i in 0..m {
            if taken[i] {
                continue;
            }
            let mut trial = selected.clone();
            trial.push(i);
            let d = determinant(trial.len(), &submatrix(&trial));
            match best {
                Some((_, b)) if d <= b => {}
                _ => best = Some((i, d)),
            }
        }
        let (j, d) = best.unwrap();
        if current_det <= 0.0 || d / current_det <= DPP_STOP_EPS {
            break;
        }
        taken[j] = true;
        selected.push(j);
        current_det = d;
    }
    Ok(selected)
}

/// Final ordering of all M candidates: min-max normalizes the scores to
/// [0, 1] within the impression, applies the chosen reranker, then appends
/// any unselected items by descending normalized relevance. `None` is the
/// pure descending-score order.
pub fn rerank_pipeline(
    scores: &[Real],
    similarity: &SimilarityMatrix,
    method: RerankMethod,
    tradeoff: Real,
    k: Option<usize>,
) -> Result<Vec<usize>> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("rerank input scores".into()));
    }
    let m = scores.len();
    if m == 0 {
        return Err(Error::Empty("rerank candidate list".into()));
    }
    let k = k.unwrap_or(m).min(m);
    let relevance = min_max_normalize(scores);
    let mut order = match method {
        RerankMethod::None => rank_descending(&relevance),
        RerankMethod::Mmr => {
            let req = RerankRequest {
                relevance: &relevance,
                similarity,
                k,
                tradeoff,
            };
            mmr_rerank(&req)?
        }
        RerankMethod::Dpp => {
            let kernel = build_dpp_kernel(&relevance, similarity, tradeoff)?;
            dpp_fast_greedy(&kernel, k)?
        }
    };
    // Greedy selection covers at most k items (fewer if DPP stopped early on
    // a rank-deficient kernel); the tail is appended by descending relevance
    // so the result is always a full ranking of the impression.
    if order.len() < m {
        let mut taken = vec![false; m];
        for &i in &order {
            taken[i] = true;
        }
        for i in rank_descending(&relevance) {
            if !taken[i] {
                order.push(i);
            }
        }
    }
    Ok(order)
}

/// Indices sorted by descending value; ties keep the lower index first.
pub fn rank_descending(values: &[Real]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

fn min_max_normalize(scores: &[Real]) -> Vec<Real> {
    let lo = scores.iter().cloned().fold(Real::INFINITY, Real::min);
    let hi = scores.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    if hi - lo <= 0.0 {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|&s| (s - lo) / (hi - lo)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sim_from(size: usize, data: Vec<Real>) -> SimilarityMatrix {
        SimilarityMatrix::from_raw(size, data).unwrap()
    }

    fn random_psd_kernel(rng: &mut ChaCha8Rng, m: usize) -> DppKernel {
        // B B^T is PSD by construction
        let cols = rng.random_range(1..=m + 1);
        let b: Vec<Real> = (0..m * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut data = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for c in 0..cols {
                    s += b[i * cols + c] * b[j * cols + c];
                }
                data[i * m + j] = s;
            }
        }
        DppKernel { size: m, data }
    }

    // Step-by-step oracle with its own bookkeeping.
    fn mmr_oracle(relevance: &[Real], sim: &SimilarityMatrix, beta: Real, k: usize) -> Vec<usize> {
        let m = relevance.len();
        let mut chosen: Vec<usize> = Vec::new();
        while chosen.len() < k {
            let mut best_i = usize::MAX;
            let mut best_v = Real::NEG_INFINITY;
            for i in 0..m {
                if chosen.contains(&i) {
                    continue;
                }
                let mut worst = 0.0 as Real;
                for &j in &chosen {
                    worst = worst.max(sim.get(i, j));
                }
                let v = beta * relevance[i] - (1.0 - beta) * worst;
                if v > best_v {
                    best_v = v;
                    best_i = i;
                }
            }
            chosen.push(best_i);
        }
        chosen
    }

    #[test]
    fn mmr_beta_one_is_pure_relevance() {
        let r = [0.2, 0.9, 0.5, 0.7];
        let sim = sim_from(4, vec![1.0; 16]);
        let req = RerankRequest {
            relevance: &r,
            similarity: &sim,
            k: 4,
            tradeoff: 1.0,
        };
        assert_eq!(mmr_rerank(&req).unwrap(), vec![1, 3, 2, 0]);
    }

    #[test]
    fn mmr_hand_executed_case() {
        // items 0 and 1 near-duplicates: after picking 0, item 2 wins over 1
        let mut data = vec![0.0; 9];
        for i in 0..3 {
            data[i * 3 + i] = 1.0;
        }
        data[0 * 3 + 1] = 0.95;
        data[1 * 3 + 0] = 0.95;
        let sim = sim_from(3, data);
        let r = [0.9, 0.8, 0.1];
        let req = RerankRequest {
            relevance: &r,
            similarity: &sim,
            k: 2,
            tradeoff: 0.5,
        };
        // adjusted score of item 1 after {0}: 0.5*0.8 - 0.5*0.95 = -0.075
        // adjusted score of item 2 after {0}: 0.5*0.1 - 0.5*0.0  =  0.05
        assert_eq!(mmr_rerank(&req).unwrap(), vec![0, 2]);
    }

    #[test]
    fn mmr_rejects_bad_k() {
        let r = [0.5];
        let sim = sim_from(1, vec![1.0]);
        let req = RerankRequest {
            relevance: &r,
            similarity: &sim,
            k: 2,
            tradeoff: 0.5,
        };
        assert!(mmr_rerank(&req).is_err());
    }

    #[test]
    fn dpp_kernel_construction() {
        let sim = sim_from(2, vec![1.0, 0.25, 0.25, 1.0]);
        let r = [0.0, 0.0];
        let k = build_dpp_kernel(&r, &sim, 0.5).unwrap();
        // zero relevance: kernel equals the (already PSD) similarity
        for i in 0..4 {
            assert!((k.data()[i] - sim.data()[i]).abs() < 1e-12);
        }
        // diagonal: exp(2 alpha r_i)
        let theta = 0.8 as Real;
        let alpha = theta / (2.0 * (1.0 - theta));
        let r = [0.3, 0.9];
        let k = build_dpp_kernel(&r, &sim, theta).unwrap();
        for i in 0..2 {
            assert!((k.get(i, i) - (2.0 * alpha * r[i]).exp()).abs() < 1e-12);
        }
        // 3x3 random instance matches elementwise construction
        let sim3 = sim_from(
            3,
            vec![1.0, 0.2, -0.1, 0.2, 1.0, 0.4, -0.1, 0.4, 1.0],
        );
        let r3 = [0.1, 0.7, 0.4];
        let k3 = build_dpp_kernel(&r3, &sim3, 0.9).unwrap();
        let a3 = 0.9 / (2.0 * 0.1);
        for i in 0..3 {
            for j in 0..3 {
                let expected = (a3 * r3[i]).exp() * sim3.get(i, j) * (a3 * r3[j]).exp();
                assert!((k3.get(i, j) - expected).abs() < 1e-9);
            }
        }
        assert!(build_dpp_kernel(&r3, &sim3, 1.0).is_err());
        assert!(build_dpp_kernel(&r3, &sim3, 0.0).is_err());
    }

    #[test]
    fn psd_floor_clips_negative_eigenvalues() {
        // [[1, 2], [2, 1]] has eigenvalues 3 and -1
        let fixed = psd_floor(2, &[1.0, 2.0, 2.0, 1.0]);
        let k = DppKernel::from_raw(2, fixed.clone()).unwrap();
        // floored matrix is 1.5 on diagonal, 1.5 off (3/2 * ones outer)
        for v in &fixed {
            assert!((v - 1.5).abs() < 1e-9, "{fixed:?}");
        }
        assert!(determinant(2, k.data()).abs() < 1e-9);
        // already-PSD input comes back unchanged
        let same = psd_floor(2, &[1.0, 0.3, 0.3, 1.0]);
        assert_eq!(same, vec![1.0, 0.3, 0.3, 1.0]);
    }

    #[test]
    fn dpp_identity_and_diagonal_kernels() {
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1.0;
        }
        let k = DppKernel::from_raw(4, eye).unwrap();
        // all marginal gains equal: tie rule gives the first three indices
        assert_eq!(dpp_fast_greedy(&k, 3).unwrap(), vec![0, 1, 2]);

        let diag = DppKernel::from_raw(3, vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(dpp_fast_greedy(&diag, 2).unwrap(), vec![0, 2]);
        assert!(dpp_fast_greedy(&diag, 4).is_err());
    }

    #[test]
    fn fast_greedy_matches_naive_determinant_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let m = rng.random_range(1..=8);
            let kernel = random_psd_kernel(&mut rng, m);
            for k in 1..=m {
                let fast = dpp_fast_greedy(&kernel, k).unwrap();
                let naive = dpp_naive_greedy(&kernel, k).unwrap();
                assert_eq!(fast, naive, "m={m} k={k}");
            }
        }
    }

    #[test]
    fn marginal_gain_equals_determinant_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let m = rng.random_range(2..=7);
            let kernel = random_psd_kernel(&mut rng, m);
            // replay fast greedy, checking d2 of each pick against dets
            let mut d2: Vec<Real> = (0..m).map(|i| kernel.get(i, i)).collect();
            let mut chol: Vec<Vec<Real>> = vec![Vec::new(); m];
            let mut taken = vec![false; m];
            let mut selected: Vec<usize> = Vec::new();
            loop {
                let mut best: Option<(usize, Real)> = None;
                for i in 0..m {
                    if taken[i] {
                        continue;
                    }
                    match best {
                        Some((_, b)) if d2[i] <= b => {}
                        _ => best = Some((i, d2[i])),
                    }
                }
                let (j, gain) = best.unwrap();
                if gain <= 1e-6 {
                    break; // ratios degrade near singularity; not the point here
                }
                let sub = |items: &[usize]| {
                    let n = items.len();
                    let mut s = vec![0.0; n * n];
                    for (a, &x) in items.iter().enumerate() {
                        for (b, &y) in items.iter().enumerate() {
                            s[a * n + b] = kernel.get(x, y);
                        }
                    }
                    s
                };
                let det_before = if selected.is_empty() {
                    1.0
                } else {
                    determinant(selected.len(), &sub(&selected))
                };
                let mut with = selected.clone();
                with.push(j);
                let det_after = determinant(with.len(), &sub(&with));
                let ratio = det_after / det_before;
                assert!(
                    (gain - ratio).abs() <= 1e-8 * (1.0 as Real).max(ratio.abs()),
                    "gain {gain} vs det ratio {ratio}"
                );
                taken[j] = true;
                selected.push(j);
                let dj = gain.sqrt();
                let cj = chol[j].clone();
                for i in 0..m {
                    if taken[i] {
                        continue;
                    }
                    let dot: Real = cj.iter().zip(&chol[i]).map(|(&a, &b)| a * b).sum();
                    let e = (kernel.get(j, i) - dot) / dj;
                    chol[i].push(e);
                    d2[i] -= e * e;
                }
                if selected.len() == m {
                    break;
                }
            }
        }
    }

    #[test]
    fn pipeline_none_and_degenerate_scores() {
        let sim = sim_from(3, vec![1.0, 0.9, 0.1, 0.9, 1.0, 0.2, 0.1, 0.2, 1.0]);
        let order = rerank_pipeline(&[0.1, 0.9, 0.5], &sim, RerankMethod::None, 0.0, None).unwrap();
        assert_eq!(order, vec![1, 2, 0]);
        // constant scores min-max to zero; MMR then picks by diversity only
        let order =
            rerank_pipeline(&[0.4, 0.4, 0.4], &sim, RerankMethod::Mmr, 0.5, None).unwrap();
        assert_eq!(order.len(), 3);
        assert_eq!(order[0], 0, "tie on zero relevance goes to index 0");
        assert_eq!(order[1], 2, "least similar to item 0 comes second");
    }

    #[test]
    fn pipeline_theta_near_one_tracks_relevance() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..40 {
            let m = rng.random_range(2..=8);
            let emb: Vec<Vec<Real>> = (0..m)
                .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let sim = SimilarityMatrix::from_embeddings(&emb);
            let scores: Vec<Real> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            let order =
                rerank_pipeline(&scores, &sim, RerankMethod::Dpp, 0.98, None).unwrap();
            let best = rank_descending(&scores)[0];
            assert_eq!(order[0], best, "theta -> 1 must keep the top item");
        }
    }

    #[test]
    fn pipeline_unknown_method_parse() {
        assert!("dppx".parse::<RerankMethod>().is_err());
        assert!(matches!("dpp".parse::<RerankMethod>(), Ok(RerankMethod::Dpp)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mmr_matches_oracle(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.random_range(1..=8);
            let emb: Vec<Vec<Real>> = (0..m)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let sim = SimilarityMatrix::from_embeddings(&emb);
            let relevance: Vec<Real> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            let beta = rng.random_range(0.0..=1.0);
            let k = rng.random_range(1..=m.min(6));
            let req = RerankRequest { relevance: &relevance, similarity: &sim, k, tradeoff: beta };
            prop_assert_eq!(mmr_rerank(&req).unwrap(), mmr_oracle(&relevance, &sim, beta, k));
        }

    }

    // Greedy selections are not provably monotone per instance, so the
    // tradeoff sanity check is statistical: raising the knob should raise
    // (almost) every instance's selected-relevance sum, and the average
    // strictly so between the extremes.
    #[test]
    fn tradeoff_knobs_are_statistically_relevance_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let instances = 200;
        let mut dpp_violations = 0;
        let mut mmr_violations = 0;
        let mut dpp_means = [0.0 as Real; 3];
        let mut mmr_means = [0.0 as Real; 3];
        for _ in 0..instances {
            let m = rng.random_range(4..=8);
            // full-dimensional embeddings keep the kernel full rank
            let emb: Vec<Vec<Real>> = (0..m)
                .map(|_| (0..m + 1).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let sim = SimilarityMatrix::from_embeddings(&emb);
            let relevance: Vec<Real> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            let k = rng.random_range(2..=m.min(5));

            let mut prev = Real::NEG_INFINITY;
            for (gi, theta) in [0.5, 0.8, 0.95].into_iter().enumerate() {
                let kernel = build_dpp_kernel(&relevance, &sim, theta).unwrap();
                let sel = dpp_fast_greedy(&kernel, k).unwrap();
                let sum: Real = sel.iter().map(|&i| relevance[i]).sum();
                if sum < prev - 1e-9 {
                    dpp_violations += 1;
                }
                dpp_means[gi] += sum;
                prev = sum;
            }
            let mut prev = Real::NEG_INFINITY;
            for (gi, beta) in [0.3, 0.6, 0.9].into_iter().enumerate() {
                let req = RerankRequest {
                    relevance: &relevance,
                    similarity: &sim,
                    k,
                    tradeoff: beta,
                };
                let sel = mmr_rerank(&req).unwrap();
                let sum: Real = sel.iter().map(|&i| relevance[i]).sum();
                if sum < prev - 1e-9 {
                    mmr_violations += 1;
                }
                mmr_means[gi] += sum;
                prev = sum;
            }
        }
        let budget = instances / 10;
        assert!(dpp_violations <= budget, "dpp violations {dpp_violations}/{instances}");
        assert!(mmr_violations <= budget, "mmr violations {mmr_violations}/{instances}");
        assert!(dpp_means[2] > dpp_means[0], "dpp mean not increasing: {dpp_means:?}");
        assert!(mmr_means[2] > mmr_means[0], "mmr mean not increasing: {mmr_means:?}");
    }
}
