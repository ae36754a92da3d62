//! Joint segment/base-barrel membership, its marginals, and assignment.
//!
//! Column layout of the membership matrix: for segment `k`, column `2k`
//! holds the barrel likelihood and column `2k + 1` the base likelihood.

use nalgebra::{DMatrix, SVD};

use crate::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-9;

/// Barrel flag value in [`HardLabels::bb`].
pub const BARREL: u8 = 0;
/// Base flag value in [`HardLabels::bb`].
pub const BASE: u8 = 1;

/// Row-stochastic `N x 2K` soft membership matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix {
    m: DMatrix<f64>,
    segments: usize,
}

impl MembershipMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.ncols() == 0 || m.ncols() % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "membership matrix needs an even, positive column count, got {}",
                m.ncols()
            )));
        }
        for (i, row) in m.row_iter().enumerate() {
            if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::InvalidInput(format!("row {i} has entries outside [0, 1]")));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!("row {i} sums to {sum}")));
            }
        }
        let segments = m.ncols() / 2;
        Ok(MembershipMatrix { m, segments })
    }

    /// Row-wise softmax of raw scores.
    pub fn from_logits(logits: &DMatrix<f64>) -> Result<Self> {
        let mut m = logits.clone();
        for mut row in m.row_iter_mut() {
            let max = row.max();
            row.apply(|x| *x = (*x - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        Self::new(m)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn rows(&self) -> usize {
        self.m.nrows()
    }

    pub fn barrel_column(&self, k: usize) -> Vec<f64> {
        self.m.column(2 * k).iter().copied().collect()
    }

    pub fn base_column(&self, k: usize) -> Vec<f64> {
        self.m.column(2 * k + 1).iter().copied().collect()
    }

    /// Most likely `(segment, bb)` class for each row; ties go to the lowest column.
    pub fn argmax(&self) -> HardLabels {
        let (seg, bb) = self
            .m
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                (best / 2, (best % 2) as u8)
            })
            .unzip();
        HardLabels { seg, bb }
    }
}

/// Per-point segment index and base/barrel flag.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HardLabels {
    pub seg: Vec<usize>,
    /// [`BARREL`] or [`BASE`].
    pub bb: Vec<u8>,
}

impl HardLabels {
    pub fn new(seg: Vec<usize>, bb: Vec<u8>) -> Result<Self> {
        if seg.len() != bb.len() {
            return Err(Error::InvalidInput(format!(
                "{} segment labels but {} base/barrel labels",
                seg.len(),
                bb.len()
            )));
        }
        if let Some(i) = bb.iter().position(|&b| b > 1) {
            return Err(Error::InvalidInput(format!("base/barrel flag {} at {i}", bb[i])));
        }
        Ok(HardLabels { seg, bb })
    }

    pub fn len(&self) -> usize {
        self.seg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seg.is_empty()
    }

    /// One more than the largest segment index.
    pub fn segment_count(&self) -> usize {
        self.seg.iter().max().map_or(0, |&s| s + 1)
    }

    pub fn barrel_indices(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.seg[i] == k && self.bb[i] == BARREL).collect()
    }

    pub fn segment_indices(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.seg[i] == k).collect()
    }
}

/// Segment marginal: `W[:, j] = M[:, 2j] + M[:, 2j+1]`.
pub fn marginalize_w(m: &MembershipMatrix) -> DMatrix<f64> {
    let src = m.matrix();
    DMatrix::from_fn(src.nrows(), m.segments(), |i, j| src[(i, 2 * j)] + src[(i, 2 * j + 1)])
}

/// Base/barrel marginal: column 0 sums the barrel columns, column 1 the base columns.
pub fn marginalize_b(m: &MembershipMatrix) -> DMatrix<f64> {
    let src = m.matrix();
    DMatrix::from_fn(src.nrows(), 2, |i, b| {
        (0..m.segments()).map(|j| src[(i, 2 * j + b)]).sum()
    })
}

/// One-hot lift of hard labels into a membership matrix with `k` segments.
pub fn hard_to_m(labels: &HardLabels, k: usize) -> Result<MembershipMatrix> {
    let mut m = DMatrix::zeros(labels.len(), 2 * k);
    for (i, (&s, &b)) in labels.seg.iter().zip(&labels.bb).enumerate() {
        if s >= k {
            return Err(Error::SegmentOutOfRange { segment: s, segments: k });
        }
        m[(i, 2 * s + b as usize)] = 1.0;
    }
    MembershipMatrix::new(m)
}

/// Optimal total cost of a square assignment problem (shortest augmenting
/// paths with potentials). Returns `(cost, assignment)` with
/// `assignment[row] = column`.
fn solve_assignment(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = cost.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    // 1-based arrays with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[i][assignment[i]]).sum();
    (total, assignment)
}

/// Minimum-cost perfect matching on a square cost matrix. Returns
/// `perm[row] = column`; among optimal permutations the lexicographically
/// smallest is returned.
pub fn hungarian_match(cost: &DMatrix<f64>) -> Result<Vec<usize>> {
    if cost.nrows() != cost.ncols() {
        return Err(Error::InvalidInput(format!(
            "cost matrix must be square, got {}x{}",
            cost.nrows(),
            cost.ncols()
        )));
    }
    for i in 0..cost.nrows() {
        for j in 0..cost.ncols() {
            if !cost[(i, j)].is_finite() {
                return Err(Error::NonFiniteCost { row: i, col: j });
            }
        }
    }
    let n = cost.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| cost[(i, j)]).collect()).collect();
    let (optimum, _) = solve_assignment(&rows);
    let scale = rows.iter().flatten().fold(0.0f64, |a, &x| a.max(x.abs()));
    let tol = 1e-9 * (1.0 + scale * n as f64);

    // Fix rows in order to the smallest column that still admits an optimum.
    let mut perm = Vec::with_capacity(n);
    let mut prefix = 0.0;
    let mut free_cols: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        for (pos, &j) in free_cols.iter().enumerate() {
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
            let sub: Vec<Vec<f64>> = rest_rows
                .iter()
                .map(|&r| rest_cols.iter().map(|&c| rows[r][c]).collect())
                .collect();
            let total = prefix + rows[i][j] + solve_assignment(&sub).0;
            if total <= optimum + tol {
                chosen = Some((pos, j));
                break;
            }
        }
        let (pos, j) = chosen.expect("an optimal completion always exists");
        prefix += rows[i][j];
        perm.push(j);
        free_cols.remove(pos);
    }
    Ok(perm)
}

/// Numerical rank of the normal-equation matrix
/// `D = dW dW^T + dB dB^T + 1 1^T` that arises when trying to rebuild the
/// `2K`-column membership matrix from its segment and base/barrel marginals
/// (plus the row-sum constraint). Rank `K + 1 < 2K` for `K >= 2` means the
/// marginals do not determine the joint matrix.
pub fn recovery_system_rank(k: usize) -> usize {
    if k == 0 {
        return 0;
    }
    let delta_w = DMatrix::<f64>::identity(k, k).kronecker(&DMatrix::from_element(2, 1, 1.0));
    let delta_b = DMatrix::<f64>::from_element(k, 1, 1.0).kronecker(&DMatrix::identity(2, 2));
    let ones = DMatrix::<f64>::from_element(2 * k, 1, 1.0);
    let d = &delta_w * delta_w.transpose() + &delta_b * delta_b.transpose() + &ones * ones.transpose();
    let sv = SVD::new(d, false, false).singular_values;
    let max = sv.max();
    sv.iter().filter(|&&s| s > 1e-9 * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_membership(rng: &mut impl Rng, n: usize, k: usize) -> MembershipMatrix {
        let logits = DMatrix::from_fn(n, 2 * k, |_, _| rng.random_range(-3.0..3.0));
        MembershipMatrix::from_logits(&logits).unwrap()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out.sort();
        out
    }

    fn perm_cost(cost: &DMatrix<f64>, p: &[usize]) -> f64 {
        p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum()
    }

    #[test]
    fn marginal_examples() {
        let m = MembershipMatrix::new(DMatrix::from_row_slice(1, 4, &[0.1, 0.2, 0.3, 0.4])).unwrap();
        let w = marginalize_w(&m);
        assert!((w[(0, 0)] - 0.3).abs() < 1e-15 && (w[(0, 1)] - 0.7).abs() < 1e-15);
        let b = marginalize_b(&m);
        assert!((b[(0, 0)] - 0.4).abs() < 1e-15 && (b[(0, 1)] - 0.6).abs() < 1e-15);

        let one_hot = hard_to_m(&HardLabels::new(vec![1], vec![0]).unwrap(), 3).unwrap();
        assert_eq!(marginalize_w(&one_hot).row(0).iter().copied().collect::<Vec<_>>(), [0.0, 1.0, 0.0]);

        let barrel = hard_to_m(&HardLabels::new(vec![0, 1, 1], vec![0, 0, 0]).unwrap(), 2).unwrap();
        for row in marginalize_b(&barrel).row_iter() {
            assert_eq!((row[0], row[1]), (1.0, 0.0));
        }
    }

    #[test]
    fn marginals_are_row_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let k = rng.random_range(1..=8);
            let m = random_membership(&mut rng, 3, k);
            for row in marginalize_w(&m).row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
            for row in marginalize_b(&m).row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn one_hot_lift() {
        let m = hard_to_m(&HardLabels::new(vec![1, 0], vec![1, 0]).unwrap(), 2).unwrap();
        assert_eq!(m.matrix().row(0).iter().copied().collect::<Vec<_>>(), [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.matrix().row(1).iter().copied().collect::<Vec<_>>(), [1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            hard_to_m(&HardLabels::new(vec![2], vec![0]).unwrap(), 2),
            Err(Error::SegmentOutOfRange { segment: 2, segments: 2 })
        ));
    }

    proptest! {
        #[test]
        fn lift_then_argmax_is_identity(
            labels in (1usize..=8).prop_flat_map(|k| {
                proptest::collection::vec((0..k, 0u8..=1), 1..50).prop_map(move |v| (k, v))
            })
        ) {
            let (k, v) = labels;
            let (seg, bb): (Vec<_>, Vec<_>) = v.into_iter().unzip();
            let hard = HardLabels::new(seg, bb).unwrap();
            let m = hard_to_m(&hard, k).unwrap();
            let w = marginalize_w(&m);
            let b = marginalize_b(&m);
            for i in 0..hard.len() {
                let ws = (0..k).max_by(|&a, &c| w[(i, a)].total_cmp(&w[(i, c)])).unwrap();
                prop_assert_eq!(ws, hard.seg[i]);
                prop_assert_eq!(b[(i, 1)] > b[(i, 0)], hard.bb[i] == BASE);
            }
            prop_assert_eq!(m.argmax(), hard);
        }
    }

    #[test]
    fn rejects_invalid_membership() {
        assert!(MembershipMatrix::new(DMatrix::from_row_slice(1, 2, &[0.5, 0.6])).is_err());
        assert!(MembershipMatrix::new(DMatrix::from_row_slice(1, 3, &[0.5, 0.5, 0.0])).is_err());
        assert!(MembershipMatrix::new(DMatrix::from_row_slice(1, 2, &[1.5, -0.5])).is_err());
    }

    #[test]
    fn hungarian_examples() {
        let cost = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        assert_eq!(hungarian_match(&cost).unwrap(), vec![0, 1, 2, 3]);

        let target = [2, 0, 3, 1];
        let cost = DMatrix::from_fn(4, 4, |i, j| if target[i] == j { 0.0 } else { 1.0 });
        assert_eq!(hungarian_match(&cost).unwrap(), target.to_vec());

        let mut bad = DMatrix::zeros(2, 2);
        bad[(1, 0)] = f64::NAN;
        assert!(matches!(hungarian_match(&bad), Err(Error::NonFiniteCost { row: 1, col: 0 })));
    }

    #[test]
    fn hungarian_ties_pick_lexicographically_smallest() {
        assert_eq!(hungarian_match(&DMatrix::zeros(4, 4)).unwrap(), vec![0, 1, 2, 3]);
        let cost = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(hungarian_match(&cost).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn hungarian_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=7 {
            let perms = permutations(n);
            for _ in 0..(if n == 7 { 5 } else { 30 }) {
                let cost = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..10.0));
                let got = hungarian_match(&cost).unwrap();
                let best = perms
                    .iter()
                    .map(|p| perm_cost(&cost, p))
                    .fold(f64::INFINITY, f64::min);
                let got_cost = perm_cost(&cost, &got);
                assert!(got_cost <= best + 1e-9);
                for p in &perms {
                    assert!(got_cost <= perm_cost(&cost, p) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn hungarian_six_by_six_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let perms = permutations(6);
        assert_eq!(perms.len(), 720);
        for _ in 0..20 {
            // Integer costs make ties common, exercising the tie-break rule.
            let cost = DMatrix::from_fn(6, 6, |_, _| rng.random_range(0..4) as f64);
            let best = perms
                .iter()
                .min_by(|a, b| perm_cost(&cost, a).total_cmp(&perm_cost(&cost, b)))
                .unwrap();
            assert_eq!(&hungarian_match(&cost).unwrap(), best);
        }
    }

    #[test]
    fn recovery_rank() {
        assert_eq!(recovery_system_rank(3), 4);
        assert_eq!(recovery_system_rank(1), 2);
        for k in 1..=8 {
            assert_eq!(recovery_system_rank(k), k + 1);
        }
    }

    #[test]
    fn different_joint_matrices_share_marginals() {
        // Two memberships with identical W and B: the marginals are not enough.
        let a = MembershipMatrix::new(DMatrix::from_row_slice(1, 4, &[0.25, 0.25, 0.25, 0.25])).unwrap();
        let b = MembershipMatrix::new(DMatrix::from_row_slice(1, 4, &[0.5, 0.0, 0.0, 0.5])).unwrap();
        assert_eq!(marginalize_w(&a), marginalize_w(&b));
        assert_eq!(marginalize_b(&a), marginalize_b(&b));
        assert_ne!(a, b);
    }
}
