//! Per-node zero-sum game `max_{r in simplex} [ a'r + min_{p in simplex} p'L r ]`.
//!
//! Solved exactly by support enumeration: for every pair of equal-size
//! supports, equalize the active payoff rows and columns by a linear solve and
//! keep the first pair passing the simplex and equilibrium feasibility
//! checks. A sorted fast path handles (scaled) zero-one loss in `O(k log k)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{AgmError, Result};
use crate::loss::LossMatrix;

/// Solution of one node game.
#[derive(Debug, Clone)]
pub struct NodeGameResult {
    /// Adversary node marginal (maximizer).
    pub r: Array1<f64>,
    /// Predictor node marginal (minimizer), supported on active loss rows.
    pub p: Array1<f64>,
    /// Game value `a'r + min_j (L r)_j`.
    pub value: f64,
    /// Each column `b` of the potential matrix carries mass `r[b]` spread
    /// uniformly over that column's maximizing rows.
    pub row_assignment: Array2<f64>,
}

/// Solves the game for a bare potential vector `a`.
///
/// The potential matrix is taken to be the single row `a'` (the form the
/// root's game has under a one-state dummy parent), so the row assignment
/// degenerates to `r'`.
pub fn solve_node_game(a: &Array1<f64>, loss: &LossMatrix) -> Result<NodeGameResult> {
    let mat = a.view().insert_axis(Axis(0));
    solve_node_game_matrix(mat, loss, true, 1e-9)
}

/// Solves the game induced by a full potential matrix `A` (rows index the
/// parent's labels): the adversary vector is the columnwise maximum of `A`,
/// and the returned row assignment places each column's mass on the rows
/// attaining that maximum, split uniformly on ties within `tie_tol`
/// (relative).
pub fn solve_node_game_matrix(
    a_mat: ArrayView2<f64>,
    loss: &LossMatrix,
    zero_one_fast_path: bool,
    tie_tol: f64,
) -> Result<NodeGameResult> {
    let k = loss.k();
    if a_mat.ncols() != k {
        return Err(AgmError::DimensionMismatch(format!(
            "potential matrix has {} columns, loss has {k} labels",
            a_mat.ncols()
        )));
    }
    if a_mat.iter().any(|v| !v.is_finite()) {
        return Err(AgmError::NonFinite("node potentials".into()));
    }
    let a: Array1<f64> = a_mat.map_axis(Axis(0), |col| {
        col.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    });

    let (r, p) = match (zero_one_fast_path, loss.as_scaled_zero_one()) {
        (true, Some(w)) => solve_sorted_zero_one(&a, w),
        _ => solve_by_support_enumeration(&a, loss)?,
    };
    let value = game_value(&a, loss, &r);
    let row_assignment = row_placement(a_mat, &r, tie_tol);
    Ok(NodeGameResult {
        r,
        p,
        value,
        row_assignment,
    })
}

/// `a'r + min_j (L r)_j`.
pub fn game_value(a: &Array1<f64>, loss: &LossMatrix, r: &Array1<f64>) -> f64 {
    let lr = loss.entries().dot(r);
    a.dot(r) + lr.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn row_placement(a_mat: ArrayView2<f64>, r: &Array1<f64>, tie_tol: f64) -> Array2<f64> {
    let (rows, cols) = a_mat.dim();
    let mut q = Array2::zeros((rows, cols));
    for b in 0..cols {
        let col = a_mat.column(b);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tol = tie_tol * max.abs().max(1.0);
        let winners: Vec<usize> = (0..rows).filter(|&i| col[i] >= max - tol).collect();
        let share = r[b] / winners.len() as f64;
        for i in winners {
            q[[i, b]] = share;
        }
    }
    q
}

/// Zero-one fast path: the optimum is uniform on the `m` largest potential
/// entries for the best `m`, found by one sort and a prefix scan.
fn solve_sorted_zero_one(a: &Array1<f64>, w: f64) -> (Array1<f64>, Array1<f64>) {
    let k = a.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| a[j].partial_cmp(&a[i]).unwrap().then(i.cmp(&j)));

    let mut best_m = 1;
    let mut best_val = f64::NEG_INFINITY;
    let mut prefix = 0.0;
    for m in 1..=k {
        prefix += a[order[m - 1]];
        let val = (prefix - w) / m as f64 + w;
        if val > best_val + 1e-12 * val.abs().max(1.0) {
            best_val = val;
            best_m = m;
        }
    }

    let mut r = Array1::zeros(k);
    for &idx in &order[..best_m] {
        r[idx] = 1.0 / best_m as f64;
    }
    // Equalizing columns of the active set pins p up to the value: the
    // predictor weight of label b is (w + a_b - v) / w, zero off-support.
    let v: f64 = order[..best_m].iter().map(|&i| a[i]).sum::<f64>() / best_m as f64
        + w * (best_m as f64 - 1.0) / best_m as f64;
    let mut p = Array1::zeros(k);
    for &idx in &order[..best_m] {
        p[idx] = ((w + a[idx] - v) / w).max(0.0);
    }
    let total: f64 = p.sum();
    p.mapv_inplace(|x| x / total);
    (r, p)
}

fn solve_by_support_enumeration(
    a: &Array1<f64>,
    loss: &LossMatrix,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let k = a.len();
    let l = loss.entries();
    // Payoff to the adversary when the predictor plays row j and the
    // adversary column b.
    let m = Array2::from_shape_fn((k, k), |(j, b)| l[[j, b]] + a[b]);
    let scale = m.iter().cloned().fold(1.0f64, |acc, v| acc.max(v.abs()));

    for tol in [1e-9 * scale, 1e-7 * scale, 1e-5 * scale] {
        if let Some(found) = enumerate_supports(&m, tol) {
            return Ok(found);
        }
    }
    Err(AgmError::Lp(
        "support enumeration found no equilibrium; inputs may be ill-conditioned".into(),
    ))
}

/// Tries support pairs in (size, lexicographic) order and returns the first
/// equilibrium, which fixes ties toward the smallest support.
fn enumerate_supports(m: &Array2<f64>, tol: f64) -> Option<(Array1<f64>, Array1<f64>)> {
    let k = m.nrows();
    for size in 1..=k {
        let adversary_supports = combinations(k, size);
        let predictor_supports = combinations(k, size);
        for t in &adversary_supports {
            for s in &predictor_supports {
                if let Some(pair) = try_support_pair(m, s, t, tol) {
                    return Some(pair);
                }
            }
        }
    }
    None
}

fn try_support_pair(
    m: &Array2<f64>,
    s: &[usize],
    t: &[usize],
    tol: f64,
) -> Option<(Array1<f64>, Array1<f64>)> {
    let k = m.nrows();
    let sz = s.len();

    // Adversary side: rows of S are equalized at the value v.
    //   sum_{b in T} M[j][b] r_b - v = 0 for j in S;  sum r = 1.
    let mut sys = vec![vec![0.0; sz + 2]; sz + 1];
    for (row, &j) in s.iter().enumerate() {
        for (col, &b) in t.iter().enumerate() {
            sys[row][col] = m[[j, b]];
        }
        sys[row][sz] = -1.0;
        sys[row][sz + 1] = 0.0;
    }
    for col in 0..sz {
        sys[sz][col] = 1.0;
    }
    sys[sz][sz + 1] = 1.0;
    let r_sol = solve_dense(&mut sys)?;
    let v = r_sol[sz];
    if r_sol[..sz].iter().any(|&x| x < -tol) {
        return None;
    }

    // Predictor side: columns of T are equalized at the same value.
    let mut sysp = vec![vec![0.0; sz + 2]; sz + 1];
    for (row, &b) in t.iter().enumerate() {
        for (col, &j) in s.iter().enumerate() {
            sysp[row][col] = m[[j, b]];
        }
        sysp[row][sz] = -1.0;
        sysp[row][sz + 1] = 0.0;
    }
    for col in 0..sz {
        sysp[sz][col] = 1.0;
    }
    sysp[sz][sz + 1] = 1.0;
    let p_sol = solve_dense(&mut sysp)?;
    let w = p_sol[sz];
    if p_sol[..sz].iter().any(|&x| x < -tol) || (v - w).abs() > 10.0 * tol {
        return None;
    }

    let mut r = Array1::zeros(k);
    for (col, &b) in t.iter().enumerate() {
        r[b] = r_sol[col].max(0.0);
    }
    let rs = r.sum();
    r.mapv_inplace(|x| x / rs);
    let mut p = Array1::zeros(k);
    for (col, &j) in s.iter().enumerate() {
        p[j] = p_sol[col].max(0.0);
    }
    let ps = p.sum();
    p.mapv_inplace(|x| x / ps);

    // Equilibrium checks outside the supports: no predictor row may beat the
    // active ones, no adversary column may beat the value.
    let mr = m.dot(&r);
    if mr.iter().enumerate().any(|(j, &x)| !s.contains(&j) && x < v - tol) {
        return None;
    }
    let pm = p.dot(m);
    if pm.iter().enumerate().any(|(b, &x)| !t.contains(&b) && x > v + tol) {
        return None;
    }
    Some((r, p))
}

/// Gaussian elimination with partial pivoting on an augmented system; the
/// last column is the right hand side. Returns `None` when singular.
fn solve_dense(aug: &mut [Vec<f64>]) -> Option<Vec<f64>> {
    let n = aug.len();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().partial_cmp(&aug[j][col].abs()).unwrap())?;
        if aug[pivot_row][col].abs() < 1e-12 {
            return None;
        }
        aug.swap(col, pivot_row);
        let pv = aug[col][col];
        for j in col..=n {
            aug[col][j] /= pv;
        }
        for i in 0..n {
            if i != col && aug[i][col] != 0.0 {
                let factor = aug[i][col];
                for j in col..=n {
                    aug[i][j] -= factor * aug[col][j];
                }
            }
        }
    }
    Some((0..n).map(|i| aug[i][n]).collect())
}

fn combinations(k: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(size);
    fn rec(start: usize, k: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            cur.push(i);
            rec(i + 1, k, size, cur, out);
            cur.pop();
        }
    }
    rec(0, k, size, &mut cur, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{make_loss, LossKind, LossSpec};
    use ndarray::array;

    fn zero_one(k: usize) -> LossMatrix {
        make_loss(&LossSpec::new(LossKind::ZeroOne, k), 1).unwrap()
    }

    #[test]
    fn symmetric_two_label_game() {
        let res = solve_node_game(&array![0.0, 0.0], &zero_one(2)).unwrap();
        assert!((res.value - 0.5).abs() < 1e-12);
        assert!((res.r[0] - 0.5).abs() < 1e-12);
        assert!((res.p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn symmetric_three_label_game() {
        let res = solve_node_game(&array![0.0, 0.0, 0.0], &zero_one(3)).unwrap();
        assert!((res.value - 2.0 / 3.0).abs() < 1e-12);
        for &x in res.r.iter() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_potential_forces_pure_play() {
        let res = solve_node_game(&array![10.0, 0.0], &zero_one(2)).unwrap();
        assert!((res.value - 10.0).abs() < 1e-12);
        assert!((res.r[0] - 1.0).abs() < 1e-12);
        assert!((res.r[1]).abs() < 1e-12);
    }

    #[test]
    fn fast_path_matches_enumeration_on_zero_one() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for k in 2..=5 {
            let loss = zero_one(k);
            for _ in 0..40 {
                let a = Array1::from_iter((0..k).map(|_| rng.random_range(-2.0..2.0)));
                let fast = {
                    let mat = a.view().insert_axis(Axis(0));
                    solve_node_game_matrix(mat, &loss, true, 1e-9).unwrap()
                };
                let slow = {
                    let mat = a.view().insert_axis(Axis(0));
                    solve_node_game_matrix(mat, &loss, false, 1e-9).unwrap()
                };
                assert!(
                    (fast.value - slow.value).abs() < 1e-9,
                    "k={k} a={a:?}: fast {} vs enumeration {}",
                    fast.value,
                    slow.value
                );
            }
        }
    }

    #[test]
    fn weighted_zero_one_fast_path() {
        let loss = zero_one(3).scaled(2.5).unwrap();
        let res = solve_node_game(&array![0.0, 0.0, 0.0], &loss).unwrap();
        // Uniform play leaves 1 - 1/3 of the weighted mass uncovered.
        assert!((res.value - 2.5 * (2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn translation_shifts_value_only() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let loss = make_loss(&LossSpec::new(LossKind::Absolute, 4), 1).unwrap();
        for _ in 0..20 {
            let a = Array1::from_iter((0..4).map(|_| rng.random_range(-1.0..1.0)));
            let c = rng.random_range(-3.0..3.0);
            let base = solve_node_game(&a, &loss).unwrap();
            let shifted = solve_node_game(&(&a + c), &loss).unwrap();
            assert!((shifted.value - base.value - c).abs() < 1e-9);
            for (x, y) in base.r.iter().zip(shifted.r.iter()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn result_invariants_hold() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for kind in [LossKind::ZeroOne, LossKind::Absolute, LossKind::Squared] {
            for k in 2..=4 {
                let loss = make_loss(&LossSpec::new(kind, k), 1).unwrap();
                for _ in 0..25 {
                    let a = Array1::from_iter((0..k).map(|_| rng.random_range(-2.0..2.0)));
                    let res = solve_node_game(&a, &loss).unwrap();
                    assert!((res.r.sum() - 1.0).abs() < 1e-9);
                    assert!((res.p.sum() - 1.0).abs() < 1e-9);
                    assert!(res.r.iter().all(|&x| x >= 0.0));
                    assert!(res.p.iter().all(|&x| x >= 0.0));
                    assert!((game_value(&a, &loss, &res.r) - res.value).abs() < 1e-10);
                    // Row assignment of the single-row matrix is r itself.
                    let col_marg = res.row_assignment.sum_axis(Axis(0));
                    for (x, y) in col_marg.iter().zip(res.r.iter()) {
                        assert!((x - y).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn matrix_form_ties_split_uniformly() {
        let a_mat = array![[1.0, 0.0], [1.0, 2.0]];
        let loss = zero_one(2);
        let res = solve_node_game_matrix(a_mat.view(), &loss, true, 1e-9).unwrap();
        // Column 0 is tied between both rows, column 1 is won by row 1.
        assert!((res.row_assignment[[0, 0]] - res.r[0] / 2.0).abs() < 1e-12);
        assert!((res.row_assignment[[1, 0]] - res.r[0] / 2.0).abs() < 1e-12);
        assert!((res.row_assignment[[1, 1]] - res.r[1]).abs() < 1e-12);
        assert_eq!(res.row_assignment[[0, 1]], 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        let res = solve_node_game(&array![f64::NAN, 0.0], &zero_one(2));
        assert!(matches!(res, Err(AgmError::NonFinite(_))));
    }
}
