//! Pairwise marginal recovery as an optimal transport problem:
//! `argmax <Q, B>` subject to `Q 1 = r_parent`, `Q' 1 = r_child`.
//!
//! The default solver is entropically regularized Sinkhorn scaling in the log
//! domain followed by marginal rounding, so the returned coupling satisfies
//! both marginal constraints exactly; an exact LP solver is available for
//! small instances and is what the dual-decomposition gap certificate uses.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{AgmError, Result};
use crate::lp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMethod {
    Sinkhorn,
    ExactLp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    pub method: TransportMethod,
    /// Entropic regularization as a fraction of `max|B|`.
    pub eps_factor: f64,
    /// l1 marginal tolerance that stops the Sinkhorn loop.
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iters: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            method: TransportMethod::Sinkhorn,
            eps_factor: 1e-2,
            sinkhorn_tol: 1e-9,
            sinkhorn_max_iters: 5000,
        }
    }
}

/// Recovers the adversary's pairwise marginal for one edge.
///
/// `b` has parent labels on rows and child labels on columns; `r_parent` and
/// `r_child` are the prescribed row and column marginals.
pub fn recover_pairwise(
    b: &Array2<f64>,
    r_child: &Array1<f64>,
    r_parent: &Array1<f64>,
    cfg: &TransportConfig,
) -> Result<Array2<f64>> {
    let (kp, kc) = b.dim();
    if r_parent.len() != kp || r_child.len() != kc {
        return Err(AgmError::DimensionMismatch(format!(
            "potential is {kp}x{kc}, marginals have lengths {} and {}",
            r_parent.len(),
            r_child.len()
        )));
    }
    if b.iter().any(|v| !v.is_finite())
        || r_parent.iter().chain(r_child.iter()).any(|v| !v.is_finite())
    {
        return Err(AgmError::NonFinite("transport inputs".into()));
    }
    let mass_parent: f64 = r_parent.iter().map(|&x| x.max(0.0)).sum();
    let mass_child: f64 = r_child.iter().map(|&x| x.max(0.0)).sum();
    if (mass_parent - mass_child).abs() > 1e-8 {
        return Err(AgmError::MarginalMismatch(format!(
            "row mass {mass_parent} differs from column mass {mass_child}"
        )));
    }

    let rp = r_parent.mapv(|x| x.max(0.0));
    let rc = r_child.mapv(|x| x.max(0.0));

    let bmax = b.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let q = if bmax <= 1e-12 {
        // Zero potential: every coupling is optimal, return the independent
        // one (the maximum-entropy limit of the regularized problem).
        outer(&rp, &rc)
    } else {
        match cfg.method {
            TransportMethod::Sinkhorn => sinkhorn_coupling(b, &rp, &rc, cfg)?,
            TransportMethod::ExactLp => exact_transport(b, &rp, &rc)?.0,
        }
    };
    Ok(round_to_marginals(q, &rp, &rc))
}

fn outer(rp: &Array1<f64>, rc: &Array1<f64>) -> Array2<f64> {
    let total: f64 = rp.sum();
    let scale = if total > 0.0 { 1.0 / total } else { 0.0 };
    Array2::from_shape_fn((rp.len(), rc.len()), |(i, j)| rp[i] * rc[j] * scale)
}

/// Log-domain Sinkhorn on the support of the marginals; zero-mass labels are
/// excluded so the scaling never divides by zero and re-enter as zero rows or
/// columns of the result.
fn sinkhorn_coupling(
    b: &Array2<f64>,
    rp: &Array1<f64>,
    rc: &Array1<f64>,
    cfg: &TransportConfig,
) -> Result<Array2<f64>> {
    let rows: Vec<usize> = (0..rp.len()).filter(|&i| rp[i] > 1e-15).collect();
    let cols: Vec<usize> = (0..rc.len()).filter(|&j| rc[j] > 1e-15).collect();
    if rows.is_empty() || cols.is_empty() {
        return Ok(Array2::zeros(b.dim()));
    }
    let bmax = b.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let eps = (cfg.eps_factor * bmax).max(1e-300);

    let sub = Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| b[[rows[i], cols[j]]]);
    let log_rp: Vec<f64> = rows.iter().map(|&i| rp[i].ln()).collect();
    let log_rc: Vec<f64> = cols.iter().map(|&j| rc[j].ln()).collect();

    let mut f = vec![0.0; rows.len()];
    let mut g = vec![0.0; cols.len()];
    for _ in 0..cfg.sinkhorn_max_iters {
        for (i, fi) in f.iter_mut().enumerate() {
            let lse = logsumexp((0..cols.len()).map(|j| (sub[[i, j]] + g[j]) / eps));
            *fi = eps * (log_rp[i] - lse);
        }
        for (j, gj) in g.iter_mut().enumerate() {
            let lse = logsumexp((0..rows.len()).map(|i| (sub[[i, j]] + f[i]) / eps));
            *gj = eps * (log_rc[j] - lse);
        }
        // After the column scaling the column marginals are exact; stop when
        // the rows agree too.
        let mut row_err = 0.0;
        for i in 0..rows.len() {
            let mut s = 0.0;
            for j in 0..cols.len() {
                s += ((sub[[i, j]] + f[i] + g[j]) / eps).exp();
            }
            row_err += (s - rp[rows[i]]).abs();
        }
        if row_err <= cfg.sinkhorn_tol {
            break;
        }
    }

    let mut q = Array2::zeros(b.dim());
    for (i, &ri) in rows.iter().enumerate() {
        for (j, &cj) in cols.iter().enumerate() {
            q[[ri, cj]] = ((sub[[i, j]] + f[i] + g[j]) / eps).exp();
        }
    }
    Ok(q)
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Row-then-column scaling with residual redistribution: scales rows down to
/// their targets, then columns, then spreads the leftover mass as an outer
/// product of the row and column deficits.
fn round_to_marginals(mut q: Array2<f64>, rp: &Array1<f64>, rc: &Array1<f64>) -> Array2<f64> {
    let row_sums = q.sum_axis(Axis(1));
    for (i, mut row) in q.axis_iter_mut(Axis(0)).enumerate() {
        if row_sums[i] > 0.0 {
            let scale = (rp[i] / row_sums[i]).min(1.0);
            row.mapv_inplace(|x| x * scale);
        }
    }
    let col_sums = q.sum_axis(Axis(0));
    for (j, mut col) in q.axis_iter_mut(Axis(1)).enumerate() {
        if col_sums[j] > 0.0 {
            let scale = (rc[j] / col_sums[j]).min(1.0);
            col.mapv_inplace(|x| x * scale);
        }
    }
    let err_r: Array1<f64> = (rp - &q.sum_axis(Axis(1))).mapv(|x| x.max(0.0));
    let err_c: Array1<f64> = (rc - &q.sum_axis(Axis(0))).mapv(|x| x.max(0.0));
    let total: f64 = err_r.sum();
    if total > 0.0 {
        for i in 0..q.nrows() {
            if err_r[i] == 0.0 {
                continue;
            }
            for j in 0..q.ncols() {
                q[[i, j]] += err_r[i] * err_c[j] / total;
            }
        }
    }
    q
}

/// Exact transport solve by LP: maximizes `<Q, B>` over the polytope with the
/// given row and column marginals. Returns the coupling and its objective.
pub fn exact_transport(
    b: &Array2<f64>,
    r_parent: &Array1<f64>,
    r_child: &Array1<f64>,
) -> Result<(Array2<f64>, f64)> {
    let sol = exact_transport_with_duals(b, r_parent, r_child)?;
    Ok((sol.coupling, sol.value))
}

/// Exact transport solution plus the dual potentials of its marginal
/// constraints (a supergradient of the value in the marginals).
#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub coupling: Array2<f64>,
    pub value: f64,
    pub parent_potential: Array1<f64>,
    pub child_potential: Array1<f64>,
}

pub fn exact_transport_with_duals(
    b: &Array2<f64>,
    r_parent: &Array1<f64>,
    r_child: &Array1<f64>,
) -> Result<TransportSolution> {
    let rows: Vec<usize> = (0..r_parent.len()).filter(|&i| r_parent[i] > 1e-15).collect();
    let cols: Vec<usize> = (0..r_child.len()).filter(|&j| r_child[j] > 1e-15).collect();
    let (nr, nc) = (rows.len(), cols.len());
    if nr == 0 || nc == 0 {
        return Ok(TransportSolution {
            coupling: Array2::zeros(b.dim()),
            value: 0.0,
            parent_potential: Array1::zeros(r_parent.len()),
            child_potential: Array1::zeros(r_child.len()),
        });
    }
    let nvars = nr * nc;
    let mut c = vec![0.0; nvars];
    for (i, &ri) in rows.iter().enumerate() {
        for (j, &cj) in cols.iter().enumerate() {
            c[i * nc + j] = -b[[ri, cj]];
        }
    }
    let mut a = Vec::with_capacity(nr + nc);
    let mut rhs = Vec::with_capacity(nr + nc);
    for i in 0..nr {
        let mut row = vec![0.0; nvars];
        for j in 0..nc {
            row[i * nc + j] = 1.0;
        }
        a.push(row);
        rhs.push(r_parent[rows[i]]);
    }
    for j in 0..nc {
        let mut row = vec![0.0; nvars];
        for i in 0..nr {
            row[i * nc + j] = 1.0;
        }
        a.push(row);
        rhs.push(r_child[cols[j]]);
    }
    let sol = lp::solve_standard(&c, &a, &rhs)?;
    let mut q = Array2::zeros(b.dim());
    for (i, &ri) in rows.iter().enumerate() {
        for (j, &cj) in cols.iter().enumerate() {
            q[[ri, cj]] = sol.x[i * nc + j].max(0.0);
        }
    }
    // The LP minimizes -<Q,B>, so the maximization potentials are the
    // negated duals. Off-support labels get the potential of the cheapest
    // in-support move so the supergradient never rewards adding mass there.
    let mut parent_potential = Array1::zeros(r_parent.len());
    let mut child_potential = Array1::zeros(r_child.len());
    for (i, &ri) in rows.iter().enumerate() {
        parent_potential[ri] = -sol.duals[i];
    }
    for (j, &cj) in cols.iter().enumerate() {
        child_potential[cj] = -sol.duals[nr + j];
    }
    for i in 0..r_parent.len() {
        if !rows.contains(&i) {
            parent_potential[i] = (0..r_child.len())
                .filter(|j| cols.contains(j))
                .map(|j| b[[i, j]] - child_potential[j])
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    for j in 0..r_child.len() {
        if !cols.contains(&j) {
            child_potential[j] = (0..r_parent.len())
                .map(|i| b[[i, j]] - parent_potential[i])
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    Ok(TransportSolution {
        coupling: q,
        value: -sol.objective,
        parent_potential,
        child_potential,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn uniform(k: usize) -> Array1<f64> {
        Array1::from_elem(k, 1.0 / k as f64)
    }

    #[test]
    fn zero_potential_gives_independent_coupling() {
        let b = Array2::zeros((2, 2));
        let q = recover_pairwise(&b, &uniform(2), &uniform(2), &TransportConfig::default()).unwrap();
        for &x in q.iter() {
            assert!((x - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn strong_diagonal_couples_diagonally() {
        let b = array![[10.0, 0.0], [0.0, 10.0]];
        let q = recover_pairwise(&b, &uniform(2), &uniform(2), &TransportConfig::default()).unwrap();
        assert!((q[[0, 0]] - 0.5).abs() < 1e-3);
        assert!((q[[1, 1]] - 0.5).abs() < 1e-3);
        // Exact LP oracle on the same polytope.
        let (qx, vx) = exact_transport(&b, &uniform(2), &uniform(2)).unwrap();
        assert!((vx - 10.0).abs() < 1e-9);
        assert!((qx[[0, 0]] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn one_hot_child_forces_single_column() {
        let b = array![[1.0, -2.0], [0.5, 3.0]];
        let r_child = array![0.0, 1.0];
        let r_parent = array![0.3, 0.7];
        let q = recover_pairwise(&b, &r_child, &r_parent, &TransportConfig::default()).unwrap();
        assert!((q[[0, 1]] - 0.3).abs() < 1e-10);
        assert!((q[[1, 1]] - 0.7).abs() < 1e-10);
        assert_eq!(q[[0, 0]], 0.0);
        assert_eq!(q[[1, 0]], 0.0);
    }

    #[test]
    fn marginals_exact_after_rounding() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let cfg = TransportConfig::default();
        for _ in 0..50 {
            let k = rng.random_range(2..=5);
            let b = Array2::from_shape_fn((k, k), |_| rng.random_range(-3.0..3.0));
            let mut rp = Array1::from_shape_fn(k, |_| rng.random_range(0.01..1.0));
            let mut rc = Array1::from_shape_fn(k, |_| rng.random_range(0.01..1.0));
            rp /= rp.sum();
            rc /= rc.sum();
            let q = recover_pairwise(&b, &rc, &rp, &cfg).unwrap();
            let row_err = (&q.sum_axis(Axis(1)) - &rp).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            let col_err = (&q.sum_axis(Axis(0)) - &rc).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            assert!(row_err < 1e-10, "row error {row_err}");
            assert!(col_err < 1e-10, "column error {col_err}");
            assert!(q.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn sinkhorn_objective_near_exact_optimum() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let cfg = TransportConfig::default();
        for _ in 0..30 {
            let k = rng.random_range(2..=5);
            let b = Array2::from_shape_fn((k, k), |_| rng.random_range(-2.0..2.0));
            let mut rp = Array1::from_shape_fn(k, |_| rng.random_range(0.05..1.0));
            let mut rc = Array1::from_shape_fn(k, |_| rng.random_range(0.05..1.0));
            rp /= rp.sum();
            rc /= rc.sum();
            let q = recover_pairwise(&b, &rc, &rp, &cfg).unwrap();
            let approx: f64 = (&q * &b).sum();
            let (_, exact) = exact_transport(&b, &rp, &rc).unwrap();
            let bmax = b.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            let bound = cfg.eps_factor * bmax * ((k * k) as f64).ln();
            assert!(
                exact - approx <= bound + 1e-9,
                "suboptimality {} exceeds entropic bound {bound}",
                exact - approx
            );
        }
    }

    #[test]
    fn mass_mismatch_rejected() {
        let b = Array2::zeros((2, 2));
        let res = recover_pairwise(
            &b,
            &array![0.5, 0.6],
            &uniform(2),
            &TransportConfig::default(),
        );
        assert!(matches!(res, Err(AgmError::MarginalMismatch(_))));
    }
}
