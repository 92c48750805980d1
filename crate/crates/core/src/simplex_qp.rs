//! Minimum-norm point over the probability simplex.
//!
//! Given unit-normalized per-reward gradients, the balancing coefficients are
//! the solution of
//!
//! ```text
//! minimize   || sum_k alpha_k g_k ||^2 = alpha' G alpha
//! subject to alpha in the probability simplex
//! ```
//!
//! where `G` is the Gram matrix of pairwise inner products. Everything here
//! works on `G` alone, so the full parameter vectors are never touched inside
//! the solver loop.
//!
//! The solver is Frank-Wolfe with exact line search, warm-started from uniform
//! weights, interleaved with an exact affine solve on the current active face
//! (with boundary backtracking when the face minimizer leaves the simplex).
//! The face solve is what lets the returned point carry a KKT certificate at
//! near machine precision; plain Frank-Wolfe alternates between face vertices
//! at an O(1/t) rate when the minimizer sits on a boundary face and cannot
//! reach certificate-grade accuracy in a bounded iteration budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::GradientVector;

/// Tolerance on `|sum(alpha) - 1|` for a valid simplex vector.
pub const SIMPLEX_SUM_TOL: f64 = 1e-12;

/// `||d*||^2` at or below this value means the gradient set is fully
/// conflicting (the convex hull contains the origin).
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

/// A nonnegative length-K vector summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    /// Validates nonnegativity (entries below `-1e-12` are rejected, tiny
    /// negative rounding is clamped to zero) and the unit-sum constraint.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("simplex weights of length 0".into()));
        }
        let mut clamped = values;
        let mut sum = 0.0;
        for v in &mut clamped {
            if !v.is_finite() {
                return Err(Error::Numeric("non-finite simplex weight".into()));
            }
            if *v < 0.0 {
                if *v < -SIMPLEX_SUM_TOL {
                    return Err(Error::Parameter(format!("negative simplex weight {v}")));
                }
                *v = 0.0;
            }
            sum += *v;
        }
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::Parameter(format!(
                "simplex weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self(clamped))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k >= 1, "uniform weights need k >= 1");
        Self(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, index: usize) -> Self {
        assert!(index < k, "one-hot index out of range");
        let mut v = vec![0.0; k];
        v[index] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    /// `rho * self + (1 - rho) * other`, re-projected if rounding ever drifts
    /// past the simplex tolerance.
    pub fn convex_combination(&self, other: &Self, rho: f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "simplex lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Parameter(format!(
                "mixing factor {rho} not in [0,1]"
            )));
        }
        let mixed: Vec<f64> = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| rho * a + (1.0 - rho) * b)
            .collect();
        match Self::new(mixed.clone()) {
            Ok(w) => Ok(w),
            Err(_) => project_to_simplex(&mixed),
        }
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(w: SimplexWeights) -> Self {
        w.0
    }
}

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

/// Symmetric K x K matrix of pairwise gradient inner products.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    dim: usize,
    // row-major, dim * dim
    entries: Vec<f64>,
}

impl GramMatrix {
    /// Builds from row-major entries, enforcing symmetry and finiteness.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptyInput("0x0 Gram matrix".into()));
        }
        if entries.len() != dim * dim {
            return Err(Error::Dimension(format!(
                "{} entries for a {dim}x{dim} matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite Gram entry".into()));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if entries[i * dim + j] != entries[j * dim + i] {
                    return Err(Error::Parameter(format!(
                        "asymmetric Gram matrix at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::Dimension("ragged Gram rows".into()));
            }
            entries.extend_from_slice(row);
        }
        Self::new(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.entry(i, i)).sum()
    }

    /// `alpha' G alpha`.
    pub fn quad_form(&self, alpha: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            let mut row = 0.0;
            for j in 0..self.dim {
                row += self.entry(i, j) * alpha[j];
            }
            s += alpha[i] * row;
        }
        s
    }

    /// `G alpha`.
    pub fn mul_vec(&self, alpha: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.entry(i, j) * alpha[j]).sum())
            .collect()
    }

    /// Eigenvalues by cyclic Jacobi rotations. Exact enough for the K <= 16
    /// matrices this crate ever sees.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let n = self.dim;
        let mut a = self.entries.clone();
        let idx = |i: usize, j: usize| i * n + j;
        for _sweep in 0..64 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[idx(i, j)] * a[idx(i, j)];
                }
            }
            if off.sqrt() < 1e-14 * (1.0 + self.trace().abs()) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[idx(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[idx(p, p)];
                    let aqq = a[idx(q, q)];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[idx(k, p)];
                        let akq = a[idx(k, q)];
                        a[idx(k, p)] = c * akp - s * akq;
                        a[idx(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[idx(p, k)];
                        let aqk = a[idx(q, k)];
                        a[idx(p, k)] = c * apk - s * aqk;
                        a[idx(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut eigs: Vec<f64> = (0..n).map(|i| a[idx(i, i)]).collect();
        eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        eigs
    }

    /// Positive semidefinite within tolerance: every eigenvalue estimate is at
    /// least `-1e-9 * trace`.
    pub fn is_psd(&self) -> bool {
        let floor = -1e-9 * self.trace().abs().max(1.0);
        self.eigenvalues().iter().all(|&e| e >= floor)
    }
}

/// Pairwise inner products of the given gradients.
pub fn build_gram(gradients: &[GradientVector]) -> Result<GramMatrix> {
    if gradients.is_empty() {
        return Err(Error::EmptyInput("no gradients for Gram matrix".into()));
    }
    let len = gradients[0].len();
    if len == 0 {
        return Err(Error::EmptyInput("zero-length gradients".into()));
    }
    for (k, g) in gradients.iter().enumerate() {
        if g.len() != len {
            return Err(Error::Dimension(format!(
                "gradient {k} has length {}, expected {len}",
                g.len()
            )));
        }
    }
    let k = gradients.len();
    let mut entries = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let d = gradients[i].dot(&gradients[j])?;
            entries[i * k + j] = d;
            entries[j * k + i] = d;
        }
    }
    GramMatrix::new(k, entries)
}

/// Result of the min-norm solve.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub alpha: SimplexWeights,
    /// `||d*||^2 = alpha' G alpha` at the returned point.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the objective is at or below [`DEGENERACY_THRESHOLD`].
    pub degenerate: bool,
}

/// Solves `min_{alpha in simplex} alpha' G alpha`.
///
/// On convergence the KKT certificate holds: `(G alpha)_k >= alpha' G alpha - 10*tol`
/// for every k. If the iteration budget runs out the best iterate is returned
/// with `converged = false`.
pub fn solve_min_norm(gram: &GramMatrix, max_iters: usize, tol: f64) -> Result<QpSolution> {
    if max_iters < 1 {
        return Err(Error::Parameter("max_iters must be >= 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tol must be > 0, got {tol}")));
    }
    if !gram.is_psd() {
        return Err(Error::IllConditioned(
            "Gram matrix is not positive semidefinite within tolerance".into(),
        ));
    }

    let k = gram.dim();
    let mut alpha = vec![1.0 / k as f64; k];
    let mut iterations = 0;
    let mut converged = false;
    let kkt_slack = |a: &[f64]| {
        let q = gram.mul_vec(a);
        let f: f64 = q.iter().zip(a).map(|(x, y)| x * y).sum();
        let min_q = q.iter().cloned().fold(f64::INFINITY, f64::min);
        f - min_q
    };

    for it in 0..max_iters {
        iterations = it;
        polish_on_face(gram, &mut alpha);
        if kkt_slack(&alpha) <= 10.0 * tol {
            converged = true;
            break;
        }
        // Frank-Wolfe step toward the best vertex; grows the active set when
        // the face minimizer is not yet globally optimal.
        let q = gram.mul_vec(&alpha);
        let s_idx = q
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let mut dir: Vec<f64> = alpha.iter().map(|x| -x).collect();
        dir[s_idx] += 1.0;
        let dq: f64 = dir.iter().zip(&q).map(|(a, b)| a * b).sum();
        let gd = gram.mul_vec(&dir);
        let dgd: f64 = dir.iter().zip(&gd).map(|(a, b)| a * b).sum();
        let gamma = if dgd > 0.0 {
            (-dq / dgd).clamp(0.0, 1.0)
        } else if dq < 0.0 {
            1.0
        } else {
            0.0
        };
        if gamma <= 0.0 {
            // No descent available; the certificate check above is the
            // authority on whether this point is optimal.
            converged = kkt_slack(&alpha) <= 10.0 * tol;
            break;
        }
        for (a, d) in alpha.iter_mut().zip(&dir) {
            *a += gamma * d;
        }
        renormalize(&mut alpha);
    }

    let objective = gram.quad_form(&alpha);
    if !converged {
        converged = kkt_slack(&alpha) <= 10.0 * tol;
    }
    Ok(QpSolution {
        alpha: SimplexWeights::new(alpha)?,
        degenerate: objective <= DEGENERACY_THRESHOLD,
        objective,
        iterations,
        converged,
    })
}

/// Repeatedly replaces `alpha` by the affine minimizer on its active face,
/// backtracking to the boundary (and dropping the vanished coordinate) when
/// the face minimizer has negative components.
fn polish_on_face(gram: &GramMatrix, alpha: &mut [f64]) {
    let k = gram.dim();
    // each pass either terminates or shrinks the support
    for _ in 0..k {
        let support: Vec<usize> = (0..k).filter(|&i| alpha[i] > 0.0).collect();
        if support.len() <= 1 {
            return;
        }
        let Some(beta) = face_minimizer(gram, &support) else {
            return;
        };
        let mut full = vec![0.0; k];
        let mut feasible = true;
        for (r, &i) in support.iter().enumerate() {
            full[i] = beta[r];
            if beta[r] < 0.0 {
                feasible = false;
            }
        }
        if feasible {
            if gram.quad_form(&full) <= gram.quad_form(alpha) + 1e-15 {
                for (a, b) in alpha.iter_mut().zip(&full) {
                    *a = b.max(0.0);
                }
                renormalize(alpha);
            }
            return;
        }
        // move toward the face minimizer until the first coordinate hits zero
        let mut theta = 1.0f64;
        for &i in &support {
            if full[i] < alpha[i] {
                theta = theta.min(alpha[i] / (alpha[i] - full[i]));
            }
        }
        for i in 0..k {
            alpha[i] += theta * (full[i] - alpha[i]);
            if alpha[i] < 1e-14 {
                alpha[i] = 0.0;
            }
        }
        renormalize(alpha);
    }
}

/// Minimizer of the quadratic over the affine hull of the support vertices:
/// solves `[G_S 1; 1' 0] [beta; -lambda] = [0; 1]` by Gauss-Jordan with
/// partial pivoting. Rank-deficient systems get free variables pinned to zero
/// (one minimizer among many). Returns `None` when inconsistent.
fn face_minimizer(gram: &GramMatrix, support: &[usize]) -> Option<Vec<f64>> {
    let m = support.len();
    let n = m + 1;
    let mut mat = vec![vec![0.0; n + 1]; n];
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            mat[r][c] = gram.entry(i, j);
        }
        mat[r][m] = 1.0;
    }
    for c in 0..m {
        mat[n - 1][c] = 1.0;
    }
    mat[n - 1][n] = 1.0;

    let scale = 1.0
        + support
            .iter()
            .flat_map(|&i| support.iter().map(move |&j| gram.entry(i, j).abs()))
            .fold(0.0f64, f64::max);
    let mut pivot_row_of_col = vec![usize::MAX; n];
    let mut row = 0usize;
    for col in 0..n {
        let (piv, piv_val) = (row..n)
            .map(|r| (r, mat[r][col].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())?;
        if piv_val < 1e-12 * scale {
            continue; // free column, variable pinned to zero
        }
        mat.swap(row, piv);
        for r in 0..n {
            if r != row {
                let f = mat[r][col] / mat[row][col];
                for c in col..=n {
                    mat[r][c] -= f * mat[row][c];
                }
            }
        }
        pivot_row_of_col[col] = row;
        row += 1;
    }
    for r in row..n {
        if mat[r][n].abs() > 1e-9 * scale {
            return None; // inconsistent
        }
    }
    let mut sol = vec![0.0; n];
    for col in 0..n {
        let r = pivot_row_of_col[col];
        if r != usize::MAX {
            sol[col] = mat[r][n] / mat[r][col];
        }
    }
    sol.truncate(m);
    Some(sol)
}

fn renormalize(alpha: &mut [f64]) {
    let sum: f64 = alpha.iter().sum();
    if sum > 0.0 {
        for a in alpha.iter_mut() {
            *a /= sum;
        }
    }
}

/// Analytic minimizer for K = 2: the weight on vertex 1 is
/// `clamp((G22 - G12) / (G11 - 2 G12 + G22), 0, 1)`. When the denominator
/// vanishes the two vertices coincide and the split is immaterial, so uniform
/// weights are returned.
pub fn solve_two_task_closed_form(gram: &GramMatrix) -> Result<SimplexWeights> {
    if gram.dim() != 2 {
        return Err(Error::Dimension(format!(
            "closed form needs K = 2, got K = {}",
            gram.dim()
        )));
    }
    let g11 = gram.entry(0, 0);
    let g12 = gram.entry(0, 1);
    let g22 = gram.entry(1, 1);
    let denom = g11 - 2.0 * g12 + g22;
    if denom <= 1e-15 {
        return SimplexWeights::new(vec![0.5, 0.5]);
    }
    let w1 = ((g22 - g12) / denom).clamp(0.0, 1.0);
    SimplexWeights::new(vec![w1, 1.0 - w1])
}

/// Euclidean projection onto the probability simplex by the sort-based
/// algorithm. O(K log K); deterministic.
pub fn project_to_simplex(v: &[f64]) -> Result<SimplexWeights> {
    if v.is_empty() {
        return Err(Error::EmptyInput("projecting an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(
            "non-finite input to simplex projection".into(),
        ));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    let projected: Vec<f64> = v.iter().map(|x| (x - tau).max(0.0)).collect();
    // rounding can leave the sum a few ulps off 1
    let sum: f64 = projected.iter().sum();
    if (sum - 1.0).abs() <= SIMPLEX_SUM_TOL {
        SimplexWeights::new(projected)
    } else {
        SimplexWeights::new(projected.iter().map(|x| x / sum).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram(rows: &[&[f64]]) -> GramMatrix {
        GramMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn build_gram_orthonormal_basis() {
        let g = build_gram(&[
            GradientVector::from_vec(vec![1.0, 0.0]),
            GradientVector::from_vec(vec![0.0, 1.0]),
        ])
        .unwrap();
        assert_eq!(g.entry(0, 0), 1.0);
        assert_eq!(g.entry(0, 1), 0.0);
        assert_eq!(g.entry(1, 0), 0.0);
        assert_eq!(g.entry(1, 1), 1.0);
    }

    #[test]
    fn build_gram_single_vector() {
        let g = build_gram(&[GradientVector::from_vec(vec![1.0, 0.0])]).unwrap();
        assert_eq!(g.dim(), 1);
        assert_eq!(g.entry(0, 0), 1.0);
    }

    #[test]
    fn build_gram_rejects_mismatched_and_empty() {
        let err = build_gram(&[GradientVector::zeros(2), GradientVector::zeros(3)]);
        assert!(matches!(err, Err(Error::Dimension(_))));
        assert!(matches!(build_gram(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn solve_single_reward() {
        let sol = solve_min_norm(&gram(&[&[1.0]]), 250, 1e-10).unwrap();
        assert_eq!(sol.alpha.as_slice(), &[1.0]);
        assert!((sol.objective - 1.0).abs() < 1e-12);
        assert!(sol.converged);
        assert!(!sol.degenerate);
    }

    #[test]
    fn solve_orthonormal_pair_is_symmetric() {
        let sol = solve_min_norm(&gram(&[&[1.0, 0.0], &[0.0, 1.0]]), 250, 1e-10).unwrap();
        assert!((sol.alpha.get(0) - 0.5).abs() < 1e-12);
        assert!((sol.alpha.get(1) - 0.5).abs() < 1e-12);
        assert!((sol.objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn solve_antipodal_pair_is_degenerate() {
        let sol = solve_min_norm(&gram(&[&[1.0, -1.0], &[-1.0, 1.0]]), 250, 1e-10).unwrap();
        assert!((sol.alpha.get(0) - 0.5).abs() < 1e-12);
        assert!(sol.objective.abs() <= DEGENERACY_THRESHOLD);
        assert!(sol.degenerate);
    }

    #[test]
    fn objective_matches_quad_form() {
        let g = gram(&[&[2.0, 0.3, 0.1], &[0.3, 1.5, -0.2], &[0.1, -0.2, 1.0]]);
        let sol = solve_min_norm(&g, 250, 1e-10).unwrap();
        let recomputed = g.quad_form(sol.alpha.as_slice());
        assert!((sol.objective - recomputed).abs() < 1e-10);
    }

    #[test]
    fn non_psd_is_rejected() {
        // eigenvalues 3 and -1
        let g = gram(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(matches!(
            solve_min_norm(&g, 250, 1e-10),
            Err(Error::IllConditioned(_))
        ));
    }

    #[test]
    fn invalid_solver_parameters() {
        let g = gram(&[&[1.0]]);
        assert!(matches!(
            solve_min_norm(&g, 0, 1e-10),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            solve_min_norm(&g, 10, 0.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn closed_form_identity() {
        let w = solve_two_task_closed_form(&gram(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn closed_form_symmetric_gram() {
        let w = solve_two_task_closed_form(&gram(&[&[1.0, 0.5], &[0.5, 1.0]])).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn closed_form_scaled_pair() {
        // (1 - 0) / (4 - 0 + 1) = 0.2
        let w = solve_two_task_closed_form(&gram(&[&[4.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert!((w.get(0) - 0.2).abs() < 1e-15);
        assert!((w.get(1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn closed_form_coincident_vertices() {
        let w = solve_two_task_closed_form(&gram(&[&[1.0, 1.0], &[1.0, 1.0]])).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn closed_form_needs_two_tasks() {
        assert!(matches!(
            solve_two_task_closed_form(&gram(&[&[1.0]])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn projection_fixes_simplex_points() {
        let w = project_to_simplex(&[0.5, 0.5]).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn projection_to_vertex() {
        let w = project_to_simplex(&[2.0, 0.0]).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn projection_symmetric_point() {
        let w = project_to_simplex(&[0.6, 0.6, 0.6]).unwrap();
        for i in 0..3 {
            assert!((w.get(i) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_rejects_non_finite() {
        assert!(matches!(
            project_to_simplex(&[f64::NAN, 0.0]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn simplex_weights_validation() {
        assert!(SimplexWeights::new(vec![0.5, 0.5]).is_ok());
        assert!(SimplexWeights::new(vec![0.6, 0.6]).is_err());
        assert!(SimplexWeights::new(vec![-0.1, 1.1]).is_err());
        assert!(SimplexWeights::new(vec![]).is_err());
    }

    #[test]
    fn kkt_certificate_on_converged_solutions() {
        let g = gram(&[&[1.0, 0.2, -0.4], &[0.2, 1.0, 0.1], &[-0.4, 0.1, 1.0]]);
        let sol = solve_min_norm(&g, 250, 1e-10).unwrap();
        assert!(sol.converged);
        let q = g.mul_vec(sol.alpha.as_slice());
        for &qk in &q {
            assert!(
                qk >= sol.objective - 1e-9,
                "KKT violated: {qk} < {}",
                sol.objective
            );
        }
    }
}
