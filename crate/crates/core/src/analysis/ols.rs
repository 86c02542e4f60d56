//! Least squares by Householder QR.

use crate::{Error, Result, Scalar};

/// Column-major design matrix with column names.
#[derive(Debug, Clone)]
pub(crate) struct Design<T> {
    pub names: Vec<String>,
    pub n: usize,
    /// `columns[j][i]` is row `i` of column `j`.
    pub columns: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub(crate) struct LsFit<T> {
    pub beta: Vec<T>,
    pub rss: T,
    /// Diagonal of `(X'X)^-1`.
    pub xtx_inv_diag: Vec<T>,
}

/// Solve `min ||y - X b||` for full-column-rank `X`.
///
/// A column whose component orthogonal to the preceding columns is
/// negligible makes the design singular; the error names it together with the
/// earlier columns it is a combination of.
#[allow(clippy::needless_range_loop)]
pub(crate) fn least_squares<T: Scalar>(design: &Design<T>, y: &[T]) -> Result<LsFit<T>> {
    let (n, p) = (design.n, design.columns.len());
    debug_assert_eq!(y.len(), n);
    if p == 0 {
        return Err(Error::invalid("design has no columns"));
    }
    if n < p {
        return Err(Error::invalid(format!("{n} observations for {p} coefficients")));
    }

    let mut a = design.columns.clone();
    let mut qty = y.to_vec();
    let col_norms: Vec<T> = a.iter().map(|c| norm(c)).collect();
    let tol = T::epsilon().sqrt();
    let mut singular = Vec::new();
    // Pivot row of each accepted column; rejected columns do not consume a row.
    let mut pivot = vec![usize::MAX; p];
    let mut row = 0;

    for j in 0..p {
        let sub = norm(&a[j][row..]);
        if sub <= tol * col_norms[j] || sub == T::zero() {
            singular.push(j);
            continue;
        }
        let alpha = if a[j][row] > T::zero() { -sub } else { sub };
        let mut v: Vec<T> = a[j][row..].to_vec();
        v[0] = v[0] - alpha;
        let vv = dot(&v, &v);
        let reflect = |col: &mut [T]| {
            let s = dot(&v, col);
            let f = (s + s) / vv;
            for (c, vi) in col.iter_mut().zip(&v) {
                *c = *c - f * *vi;
            }
        };
        for col in a.iter_mut().skip(j) {
            reflect(&mut col[row..]);
        }
        reflect(&mut qty[row..]);
        pivot[j] = row;
        row += 1;
    }

    if !singular.is_empty() {
        return Err(Error::Singular(describe_singular(design, &a, &pivot, tol)));
    }

    // Back substitution with R = upper triangle of `a`.
    let r = |i: usize, j: usize| a[j][i];
    let mut beta = vec![T::zero(); p];
    for i in (0..p).rev() {
        let mut s = qty[i];
        for k in i + 1..p {
            s = s - r(i, k) * beta[k];
        }
        beta[i] = s / r(i, i);
    }
    let rss = qty[p..].iter().fold(T::zero(), |acc, &e| acc + e * e);

    // (X'X)^-1 = R^-1 R^-T; its diagonal is the row sums of squares of R^-1.
    let mut rinv = vec![vec![T::zero(); p]; p];
    for j in 0..p {
        rinv[j][j] = T::one() / r(j, j);
        for i in (0..j).rev() {
            let mut s = T::zero();
            for k in i + 1..=j {
                s = s + r(i, k) * rinv[k][j];
            }
            rinv[i][j] = -s / r(i, i);
        }
    }
    let xtx_inv_diag = rinv
        .iter()
        .map(|row| row.iter().fold(T::zero(), |acc, &x| acc + x * x))
        .collect();

    Ok(LsFit {
        beta,
        rss,
        xtx_inv_diag,
    })
}

fn describe_singular<T: Scalar>(design: &Design<T>, a: &[Vec<T>], pivot: &[usize], tol: T) -> String {
    let accepted = |j: usize| pivot[j] != usize::MAX;
    let mut parts = Vec::new();
    for j in (0..pivot.len()).filter(|&j| !accepted(j)) {
        // Column j in the basis of the accepted earlier columns:
        // solve R c = (Q'x_j) restricted to their pivot rows.
        let earlier: Vec<usize> = (0..j).filter(|&i| accepted(i)).collect();
        let mut coef = vec![T::zero(); j];
        for &i in earlier.iter().rev() {
            let r = pivot[i];
            let mut s = a[j][r];
            for &k in earlier.iter().filter(|&&k| k > i) {
                s = s - a[k][r] * coef[k];
            }
            coef[i] = s / a[i][r];
        }
        let with: Vec<String> = earlier
            .iter()
            .filter(|&&i| coef[i].abs() > tol)
            .map(|&i| format!("`{}`", design.names[i]))
            .collect();
        if with.is_empty() {
            parts.push(format!("column `{}` is identically zero", design.names[j]));
        } else {
            parts.push(format!(
                "column `{}` is collinear with [{}]",
                design.names[j],
                with.join(", ")
            ));
        }
    }
    parts.join("; ")
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}
