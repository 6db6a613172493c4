//! Small dense-matrix helpers for the type-alphabet-sized problems in this
//! crate. Matrices are row-major `Vec<Vec<f64>>` and never bigger than the
//! number of types squared, so plain loops beat pulling in a linear algebra
//! crate.

/// y = A x
pub fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(m, v)| m * v).sum())
        .collect()
}

/// y = A' x (multiply by the transpose without forming it)
pub fn mat_tvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut y = vec![0.0; n];
    for (row, &xi) in a.iter().zip(x) {
        for (yj, m) in y.iter_mut().zip(row) {
            *yj += m * xi;
        }
    }
    y
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Solves A x = b by Gaussian elimination with partial pivoting.
/// Returns `None` if a pivot degenerates (singular system).
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();

    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            m[i][col]
                .abs()
                .partial_cmp(&m[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }

    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = m[row][n];
        for col in row + 1..n {
            s -= m[row][col] * x[col];
        }
        x[row] = s / m[row][row];
    }
    Some(x)
}

/// True if every entry of some power `P^k`, `1 <= k <= max_power`, of the
/// boolean pattern matrix is set.
pub fn pattern_power_all_positive(pattern: &[Vec<bool>], max_power: usize) -> bool {
    let n = pattern.len();
    let mut acc = pattern.to_vec();
    for _ in 0..max_power {
        if acc.iter().all(|row| row.iter().all(|&x| x)) {
            return true;
        }
        let mut next = vec![vec![false; n]; n];
        for i in 0..n {
            for k in 0..n {
                if acc[i][k] {
                    for j in 0..n {
                        if pattern[k][j] {
                            next[i][j] = true;
                        }
                    }
                }
            }
        }
        acc = next;
    }
    acc.iter().all(|row| row.iter().all(|&x| x))
}

/// True if the directed graph given by the boolean pattern is strongly
/// connected (every type reaches every type).
pub fn strongly_connected(pattern: &[Vec<bool>]) -> bool {
    let n = pattern.len();
    if n == 0 {
        return false;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for u in 0..n {
                let edge = if forward { pattern[v][u] } else { pattern[u][v] };
                if edge && !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_recovers_known_solution() {
        let a = vec![vec![4.0, -1.0], vec![-2.0, 3.0]];
        let x = vec![0.275, 0.325];
        let b = mat_vec(&a, &x);
        let got = solve(&a, &b).expect("system is regular");
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn solve_rejects_singular() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(solve(&a, &[1.0, 2.0]).is_none());
    }

    #[test]
    fn pattern_checks() {
        // Period-2 pattern: irreducible but no all-positive power.
        let per = vec![vec![false, true], vec![true, false]];
        assert!(strongly_connected(&per));
        assert!(!pattern_power_all_positive(&per, 8));

        // Aperiodic irreducible pattern becomes all-positive.
        let ap = vec![vec![true, true], vec![true, false]];
        assert!(strongly_connected(&ap));
        assert!(pattern_power_all_positive(&ap, 8));

        let red = vec![vec![true, true], vec![false, true]];
        assert!(!strongly_connected(&red));
    }
}
