//! Small fixed-size vector helpers and dense kernels for element-level work.
//!
//! Points are always stored as `[f64; 3]`; two-dimensional meshes leave the
//! third coordinate at zero and loops run to `dim`.

pub type Point = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const ORIGIN: Point = [0.0; 3];

#[inline]
pub fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Point, b: &Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: &Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalized(a: &Point) -> Point {
    let n = norm(a);
    scale(a, 1.0 / n)
}

pub fn centroid(pts: &[Point]) -> Point {
    let mut c = ORIGIN;
    for p in pts {
        c = add(&c, p);
    }
    scale(&c, 1.0 / pts.len() as f64)
}

/// Determinant of the leading `dim x dim` block.
pub fn det(m: &Mat3, dim: usize) -> f64 {
    match dim {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Inverse of the leading `dim x dim` block; entries outside it stay zero.
pub fn inverse(m: &Mat3, dim: usize) -> Mat3 {
    let d = det(m, dim);
    let mut inv = [[0.0; 3]; 3];
    match dim {
        1 => inv[0][0] = 1.0 / d,
        2 => {
            inv[0][0] = m[1][1] / d;
            inv[0][1] = -m[0][1] / d;
            inv[1][0] = -m[1][0] / d;
            inv[1][1] = m[0][0] / d;
        }
        3 => {
            for i in 0..3 {
                for j in 0..3 {
                    let (i1, i2) = ((j + 1) % 3, (j + 2) % 3);
                    let (j1, j2) = ((i + 1) % 3, (i + 2) % 3);
                    inv[i][j] = (m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]) / d;
                }
            }
        }
        _ => panic!("unsupported dimension {dim}"),
    }
    inv
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}

#[inline]
pub fn mat_vec(m: &Mat3, v: &Point) -> Point {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Measure of a `k`-simplex embedded in 3-space (k = 0..=3).
pub fn simplex_measure(pts: &[Point]) -> f64 {
    match pts.len() {
        1 => 1.0,
        2 => norm(&sub(&pts[1], &pts[0])),
        3 => 0.5 * norm(&cross(&sub(&pts[1], &pts[0]), &sub(&pts[2], &pts[0]))),
        4 => {
            let a = sub(&pts[1], &pts[0]);
            let b = sub(&pts[2], &pts[0]);
            let c = sub(&pts[3], &pts[0]);
            dot(&a, &cross(&b, &c)).abs() / 6.0
        }
        n => panic!("no simplex with {n} vertices in 3-space"),
    }
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is row-major `n x n`; `b` holds `nrhs` right-hand sides column by column
/// (`b[k * n + i]`). Returns `None` when a pivot vanishes relative to the
/// matrix scale.
pub fn dense_solve(n: usize, a: &mut [f64], b: &mut [f64], nrhs: usize) -> Option<()> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col].abs() <= 1e-14 * scale {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            for k in 0..nrhs {
                b.swap(k * n + col, k * n + piv);
            }
        }
        let p = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            for k in 0..nrhs {
                b[k * n + r] -= f * b[k * n + col];
            }
        }
    }
    for k in 0..nrhs {
        for r in (0..n).rev() {
            let mut s = b[k * n + r];
            for c in r + 1..n {
                s -= a[r * n + c] * b[k * n + c];
            }
            b[k * n + r] = s / a[r * n + r];
        }
    }
    Some(())
}

/// Inverse of a row-major `n x n` matrix.
pub fn dense_inverse(n: usize, a: &[f64]) -> Option<Vec<f64>> {
    let mut work = a.to_vec();
    let mut id = vec![0.0; n * n];
    for i in 0..n {
        id[i * n + i] = 1.0;
    }
    dense_solve(n, &mut work, &mut id, n)?;
    // id now holds the inverse column by column; transpose to row-major
    let mut inv = vec![0.0; n * n];
    for c in 0..n {
        for r in 0..n {
            inv[r * n + c] = id[c * n + r];
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_matches_identity() {
        let m = [[2.0, 1.0, 0.5], [0.3, 3.0, -1.0], [0.0, 0.7, 1.5]];
        let inv = inverse(&m, 3);
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += m[i][k] * inv[k][j];
                }
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((s - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dense_inverse_roundtrip() {
        let a = vec![4.0, 1.0, 2.0, 1.0, 5.0, 0.0, 2.0, 0.0, 6.0];
        let inv = dense_inverse(3, &a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = vec![1.0, 2.0, 2.0, 4.0];
        assert!(dense_inverse(2, &a).is_none());
    }
}
