//! Determinants and cofactors of the small dense matrices that appear per grid cell.
//! Matrices are row-major `n x n` slices.

pub fn det(m: &[f64], n: usize) -> f64 {
    match n {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        3 => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
        _ => det_lu(m, n),
    }
}

fn det_lu(m: &[f64], n: usize) -> f64 {
    let mut a = m.to_vec();
    let mut sign = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
            .unwrap();
        if a[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            sign = -sign;
        }
        let p = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / p;
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
            }
        }
    }
    (0..n).fold(sign, |acc, i| acc * a[i * n + i])
}

/// Cofactor matrix: `out[i][j] = d det / d m[i][j]`.
pub fn cofactor(m: &[f64], n: usize, out: &mut [f64]) {
    match n {
        1 => out[0] = 1.0,
        2 => {
            out[0] = m[3];
            out[1] = -m[2];
            out[2] = -m[1];
            out[3] = m[0];
        }
        _ => {
            let mut minor = vec![0.0; (n - 1) * (n - 1)];
            for i in 0..n {
                for j in 0..n {
                    let mut t = 0;
                    for r in (0..n).filter(|&r| r != i) {
                        for c in (0..n).filter(|&c| c != j) {
                            minor[t] = m[r * n + c];
                            t += 1;
                        }
                    }
                    let s = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    out[i * n + j] = s * det(&minor, n - 1);
                }
            }
        }
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
