//! Dense matrix kernels. Loop orders keep the innermost access contiguous.

use crate::real::Real;

/// `a[m×k] · b[k×n]`.
pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    out
}

/// `g[m×n] · b[k×n]ᵀ`, giving `m×k`.
pub(crate) fn matmul_nt<T: Real>(g: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = dot(grow, brow);
        }
    }
    out
}

/// `a[m×k]ᵀ · g[m×n]`, giving `k×n`.
pub(crate) fn matmul_tn<T: Real>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &y) in orow.iter_mut().zip(grow) {
                *o += x * y;
            }
        }
    }
    out
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Numerically stable softmax of one row, written into `out`.
pub(crate) fn softmax_row<T: Real>(x: &[T], out: &mut [T]) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64c(GELU_C);
    let a = T::from_f64c(GELU_A);
    let half = T::from_f64c(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64c(GELU_C);
    let a = T::from_f64c(GELU_A);
    let half = T::from_f64c(0.5);
    let three = T::from_f64c(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree_with_explicit_transpose() {
        let a: Vec<f64> = (0..6).map(|x| x as f64 - 2.5).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|x| (x as f64).sin()).collect(); // 3x4
        let ab = matmul(&a, &b, 2, 3, 4);
        let bt = transpose(&b, 3, 4);
        assert_eq!(matmul_nt(&a, &bt, 2, 3, 4), ab);
        let at = transpose(&a, 2, 3);
        assert_eq!(matmul_tn(&at, &b, 3, 2, 4).len(), 8);
        let g: Vec<f64> = (0..8).map(|x| x as f64).collect(); // 2x4
        let direct = matmul(&at, &g, 3, 2, 4);
        assert_eq!(matmul_tn(&a, &g, 2, 3, 4), direct);
    }

    #[test]
    fn softmax_row_is_shift_invariant() {
        let mut p = [0.0f64; 3];
        let mut q = [0.0f64; 3];
        softmax_row(&[1.0, 2.0, 3.0], &mut p);
        softmax_row(&[101.0, 102.0, 103.0], &mut q);
        for (x, y) in p.iter().zip(&q) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
