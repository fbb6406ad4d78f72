//! Root bracketing and adaptive quadrature.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Bisection for a sign change of `f` on `[lo, hi]`.
///
/// Stops when the bracket is narrower than `x_tol`; returns the midpoint of the final bracket.
pub fn bisect<T: Scalar>(
    mut lo: T,
    mut hi: T,
    x_tol: T,
    max_iter: usize,
    mut f: impl FnMut(T) -> Result<T>,
) -> Result<T> {
    let two = T::lit(2.0);
    let f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo == T::zero() {
        return Ok(lo);
    }
    if f_hi == T::zero() {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Bracketing {
            lo: lo.as_f64(),
            hi: hi.as_f64(),
        });
    }
    let lo_negative = f_lo < T::zero();
    for _ in 0..max_iter {
        let mid = (lo + hi) / two;
        if hi - lo <= x_tol || mid == lo || mid == hi {
            return Ok(mid);
        }
        let f_mid = f(mid)?;
        if f_mid == T::zero() {
            return Ok(mid);
        }
        if (f_mid < T::zero()) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) / two)
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
pub(crate) const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
pub(crate) const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod<T: Scalar>(f: &impl Fn(T) -> T, a: T, b: T) -> (T, T) {
    let half = T::lit(0.5);
    let center = half * (a + b);
    let half_len = half * (b - a);
    let fc = f(center);
    let mut kronrod = fc * T::lit(WGK[7]);
    let mut gauss = fc * T::lit(WG[3]);
    for j in 0..7 {
        let dx = half_len * T::lit(XGK[j]);
        let pair = f(center - dx) + f(center + dx);
        kronrod = kronrod + T::lit(WGK[j]) * pair;
        if j % 2 == 1 {
            gauss = gauss + T::lit(WG[j / 2]) * pair;
        }
    }
    (kronrod * half_len, ((kronrod - gauss) * half_len).abs())
}

/// Adaptive Gauss-Kronrod integral of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<T: Scalar>(f: impl Fn(T) -> T, a: T, b: T, tol: T) -> T {
    if b <= a {
        return T::zero();
    }
    let floor = T::epsilon() * T::lit(64.0);
    let mut total = T::zero();
    let mut stack = vec![(a, b, tol, 0u32)];
    while let Some((lo, hi, eps, depth)) = stack.pop() {
        let (value, err) = gauss_kronrod(&f, lo, hi);
        if err <= eps.max(floor * value.abs()) || depth >= 40 {
            total = total + value;
        } else {
            let mid = T::lit(0.5) * (lo + hi);
            let half_eps = eps * T::lit(0.5);
            stack.push((lo, mid, half_eps, depth + 1));
            stack.push((mid, hi, half_eps, depth + 1));
        }
    }
    total
}

/// Pairwise summation, so totals do not depend on how the terms were produced.
pub fn pairwise_sum<T: Scalar>(xs: &[T]) -> T {
    match xs.len() {
        0 => T::zero(),
        1 => xs[0],
        len if len <= 8 => xs.iter().fold(T::zero(), |acc, &x| acc + x),
        len => {
            let (left, right) = xs.split_at(len / 2);
            pairwise_sum(left) + pairwise_sum(right)
        }
    }
}
