//! Two-variable linear Diophantine equations `a·x − b·y = c`.

use crate::error::{Error, Result};

/// Integer solutions of `a·x − b·y = c` as `particular + k·step`, `k ∈ ℤ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiophantineSolution {
    pub exists: bool,
    /// `(x⁰, y⁰)` with `x⁰` the least non-negative admissible `x`.
    pub particular: (i128, i128),
    /// `(b/g, a/g)` where `g = gcd(a, b)`.
    pub step: (i128, i128),
}

impl DiophantineSolution {
    /// The `k`-th solution, `None` on overflow.
    pub fn at(&self, k: i128) -> Option<(i128, i128)> {
        Some((
            self.particular.0.checked_add(k.checked_mul(self.step.0)?)?,
            self.particular.1.checked_add(k.checked_mul(self.step.1)?)?,
        ))
    }

    /// Smallest solution with both coordinates non-negative.
    pub fn least_non_negative(&self) -> Option<(i128, i128)> {
        if !self.exists {
            return None;
        }
        let k = ceil_div(-self.particular.0, self.step.0).max(ceil_div(-self.particular.1, self.step.1));
        self.at(k)
    }
}

pub fn gcd(mut a: i128, mut b: i128) -> i128 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Returns `(g, s, t)` with `a·s + b·t = g = gcd(a, b)` for `a, b ≥ 0`.
pub(crate) fn egcd(a: i128, b: i128) -> (i128, i128, i128) {
    let (mut r0, mut r1) = (a, b);
    let (mut s0, mut s1) = (1i128, 0i128);
    let (mut t0, mut t1) = (0i128, 1i128);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (s0, s1) = (s1, s0 - q * s1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    (r0, s0, t0)
}

pub(crate) fn floor_div(a: i128, b: i128) -> i128 {
    a.div_euclid(b)
}

pub(crate) fn ceil_div(a: i128, b: i128) -> i128 {
    -floor_div(-a, b)
}

/// `a·b mod m` for `0 ≤ a, b < m`, without intermediate overflow.
pub(crate) fn mul_mod(a: i128, b: i128, m: i128) -> i128 {
    if let Some(p) = a.checked_mul(b) {
        return p.rem_euclid(m);
    }
    let m = m as u128;
    let (mut a, mut b) = (a as u128 % m, b as u128 % m);
    let mut acc = 0u128;
    while b > 0 {
        if b & 1 == 1 {
            acc = add_mod(acc, a, m);
        }
        a = add_mod(a, a, m);
        b >>= 1;
    }
    acc as i128
}

fn add_mod(a: u128, b: u128, m: u128) -> u128 {
    // a, b < m ≤ 2^127 so the sum fits.
    let s = a + b;
    if s >= m {
        s - m
    } else {
        s
    }
}

/// Solves `a·x − b·y = c` for `a, b > 0`.
///
/// The particular solution has the least non-negative `x`; the homogeneous
/// step is `(b/g, a/g)`.
pub fn extended_bezout(a: i128, b: i128, c: i128) -> Result<DiophantineSolution> {
    if a <= 0 || b <= 0 {
        return Err(Error::InvalidSpec(format!("coefficients must be positive, got ({a}, {b})")));
    }
    let (g, s, _) = egcd(a, b);
    let step = (b / g, a / g);
    if c % g != 0 {
        return Ok(DiophantineSolution {
            exists: false,
            particular: (0, 0),
            step,
        });
    }
    // a·s ≡ g (mod b), so x ≡ s·(c/g) (mod b/g).
    let hx = step.0;
    let x0 = mul_mod(s.rem_euclid(hx), (c / g).rem_euclid(hx), hx);
    let ax = a.checked_mul(x0).ok_or(Error::Overflow("particular solution"))?;
    let y0 = ax.checked_sub(c).ok_or(Error::Overflow("particular solution"))? / b;
    Ok(DiophantineSolution {
        exists: true,
        particular: (x0, y0),
        step,
    })
}
