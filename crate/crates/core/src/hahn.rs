//! Dual Hahn polynomials and the eigen-structure of the two-urn chain.
//!
//! `R_degree(λ(node), n)` is the terminating `3F2(-degree, -node, node-2n-1; -n, -n; 1)`
//! series. The two-urn chain that swaps `k` balls has eigenvalues
//! `β_i(k) = R_k(λ(i), n)` and eigenfunctions `s_i(x) = R_x(λ(i), n)` on states
//! `x = 0..=n`, with `s_i(0) = 1`.

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::exact::{binomial, rat_int, LogValue, Rational};
use crate::stats::Neumaier;

/// Arguments of a single dual Hahn evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HahnPoint {
    pub n: u32,
    pub degree: u32,
    pub node: u32,
}

impl HahnPoint {
    pub fn new(n: u32, degree: u32, node: u32) -> Result<Self> {
        if n == 0 {
            return domain("dual Hahn: n must be positive");
        }
        if degree > n || node > n {
            return domain(format!(
                "dual Hahn: degree {degree} and node {node} must lie in 0..={n}"
            ));
        }
        Ok(HahnPoint { n, degree, node })
    }

    /// `λ(node) = node (node - 2n - 1)`.
    pub fn lambda(&self) -> i64 {
        lambda(self.node as i64, self.n as i64)
    }

    pub fn eval(&self) -> Rational {
        dual_hahn_unchecked(self.degree as i64, self.node as i64, self.n as i64)
    }
}

pub fn lambda(i: i64, n: i64) -> i64 {
    i * (i - 2 * n - 1)
}

/// Exact `R_degree(λ(node), n)`.
pub fn dual_hahn(degree: u32, node: u32, n: u32) -> Result<Rational> {
    Ok(HahnPoint::new(n, degree, node)?.eval())
}

// Successive terms satisfy t_{m+1}/t_m = (m-degree)(m-node)(m+node-2n-1) / ((m-n)^2 (m+1)).
// The sum is evaluated by Horner's rule over unreduced integer fractions and reduced once.
fn dual_hahn_unchecked(degree: i64, node: i64, n: i64) -> Rational {
    let len = degree.min(node);
    if len == 0 {
        return Rational::one();
    }
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for m in (0..len).rev() {
        let p = BigInt::from((m - degree) * (m - node)) * BigInt::from(m + node - 2 * n - 1);
        let q = BigInt::from((m - n) * (m - n)) * BigInt::from(m + 1);
        // 1 + (p/q)(num/den)
        num = &q * &den + p * num;
        den *= q;
    }
    Rational::new(num, den)
}

/// `R_degree(λ(node), n)` in double precision, summing log-space terms.
///
/// The series alternates in sign, so the result carries absolute error on the
/// order of `1e-16` times the largest term; use [`dual_hahn`] when that matters.
pub fn dual_hahn_f64(degree: u32, node: u32, n: u32) -> Result<f64> {
    HahnPoint::new(n, degree, node)?;
    let (degree, node, n) = (degree as f64, node as f64, n as f64);
    let len = degree.min(node) as usize;
    let mut acc = Neumaier::default();
    acc.add(1.0);
    let mut ln_term = 0.0;
    let mut sign = 1.0;
    for m in 0..len {
        let m = m as f64;
        let factors = [m - degree, m - node, m + node - 2.0 * n - 1.0];
        let denoms = [m - n, m - n, m + 1.0];
        for f in factors {
            ln_term += f.abs().ln();
            sign *= f.signum();
        }
        for d in denoms {
            ln_term -= d.abs().ln();
            sign *= d.signum();
        }
        acc.add(sign * ln_term.exp());
    }
    Ok(acc.sum())
}

/// `β_i(k)`: the `i`-th eigenvalue of the two-urn chain moving `k` balls.
pub fn eigenvalue(i: u32, k: u32, n: u32) -> Result<Rational> {
    dual_hahn(k, i, n)
}

/// Unnormalised eigenfunction `s_i(x)`, equal to 1 at `x = 0`.
pub fn eigenfunction(i: u32, x: u32, n: u32) -> Result<Rational> {
    dual_hahn(x, i, n)
}

/// `d_i = C(2n, i) - C(2n, i-1)`.
pub fn multiplicity(i: u32, n: u32) -> Result<BigInt> {
    if i > n {
        return domain(format!("multiplicity: i = {i} exceeds n = {n}"));
    }
    let (i, n) = (i as i64, n as i64);
    Ok(binomial(2 * n, i) - binomial(2 * n, i - 1))
}

/// Eigenvalues, multiplicities and eigenfunctions of one two-urn chain.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub n: u32,
    pub k: u32,
    pub betas: Vec<Rational>,
    pub multiplicities: Vec<BigInt>,
    /// `eigenfunctions[i][x] = s_i(x)`.
    pub eigenfunctions: Vec<Vec<Rational>>,
}

impl EigenSystem {
    pub fn new(n: u32, k: u32) -> Result<Self> {
        if k > n {
            return domain(format!("eigen system: k = {k} exceeds n = {n}"));
        }
        let betas = (0..=n).map(|i| eigenvalue(i, k, n)).collect::<Result<Vec<_>>>()?;
        let multiplicities = (0..=n)
            .map(|i| multiplicity(i, n))
            .collect::<Result<Vec<_>>>()?;
        let eigenfunctions = (0..=n)
            .map(|i| (0..=n).map(|x| eigenfunction(i, x, n)).collect())
            .collect::<Result<Vec<_>>>()?;
        Ok(EigenSystem {
            n,
            k,
            betas,
            multiplicities,
            eigenfunctions,
        })
    }

    /// Squared value of the `π`-orthonormal eigenfunction, `d_i s_i(x)^2`.
    pub fn normalised_sq(&self, i: usize, x: usize) -> Rational {
        let s = &self.eigenfunctions[i][x];
        Rational::from_integer(self.multiplicities[i].clone()) * s * s
    }
}

fn check_even(n: u32, min: u32, what: &str) -> Result<()> {
    if n % 2 == 1 || n < min {
        return domain(format!("{what}: n must be even and at least {min}, got {n}"));
    }
    Ok(())
}

fn product(factors: &[i64]) -> BigInt {
    factors.iter().fold(BigInt::one(), |acc, &f| acc * BigInt::from(f))
}

fn log_product(num: &[i64], den: &[i64]) -> LogValue {
    if num.contains(&0) {
        return LogValue::ZERO;
    }
    let mut sign = 1i8;
    let mut ln = 0.0;
    for &f in num {
        ln += (f.unsigned_abs() as f64).ln();
        sign *= f.signum() as i8;
    }
    for &f in den {
        ln -= (f.unsigned_abs() as f64).ln();
        sign *= f.signum() as i8;
    }
    LogValue { sign, ln_abs: ln }
}

fn step_range(from: i64, to: i64, step: i64) -> Vec<i64> {
    let mut out = Vec::new();
    let mut x = from;
    if step > 0 {
        while x <= to {
            out.push(x);
            x += step;
        }
    } else {
        while x >= to {
            out.push(x);
            x += step;
        }
    }
    out
}

// Numerator and denominator factors of β_i(n/2) for even i.
fn half_factors(i: i64, n: i64) -> (Vec<i64>, Vec<i64>) {
    let mut num = step_range(i - 1, 1, -2);
    num.extend(step_range(n + 2 - i, n, 2));
    let mut den = step_range(n - i + 1, n - 1, 2);
    den.extend(step_range(i - 2 * n - 2, -2 * n, -2));
    (num, den)
}

// Factors of β_i(n/2 - 1) for odd i >= 3 and for even i.
fn half_minus_one_factors(i: i64, n: i64) -> (Vec<i64>, Vec<i64>) {
    if i % 2 == 1 {
        let mut num = vec![2];
        num.extend(step_range(i, 1, -2));
        num.extend(step_range(n + 3 - i, n - 2, 2));
        num.push(n + 1 - i);
        let mut den = vec![n];
        den.extend(step_range(n - i + 2, n - 1, 2));
        den.extend(step_range(i - 2 * n - 3, -2 * n, -2));
        (num, den)
    } else {
        let (mut num, mut den) = half_factors(i, n);
        num.push(2 * lambda(i, n) + n * n);
        den.push(n * n);
        (num, den)
    }
}

/// Closed-form `β_i(n/2)` for even `n`: zero at odd `i`, a ratio of
/// alternating products at even `i`.
pub fn closed_form_half(i: u32, n: u32) -> Result<Rational> {
    check_even(n, 2, "closed_form_half")?;
    if i > n {
        return domain(format!("closed_form_half: i = {i} exceeds n = {n}"));
    }
    if i % 2 == 1 {
        return Ok(Rational::zero());
    }
    let (num, den) = half_factors(i as i64, n as i64);
    Ok(Rational::new(product(&num), product(&den)))
}

/// [`closed_form_half`] in log space; usable for any even `n`.
pub fn closed_form_half_log(i: u32, n: u32) -> Result<LogValue> {
    check_even(n, 2, "closed_form_half_log")?;
    if i > n {
        return domain(format!("closed_form_half_log: i = {i} exceeds n = {n}"));
    }
    if i % 2 == 1 {
        return Ok(LogValue::ZERO);
    }
    let (num, den) = half_factors(i as i64, n as i64);
    Ok(log_product(&num, &den))
}

/// Closed-form `β_i(n/2 - 1)` for even `n >= 4`.
///
/// `i = 1` gives `2/n`; even `i` gives `(2λ(i) + n²)/n² · β_i(n/2)`; odd `i >= 3`
/// is a ratio of alternating products obtained from the difference equation.
pub fn closed_form_half_minus_one(i: u32, n: u32) -> Result<Rational> {
    check_even(n, 4, "closed_form_half_minus_one")?;
    if i > n {
        return domain(format!("closed_form_half_minus_one: i = {i} exceeds n = {n}"));
    }
    if i == 1 {
        return Ok(Rational::new(BigInt::from(2), BigInt::from(n)));
    }
    let (num, den) = half_minus_one_factors(i as i64, n as i64);
    Ok(Rational::new(product(&num), product(&den)))
}

/// [`closed_form_half_minus_one`] in log space.
pub fn closed_form_half_minus_one_log(i: u32, n: u32) -> Result<LogValue> {
    check_even(n, 4, "closed_form_half_minus_one_log")?;
    if i > n {
        return domain(format!(
            "closed_form_half_minus_one_log: i = {i} exceeds n = {n}"
        ));
    }
    if i == 1 {
        return Ok(LogValue {
            sign: 1,
            ln_abs: (2.0 / n as f64).ln(),
        });
    }
    let (num, den) = half_minus_one_factors(i as i64, n as i64);
    Ok(log_product(&num, &den))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityKind {
    /// Three-term difference equation in the node at fixed degree `k`.
    Difference,
    /// Three-term recurrence in the degree at fixed node `i`.
    Recurrence,
    /// Weighted orthogonality of nodes `i` and `j`.
    Orthogonality,
    /// `β_k(i) = (-1)^i β_{n-k}(i)`.
    Symmetry,
}

fn coef_b(i: i64, n: i64) -> Rational {
    Rational::new(
        BigInt::from((n - i) * (i - 2 * n - 1)),
        BigInt::from(2 * (2 * i - 2 * n - 1)),
    )
}

fn coef_d(i: i64, n: i64) -> Rational {
    Rational::new(
        BigInt::from(i * (i - n - 1)),
        BigInt::from(2 * (2 * i - 2 * n - 1)),
    )
}

/// Checks one dual Hahn identity exactly.
///
/// `k` is the degree and `i` the node; `j` is only read by the orthogonality check.
/// Terms whose index leaves `0..=n` carry a zero coefficient and are dropped.
pub fn verify_identity(kind: IdentityKind, n: u32, k: u32, i: u32, j: u32) -> Result<bool> {
    if n == 0 || k > n || i > n || (kind == IdentityKind::Orthogonality && j > n) {
        return domain(format!(
            "verify_identity({kind:?}): indices k={k}, i={i}, j={j} must lie in 0..={n}"
        ));
    }
    let r = |deg: i64, node: i64| dual_hahn_unchecked(deg, node, n as i64);
    let (n, k, i, j) = (n as i64, k as i64, i as i64, j as i64);
    Ok(match kind {
        IdentityKind::Difference => {
            let b = coef_b(i, n);
            let d = coef_d(i, n);
            let lhs = rat_int(-k) * r(k, i);
            let mut rhs = -(&b + &d) * r(k, i);
            if i < n {
                rhs += &b * r(k, i + 1);
            }
            if i > 0 {
                rhs += &d * r(k, i - 1);
            }
            lhs == rhs
        }
        IdentityKind::Recurrence => {
            let lhs = rat_int(lambda(i, n)) * r(k, i);
            let mut rhs = -rat_int((k - n) * (k - n) + k * k) * r(k, i);
            if k < n {
                rhs += rat_int((n - k) * (n - k)) * r(k + 1, i);
            }
            if k > 0 {
                rhs += rat_int(k * k) * r(k - 1, i);
            }
            lhs == rhs
        }
        IdentityKind::Orthogonality => {
            let weight = Rational::new(
                binomial(2 * n, i) - binomial(2 * n, i - 1),
                binomial(2 * n, n),
            );
            let sum = (0..=n).fold(Rational::zero(), |acc, y| {
                acc + r(y, i) * r(y, j) * Rational::from_integer(binomial(n, y) * binomial(n, n - y))
            });
            let expected = if i == j { Rational::one() } else { Rational::zero() };
            weight * sum == expected
        }
        IdentityKind::Symmetry => {
            let lhs = r(k, i);
            let rhs = r(n - k, i);
            if i % 2 == 0 {
                lhs == rhs
            } else {
                lhs == -rhs
            }
        }
    })
}

/// Largest `|β_i(k)|` over `i >= 1`.
pub fn max_nontrivial_abs(k: u32, n: u32) -> Result<Rational> {
    let mut best = Rational::zero();
    for i in 1..=n {
        let b = eigenvalue(i, k, n)?.abs();
        if b > best {
            best = b;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{rat, to_f64};

    #[test]
    fn node_zero_and_one() {
        for n in 1..8 {
            for k in 0..=n {
                assert_eq!(dual_hahn(k, 0, n).unwrap(), Rational::one());
                assert_eq!(
                    dual_hahn(k, 1, n).unwrap(),
                    Rational::one() - rat(2 * k as i64, n as i64)
                );
            }
        }
    }

    #[test]
    fn small_eigenvalue() {
        assert_eq!(dual_hahn(1, 2, 2).unwrap(), rat(-1, 2));
        assert_eq!(eigenvalue(2, 1, 2).unwrap(), rat(-1, 2));
        assert_eq!(eigenvalue(0, 3, 7).unwrap(), Rational::one());
    }

    #[test]
    fn out_of_range() {
        assert!(dual_hahn(3, 0, 2).is_err());
        assert!(dual_hahn(0, 3, 2).is_err());
        assert!(dual_hahn(0, 0, 0).is_err());
        assert!(multiplicity(3, 2).is_err());
    }

    #[test]
    fn multiplicities() {
        assert_eq!(multiplicity(0, 5).unwrap(), BigInt::one());
        assert_eq!(multiplicity(1, 5).unwrap(), BigInt::from(9));
        assert_eq!(multiplicity(2, 2).unwrap(), BigInt::from(2));
    }

    #[test]
    fn half_closed_form_small() {
        assert_eq!(closed_form_half(2, 2).unwrap(), rat(-1, 2));
        assert_eq!(closed_form_half(3, 8).unwrap(), Rational::zero());
        for n in (2..30).step_by(2) {
            let b2 = closed_form_half(2, n).unwrap();
            assert_eq!(b2.abs(), rat(1, 2 * (n as i64 - 1)));
        }
        assert!(closed_form_half(2, 5).is_err());
    }

    #[test]
    fn half_minus_one_first_eigenvalue_is_two_over_n() {
        for n in (4..30).step_by(2) {
            let k = n / 2 - 1;
            let expect = Rational::one() - rat(2 * k as i64, n as i64);
            assert_eq!(closed_form_half_minus_one(1, n).unwrap(), expect);
            assert_eq!(expect, rat(2, n as i64));
        }
        assert!(closed_form_half_minus_one(1, 2).is_err());
        assert!(closed_form_half_minus_one(1, 7).is_err());
    }

    #[test]
    fn half_minus_one_even_factor_uses_lambda() {
        // n = 4, i = 2: β(1) = 1/8 while β(2) = -1/6, ratio (2λ(2) + 16)/16 = -3/4.
        assert_eq!(eigenvalue(2, 1, 4).unwrap(), rat(1, 8));
        assert_eq!(closed_form_half_minus_one(2, 4).unwrap(), rat(1, 8));
        let ratio = rat(2 * 2 + 16, 16) * closed_form_half(2, 4).unwrap();
        assert_ne!(ratio, rat(1, 8));
    }

    #[test]
    fn log_space_matches_exact() {
        for n in (4..24).step_by(2) {
            for i in 0..=n {
                let e = to_f64(&closed_form_half(i, n).unwrap());
                let l = closed_form_half_log(i, n).unwrap().to_f64();
                assert!((e - l).abs() <= 1e-12 * e.abs().max(1e-300), "{n} {i}");
                let e = to_f64(&closed_form_half_minus_one(i, n).unwrap());
                let l = closed_form_half_minus_one_log(i, n).unwrap().to_f64();
                assert!((e - l).abs() <= 1e-12 * e.abs().max(1e-300), "{n} {i}");
            }
        }
    }

    #[test]
    fn float_path_close_to_exact_at_moderate_n() {
        for n in [5u32, 9, 12] {
            for k in 0..=n {
                for i in 0..=n {
                    let e = to_f64(&dual_hahn(k, i, n).unwrap());
                    let f = dual_hahn_f64(k, i, n).unwrap();
                    assert!((e - f).abs() < 1e-9, "{n} {k} {i}: {e} vs {f}");
                }
            }
        }
    }

    #[test]
    fn float_path_cancels_at_larger_n() {
        let e = to_f64(&dual_hahn(20, 18, 20).unwrap());
        let f = dual_hahn_f64(20, 18, 20).unwrap();
        assert!((e - f).abs() > 1e-12);
    }

    #[test]
    fn identity_examples() {
        assert!(verify_identity(IdentityKind::Symmetry, 7, 3, 1, 0).unwrap());
        assert!(verify_identity(IdentityKind::Orthogonality, 6, 0, 4, 4).unwrap());
        assert!(verify_identity(IdentityKind::Difference, 2, 1, 1, 0).unwrap());
        assert!(verify_identity(IdentityKind::Recurrence, 6, 2, 3, 0).unwrap());
        assert!(verify_identity(IdentityKind::Orthogonality, 3, 0, 4, 0).is_err());
    }

    #[test]
    fn recurrence_needs_lambda_multiplier() {
        // With multiplier i instead of λ(i) the three-term relation fails.
        let (n, k, i) = (6i64, 2i64, 1i64);
        let r = |d: i64| dual_hahn_unchecked(d, i, n);
        let rhs = rat_int((n - k) * (n - k)) * r(k + 1) - rat_int((k - n) * (k - n) + k * k) * r(k)
            + rat_int(k * k) * r(k - 1);
        assert_ne!(rat_int(i) * r(k), rhs);
        assert_eq!(rat_int(lambda(i, n)) * r(k), rhs);
    }

    #[test]
    fn eigen_system_invariants() {
        let es = EigenSystem::new(6, 2).unwrap();
        assert_eq!(es.betas[0], Rational::one());
        assert_eq!(es.multiplicities[0], BigInt::one());
        let total: BigInt = es.multiplicities.iter().sum();
        assert_eq!(total, binomial(12, 6));
        assert!(es.betas.iter().all(|b| b.abs() <= Rational::one()));
        for i in 0..=6 {
            assert_eq!(es.eigenfunctions[i][0], Rational::one());
            assert_eq!(es.normalised_sq(i, 0), Rational::from_integer(es.multiplicities[i].clone()));
        }
    }
}
