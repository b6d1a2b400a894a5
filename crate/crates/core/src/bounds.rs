//! Closed-form bounds for the two-urn chain: the spectral sum, the
//! eigenvalue-based bound for k near n/2, the path-coupling mixing time and
//! the second-moment lower bound.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::exact::{self, binomial, ln_abs_int, log_sum_exp, rat, rat_int, Rational};
use crate::hahn::{self, EigenSystem};
use crate::two_urn::{Mode, EXACT_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Spectral,
    Theorem1,
    Theorem2,
    Theorem3,
    Theorem4a,
    Theorem4b,
}

/// What a bound's `value` bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Meaning {
    #[serde(rename = "upper_on_4tv_squared")]
    UpperOn4tvSquared,
    UpperOnTv,
    LowerOnTv,
    UpperOnMixingTime,
    LowerOnMixingTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub meaning: Meaning,
    pub n: u32,
    pub k: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub start: Option<u32>,
    pub value: f64,
    /// Exact rational value when one is available.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub exact: Option<String>,
    pub details: BTreeMap<String, f64>,
}

impl BoundReport {
    pub(crate) fn new(kind: BoundKind, meaning: Meaning, n: u32, k: u32, value: f64) -> Self {
        BoundReport {
            kind,
            meaning,
            n,
            k,
            p: None,
            t: None,
            epsilon: None,
            c: None,
            alpha: None,
            start: None,
            value,
            exact: None,
            details: BTreeMap::new(),
        }
    }

    pub(crate) fn detail(mut self, key: &str, v: f64) -> Self {
        self.details.insert(key.to_string(), v);
        self
    }
}

fn check_interior(n: u32, k: u32, what: &str) -> Result<()> {
    if k == 0 || k >= n {
        return domain(format!("{what}: need 0 < k < n, got n = {n}, k = {k}"));
    }
    Ok(())
}

/// Weights `d_i s_i(start)^2` and squared eigenvalues `β_i^2` for `i >= 1`.
fn spectral_terms(sys: &EigenSystem, start: usize) -> Vec<(Rational, Rational)> {
    (1..=sys.n as usize)
        .map(|i| {
            let b = &sys.betas[i];
            (sys.normalised_sq(i, start), b * b)
        })
        .collect()
}

/// Exact `Σ_{i>=1} d_i β_i^{2t} s_i(start)^2` for `t = 0..=t_max`.
pub fn spectral_curve_exact(n: u32, k: u32, start: u32, t_max: usize) -> Result<Vec<Rational>> {
    check_interior(n, k, "spectral sum")?;
    if start > n {
        return domain(format!("spectral sum: start {start} exceeds n = {n}"));
    }
    let sys = EigenSystem::new(n, k)?;
    let mut terms = spectral_terms(&sys, start as usize);
    let mut out = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        if t > 0 {
            for (w, b2) in terms.iter_mut() {
                if !w.is_zero() {
                    *w = &*w * &*b2;
                }
            }
        }
        out.push(terms.iter().fold(Rational::zero(), |acc, (w, _)| acc + w));
    }
    Ok(out)
}

/// Log of `Σ_{i>=1} d_i β_i^{2t}` from the start state `0` via the log-space
/// closed forms, for `k = n/2` or `k = n/2 - 1`.
pub fn spectral_sum_log(n: u32, k: u32, t: u64) -> Result<f64> {
    let closed: fn(u32, u32) -> Result<exact::LogValue> = if n % 2 == 0 && k == n / 2 {
        hahn::closed_form_half_log
    } else if n % 2 == 0 && n >= 4 && k == n / 2 - 1 {
        hahn::closed_form_half_minus_one_log
    } else {
        return domain(format!(
            "log-space spectral sum needs even n and k in {{n/2, n/2 - 1}}, got n = {n}, k = {k}"
        ));
    };
    let mut logs = Vec::with_capacity(n as usize);
    for i in 1..=n {
        let b = closed(i, n)?;
        if b.is_zero() {
            continue;
        }
        let d = binomial(2 * n as i64, i as i64) - binomial(2 * n as i64, i as i64 - 1);
        logs.push(ln_abs_int(&d) + 2.0 * t as f64 * b.ln_abs);
    }
    Ok(log_sum_exp(&logs))
}

/// Spectral upper bound on `4·TV²` after `t` steps from `start`.
///
/// Exact mode needs `n <= 64`. Float mode uses the log-space closed forms when
/// `start = 0` and `k` is `n/2` or `n/2 - 1`, and rounds the exact sum otherwise.
pub fn spectral_upper(n: u32, k: u32, t: u64, start: u32, mode: Mode) -> Result<BoundReport> {
    check_interior(n, k, "spectral_upper")?;
    if t == 0 {
        return domain("spectral_upper: t must be at least 1");
    }
    if start > n {
        return domain(format!("spectral_upper: start {start} exceeds n = {n}"));
    }
    let closed = start == 0 && n % 2 == 0 && (k == n / 2 || (n >= 4 && k == n / 2 - 1));
    let (value, exact) = if mode == Mode::Float && closed {
        (spectral_sum_log(n, k, t)?.exp(), None)
    } else {
        if n > EXACT_LIMIT {
            return Err(Error::Capacity(format!(
                "spectral_upper: n = {n} exceeds {EXACT_LIMIT} outside the closed-form cases"
            )));
        }
        let sys = EigenSystem::new(n, k)?;
        let s = spectral_terms(&sys, start as usize)
            .into_iter()
            .fold(Rational::zero(), |acc, (w, b2)| acc + w * num_traits::pow(b2, t as usize));
        let text = exact::fmt_rational(&s);
        (exact::to_f64(&s), (mode == Mode::Exact).then_some(text))
    };
    let mut r = BoundReport::new(BoundKind::Spectral, Meaning::UpperOn4tvSquared, n, k, value)
        .detail("tv_upper", value.sqrt() / 2.0);
    r.t = Some(t);
    r.start = Some(start);
    r.exact = exact;
    Ok(r)
}

/// Case constants `(A, B)` of the eigenvalue bound for `k = n/2 - c`.
pub fn theorem3_constants(c: u32) -> (f64, f64) {
    match c {
        0 => (1.0, 1.0 / 6.0),
        1 => (1.0, 1.0 / 3.0),
        _ => (6f64.powi(c as i32 - 1), 12.0),
    }
}

/// `B π² n² (A/n)^{2t-2}`, an upper bound on `4·TV²` for `k = n/2 - c`.
pub fn theorem3_bound(n: u32, c: u32, t: u64) -> Result<BoundReport> {
    if n % 2 == 1 || n < 2 {
        return domain(format!("theorem3_bound: n must be even, got {n}"));
    }
    if t == 0 {
        return domain("theorem3_bound: t must be at least 1");
    }
    if 6f64.powi(c as i32) > n as f64 {
        return domain(format!("theorem3_bound: c = {c} exceeds log_6 n for n = {n}"));
    }
    if c >= n / 2 {
        return domain(format!("theorem3_bound: k = n/2 - c is not positive for n = {n}, c = {c}"));
    }
    let (a, b) = theorem3_constants(c);
    let nf = n as f64;
    let ln_value = (b * PI * PI).ln() + 2.0 * nf.ln() + (2.0 * t as f64 - 2.0) * (a / nf).ln();
    let value = ln_value.exp();
    let mut r = BoundReport::new(BoundKind::Theorem3, Meaning::UpperOn4tvSquared, n, n / 2 - c, value)
        .detail("a", a)
        .detail("b", b)
        .detail("ln_value", ln_value)
        .detail("tv_upper", value.sqrt() / 2.0);
    r.t = Some(t);
    r.c = Some(c as f64);
    Ok(r)
}

/// Path-coupling bound on `t_mix(ε)`: exact form plus the two asymptotic forms.
pub fn theorem1_bound(n: u32, k: u32, epsilon: f64) -> Result<BoundReport> {
    if k == 0 || k >= n {
        return domain(format!(
            "theorem1_bound: degenerate k = {k} for n = {n}, adjacent states do not contract"
        ));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return domain(format!("theorem1_bound: epsilon must lie in (0, 1), got {epsilon}"));
    }
    let nf = n as f64;
    let kf = k as f64;
    let contraction = 1.0 - 2.0 * kf * (nf - kf) / (nf * nf);
    let log_term = (nf / epsilon).ln();
    let exact_form = log_term / -contraction.ln();
    let small_k = nf / (2.0 * kf) * log_term;
    let mut r = BoundReport::new(BoundKind::Theorem1, Meaning::UpperOnMixingTime, n, k, exact_form)
        .detail("contraction", contraction)
        .detail("exact_form", exact_form)
        .detail("asymptotic_small_k", small_k);
    let b = kf / nf;
    if b <= 0.5 {
        r = r.detail("asymptotic_constant_ratio", log_term / (2.0 * b * (1.0 - b)));
    }
    r.epsilon = Some(epsilon);
    Ok(r)
}

/// Second non-trivial eigenvalue in the form used for the variance.
fn beta2(n: u32, k: u32) -> Rational {
    let (n, k) = (n as i64, k as i64);
    let base = rat_int(1) - rat(2 * k * (2 * n - 1), n * n);
    if n == 1 {
        return base;
    }
    base + rat(2 * k * (k - 1) * (2 * n - 1), n * n * (n - 1))
}

/// Exact `(E², Var)` of `f(Z_t) = √(n-1)(1 - 2Z_t/n)` from the start state `0`.
pub fn second_moments_exact(n: u32, k: u32, t: u64) -> Result<(Rational, Rational)> {
    if n < 2 || k > n {
        return domain(format!("second moments: need n >= 2 and k <= n, got n = {n}, k = {k}"));
    }
    let ni = n as i64;
    let b1 = rat_int(1) - rat(2 * k as i64, ni);
    let b1_2t = num_traits::pow(&b1 * &b1, t as usize);
    let e2 = rat_int(ni - 1) * &b1_2t;
    let var = rat(ni - 1, 2 * ni - 1)
        + rat((ni - 1) * (2 * ni - 2), 2 * ni - 1) * num_traits::pow(beta2(n, k), t as usize)
        - &e2;
    Ok((e2, var))
}

/// Chebyshev lower bound `1 - 1/α² - Var/(|E| - α)²` on TV at time `t`.
///
/// `alpha = None` takes `α = |E|/2` and evaluates the bound exactly. A bound
/// with `|E| <= α` is vacuous and reported as `0`.
pub fn second_moment_lower(n: u32, k: u32, t: u64, alpha: Option<f64>) -> Result<BoundReport> {
    check_interior(n, k, "second_moment_lower")?;
    if let Some(a) = alpha {
        if !(a > 0.0) {
            return domain(format!("second_moment_lower: alpha must be positive, got {a}"));
        }
    }
    let (e2, var) = second_moments_exact(n, k, t)?;
    let mean = {
        let b1 = 1.0 - 2.0 * k as f64 / n as f64;
        ((n - 1) as f64).sqrt() * b1.powi(t as i32)
    };
    let var_f = exact::to_f64(&var);
    let (value, exact_text, alpha_used) = match alpha {
        None => {
            if e2.is_zero() {
                (0.0, Some("0".to_string()), 0.0)
            } else {
                let four = rat_int(4);
                let raw = rat_int(1) - (&four + &four * &var) / &e2;
                let v = if raw.is_negative() { Rational::zero() } else { raw };
                (exact::to_f64(&v), Some(exact::fmt_rational(&v)), mean.abs() / 2.0)
            }
        }
        Some(a) => {
            let gap = mean.abs() - a;
            let v = if gap > 0.0 {
                (1.0 - 1.0 / (a * a) - var_f / (gap * gap)).max(0.0)
            } else {
                0.0
            };
            (v, None, a)
        }
    };
    let vacuous = if mean.abs() > alpha_used && alpha_used > 0.0 { 0.0 } else { 1.0 };
    let mut r = BoundReport::new(BoundKind::Theorem2, Meaning::LowerOnTv, n, k, value)
        .detail("mean", mean)
        .detail("variance", var_f)
        .detail("vacuous", vacuous);
    r.t = Some(t);
    r.alpha = Some(alpha_used);
    r.exact = exact_text;
    Ok(r)
}

/// Checks `f₁² = f₀/(2n-1) + (2n-2)/(2n-1)·f₂` exactly at every `x` in `0..=n`.
pub fn eigenfunction_square_identity_check(n: u32) -> Result<bool> {
    if n < 2 {
        return domain(format!("identity check needs n >= 2, got {n}"));
    }
    let ni = n as i64;
    Ok((0..=ni).all(|x| {
        let f1 = rat_int(1) - rat(2 * x, ni);
        let f2 = rat_int(1) - rat(2 * x * (2 * ni - 1), ni * ni)
            + rat(2 * x * (x - 1) * (2 * ni - 1), ni * ni * (ni - 1));
        &f1 * &f1 == rat(1, 2 * ni - 1) + rat(2 * ni - 2, 2 * ni - 1) * f2
    }))
}

/// `4·TV²`, the quantity the spectral and eigenvalue bounds control.
pub fn four_tv_squared(tv: &Rational) -> Rational {
    Rational::from_integer(BigInt::from(4)) * tv * tv
}

/// First `t` in `t_from..=t_to` where the exact spectral sum for `k = n/2 - c`
/// exceeds [`theorem3_bound`], or `None`.
pub fn theorem3_dominates(n: u32, c: u32, t_from: u64, t_to: u64) -> Result<Option<u64>> {
    let k = n / 2 - c;
    let curve = spectral_curve_exact(n, k, 0, t_to as usize)?;
    for t in t_from..=t_to {
        let bound = theorem3_bound(n, c, t)?;
        let s = exact::to_f64(&curve[t as usize]);
        if s > bound.value * (1.0 + 1e-12) {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::two_urn::{tv_curve_exact, TwoUrnParams};
    use proptest::prelude::*;

    #[test]
    fn spectral_n2() {
        let r = spectral_upper(2, 1, 1, 0, Mode::Exact).unwrap();
        assert_eq!(r.exact.as_deref(), Some("1/2"));
        assert_eq!(r.meaning, Meaning::UpperOn4tvSquared);
        assert!((r.details["tv_upper"] - 0.125f64.sqrt()).abs() < 1e-15);
        assert!(1.0 / 3.0 <= r.details["tv_upper"]);
    }

    #[test]
    fn spectral_decays() {
        let a = spectral_upper(10, 3, 5, 0, Mode::Exact).unwrap().value;
        let b = spectral_upper(10, 3, 40, 0, Mode::Exact).unwrap().value;
        assert!(b < a * 1e-10);
    }

    #[test]
    fn spectral_float_matches_exact() {
        for (n, k) in [(20, 10), (20, 9), (52, 26)] {
            let e = spectral_upper(n, k, 3, 0, Mode::Exact).unwrap().value;
            let f = spectral_upper(n, k, 3, 0, Mode::Float).unwrap().value;
            assert!((e - f).abs() < 1e-10 * e, "{n} {k}: {e} vs {f}");
        }
    }

    #[test]
    fn spectral_large_n_needs_closed_form() {
        assert!(spectral_upper(208, 104, 3, 0, Mode::Float).is_ok());
        assert!(matches!(
            spectral_upper(208, 50, 3, 0, Mode::Float),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn table_one_eigenvalue_rows() {
        for (n, want) in [(52, 6.08e-4), (208, 3.80e-5), (1040, 1.52e-6)] {
            let r = theorem3_bound(n, 0, 3).unwrap();
            assert!((r.value - want).abs() < 0.005 * want, "{n}: {}", r.value);
            let s = spectral_upper(n, n / 2, 3, 0, Mode::Float).unwrap();
            assert!(s.value <= r.value);
        }
    }

    #[test]
    fn theorem3_rejects_large_c() {
        assert!(theorem3_bound(52, 3, 3).is_err());
        assert!(theorem3_bound(52, 2, 3).is_ok());
        assert!(theorem3_bound(51, 0, 3).is_err());
    }

    #[test]
    fn theorem3_half_holds_from_t3() {
        for n in (2..=40).step_by(2) {
            assert_eq!(theorem3_dominates(n, 0, 3, 50).unwrap(), None, "n = {n}");
        }
    }

    #[test]
    fn theorem3_half_minus_one_holds_at_t3() {
        for n in (6..=40).step_by(2) {
            assert_eq!(theorem3_dominates(n, 1, 3, 3).unwrap(), None, "n = {n}");
        }
    }

    // β_1(n/2 - 1) = 2/n, so the i = 1 term alone is (2n-1)(2/n)^{2t} and
    // overtakes π² n^{4-2t}/3 once t >= 4.
    #[test]
    fn theorem3_half_minus_one_fails_from_t4() {
        assert_eq!(theorem3_dominates(24, 1, 3, 10).unwrap(), Some(8));
        for n in (6..=40).step_by(2) {
            assert!(theorem3_dominates(n, 1, 3, 12).unwrap().is_some(), "n = {n}");
        }
    }

    #[test]
    fn theorem1_table_rows() {
        for (n, k, want) in [(52, 2, 81.3), (208, 6, 132.4), (1040, 45, 106.9)] {
            let r = theorem1_bound(n, k, 0.1).unwrap();
            assert!((r.details["asymptotic_small_k"] - want).abs() < 0.1, "{n}");
            let nf = n as f64;
            let kf = k as f64;
            let linear = nf * nf / (2.0 * kf * (nf - kf)) * (nf / 0.1).ln();
            assert!(r.value <= linear);
        }
        let r = theorem1_bound(52, 2, 0.1).unwrap();
        assert!((r.details["asymptotic_small_k"] - 13.0 * 520f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn theorem1_degenerate() {
        assert!(theorem1_bound(10, 0, 0.1).is_err());
        assert!(theorem1_bound(10, 10, 0.1).is_err());
        assert!(theorem1_bound(10, 3, 1.0).is_err());
        let r = theorem1_bound(10, 7, 0.1).unwrap();
        assert!(!r.details.contains_key("asymptotic_constant_ratio"));
    }

    #[test]
    fn second_moment_at_zero_is_deterministic() {
        for n in [2, 5, 17] {
            let (e2, var) = second_moments_exact(n, 1, 0).unwrap();
            assert_eq!(e2, rat_int(n as i64 - 1));
            assert!(var.is_zero());
        }
    }

    #[test]
    fn second_moment_vacuous_near_half() {
        let r = second_moment_lower(10, 5, 3, None).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.details["vacuous"], 1.0);
        let r = second_moment_lower(10, 1, 1, Some(100.0)).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn second_moment_below_exact_tv_n100() {
        let (n, k) = (100u32, 1u32);
        let t = ((n as f64 / 4.0) * (n as f64).ln()).ceil() as usize;
        let lb = second_moment_lower(n, k, t as u64, None).unwrap();
        let tv = tv_curve_exact(TwoUrnParams::new(n, k).unwrap(), 0, t).unwrap();
        assert!(lb.value <= exact::to_f64(&tv[t]));
    }

    #[test]
    fn moments_match_evolved_distribution() {
        for (n, k) in [(6u32, 1u32), (9, 4), (12, 5)] {
            let mut walk = crate::two_urn::ExactWalk::new(TwoUrnParams::new(n, k).unwrap(), 0).unwrap();
            let ni = n as i64;
            for t in 0..8u64 {
                // f(j) = √(n-1)(n - 2j)/n, so f² = (n-1)(n-2j)²/n².
                let m1 = walk.expect_int(|j| BigInt::from(ni - 2 * j as i64));
                let m2 = walk.expect_int(|j| BigInt::from((ni - 2 * j as i64).pow(2)));
                let e2 = rat_int(ni - 1) * &m1 * &m1 / rat_int(ni * ni);
                let second = rat_int(ni - 1) * m2 / rat_int(ni * ni);
                let (want_e2, want_var) = second_moments_exact(n, k, t).unwrap();
                assert_eq!(e2, want_e2);
                assert_eq!(&second - &e2, want_var);
                walk.advance();
            }
        }
    }

    #[test]
    fn square_identity() {
        for n in [2, 3, 10, 31] {
            assert!(eigenfunction_square_identity_check(n).unwrap());
        }
    }

    #[test]
    fn f2_is_second_eigenfunction() {
        let n = 9i64;
        for x in 0..=n {
            let f2 = rat_int(1) - rat(2 * x * (2 * n - 1), n * n)
                + rat(2 * x * (x - 1) * (2 * n - 1), n * n * (n - 1));
            assert_eq!(f2, hahn::eigenfunction(2, x as u32, n as u32).unwrap());
        }
        assert_eq!(beta2(9, 4), hahn::eigenvalue(2, 4, 9).unwrap());
    }

    #[test]
    fn report_json_echoes_inputs() {
        let r = theorem1_bound(52, 2, 0.1).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["kind"], "theorem1");
        assert_eq!(v["meaning"], "upper_on_mixing_time");
        assert_eq!(v["n"], 52);
        assert_eq!(v["epsilon"], 0.1);
        let back: BoundReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn spectral_dominates_exact_tv(n in 2u32..=16, kf in 0.0f64..1.0, start_f in 0.0f64..1.0) {
            let k = 1 + ((n - 1) as f64 * kf) as u32 % (n - 1);
            let start = (n as f64 * start_f) as u32;
            let params = TwoUrnParams::new(n, k).unwrap();
            let tv = tv_curve_exact(params, start as usize, 12).unwrap();
            let s = spectral_curve_exact(n, k, start, 12).unwrap();
            for t in 1..=12 {
                prop_assert!(four_tv_squared(&tv[t]) <= s[t]);
            }
        }

        #[test]
        fn second_moment_is_a_lower_bound(n in 2u32..=20, kf in 0.0f64..1.0, t in 1usize..30) {
            let k = 1 + ((n - 1) as f64 * kf) as u32 % (n - 1);
            let tv = tv_curve_exact(TwoUrnParams::new(n, k).unwrap(), 0, t).unwrap();
            let lb = second_moment_lower(n, k, t as u64, None).unwrap();
            prop_assert!(lb.value <= exact::to_f64(&tv[t]));
        }

        #[test]
        fn theorem3_scales_geometrically(t in 1u64..20) {
            let a = theorem3_bound(52, 0, t).unwrap().value;
            let b = theorem3_bound(52, 0, t + 1).unwrap().value;
            prop_assert!((b / a - 1.0 / (52.0 * 52.0)).abs() < 1e-12);
        }
    }
}
