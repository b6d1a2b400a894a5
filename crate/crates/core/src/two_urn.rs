//! The two-urn Bernoulli-Laplace chain.
//!
//! Two urns hold `n` balls each, `n` red and `n` black in total. A step picks a
//! uniform `k`-subset of each urn and swaps them. The state `i` is the number of
//! red balls in the right urn; the deck-shuffle start is `i = 0`.

use std::fmt;
use std::io::{BufRead, Write};

use itertools::Itertools;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::exact::{binomial, fmt_rational, ln_binomial, log_sum_exp, parse_rational, Rational};

/// Largest `n` for which exact kernels are built by default.
pub const EXACT_LIMIT: u32 = 64;

/// Largest `C(n, k)^2` the brute-force oracle enumerates.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoUrnParams {
    pub n: u32,
    pub k: u32,
}

impl TwoUrnParams {
    pub fn new(n: u32, k: u32) -> Result<Self> {
        if n == 0 {
            return domain("two-urn chain: n must be positive");
        }
        if k > n {
            return domain(format!("two-urn chain: k = {k} exceeds n = {n}"));
        }
        Ok(TwoUrnParams { n, k })
    }

    pub fn states(&self) -> usize {
        self.n as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Float,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Exact => "exact",
            Mode::Float => "float",
        })
    }
}

/// Entry type of kernels and distributions: exact rationals or `f64`.
pub trait Scalar: Clone + Num + Signed + PartialOrd + fmt::Debug + Send + Sync {
    const MODE: Mode;
    fn to_f64(&self) -> f64;
    fn render(&self) -> String;
    fn parse(s: &str) -> Option<Self>;
}

impl Scalar for Rational {
    const MODE: Mode = Mode::Exact;
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn render(&self) -> String {
        fmt_rational(self)
    }
    fn parse(s: &str) -> Option<Self> {
        parse_rational(s)
    }
}

impl Scalar for f64 {
    const MODE: Mode = Mode::Float;
    fn to_f64(&self) -> f64 {
        *self
    }
    fn render(&self) -> String {
        format!("{self:e}")
    }
    fn parse(s: &str) -> Option<Self> {
        s.trim().parse().ok()
    }
}

/// Probability vector indexed by state.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<T> {
    pub probs: Vec<T>,
}

impl<T: Scalar> Distribution<T> {
    pub fn point_mass(states: usize, at: usize) -> Result<Self> {
        if at >= states {
            return domain(format!("point mass at {at} outside 0..{states}"));
        }
        let mut probs = vec![T::zero(); states];
        probs[at] = T::one();
        Ok(Distribution { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total(&self) -> T {
        self.probs.iter().fold(T::zero(), |a, p| a + p.clone())
    }

    /// One step: `self · kernel`.
    pub fn step(&self, kernel: &Kernel<T>) -> Result<Self> {
        if kernel.entries.len() != self.probs.len() {
            return domain(format!(
                "distribution of length {} does not match kernel of size {}",
                self.probs.len(),
                kernel.entries.len()
            ));
        }
        let m = self.probs.len();
        let mut out = vec![T::zero(); m];
        for (p, row) in self.probs.iter().zip(&kernel.entries) {
            if p.is_zero() {
                continue;
            }
            for (o, e) in out.iter_mut().zip(row) {
                *o = o.clone() + p.clone() * e.clone();
            }
        }
        Ok(Distribution { probs: out })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["state", "prob"])?;
        for (j, p) in self.probs.iter().enumerate() {
            wr.write_record([j.to_string(), p.render()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Row-stochastic transition matrix on `0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel<T> {
    pub params: TwoUrnParams,
    pub entries: Vec<Vec<T>>,
}

impl<T: Scalar> Kernel<T> {
    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.entries[i][j]
    }

    pub fn row_sums(&self) -> Vec<T> {
        self.entries
            .iter()
            .map(|r| r.iter().fold(T::zero(), |a, e| a + e.clone()))
            .collect()
    }

    /// Writes the dense matrix with `n`, `k` and the mode as leading comments.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# n={}", self.params.n)?;
        writeln!(w, "# k={}", self.params.k)?;
        writeln!(w, "# mode={}", T::MODE)?;
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["i".to_string()];
        header.extend((0..self.size()).map(|j| j.to_string()));
        wr.write_record(&header)?;
        for (i, row) in self.entries.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(Scalar::render));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a matrix written by [`Kernel::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut n = None;
        let mut k = None;
        let mut body = String::new();
        for line in r.lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((key, val)) = rest.trim().split_once('=') {
                    match key.trim() {
                        "n" => n = val.trim().parse().ok(),
                        "k" => k = val.trim().parse().ok(),
                        "mode" if val.trim() != T::MODE.to_string() => {
                            return domain(format!("kernel file mode {val} does not match"))
                        }
                        _ => {}
                    }
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let params = match (n, k) {
            (Some(n), Some(k)) => TwoUrnParams::new(n, k)?,
            _ => return domain("kernel file lacks n or k"),
        };
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let mut entries = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .skip(1)
                .map(|s| T::parse(s).ok_or_else(|| Error::Domain(format!("bad entry {s}"))))
                .collect::<Result<Vec<T>>>()?;
            entries.push(row);
        }
        if entries.len() != params.states() || entries.iter().any(|r| r.len() != params.states()) {
            return domain("kernel file has the wrong shape");
        }
        Ok(Kernel { params, entries })
    }
}

/// Kernel with integer entries over one common denominator `C(n, k)^2`.
#[derive(Debug, Clone)]
pub struct IntKernel {
    pub params: TwoUrnParams,
    pub numerators: Vec<Vec<BigInt>>,
    pub denominator: BigInt,
}

impl IntKernel {
    /// Convolution of the two hypergeometric counts of red balls leaving each urn.
    pub fn new(params: TwoUrnParams) -> Self {
        let (n, k) = (params.n as i64, params.k as i64);
        let numerators = (0..=n)
            .into_par_iter()
            .map(|i| {
                let mut row = vec![BigInt::zero(); params.states()];
                // a reds leave the right urn (i red of n), b reds leave the left (n - i red of n)
                for a in 0..=k.min(i) {
                    let wa = binomial(i, a) * binomial(n - i, k - a);
                    if wa.is_zero() {
                        continue;
                    }
                    for b in 0..=k.min(n - i) {
                        let wb = binomial(n - i, b) * binomial(i, k - b);
                        if wb.is_zero() {
                            continue;
                        }
                        row[(i - a + b) as usize] += &wa * wb;
                    }
                }
                row
            })
            .collect();
        let c = binomial(n, k);
        IntKernel {
            params,
            numerators,
            denominator: &c * &c,
        }
    }

    pub fn to_rational(&self) -> Kernel<Rational> {
        Kernel {
            params: self.params,
            entries: self
                .numerators
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|x| Rational::new(x.clone(), self.denominator.clone()))
                        .collect()
                })
                .collect(),
        }
    }
}

/// Exact kernel.
pub fn kernel(params: TwoUrnParams) -> Kernel<Rational> {
    IntKernel::new(params).to_rational()
}

/// Float kernel with binomials and sums evaluated in log space.
pub fn kernel_f64(params: TwoUrnParams) -> Kernel<f64> {
    let (n, k) = (params.n as u64, params.k as u64);
    let ln_norm = 2.0 * ln_binomial(n, k);
    let entries = (0..=n)
        .into_par_iter()
        .map(|i| {
            let mut terms: Vec<Vec<f64>> = vec![Vec::new(); params.states()];
            for a in 0..=k.min(i) {
                if k - a > n - i {
                    continue;
                }
                let la = ln_binomial(i, a) + ln_binomial(n - i, k - a);
                for b in 0..=k.min(n - i) {
                    if k - b > i {
                        continue;
                    }
                    let lb = ln_binomial(n - i, b) + ln_binomial(i, k - b);
                    terms[(i - a + b) as usize].push(la + lb - ln_norm);
                }
            }
            terms
                .iter()
                .map(|t| if t.is_empty() { 0.0 } else { log_sum_exp(t).exp() })
                .collect()
        })
        .collect();
    Kernel { params, entries }
}

/// Kernel from the double-binomial sum over `m`, split into the `i <= j` and
/// `i > j` branches. Empty ranges contribute zero.
pub fn lemma_kernel(params: TwoUrnParams) -> Kernel<Rational> {
    let (n, k) = (params.n as i64, params.k as i64);
    let c = binomial(n, k);
    let den = &c * &c;
    let b = |a: i64, b: i64| binomial(a, b);
    let entries = (0..=n)
        .map(|i| {
            (0..=n)
                .map(|j| {
                    let mut sum = BigInt::zero();
                    if i <= j {
                        let d = j - i;
                        let hi = (k - d).min(n - j).min(i);
                        for m in 0..=hi {
                            sum += b(i, m) * b(n - i, k - m) * b(n - i, d + m) * b(i, k - d - m);
                        }
                    } else {
                        let d = i - j;
                        let hi = k.min(n - j).min(i);
                        for m in d..=hi {
                            sum += b(i, m) * b(n - i, k - m) * b(n - i, m - d) * b(i, k + d - m);
                        }
                    }
                    Rational::new(sum, den.clone())
                })
                .collect()
        })
        .collect();
    Kernel { params, entries }
}

/// Kernel by enumerating every pair of `k`-subsets of the two urns.
pub fn brute_force_kernel(params: TwoUrnParams) -> Result<Kernel<Rational>> {
    let (n, k) = (params.n as usize, params.k as usize);
    let subsets = binomial(n as i64, k as i64).to_u64().unwrap_or(u64::MAX);
    if subsets.saturating_mul(subsets) > BRUTE_FORCE_LIMIT {
        return Err(Error::Capacity(format!(
            "brute force needs C({n},{k})^2 = {subsets}^2 subset pairs, limit {BRUTE_FORCE_LIMIT}"
        )));
    }
    let choices: Vec<Vec<usize>> = (0..n).combinations(k).collect();
    let total = BigInt::from(choices.len() * choices.len());
    let mut entries = Vec::with_capacity(n + 1);
    for i in 0..=n {
        // right urn: balls 0..i red; left urn: balls 0..n-i red
        let mut counts = vec![0usize; n + 1];
        for right in &choices {
            let reds_out = right.iter().filter(|&&b| b < i).count();
            for left in &choices {
                let reds_in = left.iter().filter(|&&b| b < n - i).count();
                counts[i - reds_out + reds_in] += 1;
            }
        }
        entries.push(
            counts
                .into_iter()
                .map(|c| Rational::new(BigInt::from(c), total.clone()))
                .collect(),
        );
    }
    Ok(Kernel { params, entries })
}

/// Hypergeometric stationary law `π_n(j) = C(n,j) C(n,n-j) / C(2n,n)`.
pub fn stationary(n: u32) -> Result<Distribution<Rational>> {
    if n == 0 {
        return domain("stationary: n must be positive");
    }
    let n = n as i64;
    let total = binomial(2 * n, n);
    Ok(Distribution {
        probs: (0..=n)
            .map(|j| Rational::new(binomial(n, j) * binomial(n, n - j), total.clone()))
            .collect(),
    })
}

pub fn stationary_f64(n: u32) -> Result<Distribution<f64>> {
    if n == 0 {
        return domain("stationary: n must be positive");
    }
    let n = n as u64;
    let ln_total = ln_binomial(2 * n, n);
    Ok(Distribution {
        probs: (0..=n)
            .map(|j| (2.0 * ln_binomial(n, j) - ln_total).exp())
            .collect(),
    })
}

/// `start · kernel^t`.
pub fn evolve<T: Scalar>(start: &Distribution<T>, kernel: &Kernel<T>, t: usize) -> Result<Distribution<T>> {
    let mut d = start.clone();
    if d.len() != kernel.size() {
        return domain("evolve: distribution and kernel sizes differ");
    }
    for _ in 0..t {
        d = d.step(kernel)?;
    }
    Ok(d)
}

/// `(1/2) Σ |p(j) - q(j)|`.
pub fn tv_distance<T: Scalar>(p: &Distribution<T>, q: &Distribution<T>) -> Result<T> {
    if p.len() != q.len() {
        return domain(format!("tv_distance: lengths {} and {} differ", p.len(), q.len()));
    }
    let two = T::one() + T::one();
    let s = p
        .probs
        .iter()
        .zip(&q.probs)
        .fold(T::zero(), |acc, (a, b)| acc + (a.clone() - b.clone()).abs());
    Ok(s / two)
}

/// Exact evolution of a point mass, kept as integer numerators over `C(n,k)^{2t}`.
#[derive(Debug, Clone)]
pub struct ExactWalk {
    kernel: IntKernel,
    numerators: Vec<BigInt>,
    denominator: BigInt,
    t: usize,
    stationary_num: Vec<BigInt>,
    stationary_den: BigInt,
}

impl ExactWalk {
    pub fn new(params: TwoUrnParams, start: usize) -> Result<Self> {
        if start > params.n as usize {
            return domain(format!("start state {start} exceeds n = {}", params.n));
        }
        let n = params.n as i64;
        let mut numerators = vec![BigInt::zero(); params.states()];
        numerators[start] = BigInt::one();
        Ok(ExactWalk {
            kernel: IntKernel::new(params),
            numerators,
            denominator: BigInt::one(),
            t: 0,
            stationary_num: (0..=n).map(|j| binomial(n, j) * binomial(n, n - j)).collect(),
            stationary_den: binomial(2 * n, n),
        })
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn advance(&mut self) {
        let m = self.numerators.len();
        let mut next = vec![BigInt::zero(); m];
        for (p, row) in self.numerators.iter().zip(&self.kernel.numerators) {
            if p.is_zero() {
                continue;
            }
            for (o, e) in next.iter_mut().zip(row) {
                if !e.is_zero() {
                    *o += p * e;
                }
            }
        }
        self.numerators = next;
        self.denominator *= &self.kernel.denominator;
        self.t += 1;
    }

    pub fn distribution(&self) -> Distribution<Rational> {
        Distribution {
            probs: self
                .numerators
                .iter()
                .map(|x| Rational::new(x.clone(), self.denominator.clone()))
                .collect(),
        }
    }

    /// Exact total variation distance to the stationary law.
    pub fn tv(&self) -> Rational {
        let mut s = BigInt::zero();
        for (p, q) in self.numerators.iter().zip(&self.stationary_num) {
            let d: BigInt = p * &self.stationary_den - q * &self.denominator;
            s += d.abs();
        }
        Rational::new(s, BigInt::from(2) * &self.denominator * &self.stationary_den)
    }

    /// `Σ_j P^t(j) f(j)` for integer-valued `f`.
    pub fn expect_int(&self, f: impl Fn(usize) -> BigInt) -> Rational {
        let s = self
            .numerators
            .iter()
            .enumerate()
            .fold(BigInt::zero(), |acc, (j, p)| acc + p * f(j));
        Rational::new(s, self.denominator.clone())
    }
}

/// Exact TV to stationarity at `t = 0..=t_max` from a point mass at `start`.
pub fn tv_curve_exact(params: TwoUrnParams, start: usize, t_max: usize) -> Result<Vec<Rational>> {
    let mut walk = ExactWalk::new(params, start)?;
    let mut out = Vec::with_capacity(t_max + 1);
    out.push(walk.tv());
    for _ in 0..t_max {
        walk.advance();
        out.push(walk.tv());
    }
    Ok(out)
}

pub fn tv_curve_f64(params: TwoUrnParams, start: usize, t_max: usize) -> Result<Vec<f64>> {
    let k = kernel_f64(params);
    let pi = stationary_f64(params.n)?;
    let mut d = Distribution::point_mass(params.states(), start)?;
    let mut out = vec![tv_distance(&d, &pi)?];
    for _ in 0..t_max {
        d = d.step(&k)?;
        out.push(tv_distance(&d, &pi)?);
    }
    Ok(out)
}

/// Least `t` with TV to stationarity below `epsilon`, scanning upward from `t = 0`.
pub fn mixing_time(params: TwoUrnParams, epsilon: f64, start: usize, mode: Mode) -> Result<usize> {
    if !(epsilon > 0.0) {
        return domain(format!("mixing_time: epsilon must be positive, got {epsilon}"));
    }
    if start > params.n as usize {
        return domain(format!("start state {start} exceeds n = {}", params.n));
    }
    // k = 0 and k = n give a chain that is constant or 2-periodic in distribution
    let degenerate = params.k == 0 || params.k == params.n;
    let limit = if degenerate { Some(2) } else { None };
    let not_converged = || {
        Error::NonConvergence(format!(
            "chain with n = {}, k = {} never gets within {epsilon} of stationarity",
            params.n, params.k
        ))
    };
    match mode {
        Mode::Exact => {
            let eps = BigRational::from_f64(epsilon).ok_or_else(|| Error::Domain("epsilon".into()))?;
            let mut walk = ExactWalk::new(params, start)?;
            loop {
                if walk.tv() < eps {
                    return Ok(walk.time());
                }
                if limit.is_some_and(|l| walk.time() >= l) {
                    return Err(not_converged());
                }
                walk.advance();
            }
        }
        Mode::Float => {
            let k = kernel_f64(params);
            let pi = stationary_f64(params.n)?;
            let mut d = Distribution::point_mass(params.states(), start)?;
            let mut t = 0;
            loop {
                if tv_distance(&d, &pi)? < epsilon {
                    return Ok(t);
                }
                if limit.is_some_and(|l| t >= l) {
                    return Err(not_converged());
                }
                d = d.step(&k)?;
                t += 1;
            }
        }
    }
}

/// Checks `π(i) K(i,j) = π(j) K(j,i)` exactly.
pub fn is_reversible(kernel: &Kernel<Rational>) -> Result<bool> {
    let pi = stationary(kernel.params.n)?;
    let m = kernel.size();
    Ok((0..m).all(|i| {
        (0..m).all(|j| &pi.probs[i] * kernel.get(i, j) == &pi.probs[j] * kernel.get(j, i))
    }))
}

/// Checks `A_{n-k} = S A_k = A_k S` with `S` the antidiagonal permutation.
pub fn antidiagonal_conjugation_check(n: u32, k: u32) -> Result<bool> {
    let a = kernel(TwoUrnParams::new(n, k)?);
    let b = kernel(TwoUrnParams::new(n, n - k)?);
    let m = n as usize;
    Ok((0..=m).all(|i| {
        (0..=m).all(|j| b.get(i, j) == a.get(m - i, j) && b.get(i, j) == a.get(i, m - j))
    }))
}
