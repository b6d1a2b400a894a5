//! The 2p-urn cycle chain: simulation, an exact oracle for tiny instances,
//! the single-card marginal walk and a literal deck-shuffle check.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundKind, BoundReport, Meaning};
use crate::error::{domain, Error, Result};
use crate::exact::{binomial, rat, Rational};
use crate::stats::{chi_square, run_counts, ChiSquareReport, SimRng};
use crate::two_urn::{self, TwoUrnParams};

/// Largest state space [`exact_small_oracle`] builds.
pub const ORACLE_STATE_LIMIT: usize = 100_000;

/// Largest deck the card-level oracle shuffles.
pub const DECK_LIMIT: u32 = 120;

/// Occupancy of 2p urns: `counts[u][c]` balls of colour `c` in urn `u`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UrnCycleState {
    pub p: u32,
    pub n: u32,
    pub k: u32,
    pub counts: Vec<Vec<u32>>,
}

impl UrnCycleState {
    /// Every urn holds only its own colour.
    pub fn sorted(p: u32, n: u32, k: u32) -> Result<Self> {
        if p == 0 || n == 0 {
            return domain("urn cycle: need p >= 1 and n >= 1");
        }
        if k > n {
            return domain(format!("urn cycle: k = {k} exceeds n = {n}"));
        }
        let m = 2 * p as usize;
        let counts = (0..m)
            .map(|u| (0..m).map(|c| if u == c { n } else { 0 }).collect())
            .collect();
        Ok(UrnCycleState { p, n, k, counts })
    }

    pub fn urns(&self) -> usize {
        2 * self.p as usize
    }

    pub fn is_valid(&self) -> bool {
        let m = self.urns();
        self.counts.len() == m
            && self.counts.iter().all(|r| r.len() == m && r.iter().sum::<u32>() == self.n)
            && (0..m).all(|c| self.counts.iter().map(|r| r[c]).sum::<u32>() == self.n)
    }

    fn flat(&self) -> Vec<u32> {
        self.counts.iter().flatten().copied().collect()
    }
}

/// Moves a uniform `k`-subset of every urn to the next urn, all urns at once.
pub fn step(state: &UrnCycleState, rng: &mut SimRng) -> Result<UrnCycleState> {
    if state.k > state.n {
        return domain(format!("step: k = {} exceeds n = {}", state.k, state.n));
    }
    let m = state.urns();
    let mut movers = vec![vec![0u32; m]; m];
    for (u, row) in state.counts.iter().enumerate() {
        // positions 0..n are laid out colour by colour
        for pos in index::sample(rng, state.n as usize, state.k as usize).iter() {
            let mut acc = 0usize;
            for (c, &cnt) in row.iter().enumerate() {
                acc += cnt as usize;
                if pos < acc {
                    movers[u][c] += 1;
                    break;
                }
            }
        }
    }
    let mut next = state.clone();
    for u in 0..m {
        let from = (u + m - 1) % m;
        for c in 0..m {
            next.counts[u][c] = state.counts[u][c] - movers[u][c] + movers[from][c];
        }
    }
    Ok(next)
}

/// Exact kernel of the urn-cycle chain over every occupancy matrix.
///
/// Row entries are integer numerators over `C(n, k)^{2p}`.
#[derive(Debug, Clone)]
pub struct SmallChain {
    pub p: u32,
    pub n: u32,
    pub k: u32,
    pub states: Vec<UrnCycleState>,
    pub rows: Vec<Vec<(usize, BigInt)>>,
    pub denominator: BigInt,
    index: HashMap<Vec<u32>, usize>,
}

// All vectors of length `len` with entries bounded by `caps` summing to `total`.
fn compositions(total: u32, caps: &[u32]) -> Vec<Vec<u32>> {
    fn rec(total: u32, caps: &[u32], cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if caps.len() == 1 {
            if total <= caps[0] {
                cur.push(total);
                out.push(cur.clone());
                cur.pop();
            }
            return;
        }
        let rest: u32 = caps[1..].iter().sum();
        for v in total.saturating_sub(rest)..=total.min(caps[0]) {
            cur.push(v);
            rec(total - v, &caps[1..], cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if caps.is_empty() {
        if total == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    rec(total, caps, &mut Vec::new(), &mut out);
    out
}

// Matrices with every row and column summing to n.
fn enumerate_states(m: usize, n: u32, limit: usize) -> Result<Vec<Vec<Vec<u32>>>> {
    fn rec(
        m: usize,
        col_left: &mut Vec<u32>,
        rows: &mut Vec<Vec<u32>>,
        out: &mut Vec<Vec<Vec<u32>>>,
        n: u32,
        limit: usize,
    ) -> bool {
        if rows.len() == m {
            out.push(rows.clone());
            return out.len() <= limit;
        }
        for row in compositions(n, col_left) {
            for (c, v) in row.iter().enumerate() {
                col_left[c] -= v;
            }
            rows.push(row.clone());
            let ok = rec(m, col_left, rows, out, n, limit);
            rows.pop();
            for (c, v) in row.iter().enumerate() {
                col_left[c] += v;
            }
            if !ok {
                return false;
            }
        }
        true
    }
    let mut out = Vec::new();
    if !rec(m, &mut vec![n; m], &mut Vec::new(), &mut out, n, limit) {
        return Err(Error::Capacity(format!(
            "urn-cycle oracle: more than {limit} states for {m} urns of {n} balls"
        )));
    }
    Ok(out)
}

impl SmallChain {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, state: &UrnCycleState) -> Option<usize> {
        self.index.get(&state.flat()).copied()
    }

    pub fn entry(&self, i: usize, j: usize) -> Rational {
        self.rows[i]
            .iter()
            .find(|(c, _)| *c == j)
            .map(|(_, v)| Rational::new(v.clone(), self.denominator.clone()))
            .unwrap_or_else(Rational::zero)
    }

    pub fn row_sums_are_one(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.iter().fold(BigInt::zero(), |a, (_, v)| a + v) == self.denominator)
    }

    /// One step of a distribution over states.
    pub fn step_dist(&self, dist: &[Rational]) -> Vec<Rational> {
        let mut out = vec![BigInt::zero(); self.len()];
        let mut den = BigInt::one();
        // Bring the input over one denominator first.
        for x in dist {
            den = num_integer::Integer::lcm(&den, x.denom());
        }
        for (i, x) in dist.iter().enumerate() {
            if x.is_zero() {
                continue;
            }
            let scaled = x.numer() * (&den / x.denom());
            for (j, v) in &self.rows[i] {
                out[*j] += &scaled * v;
            }
        }
        let total = den * &self.denominator;
        out.into_iter().map(|v| Rational::new(v, total.clone())).collect()
    }

    /// Distribution after `t` steps from `start`.
    pub fn evolve(&self, start: &UrnCycleState, t: usize) -> Result<Vec<Rational>> {
        let s = self
            .index_of(start)
            .ok_or_else(|| Error::Domain("start state is not in the oracle's state space".into()))?;
        let mut d = vec![Rational::zero(); self.len()];
        d[s] = Rational::one();
        for _ in 0..t {
            d = self.step_dist(&d);
        }
        Ok(d)
    }

    /// Candidate stationary law `Π_u multinomial(n; row u) / multinomial(2pn; n, ..., n)`.
    pub fn product_hypergeometric(&self) -> Vec<Rational> {
        let m = 2 * self.p as i64;
        let n = self.n as i64;
        let multinomial = |total: i64, parts: &[i64]| {
            let mut left = total;
            let mut acc = BigInt::one();
            for &x in parts {
                acc *= binomial(left, x);
                left -= x;
            }
            acc
        };
        let denom = multinomial(m * n, &vec![n; m as usize]);
        self.states
            .iter()
            .map(|s| {
                let num = s.counts.iter().fold(BigInt::one(), |acc, row| {
                    let parts: Vec<i64> = row.iter().map(|&v| v as i64).collect();
                    acc * multinomial(n, &parts)
                });
                Rational::new(num, denom.clone())
            })
            .collect()
    }

    /// `true` iff the product-hypergeometric law sums to one and satisfies `πK = π`.
    pub fn stationarity_check(&self) -> bool {
        let pi = self.product_hypergeometric();
        let total = pi.iter().fold(Rational::zero(), |a, x| a + x);
        total.is_one() && self.step_dist(&pi) == pi
    }

    /// Exact TV to the product-hypergeometric law after `t = 0..=t_max` steps.
    pub fn tv_curve(&self, start: &UrnCycleState, t_max: usize) -> Result<Vec<Rational>> {
        let pi = self.product_hypergeometric();
        let s = self
            .index_of(start)
            .ok_or_else(|| Error::Domain("start state is not in the oracle's state space".into()))?;
        let mut d = vec![Rational::zero(); self.len()];
        d[s] = Rational::one();
        let mut out = Vec::with_capacity(t_max + 1);
        for t in 0..=t_max {
            if t > 0 {
                d = self.step_dist(&d);
            }
            let l1 = d.iter().zip(&pi).fold(Rational::zero(), |a, (x, y)| a + (x - y).abs());
            out.push(l1 / Rational::from_integer(BigInt::from(2)));
        }
        Ok(out)
    }
}

/// Builds the exact kernel of the `2p`-urn chain, capped at
/// [`ORACLE_STATE_LIMIT`] states.
pub fn exact_small_oracle(p: u32, n: u32, k: u32) -> Result<SmallChain> {
    UrnCycleState::sorted(p, n, k)?;
    let m = 2 * p as usize;
    let matrices = enumerate_states(m, n, ORACLE_STATE_LIMIT)?;
    let states: Vec<UrnCycleState> = matrices
        .into_iter()
        .map(|counts| UrnCycleState { p, n, k, counts })
        .collect();
    let index: HashMap<Vec<u32>, usize> = states.iter().enumerate().map(|(i, s)| (s.flat(), i)).collect();
    let rows = states
        .iter()
        .map(|s| {
            // per urn: every colour split of the k movers with its weight
            let options: Vec<Vec<(Vec<u32>, BigInt)>> = s
                .counts
                .iter()
                .map(|row| {
                    compositions(k, row)
                        .into_iter()
                        .map(|mv| {
                            let w = row
                                .iter()
                                .zip(&mv)
                                .fold(BigInt::one(), |a, (&c, &x)| a * binomial(c as i64, x as i64));
                            (mv, w)
                        })
                        .collect()
                })
                .collect();
            let mut acc: HashMap<usize, BigInt> = HashMap::new();
            let mut choice = vec![0usize; m];
            loop {
                let mut w = BigInt::one();
                for (u, &c) in choice.iter().enumerate() {
                    w *= &options[u][c].1;
                }
                let mut next = s.counts.clone();
                for u in 0..m {
                    let from = (u + m - 1) % m;
                    for c in 0..m {
                        next[u][c] = s.counts[u][c] - options[u][choice[u]].0[c] + options[from][choice[from]].0[c];
                    }
                }
                let flat: Vec<u32> = next.into_iter().flatten().collect();
                *acc.entry(index[&flat]).or_insert_with(BigInt::zero) += w;
                // odometer over per-urn choices
                let mut u = 0;
                while u < m {
                    choice[u] += 1;
                    if choice[u] < options[u].len() {
                        break;
                    }
                    choice[u] = 0;
                    u += 1;
                }
                if u == m {
                    break;
                }
            }
            let mut row: Vec<(usize, BigInt)> = acc.into_iter().collect();
            row.sort_by_key(|(j, _)| *j);
            row
        })
        .collect();
    let c = binomial(n as i64, k as i64);
    let denominator = num_traits::pow(c, m);
    Ok(SmallChain {
        p,
        n,
        k,
        states,
        rows,
        denominator,
        index,
    })
}

/// Two-urn state (red balls in the right urn) of a two-urn occupancy matrix.
pub fn two_urn_state(state: &UrnCycleState) -> Option<usize> {
    (state.p == 1).then(|| state.counts[1][0] as usize)
}

/// `true` iff the `p = 1` oracle equals the two-urn kernel entry by entry.
pub fn matches_two_urn(n: u32, k: u32) -> Result<bool> {
    let chain = exact_small_oracle(1, n, k)?;
    let two = two_urn::kernel(TwoUrnParams::new(n, k)?);
    let m = chain.len();
    if m != n as usize + 1 {
        return Ok(false);
    }
    Ok((0..m).all(|i| {
        (0..m).all(|j| {
            let (a, b) = (two_urn_state(&chain.states[i]).unwrap(), two_urn_state(&chain.states[j]).unwrap());
            &chain.entry(i, j) == two.get(a, b)
        })
    }))
}

fn reflect(state: &UrnCycleState) -> UrnCycleState {
    let m = state.urns();
    let mut out = state.clone();
    for u in 0..m {
        out.counts[u] = state.counts[(m - u) % m].clone();
    }
    out
}

fn unshift(state: &UrnCycleState) -> UrnCycleState {
    let m = state.urns();
    let mut out = state.clone();
    for u in 0..m {
        out.counts[u] = state.counts[(u + 1) % m].clone();
    }
    out
}

/// Checks that moving `n - k` balls forward equals moving `k` balls backward
/// and then rotating every urn forward: `K_{n-k}(M, M') = K_k(R M, R S⁻¹ M')`
/// with `R` the urn reflection and `S` the rotation. Also checks that the TV
/// curves from `M` under `n - k` and from `R M` under `k` coincide.
pub fn complement_symmetry_check(p: u32, n: u32, k: u32, t_max: usize) -> Result<bool> {
    let a = exact_small_oracle(p, n, k)?;
    let b = exact_small_oracle(p, n, n - k)?;
    for (i, s) in b.states.iter().enumerate() {
        let ri = a.index_of(&reflect(s)).expect("reflection stays in the state space");
        for (j, s2) in b.states.iter().enumerate() {
            let rj = a.index_of(&reflect(&unshift(s2))).expect("rotation stays in the state space");
            if b.entry(i, j) != a.entry(ri, rj) {
                return Ok(false);
            }
        }
    }
    let start = UrnCycleState::sorted(p, n, n - k)?;
    let mut mirrored = reflect(&start);
    mirrored.k = k;
    Ok(b.tv_curve(&start, t_max)? == a.tv_curve(&mirrored, t_max)?)
}

/// Which single-card walk on the `2p` piles to follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalKind {
    /// Lazy symmetric walk, `P(±1) = k/2n`, hold `1 - k/n`.
    Symmetric,
    /// Difference of two tracked cards, `P(±1) = (k/n)(1 - k/n)`.
    Difference,
    /// Literal pile of one card, `P(+1) = k/n`.
    Forward,
}

/// Distribution of the tracked card's pile.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalWalk {
    pub p: u32,
    pub n: u32,
    pub k: u32,
    pub kind: MarginalKind,
    pub dist: Vec<Rational>,
    kernel: Vec<Vec<Rational>>,
}

/// Circulant kernel on `Z/2p` of the chosen single-card walk.
pub fn marginal_kernel_of(kind: MarginalKind, p: u32, n: u32, k: u32) -> Result<Vec<Vec<Rational>>> {
    if p == 0 || n == 0 || k > n {
        return domain(format!("marginal kernel: need p >= 1 and k <= n, got p = {p}, n = {n}, k = {k}"));
    }
    let (ni, ki) = (n as i64, k as i64);
    let steps: Vec<(usize, Rational)> = match kind {
        MarginalKind::Symmetric => vec![(1, rat(ki, 2 * ni)), (usize::MAX, rat(ki, 2 * ni))],
        MarginalKind::Difference => {
            let q = rat(ki * (ni - ki), ni * ni);
            vec![(1, q.clone()), (usize::MAX, q)]
        }
        MarginalKind::Forward => vec![(1, rat(ki, ni))],
    };
    let m = 2 * p as usize;
    let mut kernel = vec![vec![Rational::zero(); m]; m];
    for (i, row) in kernel.iter_mut().enumerate() {
        let mut moved = Rational::zero();
        for (off, pr) in &steps {
            let j = if *off == usize::MAX { (i + m - 1) % m } else { (i + off) % m };
            row[j] += pr;
            moved += pr;
        }
        row[i] += Rational::one() - moved;
    }
    Ok(kernel)
}

/// The symmetric lazy walk on `Z/2p` with hold probability `1 - k/n`.
pub fn marginal_kernel(p: u32, n: u32, k: u32) -> Result<Vec<Vec<Rational>>> {
    marginal_kernel_of(MarginalKind::Symmetric, p, n, k)
}

impl MarginalWalk {
    pub fn new(kind: MarginalKind, p: u32, n: u32, k: u32) -> Result<Self> {
        let kernel = marginal_kernel_of(kind, p, n, k)?;
        let mut dist = vec![Rational::zero(); 2 * p as usize];
        dist[0] = Rational::one();
        Ok(MarginalWalk {
            p,
            n,
            k,
            kind,
            dist,
            kernel,
        })
    }

    pub fn advance(&mut self) {
        let m = self.dist.len();
        let mut next = vec![Rational::zero(); m];
        for (x, row) in self.dist.iter().zip(&self.kernel) {
            for (o, e) in next.iter_mut().zip(row) {
                if !e.is_zero() {
                    *o += x * e;
                }
            }
        }
        self.dist = next;
    }

    pub fn tv_to_uniform(&self) -> Rational {
        let u = Rational::new(BigInt::one(), BigInt::from(self.dist.len()));
        let l1 = self.dist.iter().fold(Rational::zero(), |a, x| a + (x - &u).abs());
        l1 / Rational::from_integer(BigInt::from(2))
    }
}

/// Exact TV of the marginal walk to uniform at `t = 0..=t_max`, from pile 0.
pub fn marginal_tv_curve(kind: MarginalKind, p: u32, n: u32, k: u32, t_max: usize) -> Result<Vec<Rational>> {
    let mut walk = MarginalWalk::new(kind, p, n, k)?;
    let mut out = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        if t > 0 {
            walk.advance();
        }
        out.push(walk.tv_to_uniform());
    }
    Ok(out)
}

/// `|(n-k)/n + (k/n) cos(π/p)|^t`, the test-function lower bound for the
/// symmetric walk.
pub fn test_function_bound(p: u32, n: u32, k: u32, t: u64) -> f64 {
    let (nf, kf) = (n as f64, k as f64);
    ((nf - kf) / nf + kf / nf * (PI / p as f64).cos()).abs().powi(t as i32)
}

/// `c·2p²n/(π²k)`, the lower bound on `t_mix(e^{-c})` for 2p urns.
pub fn theorem4b_bound(n: u32, p: u32, k: u32, c: f64) -> Result<BoundReport> {
    if k == 0 || k > n || p == 0 {
        return domain(format!("theorem4b_bound: need p >= 1 and 1 <= k <= n, got n = {n}, k = {k}"));
    }
    if !(c > 0.0) {
        return domain(format!("theorem4b_bound: c must be positive, got {c}"));
    }
    let value = c * 2.0 * (p as f64).powi(2) * n as f64 / (PI * PI * k as f64);
    let mut r = BoundReport::new(BoundKind::Theorem4b, Meaning::LowerOnMixingTime, n, k, value)
        .detail("epsilon", (-c).exp());
    r.p = Some(p);
    r.c = Some(c);
    Ok(r)
}

/// Chi-square comparison of the literal card shuffle with the exact urn chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeckOracleReport {
    pub p: u32,
    pub n: u32,
    pub k: u32,
    pub t: usize,
    pub states: usize,
    pub chi_square: ChiSquareReport,
}

/// Shuffles a `2pn`-card deck `t` times by the pile procedure and tallies the
/// pile-by-origin counts.
///
/// Cutting `k` cards from top to bottom moves cards from pile `j` to pile
/// `j - 1`; piles and origins are relabelled by `j ↦ -j mod 2p` so that the
/// tally is an urn-cycle state moving balls forward.
pub fn deck_projection(p: u32, n: u32, k: u32, t: usize, rng: &mut SimRng) -> UrnCycleState {
    let m = 2 * p as usize;
    let nn = n as usize;
    let mut deck: Vec<usize> = (0..m * nn).map(|pos| pos / nn).collect();
    for _ in 0..t {
        for pile in deck.chunks_mut(nn) {
            pile.shuffle(rng);
        }
        deck.rotate_left(k as usize);
    }
    let mut counts = vec![vec![0u32; m]; m];
    for (pos, &origin) in deck.iter().enumerate() {
        let pile = pos / nn;
        counts[(m - pile) % m][(m - origin) % m] += 1;
    }
    UrnCycleState { p, n, k, counts }
}

/// Runs the card procedure `trials` times and tests its projection against
/// [`exact_small_oracle`] evolved `t` steps.
pub fn deck_shuffle_oracle(p: u32, n: u32, k: u32, t: usize, trials: u64, seed: u64) -> Result<DeckOracleReport> {
    if 2 * p * n > DECK_LIMIT {
        return Err(Error::Capacity(format!(
            "deck oracle: {} cards exceed the limit of {DECK_LIMIT}",
            2 * p * n
        )));
    }
    if trials == 0 {
        return domain("deck oracle: trials must be at least 1");
    }
    let chain = exact_small_oracle(p, n, k)?;
    let start = UrnCycleState::sorted(p, n, k)?;
    let probs: Vec<f64> = chain.evolve(&start, t)?.iter().map(crate::exact::to_f64).collect();
    let counts = run_counts(trials, seed, chain.len(), |rng| {
        let s = deck_projection(p, n, k, t, rng);
        chain.index_of(&s).expect("projection is a valid occupancy")
    });
    Ok(DeckOracleReport {
        p,
        n,
        k,
        t,
        states: chain.len(),
        chi_square: chi_square(&counts, &probs, seed, 5.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::trial_rng;
    use proptest::prelude::*;

    #[test]
    fn step_extremes() {
        let mut rng = trial_rng(1, 0);
        let s = UrnCycleState::sorted(2, 3, 0).unwrap();
        assert_eq!(step(&s, &mut rng).unwrap(), s);
        let s = UrnCycleState::sorted(2, 3, 3).unwrap();
        let next = step(&s, &mut rng).unwrap();
        for u in 0..4 {
            assert_eq!(next.counts[(u + 1) % 4], s.counts[u]);
        }
    }

    #[test]
    fn conservation_over_many_steps() {
        let mut rng = trial_rng(5, 0);
        let mut s = UrnCycleState::sorted(3, 7, 3).unwrap();
        for _ in 0..10_000 {
            s = step(&s, &mut rng).unwrap();
            assert!(s.is_valid());
        }
    }

    #[test]
    fn oracle_state_counts() {
        assert_eq!(exact_small_oracle(2, 2, 1).unwrap().len(), 282);
        assert_eq!(exact_small_oracle(2, 3, 1).unwrap().len(), 2008);
        assert_eq!(exact_small_oracle(1, 6, 2).unwrap().len(), 7);
    }

    #[test]
    fn oracle_capacity() {
        assert!(matches!(exact_small_oracle(3, 6, 1), Err(Error::Capacity(_))));
    }

    #[test]
    fn oracle_rows_and_stationarity() {
        for (p, n, k) in [(1, 4, 1), (2, 2, 1), (2, 3, 2), (3, 1, 1)] {
            let chain = exact_small_oracle(p, n, k).unwrap();
            assert!(chain.row_sums_are_one());
            assert!(chain.stationarity_check(), "{p} {n} {k}");
        }
    }

    #[test]
    fn oracle_reduces_to_two_urn() {
        for n in 1..=6 {
            for k in 0..=n {
                assert!(matches_two_urn(n, k).unwrap(), "n = {n}, k = {k}");
            }
        }
    }

    #[test]
    fn complement_symmetry() {
        for (p, n, k) in [(1, 4, 1), (2, 2, 1), (2, 3, 1)] {
            assert!(complement_symmetry_check(p, n, k, 4).unwrap(), "{p} {n} {k}");
        }
    }

    #[test]
    fn marginal_kernels_are_doubly_stochastic() {
        for kind in [MarginalKind::Symmetric, MarginalKind::Difference, MarginalKind::Forward] {
            for (p, n, k) in [(1, 5, 2), (3, 7, 3), (5, 50, 5)] {
                let kern = marginal_kernel_of(kind, p, n, k).unwrap();
                let m = kern.len();
                for i in 0..m {
                    assert!(kern[i].iter().fold(Rational::zero(), |a, x| a + x).is_one());
                    assert!((0..m).fold(Rational::zero(), |a, r| a + &kern[r][i]).is_one());
                }
            }
        }
    }

    #[test]
    fn marginal_p1_matches_first_eigenvalue() {
        // On two piles the symmetric walk leaves with probability k/n, and the
        // sign test function decays by 1 - 2k/n.
        let (n, k) = (9, 4);
        let kern = marginal_kernel(1, n, k).unwrap();
        let decay = &kern[0][0] - &kern[0][1];
        assert_eq!(decay, crate::hahn::eigenvalue(1, k, n).unwrap());
    }

    #[test]
    fn marginal_tv_monotone_and_above_test_function() {
        let curve = marginal_tv_curve(MarginalKind::Symmetric, 4, 10, 3, 60).unwrap();
        for w in curve.windows(2) {
            assert!(w[1] <= w[0]);
        }
        // the test function has modulus one, so it bounds twice the TV
        for (t, tv) in curve.iter().enumerate() {
            assert!(2.0 * crate::exact::to_f64(tv) >= test_function_bound(4, 10, 3, t as u64) - 1e-12);
        }
    }

    // The pile of one tracked ball is a randomised function of the occupancy,
    // so its TV cannot exceed the full chain's.
    #[test]
    fn marginal_tv_below_full_chain_tv() {
        for (p, n, k) in [(2, 2, 1), (1, 5, 2)] {
            let chain = exact_small_oracle(p, n, k).unwrap();
            let full = chain.tv_curve(&UrnCycleState::sorted(p, n, k).unwrap(), 6).unwrap();
            let marg = marginal_tv_curve(MarginalKind::Forward, p, n, k, 6).unwrap();
            for t in 0..=6 {
                assert!(marg[t] <= full[t], "t = {t}");
            }
        }
    }

    #[test]
    fn theorem4b_linear_in_c() {
        let a = theorem4b_bound(50, 5, 5, 1.0).unwrap().value;
        let b = theorem4b_bound(50, 5, 5, 2.5).unwrap().value;
        assert!((b - 2.5 * a).abs() < 1e-12);
        assert!((a - 50.0 / (PI * PI) * 10.0).abs() < 1e-12);
        assert!(theorem4b_bound(50, 5, 5, 1e-9).unwrap().value < 1e-6);
    }

    #[test]
    fn deck_projection_trivial_cases() {
        let mut rng = trial_rng(3, 0);
        let s = deck_projection(2, 3, 1, 0, &mut rng);
        assert_eq!(s, UrnCycleState::sorted(2, 3, 1).unwrap());
        for t in [1, 4, 9] {
            let s = deck_projection(2, 3, 0, t, &mut rng);
            assert_eq!(s.counts, UrnCycleState::sorted(2, 3, 0).unwrap().counts);
        }
    }

    #[test]
    fn deck_matches_urn_chain_two_piles() {
        let r = deck_shuffle_oracle(1, 3, 1, 2, 20_000, 12).unwrap();
        assert!(r.chi_square.passes(1e-3), "{r:?}");
    }

    #[test]
    fn deck_capacity() {
        assert!(matches!(
            deck_shuffle_oracle(4, 16, 1, 1, 10, 1),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn simulated_chain_matches_oracle() {
        let (p, n, k, t) = (1u32, 4u32, 2u32, 3usize);
        let chain = exact_small_oracle(p, n, k).unwrap();
        let start = UrnCycleState::sorted(p, n, k).unwrap();
        let probs: Vec<f64> = chain.evolve(&start, t).unwrap().iter().map(crate::exact::to_f64).collect();
        let counts = run_counts(20_000, 4, chain.len(), |rng| {
            let mut s = start.clone();
            for _ in 0..t {
                s = step(&s, rng).unwrap();
            }
            chain.index_of(&s).unwrap()
        });
        assert!(chi_square(&counts, &probs, 4, 5.0).passes(1e-3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn step_preserves_margins(p in 1u32..4, n in 1u32..9, kf in 0.0f64..=1.0, seed in any::<u64>()) {
            let k = (n as f64 * kf).round() as u32;
            let mut rng = trial_rng(seed, 0);
            let mut s = UrnCycleState::sorted(p, n, k).unwrap();
            for _ in 0..50 {
                s = step(&s, &mut rng).unwrap();
                prop_assert!(s.is_valid());
            }
        }
    }
}
