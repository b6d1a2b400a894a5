//! Coupling simulators: lazy walk on a cycle, adjacent two-urn states, and
//! ball pairing on 2p urns arranged in a circle.

use std::f64::consts::PI;
use std::io::Write;

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundKind, BoundReport, Meaning};
use crate::error::{domain, Result};
use crate::exact::{rat, Rational};
use crate::stats::{self, Observation, SimRng, TraceStep};

/// `sin(|i-j| π/2y) / sin(π/2y)` with `|i-j|` measured along the shorter arc.
pub fn cycle_metric(i: u64, j: u64, y: u64) -> f64 {
    let gap = arc(i, j, 2 * y);
    if gap == 0 {
        return 0.0;
    }
    let theta = PI / (2 * y) as f64;
    (gap as f64 * theta).sin() / theta.sin()
}

fn arc(i: u64, j: u64, len: u64) -> u64 {
    let d = i.abs_diff(j) % len;
    d.min(len - d)
}

/// Monte Carlo trace with seed and trial count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seed: u64,
    pub trials: u64,
    pub steps: Vec<TraceStep>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TraceRecord {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# seed={}", self.seed)?;
        writeln!(w, "# trials={}", self.trials)?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "t",
            "mean",
            "stderr",
            "uncoupled_fraction",
            "ratio",
            "ratio_stderr",
            "conditional_mean",
            "conditional_gap",
        ])?;
        for s in &self.steps {
            out.write_record([
                s.t.to_string(),
                s.mean.to_string(),
                s.stderr.to_string(),
                s.uncoupled_fraction.to_string(),
                opt(s.ratio),
                opt(s.ratio_stderr),
                opt(s.conditional_mean),
                opt(s.conditional_gap),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Lazy walkers on a cycle of `2y` vertices, started at opposite vertices.
///
/// While apart, a fair coin picks which walker moves and it steps `±1`; once
/// together they move as one.
pub fn simulate_cycle_pair(y: u64, t_max: usize, trials: u64, seed: u64) -> Result<TraceRecord> {
    if y == 0 || trials == 0 {
        return domain("simulate_cycle_pair: need y >= 1 and trials >= 1");
    }
    let len = 2 * y;
    let steps = stats::run_paths(trials, seed, t_max + 1, |rng| {
        let (mut x, mut z) = (0u64, y);
        let mut path = Vec::with_capacity(t_max + 1);
        for t in 0..=t_max {
            if t > 0 {
                if x == z {
                    if rng.gen_bool(0.5) {
                        let s = if rng.gen_bool(0.5) { 1 } else { len - 1 };
                        x = (x + s) % len;
                        z = x;
                    }
                } else {
                    let s = if rng.gen_bool(0.5) { 1 } else { len - 1 };
                    if rng.gen_bool(0.5) {
                        x = (x + s) % len;
                    } else {
                        z = (z + s) % len;
                    }
                }
            }
            path.push(Observation {
                value: cycle_metric(x, z, y),
                uncoupled: x != z,
                gap: Some(arc(x, z, len) as f64),
            });
        }
        path
    });
    Ok(TraceRecord { seed, trials, steps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacentContraction {
    pub n: u32,
    pub k: u32,
    pub trials: u64,
    pub seed: u64,
    pub mean: f64,
    pub stderr: f64,
    /// `1 - 2k(n-k)/n²` as `p/q`.
    pub exact: String,
    pub exact_value: f64,
}

pub fn adjacent_contraction_exact(n: u32, k: u32) -> Rational {
    let (n, k) = (n as i64, k as i64);
    rat(1, 1) - rat(2 * k * (n - k), n * n)
}

/// One step of the labelled left/right coupling from `S_{a}` and `S_{a-1}`,
/// returning the new distance.
fn adjacent_step(n: u32, k: u32, a: u32, rng: &mut SimRng) -> u32 {
    let left = index::sample(rng, n as usize, k as usize);
    let right = index::sample(rng, n as usize, k as usize);
    // Red balls carry the lowest labels on each side.
    let after = |reds: u32| {
        let out = left.iter().filter(|&l| (l as u32) < reds).count() as i64;
        let back = right.iter().filter(|&l| (l as u32) < n - reds).count() as i64;
        reds as i64 - out + back
    };
    after(a).abs_diff(after(a - 1)) as u32
}

/// Mean post-step distance of two two-urn chains started in adjacent states,
/// with the closed form alongside.
pub fn adjacent_contraction(n: u32, k: u32, trials: u64, seed: u64) -> Result<AdjacentContraction> {
    if n == 0 || k > n || trials == 0 {
        return domain(format!(
            "adjacent_contraction: need n >= 1, 0 <= k <= n and trials >= 1, got n = {n}, k = {k}"
        ));
    }
    let a = n.div_ceil(2);
    let (mean, stderr) = stats::run_scalar(trials, seed, |rng| adjacent_step(n, k, a, rng) as f64);
    let exact = adjacent_contraction_exact(n, k);
    Ok(AdjacentContraction {
        n,
        k,
        trials,
        seed,
        mean,
        stderr,
        exact: crate::exact::fmt_rational(&exact),
        exact_value: crate::exact::to_f64(&exact),
    })
}

/// Number of balls moved from each urn per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSpec {
    Fixed(u32),
    /// `(k, weight)` pairs; one `k` is drawn per step and used for every urn.
    Mixture(Vec<(u32, f64)>),
}

impl KSpec {
    fn validate(&self, n: u32) -> Result<()> {
        let ks: Vec<u32> = match self {
            KSpec::Fixed(k) => vec![*k],
            KSpec::Mixture(m) => {
                if m.is_empty() || m.iter().any(|&(_, w)| !(w >= 0.0)) || m.iter().all(|&(_, w)| w == 0.0) {
                    return domain("k mixture needs non-negative weights with a positive total");
                }
                m.iter().map(|&(k, _)| k).collect()
            }
        };
        if let Some(k) = ks.iter().find(|&&k| k > n) {
            return domain(format!("k = {k} exceeds urn size n = {n}"));
        }
        Ok(())
    }
}

/// Expected one-step factor of `D` for a fixed `k`.
pub fn urn_cycle_decay(n: u32, k: u32, p: u32) -> f64 {
    let (nf, kf) = (n as f64, k as f64);
    (kf * kf + (nf - kf) * (nf - kf)) / (nf * nf)
        + 2.0 * kf * (nf - kf) / (nf * nf) * (PI / (2 * p) as f64).cos()
}

/// Expected one-step factor of `D`, averaged over a mixture.
pub fn urn_cycle_decay_spec(n: u32, spec: &KSpec, p: u32) -> f64 {
    match spec {
        KSpec::Fixed(k) => urn_cycle_decay(n, *k, p),
        KSpec::Mixture(m) => {
            let total: f64 = m.iter().map(|&(_, w)| w).sum();
            m.iter().map(|&(k, w)| w / total * urn_cycle_decay(n, k, p)).sum()
        }
    }
}

/// Two labelled copies of the 2p-urn chain under the ball-pairing coupling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedUrnState {
    pub p: u32,
    pub n: u32,
    /// Urn of each label in the first chain.
    pub chain_a: Vec<u32>,
    /// Urn of each label in the second chain.
    pub chain_b: Vec<u32>,
}

impl PairedUrnState {
    /// Worst case: the second chain is the first rotated by `p` urns.
    pub fn opposite(p: u32, n: u32) -> Result<Self> {
        if p == 0 || n == 0 {
            return domain("paired urns: need p >= 1 and n >= 1");
        }
        let urns = 2 * p;
        let chain_a: Vec<u32> = (0..urns * n).map(|l| l / n).collect();
        let chain_b = chain_a.iter().map(|&u| (u + p) % urns).collect();
        Ok(PairedUrnState { p, n, chain_a, chain_b })
    }

    fn urns(&self) -> u32 {
        2 * self.p
    }

    /// `D`, the sum over labels of the cycle metric between the two urns.
    pub fn distance(&self) -> f64 {
        let y = self.p as u64;
        self.chain_a
            .iter()
            .zip(&self.chain_b)
            .map(|(&a, &b)| cycle_metric(a as u64, b as u64, y))
            .sum()
    }

    pub fn matched(&self) -> usize {
        self.chain_a.iter().zip(&self.chain_b).filter(|(a, b)| a == b).count()
    }

    fn members(urn_of: &[u32], urns: u32) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); urns as usize];
        for (l, &u) in urn_of.iter().enumerate() {
            out[u as usize].push(l as u32);
        }
        out
    }

    /// Partner in the second chain of every label in the first: matched
    /// labels pair with themselves, the rest pair in ascending label order
    /// within each urn.
    pub fn pairing(&self) -> Vec<u32> {
        let urns = self.urns();
        let mut partner = vec![u32::MAX; self.chain_a.len()];
        let mut free_a = vec![Vec::new(); urns as usize];
        let mut free_b = vec![Vec::new(); urns as usize];
        for l in 0..self.chain_a.len() {
            let (a, b) = (self.chain_a[l], self.chain_b[l]);
            if a == b {
                partner[l] = l as u32;
            } else {
                free_a[a as usize].push(l as u32);
                free_b[b as usize].push(l as u32);
            }
        }
        for (fa, fb) in free_a.iter().zip(&free_b) {
            for (&la, &lb) in fa.iter().zip(fb) {
                partner[la as usize] = lb;
            }
        }
        partner
    }

    /// One coupled step moving `k` balls from every urn. Returns the labels
    /// moved in the second chain, urn by urn.
    pub fn step(&mut self, k: u32, rng: &mut SimRng) -> Vec<Vec<u32>> {
        let urns = self.urns();
        let partner = self.pairing();
        let members = Self::members(&self.chain_a, urns);
        let mut moved_b = Vec::with_capacity(urns as usize);
        for m in &members {
            let picks = index::sample(rng, m.len(), k as usize);
            let mut moved = Vec::with_capacity(k as usize);
            for i in picks.iter() {
                let la = m[i] as usize;
                let lb = partner[la] as usize;
                self.chain_a[la] = (self.chain_a[la] + 1) % urns;
                self.chain_b[lb] = (self.chain_b[lb] + 1) % urns;
                moved.push(lb as u32);
            }
            moved.sort_unstable();
            moved_b.push(moved);
        }
        moved_b
    }
}

fn draw_k(spec: &KSpec, weights: &Option<WeightedIndex<f64>>, rng: &mut SimRng) -> u32 {
    match (spec, weights) {
        (KSpec::Fixed(k), _) => *k,
        (KSpec::Mixture(m), Some(w)) => m[w.sample(rng)].0,
        (KSpec::Mixture(m), None) => m[0].0,
    }
}

/// Per-step `E[D_t]` and the fraction of trials with `D_t > 0`, from the
/// rotated worst-case start.
pub fn simulate_urn_cycle_coupling(
    p: u32,
    n: u32,
    k_spec: &KSpec,
    t_max: usize,
    trials: u64,
    seed: u64,
) -> Result<TraceRecord> {
    k_spec.validate(n)?;
    if trials == 0 {
        return domain("simulate_urn_cycle_coupling: trials must be at least 1");
    }
    let start = PairedUrnState::opposite(p, n)?;
    let weights = match k_spec {
        KSpec::Mixture(m) => Some(
            WeightedIndex::new(m.iter().map(|&(_, w)| w))
                .map_err(|e| crate::Error::Domain(format!("k mixture: {e}")))?,
        ),
        KSpec::Fixed(_) => None,
    };
    let steps = stats::run_paths(trials, seed, t_max + 1, |rng| {
        let mut state = start.clone();
        let mut path = Vec::with_capacity(t_max + 1);
        for t in 0..=t_max {
            if t > 0 {
                let k = draw_k(k_spec, &weights, rng);
                state.step(k, rng);
            }
            let d = state.distance();
            path.push(Observation {
                value: d,
                uncoupled: state.matched() < state.chain_a.len(),
                gap: None,
            });
        }
        path
    });
    Ok(TraceRecord { seed, trials, steps })
}

/// Coupling-time bound on `t_mix(e^{-c}/4)` for 2p urns: the sharp form as
/// `value`, the simplified form in `details`.
pub fn theorem4a_bound(n: u32, p: u32, k: u32, c: f64) -> Result<BoundReport> {
    if k == 0 || 2 * k > n || p == 0 {
        return domain(format!("theorem4a_bound: need p >= 1 and 1 <= k <= n/2, got n = {n}, k = {k}"));
    }
    if !(c > 0.0) {
        return domain(format!("theorem4a_bound: c must be positive, got {c}"));
    }
    let (nf, pf, kf) = (n as f64, p as f64, k as f64);
    let log_term = (16.0 * nf * pf).ln() + c;
    let sharp = 4.0 * nf * nf * pf * pf / (PI * PI * kf * (nf - kf)) * log_term;
    let simplified = 8.0 * nf * pf * pf / (PI * PI * kf) * log_term;
    let mut r = BoundReport::new(BoundKind::Theorem4a, Meaning::UpperOnMixingTime, n, k, sharp)
        .detail("sharp", sharp)
        .detail("simplified", simplified)
        .detail("epsilon", (-c).exp() / 4.0);
    r.p = Some(p);
    r.c = Some(c);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{chi_square, run_counts, trial_rng};
    use proptest::prelude::*;

    #[test]
    fn metric_values() {
        assert_eq!(cycle_metric(3, 3, 5), 0.0);
        assert!((cycle_metric(3, 4, 5) - 1.0).abs() < 1e-12);
        assert!((cycle_metric(9, 0, 5) - 1.0).abs() < 1e-12);
        let top = 1.0 / (PI / 10.0).sin();
        assert!((cycle_metric(0, 5, 5) - top).abs() < 1e-12);
        assert!((cycle_metric(1, 7, 5) - cycle_metric(1, 5, 5)).abs() < 1e-12);
    }

    #[test]
    fn cycle_pair_decays_at_cos_rate() {
        let y = 5;
        let rec = simulate_cycle_pair(y, 6, 40_000, 11).unwrap();
        let rho = (PI / (2 * y) as f64).cos();
        for s in &rec.steps[1..] {
            let (r, se) = (s.ratio.unwrap(), s.ratio_stderr.unwrap());
            assert!((r - rho).abs() < 4.0 * se + 1e-12, "t = {}: {r} vs {rho}", s.t);
        }
        for w in rec.steps.windows(2) {
            assert!(w[1].uncoupled_fraction <= w[0].uncoupled_fraction);
        }
    }

    #[test]
    fn cycle_pair_conditional_gap_stays_large() {
        let y = 6;
        let rec = simulate_cycle_pair(y, 60, 20_000, 3).unwrap();
        for s in &rec.steps {
            if let Some(g) = s.conditional_gap {
                if s.uncoupled_fraction * 20_000.0 > 500.0 {
                    assert!(g >= y as f64 / PI, "t = {}: {g}", s.t);
                }
            }
        }
    }

    #[test]
    fn adjacent_extremes_are_exact() {
        for n in [1, 4, 9] {
            let r = adjacent_contraction(n, 0, 500, 1).unwrap();
            assert_eq!((r.mean, r.stderr), (1.0, 0.0));
            let r = adjacent_contraction(n, n, 500, 1).unwrap();
            assert_eq!((r.mean, r.stderr), (1.0, 0.0));
        }
    }

    #[test]
    fn adjacent_half() {
        let r = adjacent_contraction(10, 5, 40_000, 5).unwrap();
        assert_eq!(r.exact, "1/2");
        assert!((r.mean - 0.5).abs() < 3.0 * r.stderr);
    }

    #[test]
    fn opposite_start_distance() {
        let s = PairedUrnState::opposite(3, 4).unwrap();
        let want = 24.0 / (PI / 6.0).sin();
        assert!((s.distance() - want).abs() < 1e-9);
        assert!(s.distance() <= 24.0 / (PI / 6.0).sin() + 1e-9);
        assert_eq!(s.matched(), 0);
    }

    #[test]
    fn pairing_is_a_bijection_within_urns() {
        let mut s = PairedUrnState::opposite(2, 5).unwrap();
        let mut rng = trial_rng(9, 0);
        for _ in 0..20 {
            let partner = s.pairing();
            let mut seen = vec![false; partner.len()];
            for (la, &lb) in partner.iter().enumerate() {
                assert_eq!(s.chain_a[la], s.chain_b[lb as usize]);
                assert!(!seen[lb as usize]);
                seen[lb as usize] = true;
            }
            s.step(2, &mut rng);
        }
    }

    #[test]
    fn matches_never_destroyed() {
        let mut s = PairedUrnState::opposite(3, 4).unwrap();
        let mut rng = trial_rng(21, 0);
        let mut last = 0;
        for _ in 0..400 {
            s.step(1, &mut rng);
            assert!(s.matched() >= last);
            last = s.matched();
        }
    }

    // The second chain's move from urn 0 after a few coupled steps must be a
    // uniform k-subset of that urn's balls.
    #[test]
    fn restriction_is_uniform_subset_move() {
        let (p, n, k) = (2u32, 4u32, 2u32);
        let subsets: Vec<Vec<usize>> = itertools::Itertools::combinations(0..n as usize, k as usize).collect();
        let counts = run_counts(20_000, 77, subsets.len(), |rng| {
            let mut s = PairedUrnState::opposite(p, n).unwrap();
            for _ in 0..3 {
                s.step(k, rng);
            }
            let before: Vec<u32> = (0..s.chain_b.len() as u32).filter(|&l| s.chain_b[l as usize] == 0).collect();
            let moved = s.step(k, rng);
            let pos: Vec<usize> = moved[0]
                .iter()
                .map(|l| before.iter().position(|b| b == l).unwrap())
                .collect();
            subsets.iter().position(|c| *c == pos).unwrap()
        });
        let probs = vec![1.0 / subsets.len() as f64; subsets.len()];
        let report = chi_square(&counts, &probs, 77, 5.0);
        assert!(report.passes(1e-3), "{report:?}");
    }

    #[test]
    fn urn_cycle_decay_rate() {
        let (p, n, k) = (2, 10, 3);
        let rec = simulate_urn_cycle_coupling(p, n, &KSpec::Fixed(k), 4, 20_000, 8).unwrap();
        let rho = urn_cycle_decay(n, k, p);
        for s in &rec.steps[1..] {
            let (r, se) = (s.ratio.unwrap(), s.ratio_stderr.unwrap());
            assert!((r - rho).abs() < 4.0 * se, "t = {}: {r} vs {rho} ({se})", s.t);
        }
    }

    #[test]
    fn mixture_decay_is_average() {
        let spec = KSpec::Mixture(vec![(1, 0.5), (2, 0.5)]);
        let avg = (urn_cycle_decay(8, 1, 2) + urn_cycle_decay(8, 2, 2)) / 2.0;
        assert!((urn_cycle_decay_spec(8, &spec, 2) - avg).abs() < 1e-15);
        let rec = simulate_urn_cycle_coupling(2, 8, &spec, 3, 20_000, 4).unwrap();
        for s in &rec.steps[1..] {
            let (r, se) = (s.ratio.unwrap(), s.ratio_stderr.unwrap());
            assert!((r - avg).abs() < 4.0 * se, "t = {}: {r} vs {avg}", s.t);
        }
    }

    #[test]
    fn urn_coupling_rejects_large_k() {
        assert!(simulate_urn_cycle_coupling(2, 4, &KSpec::Fixed(5), 3, 10, 1).is_err());
        assert!(simulate_urn_cycle_coupling(2, 4, &KSpec::Mixture(vec![]), 3, 10, 1).is_err());
    }

    #[test]
    fn theorem4a_forms() {
        let r = theorem4a_bound(26, 2, 13, 1.0).unwrap();
        assert!((r.details["simplified"] / r.value - 2.0 * 13.0 / 26.0).abs() < 1e-12);
        assert!(theorem4a_bound(26, 2, 14, 1.0).is_err());
        assert!(theorem4a_bound(26, 2, 13, 0.0).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let rec = simulate_cycle_pair(2, 2, 10, 1).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# seed=1"));
        assert_eq!(lines.next(), Some("# trials=10"));
        assert!(lines.next().unwrap().starts_with("t,mean,stderr,uncoupled_fraction"));
        assert_eq!(text.lines().count(), 6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn adjacent_matches_closed_form(n in 1u32..30, kf in 0.0f64..=1.0, seed in any::<u64>()) {
            let k = (n as f64 * kf).round() as u32;
            let r = adjacent_contraction(n, k, 4000, seed).unwrap();
            prop_assert!((r.mean - r.exact_value).abs() <= 4.0 * r.stderr + 1e-12);
        }

        #[test]
        fn simplified_over_sharp(n in 2u32..500, kf in 0.0f64..1.0, p in 1u32..20, c in 0.01f64..5.0) {
            let k = 1 + ((n / 2 - 1) as f64 * kf) as u32;
            let r = theorem4a_bound(n, p, k, c).unwrap();
            let ratio = r.details["simplified"] / r.value;
            prop_assert!((1.0..=2.0).contains(&ratio));
            prop_assert!((ratio - 2.0 * (n - k) as f64 / n as f64).abs() < 1e-9);
        }
    }
}
