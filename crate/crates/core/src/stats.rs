//! Monte Carlo plumbing: compensated sums, per-trial seeding, trace
//! accumulation and chi-square goodness of fit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Random number generator used by every simulation.
pub type SimRng = ChaCha8Rng;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Neumaier) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for trial `index` of a run seeded with `seed`; independent of scheduling.
pub fn trial_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn trial_rng(seed: u64, index: u64) -> SimRng {
    SimRng::seed_from_u64(trial_seed(seed, index))
}

/// Trials handled by one unit of parallel work. Fixed so reductions never
/// depend on the number of workers.
pub const CHUNK: u64 = 256;

/// One observation of a coupled pair at one step.
#[derive(Debug, Clone, Copy)]
pub struct Observation {
    /// Coupling distance (metric value).
    pub value: f64,
    pub uncoupled: bool,
    /// Graph distance, recorded when the caller tracks it.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, Default)]
struct StepSums {
    count: u64,
    sum: Neumaier,
    sum_sq: Neumaier,
    // products with the previous step's value, for ratio standard errors
    sum_cross: Neumaier,
    prev_sum: Neumaier,
    prev_sum_sq: Neumaier,
    uncoupled: u64,
    cond_sum: Neumaier,
    gap_sum: Neumaier,
    gap_count: u64,
}

impl StepSums {
    fn merge(&mut self, o: &StepSums) {
        self.count += o.count;
        self.sum.merge(&o.sum);
        self.sum_sq.merge(&o.sum_sq);
        self.sum_cross.merge(&o.sum_cross);
        self.prev_sum.merge(&o.prev_sum);
        self.prev_sum_sq.merge(&o.prev_sum_sq);
        self.uncoupled += o.uncoupled;
        self.cond_sum.merge(&o.cond_sum);
        self.gap_sum.merge(&o.gap_sum);
        self.gap_count += o.gap_count;
    }
}

/// Per-step summary of a Monte Carlo trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub mean: f64,
    pub stderr: f64,
    pub uncoupled_fraction: f64,
    /// `mean(t) / mean(t-1)`, absent at `t = 0` or when `mean(t-1) = 0`.
    pub ratio: Option<f64>,
    /// Delta-method standard error of `ratio`.
    pub ratio_stderr: Option<f64>,
    /// Mean distance over uncoupled trials.
    pub conditional_mean: Option<f64>,
    /// Mean graph distance over uncoupled trials, when tracked.
    pub conditional_gap: Option<f64>,
}

/// Accumulates observation paths of equal length.
#[derive(Debug, Clone)]
pub struct TraceAccumulator {
    steps: Vec<StepSums>,
}

impl TraceAccumulator {
    pub fn new(len: usize) -> Self {
        TraceAccumulator {
            steps: vec![StepSums::default(); len],
        }
    }

    pub fn push_path(&mut self, path: &[Observation]) {
        assert_eq!(path.len(), self.steps.len());
        for (t, obs) in path.iter().enumerate() {
            let s = &mut self.steps[t];
            s.count += 1;
            s.sum.add(obs.value);
            s.sum_sq.add(obs.value * obs.value);
            if t > 0 {
                let prev = path[t - 1].value;
                s.sum_cross.add(prev * obs.value);
                s.prev_sum.add(prev);
                s.prev_sum_sq.add(prev * prev);
            }
            if obs.uncoupled {
                s.uncoupled += 1;
                s.cond_sum.add(obs.value);
                if let Some(g) = obs.gap {
                    s.gap_sum.add(g);
                    s.gap_count += 1;
                }
            }
        }
    }

    pub fn merge(&mut self, other: &TraceAccumulator) {
        for (a, b) in self.steps.iter_mut().zip(&other.steps) {
            a.merge(b);
        }
    }

    pub fn finish(&self) -> Vec<TraceStep> {
        self.steps
            .iter()
            .enumerate()
            .map(|(t, s)| {
                let n = s.count as f64;
                let mean = s.sum.sum() / n;
                let var = if s.count > 1 {
                    ((s.sum_sq.sum() - n * mean * mean) / (n - 1.0)).max(0.0)
                } else {
                    0.0
                };
                let (ratio, ratio_stderr) = if t > 0 {
                    let px = s.prev_sum.sum() / n;
                    if px > 0.0 {
                        let r = mean / px;
                        let var_x = (s.prev_sum_sq.sum() / n - px * px).max(0.0);
                        let var_y = (s.sum_sq.sum() / n - mean * mean).max(0.0);
                        let cov = s.sum_cross.sum() / n - px * mean;
                        let v = (var_y - 2.0 * r * cov + r * r * var_x).max(0.0) / (n * px * px);
                        (Some(r), Some(v.sqrt()))
                    } else {
                        (None, None)
                    }
                } else {
                    (None, None)
                };
                TraceStep {
                    t,
                    mean,
                    stderr: (var / n).sqrt(),
                    uncoupled_fraction: s.uncoupled as f64 / n,
                    ratio,
                    ratio_stderr,
                    conditional_mean: (s.uncoupled > 0).then(|| s.cond_sum.sum() / s.uncoupled as f64),
                    conditional_gap: (s.gap_count > 0).then(|| s.gap_sum.sum() / s.gap_count as f64),
                }
            })
            .collect()
    }
}

/// Runs `trials` independent paths of `len` observations each and reduces
/// them in trial order, chunk by chunk.
pub fn run_paths<F>(trials: u64, seed: u64, len: usize, path: F) -> Vec<TraceStep>
where
    F: Fn(&mut SimRng) -> Vec<Observation> + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    let partials: Vec<TraceAccumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = TraceAccumulator::new(len);
            for idx in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                let mut rng = trial_rng(seed, idx);
                acc.push_path(&path(&mut rng));
            }
            acc
        })
        .collect();
    let mut total = TraceAccumulator::new(len);
    for p in &partials {
        total.merge(p);
    }
    total.finish()
}

/// Mean and standard error of a scalar statistic over independent trials.
pub fn run_scalar<F>(trials: u64, seed: u64, sample: F) -> (f64, f64)
where
    F: Fn(&mut SimRng) -> f64 + Sync,
{
    let steps = run_paths(trials, seed, 1, |rng| {
        vec![Observation {
            value: sample(rng),
            uncoupled: false,
            gap: None,
        }]
    });
    (steps[0].mean, steps[0].stderr)
}

/// Counts categorical outcomes of independent trials, in parallel.
pub fn run_counts<F>(trials: u64, seed: u64, bins: usize, sample: F) -> Vec<u64>
where
    F: Fn(&mut SimRng) -> usize + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    let partials: Vec<Vec<u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; bins];
            for idx in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                let mut rng = trial_rng(seed, idx);
                counts[sample(&mut rng)] += 1;
            }
            counts
        })
        .collect();
    let mut total = vec![0u64; bins];
    for p in partials {
        for (a, b) in total.iter_mut().zip(p) {
            *a += b;
        }
    }
    total
}

/// Pearson chi-square goodness-of-fit result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub trials: u64,
    pub seed: u64,
    /// Number of bins after pooling sparse cells.
    pub bins: usize,
    /// Observations landing where the reference puts zero mass.
    pub impossible: u64,
}

impl ChiSquareReport {
    pub fn passes(&self, significance: f64) -> bool {
        self.impossible == 0 && self.p_value >= significance
    }
}

/// Tests observed counts against reference probabilities. Cells with expected
/// count below `min_expected` are pooled into one cell.
pub fn chi_square(observed: &[u64], probs: &[f64], seed: u64, min_expected: f64) -> ChiSquareReport {
    assert_eq!(observed.len(), probs.len());
    let trials: u64 = observed.iter().sum();
    let total = trials as f64;
    let mut impossible = 0;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut pool_obs, mut pool_exp) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        if p <= 0.0 {
            impossible += o;
            continue;
        }
        let e = p * total;
        if e < min_expected {
            pool_obs += o as f64;
            pool_exp += e;
        } else {
            cells.push((o as f64, e));
        }
    }
    if pool_exp > 0.0 {
        cells.push((pool_obs, pool_exp));
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).unwrap().sf(statistic)
    };
    ChiSquareReport {
        statistic,
        dof,
        p_value,
        trials,
        seed,
        bins: cells.len(),
        impossible,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn compensated_sum() {
        let mut acc = Neumaier::default();
        for x in [1e16, 1.0, -1e16] {
            acc.add(x);
        }
        assert_eq!(acc.sum(), 1.0);
    }

    #[test]
    fn seeds_differ_per_trial() {
        assert_ne!(trial_seed(1, 0), trial_seed(1, 1));
        assert_ne!(trial_seed(1, 0), trial_seed(2, 0));
        assert_eq!(trial_seed(9, 4), trial_seed(9, 4));
    }

    #[test]
    fn paths_independent_of_thread_count() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    run_paths(3000, 11, 3, |rng| {
                        (0..3)
                            .map(|_| Observation {
                                value: rng.gen::<f64>(),
                                uncoupled: rng.gen_bool(0.5),
                                gap: Some(1.0),
                            })
                            .collect()
                    })
                })
        };
        assert_eq!(run(1), run(5));
    }

    #[test]
    fn ratio_of_deterministic_start() {
        let steps = run_paths(10_000, 3, 2, |rng| {
            vec![
                Observation { value: 2.0, uncoupled: true, gap: None },
                Observation { value: if rng.gen_bool(0.5) { 2.0 } else { 0.0 }, uncoupled: true, gap: None },
            ]
        });
        let r = steps[1].ratio.unwrap();
        let se = steps[1].ratio_stderr.unwrap();
        assert!((r - 0.5).abs() < 4.0 * se);
        assert!((se - 0.005).abs() < 1e-3);
    }

    #[test]
    fn chi_square_fair_die() {
        let counts = run_counts(60_000, 5, 6, |rng| rng.gen_range(0..6));
        let rep = chi_square(&counts, &[1.0 / 6.0; 6], 5, 5.0);
        assert_eq!(rep.dof, 5);
        assert!(rep.passes(1e-3));
        let skewed = chi_square(&counts, &[0.5, 0.1, 0.1, 0.1, 0.1, 0.1], 5, 5.0);
        assert!(!skewed.passes(1e-3));
    }
}
