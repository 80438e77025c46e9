//! Jump-chain simulation of the collision spectrum, the extended
//! (primary/secondary block) coalescent, and the first-passage random-walk
//! oracle, plus the exact first-moment dynamic program used as a
//! brute-force reference for Monte Carlo output.
//!
//! The spectrum is a functional of the embedded jump chain alone, so
//! holding times are not simulated except on the opt-in trace path.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use rayon::prelude::*;

use crate::error::CoalError;
use crate::kernel::{rate_lambda_m1, rate_lambda_mk, total_rate, SimKernel};
use crate::limits::{p_k_a, p_k_a_ratio};
use crate::measure::CoalescentMeasure;

/// RNG for replicate `index` of a run: one ChaCha stream per replicate,
/// so results are bitwise reproducible regardless of worker scheduling.
pub fn replicate_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Run `count` replicates in parallel, ordered by replicate index.
pub fn map_replicates<T, F>(
    count: u64,
    master_seed: u64,
    workers: Option<usize>,
    f: F,
) -> Result<Vec<T>, CoalError>
where
    T: Send,
    F: Fn(u64, &mut ChaCha8Rng) -> Result<T, CoalError> + Sync,
{
    let run = |r: u64| {
        let mut rng = replicate_rng(master_seed, r);
        f(r, &mut rng).map_err(|e| CoalError::Replicate {
            index: r,
            source: Box::new(e),
        })
    };
    match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| CoalError::domain(e.to_string()))?
            .install(|| (0..count).into_par_iter().map(run).collect()),
        None => (0..count).into_par_iter().map(run).collect(),
    }
}

// Spectrum accumulator: flat counts for small merge sizes, map spill for
// the rest. Keeps the hot loop at array-increment cost.
struct SpectrumAcc {
    small: [u64; 65],
    large: BTreeMap<u64, u64>,
    total: u64,
    last: u64,
}

impl SpectrumAcc {
    fn new() -> Self {
        SpectrumAcc {
            small: [0; 65],
            large: BTreeMap::new(),
            total: 0,
            last: 0,
        }
    }
    #[inline]
    fn bump(&mut self, size: u64) {
        if size <= 64 {
            self.small[size as usize] += 1;
        } else {
            *self.large.entry(size).or_insert(0) += 1;
        }
        self.total += 1;
        self.last = size;
    }
    fn into_map(self) -> BTreeMap<u64, u64> {
        let mut map = self.large;
        for (k, &c) in self.small.iter().enumerate() {
            if c > 0 {
                map.insert(k as u64, c);
            }
        }
        map
    }
}

/// The collision spectrum of one simulated coalescent path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpectrumRecord {
    pub n: u64,
    /// Replicate stream index (combined with the run's master seed this
    /// reproduces the record exactly).
    pub replicate: u64,
    /// k ↦ X_{n,k}: sorted merge sizes with multiplicities.
    pub spectrum: BTreeMap<u64, u64>,
    /// X_n, the total number of collisions.
    pub total: u64,
    /// Size of the final merger (the last-collision diagnostic L_n).
    pub last_merge: Option<u64>,
}

impl SpectrumRecord {
    /// X_{n,k}.
    pub fn count(&self, k: u64) -> u64 {
        self.spectrum.get(&k).copied().unwrap_or(0)
    }

    /// X_n(s) = Σ_{k=2}^{⌊n^s⌋} X_{n,k}.
    pub fn cumulative(&self, s: f64) -> u64 {
        let cut = floor_pow(self.n, s);
        if cut < 2 {
            return 0;
        }
        self.spectrum.range(2..=cut).map(|(_, c)| *c).sum()
    }
}

/// ⌊n^s⌋ with the exact endpoints pinned.
pub(crate) fn floor_pow(n: u64, s: f64) -> u64 {
    if s <= 0.0 {
        1
    } else if s >= 1.0 {
        n
    } else {
        (n as f64).powf(s).floor() as u64
    }
}

/// One trace event of the embedded chain (CLI export format).
#[derive(Debug, Clone, serde::Serialize)]
pub struct TraceEvent {
    pub m: u64,
    pub merge: u64,
    pub primary_hit: Option<u64>,
    pub holding_time: Option<f64>,
}

/// Simulate the collision spectrum from `n` blocks down to absorption.
pub fn simulate_spectrum<R: Rng + ?Sized>(
    kernel: &SimKernel,
    n: u64,
    rng: &mut R,
) -> SpectrumRecord {
    let mut acc = SpectrumAcc::new();
    let mut m = n;
    while m > 1 {
        let i = kernel.sample_decrement(m, rng);
        acc.bump(i + 1);
        m -= i;
    }
    let total = acc.total;
    let last = acc.last;
    SpectrumRecord {
        n,
        replicate: 0,
        total,
        last_merge: if total > 0 { Some(last) } else { None },
        spectrum: acc.into_map(),
    }
}

/// Spectrum simulation with per-event tracing; `record_holding` samples
/// the exponential holding time at rate λ_m in each visited state.
pub fn simulate_spectrum_traced<R: Rng + ?Sized>(
    kernel: &SimKernel,
    n: u64,
    rng: &mut R,
    record_holding: bool,
    mut sink: impl FnMut(TraceEvent),
) -> Result<SpectrumRecord, CoalError> {
    let mut acc = SpectrumAcc::new();
    let mut m = n;
    while m > 1 {
        let holding_time = if record_holding {
            let lam = kernel.lambda_m(m)?;
            let exp = rand_distr::Exp::new(lam).map_err(|e| CoalError::domain(e.to_string()))?;
            Some(exp.sample(rng))
        } else {
            None
        };
        let i = kernel.sample_decrement(m, rng);
        sink(TraceEvent {
            m,
            merge: i + 1,
            primary_hit: None,
            holding_time,
        });
        acc.bump(i + 1);
        m -= i;
    }
    let total = acc.total;
    let last = acc.last;
    Ok(SpectrumRecord {
        n,
        replicate: 0,
        total,
        last_merge: if total > 0 { Some(last) } else { None },
        spectrum: acc.into_map(),
    })
}

/// X_n(s) on a grid of thresholds.
pub fn cumulative_counts(record: &SpectrumRecord, s_grid: &[f64]) -> Vec<u64> {
    s_grid.iter().map(|&s| record.cumulative(s)).collect()
}

/// One path of the extended coalescent: primary blocks (the original
/// singletons) transform into secondary at rate λ_{m,1} each, and every
/// collision is marked with the number of primary blocks it swallowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendedRecord {
    pub n: u64,
    pub replicate: u64,
    /// k ↦ K_{n,k}: decrements of the primary-block count N*_n; the k = 1
    /// entry includes primary-to-secondary transformations.
    pub k_counts: BTreeMap<u64, u64>,
    /// Collisions that removed exactly one primary block (K_{n,1} without
    /// the transformations).
    pub k1_collision_only: u64,
    /// The simultaneous collision spectrum X_{n,k}.
    pub x_spectrum: BTreeMap<u64, u64>,
    /// Z_n: secondary blocks created (one per collision, one per
    /// transformation).
    pub z_secondary: u64,
    pub transform_count: u64,
    /// Per-collision (merger size, primary participants), in event order.
    pub collisions: Vec<(u64, u64)>,
}

impl ExtendedRecord {
    pub fn x_total(&self) -> u64 {
        self.collisions.len() as u64
    }

    /// X_n(s).
    pub fn x_cumulative(&self, s: f64) -> u64 {
        let cut = floor_pow(self.n, s);
        self.collisions.iter().filter(|(c, _)| *c >= 2 && *c <= cut).count() as u64
    }

    /// X*_n(s): collisions of size between 2 and ⌊n^s⌋ with at least two
    /// primary participants.
    pub fn x_star(&self, s: f64) -> u64 {
        let cut = floor_pow(self.n, s);
        self.collisions
            .iter()
            .filter(|(c, h)| *c >= 2 && *c <= cut && *h >= 2)
            .count() as u64
    }

    /// D_n(s): collisions of size at most ⌊n^s⌋ with at most one primary
    /// participant.
    pub fn d_n(&self, s: f64) -> u64 {
        let cut = floor_pow(self.n, s);
        self.collisions
            .iter()
            .filter(|(c, h)| *c <= cut && *h <= 1)
            .count() as u64
    }

    /// D_n = X_n(1) − X*_n(1).
    pub fn d_remainder(&self) -> u64 {
        self.d_n(1.0)
    }

    /// K_{n,k}.
    pub fn k_count(&self, k: u64) -> u64 {
        self.k_counts.get(&k).copied().unwrap_or(0)
    }
}

/// Simulate the extended coalescent. Requires dust (λ_{m,1} < ∞).
pub fn simulate_extended<R: Rng + ?Sized>(
    kernel: &SimKernel,
    n: u64,
    rng: &mut R,
) -> Result<ExtendedRecord, CoalError> {
    if !kernel.measure.has_dust() {
        return Err(CoalError::DustRequired);
    }
    let mut rec = ExtendedRecord {
        n,
        replicate: 0,
        k_counts: BTreeMap::new(),
        k1_collision_only: 0,
        x_spectrum: BTreeMap::new(),
        z_secondary: 0,
        transform_count: 0,
        collisions: Vec::new(),
    };
    let mut m = n;
    let mut primary = n;
    if n == 1 {
        // No collision can happen; the lone primary block transforms.
        rec.k_counts.insert(1, 1);
        rec.z_secondary = 1;
        rec.transform_count = 1;
        return Ok(rec);
    }
    while m > 1 {
        let lam_coll = kernel.lambda_m(m)?;
        let lam_transform = if primary > 0 {
            primary as f64 * rate_lambda_m1(&kernel.measure, m)?
        } else {
            0.0
        };
        let u: f64 = rng.random();
        if u * (lam_coll + lam_transform) < lam_transform {
            // One primary block turns secondary; the block count is
            // unchanged.
            primary -= 1;
            *rec.k_counts.entry(1).or_insert(0) += 1;
            rec.transform_count += 1;
            rec.z_secondary += 1;
        } else {
            let i = kernel.sample_decrement(m, rng);
            let size = i + 1;
            // Participants are an exchangeable size-`size` subset of the m
            // blocks, so the primary count among them is hypergeometric.
            let hits = if primary == 0 {
                0
            } else if primary == m {
                size
            } else {
                rand_distr::Hypergeometric::new(m, primary, size)
                    .map_err(|e| CoalError::domain(e.to_string()))?
                    .sample(rng)
            };
            *rec.x_spectrum.entry(size).or_insert(0) += 1;
            if hits >= 1 {
                *rec.k_counts.entry(hits).or_insert(0) += 1;
                if hits == 1 {
                    rec.k1_collision_only += 1;
                }
            }
            rec.collisions.push((size, hits));
            rec.z_secondary += 1;
            m -= i;
            primary -= hits;
        }
    }
    Ok(rec)
}

/// A scripted event for replaying a fixed extended-coalescent trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayEvent {
    /// A collision of `size` blocks, `primaries` of them primary.
    Collide { size: u64, primaries: u64 },
    /// One primary block transforms into secondary.
    Transform,
}

/// Deterministic replay of an extended-coalescent event list, used to
/// check bookkeeping against hand-computed traces.
pub fn replay_extended(n: u64, events: &[ReplayEvent]) -> Result<ExtendedRecord, CoalError> {
    let mut rec = ExtendedRecord {
        n,
        replicate: 0,
        k_counts: BTreeMap::new(),
        k1_collision_only: 0,
        x_spectrum: BTreeMap::new(),
        z_secondary: 0,
        transform_count: 0,
        collisions: Vec::new(),
    };
    let mut m = n;
    let mut primary = n;
    for (i, ev) in events.iter().enumerate() {
        match *ev {
            ReplayEvent::Transform => {
                if primary == 0 {
                    return Err(CoalError::domain(format!(
                        "event {i}: transform with no primary blocks left"
                    )));
                }
                primary -= 1;
                *rec.k_counts.entry(1).or_insert(0) += 1;
                rec.transform_count += 1;
                rec.z_secondary += 1;
            }
            ReplayEvent::Collide { size, primaries } => {
                if size < 2 || size > m || primaries > primary.min(size) {
                    return Err(CoalError::domain(format!(
                        "event {i}: collision of {size} blocks ({primaries} primary) \
                         impossible at state m={m}, primary={primary}"
                    )));
                }
                if size - primaries > m - primary {
                    return Err(CoalError::domain(format!(
                        "event {i}: not enough secondary blocks for the collision"
                    )));
                }
                *rec.x_spectrum.entry(size).or_insert(0) += 1;
                if primaries >= 1 {
                    *rec.k_counts.entry(primaries).or_insert(0) += 1;
                    if primaries == 1 {
                        rec.k1_collision_only += 1;
                    }
                }
                rec.collisions.push((size, primaries));
                rec.z_secondary += 1;
                m -= size - 1;
                primary -= primaries;
            }
        }
    }
    Ok(rec)
}

/// Jump counts of the first-passage random walk with step law p^{(a)}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleRecord {
    pub n: u64,
    pub replicate: u64,
    /// k ↦ J_{n,k}: jumps of size k up to the first-passage time.
    pub jump_counts: BTreeMap<u64, u64>,
    /// T_n = inf{j : S_j ≥ n}.
    pub t_n: u64,
    /// S_{T_n}, the level reached at first passage.
    pub s_final: u64,
}

impl OracleRecord {
    pub fn count(&self, k: u64) -> u64 {
        self.jump_counts.get(&k).copied().unwrap_or(0)
    }
}

/// Cached inversion table for the step law p^{(a)}, with lazy tail
/// extension by the closed ratio (k+a−1)/(k+2).
pub struct OracleStepper {
    a: f64,
    cum: Vec<f64>,
    last_p: f64,
}

impl OracleStepper {
    pub fn new(a: f64) -> Self {
        assert!(a > 0.0 && a <= 1.0);
        let mut cum = Vec::with_capacity(64);
        let mut p = p_k_a(a, 1);
        let mut acc = 0.0;
        for k in 1..=64u64 {
            acc += p;
            cum.push(acc);
            p *= p_k_a_ratio(a, k);
        }
        OracleStepper { a, cum, last_p: p }
    }

    /// Exact draw of ξ ~ p^{(a)} by inversion.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        for (i, c) in self.cum.iter().enumerate() {
            if u < *c {
                return i as u64 + 1;
            }
        }
        let mut k = self.cum.len() as u64;
        let mut cum = *self.cum.last().unwrap();
        let mut p = self.last_p;
        // The tail is a polynomial decay; the walk terminates quickly in
        // probability, with a deterministic escape far beyond any support
        // the f64 cdf can resolve.
        loop {
            cum += p;
            k += 1;
            if u < cum || 1.0 - cum < 1e-15 {
                return k;
            }
            p *= p_k_a_ratio(self.a, k);
        }
    }
}

/// Run the random walk to first passage over level `n`, recording jump
/// counts.
pub fn simulate_oracle<R: Rng + ?Sized>(stepper: &OracleStepper, n: u64, rng: &mut R) -> OracleRecord {
    let mut s = 0u64;
    let mut t = 0u64;
    let mut acc = SpectrumAcc::new();
    while s < n {
        let xi = stepper.draw(rng);
        acc.bump(xi);
        s += xi;
        t += 1;
    }
    OracleRecord {
        n,
        replicate: 0,
        jump_counts: acc.into_map(),
        t_n: t,
        s_final: s,
    }
}

/// Which process a replicate run simulates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimMode {
    Spectrum,
    Extended,
    /// The §-style random-walk oracle with step law p^{(a)}.
    Oracle { a: f64 },
}

/// One replicate record, tagged by mode.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplicateRecord {
    Spectrum(SpectrumRecord),
    Extended(ExtendedRecord),
    Oracle(OracleRecord),
}

/// Run `count` replicates of the chosen simulation. Replicate `r` uses
/// the ChaCha stream `r` of `master_seed`; output is ordered by replicate
/// index and bitwise reproducible for a fixed configuration regardless of
/// the worker count.
pub fn run_replicates(
    measure: &CoalescentMeasure,
    n: u64,
    count: u64,
    master_seed: u64,
    mode: SimMode,
    workers: Option<usize>,
) -> Result<Vec<ReplicateRecord>, CoalError> {
    if count < 1 {
        return Err(CoalError::domain("run_replicates requires count >= 1"));
    }
    match mode {
        SimMode::Spectrum => {
            let kernel = SimKernel::build(measure, n)?;
            map_replicates(count, master_seed, workers, |r, rng| {
                let mut rec = simulate_spectrum(&kernel, n, rng);
                rec.replicate = r;
                Ok(ReplicateRecord::Spectrum(rec))
            })
        }
        SimMode::Extended => {
            if !measure.has_dust() {
                return Err(CoalError::DustRequired);
            }
            let kernel = SimKernel::build(measure, n)?;
            map_replicates(count, master_seed, workers, |r, rng| {
                let mut rec = simulate_extended(&kernel, n, rng)?;
                rec.replicate = r;
                Ok(ReplicateRecord::Extended(rec))
            })
        }
        SimMode::Oracle { a } => {
            if !(a > 0.0 && a <= 1.0) {
                return Err(CoalError::domain("oracle mode requires a in (0, 1]"));
            }
            let stepper = OracleStepper::new(a);
            map_replicates(count, master_seed, workers, |r, rng| {
                let mut rec = simulate_oracle(&stepper, n, rng);
                rec.replicate = r;
                Ok(ReplicateRecord::Oracle(rec))
            })
        }
    }
}

// Merge-size pmf row p_{m,·} for the dynamic programs: the beta family
// walks the closed-form ratio; anything else computes each weight.
fn pmf_row(measure: &CoalescentMeasure, m: u64, lambda_m: f64) -> Result<Vec<f64>, CoalError> {
    let len = (m - 1) as usize;
    let mut row = vec![0.0; len];
    match measure {
        CoalescentMeasure::PointMassAtZero => row[0] = 1.0,
        CoalescentMeasure::PointMassAtOne => row[len - 1] = 1.0,
        CoalescentMeasure::Beta { a, b } => {
            let mf = m as f64;
            let mut w = 0.5 * mf * (mf - 1.0) * rate_lambda_mk(measure, m, 2)?;
            for (idx, slot) in row.iter_mut().enumerate() {
                let k = idx as f64 + 1.0;
                *slot = w / lambda_m;
                w *= (mf - k - 1.0) * (k + a - 1.0) / ((k + 2.0) * (mf - k - 2.0 + b));
            }
        }
        _ => {
            for (idx, slot) in row.iter_mut().enumerate() {
                let k = idx as u64 + 1;
                *slot = crate::kernel::merge_size_pmf(measure, m, k)?;
            }
        }
    }
    Ok(row)
}

/// Exact E X_{n,k} for all n ≤ n_max via the first-moment recursion
/// E X_{n,k} = p_{n,k−1} + Σ_{i=1}^{n−k} p_{n,i} E X_{n−i,k}
/// (decomposition at the first collision). O(n²); the Monte Carlo
/// brute-force reference.
pub fn exact_moment_dp(
    measure: &CoalescentMeasure,
    n_max: u64,
    k: u64,
) -> Result<Vec<f64>, CoalError> {
    if k < 2 || n_max < k {
        return Err(CoalError::domain("exact_moment_dp requires 2 <= k <= n_max"));
    }
    if n_max > 20_000 {
        return Err(CoalError::domain("exact_moment_dp is O(n^2); n_max capped at 2e4"));
    }
    let mut ex = vec![0.0; n_max as usize + 1];
    for n in k..=n_max {
        let lam = total_rate(measure, n)?;
        let row = pmf_row(measure, n, lam)?;
        let mut v = row[(k - 2) as usize];
        for i in 1..=(n - k) {
            let p = row[(i - 1) as usize];
            if p > 0.0 {
                v += p * ex[(n - i) as usize];
            }
        }
        ex[n as usize] = v;
    }
    Ok(ex)
}

/// Exact E X_n (total collisions) for all n ≤ n_max:
/// E X_n = 1 + Σ_i p_{n,i} E X_{n−i}.
pub fn exact_total_moment_dp(
    measure: &CoalescentMeasure,
    n_max: u64,
) -> Result<Vec<f64>, CoalError> {
    if n_max < 2 {
        return Err(CoalError::domain("exact_total_moment_dp requires n_max >= 2"));
    }
    if n_max > 20_000 {
        return Err(CoalError::domain("exact_total_moment_dp is O(n^2); n_max capped at 2e4"));
    }
    let mut ex = vec![0.0; n_max as usize + 1];
    for n in 2..=n_max {
        let lam = total_rate(measure, n)?;
        let row = pmf_row(measure, n, lam)?;
        let mut v = 1.0;
        for i in 1..n {
            let p = row[(i - 1) as usize];
            if p > 0.0 {
                v += p * ex[(n - i) as usize];
            }
        }
        ex[n as usize] = v;
    }
    Ok(ex)
}
