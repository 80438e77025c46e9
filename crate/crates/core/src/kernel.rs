//! Transition quantities of the block-counting jump chain.
//!
//! With `m` blocks, any `k` of them merge at rate
//! `λ_{m,k} = ∫ x^{k−2}(1−x)^{m−k} Λ(dx)`; the chain decrements by `k` at
//! total rate `C(m,k+1)·λ_{m,k+1}`, the total collision rate is
//! `λ_m = Σ_k C(m,k)λ_{m,k}`, and the merge-size law is
//! `p_{m,k} = C(m,k+1)λ_{m,k+1}/λ_m`.
//!
//! Everything is computed in log space through log-gamma; beta families
//! get closed forms, point masses are special-cased, and other measures go
//! through quadrature. Merge sizes are sampled exactly: by inversion
//! against a lazily extended cumulative prefix, or (for simple measures at
//! large `m`) by the paintbox representation — draw `x ~ x^{-2}Λ(dx)/m_{-2}`,
//! then a Binomial(m, x) participant count conditioned on being at least 2.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use rand::Rng;
use rand_distr::Distribution;

use crate::error::CoalError;
use crate::measure::{CoalescentMeasure, Singularity, WLaw};
use crate::special::{ln_beta, ln_gamma};

/// log C(m, k).
fn ln_choose(m: u64, k: u64) -> f64 {
    if k > m {
        return f64::NEG_INFINITY;
    }
    ln_gamma(m as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((m - k) as f64 + 1.0)
}

/// Collision rate λ_{m,k} for 2 ≤ k ≤ m.
pub fn rate_lambda_mk(measure: &CoalescentMeasure, m: u64, k: u64) -> Result<f64, CoalError> {
    if m < 2 || k < 2 || k > m {
        return Err(CoalError::domain(format!(
            "rate_lambda_mk requires 2 <= k <= m; got m={m}, k={k}"
        )));
    }
    match measure {
        CoalescentMeasure::PointMassAtZero => Ok(if k == 2 { 1.0 } else { 0.0 }),
        CoalescentMeasure::PointMassAtOne => Ok(if k == m { 1.0 } else { 0.0 }),
        CoalescentMeasure::Beta { a, b } => {
            Ok((ln_beta(k as f64 + a - 2.0, (m - k) as f64 + b) - ln_beta(*a, *b)).exp())
        }
        _ => rate_lambda_mk_quadrature(measure, m, k),
    }
}

/// λ_{m,k} by quadrature (or atom sums), the independent route used to
/// cross-check the closed forms.
pub fn rate_lambda_mk_quadrature(
    measure: &CoalescentMeasure,
    m: u64,
    k: u64,
) -> Result<f64, CoalError> {
    if m < 2 || k < 2 || k > m {
        return Err(CoalError::domain(format!(
            "rate_lambda_mk requires 2 <= k <= m; got m={m}, k={k}"
        )));
    }
    let kp = k as f64 - 2.0;
    let mp = (m - k) as f64;
    measure.integrate2(|x, xc| x.powf(kp) * xc.powf(mp), Singularity::new(kp, mp))
}

/// λ_{m,1} = ∫ x^{-1}(1−x)^{m−1} Λ(dx): the primary-to-secondary
/// transformation rate of the extended coalescent. Finite exactly when
/// the coalescent has dust.
pub fn rate_lambda_m1(measure: &CoalescentMeasure, m: u64) -> Result<f64, CoalError> {
    if m < 1 {
        return Err(CoalError::domain("rate_lambda_m1 requires m >= 1"));
    }
    if !measure.has_dust() {
        return Err(CoalError::DustRequired);
    }
    match measure {
        CoalescentMeasure::PointMassAtOne => Ok(if m == 1 { 1.0 } else { 0.0 }),
        CoalescentMeasure::Beta { a, b } => {
            Ok((ln_beta(a - 1.0, (m - 1) as f64 + b) - ln_beta(*a, *b)).exp())
        }
        _ => {
            let mp = (m - 1) as f64;
            measure.integrate2(|x, xc| xc.powf(mp) / x, Singularity::new(-1.0, mp))
        }
    }
}

/// Total collision rate λ_m = Σ_{k=2}^m C(m,k) λ_{m,k}, via the
/// consistency recursion λ_{j+1} = λ_j + j·λ_{j+1,2} for beta families
/// and the direct integral otherwise.
pub fn total_rate(measure: &CoalescentMeasure, m: u64) -> Result<f64, CoalError> {
    if m < 2 {
        return Err(CoalError::domain("total_rate requires m >= 2"));
    }
    match measure {
        CoalescentMeasure::PointMassAtZero => Ok(0.5 * (m as f64) * (m as f64 - 1.0)),
        CoalescentMeasure::PointMassAtOne => Ok(1.0),
        CoalescentMeasure::Beta { a, b } => {
            let mut lam = 1.0; // λ_2 = λ_{2,2} = Λ([0,1]) = 1
            for j in 2..m {
                lam += j as f64 * (ln_beta(*a, (j - 1) as f64 + b) - ln_beta(*a, *b)).exp();
            }
            Ok(lam)
        }
        _ => total_rate_integral(measure, m),
    }
}

/// λ_m by its integral form ∫ x^{-2}(1 − mx(1−x)^{m−1} − (1−x)^m) Λ(dx).
pub fn total_rate_integral(measure: &CoalescentMeasure, m: u64) -> Result<f64, CoalError> {
    if m < 2 {
        return Err(CoalError::domain("total_rate requires m >= 2"));
    }
    let mf = m as f64;
    measure.integrate2(
        |x, xc| prob_two_or_more(mf, x, xc) / (x * x),
        Singularity::new(0.0, 0.0),
    )
}

// P{Bin(m, x) >= 2} = 1 − (1−x)^m − mx(1−x)^{m−1}, evaluated without the
// catastrophic cancellation the direct form has for mx << 1 (where the
// value is ~ C(m,2)x²): a few terms of Σ_{j>=2} C(m,j) (x/(1−x))^j times
// (1−x)^m suffice there.
fn prob_two_or_more(m: f64, x: f64, xc: f64) -> f64 {
    let l = if x < 0.5 { (-x).ln_1p() } else { xc.ln() };
    if m * x < 0.5 {
        let y = x / xc;
        let mut term = 0.5 * m * (m - 1.0) * y * y;
        let mut sum = term;
        let mut j = 2.0;
        while term > sum * 1e-18 && j < m {
            term *= (m - j) * y / (j + 1.0);
            sum += term;
            j += 1.0;
        }
        sum * (m * l).exp()
    } else {
        (1.0 - ((m - 1.0) * l).exp() * (xc + m * x)).max(0.0)
    }
}

/// Merge-size pmf p_{m,k} = C(m,k+1) λ_{m,k+1} / λ_m for 1 ≤ k ≤ m−1.
pub fn merge_size_pmf(measure: &CoalescentMeasure, m: u64, k: u64) -> Result<f64, CoalError> {
    if k < 1 || k >= m {
        return Err(CoalError::domain(format!(
            "merge_size_pmf requires 1 <= k <= m-1; got m={m}, k={k}"
        )));
    }
    match measure {
        CoalescentMeasure::PointMassAtZero => Ok(if k == 1 { 1.0 } else { 0.0 }),
        CoalescentMeasure::PointMassAtOne => Ok(if k == m - 1 { 1.0 } else { 0.0 }),
        _ => {
            let w = ln_choose(m, k + 1).exp() * rate_lambda_mk(measure, m, k + 1)?;
            Ok(w / total_rate(measure, m)?)
        }
    }
}

/// p_{m,k+1}/p_{m,k}: closed-form gamma ratio for beta families, a
/// quadrature quotient otherwise; `DivisionUnderflow` when p_{m,k}
/// underflows so the caller can fall back to direct log-space pmf.
pub fn pmf_ratio(measure: &CoalescentMeasure, m: u64, k: u64) -> Result<f64, CoalError> {
    if k < 1 || k + 1 >= m {
        return Err(CoalError::domain(format!(
            "pmf_ratio requires 1 <= k <= m-2; got m={m}, k={k}"
        )));
    }
    match measure {
        CoalescentMeasure::PointMassAtZero => Ok(0.0),
        CoalescentMeasure::PointMassAtOne => {
            // All mass sits at k = m−1; ratios below it are 0 except the
            // final step up, which is a 1/0 jump.
            Ok(if k + 1 == m - 1 { f64::INFINITY } else { 0.0 })
        }
        CoalescentMeasure::Beta { a, b } => Ok(beta_weight_ratio(*a, *b, m as f64, k as f64)),
        _ => {
            let wk = ln_choose(m, k + 1).exp() * rate_lambda_mk(measure, m, k + 1)?;
            if wk == 0.0 || wk.is_subnormal() {
                return Err(CoalError::DivisionUnderflow { k });
            }
            let wk1 = ln_choose(m, k + 2).exp() * rate_lambda_mk(measure, m, k + 2)?;
            Ok(wk1 / wk)
        }
    }
}

// w_{m,k+1}/w_{m,k} where w_{m,k} = C(m,k+1)λ_{m,k+1}, for the beta family.
#[inline]
fn beta_weight_ratio(a: f64, b: f64, m: f64, k: f64) -> f64 {
    (m - k - 1.0) * (k + a - 1.0) / ((k + 2.0) * (m - k - 2.0 + b))
}

/// Merge size drawn from p_{m,·}: `i_n` is the number of blocks removed by
/// the collision (merger size minus one).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeSizeSample {
    pub i_n: u64,
}

// ---------------------------------------------------------------------------
// Lazily extended per-m rate table (the API-level structure; the simulation
// hot path uses the flat kernel below).
// ---------------------------------------------------------------------------

/// Tail-truncation target for stored prefixes.
pub const DEFAULT_TRUNCATION_EPS: f64 = 1e-12;

/// Hard cap on stored prefix length; draws beyond it extend transiently.
const PREFIX_CAP: usize = 4096;

#[derive(Debug, Clone)]
struct Prefix {
    /// log λ_{m,k+1} for k = 1..=len (the computed rate entries).
    log_rates: Vec<f64>,
    /// Cumulative p_{m,1..=len}.
    cum: Vec<f64>,
    /// Last unnormalized weight, seed for ratio extension.
    last_w: f64,
}

/// Per-m merge-size table: total rate plus a lazily extended cumulative
/// prefix of the pmf. Extension publishes a fresh snapshot; readers see
/// either the old or the new prefix, never a partial one.
pub struct RateTable {
    pub m: u64,
    pub total_rate: f64,
    pub truncation_eps: f64,
    measure: CoalescentMeasure,
    prefix: RwLock<Arc<Prefix>>,
}

impl RateTable {
    /// Build the table for state `m`, with the stored prefix truncated at
    /// tail mass `DEFAULT_TRUNCATION_EPS` (or the storage cap).
    pub fn build(measure: &CoalescentMeasure, m: u64) -> Result<Self, CoalError> {
        if m < 2 {
            return Err(CoalError::domain("rate tables require m >= 2"));
        }
        let total = total_rate(measure, m)?;
        let mut prefix = Prefix {
            log_rates: Vec::new(),
            cum: Vec::new(),
            last_w: 0.0,
        };
        extend_prefix(measure, m, total, &mut prefix, 32.min(m as usize - 1))?;
        Ok(RateTable {
            m,
            total_rate: total,
            truncation_eps: DEFAULT_TRUNCATION_EPS,
            measure: measure.clone(),
            prefix: RwLock::new(Arc::new(prefix)),
        })
    }

    /// Residual probability mass beyond the stored prefix.
    pub fn tail_mass(&self) -> f64 {
        let p = self.prefix.read().unwrap();
        (1.0 - p.cum.last().copied().unwrap_or(0.0)).max(0.0)
    }

    /// Stored prefix length.
    pub fn prefix_len(&self) -> usize {
        self.prefix.read().unwrap().cum.len()
    }

    /// p_{m,k} from the table, extending the prefix if needed.
    pub fn pmf(&self, k: u64) -> Result<f64, CoalError> {
        if k < 1 || k >= self.m {
            return Err(CoalError::domain(format!(
                "pmf index k={k} outside 1..{}",
                self.m
            )));
        }
        let snap = self.ensure_len(k as usize)?;
        let i = k as usize - 1;
        Ok(if i == 0 {
            snap.cum[0]
        } else {
            snap.cum[i] - snap.cum[i - 1]
        })
    }

    /// log λ_{m,k} for 2 ≤ k within the prefix range.
    pub fn log_rate(&self, k: u64) -> Result<f64, CoalError> {
        if !(2..=self.m).contains(&k) {
            return Err(CoalError::domain(format!(
                "log_rate index k={k} outside 2..={}",
                self.m
            )));
        }
        let snap = self.ensure_len((k - 1) as usize)?;
        Ok(snap.log_rates[(k - 2) as usize])
    }

    fn snapshot(&self) -> Arc<Prefix> {
        self.prefix.read().unwrap().clone()
    }

    // Grow the published prefix to at least `len` entries (capped), and
    // return a snapshot that covers it when within the cap.
    fn ensure_len(&self, len: usize) -> Result<Arc<Prefix>, CoalError> {
        let want = len.min(self.m as usize - 1).min(PREFIX_CAP);
        {
            let snap = self.snapshot();
            if snap.cum.len() >= want {
                return Ok(snap);
            }
        }
        let mut guard = self.prefix.write().unwrap();
        if guard.cum.len() < want {
            let mut grown = (**guard).clone();
            extend_prefix(&self.measure, self.m, self.total_rate, &mut grown, want)?;
            *guard = Arc::new(grown);
        }
        Ok(guard.clone())
    }
}

// Extend `prefix` with exact weights up to length `target` (bounded by the
// storage cap; transient walks go further without storing).
fn extend_prefix(
    measure: &CoalescentMeasure,
    m: u64,
    total: f64,
    prefix: &mut Prefix,
    target: usize,
) -> Result<(), CoalError> {
    let target = target.min(m as usize - 1).min(PREFIX_CAP);
    let mut cum = prefix.cum.last().copied().unwrap_or(0.0);
    while prefix.cum.len() < target {
        let k = prefix.cum.len() as u64 + 1;
        let lam = rate_lambda_mk(measure, m, k + 1)?;
        let w = ln_choose(m, k + 1).exp() * lam;
        prefix.log_rates.push(lam.ln());
        cum += w / total;
        if prefix.cum.len() + 1 == m as usize - 1 {
            cum = 1.0; // the pmf support is exhausted at k = m−1
        }
        prefix.cum.push(cum.min(1.0));
        prefix.last_w = w;
        if 1.0 - cum < DEFAULT_TRUNCATION_EPS && prefix.cum.len() >= 32 {
            break;
        }
    }
    Ok(())
}

/// Exact inversion sampling of the merge size from a rate table. The
/// uniform draw walks the cumulative prefix; draws landing beyond it
/// extend the walk on demand (transiently past the storage cap), so the
/// law is exactly p_{m,·} with no truncation error.
pub fn sample_merge_size<R: Rng + ?Sized>(table: &RateTable, rng: &mut R) -> MergeSizeSample {
    let m = table.m;
    if m == 2 {
        return MergeSizeSample { i_n: 1 };
    }
    let u: f64 = rng.random();
    let snap = table.snapshot();
    for (i, c) in snap.cum.iter().enumerate() {
        if u < *c {
            return MergeSizeSample { i_n: i as u64 + 1 };
        }
    }
    // Beyond the stored prefix: publish more of it, then walk transiently
    // with the pmf ratio if the draw is still not covered.
    let snap = match table.ensure_len(snap.cum.len() * 2 + 16) {
        Ok(s) => s,
        Err(_) => snap,
    };
    let mut k = 0u64;
    let mut cum = 0.0;
    for (i, c) in snap.cum.iter().enumerate() {
        if u < *c {
            return MergeSizeSample { i_n: i as u64 + 1 };
        }
        k = i as u64 + 1;
        cum = *c;
    }
    let mut w = snap.last_w / table.total_rate;
    while k < m - 1 {
        let ratio = match &table.measure {
            CoalescentMeasure::Beta { a, b } => beta_weight_ratio(*a, *b, m as f64, k as f64),
            meas => match pmf_ratio(meas, m, k) {
                Ok(r) => r,
                Err(_) => break,
            },
        };
        w *= ratio;
        cum += w;
        k += 1;
        if u < cum {
            return MergeSizeSample { i_n: k };
        }
    }
    MergeSizeSample { i_n: m - 1 }
}

// ---------------------------------------------------------------------------
// Simulation kernel: the per-run sampler context.
// ---------------------------------------------------------------------------

// Stored cumulative prefix per state in the flat beta kernel: cum P{I <= j}
// for j = 1..8, then the normalized pmf at j = 8 seeding transient walks.
const ROW: usize = 8;

#[derive(Clone, Copy)]
struct Row {
    cum: [f64; ROW],
    last_p: f64,
}

enum Plan {
    Kingman,
    Star,
    /// Eagerly tabulated prefix rows for every state up to n; used by all
    /// beta parameters, with a paintbox shortcut when a > 2.
    BetaFlat {
        a: f64,
        b: f64,
        rows: Vec<Row>,
        lambda: Vec<f64>,
        paintbox: Option<rand_distr::Beta<f64>>,
    },
    /// Simple measures with a directly sampleable W-law: pure paintbox
    /// with a small inversion fallback for tiny states.
    WLawPaintbox {
        law: WLaw,
        fallback: Mutex<HashMap<u64, Arc<RateTable>>>,
    },
    /// Quadrature-backed measures: lazily built tables with LRU eviction.
    Generic { cache: Mutex<LruTables> },
}

struct LruTables {
    map: HashMap<u64, (Arc<RateTable>, u64)>,
    tick: u64,
    cap: usize,
}

impl LruTables {
    fn get_or_build(
        &mut self,
        measure: &CoalescentMeasure,
        m: u64,
    ) -> Result<Arc<RateTable>, CoalError> {
        self.tick += 1;
        let tick = self.tick;
        if let Some((t, stamp)) = self.map.get_mut(&m) {
            *stamp = tick;
            return Ok(t.clone());
        }
        let table = Arc::new(RateTable::build(measure, m)?);
        if self.map.len() >= self.cap {
            if let Some((&oldest, _)) = self.map.iter().min_by_key(|(_, (_, s))| *s) {
                self.map.remove(&oldest);
            }
        }
        self.map.insert(m, (table.clone(), tick));
        Ok(table)
    }
}

/// Threshold above which simple measures use the paintbox sampler; below
/// it the conditioned-binomial acceptance probability can be poor, and
/// inversion tables are cheap anyway.
const PAINTBOX_MIN_M: u64 = 65;

/// Per-run sampling context for one measure, valid for states up to
/// `n_max`. Immutable after construction (interior caches only memoize
/// deterministic values), so replicates may share it across threads.
pub struct SimKernel {
    pub measure: CoalescentMeasure,
    pub n_max: u64,
    plan: Plan,
}

impl SimKernel {
    pub fn build(measure: &CoalescentMeasure, n_max: u64) -> Result<Self, CoalError> {
        let plan = match measure {
            CoalescentMeasure::PointMassAtZero => Plan::Kingman,
            CoalescentMeasure::PointMassAtOne => Plan::Star,
            CoalescentMeasure::Beta { a, b } => build_beta_flat(*a, *b, n_max)?,
            CoalescentMeasure::FromWLaw { law, .. } => Plan::WLawPaintbox {
                law: law.clone(),
                fallback: Mutex::new(HashMap::new()),
            },
            _ => Plan::Generic {
                cache: Mutex::new(LruTables {
                    map: HashMap::new(),
                    tick: 0,
                    cap: 4096,
                }),
            },
        };
        Ok(SimKernel {
            measure: measure.clone(),
            n_max,
            plan,
        })
    }

    /// Draw the decrement I_m of the block-counting chain at state `m`.
    pub fn sample_decrement<R: Rng + ?Sized>(&self, m: u64, rng: &mut R) -> u64 {
        debug_assert!(m >= 2 && m <= self.n_max);
        if m == 2 {
            return 1;
        }
        match &self.plan {
            Plan::Kingman => 1,
            Plan::Star => m - 1,
            Plan::BetaFlat {
                a,
                b,
                rows,
                paintbox,
                ..
            } => {
                if let Some(beta) = paintbox {
                    if m >= PAINTBOX_MIN_M {
                        if let Some(i) = paintbox_draw(m, rng, |r| beta.sample(r)) {
                            return i;
                        }
                    }
                }
                let row = &rows[m as usize];
                let u: f64 = rng.random();
                for j in 0..ROW {
                    if u < row.cum[j] {
                        return j as u64 + 1;
                    }
                }
                // Transient ratio walk past the stored prefix.
                let mut k = ROW as u64;
                let mut cum = row.cum[ROW - 1];
                let mut p = row.last_p;
                let (mf, a, b) = (m as f64, *a, *b);
                while k < m - 1 {
                    p *= beta_weight_ratio(a, b, mf, k as f64);
                    cum += p;
                    k += 1;
                    if u < cum {
                        return k;
                    }
                }
                m - 1
            }
            Plan::WLawPaintbox { law, fallback } => {
                if m >= 3 {
                    if let Some(i) =
                        paintbox_draw(m, rng, |r| law.sample_one_minus_w(r.random()))
                    {
                        return i;
                    }
                }
                // Acceptance failed or tiny state: exact inversion.
                let table = {
                    let mut guard = fallback.lock().unwrap();
                    match guard.get(&m) {
                        Some(t) => t.clone(),
                        None => {
                            let t = Arc::new(
                                RateTable::build(&self.measure, m)
                                    .expect("from_w_law rate table"),
                            );
                            guard.insert(m, t.clone());
                            t
                        }
                    }
                };
                sample_merge_size(&table, rng).i_n
            }
            Plan::Generic { cache } => {
                let table = cache
                    .lock()
                    .unwrap()
                    .get_or_build(&self.measure, m)
                    .expect("rate table build");
                sample_merge_size(&table, rng).i_n
            }
        }
    }

    /// Total collision rate λ_m from the kernel's tables.
    pub fn lambda_m(&self, m: u64) -> Result<f64, CoalError> {
        match &self.plan {
            Plan::BetaFlat { lambda, .. } => Ok(lambda[m as usize]),
            _ => total_rate(&self.measure, m),
        }
    }
}

// Paintbox draw: x from the sized-biased measure, then Binomial(m, x)
// conditioned on >= 2 participants via rejection. Returns None when
// acceptance looks hopeless (caller falls back to inversion).
fn paintbox_draw<R: Rng + ?Sized>(
    m: u64,
    rng: &mut R,
    mut draw_x: impl FnMut(&mut R) -> f64,
) -> Option<u64> {
    for _ in 0..1024 {
        let x = draw_x(rng);
        if !(0.0..=1.0).contains(&x) {
            continue;
        }
        let bin = rand_distr::Binomial::new(m, x).ok()?;
        let taken = bin.sample(rng);
        if taken >= 2 {
            return Some(taken - 1);
        }
    }
    None
}

fn build_beta_flat(a: f64, b: f64, n_max: u64) -> Result<Plan, CoalError> {
    let n = n_max.max(2) as usize;
    let ln_b_ab = ln_beta(a, b);
    let mut rows = vec![
        Row {
            cum: [1.0; ROW],
            last_p: 0.0,
        };
        n + 1
    ];
    let mut lambda = vec![0.0; n + 1];

    // Ascending recurrences for lnΓ(m−2+b) and lnΓ(m−2+b+a), re-anchored
    // periodically to stop drift.
    let mut g1 = ln_gamma(b); // lnΓ(m−2+b) at m = 2
    let mut g2 = ln_gamma(a + b);
    let ln_gamma_a = ln_gamma(a);
    let mut lam = 1.0; // λ_2
    for m in 2..=n as u64 {
        let mf = m as f64;
        if m > 2 {
            // λ_m = λ_{m−1} + (m−1)·λ_{m,2}, with λ_{m,2} = B(a, m−2+b)/B(a,b).
            let ln_lam_m2 = ln_gamma_a + g1 - g2 - ln_b_ab;
            lam += (mf - 1.0) * ln_lam_m2.exp();
        }
        lambda[m as usize] = lam;

        // Row: cumulative p_{m,k} for k = 1..8; w_{m,1} = C(m,2)·λ_{m,2}.
        let mut w = (0.5 * mf * (mf - 1.0)) * (ln_gamma_a + g1 - g2 - ln_b_ab).exp();
        let mut cum = 0.0;
        let row = &mut rows[m as usize];
        let kmax = m - 1;
        let mut p_last = 0.0;
        for j in 0..ROW {
            let k = j as u64 + 1;
            if k < kmax {
                let p = w / lam;
                cum += p;
                row.cum[j] = cum;
                p_last = p;
                w *= beta_weight_ratio(a, b, mf, k as f64);
            } else {
                // k = m−1 exhausts the pmf.
                row.cum[j] = 1.0;
                p_last = 0.0;
            }
        }
        row.last_p = p_last;

        g1 += (mf - 2.0 + b).ln();
        g2 += (mf - 2.0 + b + a).ln();
        if m % 4096 == 0 {
            g1 = ln_gamma(mf - 1.0 + b);
            g2 = ln_gamma(mf - 1.0 + b + a);
        }
    }

    let paintbox = if a > 2.0 {
        Some(rand_distr::Beta::new(a - 2.0, b).map_err(|e| CoalError::domain(e.to_string()))?)
    } else {
        None
    };
    Ok(Plan::BetaFlat {
        a,
        b,
        rows,
        lambda,
        paintbox,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{PointMassAtOne, PointMassAtZero};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn beta(a: f64, b: f64) -> CoalescentMeasure {
        CoalescentMeasure::beta(a, b).unwrap()
    }

    #[test]
    fn trivial_rates() {
        assert_eq!(rate_lambda_mk(&PointMassAtZero, 7, 2).unwrap(), 1.0);
        assert_eq!(rate_lambda_mk(&PointMassAtZero, 7, 3).unwrap(), 0.0);
        assert_eq!(rate_lambda_mk(&PointMassAtOne, 7, 7).unwrap(), 1.0);
        assert_eq!(rate_lambda_mk(&PointMassAtOne, 7, 3).unwrap(), 0.0);
        assert_eq!(total_rate(&PointMassAtZero, 6).unwrap(), 15.0);
        assert_eq!(total_rate(&PointMassAtOne, 6).unwrap(), 1.0);
        assert_eq!(merge_size_pmf(&PointMassAtZero, 9, 1).unwrap(), 1.0);
        assert_eq!(merge_size_pmf(&PointMassAtOne, 9, 8).unwrap(), 1.0);
    }

    #[test]
    fn closed_form_reference_rates() {
        // B(1,2)/B(1,1) = 1/2 for the Bolthausen–Sznitman kernel at m=3.
        assert_relative_eq!(
            rate_lambda_mk(&beta(1.0, 1.0), 3, 2).unwrap(),
            0.5,
            max_relative = 1e-12
        );
        // 2∫x(1−x)dx = 1/3.
        assert_relative_eq!(
            rate_lambda_mk(&beta(2.0, 1.0), 3, 2).unwrap(),
            1.0 / 3.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn closed_form_matches_quadrature() {
        for &(a, b) in &[(0.3, 0.5), (1.0, 1.0), (1.5, 2.0), (2.0, 1.0), (3.0, 0.5)] {
            let m = beta(a, b);
            for &(mm, k) in &[(2u64, 2u64), (5, 2), (5, 4), (50, 3), (50, 50), (500, 2)] {
                if k > mm {
                    continue;
                }
                let cf = rate_lambda_mk(&m, mm, k).unwrap();
                let q = rate_lambda_mk_quadrature(&m, mm, k).unwrap();
                assert_relative_eq!(cf, q, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn consistency_identity() {
        // λ_{m,k} = λ_{m+1,k} + λ_{m+1,k+1}.
        for &(a, b) in &[(0.5, 1.0), (1.0, 1.0), (2.0, 2.0), (3.0, 1.0)] {
            let m = beta(a, b);
            for &mm in &[2u64, 7, 41, 173] {
                for k in 2..=mm.min(9) {
                    let lhs = rate_lambda_mk(&m, mm, k).unwrap();
                    let rhs = rate_lambda_mk(&m, mm + 1, k).unwrap()
                        + rate_lambda_mk(&m, mm + 1, k + 1).unwrap();
                    assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn lambda_m1_examples() {
        // 3∫x(1−x)dx = 1/2 for beta(3,1) at m = 2.
        assert_relative_eq!(
            rate_lambda_m1(&beta(3.0, 1.0), 2).unwrap(),
            0.5,
            max_relative = 1e-12
        );
        // Monotone decrease to 0 in m.
        let m = beta(3.0, 0.5);
        let mut prev = f64::INFINITY;
        for mm in [2u64, 4, 16, 256, 4096] {
            let v = rate_lambda_m1(&m, mm).unwrap();
            assert!(v < prev && v > 0.0);
            prev = v;
        }
        // No dust for beta(1,1).
        assert!(matches!(
            rate_lambda_m1(&beta(1.0, 1.0), 5),
            Err(CoalError::DustRequired)
        ));
    }

    #[test]
    fn total_rate_routes_agree() {
        for &(a, b) in &[(0.5, 1.0), (1.0, 1.0), (1.5, 2.0), (2.0, 1.0), (3.0, 1.0)] {
            let m = beta(a, b);
            for &mm in &[2u64, 3, 10, 57, 300] {
                let rec = total_rate(&m, mm).unwrap();
                let intg = total_rate_integral(&m, mm).unwrap();
                assert_relative_eq!(rec, intg, max_relative = 1e-9);
                // Direct sum Σ C(m,k)λ_{m,k}.
                let mut direct = 0.0;
                for k in 2..=mm {
                    direct += ln_choose(mm, k).exp() * rate_lambda_mk(&m, mm, k).unwrap();
                }
                assert_relative_eq!(rec, direct, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn total_rate_tends_to_m_minus_2() {
        // λ_m → m_{-2} = 3 for beta(3,1).
        let m = beta(3.0, 1.0);
        let mut prev = 0.0;
        for &mm in &[1_000u64, 10_000, 100_000] {
            let v = total_rate(&m, mm).unwrap();
            assert!(v > prev && v < 3.0);
            prev = v;
        }
        assert!((prev - 3.0).abs() < 1e-3);
    }

    #[test]
    fn pmf_normalizes() {
        for &(a, b) in &[(0.5, 1.0), (1.0, 1.0), (2.0, 3.0), (3.0, 1.0)] {
            let meas = beta(a, b);
            for &mm in &[2u64, 5, 23, 150] {
                let mut sum = 0.0;
                for k in 1..mm {
                    sum += merge_size_pmf(&meas, mm, k).unwrap();
                }
                assert_relative_eq!(sum, 1.0, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn pmf_ratio_matches_direct_quotient() {
        let meas = beta(1.0, 1.0);
        for k in 1..4u64 {
            let r = pmf_ratio(&meas, 5, k).unwrap();
            let direct =
                merge_size_pmf(&meas, 5, k + 1).unwrap() / merge_size_pmf(&meas, 5, k).unwrap();
            assert_relative_eq!(r, direct, max_relative = 1e-10);
        }
        let meas = beta(2.0, 3.0);
        let r = pmf_ratio(&meas, 50, 3).unwrap();
        let direct =
            merge_size_pmf(&meas, 50, 4).unwrap() / merge_size_pmf(&meas, 50, 3).unwrap();
        assert_relative_eq!(r, direct, max_relative = 1e-9);
        // Kingman: p_{m,2} = 0.
        assert_eq!(pmf_ratio(&PointMassAtZero, 8, 1).unwrap(), 0.0);
    }

    #[test]
    fn pmf_tends_to_limit_law() {
        // p_{m,k} → p_k^{(1)} = 1/(k²+k) for beta(1,b), any b.
        for &b in &[1.0, 2.0] {
            let meas = beta(1.0, b);
            for k in 1..=10u64 {
                let p = merge_size_pmf(&meas, 10_000, k).unwrap();
                let lim = 1.0 / (k * k + k) as f64;
                assert!((p - lim).abs() / lim < 0.02, "b={b} k={k}: p={p} lim={lim}");
            }
        }
    }

    #[test]
    fn first_collision_fraction_matches_w_law() {
        // Σ_{k<=nx} p_{n,k} ≈ P{1−W <= x} for beta(3,1) at n = 10⁴,
        // where 1−W is uniform, so the limit is x itself.
        let meas = beta(3.0, 1.0);
        let n = 10_000u64;
        let lam = total_rate(&meas, n).unwrap();
        let mut w = ln_choose(n, 2).exp() * rate_lambda_mk(&meas, n, 2).unwrap();
        let mut cum = w / lam;
        let mut k = 1u64;
        for ix in 1..=9u64 {
            let x = ix as f64 / 10.0;
            let cut = (n as f64 * x) as u64;
            while k < cut {
                w *= beta_weight_ratio(3.0, 1.0, n as f64, k as f64);
                cum += w / lam;
                k += 1;
            }
            assert!((cum - x).abs() < 0.01, "x={x}: cum={cum}");
        }
    }

    #[test]
    fn rate_table_prefix_and_tail() {
        let meas = beta(1.0, 1.0);
        let t = RateTable::build(&meas, 1000).unwrap();
        assert!(t.prefix_len() >= 32);
        let p1 = t.pmf(1).unwrap();
        assert_relative_eq!(
            p1,
            merge_size_pmf(&meas, 1000, 1).unwrap(),
            max_relative = 1e-10
        );
        // Extension on demand.
        let p100 = t.pmf(100).unwrap();
        assert_relative_eq!(
            p100,
            merge_size_pmf(&meas, 1000, 100).unwrap(),
            max_relative = 1e-9
        );
        assert!(t.prefix_len() >= 100);
        let lr = t.log_rate(5).unwrap();
        assert_relative_eq!(
            lr.exp(),
            rate_lambda_mk(&meas, 1000, 5).unwrap(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn sampler_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = SimKernel::build(&PointMassAtZero, 50).unwrap();
        for _ in 0..10 {
            assert_eq!(k.sample_decrement(50, &mut rng), 1);
        }
        let k = SimKernel::build(&PointMassAtOne, 50).unwrap();
        for _ in 0..10 {
            assert_eq!(k.sample_decrement(50, &mut rng), 49);
        }
        // m = 2 always decrements by 1.
        let k = SimKernel::build(&beta(0.5, 1.0), 10).unwrap();
        for _ in 0..10 {
            assert_eq!(k.sample_decrement(2, &mut rng), 1);
        }
    }

    #[test]
    fn flat_kernel_matches_pmf() {
        // The eager rows must reproduce merge_size_pmf and total_rate.
        for &(a, b) in &[(0.5, 1.0), (1.0, 1.0), (1.5, 2.0), (2.0, 1.0), (3.0, 1.0)] {
            let meas = beta(a, b);
            let kern = SimKernel::build(&meas, 200).unwrap();
            if let Plan::BetaFlat { rows, lambda, .. } = &kern.plan {
                for &m in &[3u64, 9, 47, 200] {
                    assert_relative_eq!(
                        lambda[m as usize],
                        total_rate(&meas, m).unwrap(),
                        max_relative = 1e-11
                    );
                    let row = &rows[m as usize];
                    let mut cum = 0.0;
                    for j in 0..ROW.min(m as usize - 2) {
                        cum += merge_size_pmf(&meas, m, j as u64 + 1).unwrap();
                        assert_relative_eq!(row.cum[j], cum, max_relative = 1e-9);
                    }
                }
            } else {
                panic!("expected flat plan");
            }
        }
    }

    #[test]
    fn sampler_matches_pmf_chi_square() {
        // Exactness of each sampling path against the closed-form pmf,
        // via a chi-square test at significance 1e-3.
        let cases: Vec<(CoalescentMeasure, u64, u64)> = vec![
            (beta(0.5, 1.0), 12, 200_000),  // inversion rows
            (beta(1.0, 1.0), 9, 200_000),   // inversion rows
            (beta(3.0, 1.0), 12, 200_000),  // simple, below paintbox cutoff
            (beta(3.0, 1.0), 400, 200_000), // paintbox path
            (
                CoalescentMeasure::from_w_law(vec![(0.3, 0.25), (0.6, 0.5), (0.85, 0.25)], 2.0)
                    .unwrap(),
                40,
                200_000,
            ),
            (
                CoalescentMeasure::gamma_subordinator(1.0).unwrap(),
                12,
                100_000,
            ), // generic quadrature tables
        ];
        for (meas, m, draws) in cases {
            let kern = SimKernel::build(&meas, m).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut counts: HashMap<u64, u64> = HashMap::new();
            for _ in 0..draws {
                *counts.entry(kern.sample_decrement(m, &mut rng)).or_insert(0) += 1;
            }
            // Bin the support: individual k while expected >= 8, tail lump.
            let mut stat = 0.0;
            let mut dof: i64 = -1;
            let mut tail_exp = draws as f64;
            let mut tail_obs = draws as i64;
            for k in 1..m {
                let e = merge_size_pmf(&meas, m, k).unwrap() * draws as f64;
                if tail_exp - e < 8.0 || e < 8.0 {
                    break;
                }
                let o = *counts.get(&k).unwrap_or(&0) as f64;
                stat += (o - e) * (o - e) / e;
                dof += 1;
                tail_exp -= e;
                tail_obs -= o as i64;
            }
            if tail_exp > 0.5 {
                let o = tail_obs as f64;
                stat += (o - tail_exp) * (o - tail_exp) / tail_exp;
                dof += 1;
            }
            assert!(dof >= 1, "degenerate binning for {}", meas.describe());
            let pvalue = crate::special::inc_gamma_q(dof as f64 / 2.0, stat / 2.0);
            assert!(
                pvalue > 1e-3,
                "sampler mismatch for {} at m={m}: chi2={stat:.2} dof={dof} p={pvalue:.2e}",
                meas.describe()
            );
        }
    }

    #[test]
    fn sampler_empirical_pmf_close() {
        // beta(0.5,1) at m = 1000: empirical pmf within 3 MC standard
        // errors for k <= 20 over 10⁶ draws.
        let meas = beta(0.5, 1.0);
        let kern = SimKernel::build(&meas, 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 1_000_000usize;
        let mut counts = vec![0u64; 22];
        for _ in 0..draws {
            let i = kern.sample_decrement(1000, &mut rng);
            if i <= 21 {
                counts[i as usize] += 1;
            }
        }
        for k in 1..=20u64 {
            let p = merge_size_pmf(&meas, 1000, k).unwrap();
            let emp = counts[k as usize] as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!(
                (emp - p).abs() <= 3.0 * se + 1e-9,
                "k={k}: emp={emp:.6} exact={p:.6} se={se:.2e}"
            );
        }
    }

    #[test]
    fn no_overflow_at_large_m() {
        // log-space path keeps m = 10⁶ finite.
        let meas = beta(3.0, 1.0);
        let v = rate_lambda_mk(&meas, 1_000_000, 2).unwrap();
        assert!(v.is_finite() && v > 0.0);
        let p = merge_size_pmf(&meas, 1_000_000, 1).unwrap();
        assert!(p.is_finite() && p > 0.0 && p < 1.0);
    }
}
