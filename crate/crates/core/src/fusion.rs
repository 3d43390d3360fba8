//! Bayesian fusion of the three methods' verdicts into a health index.
//!
//! Each method is summarized by an empirical likelihood `P(Y = y | S = s)`
//! counted on calibration data, inverted with state priors into
//! `P(S = s | Y = y)`. The posterior diagonal, mixed by `(alpha, beta,
//! gamma)`, gives the method's trust weight. The composite index is
//! `HI = (1 - NCFD) * 100`, where NCFD is the trust-weighted mean of the
//! methods' flag rates.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::state::CableState;
use crate::threshold::{Placement, ThresholdPair};

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodId {
    Sparam,
    Snr,
    Omtdr,
}

impl MethodId {
    pub const ALL: [MethodId; 3] = [MethodId::Sparam, MethodId::Snr, MethodId::Omtdr];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Sparam => "sparam",
            MethodId::Snr => "snr",
            MethodId::Omtdr => "omtdr",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub p_h: f64,
    pub p_fs: f64,
    pub p_fl: f64,
}

impl Priors {
    /// 90 % healthy, 8 % small, 2 % large.
    pub const CASE1: Priors = Priors { p_h: 0.9, p_fs: 0.08, p_fl: 0.02 };
    pub const CASE2: Priors = Priors { p_h: 0.17, p_fs: 0.58, p_fl: 0.25 };
    pub const CASE3: Priors = Priors { p_h: 0.7, p_fs: 0.25, p_fl: 0.05 };

    pub fn new(p_h: f64, p_fs: f64, p_fl: f64) -> Result<Self> {
        let p = Self { p_h, p_fs, p_fl };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid(format!("priors {a:?} must each lie in [0, 1]")));
        }
        if (a.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("priors {a:?} must sum to 1")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p_h, self.p_fs, self.p_fl]
    }

    pub fn get(&self, s: CableState) -> f64 {
        self.as_array()[s.index()]
    }
}

impl Default for Priors {
    fn default() -> Self {
        Self::CASE1
    }
}

/// `likelihood[s][y] = P(Y = y | S = s)`.
pub type Likelihood = [[f64; 3]; 3];

/// One likelihood row: fraction of `psi` values classified H, F_s and F_l.
pub fn estimate_conditionals(psi: &[f64], th: &ThresholdPair) -> Result<[f64; 3]> {
    if psi.is_empty() {
        return Err(invalid("no psi values to estimate a likelihood row from"));
    }
    th.validate()?;
    let mut counts = [0usize; 3];
    for &v in psi {
        counts[th.classify(v).index()] += 1;
    }
    let n = psi.len() as f64;
    Ok(counts.map(|c| c as f64 / n))
}

fn validate_likelihood(l: &Likelihood) -> Result<()> {
    for (s, row) in l.iter().enumerate() {
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
            return Err(invalid(format!(
                "likelihood row for {} is not a distribution: {row:?}",
                CableState::ALL[s]
            )));
        }
    }
    Ok(())
}

/// `P(S = s | Y = y)`, with columns of zero marginal left undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    /// `entries[s][y]`.
    pub entries: [[Option<f64>; 3]; 3],
}

impl Posterior {
    pub fn get(&self, s: CableState, y: CableState) -> Result<f64> {
        self.entries[s.index()][y.index()].ok_or_else(|| {
            Error::Undefined(format!("P(S={s} | Y={y}) with P(Y={y}) = 0"))
        })
    }

    pub fn is_defined(&self, y: CableState) -> bool {
        self.entries[0][y.index()].is_some()
    }

    pub fn diagonal(&self) -> [Option<f64>; 3] {
        [0, 1, 2].map(|i| self.entries[i][i])
    }

    pub fn identity() -> Self {
        let mut entries = [[Some(0.0); 3]; 3];
        for (i, row) in entries.iter_mut().enumerate() {
            row[i] = Some(1.0);
        }
        Self { entries }
    }
}

pub fn marginal_and_posterior(likelihood: &Likelihood, priors: &Priors) -> Result<([f64; 3], Posterior)> {
    validate_likelihood(likelihood)?;
    priors.validate()?;
    let prior = priors.as_array();
    let mut marginal = [0.0; 3];
    for y in 0..3 {
        marginal[y] = (0..3).map(|s| likelihood[s][y] * prior[s]).sum();
    }
    let mut entries = [[None; 3]; 3];
    for y in 0..3 {
        if marginal[y] > 0.0 {
            for s in 0..3 {
                entries[s][y] = Some(likelihood[s][y] * prior[s] / marginal[y]);
            }
        }
    }
    Ok((marginal, Posterior { entries }))
}

/// Mixing coefficients for the posterior diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// Weight on `P(F_l | Y = F_l)`.
    pub alpha: f64,
    /// Weight on `P(F_s | Y = F_s)`.
    pub beta: f64,
    /// Weight on `P(H | Y = H)`.
    pub gamma: f64,
}

impl Coefficients {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let c = Self { alpha, beta, gamma };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.alpha, self.beta, self.gamma];
        if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(invalid(format!(
                "alpha, beta, gamma must be >= 0 and sum to 1 (got {v:?})"
            )));
        }
        Ok(())
    }
}

/// `alpha P(F_l|F_l) + beta P(F_s|F_s) + gamma P(H|H)`.
///
/// Entries with a zero coefficient are not consulted, so a method that never
/// emitted that verdict is only an error when the verdict matters.
pub fn compute_weight(posterior: &Posterior, c: &Coefficients) -> Result<f64> {
    c.validate()?;
    let terms = [
        (c.alpha, CableState::LargeFault),
        (c.beta, CableState::SmallFault),
        (c.gamma, CableState::Healthy),
    ];
    let mut w = 0.0;
    for (k, s) in terms {
        if k == 0.0 {
            continue;
        }
        let p = posterior.get(s, s).map_err(|_| {
            Error::Calibration(format!("method never returned {s} on calibration data; P({s}|{s}) is undefined"))
        })?;
        w += k * p;
    }
    Ok(w)
}

/// Emphasis used when turning posteriors into weights and placing thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    #[default]
    DetectFirst,
    LowFp,
}

impl Profile {
    pub fn coefficients(self) -> Coefficients {
        match self {
            Profile::DetectFirst => Coefficients { alpha: 0.5, beta: 0.3, gamma: 0.2 },
            Profile::LowFp => Coefficients { alpha: 0.2, beta: 0.3, gamma: 0.5 },
        }
    }

    /// Threshold placement between class means. Low-fp moves thresholds
    /// towards the more severe class so fewer healthy cables are flagged.
    pub fn placement(self) -> Placement {
        match self {
            Profile::DetectFirst => Placement::MIDPOINT,
            Profile::LowFp => Placement(0.65),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::DetectFirst => "detect-first",
            Profile::LowFp => "low-fp",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detect-first" => Ok(Profile::DetectFirst),
            "low-fp" => Ok(Profile::LowFp),
            other => Err(invalid(format!("unknown profile {other:?} (expected detect-first or low-fp)"))),
        }
    }
}

/// Empirical confusion model of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionModel {
    pub method: MethodId,
    pub likelihood: Likelihood,
    pub marginal: [f64; 3],
    pub posterior: Posterior,
    pub n_samples: [usize; 3],
}

impl ConfusionModel {
    /// Counts verdicts on deviation scores `psi_by_state[s]` of known state `s`.
    pub fn from_scores(
        method: MethodId,
        psi_by_state: &[Vec<f64>; 3],
        th: &ThresholdPair,
        priors: &Priors,
    ) -> Result<Self> {
        let mut likelihood = [[0.0; 3]; 3];
        for (s, psi) in psi_by_state.iter().enumerate() {
            likelihood[s] = estimate_conditionals(psi, th).map_err(|_| {
                Error::Calibration(format!("{method}: no calibration values for {}", CableState::ALL[s]))
            })?;
        }
        Self::from_likelihood(method, likelihood, psi_by_state.clone().map(|v| v.len()), priors)
    }

    pub fn from_likelihood(
        method: MethodId,
        likelihood: Likelihood,
        n_samples: [usize; 3],
        priors: &Priors,
    ) -> Result<Self> {
        let (marginal, posterior) = marginal_and_posterior(&likelihood, priors)?;
        Ok(Self {
            method,
            likelihood,
            marginal,
            posterior,
            n_samples,
        })
    }

    /// Same likelihood, re-inverted under other priors.
    pub fn with_priors(&self, priors: &Priors) -> Result<Self> {
        Self::from_likelihood(self.method, self.likelihood, self.n_samples, priors)
    }
}

/// Trust weights `W_1..W_3` (sparam, snr, omtdr) and the coefficients used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustWeights {
    pub w: [f64; 3],
    pub coefficients: Coefficients,
}

impl TrustWeights {
    pub fn from_models(models: &[ConfusionModel; 3], c: &Coefficients) -> Result<Self> {
        let mut w = [0.0; 3];
        for (slot, m) in w.iter_mut().zip(models) {
            *slot = compute_weight(&m.posterior, c)?;
        }
        let t = Self { w, coefficients: *c };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid(format!("weights {:?} must be finite and >= 0", self.w)));
        }
        if self.w.iter().all(|&w| w == 0.0) {
            return Err(invalid("all trust weights are zero"));
        }
        Ok(())
    }
}

/// How a verdict becomes a binary (or fractional) flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlagRule {
    /// 1 for a large fault, else 0.
    #[default]
    LargeOnly,
    /// Large counts 1, small counts 0.5.
    SmallHalf,
}

impl FlagRule {
    pub fn flag(self, s: CableState) -> f64 {
        match (self, s) {
            (_, CableState::LargeFault) => 1.0,
            (FlagRule::SmallHalf, CableState::SmallFault) => 0.5,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    pub cfd: f64,
    pub ncfd: f64,
    pub hi: f64,
    pub hi_sparam: f64,
    pub hi_snr: f64,
    pub hi_omtdr: f64,
    /// Mean flag per method, `m_1..m_3`.
    pub flag_rates: [f64; 3],
    pub weights: [f64; 3],
}

impl HealthReport {
    pub fn individual(&self) -> [f64; 3] {
        [self.hi_sparam, self.hi_snr, self.hi_omtdr]
    }
}

fn flag_rate(flags: &[f64]) -> Result<f64> {
    if flags.is_empty() {
        return Err(invalid("flag stream is empty"));
    }
    if flags.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(invalid("flags must lie in [0, 1]"));
    }
    Ok(flags.iter().sum::<f64>() / flags.len() as f64)
}

/// `(1 - mean flag) * 100`.
pub fn individual_hi(flags: &[f64]) -> Result<f64> {
    Ok((1.0 - flag_rate(flags)?) * 100.0)
}

/// Composite report from three flag streams (sparam, snr, omtdr), which may
/// differ in length.
pub fn compute_health_index(flags: [&[f64]; 3], weights: &[f64; 3]) -> Result<HealthReport> {
    let mut m = [0.0; 3];
    for (slot, f) in m.iter_mut().zip(flags) {
        *slot = flag_rate(f)?;
    }
    health_from_rates(m, weights)
}

pub fn health_from_rates(m: [f64; 3], weights: &[f64; 3]) -> Result<HealthReport> {
    TrustWeights {
        w: *weights,
        coefficients: Profile::DetectFirst.coefficients(),
    }
    .validate()?;
    let cfd: f64 = (0..3).map(|i| weights[i] * m[i]).sum();
    let total: f64 = weights.iter().sum();
    let ncfd = (cfd / total).clamp(0.0, 1.0);
    Ok(HealthReport {
        cfd,
        ncfd,
        hi: (1.0 - ncfd) * 100.0,
        hi_sparam: (1.0 - m[0]) * 100.0,
        hi_snr: (1.0 - m[1]) * 100.0,
        hi_omtdr: (1.0 - m[2]) * 100.0,
        flag_rates: m,
        weights: *weights,
    })
}

/// Deviation-score pools per state for one method, with its thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodPool {
    pub by_state: [Vec<f64>; 3],
    pub thresholds: ThresholdPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEmulation {
    /// Drawn true state per sample.
    pub truth: Vec<CableState>,
    /// Verdicts per method (sparam, snr, omtdr).
    pub verdicts: [Vec<CableState>; 3],
    pub ground_truth_hi: f64,
}

impl CaseEmulation {
    pub fn flags(&self, rule: FlagRule) -> [Vec<f64>; 3] {
        self.verdicts
            .clone()
            .map(|v| v.into_iter().map(|s| rule.flag(s)).collect())
    }
}

fn draw_state(rng: &mut ChaCha8Rng, mix: &Priors) -> CableState {
    let u: f64 = rng.random();
    if u < mix.p_h {
        CableState::Healthy
    } else if u < mix.p_h + mix.p_fs {
        CableState::SmallFault
    } else {
        CableState::LargeFault
    }
}

/// `n` samples: a state drawn from `mix`, then one pooled score per method
/// for that state, classified with the method's thresholds.
pub fn emulate_case(pools: &[MethodPool; 3], mix: &Priors, n: usize, seed: u64) -> Result<CaseEmulation> {
    mix.validate()?;
    for (m, pool) in MethodId::ALL.iter().zip(pools) {
        pool.thresholds.validate()?;
        for s in CableState::ALL {
            if mix.get(s) > 0.0 && pool.by_state[s.index()].is_empty() {
                return Err(invalid(format!("{m}: empty pool for {s} with positive mix probability")));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = Vec::with_capacity(n);
    let mut verdicts: [Vec<CableState>; 3] = Default::default();
    for _ in 0..n {
        let s = draw_state(&mut rng, mix);
        truth.push(s);
        for (out, pool) in verdicts.iter_mut().zip(pools) {
            let values = &pool.by_state[s.index()];
            let v = values[rng.random_range(0..values.len())];
            out.push(pool.thresholds.classify(v));
        }
    }
    Ok(CaseEmulation {
        truth,
        verdicts,
        ground_truth_hi: (1.0 - mix.p_fl) * 100.0,
    })
}

/// One segment of a piecewise-constant case schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseSegment {
    pub mix: Priors,
    /// Time samples in this segment.
    pub samples: usize,
}

/// The three-case schedule: samples 0-50, 50-100 and 100-180.
pub fn three_case_schedule() -> Vec<CaseSegment> {
    vec![
        CaseSegment { mix: Priors::CASE1, samples: 50 },
        CaseSegment { mix: Priors::CASE2, samples: 50 },
        CaseSegment { mix: Priors::CASE3, samples: 80 },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiSample {
    pub time_sample: usize,
    pub segment: usize,
    pub ground_truth_hi: f64,
    pub report: HealthReport,
}

/// HI trace over a case schedule. Each time sample emulates `batch` draws
/// per method; weights are recomputed per segment with the segment's mix
/// as priors.
pub fn emulate_schedule(
    pools: &[MethodPool; 3],
    likelihoods: &[Likelihood; 3],
    coefficients: &Coefficients,
    schedule: &[CaseSegment],
    batch: usize,
    rule: FlagRule,
    seed: u64,
) -> Result<Vec<HiSample>> {
    if batch == 0 {
        return Err(invalid("batch must be >= 1"));
    }
    let mut out = Vec::new();
    let mut t = 0;
    for (seg_idx, seg) in schedule.iter().enumerate() {
        let mut w = [0.0; 3];
        for (i, m) in MethodId::ALL.iter().enumerate() {
            let model = ConfusionModel::from_likelihood(*m, likelihoods[i], [0; 3], &seg.mix)?;
            w[i] = compute_weight(&model.posterior, coefficients)?;
        }
        for _ in 0..seg.samples {
            let case_seed = seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let em = emulate_case(pools, &seg.mix, batch, case_seed)?;
            let flags = em.flags(rule);
            let report = compute_health_index([&flags[0], &flags[1], &flags[2]], &w)?;
            out.push(HiSample {
                time_sample: t,
                segment: seg_idx,
                ground_truth_hi: em.ground_truth_hi,
                report,
            });
            t += 1;
        }
    }
    Ok(out)
}
