//! Choice of `(v, k)` pairs for joint `k`-FWER control.
//!
//! A plan `(v, k)` is valid at horizon `p` when
//! `P(N^p(v_i) <= k_i - 1 for all i) >= 1 - alpha`, where `N^p(v)` counts the
//! `+1`s before the `v`-th `-1` of a fair sign sequence truncated at `p`.
//! Single components have exact negative binomial tails; joint plans are
//! certified on a [`SignPathPool`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{required_count, SignPathPool};

const LN_2: f64 = std::f64::consts::LN_2;

/// `P(NB(v, 1/2) >= k)`: the chance of at least `k` successes before the
/// `v`-th failure of a fair coin.
///
/// Terms follow `t_{i+1} = t_i (i + v) / (2 (i + 1))` from a log-space
/// starting value, so nothing overflows for large `v`. Below the mode the
/// complementary head is summed instead.
pub fn nb_upper_tail(v: u64, k: u64) -> f64 {
    assert!(v >= 1, "v must be positive");
    if k == 0 {
        return 1.0;
    }
    let vf = v as f64;
    // ln t_i accumulated exactly as the recurrence, from ln t_0 = -v ln 2.
    let ln_term = |i: u64| -> f64 {
        let mut acc = -vf * LN_2;
        for j in 0..i {
            acc += ((j as f64 + vf) / (2.0 * (j as f64 + 1.0))).ln();
        }
        acc
    };
    if k + 1 >= v {
        // Ratios are below one from here on: sum forward with a geometric
        // bound on the remainder.
        let mut t = ln_term(k).exp();
        let mut sum = 0.0;
        let mut i = k as f64;
        loop {
            sum += t;
            let r = (i + vf) / (2.0 * (i + 1.0));
            t *= r;
            i += 1.0;
            if r < 1.0 && t / (1.0 - r) < 1e-17 {
                break;
            }
            if t == 0.0 {
                break;
            }
        }
        sum.clamp(0.0, 1.0)
    } else {
        // Head sum over i < k, walking down from t_{k-1}.
        let mut t = ln_term(k - 1).exp();
        let mut head = 0.0;
        let mut i = (k - 1) as f64;
        loop {
            head += t;
            if i == 0.0 {
                break;
            }
            t *= 2.0 * i / (i - 1.0 + vf);
            i -= 1.0;
        }
        (1.0 - head).clamp(0.0, 1.0)
    }
}

/// Largest `v` in `1..=p` with `P(NB(v, 1/2) >= k) <= alpha`.
pub fn js_v(k: u64, alpha: f64, p: usize) -> Result<usize> {
    check_alpha(alpha)?;
    let ok = |v: usize| nb_upper_tail(v as u64, k) <= alpha;
    if p == 0 || !ok(1) {
        return Err(Error::InfeasibleK { k, alpha, p });
    }
    // The tail grows with v.
    let (mut lo, mut hi) = (1usize, p);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(lo)
}

/// `c(alpha) = ln(1/alpha) / ln(2 - alpha)`.
pub fn c_alpha(alpha: f64) -> f64 {
    (1.0 / alpha).ln() / (2.0 - alpha).ln()
}

/// `floor(c * x)`, shared by every bound that scales a count by `c(alpha)`
/// so that equal inputs give bit-identical budgets.
pub(crate) fn scaled_floor(c: f64, x: u64) -> u64 {
    (c * x as f64).floor() as u64
}

/// `k_raw` through the closed form `floor(c(alpha) v) + 1`.
pub fn k_raw(v: &[usize], alpha: f64) -> Vec<u64> {
    let c = c_alpha(alpha);
    v.iter().map(|&vi| scaled_floor(c, vi as u64) + 1).collect()
}

fn c_j(c: f64, j: u64) -> u64 {
    (c * (1.0 + j as f64) / (1.0 + c)).floor() as u64 + 1
}

/// `j*_i = argmin_j {c_j : j - c_j + 1 = v_i}` for strictly increasing `v`.
///
/// `j - c_j + 1` moves in steps of zero or one, and `c_j` never decreases,
/// so the argmin is the first `j` that reaches `v_i`.
pub fn j_star(v: &[usize], alpha: f64) -> Vec<u64> {
    let c = c_alpha(alpha);
    let mut out = Vec::with_capacity(v.len());
    let mut j: u64 = 1;
    for &vi in v {
        let target = vi as i64;
        while (j as i64) - (c_j(c, j) as i64) + 1 < target {
            j += 1;
        }
        debug_assert_eq!((j as i64) - (c_j(c, j) as i64) + 1, target);
        out.push(j);
    }
    out
}

/// `k_raw` through the defining minimisation over `c_j`.
pub fn k_raw_by_min(v: &[usize], alpha: f64) -> Vec<u64> {
    let c = c_alpha(alpha);
    j_star(v, alpha).into_iter().map(|j| c_j(c, j)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VKind {
    A,
    B,
    C,
    D,
    Explicit,
}

impl fmt::Display for VKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VKind::A => "A",
            VKind::B => "B",
            VKind::C => "C",
            VKind::D => "D",
            VKind::Explicit => "explicit",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for VKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(VKind::A),
            "B" => Ok(VKind::B),
            "C" => Ok(VKind::C),
            "D" => Ok(VKind::D),
            "EXPLICIT" => Ok(VKind::Explicit),
            other => Err(Error::Parse(format!("unknown v family `{other}`"))),
        }
    }
}

/// Generator for the `v` vector. `cap` is an exclusive upper bound.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VFamily {
    pub kind: VKind,
    pub cap: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit_values: Option<Vec<usize>>,
}

impl VFamily {
    pub fn new(kind: VKind, cap: usize) -> Self {
        Self {
            kind,
            cap,
            explicit_values: None,
        }
    }

    pub fn explicit(values: Vec<usize>) -> Self {
        let cap = values.iter().max().map_or(2, |m| m + 1);
        Self {
            kind: VKind::Explicit,
            cap,
            explicit_values: Some(values),
        }
    }

    pub fn values(&self) -> Vec<usize> {
        v_family(self)
    }
}

/// Generates the `v` vector of a family, strictly increasing and below `cap`.
pub fn v_family(spec: &VFamily) -> Vec<usize> {
    let cap = spec.cap;
    let mut out: Vec<usize> = match spec.kind {
        VKind::A => (1..cap).collect(),
        VKind::B => (1usize..)
            .map(|i| if i == 1 { 1 } else { i * i / 2 })
            .take_while(|&v| v < cap)
            .collect(),
        VKind::C => {
            let mut vals = Vec::new();
            let (mut a, mut b) = (1usize, 2usize);
            while a < cap {
                vals.push(a);
                (a, b) = (b, a + b);
            }
            vals
        }
        VKind::D => (0..usize::BITS)
            .map(|e| 1usize << e)
            .take_while(|&v| v < cap)
            .collect(),
        VKind::Explicit => spec
            .explicit_values
            .clone()
            .unwrap_or_default()
            .into_iter()
            .filter(|&v| v >= 1 && v < cap)
            .collect(),
    };
    out.sort_unstable();
    out.dedup();
    out
}

/// Evidence that a plan satisfies the joint constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Estimated (or guaranteed lower bound on the) joint probability.
    pub prob: f64,
    pub nsim: Option<usize>,
    pub seed: Option<u64>,
    /// Set when the guarantee is analytic rather than simulated.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub exact: bool,
}

impl Certificate {
    pub fn exact(prob: f64) -> Self {
        Self {
            prob,
            nsim: None,
            seed: None,
            exact: true,
        }
    }

    pub fn monte_carlo(prob: f64, pool: &SignPathPool) -> Self {
        Self {
            prob,
            nsim: Some(pool.nsim()),
            seed: Some(pool.seed()),
            exact: false,
        }
    }

    /// Standard error of a Monte Carlo certificate.
    pub fn standard_error(&self) -> Option<f64> {
        self.nsim.map(|n| (self.prob * (1.0 - self.prob) / n as f64).sqrt())
    }
}

/// Paired `(v, k)` vectors with their level, horizon and certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VKPlan {
    pub alpha: f64,
    #[serde(rename = "p")]
    pub horizon_p: usize,
    pub v: Vec<usize>,
    pub k: Vec<u64>,
    #[serde(default)]
    pub family: String,
    pub certificate: Certificate,
}

impl VKPlan {
    pub fn new(
        v: Vec<usize>,
        k: Vec<u64>,
        alpha: f64,
        horizon_p: usize,
        family: impl Into<String>,
        certificate: Certificate,
    ) -> Result<Self> {
        let plan = Self {
            alpha,
            horizon_p,
            v,
            k,
            family: family.into(),
            certificate,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.v.is_empty() || self.v.len() != self.k.len() {
            return Err(Error::InvalidPlan(format!(
                "v has {} entries and k has {}",
                self.v.len(),
                self.k.len()
            )));
        }
        if self.v[0] == 0 || self.v.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPlan("v must be strictly increasing and positive".into()));
        }
        if self.k[0] == 0 || self.k.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidPlan("k must be nondecreasing and positive".into()));
        }
        if self.horizon_p == 0 {
            return Err(Error::InvalidPlan("horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.v.len()
    }

    /// The single pair `(k, v_JS(k))` with its exact tail guarantee.
    pub fn js(k: u64, alpha: f64, p: usize) -> Result<Self> {
        let v = js_v(k, alpha, p)?;
        let prob = 1.0 - nb_upper_tail(v as u64, k);
        Self::new(vec![v], vec![k], alpha, p, format!("js-{k}"), Certificate::exact(prob))
    }

    /// `v = (1, ..., p)` with `k_raw`; valid for every horizon.
    pub fn kr(alpha: f64, p: usize) -> Result<Self> {
        check_alpha(alpha)?;
        let v: Vec<usize> = (1..=p).collect();
        let k = k_raw(&v, alpha);
        Self::new(v, k, alpha, p, "kr", Certificate::exact(1.0 - alpha))
    }

    /// `k_raw` for an arbitrary `v`, certified on `pool`.
    pub fn raw(v: Vec<usize>, alpha: f64, p: usize, pool: &SignPathPool) -> Result<Self> {
        check_alpha(alpha)?;
        let k = k_raw(&v, alpha);
        let prob = estimate_joint_prob(pool, &v, &k, p)?;
        Self::new(v, k, alpha, p, "raw", Certificate::monte_carlo(prob, pool))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha { alpha })
    }
}

fn to_limits(k: &[u64]) -> Vec<u32> {
    k.iter().map(|&x| x.min(u32::MAX as u64) as u32).collect()
}

/// Fraction of pool paths with `N^horizon(v_i) <= k_i - 1` for every `i`.
pub fn estimate_joint_prob(pool: &SignPathPool, v: &[usize], k: &[u64], horizon: usize) -> Result<f64> {
    if v.len() != k.len() {
        return Err(Error::InvalidPlan("v and k lengths differ".into()));
    }
    let counts = pool.count_matrix(v, horizon)?;
    Ok(counts.joint_probability(&to_limits(k)))
}

/// Intermediate vectors of the two-step refinement.
#[derive(Clone, Debug)]
pub struct TwoStepTrace {
    pub k_raw: Vec<u64>,
    pub prob_raw: f64,
    /// Number of `delta` steps taken off `c(alpha)` in step one.
    pub step1_steps: u64,
    pub k_step1: Vec<u64>,
    pub prob_step1: f64,
    /// Components where the nondecreasing clamp decided `k_i` in step two.
    pub clamp_binds: usize,
    pub plan: VKPlan,
}

/// Two-step refinement of `k` for a given `v` (default `delta` is 0.01).
pub fn two_step_k(v: &[usize], alpha: f64, delta: f64, p: usize, pool: &SignPathPool) -> Result<VKPlan> {
    two_step_k_traced(v, alpha, delta, p, pool).map(|t| t.plan)
}

pub fn two_step_k_traced(
    v: &[usize],
    alpha: f64,
    delta: f64,
    p: usize,
    pool: &SignPathPool,
) -> Result<TwoStepTrace> {
    check_alpha(alpha)?;
    if delta.is_nan() || delta <= 0.0 || !delta.is_finite() {
        return Err(Error::InvalidStepSize { delta });
    }
    if v.is_empty() || v[0] == 0 || v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidPlan("v must be strictly increasing and positive".into()));
    }
    let counts = pool.count_matrix(v, p)?;
    let required = required_count(alpha, pool.nsim());
    let accepts = |k: &[u64]| counts.count_accepting(&to_limits(k)) >= required;

    let c = c_alpha(alpha);
    let jstar = j_star(v, alpha);
    let step1_k = |c1: f64| -> Vec<u64> { jstar.iter().map(|&j| c_j(c1, j)).collect() };
    let k_raw_vec = step1_k(c);
    let prob_raw = counts.joint_probability(&to_limits(&k_raw_vec));

    // Step one: largest N with c - N delta still certified. Smaller constants
    // give componentwise smaller k, so validity is monotone in N.
    let max_steps = ((c / delta).ceil() as u64).saturating_sub(1);
    let valid = |n: u64| {
        let c1 = c - n as f64 * delta;
        c1 > 0.0 && accepts(&step1_k(c1))
    };
    let steps = if !valid(0) {
        0
    } else {
        let (mut lo, mut hi) = (0u64, max_steps);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if valid(mid) {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    };
    let k_step1 = step1_k(c - steps as f64 * delta);
    let prob_step1 = counts.joint_probability(&to_limits(&k_step1));

    // Step two: greedy decrease in increasing i, never below k_{i-1}.
    let mut limits = to_limits(&k_step1);
    let clamp_binds = if counts.count_accepting(&limits) >= required {
        counts.greedy_tighten(&mut limits, required, |i, l| if i == 0 { 1 } else { l[i - 1] })
    } else {
        0
    };
    let k: Vec<u64> = limits.iter().map(|&x| x as u64).collect();
    let prob = counts.joint_probability(&limits);
    let plan = VKPlan::new(v.to_vec(), k, alpha, p, "two-step", Certificate::monte_carlo(prob, pool))?;
    Ok(TwoStepTrace {
        k_raw: k_raw_vec,
        prob_raw,
        step1_steps: steps,
        k_step1,
        prob_step1,
        clamp_binds,
        plan,
    })
}

/// Two-step plan for one of the named `v` families.
pub fn family_plan(family: &VFamily, alpha: f64, delta: f64, p: usize, pool: &SignPathPool) -> Result<VKPlan> {
    let v = family.values();
    let mut plan = two_step_k(&v, alpha, delta, p, pool)?;
    plan.family = family.kind.to_string();
    Ok(plan)
}
