//! Closed testing with multi-weighted-sum local tests.
//!
//! A local test for an intersection `I` looks only at the signs of its
//! members in decreasing `|W|` order and at `|I|`. Component `i` sums the
//! weights of positive members among the first `b_i` of them and rejects when
//! the sum reaches `z_i`. `H_I` is rejected if any component rejects; the
//! empty intersection is never rejected.

use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::Serialize;

use crate::bounds::{check_plan, FdpBound};
use crate::calibration::{two_step_k, Certificate, VKPlan};
use crate::error::{Error, Result};
use crate::pool::{required_count, SignPathPool};
use crate::stats::{IndexSet, PreparedStats};

/// Weight of a member given `(component, local rank, |I|)`, with the local
/// rank of the smallest `|W|` in `I` equal to one.
pub type WeightFn = dyn Fn(usize, usize, usize) -> u32 + Send + Sync;

#[derive(Clone)]
pub enum WeightFamily {
    /// Weight one on the local top-`b`.
    Indicator,
    /// Weight equal to the local rank on the local top-`b`.
    Rank,
    /// Weight on the local top-`b` supplied by the caller. The shortcut is
    /// exact only if the weights are monotone in the sense checked by
    /// [`check_monotone`].
    Custom(Arc<WeightFn>),
}

impl fmt::Debug for WeightFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFamily::Indicator => f.write_str("Indicator"),
            WeightFamily::Rank => f.write_str("Rank"),
            WeightFamily::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl fmt::Display for WeightFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFamily::Indicator => f.write_str("indicator"),
            WeightFamily::Rank => f.write_str("rank"),
            WeightFamily::Custom(_) => f.write_str("custom"),
        }
    }
}

impl std::str::FromStr for WeightFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "indicator" => Ok(WeightFamily::Indicator),
            "rank" => Ok(WeightFamily::Rank),
            other => Err(Error::Parse(format!("unknown weight family `{other}`"))),
        }
    }
}

/// Budgets and critical values for one intersection size.
#[derive(Clone, Debug, Serialize)]
pub struct SizeRule {
    pub budgets: Vec<usize>,
    pub critical: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Certificate>,
    /// Components by increasing budget.
    #[serde(skip)]
    order: Vec<usize>,
}

impl SizeRule {
    pub fn new(budgets: Vec<usize>, critical: Vec<u32>, certificate: Option<Certificate>) -> Result<Self> {
        if budgets.is_empty() || budgets.len() != critical.len() {
            return Err(Error::InvalidPlan("budgets and critical values must be nonempty and of equal length".into()));
        }
        if budgets.contains(&0) {
            return Err(Error::InvalidPlan("budgets must be positive".into()));
        }
        let mut order: Vec<usize> = (0..budgets.len()).collect();
        order.sort_by_key(|&i| budgets[i]);
        Ok(Self {
            budgets,
            critical,
            certificate,
            order,
        })
    }

    pub fn m(&self) -> usize {
        self.budgets.len()
    }
}

type RuleBuilder = dyn Fn(usize) -> SizeRule + Send + Sync;

enum Rules {
    Uniform(SizeRule),
    Sized {
        cells: Vec<OnceLock<SizeRule>>,
        builder: Arc<RuleBuilder>,
    },
}

/// A family of local tests indexed by intersection size.
///
/// Size-dependent rules are built on first use and cached.
pub struct LocalTestSpec {
    family: WeightFamily,
    m: usize,
    rules: Rules,
    label: String,
}

impl fmt::Debug for LocalTestSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocalTestSpec")
            .field("family", &self.family)
            .field("m", &self.m)
            .field("label", &self.label)
            .finish()
    }
}

impl LocalTestSpec {
    /// The same budgets and critical values at every size.
    pub fn uniform(family: WeightFamily, budgets: Vec<usize>, critical: Vec<u32>) -> Result<Self> {
        let rule = SizeRule::new(budgets, critical, None)?;
        Ok(Self {
            family,
            m: rule.m(),
            rules: Rules::Uniform(rule),
            label: "uniform".into(),
        })
    }

    /// Explicit rules for sizes `1..=rules.len()`.
    pub fn per_size(family: WeightFamily, rules: Vec<SizeRule>) -> Result<Self> {
        let m = rules.first().map(SizeRule::m).ok_or_else(|| Error::InvalidPlan("no size rules".into()))?;
        if rules.iter().any(|r| r.m() != m) {
            return Err(Error::InvalidPlan("size rules differ in length".into()));
        }
        let cells = rules
            .into_iter()
            .map(|r| {
                let cell = OnceLock::new();
                let _ = cell.set(r);
                cell
            })
            .collect();
        Ok(Self {
            family,
            m,
            rules: Rules::Sized {
                cells,
                builder: Arc::new(|_| unreachable!("every size is preset")),
            },
            label: "per-size".into(),
        })
    }

    /// Rules for sizes `1..=max_size` produced on demand by `builder`.
    pub fn lazy(
        family: WeightFamily,
        m: usize,
        max_size: usize,
        builder: impl Fn(usize) -> SizeRule + Send + Sync + 'static,
    ) -> Self {
        Self {
            family,
            m,
            rules: Rules::Sized {
                cells: (0..max_size).map(|_| OnceLock::new()).collect(),
                builder: Arc::new(builder),
            },
            label: "lazy".into(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn family(&self) -> &WeightFamily {
        &self.family
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Largest supported size, `None` if unbounded.
    pub fn max_size(&self) -> Option<usize> {
        match &self.rules {
            Rules::Uniform(_) => None,
            Rules::Sized { cells, .. } => Some(cells.len()),
        }
    }

    /// Rule for intersections of size `s >= 1`.
    pub fn rule(&self, s: usize) -> &SizeRule {
        assert!(s >= 1, "size must be positive");
        match &self.rules {
            Rules::Uniform(r) => r,
            Rules::Sized { cells, builder } => {
                let cell = cells.get(s - 1).unwrap_or_else(|| panic!("size {s} exceeds {}", cells.len()));
                cell.get_or_init(|| {
                    let rule = builder(s);
                    assert_eq!(rule.m(), self.m, "size rule has wrong length");
                    rule
                })
            }
        }
    }

    /// Builds every size rule up to `max_size` now.
    pub fn warm_up(&self) {
        if let Some(n) = self.max_size() {
            for s in 1..=n {
                self.rule(s);
            }
        }
    }

    /// Sizes whose rules have been built, with the rules.
    pub fn built_rules(&self) -> Vec<(usize, &SizeRule)> {
        match &self.rules {
            Rules::Uniform(r) => vec![(0, r)],
            Rules::Sized { cells, .. } => cells
                .iter()
                .enumerate()
                .filter_map(|(i, c)| c.get().map(|r| (i + 1, r)))
                .collect(),
        }
    }

    fn is_size_free_indicator(&self) -> bool {
        matches!(self.family, WeightFamily::Indicator) && matches!(self.rules, Rules::Uniform(_))
    }

    fn check_size(&self, p: usize) -> Result<()> {
        match self.max_size() {
            Some(n) if n < p => Err(Error::InvalidPlan(format!(
                "local test covers sizes up to {n} but there are {p} hypotheses"
            ))),
            _ => Ok(()),
        }
    }

    /// Indicator test with `b_i = k_i + v_i - 1` and `z_i = k_i` at every size.
    pub fn from_plan(plan: &VKPlan) -> Result<Self> {
        let budgets = plan.v.iter().zip(&plan.k).map(|(&v, &k)| k as usize + v - 1).collect();
        let critical = plan.k.iter().map(|&k| clamp_u32(k)).collect();
        let mut rule = SizeRule::new(budgets, critical, None)?;
        rule.certificate = Some(plan.certificate.clone());
        Ok(Self {
            family: WeightFamily::Indicator,
            m: rule.m(),
            rules: Rules::Uniform(rule),
            label: format!("plan-{}", plan.family),
        })
    }

    /// Indicator test with `b_i = k_raw_i + i - 1`, `z_i = k_raw_i` for
    /// `i = 1..=p`.
    pub fn kr(alpha: f64, p: usize) -> Result<Self> {
        let plan = VKPlan::kr(alpha, p)?;
        Ok(Self::from_plan(&plan)?.with_label("kr"))
    }

    /// Indicator test with `b_i = k_i^(s) + v_i - 1`, `z_i = k_i^(s)` where
    /// `k^(s)` is the two-step plan at horizon `s`.
    ///
    /// All components are kept at every size. `k^(s)` is forced to stay
    /// componentwise at or below `k^(p)`, which makes the test reject
    /// whenever the size-free test built from `k^(p)` does.
    pub fn kct(v: &[usize], alpha: f64, delta: f64, p: usize, pool: Arc<SignPathPool>) -> Result<Self> {
        pool.check_horizon(p)?;
        let top = two_step_k(v, alpha, delta, p, &pool)?;
        let v = v.to_vec();
        let m = v.len();
        let top_k = top.k.clone();
        let spec = Self::lazy(WeightFamily::Indicator, m, p, move |s| {
            let plan = if s == p {
                top.clone()
            } else {
                kct_size_plan(&v, &top_k, alpha, delta, s, &pool)
            };
            let budgets = plan.v.iter().zip(&plan.k).map(|(&v, &k)| k as usize + v - 1).collect();
            let critical = plan.k.iter().map(|&k| clamp_u32(k)).collect();
            SizeRule::new(budgets, critical, Some(plan.certificate)).expect("two-step plans are well formed")
        });
        Ok(spec.with_label("kct"))
    }

    /// Rank-weighted test with the KCT budgets at each size and critical
    /// values calibrated on the pool.
    pub fn rank(v: &[usize], alpha: f64, delta: f64, p: usize, pool: Arc<SignPathPool>) -> Result<Self> {
        let kct = Arc::new(Self::kct(v, alpha, delta, p, pool.clone())?);
        let m = v.len();
        let spec = Self::lazy(WeightFamily::Rank, m, p, move |s| {
            let budgets = kct.rule(s).budgets.clone();
            let (critical, cert) = calibrate_critical_values(s, &WeightFamily::Rank, &budgets, alpha, &pool)
                .expect("pool covers every size");
            SizeRule::new(budgets, critical, Some(cert)).expect("budgets are positive")
        });
        Ok(spec.with_label("rank"))
    }

    /// Size-dependent test for any family with budgets from `budgets(s)` and
    /// critical values calibrated on the pool.
    pub fn calibrated(
        family: WeightFamily,
        m: usize,
        alpha: f64,
        p: usize,
        pool: Arc<SignPathPool>,
        budgets: impl Fn(usize) -> Vec<usize> + Send + Sync + 'static,
    ) -> Result<Self> {
        pool.check_horizon(p)?;
        let fam = family.clone();
        Ok(Self::lazy(family, m, p, move |s| {
            let b = budgets(s);
            let (critical, cert) = calibrate_critical_values(s, &fam, &b, alpha, &pool).expect("pool covers every size");
            SizeRule::new(b, critical, Some(cert)).expect("budgets are positive")
        })
        .with_label("calibrated"))
    }

    /// Local statistics of every component for a sign sequence in decreasing
    /// `|W|` order.
    pub fn local_stats_from_signs(&self, signs: &[bool]) -> Vec<u64> {
        let u = signs.len();
        if u == 0 {
            return vec![0; self.m];
        }
        let rule = self.rule(u);
        (0..self.m)
            .map(|i| {
                let b = rule.budgets[i].min(u);
                signs[..b]
                    .iter()
                    .enumerate()
                    .filter(|(_, &s)| s)
                    .map(|(q, _)| weight(&self.family, i, u - q, u) as u64)
                    .sum()
            })
            .collect()
    }

    /// Whether `H_I` is locally rejected, given the signs of `I` in decreasing
    /// `|W|` order and `u = |I|`.
    fn rejects_signs<It: Iterator<Item = bool>>(&self, u: usize, signs: It) -> bool {
        if u == 0 {
            return false;
        }
        let rule = self.rule(u);
        match &self.family {
            WeightFamily::Indicator | WeightFamily::Rank => {
                let rank = matches!(self.family, WeightFamily::Rank);
                let mut next = 0;
                let (mut q, mut pc, mut qs) = (0u64, 0u64, 0u64);
                for s in signs {
                    q += 1;
                    if s {
                        pc += 1;
                        qs += q;
                    }
                    while next < self.m {
                        let i = rule.order[next];
                        if rule.budgets[i].min(u) as u64 != q {
                            break;
                        }
                        let l = if rank { (u as u64 + 1) * pc - qs } else { pc };
                        if l >= rule.critical[i] as u64 {
                            return true;
                        }
                        next += 1;
                    }
                    if next == self.m {
                        break;
                    }
                }
                false
            }
            WeightFamily::Custom(_) => {
                let signs: Vec<bool> = signs.collect();
                self.local_stats_from_signs(&signs)
                    .iter()
                    .zip(&rule.critical)
                    .any(|(&l, &z)| l >= z as u64)
            }
        }
    }

    /// Local rejection of `H_I`.
    pub fn rejects(&self, stats: &PreparedStats, set: &IndexSet) -> bool {
        self.rejects_signs(set.len(), set.iter().map(|j| stats.is_positive(j)))
    }
}

fn weight(family: &WeightFamily, i: usize, rank: usize, u: usize) -> u32 {
    match family {
        WeightFamily::Indicator => 1,
        WeightFamily::Rank => rank as u32,
        WeightFamily::Custom(f) => f(i, rank, u),
    }
}

/// Checks that weights are nondecreasing in the local rank for every
/// component and intersection size up to `max_size`. Larger `|W|` must never
/// weigh less.
pub fn check_monotone(family: &WeightFamily, m: usize, max_size: usize) -> Result<()> {
    for u in 1..=max_size {
        for i in 0..m {
            for rank in 2..=u {
                let (lo, hi) = (weight(family, i, rank - 1, u), weight(family, i, rank, u));
                if hi < lo {
                    return Err(Error::InvalidPlan(format!(
                        "weight of component {i} at size {u} drops from {lo} to {hi} at local rank {rank}"
                    )));
                }
            }
        }
    }
    Ok(())
}

fn clamp_u32(x: u64) -> u32 {
    x.min(u32::MAX as u64) as u32
}

/// Two-step plan at horizon `s`, falling back to greedy tightening from the
/// full-horizon `k` when the direct result is not componentwise below it.
fn kct_size_plan(v: &[usize], top_k: &[u64], alpha: f64, delta: f64, s: usize, pool: &SignPathPool) -> VKPlan {
    let direct = two_step_k(v, alpha, delta, s, pool).expect("pool covers every size");
    if direct.k.iter().zip(top_k).all(|(a, b)| a <= b) {
        return direct;
    }
    // N^s <= N^p pathwise, so the full-horizon k is valid at s.
    let counts = pool.count_matrix(v, s).expect("pool covers every size");
    let mut limits: Vec<u32> = top_k.iter().map(|&k| clamp_u32(k)).collect();
    counts.greedy_tighten(&mut limits, required_count(alpha, pool.nsim()), |i, l| if i == 0 { 1 } else { l[i - 1] });
    let prob = counts.joint_probability(&limits);
    VKPlan::new(
        v.to_vec(),
        limits.iter().map(|&x| x as u64).collect(),
        alpha,
        s,
        "two-step-capped",
        Certificate::monte_carlo(prob, pool),
    )
    .expect("greedy output is nondecreasing")
}

/// `L_i` of component `i` on the intersection `set`.
pub fn local_stat(set: &IndexSet, stats: &PreparedStats, spec: &LocalTestSpec, i: usize) -> u64 {
    let signs: Vec<bool> = set.iter().map(|j| stats.is_positive(j)).collect();
    spec.local_stats_from_signs(&signs)[i]
}

/// Critical values for size `s` with `P(L_i <= z_i - 1 for all i) >= 1 - alpha`
/// over the first `s` signs of each pool path.
///
/// Starts from the Bonferroni point, where each component takes its marginal
/// `1 - alpha/m` quantile plus one, and then lowers `z_1, ..., z_m` in turn
/// as far as the joint count allows.
pub fn calibrate_critical_values(
    s: usize,
    family: &WeightFamily,
    budgets: &[usize],
    alpha: f64,
    pool: &SignPathPool,
) -> Result<(Vec<u32>, Certificate)> {
    assert!(s >= 1, "size must be positive");
    pool.check_horizon(s)?;
    let m = budgets.len();
    let weights: Vec<Vec<u32>> = (0..m)
        .map(|i| (0..budgets[i].min(s)).map(|q| weight(family, i, s - q, s)).collect())
        .collect();
    let stats = pool.statistic_matrix(m, |j, row| {
        for (i, w) in weights.iter().enumerate() {
            row[i] = w.iter().enumerate().filter(|&(q, _)| pool.sign(j, q)).map(|(_, &x)| x).sum();
        }
    });
    let nsim = pool.nsim();
    let marginal_need = (((1.0 - alpha / m as f64) * nsim as f64) - 1e-9).ceil() as usize;
    let mut z: Vec<u32> = (0..m)
        .map(|i| {
            let mut col: Vec<u32> = stats.column(i).collect();
            col.sort_unstable();
            let idx = marginal_need.clamp(1, nsim) - 1;
            col[idx] + 1
        })
        .collect();
    let required = required_count(alpha, nsim);
    if stats.count_accepting(&z) < required {
        // Rounding can leave the union bound a path short; never reject.
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = weights[i].iter().sum::<u32>() + 1;
        }
    }
    stats.greedy_tighten(&mut z, required, |_, _| 1);
    let prob = stats.joint_probability(&z);
    Ok((z, Certificate::monte_carlo(prob, pool)))
}

/// `pi(i)`: rank of `W_i` in increasing signed order, indexed by position.
pub fn pi_permutation(stats: &PreparedStats) -> Vec<usize> {
    let mut pi = vec![0; stats.p()];
    for (l, &pos) in pi_order(stats).iter().enumerate() {
        pi[pos - 1] = l + 1;
    }
    pi
}

/// Positions in increasing signed `W`: negatives from the largest `|W|`
/// down, then positives from the smallest `|W|` up.
fn pi_order(stats: &PreparedStats) -> Vec<usize> {
    let p = stats.p();
    (1..=p)
        .filter(|&j| !stats.is_positive(j))
        .chain((1..=p).rev().filter(|&j| stats.is_positive(j)))
        .collect()
}

/// Result of a closed-testing bound query.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CtOutcome {
    pub query: IndexSet,
    /// Size of the largest subset of the query that closed testing keeps.
    pub t_bound: u64,
    pub fdp_upper: FdpBound,
    pub witness_t: Option<usize>,
    pub witness_r: Option<usize>,
}

impl CtOutcome {
    fn new(query: IndexSet, t_bound: u64, witness: Option<(usize, usize)>) -> Self {
        let fdp_upper = FdpBound::new(t_bound, query.len());
        Self {
            query,
            t_bound,
            fdp_upper,
            witness_t: witness.map(|w| w.0),
            witness_r: witness.map(|w| w.1),
        }
    }

    pub fn true_discoveries_lower(&self) -> u64 {
        self.query.len() as u64 - self.t_bound
    }
}

/// Membership bitset over positions `1..=p`.
struct Bits {
    words: Vec<u64>,
}

impl Bits {
    fn new(p: usize) -> Self {
        Self {
            words: vec![0; p.div_ceil(64).max(1)],
        }
    }

    fn insert(&mut self, pos: usize) {
        let b = pos - 1;
        self.words[b / 64] |= 1 << (b % 64);
    }

    /// Members in increasing position order.
    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b + 1)
            })
        })
    }
}

/// Closed-testing bounds by the shortcut for one statistics vector.
///
/// For a query `R` let `B_t` be the `t` members of `R` with smallest `pi`.
/// `B_t` survives closed testing iff some `B_t ∪ C` is locally accepted,
/// where `C` is a `pi`-prefix of the complement. The `B_t` are nested, so
/// survival is monotone in `t` and the largest surviving `t` is found by
/// bisection.
pub struct Shortcut<'a> {
    stats: &'a PreparedStats,
    spec: &'a LocalTestSpec,
    order: Vec<usize>,
}

impl<'a> Shortcut<'a> {
    pub fn new(stats: &'a PreparedStats, spec: &'a LocalTestSpec) -> Result<Self> {
        spec.check_size(stats.p())?;
        Ok(Self {
            stats,
            spec,
            order: pi_order(stats),
        })
    }

    fn check_query(&self, r: &IndexSet) -> Result<Vec<usize>> {
        let p = self.stats.p();
        if let Some(&last) = r.members().last().filter(|&&x| x > p) {
            return Err(Error::PositionOutOfRange { position: last, p });
        }
        Ok(self.order.iter().copied().filter(|&j| r.contains(j)).collect())
    }

    /// Smallest extension size `r` at which `B_t ∪ C_r` is accepted.
    fn accepts(&self, in_r: &[usize], t: usize) -> Option<usize> {
        let p = self.stats.p();
        let mut in_b = vec![false; p + 1];
        let mut bits = Bits::new(p);
        for &j in &in_r[..t] {
            in_b[j] = true;
            bits.insert(j);
        }
        let outside: Vec<usize> = self.order.iter().copied().filter(|&j| !in_b[j]).collect();
        let signs = |bits: &Bits| bits.iter().map(|j| self.stats.is_positive(j)).collect::<Vec<_>>();
        if self.spec.is_size_free_indicator() {
            // Adding a negative never raises an indicator statistic and adding
            // a positive never lowers one, so the complement's negatives (a
            // pi-prefix) are the only extension worth testing.
            let negs = outside.iter().take_while(|&&j| !self.stats.is_positive(j)).count();
            for &j in &outside[..negs] {
                bits.insert(j);
            }
            let u = t + negs;
            return (!self.spec.rejects_signs(u, signs(&bits).into_iter())).then_some(negs);
        }
        for extra in 0..=outside.len() {
            if extra > 0 {
                bits.insert(outside[extra - 1]);
            }
            let u = t + extra;
            if !self.spec.rejects_signs(u, bits.iter().map(|j| self.stats.is_positive(j))) {
                return Some(extra);
            }
        }
        None
    }

    pub fn bound(&self, r: &IndexSet) -> Result<CtOutcome> {
        let in_r = self.check_query(r)?;
        let (mut lo, mut hi) = (0usize, in_r.len());
        let mut witness = None;
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            match self.accepts(&in_r, mid) {
                Some(extra) => {
                    lo = mid;
                    witness = Some((mid, extra));
                }
                None => hi = mid - 1,
            }
        }
        Ok(CtOutcome::new(r.clone(), lo as u64, witness))
    }

    /// The same bound by scanning `t = |R|, |R| - 1, ...` and every
    /// extension in turn.
    pub fn bound_linear(&self, r: &IndexSet) -> Result<CtOutcome> {
        let in_r = self.check_query(r)?;
        let p = self.stats.p();
        for t in (1..=in_r.len()).rev() {
            let mut in_b = vec![false; p + 1];
            let mut bits = Bits::new(p);
            for &j in &in_r[..t] {
                in_b[j] = true;
                bits.insert(j);
            }
            let outside: Vec<usize> = self.order.iter().copied().filter(|&j| !in_b[j]).collect();
            for extra in 0..=outside.len() {
                if extra > 0 {
                    bits.insert(outside[extra - 1]);
                }
                if !self.spec.rejects_signs(t + extra, bits.iter().map(|j| self.stats.is_positive(j))) {
                    return Ok(CtOutcome::new(r.clone(), t as u64, Some((t, extra))));
                }
            }
        }
        Ok(CtOutcome::new(r.clone(), 0, None))
    }
}

/// Closed-testing bound of `R` by the shortcut.
pub fn shortcut_bound(r: &IndexSet, stats: &PreparedStats, spec: &LocalTestSpec) -> Result<CtOutcome> {
    Shortcut::new(stats, spec)?.bound(r)
}

/// Exhaustive closed testing over all `2^p` intersections.
pub struct BruteForceCt {
    p: usize,
    /// Largest non-rejected subset size of every mask.
    largest: Vec<u8>,
}

impl BruteForceCt {
    pub const MAX_P: usize = 14;

    pub fn new(stats: &PreparedStats, spec: &LocalTestSpec) -> Result<Self> {
        let p = stats.p();
        if p > Self::MAX_P {
            return Err(Error::OracleSizeExceeded { p, max: Self::MAX_P });
        }
        spec.check_size(p)?;
        let n = 1usize << p;
        // closed[mask]: every superset is locally rejected.
        let mut closed: Vec<bool> = (0..n)
            .map(|mask| {
                let set = IndexSet::from_mask(mask as u64);
                spec.rejects(stats, &set)
            })
            .collect();
        for bit in 0..p {
            let b = 1 << bit;
            for mask in 0..n {
                if mask & b == 0 {
                    closed[mask] = closed[mask] && closed[mask | b];
                }
            }
        }
        let mut largest: Vec<u8> = (0..n)
            .map(|mask| if closed[mask] { 0 } else { (mask as u32).count_ones() as u8 })
            .collect();
        for bit in 0..p {
            let b = 1 << bit;
            for mask in 0..n {
                if mask & b != 0 {
                    largest[mask] = largest[mask].max(largest[mask ^ b]);
                }
            }
        }
        Ok(Self { p, largest })
    }

    pub fn t_bound(&self, r: &IndexSet) -> u64 {
        let mask = r.to_mask() as usize;
        assert!(mask < 1 << self.p, "query outside the ground set");
        self.largest[mask] as u64
    }

    pub fn outcome(&self, r: &IndexSet) -> CtOutcome {
        CtOutcome::new(r.clone(), self.t_bound(r), None)
    }
}

pub fn brute_force_ct(r: &IndexSet, stats: &PreparedStats, spec: &LocalTestSpec) -> Result<CtOutcome> {
    Ok(BruteForceCt::new(stats, spec)?.outcome(r))
}

/// Closed-testing bound with the per-size two-step local test for `v`.
pub fn kct_bound(
    r: &IndexSet,
    stats: &PreparedStats,
    v: &[usize],
    alpha: f64,
    pool: Arc<SignPathPool>,
) -> Result<CtOutcome> {
    let spec = LocalTestSpec::kct(v, alpha, 0.01, stats.p(), pool)?;
    shortcut_bound(r, stats, &spec)
}

/// Closed-testing bound with the size-free local test of a plan.
pub fn plan_ct_bound(r: &IndexSet, stats: &PreparedStats, plan: &VKPlan) -> Result<CtOutcome> {
    check_plan(stats, plan)?;
    shortcut_bound(r, stats, &LocalTestSpec::from_plan(plan)?)
}
