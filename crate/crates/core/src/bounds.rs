//! Simultaneous FDP upper bounds by interpolation of k-FWER reference sets.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::calibration::{c_alpha, scaled_floor, Certificate, VKPlan};
use crate::error::{Error, Result};
use crate::stats::{IndexSet, PreparedStats};

/// Exact FDP bound `numerator / max(1, |R|)`.
///
/// The numerator bounds the number of false discoveries in the query and
/// lies in `0..=|R|`. Equality, ordering and hashing compare the ratio.
#[derive(Clone, Copy, Debug)]
pub struct FdpBound {
    numerator: u64,
    denominator: u64,
}

impl FdpBound {
    /// `false_discoveries` is clamped to `size`.
    pub fn new(false_discoveries: u64, size: usize) -> Self {
        let size = size as u64;
        Self {
            numerator: false_discoveries.min(size),
            denominator: size.max(1),
        }
    }

    pub fn numerator(&self) -> u64 {
        self.numerator
    }

    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    pub fn value(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

impl Ord for FdpBound {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.numerator as u128 * other.denominator as u128)
            .cmp(&(other.numerator as u128 * self.denominator as u128))
    }
}

impl PartialEq for FdpBound {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for FdpBound {}

impl std::hash::Hash for FdpBound {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        let g = gcd(self.numerator, self.denominator);
        (self.numerator / g, self.denominator / g).hash(state);
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl PartialOrd for FdpBound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for FdpBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

#[derive(Serialize, Deserialize)]
struct FdpBoundWire {
    numerator: u64,
    denominator: u64,
    #[serde(default)]
    value: f64,
}

impl Serialize for FdpBound {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FdpBoundWire {
            numerator: self.numerator,
            denominator: self.denominator,
            value: self.value(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FdpBound {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = FdpBoundWire::deserialize(d)?;
        if w.denominator == 0 || w.numerator > w.denominator {
            return Err(serde::de::Error::custom("bound must satisfy 0 <= numerator <= denominator, denominator >= 1"));
        }
        Ok(Self {
            numerator: w.numerator,
            denominator: w.denominator,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    JS,
    KJI,
    KR,
    KCT,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::JS => "js",
            Method::KJI => "kji",
            Method::KR => "kr",
            Method::KCT => "kct",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "js" => Ok(Method::JS),
            "kji" => Ok(Method::KJI),
            "kr" => Ok(Method::KR),
            "kct" => Ok(Method::KCT),
            other => Err(Error::Parse(format!("unknown method `{other}`"))),
        }
    }
}

/// Bound on one query with the component that achieved it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub query: IndexSet,
    pub fdp_upper: FdpBound,
    pub true_discoveries_lower: u64,
    /// Zero-based plan component for JS/KJI, position `i` for KR, the
    /// accepting `t` for KCT. `None` when the trivial bound `|R|` won.
    pub witness: Option<usize>,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Certificate>,
}

impl BoundReport {
    pub fn new(query: IndexSet, false_discoveries: u64, witness: Option<usize>, method: Method) -> Self {
        let fdp_upper = FdpBound::new(false_discoveries, query.len());
        let true_discoveries_lower = query.len() as u64 - fdp_upper.numerator();
        Self {
            query,
            fdp_upper,
            true_discoveries_lower,
            witness,
            method,
            certificate: None,
        }
    }

    pub fn with_certificate(mut self, certificate: Certificate) -> Self {
        self.certificate = Some(certificate);
        self
    }
}

/// `min{|R|, k - 1 + |R \ S|} / max{1, |R|}`.
pub fn interpolation_bound(r: &IndexSet, s: &IndexSet, k: u64) -> FdpBound {
    let outside = r.iter().filter(|&j| !s.contains(j)).count() as u64;
    FdpBound::new((k - 1).saturating_add(outside), r.len())
}

/// Interpolated single-`k` bound with `S = S(v_JS(k))`.
pub fn js_bound(stats: &PreparedStats, k: u64, alpha: f64, r: &IndexSet) -> Result<BoundReport> {
    let plan = VKPlan::js(k, alpha, stats.p())?;
    let mut report = kji_bound(stats, &plan, r)?;
    report.method = Method::JS;
    Ok(report)
}

/// Minimum of the interpolation bounds over the plan components.
pub fn kji_bound(stats: &PreparedStats, plan: &VKPlan, r: &IndexSet) -> Result<BoundReport> {
    check_plan(stats, plan)?;
    let (fd, witness) = kji_false_discoveries(stats, &plan.v, &plan.k, r);
    Ok(BoundReport::new(r.clone(), fd, witness, Method::KJI).with_certificate(plan.certificate.clone()))
}

pub(crate) fn check_plan(stats: &PreparedStats, plan: &VKPlan) -> Result<()> {
    if plan.horizon_p != stats.p() {
        return Err(Error::PlanMismatch {
            plan_p: plan.horizon_p,
            stats_p: stats.p(),
        });
    }
    Ok(())
}

/// `min_i min{|R|, k_i - 1 + |R \ S(v_i)|}` in one sweep over `R`.
pub(crate) fn kji_false_discoveries(
    stats: &PreparedStats,
    v: &[usize],
    k: &[u64],
    r: &IndexSet,
) -> (u64, Option<usize>) {
    let size = r.len() as u64;
    let members = r.members();
    let mut best = size;
    let mut witness = None;
    let mut ptr = 0;
    let mut inside = 0u64;
    // Reference sets grow with v, so |R ∩ S(v_i)| is a running count.
    for (i, (&vi, &ki)) in v.iter().zip(k).enumerate() {
        let cut = stats.cut(vi);
        while ptr < members.len() && members[ptr] < cut {
            inside += stats.is_positive(members[ptr]) as u64;
            ptr += 1;
        }
        let cand = (ki - 1).saturating_add(size - inside);
        if cand < best {
            best = cand;
            witness = Some(i);
        }
    }
    (best, witness)
}

/// Interpolated bound `min_i{|R|, |R \ Ŝ_i| + floor(c(alpha)(1 + i - |Ŝ_i|))}`.
pub fn kr_bound(stats: &PreparedStats, alpha: f64, r: &IndexSet) -> BoundReport {
    let (fd, witness) = kr_false_discoveries(stats, c_alpha(alpha), r);
    BoundReport::new(r.clone(), fd, witness, Method::KR).with_certificate(Certificate::exact(1.0 - alpha))
}

pub(crate) fn kr_false_discoveries(stats: &PreparedStats, c: f64, r: &IndexSet) -> (u64, Option<usize>) {
    let size = r.len() as u64;
    let members = r.members();
    let outside_all = members.iter().filter(|&&j| !stats.is_positive(j)).count() as u64;
    let mut best = size;
    let mut witness = None;
    let mut ptr = 0;
    let mut inside = 0u64;
    let mut negatives = 0u64;
    for i in 1..=stats.p() {
        if stats.is_positive(i) {
            while ptr < members.len() && members[ptr] <= i {
                inside += stats.is_positive(members[ptr]) as u64;
                ptr += 1;
            }
        } else {
            negatives += 1;
            // Every later term is at least this.
            if scaled_floor(c, 1 + negatives) + outside_all >= best {
                break;
            }
            continue;
        }
        let cand = (size - inside) + scaled_floor(c, 1 + negatives);
        if cand < best {
            best = cand;
            witness = Some(i);
        }
    }
    (best, witness)
}

/// `max_{U ⊆ I} d(U) - |U \ R| + d(R \ U)` for a set function tabulated over
/// bitmasks of a ground set of at most 20 elements.
pub fn general_interpolation(d: &[i64], r: u32) -> i64 {
    assert!(d.len().is_power_of_two() && d.len() <= 1 << 20);
    let mut best = i64::MIN;
    for u in 0..d.len() as u32 {
        let cand = d[u as usize] - (u & !r).count_ones() as i64 + d[(r & !u) as usize];
        best = best.max(cand);
    }
    best
}

/// Bounds on every nested set `R_1, ..., R_p` for a plan, in `O(p (m + 1))`.
pub fn kji_nested_curve(stats: &PreparedStats, plan: &VKPlan) -> Result<Vec<FdpBound>> {
    check_plan(stats, plan)?;
    let cuts: Vec<usize> = plan.v.iter().map(|&v| stats.cut(v)).collect();
    let mut out = Vec::with_capacity(stats.p());
    let mut positives = 0u64;
    // |R_i ∩ S(v_l)| = positives below min(i + 1, cut_l).
    let mut pos_prefix = vec![0u64; stats.p() + 2];
    for i in 1..=stats.p() {
        pos_prefix[i] = pos_prefix[i - 1] + stats.is_positive(i) as u64;
    }
    pos_prefix[stats.p() + 1] = pos_prefix[stats.p()];
    for i in 1..=stats.p() {
        positives += stats.is_positive(i) as u64;
        let mut best = positives;
        for (l, &cut) in cuts.iter().enumerate() {
            let inside = pos_prefix[(cut - 1).min(i)];
            best = best.min((plan.k[l] - 1).saturating_add(positives - inside));
        }
        out.push(FdpBound::new(best, positives as usize));
    }
    Ok(out)
}
