//! Small exhaustive cross-checks between independent evaluations.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds::{kji_bound, kr_bound};
use crate::calibration::{k_raw, k_raw_by_min, Certificate, VKPlan};
use crate::closed_testing::{shortcut_bound, BruteForceCt, LocalTestSpec};
use crate::error::Result;
use crate::pool::SignPathPool;
use crate::stats::{IndexSet, PreparedStats};

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub mismatches: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelfTestReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.mismatches == 0)
    }
}

/// Signs with a denser positive block at the top, so bounds are not trivial.
pub fn random_signs(p: usize, rng: &mut impl Rng) -> Vec<bool> {
    (0..p).map(|i| rng.random_bool(if i < p / 2 { 0.8 } else { 0.5 })).collect()
}

fn all_subsets(p: usize) -> impl Iterator<Item = IndexSet> {
    (0u64..1 << p).map(IndexSet::from_mask)
}

/// Runs every check on `draws` random sign vectors of length `p <= 12`.
pub fn run_selftest(seed: u64, p: usize, draws: usize) -> Result<SelfTestReport> {
    assert!((1..=12).contains(&p), "self-test sizes are limited to p <= 12");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = 0.05;
    let pool = Arc::new(SignPathPool::build(20_000, p, seed));
    let mut checks = Vec::new();
    let mut record = |name: &str, cases: usize, mismatches: usize| {
        checks.push(CheckResult {
            name: name.to_string(),
            cases,
            mismatches,
        })
    };

    let v_all: Vec<usize> = (1..=p).collect();
    let kr_plan = VKPlan::new(v_all.clone(), k_raw(&v_all, alpha), alpha, p, "kr", Certificate::exact(1.0 - alpha))?;
    let kr_spec = LocalTestSpec::kr(alpha, p)?;
    let v_b = crate::calibration::VFamily::new(crate::calibration::VKind::B, p.max(2)).values();
    let plan_b = crate::calibration::two_step_k(&v_b, alpha, 0.01, p, &pool)?;
    let plan_spec = LocalTestSpec::from_plan(&plan_b)?;
    let kct_spec = LocalTestSpec::kct(&v_b, alpha, 0.01, p, pool.clone())?;
    let rank_spec = LocalTestSpec::rank(&v_b, alpha, 0.01, p, pool.clone())?;

    let (mut kr_cases, mut kr_bad) = (0, 0);
    let (mut t1_cases, mut t1_bad) = (0, 0);
    let (mut c1_bad, mut bf_cases, mut bf_bad) = (0, 0, 0);
    for _ in 0..draws {
        let stats = PreparedStats::from_signs(&random_signs(p, &mut rng))?;
        let bfs = [
            BruteForceCt::new(&stats, &plan_spec)?,
            BruteForceCt::new(&stats, &kct_spec)?,
            BruteForceCt::new(&stats, &rank_spec)?,
        ];
        let specs = [&plan_spec, &kct_spec, &rank_spec];
        for r in all_subsets(p) {
            let kr = kr_bound(&stats, alpha, &r).fdp_upper;
            kr_cases += 1;
            kr_bad += (kr != kji_bound(&stats, &kr_plan, &r)?.fdp_upper) as usize;
            c1_bad += (kr != shortcut_bound(&r, &stats, &kr_spec)?.fdp_upper) as usize;
            t1_cases += 1;
            t1_bad += (kji_bound(&stats, &plan_b, &r)?.fdp_upper != shortcut_bound(&r, &stats, &plan_spec)?.fdp_upper)
                as usize;
            for (bf, spec) in bfs.iter().zip(specs) {
                bf_cases += 1;
                bf_bad += (bf.t_bound(&r) != shortcut_bound(&r, &stats, spec)?.t_bound) as usize;
            }
        }
    }
    record("kr equals kji with raw k", kr_cases, kr_bad);
    record("shortcut with plan test equals kji", t1_cases, t1_bad);
    record("shortcut with kr test equals kr", kr_cases, c1_bad);
    record("shortcut equals brute force", bf_cases, bf_bad);

    let v: Vec<usize> = (1..=1000).collect();
    let bad = [0.01, 0.05, 0.1, 0.2]
        .iter()
        .filter(|&&a| k_raw(&v, a) != k_raw_by_min(&v, a))
        .count();
    record("k_raw closed form equals minimisation", 4, bad);

    let (cases, bad) = event_identities(p);
    record("early-stopped count events", cases, bad);
    Ok(SelfTestReport { seed, checks })
}

/// Checks `N(v) >= k <=> B(k+v-1) >= k` and `N(v) <= k-1 <=> B(k+v-1) <= k-1`
/// on every sign sequence of length `p`.
pub fn event_identities(p: usize) -> (usize, usize) {
    let (mut cases, mut bad) = (0, 0);
    for mask in 0u32..1 << p {
        let plus = |i: usize| mask >> i & 1 == 1;
        for v in 1..=p {
            let mut negs = 0;
            let mut n = 0;
            for i in 0..p {
                if plus(i) {
                    n += 1;
                } else {
                    negs += 1;
                    if negs == v {
                        break;
                    }
                }
            }
            for k in 1..=p {
                let len = (k + v - 1).min(p);
                let b = (0..len).filter(|&i| plus(i)).count();
                cases += 1;
                if (n >= k) != (b >= k) || (n < k) != (b < k) {
                    bad += 1;
                }
            }
        }
    }
    (cases, bad)
}
