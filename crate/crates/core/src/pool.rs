//! Shared pool of simulated fair-sign paths.
//!
//! Every calibration in the crate (joint `k`-FWER plans, per-size closed
//! testing tables, local critical values) is a functional of i.i.d. fair
//! `±1` sequences. The pool stores `nsim` such sequences bit-packed, one bit
//! per step with `1` meaning `+1`, and derives per-path statistics on demand.
//! Shorter horizons reuse path prefixes.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par::{self, Execution};

#[derive(Clone, Debug)]
pub struct SignPathPool {
    nsim: usize,
    path_length: usize,
    seed: u64,
    words_per_path: usize,
    words: Vec<u64>,
    exec: Execution,
}

impl SignPathPool {
    pub fn build(nsim: usize, path_length: usize, seed: u64) -> Self {
        Self::build_with(nsim, path_length, seed, Execution::default())
    }

    pub fn build_with(nsim: usize, path_length: usize, seed: u64, exec: Execution) -> Self {
        assert!(nsim >= 1, "pool needs at least one path");
        let words_per_path = path_length.div_ceil(64).max(1);
        // A single stream keeps the pool identical across execution modes.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut words = vec![0u64; nsim * words_per_path];
        for w in &mut words {
            *w = rng.next_u64();
        }
        Self {
            nsim,
            path_length,
            seed,
            words_per_path,
            words,
            exec,
        }
    }

    /// Pool built from explicit sign sequences (`true` is `+1`).
    pub fn from_paths(paths: &[Vec<bool>]) -> Self {
        assert!(!paths.is_empty());
        let path_length = paths[0].len();
        assert!(paths.iter().all(|p| p.len() == path_length));
        let words_per_path = path_length.div_ceil(64).max(1);
        let mut words = vec![0u64; paths.len() * words_per_path];
        for (j, path) in paths.iter().enumerate() {
            for (q, &bit) in path.iter().enumerate() {
                if bit {
                    words[j * words_per_path + q / 64] |= 1 << (q % 64);
                }
            }
        }
        Self {
            nsim: paths.len(),
            path_length,
            seed: 0,
            words_per_path,
            words,
            exec: Execution::default(),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn nsim(&self) -> usize {
        self.nsim
    }

    pub fn path_length(&self) -> usize {
        self.path_length
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    fn path_words(&self, j: usize) -> &[u64] {
        &self.words[j * self.words_per_path..(j + 1) * self.words_per_path]
    }

    /// Sign at 0-based `step` of path `j`.
    pub fn sign(&self, j: usize, step: usize) -> bool {
        self.path_words(j)[step / 64] >> (step % 64) & 1 == 1
    }

    pub(crate) fn check_horizon(&self, horizon: usize) -> Result<()> {
        if horizon > self.path_length {
            Err(Error::HorizonExceedsPool {
                horizon,
                path_length: self.path_length,
            })
        } else {
            Ok(())
        }
    }

    /// Early-stopped negative binomial counts `N^horizon(v)` of path `j` for
    /// each `v` in `vs` (strictly increasing): the number of `+1`s before the
    /// `v`-th `-1`, or all `+1`s within the horizon if there are fewer.
    pub fn early_stopped_counts(&self, j: usize, vs: &[usize], horizon: usize, out: &mut [u32]) {
        debug_assert!(vs.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(horizon <= self.path_length);
        let words = self.path_words(j);
        let mut negs = 0usize;
        let mut next = 0usize;
        let mut start = 0usize;
        for &word in words {
            if next == vs.len() || start >= horizon {
                break;
            }
            let width = (horizon - start).min(64);
            let mask = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
            let mut neg_bits = !word & mask;
            let nneg = neg_bits.count_ones() as usize;
            let mut consumed = 0usize;
            while next < vs.len() && negs + nneg >= vs[next] {
                // Position of the (vs[next] - negs)-th negative in this word.
                let need = vs[next] - negs;
                while consumed + 1 < need {
                    neg_bits &= neg_bits - 1;
                    consumed += 1;
                }
                let bit = neg_bits.trailing_zeros() as usize;
                let position = start + bit + 1;
                out[next] = (position - vs[next]) as u32;
                next += 1;
            }
            negs += nneg;
            start += 64;
        }
        let total_pos = (horizon - negs.min(horizon)) as u32;
        for o in &mut out[next..vs.len()] {
            *o = total_pos;
        }
    }

    /// Positives among the first `len` steps of path `j`.
    pub fn prefix_positives(&self, j: usize, len: usize) -> u32 {
        let words = self.path_words(j);
        let full = len / 64;
        let mut c: u32 = words[..full].iter().map(|w| w.count_ones()).sum();
        let rem = len % 64;
        if rem > 0 {
            c += (words[full] & ((1u64 << rem) - 1)).count_ones();
        }
        c
    }

    /// Matrix of `N^horizon(v_i)` for every path.
    pub fn count_matrix(&self, vs: &[usize], horizon: usize) -> Result<CountMatrix> {
        self.check_horizon(horizon)?;
        let m = vs.len();
        let mut data = vec![0u32; self.nsim * m];
        if m > 0 {
            const CHUNK_PATHS: usize = 1024;
            par::for_each_chunk_mut(self.exec, &mut data, CHUNK_PATHS * m, |ci, chunk| {
                for (local, row) in chunk.chunks_mut(m).enumerate() {
                    self.early_stopped_counts(ci * CHUNK_PATHS + local, vs, horizon, row);
                }
            });
        }
        Ok(CountMatrix {
            nsim: self.nsim,
            m,
            data,
            exec: self.exec,
        })
    }

    /// Matrix with a caller-supplied per-path statistic row.
    pub fn statistic_matrix<F>(&self, m: usize, f: F) -> CountMatrix
    where
        F: Fn(usize, &mut [u32]) + Sync + Send,
    {
        let mut data = vec![0u32; self.nsim * m];
        if m > 0 {
            const CHUNK_PATHS: usize = 1024;
            par::for_each_chunk_mut(self.exec, &mut data, CHUNK_PATHS * m, |ci, chunk| {
                for (local, row) in chunk.chunks_mut(m).enumerate() {
                    f(ci * CHUNK_PATHS + local, row);
                }
            });
        }
        CountMatrix {
            nsim: self.nsim,
            m,
            data,
            exec: self.exec,
        }
    }
}

/// Per-path statistics, one row of `m` values per path.
#[derive(Clone, Debug)]
pub struct CountMatrix {
    nsim: usize,
    m: usize,
    data: Vec<u32>,
    exec: Execution,
}

impl CountMatrix {
    pub fn nsim(&self) -> usize {
        self.nsim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row(&self, j: usize) -> &[u32] {
        &self.data[j * self.m..(j + 1) * self.m]
    }

    pub fn column(&self, i: usize) -> impl Iterator<Item = u32> + '_ {
        (0..self.nsim).map(move |j| self.data[j * self.m + i])
    }

    /// Paths whose row satisfies `row[i] <= limits[i] - 1` for all `i`.
    pub fn count_accepting(&self, limits: &[u32]) -> usize {
        assert_eq!(limits.len(), self.m);
        par::count_where(self.exec, self.nsim, |j| {
            self.row(j).iter().zip(limits).all(|(&x, &k)| x < k)
        })
    }

    pub fn joint_probability(&self, limits: &[u32]) -> f64 {
        self.count_accepting(limits) as f64 / self.nsim as f64
    }

    /// Greedy tightening in increasing component order.
    ///
    /// `limits` must already satisfy `count_accepting(limits) >= required`.
    /// For each `i`, `limits[i]` is replaced by the smallest value in
    /// `[floor(i, limits), limits[i]]` that keeps the count at or above
    /// `required`, holding every other component fixed. Returns the number of
    /// components where the floor, not the count, determined the value.
    pub fn greedy_tighten<F>(&self, limits: &mut [u32], required: usize, floor: F) -> usize
    where
        F: Fn(usize, &[u32]) -> u32,
    {
        assert_eq!(limits.len(), self.m);
        let mut violations: Vec<u32> = (0..self.nsim)
            .map(|j| {
                self.row(j)
                    .iter()
                    .zip(limits.iter())
                    .filter(|(&x, &k)| x >= k)
                    .count() as u32
            })
            .collect();
        let mut floor_binds = 0;
        for i in 0..self.m {
            let current = limits[i];
            // Histogram of the statistic among paths that pass every other
            // component.
            let mut hist = vec![0usize; current as usize];
            for (j, &v) in violations.iter().enumerate() {
                let x = self.data[j * self.m + i];
                // Paths at or above `current` stay rejected for any smaller limit.
                if x < current && v == 0 {
                    hist[x as usize] += 1;
                }
            }
            // Smallest k with #{x <= k - 1} >= required.
            let mut cum = 0usize;
            let mut best = current;
            for k in 1..=current {
                cum += hist[(k - 1) as usize];
                if cum >= required {
                    best = k;
                    break;
                }
            }
            let lo = floor(i, limits);
            let chosen = if best < lo {
                floor_binds += 1;
                lo.min(current)
            } else {
                best
            };
            if chosen != current {
                for (j, v) in violations.iter_mut().enumerate() {
                    let x = self.data[j * self.m + i];
                    let before = (x >= current) as u32;
                    let after = (x >= chosen) as u32;
                    *v = *v - before + after;
                }
                limits[i] = chosen;
            }
        }
        floor_binds
    }
}

/// Smallest path count that certifies probability `>= 1 - alpha` on `nsim` paths.
pub fn required_count(alpha: f64, nsim: usize) -> usize {
    (((1.0 - alpha) * nsim as f64) - 1e-9).ceil().max(0.0) as usize
}
