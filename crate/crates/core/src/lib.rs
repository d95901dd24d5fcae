//! Simultaneous false discovery proportion (FDP) bounds for knockoff statistics.
//!
//! The crate takes a vector of knockoff statistics `W` and produces FDP upper
//! bounds that hold simultaneously over every subset of hypotheses:
//!
//! * [`bounds`] evaluates the single-`k` interpolation bound (JS), the joint
//!   `k`-FWER interpolation bound (KJI) and the interpolated Katsevich–Ramdas
//!   bound (KR).
//! * [`calibration`] produces `(v, k)` plans: exact negative binomial tails,
//!   the closed form `k_raw`, the four `v` families and the two-step Monte
//!   Carlo refinement over a shared [`pool::SignPathPool`].
//! * [`closed_testing`] implements closed testing with multi-weighted-sum
//!   local tests, the polynomial shortcut and a brute-force oracle.
//! * [`sim`] generates coin-flip valid statistics and runs coverage and
//!   comparison experiments.
//!
//! Positions are 1-based everywhere in the public API: position 1 is the
//! statistic with the largest `|W|`.

pub mod bounds;
pub mod calibration;
pub mod closed_testing;
pub mod error;
pub mod io;
pub mod par;
pub mod pool;
pub mod selftest;
pub mod sim;
pub mod stats;

pub use bounds::{BoundReport, FdpBound, Method};
pub use calibration::{Certificate, VFamily, VKPlan};
pub use closed_testing::{BruteForceCt, CtOutcome, LocalTestSpec, SizeRule, WeightFamily};
pub use error::{Error, Result};
pub use par::Execution;
pub use pool::SignPathPool;
pub use stats::{IndexSet, PreparedStats, RawStats, TieBreak};
