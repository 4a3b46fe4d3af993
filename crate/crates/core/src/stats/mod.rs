//! Statistical kernels: histograms, moments, two-sample KS, KL divergence.

mod histogram;
mod kl;
mod ks;
mod moments;

pub use histogram::{comparison_range, histogram, joint_range, smoothed_mass_into, BinLayout, EmpiricalDistribution};
pub use kl::{kl_divergence, kl_masses};
pub use ks::{kolmogorov_survival, ks_two_sample, KsOutcome};
pub use moments::{mean, moment_match, variance};
