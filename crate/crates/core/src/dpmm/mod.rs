//! Dirichlet process mixtures: hybrid, collapsed and uncollapsed samplers plus
//! an exact enumeration oracle for small data sets.

pub mod collapsed;
pub mod hybrid;
pub mod oracle;
pub mod uncollapsed;

pub use collapsed::CollapsedMixture;
pub use hybrid::{dpmm_assign_logprobs, mixture_assign_logprobs, MixtureGlobal, MixtureHybrid, MixtureShard};
pub use oracle::{exact_partition_posterior, exact_py_partition_posterior, total_variation, Partition};
pub use uncollapsed::UncollapsedDpmm;

/// Relabel in order of first occurrence, so equal partitions compare equal.
pub fn canonical_partition(labels: &[usize]) -> Vec<u32> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len() as u32;
            *map.entry(*l).or_insert(next)
        })
        .collect()
}
