//! Parallel tree growing. Each tree's randomness is keyed by its index,
//! so any thread count yields the identical forest; trees assemble in
//! index order.

use rayon::prelude::*;

use ssrepl_core::dataset::InstanceTable;
use ssrepl_core::forest::{fit_tree, Forest, ForestConfig, ForestError};

/// Grow the forest on `threads` workers (0 = default pool size).
pub fn fit_forest_parallel(
    table: &InstanceTable,
    cfg: &ForestConfig,
    threads: usize,
) -> Result<Forest, ForestError> {
    let counts = table.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(ForestError::SingleClass);
    }
    let build = || {
        (0..cfg.n_estimators)
            .into_par_iter()
            .map(|i| fit_tree(table, cfg, i))
            .collect::<Vec<_>>()
    };
    let trees = if threads == 0 {
        build()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        pool.install(build)
    };
    Ok(Forest::from_trees(*cfg, table.n_features(), trees))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ssrepl_core::dataset::{synth_generate, SynthConfig};
    use ssrepl_core::forest::fit_forest;

    #[test]
    fn thread_count_does_not_change_the_forest() {
        let table = synth_generate(&SynthConfig::new(120, 6, 2.0, 1.0, 21));
        let cfg = ForestConfig {
            n_estimators: 16,
            ..ForestConfig::default()
        };
        let sequential = fit_forest(&table, &cfg).unwrap();
        let one = fit_forest_parallel(&table, &cfg, 1).unwrap();
        let eight = fit_forest_parallel(&table, &cfg, 8).unwrap();
        assert_eq!(sequential, one);
        assert_eq!(one, eight);
    }
}
