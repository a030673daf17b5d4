//! Synthetic EEG-like data: per-channel AR(2) processes with a
//! class-dependent mean shift. A cheap stand-in for clinical recordings
//! with realistic autocorrelation, used for desk-scale runs and tests.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{assemble, Group, InstanceTable, Recording, CHANNELS_10_20};
use crate::rng::{next_normal, purpose, stream};

#[derive(Clone, Copy, Debug)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub n_features: usize,
    /// Per-channel difference between the class means.
    pub class_separation: f64,
    /// Innovation standard deviation of the AR(2) process.
    pub noise: f64,
    pub seed: u64,
    /// AR(2) coefficients; the default (1.5, -0.8) is stationary.
    pub ar_coefficients: (f64, f64),
}

impl SynthConfig {
    pub fn new(n_per_class: usize, n_features: usize, class_separation: f64, noise: f64, seed: u64) -> Self {
        SynthConfig {
            n_per_class,
            n_features,
            class_separation,
            noise,
            seed,
            ar_coefficients: (1.5, -0.8),
        }
    }
}

const BURN_IN: usize = 64;

/// Two recordings (ADHD first, then Control) of `n_per_class` samples each.
/// Channel `c` of class `k` is an independent AR(2) stream, shifted by
/// `+separation/2` for ADHD rows and `-separation/2` for Control rows.
pub fn synth_recordings(cfg: &SynthConfig) -> Vec<Recording> {
    assert!(cfg.n_per_class > 0 && cfg.n_features > 0, "counts must be positive");
    assert!(cfg.noise >= 0.0, "noise must be non-negative");
    let channels: Vec<String> = if cfg.n_features == CHANNELS_10_20.len() {
        CHANNELS_10_20.iter().map(|s| String::from(*s)).collect()
    } else {
        (0..cfg.n_features).map(|i| format!("ch{:02}", i + 1)).collect()
    };
    let (a1, a2) = cfg.ar_coefficients;
    let mut recordings = Vec::with_capacity(2);
    for (class_idx, group) in [(0u64, Group::Adhd), (1u64, Group::Control)] {
        let shift = match group {
            Group::Adhd => cfg.class_separation / 2.0,
            Group::Control => -cfg.class_separation / 2.0,
        };
        let mut samples = alloc::vec![0.0; cfg.n_per_class * cfg.n_features];
        for c in 0..cfg.n_features {
            let mut rng = stream(cfg.seed, purpose::SYNTH, class_idx * cfg.n_features as u64 + c as u64);
            let mut prev = 0.0;
            let mut prev2 = 0.0;
            for t in 0..BURN_IN + cfg.n_per_class {
                let x = a1 * prev + a2 * prev2 + cfg.noise * next_normal(&mut rng);
                prev2 = prev;
                prev = x;
                if t >= BURN_IN {
                    samples[(t - BURN_IN) * cfg.n_features + c] = x + shift;
                }
            }
        }
        recordings.push(
            Recording::new(
                format!("synth-{}", group.name().to_lowercase()),
                group,
                128.0,
                channels.clone(),
                samples,
            )
            .expect("synthetic recording is well-formed"),
        );
    }
    recordings
}

/// [`synth_recordings`] assembled into one table, ADHD rows first.
pub fn synth_generate(cfg: &SynthConfig) -> InstanceTable {
    assemble(&synth_recordings(cfg)).expect("synthetic recordings share channels")
}
