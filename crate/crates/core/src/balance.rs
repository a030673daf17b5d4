//! SMOTE: synthesize minority rows by interpolating toward k-nearest
//! minority neighbors until the class counts are equal.

use alloc::vec::Vec;

use core::fmt;

use rand::Rng;

use crate::dataset::InstanceTable;
use crate::rng::{purpose, stream};

#[derive(Clone, Copy, Debug)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig {
            k_neighbors: 5,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SmoteError {
    TooFewMinority { count: usize },
    KTooLarge { k: usize, rows: usize },
}

impl fmt::Display for SmoteError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SmoteError::TooFewMinority { count } => {
                write!(f, "minority class has {count} rows, need at least 2")
            }
            SmoteError::KTooLarge { k, rows } => {
                write!(f, "k = {k} but only {rows} rows available")
            }
        }
    }
}

impl core::error::Error for SmoteError {}

/// For each row of `rows` (a flat `n x f` matrix), the indices of its `k`
/// nearest other rows by Euclidean distance, nearest first, distance ties
/// broken by lower index.
pub fn minority_neighbors(
    rows: &[f64],
    n_features: usize,
    k: usize,
) -> Result<Vec<Vec<usize>>, SmoteError> {
    let n = rows.len() / n_features.max(1);
    if k >= n {
        return Err(SmoteError::KTooLarge { k, rows: n });
    }
    let row = |i: usize| &rows[i * n_features..(i + 1) * n_features];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut dists: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d = row(i)
                    .iter()
                    .zip(row(j))
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<f64>();
                (d, j)
            })
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.push(dists.iter().take(k).map(|&(_, j)| j).collect());
    }
    Ok(out)
}

/// Oversample the minority class to exact balance. Synthetic rows are
/// `x_i + delta * (x_nn - x_i)` with `delta ~ U[0,1)` and `x_nn` one of
/// `x_i`'s k nearest minority neighbors. Original rows are preserved
/// verbatim as a prefix of the output; an already balanced table is
/// returned unchanged. Neighbor choice and delta draw use independent
/// seeded streams.
pub fn smote(train: &InstanceTable, cfg: &SmoteConfig) -> Result<InstanceTable, SmoteError> {
    assert!(cfg.k_neighbors >= 1, "k_neighbors must be at least 1");
    let counts = train.class_counts();
    if counts[0] == counts[1] {
        return Ok(train.clone());
    }
    let minority_label: u8 = if counts[1] < counts[0] { 1 } else { 0 };
    let minority_count = counts[minority_label as usize];
    let majority_count = counts[1 - minority_label as usize];
    if minority_count < 2 {
        return Err(SmoteError::TooFewMinority {
            count: minority_count,
        });
    }

    let f = train.n_features();
    let minority_idx: Vec<usize> = (0..train.n_rows())
        .filter(|&i| train.labels()[i] == minority_label)
        .collect();
    let mut minority_rows = Vec::with_capacity(minority_count * f);
    for &i in &minority_idx {
        minority_rows.extend_from_slice(train.row(i));
    }
    let k = cfg.k_neighbors.min(minority_count - 1);
    let neighbors = minority_neighbors(&minority_rows, f, k)?;

    let mut neighbor_rng = stream(cfg.seed, purpose::SMOTE_NEIGHBOR, 0);
    let mut delta_rng = stream(cfg.seed, purpose::SMOTE_DELTA, 0);

    let mut out = train.clone();
    let need = majority_count - minority_count;
    let base_row = |m: usize| &minority_rows[m * f..(m + 1) * f];
    let mut synthetic = Vec::with_capacity(f);
    for j in 0..need {
        // round-robin over minority rows in their original order
        let base = j % minority_count;
        let nn = neighbors[base][neighbor_rng.gen_range(0..k)];
        let delta: f64 = delta_rng.gen();
        synthetic.clear();
        synthetic.extend(
            base_row(base)
                .iter()
                .zip(base_row(nn))
                .map(|(&a, &b)| a + delta * (b - a)),
        );
        out.push_row(&synthetic, minority_label);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn table(minority: &[&[f64]], majority: &[&[f64]], minority_label: u8) -> InstanceTable {
        let f = minority[0].len();
        let names = (0..f).map(|i| format!("f{i}")).collect();
        let mut t = InstanceTable::empty(names);
        for row in minority {
            t.push_row(row, minority_label);
        }
        for row in majority {
            t.push_row(row, 1 - minority_label);
        }
        t
    }

    #[test]
    fn balanced_table_is_returned_unchanged() {
        let t = table(&[&[0.0], &[1.0]], &[&[2.0], &[3.0]], 1);
        let out = smote(&t, &SmoteConfig::default()).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn two_point_minority_interpolates_on_the_segment() {
        let t = table(
            &[&[0.0, 0.0], &[1.0, 1.0]],
            &[&[9.0, 9.0], &[9.1, 9.0], &[9.2, 9.0], &[9.3, 9.0]],
            1,
        );
        let out = smote(
            &t,
            &SmoteConfig {
                k_neighbors: 1,
                seed: 7,
            },
        )
        .unwrap();
        assert_eq!(out.class_counts(), [4, 4]);
        for i in 6..8 {
            let row = out.row(i);
            assert_eq!(out.labels()[i], 1);
            assert!((row[0] - row[1]).abs() < 1e-12, "off the diagonal: {row:?}");
            assert!((0.0..1.0).contains(&row[0]), "outside the open segment: {row:?}");
        }
    }

    #[test]
    fn equalizes_100_vs_300() {
        let mut rng = stream(3, purpose::SYNTH, 1);
        let mut t = InstanceTable::empty(vec!["a".into(), "b".into()]);
        for i in 0..400 {
            let label = u8::from(i < 100);
            t.push_row(&[rng.gen::<f64>(), rng.gen::<f64>()], label);
        }
        let out = smote(&t, &SmoteConfig::default()).unwrap();
        assert_eq!(out.class_counts(), [300, 300]);
        // originals are a verbatim prefix
        assert_eq!(&out.features()[..t.features().len()], t.features());
        assert_eq!(&out.labels()[..400], t.labels());
        assert!(out.labels()[400..].iter().all(|&l| l == 1));
    }

    #[test]
    fn smote_is_deterministic() {
        let t = table(
            &[&[0.0], &[1.0], &[2.0]],
            &[&[5.0], &[6.0], &[7.0], &[8.0], &[9.0]],
            0,
        );
        let cfg = SmoteConfig {
            k_neighbors: 2,
            seed: 11,
        };
        assert_eq!(smote(&t, &cfg).unwrap(), smote(&t, &cfg).unwrap());
    }

    #[test]
    fn rejects_tiny_minority() {
        let t = table(&[&[0.0]], &[&[1.0], &[2.0]], 1);
        assert_eq!(
            smote(&t, &SmoteConfig::default()).unwrap_err(),
            SmoteError::TooFewMinority { count: 1 }
        );
    }

    #[test]
    fn neighbors_collinear_with_tie_break() {
        // points at 0, 1, 2, 10: the tie at point 1 resolves to index 0
        let rows = [0.0, 1.0, 2.0, 10.0];
        let nn = minority_neighbors(&rows, 1, 1).unwrap();
        assert_eq!(nn, vec![vec![1], vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn neighbors_k_equals_n_minus_one_is_fully_sorted() {
        let rows = [0.0, 3.0, 4.5, 10.0];
        let nn = minority_neighbors(&rows, 1, 3).unwrap();
        assert_eq!(nn[0], vec![1, 2, 3]);
        assert_eq!(nn[3], vec![2, 1, 0]);
    }

    #[test]
    fn neighbors_prefer_duplicates() {
        let rows = [1.0, 5.0, 1.0, 2.0];
        let nn = minority_neighbors(&rows, 1, 1).unwrap();
        assert_eq!(nn[0], vec![2]);
        assert_eq!(nn[2], vec![0]);
    }

    #[test]
    fn neighbors_reject_large_k() {
        let rows = [0.0, 1.0];
        assert_eq!(
            minority_neighbors(&rows, 1, 2).unwrap_err(),
            SmoteError::KTooLarge { k: 2, rows: 2 }
        );
    }

    /// Brute-force re-derivation: every synthetic row must reconstruct as
    /// x_i + delta (x_nn - x_i) with delta in [0,1) for some minority row
    /// and one of its k nearest neighbors.
    #[test]
    fn synthetic_rows_reconstruct_geometrically() {
        let mut rng = stream(5, purpose::SYNTH, 2);
        let f = 6;
        let mut t = InstanceTable::empty((0..f).map(|i| format!("f{i}")).collect());
        for i in 0..90 {
            let label = u8::from(i < 30);
            let row: Vec<f64> = (0..f).map(|_| rng.gen::<f64>() * 4.0).collect();
            t.push_row(&row, label);
        }
        let cfg = SmoteConfig {
            k_neighbors: 5,
            seed: 99,
        };
        let out = smote(&t, &cfg).unwrap();
        assert_eq!(out.class_counts(), [60, 60]);

        let minority: Vec<&[f64]> = (0..t.n_rows())
            .filter(|&i| t.labels()[i] == 1)
            .map(|i| t.row(i))
            .collect();
        let flat: Vec<f64> = minority.iter().flat_map(|r| r.iter().copied()).collect();
        let nn = minority_neighbors(&flat, f, 5).unwrap();

        for s in t.n_rows()..out.n_rows() {
            let row = out.row(s);
            let mut ok = false;
            'outer: for (i, base) in minority.iter().enumerate() {
                for &j in &nn[i] {
                    if let Some(delta) = recover_delta(base, minority[j], row) {
                        if (0.0..1.0).contains(&delta) {
                            ok = true;
                            break 'outer;
                        }
                    }
                }
            }
            assert!(ok, "row {s} does not reconstruct");
        }
    }

    fn recover_delta(base: &[f64], nn: &[f64], synth: &[f64]) -> Option<f64> {
        let mut delta = None;
        for ((&a, &b), &s) in base.iter().zip(nn).zip(synth) {
            let span = b - a;
            if span.abs() > 1e-12 {
                let d = (s - a) / span;
                match delta {
                    None => delta = Some(d),
                    Some(prev) if (prev - d).abs() > 1e-9 => return None,
                    _ => {}
                }
            } else if (s - a).abs() > 1e-9 {
                return None;
            }
        }
        delta
    }
}
