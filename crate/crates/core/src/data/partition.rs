use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::TabularDataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionScheme {
    /// Consecutive, near-equal column blocks. When spurious flags are known,
    /// original and spurious columns are each divided evenly, so every party
    /// receives its share of both.
    EvenContiguous { parties: usize },
    /// Explicit global column indices per party.
    ExplicitLists { lists: Vec<Vec<usize>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
}

impl PartitionSpec {
    pub fn even(parties: usize) -> Self {
        PartitionSpec {
            scheme: PartitionScheme::EvenContiguous { parties },
        }
    }

    pub fn parties(&self) -> usize {
        match &self.scheme {
            PartitionScheme::EvenContiguous { parties } => *parties,
            PartitionScheme::ExplicitLists { lists } => lists.len(),
        }
    }

    /// Per-party global column lists for a dataset with these flags.
    pub fn resolve(&self, flags: &[bool]) -> Result<Vec<Vec<usize>>> {
        let d = flags.len();
        let lists = match &self.scheme {
            PartitionScheme::EvenContiguous { parties } => {
                let m = *parties;
                if m == 0 {
                    return Err(Error::config("partition.parties", "must be at least 1"));
                }
                let original: Vec<usize> = (0..d).filter(|&j| !flags[j]).collect();
                let spurious: Vec<usize> = (0..d).filter(|&j| flags[j]).collect();
                let a = blocks(&original, m);
                let b = blocks(&spurious, m);
                a.into_iter()
                    .zip(b)
                    .map(|(mut x, y)| {
                        x.extend(y);
                        x
                    })
                    .collect()
            }
            PartitionScheme::ExplicitLists { lists } => lists.clone(),
        };
        validate(&lists, d)?;
        Ok(lists)
    }
}

fn blocks(cols: &[usize], m: usize) -> Vec<Vec<usize>> {
    let base = cols.len() / m;
    let extra = cols.len() % m;
    let mut out = Vec::with_capacity(m);
    let mut start = 0;
    for i in 0..m {
        let len = base + usize::from(i < extra);
        out.push(cols[start..start + len].to_vec());
        start += len;
    }
    out
}

fn validate(lists: &[Vec<usize>], d: usize) -> Result<()> {
    if lists.is_empty() {
        return Err(Error::config("partition", "need at least one party"));
    }
    let mut seen = vec![false; d];
    for (m, list) in lists.iter().enumerate() {
        if list.is_empty() {
            return Err(Error::config("partition", format!("party {m} has no columns")));
        }
        for &j in list {
            if j >= d {
                return Err(Error::config("partition", format!("column {j} out of range (d = {d})")));
            }
            if seen[j] {
                return Err(Error::config("partition", format!("column {j} assigned twice")));
            }
            seen[j] = true;
        }
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(Error::config("partition", format!("column {j} not assigned")));
    }
    Ok(())
}

/// Row-aligned vertical shards with their global column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Partitioned {
    pub shards: Vec<Array2<f64>>,
    pub columns: Vec<Vec<usize>>,
}

impl Partitioned {
    pub fn from_columns(features: &Array2<f64>, columns: Vec<Vec<usize>>) -> Self {
        Partitioned {
            shards: columns.iter().map(|c| features.select(Axis(1), c)).collect(),
            columns,
        }
    }

    /// Inverse of partitioning: writes every shard column back to its
    /// global position.
    pub fn reassemble(&self) -> Array2<f64> {
        let n = self.shards.first().map_or(0, Array2::nrows);
        let d: usize = self.columns.iter().map(Vec::len).sum();
        let mut out = Array2::zeros((n, d));
        for (shard, cols) in self.shards.iter().zip(&self.columns) {
            for (local, &global) in cols.iter().enumerate() {
                out.column_mut(global).assign(&shard.column(local));
            }
        }
        out
    }
}

pub fn partition(ds: &TabularDataset, spec: &PartitionSpec) -> Result<Partitioned> {
    let columns = spec.resolve(&ds.spurious_flags)?;
    Ok(Partitioned::from_columns(&ds.features, columns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(d: usize, flags: Vec<bool>) -> TabularDataset {
        TabularDataset::new(
            Array2::from_shape_fn((3, d), |(i, j)| (10 * i + j) as f64),
            vec![0.0; 3],
            (0..d).map(|j| j.to_string()).collect(),
            "y".into(),
            flags,
        )
        .unwrap()
    }

    #[test]
    fn single_party_is_identity() {
        let data = ds(5, vec![false; 5]);
        let p = partition(&data, &PartitionSpec::even(1)).unwrap();
        assert_eq!(p.shards[0], data.features);
    }

    #[test]
    fn even_blocks() {
        let p = partition(&ds(8, vec![false; 8]), &PartitionSpec::even(4)).unwrap();
        assert_eq!(p.columns, vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]]);
        assert!(p.shards.iter().all(|s| s.ncols() == 2));
    }

    #[test]
    fn spurious_spread_across_parties() {
        let mut flags = vec![false; 6];
        flags.extend([true; 3]);
        let p = partition(&ds(9, flags), &PartitionSpec::even(3)).unwrap();
        assert_eq!(p.columns, vec![vec![0, 1, 6], vec![2, 3, 7], vec![4, 5, 8]]);
    }

    #[test]
    fn overlapping_lists_rejected() {
        let spec = PartitionSpec {
            scheme: PartitionScheme::ExplicitLists {
                lists: vec![vec![0, 1], vec![1, 2]],
            },
        };
        assert!(matches!(partition(&ds(3, vec![false; 3]), &spec), Err(Error::Config { .. })));
        let gap = PartitionSpec {
            scheme: PartitionScheme::ExplicitLists {
                lists: vec![vec![0], vec![2]],
            },
        };
        assert!(partition(&ds(3, vec![false; 3]), &gap).is_err());
    }

    proptest! {
        #[test]
        fn reassembly_identity(d in 1usize..20, m in 1usize..6, flag_bits in any::<u32>()) {
            prop_assume!(m <= d);
            let flags: Vec<bool> = (0..d).map(|j| flag_bits >> j & 1 == 1).collect();
            let data = ds(d, flags);
            // An error is only possible when some party would receive no column.
            if let Ok(p) = partition(&data, &PartitionSpec::even(m)) {
                prop_assert_eq!(p.reassemble(), data.features.clone());
            }
        }
    }
}
