//! Grouping of subjects by three-digit zip prefix, with small groups merged
//! into their nearest neighbour until every group reaches a minimum size.
//!
//! Distance between two groups is the smallest absolute difference between
//! their member prefixes read as integers. Groups stay contiguous runs of the
//! sorted prefix list, so the nearest group is always an adjacent run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, CohortError};

pub const DEFAULT_MIN_GROUP_SIZE: usize = 3000;

/// Assignment of zip3 prefixes to merged location groups. A group is
/// identified by its lowest member prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationMap {
    pub assignments: BTreeMap<u16, u16>,
    pub group_sizes: BTreeMap<u16, usize>,
}

impl LocationMap {
    pub fn group_of(&self, zip3: u16) -> Option<u16> {
        self.assignments.get(&zip3).copied()
    }

    /// Group ids in ascending order; the first is the reference level.
    pub fn group_ids(&self) -> Vec<u16> {
        self.group_sizes.keys().copied().collect()
    }

    pub fn n_groups(&self) -> usize {
        self.group_sizes.len()
    }

    /// Position of the group in [`Self::group_ids`].
    pub fn group_index(&self, group: u16) -> Option<usize> {
        self.group_sizes.keys().position(|&g| g == group)
    }

    /// Map with one group per prefix present in the cohort.
    pub fn identity(cohort: &Cohort) -> Self {
        let counts = zip3_counts(cohort);
        Self {
            assignments: counts.keys().map(|&z| (z, z)).collect(),
            group_sizes: counts,
        }
    }
}

pub fn format_group_id(id: u16) -> String {
    format!("{id:03}")
}

pub fn zip3_counts(cohort: &Cohort) -> BTreeMap<u16, usize> {
    let mut counts = BTreeMap::new();
    for s in cohort.subjects() {
        *counts.entry(s.zip3()).or_insert(0) += 1;
    }
    counts
}

pub fn merge_locations(cohort: &Cohort, min_size: usize) -> Result<LocationMap, CohortError> {
    if cohort.is_empty() {
        return Err(CohortError::Empty);
    }
    if min_size == 0 {
        return Err(CohortError::Parameter("minimum group size must be positive".into()));
    }
    Ok(merge_location_counts(&zip3_counts(cohort), min_size))
}

#[derive(Debug, Clone)]
struct Run {
    members: Vec<u16>,
    size: usize,
}

impl Run {
    fn lo(&self) -> u16 {
        self.members[0]
    }
    fn hi(&self) -> u16 {
        *self.members.last().unwrap()
    }
}

/// Merges prefix counts: repeatedly the smallest group below `min_size`
/// (ties to the lower prefix) is joined with its nearest group (ties to the
/// lower prefix) until all groups reach `min_size` or one group remains.
pub fn merge_location_counts(counts: &BTreeMap<u16, usize>, min_size: usize) -> LocationMap {
    let mut runs: Vec<Run> = counts
        .iter()
        .map(|(&z, &n)| Run {
            members: vec![z],
            size: n,
        })
        .collect();

    while runs.len() > 1 {
        let deficient = runs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.size < min_size)
            .min_by_key(|(_, r)| (r.size, r.lo()))
            .map(|(i, _)| i);
        let Some(i) = deficient else { break };

        let left = i.checked_sub(1).map(|j| (j, runs[i].lo() - runs[j].hi()));
        let right = (i + 1 < runs.len()).then(|| (i + 1, runs[i + 1].lo() - runs[i].hi()));
        let target = match (left, right) {
            (Some((l, dl)), Some((_, dr))) if dl <= dr => l,
            (Some(_), Some((r, _))) => r,
            (Some((l, _)), None) => l,
            (None, Some((r, _))) => r,
            (None, None) => unreachable!("more than one run"),
        };
        let (a, b) = if target < i { (target, i) } else { (i, target) };
        let absorbed = runs.remove(b);
        runs[a].size += absorbed.size;
        runs[a].members.extend(absorbed.members);
    }

    let mut assignments = BTreeMap::new();
    let mut group_sizes = BTreeMap::new();
    for run in &runs {
        let id = run.lo();
        group_sizes.insert(id, run.size);
        for &m in &run.members {
            assignments.insert(m, id);
        }
    }
    LocationMap {
        assignments,
        group_sizes,
    }
}
