//! Statistics over emitted datasets: strategy usage, substitution
//! proportions, and versions-per-formula figures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DatasetRecord;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SubstitutionShare {
    pub variable: f64,
    pub function: f64,
    pub any: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GroupStats {
    pub records: usize,
    pub positives: usize,
    pub negatives: usize,
    /// Fraction of negative records that used each strategy.
    pub strategy_share: BTreeMap<String, f64>,
    /// Fraction of negatives with exactly one applied strategy.
    pub single_strategy_fraction: f64,
    /// Fraction of negatives using the random strategy.
    pub random_share: f64,
    pub substitution_overall: SubstitutionShare,
    pub substitution_positives: SubstitutionShare,
    pub substitution_negatives: SubstitutionShare,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub overall: GroupStats,
    pub per_identity: BTreeMap<String, GroupStats>,
    /// Mean and max generated versions per source formula/identity.
    pub versions_per_formula_mean: f64,
    pub versions_per_formula_max: usize,
    pub dedup_collisions: Option<usize>,
}

fn share(records: &[&DatasetRecord], f: impl Fn(&DatasetRecord) -> bool) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| f(r)).count() as f64 / records.len() as f64
}

fn group_stats(records: &[&DatasetRecord]) -> GroupStats {
    let positives: Vec<&DatasetRecord> =
        records.iter().copied().filter(|r| r.label() != Some(false)).collect();
    let negatives: Vec<&DatasetRecord> =
        records.iter().copied().filter(|r| r.label() == Some(false)).collect();

    let mut strategy_share = BTreeMap::new();
    if !negatives.is_empty() {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for r in &negatives {
            let mut unique: Vec<&String> = r.meta().strategies.iter().collect();
            unique.sort_unstable();
            unique.dedup();
            for s in unique {
                *counts.entry(s.clone()).or_insert(0) += 1;
            }
        }
        for (k, v) in counts {
            strategy_share.insert(k, v as f64 / negatives.len() as f64);
        }
    }
    let single = share(&negatives, |r| {
        let mut unique: Vec<&String> = r.meta().strategies.iter().collect();
        unique.sort_unstable();
        unique.dedup();
        unique.len() == 1
    });
    let random = share(&negatives, |r| r.meta().strategies.iter().any(|s| s == "random"));

    let sub = |rs: &[&DatasetRecord]| SubstitutionShare {
        variable: share(rs, |r| r.meta().substituted_variable),
        function: share(rs, |r| r.meta().substituted_function),
        any: share(rs, |r| r.meta().substituted()),
    };

    GroupStats {
        records: records.len(),
        positives: positives.len(),
        negatives: negatives.len(),
        strategy_share,
        single_strategy_fraction: single,
        random_share: random,
        substitution_overall: sub(records),
        substitution_positives: sub(&positives),
        substitution_negatives: sub(&negatives),
    }
}

/// Builds the statistics report over a dataset.
pub fn stats_report(records: &[DatasetRecord]) -> StatsReport {
    let all: Vec<&DatasetRecord> = records.iter().collect();
    let overall = group_stats(&all);

    let mut per_identity: BTreeMap<String, Vec<&DatasetRecord>> = BTreeMap::new();
    let mut per_source: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        let key = r.meta().identity.clone().unwrap_or_else(|| r.meta().source.clone());
        per_identity.entry(key).or_default().push(r);
        *per_source.entry(r.meta().source.clone()).or_insert(0) += 1;
    }
    let versions_per_formula_max = per_source.values().copied().max().unwrap_or(0);
    let versions_per_formula_mean = if per_source.is_empty() {
        0.0
    } else {
        per_source.values().sum::<usize>() as f64 / per_source.len() as f64
    };

    StatsReport {
        overall,
        per_identity: per_identity.iter().map(|(k, v)| (k.clone(), group_stats(v))).collect(),
        versions_per_formula_mean,
        versions_per_formula_max,
        dedup_collisions: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{RecordMeta, SCHEMA_VERSION};

    fn nmf(identity: &str, label: bool, strategies: &[&str], subst: bool, v: u32) -> DatasetRecord {
        DatasetRecord::Nmf {
            schema: SCHEMA_VERSION,
            name: identity.into(),
            formula: format!("f{v}"),
            label,
            meta: RecordMeta {
                source: identity.into(),
                version: v,
                identity: Some(identity.into()),
                substituted_variable: subst,
                strategies: strategies.iter().map(|s| s.to_string()).collect(),
                ..Default::default()
            },
        }
    }

    #[test]
    fn single_identity_matches_overall() {
        let records = vec![
            nmf("A", true, &[], true, 0),
            nmf("A", false, &["swap"], false, 1),
            nmf("A", false, &["swap", "constant"], true, 2),
        ];
        let report = stats_report(&records);
        assert_eq!(report.per_identity.len(), 1);
        let a = &report.per_identity["A"];
        assert_eq!(a.records, report.overall.records);
        assert!((a.single_strategy_fraction - 0.5).abs() < 1e-9);
        assert!((report.overall.strategy_share["swap"] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_positive_dataset_has_empty_strategy_table() {
        let records = vec![nmf("A", true, &[], true, 0), nmf("A", true, &[], false, 1)];
        let report = stats_report(&records);
        assert!(report.overall.strategy_share.is_empty());
        assert_eq!(report.overall.negatives, 0);
    }
}
