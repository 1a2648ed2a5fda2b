use std::collections::BTreeMap;

use cyclelife::config::example_config;
use cyclelife::eval::{score_split, SplitMetrics};
use cyclelife::features::FeatureTable;
use cyclelife::ingest::read_splits_csv;
use cyclelife::pipeline::{cluster_cells, read_json, run_until, FitRecord, StageName};
use cyclelife::synth::{ConditionDesign, SynthSpec, TRUTH_FILE};
use cyclelife::types::{CellKey, SplitTag};

#[test]
fn noiseless_data_recovers_planted_law() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut c = example_config(&root.join("data"), &root.join("work"), &root.join("report"), 21);
    let mut spec = SynthSpec::new(21);
    spec.noise = 0.0;
    c.synth = Some(spec);
    c.selection.repeats = 2;
    c.regress.repeats = 2;
    run_until(&c, StageName::Train).unwrap();
    let splits = read_splits_csv(&root.join("work/ingest/splits.csv")).unwrap();
    let fit: FitRecord = read_json(&root.join("work/train/enet_n2.json")).unwrap();
    let p = fit.to_predictions();
    for tag in [SplitTag::TestHighDod, SplitTag::TestLowDod] {
        let m: SplitMetrics = score_split(&p, &splits, tag).unwrap().unwrap();
        assert!(m.mape < 1.0, "{tag:?}: {:.3}% with {:?}", m.mape, fit.features);
    }
}

#[test]
fn separated_stress_tiers_are_recovered_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut c = example_config(&root.join("data"), &root.join("work"), &root.join("report"), 22);
    let mut spec = SynthSpec::new(22);
    spec.groups = 24;
    spec.conditions = ConditionDesign::Tiers { stress: vec![2.0, 1.6, 1.2, 0.8] };
    c.synth = Some(spec);
    c.hbm.min_size = 4;
    run_until(&c, StageName::Features).unwrap();
    let table = FeatureTable::read_csv(&root.join("work/features/features.csv")).unwrap();
    let (_, membership) = cluster_cells(&table, &c.hbm).unwrap();

    let mut rdr = csv::Reader::from_path(root.join("data").join(TRUTH_FILE)).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |n: &str| headers.iter().position(|h| h == n).unwrap();
    let mut tier: BTreeMap<CellKey, usize> = BTreeMap::new();
    for r in rdr.records() {
        let r = r.unwrap();
        let key = CellKey::new(r[col("group_id")].parse().unwrap(), r[col("cell_id")].parse().unwrap());
        tier.insert(key, r[col("tier")].parse().unwrap());
    }
    assert!(!membership.is_empty());
    // Same partition: each tier maps to exactly one cluster and vice versa.
    let mut t2c: BTreeMap<usize, usize> = BTreeMap::new();
    let mut c2t: BTreeMap<usize, usize> = BTreeMap::new();
    for (k, (cl, _)) in &membership {
        let t = tier[k];
        assert_eq!(*t2c.entry(t).or_insert(*cl), *cl, "tier {t} split across clusters");
        assert_eq!(*c2t.entry(*cl).or_insert(t), t, "cluster {cl} mixes tiers");
    }
    assert_eq!(t2c.len(), 4);
}
