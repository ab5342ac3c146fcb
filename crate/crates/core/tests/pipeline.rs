//! End-to-end pass through the public API: generate a small cohort, round it
//! through the on-disk layout, validate the reloaded bundles, then compile
//! and score a query set against them.

use std::collections::BTreeMap;

use serde_json::Value;

use vitalbench_core::config::{CohortConfig, HorizonRange};
use vitalbench_core::engine::export::{export_cohort, load_cohort, load_manifest};
use vitalbench_core::engine::{cohort_digest, Engine};
use vitalbench_core::model::{validate_bundle, Query};
use vitalbench_core::queries::{generate_queries, write_query_files, DEFAULT_SPLIT};
use vitalbench_core::scoring::{score_queries, DeterministicJudge};
use vitalbench_core::streams::StreamFactory;

fn small_config() -> CohortConfig {
    let mut cfg = CohortConfig::default();
    cfg.cohort_size = 3;
    cfg.root_seed = 29;
    cfg.horizon_days = HorizonRange {
        min_days: 390,
        max_days: 480,
    };
    cfg
}

fn perfect_response(query: &Query) -> Value {
    let mut answer = query.ground_truth.answer.clone();
    if query.ground_truth.any_of {
        answer.values.truncate(1);
        answer.dates.truncate(1);
    }
    serde_json::to_value(&answer).unwrap()
}

#[test]
fn cohort_round_trips_and_scores() {
    let engine = Engine::new(small_config()).unwrap();
    let bundles = engine.generate_cohort().unwrap();
    assert_eq!(bundles.len(), 3);

    let dir = tempfile::tempdir().unwrap();
    export_cohort(dir.path(), engine.config(), &bundles).unwrap();

    let manifest = load_manifest(dir.path()).unwrap();
    assert_eq!(manifest.root_seed, 29);
    assert_eq!(manifest.users.len(), 3);
    assert_eq!(manifest.cohort_digest, cohort_digest(&bundles));
    assert_eq!(manifest.config_digest, engine.config().digest());

    let (loaded_cfg, loaded) = load_cohort(dir.path()).unwrap();
    assert_eq!(loaded_cfg.digest(), engine.config().digest());
    assert_eq!(loaded, bundles, "reloaded bundles drifted from the originals");

    let conditions = engine.config().known_conditions();
    for bundle in &loaded {
        let streams = StreamFactory::from_hex(&bundle.seeds.user_seed).unwrap();
        let specs = engine.personalized_specs(&bundle.profile, &streams);
        let violations = validate_bundle(bundle, &specs, &conditions);
        assert!(violations.is_empty(), "violations: {violations:?}");
    }

    // Queries compiled from the reloaded bundle match those from the
    // original, and the agent-facing file carries no answers.
    let set = generate_queries(&loaded[0], 8, DEFAULT_SPLIT, 5).unwrap();
    let again = generate_queries(&bundles[0], 8, DEFAULT_SPLIT, 5).unwrap();
    assert_eq!(set.queries, again.queries);
    assert_eq!(set.queries.len(), 40);

    let qdir = tempfile::tempdir().unwrap();
    let (full, agent) = write_query_files(qdir.path(), &set).unwrap();
    let agent_text = std::fs::read_to_string(agent).unwrap();
    assert!(!agent_text.contains("ground_truth"));
    assert!(!agent_text.contains("evidence"));
    assert!(std::fs::read_to_string(full).unwrap().contains("ground_truth"));

    let responses: BTreeMap<String, Value> = set
        .queries
        .iter()
        .map(|q| (q.query_id.clone(), perfect_response(q)))
        .collect();
    let report = score_queries(&set.queries, &responses, &mut DeterministicJudge);
    assert_eq!(report.total_pct, 100.0);
    assert!(report.missing.is_empty());
}
