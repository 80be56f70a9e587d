use tableforge_core::fixtures::fixture_a;
use tableforge_core::forge::{
    compute_answer, compute_stats, split_dataset, synthesize_instance, DatasetManifest, ForgeError, Split, TaskCategory,
    TrajectoryInstance,
};
use tableforge_core::layout::{compute_layout, LayoutMetrics, RegionMap};
use tableforge_core::synth::random_table;
use tableforge_core::table::{load_spec_str, TableSpec};
use tableforge_core::verify::{corrupt, verify_instance, Corruption};

fn render(spec: &TableSpec) -> RegionMap {
    compute_layout(spec, &LayoutMetrics::default()).unwrap()
}

#[test]
fn retrieval_on_fixture() {
    let spec = fixture_a();
    let map = render(&spec);
    let hit = (0..200)
        .map(|seed| synthesize_instance(&spec, &map, TaskCategory::Retrieval, seed, "fixture-a.png").unwrap())
        .find(|i| i.question == "What is the Revenue Q1 value for 2020?")
        .expect("some seed picks 2020 / Revenue>Q1");
    assert_eq!(hit.answer, "10");
    assert!(!hit.evidence.is_empty());
    assert_eq!(hit.id, format!("fixture-a-retrieval-{}", hit.id.rsplit('-').next().unwrap()));
}

#[test]
fn sum_of_revenue_row_segment() {
    let spec = fixture_a();
    let map = render(&spec);
    let found = (0..500).filter_map(|s| synthesize_instance(&spec, &map, TaskCategory::Arithmetic, s, "a.png").ok()).any(|i| {
        i.question == "What is the sum of Revenue Q1 at 2020 and Revenue Q2 at 2020?" && i.answer == "30"
    });
    assert!(found);
}

#[test]
fn comparison_needs_numbers() {
    let spec = load_spec_str(r#"{"table_id":"t","columns":[{"label":"A"}],"rows":[{"label":"r"}],"cells":[["x"]]}"#).unwrap();
    let map = render(&spec);
    let e = synthesize_instance(&spec, &map, TaskCategory::Comparison, 1, "t.png").unwrap_err();
    assert!(matches!(e, ForgeError::CategoryInapplicable { .. }), "{e}");
}

#[test]
fn temporal_needs_dates() {
    let spec = fixture_a();
    let map = render(&spec);
    let i = synthesize_instance(&spec, &map, TaskCategory::Temporal, 4, "a.png").unwrap();
    assert!(i.question.contains("from 2020 to 2021"), "{}", i.question);
    let plain = load_spec_str(
        r#"{"table_id":"t","columns":[{"label":"A"},{"label":"B"}],"rows":[{"label":"x"},{"label":"y"}],"cells":[["1","2"],["3","4"]]}"#,
    )
    .unwrap();
    let e = synthesize_instance(&plain, &render(&plain), TaskCategory::Temporal, 4, "t.png").unwrap_err();
    assert!(matches!(e, ForgeError::CategoryInapplicable { .. }));
}

fn corpus(n_tables: u64) -> Vec<(TableSpec, RegionMap, Vec<TrajectoryInstance>)> {
    (0..n_tables)
        .map(|seed| {
            let spec = random_table(seed);
            let map = render(&spec);
            let insts = TaskCategory::ALL
                .iter()
                .filter_map(|&c| match synthesize_instance(&spec, &map, c, seed, "img.png") {
                    Ok(i) => Some(i),
                    Err(ForgeError::CategoryInapplicable { .. }) => None,
                    Err(e) => panic!("table {seed}, {c}: {e}"),
                })
                .collect();
            (spec, map, insts)
        })
        .collect()
}

#[test]
fn synthesized_instances_are_clean_grounded_and_consistent() {
    let mut total = 0;
    for (spec, map, insts) in corpus(120) {
        for i in insts {
            total += 1;
            assert_eq!(verify_instance(&i, &spec, &map), vec![], "{}", i.to_json_line());
            assert_eq!(compute_answer(&i.derivation, &spec).unwrap(), i.answer);
            for s in &i.steps {
                assert!(s.boxes.iter().all(|&b| b < i.evidence.len()));
            }
            let again = synthesize_instance(&spec, &map, i.category, seed_of(&i), "img.png").unwrap();
            assert_eq!(again.to_json_line(), i.to_json_line());
            let back: TrajectoryInstance = serde_json::from_str(&i.to_json_line()).unwrap();
            assert_eq!(back, i);
        }
    }
    assert!(total > 800, "only {total} instances");
}

fn seed_of(i: &TrajectoryInstance) -> u64 {
    i.id.rsplit('-').next().unwrap().parse().unwrap()
}

#[test]
fn every_category_is_reachable() {
    let all: Vec<TrajectoryInstance> = corpus(60).into_iter().flat_map(|(_, _, i)| i).collect();
    for c in TaskCategory::ALL {
        assert!(all.iter().any(|i| i.category == c), "{c} never synthesized");
    }
}

#[test]
fn corruptions_are_detected() {
    let mut n = 0;
    for (spec, map, insts) in corpus(40) {
        for (k, i) in insts.iter().enumerate() {
            for kind in Corruption::ALL {
                if let Some(bad) = corrupt(i, &spec, &map, kind, k as u64) {
                    n += 1;
                    assert!(!verify_instance(&bad, &spec, &map).is_empty(), "{kind:?} missed: {}", bad.to_json_line());
                }
            }
        }
    }
    assert!(n > 300);
}

#[test]
fn split_and_stats_over_synthesized_corpus() {
    let data = corpus(30);
    let insts: Vec<TrajectoryInstance> = data.iter().flat_map(|(_, _, i)| i.clone()).collect();
    let tables: Vec<TableSpec> = data.iter().map(|(s, _, _)| s.clone()).collect();
    let m = split_dataset(&DatasetManifest::from_instances(&insts), 0.8, 5).unwrap();
    assert!(m.is_partition());
    assert!(m.mean_boxes(Split::Test).unwrap() >= m.mean_boxes(Split::Train).unwrap());
    let stats = compute_stats(&insts, &tables).unwrap();
    assert_eq!(stats.overall.count as usize, insts.len());
    assert_eq!(stats.per_category.iter().map(|r| r.count).sum::<u64>(), stats.overall.count);
    assert_eq!(stats.shape.unwrap().tables, 30);
}
