use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use dot_parser::{ast, canonical};
use projrank::io::{
    export_dot, ingest_tu_dataset, load_json, load_strategy, load_victim, save_json, save_strategy, save_victim,
    strategy_from_bytes, strategy_to_bytes, victim_from_bytes, victim_to_bytes, checkpoint_meta, RunMeta, TuOptions,
};
use projrank::perturb::AllowedOps;
use projrank::{
    attack_graph, evaluate_attack, generate_adversarial, generate_ba2motifs, split_dataset, Arch, AttackGoal, AttackReport, Attacker,
    Dataset, Error, RunInfo, ScoringStrategy, VictimConfig, VictimModel,
};
use serde_json::{json, Value};

fn write_fixture(dir: &Path, name: &str, files: &[(&str, &str)]) {
    for (suffix, body) in files {
        fs::write(dir.join(format!("{name}_{suffix}.txt")), body).unwrap();
    }
}

fn untrained_ba_victim(arch: Arch, seed: u64) -> VictimModel {
    let mut v = VictimModel::new(VictimConfig::new(arch, 10, 2), seed).unwrap();
    v.mark_trained();
    v
}

#[test]
fn tu_fixture_is_read_exactly() {
    let dir = tempfile::tempdir().unwrap();
    // Two triangles-minus-one-edge; node 3 of the second graph has a self loop
    // and the first graph lists one edge in both directions.
    write_fixture(
        dir.path(),
        "TOY",
        &[
            ("A", "1,2\n2,1\n2,3\n4,5\n5,6\n4,6\n6,6\n"),
            ("graph_indicator", "1\n1\n1\n2\n2\n2\n"),
            ("graph_labels", "-1\n1\n"),
            ("node_labels", "0\n2\n0\n2\n2\n0\n"),
        ],
    );
    let import = ingest_tu_dataset(dir.path(), "TOY", TuOptions::default()).unwrap();
    assert_eq!(import.self_loops_dropped, 1);
    let graphs = import.dataset.graphs();
    assert_eq!(graphs.len(), 2);
    assert_eq!(graphs[0].edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    assert_eq!(graphs[1].edges().collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2)]);
    assert_eq!((graphs[0].label(), graphs[1].label()), (0, 1));
    assert_eq!(graphs[0].feature_dim(), 2);
    assert_eq!(graphs[0].features().data(), &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);

    let filtered = ingest_tu_dataset(dir.path(), "TOY", TuOptions { max_nodes_exclusive: Some(3) }).unwrap();
    assert_eq!(filtered.filtered_out, 2);
}

#[test]
fn tu_parse_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(
        dir.path(),
        "BAD",
        &[
            ("A", "1,2\n\n2,x\n"),
            ("graph_indicator", "1\n1\n"),
            ("graph_labels", "0\n"),
        ],
    );
    match ingest_tu_dataset(dir.path(), "BAD", TuOptions::default()) {
        Err(Error::Parse { path, line, .. }) => {
            assert!(path.ends_with("BAD_A.txt"));
            assert_eq!(line, 3);
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

type Edges = Vec<(usize, usize)>;

/// All edges, and the dashed ones, of a DOT text.
fn parse_dot(text: &str) -> (Edges, BTreeSet<(usize, usize)>) {
    let g = canonical::Graph::from(ast::Graph::try_from(text).unwrap());
    assert!(!g.is_digraph);
    let node = |s: &str| s.trim_start_matches('n').parse::<usize>().unwrap();
    let mut edges = Vec::new();
    let mut dashed = BTreeSet::new();
    for e in &g.edges.set {
        let (u, v) = (node(&e.from), node(&e.to));
        let pair = (u.min(v), u.max(v));
        edges.push(pair);
        let is_dashed = e.attr.elems.iter().any(|(k, v)| {
            let (k, v): (String, String) = (k.clone().into(), v.clone().into());
            k == "style" && v.trim_matches('"') == "dashed"
        });
        if is_dashed {
            dashed.insert(pair);
        }
    }
    edges.sort_unstable();
    (edges, dashed)
}

#[test]
fn dot_export_reparses_to_the_same_graph() {
    let ds = generate_ba2motifs(100, 4).unwrap();
    let victim = untrained_ba_victim(Arch::Gcn, 0);
    let strategy = ScoringStrategy::new(victim.embed_dim(), Arch::Gcn, 0).unwrap();
    for (idx, g) in ds.graphs().iter().enumerate() {
        let emb = victim.node_embeddings(g).unwrap();
        let k = idx % 3;
        let (g_hat, dg) = generate_adversarial(&strategy, &emb, g, k).unwrap();
        let added = dg.added_edges();
        let dot = export_dot(g, &added, None).unwrap();
        let (edges, dashed) = parse_dot(&dot);
        assert_eq!(edges, g_hat.edges().collect::<Vec<_>>());
        assert_eq!(dashed, added.iter().copied().collect());
        assert_eq!(dot.matches("fillcolor=green").count(), 5);
        if k == 1 {
            assert_eq!(dashed.len(), 1);
        }
    }
}

fn small_report() -> AttackReport {
    let ds = generate_ba2motifs(12, 1).unwrap();
    let victim = untrained_ba_victim(Arch::Gat, 5);
    let strategy = ScoringStrategy::new(victim.embed_dim(), Arch::Gat, 2).unwrap();
    let graphs: Vec<_> = ds.graphs().iter().collect();
    let run = RunInfo::new("test").with_seed("strategy", 2).with_config(json!({ "budget": 2 }));
    let attacker = Attacker::Ranking { strategy: &strategy, embedder: &victim };
    evaluate_attack(&victim, &attacker, &graphs, 2, AttackGoal::Untargeted, &run).unwrap()
}

fn report_schema() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/report.schema.json");
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn reports_validate_against_the_schema() {
    let validator = jsonschema::validator_for(&report_schema()).unwrap();
    let targeted = {
        let ds = generate_ba2motifs(8, 3).unwrap();
        let victim = untrained_ba_victim(Arch::Gcn, 1);
        let graphs: Vec<_> = ds.graphs().iter().collect();
        let attacker = Attacker::Oracle { allowed: AllowedOps::ADD_ONLY };
        evaluate_attack(&victim, &attacker, &graphs, 1, AttackGoal::Targeted(0), &RunInfo::new("test")).unwrap()
    };
    for report in [small_report(), targeted] {
        let value = serde_json::to_value(&report).unwrap();
        let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{errors:?}");
    }
    let mut broken = serde_json::to_value(small_report()).unwrap();
    broken["records"][0]["surprise"] = json!(1);
    assert!(!validator.is_valid(&broken));
}

#[test]
fn artefacts_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds = split_dataset(generate_ba2motifs(30, 7).unwrap(), (0.8, 0.1, 0.1), 0).unwrap();
    let path = dir.path().join("data.json");
    save_json(&ds, &path, false).unwrap();
    assert_eq!(load_json::<Dataset>(&path).unwrap(), ds);
    assert!(matches!(save_json(&ds, &path, false), Err(Error::PathCollision(_))));
    save_json(&ds, &path, true).unwrap();

    let report = small_report();
    let path = dir.path().join("report.json");
    save_json(&report, &path, false).unwrap();
    let back: AttackReport = load_json(&path).unwrap();
    assert_eq!(back, report);
    assert!(back.is_consistent());

    for arch in [Arch::Gcn, Arch::Gat] {
        let victim = untrained_ba_victim(arch, 9);
        let bytes = victim_to_bytes(&victim).unwrap();
        let back = victim_from_bytes(&bytes).unwrap();
        assert_eq!(victim_to_bytes(&back).unwrap(), bytes);
        let g = &ds.graphs()[0];
        assert_eq!(back.predict_proba(g).unwrap(), victim.predict_proba(g).unwrap());
        let path = dir.path().join(format!("{arch:?}.ckpt"));
        save_victim(&victim, None, &path, false).unwrap();
        assert_eq!(victim_to_bytes(&load_victim(&path).unwrap()).unwrap(), bytes);

        let strategy = ScoringStrategy::new(victim.embed_dim(), arch, 3).unwrap();
        let bytes = strategy_to_bytes(&strategy).unwrap();
        assert_eq!(strategy_to_bytes(&strategy_from_bytes(&bytes).unwrap()).unwrap(), bytes);
        let path = dir.path().join(format!("{arch:?}.strategy"));
        save_strategy(&strategy, None, &path, false).unwrap();
        assert_eq!(load_strategy(&path).unwrap().params(), strategy.params());
        assert!(strategy_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}

#[test]
fn checkpoint_metadata_does_not_touch_the_model_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let victim = untrained_ba_victim(Arch::Gcn, 4);
    let seeds = [("victim".to_string(), 4)].into_iter().collect();
    let meta = RunMeta::new("train", json!({ "arch": "gcn" }), seeds).unwrap();
    let path = dir.path().join("v.ckpt");
    save_victim(&victim, Some(&meta), &path, false).unwrap();
    assert_eq!(checkpoint_meta(&path).unwrap(), Some(meta));
    let back = load_victim(&path).unwrap();
    assert_eq!(victim_to_bytes(&back).unwrap(), victim_to_bytes(&victim).unwrap());
}

#[test]
fn records_replay_to_the_adversarial_graph() {
    let ds = generate_ba2motifs(6, 2).unwrap();
    let victim = untrained_ba_victim(Arch::Gcn, 2);
    let graphs: Vec<_> = ds.graphs().iter().collect();
    let attacker = Attacker::Random { seed: 1, allowed: AllowedOps::ALL };
    let report = evaluate_attack(&victim, &attacker, &graphs, 3, AttackGoal::Untargeted, &RunInfo::new("t")).unwrap();
    for (g, r) in graphs.iter().zip(&report.records) {
        let sample = attack_graph(&attacker, &victim, g, 3, AttackGoal::Untargeted).unwrap();
        let replayed = r.adversarial_graph(g).unwrap();
        assert_eq!(replayed.edges().collect::<Vec<_>>(), sample.graph.edges().collect::<Vec<_>>());
        assert_eq!(replayed.features(), sample.graph.features());
        assert_eq!(r.budget_used, 3);
    }
    assert!(report.records[0].adversarial_graph(graphs[1]).is_err());
}

#[test]
fn unknown_json_fields_are_rejected() {
    let mut value = serde_json::to_value(small_report()).unwrap();
    value["header"]["colour"] = json!("red");
    assert!(serde_json::from_value::<AttackReport>(value).is_err());
}
