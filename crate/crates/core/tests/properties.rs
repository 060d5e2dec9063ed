mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use driftlens::context::extract_context;
use driftlens::corpus::write_version;
use driftlens::diffing::apply_unified;
use driftlens::llm::Expect;
use driftlens::metrics::{harmonic, ConfusionCounts};
use driftlens::prompting::{build_role_prompt, label_slot, DebateMaterials};
use driftlens::{
    build_method_prompt, diff, load_version, match_files, parse_prediction, partition, predict_naive, BaselineKind,
    ColumnSpec, Label, MatchParams, MethodId, ParsePath, Role, Subset, VersionSet, VersionedFile,
};

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Benign), Just(Label::Defective)]
}

fn source() -> impl Strategy<Value = String> {
    prop::collection::vec(prop_oneof!["[a-c]{0,2}", "int x = [0-9];", Just("}".to_string())], 0..12)
        .prop_map(|l| l.join("\n"))
}

fn version(tag: &'static str) -> impl Strategy<Value = Vec<(String, String, Label)>> {
    prop::collection::btree_map("[A-E]{1,2}\\.java", (source(), label()), 1..8)
        .prop_map(move |m| m.into_iter().map(|(p, (s, l))| (format!("{tag}{p}"), s, l)).collect())
}

fn set(version_id: &str, files: &[(String, String, Label)]) -> VersionSet {
    let files = files
        .iter()
        .map(|(p, s, l)| VersionedFile { path: p.clone(), source: s.clone(), label: *l, version_id: version_id.into() })
        .collect();
    VersionSet::new("prop", version_id, files).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn corpus_round_trip(files in prop::collection::btree_map("[a-zA-Z0-9/_. ,\"-]{1,20}", (".{0,60}", label()), 1..10)) {
        let files: Vec<(String, String, Label)> = files.into_iter().map(|(p, (s, l))| (p, s, l)).collect();
        let original = set("1", &files);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        write_version(&original, &path).unwrap();
        let loaded = load_version(&path, &ColumnSpec::default(), "prop", "1").unwrap();
        let triple = |s: &VersionSet| s.files().iter().map(|f| (f.path.clone(), f.label, f.source.clone())).collect::<Vec<_>>();
        prop_assert_eq!(triple(&original), triple(&loaded));
    }

    #[test]
    fn partition_invariants(old in version(""), new in version(""), t in 0.0f64..1.0) {
        let old = set("1", &old);
        let new = set("2", &new);
        let m = match_files(&old, &new, &MatchParams::new(t, 1.0).unwrap());
        let (records, stats) = partition(&old, &new, &m);

        prop_assert_eq!(records.len(), new.len());
        let ids: BTreeSet<&str> = records.iter().map(|r| r.id()).collect();
        prop_assert_eq!(ids.len(), new.len());
        let olds: Vec<&str> = records.iter().filter_map(|r| r.old_file.as_ref().map(|f| f.path.as_str())).collect();
        let distinct: BTreeSet<&str> = olds.iter().copied().collect();
        prop_assert_eq!(olds.len(), distinct.len());

        let sum: f64 = stats.percentages().iter().sum();
        prop_assert!((sum - 100.0).abs() < 1e-9, "{}", sum);
        prop_assert_eq!(stats.removed, old.len() - distinct.len());

        for r in &records {
            if r.subset.is_transition() {
                let (o, n) = (r.old_label().unwrap().bit(), r.new_label().bit());
                let expected = match r.subset {
                    Subset::B00 => (0, 0),
                    Subset::B10 => (1, 0),
                    Subset::D01 => (0, 1),
                    _ => (1, 1),
                };
                prop_assert_eq!((o, n), expected);
            }
        }
    }

    #[test]
    fn diff_round_trip_and_symmetry(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let a = common::random_text(&mut r, 25);
        let b = if seed % 4 == 0 { common::random_text(&mut r, 25) } else { common::mutate(&mut r, &a) };
        let ab = diff(&a, &b, 3);
        let ba = diff(&b, &a, 3);
        prop_assert_eq!(apply_unified(&a, &ab.unified).unwrap(), b.clone());
        prop_assert_eq!(apply_unified(&b, &ba.unified).unwrap(), a.clone());
        prop_assert_eq!(&ab.added, &ba.removed);
        prop_assert_eq!(&ab.removed, &ba.added);
        let la = driftlens::normalize_lines(&a).len();
        let lb = driftlens::normalize_lines(&b).len();
        prop_assert!(ab.added.len() + ab.removed.len() <= la + lb);
    }

    #[test]
    fn context_properties(seed in 0u64..500, pick in any::<u64>(), budget in 0usize..300) {
        let fx = common::java_fixture(seed);
        let n = fx.names.len();
        let touched = vec![(pick as usize) % n];
        let new = fx.touch(&touched);
        let cs = diff(&fx.source, &new, 3);
        let mut prev: BTreeSet<String> = BTreeSet::new();
        for depth in 0..4 {
            let ctx = extract_context(&cs, &new, depth, usize::MAX);
            let now: BTreeSet<String> = ctx.included_methods.iter().cloned().collect();
            prop_assert!(prev.is_subset(&now));
            prop_assert_eq!(&ctx.included_methods[0], &fx.names[touched[0]]);
            prev = now;
        }
        let a = extract_context(&cs, &new, 2, budget);
        let b = extract_context(&cs, &new, 2, budget);
        prop_assert_eq!(&a, &b);
        let lines = if a.snippet.is_empty() { 0 } else { a.snippet.split('\n').count() };
        prop_assert!(lines <= budget);
    }

    #[test]
    fn parsing_is_total(raw in ".{0,200}", judge in any::<bool>()) {
        let p = parse_prediction(&raw, if judge { Expect::JudgeMarkers } else { Expect::JsonShape });
        prop_assert_eq!(p.label.is_none(), p.parse_path == ParsePath::Failed);
        if let Some(c) = p.confidence {
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn json_wins_over_free_text(l in label(), noise in "[a-z ]{0,40}") {
        let other = if l == Label::Benign { "Defective" } else { "Benign" };
        let raw = format!("{noise}\n{{\"explanation\": \"e\", \"prediction\": \"{l}\"}}\nActually it is {other}.");
        let p = parse_prediction(&raw, Expect::JsonShape);
        prop_assert_eq!(p.label, Some(l));
        prop_assert_eq!(p.parse_path, ParsePath::Json);
    }

    #[test]
    fn harmonic_mean_properties(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let ab = harmonic(Some(a), Some(b)).unwrap();
        prop_assert_eq!(ab, harmonic(Some(b), Some(a)).unwrap());
        prop_assert!(ab <= 2.0 * a.min(b) + 1e-15);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn metrics_stay_in_range(pairs in prop::collection::vec((label(), label()), 1..40)) {
        let (y, p): (Vec<Label>, Vec<Label>) = pairs.into_iter().unzip();
        let m = driftlens::metrics::StandardMetrics::compute(&y, &p).unwrap();
        for v in [m.precision, m.recall, m.f1, m.fpr, m.accuracy] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((-1.0..=1.0).contains(&m.mcc));
        let c = ConfusionCounts::from_pairs(&y, &p);
        prop_assert_eq!(c.total(), y.len());
    }

    #[test]
    fn method_prompts_are_deterministic_and_clean(old in source(), new in source(), prev in label()) {
        let rec = driftlens::EvolutionRecord {
            new_file: VersionedFile { path: "A.java".into(), source: format!("{new}\nint changed;"), label: Label::Benign, version_id: "2".into() },
            old_file: Some(VersionedFile { path: "A.java".into(), source: old, label: prev, version_id: "1".into() }),
            match_kind: driftlens::MatchKind::Path,
            subset: Subset::B00,
            similarity: None,
        };
        let cs = diff(&rec.old_file.as_ref().unwrap().source, &rec.new_file.source, 3);
        let ctx = extract_context(&cs, &rec.new_file.source, 3, 400);
        let ex = vec!["x[i] = y;".to_string()];
        for m in MethodId::ALL {
            let a = build_method_prompt(m, &rec, &cs, Some(&ctx), Some(&ex)).unwrap();
            let b = build_method_prompt(m, &rec, &cs, Some(&ctx), Some(&ex)).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(!a.user.contains("\\textless"));
            prop_assert!(!a.user.contains("{{"));
        }
    }

    #[test]
    fn role_prompt_hygiene(prev in label(), unified in ".{0,80}", context in ".{0,80}") {
        let mat = DebateMaterials { record_id: "r".into(), prev_label: prev, unified, context };
        let a = build_role_prompt(Role::Analyzer, &mat, &[], 0).unwrap();
        for l in [Label::Benign, Label::Defective] {
            prop_assert!(!a.user.contains(&label_slot(l)));
        }
    }

    #[test]
    fn persistence_accuracy_bound(seed in any::<u64>(), eps in 0.0f64..0.3) {
        // labels flip with probability eps between versions
        use rand::Rng;
        let mut r = common::rng(seed);
        let n = 1000;
        let records: Vec<driftlens::EvolutionRecord> = (0..n).map(|i| {
            let old = if r.random_bool(0.2) { Label::Defective } else { Label::Benign };
            let new = if r.random_bool(eps) { if old == Label::Benign { Label::Defective } else { Label::Benign } } else { old };
            let f = |l: Label, v: &str| VersionedFile { path: format!("F{i}.java"), source: String::new(), label: l, version_id: v.into() };
            driftlens::EvolutionRecord { new_file: f(new, "2"), old_file: Some(f(old, "1")), match_kind: driftlens::MatchKind::Path, subset: Subset::from_labels(old, new), similarity: None }
        }).collect();
        let preds = predict_naive(&records, BaselineKind::LabelPersistent);
        let correct = records.iter().filter(|r| preds[r.id()] == r.new_label()).count();
        let acc = correct as f64 / n as f64;
        let sigma = (eps * (1.0 - eps) / n as f64).sqrt();
        prop_assert!(acc >= 1.0 - eps - 3.0 * sigma - 1e-12, "acc {} eps {}", acc, eps);
    }
}

#[test]
fn naive_persistent_zeroes_harmonic_means() {
    use driftlens::metrics::{evaluate, LabeledRecord, Prediction};
    let subsets = [Subset::B00, Subset::B10, Subset::D01, Subset::D11, Subset::B00];
    let recs: Vec<LabeledRecord> = subsets
        .iter()
        .enumerate()
        .map(|(i, &s)| LabeledRecord {
            id: i.to_string(),
            subset: s,
            truth: if matches!(s, Subset::D01 | Subset::D11) { Label::Defective } else { Label::Benign },
        })
        .collect();
    let preds: Vec<Prediction> = recs
        .iter()
        .map(|r| {
            let old = match r.subset {
                Subset::B10 | Subset::D11 => Label::Defective,
                _ => Label::Benign,
            };
            Prediction { record_id: r.id.clone(), label: Some(old), confidence: None, parse_path: None }
        })
        .collect();
    let rep = evaluate(&recs, &preds, "label-persistent").unwrap();
    assert_eq!(rep.subset_accuracy[&Subset::B00], Some(1.0));
    assert_eq!(rep.subset_accuracy[&Subset::D11], Some(1.0));
    assert_eq!(rep.subset_accuracy[&Subset::B10], Some(0.0));
    assert_eq!(rep.subset_accuracy[&Subset::D01], Some(0.0));
    assert_eq!(rep.hmb, Some(0.0));
    assert_eq!(rep.hmd, Some(0.0));
}
