use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vulnclf::datapipe::*;

fn sample(id: &str, text: &str, label: u8) -> CodeSample {
    CodeSample::new(id, text, label).with_origin("t")
}

#[test]
fn severity_is_the_median() {
    let group = |sev: &[f64]| -> Vec<CodeSample> {
        sev.iter()
            .enumerate()
            .map(|(i, &s)| sample(&i.to_string(), "f();", 1).with_severity(s))
            .collect()
    };
    let r = resolve_conflicts(&group(&[7.5, 9.8, 8.1])).unwrap();
    assert_eq!(r.severity, Some(8.1));
    let r = resolve_conflicts(&group(&[7.0, 9.0])).unwrap();
    assert_eq!(r.severity, Some(8.0));
    assert_eq!(median(&[]), None);
}

#[test]
fn patched_with_evidence_beats_vulnerable() {
    let group = [
        sample("1", "f();", 1)
            .with_tags(&["CWE-120"])
            .with_patch(PatchStatus::Vulnerable, false),
        sample("2", "f();", 1).with_tags(&["CWE-787"]),
        sample("3", "f();", 0).with_patch(PatchStatus::Patched, true),
    ];
    let r = resolve_conflicts(&group).unwrap();
    assert_eq!((r.label_binary, r.patch_status), (0, PatchStatus::Patched));
    assert!(r.cwe_tags.is_empty());

    // Without the patched member the union of tags survives.
    let r = resolve_conflicts(&group[..2]).unwrap();
    assert_eq!(r.label_binary, 1);
    assert_eq!(r.cwe_tags, ["CWE-120", "CWE-787"]);
}

#[test]
fn dedup_counts_whitespace_variants() {
    let out = dedup(vec![
        sample("a", "int x;\nint y;", 0),
        sample("b", "int x;   int y;", 0),
        sample("c", "int z;", 1),
    ]);
    assert_eq!(out.removed_count, 1);
    assert_eq!(out.samples.len(), 2);
}

fn arb_sample() -> impl Strategy<Value = CodeSample> {
    (
        0usize..5,
        0u8..2,
        prop::sample::subsequence(vec!["CWE-120", "CWE-787", "CWE-476"], 0..3),
        prop::option::of(0.0f64..10.0),
        prop::sample::select(vec![
            PatchStatus::Unknown,
            PatchStatus::Vulnerable,
            PatchStatus::Patched,
        ]),
        any::<bool>(),
        prop::sample::select(vec![" ", "\n", "  \t"]),
    )
        .prop_map(|(k, label, tags, sev, patch, evidence, gap)| {
            let text = format!("int v{k};{gap}return v{k};");
            let mut s = sample("", &text, label)
                .with_tags(&tags)
                .with_patch(patch, evidence);
            s.severity = sev;
            s
        })
}

fn with_ids(mut v: Vec<CodeSample>) -> Vec<CodeSample> {
    for (i, s) in v.iter_mut().enumerate() {
        s.id = format!("id{i:03}");
    }
    v
}

proptest! {
    #[test]
    fn dedup_is_idempotent(v in prop::collection::vec(arb_sample(), 0..30)) {
        let once = dedup(with_ids(v));
        let twice = dedup(once.samples.clone());
        prop_assert_eq!(twice.removed_count, 0);
        prop_assert_eq!(twice.conflicts_resolved, 0);
        prop_assert_eq!(twice.samples, once.samples);
    }

    #[test]
    fn conflict_resolution_ignores_order(v in prop::collection::vec(arb_sample(), 1..8), seed in any::<u64>()) {
        let group = with_ids(v);
        let mut shuffled = group.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(resolve_conflicts(&group).unwrap(), resolve_conflicts(&shuffled).unwrap());
    }

    #[test]
    fn dedup_result_set_ignores_order(v in prop::collection::vec(arb_sample(), 0..30), seed in any::<u64>()) {
        let v = with_ids(v);
        let mut shuffled = v.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let key = |mut s: Vec<CodeSample>| { s.sort_by(|a, b| a.id.cmp(&b.id)); s };
        let (a, b) = (dedup(v), dedup(shuffled));
        prop_assert_eq!(a.removed_count, b.removed_count);
        // Survivors of unanimous groups may differ in which copy is kept,
        // so compare on the normalized text and labelling.
        let view = |s: &CodeSample| (dedup_key(&s.source_text), s.label_binary, s.cwe_tags.clone(), s.patch_status, s.severity.map(f64::to_bits));
        let mut va: Vec<_> = key(a.samples).iter().map(view).collect();
        let mut vb: Vec<_> = key(b.samples).iter().map(view).collect();
        va.sort();
        vb.sort();
        prop_assert_eq!(va, vb);
    }

    #[test]
    fn split_partitions_deterministically(
        labels in prop::collection::vec(0u8..2, 2..60),
        frac in 0.05f64..0.95,
        seed in any::<u64>(),
        stratify in any::<bool>(),
    ) {
        let v: Vec<CodeSample> = labels.iter().enumerate().map(|(i, &l)| sample(&format!("{i:03}"), &format!("s{i}"), l)).collect();
        let a = split(v.clone(), frac, seed, stratify).unwrap();
        let b = split(v.clone(), frac, seed, stratify).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.train.len() + a.test.len(), v.len());
        let mut ids: Vec<&str> = a.train.iter().chain(&a.test).map(|s| s.id.as_str()).collect();
        // Each half keeps input order, so merging the sorted halves recovers the input.
        prop_assert!(a.train.windows(2).all(|w| w[0].id < w[1].id));
        prop_assert!(a.test.windows(2).all(|w| w[0].id < w[1].id));
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), v.len());
    }

    #[test]
    fn cleaning_is_idempotent(s in "(int|x|;| |\n|\r\n|\"|'|/|\\*|//|/\\*|\\*/|<b>|</p>|http://a\\.io/x|me@x\\.org|\\t){0,40}") {
        for p in [CleanProfile::Formai, CleanProfile::Aggregated] {
            let once = clean(&sample("x", &s, 0), p);
            let twice = clean(&once, p);
            prop_assert_eq!(&twice.source_text, &once.source_text);
            prop_assert!(once.cleaned);
        }
    }
}

#[derive(Clone, Debug)]
enum Piece {
    Code(&'static str),
    Literal(&'static str),
    Comment(&'static str),
}

const CODE: [&str; 9] = ["int", "x", "=", "1", ";", "\n", " ", "a+b", "()"];
const LITERALS: [&str; 4] = ["\"a//b\"", "\"/*x*/\"", "'/'", "\"q\\\"//\""];
const COMMENTS: [&str; 4] = ["/* c */", "/**/", "/* a\n b */", "// note\n"];

fn piece() -> impl Strategy<Value = Piece> {
    prop_oneof![
        4 => prop::sample::select(CODE.to_vec()).prop_map(Piece::Code),
        1 => prop::sample::select(LITERALS.to_vec()).prop_map(Piece::Literal),
        1 => prop::sample::select(COMMENTS.to_vec()).prop_map(Piece::Comment),
    ]
}

fn ident(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Expected output built from the pieces: comments vanish, a line comment
/// keeps its newline, and a comment between two identifier characters
/// leaves one space.
fn expected(pieces: &[Piece]) -> (String, String) {
    let mut src = String::new();
    for p in pieces {
        match p {
            Piece::Code(s) | Piece::Literal(s) | Piece::Comment(s) => src.push_str(s),
        }
    }
    let mut out = String::new();
    for (i, p) in pieces.iter().enumerate() {
        match p {
            Piece::Code(s) | Piece::Literal(s) => out.push_str(s),
            Piece::Comment(c) => {
                let line = c.ends_with('\n');
                let next = if line {
                    Some('\n')
                } else {
                    pieces[i + 1..].iter().find_map(|p| match p {
                        Piece::Code(s) | Piece::Literal(s) | Piece::Comment(s) => s.chars().next(),
                    })
                };
                if ident(out.chars().last()) && ident(next) {
                    out.push(' ');
                }
                if line {
                    out.push('\n');
                }
            }
        }
    }
    (src, out)
}

proptest! {
    #[test]
    fn comment_stripper_matches_construction(pieces in prop::collection::vec(piece(), 0..30)) {
        let (src, want) = expected(&pieces);
        prop_assert_eq!(strip_c_comments(&src), want);
    }
}

fn write(path: &Path, text: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

#[test]
fn adapters_agree_on_the_same_records() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rows = [
        ("int f(void) { return 0; }", 0u8, None),
        (
            "void g(char *s) { char b[4]; strcpy(b, s); }",
            1,
            Some("CWE-121"),
        ),
        ("void h(int *p) { free(p); free(p); }", 1, Some("CWE-415")),
    ];
    let mut jsonl = String::new();
    let mut csv = String::from("func,target,tags\n");
    for (i, (code, label, tag)) in rows.iter().enumerate() {
        let tags: Vec<&str> = tag.iter().copied().collect();
        jsonl.push_str(&serde_json::json!({"id": i, "source_text": code, "label_binary": label, "cwe_tags": tags}).to_string());
        jsonl.push('\n');
        csv.push_str(&format!("\"{code}\",{label},{}\n", tags.join(";")));
        let path = match tag {
            Some(t) => d.join(format!("tree/vulnerable/{t}/f{i}.c")),
            None => d.join(format!("tree/safe/f{i}.c")),
        };
        write(&path, code);
    }
    write(&d.join("a.jsonl"), &jsonl);
    write(&d.join("a.csv"), &csv);

    let view = |r: IngestReport| {
        assert_eq!(r.skipped, 0, "{:?}", r.diagnostics);
        let mut v: Vec<_> = r
            .samples
            .into_iter()
            .map(|s| (s.source_text, s.label_binary, s.cwe_tags))
            .collect();
        v.sort();
        v
    };
    let cols = ColumnMap::parse("code=func,label=target,cwe_tags=tags").unwrap();
    let a = view(ingest(&Adapter::jsonl(), &d.join("a.jsonl"), None).unwrap());
    let b = view(ingest(&Adapter::csv(cols), &d.join("a.csv"), None).unwrap());
    let c = view(ingest(&Adapter::Directory, &d.join("tree"), None).unwrap());
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(a.len(), 3);
}

#[test]
fn malformed_records_are_skipped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.jsonl");
    write(
        &p,
        "{\"source_text\":\"int a;\",\"label_binary\":0}\nnot json\n{\"source_text\":\"\",\"label_binary\":1}\n{\"source_text\":\"int b;\",\"label_binary\":7}\n",
    );
    let r = ingest(&Adapter::jsonl(), &p, None).unwrap();
    assert_eq!((r.samples.len(), r.skipped), (1, 3));
    assert_eq!(r.diagnostics.len(), 3);
}

fn corpus_file(dir: &Path) -> std::path::PathBuf {
    let mut text = String::new();
    for i in 0..40 {
        let code = if i % 2 == 0 {
            format!("/* gen {i} */\nvoid f{i}(char *s) {{ char b[{i}]; strcpy(b, s); }}")
        } else {
            format!("int g{i}(int x) {{ return x + {i}; }}")
        };
        text.push_str(&serde_json::json!({"id": format!("r{i}"), "source_text": code, "label_binary": i % 2 == 0}).to_string());
        text.push('\n');
    }
    // A reindented duplicate.
    text.push_str(&serde_json::json!({"id": "dup", "source_text": "int  g1(int x)\n{ return x + 1; }", "label_binary": 0}).to_string());
    text.push('\n');
    let p = dir.join("in.jsonl");
    write(&p, &text);
    p
}

#[test]
fn rebuild_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = corpus_file(dir.path());
    let opts = BuildOptions {
        inputs: vec![InputSpec::detect(&input)],
        ..BuildOptions::default()
    };
    let m1 = build_dataset(&opts, &dir.path().join("one")).unwrap();
    let m2 = build_dataset(&opts, &dir.path().join("two")).unwrap();
    assert_eq!(m1, m2);
    for f in ["train.jsonl", "test.jsonl", "manifest.json"] {
        assert_eq!(
            fs::read(dir.path().join("one").join(f)).unwrap(),
            fs::read(dir.path().join("two").join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(m1.stages.removed_count, 1);
    assert_eq!(m1.stages.train + m1.stages.test, 40);
    assert_eq!(m1.test_class_counts.values().sum::<usize>(), m1.stages.test);

    let other = BuildOptions { seed: 43, ..opts };
    build_dataset(&other, &dir.path().join("three")).unwrap();
    assert_ne!(
        fs::read(dir.path().join("one/test.jsonl")).unwrap(),
        fs::read(dir.path().join("three/test.jsonl")).unwrap()
    );
}

#[test]
fn written_splits_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let input = corpus_file(dir.path());
    let opts = BuildOptions {
        inputs: vec![InputSpec::detect(&input)],
        ..BuildOptions::default()
    };
    build_dataset(&opts, &dir.path().join("out")).unwrap();
    let train = read_jsonl(&dir.path().join("out/train.jsonl")).unwrap();
    let test = read_jsonl(&dir.path().join("out/test.jsonl")).unwrap();
    assert!(train
        .iter()
        .chain(&test)
        .all(|s| s.cleaned && s.label.is_some()));
    // The formai profile drops the banner comments.
    assert!(train
        .iter()
        .chain(&test)
        .all(|s| !s.source_text.contains("gen")));
    let manifest = BuildManifest::load(&dir.path().join("out/manifest.json")).unwrap();
    assert_eq!(manifest.stages.train, train.len());
}

#[test]
fn obfuscation_renames_user_identifiers_only() {
    let s = sample(
        "x",
        "int helper(int n) { int total = n; strcpy(buf, src); return total; }",
        0,
    );
    let (o, flag) = obfuscate_identifiers(&s);
    assert!(flag.is_none());
    let t = &o.source_text;
    assert!(t.contains("strcpy") && t.contains("int") && t.contains("return"));
    assert!(!t.contains("helper") && !t.contains("total"));
    assert!(t.contains("FUNC1") && t.contains("VAR1"));
}
