mod common;

use scopeforge::scopes::{extract_scopes, Category, LoggingPatterns};

#[test]
fn fixture_corpus_is_large_enough() {
    let records = common::fixture_records();
    assert!(records.len() >= 30, "{} files", records.len());
}

#[test]
fn every_fixture_span_is_sound() {
    let logging = LoggingPatterns::default();
    for r in common::fixture_records() {
        let fs = extract_scopes(&r, &logging).unwrap();
        assert!(fs.diagnostics.is_clean(), "{}: {:?}", r.repo_relative_path, fs.diagnostics);
        let v = common::soundness_violations(&r.content, r.language, &fs.candidates);
        assert!(v.is_empty(), "{}: {v:?}", r.repo_relative_path);
    }
}

#[test]
fn annotated_scopes_match() {
    let logging = LoggingPatterns::default();
    let records = common::fixture_records();
    let mut wrong = Vec::new();
    for a in common::annotations() {
        let r = records.iter().find(|r| r.repo_relative_path == a.path).expect(&a.path);
        let open = common::annotated_opener(&r.content, &a).expect(&a.needle);
        let fs = extract_scopes(r, &logging).unwrap();
        let got = fs.candidates.iter().find(|c| c.start_byte == open + 1).map(|c| c.category);
        if got != Some(a.category) {
            wrong.push(format!("{} {:?}: expected {}, got {got:?}", a.path, a.needle, a.category));
        }
    }
    let keyword_wrong = wrong
        .iter()
        .filter(|w| ["if_body", "else_body", "for_body"].iter().any(|k| w.contains(&format!("expected {k}"))))
        .count();
    assert!(wrong.len() <= 2 && keyword_wrong == 0, "{wrong:#?}");
    let _ = Category::ALL;
}
