//! Search for test labels inside training data.

use std::collections::{BTreeSet, HashMap};

use aho_corasick::AhoCorasick;
use serde::{Deserialize, Serialize};

use super::CompletionPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    ExactLabel,
    LabelSubstringOfTrainFile,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LeakageFinding {
    pub test_pair_id: String,
    pub train_pair_id: String,
    pub match_kind: MatchKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub findings: Vec<LeakageFinding>,
    /// Test labels that were empty after normalization and not searched.
    pub skipped_empty: Vec<String>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn leaked_test_ids(&self) -> BTreeSet<&str> {
        self.findings.iter().map(|f| f.test_pair_id.as_str()).collect()
    }
}

/// Strips the end-of-text token and converts CRLF/CR line endings to LF.
pub fn normalize_label(text: &str, eot_token: &str) -> String {
    let stripped = if eot_token.is_empty() {
        text.to_string()
    } else {
        text.replace(eot_token, "")
    };
    stripped.replace("\r\n", "\n").replace('\r', "\n")
}

/// Reports every (test, train) pair where the normalized test label equals
/// the training label (`ExactLabel`) or occurs anywhere in the training
/// pair's contiguous query+label text (`LabelSubstringOfTrainFile`).
pub fn leakage_scan(
    train_pairs: &[CompletionPair],
    test_labels: &[(String, String)],
    eot_token: &str,
) -> LeakageReport {
    let mut report = LeakageReport::default();
    // Identical test labels share one automaton pattern.
    let mut patterns: Vec<String> = Vec::new();
    let mut tests_of_pattern: Vec<Vec<&str>> = Vec::new();
    let mut pattern_of_text: HashMap<String, usize> = HashMap::new();
    for (test_id, label) in test_labels {
        let norm = normalize_label(label, eot_token);
        if norm.is_empty() {
            report.skipped_empty.push(test_id.clone());
            continue;
        }
        let idx = *pattern_of_text.entry(norm.clone()).or_insert_with(|| {
            patterns.push(norm);
            tests_of_pattern.push(Vec::new());
            patterns.len() - 1
        });
        tests_of_pattern[idx].push(test_id);
    }
    if patterns.is_empty() {
        return report;
    }
    let automaton = AhoCorasick::new(&patterns).expect("literal patterns build");

    let mut findings = BTreeSet::new();
    for train in train_pairs {
        let train_label = normalize_label(train.label_without_eot(), &train.eot_token);
        let exact = pattern_of_text.get(&train_label).copied();
        let mut haystack = normalize_label(&train.query, &train.eot_token);
        haystack.push_str(&train_label);
        let mut hits = BTreeSet::new();
        for m in automaton.find_overlapping_iter(&haystack) {
            hits.insert(m.pattern().as_usize());
        }
        if let Some(e) = exact {
            hits.insert(e);
        }
        for idx in hits {
            let kind = if Some(idx) == exact {
                MatchKind::ExactLabel
            } else {
                MatchKind::LabelSubstringOfTrainFile
            };
            for test_id in &tests_of_pattern[idx] {
                findings.insert(LeakageFinding {
                    test_pair_id: test_id.to_string(),
                    train_pair_id: train.pair_id.clone(),
                    match_kind: kind,
                });
            }
        }
    }
    report.findings = findings.into_iter().collect();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairs::{PairKind, DEFAULT_EOT_TOKEN};
    use crate::scopes::Category;

    fn train(id: &str, query: &str, label: &str) -> CompletionPair {
        CompletionPair {
            pair_id: id.into(),
            query: query.into(),
            label: format!("{label}{DEFAULT_EOT_TOKEN}"),
            mask_len: query.len(),
            kind: PairKind::Primary,
            start_shift_bytes: 0,
            category: Category::FuncBody,
            file_id: "f".into(),
            scope_start_byte: query.len(),
            scope_end_byte: query.len() + label.len(),
            eot_token: DEFAULT_EOT_TOKEN.into(),
        }
    }

    #[test]
    fn disjoint_corpora_are_clean() {
        let t = vec![train("t1", "int a;", " return alpha; }")];
        let tests = vec![("x1".to_string(), format!(" return beta; }}{DEFAULT_EOT_TOKEN}"))];
        assert!(leakage_scan(&t, &tests, DEFAULT_EOT_TOKEN).is_clean());
    }

    #[test]
    fn exact_label_match() {
        let t = vec![train("t1", "q", "do_it(1);")];
        let tests = vec![("x1".to_string(), format!("do_it(1);{DEFAULT_EOT_TOKEN}"))];
        let r = leakage_scan(&t, &tests, DEFAULT_EOT_TOKEN);
        assert_eq!(r.findings.len(), 1);
        assert_eq!(r.findings[0].match_kind, MatchKind::ExactLabel);
    }

    #[test]
    fn planted_copy_in_label_or_query() {
        let secret = "compute_secret(x, y, z);";
        let t = vec![
            train("t1", "int a;", &format!("pre {secret} post")),
            train("t2", &format!("void g() {{ {secret} }}"), "tail"),
            train("t3", "nothing", "here"),
        ];
        let tests = vec![("x1".to_string(), secret.to_string())];
        let r = leakage_scan(&t, &tests, DEFAULT_EOT_TOKEN);
        let trains: Vec<_> = r.findings.iter().map(|f| f.train_pair_id.as_str()).collect();
        assert_eq!(trains, ["t1", "t2"]);
        assert!(r.findings.iter().all(|f| f.match_kind == MatchKind::LabelSubstringOfTrainFile));
    }

    #[test]
    fn line_endings_are_normalized() {
        let t = vec![train("t1", "q", "a();\nb();")];
        let tests = vec![("x1".to_string(), "a();\r\nb();".to_string())];
        assert_eq!(leakage_scan(&t, &tests, DEFAULT_EOT_TOKEN).findings.len(), 1);
    }

    #[test]
    fn empty_labels_are_skipped() {
        let t = vec![train("t1", "q", "x")];
        let tests = vec![("x1".to_string(), DEFAULT_EOT_TOKEN.to_string())];
        let r = leakage_scan(&t, &tests, DEFAULT_EOT_TOKEN);
        assert!(r.is_clean());
        assert_eq!(r.skipped_empty, vec!["x1".to_string()]);
    }
}
