//! Full and optimal-prefix Levenshtein distances and per-category reports.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Unit of comparison for distances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Unicode scalar values.
    #[default]
    Chars,
    Bytes,
}

/// Unit-cost edit distance with two rolling rows over the shorter input.
pub fn levenshtein_units<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0; short.len() + 1];
    for (i, lc) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, sc) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(lc != sc);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_units(&a, &b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixDistances {
    pub opt_distance: usize,
    /// Shortest prediction prefix attaining `opt_distance`.
    pub opt_prefix_len: usize,
    pub full_distance: usize,
}

/// One DP pass with prediction prefixes as rows: the last column of row `i`
/// is the distance from `prediction[..i]` to the full ground truth, so the
/// minimum over that column is the optimal-prefix distance and the final
/// row gives the full distance.
pub fn prefix_distances_units<T: PartialEq>(prediction: &[T], truth: &[T]) -> PrefixDistances {
    let m = truth.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0; m + 1];
    let mut best = (prev[m], 0);
    for (i, pc) in prediction.iter().enumerate() {
        cur[0] = i + 1;
        for (j, tc) in truth.iter().enumerate() {
            let sub = prev[j] + usize::from(pc != tc);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        if cur[m] < best.0 {
            best = (cur[m], i + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    PrefixDistances {
        opt_distance: best.0,
        opt_prefix_len: best.1,
        full_distance: prev[m],
    }
}

/// `(opt_distance, opt_prefix_len)` over Unicode scalar values.
pub fn opt_prefix_distance(prediction: &str, ground_truth: &str) -> (usize, usize) {
    let p: Vec<char> = prediction.chars().collect();
    let t: Vec<char> = ground_truth.chars().collect();
    let d = prefix_distances_units(&p, &t);
    (d.opt_distance, d.opt_prefix_len)
}

pub fn prefix_distances(prediction: &str, ground_truth: &str, granularity: Granularity) -> PrefixDistances {
    match granularity {
        Granularity::Chars => {
            let p: Vec<char> = prediction.chars().collect();
            let t: Vec<char> = ground_truth.chars().collect();
            prefix_distances_units(&p, &t)
        }
        Granularity::Bytes => prefix_distances_units(prediction.as_bytes(), ground_truth.as_bytes()),
    }
}

/// Collapses runs of spaces/tabs to one space and trims trailing whitespace
/// on every line.
pub fn normalize_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for (i, line) in s.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let mut in_run = false;
        for ch in line.trim_end_matches([' ', '\t', '\r']).chars() {
            if ch == ' ' || ch == '\t' {
                if !in_run {
                    out.push(' ');
                }
                in_run = true;
            } else {
                out.push(ch);
                in_run = false;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub normalize_ws: bool,
    pub granularity: Granularity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalInput {
    pub test_id: String,
    pub category: String,
    pub prediction: String,
    pub ground_truth: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub test_id: String,
    pub category: String,
    pub prediction: String,
    pub ground_truth: String,
    pub full_distance: usize,
    pub opt_distance: usize,
    pub opt_prefix_len: usize,
    pub conciseness_delta: usize,
}

pub fn evaluate_one(input: &EvalInput, opts: &EvalOptions) -> EvalRecord {
    let (pred, truth) = if opts.normalize_ws {
        (
            normalize_whitespace(&input.prediction),
            normalize_whitespace(&input.ground_truth),
        )
    } else {
        (input.prediction.clone(), input.ground_truth.clone())
    };
    let d = prefix_distances(&pred, &truth, opts.granularity);
    EvalRecord {
        test_id: input.test_id.clone(),
        category: input.category.clone(),
        prediction: input.prediction.clone(),
        ground_truth: input.ground_truth.clone(),
        full_distance: d.full_distance,
        opt_distance: d.opt_distance,
        opt_prefix_len: d.opt_prefix_len,
        conciseness_delta: d.full_distance - d.opt_distance,
    }
}

/// One record per input, in input order.
pub fn evaluate(tests: &[EvalInput], opts: &EvalOptions) -> Vec<EvalRecord> {
    tests.par_iter().map(|t| evaluate_one(t, opts)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: String,
    pub n_tests: usize,
    pub mean_opt: f64,
    pub mean_full: f64,
    pub median_opt: f64,
    pub median_full: f64,
}

fn mean(v: &[usize]) -> f64 {
    v.iter().sum::<usize>() as f64 / v.len() as f64
}

fn median(v: &mut [usize]) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

/// One row per category present, ordered by category name.
pub fn aggregate_report(records: &[EvalRecord]) -> Vec<CategoryReport> {
    let mut groups: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for r in records {
        let g = groups.entry(r.category.as_str()).or_default();
        g.0.push(r.opt_distance);
        g.1.push(r.full_distance);
    }
    groups
        .into_iter()
        .map(|(category, (mut opt, mut full))| CategoryReport {
            category: category.to_string(),
            n_tests: opt.len(),
            mean_opt: mean(&opt),
            mean_full: mean(&full),
            median_opt: median(&mut opt),
            median_full: median(&mut full),
        })
        .collect()
}

/// A single row named `all` over every record, or `None` if there are none.
pub fn overall_report(records: &[EvalRecord]) -> Option<CategoryReport> {
    if records.is_empty() {
        return None;
    }
    let mut opt: Vec<usize> = records.iter().map(|r| r.opt_distance).collect();
    let mut full: Vec<usize> = records.iter().map(|r| r.full_distance).collect();
    Some(CategoryReport {
        category: "all".into(),
        n_tests: records.len(),
        mean_opt: mean(&opt),
        mean_full: mean(&full),
        median_opt: median(&mut opt),
        median_full: median(&mut full),
    })
}

pub fn write_report_csv(path: &Path, rows: &[CategoryReport]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["category", "n", "mean_opt", "median_opt", "mean_full", "median_full"])?;
    for r in rows {
        w.write_record([
            r.category.clone(),
            r.n_tests.to_string(),
            format!("{:.4}", r.mean_opt),
            format!("{:.4}", r.median_opt),
            format!("{:.4}", r.mean_full),
            format!("{:.4}", r.median_full),
        ])?;
    }
    w.flush()?;
    Ok(())
}
