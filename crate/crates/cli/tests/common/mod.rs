#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use raven_core::eval::{GroundTruthEntry, MatchConfig, MethodOutput};
use raven_core::model::{normalize_category_name, normalize_entity_value};

pub const METHODS: [&str; 4] = ["speech", "ocr", "caption", "yolo"];

/// Runs the `raven` binary.
pub fn raven(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raven"))
        .args(args)
        .env("RAVEN_LOG", "error")
        .output()
        .expect("spawn raven")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub struct Demo {
    pub dir: PathBuf,
    pub config: String,
}

impl Demo {
    pub fn new(dir: &Path) -> Self {
        let config = raven_cli::demo::write_demo(dir).expect("write demo");
        Self {
            dir: dir.to_path_buf(),
            config: config.to_string_lossy().into_owned(),
        }
    }

    pub fn path(&self, rel: &str) -> String {
        self.dir.join(rel).to_string_lossy().into_owned()
    }

    pub fn store(&self) -> PathBuf {
        self.dir.join("store")
    }

    /// `raven --config <demo> <args...>`
    pub fn run(&self, args: &[&str]) -> Output {
        let mut all = vec!["--config", self.config.as_str()];
        all.extend_from_slice(args);
        raven(&all)
    }

    pub fn method_flags(&self) -> Vec<String> {
        METHODS
            .iter()
            .flat_map(|m| ["--method".to_string(), format!("{m}={}", self.path(&format!("methods/{m}.jsonl")))])
            .collect()
    }

    /// categorize, canonicalize, genschema, extract, eval; panics on the
    /// first non-zero exit.
    pub fn pipeline(&self, extra: &[&str]) {
        let manifest = self.path("manifest.jsonl");
        let truth = self.path("truth.jsonl");
        let flags = self.method_flags();
        let mut eval: Vec<&str> = vec!["eval", "--truth", truth.as_str()];
        eval.extend(flags.iter().map(String::as_str));
        let steps: Vec<Vec<&str>> = vec![
            vec!["categorize", "--manifest", manifest.as_str()],
            vec!["canonicalize"],
            vec!["genschema"],
            vec!["extract"],
            eval,
        ];
        for step in steps {
            let mut args = step.clone();
            args.extend_from_slice(extra);
            let out = self.run(&args);
            assert!(out.status.success(), "{step:?} failed: {}", stderr(&out));
        }
    }
}

/// Every file under `root` except lock files, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

pub fn oracle_levenshtein_sim(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - d[a.len()][b.len()] as f64 / longest as f64
}

pub fn oracle_jaccard(a: &str, b: &str) -> f64 {
    let ta: BTreeSet<&str> = a.split_whitespace().collect();
    let tb: BTreeSet<&str> = b.split_whitespace().collect();
    let inter = ta.iter().filter(|t| tb.contains(*t)).count();
    let union = ta.len() + tb.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn oracle_match(pred: &str, truth: &str, cfg: &MatchConfig) -> bool {
    let p = normalize_entity_value(pred);
    let t = normalize_entity_value(truth);
    !p.is_empty()
        && !t.is_empty()
        && (p == t || oracle_jaccard(&p, &t) >= cfg.jaccard || oracle_levenshtein_sim(&p, &t) >= cfg.levenshtein)
}

/// Nested loops over truth and outputs with no indexing or early exit.
pub fn oracle_recall(
    outputs: &[MethodOutput],
    truth: &[GroundTruthEntry],
    method: &str,
    entity_type: &str,
    cfg: &MatchConfig,
) -> (u64, u64) {
    let key = normalize_category_name(entity_type);
    let mut matched = 0;
    let mut total = 0;
    for t in truth {
        if normalize_category_name(&t.entity_type) != key {
            continue;
        }
        total += 1;
        let mut hit = false;
        for o in outputs {
            if o.method == method
                && o.clip_id == t.clip_id
                && normalize_category_name(&o.entity_type) == key
                && oracle_match(&o.value, &t.value, cfg)
            {
                hit = true;
            }
        }
        if hit {
            matched += 1;
        }
    }
    (matched, total)
}
