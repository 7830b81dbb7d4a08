//! Shared fixtures for the CLI and acceptance suites.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use subjkit::ingest::BibRecord;

/// Word pool for synthetic titles, abstracts, and subject terms. Tokens are
/// distinct so hash-test embeddings of different terms stay near-orthogonal.
pub const WORDS: [&str; 40] = [
    "amber", "basalt", "cedar", "delta", "ember", "fjord", "garnet", "harbor", "iris", "juniper",
    "kelp", "lagoon", "marble", "nectar", "onyx", "prairie", "quartz", "reef", "sierra", "tundra",
    "umber", "vale", "willow", "xenon", "yarrow", "zephyr", "alder", "birch", "cobalt", "dune",
    "elm", "flint", "grove", "heath", "inlet", "jade", "knoll", "loam", "mesa", "nook",
];

/// A synthetic gold heading: three pool words plus a unique salt token.
pub fn heading(i: usize) -> String {
    format!(
        "{} {} {} s{i:03}",
        WORDS[i % WORDS.len()],
        WORDS[(i * 7 + 3) % WORDS.len()],
        WORDS[(i * 13 + 11) % WORDS.len()]
    )
}

/// Builds `n` records, each with `gold_per` distinct gold headings drawn so
/// no heading repeats across the corpus, cycling `lcc_class` over A/B/C.
/// `start` offsets ids and heading indices so two corpora never overlap.
pub fn corpus(n: usize, gold_per: usize, start: usize) -> Vec<BibRecord> {
    (start..start + n)
        .map(|i| {
            let class = [b'A', b'B', b'C'][i % 3] as char;
            BibRecord {
                id: format!("rec{i:03}"),
                title: format!(
                    "{} {} studies volume {i}",
                    WORDS[(i * 3) % WORDS.len()],
                    WORDS[(i * 5 + 1) % WORDS.len()]
                ),
                abstract_text: format!(
                    "a synthetic abstract about {} and {} for record {i}",
                    WORDS[(i * 11 + 2) % WORDS.len()],
                    WORDS[(i * 17 + 5) % WORDS.len()]
                ),
                lcc: format!("{class}{}", 100 + i),
                lcc_class: Some(class),
                gold_headings: (0..gold_per).map(|g| heading(i * gold_per + g)).collect(),
            }
        })
        .collect()
}

pub fn write_records(path: &Path, records: &[BibRecord]) {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec).expect("record json"));
        out.push('\n');
    }
    fs::write(path, out).expect("write records fixture");
}

pub fn write_lines(path: &Path, lines: &[String]) {
    let mut out = String::new();
    for line in lines {
        out.push_str(line);
        out.push('\n');
    }
    fs::write(path, out).expect("write lines");
}

/// Hash-test embedder config file.
pub fn write_embed_toml(path: &Path, dim: usize, seed: u64) {
    fs::write(
        path,
        format!("backend = \"hash-test\"\ndim = {dim}\nseed = {seed}\n"),
    )
    .expect("write embed config");
}

/// Mock chat client config file with an explicit seed.
pub fn write_mock_client_toml(path: &Path, mock_seed: u64) {
    fs::write(
        path,
        format!("backend = \"mock\"\nmock_seed = {mock_seed}\n"),
    )
    .expect("write client config");
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_subjkit"))
}

/// Runs the CLI in `dir`, returning (exit code, stdout, stderr).
pub fn run_cli(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("SUBJKIT_API_KEY")
        .env_remove("SUBJKIT_ENDPOINT")
        .output()
        .expect("spawn subjkit");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}
