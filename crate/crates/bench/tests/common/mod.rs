//! Small, fast configs shared by the integration tests.

#![allow(dead_code)]

use std::path::Path;

/// All seven grid methods on a 60-vs-240 synthetic scenario with reduced
/// training budgets.
pub fn quick_config(methods: &str, upsampling: &str, seeds: &str) -> String {
    format!(
        r#"
methods = {methods}
seeds = {seeds}
upsampling = "{upsampling}"

[[scenarios]]
id = "small"
n_nonthreat = 240
[scenarios.synthetic]
n_threat = 60
overlap = 0.5

[hyper.ensemble.forest]
n_trees = 15

[hyper.lda]
k = 5
iters = 40
infer_iters = 20

[hyper.lsi]
k = 10

[hyper.word2vec]
dim = 16
epochs = 3

[hyper.glove]
dim = 16
epochs = 10

[hyper.transformer]
bpe_vocab = 400

[hyper.transformer.model]
max_len = 32

[hyper.transformer.train]
epochs = 3

[hyper.transformer.train.optimizer]
lr = 1e-3
"#
    )
}

pub const ALL_GRID_METHODS: &str =
    r#"["tfidf", "glove", "cbow", "skipgram", "lda", "lsi", "transformer_lora"]"#;

pub fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Every file below `root` as (relative path, contents), sorted by path.
pub fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
