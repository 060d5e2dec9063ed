//! Synthetic inputs for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use driftlens::{Label, VersionSet, VersionedFile};

fn statement(r: &mut ChaCha8Rng) -> String {
    format!("        value_{:x} = helper({}) + {};", r.random::<u32>(), r.random_range(0..50), r.random_range(0..9))
}

/// A Java class of `methods` methods, each calling up to two earlier ones.
pub fn java_class(seed: u64, methods: usize, body_lines: usize) -> String {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut out = format!("public class Bench{seed} {{\n    private int value = 0;\n\n");
    for i in 0..methods {
        out += &format!("    public int step{i}(int x) {{\n");
        for _ in 0..body_lines {
            out += &statement(&mut r);
            out.push('\n');
        }
        for _ in 0..r.random_range(0..=2) {
            if i > 0 {
                out += &format!("        x += step{}(x);\n", r.random_range(0..i));
            }
        }
        out += "        return x;\n    }\n\n";
    }
    out += "}\n";
    out
}

/// Replaces every `stride`-th statement line with a new one.
pub fn edit(source: &str, seed: u64, stride: usize) -> String {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(source.len());
    for (i, line) in source.lines().enumerate() {
        if i % stride.max(1) == 0 && line.contains("helper(") {
            out += &statement(&mut r);
        } else {
            out += line;
        }
        out.push('\n');
    }
    out
}

/// Two versions of a project with `files` files; the newer one edits every
/// file slightly and renames every tenth.
pub fn version_pair(seed: u64, files: usize) -> (VersionSet, VersionSet) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut old = Vec::with_capacity(files);
    let mut new = Vec::with_capacity(files);
    for i in 0..files {
        let src = java_class(seed.wrapping_add(i as u64), 6, 8);
        let label = if r.random_bool(0.2) { Label::Defective } else { Label::Benign };
        let path = format!("org/bench/C{i}.java");
        let new_path = if i % 10 == 0 { format!("org/bench/moved/C{i}.java") } else { path.clone() };
        new.push(VersionedFile { path: new_path, source: edit(&src, i as u64, 7), label, version_id: "2".into() });
        old.push(VersionedFile { path, source: src, label, version_id: "1".into() });
    }
    (VersionSet::new("bench", "1", old).unwrap(), VersionSet::new("bench", "2", new).unwrap())
}

/// Random labels and predictions for metric benchmarks.
pub fn label_vectors(seed: u64, n: usize) -> (Vec<Label>, Vec<Label>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |p: f64| if r.random_bool(p) { Label::Defective } else { Label::Benign };
    let y: Vec<Label> = (0..n).map(|_| draw(0.2)).collect();
    let p: Vec<Label> = (0..n).map(|_| draw(0.3)).collect();
    (y, p)
}
