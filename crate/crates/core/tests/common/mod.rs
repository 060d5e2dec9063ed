//! Generators shared by the property and acceptance suites.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use driftlens::{Label, VersionSet, VersionedFile};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A Java class generated from a declared call graph.
pub struct JavaFixture {
    pub source: String,
    pub names: Vec<String>,
    /// Caller index to callee index.
    pub edges: BTreeSet<(usize, usize)>,
}

const STEMS: &[&str] = &[
    "parse", "validate", "compute", "render", "flush", "load", "store", "merge", "split", "emit", "reset", "apply",
];

fn header(style: usize, name: &str) -> Vec<String> {
    match style % 5 {
        0 => vec![format!("    public int {name}(int x) {{")],
        1 => vec![format!("    private static String {name}(String s, int[] arr) throws IOException {{")],
        2 => vec!["    @Override".into(), format!("    protected void {name}() {{")],
        3 => vec![format!("    <T> List<T> {name}(Map<String, T> m) {{")],
        _ => vec![format!("    public synchronized long {name}(")  , "            long a,".into(), "            long b) {".into()],
    }
}

/// Builds a class whose methods call exactly the declared callees. Comments
/// and string literals mention other method names as noise.
pub fn java_fixture(seed: u64) -> JavaFixture {
    let mut r = rng(seed);
    let n = 3 + (seed as usize % 10);
    let names: Vec<String> = (0..n).map(|i| format!("{}{}", STEMS[i % STEMS.len()], i)).collect();
    let mut edges = BTreeSet::new();
    for a in 0..n {
        for b in 0..n {
            if r.random_bool(if a == b { 0.05 } else { 0.22 }) {
                edges.insert((a, b));
            }
        }
    }
    let inner_from = if seed.is_multiple_of(3) { n / 2 } else { n };

    let mut lines: Vec<String> = vec![
        "package org.example.fixture;".into(),
        "".into(),
        "import java.io.IOException;".into(),
        "import java.util.*;".into(),
        "".into(),
        "/* Generated fixture: the names below in comments must not count as calls: reset0() */".into(),
        format!("public class Fixture{seed} {{"),
        "    private int counter = 0;".into(),
        "    private final String label = \"render1() {\";".into(),
        "".into(),
    ];
    for i in 0..n {
        if i == inner_from {
            lines.push("    static class Inner {".into());
        }
        lines.extend(header(i + seed as usize, &names[i]));
        lines.push(format!("        // marker {i}"));
        let pad = r.random_range(2..40);
        for k in 0..pad {
            lines.push(format!("        int v{i}_{k} = {k} * counter;"));
        }
        let noise = &names[r.random_range(0..n)];
        lines.push(format!("        String s{i} = \"{noise}() {{ not a call\";"));
        lines.push(format!("        char c{i} = '{{';"));
        lines.push(format!("        // {noise}(counter) appears only in a comment"));
        for &(_, b) in edges.iter().filter(|(a, _)| *a == i) {
            lines.push(format!("        if (counter > {b}) {{"));
            lines.push(format!("            counter += String.valueOf({}(counter)).length();", names[b]));
            lines.push("        }".into());
        }
        lines.push("    }".into());
        lines.push("".into());
    }
    if inner_from < n {
        lines.push("    }".into());
    }
    lines.push("}".into());
    JavaFixture { source: lines.join("\n") + "\n", names, edges }
}

impl JavaFixture {
    /// New source in which each chosen method's marker line is replaced.
    pub fn touch(&self, methods: &[usize]) -> String {
        let mut out = self.source.clone();
        for &i in methods {
            out = out.replace(&format!("        // marker {i}\n"), &format!("        counter = {};\n", i + 100));
        }
        out
    }

    /// Brute-force breadth-first distances over caller and callee edges.
    pub fn oracle(&self, seeds: &[usize], depth: usize) -> BTreeSet<String> {
        let n = self.names.len();
        let mut dist = vec![usize::MAX; n];
        let mut q = VecDeque::new();
        for &s in seeds {
            dist[s] = 0;
            q.push_back(s);
        }
        while let Some(u) = q.pop_front() {
            for v in 0..n {
                let linked = self.edges.contains(&(u, v)) || self.edges.contains(&(v, u));
                if linked && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        (0..n).filter(|&i| dist[i] <= depth).map(|i| self.names[i].clone()).collect()
    }
}

fn random_line(r: &mut ChaCha8Rng) -> String {
    format!("stmt_{:016x} = compute({});", r.random::<u64>(), r.random_range(0..1000))
}

/// One synthetic matching trial.
pub struct MatchTrial {
    pub old: VersionSet,
    pub new: VersionSet,
    pub predecessor: String,
    pub new_path: String,
}

/// Old version: the predecessor plus up to 20 decoys; new version: a renamed
/// successor that keeps at least 70% of the predecessor's lines. Decoys share
/// at most 20% of their lines with the predecessor.
pub fn match_trial(seed: u64, with_predecessor: bool) -> MatchTrial {
    let mut r = rng(seed);
    let len = r.random_range(20..120);
    let pred: Vec<String> = (0..len).map(|_| random_line(&mut r)).collect();

    let retain = r.random_range(0.70..=1.0);
    let mut succ: Vec<String> = pred.iter().filter(|_| r.random_bool(retain)).cloned().collect();
    while (succ.len() as f64) < 0.7 * len as f64 {
        let missing: Vec<&String> = pred.iter().filter(|l| !succ.contains(l)).collect();
        succ.push(missing[0].clone());
    }
    let extra = r.random_range(0..=len / 4);
    for _ in 0..extra {
        let at = r.random_range(0..=succ.len());
        succ.insert(at, random_line(&mut r));
    }

    let mut old_files = Vec::new();
    if with_predecessor {
        old_files.push(file("src/old/Target.java", &pred, "1"));
    }
    let decoys = r.random_range(0..=20);
    for d in 0..decoys {
        let dlen = r.random_range(10..120);
        let shared = r.random_range(0..=dlen / 5);
        let mut lines: Vec<String> = (0..dlen - shared).map(|_| random_line(&mut r)).collect();
        for _ in 0..shared {
            let l = pred[r.random_range(0..pred.len())].clone();
            let at = r.random_range(0..=lines.len());
            lines.insert(at, l);
        }
        old_files.push(file(&format!("src/old/Decoy{d}.java"), &lines, "1"));
    }
    if old_files.is_empty() {
        old_files.push(file("src/old/Placeholder.java", &[random_line(&mut r)], "1"));
    }
    let new_path = "src/new/Renamed.java".to_string();
    MatchTrial {
        old: VersionSet::new("synthetic", "1", old_files).unwrap(),
        new: VersionSet::new("synthetic", "2", vec![file(&new_path, &succ, "2")]).unwrap(),
        predecessor: "src/old/Target.java".into(),
        new_path,
    }
}

fn file(path: &str, lines: &[String], v: &str) -> VersionedFile {
    VersionedFile { path: path.into(), source: lines.join("\n") + "\n", label: Label::Benign, version_id: v.into() }
}

/// Random text over a small alphabet so that diffs have many common lines.
pub fn random_text(r: &mut ChaCha8Rng, max_lines: usize) -> String {
    const ALPHA: &[&str] = &["a", "b", "c", "{", "}", "", "  x = 1;", "\ty", "return;", "a\r"];
    let n = r.random_range(0..=max_lines);
    let mut s: String = (0..n).map(|_| ALPHA[r.random_range(0..ALPHA.len())]).collect::<Vec<_>>().join("\n");
    if n > 0 && r.random_bool(0.8) {
        s.push('\n');
    }
    s
}

/// Edits of `base`: deletions, insertions and substitutions.
pub fn mutate(r: &mut ChaCha8Rng, base: &str) -> String {
    let mut lines: Vec<String> = base.split('\n').map(str::to_string).collect();
    let trailing = base.ends_with('\n');
    if trailing {
        lines.pop();
    }
    for _ in 0..r.random_range(0..6) {
        match r.random_range(0..3) {
            0 if !lines.is_empty() => {
                let i = r.random_range(0..lines.len());
                lines.remove(i);
            }
            1 => {
                let i = r.random_range(0..=lines.len());
                lines.insert(i, format!("new {}", r.random_range(0..5)));
            }
            _ if !lines.is_empty() => {
                let i = r.random_range(0..lines.len());
                lines[i] = format!("changed {}", r.random_range(0..5));
            }
            _ => {}
        }
    }
    let mut s = lines.join("\n");
    let keep_trailing = if r.random_bool(0.1) { !trailing } else { trailing };
    if keep_trailing && !lines.is_empty() {
        s.push('\n');
    }
    s
}
