//! Benchmark program generators.
//!
//! All generated code keeps no register live across blocks: every value that
//! crosses a block boundary lives in a shared global, with per-thread copies
//! suffixed by the thread id. Input data comes from SplitMix64 seeded with
//! the bench seed; each value is `next_u64() % range`.

use std::fmt::Write;
use std::str::FromStr;

use rand::RngCore;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::Serialize;

use crate::ir::{parse_program, Program};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchKind {
    Quicksort,
    Matmul,
    Linkedlist,
}

impl BenchKind {
    pub const ALL: [BenchKind; 3] = [BenchKind::Quicksort, BenchKind::Matmul, BenchKind::Linkedlist];

    pub fn short(self) -> &'static str {
        match self {
            BenchKind::Quicksort => "qs",
            BenchKind::Matmul => "mm",
            BenchKind::Linkedlist => "ll",
        }
    }

    pub fn default_size(self) -> usize {
        match self {
            BenchKind::Quicksort => 100,
            BenchKind::Matmul => 8,
            BenchKind::Linkedlist => 64,
        }
    }
}

impl FromStr for BenchKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "qs" | "quicksort" => Ok(BenchKind::Quicksort),
            "mm" | "matmul" => Ok(BenchKind::Matmul),
            "ll" | "linkedlist" => Ok(BenchKind::Linkedlist),
            _ => Err(format!("unknown benchmark `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct BenchSpec {
    pub kind: BenchKind,
    /// Array length, matrix dimension or list length.
    pub size: usize,
    /// Slave thread cap (matmul only; the others always use two slaves).
    pub threads: usize,
    pub seed: u64,
}

impl BenchSpec {
    pub fn new(kind: BenchKind, seed: u64) -> Self {
        Self {
            kind,
            size: kind.default_size(),
            threads: if kind == BenchKind::Matmul { 4 } else { 2 },
            seed,
        }
    }

    /// Reject sizes the generators cannot build.
    pub fn check(&self) -> Result<(), String> {
        match self.kind {
            _ if self.size < 2 => Err(format!("{} size must be at least 2", self.kind.short())),
            BenchKind::Linkedlist if !self.size.is_multiple_of(2) => Err("ll size must be even".into()),
            BenchKind::Matmul if self.threads == 0 => Err("mm needs at least one slave thread".into()),
            _ => Ok(()),
        }
    }
}

pub fn input_values(seed: u64, n: usize, range: u64) -> Vec<i64> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    (0..n).map(|_| (rng.next_u64() % range) as i64).collect()
}

struct Src(String);

impl Src {
    fn new(name: &str) -> Self {
        Src(format!("program {name}\n"))
    }

    fn line(&mut self, l: impl AsRef<str>) {
        self.0.push_str(l.as_ref());
        self.0.push('\n');
    }

    fn array(&mut self, name: &str, vals: &[i64]) {
        let body: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
        if vals.iter().all(|v| *v == 0) {
            self.line(format!("array {name}[{}]", vals.len()));
        } else {
            self.line(format!("array {name}[{}] = [{}]", vals.len(), body.join(", ")));
        }
    }

    fn block(&mut self, label: &str, code: &[String]) {
        writeln!(self.0, "  block {label} {{").unwrap();
        for c in code {
            writeln!(self.0, "    {c}").unwrap();
        }
        self.0.push_str("  }\n");
    }
}

macro_rules! code {
    ($($l:expr),* $(,)?) => { [$($l.to_string()),*] };
}

fn finish(src: Src) -> Program {
    parse_program(&src.0).expect("generated program parses")
}

/// Increment `done` under `m` and stop.
fn done_block(s: &mut Src, label: &str) {
    s.block(
        label,
        &code!["lock m", "ld r1, done", "set r2, 1", "add r1, r1, r2", "st done, r1", "unlock m", "halt"],
    );
}

/// Main partitions `a` once around its last element, two slaves sort the
/// halves with an explicit index stack, then main prints the array.
pub fn quicksort_program(input: &[i64]) -> Program {
    let n = input.len();
    assert!(n >= 2, "quicksort needs at least two elements");
    let last = n - 1;
    let mut s = Src::new("quicksort");
    for v in ["pv", "pi", "pj", "oi", "done", "lo1", "hi1", "lo2", "hi2"] {
        s.line(format!("shared {v} = 0"));
    }
    for k in 1..=2 {
        for v in ["sp", "l", "h", "i", "j", "pv"] {
            s.line(format!("shared {v}_{k} = 0"));
        }
    }
    s.array("a", input);
    for k in 1..=2 {
        s.array(&format!("stk_{k}"), &vec![0; 2 * n + 4]);
    }
    s.line("mutex m");

    s.line("thread 0 {");
    s.block(
        "M0",
        &code![format!("set r1, {last}"), "lda r2, a, r1", "st pv, r2", "set r1, 0", "st pi, r1", "st pj, r1", "jmp M1"],
    );
    s.block(
        "M1",
        &code!["ld r1, pj", format!("set r2, {last}"), "cmp_lt r3, r1, r2", "br nez r3, M2, M4"],
    );
    s.block(
        "M2",
        &code!["ld r1, pj", "lda r2, a, r1", "ld r3, pv", "cmp_lt r4, r2, r3", "br nez r4, M3, M3b"],
    );
    s.block(
        "M3",
        &code![
            "ld r1, pi",
            "ld r2, pj",
            "lda r3, a, r1",
            "lda r4, a, r2",
            "sta a, r1, r4",
            "sta a, r2, r3",
            "set r5, 1",
            "add r1, r1, r5",
            "st pi, r1",
            "jmp M3b"
        ],
    );
    s.block("M3b", &code!["ld r1, pj", "set r2, 1", "add r1, r1, r2", "st pj, r1", "jmp M1"]);
    s.block(
        "M4",
        &code![
            "ld r1, pi",
            format!("set r2, {last}"),
            "lda r3, a, r1",
            "lda r4, a, r2",
            "sta a, r1, r4",
            "sta a, r2, r3",
            "set r5, 1",
            "sub r6, r1, r5",
            "set r7, 0",
            "st lo1, r7",
            "st hi1, r6",
            "add r6, r1, r5",
            "st lo2, r6",
            "st hi2, r2",
            "jmp M5"
        ],
    );
    s.block("M5", &code!["spawn 1", "jmp M6"]);
    s.block("M6", &code!["spawn 2", "jmp M7"]);
    s.block("M7", &code!["join 1", "join 2", "set r1, 0", "st oi, r1", "jmp M8"]);
    s.block(
        "M8",
        &code!["ld r1, oi", format!("set r2, {n}"), "cmp_lt r3, r1, r2", "br nez r3, M9, M10"],
    );
    s.block(
        "M9",
        &code!["ld r1, oi", "lda r2, a, r1", "set r3, 1", "add r4, r1, r3", "st oi, r4", "out r2", "jmp M8"],
    );
    s.block("M10", &code!["ld r1, done", "halt"]);
    s.line("}");

    for k in 1..=2 {
        let v = |x: &str| format!("{x}_{k}");
        let (sp, l, h, i, j, pv, stk) = (v("sp"), v("l"), v("h"), v("i"), v("j"), v("pv"), v("stk"));
        s.line(format!("thread {k} {{"));
        s.block(
            "S0",
            &code![
                format!("ld r1, lo{k}"),
                format!("ld r2, hi{k}"),
                "set r3, 0",
                format!("sta {stk}, r3, r1"),
                "set r4, 1",
                format!("sta {stk}, r4, r2"),
                "set r5, 2",
                format!("st {sp}, r5"),
                "jmp S1"
            ],
        );
        s.block(
            "S1",
            &code![format!("ld r1, {sp}"), "set r2, 0", "cmp_lt r3, r2, r1", "br nez r3, S2, S9"],
        );
        s.block(
            "S2",
            &code![
                format!("ld r1, {sp}"),
                "set r2, 2",
                "sub r1, r1, r2",
                format!("st {sp}, r1"),
                format!("lda r3, {stk}, r1"),
                format!("st {l}, r3"),
                "set r4, 1",
                "add r5, r1, r4",
                format!("lda r6, {stk}, r5"),
                format!("st {h}, r6"),
                "jmp S3"
            ],
        );
        s.block(
            "S3",
            &code![format!("ld r1, {l}"), format!("ld r2, {h}"), "cmp_lt r3, r1, r2", "br nez r3, S4, S1"],
        );
        s.block(
            "S4",
            &code![
                format!("ld r1, {h}"),
                "lda r2, a, r1",
                format!("st {pv}, r2"),
                format!("ld r3, {l}"),
                format!("st {i}, r3"),
                format!("st {j}, r3"),
                "jmp S5"
            ],
        );
        s.block(
            "S5",
            &code![format!("ld r1, {j}"), format!("ld r2, {h}"), "cmp_lt r3, r1, r2", "br nez r3, S6, S8"],
        );
        s.block(
            "S6",
            &code![
                format!("ld r1, {j}"),
                "lda r2, a, r1",
                format!("ld r3, {pv}"),
                "cmp_lt r4, r2, r3",
                "br nez r4, S7, S7b"
            ],
        );
        s.block(
            "S7",
            &code![
                "lock m",
                format!("ld r1, {i}"),
                format!("ld r2, {j}"),
                "lda r3, a, r1",
                "lda r4, a, r2",
                "sta a, r1, r4",
                "sta a, r2, r3",
                "set r5, 1",
                "add r1, r1, r5",
                format!("st {i}, r1"),
                "unlock m",
                "jmp S7b"
            ],
        );
        s.block(
            "S7b",
            &code![format!("ld r1, {j}"), "set r2, 1", "add r1, r1, r2", format!("st {j}, r1"), "jmp S5"],
        );
        s.block(
            "S8",
            &code![
                "lock m",
                format!("ld r1, {i}"),
                format!("ld r2, {h}"),
                "lda r3, a, r1",
                "lda r4, a, r2",
                "sta a, r1, r4",
                "sta a, r2, r3",
                "unlock m",
                "jmp S8b"
            ],
        );
        s.block(
            "S8b",
            &code![
                format!("ld r1, {sp}"),
                format!("ld r2, {l}"),
                format!("sta {stk}, r1, r2"),
                "set r3, 1",
                "add r4, r1, r3",
                format!("ld r5, {i}"),
                "sub r6, r5, r3",
                format!("sta {stk}, r4, r6"),
                "add r4, r4, r3",
                "add r7, r5, r3",
                format!("sta {stk}, r4, r7"),
                "add r4, r4, r3",
                format!("ld r8, {h}"),
                format!("sta {stk}, r4, r8"),
                "add r4, r4, r3",
                format!("st {sp}, r4"),
                "jmp S1"
            ],
        );
        done_block(&mut s, "S9");
        s.line("}");
    }
    finish(s)
}

pub fn gen_quicksort(spec: &BenchSpec) -> Program {
    quicksort_program(&input_values(spec.seed, spec.size, 1000))
}

/// `cap` slaves split the `dim*dim` output elements round-robin; each result
/// element is stored under `m`.
pub fn matmul_program(a: &[i64], b: &[i64], dim: usize, cap: usize) -> Program {
    assert!(dim >= 2, "matmul needs dim >= 2");
    assert_eq!(a.len(), dim * dim);
    assert_eq!(b.len(), dim * dim);
    let cells = dim * dim;
    let slaves = cap.clamp(1, cells);
    let mut s = Src::new("matmul");
    s.line("shared oi = 0");
    s.line("shared done = 0");
    for k in 1..=slaves {
        for v in ["e", "acc", "kk"] {
            s.line(format!("shared {v}_{k} = 0"));
        }
    }
    s.array("A", a);
    s.array("B", b);
    s.array("C", &vec![0; cells]);
    s.line("mutex m");

    s.line("thread 0 {");
    for k in 1..=slaves {
        let next = if k == slaves { "J".to_string() } else { format!("M{}", k + 1) };
        s.block(&format!("M{k}"), &code![format!("spawn {k}"), format!("jmp {next}")]);
    }
    let mut join: Vec<String> = (1..=slaves).map(|k| format!("join {k}")).collect();
    join.extend(code!["set r1, 0", "st oi, r1", "jmp O1"]);
    s.block("J", &join);
    s.block(
        "O1",
        &code!["ld r1, oi", format!("set r2, {cells}"), "cmp_lt r3, r1, r2", "br nez r3, O2, O3"],
    );
    s.block(
        "O2",
        &code!["ld r1, oi", "lda r2, C, r1", "set r3, 1", "add r4, r1, r3", "st oi, r4", "out r2", "jmp O1"],
    );
    s.block("O3", &code!["ld r1, done", "halt"]);
    s.line("}");

    for k in 1..=slaves {
        let v = |x: &str| format!("{x}_{k}");
        let (e, acc, kk) = (v("e"), v("acc"), v("kk"));
        s.line(format!("thread {k} {{"));
        s.block("S0", &code![format!("set r1, {}", k - 1), format!("st {e}, r1"), "jmp S1"]);
        s.block(
            "S1",
            &code![format!("ld r1, {e}"), format!("set r2, {cells}"), "cmp_lt r3, r1, r2", "br nez r3, S2, S6"],
        );
        s.block("S2", &code!["set r1, 0", format!("st {acc}, r1"), format!("st {kk}, r1"), "jmp S3"]);
        s.block(
            "S3",
            &code![format!("ld r1, {kk}"), format!("set r2, {dim}"), "cmp_lt r3, r1, r2", "br nez r3, S4, S5"],
        );
        s.block(
            "S4",
            &code![
                format!("ld r1, {e}"),
                format!("set r2, {dim}"),
                "div r3, r1, r2",
                "mul r4, r3, r2",
                "sub r5, r1, r4",
                format!("ld r6, {kk}"),
                "add r7, r4, r6",
                "lda r8, A, r7",
                "mul r9, r6, r2",
                "add r9, r9, r5",
                "lda r10, B, r9",
                "mul r8, r8, r10",
                format!("ld r11, {acc}"),
                "add r11, r11, r8",
                format!("st {acc}, r11"),
                "set r12, 1",
                "add r6, r6, r12",
                format!("st {kk}, r6"),
                "jmp S3"
            ],
        );
        s.block(
            "S5",
            &code!["lock m", format!("ld r1, {e}"), format!("ld r2, {acc}"), "sta C, r1, r2", "unlock m", "jmp S5b"],
        );
        s.block(
            "S5b",
            &code![format!("ld r1, {e}"), format!("set r2, {slaves}"), "add r1, r1, r2", format!("st {e}, r1"), "jmp S1"],
        );
        done_block(&mut s, "S6");
        s.line("}");
    }
    finish(s)
}

pub fn gen_matmul(spec: &BenchSpec) -> Program {
    let cells = spec.size * spec.size;
    let vals = input_values(spec.seed, 2 * cells, 10);
    matmul_program(&vals[..cells], &vals[cells..], spec.size, spec.threads)
}

/// Two slaves each build half of a list (nodes allocated from `top` under
/// `m`, appended after sentinel node 0 or 1); main links the halves and
/// prints the values in list order.
pub fn linkedlist_program(values: &[i64]) -> Program {
    let n = values.len();
    assert!(n >= 2 && n.is_multiple_of(2), "linked list length must be even and >= 2");
    let half = n / 2;
    let mut s = Src::new("linkedlist");
    s.line("shared top = 2");
    s.line("shared p = 0");
    s.line("shared done = 0");
    for k in 1..=2 {
        for v in ["c", "tail"] {
            s.line(format!("shared {v}_{k} = 0"));
        }
    }
    s.array("inp", values);
    s.array("val", &vec![0; n + 2]);
    let mut nxt = vec![0; n + 2];
    nxt[0] = -1;
    nxt[1] = -1;
    s.array("nxt", &nxt);
    s.line("mutex m");

    s.line("thread 0 {");
    s.block("M0", &code!["spawn 1", "jmp M1"]);
    s.block("M1", &code!["spawn 2", "jmp M2"]);
    s.block("M2", &code!["join 1", "join 2", "set r1, 0", "st p, r1", "jmp M3"]);
    s.block(
        "M3",
        &code!["ld r1, p", "lda r2, nxt, r1", "set r3, -1", "cmp_eq r4, r2, r3", "br nez r4, M5, M4"],
    );
    s.block("M4", &code!["ld r1, p", "lda r2, nxt, r1", "st p, r2", "jmp M3"]);
    s.block(
        "M5",
        &code!["ld r1, p", "set r2, 1", "lda r3, nxt, r2", "sta nxt, r1, r3", "set r4, 0", "lda r5, nxt, r4", "st p, r5", "jmp M6"],
    );
    s.block(
        "M6",
        &code!["ld r1, p", "set r2, -1", "cmp_eq r3, r1, r2", "br nez r3, M8, M7"],
    );
    s.block(
        "M7",
        &code!["ld r1, p", "lda r2, val, r1", "lda r3, nxt, r1", "st p, r3", "out r2", "jmp M6"],
    );
    s.block("M8", &code!["ld r1, done", "halt"]);
    s.line("}");

    for k in 1..=2 {
        let (c, tail) = (format!("c_{k}"), format!("tail_{k}"));
        s.line(format!("thread {k} {{"));
        s.block(
            "S0",
            &code!["set r1, 0", format!("st {c}, r1"), format!("set r2, {}", k - 1), format!("st {tail}, r2"), "jmp S1"],
        );
        s.block(
            "S1",
            &code![format!("ld r1, {c}"), format!("set r2, {half}"), "cmp_lt r3, r1, r2", "br nez r3, S2, S4"],
        );
        s.block(
            "S2",
            &code![
                "lock m",
                "ld r1, top",
                "set r2, 1",
                "add r3, r1, r2",
                "st top, r3",
                format!("ld r4, {c}"),
                format!("set r5, {}", (k - 1) * half),
                "add r4, r4, r5",
                "lda r6, inp, r4",
                "sta val, r1, r6",
                "set r7, -1",
                "sta nxt, r1, r7",
                format!("ld r8, {tail}"),
                "sta nxt, r8, r1",
                format!("st {tail}, r1"),
                "unlock m",
                "jmp S3"
            ],
        );
        s.block(
            "S3",
            &code![format!("ld r1, {c}"), "set r2, 1", "add r1, r1, r2", format!("st {c}, r1"), "jmp S1"],
        );
        done_block(&mut s, "S4");
        s.line("}");
    }
    finish(s)
}

pub fn gen_linkedlist(spec: &BenchSpec) -> Program {
    linkedlist_program(&input_values(spec.seed, spec.size, 1000))
}

pub fn generate(spec: &BenchSpec) -> Program {
    match spec.kind {
        BenchKind::Quicksort => gen_quicksort(spec),
        BenchKind::Matmul => gen_matmul(spec),
        BenchKind::Linkedlist => gen_linkedlist(spec),
    }
}

/// Output the benchmark must produce, computed on the host.
pub fn expected_output(spec: &BenchSpec) -> Vec<i64> {
    match spec.kind {
        BenchKind::Quicksort => {
            let mut v = input_values(spec.seed, spec.size, 1000);
            v.sort_unstable();
            v
        }
        BenchKind::Matmul => {
            let d = spec.size;
            let vals = input_values(spec.seed, 2 * d * d, 10);
            let (a, b) = vals.split_at(d * d);
            host_matmul(a, b, d)
        }
        BenchKind::Linkedlist => input_values(spec.seed, spec.size, 1000),
    }
}

pub fn host_matmul(a: &[i64], b: &[i64], d: usize) -> Vec<i64> {
    (0..d * d)
        .map(|e| {
            let (r, c) = (e / d, e % d);
            (0..d).map(|k| a[r * d + k] * b[k * d + c]).sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depgraph::{build_dgmp, SyncKind};
    use crate::ir::validate_user_program;
    use crate::vm::{run, Outcome, SchedConfig};

    fn out(p: &Program, q: u64) -> Vec<i64> {
        let r = run(p, &SchedConfig { quantum: q, ..SchedConfig::default() }).unwrap();
        assert_eq!(r.outcome, Outcome::Completed);
        r.output
    }

    #[test]
    fn quicksort_small_and_default() {
        let spec = BenchSpec { size: 4, seed: 1, ..BenchSpec::new(BenchKind::Quicksort, 1) };
        assert_eq!(out(&gen_quicksort(&spec), 5), expected_output(&spec));
        let spec = BenchSpec::new(BenchKind::Quicksort, 3);
        let o = out(&gen_quicksort(&spec), 50);
        assert_eq!(o.len(), 100);
        assert!(o.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(gen_quicksort(&spec), gen_quicksort(&spec));
    }

    #[test]
    fn quicksort_sorted_and_reversed_inputs() {
        let up: Vec<i64> = (0..30).collect();
        let down: Vec<i64> = (0..30).rev().collect();
        assert_eq!(out(&quicksort_program(&up), 7), up);
        assert_eq!(out(&quicksort_program(&down), 7), up);
        assert_eq!(out(&quicksort_program(&[5, 5]), 1), vec![5, 5]);
    }

    #[test]
    fn matmul_identity_and_oracle() {
        let id = [1, 0, 0, 1];
        let m = [3, 4, 5, 6];
        assert_eq!(out(&matmul_program(&id, &m, 2, 4), 3), m.to_vec());
        let spec = BenchSpec { size: 3, seed: 7, ..BenchSpec::new(BenchKind::Matmul, 7) };
        let want = expected_output(&spec);
        assert_eq!(out(&gen_matmul(&spec), 5), want);
        for cap in [1, 2, 4, 9, 20] {
            assert_eq!(out(&gen_matmul(&BenchSpec { threads: cap, ..spec }), 5), want);
        }
    }

    #[test]
    fn linkedlist_traversal() {
        assert_eq!(out(&linkedlist_program(&[1, 2, 3, 4]), 2), vec![1, 2, 3, 4]);
        assert_eq!(out(&linkedlist_program(&[9, 8]), 1), vec![9, 8]);
        let spec = BenchSpec::new(BenchKind::Linkedlist, 11);
        let o = out(&gen_linkedlist(&spec), 17);
        assert_eq!(o, expected_output(&spec));
    }

    #[test]
    fn benches_are_valid_and_schedule_independent() {
        for kind in BenchKind::ALL {
            let spec = BenchSpec::new(kind, 5);
            let p = generate(&spec);
            assert!(validate_user_program(&p).is_empty(), "{kind:?}");
            let want = expected_output(&spec);
            for q in [1, 3, 17, 1000] {
                assert_eq!(out(&p, q), want, "{kind:?} q{q}");
            }
        }
    }

    #[test]
    fn benches_exercise_all_arc_kinds() {
        for kind in BenchKind::ALL {
            let g = build_dgmp(&generate(&BenchSpec::new(kind, 5)));
            for k in [SyncKind::Create, SyncKind::Join, SyncKind::Lock] {
                assert!(g.sync_arcs.iter().any(|a| a.kind == k), "{kind:?} {k:?}");
            }
            assert!(!g.comm_arcs.is_empty());
        }
    }
}
