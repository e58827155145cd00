use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::depgraph::{build_cfg, BlockRef};
use crate::ir::Program;

use super::InstrumentError;

/// Compile-time signatures and the constants that keep the run-time
/// signature stream consistent along legal edges.
///
/// Block B of thread j updates `__sst<j> ^= d(B)` on entry and, when B is a
/// fan-in block, also `__sst<j> ^= __adj<j>`. After its check and commits B
/// sets [`EXIT_MARK`], so between blocks `__sst<j>` holds `exit(B) = s(B) ^
/// EXIT_MARK`. Each predecessor P of a fan-in group writes `__adj<j> =
/// beta(G) ^ exit(P)` after its check, so every legal edge yields
/// `__sst<j> == s(B)` at B's check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SignatureMap {
    pub sigs: BTreeMap<BlockRef, u16>,
    /// Constant XORed into `__sst<j>` at block entry.
    pub entry_xor: BTreeMap<BlockRef, u32>,
    /// Fan-in blocks, with the common base value of their group.
    pub fan_in: BTreeMap<BlockRef, u32>,
    /// Value a block stores into `__adj<j>` after its check.
    pub adjust: BTreeMap<BlockRef, u32>,
    /// Initial `__sst<j>` (the entry block signature) per thread.
    pub initial_sst: Vec<u32>,
    /// Initial `__adj<j>` per thread.
    pub initial_adj: Vec<u32>,
    /// `(from, to)` pairs where an illegal jump from `from` to the start of
    /// `to` reproduces the expected signature.
    pub undetectable: Vec<(BlockRef, BlockRef)>,
    pub lookup: BTreeMap<u16, BlockRef>,
}

const SIG_STRIDE: u32 = 0x9E37;

/// Bit a block sets in `__sst<j>` once its check and commits are done.
pub const EXIT_MARK: u32 = 0x1_0000;

impl SignatureMap {
    pub fn sig(&self, tid: usize, block: &str) -> u16 {
        self.sigs[&BlockRef::new(tid, block)]
    }

    pub fn is_fan_in(&self, tid: usize, block: &str) -> bool {
        self.fan_in.contains_key(&BlockRef::new(tid, block))
    }

    /// Run-time signature after `block` completed.
    pub fn exit(&self, tid: usize, block: &str) -> u32 {
        u32::from(self.sig(tid, block)) ^ EXIT_MARK
    }

    pub fn entry_xor(&self, tid: usize, block: &str) -> u32 {
        self.entry_xor[&BlockRef::new(tid, block)]
    }

    pub fn adjust(&self, tid: usize, block: &str) -> Option<u32> {
        self.adjust.get(&BlockRef::new(tid, block)).copied()
    }

    /// `s(src) ^ s(dst)` for an edge.
    pub fn edge_d(&self, tid: usize, src: &str, dst: &str) -> u16 {
        self.sig(tid, src) ^ self.sig(tid, dst)
    }

    /// Run-time signature at the check of `dst` after completing `src` and
    /// entering `dst` at its first instruction.
    pub fn runtime_after(&self, tid: usize, src: &str, dst: &str) -> u32 {
        let mut v = self.exit(tid, src) ^ self.entry_xor(tid, dst);
        if self.is_fan_in(tid, dst) {
            v ^= self.adjust(tid, src).unwrap_or(0);
        }
        v
    }

    /// Build the map from explicit signatures. Every thread block needs a
    /// non-zero signature and no two blocks may share one.
    pub fn from_signatures(p: &Program, sigs: BTreeMap<BlockRef, u16>) -> Result<Self, InstrumentError> {
        let mut lookup = BTreeMap::new();
        for t in &p.threads {
            for b in &t.blocks {
                let key = BlockRef::new(t.tid, &b.label);
                let s = *sigs
                    .get(&key)
                    .ok_or_else(|| InstrumentError::Signature(format!("no signature for {key}")))?;
                if s == 0 {
                    return Err(InstrumentError::Signature(format!("zero signature for {key}")));
                }
                if let Some(other) = lookup.insert(s, key.clone()) {
                    return Err(InstrumentError::Signature(format!("{key} and {other} share signature {s:#06x}")));
                }
            }
        }

        let mut entry_xor = BTreeMap::new();
        let mut fan_in = BTreeMap::new();
        let mut adjust = BTreeMap::new();
        let mut initial_sst = Vec::new();
        let mut initial_adj = Vec::new();
        let mut undetectable = Vec::new();

        for t in &p.threads {
            let cfg = build_cfg(t);
            let s = |l: &str| u32::from(sigs[&BlockRef::new(t.tid, l)]);
            let s_entry = s(&t.entry);
            // `None` stands for the virtual predecessor of the entry block,
            // whose exit value is the initial `__sst<j>`.
            let preds: BTreeMap<&str, Vec<Option<&str>>> = t
                .blocks
                .iter()
                .map(|b| {
                    let mut ps: Vec<Option<&str>> = Vec::new();
                    if b.label == t.entry {
                        ps.push(None);
                    }
                    ps.extend(cfg.predecessors(&b.label).into_iter().map(Some));
                    (b.label.as_str(), ps)
                })
                .collect();
            let exit_of = |x: Option<&str>| x.map_or(s_entry, |l| s(l) ^ EXIT_MARK);

            // Group fan-in blocks that share a predecessor.
            let fan_blocks: Vec<&str> = t
                .blocks
                .iter()
                .map(|b| b.label.as_str())
                .filter(|l| preds[l].len() >= 2)
                .collect();
            let mut group_of: BTreeMap<&str, usize> = BTreeMap::new();
            let mut parent: Vec<usize> = (0..fan_blocks.len()).collect();
            fn find(parent: &mut [usize], x: usize) -> usize {
                let mut r = x;
                while parent[r] != r {
                    r = parent[r];
                }
                parent[x] = r;
                r
            }
            let mut owner_of_pred: BTreeMap<Option<&str>, usize> = BTreeMap::new();
            for (i, b) in fan_blocks.iter().enumerate() {
                for pr in &preds[b] {
                    if let Some(&other) = owner_of_pred.get(pr) {
                        let (ra, rb) = (find(&mut parent, i), find(&mut parent, other));
                        if ra != rb {
                            parent[ra.max(rb)] = ra.min(rb);
                        }
                    } else {
                        owner_of_pred.insert(*pr, i);
                    }
                }
            }
            for (i, b) in fan_blocks.iter().enumerate() {
                group_of.insert(b, find(&mut parent, i));
            }
            // Base value of a group: exit value of the first predecessor of
            // its first block.
            let beta: BTreeMap<usize, u32> = group_of
                .values()
                .map(|&g| (g, exit_of(preds[fan_blocks[g]][0])))
                .collect();

            let mut adj0 = 0u32;
            for b in &t.blocks {
                let key = BlockRef::new(t.tid, &b.label);
                let ps = &preds[b.label.as_str()];
                if let Some(&g) = group_of.get(b.label.as_str()) {
                    let bt = beta[&g];
                    entry_xor.insert(key.clone(), bt ^ s(&b.label));
                    fan_in.insert(key, bt);
                    for pr in ps {
                        match pr {
                            Some(pl) => {
                                adjust.insert(BlockRef::new(t.tid, *pl), bt ^ s(pl) ^ EXIT_MARK);
                            }
                            None => adj0 = bt ^ s_entry,
                        }
                    }
                } else {
                    let d = ps.first().map_or(0, |pr| exit_of(*pr) ^ s(&b.label));
                    entry_xor.insert(key, d);
                }
            }

            // Any setter of a group's adjusting value can reach every block of
            // that group undetected.
            let members: BTreeMap<usize, Vec<&str>> = group_of.iter().fold(BTreeMap::new(), |mut m, (b, g)| {
                m.entry(*g).or_insert_with(Vec::new).push(*b);
                m
            });
            for blocks in members.values() {
                let setters: BTreeSet<&str> = blocks
                    .iter()
                    .flat_map(|b| preds[b].iter().flatten().copied())
                    .collect();
                for x in &setters {
                    for b in blocks {
                        if !cfg.has_edge(x, b) {
                            undetectable.push((BlockRef::new(t.tid, *x), BlockRef::new(t.tid, *b)));
                        }
                    }
                }
            }

            initial_sst.push(s_entry);
            initial_adj.push(adj0);
        }
        undetectable.sort();

        Ok(Self {
            sigs,
            entry_xor,
            fan_in,
            adjust,
            initial_sst,
            initial_adj,
            undetectable,
            lookup,
        })
    }
}

/// Deterministic signatures: block k (program order over all threads) gets
/// `(k + 1) * 0x9E37 mod 2^16`, which is non-zero and unique below 2^16
/// blocks.
pub fn assign_signatures(p: &Program) -> Result<SignatureMap, InstrumentError> {
    let mut sigs = BTreeMap::new();
    let mut k: u32 = 0;
    for t in &p.threads {
        for b in &t.blocks {
            k += 1;
            if k > u16::MAX as u32 {
                return Err(InstrumentError::Signature("more than 65535 blocks".into()));
            }
            sigs.insert(BlockRef::new(t.tid, &b.label), (k.wrapping_mul(SIG_STRIDE) & 0xFFFF) as u16);
        }
    }
    SignatureMap::from_signatures(p, sigs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    const LOOP: &str = "program l
thread 0 {
  block B0 {
    jmp B1
  }
  block B1 {
    br nez r1, B2, B3
  }
  block B2 {
    jmp B1
  }
  block B3 {
    halt
  }
}
";

    #[test]
    fn chain_xor_constant() {
        let p = parse_program("program c\nthread 0 {\n block B0 {\n  jmp B1\n }\n block B1 {\n  halt\n }\n}\n").unwrap();
        let sigs = [(BlockRef::new(0, "B0"), 0b0101), (BlockRef::new(0, "B1"), 0b1001)].into_iter().collect();
        let sm = SignatureMap::from_signatures(&p, sigs).unwrap();
        assert_eq!(sm.edge_d(0, "B0", "B1"), 0b1100);
        assert_eq!(sm.entry_xor(0, "B1"), 0b1100 ^ EXIT_MARK);
        assert_eq!(sm.runtime_after(0, "B0", "B1"), 0b1001);
        assert_eq!(sm.initial_sst, vec![0b0101]);
        assert_eq!(sm.entry_xor(0, "B0"), 0);
    }

    #[test]
    fn default_signatures_unique_nonzero() {
        let p = parse_program(LOOP).unwrap();
        let sm = assign_signatures(&p).unwrap();
        let vals: BTreeSet<u16> = sm.sigs.values().copied().collect();
        assert_eq!(vals.len(), 4);
        assert!(!vals.contains(&0));
        assert_eq!(assign_signatures(&p).unwrap(), sm);
    }

    #[test]
    fn fan_in_legal_edges_reach_expected_signature() {
        let p = parse_program(LOOP).unwrap();
        let sm = assign_signatures(&p).unwrap();
        assert!(sm.is_fan_in(0, "B1"));
        for (a, b) in build_cfg(&p.threads[0]).edges {
            assert_eq!(sm.runtime_after(0, &a, &b), u32::from(sm.sig(0, &b)), "{a}->{b}");
        }
    }

    #[test]
    fn shared_predecessors_get_common_base() {
        // B1 and B2 are both fan-in and share predecessor B0.
        let src = "program f
thread 0 {
  block B0 {
    br nez r1, B1, B2
  }
  block B1 {
    br nez r1, B2, B3
  }
  block B2 {
    br nez r1, B1, B3
  }
  block B3 {
    halt
  }
}
";
        let p = parse_program(src).unwrap();
        let sm = assign_signatures(&p).unwrap();
        for (a, b) in build_cfg(&p.threads[0]).edges {
            assert_eq!(sm.runtime_after(0, &a, &b), u32::from(sm.sig(0, &b)), "{a}->{b}");
        }
        assert_eq!(sm.fan_in[&BlockRef::new(0, "B1")], sm.fan_in[&BlockRef::new(0, "B2")]);
    }

    #[test]
    fn entry_loop_header_initial_adjust() {
        let src = "program e\nthread 0 {\n block A {\n  br nez r1, A, B\n }\n block B {\n  halt\n }\n}\n";
        let p = parse_program(src).unwrap();
        let sm = assign_signatures(&p).unwrap();
        assert!(sm.is_fan_in(0, "A"));
        let s_a = u32::from(sm.sig(0, "A"));
        let first = sm.initial_sst[0] ^ sm.entry_xor(0, "A") ^ sm.initial_adj[0];
        assert_eq!(first, s_a);
        assert_eq!(sm.runtime_after(0, "A", "A"), s_a);
    }

    #[test]
    fn duplicate_signature_rejected() {
        let p = parse_program("program c\nthread 0 {\n block B0 {\n  jmp B1\n }\n block B1 {\n  halt\n }\n}\n").unwrap();
        let sigs = [(BlockRef::new(0, "B0"), 7), (BlockRef::new(0, "B1"), 7)].into_iter().collect();
        assert!(SignatureMap::from_signatures(&p, sigs).is_err());
    }
}
