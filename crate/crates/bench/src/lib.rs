//! Shared fixtures for the pipeline benchmarks.

use crmp_core::instrument::{instrument, InstrumentedProgram, Mode, ShadowPolicy};
use crmp_core::ir::Program;
use crmp_core::workloads::{generate, BenchKind, BenchSpec};

/// Default-size benchmark program for `kind`.
pub fn program(kind: BenchKind) -> Program {
    generate(&BenchSpec::new(kind, 1))
}

/// Instrumented benchmark program.
pub fn instrumented(kind: BenchKind, mode: Mode) -> InstrumentedProgram {
    instrument(&program(kind), mode, ShadowPolicy::Globals).expect("generated programs instrument cleanly")
}

pub const KINDS: [BenchKind; 3] = [BenchKind::Quicksort, BenchKind::Matmul, BenchKind::Linkedlist];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        for k in KINDS {
            for m in [Mode::None, Mode::Crmp, Mode::Bcp] {
                assert!(!instrumented(k, m).program.threads.is_empty());
            }
        }
    }
}
