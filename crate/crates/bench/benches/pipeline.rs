use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use crmp_bench::{instrumented, program, KINDS};
use crmp_core::campaign::{Campaign, Domain, Mix};
use crmp_core::depgraph::build_dgmp;
use crmp_core::instrument::{instrument, prepare, Mode, ShadowPolicy};
use crmp_core::vm::{Image, SchedConfig};

fn instrumentation(c: &mut Criterion) {
    let mut g = c.benchmark_group("instrument");
    for k in KINDS {
        let p = program(k);
        g.bench_with_input(BenchmarkId::new("dgmp", k.short()), &p, |b, p| {
            let pp = prepare(p).unwrap();
            b.iter(|| build_dgmp(black_box(&pp)))
        });
        for m in [Mode::Crmp, Mode::Bcp] {
            g.bench_with_input(BenchmarkId::new(format!("{m:?}").to_lowercase(), k.short()), &p, |b, p| {
                b.iter(|| instrument(black_box(p), m, ShadowPolicy::Globals).unwrap())
            });
        }
    }
    g.finish();
}

fn simulate(c: &mut Criterion) {
    let mut g = c.benchmark_group("run");
    let cfg = SchedConfig::default();
    for k in KINDS {
        for m in [Mode::None, Mode::Crmp, Mode::Bcp] {
            let ip = instrumented(k, m);
            let img = Image::compile(&ip.program).unwrap();
            g.bench_function(BenchmarkId::new(format!("{m:?}").to_lowercase(), k.short()), |b| {
                b.iter(|| img.run(black_box(&cfg)))
            });
        }
    }
    g.finish();
}

fn inject(c: &mut Criterion) {
    let mut g = c.benchmark_group("campaign");
    g.sample_size(10);
    let mix: Mix = "equal".parse().unwrap();
    for k in KINDS {
        let ip = instrumented(k, Mode::Crmp);
        let camp = Campaign::new(&ip, &SchedConfig::default()).unwrap();
        let faults = camp.sample_faults(50, 1, &mix, Domain::Original).unwrap().faults;
        g.bench_function(BenchmarkId::new("crmp_50", k.short()), |b| {
            b.iter(|| camp.run_campaign(black_box(&faults)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, instrumentation, simulate, inject);
criterion_main!(benches);
