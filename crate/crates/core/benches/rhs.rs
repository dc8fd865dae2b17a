use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use symflow::algebra::AlgebraSpec;
use symflow::fields::Grid;
use symflow::flows::{tangent_rhs, FlowKind, GeneratorForm};
use symflow::functionals::FlowParams;
use symflow::gauge::{potential_rhs, PotentialState};
use symflow::initial::{build, InitialData};
use symflow::orbit::orbit_from_frame;
use symflow::par::{set_execution, Execution};

fn rhs_assembly(c: &mut Criterion) {
    let p = FlowParams::new(1.0, 0.1, -0.0125).unwrap();
    let spec = AlgebraSpec::compact(3, 1);
    let mut group = c.benchmark_group("tangent_rhs");
    for n in [256, 1024, 4096] {
        let grid = Grid::new(n, 8.0 * std::f64::consts::PI).unwrap();
        let fs = build(&spec, grid, &InitialData::RandomSmooth { seed: 1, modes: 3, amplitude: 0.3 }).unwrap();
        let os = orbit_from_frame(&fs).unwrap();
        for mode in [Execution::Parallel, Execution::Sequential] {
            group.bench_with_input(BenchmarkId::new(format!("{mode:?}"), n), &os, |b, os| {
                set_execution(mode);
                b.iter(|| tangent_rhs(black_box(os), &p, FlowKind::ThirdOrder, GeneratorForm::Conservative).unwrap())
            });
        }
    }
    group.finish();

    let mut group = c.benchmark_group("potential_rhs");
    for n in [256, 4096] {
        let ps = PotentialState::random_smooth(spec, Grid::new(n, 20.0).unwrap(), 1, 0.3);
        for mode in [Execution::Parallel, Execution::Sequential] {
            group.bench_with_input(BenchmarkId::new(format!("{mode:?}"), n), &ps, |b, ps| {
                set_execution(mode);
                b.iter(|| potential_rhs(black_box(ps), &p).unwrap())
            });
        }
    }
    group.finish();
    set_execution(Execution::Parallel);
}

criterion_group!(benches, rhs_assembly);
criterion_main!(benches);
