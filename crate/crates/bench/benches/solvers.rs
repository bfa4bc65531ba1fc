use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use kshape_core::consensus::{self, ConsensusAdmm};
use kshape_core::datagen::{self, LidarConfig};
use kshape_core::kernel::{self, KernelConfig};
use kshape_core::local_qp::{self, Basis};
use kshape_core::{
    assemble_agent, geometry, AgentProblem, Bbox, GridBasis, LabeledDataset, ObjectShape, Point, SolverConfig,
};
use std::hint::black_box;

fn star() -> ObjectShape {
    ObjectShape::Star {
        center: Point::origin(),
        radius: 3.0,
        amplitude: 0.3,
        lobes: 5,
        phase: 0.0,
    }
}

fn scans() -> Vec<LabeledDataset> {
    let shape = star();
    let lidar = LidarConfig {
        offset: 0.3,
        max_range: 30.0,
        ..LidarConfig::default()
    };
    datagen::ring_positions(&shape, 3, 9.0, 0.3)
        .into_iter()
        .enumerate()
        .map(|(i, p)| datagen::sample_lidar(i + 1, &shape, p, &lidar).unwrap())
        .collect()
}

fn grid() -> GridBasis {
    datagen::make_grid(&Bbox::from_corners(-4.2, -4.2, 4.2, 4.2), 6, 6).unwrap()
}

fn problems(sets: &[LabeledDataset], grid: &GridBasis) -> Vec<AgentProblem> {
    sets.iter()
        .map(|d| assemble_agent(d, grid, &KernelConfig::default()).unwrap())
        .collect()
}

fn kernels(c: &mut Criterion) {
    let g = grid();
    let cfg = KernelConfig::default();
    c.bench_function("gram_36", |b| {
        b.iter(|| kernel::gram(black_box(g.points()), &cfg, 0.0).unwrap())
    });
    let gram = kernel::gram(g.points(), &cfg, 0.0).unwrap();
    c.bench_function("sqrt_and_inv_sqrt_36", |b| {
        b.iter(|| kernel::sqrt_and_inv_sqrt(black_box(&gram)).unwrap())
    });
}

fn local(c: &mut Criterion) {
    let sets = scans();
    let p = local_qp::build_local(&sets[0], Basis::Data, &KernelConfig::default()).unwrap();
    c.bench_function("solve_local_20", |b| {
        b.iter(|| local_qp::solve_local(black_box(&p), local_qp::DEFAULT_TOL, local_qp::DEFAULT_MAX_ITER))
    });
}

fn admm(c: &mut Criterion) {
    let sets = scans();
    let g = grid();
    c.bench_function("admm_step_default", |b| {
        b.iter_batched(
            || ConsensusAdmm::new(problems(&sets, &g), SolverConfig::default()).unwrap(),
            |mut engine| engine.admm_step().unwrap(),
            BatchSize::SmallInput,
        )
    });
    let mut group = c.benchmark_group("admm_run");
    group.sample_size(10);
    group.bench_function("default_scenario", |b| {
        b.iter_batched(
            || problems(&sets, &g),
            |p| consensus::run(p, SolverConfig::default()).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

fn contour(c: &mut Criterion) {
    let sets = scans();
    let g = grid();
    let out = consensus::run(problems(&sets, &g), SolverConfig::default()).unwrap();
    let window = geometry::default_window(&sets).unwrap();
    c.bench_function("raster_and_contour_201", |b| {
        b.iter(|| {
            let field = geometry::raster_eval(black_box(&out.model), window, geometry::DEFAULT_RESOLUTION).unwrap();
            geometry::marching_squares(&field)
        })
    });
}

criterion_group!(benches, kernels, local, admm, contour);
criterion_main!(benches);
