//! Sequential vs rayon execution on the three data-parallel workloads:
//! multistart minimization, MCMC chain ensembles, and boundary sweeps of the
//! exact kernel identity. On a single-core host the two modes should tie;
//! with more cores the parallel numbers pull ahead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use kacpotts::exec::ExecMode;
use kacpotts::experiments::{
    self, ExperimentConfig, ExperimentKind, ExperimentSection, FuzzySection, ModelSection,
    OutputSection, SamplerSection,
};
use kacpotts::fuzzy::{estimate_a, AMode};
use kacpotts::profiles::DilutionField;
use kacpotts::torus::{discretize_kernel, KacKernel, TorusGrid};
use kacpotts::variational::{minimize_rate, MinimizeOptions, RateContext};

fn modes() -> Vec<(&'static str, ExecMode)> {
    let mut out = vec![("sequential", ExecMode::Sequential)];
    if cfg!(feature = "parallel") {
        out.push(("parallel", ExecMode::Parallel));
    }
    out
}

fn bench_minimize_multistart(c: &mut Criterion) {
    let mesh = TorusGrid::new(1, 16).unwrap();
    let dilution = DilutionField::constant(mesh, 1.0).unwrap();
    let ctx = RateContext::new(1.2, &KacKernel::Cosine, &dilution, 3).unwrap();
    let mut group = c.benchmark_group("minimize_multistart");
    group.sample_size(10);
    for (name, mode) in modes() {
        let opts = MinimizeOptions {
            multistarts: 8,
            seed: 2,
            mode,
            ..MinimizeOptions::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| minimize_rate(&ctx, opts).unwrap());
        });
    }
    group.finish();
}

fn bench_chain_ensemble(c: &mut Criterion) {
    let grid = TorusGrid::new(1, 32).unwrap();
    let stencil = discretize_kernel(&KacKernel::Uniform, grid, true).unwrap();
    let subvolume: Vec<usize> = (1..22).collect();
    let mut group = c.benchmark_group("chain_ensemble");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| {
                estimate_a(
                    &stencil,
                    0,
                    0.7,
                    3,
                    &subvolume,
                    AMode::Mcmc {
                        sweeps: 2_000,
                        burn_in: 200,
                        chains: 8,
                        seed: 5,
                    },
                    mode,
                )
                .unwrap()
            });
        });
    }
    group.finish();
}

fn bench_boundary_sweep(c: &mut Criterion) {
    let cfg = ExperimentConfig {
        model: ModelSection {
            d: 1,
            n: Some(4),
            ns: None,
            q: 3,
            beta: None,
            betas: Some(vec![0.5, 1.0, 2.0]),
            kernel: KacKernel::Uniform,
        },
        fuzzy: Some(FuzzySection {
            partition: vec![2, 1],
        }),
        sampler: SamplerSection::default(),
        experiment: ExperimentSection {
            kind: ExperimentKind::Prop23Identity,
            m: 8,
            multistarts: None,
            exact: true,
            site: 0,
            onset_threshold: 0.4,
            dilution: None,
        },
        output: OutputSection::default(),
    };
    let mut group = c.benchmark_group("boundary_sweep");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| experiments::prop23_identity(&cfg, mode).unwrap());
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_minimize_multistart,
    bench_chain_ensemble,
    bench_boundary_sweep
);
criterion_main!(benches);
