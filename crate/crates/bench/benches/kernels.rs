use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use voroto_core::catalog::Catalog;
use voroto_core::dataset::{encode_input, sample_spec, SamplingRanges, TARGET_DIM};
use voroto_core::fea::FeaSolver;
use voroto_core::homogenize::{BaseMaterial, Homogenizer};
use voroto_core::optimize::{DesignState, Evaluator, OptConfig};
use voroto_core::surrogate::MlpModel;
use voroto_core::voronoi::rasterize;

fn micro(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = sample_spec(&mut rng, &SamplingRanges::default(), 10.0).unwrap();
    let mut g = c.benchmark_group("micro");
    g.sample_size(10);
    g.bench_function("rasterize 120", |b| b.iter(|| rasterize(black_box(&spec), 120, 120).unwrap()));
    let field = rasterize(&spec, 120, 120).unwrap();
    let hom = Homogenizer::new(120, 120, BaseMaterial::default()).unwrap();
    g.bench_function("homogenize 120", |b| b.iter(|| hom.homogenize(black_box(&field)).unwrap()));
    g.finish();
}

fn surrogate(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = sample_spec(&mut rng, &SamplingRanges::default(), 10.0).unwrap();
    let x = encode_input(&spec).unwrap();
    let model = MlpModel::random(3);
    c.bench_function("surrogate forward", |b| b.iter(|| model.forward(black_box(&x)).unwrap()));
    let tape = model.record(&x).unwrap();
    let seed = [1.0; TARGET_DIM];
    c.bench_function("surrogate vjp", |b| b.iter(|| model.vjp(black_box(&tape), &seed)));
}

fn macro_scale(c: &mut Criterion) {
    let p = Catalog::builtin().problem("mid-cantilever", None).unwrap();
    let solver = FeaSolver::new(p.mesh, &p.bc).unwrap();
    let cs = vec![BaseMaterial::default().plane_stress().scaled(0.6); p.mesh.n_elements()];
    let mut g = c.benchmark_group("macro 40x20");
    g.sample_size(20);
    g.bench_function("fea solve", |b| b.iter(|| solver.solve(black_box(&cs)).unwrap()));

    let model = MlpModel::random(4);
    let config = OptConfig::default();
    let ev = Evaluator::new(&model, p.mesh, &p.bc, config.filter_radius, config.bounds, config.v_max)
        .unwrap();
    let state = DesignState::initial(p.mesh, config.bounds, config.filter_radius).unwrap();
    g.bench_function("loss and gradient", |b| {
        b.iter(|| ev.evaluate(black_box(&state.latents), Some(1.0), 0.1).unwrap())
    });
    g.finish();
}

criterion_group!(benches, micro, surrogate, macro_scale);
criterion_main!(benches);
