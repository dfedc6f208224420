use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use groundscore_core::balance::{balance, SeqMeta};
use groundscore_core::geometry::{discrete_frechet, resample_polyline, Point};
use groundscore_core::grammar::parse_spans;
use groundscore_core::harness::{run_eval, EvalConfig, PredRecord, Prediction, TruthRecord};
use groundscore_core::metrics::{FrameGeometry, FrameIndexedTruth};
use groundscore_core::rewards::{group_advantages, ADVANTAGE_EPS};
use groundscore_core::GroundingKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn path(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n).map(|_| Point::new(rng.gen(), rng.gen())).collect()
}

fn frechet(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("discrete_frechet");
    for n in [15, 100, 500] {
        let (p, g) = (path(&mut rng, n), path(&mut rng, n));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| discrete_frechet(black_box(&p), black_box(&g)).unwrap())
        });
    }
    group.finish();

    let (p, g) = (path(&mut rng, 10), path(&mut rng, 10));
    c.bench_function("resample_and_frechet_15", |b| {
        b.iter(|| {
            let p = resample_polyline(black_box(&p), 15).unwrap();
            let g = resample_polyline(black_box(&g), 15).unwrap();
            discrete_frechet(&p, &g).unwrap()
        })
    });
}

fn parse(c: &mut Criterion) {
    let text = "Reach for the cup <trajectory> <frame 12>: cup; (120, 340), (200, 360), \
                (280, 410), (350, 480), (420, 500) </trajectory> then place it on \
                <area> <frame 13>: (600, 600), (700, 650), (680, 720) </area>. "
        .repeat(8);
    c.bench_function("parse_spans_16_tags", |b| {
        b.iter(|| parse_spans(black_box(&text), false).unwrap())
    });
}

fn lpt(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seqs: Vec<SeqMeta> = (0..4096)
        .map(|i| SeqMeta::new(format!("s{i}"), rng.gen_range(64..16_384)).unwrap())
        .collect();
    c.bench_function("balance_4096_on_64", |b| {
        b.iter(|| balance(black_box(&seqs), 64).unwrap())
    });
}

fn advantages(c: &mut Criterion) {
    let rewards = [0.1, 0.9, 0.4, 0.4, 0.7];
    c.bench_function("group_advantages_g5", |b| {
        b.iter(|| group_advantages(black_box(&rewards), ADVANTAGE_EPS).unwrap())
    });
}

fn eval(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut truth = Vec::new();
    let mut preds = Vec::new();
    for i in 0..2000 {
        let line = path(&mut rng, 8);
        truth.push(TruthRecord {
            id: format!("r{i}"),
            task: GroundingKind::Trajectory,
            frames: FrameIndexedTruth::single(0, FrameGeometry::Polyline(line.clone())).unwrap(),
        });
        let coords: Vec<String> = line
            .iter()
            .map(|p| format!("({}, {})", (p.x * 1000.0) as u16, (p.y * 1000.0) as u16))
            .collect();
        preds.push(PredRecord {
            id: format!("r{i}"),
            prediction: Prediction::Raw(format!(
                "<trajectory> <frame 0>: {} </trajectory>",
                coords.join(", ")
            )),
        });
    }
    let mut group = c.benchmark_group("run_eval_2000");
    for workers in [1, 4] {
        let config = EvalConfig {
            workers,
            ..EvalConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(workers), &config, |b, cfg| {
            b.iter(|| run_eval(&truth, &preds, cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, frechet, parse, lpt, advantages, eval);
criterion_main!(benches);
