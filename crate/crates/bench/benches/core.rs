use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use pav_core::backends::mock::{MockGenerator, MockOperator};
use pav_core::backends::{
    Cache, Evaluator, GenerationSettings, PreferredVocabulary, Scorer, ScorerDescriptor, ScorerSet,
    SyntheticScorer,
};
use pav_core::datasets::select_pair;
use pav_core::evolution::{extract_prompts, parse_operator_response, EvolutionConfig, Evolver};
use pav_core::fixtures;
use pav_core::objectives::{dpo_loss, dpo_loss_grad, DpoLossInput};
use pav_core::scores::{normalize, rank, select_top_n};
use pav_core::{MetricId, MetricScale, ScoreVector};

fn selection(c: &mut Criterion) {
    let svs: Vec<ScoreVector> = (0..13)
        .map(|i| ScoreVector::core(std::array::from_fn(|j| ((i * 7 + j * 3) % 11) as f64 * 0.45)))
        .collect();
    let ids: Vec<(u32, &ScoreVector)> = svs.iter().enumerate().map(|(i, s)| (i as u32, s)).collect();
    c.bench_function("rank_13", |b| b.iter(|| rank(black_box(&ids)).unwrap()));
    c.bench_function("select_top_3_of_13", |b| b.iter(|| select_top_n(black_box(&ids), 3).unwrap()));
    let overalls: Vec<f64> = (0..8).map(|i| (i * 37 % 19) as f64).collect();
    c.bench_function("select_pair_8", |b| b.iter(|| select_pair(black_box(&overalls), 0.05)));
}

fn scores(c: &mut Criterion) {
    let scale = MetricScale::new(MetricId::VQ, 1.0, 4.0);
    c.bench_function("normalize", |b| b.iter(|| normalize(black_box(2.7), &scale)));
}

fn objectives(c: &mut Criterion) {
    let input = DpoLossInput {
        logp_policy_chosen: -12.5,
        logp_policy_rejected: -14.0,
        logp_ref_chosen: -13.0,
        logp_ref_rejected: -13.5,
        beta: 0.1,
    };
    c.bench_function("dpo_loss", |b| b.iter(|| dpo_loss(black_box(&input)).unwrap()));
    c.bench_function("dpo_loss_grad", |b| b.iter(|| dpo_loss_grad(black_box(&input)).unwrap()));
}

fn parsing(c: &mut Criterion) {
    let raw = fixtures::operator_response();
    c.bench_function("parse_operator_response", |b| b.iter(|| parse_operator_response(black_box(&raw), 3).unwrap()));
    c.bench_function("extract_prompts", |b| b.iter(|| extract_prompts(black_box(&raw))));
}

fn evolution(c: &mut Criterion) {
    c.bench_function("mock_run_4x3", |b| {
        b.iter(|| {
            let scorer: Arc<dyn Scorer> = Arc::new(SyntheticScorer::new(
                ScorerDescriptor::with_default_scales("synthetic", MetricId::CORE.to_vec()),
                1,
                PreferredVocabulary::seeded(1, 12),
            ));
            let evaluator = Evaluator::new(
                Arc::new(MockGenerator::new()),
                ScorerSet::new(vec![scorer]).unwrap(),
                Arc::new(Cache::memory()),
                GenerationSettings::default(),
            );
            let operator = MockOperator::new(1, 3);
            let evolver = Evolver::new(&operator, &evaluator, EvolutionConfig::default(), Default::default()).unwrap();
            evolver.run("bench", black_box("a dog running on a beach")).unwrap()
        })
    });
}

criterion_group!(benches, selection, scores, objectives, parsing, evolution);
criterion_main!(benches);
