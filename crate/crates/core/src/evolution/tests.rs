use std::sync::Arc;

use super::*;
use crate::backends::mock::{MockGenerator, MockOperator, ScriptedChat};
use crate::backends::{Cache, CallStats, Counted, GenerationSettings, PreferredVocabulary, Scorer, ScorerDescriptor, ScorerSet, SyntheticScorer};
use crate::fixtures;
use crate::scores::ThresholdPolicy;
use crate::templates::EVOLUTION_V1;

fn zero_thresholds() -> ThresholdPolicy {
    ThresholdPolicy::uniform(MetricId::CORE, 0.0)
}

fn fixture_config(max_iterations: u32) -> EvolutionConfig {
    EvolutionConfig {
        max_iterations,
        thresholds: zero_thresholds(),
        ..EvolutionConfig::default()
    }
}

fn synthetic_evaluator(seed: u64, stats: Arc<CallStats>) -> Evaluator {
    let vocab = PreferredVocabulary::seeded(seed, 12);
    let mk = |name: &str, metrics: Vec<MetricId>| -> Arc<dyn Scorer> {
        Arc::new(Counted::new(
            SyntheticScorer::new(ScorerDescriptor::with_default_scales(name, metrics), seed, vocab.clone()),
            stats.clone(),
        ))
    };
    Evaluator::new(
        Arc::new(Counted::new(MockGenerator::new(), stats.clone())),
        ScorerSet::new(vec![
            mk("videoscore", vec![MetricId::VQ, MetricId::TC, MetricId::DD, MetricId::TVA, MetricId::FC]),
            mk("aes", vec![MetricId::AES]),
            mk("mps", vec![MetricId::MPS]),
        ])
        .unwrap(),
        Arc::new(Cache::memory()),
        GenerationSettings::default(),
    )
}

#[test]
fn first_iteration_fixture_selects_refined_1_3_2() {
    let operator = fixtures::scripted_operator();
    let evaluator = fixtures::fixture_evaluator(Arc::new(Cache::memory()));
    let evolver = Evolver::new(&operator, &evaluator, fixture_config(1), OperatorSettings::default()).unwrap();
    let mut run = evolver.start("r", fixtures::ORIGINAL).unwrap();
    evolver.step(&mut run).unwrap();
    assert_eq!(run.population, vec![1, 3, 2]);
    let fin = finalize(&run).unwrap();
    assert_eq!(fin.candidate.id, 1);
    assert!(fin.threshold_met);
    assert!((fin.overall - 20.81).abs() < 1e-9);
}

#[test]
fn fallback_when_nothing_passes() {
    let operator = fixtures::scripted_operator();
    let evaluator = fixtures::fixture_evaluator(Arc::new(Cache::memory()));
    let mut cfg = fixture_config(1);
    cfg.thresholds = ThresholdPolicy::uniform(MetricId::CORE, 4.9);
    let evolver = Evolver::new(&operator, &evaluator, cfg.clone(), OperatorSettings::default()).unwrap();
    let run = evolver.run("r", fixtures::ORIGINAL).unwrap();
    let fin = run.final_selection.as_ref().unwrap();
    assert_eq!((fin.candidate.id, fin.threshold_met), (1, false));

    cfg.thresholds = cfg.thresholds.with_fallback(Fallback::Reject);
    let evolver = Evolver::new(&operator, &evaluator, cfg, OperatorSettings::default()).unwrap();
    let run = evolver.run("r", fixtures::ORIGINAL).unwrap();
    let fin = run.final_selection.as_ref().unwrap();
    assert_eq!((fin.candidate.id, fin.threshold_met), (0, false));
}

#[test]
fn original_only_history() {
    let operator = fixtures::scripted_operator();
    let evaluator = fixtures::fixture_evaluator(Arc::new(Cache::memory()));
    let evolver = Evolver::new(&operator, &evaluator, fixture_config(1), OperatorSettings::default()).unwrap();
    let run = evolver.start("r", fixtures::ORIGINAL).unwrap();
    let fin = finalize(&run).unwrap();
    assert_eq!((fin.candidate.id, fin.threshold_met), (0, true));
}

#[test]
fn empty_history_is_an_error() {
    let run = EvolutionRun {
        run_id: "x".into(),
        config: EvolutionConfig::default(),
        population: vec![],
        history: vec![],
        final_selection: None,
        skipped_iterations: 0,
    };
    assert_eq!(finalize(&run), Err(EvolutionError::EmptyHistory));
}

#[test]
fn zero_iterations_rejected() {
    let cfg = EvolutionConfig { max_iterations: 0, ..EvolutionConfig::default() };
    assert!(matches!(cfg.validate(), Err(EvolutionError::InvalidConfig(_))));
    let cfg = EvolutionConfig { operator_instruction: "missing".into(), ..EvolutionConfig::default() };
    assert!(cfg.validate().is_err());
}

#[test]
fn identical_offspring_are_deduplicated() {
    let same = "<PROMPT>a calm lake at dawn</PROMPT>".repeat(3);
    let operator = ScriptedChat::new([same]);
    let evaluator = synthetic_evaluator(1, Arc::default());
    let evolver = Evolver::new(&operator, &evaluator, fixture_config(1), OperatorSettings::default()).unwrap();
    let mut run = evolver.start("r", "a lake").unwrap();
    // identical spans still parse as 3, then dedup leaves one
    evolver.step(&mut run).unwrap();
    assert_eq!(run.history[1].candidates.len(), 1);
    assert!(run.history[1].warnings.iter().any(|w| w.contains("duplicate")));
}

#[test]
fn parse_failures_retry_then_salvage() {
    let operator = ScriptedChat::new([
        "nothing useful".to_string(),
        "<PROMPT>one</PROMPT>".to_string(),
        "<PROMPT>two</PROMPT><PROMPT>three".to_string(),
    ]);
    let evaluator = synthetic_evaluator(2, Arc::default());
    let evolver = Evolver::new(&operator, &evaluator, fixture_config(1), OperatorSettings::default()).unwrap();
    let mut run = evolver.start("r", "a lake").unwrap();
    evolver.step(&mut run).unwrap();
    assert_eq!(operator.calls(), 3);
    let texts: Vec<_> = run.history[1].candidates.iter().map(|c| c.text.as_str()).collect();
    assert_eq!(texts, vec!["one"]);
    assert_eq!(run.history[1].exchanges.len(), 3);
}

#[test]
fn zero_parsed_skips_iteration() {
    let operator = ScriptedChat::new(["I cannot help with that."]);
    let evaluator = synthetic_evaluator(3, Arc::default());
    let evolver = Evolver::new(&operator, &evaluator, fixture_config(2), OperatorSettings::default()).unwrap();
    let run = evolver.run("r", "a lake").unwrap();
    assert_eq!(run.skipped_iterations, 2);
    assert_eq!(run.population, vec![0]);
    assert_eq!(run.final_selection.unwrap().candidate.id, 0);
}

#[test]
fn step_past_limit_or_after_finalize_fails() {
    let operator = fixtures::scripted_operator();
    let evaluator = fixtures::fixture_evaluator(Arc::new(Cache::memory()));
    let evolver = Evolver::new(&operator, &evaluator, fixture_config(1), OperatorSettings::default()).unwrap();
    let mut run = evolver.start("r", fixtures::ORIGINAL).unwrap();
    evolver.step(&mut run).unwrap();
    assert_eq!(evolver.step(&mut run), Err(EvolutionError::IterationLimit(1)));
    run.final_selection = Some(finalize(&run).unwrap());
    assert_eq!(evolver.step(&mut run), Err(EvolutionError::AlreadyFinalized));
}

#[test]
fn render_requires_scores() {
    let unscored = PromptCandidate::original("x");
    assert_eq!(
        render_operator_prompt(&unscored, &[], &EVOLUTION_V1, 3),
        Err(EvolutionError::Unscored(0))
    );
}

#[test]
fn render_lists_source_then_selected() {
    let sv = fixtures::score_vectors();
    let cands: Vec<PromptCandidate> = fixtures::texts()
        .iter()
        .enumerate()
        .map(|(i, t)| PromptCandidate::new(i as u32, *t, Provenance::Original).with_scores(sv[i].clone()))
        .collect();
    let only = render_operator_prompt(&cands[0], &[], &EVOLUTION_V1, 3).unwrap();
    assert_eq!(only.user.lines().count(), 1);
    assert!(only.user.starts_with("0. Attractive blonde woman"));
    assert!(only.user.ends_with("(2.47, 2.66, 2.84, 2.77, 2.48, 3.34, 2.70)"));

    let all = render_operator_prompt(&cands[0], &[&cands[1], &cands[3], &cands[2]], &EVOLUTION_V1, 3).unwrap();
    let lines: Vec<&str> = all.user.lines().collect();
    assert_eq!(lines.len(), 4);
    for (i, line) in lines.iter().enumerate() {
        assert!(line.starts_with(&format!("{i}. ")));
        let scores = &line[line.rfind(" (").unwrap() + 2..line.len() - 1];
        assert_eq!(scores.split(", ").count(), 7);
    }
    assert!(lines[2].starts_with("2. An intimate view"));
}

#[test]
fn report_means_for_first_iteration() {
    let operator = fixtures::scripted_operator();
    let evaluator = fixtures::fixture_evaluator(Arc::new(Cache::memory()));
    let evolver = Evolver::new(&operator, &evaluator, fixture_config(1), OperatorSettings::default()).unwrap();
    let run = evolver.run("r", fixtures::ORIGINAL).unwrap();
    let rows = iteration_report(&run);
    assert_eq!(rows.len(), 7);
    let vq = rows.iter().find(|r| r.metric == MetricId::VQ).unwrap();
    // (2.63 + 2.58 + 2.58) / 3
    assert!((vq.mean - 2.596_666_666_666_666_6).abs() < 1e-12);
    assert!(report_csv(&rows).starts_with("iteration,metric,mean\n1,VQ,2.59666"));
}

#[test]
fn single_offspring_report_equals_its_scores() {
    let operator = ScriptedChat::new(["<PROMPT>a bright lake</PROMPT>"]);
    let evaluator = synthetic_evaluator(4, Arc::default());
    let cfg = EvolutionConfig { offspring_per_iteration: 1, ..fixture_config(1) };
    let evolver = Evolver::new(&operator, &evaluator, cfg, OperatorSettings::default()).unwrap();
    let run = evolver.run("r", "a lake").unwrap();
    let scores = run.history[1].candidates[0].scores.clone().unwrap();
    for row in iteration_report(&run) {
        assert_eq!(row.mean, scores.norm_value(&row.metric).unwrap());
    }
}

#[test]
fn mock_run_is_elitist_and_bounded() {
    let stats = Arc::new(CallStats::default());
    let evaluator = synthetic_evaluator(5, stats.clone());
    let operator = MockOperator::new(5, 3);
    let evolver = Evolver::new(&operator, &evaluator, fixture_config(4), OperatorSettings::default()).unwrap();
    let run = evolver.run("r", "a fox in the snow").unwrap();
    assert!(run.candidates().count() <= 13);
    let mut best = f64::NEG_INFINITY;
    for rec in &run.history {
        let b = rec
            .population
            .iter()
            .map(|id| run.candidate(*id).unwrap().overall().unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(b >= best);
        best = b;
        assert!(rec.population.len() <= 3);
    }
    for id in &run.population {
        assert_eq!(run.candidates().filter(|c| c.id == *id).count(), 1);
    }
}

#[test]
fn all_offspring_failing_aborts() {
    struct Refuse;
    impl crate::backends::Generator for Refuse {
        fn generate(
            &self,
            req: &crate::backends::GenerationRequest,
        ) -> Result<crate::backends::GenerationResult, BackendError> {
            if req.prompt == "a lake" {
                MockGenerator::new().generate(req)
            } else {
                Err(BackendError::Status { code: 500, body: "down".into() })
            }
        }
        fn fingerprint(&self) -> String {
            "refuse".into()
        }
    }
    let vocab = PreferredVocabulary::seeded(1, 4);
    let scorer: Arc<dyn Scorer> = Arc::new(SyntheticScorer::new(
        ScorerDescriptor::with_default_scales("all", MetricId::CORE.to_vec()),
        1,
        vocab,
    ));
    let evaluator = Evaluator::new(
        Arc::new(Refuse),
        ScorerSet::new(vec![scorer]).unwrap(),
        Arc::new(Cache::memory()),
        GenerationSettings::default(),
    );
    let operator = MockOperator::new(1, 3);
    let evolver = Evolver::new(&operator, &evaluator, fixture_config(1), OperatorSettings::default()).unwrap();
    let mut run = evolver.start("r", "a lake").unwrap();
    assert!(matches!(
        evolver.step(&mut run),
        Err(EvolutionError::AllCandidatesFailed { iteration: 1, .. })
    ));
}
