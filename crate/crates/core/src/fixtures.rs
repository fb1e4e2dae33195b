//! A worked first iteration: one source prompt, three operator rewrites and
//! their normalized scores. Used for golden replays and as a demo fixture.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::backends::{
    mock::{MockGenerator, ScriptedChat},
    Cache, Evaluator, GenerationSettings, PreferredVocabulary, Scorer, ScorerDescriptor, ScorerSet,
    SyntheticScorer,
};
use crate::scores::{MetricId, ScoreVector};

pub const ORIGINAL: &str = "Attractive blonde woman doing hand massage in a spa center";

pub const REFINED: [&str; 3] = [
    "A serene scene in a spa center where an attractive blonde woman is performing a hand massage. The woman has a focused expression and is working gently. The surroundings are tranquil, with soft lighting and calming decor. The environment suggests a soothing and relaxing experience. The video does not contain any text or drastic actions.",
    "A close-up of a blonde woman giving a hand massage in a quiet spa center. The woman's hands are applying gentle pressure, with a serene and focused expression on her face. The spa environment features soft lighting, adding to the calm and relaxing atmosphere. The scene is peaceful and intimate, designed to convey comfort and care. No text or significant movements are present in the video.",
    "An intimate view of a serene spa center with a blonde woman performing a hand massage. The woman appears focused and gentle, with the peaceful surroundings enhancing the calming effect. Soft, ambient lighting highlights the tranquility of the spa. The overall ambiance is relaxing, aiming to provide a sense of comfort and well-being. The video maintains a focus on the woman and her actions without any text",
];

/// Normalized (VQ, TC, DD, TVA, FC, AES, MPS) rows: original, then refined 1..3.
pub const ROWS: [[f64; 7]; 4] = [
    [2.47, 2.66, 2.84, 2.77, 2.48, 3.34, 2.7],
    [2.63, 2.73, 2.92, 2.95, 2.42, 3.49, 3.67],
    [2.58, 2.77, 2.88, 2.98, 2.56, 3.47, 3.04],
    [2.58, 2.69, 2.77, 2.88, 2.47, 3.61, 3.43],
];

pub fn texts() -> [&'static str; 4] {
    [ORIGINAL, REFINED[0], REFINED[1], REFINED[2]]
}

pub fn score_vectors() -> [ScoreVector; 4] {
    ROWS.map(ScoreVector::core)
}

pub fn row_map(row: [f64; 7]) -> BTreeMap<MetricId, f64> {
    MetricId::CORE.iter().cloned().zip(row).collect()
}

/// Operator answer that returns the three rewrites.
pub fn operator_response() -> String {
    let mut out = String::from("Here are three refined prompts:\n");
    for text in REFINED {
        out.push_str(&format!("<PROMPT>{text}</PROMPT>\n"));
    }
    out
}

pub fn scripted_operator() -> ScriptedChat {
    ScriptedChat::new([operator_response()])
}

/// One identity-scaled scorer that returns the table rows for the four
/// prompts and synthetic values for anything else.
pub fn fixture_scorer() -> SyntheticScorer {
    SyntheticScorer::new(
        ScorerDescriptor::with_identity_scales("fixture", MetricId::CORE.to_vec()),
        0,
        PreferredVocabulary::new(Vec::<String>::new()),
    )
    .with_fixture(texts().into_iter().zip(ROWS).map(|(t, r)| (t.to_string(), row_map(r))))
}

pub fn fixture_evaluator(cache: Arc<Cache>) -> Evaluator {
    let scorer: Arc<dyn Scorer> = Arc::new(fixture_scorer());
    Evaluator::new(
        Arc::new(MockGenerator::new()),
        ScorerSet::new(vec![scorer]).expect("fixture scorer is valid"),
        cache,
        GenerationSettings::default(),
    )
}
