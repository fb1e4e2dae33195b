use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_lines, sidecar_path, write_file, write_json, DatasetError, TrainerHints};
use crate::evolution::EvolutionRun;
use crate::templates::{dialog_template, DialogTemplate, REFINE_V1};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftPair {
    pub source: String,
    pub target: String,
    /// Dialog template id.
    pub instruction: String,
    pub threshold_met: bool,
    pub run_id: String,
    pub overall: f64,
}

impl SftPair {
    pub fn template(&self) -> Option<&'static DialogTemplate> {
        dialog_template(&self.instruction)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftFilter {
    pub require_threshold: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSummary {
    pub runs: usize,
    pub emitted: usize,
    pub below_threshold: usize,
    /// Final prompt equal to the source after trimming.
    pub unchanged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftBuild {
    pub pairs: Vec<SftPair>,
    pub summary: SftSummary,
}

/// One pair per finalized run, in input order.
pub fn build_sft_dataset(runs: &[EvolutionRun], filter: SftFilter) -> Result<SftBuild, DatasetError> {
    let offenders: Vec<String> =
        runs.iter().filter(|r| !r.is_finalized()).map(|r| r.run_id.clone()).collect();
    if !offenders.is_empty() {
        return Err(DatasetError::NotFinalized(offenders));
    }
    let mut summary = SftSummary { runs: runs.len(), ..SftSummary::default() };
    let mut pairs = Vec::new();
    for run in runs {
        let fin = run.final_selection.as_ref().expect("checked above");
        let source = run.source().map(|c| c.text.trim()).unwrap_or_default();
        let target = fin.candidate.text.trim();
        if filter.require_threshold && !fin.threshold_met {
            summary.below_threshold += 1;
            continue;
        }
        if target.is_empty() || source == target {
            summary.unchanged += 1;
            continue;
        }
        pairs.push(SftPair {
            source: source.to_string(),
            target: target.to_string(),
            instruction: REFINE_V1.id.to_string(),
            threshold_met: fin.threshold_met,
            run_id: run.run_id.clone(),
            overall: fin.overall,
        });
    }
    summary.emitted = pairs.len();
    Ok(SftBuild { pairs, summary })
}

#[derive(Serialize, Deserialize)]
struct Turn {
    role: String,
    content: String,
}

#[derive(Serialize, Deserialize)]
struct Dialog {
    dialog: Vec<Turn>,
}

/// `{"dialog":[user, assistant]}` for one (input, output) record.
pub fn sft_line(template: &DialogTemplate, input: &str, output: &str) -> String {
    serde_json::to_string(&Dialog {
        dialog: vec![
            Turn { role: "user".into(), content: template.render(input) },
            Turn { role: "assistant".into(), content: output.to_string() },
        ],
    })
    .expect("dialog serializes")
}

pub fn sft_jsonl(pairs: &[SftPair]) -> Result<String, DatasetError> {
    let mut out = String::new();
    for pair in pairs {
        let template = pair.template().ok_or_else(|| {
            DatasetError::InvalidConfig(format!("unknown instruction template {:?}", pair.instruction))
        })?;
        out.push_str(&sft_line(template, &pair.source, &pair.target));
        out.push('\n');
    }
    Ok(out)
}

/// Recovers (source, target) from SFT JSONL written with `template`.
pub fn parse_sft_jsonl(text: &str, template: &DialogTemplate) -> Result<Vec<(String, String)>, DatasetError> {
    let dialogs: Vec<Dialog> = parse_lines(text)?;
    dialogs
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let bad = |reason: &str| DatasetError::Parse { line: i + 1, reason: reason.into() };
            match d.dialog.as_slice() {
                [user, assistant] if user.role == "user" && assistant.role == "assistant" => {
                    let source = template.parse(&user.content).ok_or_else(|| bad("user turn does not match template"))?;
                    Ok((source.to_string(), assistant.content.clone()))
                }
                _ => Err(bad("expected a user turn followed by an assistant turn")),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSidecar {
    pub kind: String,
    pub template: String,
    pub count: usize,
    pub summary: SftSummary,
    pub trainer: TrainerHints,
}

/// Writes the JSONL file and its `.meta.json` sidecar.
pub fn emit_sft_jsonl(pairs: &[SftPair], summary: &SftSummary, path: &Path) -> Result<(), DatasetError> {
    write_file(path, sft_jsonl(pairs)?.as_bytes())?;
    write_json(
        &sidecar_path(path),
        &SftSidecar {
            kind: "sft".into(),
            template: REFINE_V1.id.into(),
            count: pairs.len(),
            summary: summary.clone(),
            trainer: TrainerHints::sft(),
        },
    )
}
