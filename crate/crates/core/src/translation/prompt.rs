//! Prompt templates and their rendering.

use serde::{Deserialize, Serialize};

use super::kb::Retrieved;
use crate::autoir::serialize_autoir;

/// Precedes the user text at the end of a relevance prompt.
pub const USER_INPUT_MARKER: &str = "User input:";
/// Precedes the instruction at the end of a generation prompt.
pub const INSTRUCTION_MARKER: &str = "Instruction:";
/// Stands in for the reference list when retrieval found nothing.
pub const NO_REFERENCE: &str = "No reference found.";
/// Opens a reference program block; the block closes with a bare fence.
pub const AUTOIR_FENCE: &str = "```autoir";
const FENCE_END: &str = "```";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub question: String,
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub task_description: String,
    pub qa_examples: Vec<QaExample>,
    pub output_constraints: String,
}

fn qa(question: &str, answer: &str) -> QaExample {
    QaExample { question: question.into(), answer: answer.into() }
}

impl PromptTemplate {
    /// Relevance template with worked question/answer examples.
    pub fn cot_relevance() -> Self {
        PromptTemplate {
            task_description: "You are the front desk of an autonomous vehicle. Passengers talk to the car and \
                to each other. Decide whether the passenger input below asks the vehicle to change how it \
                drives: obeying signals, choosing lanes, stopping, keeping distance or getting around \
                obstacles. Think about what the passenger wants the car to do before answering."
                .into(),
            qa_examples: vec![
                qa(
                    "The traffic light ahead has been red for ages, just go.",
                    "YES. The passenger wants the vehicle to stop waiting for a signal, which is a driving decision.",
                ),
                qa(
                    "Could you move over to the left lane?",
                    "YES. Lane choice is part of how the vehicle drives.",
                ),
                qa(
                    "What a lovely view of the harbour.",
                    "NO. A remark about the scenery asks nothing of the vehicle.",
                ),
                qa(
                    "Remind me to call my sister when we arrive.",
                    "NO. This is a personal errand, not a driving request.",
                ),
            ],
            output_constraints: "Answer with YES or NO as the first word, then one sentence of reasoning.".into(),
        }
    }

    /// Relevance template with the task and output format only.
    pub fn simple_relevance() -> Self {
        PromptTemplate {
            task_description: "Decide whether the passenger input below is an instruction about autonomous driving."
                .into(),
            qa_examples: Vec::new(),
            output_constraints: "Answer with YES or NO as the first word.".into(),
        }
    }

    pub fn generation() -> Self {
        PromptTemplate {
            task_description: "Translate the passenger instruction into one AutoIR program that reconfigures a \
                single node parameter of the driving stack. The references pair driving scenarios with the \
                program that handles them; prefer the closest one."
                .into(),
            qa_examples: Vec::new(),
            output_constraints: "Reply with the program only, in canonical form: the lines moduleSelect, \
                nodeSelect, paramSelect, configAction and Timer, each as `key: value`. No prose."
                .into(),
        }
    }

    /// Task description and worked examples, separated by blank lines.
    fn preamble(&self) -> String {
        let mut out = self.task_description.clone();
        out.push_str("\n\n");
        if !self.qa_examples.is_empty() {
            out.push_str("Examples:\n");
            for ex in &self.qa_examples {
                out.push_str(&format!("Q: {}\nA: {}\n", ex.question, ex.answer));
            }
            out.push('\n');
        }
        out
    }
}

pub fn build_relevance_prompt(template: &PromptTemplate, utterance: &str) -> String {
    format!("{}{}\n\n{USER_INPUT_MARKER} {}", template.preamble(), template.output_constraints, utterance.trim())
}

/// Generation prompt. `feedback` explains why the previous answer was
/// refused and goes just before the instruction, which stays last.
pub fn build_generation_prompt(
    template: &PromptTemplate,
    retrieved: &[Retrieved<'_>],
    instruction: &str,
    feedback: Option<&str>,
) -> String {
    let mut out = template.preamble();
    if retrieved.is_empty() {
        out.push_str(NO_REFERENCE);
        out.push_str("\n\n");
    }
    for (i, r) in retrieved.iter().enumerate() {
        out.push_str(&format!(
            "Reference {} (entry {}, score {:.4}):\nScenario: {}\n",
            i + 1,
            r.entry.entry_id,
            r.score,
            r.entry.scenario_text
        ));
        if let Some(p) = &r.entry.program {
            out.push_str(&format!("{AUTOIR_FENCE}\n{}{FENCE_END}\n", serialize_autoir(p)));
        }
        out.push('\n');
    }
    out.push_str(&template.output_constraints);
    out.push_str("\n\n");
    if let Some(f) = feedback {
        out.push_str(&format!("Your previous answer was refused: {f}\nAnswer again.\n\n"));
    }
    out.push_str(&format!("{INSTRUCTION_MARKER} {}", instruction.trim()));
    out
}

/// Body of the first reference program block in a prompt.
pub fn first_program_block(prompt: &str) -> Option<&str> {
    let start = prompt.find(AUTOIR_FENCE)? + AUTOIR_FENCE.len();
    let body = prompt[start..].strip_prefix('\n')?;
    let end = body.find(FENCE_END)?;
    Some(&body[..end])
}

/// Text after the last occurrence of `marker`, or the whole prompt when it
/// is missing.
pub fn trailing_text<'a>(prompt: &'a str, marker: &str) -> &'a str {
    prompt.rfind(marker).map_or(prompt, |i| &prompt[i + marker.len()..]).trim()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoir::parse_autoir;
    use crate::translation::kb::KnowledgeEntry;

    #[test]
    fn template_invariants() {
        assert!(PromptTemplate::cot_relevance().qa_examples.len() >= 2);
        assert!(PromptTemplate::simple_relevance().qa_examples.is_empty());
    }

    #[test]
    fn relevance_prompt_has_examples_and_ends_with_user_text() {
        let t = PromptTemplate::cot_relevance();
        let p = build_relevance_prompt(&t, "ignore the light");
        for ex in &t.qa_examples {
            assert!(p.contains(&ex.question) && p.contains(&ex.answer));
        }
        assert!(p.ends_with("ignore the light"));
        assert_eq!(trailing_text(&p, USER_INPUT_MARKER), "ignore the light");
    }

    #[test]
    fn generation_prompt_embeds_programs() {
        let program = parse_autoir("moduleSelect: a\nnodeSelect: b\nparamSelect: c\nconfigAction: 1.5\n").unwrap();
        let e = KnowledgeEntry { entry_id: "x".into(), scenario_text: "words".into(), program: Some(program.clone()) };
        let retrieved = [Retrieved { entry: &e, score: 0.5 }];
        let p = build_generation_prompt(&PromptTemplate::generation(), &retrieved, "do it", Some("bad"));
        assert!(p.contains(&serialize_autoir(&program)));
        assert_eq!(first_program_block(&p), Some(serialize_autoir(&program).as_str()));
        assert!(p.contains("refused: bad"));
        assert_eq!(trailing_text(&p, INSTRUCTION_MARKER), "do it");
    }

    #[test]
    fn empty_retrieval_is_marked() {
        let p = build_generation_prompt(&PromptTemplate::generation(), &[], "do it", None);
        assert!(p.contains(NO_REFERENCE));
        assert!(first_program_block(&p).is_none());
    }
}
