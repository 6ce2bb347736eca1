use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{AnnotatedQuestion, Entry, Scheme};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Standard,
    Instruction,
}

pub const INSTRUCTION: &str = "Translate the question into a SPARQL query over the knowledge base. \
Use only the following knowledge base elements:";

/// One fine-tuning record: the model input and the expected output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub input: String,
    pub output: String,
}

impl Prompt {
    /// The text fed to the model.
    pub fn text(&self) -> String {
        match &self.instruction {
            None => self.input.clone(),
            Some(instr) => format!("### Instruction:\n{instr}\n\n### Input:\n{}\n\n### Response:\n", self.input),
        }
    }

    /// Prompt text followed by the expected output.
    pub fn full_text(&self) -> String {
        match self.instruction {
            None => format!("{}\n{}", self.input, self.output),
            Some(_) => format!("{}{}", self.text(), self.output),
        }
    }
}

pub fn build_instruction_prompt(entry: &Entry, annotated: &AnnotatedQuestion, mode: PromptMode) -> Result<Prompt> {
    match mode {
        PromptMode::Standard => {
            let input = match annotated.scheme {
                Scheme::RawQuestion => entry.question.clone(),
                _ => annotated.tokens.join(" "),
            };
            Ok(Prompt {
                instruction: None,
                input,
                output: entry.query.clone(),
            })
        }
        PromptMode::Instruction => {
            if annotated.scheme != Scheme::TagEnd {
                return Err(Error::PromptScheme);
            }
            let mut instruction = INSTRUCTION.to_string();
            for (kb, label) in annotated.tagged_elements() {
                write!(instruction, "\n- {kb} ({label})").unwrap();
            }
            Ok(Prompt {
                instruction: Some(instruction),
                input: entry.question.clone(),
                output: entry.query.clone(),
            })
        }
    }
}
