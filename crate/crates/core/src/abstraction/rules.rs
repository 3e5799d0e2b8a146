//! Deterministic extractor for structured logs.
//!
//! Every line of the form `[<agent>] <action> => <state>` is one step. Lines
//! that do not start with `[` are prose and ignored; bracketed lines that do
//! not fit the form are reported as malformed.

use super::{Chunk, ExtractedItem, Extractor, ServiceError, TaskContext};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleLine<'a> {
    Step {
        agent: &'a str,
        action: &'a str,
        state: &'a str,
    },
    Malformed,
    Ignored,
}

pub fn parse_rule_line(line: &str) -> RuleLine<'_> {
    let line = line.trim();
    let Some(rest) = line.strip_prefix('[') else {
        return RuleLine::Ignored;
    };
    let Some((agent, body)) = rest.split_once(']') else {
        return RuleLine::Malformed;
    };
    let Some((action, state)) = body.split_once("=>") else {
        return RuleLine::Malformed;
    };
    let (agent, action, state) = (agent.trim(), action.trim(), state.trim());
    if agent.is_empty() || action.is_empty() || state.is_empty() {
        return RuleLine::Malformed;
    }
    RuleLine::Step {
        agent,
        action,
        state,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RulesExtractor;

impl Extractor for RulesExtractor {
    fn name(&self) -> &str {
        "rules"
    }

    fn extract(&self, chunk: &Chunk, _ctx: &TaskContext<'_>) -> Result<Vec<ExtractedItem>, ServiceError> {
        let mut out = Vec::new();
        for (offset, record) in chunk.records.iter().enumerate() {
            for line in record.lines() {
                match parse_rule_line(line) {
                    RuleLine::Step {
                        agent,
                        action,
                        state,
                    } => out.push(ExtractedItem::Triple {
                        agent: agent.to_string(),
                        action: action.to_string(),
                        state: state.to_string(),
                        record: Some(offset),
                    }),
                    RuleLine::Malformed => out.push(ExtractedItem::Malformed(line.trim().to_string())),
                    RuleLine::Ignored => {}
                }
            }
        }
        Ok(out)
    }
}
