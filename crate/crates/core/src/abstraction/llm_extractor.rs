use super::{Chunk, ExtractedItem, Extractor, ServiceError, TaskContext};
use crate::llm::{ChatClient, ChatMessage, PromptTemplate};

/// Extracts steps by asking a chat model for `AGENT | ACTION | STATE` lines.
#[derive(Debug)]
pub struct LlmExtractor {
    client: ChatClient,
    template: PromptTemplate,
}

impl LlmExtractor {
    pub fn new(client: ChatClient, template: PromptTemplate) -> Self {
        Self { client, template }
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }
}

/// Reads the model's reply. Blank lines and a lone `NONE` are ignored; any
/// other line without exactly three non-empty fields is malformed.
pub fn parse_llm_output(text: &str) -> Vec<ExtractedItem> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.eq_ignore_ascii_case("none") || line.starts_with("```") {
            continue;
        }
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        match fields.as_slice() {
            [agent, action, state] if !agent.is_empty() && !action.is_empty() && !state.is_empty() => {
                out.push(ExtractedItem::Triple {
                    agent: agent.to_string(),
                    action: action.to_string(),
                    state: state.to_string(),
                    record: None,
                })
            }
            _ => out.push(ExtractedItem::Malformed(line.to_string())),
        }
    }
    out
}

impl Extractor for LlmExtractor {
    fn name(&self) -> &str {
        "llm"
    }

    fn extract(&self, chunk: &Chunk, ctx: &TaskContext<'_>) -> Result<Vec<ExtractedItem>, ServiceError> {
        let run_id = ctx.run_id.to_string();
        let records = chunk.records.join("\n");
        let prompt = self.template.render(&[
            ("task_id", ctx.task_id),
            ("run_id", &run_id),
            ("records", &records),
        ]);
        let reply = self.client.complete(&[ChatMessage::user(prompt)])?;
        Ok(parse_llm_output(&reply))
    }

    fn fingerprint(&self) -> Vec<String> {
        vec![
            format!("extract template {}", self.template.fingerprint()),
            format!("extract model {}", self.client.settings().model),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pipe_lines() {
        let items = parse_llm_output("WebSurfer | search | no hits\n\n  Coder|write code|compiles \nNONE\nSure, here you go:\na | b\n");
        assert_eq!(items.len(), 4);
        assert_eq!(
            items[1],
            ExtractedItem::Triple {
                agent: "Coder".into(),
                action: "write code".into(),
                state: "compiles".into(),
                record: None
            }
        );
        assert!(matches!(items[2], ExtractedItem::Malformed(_)));
        assert!(matches!(items[3], ExtractedItem::Malformed(_)));
    }

    #[test]
    fn empty_fields_are_malformed() {
        assert!(matches!(parse_llm_output("a | | c")[0], ExtractedItem::Malformed(_)));
        assert!(matches!(parse_llm_output("a | b | c | d")[0], ExtractedItem::Malformed(_)));
    }
}
