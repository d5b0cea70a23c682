use crate::error::Result;
use crate::gateway::{ChatMessage, Gateway, Reply};
use crate::template::{TemplateKind, TemplateSet};

/// A gateway bound to one model id and the template set its prompts use.
#[derive(Debug, Clone, Copy)]
pub struct Agent<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub model: &'a str,
}

impl<'a> Agent<'a> {
    pub fn new(gateway: &'a Gateway, templates: &'a TemplateSet, model: &'a str) -> Self {
        Agent {
            gateway,
            templates,
            model,
        }
    }

    pub fn render(
        &self,
        kind: TemplateKind,
        bindings: &[(&str, &str)],
    ) -> Result<Vec<ChatMessage>> {
        self.templates.get(kind).render(bindings)
    }

    pub fn ask(&self, messages: Vec<ChatMessage>) -> Result<Reply> {
        Ok(self.gateway.chat(self.model, messages)?)
    }
}

/// Follow-up sent once when a reply does not parse as an instruction.
pub const REASK_SECTIONS: &str =
    "Your answer could not be parsed. Reply again using exactly the headers \
`Data Preprocessing:`, `Model Architecture:` and `Model Training:`, each on its own line \
followed by that section's content.";

/// Appends the failed reply and one corrective user turn.
pub(crate) fn reask(
    mut messages: Vec<ChatMessage>,
    failed: &str,
    correction: &str,
) -> Vec<ChatMessage> {
    messages.push(ChatMessage::assistant(failed));
    messages.push(ChatMessage::user(correction));
    messages
}
