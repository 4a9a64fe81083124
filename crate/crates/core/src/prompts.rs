//! Prompt templates and the shared dialogue-history serializer.
//!
//! Templates are stored as resource files with `<field name>` placeholders
//! and filled in a single left-to-right pass, so user text that happens to
//! contain a placeholder string is never substituted twice.

use crate::ingest::Utterance;

pub const TEMPLATE_VERSION: &str = "v1";

pub const SUMMARIZE_TEMPLATE: &str = include_str!("../prompts/summarize.v1.txt");
pub const SUGGEST_TEMPLATE: &str = include_str!("../prompts/suggest.v1.txt");
pub const OFFTOPIC_TEMPLATE: &str = include_str!("../prompts/offtopic.v1.txt");

pub const RECENT_UTTERANCE: &str = "<recent utterance>";
pub const PREVIOUS_SUMMARY: &str = "<previous summary>";
pub const CURRENT_UTTERANCE: &str = "<current utterance>";
pub const DIALOGUE_HISTORY: &str = "<full dialogue history>";

/// Appended to a summary prompt when the first answer failed validation.
pub const SUMMARY_RETRY_SUFFIX: &str =
    "\nReminder: answer with 4 to 12 comma-separated keyword terms and nothing else.\n";

/// Replaces each placeholder occurrence in `template` with its value.
pub fn fill(template: &str, fields: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    loop {
        let next = fields
            .iter()
            .filter_map(|(key, value)| rest.find(key).map(|pos| (pos, *key, *value)))
            .min_by_key(|(pos, _, _)| *pos);
        match next {
            Some((pos, key, value)) => {
                out.push_str(&rest[..pos]);
                out.push_str(value);
                rest = &rest[pos + key.len()..];
            }
            None => {
                out.push_str(rest);
                return out;
            }
        }
    }
}

/// `Speaker: text` lines, oldest first.
pub fn serialize_history(history: &[Utterance]) -> String {
    history
        .iter()
        .map(|u| format!("{}: {}", u.speaker.label(), u.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn summary_prompt(recent: &str, previous: &[String]) -> String {
    let previous = previous.join(", ");
    fill(
        SUMMARIZE_TEMPLATE,
        &[(RECENT_UTTERANCE, recent), (PREVIOUS_SUMMARY, &previous)],
    )
}

pub fn suggestion_prompt(current: &str, history: &[Utterance]) -> String {
    fill(
        SUGGEST_TEMPLATE,
        &[
            (CURRENT_UTTERANCE, current),
            (DIALOGUE_HISTORY, &serialize_history(history)),
        ],
    )
}

pub fn offtopic_prompt(current: &str, history: &[Utterance]) -> String {
    fill(
        OFFTOPIC_TEMPLATE,
        &[
            (CURRENT_UTTERANCE, current),
            (DIALOGUE_HISTORY, &serialize_history(history)),
        ],
    )
}
