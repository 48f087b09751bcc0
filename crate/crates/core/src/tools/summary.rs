use super::{ToolDescriptor, ToolError, ToolSummary};
use crate::chat::{last_json_object, ChatBackend, ChatMessage};

const SECTIONS: [&str; 4] =
    ["target scenario", "input requirements", "output structure", "special requirements"];

fn heading(line: &str) -> Option<String> {
    let t = line.trim_start();
    if !t.starts_with('#') {
        return None;
    }
    Some(t.trim_start_matches('#').trim().trim_end_matches(':').trim().to_lowercase())
}

/// Reads the four summary fields from the `#`-headed sections of an internal
/// prompt. A missing special-requirements section reads as "none".
pub fn extract_summary(prompt: &str) -> Result<ToolSummary, ToolError> {
    let mut found: [Option<String>; 4] = Default::default();
    let mut current: Option<usize> = None;
    let mut buf = String::new();
    let flush = |current: Option<usize>, buf: &mut String, found: &mut [Option<String>; 4]| {
        if let Some(i) = current {
            found[i] = Some(buf.split_whitespace().collect::<Vec<_>>().join(" "));
        }
        buf.clear();
    };
    for line in prompt.lines() {
        if let Some(h) = heading(line) {
            flush(current, &mut buf, &mut found);
            current = SECTIONS.iter().position(|s| *s == h);
        } else if current.is_some() {
            buf.push_str(line);
            buf.push('\n');
        }
    }
    flush(current, &mut buf, &mut found);

    let [target, input, output, special] = found;
    let take = |v: Option<String>, label: &str| {
        v.filter(|s| !s.is_empty())
            .ok_or_else(|| ToolError::MalformedSummary(format!("no '{label}' section")))
    };
    let summary = ToolSummary {
        target_scenario: take(target, SECTIONS[0])?,
        input_requirements: take(input, SECTIONS[1])?,
        output_structure: take(output, SECTIONS[2])?,
        special_requirements: special.filter(|s| !s.is_empty()).unwrap_or_else(|| "none".into()),
    };
    summary.validate()?;
    Ok(summary)
}

fn parse_summary(text: &str) -> Result<ToolSummary, String> {
    let obj = last_json_object(text).ok_or("reply contains no JSON object")?;
    let summary: ToolSummary =
        serde_json::from_value(obj).map_err(|e| format!("reply is not a summary object: {e}"))?;
    summary.validate().map_err(|e| e.to_string())?;
    Ok(summary)
}

/// Four-aspect summary of a tool. With a backend the model writes it (one
/// retry on a malformed reply); without one the prompt sections are extracted.
pub fn summarize_tool(
    descriptor: &ToolDescriptor,
    backend: Option<&dyn ChatBackend>,
) -> Result<ToolSummary, ToolError> {
    if descriptor.internal_prompt.trim().is_empty() {
        return Err(ToolError::MalformedSummary("internal prompt is empty".into()));
    }
    let Some(backend) = backend else {
        return extract_summary(&descriptor.internal_prompt);
    };
    let mut messages = vec![
        ChatMessage::system(
            "You summarize econometric tool manuals. Reply with one JSON object with the string \
             fields target_scenario, input_requirements, output_structure and \
             special_requirements (use \"none\" when there are none).",
        ),
        ChatMessage::user(format!(
            "Summarize the tool `{}`.\n\n{}",
            descriptor.name, descriptor.internal_prompt
        )),
    ];
    let mut last_error = String::new();
    for _ in 0..2 {
        let reply = backend.complete(&messages, None);
        let problem = match reply {
            Ok(r) => match r.text().map(parse_summary) {
                Some(Ok(s)) => return Ok(s),
                Some(Err(e)) => e,
                None => "expected a text reply, got a tool call".into(),
            },
            Err(e) => e.to_string(),
        };
        messages.push(ChatMessage::user(format!(
            "Summary for `{}` rejected: {problem}. Reply again with the JSON object only.",
            descriptor.name
        )));
        last_error = problem;
    }
    Err(ToolError::MalformedSummary(last_error))
}
