//! Instruction templates sent to the prompt-writing model.

use std::fmt::Write;

use super::ScoredPrompt;
use crate::emotion::EmotionLabel;

const REQUIREMENTS: &str = "Here are my requirements:\n \
- Please only reply with the template.\n \
- Each template should start with '-' in a separate line.\n \
- Ensure that the output is in a clear and consistent format.\n";

pub const INIT_PREFIX: &str = "Please provide me with ";
pub const MOD_PREFIX: &str = "I have two lists of templates:";
pub const GOOD_HEADING: &str = "Top-";
pub const BAD_HEADING: &str = "Worst-";
pub const REQUIREMENTS_HEADING: &str = "Here are my requirements:";

pub fn label_list(labels: &[EmotionLabel]) -> String {
    labels.iter().map(|l| l.name()).collect::<Vec<_>>().join(", ")
}

/// Instruction asking for `n` diverse initial prompts over `labels`.
pub fn render_init_template(n: usize, labels: &[EmotionLabel]) -> String {
    format!(
        "{INIT_PREFIX}{n} diverse prompts that are suitable for input into the MLLM. \
The prompts should be diverse, such as detailed and straightforward, and should give the LLM a role. \
The prompts should make the LLM classify the emotions that people evoke when they see the image. \
The emotion label should prompt the LLM to choose one of the following emotions: {}.\n{REQUIREMENTS}",
        label_list(labels)
    )
}

/// One line per prompt: `- "<text>" (accuracy: 0.433)`.
pub fn render_scored_line(p: &ScoredPrompt) -> String {
    format!("- \"{}\" (accuracy: {:.3})", p.text, p.accuracy)
}

/// Instruction asking for `t` improved prompts given the best and worst ones.
pub fn render_mod_template(good: &[ScoredPrompt], bad: &[ScoredPrompt], t: usize) -> String {
    let mut s = format!(
        "{MOD_PREFIX} one with good templates and the other with bad templates. \
Based on the characteristics that make a template good or bad, please provide {t} better templates. \
Here is the list of good templates with their accuracies:\n{GOOD_HEADING}{}:\n",
        good.len()
    );
    for p in good {
        let _ = writeln!(s, "{}", render_scored_line(p));
    }
    let _ = writeln!(
        s,
        "Here is the list of bad templates with their accuracies:\n{BAD_HEADING}{}:",
        bad.len()
    );
    for p in bad {
        let _ = writeln!(s, "{}", render_scored_line(p));
    }
    s.push_str(REQUIREMENTS);
    s
}

/// Inverse of [`render_scored_line`]: the quoted text and its accuracy.
pub fn parse_scored_line(line: &str) -> Option<(String, f64)> {
    let rest = line.trim().strip_prefix("- \"")?;
    let cut = rest.rfind("\" (accuracy: ")?;
    let acc = rest[cut + "\" (accuracy: ".len()..].strip_suffix(')')?;
    Some((rest[..cut].to_string(), acc.parse().ok()?))
}
