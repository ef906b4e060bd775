use super::quantifier::Quantifier;
use super::text::MASK;

/// Outcome of inspecting a tokenised sentence as a cloze target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetMatch {
    /// The sentence does not start with a partitive quantifier.
    NotPartitive,
    /// Starts with a partitive, but the quantifier occurs again later.
    Recurs(Quantifier),
    /// The sentence already contains the mask token.
    MaskCollision(Quantifier),
    /// Partitive span replaced by the mask token.
    Masked(Quantifier, Vec<String>),
}

fn contains_run(haystack: &[String], needle: &[&str]) -> bool {
    !needle.is_empty()
        && haystack
            .windows(needle.len())
            .any(|w| w.iter().zip(needle).all(|(a, b)| a == b))
}

/// Matches the longest sentence-initial "quantifier of" span among `quantifiers`.
///
/// Tokens are expected lowercased (as produced by [`super::tokenize`]); the
/// comparison lowercases again so raw tokens also work. The recurrence check
/// looks for the gold quantifier's words (without "of") anywhere after the span.
pub fn classify_target(tokens: &[String], quantifiers: &[Quantifier]) -> TargetMatch {
    let lower: Vec<String> = tokens
        .iter()
        .map(|t| if t == MASK { t.clone() } else { t.to_lowercase() })
        .collect();
    let mut candidates: Vec<Quantifier> = quantifiers.to_vec();
    candidates.sort_by_key(|q| std::cmp::Reverse(q.surface_tokens().len()));
    let Some(q) = candidates.into_iter().find(|q| {
        let surface = q.surface_tokens();
        lower.len() >= surface.len() && lower.iter().zip(&surface).all(|(a, b)| a == b)
    }) else {
        return TargetMatch::NotPartitive;
    };
    let rest = &lower[q.surface_tokens().len()..];
    if contains_run(rest, &q.words()) {
        return TargetMatch::Recurs(q);
    }
    if rest.iter().any(|t| t == MASK) {
        return TargetMatch::MaskCollision(q);
    }
    let mut masked = Vec::with_capacity(rest.len() + 1);
    masked.push(MASK.to_string());
    masked.extend(rest.iter().cloned());
    TargetMatch::Masked(q, masked)
}

/// The matched quantifier and masked tokens, or `None` when the sentence is
/// not a usable target.
pub fn detect_and_mask(tokens: &[String], quantifiers: &[Quantifier]) -> Option<(Quantifier, Vec<String>)> {
    match classify_target(tokens, quantifiers) {
        TargetMatch::Masked(q, m) => Some((q, m)),
        _ => None,
    }
}
