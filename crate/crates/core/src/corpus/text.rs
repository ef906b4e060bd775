//! Rule-based sentence splitting and tokenisation.

/// The mask token that replaces a sentence-initial partitive.
pub const MASK: &str = "<qnt>";

/// Lowercased words (without the final period) that do not end a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "rev", "gen", "col", "lt", "sgt", "capt", "cmdr", "adm",
    "gov", "sen", "rep", "pres", "hon", "messrs", "mme", "mlle", "vs", "e.g", "i.e", "cf", "al", "inc", "ltd", "co",
    "corp", "bros", "dept", "univ", "assn", "approx", "fig", "figs", "vol", "vols", "ch", "pp", "eds", "jan", "feb",
    "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
];

const TERMINALS: &[char] = &['.', '!', '?'];
const CLOSERS: &[char] = &['"', '\'', '\u{201d}', '\u{2019}', ')', ']'];
const OPENERS: &[char] = &['"', '\'', '\u{201c}', '\u{2018}', '(', '['];

fn word_before(chars: &[char], end: usize) -> String {
    let mut start = end;
    while start > 0 && (chars[start - 1].is_alphanumeric() || chars[start - 1] == '.') {
        start -= 1;
    }
    chars[start..end].iter().collect::<String>().to_lowercase()
}

fn is_abbreviation(word: &str) -> bool {
    if word.is_empty() {
        return false;
    }
    // single-letter initials ("J. Smith") and dotted forms ("U.S.")
    if word.chars().count() == 1 && word.chars().all(char::is_alphabetic) {
        return true;
    }
    if word.contains('.') && word.chars().any(char::is_alphabetic) {
        return true;
    }
    ABBREVIATIONS.contains(&word)
}

/// Splits one document into sentences.
///
/// A boundary is a run of `.`, `!` or `?` (plus closing quotes or brackets)
/// followed by whitespace and then an uppercase letter or an opening quote.
/// A single period after a known abbreviation or an initial is not a boundary.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < n {
        if !TERMINALS.contains(&chars[i]) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < n && TERMINALS.contains(&chars[j + 1]) {
            j += 1;
        }
        let mut k = j;
        while k + 1 < n && CLOSERS.contains(&chars[k + 1]) {
            k += 1;
        }
        let mut m = k + 1;
        while m < n && chars[m].is_whitespace() {
            m += 1;
        }
        let spaced = m > k + 1;
        let opens = m < n && (chars[m].is_uppercase() || OPENERS.contains(&chars[m]));
        let abbreviated = chars[i] == '.' && j == i && is_abbreviation(&word_before(&chars, i));
        if spaced && opens && !abbreviated {
            push_trimmed(&mut out, &chars[start..=k]);
            start = m;
            i = m;
        } else {
            i = k + 1;
        }
    }
    if start < n {
        push_trimmed(&mut out, &chars[start..]);
    }
    out
}

fn push_trimmed(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if !s.is_empty() {
        out.push(s);
    }
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Splits a sentence into lowercased tokens.
///
/// Words keep internal hyphens, digits keep internal `.`/`,` ("3.5", "1,000"),
/// every other punctuation mark is its own token, and contractions split at
/// the apostrophe ("don't" → "do" "n't", "it's" → "it" "'s"). The mask token
/// passes through unchanged.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in sentence.split_whitespace() {
        if chunk == MASK {
            tokens.push(MASK.to_string());
            continue;
        }
        let chars: Vec<char> = chunk.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if !c.is_alphanumeric() {
                tokens.push(c.to_string());
                i += 1;
                continue;
            }
            let start = i;
            i += 1;
            while i < chars.len() {
                let c = chars[i];
                let next_alnum = chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
                let prev = chars[i - 1];
                let joins = c.is_alphanumeric()
                    || (c == '-' && next_alnum && prev.is_alphanumeric())
                    || ((c == '.' || c == ',')
                        && prev.is_ascii_digit()
                        && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit()))
                    || (is_apostrophe(c)
                        && prev.is_alphabetic()
                        && chars.get(i + 1).is_some_and(|n| n.is_alphabetic()));
                if !joins {
                    break;
                }
                i += 1;
            }
            let word: String = chars[start..i]
                .iter()
                .map(|&c| if is_apostrophe(c) { '\'' } else { c })
                .collect::<String>()
                .to_lowercase();
            split_contraction(&word, &mut tokens);
        }
    }
    tokens
}

fn split_contraction(word: &str, out: &mut Vec<String>) {
    let mut rest = word;
    while !rest.is_empty() {
        // an apostrophe at index 0 belongs to the clitic being emitted
        let first = rest.chars().next().map_or(1, char::len_utf8);
        let Some(p) = rest[first..].find('\'').map(|p| p + first) else {
            out.push(rest.to_string());
            break;
        };
        let (head, tail) = rest.split_at(p);
        let negation = head.len() > 1
            && head.ends_with('n')
            && tail[1..].starts_with('t')
            && (tail.len() == 2 || tail[2..].starts_with('\''));
        if negation {
            out.push(head[..head.len() - 1].to_string());
            out.push("n't".to_string());
            rest = &tail[2..];
        } else {
            out.push(head.to_string());
            rest = tail;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn splits_on_terminal_periods() {
        assert_eq!(
            split_sentences("It rained. Most of us left."),
            ["It rained.", "Most of us left."]
        );
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("   \n ").is_empty());
    }

    #[test]
    fn abbreviations_do_not_split() {
        assert_eq!(
            split_sentences("Dr. Smith left. All of them stayed."),
            ["Dr. Smith left.", "All of them stayed."]
        );
    }

    /// Hand-built fixture of twenty sentences, boundaries checked by inspection.
    #[test]
    fn twenty_sentence_fixture() {
        let text = "Mr. Brown arrived at noon. He met Mrs. Green and Dr. White. \
            Were they late? No! \"Everyone waits,\" she said. The U.S. team won. \
            J. R. Smith scored twice. Prof. Adams disagreed... Nobody listened. \
            Most of the time, the rate is fixed. It rose to 3.5 percent. \
            The meeting (in Jan. 2009) ran long. Some of them left early! \
            What happened next?! Nobody knows. Sales rose, e.g. in Europe. \
            The company, Acme Inc. of Ohio, agreed. 'Fine,' he said. \
            It ended at St. Mary's church. None of these stories held up.";
        let got = split_sentences(text);
        let want = [
            "Mr. Brown arrived at noon.",
            "He met Mrs. Green and Dr. White.",
            "Were they late?",
            "No!",
            "\"Everyone waits,\" she said.",
            "The U.S. team won.",
            "J. R. Smith scored twice.",
            "Prof. Adams disagreed...",
            "Nobody listened.",
            "Most of the time, the rate is fixed.",
            "It rose to 3.5 percent.",
            "The meeting (in Jan. 2009) ran long.",
            "Some of them left early!",
            "What happened next?!",
            "Nobody knows.",
            "Sales rose, e.g. in Europe.",
            "The company, Acme Inc. of Ohio, agreed.",
            "'Fine,' he said.",
            "It ended at St. Mary's church.",
            "None of these stories held up.",
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn basic_tokenization() {
        assert_eq!(toks("All of them stayed."), ["all", "of", "them", "stayed", "."]);
        assert_eq!(toks("don't"), ["do", "n't"]);
        assert_eq!(toks("56% said yes"), ["56", "%", "said", "yes"]);
        assert_eq!(toks("<qnt> the time"), ["<qnt>", "the", "time"]);
    }

    /// Fifty sentences tokenised by hand.
    #[test]
    fn hand_tokenized_fixture() {
        let fixture = include_str!("../../fixtures/tokenize.tsv");
        let mut n = 0;
        for (lineno, line) in fixture.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (sentence, expected) = line.split_once('\t').expect("tab separated");
            let want: Vec<&str> = expected.split(' ').collect();
            assert_eq!(tokenize(sentence), want, "line {}: {sentence}", lineno + 1);
            n += 1;
        }
        assert_eq!(n, 50);
    }
}
