//! Small text utilities shared by caption generation, prompting and corpus
//! statistics.

use std::collections::HashSet;
use std::sync::OnceLock;

/// English number words for 1..=10, index 0 is "one".
pub const NUMBER_WORDS: [&str; 10] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

const STOPWORDS_V1: &str = include_str!("../templates/stopwords_v1.txt");

/// Lowercase, turn underscores into spaces and collapse runs of whitespace.
pub fn normalize_class_name(name: &str) -> String {
    name.to_lowercase()
        .replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Number word for `n` in 1..=10, `None` otherwise.
pub fn number_word(n: u32) -> Option<&'static str> {
    (1..=10).contains(&n).then(|| NUMBER_WORDS[n as usize - 1])
}

const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("person", "people"),
    ("people", "people"),
    ("man", "men"),
    ("woman", "women"),
    ("child", "children"),
    ("aircraft", "aircraft"),
    ("sheep", "sheep"),
    ("fish", "fish"),
    ("deer", "deer"),
    ("leaf", "leaves"),
];

/// Plural of a (possibly multi-word) noun phrase; only the last word changes.
pub fn pluralize(phrase: &str) -> String {
    let (head, last) = match phrase.rsplit_once(' ') {
        Some((h, l)) => (Some(h), l),
        None => (None, phrase),
    };
    let plural = if let Some((_, p)) = IRREGULAR_PLURALS.iter().find(|(s, _)| *s == last) {
        (*p).to_string()
    } else if last.ends_with('s')
        || last.ends_with('x')
        || last.ends_with('z')
        || last.ends_with("ch")
        || last.ends_with("sh")
    {
        format!("{last}es")
    } else if last.len() > 1
        && last.ends_with('y')
        && !matches!(last.as_bytes()[last.len() - 2], b'a' | b'e' | b'i' | b'o' | b'u')
    {
        format!("{}ies", &last[..last.len() - 1])
    } else {
        format!("{last}s")
    };
    match head {
        Some(h) => format!("{h} {plural}"),
        None => plural,
    }
}

/// Indefinite article for a noun phrase.
pub fn indefinite_article(phrase: &str) -> &'static str {
    match phrase.chars().next() {
        Some(c) if "aeiou".contains(c.to_ascii_lowercase()) => "an",
        _ => "a",
    }
}

/// Join items as "a", "a and b", "a, b and c".
pub fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

/// The versioned stop-word list used for keyword statistics.
pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_V1
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// Whitespace tokens after deleting ASCII punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    let stripped: String = text.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    stripped.split_whitespace().map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_names_normalize() {
        assert_eq!(normalize_class_name("Baseball_Diamond"), "baseball diamond");
        assert_eq!(normalize_class_name("  storage   tank "), "storage tank");
    }

    #[test]
    fn plurals() {
        assert_eq!(pluralize("plane"), "planes");
        assert_eq!(pluralize("storage tank"), "storage tanks");
        assert_eq!(pluralize("bus"), "buses");
        assert_eq!(pluralize("ferry"), "ferries");
        assert_eq!(pluralize("person"), "people");
        assert_eq!(pluralize("tennis court"), "tennis courts");
        assert_eq!(pluralize("baseball diamond"), "baseball diamonds");
    }

    #[test]
    fn stopword_list_is_fifty_words() {
        let sw = stopwords();
        assert_eq!(sw.len(), 50);
        for w in ["there", "an", "is"] {
            assert!(sw.contains(w));
        }
    }

    #[test]
    fn tokenizer_strips_punctuation() {
        assert_eq!(tokenize("There are planes."), vec!["There", "are", "planes"]);
        assert!(tokenize("  ... ").is_empty());
    }

    #[test]
    fn lists_join() {
        let v: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(join_list(&v[..1]), "a");
        assert_eq!(join_list(&v[..2]), "a and b");
        assert_eq!(join_list(&v), "a, b and c");
    }
}
