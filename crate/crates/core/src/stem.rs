//! Porter suffix-stripping stemmer and the tokenizer used for step descriptions
//! and narration.
//!
//! [`porter_pass`] is one pass of the classic algorithm (steps 1a through 5b).
//! A single pass is not idempotent (`agreed -> agre -> agr`), so [`stem`]
//! iterates it to a fixed point. Each pass never lengthens the word, so the
//! iteration terminates.

use crate::error::{Error, Result};

/// Lowercase `text` and split it on every non-letter character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Tokenize and stem every token of `text`.
pub fn stem_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .map(|t| stem_unchecked(&t))
        .collect()
}

/// Deterministic, idempotent stem of a single word.
pub fn stem(word: &str) -> Result<String> {
    if word.is_empty() {
        return Err(Error::invalid("cannot stem an empty word"));
    }
    if !word.chars().all(char::is_alphabetic) {
        return Err(Error::invalid(format!(
            "word `{word}` contains non-letter characters"
        )));
    }
    Ok(stem_unchecked(word))
}

fn stem_unchecked(word: &str) -> String {
    let lower = word.to_lowercase();
    if !lower.is_ascii() {
        // The suffix rules are defined over the English alphabet only.
        return lower;
    }
    let mut current = lower.into_bytes();
    loop {
        let next = porter_bytes(&current);
        if next == current {
            break;
        }
        current = next;
    }
    String::from_utf8(current).expect("ascii")
}

/// A single pass of the Porter algorithm over a lowercase ASCII word.
pub fn porter_pass(word: &str) -> String {
    let lower = word.to_ascii_lowercase();
    if !lower.is_ascii() {
        return lower;
    }
    String::from_utf8(porter_bytes(lower.as_bytes())).expect("ascii")
}

fn porter_bytes(word: &[u8]) -> Vec<u8> {
    let mut w = word.to_vec();
    // Words of one or two letters are left alone, as in Porter's reference code.
    if w.len() <= 2 {
        return w;
    }
    step1a(&mut w);
    step1b(&mut w);
    step1c(&mut w);
    step2(&mut w);
    step3(&mut w);
    step4(&mut w);
    step5(&mut w);
    w
}

fn is_consonant(w: &[u8], i: usize) -> bool {
    match w[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => i == 0 || !is_consonant(w, i - 1),
        _ => true,
    }
}

/// Number of vowel-consonant sequences in `[C](VC)^m[V]`.
fn measure(w: &[u8]) -> usize {
    let mut m = 0;
    let mut prev_vowel = false;
    for i in 0..w.len() {
        let consonant = is_consonant(w, i);
        if consonant && prev_vowel {
            m += 1;
        }
        prev_vowel = !consonant;
    }
    m
}

fn has_vowel(w: &[u8]) -> bool {
    (0..w.len()).any(|i| !is_consonant(w, i))
}

fn ends_double_consonant(w: &[u8]) -> bool {
    let n = w.len();
    n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1)
}

fn ends_cvc(w: &[u8]) -> bool {
    let n = w.len();
    n >= 3
        && is_consonant(w, n - 3)
        && !is_consonant(w, n - 2)
        && is_consonant(w, n - 1)
        && !matches!(w[n - 1], b'w' | b'x' | b'y')
}

fn stem_of<'a>(w: &'a [u8], suffix: &str) -> Option<&'a [u8]> {
    w.strip_suffix(suffix.as_bytes())
}

fn replace_suffix(w: &mut Vec<u8>, suffix_len: usize, with: &str) {
    w.truncate(w.len() - suffix_len);
    w.extend_from_slice(with.as_bytes());
}

/// Applies the first rule whose suffix matches (rules are listed so that the
/// longest candidate comes first); a matching rule whose condition fails ends
/// the step.
fn apply_rules(w: &mut Vec<u8>, rules: &[(&str, &str)], cond: impl Fn(&[u8]) -> bool) {
    for &(suffix, replacement) in rules {
        if let Some(stem) = stem_of(w, suffix) {
            if cond(stem) {
                replace_suffix(w, suffix.len(), replacement);
            }
            return;
        }
    }
}

fn step1a(w: &mut Vec<u8>) {
    if w.ends_with(b"sses") || w.ends_with(b"ies") {
        w.truncate(w.len() - 2);
    } else if w.ends_with(b"ss") {
    } else if w.ends_with(b"s") {
        w.pop();
    }
}

fn step1b(w: &mut Vec<u8>) {
    if let Some(stem) = stem_of(w, "eed") {
        if measure(stem) > 0 {
            w.pop();
        }
        return;
    }
    let stripped = ["ed", "ing"].iter().any(|suffix| match stem_of(w, suffix) {
        Some(stem) if has_vowel(stem) => {
            w.truncate(stem.len());
            true
        }
        _ => false,
    });
    if !stripped {
        return;
    }
    if w.ends_with(b"at") || w.ends_with(b"bl") || w.ends_with(b"iz") {
        w.push(b'e');
    } else if ends_double_consonant(w) && !matches!(w[w.len() - 1], b'l' | b's' | b'z') {
        w.pop();
    } else if measure(w) == 1 && ends_cvc(w) {
        w.push(b'e');
    }
}

fn step1c(w: &mut [u8]) {
    let n = w.len();
    if n > 1 && w[n - 1] == b'y' && has_vowel(&w[..n - 1]) {
        w[n - 1] = b'i';
    }
}

fn step2(w: &mut Vec<u8>) {
    const RULES: &[(&str, &str)] = &[
        ("ational", "ate"),
        ("tional", "tion"),
        ("enci", "ence"),
        ("anci", "ance"),
        ("izer", "ize"),
        ("abli", "able"),
        ("alli", "al"),
        ("entli", "ent"),
        ("eli", "e"),
        ("ousli", "ous"),
        ("ization", "ize"),
        ("ation", "ate"),
        ("ator", "ate"),
        ("alism", "al"),
        ("iveness", "ive"),
        ("fulness", "ful"),
        ("ousness", "ous"),
        ("aliti", "al"),
        ("iviti", "ive"),
        ("biliti", "ble"),
    ];
    apply_rules(w, RULES, |s| measure(s) > 0);
}

fn step3(w: &mut Vec<u8>) {
    const RULES: &[(&str, &str)] = &[
        ("icate", "ic"),
        ("ative", ""),
        ("alize", "al"),
        ("iciti", "ic"),
        ("ical", "ic"),
        ("ful", ""),
        ("ness", ""),
    ];
    apply_rules(w, RULES, |s| measure(s) > 0);
}

fn step4(w: &mut Vec<u8>) {
    const RULES: &[&str] = &[
        "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent", "ion",
        "ou", "ism", "ate", "iti", "ous", "ive", "ize",
    ];
    for &suffix in RULES {
        if let Some(stem) = stem_of(w, suffix) {
            let ok = measure(stem) > 1
                && (suffix != "ion" || matches!(stem.last(), Some(b's' | b't')));
            if ok {
                w.truncate(stem.len());
            }
            return;
        }
    }
}

fn step5(w: &mut Vec<u8>) {
    if let Some(stem) = stem_of(w, "e") {
        let m = measure(stem);
        if m > 1 || (m == 1 && !ends_cvc(stem)) {
            w.pop();
        }
    }
    if measure(w) > 1 && ends_double_consonant(w) && w.ends_with(b"l") {
        w.pop();
    }
}
