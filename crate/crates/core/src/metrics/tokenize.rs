//! Caption tokenizer used by every text metric.
//!
//! Rules, applied to the lowercased caption:
//!
//! * Whitespace separates tokens.
//! * `, ; : ? ! " ( ) [ ] { } < >` and backticks are dropped and act as
//!   separators. A comma between two digits is kept (`1,000`).
//! * `.` is kept only between two digits (`3.5`); otherwise it is dropped.
//! * `-` is kept between two alphanumeric characters (`t-shirt`); otherwise it
//!   is dropped.
//! * `@ # $ % &` become tokens of their own.
//! * A word ending in `n't` splits into the stem and `n't` (`don't` -> `do`,
//!   `n't`). A word ending in `'s 're 've 'll 'd 'm` splits off that clitic.
//!   Any other apostrophe is dropped.
//! * Everything else (letters, digits, `/`, `+`, `*`, `=` ...) belongs to words.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenizedCaption {
    pub tokens: Vec<String>,
}

impl TokenizedCaption {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            tokens: tokens.into_iter().map(Into::into).filter(|t: &String| !t.is_empty()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

const CLITICS: [&str; 6] = ["'s", "'re", "'ve", "'ll", "'d", "'m"];

fn is_dropped(c: char) -> bool {
    matches!(
        c,
        ',' | ';' | ':' | '?' | '!' | '"' | '(' | ')' | '[' | ']' | '{' | '}' | '<' | '>' | '`'
    )
}

fn push_word(word: &mut String, out: &mut Vec<String>) {
    if word.is_empty() {
        return;
    }
    let w = std::mem::take(word);
    if let Some(stem) = w.strip_suffix("n't") {
        if !stem.is_empty() && !stem.contains('\'') {
            out.push(stem.to_owned());
            out.push("n't".to_owned());
            return;
        }
    }
    for clitic in CLITICS {
        if let Some(stem) = w.strip_suffix(clitic) {
            if !stem.is_empty() && !stem.contains('\'') {
                out.push(stem.to_owned());
                out.push(clitic.to_owned());
                return;
            }
        }
    }
    out.extend(w.split('\'').filter(|p| !p.is_empty()).map(str::to_owned));
}

pub fn tokenize(caption: &str) -> TokenizedCaption {
    let chars: Vec<char> = caption.to_lowercase().chars().collect();
    let mut out = Vec::new();
    let mut word = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| chars[j]);
        let next = chars.get(i + 1).copied();
        let between = |pred: fn(&char) -> bool| prev.as_ref().is_some_and(pred) && next.as_ref().is_some_and(pred);
        let keep = match c {
            c if c.is_whitespace() => false,
            ',' | '.' => between(char::is_ascii_digit),
            '-' => between(|c| c.is_alphanumeric()),
            c if is_dropped(c) => false,
            '@' | '#' | '$' | '%' | '&' => {
                push_word(&mut word, &mut out);
                out.push(c.to_string());
                continue;
            }
            _ => true,
        };
        if keep {
            word.push(c);
        } else {
            push_word(&mut word, &mut out);
        }
    }
    push_word(&mut word, &mut out);
    TokenizedCaption { tokens: out }
}
