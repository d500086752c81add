use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::CodeSample;
use crate::error::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CleanProfile {
    /// Generated programs: drop banner comments, HTML tags, URLs, emails.
    #[default]
    Formai,
    /// Mixed real-world sources: drop all comments, normalize line endings
    /// and trailing whitespace.
    Aggregated,
}

impl FromStr for CleanProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "formai" => Ok(CleanProfile::Formai),
            "aggregated" => Ok(CleanProfile::Aggregated),
            other => Err(Error::config(
                "profile",
                format!("expected formai or aggregated, got `{other}`"),
            )),
        }
    }
}

pub fn clean(sample: &CodeSample, profile: CleanProfile) -> CodeSample {
    let mut out = sample.clone();
    // Each pass only deletes text, so iterating to a fixed point terminates
    // and makes the whole transform idempotent.
    let mut text = sample.source_text.clone();
    loop {
        let next = match profile {
            CleanProfile::Formai => formai_pass(&text),
            CleanProfile::Aggregated => aggregated_pass(&text),
        };
        if next == text {
            break;
        }
        text = next;
    }
    out.source_text = text;
    out.refresh_word_count();
    out.cleaned = true;
    out
}

fn formai_pass(text: &str) -> String {
    static HTML: OnceLock<Regex> = OnceLock::new();
    static URL: OnceLock<Regex> = OnceLock::new();
    static EMAIL: OnceLock<Regex> = OnceLock::new();
    let html = HTML.get_or_init(|| {
        Regex::new(
            r"(?i)</?(?:a|abbr|b|big|blockquote|body|br|center|code|div|em|font|h[1-6]|head|hr|html|i|img|li|meta|ol|p|pre|small|span|strong|sub|sup|table|td|th|title|tr|tt|u|ul)(?:\s[^<>]*)?/?>",
        )
        .expect("html regex")
    });
    let url = URL.get_or_init(|| {
        Regex::new(
            r#"(?i)\b(?:https?|ftp)://[^\s"'<>]+|\bwww\.[a-z0-9-]+(?:\.[a-z0-9-]+)+[^\s"'<>]*"#,
        )
        .expect("url regex")
    });
    let email = EMAIL.get_or_init(|| {
        Regex::new(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}")
            .expect("email regex")
    });
    let body = strip_banner(text);
    let body = html.replace_all(body, "");
    let body = url.replace_all(&body, "");
    email.replace_all(&body, "").into_owned()
}

/// Drops leading whitespace and any comments before the first code token.
fn strip_banner(text: &str) -> &str {
    let mut rest = text;
    loop {
        let t = rest.trim_start();
        if let Some(after) = t.strip_prefix("/*") {
            match after.find("*/") {
                Some(end) => rest = &after[end + 2..],
                None => return "",
            }
        } else if let Some(after) = t.strip_prefix("//") {
            rest = after.find('\n').map_or("", |nl| &after[nl + 1..]);
        } else {
            return t;
        }
    }
}

fn aggregated_pass(text: &str) -> String {
    let unified = text.replace("\r\n", "\n").replace('\r', "\n");
    let stripped = strip_c_comments(&unified);
    let mut out = String::with_capacity(stripped.len());
    for (i, line) in stripped.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(line.trim_end_matches([' ', '\t', '\x0b', '\x0c']));
    }
    out
}

fn is_ident(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Removes `//` and `/* */` comments, leaving string and character literals
/// intact. A comment that sits between two identifier characters becomes a
/// single space so adjacent tokens do not fuse.
pub fn strip_c_comments(src: &str) -> String {
    let chars: Vec<char> = src.chars().collect();
    let mut out = String::with_capacity(src.len());
    let mut i = 0;
    let n = chars.len();
    while i < n {
        let c = chars[i];
        match c {
            '"' | '\'' => {
                out.push(c);
                i += 1;
                while i < n {
                    let d = chars[i];
                    out.push(d);
                    i += 1;
                    if d == '\\' && i < n {
                        out.push(chars[i]);
                        i += 1;
                    } else if d == c || d == '\n' {
                        break;
                    }
                }
            }
            '/' if i + 1 < n && (chars[i + 1] == '/' || chars[i + 1] == '*') => {
                let block = chars[i + 1] == '*';
                let start = i;
                i += 2;
                if block {
                    while i < n && !(chars[i] == '*' && i + 1 < n && chars[i + 1] == '/') {
                        i += 1;
                    }
                    i = (i + 2).min(n);
                } else {
                    while i < n && chars[i] != '\n' {
                        // Backslash-newline continues a line comment.
                        if chars[i] == '\\' && i + 1 < n && chars[i + 1] == '\n' {
                            i += 1;
                        }
                        i += 1;
                    }
                }
                let before = out.chars().last();
                let after = chars.get(i).copied();
                if is_ident(before) && is_ident(after) && start > 0 {
                    out.push(' ');
                }
            }
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(src: &str, p: CleanProfile) -> String {
        clean(&CodeSample::new("x", src, 0), p).source_text
    }

    #[test]
    fn aggregated_examples() {
        assert_eq!(
            run("int x; // note\n", CleanProfile::Aggregated),
            "int x;\n"
        );
        assert_eq!(
            run("/* a */ int /* b */ y;", CleanProfile::Aggregated),
            " int  y;"
        );
        let lit = "char*s=\"/*not a comment*/\";";
        assert_eq!(run(lit, CleanProfile::Aggregated), lit);
        assert_eq!(run("a\r\nb  \r\n", CleanProfile::Aggregated), "a\nb\n");
        assert_eq!(run("int/**/x;", CleanProfile::Aggregated), "int x;");
        assert_eq!(run("c='\\'';//x", CleanProfile::Aggregated), "c='\\'';");
    }

    #[test]
    fn formai_scrubs_noise() {
        let src = "/* banner\n by GPT */\n// more\n#include <stdio.h>\nint main(){ /* keep */ puts(\"<b>hi</b> see https://x.org/a or me@mail.com\"); }";
        let out = run(src, CleanProfile::Formai);
        assert!(out.starts_with("#include <stdio.h>"));
        assert!(out.contains("/* keep */"));
        assert!(!out.contains("<b>") && !out.contains("https") && !out.contains('@'));
    }

    #[test]
    fn word_count_and_flag() {
        let s = clean(
            &CodeSample::new("x", "int a; // b c d", 0),
            CleanProfile::Aggregated,
        );
        assert!(s.cleaned);
        assert_eq!(s.word_count, 2);
    }
}
