use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{predict, Model};
use crate::tokenizer::Vocabulary;

/// One unit of scan input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snippet {
    /// File name (or `-`), with `#k` appended when the file was split.
    pub source: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub source: String,
    pub class: usize,
    pub probabilities: Vec<f64>,
    pub millis: f64,
}

/// Splits C source into top-level function definitions with a brace-depth
/// scan that skips comments, string/char literals and preprocessor lines.
/// A top-level `{ ... }` block counts as a function when the text before
/// it contains `(`. Falls back to the whole text when nothing matches;
/// blank input yields nothing.
pub fn split_functions(text: &str) -> Vec<String> {
    if text.trim().is_empty() {
        return Vec::new();
    }
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut chunk_start = 0usize;
    let mut open_at = 0usize;
    let mut line_start = true;
    let mut i = 0usize;
    while i < b.len() {
        let c = b[i];
        match c {
            b'\n' => {
                line_start = true;
                i += 1;
                continue;
            }
            b' ' | b'\t' | b'\r' => {
                i += 1;
                continue;
            }
            b'#' if line_start && depth == 0 => {
                while i < b.len() && b[i] != b'\n' {
                    if b[i] == b'\\' && i + 1 < b.len() {
                        i += 1;
                    }
                    i += 1;
                }
                chunk_start = i;
                continue;
            }
            _ => {}
        }
        line_start = false;
        if c == b'/' && b.get(i + 1) == Some(&b'/') {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == b'/' && b.get(i + 1) == Some(&b'*') {
            i += 2;
            while i + 1 < b.len() && !(b[i] == b'*' && b[i + 1] == b'/') {
                i += 1;
            }
            i = (i + 2).min(b.len());
            continue;
        }
        if c == b'"' || c == b'\'' {
            i += 1;
            while i < b.len() && b[i] != c && b[i] != b'\n' {
                if b[i] == b'\\' {
                    i += 1;
                }
                i += 1;
            }
            i += 1;
            continue;
        }
        match c {
            b'{' => {
                if depth == 0 {
                    open_at = i;
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    if text[chunk_start..open_at].contains('(') {
                        out.push(text[chunk_start..=i].trim().to_string());
                    }
                    chunk_start = i + 1;
                }
            }
            b';' if depth == 0 => chunk_start = i + 1,
            _ => {}
        }
        i += 1;
    }
    if out.is_empty() {
        out.push(text.trim().to_string());
    }
    out
}

/// Reads every input (`-` is stdin) into snippets. Unreadable files are
/// reported in the second vector and skipped.
pub fn collect_snippets(
    inputs: &[PathBuf],
    split: bool,
    stdin: &mut dyn Read,
) -> (Vec<Snippet>, Vec<String>) {
    let mut snippets = Vec::new();
    let mut problems = Vec::new();
    let stdin_only = [PathBuf::from("-")];
    let inputs = if inputs.is_empty() {
        &stdin_only[..]
    } else {
        inputs
    };
    for path in inputs {
        let name = path.display().to_string();
        let text = if path == Path::new("-") {
            let mut s = String::new();
            stdin.read_to_string(&mut s).map(|_| s)
        } else {
            std::fs::read(path).map(|b| String::from_utf8_lossy(&b).into_owned())
        };
        let text = match text {
            Ok(t) => t,
            Err(e) => {
                problems.push(format!("{name}: {e}"));
                continue;
            }
        };
        if text.trim().is_empty() {
            continue;
        }
        // Pooling reads the last position, so trailing newlines would change
        // the verdict; snippets are trimmed like split functions are.
        let parts = if split {
            split_functions(&text)
        } else {
            vec![text.trim().to_string()]
        };
        let many = parts.len() > 1;
        for (k, t) in parts.into_iter().enumerate() {
            let source = if many {
                format!("{name}#{}", k + 1)
            } else {
                name.clone()
            };
            snippets.push(Snippet { source, text: t });
        }
    }
    (snippets, problems)
}

fn classify(model: &Model, vocab: &Vocabulary, s: &Snippet, max_len: usize) -> Result<Verdict> {
    let start = Instant::now();
    let seq = vocab.encode(&s.text, max_len)?;
    let seq = seq.repad(seq.true_length.max(1), vocab.pad_id())?;
    let logits = model.logits(std::slice::from_ref(&seq))?;
    let mut p = predict(&logits);
    Ok(Verdict {
        source: s.source.clone(),
        class: p.classes[0],
        probabilities: std::mem::take(&mut p.probabilities[0]),
        millis: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Classifies snippets on up to `jobs` threads; results keep input order.
pub fn scan_snippets(
    model: &Model,
    vocab: &Vocabulary,
    snippets: &[Snippet],
    max_len: usize,
    jobs: usize,
) -> Result<Vec<Verdict>> {
    if snippets.is_empty() {
        return Ok(Vec::new());
    }
    let jobs = jobs.clamp(1, snippets.len());
    let per = snippets.len().div_ceil(jobs);
    let chunks: Vec<Result<Vec<Verdict>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = snippets
            .chunks(per)
            .map(|chunk| {
                scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|s| classify(model, vocab, s, max_len))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Input("scan worker panicked".into())))
            })
            .collect()
    });
    let mut out = Vec::with_capacity(snippets.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_top_level_functions() {
        let src = "#include <stdio.h>\n#define F(x) { x }\nstruct s { int a; };\nint g = 1;\n\
                   /* f() { */\nint f(int a) {\n  if (a) { return \"}\"[0]; }\n  return '{';\n}\n\
                   static void h(void)\n{\n}\n";
        let parts = split_functions(src);
        assert_eq!(parts.len(), 2);
        assert!(parts[0].starts_with("/* f() { */\nint f(int a)") && parts[0].ends_with('}'));
        assert_eq!(parts[1], "static void h(void)\n{\n}");
    }

    #[test]
    fn fallback_and_blank() {
        assert_eq!(split_functions("int x;\n"), vec!["int x;".to_string()]);
        assert!(split_functions(" \n\t").is_empty());
    }
}
