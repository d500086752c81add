use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use super::CodeSample;
use crate::tokenizer::{SpecialRegistry, TokenCategory};

const LIBRARY_NAMES: &[&str] = &[
    "main",
    "NULL",
    "EOF",
    "FILE",
    "DIR",
    "bool",
    "true",
    "false",
    "stdin",
    "stdout",
    "stderr",
    "errno",
    "va_list",
    "BUFSIZ",
    "RAND_MAX",
    "CHAR_BIT",
    "CHAR_MAX",
    "CHAR_MIN",
    "INT_MAX",
    "INT_MIN",
    "UINT_MAX",
    "LONG_MAX",
    "LONG_MIN",
    "ULONG_MAX",
    "LLONG_MAX",
    "LLONG_MIN",
    "SIZE_MAX",
    "SSIZE_MAX",
    "PATH_MAX",
    "EXIT_SUCCESS",
    "EXIT_FAILURE",
    "SEEK_SET",
    "SEEK_CUR",
    "SEEK_END",
    "std",
    "string",
    "vector",
    "cout",
    "cin",
    "cerr",
    "endl",
];

fn keep_set() -> &'static HashSet<String> {
    static KEEP: OnceLock<HashSet<String>> = OnceLock::new();
    KEEP.get_or_init(|| {
        let reg = SpecialRegistry::builtin();
        reg.domain
            .iter()
            .filter(|t| matches!(t.category, TokenCategory::Keyword | TokenCategory::ApiCall))
            .map(|t| t.text.clone())
            .chain(LIBRARY_NAMES.iter().map(|s| s.to_string()))
            .collect()
    })
}

fn is_kept(name: &str) -> bool {
    keep_set().contains(name) || name.ends_with("_t")
}

#[derive(Debug)]
enum Tok {
    Ident(usize, usize),
    Punct(char),
}

/// Renames user-defined functions and variables to `FUNC1`, `VAR1`, …
/// in order of first appearance. Keywords, registered API calls, common
/// library names, literals, comments, preprocessor lines, and tags after
/// `struct`/`union`/`enum`/`goto` stay as they are. Input that does not lex
/// cleanly is returned unchanged with a diagnostic.
pub fn obfuscate_identifiers(sample: &CodeSample) -> (CodeSample, Option<String>) {
    match rename(&sample.source_text) {
        Ok(text) => {
            let mut out = sample.clone();
            out.source_text = text;
            out.refresh_word_count();
            (out, None)
        }
        Err(why) => (
            sample.clone(),
            Some(format!("sample {}: {why}; left unchanged", sample.id)),
        ),
    }
}

fn lex(src: &[u8]) -> Result<Vec<Tok>, String> {
    let n = src.len();
    let mut toks = Vec::new();
    let mut i = 0;
    let mut line_start = true;
    let mut depth: Vec<u8> = Vec::new();
    while i < n {
        let c = src[i];
        if c == b'\n' {
            line_start = true;
            i += 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'#' && line_start {
            while i < n && src[i] != b'\n' {
                if src[i] == b'\\' && i + 1 < n && src[i + 1] == b'\n' {
                    i += 1;
                }
                i += 1;
            }
            continue;
        }
        line_start = false;
        if c == b'/' && i + 1 < n && src[i + 1] == b'/' {
            while i < n && src[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == b'/' && i + 1 < n && src[i + 1] == b'*' {
            let end = src[i + 2..]
                .windows(2)
                .position(|w| w == b"*/")
                .ok_or("unterminated block comment")?;
            i += 2 + end + 2;
            continue;
        }
        if c == b'"' || c == b'\'' {
            i += 1;
            loop {
                match src.get(i) {
                    None | Some(b'\n') => return Err("unterminated literal".into()),
                    Some(b'\\') => i += 2,
                    Some(&d) if d == c => {
                        i += 1;
                        break;
                    }
                    _ => i += 1,
                }
            }
            toks.push(Tok::Punct('"'));
            continue;
        }
        if c.is_ascii_digit() || (c == b'.' && src.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < n && (src[i].is_ascii_alphanumeric() || src[i] == b'.' || src[i] == b'_') {
                if matches!(src[i], b'e' | b'E' | b'p' | b'P')
                    && matches!(src.get(i + 1), Some(b'+' | b'-'))
                {
                    i += 1;
                }
                i += 1;
            }
            toks.push(Tok::Punct('0'));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < n && (src[i].is_ascii_alphanumeric() || src[i] == b'_') {
                i += 1;
            }
            // Encoding prefixes such as L"..." belong to the literal.
            if matches!(src.get(i), Some(b'"' | b'\''))
                && matches!(&src[start..i], b"L" | b"u" | b"U" | b"u8" | b"R")
            {
                continue;
            }
            toks.push(Tok::Ident(start, i));
            continue;
        }
        if !c.is_ascii() {
            return Err("non-ASCII character outside literals".into());
        }
        match c {
            b'(' | b'[' | b'{' => depth.push(c),
            b')' | b']' | b'}' => {
                let open = match c {
                    b')' => b'(',
                    b']' => b'[',
                    _ => b'{',
                };
                if depth.pop() != Some(open) {
                    return Err("unbalanced brackets".into());
                }
            }
            _ => {}
        }
        toks.push(Tok::Punct(c as char));
        i += 1;
    }
    if !depth.is_empty() {
        return Err("unbalanced brackets".into());
    }
    Ok(toks)
}

fn rename(text: &str) -> Result<String, String> {
    let src = text.as_bytes();
    let toks = lex(src)?;
    let mut names: HashMap<&str, String> = HashMap::new();
    let (mut funcs, mut vars) = (0, 0);
    let mut edits: Vec<(usize, usize, String)> = Vec::new();
    for (k, t) in toks.iter().enumerate() {
        let Tok::Ident(s, e) = *t else { continue };
        let name = &text[s..e];
        if is_kept(name) {
            continue;
        }
        if let Some(Tok::Ident(ps, pe)) = k.checked_sub(1).map(|p| &toks[p]) {
            if matches!(
                &text[*ps..*pe],
                "struct" | "union" | "enum" | "goto" | "class"
            ) {
                continue;
            }
        }
        // Label definitions (`name:` not part of `?:` or `::`).
        let next = toks.get(k + 1);
        if matches!(next, Some(Tok::Punct(':')))
            && !matches!(toks.get(k + 2), Some(Tok::Punct(':')))
            && matches!(
                k.checked_sub(1).map(|p| &toks[p]),
                None | Some(Tok::Punct(';' | '{' | '}'))
            )
        {
            continue;
        }
        let placeholder = names.entry(name).or_insert_with(|| {
            if matches!(next, Some(Tok::Punct('('))) {
                funcs += 1;
                format!("FUNC{funcs}")
            } else {
                vars += 1;
                format!("VAR{vars}")
            }
        });
        edits.push((s, e, placeholder.clone()));
    }
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (s, e, rep) in edits {
        out.push_str(&text[last..s]);
        out.push_str(&rep);
        last = e;
    }
    out.push_str(&text[last..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ob(src: &str) -> (String, bool) {
        let (s, flag) = obfuscate_identifiers(&CodeSample::new("t", src, 0));
        (s.source_text, flag.is_some())
    }

    #[test]
    fn examples() {
        assert_eq!(
            ob("int add(int a,int b){return a+b;}"),
            (
                "int FUNC1(int VAR1,int VAR2){return VAR1+VAR2;}".into(),
                false
            )
        );
        assert_eq!(ob("printf(x);"), ("printf(VAR1);".into(), false));
        assert_eq!(ob("return 0;"), ("return 0;".into(), false));
    }

    #[test]
    fn literals_and_directives_survive() {
        let (out, _) =
            ob("#include <stdio.h>\nvoid go(){ char *s = \"name\"; size_t n = strlen(s); }");
        assert_eq!(out, "#include <stdio.h>\nvoid FUNC1(){ char *VAR1 = \"name\"; size_t VAR2 = strlen(VAR1); }");
    }

    #[test]
    fn struct_tags_kept() {
        let (out, _) = ob("struct node *head; head->next = 0;");
        assert_eq!(out, "struct node *VAR1; VAR1->VAR2 = 0;");
    }

    #[test]
    fn unparseable_is_flagged() {
        let (out, flagged) = ob("int f( { \"oops");
        assert!(flagged);
        assert_eq!(out, "int f( { \"oops");
    }
}
