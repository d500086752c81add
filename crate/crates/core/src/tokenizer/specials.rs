use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Domain token list bundled with the crate (C punctuators, keywords and
/// preprocessor directives, libc/POSIX/MSVC API names).
pub const BUILTIN_DOMAIN_TOKENS: &str = include_str!("../../data/special_tokens.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TokenCategory {
    Control,
    Punctuation,
    Keyword,
    ApiCall,
    Byte,
    Merge,
}

impl TokenCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenCategory::Control => "control",
            TokenCategory::Punctuation => "punctuation",
            TokenCategory::Keyword => "keyword",
            TokenCategory::ApiCall => "api_call",
            TokenCategory::Byte => "byte",
            TokenCategory::Merge => "merge",
        }
    }

    pub fn is_domain(self) -> bool {
        matches!(
            self,
            TokenCategory::Punctuation | TokenCategory::Keyword | TokenCategory::ApiCall
        )
    }
}

impl fmt::Display for TokenCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TokenCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "control" => TokenCategory::Control,
            "punctuation" => TokenCategory::Punctuation,
            "keyword" => TokenCategory::Keyword,
            "api_call" => TokenCategory::ApiCall,
            "byte" => TokenCategory::Byte,
            "merge" => TokenCategory::Merge,
            other => return Err(format!("unknown token category `{other}`")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecialToken {
    pub text: String,
    pub category: TokenCategory,
}

/// Control tokens plus the atomic domain tokens that are matched in source
/// text before byte-pair encoding.
///
/// Control tokens occupy the lowest ids in registry order; `pad`, `bos`,
/// `eos` and `unk` are indices into that list and may coincide.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecialRegistry {
    pub control: Vec<String>,
    pub pad: usize,
    pub bos: usize,
    pub eos: usize,
    pub unk: usize,
    pub domain: Vec<SpecialToken>,
}

impl SpecialRegistry {
    /// Twelve control slots with pad = bos = eos = 11, followed by `<|unk|>`.
    pub fn default_control() -> Vec<String> {
        let mut control: Vec<String> = (0..11).map(|i| format!("<|ctrl{i}|>")).collect();
        control.push("<|endoftext|>".to_string());
        control.push("<|unk|>".to_string());
        control
    }

    /// Control tokens only; no domain tokens are matched.
    pub fn control_only() -> Self {
        SpecialRegistry {
            control: Self::default_control(),
            pad: 11,
            bos: 11,
            eos: 11,
            unk: 12,
            domain: Vec::new(),
        }
    }

    /// Default control tokens plus the bundled 589-entry domain list.
    pub fn builtin() -> Self {
        let domain = parse_special_list(BUILTIN_DOMAIN_TOKENS)
            .expect("bundled domain token list is well formed");
        SpecialRegistry {
            domain,
            ..Self::control_only()
        }
    }

    pub fn with_domain(domain: Vec<SpecialToken>) -> Self {
        SpecialRegistry {
            domain,
            ..Self::control_only()
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let domain = parse_special_list(&text).map_err(|reason| Error::format(path, reason))?;
        Ok(Self::with_domain(domain))
    }

    pub fn len(&self) -> usize {
        self.control.len() + self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, category: TokenCategory) -> usize {
        self.domain
            .iter()
            .filter(|t| t.category == category)
            .count()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, idx) in [
            ("pad", self.pad),
            ("bos", self.bos),
            ("eos", self.eos),
            ("unk", self.unk),
        ] {
            if idx >= self.control.len() {
                return Err(Error::config(
                    format!("{name}_id"),
                    format!(
                        "{idx} is not a control token index (have {})",
                        self.control.len()
                    ),
                ));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for text in self
            .control
            .iter()
            .chain(self.domain.iter().map(|t| &t.text))
        {
            if text.is_empty() {
                return Err(Error::Parameter("special tokens must be non-empty".into()));
            }
            if !seen.insert(text.as_str()) {
                return Err(Error::Parameter(format!(
                    "special token `{text}` registered twice"
                )));
            }
        }
        if let Some(t) = self.domain.iter().find(|t| !t.category.is_domain()) {
            return Err(Error::Parameter(format!(
                "domain token `{}` has non-domain category {}",
                t.text, t.category
            )));
        }
        Ok(())
    }

    /// Serializes the domain list in the `id<TAB>category<TAB>token` format.
    pub fn domain_to_string(&self) -> String {
        let mut out = format!(
            "# domain-tokens v1\tpunctuation={}\tkeyword={}\tapi_call={}\n",
            self.count(TokenCategory::Punctuation),
            self.count(TokenCategory::Keyword),
            self.count(TokenCategory::ApiCall)
        );
        for (i, t) in self.domain.iter().enumerate() {
            out.push_str(&format!(
                "{i}\t{}\t{}\n",
                t.category,
                escape(t.text.as_bytes())
            ));
        }
        out
    }
}

/// Parses a special-token list: `#` comment/header lines, then
/// `id<TAB>category<TAB>token` rows.
pub fn parse_special_list(text: &str) -> Result<Vec<SpecialToken>, String> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.splitn(3, '\t');
        let (Some(_id), Some(cat), Some(tok)) = (cols.next(), cols.next(), cols.next()) else {
            return Err(format!(
                "line {}: expected id, category and token columns",
                lineno + 1
            ));
        };
        let category: TokenCategory = cat
            .parse()
            .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        let bytes = unescape(tok).map_err(|e| format!("line {}: {e}", lineno + 1))?;
        let text = String::from_utf8(bytes)
            .map_err(|_| format!("line {}: token is not UTF-8", lineno + 1))?;
        out.push(SpecialToken { text, category });
    }
    Ok(out)
}

/// Printable ASCII passes through; `\` becomes `\\`; anything else `\xHH`.
pub fn escape(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\\' => s.push_str("\\\\"),
            0x20..=0x7e => s.push(b as char),
            _ => s.push_str(&format!("\\x{b:02x}")),
        }
    }
    s
}

pub fn unescape(s: &str) -> Result<Vec<u8>, String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'\\' {
            out.push(bytes[i]);
            i += 1;
            continue;
        }
        match bytes.get(i + 1) {
            Some(b'\\') => {
                out.push(b'\\');
                i += 2;
            }
            Some(b't') => {
                out.push(b'\t');
                i += 2;
            }
            Some(b'n') => {
                out.push(b'\n');
                i += 2;
            }
            Some(b'x') => {
                let hex = s.get(i + 2..i + 4).ok_or("truncated \\x escape")?;
                out.push(
                    u8::from_str_radix(hex, 16).map_err(|_| format!("bad hex escape `{hex}`"))?,
                );
                i += 4;
            }
            _ => return Err(format!("dangling escape in `{s}`")),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_counts() {
        let reg = SpecialRegistry::builtin();
        assert_eq!(reg.count(TokenCategory::Punctuation), 72);
        assert_eq!(reg.count(TokenCategory::Keyword), 123);
        assert_eq!(reg.count(TokenCategory::ApiCall), 394);
        assert_eq!(reg.domain.len(), 589);
        reg.validate().unwrap();
        assert_eq!(reg.control[reg.pad], "<|endoftext|>");
        assert_eq!((reg.pad, reg.bos, reg.eos), (11, 11, 11));
    }

    #[test]
    fn list_round_trips() {
        let reg = SpecialRegistry::builtin();
        let parsed = parse_special_list(&reg.domain_to_string()).unwrap();
        assert_eq!(parsed, reg.domain);
    }

    #[test]
    fn escape_round_trip() {
        let raw = b"a\\b\t\n\xff ok";
        assert_eq!(unescape(&escape(raw)).unwrap(), raw.to_vec());
        assert!(unescape("\\q").is_err());
    }

    #[test]
    fn category_column_required() {
        assert!(parse_special_list("0\tmalloc\n").is_err());
        assert!(parse_special_list("0\tfunction\tmalloc\n").is_err());
    }
}
