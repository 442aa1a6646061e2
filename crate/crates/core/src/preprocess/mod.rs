//! Text cleaning: Unicode normalization, tokenization, stopword removal,
//! noise stripping and lowercasing, followed by vocabulary encoding.
//!
//! [`Cleaner::clean`] runs normalization, then noise stripping (when enabled
//! for the field), tokenization, stopword removal and lowercasing. Noise is
//! stripped on raw text so that URLs and e-mails are removed as whole units
//! before the tokenizer splits punctuation; the result is idempotent.

mod vocab;

pub use vocab::{build_vocab, encode, EncodedDocument, Vocabulary, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerMode {
    /// Whitespace split; leading and trailing punctuation runs become their own tokens.
    #[default]
    Whitespace,
    /// Input already word-segmented (compounds joined by `_`); only trailing
    /// punctuation is separated.
    ExternalPretokenized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScope {
    #[default]
    DescriptionOnly,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Comment,
    Description,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub stopword_path: Option<PathBuf>,
    pub tokenizer: TokenizerMode,
    pub strip_noise_on: NoiseScope,
    pub max_len: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            stopword_path: None,
            tokenizer: TokenizerMode::Whitespace,
            strip_noise_on: NoiseScope::DescriptionOnly,
            max_len: 100,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PreprocessConfig = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Canonical composition (NFC).
pub fn normalize_unicode(text: &str) -> String {
    text.nfc().collect()
}

pub fn lowercase(text: &str) -> String {
    text.to_lowercase()
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '…' | '“' | '”' | '‘' | '’' | '«' | '»' | '–' | '—' | '¡' | '¿' | '·'
        )
}

pub fn tokenize(text: &str, mode: TokenizerMode) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let (lead, rest) = match mode {
            TokenizerMode::Whitespace => split_leading(chunk, is_punct),
            TokenizerMode::ExternalPretokenized => ("", chunk),
        };
        let trailing_punct = |c: char| match mode {
            TokenizerMode::Whitespace => is_punct(c),
            TokenizerMode::ExternalPretokenized => c != '_' && is_punct(c),
        };
        let (core, tail) = split_trailing(rest, trailing_punct);
        for piece in [lead, core, tail] {
            if !piece.is_empty() {
                out.push(piece.to_string());
            }
        }
    }
    out
}

fn split_leading(s: &str, pred: impl Fn(char) -> bool) -> (&str, &str) {
    let idx = s.char_indices().find(|&(_, c)| !pred(c)).map_or(s.len(), |(i, _)| i);
    // An all-punctuation chunk stays a single token.
    if idx == s.len() {
        return ("", s);
    }
    s.split_at(idx)
}

fn split_trailing(s: &str, pred: impl Fn(char) -> bool) -> (&str, &str) {
    let idx = s
        .char_indices()
        .rev()
        .find(|&(_, c)| !pred(c))
        .map_or(0, |(i, c)| i + c.len_utf8());
    if idx == 0 {
        return (s, "");
    }
    s.split_at(idx)
}

/// Order-preserving filter; tokens are compared lowercased.
pub fn remove_stopwords(tokens: Vec<String>, stoplist: &HashSet<String>) -> Vec<String> {
    if stoplist.is_empty() {
        return tokens;
    }
    tokens
        .into_iter()
        .filter(|t| !stoplist.contains(&lowercase(t)))
        .collect()
}

/// Reads a stopword file: one entry per line, normalized and lowercased.
/// Multi-word entries are joined with `_` to match segmented compounds.
pub fn load_stoplist(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read stopword file {}: {e}", path.display())))?;
    Ok(parse_stoplist(&text))
}

/// Parses stoplist text in the [`load_stoplist`] format.
pub fn parse_stoplist(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| lowercase(&normalize_unicode(l.trim())))
        .filter(|l| !l.is_empty())
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join("_"))
        .collect()
}

struct NoisePatterns {
    url: Regex,
    email: Regex,
    tag: Regex,
}

fn noise_patterns() -> &'static NoisePatterns {
    static PATTERNS: OnceLock<NoisePatterns> = OnceLock::new();
    PATTERNS.get_or_init(|| NoisePatterns {
        // Anchored on any non-alphanumeric so a later punctuation split cannot expose a new URL.
        url: Regex::new(r"(?i)(^|[^\p{L}\p{N}])(?:(?:https?|ftp)://|www\.)\S+").expect("url regex"),
        email: Regex::new(r"(?i)[\w.+-]+@[\w-]+(?:\.[\w-]+)+").expect("email regex"),
        tag: Regex::new(r"[@#][\w]+").expect("tag regex"),
    })
}

/// Emoji code points. Approximate inventory: pictographs, dingbats,
/// regional indicators, selectors and joiners used in emoji sequences.
pub fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF
        | 0x2600..=0x27BF
        | 0x2B00..=0x2BFF
        | 0x231A..=0x231B
        | 0x23E9..=0x23F3
        | 0x23F8..=0x23FA
        | 0x2190..=0x21FF
        | 0x3030 | 0x303D | 0x3297 | 0x3299
        | 0x200D
        | 0x20E3
        | 0xFE00..=0xFE0F
        | 0xE0020..=0xE007F)
}

/// Removes emoji, URLs, e-mail addresses and `@`/`#` tags. Each removal
/// leaves a space so neighbouring fragments cannot fuse into a new match.
pub fn strip_noise(text: &str) -> String {
    let p = noise_patterns();
    let text: String = text.chars().map(|c| if is_emoji(c) { ' ' } else { c }).collect();
    let text = p.url.replace_all(&text, "$1 ");
    let text = p.email.replace_all(&text, " ");
    p.tag.replace_all(&text, " ").into_owned()
}

/// The configured cleaning pipeline with its stoplist loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Cleaner {
    config: PreprocessConfig,
    stoplist: HashSet<String>,
}

impl Cleaner {
    pub fn new(config: PreprocessConfig) -> Result<Self> {
        config.validate()?;
        let stoplist = match &config.stopword_path {
            Some(p) => load_stoplist(p)?,
            None => HashSet::new(),
        };
        Ok(Cleaner { config, stoplist })
    }

    pub fn with_stoplist(config: PreprocessConfig, stoplist: HashSet<String>) -> Result<Self> {
        config.validate()?;
        Ok(Cleaner { config, stoplist })
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.config
    }

    pub fn stoplist(&self) -> &HashSet<String> {
        &self.stoplist
    }

    /// Sorted stoplist, for serialization.
    pub fn stoplist_sorted(&self) -> Vec<String> {
        let mut v: Vec<String> = self.stoplist.iter().cloned().collect();
        v.sort();
        v
    }

    fn strips(&self, field: Field) -> bool {
        field == Field::Description || self.config.strip_noise_on == NoiseScope::Both
    }

    pub fn clean(&self, text: &str, field: Field) -> Vec<String> {
        let mut text = normalize_unicode(text);
        if self.strips(field) {
            text = strip_noise(&text);
        }
        let tokens = tokenize(&text, self.config.tokenizer);
        remove_stopwords(tokens, &self.stoplist)
            .into_iter()
            .map(|t| normalize_unicode(&lowercase(&t)))
            .collect()
    }

    /// Cleaned tokens joined by single spaces.
    pub fn clean_to_string(&self, text: &str, field: Field) -> String {
        self.clean(text, field).join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nfc_composes() {
        assert_eq!(normalize_unicode("e\u{301}"), "\u{e9}");
        assert_eq!(normalize_unicode("plain ascii"), "plain ascii");
        // "ệ" decomposed as e + dot below + circumflex vs. precomposed.
        let decomposed = "hi\u{65}\u{323}\u{302}u";
        let composed = "hi\u{1ec7}u";
        assert_ne!(decomposed, composed);
        let a: Vec<char> = normalize_unicode(decomposed).chars().collect();
        let b: Vec<char> = normalize_unicode(composed).chars().collect();
        assert_eq!(a, b);
        assert_eq!(a, vec!['h', 'i', '\u{1ec7}', 'u']);
    }

    #[test]
    fn tokenize_modes() {
        assert_eq!(
            tokenize("giao hàng nhanh", TokenizerMode::Whitespace),
            vec!["giao", "hàng", "nhanh"]
        );
        assert!(tokenize("", TokenizerMode::Whitespace).is_empty());
        assert_eq!(
            tokenize("giao_hàng nhanh!", TokenizerMode::ExternalPretokenized),
            vec!["giao_hàng", "nhanh", "!"]
        );
        assert_eq!(
            tokenize("(tốt) quá!!", TokenizerMode::Whitespace),
            vec!["(", "tốt", ")", "quá", "!!"]
        );
        assert_eq!(tokenize("...", TokenizerMode::Whitespace), vec!["..."]);
    }

    #[test]
    fn stopwords() {
        let stop: HashSet<String> = ["a".to_string()].into_iter().collect();
        let toks = vec!["a".to_string(), "b".to_string(), "A".to_string()];
        assert_eq!(remove_stopwords(toks.clone(), &stop), vec!["b"]);
        assert_eq!(remove_stopwords(toks.clone(), &HashSet::new()), toks);
    }

    #[test]
    fn missing_stoplist_is_config_error() {
        let cfg = PreprocessConfig {
            stopword_path: Some("/nonexistent/stop.txt".into()),
            ..Default::default()
        };
        assert!(matches!(Cleaner::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn noise() {
        let words = |s: &str| strip_noise(s).split_whitespace().map(str::to_string).collect::<Vec<_>>();
        assert_eq!(words("xem https://a.b/c ngay"), ["xem", "ngay"]);
        assert_eq!(strip_noise("no noise here"), "no noise here");
        assert_eq!(
            words("liên hệ shop@mail.vn hoặc @shopvn #sale 😍 www.shop.vn"),
            ["liên", "hệ", "hoặc"]
        );
        assert_eq!(words("awww.x"), ["awww.x"]);
    }

    #[test]
    fn removals_do_not_fuse_into_new_noise() {
        let c = Cleaner::new(PreprocessConfig {
            strip_noise_on: NoiseScope::Both,
            ..Default::default()
        })
        .unwrap();
        for text in ["#😀a", "www#x.a", "_WWw.w", "(www.abc)"] {
            let once = c.clean_to_string(text, Field::Comment);
            assert_eq!(c.clean_to_string(&once, Field::Comment), once, "{text}");
        }
    }

    #[test]
    fn lowercasing() {
        assert_eq!(lowercase("ABC"), "abc");
        assert_eq!(lowercase("đÃ"), "đã");
        assert_eq!(lowercase("ĐIỆN Thoại"), "điện thoại");
    }

    #[test]
    fn comments_keep_emoji_by_default() {
        let c = Cleaner::new(PreprocessConfig::default()).unwrap();
        assert_eq!(c.clean("Đẹp 😍 lắm", Field::Comment), vec!["đẹp", "😍", "lắm"]);
        assert_eq!(c.clean("Đẹp 😍 lắm", Field::Description), vec!["đẹp", "lắm"]);
    }
}
