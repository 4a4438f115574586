//! Case-insensitive subword tokenizer. Words are segmented by greedy
//! longest-match against the vocabulary; continuation pieces carry the `##`
//! prefix. Vocabularies built here include every seen character as a piece,
//! so segmentation of in-corpus text never falls back to `[UNK]`.

use std::collections::HashMap;
use std::path::Path;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;

const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < SPECIALS.len() {
            return Err("vocabulary too small for special tokens".into());
        }
        for (i, special) in SPECIALS.iter().enumerate() {
            if tokens[i] != *special {
                return Err(format!("token {i} must be `{special}`, found `{}`", tokens[i]));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), i).is_some() {
                return Err(format!("duplicate token `{token}`"));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Builds a vocabulary from corpus texts: specials, then every seen
    /// character (with its `##` variant), then whole words by descending
    /// frequency up to `max_size`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut word_freq: HashMap<String, usize> = HashMap::new();
        let mut chars: std::collections::BTreeSet<char> = std::collections::BTreeSet::new();
        for text in texts {
            for word in pre_tokenize(text) {
                chars.extend(word.chars());
                *word_freq.entry(word).or_insert(0) += 1;
            }
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        for c in chars {
            for candidate in [c.to_string(), format!("##{c}")] {
                if seen.insert(candidate.clone()) {
                    tokens.push(candidate);
                }
            }
        }
        let mut words: Vec<(String, usize)> = word_freq.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (word, _) in words {
            if tokens.len() >= max_size {
                break;
            }
            if seen.insert(word.clone()) {
                tokens.push(word);
            }
        }
        Vocab {
            index: tokens
                .iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), i))
                .collect(),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.tokens.join("\n"))
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let data = std::fs::read_to_string(path)?;
        Vocab::from_tokens(data.lines().map(str::to_string).collect())
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Greedy longest-match segmentation of one pre-tokenized word.
    fn wordpiece(&self, word: &str, out: &mut Vec<usize>) {
        let boundaries: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain([word.len()])
            .collect();
        let mut start = 0;
        let mut pieces = Vec::new();
        while start < boundaries.len() - 1 {
            let mut matched = None;
            for end in (start + 1..boundaries.len()).rev() {
                let piece = &word[boundaries[start]..boundaries[end]];
                let candidate = if start == 0 {
                    self.id_of(piece)
                } else {
                    self.id_of(&format!("##{piece}"))
                };
                if let Some(id) = candidate {
                    matched = Some((id, end));
                    break;
                }
            }
            match matched {
                Some((id, end)) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    out.push(UNK_ID);
                    return;
                }
            }
        }
        out.extend(pieces);
    }

    /// Encodes text as `[CLS] pieces… [SEP]`, truncated to `max_len` ids.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<usize> {
        let mut ids = vec![CLS_ID];
        for word in pre_tokenize(text) {
            self.wordpiece(&word, &mut ids);
        }
        ids.truncate(max_len.saturating_sub(1).max(1));
        ids.push(SEP_ID);
        ids
    }
}

/// Lowercases and splits on whitespace; ASCII punctuation becomes its own
/// token, everything else stays attached (Devanagari clusters included).
fn pre_tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.to_lowercase().split_whitespace() {
        let mut current = String::new();
        for c in chunk.chars() {
            if c.is_ascii_punctuation() {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::build(
            ["weekend plans cancel", "plans cancel हो गए", "great plans"],
            200,
        )
    }

    #[test]
    fn encode_wraps_with_cls_and_sep() {
        let v = vocab();
        let ids = v.encode("weekend plans", 16);
        assert_eq!(ids[0], CLS_ID);
        assert_eq!(*ids.last().unwrap(), SEP_ID);
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn tokenization_is_case_insensitive() {
        let v = vocab();
        assert_eq!(v.encode("WEEKEND Plans", 16), v.encode("weekend plans", 16));
    }

    #[test]
    fn unseen_words_segment_into_character_pieces() {
        let v = vocab();
        let ids = v.encode("plansweekend", 16);
        // falls back to pieces, never UNK, because all chars are covered
        assert!(!ids.contains(&UNK_ID));
        assert!(ids.len() > 3);
    }

    #[test]
    fn unseen_characters_map_to_unk() {
        let v = vocab();
        let ids = v.encode("日本", 16);
        assert!(ids.contains(&UNK_ID));
    }

    #[test]
    fn punctuation_splits_off() {
        let v = Vocab::build(["hello , world !"], 100);
        let with_punct = v.encode("hello, world!", 16);
        let spaced = v.encode("hello , world !", 16);
        assert_eq!(with_punct, spaced);
    }

    #[test]
    fn truncation_respects_max_len() {
        let v = vocab();
        let ids = v.encode("plans plans plans plans plans plans plans plans", 6);
        assert_eq!(ids.len(), 6);
        assert_eq!(ids[0], CLS_ID);
        assert_eq!(*ids.last().unwrap(), SEP_ID);
    }

    #[test]
    fn vocab_round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = vocab();
        v.save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), v);
    }
}
