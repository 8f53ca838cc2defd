//! Text frontend: lexicon-based G2P over an ARPAbet-style inventory.
//!
//! Words are looked up in a plain-text lexicon; out-of-vocabulary words
//! fall back to per-letter spelling pronunciation. Punctuation and word
//! boundaries become SIL tokens so the duration predictor has a pause
//! token to work with.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SIL: usize = 2;

const CONSONANTS: &[&str] = &[
    "B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG", "P", "R", "S", "SH",
    "T", "TH", "V", "W", "Y", "Z", "ZH",
];
const VOWELS: &[&str] = &[
    "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW",
];

/// Fixed phoneme inventory. Ids 0..=2 are PAD/UNK/SIL; the rest is the
/// stress-marked ARPAbet set in a deterministic order.
#[derive(Debug, Clone)]
pub struct PhonemeInventory {
    symbol_to_id: HashMap<String, usize>,
    id_to_symbol: Vec<String>,
}

impl PhonemeInventory {
    pub fn standard() -> Self {
        let mut id_to_symbol = vec!["<pad>".to_string(), "<unk>".to_string(), "SIL".to_string()];
        for c in CONSONANTS {
            id_to_symbol.push(c.to_string());
        }
        for v in VOWELS {
            for stress in 0..3 {
                id_to_symbol.push(format!("{v}{stress}"));
            }
        }
        let symbol_to_id = id_to_symbol
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        PhonemeInventory {
            symbol_to_id,
            id_to_symbol,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_symbol.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.symbol_to_id.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.id_to_symbol.get(id).map(|s| s.as_str())
    }

    pub fn ids_to_symbols(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.id_to_symbol[i].clone())
            .collect()
    }
}

/// One entry per line: `WORD PH1 PH2 ...`, uppercase, `#` comments.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: HashMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap().to_uppercase();
            let phones: Vec<String> = parts.map(|p| p.to_string()).collect();
            if phones.is_empty() {
                return Err(Error::Data(format!(
                    "lexicon line {}: entry '{word}' has no phonemes",
                    lineno + 1
                )));
            }
            entries.insert(word, phones);
        }
        Ok(Lexicon { entries })
    }

    pub fn bundled() -> Self {
        Self::parse(include_str!("lexicon.txt")).expect("bundled lexicon is valid")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn lookup(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_uppercase()).map(|v| v.as_slice())
    }
}

/// Token ids with a 0/1 mask; real tokens always precede PAD tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeSequence {
    pub ids: Vec<usize>,
    pub mask: Vec<f32>,
    pub text: String,
}

impl PhonemeSequence {
    pub fn from_ids(ids: Vec<usize>, text: impl Into<String>) -> Self {
        let mask = ids.iter().map(|&i| if i == PAD { 0.0 } else { 1.0 }).collect();
        PhonemeSequence {
            ids,
            mask,
            text: text.into(),
        }
    }

    pub fn real_len(&self) -> usize {
        self.ids.iter().take_while(|&&i| i != PAD).count()
    }
}

fn spell_out(word: &str, lexicon: &Lexicon, inventory: &PhonemeInventory) -> Vec<usize> {
    word.chars()
        .filter(|c| c.is_ascii_alphabetic())
        .flat_map(|c| {
            let letter = c.to_uppercase().to_string();
            match lexicon.lookup(&letter) {
                Some(phones) => phones
                    .iter()
                    .map(|p| inventory.id(p).unwrap_or(UNK))
                    .collect(),
                None => vec![UNK],
            }
        })
        .collect()
}

/// Convert text to a phoneme sequence. Inter-word boundaries and
/// punctuation become SIL; OOV words are spelled letter by letter.
pub fn g2p(text: &str, lexicon: &Lexicon, inventory: &PhonemeInventory) -> Result<PhonemeSequence> {
    let lower = text.to_lowercase();
    // tokenize: runs of letters/apostrophes are words, punctuation is a pause
    #[derive(PartialEq)]
    enum Tok {
        Word(String),
        Pause,
    }
    let mut toks: Vec<Tok> = Vec::new();
    let mut cur = String::new();
    for c in lower.chars() {
        if c.is_ascii_alphabetic() || c == '\'' {
            cur.push(c);
        } else {
            if !cur.is_empty() {
                toks.push(Tok::Word(std::mem::take(&mut cur)));
            }
            if ".,!?;:".contains(c) {
                toks.push(Tok::Pause);
            }
        }
    }
    if !cur.is_empty() {
        toks.push(Tok::Word(cur));
    }

    let mut ids: Vec<usize> = Vec::new();
    let mut last_was_word = false;
    for tok in &toks {
        match tok {
            Tok::Word(w) => {
                if last_was_word {
                    ids.push(SIL);
                }
                let phones = match lexicon.lookup(w) {
                    Some(phones) => phones
                        .iter()
                        .map(|p| inventory.id(p).unwrap_or(UNK))
                        .collect(),
                    None => spell_out(w, lexicon, inventory),
                };
                ids.extend(phones);
                last_was_word = true;
            }
            Tok::Pause => {
                if ids.last() != Some(&SIL) && !ids.is_empty() {
                    ids.push(SIL);
                }
                last_was_word = false;
            }
        }
    }
    if ids.is_empty() || ids.iter().all(|&i| i == SIL) {
        return Err(Error::Data("no speakable content".to_string()));
    }
    Ok(PhonemeSequence::from_ids(ids, text))
}

/// Pad every sequence to the longest length in the batch.
pub fn pad_batch(sequences: &[PhonemeSequence]) -> Vec<PhonemeSequence> {
    let max_len = sequences.iter().map(|s| s.ids.len()).max().unwrap_or(0);
    sequences
        .iter()
        .map(|s| {
            let mut ids = s.ids.clone();
            ids.resize(max_len, PAD);
            PhonemeSequence::from_ids(ids, s.text.clone())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Lexicon, PhonemeInventory) {
        (Lexicon::bundled(), PhonemeInventory::standard())
    }

    #[test]
    fn cat_matches_lexicon() {
        let (lex, inv) = setup();
        let seq = g2p("cat", &lex, &inv).unwrap();
        let expected: Vec<usize> = ["K", "AE1", "T"]
            .iter()
            .map(|p| inv.id(p).unwrap())
            .collect();
        assert_eq!(seq.ids, expected);
    }

    #[test]
    fn repeated_word_gets_one_sil_between() {
        let (lex, inv) = setup();
        let cat = g2p("cat", &lex, &inv).unwrap();
        let double = g2p("cat cat", &lex, &inv).unwrap();
        let mut expected = cat.ids.clone();
        expected.push(SIL);
        expected.extend(&cat.ids);
        assert_eq!(double.ids, expected);
    }

    #[test]
    fn empty_text_is_an_error() {
        let (lex, inv) = setup();
        assert!(g2p("", &lex, &inv).is_err());
        assert!(g2p("  ... !!", &lex, &inv).is_err());
        assert!(g2p("123 456", &lex, &inv).is_err());
    }

    #[test]
    fn oov_spells_out() {
        let (lex, inv) = setup();
        let seq = g2p("zq", &lex, &inv).unwrap();
        // Z IY1 + K Y UW1
        let expected: Vec<usize> = ["Z", "IY1", "K", "Y", "UW1"]
            .iter()
            .map(|p| inv.id(p).unwrap())
            .collect();
        assert_eq!(seq.ids, expected);
    }

    #[test]
    fn punctuation_becomes_sil() {
        let (lex, inv) = setup();
        let seq = g2p("cat, cat", &lex, &inv).unwrap();
        let sil_count = seq.ids.iter().filter(|&&i| i == SIL).count();
        assert_eq!(sil_count, 1, "comma and word boundary collapse to one SIL");
    }

    #[test]
    fn pad_batch_contract() {
        let (lex, inv) = setup();
        let a = g2p("cat", &lex, &inv).unwrap(); // 3 tokens
        let b = g2p("cat cat", &lex, &inv).unwrap(); // 7 tokens
        let padded = pad_batch(&[a.clone(), b.clone()]);
        assert_eq!(padded[0].ids.len(), 7);
        assert_eq!(padded[1].ids.len(), 7);
        assert_eq!(&padded[0].ids[..3], &a.ids[..]);
        assert_eq!(&padded[0].mask[..3], &[1.0, 1.0, 1.0]);
        assert_eq!(&padded[0].mask[3..], &[0.0; 4]);
        assert_eq!(padded[1], PhonemeSequence::from_ids(b.ids.clone(), "cat cat"));
    }

    #[test]
    fn round_trip_ids_symbols() {
        let (lex, inv) = setup();
        let seq = g2p("the quick brown fox", &lex, &inv).unwrap();
        let symbols = inv.ids_to_symbols(&seq.ids);
        let back: Vec<usize> = symbols.iter().map(|s| inv.id(s).unwrap()).collect();
        assert_eq!(back, seq.ids);
    }

    #[test]
    fn inventory_reserved_ids() {
        let inv = PhonemeInventory::standard();
        assert_eq!(inv.symbol(PAD), Some("<pad>"));
        assert_eq!(inv.symbol(UNK), Some("<unk>"));
        assert_eq!(inv.symbol(SIL), Some("SIL"));
        assert_eq!(inv.id("SIL"), Some(SIL));
        // bijective over non-reserved symbols
        for id in 3..inv.len() {
            let sym = inv.symbol(id).unwrap();
            assert_eq!(inv.id(sym), Some(id));
        }
    }
}
