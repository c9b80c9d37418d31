//! Word-level vocabulary shared by the encoder and decoder.
//!
//! Strings are split on single spaces. Two word shapes are split further so
//! that indices stay atomic: an index range `6-9` becomes `6 @-@ 9`, and a
//! trailing colon (`FRAME:`, `motion:`) becomes a separate `@:` piece.
//! Glue pieces attach to their neighbours on decode.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{InputWord, WordRole};
use crate::corpus::Corpus;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const RANGE_GLUE: &str = "@-@";
const COLON_GLUE: &str = "@:";

const RESERVED: [&str; 12] = [
    "<pad>", "<bos>", "<eos>", "<unk>", "*", "|", "=", RANGE_GLUE, COLON_GLUE, "FRAME", "ARGS",
    "for",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub ids: Vec<u32>,
    /// Positions (into `ids`) of pieces belonging to trigger tokens.
    pub trigger_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    pieces: Vec<String>,
}

impl From<VocabFile> for Vocabulary {
    fn from(file: VocabFile) -> Self {
        Vocabulary::from_pieces(file.pieces)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile { pieces: v.pieces }
    }
}

fn is_digits(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

/// Splits one whitespace-free word into vocabulary pieces.
fn word_pieces(word: &str, out: &mut Vec<String>) {
    if let Some((a, b)) = word.split_once('-') {
        if is_digits(a) && is_digits(b) {
            out.push(a.to_owned());
            out.push(RANGE_GLUE.to_owned());
            out.push(b.to_owned());
            return;
        }
    }
    if word.len() > 1 {
        if let Some(stem) = word.strip_suffix(':') {
            word_pieces(stem, out);
            out.push(COLON_GLUE.to_owned());
            return;
        }
    }
    out.push(word.to_owned());
}

pub fn pieces_of(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        word_pieces(word, &mut out);
    }
    out
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its ordered piece list. Duplicate pieces
    /// keep their first id.
    pub fn from_pieces(pieces: Vec<String>) -> Self {
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            index.entry(p.clone()).or_insert(i as u32);
        }
        Self { pieces, index }
    }

    /// Reserved pieces, index tokens `0..max_len`, ontology labels, then
    /// corpus words in order of first appearance.
    pub fn build(corpus: &Corpus) -> Self {
        let mut pieces: Vec<String> = RESERVED.iter().map(|s| (*s).to_owned()).collect();
        let max_len = corpus.max_sentence_len().max(1);
        pieces.extend((0..max_len).map(|i| i.to_string()));
        let mut seen: std::collections::HashSet<String> = pieces.iter().cloned().collect();
        let mut push_text = |text: &str, pieces: &mut Vec<String>| {
            for p in pieces_of(text) {
                if seen.insert(p.clone()) {
                    pieces.push(p);
                }
            }
        };
        for label in corpus.ontology.frames.iter().chain(&corpus.ontology.roles) {
            push_text(label, &mut pieces);
        }
        for ex in &corpus.examples {
            for tok in &ex.tokens {
                push_text(tok, &mut pieces);
            }
            // labels can appear in a corpus only through the ontology, but
            // keep this total for hand-built corpora
            push_text(&ex.frame, &mut pieces);
            for r in &ex.roles {
                push_text(&r.label, &mut pieces);
            }
        }
        Self::from_pieces(pieces)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> &str {
        self.pieces.get(id as usize).map_or("<unk>", String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    fn lookup(&self, piece: &str) -> u32 {
        self.id(piece).unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        pieces_of(text).iter().map(|p| self.lookup(p)).collect()
    }

    /// Encodes model-input words, remembering which pieces belong to the
    /// trigger.
    pub fn encode_words(&self, words: &[InputWord]) -> EncodedInput {
        let mut ids = Vec::with_capacity(words.len() + 4);
        let mut trigger_positions = Vec::new();
        let mut buf = Vec::new();
        for w in words {
            buf.clear();
            word_pieces(&w.text, &mut buf);
            for p in &buf {
                if w.role == WordRole::TriggerToken {
                    trigger_positions.push(ids.len());
                }
                ids.push(self.lookup(p));
            }
        }
        EncodedInput {
            ids,
            trigger_positions,
        }
    }

    /// Inverse of [`encode`](Self::encode). `<bos>`/`<pad>` are skipped and
    /// decoding stops at `<eos>`.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut words: Vec<String> = Vec::new();
        let mut glue_next = false;
        for &id in ids {
            match id {
                EOS => break,
                BOS | PAD => continue,
                _ => {}
            }
            let piece = self.piece(id);
            match piece {
                RANGE_GLUE => {
                    match words.last_mut() {
                        Some(w) => w.push('-'),
                        None => words.push("-".into()),
                    }
                    glue_next = true;
                }
                COLON_GLUE => match words.last_mut() {
                    Some(w) => w.push(':'),
                    None => words.push(":".into()),
                },
                _ => {
                    match words.last_mut() {
                        Some(w) if glue_next => w.push_str(piece),
                        _ => words.push(piece.to_owned()),
                    }
                    glue_next = false;
                }
            }
        }
        words.join(" ")
    }

    /// SHA-256 over the ordered piece list, hex encoded.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.pieces {
            hasher.update(p.as_bytes());
            hasher.update(b"\n");
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{args_input_words, fullgen_encode, multitask_encode};
    use crate::corpus::{AnnotatedExample, Ontology, RoleAssignment, TokenSpan};

    fn corpus() -> Corpus {
        let ex = AnnotatedExample::from_text(
            "The rain dripped down his neck .",
            TokenSpan::single(2),
            "Fluidic motion",
            vec![
                RoleAssignment::new("Fluid", TokenSpan::new(0, 1).unwrap()),
                RoleAssignment::new("Path", TokenSpan::new(3, 5).unwrap()),
            ],
        )
        .unwrap();
        Corpus::new(
            Ontology::new(
                vec!["Fluidic motion".into(), "Self motion".into()],
                vec!["Fluid".into(), "Path".into(), "Self_mover".into()],
            )
            .unwrap(),
            vec![ex],
        )
        .unwrap()
    }

    #[test]
    fn encoder_outputs_round_trip_without_unk() {
        let c = corpus();
        let v = Vocabulary::build(&c);
        let ex = &c.examples[0];
        let fg = fullgen_encode(ex);
        let (fr, ar) = multitask_encode(ex);
        for s in [
            &fg.input_text,
            &fg.target_text,
            &fr.input_text,
            &fr.target_text,
            &ar.input_text,
            &ar.target_text,
        ] {
            let ids = v.encode(s);
            assert!(!ids.contains(&UNK), "{s}");
            assert_eq!(&v.decode(&ids), s);
        }
    }

    #[test]
    fn index_ranges_are_split() {
        let v = Vocabulary::build(&corpus());
        let ids = v.encode("Fluid = 0-1 |");
        let pieces: Vec<&str> = ids.iter().map(|&i| v.piece(i)).collect();
        assert_eq!(pieces, ["Fluid", "=", "0", "@-@", "1", "|"]);
        assert_eq!(v.decode(&ids), "Fluid = 0-1 |");
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let v = Vocabulary::build(&corpus());
        let ids = v.encode("The snow dripped");
        assert_eq!(ids[1], UNK);
        assert_eq!(v.decode(&ids), "The <unk> dripped");
    }

    #[test]
    fn literal_dash_and_colon_tokens_survive() {
        let v = Vocabulary::from_pieces(pieces_of("<pad> <bos> <eos> <unk> a - b : 3 4 @-@ @:"));
        for s in ["a - b", "a : b", "3 - 4", "a: b-c"] {
            let ids = v.encode(s);
            let expect_unk = s.contains("b-c");
            assert_eq!(ids.contains(&UNK), expect_unk, "{s}");
            if !expect_unk {
                assert_eq!(v.decode(&ids), s);
            }
        }
    }

    #[test]
    fn trigger_positions_track_pieces() {
        let c = corpus();
        let v = Vocabulary::build(&c);
        let ex = &c.examples[0];
        let enc = v.encode_words(&args_input_words("Fluidic motion", &ex.tokens, ex.trigger));
        assert_eq!(enc.trigger_positions.len(), 1);
        assert_eq!(v.piece(enc.ids[enc.trigger_positions[0]]), "dripped");
        assert_eq!(v.piece(enc.ids[enc.trigger_positions[0] - 1]), "*");
    }

    #[test]
    fn labels_and_indices_are_in_vocabulary() {
        let v = Vocabulary::build(&corpus());
        for p in [
            "Fluidic",
            "motion",
            "Self",
            "Self_mover",
            "0",
            "6",
            "FRAME",
            "*",
        ] {
            assert!(v.id(p).is_some(), "{p}");
        }
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.id("<eos>"), Some(EOS));
    }

    #[test]
    fn hash_and_serde() {
        let v = Vocabulary::build(&corpus());
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        let other = Vocabulary::from_pieces(v.pieces()[..v.len() - 1].to_vec());
        assert_ne!(other.hash(), v.hash());
    }
}
