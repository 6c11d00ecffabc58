use crate::error::{Error, Result};
use crate::util::sha256_hex;
use std::collections::HashMap;
use std::path::Path;

pub const PAD: &str = "<pad>";
pub const EOS: &str = "<eos>";
pub const IMG_OPEN: &str = "<Img>";
pub const IMG_CLOSE: &str = "</Img>";
pub const IMG_PATCH: &str = "<img_patch>";
pub const VQA: &str = "[vqa]";
pub const OBJECTS: &str = "Objects:";
pub const LBRACE: &str = "{";
pub const RBRACE: &str = "}";

const STRUCTURAL: [&str; 9] =
    [PAD, EOS, IMG_OPEN, IMG_CLOSE, IMG_PATCH, VQA, OBJECTS, LBRACE, RBRACE];

/// Words usable in questions and in textual prompt-initialization strings.
const WORDS: [&str; 23] = [
    "is", "there", "a", "in", "the", "image", "?", "according", "to", "previous", "object",
    "detection", "results", ",", "please", "answer", "following", "question", "with", "'", "or",
    "yes", "no",
];

/// Everyday object categories; configs with more than 48 fall back to
/// generated names.
pub const CATEGORY_NAMES: [&str; 48] = [
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
    "bench", "bird", "cat", "dog", "leash", "horse", "sheep", "cow", "elephant", "bear", "zebra",
    "giraffe", "backpack", "umbrella", "handbag", "tie", "suitcase", "frisbee", "kite", "bottle",
    "cup", "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange", "broccoli",
    "carrot", "pizza", "donut", "cake", "chair", "couch", "bed", "desk", "sink",
];

/// Token table with a fixed layout: structural tokens, coordinate bins,
/// placeholder names, category names, question words, then reference tokens
/// `[ref1]..[refR]`. Reference tokens sit at the top so a base table of
/// `base_size` rows covers every id below `ref_start`.
#[derive(Clone, Debug)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    coord_bins: usize,
    placeholders: usize,
    categories: usize,
    coord_start: u32,
    placeholder_start: u32,
    category_start: u32,
    word_start: u32,
    ref_start: u32,
    ref_capacity: usize,
}

impl Vocab {
    pub fn build(
        coord_bins: usize,
        categories: usize,
        placeholders: usize,
        ref_capacity: usize,
    ) -> Result<Vocab> {
        if coord_bins == 0 {
            return Err(Error::Vocab("coord_bins must be positive".into()));
        }
        if categories < 2 {
            return Err(Error::Vocab("need at least two categories".into()));
        }
        let mut tokens: Vec<String> = Vec::new();
        tokens.extend(STRUCTURAL.iter().map(|s| s.to_string()));
        let coord_start = tokens.len() as u32;
        for b in 0..coord_bins {
            tokens.push(format!("<x_{b}>"));
        }
        let placeholder_start = tokens.len() as u32;
        for i in 0..placeholders {
            tokens.push(format!("object{i}"));
        }
        let category_start = tokens.len() as u32;
        for c in 0..categories {
            match CATEGORY_NAMES.get(c) {
                Some(name) => tokens.push(name.to_string()),
                None => tokens.push(format!("thing{c}")),
            }
        }
        let word_start = tokens.len() as u32;
        for w in WORDS {
            if !tokens.contains(&w.to_string()) {
                tokens.push(w.to_string());
            }
        }
        let ref_start = tokens.len() as u32;
        for k in 1..=ref_capacity {
            tokens.push(format!("[ref{k}]"));
        }

        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab {
            tokens,
            index,
            coord_bins,
            placeholders,
            categories,
            coord_start,
            placeholder_start,
            category_start,
            word_start,
            ref_start,
            ref_capacity,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of ids below the reference-token range; the frozen embedding
    /// table has exactly this many rows.
    pub fn base_size(&self) -> usize {
        self.ref_start as usize
    }

    pub fn ref_capacity(&self) -> usize {
        self.ref_capacity
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn eos_id(&self) -> u32 {
        1
    }

    pub fn img_open_id(&self) -> u32 {
        2
    }

    pub fn img_close_id(&self) -> u32 {
        3
    }

    pub fn img_patch_id(&self) -> u32 {
        4
    }

    pub fn vqa_id(&self) -> u32 {
        5
    }

    pub fn objects_id(&self) -> u32 {
        6
    }

    pub fn lbrace_id(&self) -> u32 {
        7
    }

    pub fn rbrace_id(&self) -> u32 {
        8
    }

    pub fn yes_id(&self) -> u32 {
        self.index["yes"]
    }

    pub fn no_id(&self) -> u32 {
        self.index["no"]
    }

    pub fn coord_id(&self, bin: u16) -> Result<u32> {
        if (bin as usize) < self.coord_bins {
            Ok(self.coord_start + bin as u32)
        } else {
            Err(Error::Vocab(format!("coordinate bin {bin} out of {}", self.coord_bins)))
        }
    }

    pub fn placeholder_id(&self, i: usize) -> Result<u32> {
        if i < self.placeholders {
            Ok(self.placeholder_start + i as u32)
        } else {
            Err(Error::Vocab(format!(
                "placeholder index {i} exceeds capacity {}",
                self.placeholders
            )))
        }
    }

    pub fn category_id(&self, category: usize) -> Result<u32> {
        if category < self.categories {
            Ok(self.category_start + category as u32)
        } else {
            Err(Error::Vocab(format!("category {category} out of {}", self.categories)))
        }
    }

    /// Category index back from a vocab id, if the id names a category.
    pub fn category_of(&self, id: u32) -> Option<usize> {
        if id >= self.category_start && id < self.word_start {
            Some((id - self.category_start) as usize)
        } else {
            None
        }
    }

    pub fn coord_bin_of(&self, id: u32) -> Option<u16> {
        if id >= self.coord_start && id < self.placeholder_start {
            Some((id - self.coord_start) as u16)
        } else {
            None
        }
    }

    pub fn placeholder_of(&self, id: u32) -> Option<usize> {
        if id >= self.placeholder_start && id < self.category_start {
            Some((id - self.placeholder_start) as usize)
        } else {
            None
        }
    }

    /// `[refk]` id for 1-based `k`.
    pub fn ref_id(&self, k: usize) -> Result<u32> {
        if k >= 1 && k <= self.ref_capacity {
            Ok(self.ref_start + (k - 1) as u32)
        } else {
            Err(Error::Vocab(format!(
                "reference token index {k} outside 1..={}",
                self.ref_capacity
            )))
        }
    }

    /// 0-based block row for a reference-token id.
    pub fn ref_index_of(&self, id: u32) -> Option<usize> {
        if id >= self.ref_start && ((id - self.ref_start) as usize) < self.ref_capacity {
            Some((id - self.ref_start) as usize)
        } else {
            None
        }
    }

    /// Lowercases, splits off `,`/`'`/`?` as standalone tokens, then looks
    /// every word up. Unknown words are errors, not skipped.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        let mut spaced = String::with_capacity(text.len() + 8);
        for ch in text.chars() {
            if ch == ',' || ch == '\'' || ch == '?' {
                spaced.push(' ');
                spaced.push(ch);
                spaced.push(' ');
            } else {
                spaced.push(ch);
            }
        }
        let mut out = Vec::new();
        for word in spaced.split_whitespace() {
            let w = word.to_lowercase();
            match self.index.get(&w) {
                Some(&id) => out.push(id),
                None => return Err(Error::Vocab(format!("unknown word {w:?}"))),
            }
        }
        Ok(out)
    }

    fn file_bytes(&self) -> Vec<u8> {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s.into_bytes()
    }

    /// One token per line; line number equals token id.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.file_bytes())?;
        Ok(())
    }

    /// Hash of exactly the bytes `write_file` produces.
    pub fn hash(&self) -> String {
        sha256_hex(&self.file_bytes())
    }
}
