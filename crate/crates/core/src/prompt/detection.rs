use crate::error::{Error, Result};
use crate::toyvlm::vocab::Vocab;
use serde::{Deserialize, Serialize};

/// A detected object with coordinates already quantized into bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub category: usize,
    pub bins: [u16; 4],
}

impl Detection {
    pub fn from_coords(category: usize, bbox: [f64; 4], bins: usize) -> Detection {
        Detection {
            category,
            bins: [
                quantize_coord(bbox[0], bins),
                quantize_coord(bbox[1], bins),
                quantize_coord(bbox[2], bins),
                quantize_coord(bbox[3], bins),
            ],
        }
    }

    fn sort_key(&self) -> (usize, [u16; 4]) {
        (self.category, self.bins)
    }
}

/// `min(floor(x * bins + 0.5), bins - 1)`: round half up, clamp to range.
pub fn quantize_coord(x: f64, bins: usize) -> u16 {
    let b = bins as f64;
    let q = (x.max(0.0) * b + 0.5).floor();
    (q.min(b - 1.0)) as u16
}

/// How detections appear in the prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    /// `category { <x_b1> <x_b2> <x_b3> <x_b4> }`
    Category,
    /// `objecti { <x_b1> <x_b2> <x_b3> <x_b4> }` with i the list index
    Placeholder,
    /// category word only, no box
    CategoryNoBbox,
    /// detection segment omitted entirely
    None,
}

impl std::str::FromStr for DetectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "category" => Ok(DetectionMode::Category),
            "placeholder" => Ok(DetectionMode::Placeholder),
            "category_no_bbox" => Ok(DetectionMode::CategoryNoBbox),
            "none" => Ok(DetectionMode::None),
            other => Err(Error::Config(format!("unknown detection mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for DetectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DetectionMode::Category => "category",
            DetectionMode::Placeholder => "placeholder",
            DetectionMode::CategoryNoBbox => "category_no_bbox",
            DetectionMode::None => "none",
        };
        f.write_str(s)
    }
}

/// Serializes detections in a canonical order: ascending category id, then
/// bin coordinates. Mode `None` yields no tokens.
pub fn serialize_detections(
    dets: &[Detection],
    mode: DetectionMode,
    vocab: &Vocab,
) -> Result<Vec<u32>> {
    if mode == DetectionMode::None {
        return Ok(Vec::new());
    }
    let mut sorted = dets.to_vec();
    sorted.sort_by_key(|d| d.sort_key());
    let mut out = Vec::new();
    for (i, d) in sorted.iter().enumerate() {
        match mode {
            DetectionMode::Category => {
                out.push(vocab.category_id(d.category)?);
                out.push(vocab.lbrace_id());
                for b in d.bins {
                    out.push(vocab.coord_id(b)?);
                }
                out.push(vocab.rbrace_id());
            }
            DetectionMode::Placeholder => {
                out.push(vocab.placeholder_id(i)?);
                out.push(vocab.lbrace_id());
                for b in d.bins {
                    out.push(vocab.coord_id(b)?);
                }
                out.push(vocab.rbrace_id());
            }
            DetectionMode::CategoryNoBbox => {
                out.push(vocab.category_id(d.category)?);
            }
            DetectionMode::None => unreachable!(),
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetLabel {
    Category(usize),
    Placeholder(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParsedDetection {
    pub label: DetLabel,
    pub bins: Option<[u16; 4]>,
}

/// Strict reference parser for serialized detections (without the
/// `Objects:` leader). The inverse of [`serialize_detections`].
pub fn parse_detections(
    tokens: &[u32],
    mode: DetectionMode,
    vocab: &Vocab,
) -> Result<Vec<ParsedDetection>> {
    let mut out = Vec::new();
    let mut it = tokens.iter().copied().peekable();
    let bad = |what: &str, id: u32| {
        Error::Template(format!(
            "detection parse: expected {what}, found {:?}",
            vocab.token(id).unwrap_or("<invalid id>")
        ))
    };
    match mode {
        DetectionMode::None => {
            if !tokens.is_empty() {
                return Err(Error::Template(
                    "detection parse: mode none must have no tokens".into(),
                ));
            }
        }
        DetectionMode::CategoryNoBbox => {
            for id in it {
                match vocab.category_of(id) {
                    Some(c) => out.push(ParsedDetection {
                        label: DetLabel::Category(c),
                        bins: None,
                    }),
                    None => return Err(bad("category", id)),
                }
            }
        }
        DetectionMode::Category | DetectionMode::Placeholder => {
            while let Some(first) = it.next() {
                let label = match mode {
                    DetectionMode::Category => DetLabel::Category(
                        vocab.category_of(first).ok_or_else(|| bad("category", first))?,
                    ),
                    _ => DetLabel::Placeholder(
                        vocab.placeholder_of(first).ok_or_else(|| bad("placeholder", first))?,
                    ),
                };
                match it.next() {
                    Some(id) if id == vocab.lbrace_id() => {}
                    Some(id) => return Err(bad("'{'", id)),
                    None => return Err(Error::Template("detection parse: truncated".into())),
                }
                let mut bins = [0u16; 4];
                for b in &mut bins {
                    match it.next() {
                        Some(id) => {
                            *b = vocab
                                .coord_bin_of(id)
                                .ok_or_else(|| bad("coordinate bin", id))?
                        }
                        None => return Err(Error::Template("detection parse: truncated".into())),
                    }
                }
                match it.next() {
                    Some(id) if id == vocab.rbrace_id() => {}
                    Some(id) => return Err(bad("'}'", id)),
                    None => return Err(Error::Template("detection parse: truncated".into())),
                }
                out.push(ParsedDetection { label, bins: Some(bins) });
            }
        }
    }
    Ok(out)
}
