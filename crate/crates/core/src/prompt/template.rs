use crate::error::{Error, Result};
use crate::prompt::detection::{serialize_detections, Detection, DetectionMode};
use crate::toyvlm::vocab::Vocab;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTemplate {
    /// image, question
    P1Baseline,
    /// image, detections, question
    P2Hard,
    /// image, virtual tokens, detections, question
    PatchStandard,
    /// image, detections, virtual tokens, question
    PatchLate,
}

impl PromptTemplate {
    pub fn takes_virtual(&self) -> bool {
        matches!(self, PromptTemplate::PatchStandard | PromptTemplate::PatchLate)
    }

    pub fn takes_detections(&self) -> bool {
        !matches!(self, PromptTemplate::P1Baseline)
    }
}

impl std::str::FromStr for PromptTemplate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p1_baseline" => Ok(PromptTemplate::P1Baseline),
            "p2_hard" => Ok(PromptTemplate::P2Hard),
            "patch_standard" => Ok(PromptTemplate::PatchStandard),
            "patch_late" => Ok(PromptTemplate::PatchLate),
            other => Err(Error::Config(format!("unknown template {other:?}"))),
        }
    }
}

impl std::fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PromptTemplate::P1Baseline => "p1_baseline",
            PromptTemplate::P2Hard => "p2_hard",
            PromptTemplate::PatchStandard => "patch_standard",
            PromptTemplate::PatchLate => "patch_late",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Image,
    Virtual,
    Detection,
    Question,
    Answer,
}

impl Segment {
    pub fn tag(&self) -> &'static str {
        match self {
            Segment::Image => "IMAGE",
            Segment::Virtual => "VIRTUAL",
            Segment::Detection => "DETECTION",
            Segment::Question => "QUESTION",
            Segment::Answer => "ANSWER",
        }
    }
}

/// Token ids with a parallel segment tag per position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub segs: Vec<Segment>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn positions_of(&self, seg: Segment) -> Vec<usize> {
        self.segs
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == seg).then_some(i))
            .collect()
    }

    fn push(&mut self, id: u32, seg: Segment) {
        self.ids.push(id);
        self.segs.push(seg);
    }

    fn extend(&mut self, ids: &[u32], seg: Segment) {
        for &id in ids {
            self.push(id, seg);
        }
    }
}

/// Builds the full prompt for one sample. `image_slots` is the number of
/// visual feature rows the image segment reserves; `answer` appends a
/// supervised answer token plus end-of-sequence for training sequences.
pub fn assemble(
    template: PromptTemplate,
    image_slots: usize,
    dets: &[Detection],
    mode: DetectionMode,
    question: &[u32],
    virtual_count: usize,
    vocab: &Vocab,
    answer: Option<u32>,
) -> Result<TokenSequence> {
    if !template.takes_virtual() && virtual_count > 0 {
        return Err(Error::Template(format!(
            "template {template:?} does not accept virtual tokens (got {virtual_count})"
        )));
    }
    if !template.takes_detections() && !dets.is_empty() {
        return Err(Error::Template(
            "baseline template takes no detections".into(),
        ));
    }
    if question.is_empty() {
        return Err(Error::Template("empty question".into()));
    }

    let mut seq = TokenSequence { ids: Vec::new(), segs: Vec::new() };

    let image = |seq: &mut TokenSequence| {
        seq.push(vocab.img_open_id(), Segment::Image);
        for _ in 0..image_slots {
            seq.push(vocab.img_patch_id(), Segment::Image);
        }
        seq.push(vocab.img_close_id(), Segment::Image);
    };
    let virtuals = |seq: &mut TokenSequence| -> Result<()> {
        for k in 1..=virtual_count {
            seq.push(vocab.ref_id(k)?, Segment::Virtual);
        }
        Ok(())
    };
    let detections = |seq: &mut TokenSequence| -> Result<()> {
        if mode != DetectionMode::None {
            seq.push(vocab.objects_id(), Segment::Detection);
            let body = serialize_detections(dets, mode, vocab)?;
            seq.extend(&body, Segment::Detection);
        }
        Ok(())
    };
    let questions = |seq: &mut TokenSequence| {
        seq.push(vocab.vqa_id(), Segment::Question);
        seq.extend(question, Segment::Question);
    };

    image(&mut seq);
    match template {
        PromptTemplate::P1Baseline => {}
        PromptTemplate::P2Hard => detections(&mut seq)?,
        PromptTemplate::PatchStandard => {
            virtuals(&mut seq)?;
            detections(&mut seq)?;
        }
        PromptTemplate::PatchLate => {
            detections(&mut seq)?;
            virtuals(&mut seq)?;
        }
    }
    questions(&mut seq);

    if let Some(a) = answer {
        seq.push(a, Segment::Answer);
    }
    Ok(seq)
}

/// One line per position: `index<TAB>segment<TAB>token`.
pub fn dump(seq: &TokenSequence, vocab: &Vocab) -> String {
    let mut out = String::new();
    for (i, (&id, seg)) in seq.ids.iter().zip(&seq.segs).enumerate() {
        let tok = vocab.token(id).unwrap_or("<invalid id>");
        out.push_str(&format!("{i}\t{}\t{tok}\n", seg.tag()));
    }
    out
}
