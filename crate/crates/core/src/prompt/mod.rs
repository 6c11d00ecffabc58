//! Detection serialization and prompt assembly.
//!
//! A prompt is a flat token sequence with a parallel per-position segment
//! tag. Templates fix the segment order; the detection segment serializes
//! boxes as `category { <x_b1> <x_b2> <x_b3> <x_b4> }` with coordinates
//! quantized into bins.

mod detection;
mod template;

pub use detection::{
    parse_detections, quantize_coord, serialize_detections, DetLabel, Detection, DetectionMode,
    ParsedDetection,
};
pub use template::{assemble, dump, PromptTemplate, Segment, TokenSequence};
