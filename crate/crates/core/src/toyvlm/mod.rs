//! The frozen toy vision-language model: vocabulary, scene encoder,
//! parameters, and the decoder forward pass.

pub mod model;
pub mod params;
pub mod scene;
pub mod vocab;
