//! Multi-track symbolic music toolkit built around the MuMIDI token
//! representation.
//!
//! * [`midi_io`]: Standard MIDI File reading and writing.
//! * [`codec`]: quantized scores, the token codec, JSONL, baseline lengths.
//! * [`pipeline`]: corpus cleansing, segmentation, chord recognition.
//! * [`model`]: the recurrent encoder-decoder, training and sampling.
//! * [`metrics`]: chord accuracy, perplexity and distribution overlap.
//! * [`cli`]: the `mumidi` command line.
//!
//! Runnable examples live in `examples/`.

pub mod cli;
pub mod codec;
pub mod metrics;
pub mod midi_io;
pub mod model;
pub mod pipeline;
pub mod render;
pub mod synth;
