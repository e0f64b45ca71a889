pub mod annotate;
pub mod cascade;
pub mod detect;
pub mod emotion;
pub mod image;
pub mod pipeline;
pub mod select;
pub mod train;
pub mod synth;
pub mod tracking;
