pub mod codebook;
pub mod icl;
pub mod losses;
pub mod nn;
pub mod quantizer;
pub mod signal;
pub mod synth;
