pub mod augment;
pub mod datagen;
pub mod dsp;
pub mod eval;
pub mod model;
pub mod score;
pub mod stats;
pub mod tensor;
pub mod train;
