//! The MedPrompt network and its building blocks.

pub mod blocks;
pub mod config;
pub mod layers;
pub mod model;
pub mod prompt;

pub use blocks::{Block, ConvBlock, Gdfn, Mdta, TransformerBlock};
pub use config::{AblationFlags, ModelConfig};
pub use layers::{Conv, Ctx, Init, LayerNorm};
pub use model::{build_model, MedPrompt, Resample, Trace};
pub use prompt::{Peb, Pfb, PromptBank, Spb};
