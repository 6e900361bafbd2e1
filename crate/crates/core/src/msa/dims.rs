use crate::error::{Error, Result};

/// Transformer shape of one attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelDims {
    /// Tokens per image, including class and distillation tokens.
    pub n_tokens: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub bits: u8,
}

impl ModelDims {
    pub fn new(n_tokens: usize, embed_dim: usize, heads: usize) -> Result<Self> {
        let dims = ModelDims {
            n_tokens,
            embed_dim,
            heads,
            mlp_ratio: 4,
            bits: 3,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tokens == 0 || self.embed_dim == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return Err(Error::InvalidConfig("all dimensions must be >= 1".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if !(2..=8).contains(&self.bits) {
            return Err(Error::InvalidConfig(format!("bits {} outside [2, 8]", self.bits)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn deit_tiny() -> Self {
        Self::preset(198, 192, 3)
    }

    pub fn deit_small() -> Self {
        Self::preset(198, 384, 6)
    }

    pub fn deit_base() -> Self {
        Self::preset(198, 768, 12)
    }

    pub fn toy() -> Self {
        Self::preset(8, 12, 3)
    }

    pub fn from_preset(name: &str) -> Option<Self> {
        match name {
            "deit-t" => Some(Self::deit_tiny()),
            "deit-s" => Some(Self::deit_small()),
            "deit-b" => Some(Self::deit_base()),
            "toy" => Some(Self::toy()),
            _ => None,
        }
    }

    fn preset(n_tokens: usize, embed_dim: usize, heads: usize) -> Self {
        ModelDims {
            n_tokens,
            embed_dim,
            heads,
            mlp_ratio: 4,
            bits: 3,
        }
    }
}
