use crate::kv::{check, ConfigError, KvDoc, KvWriter};
use crate::synth::S2_BANDS;

/// Architecture hyperparameters. Tile geometry fixes the patch grid and so
/// the size of the positional tables.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub tile_height: usize,
    pub tile_width: usize,
    pub patch: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub pred_dim: usize,
    pub pred_depth: usize,
    pub pred_heads: usize,
    pub pred_hidden: usize,
    pub dec_dim: usize,
    pub dec_depth: usize,
    pub dec_heads: usize,
    pub dec_hidden: usize,
    pub text_width: usize,
    pub text_depth: usize,
    pub text_heads: usize,
    pub text_hidden: usize,
    pub text_dim: usize,
    pub max_caption_len: usize,
    pub proj_hidden: usize,
    pub shared_dim: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            tile_height: 32,
            tile_width: 32,
            patch: 4,
            dim: 128,
            depth: 4,
            heads: 4,
            mlp_hidden: 256,
            pred_dim: 64,
            pred_depth: 2,
            pred_heads: 4,
            pred_hidden: 128,
            dec_dim: 64,
            dec_depth: 1,
            dec_heads: 4,
            dec_hidden: 128,
            text_width: 64,
            text_depth: 6,
            text_heads: 4,
            text_hidden: 128,
            text_dim: 512,
            max_caption_len: 32,
            proj_hidden: 256,
            shared_dim: 128,
            init_seed: 0,
        }
    }
}

macro_rules! usize_fields {
    ($($f:ident),* $(,)?) => {
        const USIZE_FIELDS: &[&str] = &[$(stringify!($f)),*];
        impl ModelConfig {
            fn usize_field_mut(&mut self, name: &str) -> Option<&mut usize> {
                match name { $(stringify!($f) => Some(&mut self.$f),)* _ => None }
            }
            fn usize_field(&self, name: &str) -> Option<usize> {
                match name { $(stringify!($f) => Some(self.$f),)* _ => None }
            }
        }
    };
}

usize_fields!(
    tile_height, tile_width, patch, dim, depth, heads, mlp_hidden, pred_dim, pred_depth, pred_heads,
    pred_hidden, dec_dim, dec_depth, dec_heads, dec_hidden, text_width, text_depth, text_heads,
    text_hidden, text_dim, max_caption_len, proj_hidden, shared_dim,
);

impl ModelConfig {
    pub fn in_channels(&self) -> usize {
        S2_BANDS
    }

    pub fn grid_rows(&self) -> usize {
        self.tile_height / self.patch
    }

    pub fn grid_cols(&self) -> usize {
        self.tile_width / self.patch
    }

    pub fn num_patches(&self) -> usize {
        self.grid_rows() * self.grid_cols()
    }

    pub fn patch_dim(&self) -> usize {
        self.in_channels() * self.patch * self.patch
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for &name in USIZE_FIELDS {
            check(self.usize_field(name).unwrap_or(0) > 0, &format!("model.{name}"), "must be positive")?;
        }
        check(
            self.tile_height.is_multiple_of(self.patch) && self.tile_width.is_multiple_of(self.patch),
            "model.patch",
            format!("must divide the {}x{} tile", self.tile_height, self.tile_width),
        )?;
        for (w, h, key) in [
            (self.dim, self.heads, "model.heads"),
            (self.pred_dim, self.pred_heads, "model.pred_heads"),
            (self.dec_dim, self.dec_heads, "model.dec_heads"),
            (self.text_width, self.text_heads, "model.text_heads"),
        ] {
            check(w % h == 0, key, format!("must divide width {w}"))?;
        }
        check(self.max_caption_len >= 3, "model.max_caption_len", "must leave room for bos, a word and eos")
    }

    /// Reads `model.*` keys, defaulting absent ones.
    pub fn from_doc(doc: &mut KvDoc) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for &name in USIZE_FIELDS {
            let key = format!("model.{name}");
            if let Some(v) = doc.take::<usize>(&key, "non-negative integer")? {
                *cfg.usize_field_mut(name).expect("listed field") = v;
            }
        }
        if let Some(v) = doc.take::<u64>("model.init_seed", "non-negative integer")? {
            cfg.init_seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write(&self, w: &mut KvWriter) {
        for &name in USIZE_FIELDS {
            w.put(&format!("model.{name}"), self.usize_field(name).expect("listed field"));
        }
        w.put("model.init_seed", self.init_seed);
    }

    pub fn to_text(&self) -> String {
        let mut w = KvWriter::default();
        self.write(&mut w);
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut doc = KvDoc::parse(text)?;
        let cfg = Self::from_doc(&mut doc)?;
        doc.finish()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = ModelConfig::default();
        c.depth = 2;
        c.init_seed = 9;
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_heads() {
        let err = ModelConfig::from_text("model.heads=3\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "model.heads"));
    }
}
