use crate::error::{Error, Result};
use crate::kv::KvDoc;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub patch: usize,
    pub mlp_ratio: usize,
    pub d_sem: usize,
    pub latent_channels: usize,
    /// Latent grid the positional embedding is sized for.
    pub grid_height: usize,
    pub grid_width: usize,
    /// Adds the target-time embedding pathway.
    pub student_mode: bool,
    /// Without semantics every mode attends to the null token only.
    pub use_semantic: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 128,
            depth: 4,
            heads: 4,
            patch: 2,
            mlp_ratio: 4,
            d_sem: 64,
            latent_channels: 48,
            grid_height: 16,
            grid_width: 16,
            student_mode: false,
            use_semantic: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("depth", self.depth),
            ("heads", self.heads),
            ("patch", self.patch),
            ("mlp_ratio", self.mlp_ratio),
            ("d_sem", self.d_sem),
            ("latent_channels", self.latent_channels),
            ("grid_height", self.grid_height),
            ("grid_width", self.grid_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be positive")));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!("dim {} is not divisible by heads {}", self.dim, self.heads)));
        }
        if self.dim % 2 != 0 {
            return Err(Error::Config(format!("dim {} must be even for the time embedding", self.dim)));
        }
        if self.grid_height % self.patch != 0 || self.grid_width % self.patch != 0 {
            return Err(Error::Config(format!(
                "patch {} does not divide latent grid {}x{}",
                self.patch, self.grid_height, self.grid_width
            )));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        (self.grid_height / self.patch) * (self.grid_width / self.patch)
    }

    /// Width of one output token.
    pub fn token_out(&self) -> usize {
        self.patch * self.patch * self.latent_channels
    }

    /// Width of one input token: noisy latent and structural latent.
    pub fn token_in(&self) -> usize {
        2 * self.token_out()
    }

    pub fn hidden(&self) -> usize {
        self.dim * self.mlp_ratio
    }

    pub fn write_kv(&self, doc: &mut KvDoc, prefix: &str) {
        doc.set(&format!("{prefix}dim"), self.dim);
        doc.set(&format!("{prefix}depth"), self.depth);
        doc.set(&format!("{prefix}heads"), self.heads);
        doc.set(&format!("{prefix}patch"), self.patch);
        doc.set(&format!("{prefix}mlp_ratio"), self.mlp_ratio);
        doc.set(&format!("{prefix}d_sem"), self.d_sem);
        doc.set(&format!("{prefix}latent_channels"), self.latent_channels);
        doc.set(&format!("{prefix}grid_height"), self.grid_height);
        doc.set(&format!("{prefix}grid_width"), self.grid_width);
        doc.set(&format!("{prefix}student_mode"), self.student_mode);
        doc.set(&format!("{prefix}use_semantic"), self.use_semantic);
    }

    /// Read fields present under `prefix`, keeping `self` for absent ones.
    pub fn read_kv(mut self, doc: &KvDoc, prefix: &str) -> Result<Self> {
        macro_rules! field {
            ($name:ident) => {
                if let Some(v) = doc.get(&format!("{prefix}{}", stringify!($name)))? {
                    self.$name = v;
                }
            };
        }
        field!(dim);
        field!(depth);
        field!(heads);
        field!(patch);
        field!(mlp_ratio);
        field!(d_sem);
        field!(latent_channels);
        field!(grid_height);
        field!(grid_width);
        field!(student_mode);
        field!(use_semantic);
        self.validate()?;
        Ok(self)
    }

    pub const KEYS: [&'static str; 11] = [
        "dim",
        "depth",
        "heads",
        "patch",
        "mlp_ratio",
        "d_sem",
        "latent_channels",
        "grid_height",
        "grid_width",
        "student_mode",
        "use_semantic",
    ];
}
