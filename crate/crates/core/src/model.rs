//! Learnable parameters of the graph-transformer classifier.
//!
//! Parameter paths, in storage order:
//!
//! | path | shape |
//! |------|-------|
//! | `gat1.W` | `input_dim × K·n` |
//! | `gat1.a` | `K × 2n` |
//! | `gat2.W` | `K·n × K·n` |
//! | `gat2.a` | `K × 2n` |
//! | `pool.W` | `K·n × n` |
//! | `pool.b` | `1 × n` |
//! | `enc.{l}.ln1.gain`, `enc.{l}.ln1.bias` | `1 × n` |
//! | `enc.{l}.attn.{q,k,v,o}` | `n × n` |
//! | `enc.{l}.ln2.gain`, `enc.{l}.ln2.bias` | `1 × n` |
//! | `enc.{l}.ffn.w1`, `enc.{l}.ffn.b1` | `n × f·n`, `1 × f·n` |
//! | `enc.{l}.ffn.w2`, `enc.{l}.ffn.b2` | `f·n × n`, `1 × n` |
//! | `head.w_ap` | `n × 1` |
//! | `head.w_c` | `n × 1` |
//! | `head.b_c` | `1 × 1` |
//!
//! `n` is `hidden`, `K` is `gat_heads`, `f` is `ffn_mult`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::scenario::SENSOR_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Node feature width: sensor values plus the ego bit.
    pub input_dim: usize,
    pub hidden: usize,
    pub gat_heads: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub ffn_mult: usize,
    /// Longest sequence the positional table covers.
    pub t_max: usize,
    /// Sensor range used to scale distances into proximities.
    pub max_range: f64,
    pub init_seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            input_dim: SENSOR_DIM + 1,
            hidden: 32,
            gat_heads: 2,
            encoder_layers: 2,
            encoder_heads: 4,
            ffn_mult: 4,
            t_max: 256,
            max_range: 50.0,
            init_seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.input_dim,
            self.hidden,
            self.gat_heads,
            self.encoder_heads,
            self.ffn_mult,
            self.t_max,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.hidden % self.encoder_heads != 0 {
            return Err(Error::Config(format!(
                "hidden width {} not divisible by {} encoder heads",
                self.hidden, self.encoder_heads
            )));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::Config("max_range must be positive".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, kv: &mut KvConfig) -> Result<()> {
        kv.take_into("hidden", &mut self.hidden)?;
        kv.take_into("gat_heads", &mut self.gat_heads)?;
        kv.take_into("encoder_layers", &mut self.encoder_layers)?;
        kv.take_into("encoder_heads", &mut self.encoder_heads)?;
        kv.take_into("ffn_mult", &mut self.ffn_mult)?;
        kv.take_into("t_max", &mut self.t_max)?;
        kv.take_into("max_range", &mut self.max_range)?;
        kv.take_into("init_seed", &mut self.init_seed)?;
        self.validate()
    }

    /// Width of a concatenated multi-head GAT output.
    pub fn gat_width(&self) -> usize {
        self.gat_heads * self.hidden
    }

    /// Paths and shapes of every parameter in storage order.
    pub fn layout(&self) -> Vec<(String, [usize; 2])> {
        let n = self.hidden;
        let kn = self.gat_width();
        let f = self.ffn_mult * n;
        let mut out = vec![
            ("gat1.W".to_string(), [self.input_dim, kn]),
            ("gat1.a".to_string(), [self.gat_heads, 2 * n]),
            ("gat2.W".to_string(), [kn, kn]),
            ("gat2.a".to_string(), [self.gat_heads, 2 * n]),
            ("pool.W".to_string(), [kn, n]),
            ("pool.b".to_string(), [1, n]),
        ];
        for l in 0..self.encoder_layers {
            let p = |s: &str| format!("enc.{l}.{s}");
            out.extend([
                (p("ln1.gain"), [1, n]),
                (p("ln1.bias"), [1, n]),
                (p("attn.q"), [n, n]),
                (p("attn.k"), [n, n]),
                (p("attn.v"), [n, n]),
                (p("attn.o"), [n, n]),
                (p("ln2.gain"), [1, n]),
                (p("ln2.bias"), [1, n]),
                (p("ffn.w1"), [n, f]),
                (p("ffn.b1"), [1, f]),
                (p("ffn.w2"), [f, n]),
                (p("ffn.b2"), [1, n]),
            ]);
        }
        out.extend([
            ("head.w_ap".to_string(), [n, 1]),
            ("head.w_c".to_string(), [n, 1]),
            ("head.b_c".to_string(), [1, 1]),
        ]);
        out
    }
}

/// Storage indices of the fusion parameters.
pub mod idx {
    pub const GAT1_W: usize = 0;
    pub const GAT1_A: usize = 1;
    pub const GAT2_W: usize = 2;
    pub const GAT2_A: usize = 3;
    pub const POOL_W: usize = 4;
    pub const POOL_B: usize = 5;
    pub const ENC_START: usize = 6;
    pub const PER_LAYER: usize = 12;

    /// Offsets within one encoder layer.
    pub const LN1_GAIN: usize = 0;
    pub const LN1_BIAS: usize = 1;
    pub const Q: usize = 2;
    pub const K: usize = 3;
    pub const V: usize = 4;
    pub const O: usize = 5;
    pub const LN2_GAIN: usize = 6;
    pub const LN2_BIAS: usize = 7;
    pub const FFN_W1: usize = 8;
    pub const FFN_B1: usize = 9;
    pub const FFN_W2: usize = 10;
    pub const FFN_B2: usize = 11;

    pub fn layer(l: usize, offset: usize) -> usize {
        ENC_START + l * PER_LAYER + offset
    }

    pub fn head(layers: usize) -> usize {
        ENC_START + layers * PER_LAYER
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: Hyperparams,
    pub tensors: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    hyperparams: Hyperparams,
    weights: BTreeMap<String, Vec<f64>>,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(hyper: Hyperparams) -> Result<Self> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.init_seed);
        let tensors = hyper
            .layout()
            .into_iter()
            .map(|(name, [r, c])| {
                let shape = [r, c];
                let leaf = name.rsplit('.').next().unwrap_or_default();
                if leaf == "gain" {
                    Tensor::full(&shape, 1.0)
                } else if leaf.starts_with('b') {
                    Tensor::zeros(&shape)
                } else {
                    let limit = (6.0 / (r + c) as f64).sqrt();
                    let data = (0..r * c).map(|_| rng.random_range(-limit..limit)).collect();
                    Tensor::matrix(r, c, data).expect("layout shape")
                }
            })
            .collect();
        Ok(ModelParams { hyper, tensors })
    }

    pub fn names(&self) -> Vec<String> {
        self.hyper.layout().into_iter().map(|(n, _)| n).collect()
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.names().iter().position(|n| n == path).map(|i| &self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_json(&self) -> String {
        let weights = self
            .names()
            .into_iter()
            .zip(&self.tensors)
            .map(|(n, t)| (n, t.data().to_vec()))
            .collect();
        serde_json::to_string(&ModelFile {
            hyperparams: self.hyper,
            weights,
        })
        .expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::schema(format!("model file: {e}")))?;
        file.hyperparams.validate()?;
        let mut weights = file.weights;
        let mut tensors = Vec::new();
        for (name, [r, c]) in file.hyperparams.layout() {
            let data = weights
                .remove(&name)
                .ok_or_else(|| Error::schema(format!("model file lacks weight {name}")))?;
            if data.len() != r * c {
                return Err(Error::schema(format!(
                    "weight {name} has {} values, expected {r}x{c}",
                    data.len()
                )));
            }
            tensors.push(Tensor::matrix(r, c, data)?);
        }
        if let Some(extra) = weights.keys().next() {
            return Err(Error::schema(format!("unexpected weight {extra}")));
        }
        Ok(ModelParams {
            hyper: file.hyperparams,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_index_table() {
        let hp = Hyperparams {
            encoder_layers: 2,
            ..Hyperparams::default()
        };
        let names: Vec<String> = hp.layout().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[idx::GAT2_A], "gat2.a");
        assert_eq!(names[idx::layer(1, idx::O)], "enc.1.attn.o");
        assert_eq!(names[idx::layer(0, idx::FFN_B2)], "enc.0.ffn.b2");
        assert_eq!(names[idx::head(2)], "head.w_ap");
        assert_eq!(names.len(), idx::head(2) + 3);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let hp = Hyperparams {
            hidden: 8,
            gat_heads: 2,
            encoder_layers: 1,
            encoder_heads: 2,
            ..Hyperparams::default()
        };
        let p = ModelParams::init(hp).unwrap();
        assert_eq!(p.get("enc.0.ln1.gain").unwrap().data(), &[1.0; 8]);
        assert_eq!(p.get("head.b_c").unwrap().data(), &[0.0]);
        assert!(p.get("gat1.W").unwrap().data().iter().any(|&v| v != 0.0));
        let back = ModelParams::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }
}
