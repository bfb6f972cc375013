//! The full forecaster: inverted embedding, a stack of encoder blocks
//! (VCA then KTD, each with a residual and post-norm), and the projection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ktd::{ktd_forward_tape, segment_count, KtdParams, DEFAULT_RIDGE_EPS};
use crate::nn::{join, Activation, Mlp, Norm};
use crate::tensor::{Tensor, LAYERNORM_EPS};
use crate::vca::{vca_forward_tape, VcaParams};

/// Storage precision for checkpointed parameters. Arithmetic is always f64;
/// with `F32` parameters are kept rounded to single precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Look-back length `T`.
    pub seq_len: usize,
    /// Horizon `H`.
    pub pred_len: usize,
    /// Variate count `N`.
    pub n_vars: usize,
    /// Token width `D`.
    pub d_model: usize,
    /// Koopman width `M`.
    pub koopman_dim: usize,
    /// Segment length `S`.
    pub segment_len: usize,
    /// Block count `L`.
    pub blocks: usize,
    pub dtype: Dtype,
    pub seed: u64,
    pub activation: Activation,
    pub ktd_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            seq_len: 96,
            pred_len: 96,
            n_vars: 8,
            d_model: 128,
            koopman_dim: 256,
            segment_len: 32,
            blocks: 2,
            dtype: Dtype::F64,
            seed: 2024,
            activation: Activation::Gelu,
            ktd_eps: DEFAULT_RIDGE_EPS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("seq_len", self.seq_len),
            ("pred_len", self.pred_len),
            ("n_vars", self.n_vars),
            ("d_model", self.d_model),
            ("koopman_dim", self.koopman_dim),
            ("segment_len", self.segment_len),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.ktd_eps >= 0.0 && self.ktd_eps.is_finite()) {
            return Err(Error::Config(format!("ktd_eps must be finite and >= 0, got {}", self.ktd_eps)));
        }
        if self.blocks > 0 {
            segment_count(self.d_model, self.segment_len)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub vca: VcaParams<T>,
    pub norm1: Norm<T>,
    pub ktd: KtdParams<T>,
    pub norm2: Norm<T>,
}

impl<T> Block<T> {
    pub fn map_named<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> Result<U>) -> Result<Block<U>> {
        Ok(Block {
            vca: self.vca.map_named(&join(prefix, "vca"), f)?,
            norm1: self.norm1.map_named(&join(prefix, "norm1"), f)?,
            ktd: self.ktd.map_named(&join(prefix, "ktd"), f)?,
            norm2: self.norm2.map_named(&join(prefix, "norm2"), f)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub embed: Mlp<T>,
    pub blocks: Vec<Block<T>>,
    pub project: Mlp<T>,
}

impl<T> ModelParams<T> {
    /// Visits every tensor in a fixed order under its dotted path name.
    pub fn map_named<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> Result<U>) -> Result<ModelParams<U>> {
        let embed = self.embed.map_named(&join(prefix, "embed"), f)?;
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| b.map_named(&join(prefix, &format!("block.{i}")), f))
            .collect::<Result<Vec<_>>>()?;
        let project = self.project.map_named(&join(prefix, "project"), f)?;
        Ok(ModelParams { embed, blocks, project })
    }
}

impl ModelParams<Tensor> {
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (t, d, h, act) = (config.seq_len, config.d_model, config.pred_len, config.activation);
        let embed = Mlp::init(&mut rng, t, d, d, act)?;
        let blocks = (0..config.blocks)
            .map(|_| {
                Ok(Block {
                    vca: VcaParams::init(&mut rng, d)?,
                    norm1: Norm::init(d)?,
                    ktd: KtdParams::init(
                        &mut rng,
                        config.n_vars,
                        config.segment_len,
                        config.koopman_dim,
                        act,
                        config.ktd_eps,
                    )?,
                    norm2: Norm::init(d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let project = Mlp::init(&mut rng, d, d, h, act)?;
        let mut params = ModelParams { embed, blocks, project };
        if config.dtype == Dtype::F32 {
            params = params.round_to_f32();
        }
        Ok(params)
    }

    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.map_named("", &mut |n, t| {
            out.push((n.to_string(), t.clone()));
            Ok(())
        })
        .expect("collecting tensors cannot fail");
        out
    }

    /// Rebuilds parameters for `config` from named tensors, checking every
    /// name and shape.
    pub fn from_named(config: &ModelConfig, tensors: &[(String, Tensor)]) -> Result<Self> {
        let template = ModelParams::init(config)?;
        let expected = template.to_named();
        if expected.len() != tensors.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        let lookup: std::collections::HashMap<&str, &Tensor> =
            tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        template.map_named("", &mut |name, t| {
            let found = lookup
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing parameter tensor {name}")))?;
            if found.shape() != t.shape() {
                return Err(Error::Shape {
                    shape: found.shape().to_vec(),
                    reason: format!("parameter {name} expects {:?}", t.shape()),
                });
            }
            Ok((*found).clone())
        })
    }

    /// Replaces tensors in visiting order.
    pub fn with_values(&self, values: &[Tensor]) -> Result<Self> {
        let mut it = values.iter();
        self.map_named("", &mut |name, t| {
            let v = it
                .next()
                .ok_or_else(|| Error::Contract(format!("no value supplied for {name}")))?;
            if v.shape() != t.shape() {
                return Err(Error::Shape {
                    shape: v.shape().to_vec(),
                    reason: format!("parameter {name} expects {:?}", t.shape()),
                });
            }
            Ok(v.clone())
        })
    }

    pub fn round_to_f32(&self) -> Self {
        self.map_named("", &mut |_, t| Ok(t.map(|v| v as f32 as f64)))
            .expect("rounding cannot fail")
    }

    pub fn param_count(&self) -> usize {
        self.to_named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Registers every tensor on `tape`, as trainable leaves or constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> ModelParams<Var<'t>> {
        self.map_named("", &mut |_, t| {
            Ok(if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
        })
        .expect("binding cannot fail")
    }
}

pub struct ForwardOutput<'t> {
    /// `H x N` forecast.
    pub forecast: Var<'t>,
    /// Pre-softmax `N x N` score map of each block.
    pub scores: Vec<Var<'t>>,
}

/// `T x N` window to `H x N` forecast.
pub fn forward_tape<'t>(x: Var<'t>, p: &ModelParams<Var<'t>>) -> Result<ForwardOutput<'t>> {
    let xs = x.shape();
    let t = p.embed.w1.shape()[0];
    if xs.len() != 2 || xs[0] != t {
        return Err(Error::dim("model forward", &xs, &[t, 0]));
    }
    let mut h = p.embed.forward(x.transpose()?)?;
    let mut scores = Vec::with_capacity(p.blocks.len());
    for b in &p.blocks {
        let attn = vca_forward_tape(h, &b.vca)?;
        scores.push(attn.scores);
        h = h.add(attn.output)?.layernorm(b.norm1.gamma, b.norm1.beta, LAYERNORM_EPS)?;
        let k = ktd_forward_tape(h, &b.ktd)?;
        h = h.add(k)?.layernorm(b.norm2.gamma, b.norm2.beta, LAYERNORM_EPS)?;
    }
    let forecast = p.project.forward(h)?.transpose()?;
    Ok(ForwardOutput { forecast, scores })
}

pub fn forward(x: &Tensor, p: &ModelParams<Tensor>) -> Result<Tensor> {
    let tape = Tape::new();
    Ok(forward_tape(tape.constant(x.clone()), &p.bind(&tape, false))?.forecast.value())
}

/// Pre-softmax score maps of every block for window `x`.
pub fn score_maps(x: &Tensor, p: &ModelParams<Tensor>) -> Result<Vec<Tensor>> {
    let tape = Tape::new();
    let out = forward_tape(tape.constant(x.clone()), &p.bind(&tape, false))?;
    Ok(out.scores.iter().map(|s| s.value()).collect())
}

pub fn loss_mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("loss_mse", pred.shape(), target.shape()));
    }
    let d = pred.sub(target)?;
    Ok(d.mul(&d)?.mean())
}

pub fn loss_mse_tape<'t>(pred: Var<'t>, target: &Tensor) -> Result<Var<'t>> {
    let d = pred.sub(pred.tape().constant(target.clone()))?;
    Ok(d.mul(d)?.mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::nn::uniform;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            seq_len: 8,
            pred_len: 4,
            n_vars: 3,
            d_model: 8,
            koopman_dim: 6,
            segment_len: 4,
            blocks: 1,
            seed: 7,
            ..ModelConfig::default()
        }
    }

    fn window(config: &ModelConfig, seed: u64) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            uniform(&mut rng, &[config.seq_len, config.n_vars], 1.0).unwrap(),
            uniform(&mut rng, &[config.pred_len, config.n_vars], 1.0).unwrap(),
        )
    }

    #[test]
    fn default_shape_contract() {
        let config = ModelConfig { seq_len: 96, n_vars: 8, d_model: 128, pred_len: 96, blocks: 2, ..Default::default() };
        let p = ModelParams::init(&config).unwrap();
        let (x, _) = window(&config, 1);
        assert_eq!(forward(&x, &p).unwrap().shape(), &[96, 8]);
    }

    #[test]
    fn empty_stack_is_a_per_variate_mlp() {
        let config = ModelConfig { blocks: 0, ..tiny_config() };
        let p = ModelParams::init(&config).unwrap();
        let (x, _) = window(&config, 2);
        let out = forward(&x, &p).unwrap();
        for c in 0..config.n_vars {
            let col: Vec<f64> = (0..config.seq_len).map(|t| x.get(&[t, c])).collect();
            let single = Tensor::new([config.seq_len, 1], col).unwrap();
            let y = forward(&single, &p).unwrap();
            for h in 0..config.pred_len {
                assert!((y.get(&[h, 0]) - out.get(&[h, c])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zeroed_sublayers_leave_double_layernorm() {
        let config = tiny_config();
        let mut p = ModelParams::init(&config).unwrap();
        let b = &mut p.blocks[0];
        b.vca.w_o = Tensor::zeros(b.vca.w_o.shape().to_vec()).unwrap();
        match &mut b.ktd.decoder {
            crate::ktd::Coder::Mlp(m) => {
                m.w2 = Tensor::zeros(m.w2.shape().to_vec()).unwrap();
                m.b2 = Tensor::zeros(m.b2.shape().to_vec()).unwrap();
            }
            crate::ktd::Coder::Identity => unreachable!(),
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        b.norm1.gamma = uniform(&mut rng, &[8], 1.0).unwrap().add_scalar(1.5);
        b.norm1.beta = uniform(&mut rng, &[8], 1.0).unwrap();
        let (x, _) = window(&config, 4);

        let embedded = {
            let tape = Tape::new();
            let bound = p.bind(&tape, false);
            bound.embed.forward(tape.constant(x.transpose().unwrap())).unwrap().value()
        };
        let n1 = &p.blocks[0].norm1;
        let n2 = &p.blocks[0].norm2;
        let want_hidden = embedded
            .layernorm(&n1.gamma, &n1.beta, LAYERNORM_EPS)
            .unwrap()
            .layernorm(&n2.gamma, &n2.beta, LAYERNORM_EPS)
            .unwrap();
        let tape = Tape::new();
        let bound = p.bind(&tape, false);
        let want = bound.project.forward(tape.constant(want_hidden)).unwrap().transpose().unwrap().value();
        assert!(forward(&x, &p).unwrap().max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn full_model_gradient_check() {
        let config = tiny_config();
        let mut p = ModelParams::init(&config).unwrap();
        // away from uniform lag weights, where Q and K only enter through row sums
        p.blocks[0].vca.lambda = uniform(&mut ChaCha8Rng::seed_from_u64(8), &[8], 1.0).unwrap();
        let (x, y) = window(&config, 5);
        let named = p.to_named();
        let report = grad_check(
            |tape, vars| {
                let mut it = vars.iter().copied();
                let bound = p.map_named("", &mut |_, _| Ok(it.next().unwrap()))?;
                let out = forward_tape(tape.constant(x.clone()), &bound)?;
                loss_mse_tape(out.forecast, &y)
            },
            &named,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:#?}");
        assert_eq!(report.groups.len(), named.len());
    }

    #[test]
    fn names_are_unique_and_dotted() {
        let config = ModelConfig { blocks: 2, ..tiny_config() };
        let names: Vec<String> = ModelParams::init(&config).unwrap().to_named().into_iter().map(|(n, _)| n).collect();
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        for want in ["embed.w1", "block.0.vca.w_q", "block.1.ktd.encoder.w1", "block.1.norm2.beta", "project.b2"] {
            assert!(names.iter().any(|n| n == want), "{want} missing from {names:?}");
        }
    }

    #[test]
    fn named_round_trip_and_determinism() {
        let config = tiny_config();
        let a = ModelParams::init(&config).unwrap();
        assert_eq!(ModelParams::init(&config).unwrap(), a);
        let back = ModelParams::from_named(&config, &a.to_named()).unwrap();
        assert_eq!(back, a);
        let mut broken = a.to_named();
        broken[0].1 = Tensor::zeros([2, 2]).unwrap();
        assert!(ModelParams::from_named(&config, &broken).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { segment_len: 3, ..tiny_config() }.validate().is_err());
        assert!(ModelConfig { segment_len: 8, ..tiny_config() }.validate().is_err());
        assert!(ModelConfig { n_vars: 0, ..tiny_config() }.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = uniform(&mut rng, &[5, 3], 1.0).unwrap();
        assert_eq!(loss_mse(&a, &a).unwrap(), 0.0);
        assert!((loss_mse(&a.add_scalar(1.0), &a).unwrap() - 1.0).abs() < 1e-15);
        let b = uniform(&mut rng, &[5, 3], 1.0).unwrap();
        let mut acc = 0.0;
        for i in 0..5 {
            for j in 0..3 {
                let d = a.get(&[i, j]) - b.get(&[i, j]);
                acc += d * d;
            }
        }
        assert!((loss_mse(&a, &b).unwrap() - acc / 15.0).abs() < 1e-12);
        assert!(loss_mse(&a, &Tensor::zeros([3, 5]).unwrap()).is_err());
    }
}
