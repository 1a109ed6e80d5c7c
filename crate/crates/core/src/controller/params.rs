use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{AdamConfig, Array, Real};

/// Number of hand-built features per layer before the learned projection.
pub const LAYER_FEATURES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Layer embedding length.
    pub embed_dim: usize,
    /// LSTM hidden size per direction.
    pub hidden: usize,
    /// Hidden width of every actor head.
    pub head_hidden: usize,
    pub learning_rate: Real,
    pub baseline_decay: Real,
    pub reward_cap: Real,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            embed_dim: 16,
            hidden: 16,
            head_hidden: 16,
            learning_rate: 1e-3,
            baseline_decay: 0.9,
            reward_cap: 1e6,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden == 0 || self.head_hidden == 0 {
            return Err(Error::InvalidArgument("policy sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::InvalidArgument(format!("baseline decay {} outside [0, 1)", self.baseline_decay)));
        }
        if !(self.reward_cap > 0.0) {
            return Err(Error::InvalidArgument(format!("reward cap {} must be positive", self.reward_cap)));
        }
        AdamConfig::with_lr(self.learning_rate).validate()
    }
}

macro_rules! policy_weights {
    ($($name:ident),* $(,)?) => {
        /// Every controller weight, generic over storage so the same layout
        /// holds arrays and their tape nodes.
        #[derive(Clone, Debug, PartialEq)]
        pub struct Weights<T> {
            $(pub $name: T,)*
        }

        impl<T> Weights<T> {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Weights<U> {
                Weights { $($name: f(&self.$name),)* }
            }

            pub fn refs(&self) -> Vec<&T> {
                vec![$(&self.$name),*]
            }

            pub fn refs_mut(&mut self) -> Vec<&mut T> {
                vec![$(&mut self.$name),*]
            }

            pub(crate) fn from_vec(values: Vec<T>) -> Option<Self> {
                if values.len() != Self::NAMES.len() {
                    return None;
                }
                let mut it = values.into_iter();
                Some(Weights { $($name: it.next()?,)* })
            }
        }
    };
}

policy_weights!(
    embed,
    fwd_wx, fwd_wh, fwd_b,
    bwd_wx, bwd_wh, bwd_b,
    sel_w1, sel_b1, sel_w2, sel_b2,
    wid_w1, wid_b1, wid_w2, wid_b2,
    deep_a, deep_ab, deep_type_w, deep_type_b,
    deep_kind_emb, deep_uk, deep_uh, deep_ub,
    deep_ps, deep_ph, deep_pb, deep_v, deep_vb, deep_front,
);

pub type PolicyParams = Weights<Array>;

impl PolicyParams {
    /// Expected shape of every array, in field order.
    pub fn shapes(cfg: &PolicyConfig) -> Weights<Vec<usize>> {
        let (e, h, k) = (cfg.embed_dim, cfg.hidden, cfg.head_hidden);
        let s = 2 * h;
        Weights {
            embed: vec![LAYER_FEATURES, e],
            fwd_wx: vec![e, 4 * h],
            fwd_wh: vec![h, 4 * h],
            fwd_b: vec![4 * h],
            bwd_wx: vec![e, 4 * h],
            bwd_wh: vec![h, 4 * h],
            bwd_b: vec![4 * h],
            sel_w1: vec![s, k],
            sel_b1: vec![k],
            sel_w2: vec![k, 3],
            sel_b2: vec![3],
            wid_w1: vec![s, k],
            wid_b1: vec![k],
            wid_w2: vec![k, 1],
            wid_b2: vec![1],
            deep_a: vec![s, k],
            deep_ab: vec![k],
            deep_type_w: vec![k, 3],
            deep_type_b: vec![3],
            deep_kind_emb: vec![3, k],
            deep_uk: vec![k, k],
            deep_uh: vec![k, k],
            deep_ub: vec![k],
            deep_ps: vec![s, k],
            deep_ph: vec![k, k],
            deep_pb: vec![k],
            deep_v: vec![k, 1],
            deep_vb: vec![1],
            deep_front: vec![s],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` matrices, zero biases, and a small random
    /// kind table and front slot vector.
    pub fn init(cfg: &PolicyConfig, rng: &mut impl Rng) -> Self {
        let shapes = Self::shapes(cfg);
        let names = Self::NAMES;
        let arrays = shapes
            .refs()
            .into_iter()
            .zip(names)
            .map(|(shape, name)| {
                let is_bias = shape.len() == 1 && *name != "deep_front";
                if is_bias {
                    return Array::zeros(shape);
                }
                let fan_in = if shape.len() == 2 && *name != "deep_kind_emb" { shape[0] } else { shape[shape.len() - 1] };
                let bound = 1.0 / (fan_in as Real).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
                Array::from_vec(shape, data).expect("shape product")
            })
            .collect();
        Weights::from_vec(arrays).expect("field count")
    }

    pub fn zeros(cfg: &PolicyConfig) -> Self {
        Self::shapes(cfg).map(|s| Array::zeros(s))
    }

    pub fn param_count(&self) -> usize {
        self.refs().iter().map(|a| a.len()).sum()
    }

    pub fn check(&self, cfg: &PolicyConfig) -> Result<()> {
        for ((a, want), name) in self.refs().into_iter().zip(Self::shapes(cfg).refs()).zip(Self::NAMES) {
            if a.shape() != want.as_slice() {
                return Err(Error::shape(name, a.shape(), want));
            }
        }
        Ok(())
    }
}
