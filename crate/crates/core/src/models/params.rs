use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, QkvMode, Variant, BANK_FILTERS, CNN_ROWS};
use crate::tensor::init::xavier_with;
use crate::{Error, Result, Tape, Tensor, Var};

/// Learning-rate policy a parameter follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Group {
    Cnn,
    Encoder,
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Xavier,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: Group,
    pub init: Init,
}

impl ParamSpec {
    fn new(name: String, shape: Vec<usize>, group: Group, init: Init) -> Self {
        Self {
            name,
            shape,
            group,
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub const QKV_BANKS: [&str; 3] = ["h", "s", "v"];
pub const CNN_REPLICAS: [&str; 3] = ["cnn_q", "cnn_k", "cnn_v"];
pub const KIM_MAPS: [&str; 3] = ["c", "d", "k"];

fn cnn_block(out: &mut Vec<ParamSpec>, prefix: &str, cfg: &ModelConfig) {
    let l = cfg.filter_length;
    for bank in QKV_BANKS {
        let (w, b) = match cfg.qkv_mode {
            QkvMode::Full => (vec![BANK_FILTERS, cfg.n_layers, l], vec![BANK_FILTERS]),
            QkvMode::Literal => (vec![1, BANK_FILTERS, l], vec![1]),
        };
        out.push(ParamSpec::new(
            format!("{prefix}.{bank}.w"),
            w,
            Group::Cnn,
            Init::Xavier,
        ));
        out.push(ParamSpec::new(format!("{prefix}.{bank}.b"), b, Group::Cnn, Init::Zeros));
    }
}

fn layer_norm(out: &mut Vec<ParamSpec>, prefix: &str, width: usize) {
    out.push(ParamSpec::new(
        format!("{prefix}.gain"),
        vec![width],
        Group::Encoder,
        Init::Ones,
    ));
    out.push(ParamSpec::new(
        format!("{prefix}.shift"),
        vec![width],
        Group::Encoder,
        Init::Zeros,
    ));
}

fn attention(out: &mut Vec<ParamSpec>, prefix: &str, cfg: &ModelConfig, w_o: Vec<usize>) {
    let inner = cfg.heads * cfg.d_k;
    for name in ["w_q", "w_k"] {
        out.push(ParamSpec::new(
            format!("{prefix}.{name}"),
            vec![cfg.d_model, inner],
            Group::Encoder,
            Init::Xavier,
        ));
    }
    out.push(ParamSpec::new(
        format!("{prefix}.w_v"),
        vec![cfg.d_model, cfg.heads * cfg.d_v()],
        Group::Encoder,
        Init::Xavier,
    ));
    out.push(ParamSpec::new(
        format!("{prefix}.w_o"),
        w_o,
        Group::Encoder,
        Init::Xavier,
    ));
}

fn encoders(out: &mut Vec<ParamSpec>, cfg: &ModelConfig) {
    let rows = cfg.sequence_len();
    let concat = cfg.heads * cfg.d_v();
    attention(out, "enc1", cfg, vec![concat, cfg.hidden]);
    layer_norm(out, "enc1.ln1", cfg.hidden);
    layer_norm(out, "enc1.ln2", cfg.hidden);
    for name in ["in_q", "in_k", "in_v"] {
        out.push(ParamSpec::new(
            format!("enc2.{name}"),
            vec![cfg.hidden, cfg.d_model],
            Group::Encoder,
            Init::Xavier,
        ));
    }
    attention(out, "enc2", cfg, vec![rows * concat, cfg.outdim]);
    layer_norm(out, "enc2.ln1", cfg.outdim);
    layer_norm(out, "enc2.ln2", cfg.outdim);
}

fn head(out: &mut Vec<ParamSpec>, features: usize, cfg: &ModelConfig) {
    out.push(ParamSpec::new(
        "head.w".into(),
        vec![features, cfg.n_classes],
        Group::Head,
        Init::Xavier,
    ));
}

/// Every parameter of the configured variant, in a fixed order.
///
/// Weight matrices are stored `[in, out]` and applied as `x · W`. The per-head
/// attention projections of a layer are stored side by side: columns
/// `k·d_k .. (k+1)·d_k` of `w_q` are head `k`'s query projection.
pub fn catalog(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    match cfg.variant {
        Variant::CnnTransEnc => {
            for replica in CNN_REPLICAS {
                cnn_block(&mut out, replica, cfg);
            }
            encoders(&mut out, cfg);
            head(&mut out, cfg.outdim, cfg);
        }
        Variant::TransEnc => {
            for name in ["w_q", "w_k", "w_v"] {
                out.push(ParamSpec::new(
                    format!("proj.{name}"),
                    vec![cfg.hidden, cfg.d_model],
                    Group::Encoder,
                    Init::Xavier,
                ));
            }
            encoders(&mut out, cfg);
            head(&mut out, cfg.outdim, cfg);
        }
        Variant::CnnCls => {
            cnn_block(&mut out, "cnn", cfg);
            head(&mut out, CNN_ROWS * cfg.d_model, cfg);
        }
        Variant::KimCnn => {
            for (map, &w) in KIM_MAPS.iter().zip(&cfg.kim_windows) {
                out.push(ParamSpec::new(
                    format!("kim.{map}.w"),
                    vec![1, 1, w],
                    Group::Cnn,
                    Init::Xavier,
                ));
                out.push(ParamSpec::new(format!("kim.{map}.b"), vec![1], Group::Cnn, Init::Zeros));
            }
            head(&mut out, cfg.kim_feature_len(), cfg);
        }
        Variant::Softmax => head(&mut out, cfg.hidden, cfg),
    }
    out
}

/// Named, shaped parameters with their learning-rate groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParameterStore {
    /// Xavier-initialized weights, zero biases and shifts, unit gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = catalog(cfg);
        let tensors = specs
            .iter()
            .map(|s| match s.init {
                Init::Xavier => xavier_with(&s.shape, &mut rng),
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::filled(&s.shape, 1.0),
            })
            .collect();
        Ok(Self::assemble(specs, tensors))
    }

    /// Store with the catalog of `cfg` and caller-supplied tensors (by name).
    pub fn from_named(cfg: &ModelConfig, mut named: BTreeMap<String, Tensor>) -> Result<Self> {
        cfg.validate()?;
        let specs = catalog(cfg);
        let mut tensors = Vec::with_capacity(specs.len());
        for s in &specs {
            let t = named
                .remove(&s.name)
                .ok_or_else(|| Error::Validation(format!("missing parameter {}", s.name)))?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Dimension {
                    op: "parameter",
                    left: s.shape.clone(),
                    right: t.shape().to_vec(),
                });
            }
            tensors.push(t);
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::Validation(format!("unexpected parameter {extra}")));
        }
        Ok(Self::assemble(specs, tensors))
    }

    fn assemble(specs: Vec<ParamSpec>, tensors: Vec<Tensor>) -> Self {
        let index = specs.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        Self { specs, tensors, index }
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter as a borrowed leaf of `tape`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, requires_grad: bool) -> Bound<'a> {
        let vars = self.tensors.iter().map(|t| tape.leaf_ref(t, requires_grad)).collect();
        Bound {
            vars,
            index: &self.index,
        }
    }
}

/// Tape handles for the parameters of a store, addressable by name.
pub struct Bound<'s> {
    vars: Vec<Var>,
    index: &'s BTreeMap<String, usize>,
}

impl<'s> Bound<'s> {
    /// Handle of `name`. The catalog and the model code are kept in step, so
    /// an unknown name is a bug and panics.
    pub fn get(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("parameter {name} is not in the catalog"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Wraps leaves created outside a store; `names[i]` addresses `vars[i]`.
    pub fn from_parts(vars: Vec<Var>, index: &'s BTreeMap<String, usize>) -> Self {
        Self { vars, index }
    }
}

impl ParameterStore {
    pub fn index(&self) -> &BTreeMap<String, usize> {
        &self.index
    }
}
