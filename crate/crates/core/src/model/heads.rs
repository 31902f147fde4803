use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::init::glorot_uniform;
use crate::numerics::{ParamStore, Scalar, Tape, Tensor, Var};

pub const MLP_HIDDEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Fc,
    Mlp,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Fc => "fc",
            HeadKind::Mlp => "mlp",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fc" => Ok(HeadKind::Fc),
            "mlp" => Ok(HeadKind::Mlp),
            other => Err(Error::invalid(
                "head",
                format!("unknown head kind {other:?}"),
            )),
        }
    }
}

/// A prediction head reading `N x D` features and emitting raw `N x out`
/// scores. Parameters live in the shared store under `prefix`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Head {
    pub prefix: String,
    pub kind: HeadKind,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Head {
    pub fn new(prefix: impl Into<String>, kind: HeadKind, input: usize, output: usize) -> Self {
        Self {
            prefix: prefix.into(),
            kind,
            input,
            hidden: MLP_HIDDEN,
            output,
        }
    }

    fn layers(&self) -> Vec<(String, usize, usize)> {
        match self.kind {
            HeadKind::Fc => vec![(format!("{}.fc", self.prefix), self.input, self.output)],
            HeadKind::Mlp => vec![
                (format!("{}.hidden", self.prefix), self.input, self.hidden),
                (format!("{}.out", self.prefix), self.hidden, self.output),
            ],
        }
    }

    pub fn init_params<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        for (name, i, o) in self.layers() {
            store.insert(format!("{name}.weight"), glorot_uniform(&[i, o], i, o, rng));
            store.insert(format!("{name}.bias"), Tensor::zeros(&[o]));
        }
    }

    /// Recovers a head from the parameters stored under `prefix`.
    pub fn detect<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Option<Self> {
        if let Some(h) = store.by_name(&format!("{prefix}.hidden.weight")) {
            let o = store.by_name(&format!("{prefix}.out.weight"))?;
            return Some(Self {
                prefix: prefix.to_string(),
                kind: HeadKind::Mlp,
                input: h.value.shape()[0],
                hidden: h.value.shape()[1],
                output: o.value.shape()[1],
            });
        }
        let fc = store.by_name(&format!("{prefix}.fc.weight"))?;
        Some(Self::new(
            prefix,
            HeadKind::Fc,
            fc.value.shape()[0],
            fc.value.shape()[1],
        ))
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        features: Var,
    ) -> Result<Var> {
        let layers = self.layers();
        let mut x = features;
        for (i, (name, _, _)) in layers.iter().enumerate() {
            let missing = || Error::invalid("head", format!("missing parameters {name}"));
            let w = tape.param(
                store,
                store.id(&format!("{name}.weight")).ok_or_else(missing)?,
            )?;
            let b = tape.param(
                store,
                store.id(&format!("{name}.bias")).ok_or_else(missing)?,
            )?;
            x = tape.matmul(x, w)?;
            x = tape.add_row_bias(x, b)?;
            if i + 1 < layers.len() {
                x = tape.relu(x)?;
            }
        }
        Ok(x)
    }
}
