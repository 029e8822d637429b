//! Small layer building blocks shared by the models.

use mgr_autodiff::{DiffArray, Init, ParamId, ParamStore, Real, Tape, Var};

use crate::error::Result;

/// Affine map `x·W + b` with `W: in×out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.add(
            &format!("{name}.weight"),
            &[in_dim, out_dim],
            Init::Uniform { fan_in: in_dim },
        )?;
        let bias = if bias {
            Some(store.add(&format!("{name}.bias"), &[out_dim], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        Ok(match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_bias(y, b)?
            }
            None => y,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Two affine layers with GELU between them.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub first: Linear,
    pub second: Linear,
}

impl FeedForward {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            first: Linear::new(store, &format!("{name}.0"), in_dim, hidden, true)?,
            second: Linear::new(store, &format!("{name}.1"), hidden, out_dim, true)?,
        })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let h = self.first.forward(tape, store, x)?;
        let h = tape.gelu(h);
        self.second.forward(tape, store, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.first.params();
        p.extend(self.second.params());
        p
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(&format!("{name}.gamma"), &[dim], Init::Constant(1.0))?,
            beta: store.add(&format!("{name}.beta"), &[dim], Init::Zeros)?,
        })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        Ok(tape.layer_norm(x, g, b)?)
    }
}

/// Copies `f32` feature rows into a constant array of the tape's precision.
pub fn feature_array<T: Real>(rows: usize, cols: usize, data: &[f32]) -> Result<DiffArray<T>> {
    Ok(DiffArray::new(
        &[rows, cols],
        data.iter().map(|&x| T::from_f64c(f64::from(x))).collect(),
    )?)
}
