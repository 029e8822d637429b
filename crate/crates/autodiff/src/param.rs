use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::DiffArray;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::Tape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

/// Initial values for a new parameter.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform on `(-1/√fan_in, 1/√fan_in)`.
    Uniform {
        fan_in: usize,
    },
    /// Uniform on `(-bound, bound)`.
    Symmetric(f64),
    Zeros,
    Constant(f64),
}

/// Adam moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub array: DiffArray<T>,
    pub state: AdamState<T>,
    pub frozen: bool,
}

/// Named trainable arrays, in registration order.
///
/// Each parameter draws its initial values from a generator seeded by
/// `(seed, name)`, so adding or removing one parameter never changes the
/// initialization of another.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    seed: u64,
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

impl<T: Real> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let numel: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name.as_bytes()));
        let values: Vec<T> = match init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..numel)
                    .map(|_| T::from_f64c(rng.gen_range(-bound..bound)))
                    .collect()
            }
            Init::Symmetric(bound) => (0..numel)
                .map(|_| T::from_f64c(rng.gen_range(-bound..bound)))
                .collect(),
            Init::Zeros => vec![T::zero(); numel],
            Init::Constant(c) => vec![T::from_f64c(c); numel],
        };
        let mut array = DiffArray::new(shape, values)?;
        array.requires_grad = true;
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            array,
            state: AdamState {
                m: vec![T::zero(); numel],
                v: vec![T::zero(); numel],
                step: 0,
            },
            frozen: false,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    /// Ids of all parameters whose name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| self.get(id).name.starts_with(prefix))
            .collect()
    }

    pub fn freeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.frozen = true);
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.array.grad = None);
    }

    /// Adds the gradients a tape computed for its bound parameters.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>) {
        for &(id, var) in tape.bindings() {
            if let Some(g) = tape.grad(var) {
                let p = &mut self.params[id.0];
                if !p.frozen {
                    p.array.accumulate_grad(g);
                }
            }
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.array.numel()).sum()
    }
}
