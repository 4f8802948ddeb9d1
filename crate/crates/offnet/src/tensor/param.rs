//! Named trainable parameters and their registry.

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use super::{Result, Tensor, TensorError};
use crate::rng::SplitMix64;

/// A leaf tensor with a dotted-path name and the optimizer's velocity buffer.
pub struct Parameter {
    name: String,
    tensor: Tensor,
    velocity: RefCell<Vec<f32>>,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn len(&self) -> usize {
        self.tensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensor.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn velocity(&self) -> std::cell::Ref<'_, Vec<f32>> {
        self.velocity.borrow()
    }

    pub fn velocity_mut(&self) -> std::cell::RefMut<'_, Vec<f32>> {
        self.velocity.borrow_mut()
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal(0, std), redrawn outside two standard deviations.
    TruncNormal(f64),
}

struct SetCore {
    params: RefCell<Vec<Rc<Parameter>>>,
    names: RefCell<HashSet<String>>,
    rng: RefCell<SplitMix64>,
}

/// Registry of all parameters of one model, in creation order.
pub struct ParamSet {
    core: Rc<SetCore>,
}

impl ParamSet {
    pub fn new(seed: u64) -> Self {
        Self {
            core: Rc::new(SetCore {
                params: RefCell::new(Vec::new()),
                names: RefCell::new(HashSet::new()),
                rng: RefCell::new(SplitMix64::new(seed).split(0x696e_6974)),
            }),
        }
    }

    /// Builder rooted at the empty prefix.
    pub fn root(&self) -> ParamBuilder {
        ParamBuilder {
            core: Rc::clone(&self.core),
            prefix: String::new(),
        }
    }

    pub fn parameters(&self) -> Vec<Rc<Parameter>> {
        self.core.params.borrow().clone()
    }

    pub fn find(&self, name: &str) -> Option<Rc<Parameter>> {
        self.core
            .params
            .borrow()
            .iter()
            .find(|p| p.name == name)
            .cloned()
    }

    /// Total number of scalar entries across all parameters.
    pub fn count_scalars(&self) -> usize {
        self.core.params.borrow().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) {
        for p in self.core.params.borrow().iter() {
            p.tensor.zero_grad();
        }
    }
}

/// Path-prefixed handle for creating parameters, in the spirit of a
/// variable builder: `vb.pp("stage1").pp("attn").take("q.weight", ...)`
/// yields the dotted name `stage1.attn.q.weight`.
#[derive(Clone)]
pub struct ParamBuilder {
    core: Rc<SetCore>,
    prefix: String,
}

impl ParamBuilder {
    pub fn pp(&self, segment: &str) -> ParamBuilder {
        let prefix = if self.prefix.is_empty() {
            segment.to_string()
        } else {
            format!("{}.{}", self.prefix, segment)
        };
        ParamBuilder {
            core: Rc::clone(&self.core),
            prefix,
        }
    }

    pub fn take(&self, name: &str, shape: &[usize], init: Init) -> Result<Rc<Parameter>> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        if !self.core.names.borrow_mut().insert(full.clone()) {
            return Err(TensorError::Contract(format!(
                "duplicate parameter name {full}"
            )));
        }
        let count: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0f32; count],
            Init::Ones => vec![1.0f32; count],
            Init::TruncNormal(std) => {
                let mut rng = self.core.rng.borrow_mut();
                (0..count)
                    .map(|_| loop {
                        let z = rng.next_normal();
                        if z.abs() <= 2.0 {
                            return (z * std) as f32;
                        }
                    })
                    .collect()
            }
        };
        let tensor = Tensor::variable(data, shape)?;
        let param = Rc::new(Parameter {
            name: full,
            tensor,
            velocity: RefCell::new(vec![0.0f32; count]),
        });
        self.core.params.borrow_mut().push(Rc::clone(&param));
        Ok(param)
    }
}
