//! Named parameters, initialization and the basic layers shared by the networks.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{param_err, shape_err, Result};
use crate::tensor::{Gradients, Graph, Real, Tensor, Var};

/// Negative-side slope of every leaky activation.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Model parameters under stable hierarchical names, kept in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(param_err(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self.id(name).ok_or_else(|| param_err(format!("unknown parameter {name}")))?;
        if self.values[id.0].shape() != value.shape() {
            return Err(shape_err(format!(
                "parameter {name}: stored {:?}, given {:?}",
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

impl<T: Real> Graph<T> {
    /// Records a parameter as a differentiable leaf, once per graph.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id.0) {
            return v;
        }
        let v = self.input(store.get(id).clone(), true);
        self.params.insert(id.0, v);
        v
    }
}

impl<T: Real> Gradients<T> {
    /// Gradient of a stored parameter, if it took part in the graph.
    pub fn param_grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.param(id.0)
    }
}

/// Forward-pass context: the tape, the parameters, and the dropout source.
pub struct Ctx<'a, T: Real> {
    pub graph: Graph<T>,
    pub params: &'a ParamStore<T>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'a, T: Real> Ctx<'a, T> {
    /// Training context: gradients on, dropout active when `rate > 0`.
    pub fn train(params: &'a ParamStore<T>, dropout_rate: f64, rng: ChaCha8Rng) -> Self {
        let dropout = (dropout_rate > 0.0).then_some((dropout_rate, rng));
        Self { graph: Graph::new(), params, dropout }
    }

    /// Gradients on, dropout off.
    pub fn differentiable(params: &'a ParamStore<T>) -> Self {
        Self { graph: Graph::new(), params, dropout: None }
    }

    /// Gradients and dropout off.
    pub fn inference(params: &'a ParamStore<T>) -> Self {
        Self { graph: Graph::inference(), params, dropout: None }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        self.graph.param(self.params, id)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.graph.value(v)
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((rate, rng)) = self.dropout.as_mut() else { return Ok(x) };
        let keep = 1.0 - *rate;
        let scale = T::from_f64c(1.0 / keep);
        let mask = Tensor::from_fn(self.graph.shape(x), |_| if rng.random::<f64>() < keep { scale } else { T::zero() });
        self.graph.mul_const(x, mask)
    }
}

/// Draws `U(-bound, bound)` values, the fan-in scaled default used by all layers.
pub fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64c(rng.random_range(-bound..=bound)))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, &[cout, cin, k, k], bound))?;
        let bias = store.add(format!("{name}.bias"), uniform(rng, &[cout], bound))?;
        Ok(Self { weight, bias, stride, pad: k / 2 })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.p(self.weight);
        let b = ctx.p(self.bias);
        ctx.graph.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
    ) -> Result<Self> {
        let bound = 1.0 / (din as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, &[dout, din], bound))?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), uniform(rng, &[dout], bound))?) } else { None };
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.p(self.weight);
        let b = self.bias.map(|b| ctx.p(b));
        ctx.graph.linear(x, w, b)
    }
}
