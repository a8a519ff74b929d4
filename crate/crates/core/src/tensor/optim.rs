//! Named parameter collections and classical-momentum SGD.

use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// A weight/bias pair with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub weight: Tensor,
    pub bias: Tensor,
    pub vel_weight: Tensor,
    pub vel_bias: Tensor,
}

impl Param {
    pub fn new(weight: Tensor, bias: Tensor) -> Self {
        let vel_weight = Tensor::zeros(weight.shape());
        let vel_bias = Tensor::zeros(bias.shape());
        Self {
            weight,
            bias,
            vel_weight,
            vel_bias,
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, weight: Tensor, bias: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::dim(format!("duplicate parameter name {name}")));
        }
        self.params.insert(name, Param::new(weight, bias));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::dim(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::dim(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights and biases.
    pub fn param_count(&self) -> usize {
        self.params.values().map(Param::len).sum()
    }

    /// Moves every entry of `other` into `self`.
    pub fn extend(&mut self, other: ParamSet) -> Result<()> {
        for (name, p) in other.params {
            if self.params.contains_key(&name) {
                return Err(Error::dim(format!("duplicate parameter name {name}")));
            }
            self.params.insert(name, p);
        }
        Ok(())
    }

    /// Entries whose name starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamSet {
        ParamSet {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients keyed like a [`ParamSet`]; absent entries are not updated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradSet {
    grads: BTreeMap<String, ParamGrad>,
}

impl GradSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds into an existing entry, or inserts a new one.
    pub fn accumulate(&mut self, name: &str, weight: Tensor, bias: Tensor) -> Result<()> {
        match self.grads.get_mut(name) {
            Some(g) => {
                g.weight.add_assign(&weight)?;
                g.bias.add_assign(&bias)?;
            }
            None => {
                self.grads
                    .insert(name.to_string(), ParamGrad { weight, bias });
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamGrad> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamGrad)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.grads.values_mut() {
            g.weight.scale(k);
            g.bias.scale(k);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    /// Applies one step to every parameter that has a gradient:
    /// `v ← μ·v + (g + λ·w)`, `w ← w − lr·v`. Weight decay only touches weights.
    pub fn step(&self, params: &mut ParamSet, grads: &GradSet) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            g.weight.check_same_shape(&p.weight)?;
            g.bias.check_same_shape(&p.bias)?;
            update(&mut p.weight, &mut p.vel_weight, &g.weight, self.lr, self.momentum, self.weight_decay);
            update(&mut p.bias, &mut p.vel_bias, &g.bias, self.lr, self.momentum, 0.0);
        }
        Ok(())
    }
}

fn update(w: &mut Tensor, v: &mut Tensor, g: &Tensor, lr: f64, momentum: f64, decay: f64) {
    for ((wi, vi), gi) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
        *vi = momentum * *vi + gi + decay * *wi;
        *wi -= lr * *vi;
    }
}

/// One classical-momentum SGD step with no weight decay.
pub fn sgd_momentum_step(params: &mut ParamSet, grads: &GradSet, lr: f64, momentum: f64) -> Result<()> {
    Sgd {
        lr,
        momentum,
        weight_decay: 0.0,
    }
    .step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("l", Tensor::full(&[1], w), Tensor::zeros(&[1])).unwrap();
        p
    }

    fn grad(g: f64) -> GradSet {
        let mut gs = GradSet::new();
        gs.accumulate("l", Tensor::full(&[1], g), Tensor::zeros(&[1])).unwrap();
        gs
    }

    #[test]
    fn plain_sgd_without_momentum() {
        let mut p = single(1.0);
        sgd_momentum_step(&mut p, &grad(2.0), 0.01, 0.0).unwrap();
        assert!((p.get("l").unwrap().weight.data()[0] - (1.0 - 0.02)).abs() < 1e-15);
    }

    #[test]
    fn momentum_unrolls_over_two_steps() {
        // v1 = g, v2 = 0.9 g + g, total = lr·g·(1 + 1.9)
        let mut p = single(0.0);
        let g = 0.7;
        sgd_momentum_step(&mut p, &grad(g), 0.01, 0.9).unwrap();
        sgd_momentum_step(&mut p, &grad(g), 0.01, 0.9).unwrap();
        let w = p.get("l").unwrap().weight.data()[0];
        assert!((w + 0.01 * g * 2.9).abs() < 1e-15, "{w}");
    }

    #[test]
    fn zero_grad_and_zero_lr_are_identity() {
        let mut p = single(0.4);
        let before = p.clone();
        sgd_momentum_step(&mut p, &grad(0.0), 0.01, 0.9).unwrap();
        assert_eq!(p, before);
        let mut q = single(0.4);
        sgd_momentum_step(&mut q, &grad(3.0), 0.0, 0.9).unwrap();
        assert_eq!(q.get("l").unwrap().weight, before.get("l").unwrap().weight);
    }

    #[test]
    fn params_without_grads_are_untouched() {
        let mut p = single(1.0);
        p.insert("frozen", Tensor::full(&[2], 5.0), Tensor::zeros(&[2])).unwrap();
        sgd_momentum_step(&mut p, &grad(1.0), 0.1, 0.9).unwrap();
        assert_eq!(p.get("frozen").unwrap().weight.data(), &[5.0, 5.0]);
    }

    #[test]
    fn shape_mismatch_and_duplicates_are_errors() {
        let mut p = single(1.0);
        let mut g = GradSet::new();
        g.accumulate("l", Tensor::zeros(&[2]), Tensor::zeros(&[1])).unwrap();
        assert!(matches!(
            sgd_momentum_step(&mut p, &g, 0.1, 0.0),
            Err(Error::Dimension(_))
        ));
        assert!(p.insert("l", Tensor::zeros(&[1]), Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn weight_decay_adds_l2_term() {
        let mut p = single(2.0);
        let sgd = Sgd {
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.5,
        };
        sgd.step(&mut p, &grad(0.0)).unwrap();
        assert!((p.get("l").unwrap().weight.data()[0] - 1.9).abs() < 1e-15);
    }
}
