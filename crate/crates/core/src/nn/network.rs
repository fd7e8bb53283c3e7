use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, Aux, LayerSpec};
use super::Tensor;
use crate::error::{Error, Result};

/// Ordered layer stack with its weights. Shapes are validated once at build
/// time; forward passes only re-check the input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the output.
    shapes: Vec<Vec<usize>>,
    params: Vec<Vec<Tensor>>,
    rng_seed: u64,
}

/// Activations recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[i]` is the input of layer `i`; `acts[n]` is the network output.
    acts: Vec<Vec<f64>>,
    aux: Vec<Aux>,
    output_shape: Vec<usize>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least the input is cached")
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    /// Input of layer `i` (for `i == layer count`, the network output).
    pub fn activation(&self, i: usize) -> &[f64] {
        &self.acts[i]
    }
}

/// Parameter gradients laid out like [`Network::params`].
pub type ParamGrads = Vec<Vec<Tensor>>;

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ParamGrads,
    pub input: Tensor,
}

impl Network {
    /// Validates the shape chain and draws He-uniform weights from `seed`.
    pub fn build(input_shape: &[usize], layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let shapes = Self::shape_chain(input_shape, &layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layers
            .iter()
            .zip(&shapes)
            .map(|(spec, shape)| {
                let fan_in = spec.fan_in(shape).max(1);
                let limit = (6.0 / fan_in as f64).sqrt();
                spec.param_shapes(shape)
                    .into_iter()
                    .enumerate()
                    .map(|(i, ps)| {
                        let mut t = Tensor::zeros(&ps);
                        if i == 0 {
                            for v in t.values_mut() {
                                *v = rng.gen_range(-limit..limit);
                            }
                        }
                        t
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            shapes,
            params,
            rng_seed: seed,
        })
    }

    /// Rebuilds a network from stored parameters, validating every shape.
    pub fn from_parts(
        input_shape: &[usize],
        layers: Vec<LayerSpec>,
        params: Vec<Vec<Tensor>>,
        rng_seed: u64,
    ) -> Result<Self> {
        let shapes = Self::shape_chain(input_shape, &layers)?;
        if params.len() != layers.len() {
            return Err(Error::Shape(format!(
                "{} parameter groups for {} layers",
                params.len(),
                layers.len()
            )));
        }
        for (i, (spec, group)) in layers.iter().zip(&params).enumerate() {
            let expected = spec.param_shapes(&shapes[i]);
            let got: Vec<Vec<usize>> = group.iter().map(|t| t.shape().to_vec()).collect();
            if expected != got {
                return Err(Error::Shape(format!(
                    "layer {i}: parameter shapes {got:?}, expected {expected:?}"
                )));
            }
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            shapes,
            params,
            rng_seed,
        })
    }

    /// Shape after every layer, or the first composition error.
    pub fn shape_chain(input_shape: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("invalid input shape {input_shape:?}")));
        }
        let mut shapes = vec![input_shape.to_vec()];
        for (i, spec) in layers.iter().enumerate() {
            let next = spec
                .output_shape(shapes.last().unwrap())
                .map_err(|e| Error::Shape(format!("layer {i} ({spec:?}): {e}")))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Vec<Tensor>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<Tensor>] {
        &mut self.params
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().flatten().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> ParamGrads {
        self.params
            .iter()
            .map(|g| g.iter().map(|t| Tensor::zeros(t.shape())).collect())
            .collect()
    }

    /// Rounds every weight to the nearest `f32`, matching what a checkpoint stores.
    pub fn snap_to_f32(&mut self) {
        for t in self.params.iter_mut().flatten() {
            for v in t.values_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<ForwardCache> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "network expects input {:?}, got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        acts.push(input.values().to_vec());
        for (i, spec) in self.layers.iter().enumerate() {
            let (y, a) = layers::forward(
                spec,
                &self.params[i],
                &self.shapes[i],
                &self.shapes[i + 1],
                &acts[i],
            );
            acts.push(y);
            aux.push(a);
        }
        Ok(ForwardCache {
            acts,
            aux,
            output_shape: self.output_shape().to_vec(),
        })
    }

    /// Output tensor only.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let cache = self.forward(input)?;
        Tensor::new(cache.output_shape.clone(), cache.acts.last().unwrap().clone())
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.aux.len() != self.layers.len()
            || cache.acts.len() != self.layers.len() + 1
            || cache.output_shape != *self.output_shape()
        {
            return Err(Error::State(
                "forward cache does not belong to this network".into(),
            ));
        }
        for (act, shape) in cache.acts.iter().zip(&self.shapes) {
            if act.len() != shape.iter().product::<usize>() {
                return Err(Error::State(
                    "forward cache does not belong to this network".into(),
                ));
            }
        }
        Ok(())
    }

    /// Back-propagates `grad` (with respect to the input of layer `upto`)
    /// through layers `upto-1 ..= 0`.
    fn backward_range(
        &self,
        cache: &ForwardCache,
        upto: usize,
        grad: &[f64],
        mut acc: Option<&mut ParamGrads>,
    ) -> Result<Vec<f64>> {
        self.check_cache(cache)?;
        let expected = self.shapes[upto].iter().product::<usize>();
        if grad.len() != expected {
            return Err(Error::Shape(format!(
                "gradient has {} values, expected {}",
                grad.len(),
                expected
            )));
        }
        let mut g = grad.to_vec();
        for i in (0..upto).rev() {
            let layer_acc = acc.as_deref_mut().map(|a| a[i].as_mut_slice());
            g = layers::backward(
                &self.layers[i],
                &self.params[i],
                &self.shapes[i],
                &self.shapes[i + 1],
                &cache.acts[i],
                &cache.acts[i + 1],
                &cache.aux[i],
                &g,
                layer_acc,
            );
        }
        Ok(g)
    }

    /// Full backward pass from a gradient on the network output.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &Tensor) -> Result<Gradients> {
        let mut params = self.zero_grads();
        let input = self.backward_range(cache, self.layers.len(), loss_grad.values(), Some(&mut params))?;
        Ok(Gradients {
            params,
            input: Tensor::new(self.input_shape.clone(), input)?,
        })
    }

    fn softmax_head(&self) -> Result<usize> {
        match self.layers.last() {
            Some(LayerSpec::Softmax) => Ok(self.layers.len() - 1),
            _ => Err(Error::State(
                "logit gradients need a network ending in softmax".into(),
            )),
        }
    }

    /// Logits feeding the final softmax.
    pub fn logits<'a>(&self, cache: &'a ForwardCache) -> Result<&'a [f64]> {
        let head = self.softmax_head()?;
        self.check_cache(cache)?;
        Ok(&cache.acts[head])
    }

    /// Backward pass starting from a gradient on the logits (the input of a
    /// trailing softmax), accumulating parameter gradients into `acc`.
    pub fn backward_logits_into(
        &self,
        cache: &ForwardCache,
        grad_logits: &[f64],
        acc: Option<&mut ParamGrads>,
    ) -> Result<Vec<f64>> {
        let head = self.softmax_head()?;
        self.backward_range(cache, head, grad_logits, acc)
    }

    pub fn backward_logits(&self, cache: &ForwardCache, grad_logits: &[f64]) -> Result<Gradients> {
        let mut params = self.zero_grads();
        let input = self.backward_logits_into(cache, grad_logits, Some(&mut params))?;
        Ok(Gradients {
            params,
            input: Tensor::new(self.input_shape.clone(), input)?,
        })
    }

    /// Gradient with respect to the input only, skipping weight gradients.
    pub fn input_grad_from_logits(&self, cache: &ForwardCache, grad_logits: &[f64]) -> Result<Vec<f64>> {
        self.backward_logits_into(cache, grad_logits, None)
    }
}
