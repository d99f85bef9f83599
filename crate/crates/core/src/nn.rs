//! Parameter storage and the handful of layers the models are built from.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::{normal, uniform, DetRng};
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter arrays, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Overwrites every array with the same-named array from `other`.
    pub fn load_from(&mut self, other: &[(String, Tensor)]) -> Result<()> {
        if other.len() != self.values.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "parameter count mismatch: model has {}, checkpoint has {}",
                self.values.len(),
                other.len()
            )));
        }
        for (name, value) in other {
            let id = self
                .find(name)
                .ok_or_else(|| Error::InvalidConfig(alloc::format!("unknown parameter {name}")))?;
            if self.values[id.0].shape() != value.shape() {
                return Err(Error::ShapeMismatch(name.to_string()));
            }
            self.values[id.0] = value.clone();
        }
        Ok(())
    }

    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.values.iter().cloned()).collect()
    }
}

/// Uniform init in `[-bound, bound]`.
pub fn uniform_tensor(rng: &mut DetRng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| (2.0 * uniform(rng) - 1.0) * bound)
        .collect();
    Tensor::from_vec(rows, cols, data).expect("shape")
}

/// `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut DetRng) -> Self {
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        let weight = store.add(alloc::format!("{name}.weight"), uniform_tensor(rng, fan_in, fan_out, bound));
        let bias = store.add(alloc::format!("{name}.bias"), uniform_tensor(rng, 1, fan_out, bound));
        Self {
            weight,
            bias: Some(bias),
            fan_in,
            fan_out,
        }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.add(alloc::format!("{name}.weight"), Tensor::zeros(fan_in, fan_out));
        let bias = store.add(alloc::format!("{name}.bias"), Tensor::zeros(1, fan_out));
        Self {
            weight,
            bias: Some(bias),
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Layer norm with learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(alloc::format!("{name}.gamma"), Tensor::full(1, width, 1.0)),
            beta: store.add(alloc::format!("{name}.beta"), Tensor::zeros(1, width)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let y = g.layer_norm_rows(x);
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        let y = g.mul_row(y, gamma);
        g.add_row(y, beta)
    }
}

/// Temporal 1-D convolution over a batch of equal-length sequences stacked
/// row-wise (`batch * len` rows, one channel per column).
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub linear: Linear,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut DetRng,
    ) -> Self {
        Self {
            linear: Linear::new(store, name, kernel * in_channels, out_channels, rng),
            in_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_len(&self, len: usize) -> usize {
        (len + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Returns the output and its per-item length.
    pub fn forward(&self, g: &mut Graph, x: Var, batch: usize, len: usize) -> (Var, usize) {
        let out_len = self.output_len(len);
        let mut index = Vec::with_capacity(batch * out_len * self.kernel);
        for b in 0..batch {
            for t in 0..out_len {
                for k in 0..self.kernel {
                    let src = (t * self.stride + k) as isize - self.padding as isize;
                    index.push(if src >= 0 && (src as usize) < len {
                        Some(b * len + src as usize)
                    } else {
                        None
                    });
                }
            }
        }
        let cols = g.gather_rows(x, index);
        let cols = g.reshape(cols, batch * out_len, self.kernel * self.in_channels);
        (self.linear.forward(g, cols), out_len)
    }
}

/// Nearest-neighbour temporal upsampling by 2.
pub fn upsample2(g: &mut Graph, x: Var, batch: usize, len: usize) -> Var {
    let index = (0..batch)
        .flat_map(|b| (0..2 * len).map(move |t| Some(b * len + t / 2)))
        .collect();
    g.gather_rows(x, index)
}

/// Learned lookup table.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, rows: usize, width: usize, std: f64, rng: &mut DetRng) -> Self {
        let data = (0..rows * width).map(|_| normal(rng) * std).collect();
        let table = store.add(name, Tensor::from_vec(rows, width, data).expect("shape"));
        Self { table, rows }
    }

    pub fn lookup(&self, g: &mut Graph, index: &[usize]) -> Var {
        let t = g.param(self.table);
        g.select_rows(t, index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn conv_matches_direct_sum() {
        let mut store = ParamStore::default();
        let mut rng = stream(1, Stream::Init, 0, 0);
        let conv = Conv1d::new(&mut store, "c", 2, 3, 3, 2, 1, &mut rng);
        let x = crate::rng::normal_tensor(&mut rng, 2 * 5, 2);
        let mut g = Graph::with_params(&store);
        let xv = g.constant(x.clone());
        let (y, out_len) = conv.forward(&mut g, xv, 2, 5);
        assert_eq!(out_len, 3);
        let w = store.get(conv.linear.weight);
        let b = store.get(conv.linear.bias.unwrap());
        for item in 0..2 {
            for t in 0..3 {
                for o in 0..3 {
                    let mut acc = b.get(0, o);
                    for k in 0..3 {
                        let src = (t * 2 + k) as isize - 1;
                        if !(0..5).contains(&src) {
                            continue;
                        }
                        for c in 0..2 {
                            acc += x.get(item * 5 + src as usize, c) * w.get(k * 2 + c, o);
                        }
                    }
                    let got = g.value(y).get(item * 3 + t, o);
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn upsample_repeats_rows() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[[1.0], [2.0], [3.0], [4.0]]).unwrap());
        let y = upsample2(&mut g, x, 2, 2);
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
    }
}
