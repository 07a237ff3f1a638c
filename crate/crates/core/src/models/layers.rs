use candle_core::Tensor;
use rand::Rng;

use super::params::{ParamSource, ParamStore};
use crate::error::Result;
use crate::nn::{conv2d, he_init, leaky_relu, zeros, Conv2dParams, LEAKY_SLOPE};

/// A square convolution with bias, stored as `{name}.weight` / `{name}.bias`.
#[derive(Debug, Clone)]
pub(crate) struct ConvSpec {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub params: Conv2dParams,
    /// Multiplier on the He standard deviation at initialization.
    pub init_gain: f64,
}

impl ConvSpec {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, kernel: usize) -> Self {
        Self {
            name: name.into(),
            c_in,
            c_out,
            kernel,
            params: Conv2dParams::same(kernel, 1),
            init_gain: 1.0,
        }
    }

    pub fn dilated(mut self, dilation: usize) -> Self {
        self.params = Conv2dParams::same(self.kernel, dilation);
        self
    }

    pub fn strided(mut self, stride: usize) -> Self {
        self.params = Conv2dParams::new(stride, (self.kernel - 1) / 2, 1);
        self
    }

    pub fn gain(mut self, gain: f64) -> Self {
        self.init_gain = gain;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let shape = [self.c_out, self.c_in, self.kernel, self.kernel];
        let fan_in = self.c_in * self.kernel * self.kernel;
        let dtype = store.dtype();
        store.insert(self.weight_name(), he_init(&shape, fan_in, self.init_gain, dtype, rng)?)?;
        store.insert(self.bias_name(), zeros(&[self.c_out], dtype)?)
    }

    pub fn shapes(&self) -> [(String, Vec<usize>); 2] {
        [
            (
                self.weight_name(),
                vec![self.c_out, self.c_in, self.kernel, self.kernel],
            ),
            (self.bias_name(), vec![self.c_out]),
        ]
    }

    pub fn forward(&self, p: &impl ParamSource, x: &Tensor) -> Result<Tensor> {
        let w = p.tensor(&self.weight_name())?;
        let b = p.tensor(&self.bias_name())?;
        conv2d(x, &w, Some(&b), self.params)
    }
}

/// `x + conv2(act(conv1(x)))` with 3x3 convolutions.
#[derive(Debug, Clone)]
pub(crate) struct ResidualBlock {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
}

impl ResidualBlock {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            conv1: ConvSpec::new(format!("{name}.conv1"), channels, channels, 3),
            conv2: ConvSpec::new(format!("{name}.conv2"), channels, channels, 3),
        }
    }

    pub fn convs(&self) -> [&ConvSpec; 2] {
        [&self.conv1, &self.conv2]
    }

    pub fn forward(&self, p: &impl ParamSource, x: &Tensor) -> Result<Tensor> {
        let h = leaky_relu(&self.conv1.forward(p, x)?, LEAKY_SLOPE)?;
        Ok(x.add(&self.conv2.forward(p, &h)?)?)
    }
}

/// Optional record of intermediate shapes, used by `inspect`.
#[derive(Debug, Default, Clone)]
pub struct ShapeTrace {
    pub entries: Vec<(String, Vec<usize>)>,
}

impl ShapeTrace {
    pub(crate) fn record(trace: &mut Option<&mut ShapeTrace>, name: &str, t: &Tensor) {
        if let Some(tr) = trace.as_deref_mut() {
            tr.entries.push((name.to_string(), t.dims().to_vec()));
        }
    }

    /// Lines like `features: 2304x32x32` (batch dimension dropped).
    pub fn lines(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|(name, dims)| {
                let dims = if dims.len() > 1 { &dims[1..] } else { &dims[..] };
                let dims: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
                format!("{name}: {}", dims.join("x"))
            })
            .collect()
    }
}
