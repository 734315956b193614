//! Layers built from graph operations.

use rand::Rng;

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// Slope of the leaky ReLU used in encoders and discriminators.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, g: &mut Graph<'_, T>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu => g.leaky_relu(x, T::of(LEAKY_SLOPE)),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }

    fn gain(self) -> f64 {
        match self {
            Activation::Relu => 2f64.sqrt(),
            Activation::LeakyRelu => (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt(),
            Activation::Identity | Activation::Sigmoid => 1.0,
        }
    }
}

/// Convolution + bias + activation. Width is padded circularly, height by
/// `kernel / 2` zero rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl Conv2d {
    /// Registers a layer with Kaiming-uniform weights and zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = activation.gain() * (3.0 / fan_in).sqrt();
        let n = out_channels * in_channels * kernel * kernel;
        let w: Vec<T> = (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::from_vec(&[out_channels, in_channels, kernel, kernel], w).expect("sized"),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            activation,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.conv2d(x, w, self.stride, self.kernel / 2)?;
        let y = g.add_bias(y, b)?;
        Ok(self.activation.apply(g, y))
    }
}

/// Nearest-neighbour 2x upsampling followed by a stride-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpConv {
    pub conv: Conv2d,
}

impl UpConv {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Activation,
    ) -> Self {
        Self {
            conv: Conv2d::new(store, rng, name, in_channels, out_channels, kernel, 1, activation),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let up = g.upsample2(x)?;
        self.conv.forward(g, up)
    }
}

/// Mean absolute difference between two tensors.
pub fn l1_loss<T: Scalar>(g: &mut Graph<'_, T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// Mean squared distance of every element from the constant `target`.
pub fn mse_to_constant<T: Scalar>(g: &mut Graph<'_, T>, a: Var, target: T) -> Var {
    let d = g.add_scalar(a, -target);
    let d = g.square(d);
    g.mean(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn upconv_shapes_and_constants() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let up = UpConv::new(&mut store, &mut rng, "up", 3, 5, 3, Activation::Identity);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::full(&[2, 3, 4, 8], 0.25));
        let y = up.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 5, 8, 16]);
        // interior rows of a constant input stay constant per channel
        let v = g.value(y);
        for c in 0..5 {
            let row = &v.data()[(c * 8 + 4) * 16..(c * 8 + 5) * 16];
            assert!(row.iter().all(|&t| t == row[0]));
        }
    }

    #[test]
    fn loss_helpers() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::from_vec(&[4], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
        let b = g.input(Tensor::from_vec(&[4], vec![0.5, 1.0, 1.0, 3.5]).unwrap());
        let l = l1_loss(&mut g, a, b).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 0.5);
        let m = mse_to_constant(&mut g, a, 1.0);
        assert_eq!(g.value(m).item().unwrap(), 1.5);
    }
}
