use crate::error::Result;
use crate::tensor::{Act, Conv2d, Linear, Param, ParamGroup, Tensor};
use rand::Rng;

/// Flatten → linear → leaky ReLU → linear, optionally preceded by a
/// channel-preserving 3×3 convolution. The last linear starts at zero.
#[derive(Clone, Debug)]
pub struct RegressionHead {
    pub conv: Option<Conv2d>,
    pub fc1: Linear,
    pub fc2: Linear,
    act: Act,
    feature_shape: Option<Vec<usize>>,
}

impl RegressionHead {
    pub fn new(
        name: &str,
        channels: usize,
        extent: usize,
        hidden: usize,
        outputs: usize,
        with_conv: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let conv = with_conv.then(|| Conv2d::new(&format!("{name}.conv"), channels, channels, 3, 1, 1, rng));
        let fc1 = Linear::new(&format!("{name}.fc1"), channels * extent * extent, hidden, rng);
        let fc2 = Linear::zeros(&format!("{name}.fc2"), hidden, outputs);
        let mut head = RegressionHead { conv, fc1, fc2, act: Act::leaky_relu(), feature_shape: None };
        for p in head.params_mut() {
            p.group = ParamGroup::Head;
        }
        head
    }

    pub fn outputs(&self) -> usize {
        self.fc2.out_features()
    }

    pub fn forward(&mut self, features: &Tensor) -> Result<Tensor> {
        let x = match &mut self.conv {
            Some(conv) => conv.forward(features)?,
            None => features.clone(),
        };
        let (n, c, h, w) = x.dims4()?;
        self.feature_shape = Some(x.shape().to_vec());
        let x = x.into_reshaped(&[n, c * h * w])?;
        let y = self.fc1.forward(&x)?;
        let y = self.act.forward(&y)?;
        self.fc2.forward(&y)
    }

    /// Returns the gradient with respect to the head's input features.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.fc2.backward(grad)?;
        let g = self.act.backward(&g)?;
        let g = self.fc1.backward(&g)?;
        let shape = self.feature_shape.take().expect("fc1 backward succeeded, so forward ran");
        let g = g.into_reshaped(&shape)?;
        match &mut self.conv {
            Some(conv) => conv.backward(&g),
            None => Ok(g),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.conv.as_ref().map(|c| c.params()).unwrap_or_default();
        p.extend(self.fc1.params());
        p.extend(self.fc2.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.conv.as_mut().map(|c| c.params_mut()).unwrap_or_default();
        p.extend(self.fc1.params_mut());
        p.extend(self.fc2.params_mut());
        p
    }
}
