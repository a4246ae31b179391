use std::ops::Range;

use crate::error::{Error, Result};

/// Kernel width of every (transposed) convolution.
pub const KERNEL: usize = 3;

/// Layer widths of the 1D convolutional autoencoder.
///
/// Encoder: three valid kernel-3 convolutions, then two dense layers down to
/// the code. Decoder: the mirror image, ending in transposed convolutions
/// that restore the `channels × window` input shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AeArchitecture {
    pub channels: usize,
    pub window: usize,
    pub conv: [usize; 3],
    pub fc_hidden: usize,
    pub code: usize,
    /// Apply ReLU to the code layer.
    pub relu_code: bool,
    /// Apply ReLU to the reconstruction layer.
    pub relu_output: bool,
}

impl AeArchitecture {
    /// Default widths for a neighborhood radius (`C = (2r+1)³`).
    pub fn for_radius(radius: usize, window: usize, code: usize) -> Self {
        AeArchitecture {
            channels: (2 * radius + 1).pow(3),
            window,
            conv: default_conv_plan(radius),
            fc_hidden: 64,
            code,
            relu_code: false,
            relu_output: false,
        }
    }

    /// ReLU after every layer, including code and output.
    pub fn with_relu_everywhere(mut self) -> Self {
        self.relu_code = true;
        self.relu_output = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 7 {
            return Err(Error::Argument(format!(
                "window {} too short: three kernel-{KERNEL} convolutions need at least 7 steps",
                self.window
            )));
        }
        if self.window > 64 {
            return Err(Error::Argument(format!("window {} exceeds 64", self.window)));
        }
        if self.channels == 0 || self.conv.contains(&0) || self.fc_hidden == 0 || self.code == 0 {
            return Err(Error::Argument(format!("zero-width layer in {self:?}")));
        }
        Ok(())
    }

    /// Time length after the three encoder convolutions.
    pub fn bottleneck_len(&self) -> usize {
        self.window - 3 * (KERNEL - 1)
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.window
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let [c1, c2, c3] = self.conv;
        let w = self.window;
        let flat = c3 * self.bottleneck_len();
        let mut b = LayoutBuilder::default();
        b.push("enc.conv1", LayerKind::Conv, self.channels, c1, w, true);
        b.push("enc.conv2", LayerKind::Conv, c1, c2, w - 2, true);
        b.push("enc.conv3", LayerKind::Conv, c2, c3, w - 4, true);
        b.push("enc.fc1", LayerKind::Linear, flat, self.fc_hidden, 1, true);
        b.push("enc.fc2", LayerKind::Linear, self.fc_hidden, self.code, 1, self.relu_code);
        b.push("dec.fc1", LayerKind::Linear, self.code, self.fc_hidden, 1, true);
        b.push("dec.fc2", LayerKind::Linear, self.fc_hidden, flat, 1, true);
        b.push("dec.deconv1", LayerKind::ConvTranspose, c3, c2, w - 6, true);
        b.push("dec.deconv2", LayerKind::ConvTranspose, c2, c1, w - 4, true);
        b.push("dec.deconv3", LayerKind::ConvTranspose, c1, self.channels, w - 2, self.relu_output);
        b.layers
    }
}

/// Encoder/decoder widths keyed by radius.
pub fn default_conv_plan(radius: usize) -> [usize; 3] {
    match radius {
        0 => [16, 16, 16],
        1 => [32, 16, 16],
        _ => [64, 32, 16],
    }
}

/// Number of layers belonging to the encoder in [`AeArchitecture::layers`].
pub const ENCODER_LAYERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Weight layout `[out][in][k]`.
    Conv,
    /// Weight layout `[out][in]`.
    Linear,
    /// Weight layout `[in][out][k]`.
    ConvTranspose,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
    pub relu: bool,
}

impl LayerSpec {
    pub fn input_size(&self) -> usize {
        self.cin * self.len_in
    }

    pub fn output_size(&self) -> usize {
        self.cout * self.len_out
    }

    /// Inputs feeding one output unit; scales the initialization range.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Linear => self.cin,
            LayerKind::Conv | LayerKind::ConvTranspose => self.cin * KERNEL,
        }
    }
}

#[derive(Default)]
struct LayoutBuilder {
    layers: Vec<LayerSpec>,
    next: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: &'static str, kind: LayerKind, cin: usize, cout: usize, len_in: usize, relu: bool) {
        let (n_weight, len_out) = match kind {
            LayerKind::Linear => (cin * cout, 1),
            LayerKind::Conv => (cin * cout * KERNEL, len_in - (KERNEL - 1)),
            LayerKind::ConvTranspose => (cin * cout * KERNEL, len_in + (KERNEL - 1)),
        };
        let weight = self.next..self.next + n_weight;
        let bias = weight.end..weight.end + cout;
        self.next = bias.end;
        self.layers.push(LayerSpec {
            name,
            kind,
            cin,
            cout,
            len_in,
            len_out,
            weight,
            bias,
            relu,
        });
    }
}
