use rand::Rng;

use super::config::{Arch, Head, Regime, TrainConfig};
use crate::engine::weights::load_weights;
use crate::engine::{
    BatchNorm2d, Conv2d, Graph, Init, Linear, Mode, ParamStore, Scalar, Tensor, Var,
};
use crate::util;
use crate::{Error, Result};

/// Shape of a residual backbone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    /// Average-pool factor applied to the input (1 = none).
    pub input_pool: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    /// `(kernel, stride, pad)` of the max pool after the stem.
    pub stem_pool: (usize, usize, usize),
    /// `(channels, blocks)` per stage; every stage after the first halves the
    /// resolution in its first block.
    pub stages: Vec<(usize, usize)>,
}

impl BackboneConfig {
    /// Four basic blocks, 16 and 32 channels, on a 2× downsampled input.
    pub fn desk() -> Self {
        BackboneConfig {
            input_pool: 2,
            stem_channels: 16,
            stem_kernel: 3,
            stem_pool: (2, 2, 0),
            stages: vec![(16, 2), (32, 2)],
        }
    }

    /// The ResNet-18 layout, with torchvision parameter names.
    pub fn resnet18() -> Self {
        BackboneConfig {
            input_pool: 1,
            stem_channels: 64,
            stem_kernel: 7,
            stem_pool: (3, 2, 1),
            stages: vec![(64, 2), (128, 2), (256, 2), (512, 2)],
        }
    }

    pub fn for_arch(arch: Arch) -> Self {
        match arch {
            Arch::Desk => Self::desk(),
            Arch::ResNet18 => Self::resnet18(),
        }
    }

    pub fn features(&self) -> usize {
        self.stages.last().map_or(self.stem_channels, |s| s.0)
    }
}

#[derive(Clone, Debug)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let conv1 = Conv2d::new(
            store,
            &format!("{name}.conv1"),
            cin,
            cout,
            3,
            stride,
            1,
            false,
            Init::HeUniform,
            rng,
        );
        let bn1 = BatchNorm2d::new(store, &format!("{name}.bn1"), cout);
        let conv2 = Conv2d::new(
            store,
            &format!("{name}.conv2"),
            cout,
            cout,
            3,
            1,
            1,
            false,
            Init::HeUniform,
            rng,
        );
        let bn2 = BatchNorm2d::new(store, &format!("{name}.bn2"), cout);
        let downsample = (stride != 1 || cin != cout).then(|| {
            (
                Conv2d::new(
                    store,
                    &format!("{name}.downsample.0"),
                    cin,
                    cout,
                    1,
                    stride,
                    0,
                    false,
                    Init::HeUniform,
                    rng,
                ),
                BatchNorm2d::new(store, &format!("{name}.downsample.1"), cout),
            )
        });
        BasicBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            downsample,
        }
    }

    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &mut ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let h = self.conv1.forward(g, s, x, mode)?;
        let h = self.bn1.forward(g, s, h, mode)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, s, h, mode)?;
        let h = self.bn2.forward(g, s, h, mode)?;
        let skip = match &self.downsample {
            Some((conv, bn)) => {
                let d = conv.forward(g, s, x, mode)?;
                bn.forward(g, s, d, mode)?
            }
            None => x,
        };
        let y = g.residual_add(h, skip)?;
        Ok(g.relu(y))
    }
}

/// Residual CNN backbone plus a fully connected head named `fc`.
#[derive(Clone, Debug)]
pub struct Network {
    pub backbone: BackboneConfig,
    pub head: Head,
    conv1: Conv2d,
    bn1: BatchNorm2d,
    blocks: Vec<BasicBlock>,
    fc: Linear,
}

/// Prefix of the head's parameter names.
pub const HEAD_PREFIX: &str = "fc.";

impl Network {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        backbone: BackboneConfig,
        head: Head,
        rng: &mut impl Rng,
    ) -> Self {
        let k = backbone.stem_kernel;
        let conv1 = Conv2d::new(
            store,
            "conv1",
            3,
            backbone.stem_channels,
            k,
            2,
            k / 2,
            false,
            Init::HeUniform,
            rng,
        );
        let bn1 = BatchNorm2d::new(store, "bn1", backbone.stem_channels);
        let mut blocks = Vec::new();
        let mut cin = backbone.stem_channels;
        for (si, &(cout, n)) in backbone.stages.iter().enumerate() {
            for bi in 0..n {
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(
                    store,
                    &format!("layer{}.{bi}", si + 1),
                    cin,
                    cout,
                    stride,
                    rng,
                ));
                cin = cout;
            }
        }
        // The head starts at zero; `init_head_bias` sets the bias from class priors.
        let fc = Linear::new(store, "fc", cin, head.outputs(), true, Init::Zeros, rng);
        Network {
            backbone,
            head,
            conv1,
            bn1,
            blocks,
            fc,
        }
    }

    /// Pooled backbone features, `[N, features]`.
    pub fn features<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &mut ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let mut h = x;
        if self.backbone.input_pool > 1 {
            h = g.avg_pool2d(h, self.backbone.input_pool)?;
        }
        h = self.conv1.forward(g, s, h, mode)?;
        h = self.bn1.forward(g, s, h, mode)?;
        h = g.relu(h);
        let (pk, ps, pp) = self.backbone.stem_pool;
        h = g.max_pool2d(h, pk, ps, pp)?;
        for b in &self.blocks {
            h = b.forward(g, s, h, mode)?;
        }
        g.global_avg_pool(h)
    }

    /// Head outputs `[N, outputs]`. The backbone runs with `backbone_mode`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &mut ParamStore<T>,
        x: Var,
        backbone_mode: Mode,
        head_mode: Mode,
    ) -> Result<Var> {
        let f = self.features(g, s, x, backbone_mode)?;
        self.fc.forward(g, s, f, head_mode)
    }

    pub fn head_bias(&self) -> Option<crate::engine::ParamId> {
        self.fc.bias
    }
}

/// A network with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    pub net: Network,
    pub store: ParamStore<T>,
    pub regime: Regime,
}

impl<T: Scalar> Model<T> {
    pub fn new(backbone: BackboneConfig, head: Head, regime: Regime, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let net = Network::new(&mut store, backbone, head, &mut util::rng(seed));
        let mut m = Model { net, store, regime };
        m.apply_regime();
        m
    }

    /// Marks parameters trainable per the regime: everything for fine-tuning,
    /// only the head for feature extraction.
    pub fn apply_regime(&mut self) {
        match self.regime {
            Regime::FineTune => self.store.set_trainable(|_| true),
            Regime::FeatureExtract => self.store.set_trainable(|n| n.starts_with(HEAD_PREFIX)),
        }
    }

    /// Forward modes for (backbone, head). A frozen backbone always runs in
    /// eval mode so its batch-norm statistics stay fixed too.
    pub fn modes(&self, train: bool) -> (Mode, Mode) {
        let head = if train { Mode::TRAIN } else { Mode::EVAL };
        let backbone = match (train, self.regime) {
            (true, Regime::FineTune) => Mode::TRAIN,
            _ => Mode::EVAL,
        };
        (backbone, head)
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, train: bool) -> Result<Var> {
        let (bm, hm) = self.modes(train);
        self.net.forward(g, &mut self.store, x, bm, hm)
    }

    /// Sets the head bias to `values` (log class priors or a regression mean).
    pub fn init_head_bias(&mut self, values: &[f64]) -> Result<()> {
        let id = self.net.head_bias().expect("head has a bias");
        let p = self.store.get_mut(id);
        if p.tensor.numel() != values.len() {
            return Err(Error::Shape(format!(
                "head bias has {} entries, got {}",
                p.tensor.numel(),
                values.len()
            )));
        }
        for (d, &v) in p.tensor.data_mut().iter_mut().zip(values) {
            *d = T::lit(v);
        }
        Ok(())
    }

    /// Names of the head's parameters.
    pub fn head_names(&self) -> Vec<String> {
        self.store
            .iter()
            .filter(|(_, p)| p.name.starts_with(HEAD_PREFIX))
            .map(|(_, p)| p.name.clone())
            .collect()
    }
}

/// Builds the model described by `config`: a seeded backbone (optionally
/// overwritten from a YWTS file, ignoring any head entries) and a fresh head.
pub fn build_model(config: &TrainConfig) -> Result<Model<f32>> {
    let mut m = Model::new(
        BackboneConfig::for_arch(config.arch),
        config.head,
        config.regime,
        config.seed,
    );
    if let Some(path) = &config.backbone_weights {
        let entries = load_weights(path)?;
        let backbone: Vec<(&str, &Tensor<f32>)> = entries
            .iter()
            .filter(|(n, _)| !n.starts_with(HEAD_PREFIX))
            .map(|(n, t)| (n.as_str(), t))
            .collect();
        let n = m.store.load_named(backbone)?;
        log::info!("loaded {n} backbone tensors from {}", path.display());
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_output_shape() {
        let mut m: Model<f32> = Model::new(
            BackboneConfig::desk(),
            Head::ThreeBucket,
            Regime::FineTune,
            1,
        );
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 3, 144, 200]));
        let y = m.forward(&mut g, x, true).unwrap();
        assert_eq!(g.shape(y), &[2, 3]);
    }

    #[test]
    fn resnet18_names_and_size() {
        let m: Model<f32> = Model::new(
            BackboneConfig::resnet18(),
            Head::NineClass,
            Regime::FineTune,
            1,
        );
        for name in [
            "conv1.weight",
            "bn1.running_var",
            "layer2.0.downsample.0.weight",
            "layer4.1.bn2.bias",
            "fc.weight",
        ] {
            assert!(m.store.by_name(name).is_some(), "{name}");
        }
        assert!(m.store.by_name("layer1.0.downsample.0.weight").is_none());
        let weights: usize = m
            .store
            .iter()
            .filter(|(_, p)| p.kind == crate::engine::ParamKind::Weight)
            .map(|(_, p)| p.tensor.numel())
            .sum();
        // torchvision resnet18 with a 9-way head: 11,176,512 + 512·9 + 9.
        assert_eq!(weights, 11_176_512 + 512 * 9 + 9);
    }
}
