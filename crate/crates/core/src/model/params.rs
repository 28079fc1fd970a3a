//! Named parameter tensors and their layout.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{SideOutput, SpnetConfig};
use crate::error::{Error, Result};
use crate::ops::{BatchStats, BN_MOMENTUM};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution or transposed-convolution kernel; initialized from
    /// `N(0, 2 / fan_in)`.
    Weight {
        fan_in: usize,
    },
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn is_learnable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn encoder_block(level: usize) -> String {
    format!("enc{level}")
}

pub(crate) fn sdm_weights(config: &SpnetConfig, i: usize, branch: usize) -> String {
    if config.share_decoder || branch == 0 {
        format!("sdm{i}")
    } else {
        format!("sdm{i}.copy{branch}")
    }
}

pub(crate) fn sdm_stats(i: usize, branch: usize) -> String {
    format!("sdm{i}.branch{branch}")
}

pub(crate) fn side_head(config: &SpnetConfig, k: usize) -> String {
    match config.side_output {
        SideOutput::Sdm => "head".to_string(),
        SideOutput::Conv1x1 if k == 0 => "head".to_string(),
        SideOutput::Conv1x1 => format!("side{k}"),
    }
}

struct LayoutBuilder<'a> {
    config: &'a SpnetConfig,
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder<'_> {
    fn push(&mut self, name: String, dims: Vec<usize>, kind: ParamKind) {
        self.specs.push(ParamSpec { name, dims, kind });
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        self.push(
            format!("{prefix}.weight"),
            vec![cout, cin, k, k],
            ParamKind::Weight {
                fan_in: cin * k * k,
            },
        );
        self.push(format!("{prefix}.bias"), vec![cout], ParamKind::Bias);
    }

    fn deconv(&mut self, prefix: &str, cin: usize, cout: usize) {
        // each output pixel sums exactly one tap from each input channel
        self.push(
            format!("{prefix}.weight"),
            vec![cin, cout, 2, 2],
            ParamKind::Weight { fan_in: cin },
        );
        self.push(format!("{prefix}.bias"), vec![cout], ParamKind::Bias);
    }

    fn double_conv(&mut self, weights: &str, cin: usize, cout: usize) {
        for (j, c_in) in [(1, cin), (2, cout)] {
            self.conv(&format!("{weights}.conv{j}"), c_in, cout, 3);
            if self.config.use_batchnorm {
                self.push(
                    format!("{weights}.bn{j}.gamma"),
                    vec![cout],
                    ParamKind::Gamma,
                );
                self.push(format!("{weights}.bn{j}.beta"), vec![cout], ParamKind::Beta);
            }
        }
    }

    fn running_stats(&mut self, stats: &str, channels: usize) {
        if !self.config.use_batchnorm {
            return;
        }
        for j in 1..=2 {
            self.push(
                format!("{stats}.bn{j}.running_mean"),
                vec![channels],
                ParamKind::RunningMean,
            );
            self.push(
                format!("{stats}.bn{j}.running_var"),
                vec![channels],
                ParamKind::RunningVar,
            );
        }
    }
}

/// Every tensor of the network, in a fixed order.
pub fn layout(config: &SpnetConfig) -> Vec<ParamSpec> {
    let mut b = LayoutBuilder {
        config,
        specs: Vec::new(),
    };
    let depth = config.depth;
    for l in 1..=depth {
        let cin = if l == 1 {
            config.in_channels
        } else {
            config.encoder_channels(l - 1)
        };
        let name = encoder_block(l);
        b.double_conv(&name, cin, config.encoder_channels(l));
        b.running_stats(&name, config.encoder_channels(l));
    }

    let bottom = config.encoder_channels(depth);
    b.deconv("up0", bottom, bottom / 2);
    b.double_conv("dec0", bottom, bottom / 2);
    b.running_stats("dec0", bottom / 2);

    for i in 1..=depth - 2 {
        let c = config.decoder_channels(i);
        b.deconv(&format!("up{i}"), c, c / 2);
        b.double_conv(&sdm_weights(config, i, 0), c, c / 2);
        if !config.share_decoder {
            for branch in 1..=config.branch_count(i) {
                b.double_conv(&sdm_weights(config, i, branch), c, c / 2);
            }
        }
        for branch in 0..=config.branch_count(i) {
            b.running_stats(&sdm_stats(i, branch), c / 2);
        }
    }

    b.conv("head", config.base_channels, 1, 1);
    if config.side_output == SideOutput::Conv1x1 {
        for k in 1..=config.pyramid_levels {
            b.conv(
                &side_head(config, k),
                config.decoder_channels(depth - 1 - k),
                1,
                1,
            );
        }
    }
    b.specs
}

/// Learnable scalars: convolution and transposed-convolution weights and
/// biases plus batch-norm affine parameters. Running statistics excluded.
pub fn count_parameters(config: &SpnetConfig) -> usize {
    layout(config)
        .iter()
        .filter(|s| s.kind.is_learnable())
        .map(ParamSpec::len)
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub dims: Vec<usize>,
    pub kind: ParamKind,
    pub data: Vec<T>,
}

/// All tensors of one network instance, keyed by name in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T> {
    config: SpnetConfig,
    entries: IndexMap<String, Param<T>>,
}

impl<T: Real> ParameterStore<T> {
    /// Draws weights from `N(0, 2 / fan_in)`; biases and shifts start at 0,
    /// scales and running variances at 1. Fully determined by `seed`.
    pub fn init(config: &SpnetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = IndexMap::new();
        for spec in layout(config) {
            let n = spec.len();
            let data: Vec<T> = match spec.kind {
                ParamKind::Weight { fan_in } => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                        .expect("positive standard deviation");
                    (0..n).map(|_| T::lit(normal.sample(&mut rng))).collect()
                }
                ParamKind::Bias | ParamKind::Beta | ParamKind::RunningMean => vec![T::zero(); n],
                ParamKind::Gamma | ParamKind::RunningVar => vec![T::one(); n],
            };
            entries.insert(
                spec.name,
                Param {
                    dims: spec.dims,
                    kind: spec.kind,
                    data,
                },
            );
        }
        Ok(Self {
            config: config.clone(),
            entries,
        })
    }

    /// Builds a store from raw entries, which must match the layout of
    /// `config` exactly (names, order and dims).
    pub fn from_entries(
        config: &SpnetConfig,
        raw: Vec<(String, Vec<usize>, Vec<T>)>,
    ) -> Result<Self> {
        config.validate()?;
        let specs = layout(config);
        if specs.len() != raw.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors for this configuration, found {}",
                specs.len(),
                raw.len()
            )));
        }
        let mut entries = IndexMap::new();
        for (spec, (name, dims, data)) in specs.into_iter().zip(raw) {
            if spec.name != name || spec.dims != dims || data.len() != spec.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} {dims:?} does not match expected {} {:?}",
                    spec.name, spec.dims
                )));
            }
            entries.insert(
                name,
                Param {
                    dims,
                    kind: spec.kind,
                    data,
                },
            );
        }
        Ok(Self {
            config: config.clone(),
            entries,
        })
    }

    pub fn config(&self) -> &SpnetConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    /// Data of a tensor that the layout guarantees to exist.
    pub(crate) fn tensor(&self, name: &str) -> &[T] {
        match self.entries.get(name) {
            Some(p) => &p.data,
            None => panic!("parameter {name} missing from store"),
        }
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn learnable_count(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.kind.is_learnable())
            .map(|p| p.data.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            config: self.config.clone(),
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            dims: p.dims.clone(),
                            kind: p.kind,
                            data: p.data.iter().map(|v| U::lit(v.as_f64())).collect(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Folds one training-mode batch-statistics update into the running
    /// averages with momentum 0.1.
    pub fn apply_bn_update(&mut self, prefix: &str, stats: &BatchStats<T>) {
        let m = T::lit(BN_MOMENTUM);
        let keep = T::one() - m;
        for (suffix, values) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
            let name = format!("{prefix}.{suffix}");
            let p = self
                .entries
                .get_mut(&name)
                .unwrap_or_else(|| panic!("running statistic {name} missing"));
            for (r, &v) in p.data.iter_mut().zip(values) {
                *r = keep * *r + m * v;
            }
        }
    }

    /// Copies a shared-decoder store into the matching unshared layout, so
    /// that every duplicated decoder starts from the shared weights.
    pub fn expand_shared(&self) -> Result<Self> {
        if !self.config.share_decoder {
            return Err(Error::InvalidArgument("store is already unshared".into()));
        }
        let target = SpnetConfig {
            share_decoder: false,
            ..self.config.clone()
        };
        let mut raw = Vec::new();
        for spec in layout(&target) {
            let source = shared_source_name(&spec.name);
            let p = self
                .entries
                .get(&source)
                .ok_or_else(|| Error::InvalidArgument(format!("no source for {}", spec.name)))?;
            raw.push((spec.name, p.dims.clone(), p.data.clone()));
        }
        Self::from_entries(&target, raw)
    }
}

/// `sdm2.copy1.conv1.weight` -> `sdm2.conv1.weight`.
fn shared_source_name(name: &str) -> String {
    let mut parts: Vec<&str> = name.split('.').collect();
    if parts.len() > 1 && parts[1].starts_with("copy") {
        parts.remove(1);
    }
    parts.join(".")
}

/// Gradients for every learnable tensor of a store, zero-initialized.
#[derive(Clone, Debug, PartialEq)]
pub struct GradStore<T> {
    entries: IndexMap<String, Vec<T>>,
}

impl<T: Real> GradStore<T> {
    pub fn zeros_like(store: &ParameterStore<T>) -> Self {
        Self {
            entries: store
                .entries
                .iter()
                .filter(|(_, p)| p.kind.is_learnable())
                .map(|(k, p)| (k.clone(), vec![T::zero(); p.data.len()]))
                .collect(),
        }
    }

    pub(crate) fn accumulate(&mut self, name: &str, grad: &[T]) {
        let g = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("no gradient slot for {name}"));
        assert_eq!(g.len(), grad.len(), "gradient length for {name}");
        for (a, &b) in g.iter_mut().zip(grad) {
            *a += b;
        }
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.entries.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|v| v.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().flatten().all(|v| v.is_finite())
    }
}
