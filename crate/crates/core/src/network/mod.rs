//! Encoder, dense ASPP context block and LPG decoder.
//!
//! Architectures are written once against [`Net`], which either only records
//! parameter shapes or also evaluates on a [`Graph`]. Variants are looked up by
//! name in an [`ArchRegistry`].

mod variants;

pub use variants::{Aspp, AsppUpconv, Baseline, Full};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::lpg::{self, PatchGrid};
use crate::params::{Bindings, ParamSet};
use crate::tensor::Tensor;

pub const DEFAULT_ASPP_RATES: [usize; 5] = [3, 6, 12, 18, 24];

/// Init gain of the conv emitting plane angles and distance, so that fresh
/// heads start close to fronto-parallel planes instead of on the clamp.
pub const LPG_HEAD_GAIN: f32 = 0.1;

/// Parameter count of `ModelConfig::default()`.
pub const DEFAULT_PARAM_COUNT: usize = 146_599;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub base_width: usize,
    pub aspp_rates: Vec<usize>,
    pub kappa: f32,
    /// `(height, width)`.
    pub input_size: (usize, usize),
    pub variant: String,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            base_width: 16,
            aspp_rates: DEFAULT_ASPP_RATES.to_vec(),
            kappa: 10.0,
            input_size: (64, 64),
            variant: "full".into(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::invalid(format!(
                "input size {h}x{w} must be positive multiples of 8"
            )));
        }
        if !matches!(self.input_channels, 1 | 3) {
            return Err(Error::invalid(format!(
                "input_channels must be 1 or 3, got {}",
                self.input_channels
            )));
        }
        if self.base_width < 4 || self.base_width % 2 != 0 {
            return Err(Error::invalid(format!(
                "base_width must be even and >= 4, got {}",
                self.base_width
            )));
        }
        if self.aspp_rates.is_empty()
            || self.aspp_rates[0] == 0
            || self.aspp_rates.windows(2).any(|p| p[0] >= p[1])
        {
            return Err(Error::invalid(format!(
                "aspp_rates must be strictly increasing and >= 1, got {:?}",
                self.aspp_rates
            )));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::invalid(format!("kappa must be positive, got {}", self.kappa)));
        }
        Ok(())
    }

    /// Rates whose dilated 3x3 taps still reach inside the coarsest feature map.
    pub fn usable_rates(&self) -> Vec<usize> {
        let extent = (self.input_size.0 / 8).min(self.input_size.1 / 8);
        usable_rates(&self.aspp_rates, extent)
    }
}

/// Keeps rates smaller than `extent`; larger dilations only sample padding.
pub fn usable_rates(rates: &[usize], extent: usize) -> Vec<usize> {
    let (keep, dropped): (Vec<usize>, Vec<usize>) = rates.iter().partition(|&&r| r < extent);
    if !dropped.is_empty() {
        log::info!("ASPP rates {dropped:?} exceed the {extent}-pixel feature map and are skipped");
    }
    keep
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±gain * sqrt(6 / fan_in)`, variance `2 gain^2 / fan_in`.
    HeUniform { fan_in: usize, gain: f32 },
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Symbolic or evaluated feature map.
#[derive(Clone, Copy, Debug)]
pub struct Node {
    var: Option<Var>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Node {
    pub fn var(&self) -> Result<Var> {
        self.var
            .ok_or_else(|| Error::Internal("feature map has no value in declare mode".into()))
    }
}

struct Exec<'a> {
    graph: &'a mut Graph,
    params: &'a ParamSet,
    bindings: &'a mut Bindings,
}

/// Layer-building context shared by every architecture.
pub struct Net<'a> {
    cfg: &'a ModelConfig,
    specs: Vec<ParamSpec>,
    exec: Option<Exec<'a>>,
    grids: BTreeMap<usize, Arc<PatchGrid>>,
}

impl<'a> Net<'a> {
    fn declare(cfg: &'a ModelConfig) -> Self {
        Self {
            cfg,
            specs: Vec::new(),
            exec: None,
            grids: BTreeMap::new(),
        }
    }

    fn execute(
        cfg: &'a ModelConfig,
        graph: &'a mut Graph,
        params: &'a ParamSet,
        bindings: &'a mut Bindings,
    ) -> Self {
        Self {
            cfg,
            specs: Vec::new(),
            exec: Some(Exec {
                graph,
                params,
                bindings,
            }),
            grids: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    pub fn kappa(&self) -> f32 {
        self.cfg.kappa
    }

    fn map(
        &mut self,
        channels: usize,
        height: usize,
        width: usize,
        f: impl FnOnce(&mut Exec<'a>) -> Result<Var>,
    ) -> Result<Node> {
        let var = match self.exec.as_mut() {
            Some(ex) => Some(f(ex)?),
            None => None,
        };
        Ok(Node {
            var,
            channels,
            height,
            width,
        })
    }

    fn param(&mut self, name: String, shape: Vec<usize>, init: Init) -> Result<Option<Var>> {
        let var = match self.exec.as_mut() {
            Some(ex) => {
                let var = ex.bindings.bind(ex.graph, ex.params, &name)?;
                let got = ex.graph.value(var).shape();
                if got != shape.as_slice() {
                    return Err(Error::invalid(format!(
                        "parameter `{name}` has shape {got:?}, expected {shape:?}"
                    )));
                }
                Some(var)
            }
            None => None,
        };
        self.specs.push(ParamSpec { name, shape, init });
        Ok(var)
    }

    /// `k x k` convolution with "same" padding and bias.
    pub fn conv(&mut self, name: &str, x: Node, cout: usize, k: usize, stride: usize, dilation: usize) -> Result<Node> {
        self.conv_with_gain(name, x, cout, k, stride, dilation, 1.0)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_with_gain(
        &mut self,
        name: &str,
        x: Node,
        cout: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        gain: f32,
    ) -> Result<Node> {
        let w = self.param(
            format!("{name}.weight"),
            vec![cout, x.channels, k, k],
            Init::HeUniform {
                fan_in: x.channels * k * k,
                gain,
            },
        )?;
        let b = self.param(format!("{name}.bias"), vec![cout], Init::Zeros)?;
        let pad = dilation * (k / 2);
        let out = |n: usize| (n + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
        let (h, wd) = (out(x.height), out(x.width));
        self.map(cout, h, wd, |ex| {
            let w = w.ok_or_else(|| Error::Internal("unbound conv weight".into()))?;
            ex.graph.conv2d(x.var()?, w, b, stride, dilation, pad)
        })
    }

    pub fn elu(&mut self, x: Node) -> Result<Node> {
        self.map(x.channels, x.height, x.width, |ex| Ok(ex.graph.elu(x.var()?)))
    }

    pub fn conv_elu(&mut self, name: &str, x: Node, cout: usize, k: usize, stride: usize, dilation: usize) -> Result<Node> {
        let y = self.conv(name, x, cout, k, stride, dilation)?;
        self.elu(y)
    }

    /// `sigmoid(x) * kappa`.
    pub fn depth_activation(&mut self, x: Node) -> Result<Node> {
        let kappa = self.kappa();
        self.map(x.channels, x.height, x.width, |ex| {
            let s = ex.graph.sigmoid(x.var()?);
            Ok(ex.graph.scale(s, kappa))
        })
    }

    pub fn scale(&mut self, x: Node, s: f32) -> Result<Node> {
        self.map(x.channels, x.height, x.width, |ex| Ok(ex.graph.scale(x.var()?, s)))
    }

    pub fn upsample(&mut self, x: Node, factor: usize) -> Result<Node> {
        self.map(x.channels, x.height * factor, x.width * factor, |ex| {
            ex.graph.upsample(x.var()?, factor)
        })
    }

    pub fn downsample(&mut self, x: Node, factor: usize) -> Result<Node> {
        if factor == 0 || x.height % factor != 0 || x.width % factor != 0 {
            return Err(Error::invalid(format!(
                "cannot downsample {}x{} by {factor}",
                x.height, x.width
            )));
        }
        self.map(x.channels, x.height / factor, x.width / factor, |ex| {
            ex.graph.downsample(x.var()?, factor)
        })
    }

    pub fn concat(&mut self, xs: &[Node]) -> Result<Node> {
        let first = *xs.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        if xs.iter().any(|n| (n.height, n.width) != (first.height, first.width)) {
            return Err(Error::invalid("concat inputs differ in spatial size"));
        }
        let channels = xs.iter().map(|n| n.channels).sum();
        self.map(channels, first.height, first.width, |ex| {
            let vars = xs.iter().map(Node::var).collect::<Result<Vec<_>>>()?;
            ex.graph.concat(&vars, 1)
        })
    }

    pub fn select_channel(&mut self, x: Node, channel: usize) -> Result<Node> {
        self.map(1, x.height, x.width, |ex| ex.graph.select_channel(x.var()?, channel))
    }

    /// Dense ASPP: a 1x1 branch plus one dilated 3x3 branch per rate, each of
    /// `width` channels, concatenated and fused back to the input width.
    pub fn aspp(&mut self, name: &str, x: Node, rates: &[usize], width: usize) -> Result<Node> {
        let mut branches = vec![self.conv_elu(&format!("{name}.pointwise"), x, width, 1, 1, 1)?];
        for &r in rates {
            branches.push(self.conv_elu(&format!("{name}.rate{r}"), x, width, 3, 1, r)?);
        }
        let cat = self.concat(&branches)?;
        self.conv_elu(&format!("{name}.fuse"), cat, x.channels, 1, 1, 1)
    }

    /// Reduces `x` to per-cell plane coefficients and expands them into a
    /// `k`-times larger depth-cue map.
    pub fn lpg(&mut self, name: &str, x: Node, k: usize) -> Result<Node> {
        let widths = lpg::reduction_widths(x.channels)?;
        let mut h = x;
        for (i, &c) in widths.iter().enumerate().skip(1) {
            let last = i + 1 == widths.len();
            let gain = if last { LPG_HEAD_GAIN } else { 1.0 };
            h = self.conv_with_gain(&format!("{name}.reduce{i}"), h, c, 1, 1, 1, gain)?;
            if !last {
                h = self.elu(h)?;
            }
        }
        let theta = self.select_channel(h, 0)?;
        let phi = self.select_channel(h, 1)?;
        let raw = self.select_channel(h, 2)?;
        let n4 = self.depth_activation(raw)?;
        let grid = match self.grids.get(&k) {
            Some(g) => g.clone(),
            None => {
                let g = Arc::new(PatchGrid::new(k)?);
                self.grids.insert(k, g.clone());
                g
            }
        };
        self.map(1, x.height * k, x.width * k, |ex| {
            ex.graph.lpg_expand(theta.var()?, phi.var()?, n4.var()?, grid)
        })
    }
}

/// Per-scale depth cues in `[c8, c4, c2, c1]` order.
pub type Cues<T> = [T; 4];

#[derive(Clone, Copy, Debug)]
pub struct ArchOutputs {
    pub depth: Node,
    /// Input of the final activation, when the variant has a combining conv.
    pub final_pre: Option<Node>,
    pub cues: Option<Cues<Node>>,
}

pub trait Architecture: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn build(&self, net: &mut Net<'_>, input: Node) -> Result<ArchOutputs>;
}

#[derive(Clone, Debug, Default)]
pub struct ArchRegistry {
    entries: Vec<Arc<dyn Architecture>>,
}

impl ArchRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Baseline, `aspp`, `aspp_upconv` and `full`, in ablation order.
    pub fn builtin() -> Self {
        let mut r = Self::new();
        r.register(Arc::new(Baseline));
        r.register(Arc::new(Aspp));
        r.register(Arc::new(AsppUpconv));
        r.register(Arc::new(Full));
        r
    }

    /// Adds `arch`, replacing any entry with the same name.
    pub fn register(&mut self, arch: Arc<dyn Architecture>) {
        match self.entries.iter_mut().find(|a| a.name() == arch.name()) {
            Some(slot) => *slot = arch,
            None => self.entries.push(arch),
        }
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Architecture>> {
        self.entries.iter().find(|a| a.name() == name).cloned()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|a| a.name()).collect()
    }
}

/// Values of one forward pass recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub depth: Var,
    pub final_pre: Option<Var>,
    pub cues: Option<Cues<Var>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    /// `[B, 1, H, W]`.
    pub depth: Tensor,
    pub cues: Option<Cues<Tensor>>,
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    arch: Arc<dyn Architecture>,
    specs: Vec<ParamSpec>,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        Self::with_registry(cfg, &ArchRegistry::builtin())
    }

    pub fn with_registry(cfg: ModelConfig, registry: &ArchRegistry) -> Result<Self> {
        cfg.validate()?;
        let arch = registry.get(&cfg.variant).ok_or_else(|| {
            Error::invalid(format!(
                "unknown variant `{}` (known: {})",
                cfg.variant,
                registry.names().join(", ")
            ))
        })?;
        let mut net = Net::declare(&cfg);
        let input = input_node(&cfg, None);
        arch.build(&mut net, input).map_err(|e| Error::Variant {
            variant: cfg.variant.clone(),
            source: Box::new(e),
        })?;
        let specs = net.specs;
        Ok(Self { cfg, arch, specs })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param_count(&self) -> usize {
        self.specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    /// Fresh parameters; bit-identical for equal seeds.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for spec in &self.specs {
            let t = match spec.init {
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::HeUniform { fan_in, gain } => {
                    let bound = gain * (6.0 / fan_in as f64).sqrt() as f32;
                    Tensor::from_fn(&spec.shape, |_| rng.gen_range(-bound..bound))
                }
            };
            params.insert(spec.name.clone(), t);
        }
        params
    }

    /// Checks that `params` holds exactly this model's tensors.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        if params.len() != self.specs.len() {
            return Err(Error::invalid(format!(
                "model expects {} parameter tensors, got {}",
                self.specs.len(),
                params.len()
            )));
        }
        for spec in &self.specs {
            let t = params.require(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::invalid(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Records the forward pass of `input` (`[B, C, H, W]`) on `graph`.
    pub fn forward(
        &self,
        graph: &mut Graph,
        params: &ParamSet,
        bindings: &mut Bindings,
        input: Var,
    ) -> Result<ForwardVars> {
        let shape = graph.value(input).shape().to_vec();
        let (h, w) = self.cfg.input_size;
        if shape.len() != 4 || shape[1] != self.cfg.input_channels || shape[2] != h || shape[3] != w {
            return Err(Error::invalid(format!(
                "input shape {shape:?} does not match model input [B, {}, {h}, {w}]",
                self.cfg.input_channels
            )));
        }
        let mut net = Net::execute(&self.cfg, graph, params, bindings);
        let out = self.arch.build(&mut net, input_node(&self.cfg, Some(input)))?;
        Ok(ForwardVars {
            depth: out.depth.var()?,
            final_pre: out.final_pre.map(|n| n.var()).transpose()?,
            cues: match out.cues {
                Some(c) => Some([c[0].var()?, c[1].var()?, c[2].var()?, c[3].var()?]),
                None => None,
            },
        })
    }

    /// Forward pass without keeping the graph.
    pub fn predict(&self, params: &ParamSet, input: &Tensor) -> Result<ForwardOutputs> {
        let mut graph = Graph::new();
        let x = graph.constant(input.clone());
        let mut bindings = Bindings::default();
        let out = self.forward(&mut graph, params, &mut bindings, x)?;
        Ok(ForwardOutputs {
            depth: graph.value(out.depth).detached(),
            cues: out.cues.map(|c| c.map(|v| graph.value(v).detached())),
        })
    }
}

fn input_node(cfg: &ModelConfig, var: Option<Var>) -> Node {
    Node {
        var,
        channels: cfg.input_channels,
        height: cfg.input_size.0,
        width: cfg.input_size.1,
    }
}

/// Model description plus freshly initialized parameters from `cfg.seed`.
pub fn build_model(cfg: ModelConfig) -> Result<(Model, ParamSet)> {
    let model = Model::new(cfg)?;
    let params = model.init_params(model.cfg.seed);
    Ok((model, params))
}
