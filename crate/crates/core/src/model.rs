//! Trend, seasonality and generic blocks with doubly-residual stacking.
//!
//! Every block reads the current residual window, emits a backcast that is
//! subtracted from it before the next block, and a forecast that is added to
//! its stack's component. The total forecast is the stack components summed
//! in stack order, so re-summing the exported components reproduces it exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bases::{fourier_rows, FourierBasisPair, TimeAxis, TrendBasisPair};
use crate::error::{Error, Result};
use crate::nn::{FcConfig, Linear, Mlp, MlpCache};
use crate::tcn::{Tcn, TcnCache, TcnConfig, TcnTrace};
use crate::tensor::{Parameter, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StackKind {
    Trend,
    Seasonality,
    Generic,
}

impl StackKind {
    pub fn name(self) -> &'static str {
        match self {
            StackKind::Trend => "trend",
            StackKind::Seasonality => "seasonality",
            StackKind::Generic => "generic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Trend { degree: usize },
    Seasonality { fourier_order: usize },
    Generic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Tcn,
    Fc,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Tcn => "tcn",
            LearnerKind::Fc => "fc",
        }
    }
}

/// Everything needed to rebuild a model's architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variables: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub stacks: Vec<StackKind>,
    pub blocks_per_stack: usize,
    pub fourier_order: usize,
    pub trend_degree: usize,
    pub learner: LearnerKind,
    pub tcn_hidden: usize,
    pub tcn_kernel: usize,
    pub tcn_dilations: Vec<usize>,
    pub fc_layers: usize,
    pub fc_units: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Trend stack then seasonality stack, two blocks each, `N = 8`, `d = 4`,
    /// TCN learner with 32 channels, kernel 3, dilations 1, 2, 4.
    pub fn new(variables: usize, lookback: usize, horizon: usize) -> Self {
        let tcn = TcnConfig::with_defaults(variables);
        let fc = FcConfig::default();
        Self {
            variables,
            lookback,
            horizon,
            stacks: vec![StackKind::Trend, StackKind::Seasonality],
            blocks_per_stack: 2,
            fourier_order: 8,
            trend_degree: 4,
            learner: LearnerKind::Tcn,
            tcn_hidden: tcn.hidden_channels,
            tcn_kernel: tcn.kernel_size,
            tcn_dilations: tcn.dilations,
            fc_layers: fc.layers,
            fc_units: fc.units,
            seed: 0,
        }
    }

    pub fn tcn_config(&self) -> TcnConfig {
        TcnConfig {
            in_channels: self.variables,
            hidden_channels: self.tcn_hidden,
            kernel_size: self.tcn_kernel,
            dilations: self.tcn_dilations.clone(),
        }
    }

    pub fn fc_config(&self) -> FcConfig {
        FcConfig {
            layers: self.fc_layers,
            units: self.fc_units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.variables == 0 || self.lookback == 0 || self.horizon == 0 {
            return bad(format!(
                "variables, lookback and horizon must be at least 1 (got M={}, t={}, H={})",
                self.variables, self.lookback, self.horizon
            ));
        }
        if self.stacks.is_empty() || self.blocks_per_stack == 0 {
            return bad("model needs at least one stack with at least one block".into());
        }
        if self.fourier_order == 0 || self.trend_degree == 0 {
            return bad("fourier_order and trend_degree must be at least 1".into());
        }
        match self.learner {
            LearnerKind::Tcn => self.tcn_config().validate()?,
            LearnerKind::Fc => {
                if self.fc_layers == 0 || self.fc_units == 0 {
                    return bad("fc_layers and fc_units must be at least 1".into());
                }
            }
        }
        Ok(())
    }
}

/// The subnetwork that maps a lookback window to a feature vector.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientLearner {
    Tcn(Tcn),
    Fc(Mlp),
}

enum LearnerCache {
    Tcn(TcnCache),
    Fc(MlpCache),
}

/// Loss-only learner state for resuming after a parameter change.
#[derive(Debug, Clone)]
pub(crate) enum LearnerTrace {
    Tcn(TcnTrace),
    Fc(Vec<f64>),
}

impl LearnerTrace {
    fn features(&self) -> &[f64] {
        match self {
            LearnerTrace::Tcn(t) => t.features(),
            LearnerTrace::Fc(f) => f,
        }
    }
}

impl CoefficientLearner {
    fn features(&self, x: &[f64], lookback: usize) -> (Vec<f64>, LearnerCache) {
        match self {
            CoefficientLearner::Tcn(t) => {
                let (f, c) = t.forward_last(x, lookback);
                (f, LearnerCache::Tcn(c))
            }
            CoefficientLearner::Fc(m) => {
                let (f, c) = m.forward(x);
                (f, LearnerCache::Fc(c))
            }
        }
    }

    fn trace(&self, x: &[f64], lookback: usize) -> LearnerTrace {
        match self {
            CoefficientLearner::Tcn(t) => LearnerTrace::Tcn(t.trace_last(x, lookback)),
            CoefficientLearner::Fc(m) => LearnerTrace::Fc(m.forward(x).0),
        }
    }

    /// Resume points: one per TCN unit, or the whole fc stack as one.
    fn stages(&self) -> usize {
        match self {
            CoefficientLearner::Tcn(t) => t.units.len(),
            CoefficientLearner::Fc(_) => 1,
        }
    }

    fn stage_of(&self, local: usize) -> usize {
        match self {
            CoefficientLearner::Tcn(t) => t.unit_of_param(local),
            CoefficientLearner::Fc(_) => 0,
        }
    }

    /// Features recomputed from `stage` on; `stage == stages()` reuses them.
    fn resume(&self, x: &[f64], trace: &LearnerTrace, stage: usize) -> Vec<f64> {
        match (self, trace) {
            (CoefficientLearner::Tcn(t), LearnerTrace::Tcn(tr)) => t.resume_last(tr, stage),
            (CoefficientLearner::Fc(_), LearnerTrace::Fc(f)) if stage >= 1 => f.clone(),
            (CoefficientLearner::Fc(m), LearnerTrace::Fc(_)) => m.forward(x).0,
            _ => unreachable!("learner and trace kinds always match"),
        }
    }

    fn backward(&mut self, cache: &LearnerCache, grad: &[f64]) -> Vec<f64> {
        match (self, cache) {
            (CoefficientLearner::Tcn(t), LearnerCache::Tcn(c)) => t.backward_last(c, grad),
            (CoefficientLearner::Fc(m), LearnerCache::Fc(c)) => m.backward(c, grad),
            _ => unreachable!("learner and cache kinds always match"),
        }
    }

    fn params(&self) -> Vec<&Parameter> {
        match self {
            CoefficientLearner::Tcn(t) => t.params(),
            CoefficientLearner::Fc(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            CoefficientLearner::Tcn(t) => t.params_mut(),
            CoefficientLearner::Fc(m) => m.params_mut(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum BlockBasis {
    Fourier(FourierBasisPair),
    Trend(TrendBasisPair),
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    kind: BlockKind,
    pub learner: CoefficientLearner,
    pub head_forecast: Linear,
    pub head_backcast: Linear,
    basis: BlockBasis,
    variables: usize,
    lookback: usize,
    horizon: usize,
}

/// One sample's block outputs, all row-major.
pub(crate) struct SampleBlockOut {
    pub backcast: Vec<f64>,
    pub forecast: Vec<f64>,
    pub coef_forecast: Vec<f64>,
    pub coef_backcast: Vec<f64>,
}

struct BlockCache {
    learner: LearnerCache,
    features: Vec<f64>,
}

/// Batched outputs of a single block.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    /// `[batch, M, t]`
    pub backcast: Tensor,
    /// `[batch, M, H]`
    pub forecast: Tensor,
    /// Forecast coefficients per sample: `[batch, K_M, K_N]` (seasonality),
    /// `[batch, M, d]` (trend) or `[batch, M, H]` (generic).
    pub forecast_coefficients: Tensor,
    pub backcast_coefficients: Tensor,
}

/// Head weights start at this fraction of the fan-in uniform bound, so an
/// untrained model emits small coefficients instead of amplifying the inputs.
pub const HEAD_INIT_SCALE: f64 = 0.1;

impl Block {
    pub fn new(id: &str, kind: BlockKind, config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (m, t, h) = (config.variables, config.lookback, config.horizon);
        let learner = match config.learner {
            LearnerKind::Tcn => CoefficientLearner::Tcn(Tcn::new(&format!("{id}.tcn"), config.tcn_config(), rng)?),
            LearnerKind::Fc => CoefficientLearner::Fc(Mlp::new(&format!("{id}.fc"), m * t, config.fc_config(), rng)),
        };
        let features = match &learner {
            CoefficientLearner::Tcn(tcn) => tcn.config().hidden_channels,
            CoefficientLearner::Fc(mlp) => mlp.output_len(),
        };
        let (basis, n_forecast, n_backcast) = match kind {
            BlockKind::Seasonality { fourier_order } => {
                let n = fourier_rows(m) * fourier_rows(fourier_order);
                (BlockBasis::Fourier(FourierBasisPair::new(m, fourier_order, t, h)?), n, n)
            }
            BlockKind::Trend { degree } => (BlockBasis::Trend(TrendBasisPair::new(degree, t, h)?), m * degree, m * degree),
            BlockKind::Generic => (BlockBasis::Direct, m * h, m * t),
        };
        let mut head_forecast = Linear::new(&format!("{id}.head_forecast"), features, n_forecast, rng);
        let mut head_backcast = Linear::new(&format!("{id}.head_backcast"), features, n_backcast, rng);
        for head in [&mut head_forecast, &mut head_backcast] {
            head.weight.value = head.weight.value.scale(HEAD_INIT_SCALE);
        }
        Ok(Self {
            kind,
            learner,
            head_forecast,
            head_backcast,
            basis,
            variables: m,
            lookback: t,
            horizon: h,
        })
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    /// Shape of one sample's (forecast, backcast) coefficient tensor.
    pub fn coefficient_shapes(&self) -> ([usize; 2], [usize; 2]) {
        match (&self.basis, self.kind) {
            (BlockBasis::Fourier(b), _) => (b.coefficient_shape(), b.coefficient_shape()),
            (_, BlockKind::Trend { degree }) => ([self.variables, degree], [self.variables, degree]),
            _ => ([self.variables, self.horizon], [self.variables, self.lookback]),
        }
    }

    pub fn fourier_basis(&self) -> Option<&FourierBasisPair> {
        match &self.basis {
            BlockBasis::Fourier(b) => Some(b),
            _ => None,
        }
    }

    pub fn trend_basis(&self) -> Option<&TrendBasisPair> {
        match &self.basis {
            BlockBasis::Trend(b) => Some(b),
            _ => None,
        }
    }

    fn synthesize(&self, coef: &[f64], axis: TimeAxis) -> Vec<f64> {
        let len = match axis {
            TimeAxis::Forecast => self.horizon,
            TimeAxis::Backcast => self.lookback,
        };
        match &self.basis {
            BlockBasis::Fourier(b) => {
                let mut out = vec![0.0; self.variables * len];
                b.synthesize_into(coef, axis, &mut out);
                out
            }
            BlockBasis::Trend(b) => {
                let mut out = vec![0.0; self.variables * len];
                b.synthesize_into(coef, self.variables, axis, &mut out);
                out
            }
            BlockBasis::Direct => coef.to_vec(),
        }
    }

    fn coefficient_grad(&self, dy: &[f64], axis: TimeAxis, n_coef: usize) -> Vec<f64> {
        match &self.basis {
            BlockBasis::Fourier(b) => {
                let mut dc = vec![0.0; n_coef];
                b.coefficient_grad(dy, axis, &mut dc);
                dc
            }
            BlockBasis::Trend(b) => {
                let mut dc = vec![0.0; n_coef];
                b.coefficient_grad(dy, self.variables, axis, &mut dc);
                dc
            }
            BlockBasis::Direct => dy.to_vec(),
        }
    }

    fn emit(&self, features: &[f64]) -> SampleBlockOut {
        let coef_forecast = self.head_forecast.forward(features);
        let coef_backcast = self.head_backcast.forward(features);
        SampleBlockOut {
            forecast: self.synthesize(&coef_forecast, TimeAxis::Forecast),
            backcast: self.synthesize(&coef_backcast, TimeAxis::Backcast),
            coef_forecast,
            coef_backcast,
        }
    }

    fn forward_sample(&self, x: &[f64]) -> (SampleBlockOut, BlockCache) {
        let (features, learner) = self.learner.features(x, self.lookback);
        (self.emit(&features), BlockCache { learner, features })
    }

    /// Where to resume this block after a change to local parameter `local`
    /// ([`Block::params`] order): a learner stage, or past the learner for heads.
    fn stage_of(&self, local: usize) -> usize {
        if local < self.learner.params().len() {
            self.learner.stage_of(local)
        } else {
            self.learner.stages()
        }
    }

    /// Accumulates parameter gradients; returns `dL/dx` for the block input.
    fn backward_sample(&mut self, cache: &BlockCache, d_forecast: &[f64], d_backcast: &[f64]) -> Vec<f64> {
        let dcf = self.coefficient_grad(d_forecast, TimeAxis::Forecast, self.head_forecast.outputs());
        let dcb = self.coefficient_grad(d_backcast, TimeAxis::Backcast, self.head_backcast.outputs());
        let mut dfeat = self
            .head_forecast
            .backward(&cache.features, &dcf, true)
            .expect("input grad requested");
        let from_back = self
            .head_backcast
            .backward(&cache.features, &dcb, true)
            .expect("input grad requested");
        for (a, b) in dfeat.iter_mut().zip(from_back) {
            *a += b;
        }
        self.learner.backward(&cache.learner, &dfeat)
    }

    fn check_input(&self, x: &Tensor, op: &'static str) -> Result<usize> {
        if x.rank() != 3 || x.shape()[1..] != [self.variables, self.lookback] {
            return Err(Error::dim(op, x.shape(), &[0, self.variables, self.lookback]));
        }
        Ok(x.shape()[0])
    }

    /// Batched forward pass over `[batch, M, t]`.
    pub fn forward(&self, x: &Tensor) -> Result<BlockOutput> {
        let batch = self.check_input(x, "block_forward")?;
        let stride = self.variables * self.lookback;
        let (fs, bs) = self.coefficient_shapes();
        let mut back = Vec::with_capacity(batch * stride);
        let mut fore = Vec::with_capacity(batch * self.variables * self.horizon);
        let mut cf = Vec::new();
        let mut cb = Vec::new();
        for b in 0..batch {
            let (out, _) = self.forward_sample(&x.data()[b * stride..(b + 1) * stride]);
            back.extend(out.backcast);
            fore.extend(out.forecast);
            cf.extend(out.coef_forecast);
            cb.extend(out.coef_backcast);
        }
        Ok(BlockOutput {
            backcast: Tensor::from_parts(vec![batch, self.variables, self.lookback], back),
            forecast: Tensor::from_parts(vec![batch, self.variables, self.horizon], fore),
            forecast_coefficients: Tensor::from_parts(vec![batch, fs[0], fs[1]], cf),
            backcast_coefficients: Tensor::from_parts(vec![batch, bs[0], bs[1]], cb),
        })
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut v = self.learner.params();
        v.extend(self.head_forecast.params());
        v.extend(self.head_backcast.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.learner.params_mut();
        v.extend(self.head_forecast.params_mut());
        v.extend(self.head_backcast.params_mut());
        v
    }
}

fn expect_kind(block: &Block, want: fn(BlockKind) -> bool, name: &str) -> Result<()> {
    if want(block.kind) {
        Ok(())
    } else {
        Err(Error::Domain(format!("expected a {name} block, got {:?}", block.kind)))
    }
}

/// Seasonality block: forecast `F_Mᵀ·C_f·F_H`, backcast `F_Mᵀ·C_b·F_t`.
pub fn seasonality_block_forward(x: &Tensor, block: &Block) -> Result<BlockOutput> {
    expect_kind(block, |k| matches!(k, BlockKind::Seasonality { .. }), "seasonality")?;
    block.forward(x)
}

/// Trend block: forecast `A_f·P_H`, backcast `A_b·P_t`.
pub fn trend_block_forward(x: &Tensor, block: &Block) -> Result<BlockOutput> {
    expect_kind(block, |k| matches!(k, BlockKind::Trend { .. }), "trend")?;
    block.forward(x)
}

/// Generic block: heads emit the backcast and forecast directly.
pub fn generic_block_forward(x: &Tensor, block: &Block) -> Result<BlockOutput> {
    expect_kind(block, |k| matches!(k, BlockKind::Generic), "generic")?;
    block.forward(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub kind: StackKind,
    pub name: String,
    pub blocks: Vec<Block>,
}

/// Total forecast and its per-stack components, each `[batch, M, H]`.
#[derive(Debug, Clone)]
pub struct ForecastDecomposition {
    pub total: Tensor,
    pub components: Vec<(String, Tensor)>,
}

impl ForecastDecomposition {
    pub fn component(&self, name: &str) -> Option<&Tensor> {
        self.components.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// One block's view of a single-sample forward pass.
#[derive(Debug, Clone)]
pub struct BlockStep {
    pub input: Tensor,
    pub backcast: Tensor,
    pub forecast: Tensor,
    pub forecast_coefficients: Tensor,
}

/// Residual input and finished stack sums part way through a forward pass.
#[derive(Debug, Clone)]
struct Running {
    residual: Vec<f64>,
    components: Vec<Vec<f64>>,
    /// Partial sum of the current stack.
    acc: Vec<f64>,
}

impl Running {
    fn absorb(&mut self, out: &SampleBlockOut) {
        for (r, b) in self.residual.iter_mut().zip(&out.backcast) {
            *r -= b;
        }
        for (a, f) in self.acc.iter_mut().zip(&out.forecast) {
            *a += f;
        }
    }
}

/// Forward state ahead of one block, plus that block's learner trace.
#[derive(Debug, Clone)]
pub(crate) struct Prefix {
    state: Running,
    trace: LearnerTrace,
}

pub(crate) struct SampleForward {
    pub total: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    caches: Vec<BlockCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NftModel {
    config: ModelConfig,
    pub stacks: Vec<Stack>,
}

impl NftModel {
    /// Builds a freshly initialized model, seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut stacks = Vec::with_capacity(config.stacks.len());
        for (si, &kind) in config.stacks.iter().enumerate() {
            let block_kind = match kind {
                StackKind::Trend => BlockKind::Trend {
                    degree: config.trend_degree,
                },
                StackKind::Seasonality => BlockKind::Seasonality {
                    fourier_order: config.fourier_order,
                },
                StackKind::Generic => BlockKind::Generic,
            };
            let blocks = (0..config.blocks_per_stack)
                .map(|bi| Block::new(&format!("stack{si}.block{bi}"), block_kind, &config, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let repeats = config.stacks[..si].iter().filter(|&&k| k == kind).count();
            let name = if repeats == 0 {
                kind.name().to_owned()
            } else {
                format!("{}_{}", kind.name(), repeats + 1)
            };
            stacks.push(Stack { kind, name, blocks });
        }
        Ok(Self { config, stacks })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variables(&self) -> usize {
        self.config.variables
    }

    pub fn lookback(&self) -> usize {
        self.config.lookback
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.stacks.iter().flat_map(|s| s.blocks.iter())
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Block> {
        self.stacks.iter_mut().flat_map(|s| s.blocks.iter_mut())
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.blocks().flat_map(Block::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.stacks
            .iter_mut()
            .flat_map(|s| s.blocks.iter_mut())
            .flat_map(Block::params_mut)
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Zeroes every forecast and backcast head, making all outputs zero.
    pub fn zero_heads(&mut self) {
        for b in self.blocks_mut() {
            b.head_forecast.zero();
            b.head_backcast.zero();
        }
    }

    pub(crate) fn forward_sample(&self, x: &[f64]) -> SampleForward {
        let fh = self.config.variables * self.config.horizon;
        let mut residual = x.to_vec();
        let mut components = Vec::with_capacity(self.stacks.len());
        let mut caches = Vec::new();
        for stack in &self.stacks {
            let mut acc = vec![0.0; fh];
            for block in &stack.blocks {
                let (out, cache) = block.forward_sample(&residual);
                for (r, b) in residual.iter_mut().zip(&out.backcast) {
                    *r -= b;
                }
                for (a, f) in acc.iter_mut().zip(&out.forecast) {
                    *a += f;
                }
                caches.push(cache);
            }
            components.push(acc);
        }
        let mut total = components[0].clone();
        for comp in &components[1..] {
            for (t, c) in total.iter_mut().zip(comp) {
                *t += c;
            }
        }
        SampleForward {
            total,
            components,
            caches,
        }
    }

    /// Forward state just before each block, for resuming with [`Self::total_from`].
    pub(crate) fn prefixes(&self, x: &[f64]) -> Vec<Prefix> {
        let fh = self.config.variables * self.config.horizon;
        let mut state = Running {
            residual: x.to_vec(),
            components: Vec::new(),
            acc: vec![0.0; fh],
        };
        let mut out = Vec::new();
        for stack in &self.stacks {
            for block in &stack.blocks {
                let trace = block.learner.trace(&state.residual, self.config.lookback);
                let emitted = block.emit(trace.features());
                out.push(Prefix {
                    state: state.clone(),
                    trace,
                });
                state.absorb(&emitted);
            }
            state.components.push(std::mem::replace(&mut state.acc, vec![0.0; fh]));
        }
        out
    }

    /// Locates flat parameter `index` ([`Self::params`] order) as a block
    /// and a resume stage inside it, for [`Self::total_from`].
    pub(crate) fn resume_point(&self, index: usize) -> Option<(usize, usize)> {
        let mut first = 0;
        for (b, block) in self.blocks().enumerate() {
            let n = block.params().len();
            if index < first + n {
                return Some((b, block.stage_of(index - first)));
            }
            first += n;
        }
        None
    }

    /// The forecast total, rerunning block `block` from `stage` and every
    /// later block in full. Matches `forward_sample(x).total` exactly when
    /// nothing upstream of the resume point changed.
    pub(crate) fn total_from(&self, prefix: &Prefix, block: usize, stage: usize) -> Vec<f64> {
        let fh = self.config.variables * self.config.horizon;
        let mut state = prefix.state.clone();
        let mut index = 0;
        for stack in &self.stacks {
            let first = index;
            index += stack.blocks.len();
            if index <= block {
                continue;
            }
            for (i, b) in stack.blocks.iter().enumerate().skip(block.saturating_sub(first)) {
                let features = if first + i == block {
                    b.learner.resume(&state.residual, &prefix.trace, stage)
                } else {
                    b.learner.trace(&state.residual, self.config.lookback).features().to_vec()
                };
                let out = b.emit(&features);
                state.absorb(&out);
            }
            state.components.push(std::mem::replace(&mut state.acc, vec![0.0; fh]));
        }
        let mut total = state.components[0].clone();
        for comp in &state.components[1..] {
            for (t, c) in total.iter_mut().zip(comp) {
                *t += c;
            }
        }
        total
    }

    /// Accumulates gradients for `dL/dtotal` of one sample.
    pub(crate) fn backward_sample(&mut self, fwd: &SampleForward, d_total: &[f64]) {
        let tl = self.config.variables * self.config.lookback;
        // Gradient reaching the residual after the current block.
        let mut d_residual = vec![0.0; tl];
        let mut caches = fwd.caches.iter().rev();
        for stack in self.stacks.iter_mut().rev() {
            for block in stack.blocks.iter_mut().rev() {
                let cache = caches.next().expect("one cache per block");
                let d_back: Vec<f64> = d_residual.iter().map(|g| -g).collect();
                let dx = block.backward_sample(cache, d_total, &d_back);
                for (r, g) in d_residual.iter_mut().zip(dx) {
                    *r += g;
                }
            }
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let (m, t) = (self.config.variables, self.config.lookback);
        if x.rank() != 3 || x.shape()[1..] != [m, t] {
            return Err(Error::dim("model_forward", x.shape(), &[0, m, t]));
        }
        Ok(x.shape()[0])
    }

    /// Batched forward pass over `[batch, M, t]`.
    pub fn forward(&self, x: &Tensor) -> Result<ForecastDecomposition> {
        let batch = self.check_input(x)?;
        let (m, t, h) = (self.config.variables, self.config.lookback, self.config.horizon);
        let mut total = Vec::with_capacity(batch * m * h);
        let mut comps: Vec<Vec<f64>> = vec![Vec::with_capacity(batch * m * h); self.stacks.len()];
        for b in 0..batch {
            let fwd = self.forward_sample(&x.data()[b * m * t..(b + 1) * m * t]);
            total.extend_from_slice(&fwd.total);
            for (dst, c) in comps.iter_mut().zip(fwd.components) {
                dst.extend(c);
            }
        }
        Ok(ForecastDecomposition {
            total: Tensor::from_parts(vec![batch, m, h], total),
            components: self
                .stacks
                .iter()
                .zip(comps)
                .map(|(s, c)| (s.name.clone(), Tensor::from_parts(vec![batch, m, h], c)))
                .collect(),
        })
    }

    /// Interpretability entry point; identical to [`NftModel::forward`].
    pub fn decompose(&self, x: &Tensor) -> Result<ForecastDecomposition> {
        self.forward(x)
    }

    /// Per-block inputs and outputs for one `[M, t]` window.
    pub fn trace(&self, x: &Tensor) -> Result<Vec<BlockStep>> {
        let (m, t) = (self.config.variables, self.config.lookback);
        if x.shape() != [m, t] {
            return Err(Error::dim("trace", x.shape(), &[m, t]));
        }
        let mut residual = x.data().to_vec();
        let mut steps = Vec::new();
        for block in self.blocks() {
            let (out, _) = block.forward_sample(&residual);
            let (fs, _) = block.coefficient_shapes();
            let input = Tensor::from_parts(vec![m, t], residual.clone());
            for (r, b) in residual.iter_mut().zip(&out.backcast) {
                *r -= b;
            }
            steps.push(BlockStep {
                input,
                backcast: Tensor::from_parts(vec![m, t], out.backcast),
                forecast: Tensor::from_parts(vec![m, self.config.horizon], out.forecast),
                forecast_coefficients: Tensor::from_parts(fs.to_vec(), out.coef_forecast),
            });
        }
        Ok(steps)
    }

    /// Copies parameter values from `other`, which must share the architecture.
    pub fn copy_params_from(&mut self, other: &NftModel) -> Result<()> {
        if self.config != other.config {
            return Err(Error::Compatibility("model configurations differ".into()));
        }
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

/// `decompose_forecast(x, model)`.
pub fn decompose_forecast(x: &Tensor, model: &NftModel) -> Result<ForecastDecomposition> {
    model.decompose(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::Rng;

    fn small_config(m: usize, t: usize, h: usize) -> ModelConfig {
        let mut c = ModelConfig::new(m, t, h);
        c.tcn_hidden = 6;
        c.tcn_dilations = vec![1, 2];
        c.seed = 17;
        c
    }

    fn random_input(batch: usize, m: usize, t: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([batch, m, t], |_| rng.random_range(-1.0..1.0))
    }

    fn block_of(kind: BlockKind, cfg: &ModelConfig) -> Block {
        Block::new("b", kind, cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn resuming_from_any_block_reproduces_the_total() {
        let mut cfg = small_config(2, 12, 3);
        cfg.stacks = vec![StackKind::Trend, StackKind::Seasonality, StackKind::Generic];
        let model = NftModel::new(cfg).unwrap();
        let x = random_input(1, 2, 12, 4);
        let full = model.forward_sample(x.data()).total;
        let prefixes = model.prefixes(x.data());
        assert_eq!(prefixes.len(), 6);
        let blocks: Vec<&Block> = model.blocks().collect();
        for (block, p) in prefixes.iter().enumerate() {
            for stage in 0..=blocks[block].learner.stages() {
                assert_eq!(model.total_from(p, block, stage), full, "block {block} stage {stage}");
            }
        }
        let mut index = 0;
        for (b, block) in blocks.iter().enumerate() {
            for local in 0..block.params().len() {
                assert_eq!(model.resume_point(index), Some((b, block.stage_of(local))));
                index += 1;
            }
        }
        assert_eq!(model.resume_point(index), None);
    }

    #[test]
    fn seasonality_zero_heads_give_zero_outputs() {
        let cfg = small_config(3, 10, 4);
        let mut block = block_of(BlockKind::Seasonality { fourier_order: 8 }, &cfg);
        block.head_forecast.zero();
        block.head_backcast.zero();
        let out = seasonality_block_forward(&random_input(2, 3, 10, 0), &block).unwrap();
        assert!(out.forecast.data().iter().all(|&v| v == 0.0));
        assert!(out.backcast.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seasonality_forced_constant_coefficient() {
        let cfg = small_config(3, 10, 4);
        let mut block = block_of(BlockKind::Seasonality { fourier_order: 8 }, &cfg);
        block.head_forecast.zero();
        block.head_forecast.bias.value.data_mut()[0] = 2.0;
        let out = block.forward(&random_input(3, 3, 10, 1)).unwrap();
        assert!(out.forecast.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn seasonality_forecast_reconstructs_from_emitted_coefficients() {
        let cfg = small_config(4, 12, 6);
        let block = block_of(BlockKind::Seasonality { fourier_order: 8 }, &cfg);
        let out = block.forward(&random_input(2, 4, 12, 2)).unwrap();
        let basis = block.fourier_basis().unwrap();
        for b in 0..2 {
            let c = out.forecast_coefficients.index_axis0(b);
            let rebuilt = basis
                .f_m()
                .transpose()
                .unwrap()
                .matmul(&c)
                .unwrap()
                .matmul(basis.f_h(TimeAxis::Forecast))
                .unwrap();
            assert!(rebuilt.max_abs_diff(&out.forecast.index_axis0(b)).unwrap() < 1e-10);
            let span = basis.f_m().transpose().unwrap();
            let y = out.forecast.index_axis0(b);
            for j in 0..6 {
                let col: Vec<f64> = (0..4).map(|i| y.get(&[i, j])).collect();
                assert!(oracle::projection_residual(&span, &col) < 1e-9);
            }
        }
    }

    #[test]
    fn trend_forced_coefficients() {
        let cfg = small_config(1, 8, 5);
        let mut block = block_of(BlockKind::Trend { degree: 4 }, &cfg);
        block.head_forecast.zero();
        block.head_forecast.bias.value.data_mut()[0] = 1.0;
        let out = trend_block_forward(&random_input(1, 1, 8, 3), &block).unwrap();
        assert!(out.forecast.data().iter().all(|&v| v == 1.0));

        block.head_forecast.bias.value.data_mut().copy_from_slice(&[0.0, 1.0, 0.0, 0.0]);
        let out = block.forward(&random_input(1, 1, 8, 3)).unwrap();
        for j in 0..5 {
            assert_eq!(out.forecast.data()[j], j as f64 / 5.0);
        }
    }

    #[test]
    fn trend_forecast_is_a_cubic() {
        let cfg = small_config(3, 10, 9);
        let block = block_of(BlockKind::Trend { degree: 4 }, &cfg);
        let out = block.forward(&random_input(2, 3, 10, 4)).unwrap();
        for row in out.forecast.data().chunks(9) {
            assert!(oracle::polynomial_fit_residual(row, 3) < 1e-6);
        }
    }

    #[test]
    fn generic_block_shapes_and_zeros() {
        let cfg = small_config(2, 7, 3);
        let mut block = block_of(BlockKind::Generic, &cfg);
        let out = generic_block_forward(&random_input(4, 2, 7, 5), &block).unwrap();
        assert_eq!(out.forecast.shape(), &[4, 2, 3]);
        assert_eq!(out.backcast.shape(), &[4, 2, 7]);
        let zero_in = block.forward(&Tensor::zeros([1, 2, 7])).unwrap();
        assert!(zero_in.forecast.data().iter().all(|&v| v == 0.0));
        block.head_forecast.zero();
        block.head_backcast.zero();
        let out = block.forward(&random_input(1, 2, 7, 6)).unwrap();
        assert!(out.forecast.data().iter().all(|&v| v == 0.0));
        assert!(out.backcast.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_kind_mismatch_is_an_error() {
        let cfg = small_config(2, 7, 3);
        let block = block_of(BlockKind::Generic, &cfg);
        assert!(trend_block_forward(&random_input(1, 2, 7, 0), &block).is_err());
        assert!(matches!(
            block.forward(&Tensor::zeros([1, 3, 7])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn single_zero_trend_block_passes_input_through() {
        let mut cfg = small_config(2, 6, 3);
        cfg.stacks = vec![StackKind::Trend];
        cfg.blocks_per_stack = 1;
        let mut model = NftModel::new(cfg).unwrap();
        model.zero_heads();
        let x = random_input(1, 2, 6, 7);
        let dec = model.forward(&x).unwrap();
        assert!(dec.total.data().iter().all(|&v| v == 0.0));
        let steps = model.trace(&x.index_axis0(0)).unwrap();
        assert!(steps[0].backcast.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_that_backcasts_its_input_empties_the_residual() {
        // A generic block whose backcast head reproduces the input exactly.
        let mut cfg = small_config(1, 4, 2);
        cfg.stacks = vec![StackKind::Generic];
        cfg.learner = LearnerKind::Fc;
        cfg.fc_layers = 1;
        cfg.fc_units = 8;
        cfg.blocks_per_stack = 2;
        let mut model = NftModel::new(cfg).unwrap();
        {
            let first = &mut model.stacks[0].blocks[0];
            if let CoefficientLearner::Fc(mlp) = &mut first.learner {
                // fc0 maps x to [x, -x] so that relu keeps both signs.
                let l = &mut mlp.layers_mut()[0];
                l.zero();
                for i in 0..4 {
                    l.weight.value.set(&[i, i], 1.0);
                    l.weight.value.set(&[4 + i, i], -1.0);
                }
            }
            first.head_backcast.zero();
            for i in 0..4 {
                first.head_backcast.weight.value.set(&[i, i], 1.0);
                first.head_backcast.weight.value.set(&[i, 4 + i], -1.0);
            }
        }
        let x = Tensor::new([1, 4], vec![0.5, -1.0, 2.0, -0.25]).unwrap();
        let steps = model.trace(&x).unwrap();
        assert_eq!(steps[0].backcast, x);
        assert!(steps[1].input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn components_sum_exactly_to_total_and_residuals_telescope() {
        let cfg = small_config(3, 12, 5);
        let model = NftModel::new(cfg).unwrap();
        let x = random_input(5, 3, 12, 9);
        let dec = model.forward(&x).unwrap();
        let trend = dec.component("trend").unwrap();
        let seas = dec.component("seasonality").unwrap();
        assert_eq!(trend.add(seas).unwrap(), dec.total);
        let steps = model.trace(&x.index_axis0(0)).unwrap();
        for w in steps.windows(2) {
            assert_eq!(w[0].input.sub(&w[0].backcast).unwrap(), w[1].input);
        }
    }

    #[test]
    fn trend_only_model_has_no_seasonality_component() {
        let mut cfg = small_config(2, 8, 4);
        cfg.stacks = vec![StackKind::Trend];
        let model = NftModel::new(cfg).unwrap();
        let dec = decompose_forecast(&random_input(2, 2, 8, 1), &model).unwrap();
        assert!(dec.component("seasonality").is_none());
        assert_eq!(dec.component("trend").unwrap(), &dec.total);

        let mut zeroed = model.clone();
        for p in zeroed.params_mut() {
            p.value.data_mut().fill(0.0);
        }
        let dec = zeroed.forward(&random_input(2, 2, 8, 1)).unwrap();
        assert!(dec.total.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizon_shape_is_independent_of_lookback() {
        for t in [3, 9, 30] {
            let model = NftModel::new(small_config(2, t, 7)).unwrap();
            let dec = model.forward(&random_input(2, 2, t, 0)).unwrap();
            assert_eq!(dec.total.shape(), &[2, 2, 7]);
        }
    }

    #[test]
    fn repeated_stack_kinds_get_distinct_names() {
        let mut cfg = small_config(2, 6, 3);
        cfg.stacks = vec![StackKind::Trend, StackKind::Seasonality, StackKind::Trend];
        let model = NftModel::new(cfg).unwrap();
        let names: Vec<_> = model.stacks.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["trend", "seasonality", "trend_2"]);
    }

    #[test]
    fn config_validation_rejects_empty_layouts() {
        let mut cfg = small_config(2, 6, 3);
        cfg.stacks.clear();
        assert!(NftModel::new(cfg.clone()).is_err());
        cfg = small_config(0, 6, 3);
        assert!(NftModel::new(cfg).is_err());
    }
}
