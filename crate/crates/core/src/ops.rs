//! Proposal-opacity lifting networks and the lifting-structure registry.
//!
//! Each learned operator is a bank of `N` linear proposal filters blended
//! per location by a nonlinear opacity branch whose outputs are
//! non-negative and sum to one.  If every proposal holds the same taps the
//! blend collapses to that fixed filter regardless of the opacities, which
//! is what base-equivalent initialization exploits.

use crate::error::{Error, Result};
use crate::lifting::{
    Direction, LiftingStep, LiftingStructure, PhaseHalf, Placement, StepOperator,
};
use crate::nn::{
    conv2d_backward, conv2d_forward, normalize_backward, normalize_forward, relu_backward,
    relu_forward, NormalizeTrace,
};
use crate::store::{GradStore, WeightStore};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Proposal/opacity channel count `N`, outer kernel support `K` and
/// residual block count `R`.  The compact variant forces 3x3 kernels and
/// drops one residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub channels: usize,
    pub kernel: usize,
    pub residual_blocks: usize,
    pub compact: bool,
}

impl NetConfig {
    pub fn new(channels: usize, kernel: usize, residual_blocks: usize, compact: bool) -> Result<Self> {
        if channels == 0 {
            return Err(Error::config("proposal-opacity nets need at least one channel"));
        }
        if kernel % 2 == 0 {
            return Err(Error::config("kernel support must be odd"));
        }
        Ok(NetConfig {
            channels,
            kernel,
            residual_blocks,
            compact,
        })
    }

    pub fn standard(channels: usize) -> Self {
        NetConfig {
            channels,
            kernel: 5,
            residual_blocks: 2,
            compact: false,
        }
    }

    pub fn effective_kernel(&self) -> usize {
        if self.compact {
            3
        } else {
            self.kernel
        }
    }

    pub fn effective_blocks(&self) -> usize {
        if self.compact {
            self.residual_blocks.saturating_sub(1)
        } else {
            self.residual_blocks
        }
    }

    /// Hidden width of the opacity branch.
    pub fn hidden_width(&self) -> usize {
        self.channels + 12
    }

    /// Half-extent of the opacity branch's receptive field; the proposal
    /// bank is built with the same region of support.
    pub fn operator_radius(&self) -> usize {
        (self.effective_kernel() - 1) + 2 * self.effective_blocks()
    }

    pub fn proposal_extent(&self) -> usize {
        2 * self.operator_radius() + 1
    }
}

/// What the frozen/base proposal of an operator looks like.
#[derive(Debug, Clone)]
pub enum BaseProposal {
    /// No base behaviour: the operator vanishes when its proposals are zero.
    Zero,
    /// A separable fixed lifting filter along the step direction.
    Filter {
        direction: Direction,
        taps: Vec<(i32, f64)>,
    },
    /// High-to-low step that absorbs a fixed horizontal update: taps act on
    /// the HL input channel.
    FusedUpdate { taps: Vec<(i32, f64)> },
}

/// One learned lifting operator: its weight-name prefix, channel contract
/// and architecture.
#[derive(Debug, Clone)]
pub struct PoNetSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub config: NetConfig,
    pub base: BaseProposal,
}

/// How the opacity maps are produced during a forward pass.
pub enum OpacityInjection {
    /// Run the opacity branch.
    Branch,
    /// Use externally supplied maps (oracle pre-training); the branch is
    /// skipped and receives no gradient.
    Injected(Tensor),
}

pub struct OpacityBranchTrace {
    pre_in: Tensor,
    blocks: Vec<ResBlockTrace>,
    /// Output of the residual chain, i.e. the input to `conv_out`.
    backbone: Tensor,
    pre_out: Tensor,
    norm: NormalizeTrace,
}

struct ResBlockTrace {
    input: Tensor,
    pre1: Tensor,
    act1: Tensor,
}

pub struct PoTrace {
    input: Tensor,
    proposals: Vec<Tensor>,
    opacities: Tensor,
    branch: Option<OpacityBranchTrace>,
}

impl PoTrace {
    pub fn opacities(&self) -> &Tensor {
        &self.opacities
    }
}

impl PoNetSpec {
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        config: NetConfig,
        base: BaseProposal,
    ) -> Self {
        PoNetSpec {
            name: name.into(),
            in_channels,
            out_channels,
            config,
            base,
        }
    }

    pub fn prop_name(&self, n: usize) -> String {
        format!("{}.prop.{n}", self.name)
    }

    fn opac_name(&self, part: &str) -> String {
        format!("{}.opac.{part}", self.name)
    }

    /// Every parameter tensor this operator owns, with its shape.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let n = self.config.channels;
        let w = self.config.hidden_width();
        let k = self.config.effective_kernel();
        let p = self.config.proposal_extent();
        let mut out = Vec::new();
        for i in 0..n {
            out.push((self.prop_name(i), vec![self.out_channels, self.in_channels, p, p]));
        }
        out.push((self.opac_name("conv_in"), vec![w, self.in_channels, k, k]));
        for r in 0..self.config.effective_blocks() {
            out.push((self.opac_name(&format!("res{r}.conv1")), vec![w, w, 3, 3]));
            out.push((self.opac_name(&format!("res{r}.conv2")), vec![w, w, 3, 3]));
        }
        out.push((self.opac_name("conv_out"), vec![n, w, k, k]));
        out
    }

    pub fn count_params(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    fn opacity_forward(
        &self,
        input: &Tensor,
        weights: &WeightStore,
    ) -> Result<(Tensor, OpacityBranchTrace)> {
        let pre_in = conv2d_forward(input, weights.require(&self.opac_name("conv_in"))?, None)?;
        let mut cur = relu_forward(&pre_in);
        let mut blocks = Vec::with_capacity(self.config.effective_blocks());
        for r in 0..self.config.effective_blocks() {
            let k1 = weights.require(&self.opac_name(&format!("res{r}.conv1")))?;
            let k2 = weights.require(&self.opac_name(&format!("res{r}.conv2")))?;
            let pre1 = conv2d_forward(&cur, k1, None)?;
            let act1 = relu_forward(&pre1);
            let mut out = conv2d_forward(&act1, k2, None)?;
            out.add_assign(&cur);
            blocks.push(ResBlockTrace {
                input: cur,
                pre1,
                act1,
            });
            cur = out;
        }
        let pre_out = conv2d_forward(&cur, weights.require(&self.opac_name("conv_out"))?, None)?;
        let act_out = relu_forward(&pre_out);
        let (opacities, norm) = normalize_forward(&act_out);
        Ok((
            opacities,
            OpacityBranchTrace {
                pre_in,
                blocks,
                backbone: cur,
                pre_out,
                norm,
            },
        ))
    }

    fn opacity_backward(
        &self,
        trace: &OpacityBranchTrace,
        input: &Tensor,
        g_opac: &Tensor,
        weights: &WeightStore,
        grads: &mut GradStore,
    ) -> Result<Tensor> {
        let g_act_out = normalize_backward(&trace.norm, g_opac);
        let g_pre_out = relu_backward(&trace.pre_out, &g_act_out);
        let co = conv2d_backward(
            &trace.backbone,
            weights.require(&self.opac_name("conv_out"))?,
            false,
            &g_pre_out,
        )?;
        grads.accumulate(&self.opac_name("conv_out"), &co.kernels);
        let mut g = co.input;
        for (r, b) in trace.blocks.iter().enumerate().rev() {
            let k1 = weights.require(&self.opac_name(&format!("res{r}.conv1")))?;
            let k2 = weights.require(&self.opac_name(&format!("res{r}.conv2")))?;
            let g2 = conv2d_backward(&b.act1, k2, false, &g)?;
            let g_pre1 = relu_backward(&b.pre1, &g2.input);
            let g1 = conv2d_backward(&b.input, k1, false, &g_pre1)?;
            grads.accumulate(&self.opac_name(&format!("res{r}.conv2")), &g2.kernels);
            grads.accumulate(&self.opac_name(&format!("res{r}.conv1")), &g1.kernels);
            let mut g_in = g1.input;
            g_in.add_assign(&g); // skip path
            g = g_in;
        }
        let g_pre_in = relu_backward(&trace.pre_in, &g);
        let gi = conv2d_backward(
            input,
            weights.require(&self.opac_name("conv_in"))?,
            false,
            &g_pre_in,
        )?;
        grads.accumulate(&self.opac_name("conv_in"), &gi.kernels);
        Ok(gi.input)
    }

    /// Blended output `sum_n proposal_n(input) * opacity_n(input)` together
    /// with everything the backward pass needs.
    pub fn forward(
        &self,
        input: &Tensor,
        weights: &WeightStore,
        injection: OpacityInjection,
    ) -> Result<(Tensor, PoTrace)> {
        if input.channels() != self.in_channels {
            return Err(Error::config(format!(
                "operator '{}' expects {} input channels, got {}",
                self.name,
                self.in_channels,
                input.channels()
            )));
        }
        let n = self.config.channels;
        let (h, w) = (input.height(), input.width());
        let mut proposals = Vec::with_capacity(n);
        for i in 0..n {
            proposals.push(conv2d_forward(
                input,
                weights.require(&self.prop_name(i))?,
                None,
            )?);
        }
        let (opacities, branch) = match injection {
            OpacityInjection::Branch => {
                let (o, t) = self.opacity_forward(input, weights)?;
                (o, Some(t))
            }
            OpacityInjection::Injected(o) => {
                if o.shape() != [n, h, w] {
                    return Err(Error::config(format!(
                        "injected opacities shape {:?} does not match [{n}, {h}, {w}]",
                        o.shape()
                    )));
                }
                (o, None)
            }
        };
        let mut out = Tensor::zeros(&[self.out_channels, h, w]);
        for (i, p) in proposals.iter().enumerate() {
            for b in 0..self.out_channels {
                for y in 0..h {
                    let prow = p.row(b, y);
                    let orow = opacities.row(i, y);
                    let dst = out.row_mut(b, y);
                    for x in 0..w {
                        dst[x] += prow[x] * orow[x];
                    }
                }
            }
        }
        Ok((
            out,
            PoTrace {
                input: input.clone(),
                proposals,
                opacities,
                branch,
            },
        ))
    }

    /// Gradient with respect to the operator input; parameter gradients for
    /// every unfrozen tensor accumulate into `grads` when provided.
    pub fn backward(
        &self,
        trace: &PoTrace,
        grad_out: &Tensor,
        weights: &WeightStore,
        mut grads: Option<&mut GradStore>,
    ) -> Result<Tensor> {
        let n = self.config.channels;
        let (h, w) = (trace.input.height(), trace.input.width());
        if grad_out.shape() != [self.out_channels, h, w] {
            return Err(Error::config("po backward: gradient shape mismatch"));
        }
        let mut g_input = Tensor::zeros(trace.input.shape());
        let mut g_opac = Tensor::zeros(&[n, h, w]);
        for (i, p) in trace.proposals.iter().enumerate() {
            // d out[b] / d p_i[b] = opacity_i ; d out[b] / d opacity_i = p_i[b]
            let mut g_p = Tensor::zeros(&[self.out_channels, h, w]);
            for b in 0..self.out_channels {
                for y in 0..h {
                    let go = grad_out.row(b, y);
                    let orow = trace.opacities.row(i, y);
                    let prow = p.row(b, y);
                    let gp = g_p.row_mut(b, y);
                    for x in 0..w {
                        gp[x] = go[x] * orow[x];
                    }
                    let go_row = g_opac.row_mut(i, y);
                    for x in 0..w {
                        go_row[x] += go[x] * prow[x];
                    }
                }
            }
            let pg = conv2d_backward(&trace.input, weights.require(&self.prop_name(i))?, false, &g_p)?;
            if let Some(gr) = grads.as_deref_mut() {
                gr.accumulate(&self.prop_name(i), &pg.kernels);
            }
            g_input.add_assign(&pg.input);
        }
        if let Some(branch) = &trace.branch {
            // With injected opacities the branch is frozen and contributes no
            // gradient; otherwise chain through it (into a sink if the caller
            // only wants the input gradient).
            let g_branch_in = match grads.as_deref_mut() {
                Some(gr) => self.opacity_backward(branch, &trace.input, &g_opac, weights, gr)?,
                None => {
                    let mut sink = GradStore::new();
                    self.opacity_backward(branch, &trace.input, &g_opac, weights, &mut sink)?
                }
            };
            g_input.add_assign(&g_branch_in);
        }
        Ok(g_input)
    }
}

// ---------------------------------------------------------------------------
// Structure registry
// ---------------------------------------------------------------------------

pub const REGISTRY: &[&str] = &[
    "legall53",
    "cdf97",
    "po-p-u",
    "po-u-p",
    "hybrid53",
    "hybrid97",
    "custom4s",
    "custom4ms",
    "custom5s",
];

use crate::wavelets::{cdf97_params, cdf97_steps, fixed_step as fixed, legall53_steps, PREDICT_TAPS, UPDATE_TAPS};

/// Simple averaging update used by the update-predict structure, written
/// onto the odd phase so the low band lands there.
const AVERAGE_TAPS: [(i32, f64); 2] = [(0, 0.5), (1, 0.5)];
/// Predict for the update-predict structure: removes the (doubled) lowpass
/// from the even phase.
const UP_PREDICT_TAPS: [(i32, f64); 2] = [(-1, -0.25), (0, -0.25)];

fn learned(name: &str) -> StepOperator {
    StepOperator::Learned(name.to_string())
}

fn base_net(name: &str, config: NetConfig, direction: Direction, taps: &[(i32, f64)]) -> PoNetSpec {
    PoNetSpec::new(
        name,
        1,
        1,
        config,
        BaseProposal::Filter {
            direction,
            taps: taps.to_vec(),
        },
    )
}

fn h2l_net(config: NetConfig, fused: Option<&[(i32, f64)]>) -> PoNetSpec {
    let base = match fused {
        Some(taps) => BaseProposal::FusedUpdate { taps: taps.to_vec() },
        None => BaseProposal::Zero,
    };
    PoNetSpec::new("H2L", 3, 1, config, base)
}

fn l2h_net(config: NetConfig) -> PoNetSpec {
    PoNetSpec::new("L2H", 1, 3, config, BaseProposal::Zero)
}

fn structure(
    name: &str,
    steps: Vec<LiftingStep>,
    nets: Vec<PoNetSpec>,
    gains: Option<(f64, f64)>,
    low_row: PhaseHalf,
    low_col: PhaseHalf,
) -> LiftingStructure {
    LiftingStructure {
        name: name.to_string(),
        steps,
        nets: nets.into_iter().map(|n| (n.name.clone(), n)).collect(),
        vertical_gains: gains,
        horizontal_gains: gains,
        low_row_phase: low_row,
        low_col_phase: low_col,
    }
}

/// Assemble a registered lifting structure and its zero-filled weight
/// template.
pub fn make_structure(name: &str, config: NetConfig) -> Result<(LiftingStructure, WeightStore)> {
    let s = match name {
        "legall53" => structure(
            name,
            legall53_steps(),
            vec![],
            None,
            PhaseHalf::Even,
            PhaseHalf::Even,
        ),
        "cdf97" => structure(
            name,
            cdf97_steps(),
            vec![],
            Some((cdf97_params::K, 1.0 / cdf97_params::K)),
            PhaseHalf::Even,
            PhaseHalf::Even,
        ),
        "po-p-u" | "custom4s" => {
            let steps = vec![
                LiftingStep::vertical(learned("PV"), PhaseHalf::Even, 1.0),
                LiftingStep::vertical(learned("UV"), PhaseHalf::Odd, 1.0),
                LiftingStep::horizontal(learned("PH"), PhaseHalf::Even, 1.0),
                LiftingStep::horizontal(learned("UH"), PhaseHalf::Odd, 1.0),
            ];
            let nets = vec![
                base_net("PV", config, Direction::Vertical, &PREDICT_TAPS),
                base_net("UV", config, Direction::Vertical, &UPDATE_TAPS),
                base_net("PH", config, Direction::Horizontal, &PREDICT_TAPS),
                base_net("UH", config, Direction::Horizontal, &UPDATE_TAPS),
            ];
            structure(name, steps, nets, None, PhaseHalf::Even, PhaseHalf::Even)
        }
        "po-u-p" => {
            // Update first (fixed averaging onto the odd phase), then a
            // learned predict that turns the even phase into the high band.
            let steps = vec![
                LiftingStep::vertical(fixed(&AVERAGE_TAPS), PhaseHalf::Even, 1.0),
                LiftingStep::vertical(learned("PV"), PhaseHalf::Odd, 1.0),
                LiftingStep::horizontal(fixed(&AVERAGE_TAPS), PhaseHalf::Even, 1.0),
                LiftingStep::horizontal(learned("PH"), PhaseHalf::Odd, 1.0),
            ];
            let nets = vec![
                base_net("PV", config, Direction::Vertical, &UP_PREDICT_TAPS),
                base_net("PH", config, Direction::Horizontal, &UP_PREDICT_TAPS),
            ];
            structure(name, steps, nets, None, PhaseHalf::Odd, PhaseHalf::Odd)
        }
        "hybrid53" => {
            let mut steps = legall53_steps();
            steps.push(LiftingStep {
                operator: learned("H2L"),
                placement: Placement::HighToLow,
                sign: -1.0,
            });
            steps.push(LiftingStep {
                operator: learned("L2H"),
                placement: Placement::LowToHigh,
                sign: -1.0,
            });
            let nets = vec![h2l_net(config, None), l2h_net(config)];
            structure(name, steps, nets, None, PhaseHalf::Even, PhaseHalf::Even)
        }
        "hybrid97" => {
            let mut steps = cdf97_steps();
            steps.push(LiftingStep {
                operator: learned("H2L"),
                placement: Placement::HighToLow,
                sign: -1.0,
            });
            steps.push(LiftingStep {
                operator: learned("L2H"),
                placement: Placement::LowToHigh,
                sign: -1.0,
            });
            let nets = vec![h2l_net(config, None), l2h_net(config)];
            structure(
                name,
                steps,
                nets,
                Some((cdf97_params::K, 1.0 / cdf97_params::K)),
                PhaseHalf::Even,
                PhaseHalf::Even,
            )
        }
        "custom4ms" | "custom5s" => {
            // The predict-update base with the last fixed update replaced by
            // (or fused into) the high-to-low step; custom5s appends the
            // low-to-high step as the fifth learned operator.
            let mut steps = vec![
                LiftingStep::vertical(learned("PV"), PhaseHalf::Even, 1.0),
                LiftingStep::vertical(learned("UV"), PhaseHalf::Odd, 1.0),
                LiftingStep::horizontal(learned("PH"), PhaseHalf::Even, 1.0),
                LiftingStep {
                    operator: learned("H2L"),
                    placement: Placement::HighToLow,
                    sign: 1.0,
                },
            ];
            let mut nets = vec![
                base_net("PV", config, Direction::Vertical, &PREDICT_TAPS),
                base_net("UV", config, Direction::Vertical, &UPDATE_TAPS),
                base_net("PH", config, Direction::Horizontal, &PREDICT_TAPS),
                h2l_net(config, Some(&UPDATE_TAPS)),
            ];
            if name == "custom5s" {
                steps.push(LiftingStep {
                    operator: learned("L2H"),
                    placement: Placement::LowToHigh,
                    sign: -1.0,
                });
                nets.push(l2h_net(config));
            }
            structure(name, steps, nets, None, PhaseHalf::Even, PhaseHalf::Even)
        }
        other => {
            return Err(Error::config(format!(
                "unknown structure '{other}' (known: {})",
                REGISTRY.join(", ")
            )))
        }
    };
    let template = weight_template(&s);
    Ok((s, template))
}

/// Zero-filled store with one entry per learned parameter tensor.
pub fn weight_template(structure: &LiftingStructure) -> WeightStore {
    let mut store = WeightStore::new();
    for net in structure.nets.values() {
        for (name, shape) in net.param_shapes() {
            store.insert(name, Tensor::zeros(&shape));
        }
    }
    store
}

/// Total trainable scalar count across all named operators (weights are
/// shared across decomposition levels, so each operator counts once).
pub fn count_params(structure: &LiftingStructure) -> usize {
    structure.nets.values().map(|n| n.count_params()).sum()
}

/// Check that a weight store carries every operator tensor the structure
/// needs, with matching shapes (extra entries such as rate-model scales are
/// fine).
pub fn validate_weights(structure: &LiftingStructure, weights: &WeightStore) -> Result<()> {
    for net in structure.nets.values() {
        for (name, shape) in net.param_shapes() {
            let t = weights.require(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::config(format!(
                    "weight '{name}' has shape {:?}, structure expects {:?}",
                    t.shape(),
                    shape
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Random,
    /// Make the learned transform numerically identical to its base wavelet:
    /// every proposal of a base-replacing operator holds the fixed taps, and
    /// correction operators get all-zero proposal banks.
    BaseEquivalent,
}

/// Embed 1-d taps into a proposal kernel.
fn embed_taps(shape: &[usize], direction: Direction, taps: &[(i32, f64)], channel: usize) -> Tensor {
    let mut k = Tensor::zeros(shape);
    let (kh, kw) = (shape[2], shape[3]);
    let (cy, cx) = (kh / 2, kw / 2);
    for &(off, coef) in taps {
        match direction {
            Direction::Vertical => *k.at4_mut(0, channel, (cy as i32 + off) as usize, cx) += coef,
            Direction::Horizontal => *k.at4_mut(0, channel, cy, (cx as i32 + off) as usize) += coef,
        }
    }
    k
}

/// Initialize a weight store for a structure.  Random mode draws zero-mean
/// uniform values with bound `1 / (k * sqrt(N))` per layer and still pins
/// proposal 0 of every base-replacing operator to the fixed taps, so the
/// base transform stays reachable.  Deterministic for a given seed.
pub fn init_weights(structure: &LiftingStructure, mode: InitMode, seed: u64) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for net in structure.nets.values() {
        let n_channels = net.config.channels as f64;
        for (name, shape) in net.param_shapes() {
            let is_proposal = name.contains(".prop.");
            let prop_index: Option<usize> = name
                .rsplit('.')
                .next()
                .and_then(|s| s.parse().ok())
                .filter(|_| is_proposal);
            let k_extent = shape[2].max(shape[3]) as f64;
            let bound = 1.0 / (k_extent * n_channels.sqrt());
            let mut t = Tensor::zeros(&shape);
            let base_kernel = |taps: &Vec<(i32, f64)>, dir: Direction, ch: usize| {
                embed_taps(&shape, dir, taps, ch)
            };
            let fill_random = |t: &mut Tensor, rng: &mut ChaCha8Rng| {
                for v in t.data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            };
            match (&net.base, mode, prop_index) {
                // Proposal banks.
                (BaseProposal::Filter { direction, taps }, InitMode::BaseEquivalent, Some(_)) => {
                    t = base_kernel(taps, *direction, 0);
                }
                (BaseProposal::Filter { direction, taps }, InitMode::Random, Some(0)) => {
                    t = base_kernel(taps, *direction, 0);
                }
                (BaseProposal::FusedUpdate { taps }, InitMode::BaseEquivalent, Some(_)) => {
                    // Channel 0 of the stacked detail input is HL.
                    t = base_kernel(taps, Direction::Horizontal, 0);
                }
                (BaseProposal::FusedUpdate { taps }, InitMode::Random, Some(0)) => {
                    t = base_kernel(taps, Direction::Horizontal, 0);
                }
                (BaseProposal::Zero, InitMode::BaseEquivalent, Some(_)) => {
                    // stays zero: the correction vanishes for any opacities
                }
                (_, _, Some(_)) => fill_random(&mut t, &mut rng),
                // Opacity branch: random in both modes (the base-equivalent
                // transform is independent of the opacities by construction).
                (_, _, None) => fill_random(&mut t, &mut rng),
            }
            store.insert(name, t);
        }
    }
    store
}

/// Parse a structure id like `hybrid97-9c-compact` into a registry name and
/// a net configuration.
pub fn parse_structure_id(id: &str) -> Result<(String, NetConfig)> {
    let mut rest = id;
    let compact = if let Some(stripped) = rest.strip_suffix("-compact") {
        rest = stripped;
        true
    } else {
        false
    };
    let mut channels = 5usize;
    if let Some(pos) = rest.rfind("-") {
        let tail = &rest[pos + 1..];
        if let Some(num) = tail.strip_suffix('c') {
            if let Ok(n) = num.parse::<usize>() {
                channels = n;
                rest = &rest[..pos];
            }
        }
    }
    if !REGISTRY.contains(&rest) {
        return Err(Error::config(format!(
            "unknown structure id '{id}' (known bases: {})",
            REGISTRY.join(", ")
        )));
    }
    let mut cfg = NetConfig::standard(channels);
    cfg.compact = compact;
    NetConfig::new(cfg.channels, cfg.kernel, cfg.residual_blocks, cfg.compact)?;
    Ok((rest.to_string(), cfg))
}

/// Canonical id string for a (name, config) pair.
pub fn structure_id(name: &str, config: &NetConfig) -> String {
    let mut id = format!("{name}-{}c", config.channels);
    if config.compact {
        id.push_str("-compact");
    }
    id
}
