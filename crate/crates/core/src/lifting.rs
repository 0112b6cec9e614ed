//! Generic polyphase lifting engine.
//!
//! A lifting structure is an ordered list of steps, each adding a filtered
//! version of one polyphase component onto another: `target += sign *
//! Op(source)`.  Because the source is never modified by its own step, the
//! whole cascade inverts exactly by replaying the steps backwards with the
//! sign flipped, no matter what the operators are -- fixed filters or
//! nonlinear learned networks.  One level of 2-d decomposition runs through
//! three stages: row phases (vertical steps), column phases within each row
//! band (horizontal steps), then whole subbands (high-to-low / low-to-high
//! steps).  The same steps and weights are reused at every decomposition
//! level.

use crate::error::{Error, Result};
use crate::ops::{OpacityInjection, PoNetSpec, PoTrace};
use crate::store::{GradStore, WeightStore};
use crate::tensor::{resample_backward, resample_to, Tensor};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseHalf {
    Even,
    Odd,
}

impl PhaseHalf {
    pub fn other(self) -> PhaseHalf {
        match self {
            PhaseHalf::Even => PhaseHalf::Odd,
            PhaseHalf::Odd => PhaseHalf::Even,
        }
    }
}

/// 1-d taps along the step direction; offsets index the opposite phase grid
/// relative to the target sample.
#[derive(Debug, Clone)]
pub struct FixedFilter {
    pub taps: Vec<(i32, f64)>,
}

impl FixedFilter {
    pub fn new(taps: Vec<(i32, f64)>) -> Result<Self> {
        if taps.is_empty() || taps.iter().any(|(_, c)| !c.is_finite()) {
            return Err(Error::config("fixed filter taps must be finite and nonempty"));
        }
        Ok(FixedFilter { taps })
    }

    /// Render the taps as a 1xN or Nx1 convolution kernel.
    pub fn kernel(&self, direction: Direction) -> Tensor {
        let radius = self
            .taps
            .iter()
            .map(|(o, _)| o.unsigned_abs() as usize)
            .max()
            .unwrap_or(0);
        let ext = 2 * radius + 1;
        let shape = match direction {
            Direction::Vertical => [1, 1, ext, 1],
            Direction::Horizontal => [1, 1, 1, ext],
        };
        let mut k = Tensor::zeros(&shape);
        for &(off, coef) in &self.taps {
            let idx = (radius as i32 + off) as usize;
            match direction {
                Direction::Vertical => *k.at4_mut(0, 0, idx, 0) += coef,
                Direction::Horizontal => *k.at4_mut(0, 0, 0, idx) += coef,
            }
        }
        k
    }

    pub fn tap_sum(&self) -> f64 {
        self.taps.iter().map(|(_, c)| c).sum()
    }
}

#[derive(Debug, Clone)]
pub enum StepOperator {
    Fixed(FixedFilter),
    /// Name resolving into the structure's network table and weight store.
    Learned(String),
}

/// Where in the per-level pipeline a step acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Between the two row-phase planes (full parent width).
    Vertical { source: PhaseHalf },
    /// Between the two column-phase planes of each row band.
    Horizontal { source: PhaseHalf },
    /// Detail bands (HL, LH, HH stacked) predict a correction on LL.
    HighToLow,
    /// LL predicts corrections on each detail band.
    LowToHigh,
}

/// One elementary lifting step; the target is always the phase (or band
/// set) the source does not occupy, so a step never updates its own input.
#[derive(Debug, Clone)]
pub struct LiftingStep {
    pub operator: StepOperator,
    pub placement: Placement,
    pub sign: f64,
}

impl LiftingStep {
    pub fn vertical(operator: StepOperator, source: PhaseHalf, sign: f64) -> Self {
        LiftingStep {
            operator,
            placement: Placement::Vertical { source },
            sign,
        }
    }

    pub fn horizontal(operator: StepOperator, source: PhaseHalf, sign: f64) -> Self {
        LiftingStep {
            operator,
            placement: Placement::Horizontal { source },
            sign,
        }
    }
}

/// Ordered lifting steps plus the operator table and output conventions.
#[derive(Debug, Clone)]
pub struct LiftingStructure {
    pub name: String,
    pub steps: Vec<LiftingStep>,
    pub nets: BTreeMap<String, PoNetSpec>,
    /// Per row-phase scalar gains (even, odd) applied after the vertical
    /// steps; exact reciprocals are applied during synthesis.
    pub vertical_gains: Option<(f64, f64)>,
    pub horizontal_gains: Option<(f64, f64)>,
    /// Which row phase carries the low band after the vertical steps.
    pub low_row_phase: PhaseHalf,
    pub low_col_phase: PhaseHalf,
}

impl LiftingStructure {
    pub fn net(&self, name: &str) -> Result<&PoNetSpec> {
        self.nets
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown operator id '{name}'")))
    }

    pub fn has_learned_ops(&self) -> bool {
        !self.nets.is_empty()
    }
}

/// Even/odd split of a signal along one axis.
#[derive(Debug, Clone)]
pub struct PolyphasePair {
    pub even: Tensor,
    pub odd: Tensor,
    pub direction: Direction,
    pub parent_extent: usize,
}

/// Split into even- and odd-indexed samples along `direction`; the even
/// phase holds indices 0, 2, 4, ... and gets the extra sample for odd
/// parent extents.
pub fn split(signal: &Tensor, direction: Direction) -> PolyphasePair {
    let (c, h, w) = (signal.channels(), signal.height(), signal.width());
    match direction {
        Direction::Vertical => {
            let mut even = Tensor::zeros(&[c, h.div_ceil(2), w]);
            let mut odd = Tensor::zeros(&[c, h / 2, w]);
            for ch in 0..c {
                for y in 0..h {
                    let dst = if y % 2 == 0 {
                        even.row_mut(ch, y / 2)
                    } else {
                        odd.row_mut(ch, y / 2)
                    };
                    dst.copy_from_slice(signal.row(ch, y));
                }
            }
            PolyphasePair {
                even,
                odd,
                direction,
                parent_extent: h,
            }
        }
        Direction::Horizontal => {
            let mut even = Tensor::zeros(&[c, h, w.div_ceil(2)]);
            let mut odd = Tensor::zeros(&[c, h, w / 2]);
            for ch in 0..c {
                for y in 0..h {
                    let src = signal.row(ch, y);
                    for (i, v) in src.iter().step_by(2).enumerate() {
                        even.row_mut(ch, y)[i] = *v;
                    }
                    for (i, v) in src.iter().skip(1).step_by(2).enumerate() {
                        odd.row_mut(ch, y)[i] = *v;
                    }
                }
            }
            PolyphasePair {
                even,
                odd,
                direction,
                parent_extent: w,
            }
        }
    }
}

/// Exact inverse of [`split`].
pub fn merge(pair: &PolyphasePair) -> Tensor {
    merge_planes(&pair.even, &pair.odd, pair.direction, pair.parent_extent)
}

fn merge_planes(even: &Tensor, odd: &Tensor, direction: Direction, parent: usize) -> Tensor {
    let c = even.channels();
    match direction {
        Direction::Vertical => {
            let w = even.width();
            let mut out = Tensor::zeros(&[c, parent, w]);
            for ch in 0..c {
                for y in 0..parent {
                    let src = if y % 2 == 0 {
                        even.row(ch, y / 2)
                    } else {
                        odd.row(ch, y / 2)
                    };
                    out.row_mut(ch, y).copy_from_slice(src);
                }
            }
            out
        }
        Direction::Horizontal => {
            let h = even.height();
            let mut out = Tensor::zeros(&[c, h, parent]);
            for ch in 0..c {
                for y in 0..h {
                    let dst = out.row_mut(ch, y);
                    for (i, v) in even.row(ch, y).iter().enumerate() {
                        dst[2 * i] = *v;
                    }
                    for (i, v) in odd.row(ch, y).iter().enumerate() {
                        dst[2 * i + 1] = *v;
                    }
                }
            }
            out
        }
    }
}

/// Per-level coefficient planes; `details[0]` is the finest level.
#[derive(Debug, Clone)]
pub struct DetailBands {
    pub hl: Tensor,
    pub lh: Tensor,
    pub hh: Tensor,
}

#[derive(Debug, Clone)]
pub struct SubbandPyramid {
    pub details: Vec<DetailBands>,
    pub ll: Tensor,
    pub source_height: usize,
    pub source_width: usize,
}

impl SubbandPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Total coefficient count; equals the source pixel count (critical
    /// sampling).
    pub fn coefficient_count(&self) -> usize {
        self.ll.len()
            + self
                .details
                .iter()
                .map(|d| d.hl.len() + d.lh.len() + d.hh.len())
                .sum::<usize>()
    }

    /// Zero-filled pyramid with the same shapes.
    pub fn zeros_like(&self) -> SubbandPyramid {
        SubbandPyramid {
            details: self
                .details
                .iter()
                .map(|d| DetailBands {
                    hl: Tensor::zeros(d.hl.shape()),
                    lh: Tensor::zeros(d.lh.shape()),
                    hh: Tensor::zeros(d.hh.shape()),
                })
                .collect(),
            ll: Tensor::zeros(self.ll.shape()),
            source_height: self.source_height,
            source_width: self.source_width,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.ll.all_finite()
            && self
                .details
                .iter()
                .all(|d| d.hl.all_finite() && d.lh.all_finite() && d.hh.all_finite())
    }

    pub fn max_abs_diff(&self, other: &SubbandPyramid) -> f64 {
        let mut m = diff_planes(&self.ll, &other.ll);
        for (a, b) in self.details.iter().zip(&other.details) {
            m = m.max(diff_planes(&a.hl, &b.hl));
            m = m.max(diff_planes(&a.lh, &b.lh));
            m = m.max(diff_planes(&a.hh, &b.hh));
        }
        m
    }
}

fn diff_planes(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Which sampling grid a learned step's opacities live on, used by the
/// oracle-opacity injector during pre-training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepGrid {
    /// Row-phase planes: rows at level pitch, columns at the parent pitch.
    VerticalPhase,
    /// Subband-resolution planes.
    Subband,
}

/// Supplies externally computed opacity maps for learned steps.
pub trait OracleSource {
    fn opacities(
        &self,
        level: usize,
        grid: StepGrid,
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<Tensor>;
}

struct Ctx<'a> {
    structure: &'a LiftingStructure,
    weights: &'a WeightStore,
    oracle: Option<&'a dyn OracleSource>,
}

// ---------------------------------------------------------------------------
// Per-level execution plan
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum PlanItem {
    VStep { source: PhaseHalf, op: StepOperator, sign: f64 },
    VGains,
    HSplit,
    HStep { source: PhaseHalf, op: StepOperator, sign: f64 },
    HGains,
    ToBands,
    H2LStep { op: StepOperator, sign: f64 },
    L2HStep { op: StepOperator, sign: f64 },
}

fn build_plan(structure: &LiftingStructure) -> Result<Vec<PlanItem>> {
    #[derive(PartialEq, PartialOrd)]
    enum Stage {
        Rows,
        Quads,
        Bands,
    }
    let mut plan = Vec::new();
    let mut stage = Stage::Rows;
    fn to_quads(s: &LiftingStructure, plan: &mut Vec<PlanItem>, stage: &mut Stage) {
        if *stage == Stage::Rows {
            if s.vertical_gains.is_some() {
                plan.push(PlanItem::VGains);
            }
            plan.push(PlanItem::HSplit);
            *stage = Stage::Quads;
        }
    }
    fn to_bands(s: &LiftingStructure, plan: &mut Vec<PlanItem>, stage: &mut Stage) {
        to_quads(s, plan, stage);
        if *stage == Stage::Quads {
            if s.horizontal_gains.is_some() {
                plan.push(PlanItem::HGains);
            }
            plan.push(PlanItem::ToBands);
            *stage = Stage::Bands;
        }
    }
    for step in &structure.steps {
        match step.placement {
            Placement::Vertical { source } => {
                if stage > Stage::Rows {
                    return Err(Error::config(format!(
                        "structure '{}': vertical step after horizontal/band steps",
                        structure.name
                    )));
                }
                plan.push(PlanItem::VStep {
                    source,
                    op: step.operator.clone(),
                    sign: step.sign,
                });
            }
            Placement::Horizontal { source } => {
                to_quads(structure, &mut plan, &mut stage);
                if stage > Stage::Quads {
                    return Err(Error::config(format!(
                        "structure '{}': horizontal step after band steps",
                        structure.name
                    )));
                }
                plan.push(PlanItem::HStep {
                    source,
                    op: step.operator.clone(),
                    sign: step.sign,
                });
            }
            Placement::HighToLow => {
                to_bands(structure, &mut plan, &mut stage);
                plan.push(PlanItem::H2LStep {
                    op: step.operator.clone(),
                    sign: step.sign,
                });
            }
            Placement::LowToHigh => {
                to_bands(structure, &mut plan, &mut stage);
                plan.push(PlanItem::L2HStep {
                    op: step.operator.clone(),
                    sign: step.sign,
                });
            }
        }
    }
    to_bands(structure, &mut plan, &mut stage);
    Ok(plan)
}

// ---------------------------------------------------------------------------
// Operator application
// ---------------------------------------------------------------------------

enum OpTrace {
    Fixed { kernel: Tensor, input: Tensor },
    Learned { name: String, trace: PoTrace },
}

/// Target-shaped operator output plus its trace.  The source is first
/// resampled onto the target grid (phase planes differ by at most one
/// sample per axis).
#[allow(clippy::too_many_arguments)]
fn apply_operator(
    op: &StepOperator,
    direction: Option<Direction>,
    source: &Tensor,
    th: usize,
    tw: usize,
    out_channels: usize,
    level: usize,
    grid: StepGrid,
    ctx: &Ctx,
) -> Result<(Tensor, OpTrace)> {
    let resampled = resample_to(source, th, tw);
    match op {
        StepOperator::Fixed(filter) => {
            let dir = direction
                .ok_or_else(|| Error::config("fixed filters only apply to directional steps"))?;
            if resampled.channels() != 1 || out_channels != 1 {
                return Err(Error::config("fixed filter steps are single-channel"));
            }
            let kernel = filter.kernel(dir);
            let out = crate::nn::conv2d_forward(&resampled, &kernel, None)?;
            Ok((out, OpTrace::Fixed { kernel, input: resampled }))
        }
        StepOperator::Learned(name) => {
            let net = ctx.structure.net(name)?;
            if net.in_channels != resampled.channels() || net.out_channels != out_channels {
                return Err(Error::config(format!(
                    "operator '{name}' expects {}->{} channels, step provides {}->{}",
                    net.in_channels,
                    net.out_channels,
                    resampled.channels(),
                    out_channels
                )));
            }
            let injection = match ctx.oracle {
                Some(src) => OpacityInjection::Injected(src.opacities(
                    level,
                    grid,
                    net.config.channels,
                    th,
                    tw,
                )?),
                None => OpacityInjection::Branch,
            };
            let (out, trace) = net.forward(&resampled, ctx.weights, injection)?;
            if !out.all_finite() {
                return Err(Error::Numeric(format!(
                    "operator '{name}' produced non-finite values at level {level}"
                )));
            }
            Ok((out, OpTrace::Learned { name: name.clone(), trace }))
        }
    }
}

/// Gradient of [`apply_operator`] with respect to its (un-resampled) source;
/// learned-operator parameter gradients accumulate into `grads`.
fn operator_backward(
    trace: &OpTrace,
    grad_out: &Tensor,
    sh: usize,
    sw: usize,
    ctx: &Ctx,
    grads: Option<&mut GradStore>,
) -> Result<Tensor> {
    let g_resampled = match trace {
        OpTrace::Fixed { kernel, input } => {
            crate::nn::conv2d_backward(input, kernel, false, grad_out)?.input
        }
        OpTrace::Learned { name, trace } => {
            let net = ctx.structure.net(name)?;
            net.backward(trace, grad_out, ctx.weights, grads)?
        }
    };
    Ok(resample_backward(&g_resampled, sh, sw))
}

// ---------------------------------------------------------------------------
// Level state
// ---------------------------------------------------------------------------

struct Rows {
    even: Tensor,
    odd: Tensor,
}

impl Rows {
    /// Disjoint (source, target) borrows; the target is the other phase.
    fn pair_mut(&mut self, source: PhaseHalf) -> (&Tensor, &mut Tensor) {
        let Rows { even, odd } = self;
        match source {
            PhaseHalf::Even => (&*even, odd),
            PhaseHalf::Odd => (&*odd, even),
        }
    }

    fn phase_mut(&mut self, p: PhaseHalf) -> &mut Tensor {
        match p {
            PhaseHalf::Even => &mut self.even,
            PhaseHalf::Odd => &mut self.odd,
        }
    }
}

struct Quads {
    ee: Tensor,
    eo: Tensor,
    oe: Tensor,
    oo: Tensor,
}

impl Quads {
    /// Disjoint (source, target) borrows within one row band.
    fn pair_mut(&mut self, band: PhaseHalf, source: PhaseHalf) -> (&Tensor, &mut Tensor) {
        let Quads { ee, eo, oe, oo } = self;
        match (band, source) {
            (PhaseHalf::Even, PhaseHalf::Even) => (&*ee, eo),
            (PhaseHalf::Even, PhaseHalf::Odd) => (&*eo, ee),
            (PhaseHalf::Odd, PhaseHalf::Even) => (&*oe, oo),
            (PhaseHalf::Odd, PhaseHalf::Odd) => (&*oo, oe),
        }
    }

    fn plane_mut(&mut self, band: PhaseHalf, col: PhaseHalf) -> &mut Tensor {
        match (band, col) {
            (PhaseHalf::Even, PhaseHalf::Even) => &mut self.ee,
            (PhaseHalf::Even, PhaseHalf::Odd) => &mut self.eo,
            (PhaseHalf::Odd, PhaseHalf::Even) => &mut self.oe,
            (PhaseHalf::Odd, PhaseHalf::Odd) => &mut self.oo,
        }
    }
}

pub(crate) struct Bands {
    pub ll: Tensor,
    pub hl: Tensor,
    pub lh: Tensor,
    pub hh: Tensor,
}

fn quads_to_bands(q: Quads, low_row: PhaseHalf, low_col: PhaseHalf) -> Bands {
    let mut m = BTreeMap::new();
    m.insert((false, false), q.ee);
    m.insert((false, true), q.eo);
    m.insert((true, false), q.oe);
    m.insert((true, true), q.oo);
    let key = |r: PhaseHalf, c: PhaseHalf| (r == PhaseHalf::Odd, c == PhaseHalf::Odd);
    Bands {
        ll: m.remove(&key(low_row, low_col)).unwrap(),
        hl: m.remove(&key(low_row, low_col.other())).unwrap(),
        lh: m.remove(&key(low_row.other(), low_col)).unwrap(),
        hh: m.remove(&key(low_row.other(), low_col.other())).unwrap(),
    }
}

fn bands_to_quads(b: Bands, low_row: PhaseHalf, low_col: PhaseHalf) -> Quads {
    let mut m = BTreeMap::new();
    let key = |r: PhaseHalf, c: PhaseHalf| (r == PhaseHalf::Odd, c == PhaseHalf::Odd);
    m.insert(key(low_row, low_col), b.ll);
    m.insert(key(low_row, low_col.other()), b.hl);
    m.insert(key(low_row.other(), low_col), b.lh);
    m.insert(key(low_row.other(), low_col.other()), b.hh);
    Quads {
        ee: m.remove(&(false, false)).unwrap(),
        eo: m.remove(&(false, true)).unwrap(),
        oe: m.remove(&(true, false)).unwrap(),
        oo: m.remove(&(true, true)).unwrap(),
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.height(), t.width())
}

fn add_scaled(target: &mut Tensor, add: &Tensor, sign: f64) {
    debug_assert_eq!(target.shape(), add.shape());
    for (t, a) in target.data_mut().iter_mut().zip(add.data()) {
        *t += sign * a;
    }
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

enum ItemTrace {
    None,
    Single {
        src_shape: (usize, usize),
        op: OpTrace,
    },
    PairApplied {
        e_src: (usize, usize),
        e_op: OpTrace,
        o_src: (usize, usize),
        o_op: OpTrace,
    },
    H2L {
        detail_shapes: [(usize, usize); 3],
        op: OpTrace,
    },
    L2H {
        ll_shape: (usize, usize),
        op: OpTrace,
    },
}

pub struct LevelTrace {
    items: Vec<ItemTrace>,
    parent_h: usize,
}

pub struct AnalysisTrace {
    plan: Vec<PlanItem>,
    levels: Vec<LevelTrace>,
}

pub struct SynthesisTrace {
    plan: Vec<PlanItem>,
    /// Stored coarsest-first, matching synthesis execution order.
    levels: Vec<LevelTrace>,
}

// ---------------------------------------------------------------------------
// One-level analysis / synthesis and their backward passes
// ---------------------------------------------------------------------------

fn level_analyze(
    plane: &Tensor,
    level: usize,
    plan: &[PlanItem],
    ctx: &Ctx,
) -> Result<(Bands, LevelTrace)> {
    let parent_h = plane.height();
    let pair = split(plane, Direction::Vertical);
    let mut rows = Some(Rows {
        even: pair.even,
        odd: pair.odd,
    });
    let mut quads: Option<Quads> = None;
    let mut bands: Option<Bands> = None;
    let mut items = Vec::with_capacity(plan.len());

    for item in plan {
        match item {
            PlanItem::VStep { source, op, sign } => {
                let (src, tgt) = rows.as_mut().unwrap().pair_mut(*source);
                let (th, tw) = dims(tgt);
                let src_shape = dims(src);
                let (out, op_trace) = apply_operator(
                    op,
                    Some(Direction::Vertical),
                    src,
                    th,
                    tw,
                    1,
                    level,
                    StepGrid::VerticalPhase,
                    ctx,
                )?;
                add_scaled(tgt, &out, *sign);
                items.push(ItemTrace::Single { src_shape, op: op_trace });
            }
            PlanItem::VGains => {
                let (ge, go) = ctx.structure.vertical_gains.unwrap();
                let r = rows.as_mut().unwrap();
                r.even.scale(ge);
                r.odd.scale(go);
                items.push(ItemTrace::None);
            }
            PlanItem::HSplit => {
                let r = rows.take().unwrap();
                let pe = split(&r.even, Direction::Horizontal);
                let po = split(&r.odd, Direction::Horizontal);
                quads = Some(Quads {
                    ee: pe.even,
                    eo: pe.odd,
                    oe: po.even,
                    oo: po.odd,
                });
                items.push(ItemTrace::None);
            }
            PlanItem::HStep { source, op, sign } => {
                let q = quads.as_mut().unwrap();
                let mut traces = Vec::with_capacity(2);
                for band in [PhaseHalf::Even, PhaseHalf::Odd] {
                    let (src, tgt) = q.pair_mut(band, *source);
                    let (th, tw) = dims(tgt);
                    let src_shape = dims(src);
                    let (out, op_trace) = apply_operator(
                        op,
                        Some(Direction::Horizontal),
                        src,
                        th,
                        tw,
                        1,
                        level,
                        StepGrid::Subband,
                        ctx,
                    )?;
                    add_scaled(tgt, &out, *sign);
                    traces.push((src_shape, op_trace));
                }
                let (o_src, o_op) = traces.pop().unwrap();
                let (e_src, e_op) = traces.pop().unwrap();
                items.push(ItemTrace::PairApplied { e_src, e_op, o_src, o_op });
            }
            PlanItem::HGains => {
                let (ge, go) = ctx.structure.horizontal_gains.unwrap();
                let q = quads.as_mut().unwrap();
                q.ee.scale(ge);
                q.oe.scale(ge);
                q.eo.scale(go);
                q.oo.scale(go);
                items.push(ItemTrace::None);
            }
            PlanItem::ToBands => {
                let q = quads.take().unwrap();
                bands = Some(quads_to_bands(
                    q,
                    ctx.structure.low_row_phase,
                    ctx.structure.low_col_phase,
                ));
                items.push(ItemTrace::None);
            }
            PlanItem::H2LStep { op, sign } => {
                let b = bands.as_mut().unwrap();
                let (th, tw) = dims(&b.ll);
                let detail_shapes = [dims(&b.hl), dims(&b.lh), dims(&b.hh)];
                let stacked = Tensor::stack_channels(&[
                    &resample_to(&b.hl, th, tw),
                    &resample_to(&b.lh, th, tw),
                    &resample_to(&b.hh, th, tw),
                ])?;
                let (out, op_trace) =
                    apply_operator(op, None, &stacked, th, tw, 1, level, StepGrid::Subband, ctx)?;
                add_scaled(&mut b.ll, &out, *sign);
                items.push(ItemTrace::H2L { detail_shapes, op: op_trace });
            }
            PlanItem::L2HStep { op, sign } => {
                let b = bands.as_mut().unwrap();
                let ll_shape = dims(&b.ll);
                let (th, tw) = ll_shape;
                let (out, op_trace) =
                    apply_operator(op, None, &b.ll, th, tw, 3, level, StepGrid::Subband, ctx)?;
                for (i, tgt) in [&mut b.hl, &mut b.lh, &mut b.hh].into_iter().enumerate() {
                    let (bh, bw) = dims(tgt);
                    let chan = resample_to(&out.channel(i), bh, bw);
                    add_scaled(tgt, &chan, *sign);
                }
                items.push(ItemTrace::L2H { ll_shape, op: op_trace });
            }
        }
    }
    Ok((bands.unwrap(), LevelTrace { items, parent_h }))
}

/// Backward pass through one analysed level: gradients of the level's four
/// output bands become the gradient of the level's input plane.
fn level_analyze_backward(
    trace: &LevelTrace,
    plan: &[PlanItem],
    g_bands: Bands,
    ctx: &Ctx,
    mut grads: Option<&mut GradStore>,
) -> Result<Tensor> {
    let mut bands = Some(g_bands);
    let mut quads: Option<Quads> = None;
    let mut rows: Option<Rows> = None;

    for (item, it) in plan.iter().zip(&trace.items).rev() {
        match (item, it) {
            (PlanItem::L2HStep { sign, .. }, ItemTrace::L2H { ll_shape, op }) => {
                let b = bands.as_mut().unwrap();
                let (th, tw) = *ll_shape;
                let parts: Vec<Tensor> = [&b.hl, &b.lh, &b.hh]
                    .into_iter()
                    .map(|band| {
                        let mut g = resample_backward(band, th, tw);
                        g.scale(*sign);
                        g
                    })
                    .collect();
                let g_out = Tensor::stack_channels(&[&parts[0], &parts[1], &parts[2]])?;
                let g_ll = operator_backward(op, &g_out, th, tw, ctx, grads.as_deref_mut())?;
                b.ll.add_assign(&g_ll);
            }
            (PlanItem::H2LStep { sign, .. }, ItemTrace::H2L { detail_shapes, op }) => {
                let b = bands.as_mut().unwrap();
                let (th, tw) = dims(&b.ll);
                let mut g_ll = b.ll.clone();
                g_ll.scale(*sign);
                let g_stacked = operator_backward(op, &g_ll, th, tw, ctx, grads.as_deref_mut())?;
                for (i, tgt) in [&mut b.hl, &mut b.lh, &mut b.hh].into_iter().enumerate() {
                    let (bh, bw) = detail_shapes[i];
                    let g = resample_backward(&g_stacked.channel(i), bh, bw);
                    tgt.add_assign(&g);
                }
            }
            (PlanItem::ToBands, _) => {
                let b = bands.take().unwrap();
                quads = Some(bands_to_quads(
                    b,
                    ctx.structure.low_row_phase,
                    ctx.structure.low_col_phase,
                ));
            }
            (PlanItem::HGains, _) => {
                let (ge, go) = ctx.structure.horizontal_gains.unwrap();
                let q = quads.as_mut().unwrap();
                q.ee.scale(ge);
                q.oe.scale(ge);
                q.eo.scale(go);
                q.oo.scale(go);
            }
            (
                PlanItem::HStep { source, sign, .. },
                ItemTrace::PairApplied { e_src, e_op, o_src, o_op },
            ) => {
                let q = quads.as_mut().unwrap();
                for (band, src_shape, op) in
                    [(PhaseHalf::Even, e_src, e_op), (PhaseHalf::Odd, o_src, o_op)]
                {
                    let mut g_t = q.plane_mut(band, source.other()).clone();
                    g_t.scale(*sign);
                    let g_s = operator_backward(
                        op,
                        &g_t,
                        src_shape.0,
                        src_shape.1,
                        ctx,
                        grads.as_deref_mut(),
                    )?;
                    q.plane_mut(band, *source).add_assign(&g_s);
                }
            }
            (PlanItem::HSplit, _) => {
                let q = quads.take().unwrap();
                let we = q.ee.width() + q.eo.width();
                rows = Some(Rows {
                    even: merge_planes(&q.ee, &q.eo, Direction::Horizontal, we),
                    odd: merge_planes(&q.oe, &q.oo, Direction::Horizontal, we),
                });
            }
            (PlanItem::VGains, _) => {
                let (ge, go) = ctx.structure.vertical_gains.unwrap();
                let r = rows.as_mut().unwrap();
                r.even.scale(ge);
                r.odd.scale(go);
            }
            (PlanItem::VStep { source, sign, .. }, ItemTrace::Single { src_shape, op }) => {
                let r = rows.as_mut().unwrap();
                let g_t = {
                    let (_, tgt) = r.pair_mut(*source);
                    let mut g = tgt.clone();
                    g.scale(*sign);
                    g
                };
                let g_s =
                    operator_backward(op, &g_t, src_shape.0, src_shape.1, ctx, grads.as_deref_mut())?;
                r.phase_mut(*source).add_assign(&g_s);
            }
            _ => unreachable!("plan/trace mismatch"),
        }
    }
    let r = rows.take().unwrap();
    Ok(merge_planes(&r.even, &r.odd, Direction::Vertical, trace.parent_h))
}

/// Inverse of [`level_analyze`]: replays the plan backwards with flipped
/// signs and reciprocal gains.
fn level_synthesize(
    bands_in: Bands,
    level: usize,
    plan: &[PlanItem],
    ctx: &Ctx,
) -> Result<(Tensor, LevelTrace)> {
    let mut bands = Some(bands_in);
    let mut quads: Option<Quads> = None;
    let mut rows: Option<Rows> = None;
    let mut items: Vec<ItemTrace> = Vec::with_capacity(plan.len());

    for item in plan.iter().rev() {
        match item {
            PlanItem::L2HStep { op, sign } => {
                let b = bands.as_mut().unwrap();
                let ll_shape = dims(&b.ll);
                let (th, tw) = ll_shape;
                let (out, op_trace) =
                    apply_operator(op, None, &b.ll, th, tw, 3, level, StepGrid::Subband, ctx)?;
                for (i, tgt) in [&mut b.hl, &mut b.lh, &mut b.hh].into_iter().enumerate() {
                    let (bh, bw) = dims(tgt);
                    let chan = resample_to(&out.channel(i), bh, bw);
                    add_scaled(tgt, &chan, -sign);
                }
                items.push(ItemTrace::L2H { ll_shape, op: op_trace });
            }
            PlanItem::H2LStep { op, sign } => {
                let b = bands.as_mut().unwrap();
                let (th, tw) = dims(&b.ll);
                let detail_shapes = [dims(&b.hl), dims(&b.lh), dims(&b.hh)];
                let stacked = Tensor::stack_channels(&[
                    &resample_to(&b.hl, th, tw),
                    &resample_to(&b.lh, th, tw),
                    &resample_to(&b.hh, th, tw),
                ])?;
                let (out, op_trace) =
                    apply_operator(op, None, &stacked, th, tw, 1, level, StepGrid::Subband, ctx)?;
                add_scaled(&mut b.ll, &out, -sign);
                items.push(ItemTrace::H2L { detail_shapes, op: op_trace });
            }
            PlanItem::ToBands => {
                let b = bands.take().unwrap();
                quads = Some(bands_to_quads(
                    b,
                    ctx.structure.low_row_phase,
                    ctx.structure.low_col_phase,
                ));
                items.push(ItemTrace::None);
            }
            PlanItem::HGains => {
                let (ge, go) = ctx.structure.horizontal_gains.unwrap();
                let q = quads.as_mut().unwrap();
                q.ee.scale(1.0 / ge);
                q.oe.scale(1.0 / ge);
                q.eo.scale(1.0 / go);
                q.oo.scale(1.0 / go);
                items.push(ItemTrace::None);
            }
            PlanItem::HStep { source, op, sign } => {
                let q = quads.as_mut().unwrap();
                let mut traces = Vec::with_capacity(2);
                for band in [PhaseHalf::Even, PhaseHalf::Odd] {
                    let (src, tgt) = q.pair_mut(band, *source);
                    let (th, tw) = dims(tgt);
                    let src_shape = dims(src);
                    let (out, op_trace) = apply_operator(
                        op,
                        Some(Direction::Horizontal),
                        src,
                        th,
                        tw,
                        1,
                        level,
                        StepGrid::Subband,
                        ctx,
                    )?;
                    add_scaled(tgt, &out, -sign);
                    traces.push((src_shape, op_trace));
                }
                let (o_src, o_op) = traces.pop().unwrap();
                let (e_src, e_op) = traces.pop().unwrap();
                items.push(ItemTrace::PairApplied { e_src, e_op, o_src, o_op });
            }
            PlanItem::HSplit => {
                let q = quads.take().unwrap();
                let we = q.ee.width() + q.eo.width();
                rows = Some(Rows {
                    even: merge_planes(&q.ee, &q.eo, Direction::Horizontal, we),
                    odd: merge_planes(&q.oe, &q.oo, Direction::Horizontal, we),
                });
                items.push(ItemTrace::None);
            }
            PlanItem::VGains => {
                let (ge, go) = ctx.structure.vertical_gains.unwrap();
                let r = rows.as_mut().unwrap();
                r.even.scale(1.0 / ge);
                r.odd.scale(1.0 / go);
                items.push(ItemTrace::None);
            }
            PlanItem::VStep { source, op, sign } => {
                let (src, tgt) = rows.as_mut().unwrap().pair_mut(*source);
                let (th, tw) = dims(tgt);
                let src_shape = dims(src);
                let (out, op_trace) = apply_operator(
                    op,
                    Some(Direction::Vertical),
                    src,
                    th,
                    tw,
                    1,
                    level,
                    StepGrid::VerticalPhase,
                    ctx,
                )?;
                add_scaled(tgt, &out, -sign);
                items.push(ItemTrace::Single { src_shape, op: op_trace });
            }
        }
    }
    let r = rows.take().unwrap();
    let h = r.even.height() + r.odd.height();
    let plane = merge_planes(&r.even, &r.odd, Direction::Vertical, h);
    Ok((plane, LevelTrace { items, parent_h: h }))
}

/// Backward pass through one synthesised level: the gradient of the level's
/// reconstructed plane becomes gradients of the four input bands.
fn level_synthesize_backward(
    trace: &LevelTrace,
    plan: &[PlanItem],
    g_plane: &Tensor,
    ctx: &Ctx,
    mut grads: Option<&mut GradStore>,
) -> Result<Bands> {
    let pair = split(g_plane, Direction::Vertical);
    let mut rows = Some(Rows {
        even: pair.even,
        odd: pair.odd,
    });
    let mut quads: Option<Quads> = None;
    let mut bands: Option<Bands> = None;

    // Synthesis executed the plan reversed; its backward walks the plan
    // forward, with trace items indexed from the end.
    let n = plan.len();
    for (i, item) in plan.iter().enumerate() {
        let it = &trace.items[n - 1 - i];
        match (item, it) {
            (PlanItem::VStep { source, sign, .. }, ItemTrace::Single { src_shape, op }) => {
                let r = rows.as_mut().unwrap();
                let g_t = {
                    let (_, tgt) = r.pair_mut(*source);
                    let mut g = tgt.clone();
                    g.scale(-sign);
                    g
                };
                let g_s =
                    operator_backward(op, &g_t, src_shape.0, src_shape.1, ctx, grads.as_deref_mut())?;
                r.phase_mut(*source).add_assign(&g_s);
            }
            (PlanItem::VGains, _) => {
                let (ge, go) = ctx.structure.vertical_gains.unwrap();
                let r = rows.as_mut().unwrap();
                r.even.scale(1.0 / ge);
                r.odd.scale(1.0 / go);
            }
            (PlanItem::HSplit, _) => {
                let r = rows.take().unwrap();
                let pe = split(&r.even, Direction::Horizontal);
                let po = split(&r.odd, Direction::Horizontal);
                quads = Some(Quads {
                    ee: pe.even,
                    eo: pe.odd,
                    oe: po.even,
                    oo: po.odd,
                });
            }
            (
                PlanItem::HStep { source, sign, .. },
                ItemTrace::PairApplied { e_src, e_op, o_src, o_op },
            ) => {
                let q = quads.as_mut().unwrap();
                for (band, src_shape, op) in
                    [(PhaseHalf::Even, e_src, e_op), (PhaseHalf::Odd, o_src, o_op)]
                {
                    let mut g_t = q.plane_mut(band, source.other()).clone();
                    g_t.scale(-sign);
                    let g_s = operator_backward(
                        op,
                        &g_t,
                        src_shape.0,
                        src_shape.1,
                        ctx,
                        grads.as_deref_mut(),
                    )?;
                    q.plane_mut(band, *source).add_assign(&g_s);
                }
            }
            (PlanItem::HGains, _) => {
                let (ge, go) = ctx.structure.horizontal_gains.unwrap();
                let q = quads.as_mut().unwrap();
                q.ee.scale(1.0 / ge);
                q.oe.scale(1.0 / ge);
                q.eo.scale(1.0 / go);
                q.oo.scale(1.0 / go);
            }
            (PlanItem::ToBands, _) => {
                let q = quads.take().unwrap();
                bands = Some(quads_to_bands(
                    q,
                    ctx.structure.low_row_phase,
                    ctx.structure.low_col_phase,
                ));
            }
            (PlanItem::H2LStep { sign, .. }, ItemTrace::H2L { detail_shapes, op }) => {
                let b = bands.as_mut().unwrap();
                let (th, tw) = dims(&b.ll);
                let mut g_ll = b.ll.clone();
                g_ll.scale(-sign);
                let g_stacked = operator_backward(op, &g_ll, th, tw, ctx, grads.as_deref_mut())?;
                for (i, tgt) in [&mut b.hl, &mut b.lh, &mut b.hh].into_iter().enumerate() {
                    let (bh, bw) = detail_shapes[i];
                    let g = resample_backward(&g_stacked.channel(i), bh, bw);
                    tgt.add_assign(&g);
                }
            }
            (PlanItem::L2HStep { sign, .. }, ItemTrace::L2H { ll_shape, op }) => {
                let b = bands.as_mut().unwrap();
                let (th, tw) = *ll_shape;
                let parts: Vec<Tensor> = [&b.hl, &b.lh, &b.hh]
                    .into_iter()
                    .map(|band| {
                        let mut g = resample_backward(band, th, tw);
                        g.scale(-sign);
                        g
                    })
                    .collect();
                let g_out = Tensor::stack_channels(&[&parts[0], &parts[1], &parts[2]])?;
                let g_ll = operator_backward(op, &g_out, th, tw, ctx, grads.as_deref_mut())?;
                b.ll.add_assign(&g_ll);
            }
            _ => unreachable!("plan/trace mismatch"),
        }
    }
    Ok(bands.take().unwrap())
}

// ---------------------------------------------------------------------------
// Public API
// ---------------------------------------------------------------------------

/// Apply one directional lifting step to a polyphase pair.  Re-applying the
/// same step with the opposite sign restores the pair, for any operator.
pub fn apply_step(
    pair: &PolyphasePair,
    step: &LiftingStep,
    structure: &LiftingStructure,
    weights: &WeightStore,
) -> Result<PolyphasePair> {
    let (source, dir) = match step.placement {
        Placement::Vertical { source } => (source, Direction::Vertical),
        Placement::Horizontal { source } => (source, Direction::Horizontal),
        _ => {
            return Err(Error::config(
                "apply_step handles directional steps; band steps run inside analyze",
            ))
        }
    };
    if dir != pair.direction {
        return Err(Error::config("step direction does not match the pair"));
    }
    let ctx = Ctx {
        structure,
        weights,
        oracle: None,
    };
    let mut out = pair.clone();
    let (src, tgt) = match source {
        PhaseHalf::Even => (&pair.even, &mut out.odd),
        PhaseHalf::Odd => (&pair.odd, &mut out.even),
    };
    let (th, tw) = dims(tgt);
    let grid = match dir {
        Direction::Vertical => StepGrid::VerticalPhase,
        Direction::Horizontal => StepGrid::Subband,
    };
    let (o, _) = apply_operator(&step.operator, Some(dir), src, th, tw, 1, 1, grid, &ctx)?;
    add_scaled(tgt, &o, step.sign);
    Ok(out)
}

pub fn min_extent(levels: usize) -> usize {
    1usize << levels
}

/// Multi-level 2-d analysis.  The structure's one-level decomposition is
/// applied recursively to the LL band with identical steps and weights at
/// every level.
pub fn analyze(
    image: &Tensor,
    structure: &LiftingStructure,
    weights: &WeightStore,
    levels: usize,
) -> Result<SubbandPyramid> {
    Ok(analyze_traced(image, structure, weights, levels, None)?.0)
}

pub fn analyze_traced(
    image: &Tensor,
    structure: &LiftingStructure,
    weights: &WeightStore,
    levels: usize,
    oracle: Option<&dyn OracleSource>,
) -> Result<(SubbandPyramid, AnalysisTrace)> {
    if image.ndim() != 3 || image.channels() != 1 {
        return Err(Error::input("analysis expects a single-channel image plane"));
    }
    if levels == 0 {
        return Err(Error::input("decomposition depth must be at least 1"));
    }
    let need = min_extent(levels);
    if image.height() < need || image.width() < need {
        return Err(Error::input(format!(
            "image {}x{} too small for {} levels (needs at least {need} per axis)",
            image.height(),
            image.width(),
            levels
        )));
    }
    let plan = build_plan(structure)?;
    let ctx = Ctx {
        structure,
        weights,
        oracle,
    };
    let mut details = Vec::with_capacity(levels);
    let mut level_traces = Vec::with_capacity(levels);
    let mut ll = image.clone();
    for d in 1..=levels {
        let (bands, trace) = level_analyze(&ll, d, &plan, &ctx)?;
        details.push(DetailBands {
            hl: bands.hl,
            lh: bands.lh,
            hh: bands.hh,
        });
        ll = bands.ll;
        level_traces.push(trace);
    }
    Ok((
        SubbandPyramid {
            details,
            ll,
            source_height: image.height(),
            source_width: image.width(),
        },
        AnalysisTrace {
            plan,
            levels: level_traces,
        },
    ))
}

/// Gradient of an analysis with respect to its input image; learned
/// parameter gradients accumulate into `grads`.
pub fn analyze_backward(
    trace: &AnalysisTrace,
    structure: &LiftingStructure,
    weights: &WeightStore,
    grad_pyramid: &SubbandPyramid,
    mut grads: Option<&mut GradStore>,
) -> Result<Tensor> {
    let ctx = Ctx {
        structure,
        weights,
        oracle: None,
    };
    let levels = trace.levels.len();
    let mut g_ll = grad_pyramid.ll.clone();
    for d in (0..levels).rev() {
        let g_bands = Bands {
            ll: g_ll,
            hl: grad_pyramid.details[d].hl.clone(),
            lh: grad_pyramid.details[d].lh.clone(),
            hh: grad_pyramid.details[d].hh.clone(),
        };
        g_ll = level_analyze_backward(
            &trace.levels[d],
            &trace.plan,
            g_bands,
            &ctx,
            grads.as_deref_mut(),
        )?;
    }
    Ok(g_ll)
}

/// Exact inverse of [`analyze`] when no quantization intervenes.
pub fn synthesize(
    pyramid: &SubbandPyramid,
    structure: &LiftingStructure,
    weights: &WeightStore,
) -> Result<Tensor> {
    Ok(synthesize_traced(pyramid, structure, weights, None)?.0)
}

pub fn synthesize_traced(
    pyramid: &SubbandPyramid,
    structure: &LiftingStructure,
    weights: &WeightStore,
    oracle: Option<&dyn OracleSource>,
) -> Result<(Tensor, SynthesisTrace)> {
    check_pyramid(pyramid, structure)?;
    let plan = build_plan(structure)?;
    let ctx = Ctx {
        structure,
        weights,
        oracle,
    };
    let levels = pyramid.levels();
    let mut ll = pyramid.ll.clone();
    let mut level_traces = Vec::with_capacity(levels);
    for d in (1..=levels).rev() {
        let bands = Bands {
            ll,
            hl: pyramid.details[d - 1].hl.clone(),
            lh: pyramid.details[d - 1].lh.clone(),
            hh: pyramid.details[d - 1].hh.clone(),
        };
        let (plane, trace) = level_synthesize(bands, d, &plan, &ctx)?;
        ll = plane;
        level_traces.push(trace);
    }
    Ok((
        ll,
        SynthesisTrace {
            plan,
            levels: level_traces,
        },
    ))
}

/// Gradient of a synthesis with respect to the coefficient pyramid; learned
/// parameter gradients accumulate into `grads`.
pub fn synthesize_backward(
    trace: &SynthesisTrace,
    structure: &LiftingStructure,
    weights: &WeightStore,
    grad_image: &Tensor,
    mut grads: Option<&mut GradStore>,
) -> Result<SubbandPyramid> {
    let ctx = Ctx {
        structure,
        weights,
        oracle: None,
    };
    let levels = trace.levels.len();
    let mut g_plane = grad_image.clone();
    let mut detail_grads: Vec<Option<DetailBands>> = (0..levels).map(|_| None).collect();
    // Synthesis ran coarsest level first; its backward runs finest first.
    for d in 1..=levels {
        let g_bands = level_synthesize_backward(
            &trace.levels[levels - d],
            &trace.plan,
            &g_plane,
            &ctx,
            grads.as_deref_mut(),
        )?;
        detail_grads[d - 1] = Some(DetailBands {
            hl: g_bands.hl,
            lh: g_bands.lh,
            hh: g_bands.hh,
        });
        g_plane = g_bands.ll;
    }
    Ok(SubbandPyramid {
        details: detail_grads.into_iter().map(|d| d.unwrap()).collect(),
        ll: g_plane,
        source_height: grad_image.height(),
        source_width: grad_image.width(),
    })
}

/// Expected `[LL, HL, LH, HH]` shapes per level for a given source extent.
pub fn level_band_shapes(
    height: usize,
    width: usize,
    levels: usize,
    low_row: PhaseHalf,
    low_col: PhaseHalf,
) -> Vec<[(usize, usize); 4]> {
    let mut out = Vec::with_capacity(levels);
    let (mut h, mut w) = (height, width);
    for _ in 0..levels {
        let (re, ro) = (h.div_ceil(2), h / 2);
        let (ce, co) = (w.div_ceil(2), w / 2);
        let (rl, rh) = match low_row {
            PhaseHalf::Even => (re, ro),
            PhaseHalf::Odd => (ro, re),
        };
        let (cl, ch) = match low_col {
            PhaseHalf::Even => (ce, co),
            PhaseHalf::Odd => (co, ce),
        };
        out.push([(rl, cl), (rl, ch), (rh, cl), (rh, ch)]);
        h = rl;
        w = cl;
    }
    out
}

fn check_pyramid(pyramid: &SubbandPyramid, structure: &LiftingStructure) -> Result<()> {
    if pyramid.levels() == 0 {
        return Err(Error::input("pyramid has no levels"));
    }
    let shapes = level_band_shapes(
        pyramid.source_height,
        pyramid.source_width,
        pyramid.levels(),
        structure.low_row_phase,
        structure.low_col_phase,
    );
    for (d, bands) in pyramid.details.iter().enumerate() {
        let want = shapes[d];
        for (t, exp) in [
            (&bands.hl, want[1]),
            (&bands.lh, want[2]),
            (&bands.hh, want[3]),
        ] {
            if dims(t) != exp {
                return Err(Error::input(format!(
                    "pyramid band shape {:?} at level {} does not match structure (expected {:?})",
                    dims(t),
                    d + 1,
                    exp
                )));
            }
        }
    }
    let want_ll = shapes[pyramid.levels() - 1][0];
    if dims(&pyramid.ll) != want_ll {
        return Err(Error::input(format!(
            "pyramid LL shape {:?} does not match structure (expected {:?})",
            dims(&pyramid.ll),
            want_ll
        )));
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum BandRef {
    Ll,
    Detail(usize, u8),
}

fn band_refs(levels: usize) -> Vec<BandRef> {
    let mut v = vec![BandRef::Ll];
    for d in 0..levels {
        for b in 0..3u8 {
            v.push(BandRef::Detail(d, b));
        }
    }
    v
}

fn band_mut(p: &mut SubbandPyramid, r: BandRef) -> &mut Tensor {
    match r {
        BandRef::Ll => &mut p.ll,
        BandRef::Detail(d, 0) => &mut p.details[d].hl,
        BandRef::Detail(d, 1) => &mut p.details[d].lh,
        BandRef::Detail(d, _) => &mut p.details[d].hh,
    }
}

/// Image-domain bounding box of the synthesis response to a single
/// coefficient perturbation, maximised over subbands and coefficient
/// parities.  The canvas doubles until the response fits.  Outside the
/// perturbation's light cone the synthesis arithmetic is bitwise identical,
/// so "nonzero response" means exact inequality.
pub fn probe_support(
    structure: &LiftingStructure,
    weights: &WeightStore,
    levels: usize,
) -> Result<(usize, usize)> {
    use rand::{Rng, SeedableRng};
    let mut canvas = 128usize.max(min_extent(levels) * 8);
    'grow: loop {
        if canvas > 4096 {
            return Err(Error::Numeric(
                "probe_support: response did not fit a 4096-sample canvas".into(),
            ));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5EED_50FF);
        let data: Vec<f64> = (0..canvas * canvas)
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let image = Tensor::from_vec(&[1, canvas, canvas], data)?;
        let pyramid = analyze(&image, structure, weights, levels)?;
        let base = synthesize(&pyramid, structure, weights)?;

        let mut max_h = 0usize;
        let mut max_w = 0usize;
        let mut scratch = pyramid.clone();
        for which in band_refs(levels) {
            let (bh, bw) = dims(band_mut(&mut scratch, which));
            let cy = (bh / 2) & !1usize;
            let cx = (bw / 2) & !1usize;
            for py in 0..2usize.min(bh) {
                for px in 0..2usize.min(bw) {
                    let (y, x) = ((cy + py).min(bh - 1), (cx + px).min(bw - 1));
                    let old = band_mut(&mut scratch, which).at(0, y, x);
                    *band_mut(&mut scratch, which).at_mut(0, y, x) = old + 1.0;
                    let rec = synthesize(&scratch, structure, weights)?;
                    *band_mut(&mut scratch, which).at_mut(0, y, x) = old;
                    if let Some((lo_y, hi_y, lo_x, hi_x)) = diff_box(&rec, &base) {
                        if lo_y == 0 || lo_x == 0 || hi_y + 1 == canvas || hi_x + 1 == canvas {
                            canvas *= 2;
                            continue 'grow;
                        }
                        max_h = max_h.max(hi_y - lo_y + 1);
                        max_w = max_w.max(hi_x - lo_x + 1);
                    }
                }
            }
        }
        return Ok((max_h, max_w));
    }
}

fn diff_box(a: &Tensor, b: &Tensor) -> Option<(usize, usize, usize, usize)> {
    let (h, w) = dims(a);
    let (mut lo_y, mut hi_y, mut lo_x, mut hi_x) = (h, 0usize, w, 0usize);
    let mut any = false;
    for y in 0..h {
        let ra = a.row(0, y);
        let rb = b.row(0, y);
        for x in 0..w {
            if ra[x] != rb[x] {
                any = true;
                lo_y = lo_y.min(y);
                hi_y = hi_y.max(y);
                lo_x = lo_x.min(x);
                hi_x = hi_x.max(x);
            }
        }
    }
    any.then_some((lo_y, hi_y, lo_x, hi_x))
}
