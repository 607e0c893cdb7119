//! Certified correlation intervals and the limit behavior they witness.
//!
//! The transformation `T` moves every point one level up its current
//! tower. At stage `J` that resolves `T^n` on every level except the top
//! `n`: a level `l` with `l + n < h_J` maps exactly onto level `l + n`,
//! while the top `n` levels leave the tower and their images are only
//! determined at deeper stages. [`correlation`] therefore returns an
//! interval `[lo, hi]` certified to contain `mu(T^n A /\ B)`: `lo` counts
//! the resolved transitions that land in `B`, and `hi` adds every level
//! whose image is still unresolved at the chosen depth. Deepening the
//! analysis only shrinks the interval, never moves it.
//!
//! On top of the interval arithmetic sit three analyses:
//!
//! * [`rigidity_report`]: along odd-stage heights the preset has no
//!   spacers, so `T^{h_j}` shifts whole columns onto their right neighbor
//!   and `mu(T^{h_j} A /\ B)` is within `mu(A /\ B) / r_j` of
//!   `mu(A /\ B)`.
//! * [`half_limit_report`]: along even-stage heights half the columns
//!   carry `h_j` spacers, so exactly half the mass returns and the
//!   correlation lands within `(mu(A) + mu(B)) / r_j` of
//!   `mu(A /\ B) / 2`.
//! * [`ergodic_components`]: the level graph of resolved `T^n`
//!   transitions, whose weakly connected components recover the invariant
//!   sets of `T^n`; under the preset they are exactly the residue classes
//!   of the level index mod `n`.

use std::collections::BTreeMap;

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{Signed, Zero};
use petgraph::unionfind::UnionFind;
use serde::Serialize;

use crate::construction::{DivisibilityReport, SpacerRule, StageTable};
use crate::error::{Error, Result};
use crate::levels::{cardinality_of, intersect_ranges, locate, IndexRange, LevelSet, Located};
use crate::rational::{ser_bigint, ser_biguint, ser_rat, uint_to_rat, Rat};

/// Certified interval for `mu(T^n A /\ B)` at one refinement depth.
///
/// The true correlation lies in `[lo, hi]`; `hi - lo == unresolved`, the
/// measure of `A` whose image is not determined at this depth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorrBound {
    /// The power analyzed, sign included.
    #[serde(serialize_with = "ser_bigint")]
    pub n: BigInt,
    /// Stage the analysis ran at.
    pub depth: usize,
    #[serde(serialize_with = "ser_rat")]
    pub lo: Rat,
    #[serde(serialize_with = "ser_rat")]
    pub hi: Rat,
    /// Measure of `A` left unresolved; always `hi - lo`.
    #[serde(serialize_with = "ser_rat")]
    pub unresolved: Rat,
}

impl CorrBound {
    /// Interval width, equal to the unresolved mass.
    pub fn width(&self) -> Rat {
        &self.hi - &self.lo
    }

    /// Whether the interval is a single point.
    pub fn is_exact(&self) -> bool {
        self.lo == self.hi
    }

    /// Largest possible deviation of the true value from `target`.
    pub fn deviation_from(&self, target: &Rat) -> Rat {
        let below = (target - &self.lo).abs();
        let above = (&self.hi - target).abs();
        below.max(above)
    }
}

/// Certified interval for `mu(T^n A /\ B)` computed at stage `depth`.
///
/// A negative power is handled through `mu(T^-m A /\ B) = mu(A /\ T^m B)`,
/// which swaps the roles of the two sets. Fails with
/// [`Error::DepthTooShallow`] when `|n|` reaches the stage height, since
/// then not a single transition resolves.
pub fn correlation(
    table: &StageTable,
    a: &LevelSet,
    b: &LevelSet,
    n: &BigInt,
    depth: usize,
) -> Result<CorrBound> {
    let (x, y) = if n.sign() == Sign::Minus {
        (b, a)
    } else {
        (a, b)
    };
    let mag = n.magnitude();
    table.ensure_stage(depth)?;
    let min_stage = x.stage().max(y.stage());
    if depth < min_stage {
        return Err(Error::InvalidParams(format!(
            "depth {depth} is shallower than a stage-{min_stage} operand"
        )));
    }
    let h = table.height(depth);
    if mag >= h {
        return Err(Error::DepthTooShallow {
            n: mag.to_string(),
            height: h.to_string(),
            depth,
        });
    }
    let rx = x.refine_to(table, depth)?;
    let ry = y.refine_to(table, depth)?;
    let cut_point = h - mag;
    let resolved: Vec<IndexRange> = intersect_ranges(
        rx.ranges(),
        &[(BigUint::zero(), cut_point.clone())],
    )
    .into_iter()
    .map(|(lo, hi)| (lo + mag, hi + mag))
    .collect();
    let lo_count = cardinality_of(&intersect_ranges(&resolved, ry.ranges()));
    let unresolved_count = cardinality_of(&intersect_ranges(
        rx.ranges(),
        &[(cut_point, h.clone())],
    ));
    let w = table.width(depth);
    let lo = uint_to_rat(&lo_count) * w;
    let unresolved = uint_to_rat(&unresolved_count) * w;
    Ok(CorrBound {
        n: n.clone(),
        depth,
        hi: &lo + &unresolved,
        lo,
        unresolved,
    })
}

/// Deepen [`correlation`] until the unresolved mass drops to `epsilon`
/// (default `mu(A) / 10^6`) or the table runs out of stages.
///
/// Starts at the shallowest admissible depth and keeps the deepest bound
/// it managed to compute; hitting the cardinality cap stops the descent
/// and returns the bound already in hand.
pub fn correlation_auto(
    table: &StageTable,
    a: &LevelSet,
    b: &LevelSet,
    n: &BigInt,
    epsilon: Option<Rat>,
) -> Result<CorrBound> {
    let mag = n.magnitude();
    let mut depth = a.stage().max(b.stage());
    while depth <= table.j_max() && table.height(depth) <= mag {
        depth += 1;
    }
    if depth > table.j_max() {
        return Err(Error::DepthTooShallow {
            n: mag.to_string(),
            height: table.height(table.j_max()).to_string(),
            depth: table.j_max(),
        });
    }
    let epsilon = epsilon
        .unwrap_or_else(|| a.measure(table) / Rat::from_integer(1_000_000.into()));
    let mut bound = correlation(table, a, b, n, depth)?;
    while bound.unresolved > epsilon && depth < table.j_max() {
        depth += 1;
        match correlation(table, a, b, n, depth) {
            Ok(next) => bound = next,
            Err(Error::CardinalityCap { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(bound)
}

/// Image of one stage level under `T^n`, when the stage resolves it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageOutcome {
    /// `T^n` maps the level onto this level of the same stage.
    Level(BigUint),
    /// The image leaves through the tower top; `past_top` is the shortfall
    /// `index + n - h`, resolvable only at deeper stages.
    Overflow { past_top: BigUint },
}

/// Resolve `T^n` on a single level of one stage, if the stage can.
pub fn image_index(
    table: &StageTable,
    stage: usize,
    index: &BigUint,
    n: &BigUint,
) -> Result<ImageOutcome> {
    table.ensure_stage(stage)?;
    let h = table.height(stage);
    if index >= h {
        return Err(Error::InvalidParams(format!(
            "index {index} exceeds stage-{stage} height {h}"
        )));
    }
    let shifted = index + n;
    if &shifted < h {
        Ok(ImageOutcome::Level(shifted))
    } else {
        Ok(ImageOutcome::Overflow {
            past_top: shifted - h,
        })
    }
}

/// Rigidity check along a tower height: `T^{h_stage}` against the target
/// `mu(A /\ B)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RigidityReport {
    /// The stage whose height is the tested power.
    pub stage: usize,
    /// The power `h_stage`.
    #[serde(serialize_with = "ser_biguint")]
    pub power: BigUint,
    /// Cut count `r_stage` behind the budget.
    pub r: usize,
    /// Limit value `mu(A /\ B)`.
    #[serde(serialize_with = "ser_rat")]
    pub target: Rat,
    pub corr: CorrBound,
    /// Largest deviation from the target consistent with the interval.
    #[serde(serialize_with = "ser_rat")]
    pub deviation_bound: Rat,
    /// Allowed deviation `mu(A /\ B) / r_stage`.
    #[serde(serialize_with = "ser_rat")]
    pub budget: Rat,
    /// Deviation within budget after discounting unresolved mass.
    pub holds: bool,
    /// Deviation within budget outright.
    pub holds_tight: bool,
}

/// Weak-limit check along a tower height: `T^{h_stage}` against the target
/// `mu(A /\ B) / 2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HalfLimitReport {
    pub stage: usize,
    #[serde(serialize_with = "ser_biguint")]
    pub power: BigUint,
    pub r: usize,
    /// Limit value `mu(A /\ B) / 2`.
    #[serde(serialize_with = "ser_rat")]
    pub target: Rat,
    pub corr: CorrBound,
    #[serde(serialize_with = "ser_rat")]
    pub deviation_bound: Rat,
    /// Allowed deviation `(mu(A) + mu(B)) / r_stage`.
    #[serde(serialize_with = "ser_rat")]
    pub slack: Rat,
    pub holds: bool,
    pub holds_tight: bool,
}

fn preset_parity_check(table: &StageTable, stage: usize, want_odd: bool) -> Result<()> {
    if matches!(table.params().spacer_rule, SpacerRule::PaperPreset) && (stage % 2 == 1) != want_odd
    {
        let (parity, analysis) = if want_odd {
            ("odd", "rigidity")
        } else {
            ("even", "half-limit")
        };
        return Err(Error::UsageError(format!(
            "{analysis} analysis under the preset needs an {parity} stage, got stage {stage}"
        )));
    }
    Ok(())
}

/// Evaluate the rigidity property of `T^{h_stage}` on a pair of sets.
///
/// Under the preset only odd stages qualify; explicit spacer rules may
/// test any stage below `j_max`.
pub fn rigidity_report(
    table: &StageTable,
    a: &LevelSet,
    b: &LevelSet,
    stage: usize,
    depth: usize,
) -> Result<RigidityReport> {
    preset_parity_check(table, stage, true)?;
    let r = table.cut(stage)?.columns;
    let power = table.height(stage).clone();
    let n = BigInt::from(power.clone());
    let corr = correlation(table, a, b, &n, depth)?;
    let target = a.intersect(table, b)?.measure(table);
    let deviation_bound = corr.deviation_from(&target);
    let budget = &target / Rat::from_integer((r as u64).into());
    let holds = deviation_bound <= &budget + &corr.unresolved;
    let holds_tight = deviation_bound <= budget;
    Ok(RigidityReport {
        stage,
        power,
        r,
        target,
        corr,
        deviation_bound,
        budget,
        holds,
        holds_tight,
    })
}

/// Evaluate the `I/2` weak-limit property of `T^{h_stage}` on a pair of
/// sets.
///
/// Under the preset only even stages qualify; explicit spacer rules may
/// test any stage below `j_max`.
pub fn half_limit_report(
    table: &StageTable,
    a: &LevelSet,
    b: &LevelSet,
    stage: usize,
    depth: usize,
) -> Result<HalfLimitReport> {
    preset_parity_check(table, stage, false)?;
    let r = table.cut(stage)?.columns;
    let power = table.height(stage).clone();
    let n = BigInt::from(power.clone());
    let corr = correlation(table, a, b, &n, depth)?;
    let target = a.intersect(table, b)?.measure(table) / Rat::from_integer(2.into());
    let deviation_bound = corr.deviation_from(&target);
    let slack = (a.measure(table) + b.measure(table)) / Rat::from_integer((r as u64).into());
    let holds = deviation_bound <= &slack + &corr.unresolved;
    let holds_tight = deviation_bound <= slack;
    Ok(HalfLimitReport {
        stage,
        power,
        r,
        target,
        corr,
        deviation_bound,
        slack,
        holds,
        holds_tight,
    })
}

/// Which limit family a scan walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    /// Rigidity along odd-stage heights.
    Rigid,
    /// `I/2` weak limit along even-stage heights.
    Half,
}

/// One scanned power.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScanRow {
    pub stage: usize,
    /// The power `h_stage`.
    #[serde(serialize_with = "ser_biguint")]
    pub n: BigUint,
    pub corr: CorrBound,
    #[serde(serialize_with = "ser_rat")]
    pub target: Rat,
    #[serde(serialize_with = "ser_rat")]
    pub deviation_bound: Rat,
    /// Budget (rigid) or slack (half) the deviation is judged against.
    #[serde(serialize_with = "ser_rat")]
    pub allowance: Rat,
    pub holds_tight: bool,
}

/// Walk the tower heights `h_stage` for `stage < depth` and evaluate the
/// mode's limit at each.
///
/// Stages shallower than either operand are skipped; under the preset the
/// scan also keeps only the parity matching the mode.
pub fn decay_scan(
    table: &StageTable,
    a: &LevelSet,
    b: &LevelSet,
    mode: ScanMode,
    depth: usize,
) -> Result<Vec<ScanRow>> {
    table.ensure_stage(depth)?;
    let preset = matches!(table.params().spacer_rule, SpacerRule::PaperPreset);
    let start = a.stage().max(b.stage());
    let mut rows = Vec::new();
    for stage in start..depth {
        if preset && (stage % 2 == 1) != matches!(mode, ScanMode::Rigid) {
            continue;
        }
        let row = match mode {
            ScanMode::Rigid => {
                let rep = rigidity_report(table, a, b, stage, depth)?;
                ScanRow {
                    stage,
                    n: rep.power,
                    corr: rep.corr,
                    target: rep.target,
                    deviation_bound: rep.deviation_bound,
                    allowance: rep.budget,
                    holds_tight: rep.holds_tight,
                }
            }
            ScanMode::Half => {
                let rep = half_limit_report(table, a, b, stage, depth)?;
                ScanRow {
                    stage,
                    n: rep.power,
                    corr: rep.corr,
                    target: rep.target,
                    deviation_bound: rep.deviation_bound,
                    allowance: rep.slack,
                    holds_tight: rep.holds_tight,
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Invariant components of `T^n` seen on the stage-`stage` levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComponentReport {
    pub stage: usize,
    pub n: u64,
    /// Depth image walks were allowed to descend to.
    pub depth: usize,
    /// Number of weakly connected components of the resolved level graph.
    pub count: usize,
    /// The components as level sets, ordered by smallest level.
    pub components: Vec<LevelSet>,
    pub sizes: Vec<u64>,
    /// Mass whose image stayed unresolved at `depth` and contributed no
    /// edges. Missing edges can only split components, never merge them.
    #[serde(serialize_with = "ser_rat")]
    pub unresolved_mass: Rat,
    /// Whether the partition is exactly the residue classes of the level
    /// index mod `n`.
    pub residue_match: bool,
    pub divisibility: DivisibilityReport,
}

/// The resolved image levels of `T^n` applied to one index of stage
/// `cur`, collected by branching through columns until `depth`.
fn walk_images(
    table: &StageTable,
    home: usize,
    depth: usize,
    n: &BigUint,
    cur: usize,
    idx: BigUint,
    targets: &mut Vec<u64>,
    unresolved_leaves: &mut u64,
) -> Result<()> {
    let shifted = &idx + n;
    if &shifted < table.height(cur) {
        if let Located::Level(level) = locate(table, cur, &shifted, home)? {
            let t = u64::try_from(&level.index)
                .expect("home stage height fits in u64 by the cap guard");
            targets.push(t);
        }
        return Ok(());
    }
    if cur == depth {
        *unresolved_leaves += 1;
        return Ok(());
    }
    let cut = table.cut(cur)?;
    for o in &cut.offsets {
        walk_images(table, home, depth, n, cur + 1, o + &idx, targets, unresolved_leaves)?;
    }
    Ok(())
}

/// Partition the stage levels into residue classes of the index mod `n`,
/// dropping empty classes.
pub fn residue_partition(table: &StageTable, stage: usize, n: u64) -> Result<Vec<LevelSet>> {
    table.ensure_stage(stage)?;
    if n == 0 {
        return Err(Error::InvalidParams("power n must be nonzero".into()));
    }
    let h = stage_height_as_u64(table, stage)?;
    let mut classes = Vec::new();
    for c in 0..n.min(h) {
        let indices = (c..h).step_by(n as usize).map(BigUint::from);
        classes.push(LevelSet::from_indices(table, stage, indices)?);
    }
    Ok(classes)
}

fn stage_height_as_u64(table: &StageTable, stage: usize) -> Result<u64> {
    let h = table.height(stage);
    let cap = table.cardinality_cap();
    match u64::try_from(h) {
        Ok(v) if v <= cap as u64 => Ok(v),
        _ => Err(Error::CardinalityCap {
            needed: h.to_string(),
            cap,
        }),
    }
}

/// Count the invariant components of `T^n` on the stage-`stage` levels.
///
/// Builds the graph with one node per level and an edge from each level to
/// every resolved image level of its `T^n` translate, descending through
/// columns down to `depth` for the top `n` levels. Unresolved leaves are
/// tallied as mass, not edges, so the reported count can only overestimate
/// the true number of components.
pub fn ergodic_components(
    table: &StageTable,
    stage: usize,
    n: u64,
    depth: usize,
) -> Result<ComponentReport> {
    table.ensure_stage(depth)?;
    if n == 0 {
        return Err(Error::InvalidParams("power n must be nonzero".into()));
    }
    if depth < stage {
        return Err(Error::InvalidParams(format!(
            "depth {depth} is shallower than stage {stage}"
        )));
    }
    let h = stage_height_as_u64(table, stage)?;
    let n_big = BigUint::from(n);
    let mut uf = UnionFind::<usize>::new(h as usize);
    let mut unresolved_leaves = 0u64;
    let mut targets = Vec::new();
    for l in 0..h {
        targets.clear();
        walk_images(
            table,
            stage,
            depth,
            &n_big,
            stage,
            BigUint::from(l),
            &mut targets,
            &mut unresolved_leaves,
        )?;
        for &t in &targets {
            uf.union(l as usize, t as usize);
        }
    }
    let labels = uf.into_labeling();
    let mut groups: BTreeMap<usize, Vec<BigUint>> = BTreeMap::new();
    for (l, root) in labels.iter().enumerate() {
        groups.entry(*root).or_default().push(BigUint::from(l as u64));
    }
    let mut components: Vec<LevelSet> = Vec::with_capacity(groups.len());
    for (_, indices) in groups {
        components.push(LevelSet::from_indices(table, stage, indices)?);
    }
    components.sort_by_key(|c| c.ranges()[0].0.clone());
    let sizes: Vec<u64> = components
        .iter()
        .map(|c| u64::try_from(&c.cardinality()).expect("component size fits u64"))
        .collect();
    let residue = residue_partition(table, stage, n)?;
    let residue_match = components == residue;
    let unresolved_mass = uint_to_rat(&BigUint::from(unresolved_leaves)) * table.width(depth);
    Ok(ComponentReport {
        stage,
        n,
        depth,
        count: components.len(),
        components,
        sizes,
        unresolved_mass,
        residue_match,
        divisibility: table.check_divisibility(n),
    })
}
