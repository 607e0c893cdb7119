//! Sets of tower levels and the refinement maps between stages.
//!
//! A stage-`j` level is a union of `r_j` stage-`j+1` levels, one per
//! column, at indices `o_j(i) + l`. A [`LevelSet`] stores a set of levels
//! of one stage as sorted, disjoint, half-open index ranges, so refining a
//! set multiplies its range count by at most `r_j` per step regardless of
//! how many individual levels it contains.
//!
//! Going the other way, [`locate`] descends a deep index through the cut
//! offsets to the level of a shallower stage it came from, or reports that
//! it lies in spacer material added along the way.

use std::cmp::{max, min};
use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigUint;
use num_traits::Zero;
use serde::de::Error as _;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::construction::{Cut, StageTable};
use crate::error::{Error, Result};
use crate::rational::{uint_to_rat, Rat};

/// Half-open index interval `[lo, hi)` with `lo < hi`.
pub(crate) type IndexRange = (BigUint, BigUint);

/// A single level of a single stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LevelRef {
    pub stage: usize,
    pub index: BigUint,
}

/// Result of descending an index to a shallower stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Located {
    /// The index refines a level of the target stage.
    Level(LevelRef),
    /// The index lies in spacer material first present at `birth_stage`.
    Spacer { birth_stage: usize },
}

/// A set of levels of one stage, stored as sorted disjoint half-open
/// ranges with no two ranges adjacent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelSet {
    stage: usize,
    ranges: Vec<IndexRange>,
}

impl LevelSet {
    /// The empty set at a stage.
    pub fn empty(table: &StageTable, stage: usize) -> Result<LevelSet> {
        table.ensure_stage(stage)?;
        Ok(LevelSet {
            stage,
            ranges: Vec::new(),
        })
    }

    /// All levels of the stage-`j` tower.
    pub fn full_tower(table: &StageTable, stage: usize) -> Result<LevelSet> {
        table.ensure_stage(stage)?;
        Ok(LevelSet {
            stage,
            ranges: vec![(BigUint::zero(), table.height(stage).clone())],
        })
    }

    /// A single level.
    pub fn single(table: &StageTable, stage: usize, index: BigUint) -> Result<LevelSet> {
        let hi = &index + 1u32;
        LevelSet::from_ranges(table, stage, vec![(index, hi)])
    }

    /// Build from arbitrary half-open ranges; they are validated against
    /// the stage height, then sorted and merged.
    pub fn from_ranges(
        table: &StageTable,
        stage: usize,
        ranges: Vec<IndexRange>,
    ) -> Result<LevelSet> {
        table.ensure_stage(stage)?;
        let h = table.height(stage);
        for (lo, hi) in &ranges {
            if lo >= hi {
                return Err(Error::InvalidParams(format!(
                    "empty or inverted level range [{lo}, {hi})"
                )));
            }
            if hi > h {
                return Err(Error::InvalidParams(format!(
                    "level range [{lo}, {hi}) exceeds stage-{stage} height {h}"
                )));
            }
        }
        Ok(LevelSet {
            stage,
            ranges: normalize(ranges),
        })
    }

    /// Build from individual level indices.
    pub fn from_indices<I>(table: &StageTable, stage: usize, indices: I) -> Result<LevelSet>
    where
        I: IntoIterator<Item = BigUint>,
    {
        let sorted: BTreeSet<BigUint> = indices.into_iter().collect();
        let ranges = sorted
            .into_iter()
            .map(|i| {
                let hi = &i + 1u32;
                (i, hi)
            })
            .collect();
        LevelSet::from_ranges(table, stage, ranges)
    }

    /// Already-normalized ranges from internal callers; skips validation.
    pub(crate) fn from_normalized(stage: usize, ranges: Vec<IndexRange>) -> LevelSet {
        debug_assert!(ranges.windows(2).all(|w| w[0].1 < w[1].0));
        debug_assert!(ranges.iter().all(|(lo, hi)| lo < hi));
        LevelSet { stage, ranges }
    }

    /// Parse the selector syntax `stage=J,levels=a..b,c,d` where `a..b` is
    /// an inclusive index range and bare items are single levels.
    pub fn parse(table: &StageTable, s: &str) -> Result<LevelSet> {
        let err = |msg: &str| Error::InvalidParams(format!("bad set selector {s:?}: {msg}"));
        let body = s
            .trim()
            .strip_prefix("stage=")
            .ok_or_else(|| err("expected leading stage=J"))?;
        // A bare stage selects the whole tower.
        let Some((stage_str, rest)) = body.split_once(',') else {
            let stage: usize = body
                .trim()
                .parse()
                .map_err(|_| err("stage is not an integer"))?;
            return LevelSet::full_tower(table, stage);
        };
        let stage: usize = stage_str
            .trim()
            .parse()
            .map_err(|_| err("stage is not an integer"))?;
        let items = rest
            .trim()
            .strip_prefix("levels=")
            .ok_or_else(|| err("expected levels= after the stage"))?;
        let mut ranges = Vec::new();
        for item in items.split(',') {
            let item = item.trim();
            if let Some((a, b)) = item.split_once("..") {
                let a: BigUint = a.trim().parse().map_err(|_| err("bad range start"))?;
                let b: BigUint = b.trim().parse().map_err(|_| err("bad range end"))?;
                if a > b {
                    return Err(err("range start exceeds range end"));
                }
                ranges.push((a, b + 1u32));
            } else {
                let c: BigUint = item.parse().map_err(|_| err("bad level index"))?;
                let hi = &c + 1u32;
                ranges.push((c, hi));
            }
        }
        LevelSet::from_ranges(table, stage, ranges)
    }

    /// Parse the JSON form `{"stage": J, "ranges": [[lo, hi], ...]}` with
    /// inclusive bounds given as integers or decimal strings.
    pub fn from_json(table: &StageTable, s: &str) -> Result<LevelSet> {
        let spec: LevelSetSpec = serde_json::from_str(s)
            .map_err(|e| Error::InvalidParams(format!("bad set JSON: {e}")))?;
        spec.into_level_set(table)
    }

    /// Render as the selector syntax accepted by [`LevelSet::parse`].
    pub fn to_selector(&self) -> String {
        let mut out = format!("stage={},levels=", self.stage);
        let items: Vec<String> = self
            .ranges
            .iter()
            .map(|(lo, hi)| {
                let top = hi - 1u32;
                if *lo == top {
                    lo.to_string()
                } else {
                    format!("{lo}..{top}")
                }
            })
            .collect();
        out.push_str(&items.join(","));
        out
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    /// The normalized half-open ranges.
    pub fn ranges(&self) -> &[IndexRange] {
        &self.ranges
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Number of levels in the set.
    pub fn cardinality(&self) -> BigUint {
        self.ranges
            .iter()
            .fold(BigUint::zero(), |acc, (lo, hi)| acc + (hi - lo))
    }

    /// Total measure: cardinality times the stage level width.
    pub fn measure(&self, table: &StageTable) -> Rat {
        uint_to_rat(&self.cardinality()) * table.width(self.stage)
    }

    /// Whether the set contains a level index of its own stage.
    pub fn contains_index(&self, index: &BigUint) -> bool {
        let pos = self.ranges.partition_point(|(lo, _)| lo <= index);
        pos > 0 && self.ranges[pos - 1].1 > *index
    }

    /// The `rank`-th smallest index in the set (0-based).
    pub fn index_at_rank(&self, rank: &BigUint) -> Option<BigUint> {
        let mut rank = rank.clone();
        for (lo, hi) in &self.ranges {
            let len = hi - lo;
            if rank < len {
                return Some(lo + rank);
            }
            rank -= len;
        }
        None
    }

    /// Express the set in terms of stage-`depth` levels.
    ///
    /// Each step maps a range through every column of the cut, so the
    /// result is checked against the table's cardinality cap before any
    /// materialization. Measure is preserved exactly.
    pub fn refine_to(&self, table: &StageTable, depth: usize) -> Result<LevelSet> {
        table.ensure_stage(depth)?;
        if depth < self.stage {
            return Err(Error::InvalidParams(format!(
                "cannot refine stage-{} set to shallower stage {depth}",
                self.stage
            )));
        }
        let mut ranges = self.ranges.clone();
        for k in self.stage..depth {
            ranges = refine_step(&ranges, table.cut(k)?, table.cardinality_cap())?;
        }
        Ok(LevelSet::from_normalized(depth, ranges))
    }

    fn coerced_pair(&self, table: &StageTable, other: &LevelSet) -> Result<(LevelSet, LevelSet)> {
        let depth = self.stage.max(other.stage);
        Ok((self.refine_to(table, depth)?, other.refine_to(table, depth)?))
    }

    /// Union, refining the shallower operand as needed.
    pub fn union(&self, table: &StageTable, other: &LevelSet) -> Result<LevelSet> {
        let (a, b) = self.coerced_pair(table, other)?;
        let mut ranges = a.ranges;
        ranges.extend(b.ranges);
        Ok(LevelSet::from_normalized(a.stage, normalize(ranges)))
    }

    /// Intersection, refining the shallower operand as needed.
    pub fn intersect(&self, table: &StageTable, other: &LevelSet) -> Result<LevelSet> {
        let (a, b) = self.coerced_pair(table, other)?;
        Ok(LevelSet::from_normalized(
            a.stage,
            intersect_ranges(&a.ranges, &b.ranges),
        ))
    }

    /// Set difference, refining the shallower operand as needed.
    pub fn difference(&self, table: &StageTable, other: &LevelSet) -> Result<LevelSet> {
        let (a, b) = self.coerced_pair(table, other)?;
        Ok(LevelSet::from_normalized(
            a.stage,
            diff_ranges(&a.ranges, &b.ranges),
        ))
    }
}

impl fmt::Display for LevelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_selector())
    }
}

/// JSON wire form: inclusive range pairs, big indices as decimal strings.
impl Serialize for LevelSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("LevelSet", 2)?;
        st.serialize_field("stage", &self.stage)?;
        let ranges: Vec<[String; 2]> = self
            .ranges
            .iter()
            .map(|(lo, hi)| [lo.to_string(), (hi - 1u32).to_string()])
            .collect();
        st.serialize_field("ranges", &ranges)?;
        st.end()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum IndexRepr {
    Int(u64),
    Str(String),
}

impl IndexRepr {
    fn to_uint(&self) -> std::result::Result<BigUint, String> {
        match self {
            IndexRepr::Int(n) => Ok(BigUint::from(*n)),
            IndexRepr::Str(s) => s
                .trim()
                .parse()
                .map_err(|_| format!("bad index string {s:?}")),
        }
    }
}

/// Raw deserialized form of a [`LevelSet`], not yet validated against a
/// table. Bounds are inclusive, matching the wire format.
#[derive(Deserialize)]
pub(crate) struct LevelSetSpec {
    stage: usize,
    ranges: Vec<(IndexRepr, IndexRepr)>,
}

impl LevelSetSpec {
    pub(crate) fn into_level_set(self, table: &StageTable) -> Result<LevelSet> {
        let mut ranges = Vec::with_capacity(self.ranges.len());
        for (lo, hi) in &self.ranges {
            let lo = lo.to_uint().map_err(Error::InvalidParams)?;
            let hi = hi.to_uint().map_err(Error::InvalidParams)?;
            if lo > hi {
                return Err(Error::InvalidParams(format!(
                    "inclusive range [{lo}, {hi}] is inverted"
                )));
            }
            ranges.push((lo, hi + 1u32));
        }
        LevelSet::from_ranges(table, self.stage, ranges)
    }
}

impl<'de> Deserialize<'de> for LevelRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            stage: usize,
            index: IndexRepr,
        }
        let r = Repr::deserialize(d)?;
        Ok(LevelRef {
            stage: r.stage,
            index: r.index.to_uint().map_err(D::Error::custom)?,
        })
    }
}

impl Serialize for LevelRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("LevelRef", 2)?;
        st.serialize_field("stage", &self.stage)?;
        st.serialize_field("index", &self.index.to_string())?;
        st.end()
    }
}

/// Sort ranges and merge every overlap and adjacency.
pub(crate) fn normalize(mut ranges: Vec<IndexRange>) -> Vec<IndexRange> {
    ranges.sort_unstable();
    let mut out: Vec<IndexRange> = Vec::with_capacity(ranges.len());
    for (lo, hi) in ranges {
        match out.last_mut() {
            Some(last) if last.1 >= lo => {
                if hi > last.1 {
                    last.1 = hi;
                }
            }
            _ => out.push((lo, hi)),
        }
    }
    out
}

/// Intersection of two normalized range lists by merge sweep.
pub(crate) fn intersect_ranges(a: &[IndexRange], b: &[IndexRange]) -> Vec<IndexRange> {
    let (mut i, mut j) = (0usize, 0usize);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        let lo = max(&a[i].0, &b[j].0);
        let hi = min(&a[i].1, &b[j].1);
        if lo < hi {
            out.push((lo.clone(), hi.clone()));
        }
        if a[i].1 <= b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Difference `a \ b` of normalized range lists by merge sweep.
pub(crate) fn diff_ranges(a: &[IndexRange], b: &[IndexRange]) -> Vec<IndexRange> {
    let mut out = Vec::new();
    let mut j = 0usize;
    for (lo, hi) in a {
        let mut cur = lo.clone();
        while j < b.len() && b[j].1 <= cur {
            j += 1;
        }
        let mut k = j;
        while k < b.len() && b[k].0 < *hi {
            if b[k].0 > cur {
                out.push((cur.clone(), b[k].0.clone()));
            }
            if b[k].1 >= *hi {
                cur = hi.clone();
                break;
            }
            if b[k].1 > cur {
                cur = b[k].1.clone();
            }
            k += 1;
        }
        if cur < *hi {
            out.push((cur, hi.clone()));
        }
    }
    out
}

/// Total level count of a normalized range list.
pub(crate) fn cardinality_of(ranges: &[IndexRange]) -> BigUint {
    ranges
        .iter()
        .fold(BigUint::zero(), |acc, (lo, hi)| acc + (hi - lo))
}

/// Map every range through every column of one cut. Output stays sorted
/// because column images are disjoint and ordered; the only merges needed
/// are across zero-spacer column boundaries.
fn refine_step(ranges: &[IndexRange], cut: &Cut, cap: usize) -> Result<Vec<IndexRange>> {
    let needed = ranges
        .len()
        .checked_mul(cut.columns)
        .ok_or_else(|| Error::CardinalityCap {
            needed: "overflow".into(),
            cap,
        })?;
    if needed > cap {
        return Err(Error::CardinalityCap {
            needed: needed.to_string(),
            cap,
        });
    }
    let mut out: Vec<IndexRange> = Vec::with_capacity(needed);
    for o in &cut.offsets {
        for (lo, hi) in ranges {
            let nlo = o + lo;
            let nhi = o + hi;
            match out.last_mut() {
                Some(last) if last.1 == nlo => last.1 = nhi,
                _ => out.push((nlo, nhi)),
            }
        }
    }
    Ok(out)
}

/// Descend `index` of stage `stage` to the level of `target_stage` it
/// refines, or the spacer stratum it belongs to.
///
/// Each step binary-searches the cut offsets for the column containing
/// the index; an index at or above the column's height lies in spacers
/// added when that stage was assembled.
pub fn locate(
    table: &StageTable,
    stage: usize,
    index: &BigUint,
    target_stage: usize,
) -> Result<Located> {
    table.ensure_stage(stage)?;
    table.ensure_stage(target_stage)?;
    if target_stage > stage {
        return Err(Error::InvalidParams(format!(
            "cannot locate stage-{stage} index at deeper stage {target_stage}"
        )));
    }
    if index >= table.height(stage) {
        return Err(Error::InvalidParams(format!(
            "index {index} exceeds stage-{stage} height {}",
            table.height(stage)
        )));
    }
    let mut idx = index.clone();
    for k in (target_stage + 1..=stage).rev() {
        let cut = table.cut(k - 1)?;
        let col = cut.offsets.partition_point(|o| *o <= idx) - 1;
        let rel = &idx - &cut.offsets[col];
        if &rel >= table.height(k - 1) {
            return Ok(Located::Spacer { birth_stage: k });
        }
        idx = rel;
    }
    Ok(Located::Level(LevelRef {
        stage: target_stage,
        index: idx,
    }))
}
