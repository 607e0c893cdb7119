//! The combinatorial skeleton of a rank-one cutting-and-stacking
//! transformation.
//!
//! Stage `j` is a tower of `h_j` levels, each a half-interval of width
//! `w_j`. Building stage `j+1` cuts the tower into `r_j` columns of width
//! `w_j / r_j`, stacks `s_j(i)` spacer levels on top of column `i`, and
//! restacks left to right. Column `i` (0-based here) then occupies levels
//! `o_j(i) .. o_j(i) + h_j - 1` of stage `j+1`, with
//!
//! ```text
//! o_j(0) = 0,     o_j(i+1) = o_j(i) + h_j + s_j(i),
//! h_{j+1} = o_j(r_j - 1) + h_j + s_j(r_j - 1) = h_j r_j + sum_i s_j(i).
//! ```
//!
//! All arithmetic in this module is exact: heights and offsets are
//! arbitrary-precision integers, widths and measures arbitrary-precision
//! rationals.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{uint_to_rat, Rat};

/// Rule producing the per-stage cut multiplier `r'_j`; the cut count is
/// always `r_j = j * r'_j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RRule {
    /// `r'_j = j + 1`, the smallest smooth growth keeping even-stage cut
    /// counts even.
    Default,
    /// Explicit `r'_j` values for stages `1, 2, ...`; must cover every stage
    /// that gets cut (`j < j_max`).
    Explicit(Vec<u64>),
}

impl RRule {
    /// The multiplier `r'_j` for stage `j` (1-based).
    pub fn r_prime(&self, j: usize) -> Result<u64> {
        match self {
            RRule::Default => Ok(j as u64 + 1),
            RRule::Explicit(list) => list.get(j - 1).copied().ok_or_else(|| {
                Error::InvalidParams(format!("r_prime list has no entry for stage {j}"))
            }),
        }
    }

    /// The cut count `r_j = j * r'_j` for stage `j`.
    pub fn cut_count(&self, j: usize) -> Result<usize> {
        let rp = self.r_prime(j)?;
        let r = (j as u64)
            .checked_mul(rp)
            .ok_or_else(|| Error::InvalidParams(format!("cut count overflows at stage {j}")))?;
        if r < 2 {
            return Err(Error::InvalidParams(format!(
                "stage {j}: cut count r = {r} must be at least 2"
            )));
        }
        usize::try_from(r)
            .map_err(|_| Error::InvalidParams(format!("cut count {r} too large at stage {j}")))
    }
}

/// Rule producing the per-stage spacer vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpacerRule {
    /// Zero spacers on odd stages; on even stages zero spacers on the first
    /// half of the columns and `h_j` spacers on the second half.
    PaperPreset,
    /// Explicit spacer vectors for stages `1, 2, ...`; vector `j` must have
    /// length `r_j`.
    Explicit(Vec<Vec<BigUint>>),
}

impl SpacerRule {
    fn spacers(&self, j: usize, h: &BigUint, r: usize) -> Result<Vec<BigUint>> {
        match self {
            SpacerRule::PaperPreset => paper_preset_spacers(j, h, r),
            SpacerRule::Explicit(list) => {
                let v = list.get(j - 1).ok_or_else(|| {
                    Error::InvalidParams(format!("spacer list has no vector for stage {j}"))
                })?;
                if v.len() != r {
                    return Err(Error::InvalidParams(format!(
                        "stage {j}: spacer vector has length {}, expected r = {r}",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

/// The preset spacer vector for stage `j` with height `h` and cut count `r`:
/// all zeros when `j` is odd; zeros on columns `i <= r/2` and `h` on columns
/// `i > r/2` when `j` is even (columns 1-based here).
pub fn paper_preset_spacers(j: usize, h: &BigUint, r: usize) -> Result<Vec<BigUint>> {
    if j % 2 == 1 {
        return Ok(vec![BigUint::zero(); r]);
    }
    if r % 2 != 0 {
        return Err(Error::OddCutCount { stage: j, r });
    }
    let mut v = vec![BigUint::zero(); r / 2];
    v.extend(std::iter::repeat(h.clone()).take(r / 2));
    Ok(v)
}

/// Parameters defining a construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstructionParams {
    /// Height of the stage-1 tower, at least 1.
    pub h1: u64,
    /// Number of stages to materialize, at least 1.
    pub j_max: usize,
    /// Cut-count rule (`r_j = j * r'_j`).
    pub r_rule: RRule,
    /// Spacer rule.
    pub spacer_rule: SpacerRule,
    /// Width of the stage-1 base interval; positive. Default 1 normalizes
    /// the stage-1 measure to `h1`.
    pub base_width: Rat,
    /// Upper bound on the number of ranges any refinement may materialize.
    pub cardinality_cap: usize,
}

pub const DEFAULT_CARDINALITY_CAP: usize = 10_000_000;

impl Default for ConstructionParams {
    fn default() -> Self {
        ConstructionParams {
            h1: 1,
            j_max: 6,
            r_rule: RRule::Default,
            spacer_rule: SpacerRule::PaperPreset,
            base_width: Rat::one(),
            cardinality_cap: DEFAULT_CARDINALITY_CAP,
        }
    }
}

impl ConstructionParams {
    /// Default parameters with a different number of stages.
    pub fn with_j_max(j_max: usize) -> Self {
        ConstructionParams {
            j_max,
            ..ConstructionParams::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.h1 < 1 {
            return Err(Error::InvalidParams("h1 must be at least 1".into()));
        }
        if self.j_max < 1 {
            return Err(Error::InvalidParams("j_max must be at least 1".into()));
        }
        if self.base_width <= Rat::zero() {
            return Err(Error::InvalidParams("base_width must be positive".into()));
        }
        if self.cardinality_cap == 0 {
            return Err(Error::InvalidParams("cardinality cap must be positive".into()));
        }
        Ok(())
    }
}

/// Per-stage derived data: height, level width, total tower measure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    /// Tower height `h_j`.
    pub height: BigUint,
    /// Width `w_j` of each level.
    pub width: Rat,
    /// Total measure `m_j = h_j * w_j` of the stage-`j` tower.
    pub measure: Rat,
}

/// The cut taking stage `j` to stage `j+1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cut {
    /// Number of columns `r_j`.
    pub columns: usize,
    /// Spacer counts `s_j`, one per column.
    pub spacers: Vec<BigUint>,
    /// Offsets `o_j`: index of each column's base level inside stage `j+1`.
    pub offsets: Vec<BigUint>,
}

/// Immutable table of stages `1..=j_max` (and the cuts between them).
///
/// Safe to share across threads; every query borrows it immutably.
#[derive(Debug, Clone)]
pub struct StageTable {
    params: ConstructionParams,
    stages: Vec<Stage>,
    cuts: Vec<Cut>,
}

impl StageTable {
    /// Build the table for the given parameters.
    pub fn build(params: ConstructionParams) -> Result<StageTable> {
        params.validate()?;
        let mut h = BigUint::from(params.h1);
        let mut w = params.base_width.clone();
        let mut stages = Vec::with_capacity(params.j_max);
        let mut cuts = Vec::with_capacity(params.j_max.saturating_sub(1));
        stages.push(Stage {
            height: h.clone(),
            measure: uint_to_rat(&h) * &w,
            width: w.clone(),
        });
        for j in 1..params.j_max {
            let r = params.r_rule.cut_count(j)?;
            let spacers = params.spacer_rule.spacers(j, &h, r)?;
            let mut offsets = Vec::with_capacity(r);
            let mut o = BigUint::zero();
            for s in &spacers {
                offsets.push(o.clone());
                o += &h;
                o += s;
            }
            // o is now o_j(r-1) + h_j + s_j(r-1), the next stage height.
            h = o;
            w /= uint_to_rat(&BigUint::from(r as u64));
            cuts.push(Cut {
                columns: r,
                spacers,
                offsets,
            });
            stages.push(Stage {
                height: h.clone(),
                measure: uint_to_rat(&h) * &w,
                width: w.clone(),
            });
        }
        Ok(StageTable {
            params,
            stages,
            cuts,
        })
    }

    /// Number of materialized stages.
    pub fn j_max(&self) -> usize {
        self.stages.len()
    }

    /// The parameters the table was built from.
    pub fn params(&self) -> &ConstructionParams {
        &self.params
    }

    /// Range cap for refinements.
    pub fn cardinality_cap(&self) -> usize {
        self.params.cardinality_cap
    }

    /// Validate a 1-based stage index.
    pub fn ensure_stage(&self, j: usize) -> Result<()> {
        if j >= 1 && j <= self.j_max() {
            Ok(())
        } else {
            Err(Error::StageOutOfRange {
                stage: j,
                j_max: self.j_max(),
            })
        }
    }

    /// Stage data for 1-based index `j`; panics if out of range (use
    /// [`StageTable::ensure_stage`] on untrusted input first).
    pub fn stage(&self, j: usize) -> &Stage {
        &self.stages[j - 1]
    }

    /// The cut from stage `j` to `j+1`; errors for the last stage.
    pub fn cut(&self, j: usize) -> Result<&Cut> {
        self.ensure_stage(j)?;
        self.cuts.get(j - 1).ok_or(Error::StageOutOfRange {
            stage: j + 1,
            j_max: self.j_max(),
        })
    }

    /// Tower height `h_j`.
    pub fn height(&self, j: usize) -> &BigUint {
        &self.stage(j).height
    }

    /// Level width `w_j`.
    pub fn width(&self, j: usize) -> &Rat {
        &self.stage(j).width
    }

    /// Tower measure `m_j`.
    pub fn measure(&self, j: usize) -> &Rat {
        &self.stage(j).measure
    }

    /// All heights `h_1..h_{j_max}`.
    pub fn heights(&self) -> Vec<BigUint> {
        self.stages.iter().map(|s| s.height.clone()).collect()
    }

    /// `(j, h_j)` for odd stages: candidate rigidity powers.
    pub fn rigid_times(&self) -> Vec<(usize, BigUint)> {
        (1..=self.j_max())
            .filter(|j| j % 2 == 1)
            .map(|j| (j, self.height(j).clone()))
            .collect()
    }

    /// `(j, h_j)` for even stages: candidate `I/2` powers.
    pub fn half_times(&self) -> Vec<(usize, BigUint)> {
        (1..=self.j_max())
            .filter(|j| j % 2 == 0)
            .map(|j| (j, self.height(j).clone()))
            .collect()
    }

    /// Check that heights and spacers of every stage past `n` are multiples
    /// of `n`.
    ///
    /// Covers stages `j` with `n < j <= j_max`; the last stage has no spacer
    /// vector, so only its height is checked there. `n = 1` passes
    /// vacuously.
    pub fn check_divisibility(&self, n: u64) -> DivisibilityReport {
        let nn = BigUint::from(n.max(1));
        let from_stage = (n as usize).saturating_add(1);
        let mut rows = Vec::new();
        let mut pass = true;
        for j in from_stage..=self.j_max() {
            let height_ok = self.height(j).mod_floor(&nn).is_zero();
            let spacers_ok = match self.cuts.get(j - 1) {
                Some(cut) => cut.spacers.iter().all(|s| s.mod_floor(&nn).is_zero()),
                None => true,
            };
            pass &= height_ok && spacers_ok;
            rows.push(StageDivisibility {
                stage: j,
                height_ok,
                spacers_ok,
            });
        }
        DivisibilityReport {
            n,
            from_stage,
            rows,
            pass,
        }
    }
}

/// Divisibility status of one stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDivisibility {
    pub stage: usize,
    pub height_ok: bool,
    pub spacers_ok: bool,
}

/// Outcome of [`StageTable::check_divisibility`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivisibilityReport {
    /// The modulus checked.
    pub n: u64,
    /// First stage the check applies to (`n + 1`).
    pub from_stage: usize,
    pub rows: Vec<StageDivisibility>,
    /// Conjunction over all checked stages.
    pub pass: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::parse_rational;

    fn u(x: u64) -> BigUint {
        BigUint::from(x)
    }

    /// Independent recurrence oracle: fold `h <- h*r + sum(s)` over literal
    /// cut counts and spacer vectors.
    fn oracle_heights(h1: u64, cuts: &[(u64, Vec<u64>)]) -> Vec<u64> {
        let mut hs = vec![h1];
        let mut h = h1;
        for (r, s) in cuts {
            assert_eq!(*r as usize, s.len());
            h = h * r + s.iter().sum::<u64>();
            hs.push(h);
        }
        hs
    }

    #[test]
    fn default_preset_heights_j5() {
        // Literal cuts of the default rule r_j = j(j+1) with preset spacers.
        let expected = oracle_heights(
            1,
            &[
                (2, vec![0, 0]),
                (6, vec![0, 0, 0, 2, 2, 2]),
                (12, vec![0; 12]),
                (20, [vec![0; 10], vec![216; 10]].concat()),
            ],
        );
        assert_eq!(expected, vec![1, 2, 18, 216, 6480]);
        let table = StageTable::build(ConstructionParams::with_j_max(5)).unwrap();
        let heights: Vec<BigUint> = expected.iter().map(|&h| u(h)).collect();
        assert_eq!(table.heights(), heights);
    }

    #[test]
    fn default_preset_heights_j6() {
        let table = StageTable::build(ConstructionParams::default()).unwrap();
        assert_eq!(
            table.heights(),
            vec![u(1), u(2), u(18), u(216), u(6480), u(194400)]
        );
    }

    #[test]
    fn no_spacers_preserve_measure() {
        let params = ConstructionParams {
            j_max: 2,
            r_rule: RRule::Explicit(vec![2]),
            spacer_rule: SpacerRule::Explicit(vec![vec![u(0), u(0)]]),
            ..ConstructionParams::default()
        };
        let table = StageTable::build(params).unwrap();
        assert_eq!(table.height(2), &u(2));
        assert_eq!(table.width(2), &parse_rational("1/2").unwrap());
        assert_eq!(table.measure(2), table.measure(1));
        assert_eq!(table.measure(1), &Rat::one());
    }

    #[test]
    fn explicit_r_prime_matches_offset_oracle() {
        // Cumulative-sum oracle over the offset recurrence with r' = (2, 3).
        let params = ConstructionParams {
            j_max: 3,
            r_rule: RRule::Explicit(vec![2, 3]),
            ..ConstructionParams::default()
        };
        let table = StageTable::build(params).unwrap();
        let cut2 = table.cut(2).unwrap();
        assert_eq!(cut2.spacers, vec![u(0), u(0), u(0), u(2), u(2), u(2)]);
        let mut offsets = vec![0u64];
        for i in 0..5 {
            let s = [0, 0, 0, 2, 2, 2][i];
            offsets.push(offsets[i] + 2 + s);
        }
        assert_eq!(offsets, vec![0, 2, 4, 6, 10, 14]);
        assert_eq!(cut2.offsets, offsets.iter().map(|&o| u(o)).collect::<Vec<_>>());
        assert_eq!(table.height(3), &u(18));
        assert_eq!(table.measure(3), &parse_rational("3/2").unwrap());
    }

    #[test]
    fn preset_spacers_odd_stage_all_zero() {
        assert_eq!(paper_preset_spacers(3, &u(18), 12).unwrap(), vec![u(0); 12]);
    }

    #[test]
    fn preset_spacers_even_stage_half_height() {
        assert_eq!(
            paper_preset_spacers(2, &u(2), 6).unwrap(),
            vec![u(0), u(0), u(0), u(2), u(2), u(2)]
        );
    }

    #[test]
    fn preset_spacers_even_stage_odd_cut_count_rejected() {
        assert_eq!(
            paper_preset_spacers(2, &u(2), 5),
            Err(Error::OddCutCount { stage: 2, r: 5 })
        );
    }

    #[test]
    fn divisibility_default_preset() {
        let table = StageTable::build(ConstructionParams::with_j_max(5)).unwrap();
        assert!(table.check_divisibility(2).pass);
        assert!(table.check_divisibility(1).pass);
        let rep = table.check_divisibility(2);
        assert_eq!(rep.from_stage, 3);
        assert_eq!(rep.rows.len(), 3);
    }

    #[test]
    fn divisibility_passes_for_all_small_moduli() {
        let table = StageTable::build(ConstructionParams::with_j_max(8)).unwrap();
        for n in 1..=7 {
            assert!(table.check_divisibility(n).pass, "n = {n}");
        }
    }

    #[test]
    fn divisibility_fails_on_bad_stages() {
        // n = 2 checks stages 3 and 4 only. s_3 = (1,0,0) breaks the spacer
        // condition at stage 3 and makes h_4 = 55 odd at stage 4.
        let params = ConstructionParams {
            h1: 1,
            j_max: 4,
            r_rule: RRule::Explicit(vec![3, 3, 1]),
            spacer_rule: SpacerRule::Explicit(vec![
                vec![u(0); 3],
                vec![u(0); 6],
                vec![u(1), u(0), u(0)],
            ]),
            ..ConstructionParams::default()
        };
        let table = StageTable::build(params).unwrap();
        assert_eq!(table.heights(), vec![u(1), u(3), u(18), u(55)]);
        let rep = table.check_divisibility(2);
        assert!(!rep.pass);
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.rows[0].height_ok && !rep.rows[0].spacers_ok);
        assert!(!rep.rows[1].height_ok && rep.rows[1].spacers_ok);
        // Stage 2 sits below the checked range, so its odd height is
        // irrelevant for n = 2 but fatal for a j_max = 2 check of n = 1.
        assert!(table.check_divisibility(1).pass);
    }

    #[test]
    fn measure_ratio_is_one_or_three_halves_under_preset() {
        let table = StageTable::build(ConstructionParams::with_j_max(8)).unwrap();
        for j in 1..table.j_max() {
            let ratio = table.measure(j + 1) / table.measure(j);
            if j % 2 == 0 {
                assert_eq!(ratio, parse_rational("3/2").unwrap(), "even stage {j}");
            } else {
                assert_eq!(ratio, Rat::one(), "odd stage {j}");
            }
        }
    }

    #[test]
    fn rejects_cut_count_below_two() {
        let params = ConstructionParams {
            j_max: 3,
            r_rule: RRule::Explicit(vec![1, 2]),
            ..ConstructionParams::default()
        };
        assert!(matches!(
            StageTable::build(params),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn rejects_bad_spacer_vector_length() {
        let params = ConstructionParams {
            j_max: 2,
            r_rule: RRule::Explicit(vec![2]),
            spacer_rule: SpacerRule::Explicit(vec![vec![u(0)]]),
            ..ConstructionParams::default()
        };
        assert!(matches!(
            StageTable::build(params),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn rejects_degenerate_params() {
        let mut p = ConstructionParams::default();
        p.j_max = 0;
        assert!(StageTable::build(p).is_err());
        let mut p = ConstructionParams::default();
        p.h1 = 0;
        assert!(StageTable::build(p).is_err());
        let mut p = ConstructionParams::default();
        p.base_width = Rat::zero();
        assert!(StageTable::build(p).is_err());
    }

    #[test]
    fn rigid_and_half_times() {
        let table = StageTable::build(ConstructionParams::default()).unwrap();
        let rigid: Vec<u64> = table
            .rigid_times()
            .iter()
            .map(|(_, h)| h.to_string().parse().unwrap())
            .collect();
        let half: Vec<u64> = table
            .half_times()
            .iter()
            .map(|(_, h)| h.to_string().parse().unwrap())
            .collect();
        assert_eq!(rigid, vec![1, 18, 6480]);
        assert_eq!(half, vec![2, 216, 194400]);
    }
}
