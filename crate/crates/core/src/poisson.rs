//! Poisson configurations over finite-measure windows and their transport
//! under powers of the transformation.
//!
//! A point is an exact location: a stage, a level index, and a dyadic
//! horizontal coordinate inside the level. Pushing a point one stage
//! deeper is lossless: the coordinate picks the column, and the remainder
//! becomes the coordinate within the narrower level. [`transport`] applies
//! `T^n` by shifting the level index when the tower is tall enough and
//! descending otherwise, so every resolved image is exact, never rounded.
//!
//! For a Poisson process with the tower measure as intensity,
//! `Cov(N_S, N_T) = mu(S /\ T)`. [`mc_covariance`] estimates the
//! covariance of transported and plain counts over many replicas and
//! checks it against the certified correlation interval of the base map;
//! the only inexact steps are the `f64` Poisson intensity and the final
//! standard-error square root, both confined to the statistical layer.

use num_bigint::{BigInt, BigUint};
use num_traits::{Signed, ToPrimitive, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::construction::{SpacerRule, StageTable};
use crate::dynamics::{correlation_auto, CorrBound};
use crate::error::{Error, Result};
use crate::levels::{locate, LevelSet, Located};
use crate::rational::{rat_to_f64, ser_bigint, ser_biguint, ser_rat, uint_to_rat, Rat};

/// An exact point of the space: a level of some stage plus a horizontal
/// coordinate within the level, as a fraction of the level width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PointCoord {
    pub stage: usize,
    #[serde(serialize_with = "ser_biguint")]
    pub level: BigUint,
    /// Horizontal position in `[0, 1)`; sampled as `k / 2^64`.
    #[serde(serialize_with = "ser_rat")]
    pub frac: Rat,
}

/// One sampled Poisson configuration on a window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Configuration {
    pub window: LevelSet,
    pub seed: u64,
    pub replica: u64,
    pub points: Vec<PointCoord>,
}

/// Result of transporting a batch of points by `T^n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportOutcome {
    /// Points whose image resolved, each at the stage that resolved it.
    pub transported: Vec<PointCoord>,
    /// Points still above every materialized tower top, left untouched.
    pub residual: Vec<PointCoord>,
}

/// Uniform integer in `[0, bound)` by rejection on the top bits.
fn uniform_below<R: RngCore>(rng: &mut R, bound: &BigUint) -> BigUint {
    debug_assert!(!bound.is_zero());
    let bits = bound.bits();
    let words = bits.div_ceil(64) as usize;
    let top_mask: u64 = if bits % 64 == 0 {
        u64::MAX
    } else {
        (1u64 << (bits % 64)) - 1
    };
    loop {
        let mut bytes = Vec::with_capacity(words * 8);
        for i in 0..words {
            let mut w = rng.next_u64();
            if i == words - 1 {
                w &= top_mask;
            }
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        let candidate = BigUint::from_bytes_le(&bytes);
        if &candidate < bound {
            return candidate;
        }
    }
}

fn dyadic_unit<R: RngCore>(rng: &mut R) -> Rat {
    Rat::new(BigInt::from(rng.next_u64()), BigInt::from(1u128 << 64))
}

/// Sample one Poisson configuration on `window`.
///
/// The replica index selects an independent stream of the seeded
/// generator, so replicas can be drawn in any order, or in parallel, and
/// still reproduce bit for bit. The point count is Poisson with the
/// window measure as intensity (converted to `f64`; everything after the
/// count draw is exact). Levels are uniform by rank within the window,
/// horizontal coordinates are uniform dyadics `k / 2^64`.
pub fn sample_configuration(
    table: &StageTable,
    window: &LevelSet,
    seed: u64,
    replica: u64,
) -> Result<Configuration> {
    table.ensure_stage(window.stage())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    let mut points = Vec::new();
    if !window.is_empty() {
        let lambda = rat_to_f64(&window.measure(table));
        let poisson = Poisson::new(lambda)
            .map_err(|e| Error::InvalidParams(format!("bad Poisson intensity {lambda}: {e}")))?;
        let count = poisson.sample(&mut rng) as u64;
        let card = window.cardinality();
        points.reserve(count as usize);
        for _ in 0..count {
            let rank = uniform_below(&mut rng, &card);
            let level = window
                .index_at_rank(&rank)
                .expect("rank drawn below cardinality");
            points.push(PointCoord {
                stage: window.stage(),
                level,
                frac: dyadic_unit(&mut rng),
            });
        }
    }
    Ok(Configuration {
        window: window.clone(),
        seed,
        replica,
        points,
    })
}

fn validate_point(table: &StageTable, p: &PointCoord) -> Result<()> {
    table.ensure_stage(p.stage)?;
    if &p.level >= table.height(p.stage) {
        return Err(Error::InvalidParams(format!(
            "point level {} exceeds stage-{} height",
            p.level, p.stage
        )));
    }
    if p.frac < Rat::zero() || p.frac >= Rat::from_integer(1.into()) {
        return Err(Error::InvalidParams(format!(
            "point coordinate {} outside [0, 1)",
            p.frac
        )));
    }
    Ok(())
}

/// Push a point one stage deeper. The horizontal coordinate picks the
/// column and rescales to the narrower level, exactly.
fn descend_point(table: &StageTable, p: &PointCoord) -> Result<PointCoord> {
    let cut = table.cut(p.stage)?;
    let scaled = &p.frac * Rat::from_integer((cut.columns as u64).into());
    let col = scaled
        .floor()
        .to_integer()
        .to_usize()
        .expect("column index below cut count");
    Ok(PointCoord {
        stage: p.stage + 1,
        level: &cut.offsets[col] + &p.level,
        frac: scaled - Rat::from_integer((col as u64).into()),
    })
}

fn transport_point(table: &StageTable, p: &PointCoord, n: &BigUint) -> Result<Option<PointCoord>> {
    validate_point(table, p)?;
    let mut cur = p.clone();
    loop {
        let target = &cur.level + n;
        if &target < table.height(cur.stage) {
            cur.level = target;
            return Ok(Some(cur));
        }
        if cur.stage == table.j_max() {
            return Ok(None);
        }
        cur = descend_point(table, &cur)?;
    }
}

/// Apply `T^n` to every point, descending through columns as needed.
///
/// A point only lands in `residual` when even the deepest materialized
/// tower cannot resolve it; its expected mass per window is the
/// `unresolved` field of the corresponding correlation bound.
pub fn transport(
    table: &StageTable,
    points: &[PointCoord],
    n: &BigUint,
) -> Result<TransportOutcome> {
    let mut transported = Vec::with_capacity(points.len());
    let mut residual = Vec::new();
    for p in points {
        match transport_point(table, p, n)? {
            Some(q) => transported.push(q),
            None => residual.push(p.clone()),
        }
    }
    Ok(TransportOutcome {
        transported,
        residual,
    })
}

/// Whether a point lies in a level set, at any relative stage.
///
/// A deeper point is located down to the set's stage; a shallower point is
/// descended exactly to it.
pub fn point_in_set(table: &StageTable, p: &PointCoord, set: &LevelSet) -> Result<bool> {
    validate_point(table, p)?;
    if p.stage >= set.stage() {
        match locate(table, p.stage, &p.level, set.stage())? {
            Located::Level(level) => Ok(set.contains_index(&level.index)),
            Located::Spacer { .. } => Ok(false),
        }
    } else {
        let mut cur = p.clone();
        while cur.stage < set.stage() {
            cur = descend_point(table, &cur)?;
        }
        Ok(set.contains_index(&cur.level))
    }
}

/// Count the points lying in a level set.
pub fn count_in(table: &StageTable, set: &LevelSet, points: &[PointCoord]) -> Result<u64> {
    let mut count = 0;
    for p in points {
        if point_in_set(table, p, set)? {
            count += 1;
        }
    }
    Ok(count)
}

/// Monte Carlo covariance of transported and plain counts, with the
/// certified interval it must match.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceReport {
    #[serde(serialize_with = "ser_bigint")]
    pub n: BigInt,
    pub replicas: u64,
    pub seed: u64,
    pub window: LevelSet,
    /// Exact sample covariance of the replica count pairs.
    #[serde(serialize_with = "ser_rat")]
    pub estimate: Rat,
    pub estimate_f64: f64,
    /// Asymptotic standard error of the sample covariance.
    pub stderr: f64,
    /// Certified interval for the limit `mu(T^-n A /\ B)`.
    pub exact: CorrBound,
    /// Mass of `B` the protocol cannot see: outside the window, or with
    /// transport unresolved at the deepest stage. Only such mass can bias
    /// the estimate, and only downward, by at most this much. The default
    /// window `A \/ B` leaves just the unresolved share.
    #[serde(serialize_with = "ser_rat")]
    pub coverage_gap: Rat,
    #[serde(serialize_with = "ser_rat")]
    pub tolerance: Rat,
    /// Estimate within `4 stderr + coverage_gap` of the interval.
    pub within: bool,
}

fn rat_from_f64(x: f64) -> Rat {
    Rat::from_float(x).unwrap_or_else(Rat::zero)
}

/// Measure of the part of `set` that `T^n` cannot resolve even at the
/// deepest stage: its share of the top `n` levels there.
///
/// Counted by locating each top index back into the set, so the set
/// itself is never refined. Powers too large to enumerate fall back to
/// the certified coarse bound of `n` full levels.
fn unresolved_share(table: &StageTable, set: &LevelSet, n: &BigUint) -> Result<Rat> {
    let deepest = table.j_max();
    let h = table.height(deepest);
    if n >= h {
        return Ok(set.measure(table));
    }
    let w = table.width(deepest);
    if let Ok(nn) = u64::try_from(n) {
        if nn <= 1_000_000 {
            let mut count: u64 = 0;
            let mut t = h - n;
            for _ in 0..nn {
                if let Located::Level(level) = locate(table, deepest, &t, set.stage())? {
                    if set.contains_index(&level.index) {
                        count += 1;
                    }
                }
                t += 1u32;
            }
            return Ok(uint_to_rat(&BigUint::from(count)) * w);
        }
    }
    Ok(uint_to_rat(n) * w)
}

/// Distance from a value to an interval, zero inside it.
fn interval_distance(x: &Rat, lo: &Rat, hi: &Rat) -> Rat {
    if x < lo {
        lo - x
    } else if x > hi {
        x - hi
    } else {
        Rat::zero()
    }
}

/// Estimate `Cov(N_{T^-n A}, N_B) = mu(T^-n A /\ B)` by sampling Poisson
/// configurations on the window (`A \/ B` unless one is given),
/// transporting them by `T^n`, and correlating the counts, then compare
/// with the certified interval.
///
/// Counts and the sample covariance are exact; only the standard error is
/// floating point. Fails with [`Error::CoverageTooSmall`] when the mass
/// invisible to the window protocol exceeds `tolerance` (default
/// `(mu(A) + mu(B)) / 10`), since no number of replicas can then close
/// the gap.
pub fn mc_covariance(
    table: &StageTable,
    a: &LevelSet,
    b: &LevelSet,
    n: &BigInt,
    window: Option<&LevelSet>,
    replicas: u64,
    seed: u64,
    tolerance: Option<Rat>,
) -> Result<CovarianceReport> {
    if n.is_negative() {
        let mut report = mc_covariance(table, b, a, &(-n), window, replicas, seed, tolerance)?;
        report.n = n.clone();
        return Ok(report);
    }
    if replicas < 2 {
        return Err(Error::UsageError(
            "covariance needs at least 2 replicas".into(),
        ));
    }
    let mag = n.magnitude().clone();
    let window = match window {
        Some(w) => w.clone(),
        None => a.union(table, b)?,
    };
    let exact = correlation_auto(table, b, a, n, None)?;
    // The covariance of the two counts is `mu(T^-n A /\ B /\ W)` over the
    // resolved part of the window, so the bias is confined to mass of `B`
    // outside the window plus mass of `B /\ W` whose transport never
    // resolves.
    let missing_b = b.difference(table, &window)?.measure(table);
    let visible_b = b.intersect(table, &window)?;
    let coverage_gap = missing_b + unresolved_share(table, &visible_b, &mag)?;
    let tolerance = tolerance
        .unwrap_or_else(|| (a.measure(table) + b.measure(table)) / Rat::from_integer(10.into()));
    if coverage_gap > tolerance {
        return Err(Error::CoverageTooSmall {
            gap: coverage_gap.to_string(),
            tolerance: tolerance.to_string(),
        });
    }
    let pairs: Vec<(i64, i64)> = (0..replicas)
        .into_par_iter()
        .map(|replica| -> Result<(i64, i64)> {
            let cfg = sample_configuration(table, &window, seed, replica)?;
            let moved = transport(table, &cfg.points, &mag)?;
            let x = count_in(table, a, &moved.transported)?;
            let y = count_in(table, b, &cfg.points)?;
            Ok((x as i64, y as i64))
        })
        .collect::<Result<Vec<_>>>()?;
    let r = replicas as i128;
    let sum_x: i128 = pairs.iter().map(|p| p.0 as i128).sum();
    let sum_y: i128 = pairs.iter().map(|p| p.1 as i128).sum();
    // Centered pass over scaled residuals: ix = R*x - sum_x is integral,
    // so every accumulation below stays exact.
    let mut sum_prod = BigInt::zero();
    let mut sum_prod_sq = BigInt::zero();
    for (x, y) in &pairs {
        let ix = r * (*x as i128) - sum_x;
        let iy = r * (*y as i128) - sum_y;
        let prod = BigInt::from(ix) * BigInt::from(iy);
        sum_prod_sq += &prod * &prod;
        sum_prod += prod;
    }
    let r_big = BigInt::from(r);
    let estimate = Rat::new(
        sum_prod,
        &r_big * &r_big * (&r_big - BigInt::from(1)),
    );
    // Asymptotic variance of the sample covariance: (m22 - cov^2) / R.
    let m22 = Rat::new(sum_prod_sq, r_big.pow(5));
    let var_cov = (&m22 - &estimate * &estimate).max(Rat::zero())
        / Rat::from_integer(r.into());
    let stderr = rat_to_f64(&var_cov).sqrt();
    let margin = rat_from_f64(4.0 * stderr) + &coverage_gap;
    let within = interval_distance(&estimate, &exact.lo, &exact.hi) <= margin;
    Ok(CovarianceReport {
        n: n.clone(),
        replicas,
        seed,
        window,
        estimate_f64: rat_to_f64(&estimate),
        estimate,
        stderr,
        exact,
        coverage_gap,
        tolerance,
        within,
    })
}

/// Monte Carlo rigidity check on the suspension: at an odd-stage height
/// the normalized covariance must stay near 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuspensionRigidityReport {
    pub stage: usize,
    #[serde(serialize_with = "ser_biguint")]
    pub power: BigUint,
    pub r: usize,
    pub cov: CovarianceReport,
    /// Estimate divided by `mu(A)`; rigidity keeps it near `1 - 1/r`.
    pub normalized: f64,
    /// Lower limit `(1 - 1/r) mu(A)` before statistical margins.
    #[serde(serialize_with = "ser_rat")]
    pub floor: Rat,
    pub pass: bool,
}

/// Test rigidity of the suspension at the height of an odd stage: the
/// covariance of `N_{T^-h_j A}` and `N_A` must reach
/// `(1 - 1/r_j) mu(A)` up to `4 stderr` plus the coverage gap.
///
/// Under the preset only odd stages qualify, mirroring the base map.
pub fn suspension_rigidity_test(
    table: &StageTable,
    a: &LevelSet,
    stage: usize,
    window: Option<&LevelSet>,
    replicas: u64,
    seed: u64,
    tolerance: Option<Rat>,
) -> Result<SuspensionRigidityReport> {
    if matches!(table.params().spacer_rule, SpacerRule::PaperPreset) && stage % 2 == 0 {
        return Err(Error::UsageError(format!(
            "suspension rigidity under the preset needs an odd stage, got stage {stage}"
        )));
    }
    let r = table.cut(stage)?.columns;
    let power = table.height(stage).clone();
    let cov = mc_covariance(
        table,
        a,
        a,
        &BigInt::from(power.clone()),
        window,
        replicas,
        seed,
        tolerance,
    )?;
    let mu = a.measure(table);
    let floor = (Rat::from_integer(1.into())
        - Rat::new(BigInt::from(1), BigInt::from(r as u64)))
        * &mu;
    let margin = rat_from_f64(4.0 * cov.stderr) + &cov.coverage_gap;
    let pass = cov.estimate >= &floor - &margin;
    Ok(SuspensionRigidityReport {
        stage,
        power,
        r,
        normalized: rat_to_f64(&(&cov.estimate / &mu)),
        cov,
        floor,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::ConstructionParams;
    use crate::rational::parse_rational;

    fn u(x: u64) -> BigUint {
        BigUint::from(x)
    }

    fn rat(s: &str) -> Rat {
        parse_rational(s).unwrap()
    }

    fn default_table(j_max: usize) -> StageTable {
        StageTable::build(ConstructionParams::with_j_max(j_max)).unwrap()
    }

    fn c2(table: &StageTable) -> LevelSet {
        LevelSet::single(table, 2, u(0)).unwrap()
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let table = default_table(5);
        let w = LevelSet::full_tower(&table, 4).unwrap();
        let one = sample_configuration(&table, &w, 42, 7).unwrap();
        let two = sample_configuration(&table, &w, 42, 7).unwrap();
        assert_eq!(one, two);
        // Different replicas draw from different streams.
        let differs = (0..8u64)
            .map(|rep| sample_configuration(&table, &w, 42, rep).unwrap())
            .any(|cfg| cfg.points != one.points);
        assert!(differs);
    }

    #[test]
    fn sampled_points_lie_in_window() {
        let table = default_table(5);
        let w = LevelSet::parse(&table, "stage=3,levels=2..7,11").unwrap();
        for rep in 0..32 {
            let cfg = sample_configuration(&table, &w, 9, rep).unwrap();
            assert_eq!(
                count_in(&table, &w, &cfg.points).unwrap(),
                cfg.points.len() as u64
            );
            for p in &cfg.points {
                assert!(p.frac >= Rat::zero() && p.frac < Rat::from_integer(1.into()));
            }
        }
    }

    #[test]
    fn uniform_below_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for bound in [1u64, 2, 3, 17, 216, 194400, u64::MAX] {
            let b = u(bound);
            for _ in 0..200 {
                assert!(uniform_below(&mut rng, &b) < b);
            }
        }
        // A bound spanning multiple words still terminates and stays below.
        let big = BigUint::from(u64::MAX) * BigUint::from(u64::MAX);
        for _ in 0..50 {
            assert!(uniform_below(&mut rng, &big) < big);
        }
    }

    #[test]
    fn count_mean_tracks_window_measure() {
        // Rough check only; the acceptance suite runs the full-size one.
        let table = default_table(5);
        let w = LevelSet::full_tower(&table, 4).unwrap();
        let replicas = 4000u64;
        let total: u64 = (0..replicas)
            .map(|rep| {
                sample_configuration(&table, &w, 5, rep)
                    .unwrap()
                    .points
                    .len() as u64
            })
            .sum();
        let mean = total as f64 / replicas as f64;
        // lambda = 3/2, sd of the mean ~ sqrt(1.5/4000) ~ 0.019.
        assert!((mean - 1.5).abs() < 0.1, "mean = {mean}");
    }

    #[test]
    fn transport_descends_exactly() {
        // Level 17 of stage 3 cannot move by 1 inside its tower; the
        // coordinate 3/10 picks the fourth column of twelve.
        let table = default_table(5);
        let p = PointCoord {
            stage: 3,
            level: u(17),
            frac: rat("3/10"),
        };
        let moved = transport(&table, &[p], &u(1)).unwrap();
        assert!(moved.residual.is_empty());
        assert_eq!(
            moved.transported,
            vec![PointCoord {
                stage: 4,
                level: u(72),
                frac: rat("3/5"),
            }]
        );
    }

    #[test]
    fn transport_interior_shift_stays_put() {
        let table = default_table(5);
        let p = PointCoord {
            stage: 3,
            level: u(4),
            frac: rat("1/3"),
        };
        let moved = transport(&table, &[p.clone()], &u(7)).unwrap();
        assert_eq!(moved.transported[0].stage, 3);
        assert_eq!(moved.transported[0].level, u(11));
        assert_eq!(moved.transported[0].frac, p.frac);
    }

    #[test]
    fn transport_conserves_points() {
        let table = default_table(4);
        let w = LevelSet::full_tower(&table, 3).unwrap();
        for rep in 0..16 {
            let cfg = sample_configuration(&table, &w, 11, rep).unwrap();
            let moved = transport(&table, &cfg.points, &u(17)).unwrap();
            assert_eq!(
                moved.transported.len() + moved.residual.len(),
                cfg.points.len()
            );
        }
    }

    #[test]
    fn transport_composes() {
        // T^m after T^n equals T^(n+m) on points that resolve, up to the
        // stage the descent happened to stop at.
        let table = default_table(5);
        let w = LevelSet::full_tower(&table, 3).unwrap();
        let canonical = |p: &PointCoord, stage: usize| -> PointCoord {
            let mut cur = p.clone();
            while cur.stage < stage {
                cur = descend_point(&table, &cur).unwrap();
            }
            cur
        };
        for rep in 0..24 {
            let cfg = sample_configuration(&table, &w, 3, rep).unwrap();
            let once = transport(&table, &cfg.points, &u(5)).unwrap();
            let twice = transport(&table, &once.transported, &u(30)).unwrap();
            let direct = transport(&table, &cfg.points, &u(35)).unwrap();
            assert!(twice.residual.is_empty() && direct.residual.is_empty());
            assert_eq!(twice.transported.len(), direct.transported.len());
            for (a, b) in twice.transported.iter().zip(&direct.transported) {
                let stage = a.stage.max(b.stage);
                assert_eq!(canonical(a, stage), canonical(b, stage));
            }
        }
    }

    #[test]
    fn membership_is_stage_agnostic() {
        let table = default_table(5);
        let coarse = c2(&table);
        // A shallow point descends into the set's stage.
        let p = PointCoord {
            stage: 2,
            level: u(0),
            frac: rat("1/2"),
        };
        assert!(point_in_set(&table, &p, &coarse).unwrap());
        let fine = LevelSet::parse(&table, "stage=3,levels=0..5").unwrap();
        // frac 1/2 of stage-2 level 0 falls in column 3 of 6: level 6.
        assert!(!point_in_set(&table, &p, &fine).unwrap());
        let q = PointCoord {
            stage: 2,
            level: u(0),
            frac: rat("1/12"),
        };
        assert!(point_in_set(&table, &q, &fine).unwrap());
        // A deep point locates back; stage-3 level 8 is spacer material.
        let s = PointCoord {
            stage: 3,
            level: u(8),
            frac: Rat::zero(),
        };
        assert!(!point_in_set(&table, &s, &coarse).unwrap());
    }

    #[test]
    fn covariance_matches_exact_quarter() {
        let table = default_table(6);
        let a = c2(&table);
        let rep = mc_covariance(&table, &a, &a, &BigInt::from(2), None, 3000, 42, None).unwrap();
        assert_eq!(rep.exact.lo, rat("1/4"));
        assert!(rep.exact.is_exact());
        assert!(rep.within, "estimate {} stderr {}", rep.estimate_f64, rep.stderr);
        // Every window point resolves two levels up, so nothing is lost.
        assert_eq!(rep.coverage_gap, Rat::zero());
        assert!(rep.stderr > 0.0);
    }

    #[test]
    fn explicit_tower_window_reproduces_the_quarter() {
        // A full stage-4 window strictly contains A \/ B; the covariance
        // target is unchanged and the strip above h_4 - 2 misses C_2.
        let table = default_table(4);
        let a = c2(&table);
        let window = LevelSet::full_tower(&table, 4).unwrap();
        let rep =
            mc_covariance(&table, &a, &a, &BigInt::from(2), Some(&window), 3000, 42, None)
                .unwrap();
        assert_eq!(rep.exact.lo, rat("1/4"));
        assert_eq!(rep.coverage_gap, Rat::zero());
        assert!(rep.within, "estimate {} stderr {}", rep.estimate_f64, rep.stderr);
        assert_eq!(rep.window.stage(), 4);
    }

    #[test]
    fn undersized_window_reports_missing_mass() {
        // Windowing on a single stage-2 level hides half of B = C_2 \/ TC_2.
        let table = default_table(4);
        let a = c2(&table);
        let b = LevelSet::full_tower(&table, 2).unwrap();
        let rep =
            mc_covariance(&table, &b, &b, &BigInt::from(0), Some(&a), 200, 9, Some(rat("3/1")))
                .unwrap();
        assert_eq!(rep.coverage_gap, rat("1/2"));
    }

    #[test]
    fn covariance_is_deterministic() {
        let table = default_table(5);
        let a = c2(&table);
        let one = mc_covariance(&table, &a, &a, &BigInt::from(2), None, 500, 7, None).unwrap();
        let two = mc_covariance(&table, &a, &a, &BigInt::from(2), None, 500, 7, None).unwrap();
        assert_eq!(one.estimate, two.estimate);
        assert_eq!(one.stderr, two.stderr);
    }

    #[test]
    fn negative_power_swaps_roles() {
        let table = default_table(6);
        let a = c2(&table);
        let b = LevelSet::parse(&table, "stage=3,levels=0..8").unwrap();
        let fwd = mc_covariance(&table, &b, &a, &BigInt::from(2), None, 400, 3, None).unwrap();
        let bwd = mc_covariance(&table, &a, &b, &BigInt::from(-2), None, 400, 3, None).unwrap();
        assert_eq!(bwd.estimate, fwd.estimate);
        assert_eq!(bwd.n, BigInt::from(-2));
    }

    #[test]
    fn coverage_gate_rejects_blind_protocols() {
        // A power close to the deepest height leaves almost all of the
        // window unresolved, so the default tolerance trips.
        let table = default_table(6);
        let a = c2(&table);
        let err = mc_covariance(&table, &a, &a, &BigInt::from(194000), None, 10, 1, None);
        assert!(matches!(err, Err(Error::CoverageTooSmall { .. })));
        // An explicit generous tolerance lets the run proceed.
        let ok = mc_covariance(
            &table,
            &a,
            &a,
            &BigInt::from(194000),
            None,
            10,
            1,
            Some(rat("2/1")),
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn too_few_replicas_is_a_usage_error() {
        let table = default_table(5);
        let a = c2(&table);
        assert!(matches!(
            mc_covariance(&table, &a, &a, &BigInt::from(2), None, 1, 1, None),
            Err(Error::UsageError(_))
        ));
    }

    #[test]
    fn suspension_rigidity_parity_guard() {
        let table = default_table(6);
        let a = c2(&table);
        assert!(matches!(
            suspension_rigidity_test(&table, &a, 2, None, 100, 1, None),
            Err(Error::UsageError(_))
        ));
    }

    #[test]
    fn suspension_rigidity_small_run_passes() {
        let table = default_table(6);
        let a = c2(&table);
        let rep = suspension_rigidity_test(&table, &a, 3, None, 2000, 42, None).unwrap();
        assert_eq!(rep.r, 12);
        assert_eq!(rep.floor, rat("11/24"));
        assert!(rep.pass, "normalized = {}", rep.normalized);
        assert!(rep.normalized > 0.8);
    }
}
