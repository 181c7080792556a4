//! Piecewise-linear switched reference model `Δ̇_m = A_m(i) Δ_m + B_m r`.
//!
//! The reference state space is split into convex polyhedral cells, each
//! defined by rows `h ∈ ℝ^{1×3}` acting on `[Δ_m; 1]` with a per-row `<` or
//! `≤`. Every cell belongs to one region `i`, and region `i` activates
//! subsystem `A_m(i)`. A region may span several cells when it is not convex
//! (the outer band `|Δ_m1| > θ` is two half-planes).

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::rk4_step;
use crate::linalg::{eigenvalues, is_hurwitz};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceError {
    #[error("subsystem {label} is not Hurwitz (eigenvalues {eigenvalues:?})")]
    NotHurwitz {
        label: usize,
        eigenvalues: [(f64, f64); 2],
    },
    #[error("state [{0}, {1}] is not covered by any partition cell")]
    UncoveredState(f64, f64),
    #[error("state [{x0}, {x1}] lies in regions {first} and {second}")]
    Overlap {
        x0: f64,
        x1: f64,
        first: usize,
        second: usize,
    },
    #[error("partition references region {region} but only {count} subsystems exist")]
    UnknownRegion { region: usize, count: usize },
    #[error("non-finite reference state")]
    NonFinite,
    #[error("subsystems must share B_m (subsystem {0} differs)")]
    InputMismatch(usize),
}

/// One linear mode `(A_m, B_m)` of the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subsystem {
    a: Matrix2<f64>,
    b: Vector2<f64>,
    label: usize,
}

impl Subsystem {
    pub fn new(a: Matrix2<f64>, b: Vector2<f64>, label: usize) -> Result<Self, ReferenceError> {
        if !is_hurwitz(&a) {
            return Err(ReferenceError::NotHurwitz {
                label,
                eigenvalues: eigenvalues(&a),
            });
        }
        Ok(Self { a, b, label })
    }

    pub fn a(&self) -> &Matrix2<f64> {
        &self.a
    }

    pub fn b(&self) -> &Vector2<f64> {
        &self.b
    }

    pub fn label(&self) -> usize {
        self.label
    }
}

/// `h · [Δ_m; 1] < 0` when `strict`, else `≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub h: [f64; 3],
    pub strict: bool,
}

impl HalfSpace {
    pub fn contains(&self, dm: &Vector2<f64>) -> bool {
        let v = self.h[0] * dm[0] + self.h[1] * dm[1] + self.h[2];
        if self.strict {
            v < 0.0
        } else {
            v <= 0.0
        }
    }
}

/// Convex cell: intersection of half-spaces, mapped to a region index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub region: usize,
    pub rows: Vec<HalfSpace>,
}

impl Cell {
    pub fn contains(&self, dm: &Vector2<f64>) -> bool {
        self.rows.iter().all(|row| row.contains(dm))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub cells: Vec<Cell>,
}

impl Partition {
    /// Two regions split on the position coordinate: region 0 is
    /// `|Δ_m1| ≤ θ`, region 1 is `|Δ_m1| > θ`. The boundary belongs to the
    /// inner region.
    pub fn symmetric_band(threshold: f64) -> Self {
        let inner = Cell {
            region: 0,
            rows: vec![
                HalfSpace {
                    h: [1.0, 0.0, -threshold],
                    strict: false,
                },
                HalfSpace {
                    h: [-1.0, 0.0, -threshold],
                    strict: false,
                },
            ],
        };
        let upper = Cell {
            region: 1,
            rows: vec![HalfSpace {
                h: [-1.0, 0.0, threshold],
                strict: true,
            }],
        };
        let lower = Cell {
            region: 1,
            rows: vec![HalfSpace {
                h: [1.0, 0.0, threshold],
                strict: true,
            }],
        };
        Self {
            cells: vec![inner, upper, lower],
        }
    }

    /// Whole plane assigned to a single region.
    pub fn single(region: usize) -> Self {
        Self {
            cells: vec![Cell {
                region,
                rows: Vec::new(),
            }],
        }
    }

    pub fn region_count(&self) -> usize {
        self.cells.iter().map(|c| c.region + 1).max().unwrap_or(0)
    }

    /// Active region `i` (the index with `κ_i = 1`).
    pub fn indicator(&self, dm: &Vector2<f64>) -> Result<usize, ReferenceError> {
        if !(dm[0].is_finite() && dm[1].is_finite()) {
            return Err(ReferenceError::NonFinite);
        }
        let mut found: Option<usize> = None;
        for cell in self.cells.iter().filter(|c| c.contains(dm)) {
            match found {
                None => found = Some(cell.region),
                Some(first) => {
                    return Err(ReferenceError::Overlap {
                        x0: dm[0],
                        x1: dm[1],
                        first,
                        second: cell.region,
                    })
                }
            }
        }
        found.ok_or(ReferenceError::UncoveredState(dm[0], dm[1]))
    }

    /// Indicator vector `κ`, one entry per region.
    pub fn indicators(&self, dm: &Vector2<f64>) -> Result<Vec<f64>, ReferenceError> {
        let active = self.indicator(dm)?;
        Ok((0..self.region_count())
            .map(|i| if i == active { 1.0 } else { 0.0 })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    subsystems: Vec<Subsystem>,
    partition: Partition,
}

impl ReferenceModel {
    pub fn new(subsystems: Vec<Subsystem>, partition: Partition) -> Result<Self, ReferenceError> {
        if let Some(cell) = partition.cells.iter().find(|c| c.region >= subsystems.len()) {
            return Err(ReferenceError::UnknownRegion {
                region: cell.region,
                count: subsystems.len(),
            });
        }
        if let Some(first) = subsystems.first() {
            if let Some(bad) = subsystems.iter().position(|s| s.b != first.b) {
                return Err(ReferenceError::InputMismatch(bad));
            }
        }
        Ok(Self {
            subsystems,
            partition,
        })
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn input_matrix(&self) -> Vector2<f64> {
        self.subsystems[0].b
    }

    /// Replace the partition by a single region covering the whole plane.
    pub fn pinned_to(&self, region: usize) -> Result<Self, ReferenceError> {
        Self::new(self.subsystems.clone(), Partition::single(region))
    }

    pub fn initial_state(&self, dm: Vector2<f64>) -> Result<ReferenceState, ReferenceError> {
        Ok(ReferenceState {
            dm,
            active_region: self.partition.indicator(&dm)?,
        })
    }

    /// One RK4 step holding the region active at step start; the state is
    /// carried across switches unchanged.
    pub fn reference_step(
        &self,
        state: &ReferenceState,
        r: f64,
        dt: f64,
    ) -> Result<ReferenceState, ReferenceError> {
        let region = self.partition.indicator(&state.dm)?;
        let sub = &self.subsystems[region];
        let y = rk4_step(&[state.dm[0], state.dm[1]], dt, |y| {
            let d = sub.a * Vector2::new(y[0], y[1]) + sub.b * r;
            [d[0], d[1]]
        });
        let dm = Vector2::new(y[0], y[1]);
        if !(dm[0].is_finite() && dm[1].is_finite()) {
            return Err(ReferenceError::NonFinite);
        }
        Ok(ReferenceState {
            dm,
            active_region: self.partition.indicator(&dm)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceState {
    pub dm: Vector2<f64>,
    pub active_region: usize,
}

/// Threshold `1 − φ` with `φ = 0.2 %` of the 1 m safety bound.
pub const PAPER_THRESHOLD: f64 = 0.998;

pub fn paper_subsystem_matrices() -> [Matrix2<f64>; 2] {
    [
        Matrix2::new(0.0, 1.0, -5.0, -9.0),
        Matrix2::new(0.0, 1.0, -20.0, -25.0),
    ]
}

/// Compliant and stiff reference modes with the `|Δ_m1| ≤ 0.998` split.
pub fn build_paper_reference() -> ReferenceModel {
    let b = Vector2::new(0.0, 1.0);
    let subsystems = paper_subsystem_matrices()
        .into_iter()
        .enumerate()
        .map(|(i, a)| Subsystem::new(a, b, i).expect("paper subsystems are Hurwitz"))
        .collect();
    ReferenceModel::new(subsystems, Partition::symmetric_band(PAPER_THRESHOLD))
        .expect("paper partition is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn indicator_examples() {
        let p = Partition::symmetric_band(PAPER_THRESHOLD);
        assert_eq!(p.indicator(&Vector2::new(0.5, 3.0)).unwrap(), 0);
        assert_eq!(p.indicator(&Vector2::new(1.2, -1.0)).unwrap(), 1);
        assert_eq!(p.indicator(&Vector2::new(-1.2, 0.0)).unwrap(), 1);
        assert_eq!(p.indicator(&Vector2::new(0.998, 0.0)).unwrap(), 0);
        assert_eq!(p.indicator(&Vector2::new(-0.998, 0.0)).unwrap(), 0);
        assert_eq!(p.indicators(&Vector2::new(1.0, 0.0)).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn uncovered_and_overlapping_partitions_are_reported() {
        let mut p = Partition::symmetric_band(1.0);
        p.cells.pop();
        assert!(matches!(
            p.indicator(&Vector2::new(-2.0, 0.0)),
            Err(ReferenceError::UncoveredState(..))
        ));
        let mut p = Partition::symmetric_band(1.0);
        p.cells.push(Cell {
            region: 1,
            rows: vec![],
        });
        assert!(matches!(
            p.indicator(&Vector2::new(0.0, 0.0)),
            Err(ReferenceError::Overlap { .. })
        ));
        assert!(matches!(
            p.indicator(&Vector2::new(f64::NAN, 0.0)),
            Err(ReferenceError::NonFinite)
        ));
    }

    #[test]
    fn hurwitz_gate() {
        let b = Vector2::new(0.0, 1.0);
        let err = Subsystem::new(Matrix2::new(0.0, 1.0, 1.0, 0.0), b, 3).unwrap_err();
        assert!(matches!(err, ReferenceError::NotHurwitz { label: 3, .. }));
        assert!(Subsystem::new(Matrix2::new(0.0, 1.0, -1.0, 0.0), b, 0).is_err());
    }

    #[test]
    fn partition_must_reference_known_regions() {
        let b = Vector2::new(0.0, 1.0);
        let s = Subsystem::new(paper_subsystem_matrices()[0], b, 0).unwrap();
        let err = ReferenceModel::new(vec![s], Partition::symmetric_band(1.0)).unwrap_err();
        assert_eq!(err, ReferenceError::UnknownRegion { region: 1, count: 1 });
    }

    #[test]
    fn paper_eigenvalues_match_quadratic_roots() {
        // roots of λ² + tλ + d from the quadratic formula
        let roots = |t: f64, d: f64| {
            let s = (t * t - 4.0 * d).sqrt();
            ((-t - s) / 2.0, (-t + s) / 2.0)
        };
        let model = build_paper_reference();
        for (sub, (t, d)) in model.subsystems().iter().zip([(9.0, 5.0), (25.0, 20.0)]) {
            let [(lo, lo_im), (hi, hi_im)] = eigenvalues(sub.a());
            let (r_lo, r_hi) = roots(t, d);
            assert_eq!((lo_im, hi_im), (0.0, 0.0));
            assert_relative_eq!(lo, r_lo, epsilon = 1e-12);
            assert_relative_eq!(hi, r_hi, epsilon = 1e-12);
            assert!(hi < 0.0);
        }
        let [(_, _), (slow1, _)] = eigenvalues(model.subsystems()[0].a());
        assert_relative_eq!(slow1, -0.594875, epsilon = 1e-6);
        let [(_, _), (slow2, _)] = eigenvalues(model.subsystems()[1].a());
        assert_relative_eq!(slow2, -0.8273825, epsilon = 1e-6);
    }

    #[test]
    fn zero_input_equilibrium() {
        let model = build_paper_reference();
        let mut s = model.initial_state(Vector2::zeros()).unwrap();
        for _ in 0..1000 {
            s = model.reference_step(&s, 0.0, 1e-3).unwrap();
        }
        assert_eq!(s.dm, Vector2::zeros());
        assert_eq!(s.active_region, 0);
    }

    #[test]
    fn stiff_mode_step_response() {
        let model = build_paper_reference().pinned_to(1).unwrap();
        let mut s = model.initial_state(Vector2::zeros()).unwrap();
        let dt = 1e-3;
        for _ in 0..20_000 {
            s = model.reference_step(&s, 20.0, dt).unwrap();
        }
        // steady state r / 20
        assert_relative_eq!(s.dm[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn compliant_mode_sinusoid_amplitude() {
        // |H(j0.5)| = 1 / sqrt((5 - 0.25)² + 4.5²)
        let gain = 1.0 / ((5.0f64 - 0.25).powi(2) + 4.5f64.powi(2)).sqrt();
        let expected = 7.5 * gain;
        assert_relative_eq!(expected, 1.1462, epsilon = 1e-3);
        let model = build_paper_reference().pinned_to(0).unwrap();
        let mut s = model.initial_state(Vector2::zeros()).unwrap();
        let dt = 1e-3;
        let mut peak: f64 = 0.0;
        for k in 0..60_000 {
            let t = k as f64 * dt;
            s = model.reference_step(&s, 7.5 * (0.5 * t).sin(), dt).unwrap();
            if t > 30.0 {
                peak = peak.max(s.dm[0].abs());
            }
        }
        assert_relative_eq!(peak, expected, max_relative = 2e-3);
    }

    #[test]
    fn switch_keeps_state_continuous() {
        let model = build_paper_reference();
        let mut s = model.initial_state(Vector2::new(0.99, 2.0)).unwrap();
        assert_eq!(s.active_region, 0);
        let before = s;
        s = model.reference_step(&s, 0.0, 1e-2).unwrap();
        // the step runs on the region active at its start; the flag flips after
        let compliant = model.pinned_to(0).unwrap();
        assert_eq!(s.dm, compliant.reference_step(&before, 0.0, 1e-2).unwrap().dm);
        assert_eq!(s.active_region, 1);
        let next = model.reference_step(&s, 0.0, 1e-2).unwrap();
        let stiff = model.pinned_to(1).unwrap();
        let mut s1 = s;
        s1.active_region = 1;
        assert_eq!(next.dm, stiff.reference_step(&s1, 0.0, 1e-2).unwrap().dm);
    }

    #[test]
    fn paper_partition_disjoint_on_samples() {
        use rand::{Rng, SeedableRng};
        let p = Partition::symmetric_band(PAPER_THRESHOLD);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let dm = Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let hits = p.cells.iter().filter(|c| c.contains(&dm)).count();
            assert_eq!(hits, 1);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100_000))]
        #[test]
        fn indicator_is_total_and_unique(x0 in -1e6f64..1e6, x1 in -1e6f64..1e6) {
            let p = Partition::symmetric_band(PAPER_THRESHOLD);
            let k = p.indicators(&Vector2::new(x0, x1)).unwrap();
            prop_assert_eq!(k.iter().sum::<f64>(), 1.0);
            prop_assert_eq!(k[0] * k[1], 0.0);
        }
    }
}
