//! Exact optimal transport between equal-size, equal-weight point clouds and
//! the Gaussian closed form.

mod assignment;
mod auction;
mod gaussian;
mod kdtree;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use assignment::{max_dual_violation, solve_assignment, CostMatrix, SolverKind, TransportResult};
pub use gaussian::gelbrich_w2sq;

use crate::data::Points;
use crate::error::{Error, Result};

/// Clouds up to this size are solved with the dense solver.
pub const DENSE_LIMIT: usize = 700;

type CostFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// Ground cost between outcome points.
#[derive(Clone, Default)]
pub enum CostSpec {
    #[default]
    SquaredEuclidean,
    Custom {
        name: String,
        cost: Arc<CostFn>,
    },
}

impl CostSpec {
    pub fn custom(name: impl Into<String>, cost: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        CostSpec::Custom { name: name.into(), cost: Arc::new(cost) }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            CostSpec::SquaredEuclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            CostSpec::Custom { cost, .. } => cost(a, b),
        }
    }

    pub fn is_squared_euclidean(&self) -> bool {
        matches!(self, CostSpec::SquaredEuclidean)
    }

    pub fn label(&self) -> String {
        match self {
            CostSpec::SquaredEuclidean => "squared_euclidean".into(),
            CostSpec::Custom { name, .. } => format!("custom:{name}"),
        }
    }
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl PartialEq for CostSpec {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (CostSpec::SquaredEuclidean, CostSpec::SquaredEuclidean) => true,
            (CostSpec::Custom { cost: a, .. }, CostSpec::Custom { cost: b, .. }) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl Serialize for CostSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for CostSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "squared_euclidean" => Ok(CostSpec::SquaredEuclidean),
            other => Err(serde::de::Error::custom(format!(
                "unknown cost '{other}'; only squared_euclidean can be configured from text"
            ))),
        }
    }
}

/// Which assignment solver [`empirical_transport`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverChoice {
    /// Dense up to [`DENSE_LIMIT`] points or for custom costs, auction above.
    #[default]
    Auto,
    Dense,
    /// Sparse auction; squared-Euclidean cost only.
    Auction,
}

fn check_clouds(a: &Points, b: &Points) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!("point counts differ: {} vs {}", a.len(), b.len())));
    }
    if a.dim() != b.dim() {
        return Err(Error::Argument(format!("dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    if a.is_empty() {
        return Err(Error::Argument("empty point clouds".into()));
    }
    if a.coords().iter().chain(b.coords()).any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite coordinates".into()));
    }
    Ok(())
}

/// Optimal equal-weight transport plan between two clouds of equal size.
pub fn empirical_transport(a: &Points, b: &Points, cost: &CostSpec, solver: SolverChoice) -> Result<TransportResult> {
    check_clouds(a, b)?;
    let use_auction = match solver {
        SolverChoice::Dense => false,
        SolverChoice::Auction => {
            if !cost.is_squared_euclidean() {
                return Err(Error::Argument("the auction solver supports squared-Euclidean cost only".into()));
            }
            true
        }
        SolverChoice::Auto => cost.is_squared_euclidean() && a.len() > DENSE_LIMIT,
    };
    if use_auction {
        return auction::auction_w2sq(a, b, auction::AuctionParams::default());
    }
    let n = a.len();
    let matrix = CostMatrix::from_fn(n, |i, j| cost.eval(a.row(i), b.row(j)));
    solve_assignment(&matrix)
}

/// Optimal average cost between two equal-size, equal-weight clouds
/// (squared 2-Wasserstein distance under the default cost).
pub fn empirical_w2sq(a: &Points, b: &Points, cost: &CostSpec) -> Result<f64> {
    empirical_transport(a, b, cost, SolverChoice::Auto).map(|r| r.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn sorted_oracle(a: &[f64], b: &[f64]) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn documented_examples() {
        let cost = CostSpec::SquaredEuclidean;
        let a = Points::from_scalars(&[0.1, 0.9]);
        assert_eq!(empirical_w2sq(&a, &a, &cost).unwrap(), 0.0);
        let a = Points::from_scalars(&[0.0, 1.0]);
        let b = Points::from_scalars(&[0.5, 0.5]);
        assert_abs_diff_eq!(empirical_w2sq(&a, &b, &cost).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn mismatched_clouds_are_rejected() {
        let cost = CostSpec::SquaredEuclidean;
        let a = Points::from_scalars(&[0.1, 0.9]);
        let b = Points::from_scalars(&[0.1]);
        assert!(matches!(empirical_w2sq(&a, &b, &cost), Err(Error::Argument(_))));
        let c = Points::from_rows(&[[0.1, 0.2], [0.3, 0.4]]).unwrap();
        assert!(matches!(empirical_w2sq(&a, &c, &cost), Err(Error::Argument(_))));
    }

    #[test]
    fn custom_cost_is_used() {
        let l1 = CostSpec::custom("l1", |a, b| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum());
        let a = Points::from_scalars(&[0.0, 1.0]);
        let b = Points::from_scalars(&[0.5, 0.5]);
        assert_abs_diff_eq!(empirical_w2sq(&a, &b, &l1).unwrap(), 0.5, epsilon = 1e-15);
        assert!(empirical_transport(&a, &b, &l1, SolverChoice::Auction).is_err());
        assert_eq!(l1.label(), "custom:l1");
    }

    #[test]
    fn cost_serde_round_trip() {
        let s = serde_json::to_string(&CostSpec::SquaredEuclidean).unwrap();
        assert_eq!(s, "\"squared_euclidean\"");
        assert_eq!(serde_json::from_str::<CostSpec>(&s).unwrap(), CostSpec::SquaredEuclidean);
        assert!(serde_json::from_str::<CostSpec>("\"l1\"").is_err());
    }

    #[test]
    fn auction_matches_dense_solver() {
        for (seed, n, d) in [(1u64, 300usize, 2usize), (2, 250, 1), (3, 200, 3)] {
            let mut rng = substream(seed, &[]);
            let a = Points::new(d, (0..n * d).map(|_| rng.random()).collect()).unwrap();
            let b = Points::new(d, (0..n * d).map(|_| rng.random::<f64>() * 0.7 + 0.4).collect()).unwrap();
            let cost = CostSpec::SquaredEuclidean;
            let dense = empirical_transport(&a, &b, &cost, SolverChoice::Dense).unwrap();
            let auction = empirical_transport(&a, &b, &cost, SolverChoice::Auction).unwrap();
            assert_eq!(auction.solver, SolverKind::Auction);
            assert!((dense.value - auction.value).abs() < 1e-9, "{} vs {}", dense.value, auction.value);
            assert!(auction.dual_gap >= -1e-12 && auction.dual_gap < 1e-9);
        }
    }

    #[test]
    fn auction_handles_duplicates_and_identical_clouds() {
        let a = Points::new(2, vec![0.5; 2 * 50]).unwrap();
        let r = empirical_transport(&a, &a, &CostSpec::SquaredEuclidean, SolverChoice::Auction).unwrap();
        assert_eq!(r.value, 0.0);
        let mut rng = substream(3, &[]);
        let b = Points::new(2, (0..2 * 100).map(|_| rng.random()).collect()).unwrap();
        let r = empirical_transport(&b, &b, &CostSpec::SquaredEuclidean, SolverChoice::Auction).unwrap();
        assert!(r.value < 1e-9);
    }

    #[test]
    fn large_gaussian_clouds_use_auction_and_track_gelbrich() {
        let n = 4000;
        let mut rng = substream(5, &[]);
        let mut draw = |m: [f64; 2], l: [[f64; 2]; 2]| -> Vec<f64> {
            (0..n)
                .flat_map(|_| {
                    let e: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                    [m[0] + l[0][0] * e[0], m[1] + l[1][0] * e[0] + l[1][1] * e[1]]
                })
                .collect()
        };
        let a = Points::new(2, draw([0.0, 0.0], [[1.0, 0.0], [0.3, 0.8]])).unwrap();
        let b = Points::new(2, draw([1.0, 0.5], [[0.6, 0.0], [-0.2, 1.1]])).unwrap();
        let r = empirical_transport(&a, &b, &CostSpec::SquaredEuclidean, SolverChoice::Auto).unwrap();
        assert_eq!(r.solver, SolverKind::Auction);
        let s0 = [1.0, 0.3, 0.3, 0.09 + 0.64];
        let s1 = [0.36, -0.12, -0.12, 0.04 + 1.21];
        let truth = gelbrich_w2sq(&[0.0, 0.0], &s0, &[1.0, 0.5], &s1).unwrap();
        assert!((r.value - truth).abs() / truth < 0.05, "{} vs {truth}", r.value);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn one_dimensional_sorted_matching(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..60)
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let v = empirical_w2sq(&Points::from_scalars(&a), &Points::from_scalars(&b), &CostSpec::SquaredEuclidean).unwrap();
            prop_assert!((v - sorted_oracle(&a, &b)).abs() < 1e-10);
        }

        #[test]
        fn symmetric_and_translation_covariant(
            seed in any::<u64>(), n in 1usize..30, shift in prop::array::uniform2(-2.0f64..2.0)
        ) {
            let mut rng = substream(seed, &[]);
            let a = Points::new(2, (0..2 * n).map(|_| rng.random()).collect()).unwrap();
            let b = Points::new(2, (0..2 * n).map(|_| rng.random()).collect()).unwrap();
            let cost = CostSpec::SquaredEuclidean;
            let ab = empirical_w2sq(&a, &b, &cost).unwrap();
            let ba = empirical_w2sq(&b, &a, &cost).unwrap();
            prop_assert!((ab - ba).abs() < 1e-10);
            let both = empirical_w2sq(&a.translated(&shift), &b.translated(&shift), &cost).unwrap();
            prop_assert!((ab - both).abs() < 1e-10);
            let one = empirical_w2sq(&a.translated(&shift), &b, &cost).unwrap();
            let (ma, mb) = (a.mean(), b.mean());
            let expected = ab + shift[0] * shift[0] + shift[1] * shift[1]
                - 2.0 * (shift[0] * (mb[0] - ma[0]) + shift[1] * (mb[1] - ma[1]));
            prop_assert!((one - expected).abs() < 1e-8);
        }

        #[test]
        fn permuted_cloud_has_zero_cost(seed in any::<u64>(), n in 1usize..40) {
            let mut rng = substream(seed, &[]);
            let a = Points::new(3, (0..3 * n).map(|_| rng.random()).collect()).unwrap();
            let idx: Vec<usize> = (0..n).rev().collect();
            let v = empirical_w2sq(&a, &a.select(&idx), &CostSpec::SquaredEuclidean).unwrap();
            prop_assert!(v.abs() < 1e-12);
        }

        #[test]
        fn triangle_inequality_on_root(seed in any::<u64>(), n in 1usize..25) {
            let mut rng = substream(seed, &[]);
            let mut cloud = || Points::new(2, (0..2 * n).map(|_| rng.random()).collect()).unwrap();
            let (a, b, c) = (cloud(), cloud(), cloud());
            let cost = CostSpec::SquaredEuclidean;
            let ab = empirical_w2sq(&a, &b, &cost).unwrap().sqrt();
            let bc = empirical_w2sq(&b, &c, &cost).unwrap().sqrt();
            let ac = empirical_w2sq(&a, &c, &cost).unwrap().sqrt();
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }
}
