//! Closed-form cost and privacy calculators.

use num_bigint::BigUint;

use crate::error::{Error, Result};

/// Inputs to the flat (single-level) query cost estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModelInput {
    /// Number of users with stored locations.
    pub users: f64,
    /// Mean locations per user (κ).
    pub locations_per_user: f64,
    /// Mean trajectory length, same unit as `cell_width`.
    pub trajectory_length: f64,
    pub space_width: f64,
    pub cell_width: f64,
}

/// Expected comparisons when the query scans the finest cells its
/// trajectory crosses: `N_u κ l_u w_1 / W²`.
pub fn query_cost_flat(input: &CostModelInput) -> Result<f64> {
    if input.space_width.is_nan() || input.space_width <= 0.0 || input.cell_width.is_nan() || input.cell_width <= 0.0 {
        return Err(Error::InvalidInput("space and cell widths must be positive".into()));
    }
    let per_cell = input.users * input.locations_per_user / (input.space_width / input.cell_width).powi(2);
    let cells_visited = input.trajectory_length / input.cell_width;
    Ok(per_cell * cells_visited)
}

/// Comparisons for a query of `query_locations` points against a two-level
/// tree: `λ (N_r + N_g + N_u / (N_r N_g))`.
///
/// The per-cell occupancy `N_u / (N_r N_g)` is rounded to the nearest whole
/// location (half up), since a cell holds whole points.
pub fn query_cost_tree(query_locations: u64, regions: u64, grids: u64, users: u64) -> Result<u128> {
    if regions == 0 || grids == 0 {
        return Err(Error::InvalidInput("region and grid counts must be at least 1".into()));
    }
    let cells = regions as u128 * grids as u128;
    let occupancy = (2 * users as u128 + cells) / (2 * cells);
    Ok(query_locations as u128 * (regions as u128 + grids as u128 + occupancy))
}

/// Unrounded form of [`query_cost_tree`].
pub fn query_cost_tree_exact(query_locations: f64, regions: f64, grids: f64, users: f64) -> f64 {
    query_locations * (regions + grids + users / (regions * grids))
}

/// Brute-force comparisons with no partitioning: every query point against
/// every stored location.
pub fn query_cost_unpartitioned(query_locations: u64, users: u64) -> u128 {
    query_locations as u128 * users as u128
}

/// Largest `a` with `a³ <= n`.
pub fn integer_cube_root(n: u64) -> u64 {
    if n == 0 {
        return 0;
    }
    let mut a = (n as f64).cbrt().round() as u64;
    while (a as u128).pow(3) > n as u128 {
        a -= 1;
    }
    while ((a + 1) as u128).pow(3) <= n as u128 {
        a += 1;
    }
    a
}

/// Whether `f(a1, b1) < f(a2, b2)` for `f(a, b) = a + b + n / (a b)`, exactly.
fn cheaper(n: u64, (a1, b1): (u64, u64), (a2, b2): (u64, u64)) -> bool {
    let num = |a: u64, b: u64| (a as u128 * b as u128) * (a as u128 + b as u128) + n as u128;
    let den = |a: u64, b: u64| a as u128 * b as u128;
    num(a1, b1) * den(a2, b2) < num(a2, b2) * den(a1, b1)
}

/// Region and grid counts minimizing the tree query cost.
///
/// Starts from the cube root rounded to the nearest integer and walks to
/// any strictly cheaper neighbor `(N_r ± 1, N_g ± 1)` until none remains.
pub fn plan_partition(users: u64) -> Result<(u64, u64)> {
    if users == 0 {
        return Err(Error::InvalidInput("user count must be at least 1".into()));
    }
    let a = integer_cube_root(users);
    // round to nearest: compare 8n with (2a + 1)^3
    let start = if 8 * users as u128 >= (2 * a as u128 + 1).pow(3) {
        a + 1
    } else {
        a
    };
    let mut best = (start.max(1), start.max(1));
    loop {
        let mut next = best;
        for dr in -1i64..=1 {
            for dg in -1i64..=1 {
                let cand = (best.0 as i64 + dr, best.1 as i64 + dg);
                if cand.0 < 1 || cand.1 < 1 {
                    continue;
                }
                let cand = (cand.0 as u64, cand.1 as u64);
                if cheaper(users, cand, next) {
                    next = cand;
                }
            }
        }
        if next == best {
            return Ok(best);
        }
        best = next;
    }
}

/// Upper bound on a server guessing a user's real identity.
pub fn theorem1_bound(pseudo_domain: u64, real_domain: u64) -> Result<f64> {
    if pseudo_domain == 0 || real_domain == 0 {
        return Err(Error::InvalidInput("domains must be non-empty".into()));
    }
    Ok(1.0 / (pseudo_domain as f64 * real_domain as f64))
}

/// Upper bound on a server guessing a location's finest cell.
pub fn theorem2_bound(finest_cells: u64) -> Result<f64> {
    if finest_cells == 0 {
        return Err(Error::InvalidInput("cell count must be positive".into()));
    }
    Ok(1.0 / finest_cells as f64)
}

/// Probability of mapping a patient's shares onto the right cells given an
/// outbreak location.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingProbability {
    /// `4 N_v²`: cells in the square around the outbreak.
    pub cells: u128,
    pub reported: u64,
    /// Exact value is `1 / denominator`.
    pub denominator: BigUint,
    pub log10: f64,
    pub value: f64,
}

/// `1 / ((4N_v²)(4N_v² - 1)…(4N_v² - q + 1))`: one over the number of ordered
/// placements of `q` reported locations into `4N_v²` distinct cells.
pub fn theorem3_probability(intercepted_cells: u64, reported: u64) -> Result<MappingProbability> {
    let cells = 4 * (intercepted_cells as u128).pow(2);
    if reported as u128 > cells {
        return Err(Error::InvalidInput(format!(
            "{reported} reported locations exceed {cells} candidate cells"
        )));
    }
    let mut denominator = BigUint::from(1u8);
    let mut log10 = 0.0;
    for j in 0..reported as u128 {
        let factor = cells - j;
        denominator *= BigUint::from(factor);
        log10 -= (factor as f64).log10();
    }
    Ok(MappingProbability {
        cells,
        reported,
        denominator,
        log10,
        value: 10f64.powf(log10),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_cost() {
        let base = CostModelInput {
            users: 1000.0,
            locations_per_user: 0.0,
            trajectory_length: 50.0,
            space_width: 100.0,
            cell_width: 10.0,
        };
        assert_eq!(query_cost_flat(&base).unwrap(), 0.0);
        let full = CostModelInput {
            locations_per_user: 1.0,
            trajectory_length: 100.0,
            cell_width: 100.0,
            ..base
        };
        assert!((query_cost_flat(&full).unwrap() - 1000.0).abs() < 1e-9);
        assert!(query_cost_flat(&CostModelInput {
            space_width: 0.0,
            ..base
        })
        .is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let i = CostModelInput {
                users: rng.gen_range(1.0..1e7),
                locations_per_user: rng.gen_range(0.0..20.0),
                trajectory_length: rng.gen_range(1.0..1e4),
                space_width: rng.gen_range(1e3..1e5),
                cell_width: rng.gen_range(1.0..1e3),
            };
            let expect =
                i.users * i.locations_per_user * i.trajectory_length * i.cell_width / (i.space_width * i.space_width);
            let got = query_cost_flat(&i).unwrap();
            assert!((got - expect).abs() <= 1e-9 * expect.max(1.0));
        }
    }

    #[test]
    fn tree_cost_examples() {
        assert_eq!(query_cost_tree(10, 464, 464, 100_000_000).unwrap(), 13_920);
        assert_eq!(query_cost_tree(0, 464, 464, 100_000_000).unwrap(), 0);
        assert_eq!(query_cost_tree(7, 1, 1, 5000).unwrap(), 7 * 5002);
        assert!(query_cost_tree(1, 0, 4, 10).is_err());
        let speedup = query_cost_unpartitioned(10, 100_000_000) as f64 / 13_920.0;
        assert_eq!(speedup.round() as u64, 71_839);
    }

    #[test]
    fn cube_roots() {
        for n in [0u64, 1, 7, 8, 9, 26, 27, 28, 999, 1000, 100_000_000, u32::MAX as u64] {
            let a = integer_cube_root(n);
            assert!((a as u128).pow(3) <= n as u128 && ((a + 1) as u128).pow(3) > n as u128);
        }
    }

    #[test]
    fn planner_examples() {
        assert_eq!(plan_partition(100_000_000).unwrap(), (464, 464));
        assert_eq!(plan_partition(8).unwrap(), (2, 2));
        assert_eq!(plan_partition(1).unwrap(), (1, 1));
        assert!(plan_partition(0).is_err());
    }

    #[test]
    fn planner_is_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.gen_range(1..10_000_000_000u64);
            let (r, g) = plan_partition(n).unwrap();
            let here = query_cost_tree(1, r, g, n).unwrap();
            for (dr, dg) in [
                (-1i64, -1i64),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ] {
                let (r2, g2) = (r as i64 + dr, g as i64 + dg);
                if r2 < 1 || g2 < 1 {
                    continue;
                }
                assert!(here <= query_cost_tree(1, r2 as u64, g2 as u64, n).unwrap(), "n = {n}");
            }
        }
    }

    #[test]
    fn identity_and_cell_bounds() {
        assert_eq!(theorem1_bound(1, 1).unwrap(), 1.0);
        assert!((theorem1_bound(1_000_000, 10_000).unwrap() - 1e-10).abs() < 1e-22);
        assert_eq!(theorem2_bound(1).unwrap(), 1.0);
        assert!((theorem2_bound(1_000_000).unwrap() - 1e-6).abs() < 1e-18);
        assert!(theorem1_bound(0, 3).is_err());
    }

    /// An adversary with no background knowledge guesses uniformly.
    fn guessing_rate(domains: &[u64], trials: u64, rng: &mut ChaCha8Rng) -> f64 {
        let mut hits = 0u64;
        for _ in 0..trials {
            if domains.iter().all(|&d| rng.gen_range(0..d) == rng.gen_range(0..d)) {
                hits += 1;
            }
        }
        hits as f64 / trials as f64
    }

    #[test]
    fn bounds_match_guessing_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 1_000_000u64;
        for (p, r) in [(4u64, 4u64), (16, 2), (3, 16)] {
            let expect = theorem1_bound(p, r).unwrap();
            let sigma = (expect * (1.0 - expect) / trials as f64).sqrt();
            let got = guessing_rate(&[p, r], trials, &mut rng);
            assert!((got - expect).abs() <= 3.0 * sigma, "({p},{r}): {got} vs {expect}");
        }
        for cells in [4u64, 16, 100] {
            let expect = theorem2_bound(cells).unwrap();
            let sigma = (expect * (1.0 - expect) / trials as f64).sqrt();
            let got = guessing_rate(&[cells], trials, &mut rng);
            assert!((got - expect).abs() <= 3.0 * sigma);
        }
    }

    #[test]
    fn mapping_probability() {
        let p = theorem3_probability(880, 3).unwrap();
        assert_eq!(p.cells, 3_097_600);
        assert!(p.value > 3.3e-20 && p.value < 4.1e-20, "{}", p.value);
        assert!((p.value - 1.0 / 27e18).abs() / (1.0 / 27e18) < 0.10);
        let one = theorem3_probability(1, 1).unwrap();
        assert_eq!(one.value, 0.25);
        assert_eq!(one.denominator, BigUint::from(4u8));
        for nv in [1u64, 5, 880] {
            assert_eq!(theorem3_probability(nv, 0).unwrap().value, 1.0);
        }
        assert!(theorem3_probability(1, 5).is_err());
        // log form agrees with the falling-factorial product
        let p = theorem3_probability(30, 4).unwrap();
        let direct: f64 = (0..4).map(|j| 1.0 / (3600.0 - j as f64)).product();
        assert!((p.value - direct).abs() / direct < 1e-12);
        assert_eq!(p.denominator, BigUint::from(3600u64 * 3599 * 3598 * 3597));
    }

    #[test]
    fn mapping_probability_handles_large_domains() {
        let p = theorem3_probability(2000, 500).unwrap();
        assert!(p.value == 0.0 && p.log10 < -3000.0);
    }
}
