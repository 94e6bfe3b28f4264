use proptest::prelude::*;
use steady_auction::equilibrium::{
    best_response_check, bid_with_uncertainty, ode_residuals, posted_price_gap, BidCurve,
};
use steady_auction::values::ValueDistribution;
use steady_auction::winner::WinnerCurve;

fn build(dist: &ValueDistribution, l: f64, d: f64, n: usize) -> (WinnerCurve, BidCurve) {
    let wc = WinnerCurve::build(l, d, 1, n).unwrap();
    let bc = bid_with_uncertainty(dist, &wc, None).unwrap();
    (wc, bc)
}

/// Fraction of the bid shading `x − b` due to the zero price paid when alone.
fn alone_share(bc: &BidCurve, i: usize) -> f64 {
    let shade = bc.x_grid[i] - bc.bids[i];
    if shade <= 0.0 {
        return 0.0;
    }
    bc.alone_discount(i) / shade
}

fn both_dists() -> [ValueDistribution; 2] {
    [ValueDistribution::unit_uniform(), ValueDistribution::PowerLaw]
}

#[test]
fn rationality_and_slope_bound() {
    for dist in both_dists() {
        for (l, d) in [(2.0, 0.01), (2.0, 0.1), (5.0, 0.01), (5.0, 0.1)] {
            let (_, bc) = build(&dist, l, d, 1025);
            for i in 0..bc.len() {
                assert!(bc.bids[i] >= 0.0 && bc.bids[i] <= bc.x_grid[i]);
            }
            for i in 1..bc.len() {
                let slope = (bc.bids[i] - bc.bids[i - 1]) / (bc.x_grid[i] - bc.x_grid[i - 1]);
                assert!(slope >= 0.0);
                // Where a lone bidder's zero price still matters, b′ > 1 is
                // genuine; this is empty for supports starting at 0.
                if alone_share(&bc, i - 1) < 1e-3 {
                    assert!(slope <= 1.0 + 1e-6, "({l},{d}) x={} slope={slope}", bc.x_grid[i]);
                }
            }
            if dist.support_infimum() == 0.0 {
                assert!((0..bc.len()).all(|i| bc.alone_discount(i) == 0.0));
            }
        }
    }
}

#[test]
fn boundary_layer_above_positive_infimum() {
    let (_, bc) = build(&ValueDistribution::PowerLaw, 2.0, 0.1, 1025);
    assert_eq!(bc.bids[0], 0.0);
    let first_slope = (bc.bids[1] - bc.bids[0]) / (bc.x_grid[1] - bc.x_grid[0]);
    assert!(first_slope > 1.0);
    // Once the lone-bidder term is gone, the bid no longer outpaces the value.
    assert!(alone_share(&bc, bc.len() - 1) < 1e-4);
}

#[test]
fn ode_holds_on_most_of_the_grid() {
    for dist in both_dists() {
        for (l, d) in [(2.0, 0.01), (2.0, 0.1), (5.0, 0.01), (5.0, 0.1)] {
            let (wc, bc) = build(&dist, l, d, 1025);
            let res: Vec<f64> = ode_residuals(&bc, &wc).into_iter().flatten().collect();
            let good = res.iter().filter(|&&r| r < 1e-3).count();
            assert!(good as f64 >= 0.95 * res.len() as f64, "({l},{d}) {good}/{}", res.len());
        }
    }
}

#[test]
fn no_profitable_one_round_deviation() {
    for dist in both_dists() {
        for (l, d) in [(2.0, 0.01), (5.0, 0.1)] {
            let (_, bc) = build(&dist, l, d, 1025);
            let n = bc.len();
            for k in 0..20 {
                let x = bc.x_grid[1 + k * (n - 3) / 19];
                let r = best_response_check(&bc, x).unwrap();
                assert!(r.passed, "({l},{d}) {r:?}");
            }
        }
    }
}

#[test]
fn converges_to_posted_price() {
    let u = ValueDistribution::unit_uniform();
    let mut last = f64::INFINITY;
    for d in [0.05, 0.01, 0.002] {
        let (_, bc) = build(&u, 2.0, d, 1025);
        let gap = posted_price_gap(&bc, 0.5, |x, _| x <= 0.45 || (0.55..=0.99).contains(&x));
        assert!(gap < last, "delta={d}: {gap} !< {last}");
        last = gap;
    }
}

#[test]
fn expectation_is_monotone_and_continuous() {
    for dist in both_dists() {
        let (_, bc) = build(&dist, 2.0, 0.01, 1025);
        for i in 1..bc.len() {
            let dz = bc.expectation[i] - bc.expectation[i - 1];
            let dx = bc.x_grid[i] - bc.x_grid[i - 1];
            assert!(dz >= -1e-12);
            // A higher type can copy a lower bid, so Z grows no faster than x.
            assert!(dz <= dx * (1.0 + 1e-6), "x={} dz={dz} dx={dx}", bc.x_grid[i]);
        }
    }
}

#[test]
fn winner_curve_is_distribution_free() {
    let a = WinnerCurve::build(2.0, 0.01, 1, 1025).unwrap();
    let _ = bid_with_uncertainty(&ValueDistribution::PowerLaw, &a, None).unwrap();
    let b = WinnerCurve::build(2.0, 0.01, 1, 1025).unwrap();
    let _ = bid_with_uncertainty(&ValueDistribution::unit_uniform(), &b, None).unwrap();
    assert_eq!(a, b);
    assert!(a.cdf.iter().zip(&b.cdf).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_markets_are_rational(l in 1.2f64..6.0, d in 0.02f64..0.9, power in any::<bool>()) {
        let dist = if power { ValueDistribution::PowerLaw } else { ValueDistribution::unit_uniform() };
        let (_, bc) = build(&dist, l, d, 257);
        for i in 0..bc.len() {
            prop_assert!(bc.bids[i] >= 0.0 && bc.bids[i] <= bc.x_grid[i]);
            prop_assert!(bc.expectation[i] >= 0.0);
        }
        prop_assert!(bc.bids.windows(2).all(|p| p[1] >= p[0]));
        prop_assert!(bc.expectation.windows(2).all(|p| p[1] >= p[0] - 1e-12));
        let wz = WinnerCurve::build(l, d, 1, 257).unwrap();
        prop_assert!(wz.cdf.windows(2).all(|p| p[1] >= p[0]));
        prop_assert!(wz.success.windows(2).all(|p| p[1] >= p[0]));
        prop_assert!((wz.cdf[wz.len() - 1] - 1.0).abs() < 1e-12);
        prop_assert!((wz.success[wz.len() - 1] - 1.0).abs() < 1e-12);
    }
}
