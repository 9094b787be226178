use ric_wasm::{entropy_curves_native, rics_native, sample_subsets_native};

#[test]
fn curves_start_at_the_bulk_edges() {
    let c = entropy_curves_native(0.5, 0.1, 5.0, 20).unwrap();
    assert_eq!(c.failures(), 0);
    assert_eq!(c.min_lambda().len(), 20);
    assert_eq!(c.max_sigma().len(), 20);
    assert!((c.min_lambda()[0] - c.edge_lo()).abs() < 0.05);
    assert!((c.max_lambda()[0] - c.edge_hi()).abs() < 0.05);
    assert!((c.min_sigma()[0] - c.plateau()).abs() < 1e-3);
    // deeper bias pushes the extremes outwards
    assert!(c.min_lambda().windows(2).all(|w| w[1] <= w[0]));
    assert!(c.max_lambda().windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn rics_and_bad_inputs() {
    let r = rics_native(0.5, 0.1).unwrap();
    assert!((r.delta_min - (1.0 - r.lambda_star_min)).abs() < 1e-12);
    assert!(r.delta_max > 1.0 && r.delta_min < 1.0);
    assert!(rics_native(0.5, 0.6).is_err());
    assert!(entropy_curves_native(0.5, 0.1, 5.0, 0).is_err());
}

#[test]
fn sampling_matches_the_exact_law() {
    for mu in [0.0, 1.5, -1.0] {
        let s = sample_subsets_native(12, 0.5, 3, mu, 20_000, 2).unwrap();
        let (p, q) = (s.sampled(), s.exact());
        assert_eq!(p.len(), q.len());
        let tv: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.03, "mu = {mu}: {tv}");
    }
    // too many subsets to enumerate
    let big = sample_subsets_native(60, 0.5, 10, 1.0, 50, 2).unwrap();
    assert!(big.exact().is_empty());
    assert!(sample_subsets_native(12, 0.5, 12, 1.0, 50, 2).is_err());
}
