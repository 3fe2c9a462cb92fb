//! The binding layer exercised from Rust: conversions, validation and learner loops.

use mnl_online_py::{
    assortment_probs, optimal_prices, p_max, pricing_probs, project_h_norm, PyOfuMnl, PyOnsPricer,
};

#[test]
fn price_oracle_round_trip() {
    let (prices, b0) = optimal_prices(vec![0.0], vec![1.0], vec![vec![1.0]], 1e-14).unwrap();
    assert!((b0 - 0.2784645428).abs() < 1e-9);
    assert!((prices[0] - (1.0 + b0)).abs() < 1e-12);
    assert_eq!(p_max(1.0, 0.5, 2).unwrap(), 7.0);
    assert!(p_max(1.0, 0.0, 2).is_err());
}

#[test]
fn probabilities_sum_to_one() {
    let q = pricing_probs(vec![0.3, 0.1], vec![0.6, 0.2], vec![vec![0.5, 0.5], vec![1.0, 0.0]], vec![1.0, 2.0]).unwrap();
    assert_eq!(q.len(), 3);
    assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let q = assortment_probs(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]], vec![0, 2]).unwrap();
    assert!(q.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
}

#[test]
fn projection_and_shape_errors() {
    let z = project_h_norm(vec![3.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0, vec![], vec![]).unwrap();
    assert!((z[0] - 1.0).abs() < 1e-12 && z[1].abs() < 1e-12);
    assert!(project_h_norm(vec![3.0, 0.0], vec![vec![1.0], vec![0.0, 1.0]], 1.0, vec![], vec![]).is_err());
    assert!(project_h_norm(vec![3.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0, vec![vec![1.0, 0.0]], vec![]).is_err());
}

#[test]
fn ons_pricer_loop_stays_feasible() {
    let mut pricer = PyOnsPricer::new(2, 1.0, 0.5, 2, true, 3).unwrap();
    let ctx = vec![vec![0.8, 0.1], vec![0.7, -0.3]];
    for t in 0..50 {
        let prices = pricer.select_prices(ctx.clone()).unwrap();
        assert!(prices.iter().all(|&p| (0.0..=pricer.p_max()).contains(&p)));
        pricer.observe(ctx.clone(), prices, t % 3).unwrap();
    }
    assert_eq!(pricer.t(), 50);
    assert!(pricer.gamma().iter().map(|g| g * g).sum::<f64>().sqrt() <= 1.0 + 1e-9);
    assert!(pricer.observe(ctx.clone(), vec![1.0, 1.0], 3).is_err());
}

#[test]
fn ofu_loop_offers_k_distinct_items() {
    let mut learner = PyOfuMnl::new(2, 2, 1.0, 100, None).unwrap();
    let cands = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-0.6, 0.8], vec![0.5, 0.5]];
    for t in 0..20 {
        let s = learner.select(cands.clone()).unwrap();
        assert_eq!(s.len(), 2);
        assert_ne!(s[0], s[1]);
        learner.observe(cands.clone(), s, t % 3).unwrap();
    }
    assert_eq!(learner.t(), 20);
    assert_eq!(learner.theta_hat().len(), 2);
}
