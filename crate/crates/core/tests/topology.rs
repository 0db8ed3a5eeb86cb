use dagsim::topology_gen::{build_topology, sample_discrete, DiscreteDistribution, PowerPlan};
use dagsim::Strategy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dist(entries: &[(i64, f64)]) -> DiscreteDistribution {
    DiscreteDistribution::new(entries.to_vec()).unwrap()
}

#[test]
fn sampling_frequencies_match_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let even = dist(&[(1, 0.5), (2, 0.5)]);
    let ones = (0..100_000).filter(|_| sample_discrete(&even, &mut rng) == 1).count();
    let f = ones as f64 / 100_000.0;
    assert!((0.49..=0.51).contains(&f), "{f}");

    let skewed = dist(&[(10, 7.0), (20, 2.0), (30, 1.0)]);
    let tens = (0..100_000).filter(|_| sample_discrete(&skewed, &mut rng) == 10).count();
    let f = tens as f64 / 100_000.0;
    assert!((0.69..=0.71).contains(&f), "{f}");
}

#[test]
fn two_nodes_get_exactly_one_link() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let topo = build_topology(2, &dist(&[(1, 1.0)]), &dist(&[(100, 1.0)]), &PowerPlan::Uniform, &mut rng).unwrap();
    assert_eq!(topo.link_count(), 1);
    let link = topo.links[0];
    assert_eq!((link.node_a, link.node_b, link.delay_ms), (0, 1, 100));
}

#[test]
fn regular_target_stays_near_degree_and_connected() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = build_topology(50, &dist(&[(4, 1.0)]), &dist(&[(10, 1.0)]), &PowerPlan::Uniform, &mut rng).unwrap();
        assert!(topo.is_connected(), "seed {seed}");
        for (node, d) in topo.degrees().into_iter().enumerate() {
            assert!((3..=5).contains(&d), "seed {seed}: node {node} has degree {d}");
        }
    }
}

#[test]
fn mean_delay_converges() {
    let delays = dist(&[(100, 3.0), (500, 2.0), (2000, 1.0)]);
    let mean = delays.mean();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let topo = build_topology(400, &dist(&[(8, 1.0), (12, 1.0)]), &delays, &PowerPlan::Uniform, &mut rng).unwrap();
    assert!(topo.link_count() >= 1000);
    let observed = topo.links.iter().map(|l| l.delay_ms as f64).sum::<f64>() / topo.link_count() as f64;
    assert!((observed - mean).abs() / mean < 0.05, "mean {observed} vs {mean}");
}

#[test]
fn heavy_tailed_degrees_still_connect() {
    let degrees = dist(&[(1, 5.0), (2, 5.0), (8, 60.0), (10, 20.0), (40, 1.0), (90, 0.5)]);
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = build_topology(300, &degrees, &dist(&[(300, 1.0)]), &PowerPlan::Uniform, &mut rng).unwrap();
        assert_eq!(topo.node_count(), 300);
        assert!(topo.is_connected());
        assert!((topo.total_power() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn explicit_power_plan_is_applied() {
    let plan = PowerPlan::parse_malicious("3:0.2,7:0.1").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let topo = build_topology(20, &dist(&[(3, 1.0)]), &dist(&[(50, 1.0)]), &plan, &mut rng).unwrap();
    assert_eq!(topo.nodes[3].strategy, Strategy::MaliciousMaxFee);
    assert_eq!(topo.nodes[3].mining_power, 0.2);
    assert_eq!(topo.nodes[7].mining_power, 0.1);
    let honest = topo.nodes.iter().filter(|n| n.strategy == Strategy::HonestRandom).count();
    assert_eq!(honest, 18);
    assert!((topo.nodes[0].mining_power - 0.7 / 18.0).abs() < 1e-12);
    assert!((topo.total_power() - 1.0).abs() < 1e-9);
}
