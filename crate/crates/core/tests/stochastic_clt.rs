use rankflow::keyed::{Domain, StreamKey};
use rankflow::stochastic::{
    clt_expstaircase, clt_ornstein, sample_fejer, sample_fejer_in, EmpiricalDistribution, ExpClt, OrnsteinClt, TargetCdf,
};
use rankflow::tower::Rational;

#[test]
fn fejer_sampler_matches_its_law() {
    let key = StreamKey::new("sampler", 5);
    let s = 0.5;
    let (a, b) = (1.0, 2.0);
    let cond: Vec<f64> = (0..20_000u64)
        .map(|i| sample_fejer_in(s, a, b, &mut key.stream(Domain::FejerSample, 0, i), 1_000_000).unwrap())
        .collect();
    let dist = EmpiricalDistribution::new(cond, TargetCdf::FejerConditional { s, a, b });
    assert!(dist.ks() < 0.015, "ks {}", dist.ks());

    // Unconditional draws: the fraction inside [−2/s, 2/s] is λ_s of that interval.
    let mut st = key.stream(Domain::Misc, 1, 0);
    let n = 40_000;
    let inside = (0..n).filter(|_| sample_fejer(s, &mut st).abs() <= 2.0 / s).count() as f64 / n as f64;
    let mass = rankflow::stochastic::fejer_mass(s, -2.0 / s, 2.0 / s);
    assert!((inside - mass).abs() < 0.01, "{inside} vs {mass}");
}

#[test]
fn ornstein_sums_are_gaussian() {
    let params = OrnsteinClt {
        k: 3,
        p: 4000,
        t: 1000.0,
        h: 1.0,
        theta: 1.0,
        draws: 4000,
    };
    let key = StreamKey::new("ornstein-clt", 11);
    let rep = clt_ornstein(&params, &key).unwrap();
    assert!(rep.flags.is_empty());
    assert!((rep.predicted_variance.unwrap() - 0.5).abs() < 0.01);
    assert!(rep.ks < 0.03, "ks {}", rep.ks);
    assert!((rep.variance - 0.5).abs() < 0.03, "variance {}", rep.variance);
    assert_eq!(clt_ornstein(&params, &key).unwrap(), rep);

    // t·θ small: the offsets barely move the phases.
    let flat = OrnsteinClt { t: 1e-3, draws: 100, ..params };
    let rep = clt_ornstein(&flat, &key).unwrap();
    assert!(!rep.flags.is_empty());
}

#[test]
fn exponential_staircase_sums_are_gaussian() {
    let key = StreamKey::new("exp-clt", 2);
    let params = ExpClt {
        m: 256.0,
        eps: Rational::new(1, 2),
        p: 1024,
        a: 1.0,
        b: 2.0,
        s: 0.5,
        samples: 10_000,
        h: None,
    };
    let rep = clt_expstaircase(&params, &key).unwrap();
    assert!(rep.clt.ks < 0.03, "ks {}", rep.clt.ks);
    assert!((rep.clt.second_moment - 1.0).abs() < 0.05);
    assert!(rep.clt.flags.iter().any(|f| f == "large_p_regime=true"));

    let single = clt_expstaircase(&ExpClt { p: 1, samples: 2000, ..params }, &key).unwrap();
    assert!(single.clt.ks > 0.2, "ks {}", single.clt.ks);
}
