use num_complex::Complex64;
use rankflow::fejerquad::{integrate, kernel_ft, weighted_ft, weighted_ft_many, QuadConfig};
use rankflow::keyed::StreamKey;
use rankflow::riesz::{ft_combinatorial, word_multiset, ProductChain};
use rankflow::stochastic::uniform_spacers;
use rankflow::tower::{build_tower, CuttingSpec, SpacerFamily, Tower};
use rankflow::trigpoly::stage_poly;

fn random_tower(p: Vec<usize>, id: &str) -> Tower {
    let spacers = uniform_spacers(&p, 0.0, 1.0, &StreamKey::new(id, 0));
    let depth = p.len();
    build_tower(&CuttingSpec::new(p, SpacerFamily::Explicit { spacers }), depth).unwrap()
}

#[test]
fn normalization_on_every_subset() {
    let tower = random_tower(vec![3, 4, 5], "normalization");
    let chain = ProductChain::from_tower(&tower, &[0, 1, 2]).unwrap();
    let cfg = QuadConfig::with_tol(1e-8);
    for mask in 0u32..8 {
        let pos: Vec<usize> = (0..3).filter(|i| mask >> i & 1 == 1).collect();
        let sub = chain.select(&pos);
        let r = integrate(&sub.squared(), 0.5, &cfg).unwrap();
        assert!((r.value.re - 1.0).abs() < 1e-6, "mask {mask}: {}", r.value);
        assert!(r.value.im.abs() < 1e-9);
    }
}

#[test]
fn single_stage_transform_is_the_triangle() {
    let tower = random_tower(vec![3, 4, 5], "triangle");
    let s = 0.5;
    let cfg = QuadConfig::with_tol(1e-9);
    for n in 0..3 {
        let p = stage_poly(tower.level(n));
        let sq = ProductChain::from_polys(vec![p]);
        let h = tower.height(n);
        let near = (h - s).min(s + 1.0);
        let mut ts: Vec<f64> = (0..20).map(|i| -near + 2.0 * near * (i as f64 + 0.5) / 20.0).collect();
        ts.extend((0..10).map(|i| s + (h - 2.0 * s) * (i as f64 + 0.5) / 10.0));
        let res = weighted_ft_many(&sq.squared(), &ts, s, &cfg).unwrap();
        for (t, r) in ts.iter().zip(&res) {
            assert!((r.value - Complex64::new(kernel_ft(s, *t), 0.0)).norm() < 1e-7, "n={n} t={t}: {}", r.value);
        }
    }
}

#[test]
fn quadrature_matches_word_sums() {
    let tower = random_tower(vec![3, 3, 3, 2], "words");
    let s = 0.5;
    let h3 = tower.height(3);
    let cfg = QuadConfig::with_tol(1e-8);
    let mut st = StreamKey::new("words-t", 1).stream(rankflow::keyed::Domain::Misc, 0, 0);
    let ts: Vec<f64> = (0..50).map(|_| st.uniform_in(-h3, h3)).collect();
    for n in 0..3 {
        let words = word_multiset(&tower, n).unwrap();
        let chain = ProductChain::from_tower(&tower, &(0..=n).collect::<Vec<_>>()).unwrap();
        let res = weighted_ft_many(&chain.squared(), &ts, s, &cfg).unwrap();
        for (t, r) in ts.iter().zip(&res) {
            let want = words.ft(*t, s);
            assert!((r.value.re - want).abs() < 1e-6, "n={n} t={t}: {} vs {want}", r.value.re);
        }
    }
}

#[test]
fn doubling_chain_against_words() {
    let tower = build_tower(&CuttingSpec::zero_spacers(vec![2, 2]), 2).unwrap();
    let chain = ProductChain::from_tower(&tower, &[0, 1]).unwrap();
    for t in [0.0, 0.2, 0.9, 1.1, 2.75, -3.1, 3.3] {
        let q = weighted_ft(&chain.squared(), t, 0.5, &QuadConfig::default()).unwrap();
        let c = ft_combinatorial(&tower, 1, t, 0.5).unwrap();
        assert!((q.value.re - c).abs() < 1e-6, "t={t}");
    }
    let w = word_multiset(&tower, 1).unwrap();
    assert_eq!(w.ft(0.0, 0.5), 1.0);
    assert_eq!(w.ft(4.0 + 0.5, 0.5), 0.0);
}

#[test]
fn scaled_polynomial_keeps_unit_norm() {
    use rankflow::riesz::scale_dissociate;
    use rankflow::trigpoly::TrigPoly;
    let c = Complex64::new(0.5f64.sqrt(), 0.0);
    let p = TrigPoly::new(vec![(0.0, c), (1.0, c)]).unwrap();
    let d = scale_dissociate(&[p.clone(), p.clone(), p]).unwrap();
    for q in &d.polys {
        let n = rankflow::fejerquad::lp_norm(q, 2.0, 0.5, &QuadConfig::default()).unwrap();
        assert!((n - 1.0).abs() < 1e-7);
    }
}
