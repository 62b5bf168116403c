use proptest::prelude::*;

use kernelskel::compress::{
    compress_hybrid, compress_proxy, default_xp, diagnostics, evaluate_approx, refine_weights, threshold_for,
    TransferOperator,
};
use kernelskel::geometry::{
    generate_points, Admissibility, AxisBox, DomainPair, GenMode, Point, PointSet, Region, ShellRegion,
};
use kernelskel::kernels::{assemble, make_degenerate, Kernel};
use kernelskel::linalg::{singular_values, Stop};
use kernelskel::proxy::{select, select_proxy, ProxyCache, ProxyScheme};

fn shell_strategy() -> impl Strategy<Value = (ShellRegion, usize)> {
    (1usize..=3, 0.2f64..2.0, 0.5f64..4.0).prop_map(|(d, inner, gap)| {
        let s = ShellRegion::new(AxisBox::cube(d, inner + gap).unwrap(), AxisBox::cube(d, inner).unwrap()).unwrap();
        (s, d)
    })
}

fn rand_pts(region: &Region, n: usize, seed: u64) -> PointSet {
    generate_points(region, &GenMode::RandomUniform { n, seed }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn generated_points_lie_in_their_region((shell, d) in shell_strategy(), n in 1usize..300, seed in any::<u64>()) {
        let r = Region::Shell(shell);
        prop_assert!(rand_pts(&r, n, seed).all_in(&r));
        let g = generate_points(&r, &GenMode::GridApprox { n }).unwrap();
        prop_assert!(g.len() >= n && g.all_in(&r));
        let s = generate_points(&r, &GenMode::SurfaceGrid { n: if d == 1 { n.min(2) } else { n } }).unwrap();
        prop_assert!(s.iter().all(|p| shell.on_inner_boundary(p)));
    }

    #[test]
    fn random_proxies_lie_in_the_far_field(d in 1usize..=3, n in 1usize..500, seed in any::<u64>()) {
        let pair = DomainPair::far_apart(d).unwrap();
        let p = select_proxy(&Kernel::Multiquadric, &pair, ProxyScheme::Random { n, seed }).unwrap();
        prop_assert_eq!(p.len(), n);
        prop_assert!(p.points.iter().all(|y| pair.target.contains(y)));
    }

    #[test]
    fn translation_invariant_kernels(d in 1usize..=3, shift in prop::collection::vec(-50.0f64..50.0, 3), seed in any::<u64>()) {
        let pair = DomainPair::far_apart(d).unwrap();
        let xs = rand_pts(&Region::Box(pair.source), 20, seed);
        let ys = rand_pts(&Region::Shell(pair.target), 30, seed ^ 1);
        let s = Point::new(&shift[..d]).unwrap();
        for k in [Kernel::InverseDistance, Kernel::Multiquadric] {
            let a = assemble(&k, &xs, &ys).unwrap();
            let b = assemble(&k, &xs.translate(&s).unwrap(), &ys.translate(&s).unwrap()).unwrap();
            prop_assert!((&a - &b).amax() <= 1e-11 * a.amax());
        }
    }

    #[test]
    fn proxy_compression_meets_threshold_and_skeleton_exactness(
        d in 1usize..=3, n in 50usize..300, tol in 1e-9f64..1e-3, seed in any::<u64>()
    ) {
        let pair = DomainPair::far_apart(d).unwrap();
        let k = Kernel::InverseDistance;
        let proxy = select_proxy(&k, &pair, ProxyScheme::Random { n: 150, seed }).unwrap();
        let x0 = rand_pts(&Region::Box(pair.source), n, seed ^ 7);
        let eps = threshold_for(tol, proxy.len());
        let res = compress_proxy(&k, &x0, &proxy, Stop::Threshold(eps), 2.0).unwrap();
        let kp = assemble(&k, &x0, &proxy.points).unwrap();
        let e = &kp - &res.w * kp.select_rows(res.x_rep.iter());
        for i in 0..n {
            prop_assert!(e.row(i).norm() <= eps * (1.0 + 1e-8) + 1e-13 * kp.amax());
        }
        prop_assert!(res.w.amax() <= 2.0 * (1.0 + 1e-8));
        let y0 = rand_pts(&Region::Shell(pair.target), 200, seed ^ 9);
        let approx = evaluate_approx(&res, &k, &x0, &y0).unwrap();
        prop_assert_eq!(approx.outside_target, 0);
        let exact = assemble(&k, &x0, &y0).unwrap();
        for &i in &res.x_rep {
            let dev = (exact.row(i) - approx.matrix.row(i)).amax();
            prop_assert!(dev <= 1e-13 * exact.row(i).amax());
        }
    }

    #[test]
    fn compression_ignores_y0(seed in any::<u64>()) {
        let pair = DomainPair::far_apart(2).unwrap();
        let k = Kernel::Multiquadric;
        let proxy = select_proxy(&k, &pair, ProxyScheme::Random { n: 120, seed }).unwrap();
        let x0 = rand_pts(&Region::Box(pair.source), 200, seed ^ 3);
        let a = compress_proxy(&k, &x0, &proxy, Stop::Threshold(threshold_for(1e-6, 120)), 2.0).unwrap();
        let _y0 = rand_pts(&Region::Shell(pair.target), 500, seed ^ 4);
        let b = compress_proxy(&k, &x0, &proxy, Stop::Threshold(threshold_for(1e-6, 120)), 2.0).unwrap();
        prop_assert_eq!(a.x_rep, b.x_rep);
        prop_assert_eq!(a.w, b.w);
    }

    #[test]
    fn refinement_never_increases_row_residuals(seed in any::<u64>(), ny in 150usize..600) {
        let pair = DomainPair::far_apart(2).unwrap();
        let k = Kernel::InverseDistance;
        let proxy = select_proxy(&k, &pair, ProxyScheme::Random { n: 100, seed }).unwrap();
        let x0 = rand_pts(&Region::Box(pair.source), 150, seed ^ 5);
        let y0 = rand_pts(&Region::Shell(pair.target), ny, seed ^ 6);
        let res = compress_proxy(&k, &x0, &proxy, Stop::Threshold(threshold_for(1e-5, 100)), 2.0).unwrap();
        let exact = assemble(&k, &x0, &y0).unwrap();
        let before = &exact - evaluate_approx(&res, &k, &x0, &y0).unwrap().matrix;
        let refined = refine_weights(&res, &k, &x0, &y0).unwrap();
        let after = &exact - evaluate_approx(&refined, &k, &x0, &y0).unwrap().matrix;
        for i in 0..x0.len() {
            prop_assert!(after.row(i).norm() <= before.row(i).norm() * (1.0 + 1e-9) + 1e-13 * exact.amax());
        }
    }
}

#[test]
fn degenerate_error_transfer_bound() {
    for (d, r) in [(2, 5), (3, 12)] {
        let pair = DomainPair::far_apart(d).unwrap();
        let k = make_degenerate(&pair, r, 11).unwrap();
        let proxy = select_proxy(&k, &pair, ProxyScheme::Random { n: 3 * r, seed: 2 }).unwrap();
        let x0 = rand_pts(&Region::Box(pair.source), 300, 3);
        // Fixed rank below r leaves a genuine residual to transfer.
        let res = compress_proxy(&k, &x0, &proxy, Stop::FixedRank(r - 2), 2.0).unwrap();
        let y0 = rand_pts(&Region::Shell(pair.target), 800, 4);
        let xp = default_xp(&pair, proxy.len()).unwrap();
        let rep = diagnostics(&k, &x0, &res, &y0, &xp).unwrap();
        assert!(rep.representation_deviation <= 1e-10 * rep.err_y0.iter().fold(1.0, |a: f64, &b| a.max(b)));
        let s_max = singular_values(&TransferOperator::new(&k, &proxy.points, &xp).unwrap().apply(&y0).unwrap())[0];
        for i in 0..x0.len() {
            let bound = rep.err_yp[i] * s_max;
            assert!(rep.err_y0[i] <= bound * (1.0 + 1e-8) + 1e-12, "row {i}: {} > {}", rep.err_y0[i], bound);
        }
    }
}

#[test]
fn hybrid_is_no_worse_than_proxy_on_weak_pair() {
    let d = 2;
    let source = AxisBox::cube(d, 1.0).unwrap();
    let pair = DomainPair::new(
        source,
        ShellRegion::new(AxisBox::cube(d, 7.0).unwrap(), source).unwrap(),
        Admissibility::Weak,
        1.0,
    )
    .unwrap();
    let k = Kernel::Multiquadric;
    let x0 = rand_pts(&Region::Box(source), 400, 1);
    let y0 = rand_pts(&Region::Shell(pair.target), 3000, 2);
    let near = ShellRegion::new(AxisBox::cube(d, 3.0).unwrap(), source).unwrap();
    let far_pair = DomainPair::new(
        source,
        ShellRegion::new(AxisBox::cube(d, 7.0).unwrap(), AxisBox::cube(d, 3.0).unwrap()).unwrap(),
        Admissibility::Strong,
        1.0,
    )
    .unwrap();
    let far = select(&k, &far_pair, ProxyScheme::Random { n: 400, seed: 3 }).unwrap();
    let cols = far.len() + y0.iter().filter(|p| near.contains(p)).count();
    let (hyb, split) =
        compress_hybrid(&k, &x0, &y0, &near, &far, Stop::Threshold(threshold_for(1e-6, cols)), 2.0).unwrap();
    assert_eq!(split.near.len() + split.far.len(), y0.len());
    let plain = select(&k, &pair, ProxyScheme::Random { n: 400, seed: 3 }).unwrap();
    let base = compress_proxy(&k, &x0, &plain, Stop::FixedRank(hyb.rank()), 2.0).unwrap();
    let exact = assemble(&k, &x0, &y0).unwrap();
    let e_h = (&exact - evaluate_approx(&hyb, &k, &x0, &y0).unwrap().matrix).norm();
    let e_p = (&exact - evaluate_approx(&base, &k, &x0, &y0).unwrap().matrix).norm();
    assert!(e_h <= 1.1 * e_p, "hybrid {e_h:e} vs proxy {e_p:e}");
}

#[test]
fn cache_translated_copy_stays_in_the_query_pair() {
    let cache = ProxyCache::new();
    let k = Kernel::InverseDistance;
    let base = DomainPair::far_apart(2).unwrap();
    let scheme = ProxyScheme::Random { n: 64, seed: 9 };
    cache.get(&k, &base, scheme).unwrap();
    for s in [[3.0, -2.0], [100.5, 7.25], [-0.125, 0.0]] {
        let q = base.translated(&Point::new(&s).unwrap()).unwrap();
        let p = cache.get(&k, &q, scheme).unwrap();
        assert!(p.points.iter().all(|y| q.target.contains(y)));
    }
    assert_eq!(cache.misses(), 1);
    assert_eq!(cache.hits(), 3);
}
