use filippov_sa::inclusion::{integrate_filippov, sliding_velocity, SlidingDecision};
use filippov_sa::measures::{
    averaged_measure, graph_support_profile, residual_decay_study, stationarity_residual, Atom,
    EmpiricalMeasure, TestFunctionFamily,
};
use filippov_sa::tracking::tracking_error;
use filippov_sa::{run_sa, ConvexVelocitySet, NoiseModel, PiecewiseField, StepsizeSchedule};
use proptest::prelude::*;

// Solves `A w = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let pivot = a[col].clone();
        for row in col + 1..n {
            let f = a[row][col] / pivot[col];
            for (x, p) in a[row][col..].iter_mut().zip(&pivot[col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut w = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * w[k]).sum();
        w[i] = (b[i] - s) / a[i][i];
    }
    Some(w)
}

// Distance from `v` to the hull of `pts`: the closest point lies in the
// relative interior of some face, so minimize over every subset whose affine
// projection has non-negative barycentric weights.
fn brute_force_distance(pts: &[Vec<f64>], v: &[f64]) -> f64 {
    let d = v.len();
    let m = pts.len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << m) {
        let sub: Vec<&Vec<f64>> = (0..m)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| &pts[i])
            .collect();
        let k = sub.len();
        // minimize |sum w_i p_i - v|^2 subject to sum w_i = 1 (KKT system)
        let mut a = vec![vec![0.0; k + 1]; k + 1];
        let mut b = vec![0.0; k + 1];
        for i in 0..k {
            for j in 0..k {
                a[i][j] = (0..d).map(|c| sub[i][c] * sub[j][c]).sum();
            }
            a[i][k] = 1.0;
            a[k][i] = 1.0;
            b[i] = (0..d).map(|c| sub[i][c] * v[c]).sum();
        }
        b[k] = 1.0;
        let Some(w) = solve(a, b) else { continue };
        if w[..k].iter().any(|x| *x < -1e-12) {
            continue;
        }
        let p: Vec<f64> = (0..d)
            .map(|c| (0..k).map(|i| w[i] * sub[i][c]).sum())
            .collect();
        let dist = p
            .iter()
            .zip(v)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        best = best.min(dist);
    }
    best
}

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hull_distance_matches_subset_enumeration(
        d in 2usize..=3,
        seed_pts in prop::collection::vec(point(3), 1..=5),
        v in point(3),
    ) {
        let pts: Vec<Vec<f64>> = seed_pts.iter().map(|p| p[..d].to_vec()).collect();
        let v = &v[..d];
        let set = ConvexVelocitySet::new(pts.clone()).unwrap();
        let got = set.distance(v).unwrap();
        let want = brute_force_distance(&pts, v);
        prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want), "got {got}, oracle {want}");
    }

    #[test]
    fn projection_weights_reconstruct_the_point(
        pts in prop::collection::vec(point(2), 1..=6),
        v in point(2),
    ) {
        let set = ConvexVelocitySet::new(pts.clone()).unwrap();
        let proj = set.project(&v).unwrap();
        prop_assert!(proj.weights.iter().all(|w| *w >= -1e-12));
        prop_assert!((proj.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for c in 0..2 {
            let r: f64 = proj.weights.iter().zip(set.vertices()).map(|(w, p)| w * p[c]).sum();
            prop_assert!((r - proj.point[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn filippov_is_inside_krasovskii(x in -2.0..2.0f64, y in prop_oneof![Just(0.0), -1e-10..1e-10f64, -1.0..1.0f64], tol in 1e-12..1e-6f64) {
        let f = PiecewiseField::example1();
        let fil = f.filippov_map(&[x, y], tol).unwrap();
        let kra = f.krasovskii_map(&[x, y], tol).unwrap();
        prop_assert!(kra.contains_set(&fil, 1e-12).unwrap());
    }

    #[test]
    fn interior_maps_are_the_field_value(x in -2.0..2.0f64, y in prop_oneof![1e-3..2.0f64, -2.0..-1e-3f64]) {
        let f = PiecewiseField::example1();
        let h = f.evaluate(&[x, y]).unwrap();
        let single = ConvexVelocitySet::singleton(h);
        prop_assert!(f.filippov_map(&[x, y], 1e-9).unwrap().equivalent(&single, 1e-12).unwrap());
        prop_assert!(f.krasovskii_map(&[x, y], 1e-9).unwrap().equivalent(&single, 1e-12).unwrap());
    }

    #[test]
    fn maps_grow_with_the_guard_band(x in -2.0..2.0f64, y in -1e-3..1e-3f64, t1 in 1e-9..1e-4f64, factor in 1.0..100.0f64) {
        let f = PiecewiseField::example1();
        let small = f.filippov_map(&[x, y], t1).unwrap();
        let large = f.filippov_map(&[x, y], t1 * factor).unwrap();
        prop_assert!(large.contains_set(&small, 1e-12).unwrap());
    }

    #[test]
    fn traces_replay_bit_exactly(seed in any::<u64>(), x in -1.0..1.0f64, y in -1.0..1.0f64) {
        let tr = run_sa(
            &PiecewiseField::example1(),
            &[x, y],
            &StepsizeSchedule::power(0.5, 0.8),
            &NoiseModel::gaussian(0.2),
            300,
            seed,
        )
        .unwrap();
        prop_assert_eq!(tr.replay_mismatch(), None);
    }

    #[test]
    fn sliding_velocity_is_tangent_and_in_the_hull(
        fp in point(3),
        fm in point(3),
        grad in point(3),
    ) {
        let n2: f64 = grad.iter().map(|g| g * g).sum();
        prop_assume!(n2 > 1e-2);
        let p: f64 = grad.iter().zip(&fp).map(|(g, v)| g * v).sum();
        let m: f64 = grad.iter().zip(&fm).map(|(g, v)| g * v).sum();
        prop_assume!(p < -1e-3 && m > 1e-3);
        match sliding_velocity(&fp, &fm, &grad).unwrap() {
            SlidingDecision::Sliding { alpha, velocity } => {
                prop_assert!((0.0..=1.0).contains(&alpha));
                let normal: f64 = grad.iter().zip(&velocity).map(|(g, v)| g * v).sum();
                prop_assert!(normal.abs() <= 1e-12, "normal component {normal}");
                let hull = ConvexVelocitySet::new(vec![fp.clone(), fm.clone()]).unwrap();
                prop_assert!(hull.contains(&velocity, 1e-9).unwrap());
            }
            other => prop_assert!(false, "expected sliding, got {other:?}"),
        }
    }

    #[test]
    fn residual_is_linear_in_the_measure(
        xs in prop::collection::vec((point(2), point(2)), 1..6),
        ys in prop::collection::vec((point(2), point(2)), 1..6),
        c in 0.05..0.95f64,
    ) {
        let build = |atoms: &[(Vec<f64>, Vec<f64>)]| {
            let w = 1.0 / atoms.len() as f64;
            EmpiricalMeasure::new(
                atoms.iter().map(|(x, z)| Atom { x: x.clone(), z: z.clone(), weight: w }).collect(),
            )
            .unwrap()
        };
        let (a, b) = (build(&xs), build(&ys));
        let mix = EmpiricalMeasure::mixture(&[(c, &a), (1.0 - c, &b)]).unwrap();
        let fam = TestFunctionFamily::new(2, 1.3).unwrap();
        let (ra, rb, rm) = (
            stationarity_residual(&a, &fam),
            stationarity_residual(&b, &fam),
            stationarity_residual(&mix, &fam),
        );
        for i in 0..fam.len() {
            prop_assert!((rm[i] - (c * ra[i] + (1.0 - c) * rb[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn support_fractions_are_ordered(seed in 0u64..1000, noise in prop_oneof![
        Just(NoiseModel::gaussian(0.2)),
        Just(NoiseModel::rademacher(0.5)),
        Just(NoiseModel::zero()),
    ]) {
        let f = PiecewiseField::example1();
        let tr = run_sa(&f, &[0.0, 0.0], &StepsizeSchedule::power(0.5, 0.75), &noise, 200, seed).unwrap();
        let m = averaged_measure(&tr, 200).unwrap();
        let rows = graph_support_profile(&m, &f, &[1e-6, 0.01, 0.05, 0.1, 1.0]).unwrap();
        for w in rows.windows(2) {
            prop_assert!(w[1].filippov >= w[0].filippov);
        }
        for r in &rows {
            prop_assert!(r.krasovskii >= r.filippov);
        }
    }

    #[test]
    fn averaged_weights_are_step_proportional(seed in any::<u64>(), n in 1usize..200) {
        let tr = run_sa(
            &PiecewiseField::relay(),
            &[0.7],
            &StepsizeSchedule::power(1.0, 0.6),
            &NoiseModel::gaussian(0.3),
            200,
            seed,
        )
        .unwrap();
        let m = averaged_measure(&tr, n).unwrap();
        prop_assert!((m.total_weight() - 1.0).abs() <= 1e-12);
        // states are continuous draws, so no atoms merge
        prop_assert_eq!(m.atoms().len(), n);
        let t = tr.times()[n];
        for a in m.atoms() {
            let k = (0..n).find(|&k| tr.state(k) == a.x.as_slice()).unwrap();
            prop_assert_eq!(a.weight, tr.steps()[k] / t);
        }
    }

    #[test]
    fn tracking_error_is_monotone_in_the_horizon(seed in 0u64..200, t1 in 0.2..1.0f64, extra in 0.0..1.0f64) {
        let f = PiecewiseField::relay();
        let tr = run_sa(&f, &[0.4], &StepsizeSchedule::power(0.5, 0.75), &NoiseModel::gaussian(0.1), 800, seed)
            .unwrap();
        let short = tracking_error(&tr, &f, 20, t1, 1e-2).unwrap();
        let long = tracking_error(&tr, &f, 20, t1 + extra, 1e-2).unwrap();
        prop_assert!(short >= 0.0 && short <= long);
    }
}

#[test]
fn midpoint_integrator_is_second_order_on_smooth_fields() {
    let f = PiecewiseField::linear(1);
    let exact = (-2.0_f64).exp();
    let err = |dt: f64| {
        (integrate_filippov(&f, &[1.0], 2.0, dt)
            .unwrap()
            .last_point()[0]
            - exact)
            .abs()
    };
    for dt in [0.1, 0.05, 0.025] {
        let ratio = err(dt) / err(dt / 2.0);
        assert!(ratio >= 3.5, "dt {dt}: ratio {ratio}");
    }
}

#[test]
fn timescale_follows_the_power_law() {
    let n = 100_000usize;
    for gamma in [0.75, 0.6] {
        let tr = run_sa(
            &PiecewiseField::constant(vec![0.0]),
            &[0.0],
            &StepsizeSchedule::power(1.0, gamma),
            &NoiseModel::zero(),
            n,
            0,
        )
        .unwrap();
        let predicted = (n as f64).powf(1.0 - gamma) / (1.0 - gamma);
        let rel = (tr.final_time() - predicted).abs() / predicted;
        assert!(
            rel <= 0.05,
            "gamma {gamma}: t(N) {} vs {predicted}",
            tr.final_time()
        );
    }
}

#[test]
fn smooth_field_residual_is_small() {
    let f = PiecewiseField::linear(1);
    let n = 100_000;
    let tr = run_sa(
        &f,
        &[1.0],
        &StepsizeSchedule::power(1.0, 0.75),
        &NoiseModel::gaussian(0.1),
        n,
        11,
    )
    .unwrap();
    let fam = TestFunctionFamily::for_box(averaged_measure(&tr, n).unwrap().box_b()).unwrap();
    let table = residual_decay_study(std::slice::from_ref(&tr), &fam, &[n]).unwrap();
    assert!(
        table.rows[0].median_max_residual <= 1e-2,
        "{}",
        table.rows[0].median_max_residual
    );
}

#[test]
fn rademacher_noise_kicks_the_iterate_off_the_spurious_equilibrium() {
    let f = PiecewiseField::spurious_equilibrium();
    let tr = run_sa(
        &f,
        &[0.0],
        &StepsizeSchedule::power(1.0, 0.75),
        &NoiseModel::rademacher(0.1),
        10_000,
        2,
    )
    .unwrap();
    assert_ne!(tr.state(1)[0], 0.0);
    assert!(tr.final_state()[0] >= 0.5 * tr.final_time());
}

#[test]
fn trapped_path_has_a_krasovskii_slope_only() {
    let f = PiecewiseField::spurious_equilibrium();
    let tr = run_sa(
        &f,
        &[0.0],
        &StepsizeSchedule::power(1.0, 0.75),
        &NoiseModel::zero(),
        500,
        0,
    )
    .unwrap();
    let slope = (tr.state(100)[0] - tr.state(99)[0]) / tr.steps()[99];
    assert!(f
        .krasovskii_map(&[0.0], 1e-9)
        .unwrap()
        .contains(&[slope], 1e-12)
        .unwrap());
    assert!(!f
        .filippov_map(&[0.0], 1e-9)
        .unwrap()
        .contains(&[slope], 1e-6)
        .unwrap());
}
