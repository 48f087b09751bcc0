//! Estimators recover known parameters from simulated data within three
//! standard errors.

use econ_core::causal::{
    did_static, iv_2sls, ps_matching, rdd_fuzzy, rdd_sharp, DidSpec, Estimand, IvSpec,
    MatchingOptions, RddSpec,
};
use econ_core::data::{Column, DataTable};
use econ_core::regression::VcovSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn within(estimate: f64, se: f64, truth: f64) {
    assert!(se.is_finite() && se > 0.0);
    assert!((estimate - truth).abs() < 3.0 * se, "{estimate} (se {se}) vs {truth}");
}

#[test]
fn iv_recovers_slope_under_endogeneity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 2000;
    let (mut y, mut x, mut z) = (vec![], vec![], vec![]);
    for _ in 0..n {
        let zi = normal(&mut rng);
        let u = normal(&mut rng);
        let xi = 0.8 * zi + 0.6 * u + normal(&mut rng);
        z.push(zi);
        x.push(xi);
        y.push(0.5 + 1.5 * xi + u);
    }
    let t = DataTable::new("iv", vec![Column::real("y", y), Column::real("x", x), Column::real("z", z)])
        .unwrap();
    let fit = iv_2sls(&t, &IvSpec::new("y", &["x"], &["z"], &[]).with_vcov(VcovSpec::robust())).unwrap();
    within(fit.coefficient("x").unwrap(), fit.std_error("x").unwrap(), 1.5);
}

#[test]
fn did_recovers_effect() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (units, periods) = (200, 10);
    let mut cols = vec![vec![]; 4];
    for u in 0..units {
        let alpha = normal(&mut rng);
        let treated = u % 2 == 0;
        for p in 0..periods {
            let d = f64::from(treated && p >= 5);
            cols[0].push(u as f64);
            cols[1].push(p as f64);
            cols[2].push(d);
            cols[3].push(alpha + 0.3 * p as f64 + 5.0 * d + normal(&mut rng));
        }
    }
    let names = ["unit", "time", "treat", "y"];
    let t = DataTable::new("did", names.iter().zip(cols).map(|(n, v)| Column::real(*n, v)).collect())
        .unwrap();
    let spec = DidSpec {
        outcome: "y".into(),
        treatment: "treat".into(),
        unit: "unit".into(),
        time: "time".into(),
        controls: vec![],
        vcov: None,
    };
    let fit = did_static(&t, &spec).unwrap();
    within(fit.coefficient("treat").unwrap(), fit.std_error("treat").unwrap(), 5.0);
}

#[test]
fn rdd_recovers_jumps() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 2000;
    let (mut x, mut d, mut y, mut ys) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let xi: f64 = rng.random_range(-1.0..1.0);
        let p = if xi >= 0.0 { 0.75 } else { 0.25 };
        let di = f64::from(rng.random::<f64>() < p);
        let e = 0.5 * normal(&mut rng);
        x.push(xi);
        d.push(di);
        y.push(1.0 + 0.7 * xi + 4.0 * di + e);
        ys.push(1.0 + 0.7 * xi + 2.0 * f64::from(xi >= 0.0) + e);
    }
    let t = DataTable::new(
        "rdd",
        vec![Column::real("x", x), Column::real("d", d), Column::real("y", y), Column::real("ys", ys)],
    )
    .unwrap();
    let fuzzy = rdd_fuzzy(&t, &RddSpec::new("y", "x", 0.0), "d").unwrap();
    within(fuzzy.effect, fuzzy.standard_error, 4.0);
    let sharp = rdd_sharp(&t, &RddSpec::new("ys", "x", 0.0)).unwrap();
    within(sharp.effect, sharp.standard_error, 2.0);
}

#[test]
fn matching_recovers_constant_effect() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 800;
    let (mut x, mut d, mut y) = (vec![], vec![], vec![]);
    for _ in 0..n {
        let xi = normal(&mut rng);
        let di = f64::from(0.5 * xi + normal(&mut rng) > 0.0);
        x.push(xi);
        d.push(di);
        y.push(1.0 + xi + 2.0 * di + normal(&mut rng));
    }
    let t = DataTable::new("m", vec![Column::real("x", x), Column::real("d", d), Column::real("y", y)])
        .unwrap();
    for estimand in [Estimand::Ate, Estimand::Atet] {
        let options = MatchingOptions { estimand, bootstrap_reps: 60, seed: 1, ..MatchingOptions::default() };
        let r = ps_matching(&t, "d", "y", &["x".to_string()], &[], &options).unwrap();
        within(r.point_estimate, r.bootstrap_se.unwrap(), 2.0);
    }
}
