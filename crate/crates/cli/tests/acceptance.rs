//! End-to-end acceptance run: one line per criterion, then a hard failure if
//! any criterion failed. Criterion 4 needs external datasets and is skipped
//! unless `ECON_DATA_DIR` holds them.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use econ_agent::{create_session, BackendConfig, EventKind, Intent, SessionConfig, StepStatus};
use econ_core::causal::{
    did_event_study, did_static, estimate_propensity_scores, iv_2sls, ps_matching, ps_regression_adjustment, rdd_fuzzy,
    rdd_sharp, DidSpec, EventStudySpec, IvSpec, Kernel, LagIndexing, MatchingOptions, PsRegressionSpec,
    RddSpec, TrimRule,
};
use econ_core::data::{load_csv, Column, CsvOptions, DataTable};
use econ_core::regression::{ols, panel_ols, RegressionSpec, VcovSpec, INTERCEPT};
use econ_core::tools::{OutcomeStatus, Registry, ToolContext};
use econ_eval::{
    aggregate_metrics, classify_replication, significance_level, Expected, Extracted, MethodFamily, PPerfectMode,
    ReplicationClass, RunRecord, TaskSpec,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

enum Verdict {
    Pass(String),
    Skip(String),
}

type Outcome = Result<Verdict, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(got: f64, want: f64, rel: f64, what: &str) -> Result<(), String> {
    let scale = want.abs().max(1.0);
    ensure((got - want).abs() <= rel * scale, || format!("{what}: {got} vs {want} (tolerance {rel:e})"))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn table(cols: Vec<(&str, Vec<f64>)>) -> DataTable {
    DataTable::new("t", cols.into_iter().map(|(n, v)| Column::real(n, v)).collect()).unwrap()
}

fn solve(a: DMatrix<f64>, b: DVector<f64>) -> DVector<f64> {
    a.lu().solve(&b).expect("nonsingular oracle system")
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../agent/tests/fixtures")
}

// ---- 1: OLS, panel and cluster oracles ----

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..200 {
        let n = rng.random_range(8..40);
        let k = rng.random_range(1..5);
        let mut x = DMatrix::zeros(n, k + 1);
        x.column_mut(0).fill(1.0);
        let names: Vec<String> = (0..k).map(|j| format!("x{j}")).collect();
        let mut cols = Vec::new();
        for (j, name) in names.iter().enumerate() {
            let v: Vec<f64> = (0..n).map(|_| normal(&mut rng) * (j + 1) as f64).collect();
            x.column_mut(j + 1).copy_from_slice(&v);
            cols.push((name.as_str(), v));
        }
        let y: Vec<f64> = (0..n).map(|i| -0.7 + x.row(i).sum() + normal(&mut rng)).collect();
        cols.push(("y", y.clone()));
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let fit = ols(&table(cols), &RegressionSpec::new("y", &refs)).map_err(|e| e.to_string())?;
        let oracle = solve(x.transpose() * &x, x.transpose() * DVector::from_column_slice(&y));
        for j in 0..=k {
            close(fit.coefficients[j], oracle[j], 1e-10, &format!("design {case} coefficient {j}"))?;
        }
    }

    // 12 rows in 3 clusters: sandwich with G/(G-1) * (N-1)/(N-K)
    let xs = [0.3, 1.1, 2.0, 2.9, 0.7, 1.6, 2.2, 3.8, 0.1, 1.9, 2.5, 3.1];
    let ys = [1.2, 2.0, 3.9, 4.1, 1.0, 3.3, 3.0, 6.2, 0.2, 3.1, 4.8, 4.4];
    let gs = [1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0];
    let n = xs.len();
    let xm = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    let bread = (xm.transpose() * &xm).try_inverse().unwrap();
    let beta = &bread * xm.transpose() * DVector::from_column_slice(&ys);
    let mut meat = DMatrix::zeros(2, 2);
    for g in [1.0, 2.0, 3.0] {
        let mut score = DVector::zeros(2);
        for i in (0..n).filter(|&i| gs[i] == g) {
            let e = ys[i] - beta[0] - beta[1] * xs[i];
            score += xm.row(i).transpose() * e;
        }
        meat += &score * score.transpose();
    }
    let factor = 3.0 / 2.0 * (n as f64 - 1.0) / (n as f64 - 2.0);
    let v = &bread * meat * &bread * factor;
    let t = table(vec![("x", xs.to_vec()), ("y", ys.to_vec()), ("g", gs.to_vec())]);
    let fit = ols(&t, &RegressionSpec::new("y", &["x"]).with_vcov(VcovSpec::cluster("g"))).map_err(|e| e.to_string())?;
    close(fit.std_error(INTERCEPT).unwrap(), v[(0, 0)].sqrt(), 1e-10, "cluster SE of the intercept")?;
    close(fit.std_error("x").unwrap(), v[(1, 1)].sqrt(), 1e-10, "cluster SE of x")?;

    // two-way fixed effects against the dummy-saturated regression
    let (units, periods) = (7, 5);
    let mut unit = vec![];
    let mut year = vec![];
    let mut xv = vec![];
    let mut yv = vec![];
    for u in 0..units {
        for p in 0..periods {
            let xi = normal(&mut rng);
            unit.push(u as f64);
            year.push(p as f64);
            xv.push(xi);
            yv.push(0.4 * u as f64 - 0.2 * p as f64 + 1.3 * xi + normal(&mut rng));
        }
    }
    let rows = units * periods;
    let d = DMatrix::from_fn(rows, 1 + 1 + (units - 1) + (periods - 1), |i, j| match j {
        0 => 1.0,
        1 => xv[i],
        j if j < 1 + units => f64::from(unit[i] as usize == j - 1),
        j => f64::from(year[i] as usize == j - units),
    });
    let oracle = solve(d.transpose() * &d, d.transpose() * DVector::from_column_slice(&yv));
    let t = table(vec![("unit", unit), ("year", year), ("x", xv), ("y", yv)]);
    let fit = panel_ols(&t, &RegressionSpec::new("y", &["x"]).with_fixed_effects(&["unit", "year"]))
        .map_err(|e| e.to_string())?;
    close(fit.coefficient("x").unwrap(), oracle[1], 1e-10, "within estimator")?;
    Ok(Verdict::Pass("200 designs, cluster sandwich and two-way fixed effects".into()))
}

// ---- 2: causal oracles ----

/// Scans every opposite-group unit in index order and keeps the strictly
/// closer one; returns the estimate and the (unit, match) pairs.
fn exhaustive_match(scores: &[f64], treated: &[bool], y: &[f64]) -> (f64, Vec<(usize, usize)>) {
    let mut total = 0.0;
    let mut pairs = vec![];
    for i in 0..scores.len() {
        let mut best: Option<usize> = None;
        for j in (0..scores.len()).filter(|&j| treated[j] != treated[i]) {
            if best.is_none_or(|b| (scores[i] - scores[j]).abs() < (scores[i] - scores[b]).abs()) {
                best = Some(j);
            }
        }
        let j = best.unwrap();
        pairs.push((i, j));
        total += if treated[i] { y[i] - y[j] } else { y[j] - y[i] };
    }
    (total / scores.len() as f64, pairs)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for case in 0..20 {
        let n = rng.random_range(20..=50);
        let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let mut d: Vec<f64> = x.iter().map(|&x| f64::from(0.6 * x + normal(&mut rng) > 0.0)).collect();
        d[0] = 1.0;
        d[1] = 0.0;
        let y: Vec<f64> = (0..n).map(|i| x[i] + 2.0 * d[i] + normal(&mut rng)).collect();
        let t = table(vec![("x", x), ("d", d.clone()), ("y", y.clone())]);
        let covs = vec!["x".to_string()];
        let got = ps_matching(&t, "d", "y", &covs, &[], &MatchingOptions::default()).map_err(|e| e.to_string())?;
        let scores: Vec<f64> = estimate_propensity_scores(&t, "d", &covs, &[])
            .map_err(|e| e.to_string())?
            .scores
            .into_iter()
            .map(Option::unwrap)
            .collect();
        let treated: Vec<bool> = d.iter().map(|&v| v == 1.0).collect();
        let (want, want_pairs) = exhaustive_match(&scores, &treated, &y);
        let mut pairs: Vec<(usize, usize)> = got.matches.iter().map(|p| (p.unit, p.matched)).collect();
        pairs.sort_unstable();
        ensure(pairs == want_pairs, || format!("matching case {case}: pairs differ"))?;
        close(got.point_estimate, want, 1e-12, &format!("matching case {case}"))?;
    }

    // just-identified IV: β = (Z'X)⁻¹ Z'y
    let n = 15;
    let z: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let w: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let x: Vec<f64> = (0..n).map(|i| z[i] + 0.5 * w[i] + normal(&mut rng)).collect();
    let y: Vec<f64> = (0..n).map(|i| 1.0 + 1.5 * x[i] - w[i] + normal(&mut rng)).collect();
    let xm = DMatrix::from_fn(n, 3, |i, j| [1.0, x[i], w[i]][j]);
    let zm = DMatrix::from_fn(n, 3, |i, j| [1.0, z[i], w[i]][j]);
    let beta = solve(zm.transpose() * &xm, zm.transpose() * DVector::from_column_slice(&y));
    let t = table(vec![("y", y), ("x", x), ("z", z), ("w", w)]);
    let fit = iv_2sls(&t, &IvSpec::new("y", &["x"], &["z"], &["w"])).map_err(|e| e.to_string())?;
    close(fit.coefficient(INTERCEPT).unwrap(), beta[0], 1e-10, "IV intercept")?;
    close(fit.coefficient("x").unwrap(), beta[1], 1e-10, "IV slope")?;
    close(fit.coefficient("w").unwrap(), beta[2], 1e-10, "IV exogenous")?;

    // event study against hand-built relative-time dummies
    let adopt = [Some(3.0), Some(3.0), Some(5.0), Some(5.0), Some(7.0), Some(7.0), None, None];
    let (mut unit, mut time, mut a, mut yv) = (vec![], vec![], vec![], vec![]);
    for (u, ad) in adopt.iter().enumerate() {
        for t in 0..10 {
            unit.push(u as f64);
            time.push(t as f64);
            a.push(*ad);
            let on = ad.is_some_and(|ad| t as f64 >= ad);
            yv.push(0.5 * u as f64 + 0.2 * t as f64 + if on { 0.8 } else { 0.0 } + normal(&mut rng));
        }
    }
    let rel: Vec<Option<i64>> = time.iter().zip(&a).map(|(t, a)| a.map(|a| (t - a) as i64)).collect();
    let windows: [(&str, fn(i64) -> bool); 5] =
        [("m3", |r| r <= -3), ("m2", |r| r == -2), ("p0", |r| r == 0), ("p1", |r| r == 1), ("p2", |r| r >= 2)];
    let mut panel = DataTable::new(
        "es",
        vec![
            Column::real("unit", unit),
            Column::real("time", time),
            Column::real_opt("adopt", a),
            Column::real("y", yv),
        ],
    )
    .unwrap();
    let es = did_event_study(
        &panel,
        &EventStudySpec {
            outcome: "y".into(),
            unit: "unit".into(),
            time: "time".into(),
            adoption_time: "adopt".into(),
            see_back: 3,
            see_forward: 2,
            controls: vec![],
            vcov: None,
            lag_indexing: LagIndexing::ZeroBased,
        },
    )
    .map_err(|e| e.to_string())?;
    for (name, f) in windows {
        let v = rel.iter().map(|r| r.map_or(0.0, |r| f64::from(f(r)))).collect();
        panel = panel.with_column(Column::real(name, v)).unwrap();
    }
    let oracle = panel_ols(
        &panel,
        &RegressionSpec::new("y", &["m3", "m2", "p0", "p1", "p2"])
            .with_fixed_effects(&["unit", "time"])
            .with_vcov(VcovSpec::cluster("unit")),
    )
    .map_err(|e| e.to_string())?;
    for j in 0..5 {
        close(es.fit.coefficients[j], oracle.coefficients[j], 1e-9, &format!("event-study coefficient {j}"))?;
        close(es.fit.standard_errors[j], oracle.standard_errors[j], 1e-9, &format!("event-study SE {j}"))?;
    }

    // sharp RDD: noiseless unit jump, then uniform kernel against side-wise OLS
    let xs: Vec<f64> = (0..200).map(|i| -1.0 + i as f64 / 100.0).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| 2.0 - 0.5 * x + f64::from(x >= 0.0)).collect();
    let t = table(vec![("x", xs), ("y", ys)]);
    for kernel in [Kernel::Triangular, Kernel::Uniform] {
        let r = rdd_sharp(&t, &RddSpec { bandwidth: Some(0.5), kernel, ..RddSpec::new("y", "x", 0.0) })
            .map_err(|e| e.to_string())?;
        close(r.effect, 1.0, 1e-8, "noiseless jump")?;
    }
    let xs: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| 0.4 + 0.8 * x + f64::from(x >= 0.0) + 0.3 * normal(&mut rng)).collect();
    let t = table(vec![("x", xs.clone()), ("y", ys)]);
    let h = 0.4;
    let r = rdd_sharp(&t, &RddSpec { bandwidth: Some(h), kernel: Kernel::Uniform, ..RddSpec::new("y", "x", 0.0) })
        .map_err(|e| e.to_string())?;
    let side = |right: bool| {
        let mask: Vec<bool> = xs.iter().map(|v| v.abs() <= h && (*v >= 0.0) == right).collect();
        let sub = t.filter_rows(&mask).unwrap();
        ols(&sub, &RegressionSpec::new("y", &["x"])).unwrap().coefficients[0]
    };
    close(r.effect, side(true) - side(false), 1e-10, "uniform-kernel jump")?;
    Ok(Verdict::Pass("matching, IV, event study and RDD match their oracles".into()))
}

// ---- 3: simulation recovery ----

fn within_3se(estimate: f64, se: f64, truth: f64, what: &str) -> Result<String, String> {
    ensure(se.is_finite() && se > 0.0, || format!("{what}: standard error {se}"))?;
    let z = (estimate - truth) / se;
    ensure(z.abs() < 3.0, || format!("{what}: {estimate} (se {se}) is {z:.2} SE from {truth}"))?;
    Ok(format!("{what} {estimate:.3} ({z:+.2} SE)"))
}

fn criterion_3() -> Outcome {
    let n = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut y, mut x, mut z) = (vec![], vec![], vec![]);
    for _ in 0..n {
        let zi = normal(&mut rng);
        let u = normal(&mut rng);
        let xi = 0.8 * zi + 0.6 * u + normal(&mut rng);
        z.push(zi);
        x.push(xi);
        y.push(0.5 + 1.5 * xi + u);
    }
    let iv = iv_2sls(&table(vec![("y", y), ("x", x), ("z", z)]), &IvSpec::new("y", &["x"], &["z"], &[]))
        .map_err(|e| e.to_string())?;
    let a = within_3se(iv.coefficient("x").unwrap(), iv.std_error("x").unwrap(), 1.5, "IV")?;

    let (mut unit, mut time, mut d, mut yv) = (vec![], vec![], vec![], vec![]);
    for u in 0..200 {
        let alpha = normal(&mut rng);
        for p in 0..10 {
            let di = f64::from(u % 2 == 0 && p >= 5);
            unit.push(u as f64);
            time.push(p as f64);
            d.push(di);
            yv.push(alpha + 0.3 * p as f64 + 5.0 * di + normal(&mut rng));
        }
    }
    let t = table(vec![("unit", unit), ("time", time), ("treat", d), ("y", yv)]);
    let did = did_static(
        &t,
        &DidSpec {
            outcome: "y".into(),
            treatment: "treat".into(),
            unit: "unit".into(),
            time: "time".into(),
            controls: vec![],
            vcov: None,
        },
    )
    .map_err(|e| e.to_string())?;
    let b = within_3se(did.coefficient("treat").unwrap(), did.std_error("treat").unwrap(), 5.0, "DID")?;

    let (mut x, mut d, mut y) = (vec![], vec![], vec![]);
    for _ in 0..n {
        let xi: f64 = rng.random_range(-1.0..1.0);
        let p = if xi >= 0.0 { 0.75 } else { 0.25 };
        let di = f64::from(rng.random::<f64>() < p);
        x.push(xi);
        d.push(di);
        y.push(1.0 + 0.7 * xi + 4.0 * di + 0.5 * normal(&mut rng));
    }
    let fuzzy = rdd_fuzzy(&table(vec![("x", x), ("d", d), ("y", y)]), &RddSpec::new("y", "x", 0.0), "d")
        .map_err(|e| e.to_string())?;
    let c = within_3se(fuzzy.effect, fuzzy.standard_error, 4.0, "fuzzy RDD")?;
    Ok(Verdict::Pass(format!("{a}; {b}; {c}")))
}

// ---- 4: external datasets ----

fn criterion_4() -> Outcome {
    let Some(dir) = std::env::var_os("ECON_DATA_DIR").map(PathBuf::from) else {
        return Ok(Verdict::Skip("ECON_DATA_DIR not set; cattaneo2.csv and birthweight.csv unavailable".into()));
    };
    let mut notes = vec![];
    let cattaneo = dir.join("cattaneo2.csv");
    if cattaneo.is_file() {
        let mut t = load_csv(&cattaneo, &CsvOptions::default()).map_err(|e| e.to_string())?;
        if !t.has_column("mage2") {
            let mage = t.numeric("mage").map_err(|e| e.to_string())?;
            t = t.with_column(Column::real_opt("mage2", mage.iter().map(|m| m.map(|m| m * m)).collect())).unwrap();
        }
        let covs: Vec<String> = ["mmarried", "mage", "mage2", "fbaby", "medu"].map(String::from).to_vec();
        let r = ps_matching(&t, "mbsmoke", "bweight", &covs, &[], &MatchingOptions::default())
            .map_err(|e| e.to_string())?;
        let rel = (r.point_estimate - -210.9683).abs() / 210.9683;
        ensure(rel < 0.05, || format!("matching ATE {} is {:.2}% from -210.9683", r.point_estimate, rel * 100.0))?;
        notes.push(format!("matching ATE {:.4}", r.point_estimate));
    } else {
        notes.push("cattaneo2.csv absent".into());
    }
    let births = dir.join("birthweight.csv");
    if births.is_file() {
        let t = load_csv(&births, &CsvOptions::default()).map_err(|e| e.to_string())?;
        let spec = PsRegressionSpec {
            treatment: "tobacco".into(),
            outcome: "dbrwt".into(),
            covariates: ["rectype", "csex", "dmar", "alcohol", "mrace3", "adequacy"].map(String::from).to_vec(),
            categorical: vec!["mrace3".into(), "adequacy".into()],
            trim: Some(TrimRule::quantile(0.1, 0.9)),
            include_covariates_second_stage: false,
            vcov: VcovSpec::classical(),
        };
        let fit = ps_regression_adjustment(&t, &spec).map_err(|e| e.to_string())?;
        let (b, se) = (fit.coefficient("tobacco").unwrap(), fit.std_error("tobacco").unwrap());
        ensure((b - -207.7272).abs() / 207.7272 < 0.01, || format!("regression-adjusted ATE {b}"))?;
        ensure((se - 5.508).abs() / 5.508 < 0.01, || format!("regression-adjusted SE {se}"))?;
        notes.push(format!("regression-adjusted ATE {b:.4} (SE {se:.4})"));
    } else {
        notes.push("birthweight.csv absent".into());
    }
    if notes.iter().all(|n| n.ends_with("absent")) {
        return Ok(Verdict::Skip(format!("{}: {}", dir.display(), notes.join(", "))));
    }
    Ok(Verdict::Pass(notes.join(", ")))
}

// ---- 5 and 6: agent pipeline fixtures ----

const PS_TASK: &str = "Please use the propensity score regression method to compute the effect of tobacco on dbrwt. \
You also need to control the following control variables: rectype, csex, dmar, alcohol, mrace3, adequacy.\n\n\
Besides, you need to consider the following requirements: mrace3, adequacy are multi-class categorical variables. \
Trim the samples with the highest 10% score and the lowest 10% score.\n\n\
You could load the corresponding data from births.csv.\n\n\
At the end of the program, please print the coefficient, standard error and p-value in JSON format.";

fn scripted(name: &str, out: &Path) -> SessionConfig {
    SessionConfig {
        backend: BackendConfig::Scripted(fixtures().join(name)),
        data_dir: fixtures(),
        output_path: Some(out.to_path_buf()),
        ..SessionConfig::default()
    }
}

fn criterion_5() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = vec![];
    for run in 0..3 {
        let out = dir.path().join(format!("run{run}.json"));
        let mut s = create_session(scripted("ps_case.json", &out)).map_err(|e| e.to_string())?;
        let outcome = s.run_request(PS_TASK).map_err(|e| e.to_string())?;
        ensure(outcome.report().is_some(), || format!("run {run} produced no report: {outcome:?}"))?;
        let plan = s.plan().unwrap();
        ensure(plan.analysis_steps().count() == 3, || format!("{} analysis steps", plan.analysis_steps().count()))?;
        let tools: Vec<_> = plan.subtasks.iter().filter_map(|t| t.selected_tool.as_deref()).collect();
        ensure(tools.contains(&"ps_regression_adjustment"), || format!("selected tools {tools:?}"))?;
        files.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure(files.iter().all(|f| f == &files[0]), || "result files differ across runs".into())?;

    let mut s =
        create_session(scripted("reflection.json", &dir.path().join("r.json"))).map_err(|e| e.to_string())?;
    let outcome = s.run_request(PS_TASK).map_err(|e| e.to_string())?;
    ensure(outcome.report().is_some(), || "reflection run produced no report".into())?;
    let attempts: Vec<u32> = s.plan().unwrap().subtasks.iter().map(|t| t.attempts).collect();
    ensure(attempts.contains(&2), || format!("attempts per step {attempts:?}"))?;
    Ok(Verdict::Pass(format!("3 identical result files ({} bytes); reflection attempts {attempts:?}", files[0].len())))
}

fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut s = create_session(scripted("followups.json", &dir.path().join("r.json"))).map_err(|e| e.to_string())?;
    s.run_request(PS_TASK).map_err(|e| e.to_string())?;
    let before = s.plan().unwrap().subtasks.clone();
    let seen = s.events().len();
    let r = s.handle_followup("Also cluster standard errors by state.").map_err(|e| e.to_string())?;
    ensure(r.intent == Intent::ContinueRefine, || format!("intent {:?}", r.intent))?;
    let after = s.plan().unwrap().subtasks.clone();
    let restarted: Vec<usize> = s.events()[seen..]
        .iter()
        .filter(|e| e.kind == EventKind::StepStarted)
        .filter_map(|e| e.subtask_id)
        .collect();
    let changed: Vec<usize> =
        before.iter().zip(&after).filter(|(b, a)| b.outcome != a.outcome || b.args != a.args).map(|(b, _)| b.id).collect();
    let targets: Vec<usize> = after
        .iter()
        .filter(|t| matches!(t.action, econ_agent::Action::Estimation | econ_agent::Action::Reporting))
        .map(|t| t.id)
        .collect();
    ensure(restarted == targets, || format!("re-run steps {restarted:?}, expected {targets:?}"))?;
    ensure(changed.iter().all(|id| targets.contains(id)), || format!("changed steps {changed:?}"))?;
    ensure(after.iter().all(|t| t.status == StepStatus::Done), || "not every step is done".into())?;

    let scratch = s.memory.context.tables["data"].clone().with_name("scratch");
    s.insert_table("scratch", scratch);
    let r = s
        .handle_followup(
            "Please start a new analysis: use the OLS method to compute the effect of x on y. \
             You could load the corresponding data from other.csv.",
        )
        .map_err(|e| e.to_string())?;
    ensure(r.intent == Intent::NewTask, || format!("intent {:?}", r.intent))?;
    let names: Vec<&String> = s.memory.context.tables.keys().collect();
    ensure(names == ["data"], || format!("tables after new analysis {names:?}"))?;
    ensure(s.memory.context.tables["data"].row_count() == 80, || "stale data table".into())?;
    Ok(Verdict::Pass(format!("refinement re-ran {restarted:?}; new analysis left tables {names:?}")))
}

// ---- 7: metric battery ----

fn record(id: &str, c: f64, se: f64, p: f64) -> RunRecord {
    RunRecord {
        task_id: id.into(),
        completed: true,
        extracted: Some(Extracted { coefficient: c, standard_error: se, p_value: p }),
        elapsed_ms: 0,
        failure_reason: None,
    }
}

fn task(id: &str, expected: Expected) -> TaskSpec {
    TaskSpec {
        id: id.into(),
        method: MethodFamily::OlsPanel,
        method_name: None,
        treatment: "d".into(),
        outcome: "y".into(),
        controls: vec![],
        requirements: String::new(),
        data_path: "d.csv".into(),
        expected,
        tags: vec![],
    }
}

fn criterion_7() -> Outcome {
    let e = Expected { coefficient: 10.0, standard_error: 2.0, p_value: 0.2 };
    let tasks: Vec<TaskSpec> = ["a", "b", "c", "d", "e", "f"].iter().map(|id| task(id, e)).collect();
    let records = vec![
        record("a", 10.05, 2.01, 0.205),
        record("b", 10.0, 2.0, 0.2),
        record("c", 10.3, 1.92, 0.4),
        record("d", -12.0, 2.0, 0.001),
        RunRecord::failed("e", 0, "no result"),
        RunRecord::failed("f", 0, "timeout"),
    ];
    let m = aggregate_metrics(&records, &tasks, PPerfectMode::Absolute);
    let tally = |r: econ_eval::Rate| (r.count, r.total);
    ensure(tally(m.perfect_replication) == (2, 6), || format!("perfect {:?}", tally(m.perfect_replication)))?;
    ensure(tally(m.partial_replication) == (3, 6), || format!("partial {:?}", tally(m.partial_replication)))?;
    ensure(tally(m.compilation_success) == (4, 6), || format!("compilation {:?}", tally(m.compilation_success)))?;

    let ps = [0.0, 0.0099, 0.01, 0.0499, 0.05, 0.0999, 0.1, 0.1001, 0.5, 1.0, 0.009999, 0.049999];
    let stars = |p: f64| [0.01, 0.05, 0.10].iter().filter(|&&cut| p < cut).count() as u8;
    for p in ps {
        ensure(significance_level(p) == stars(p), || format!("level of {p}"))?;
    }
    let e = Expected { coefficient: 1.0, standard_error: 1.0, p_value: 0.03 };
    let tasks: Vec<TaskSpec> = (0..12).map(|i| task(&format!("t{i}"), e)).collect();
    let records: Vec<RunRecord> = ps.iter().enumerate().map(|(i, &p)| record(&format!("t{i}"), 1.0, 1.0, p)).collect();
    let m = aggregate_metrics(&records, &tasks, PPerfectMode::Absolute);
    let mut errs: Vec<f64> = ps.iter().map(|p| (p - 0.03f64).abs()).collect();
    let mean = errs.iter().sum::<f64>() / 12.0;
    errs.sort_by(f64::total_cmp);
    close(m.p_value_median_abs_error.unwrap(), (errs[5] + errs[6]) / 2.0, 1e-15, "median p error")?;
    close(m.p_value_mean_abs_error.unwrap(), mean, 1e-15, "mean p error")?;
    let gaps: Vec<u8> = ps.iter().map(|&p| stars(p).abs_diff(2)).collect();
    let count = |g: u8| gaps.iter().filter(|&&x| x == g).count();
    ensure(m.significance_level_correct.count == count(0), || "level-correct count".into())?;
    ensure(m.significance_level_error_1.count == count(1), || "level gap 1 count".into())?;
    ensure(m.significance_level_error_2.count == count(2), || "level gap 2 count".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for set in 0..200 {
        let n = rng.random_range(1..25);
        let tasks: Vec<TaskSpec> = (0..n)
            .map(|i| {
                let c = rng.random_range(-5.0..5.0);
                let se = rng.random_range(0.1..2.0);
                task(&format!("t{i}"), Expected { coefficient: c, standard_error: se, p_value: rng.random() })
            })
            .collect();
        let records: Vec<RunRecord> = tasks
            .iter()
            .map(|t| {
                if rng.random_bool(0.2) {
                    return RunRecord::failed(&t.id, 0, "failed");
                }
                let jitter = |v: f64, rng: &mut ChaCha8Rng| v * (1.0 + rng.random_range(-0.08..0.08));
                let (c, se) = (jitter(t.expected.coefficient, &mut rng), jitter(t.expected.standard_error, &mut rng));
                record(&t.id, c, se, (t.expected.p_value + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0))
            })
            .collect();
        for mode in [PPerfectMode::Absolute, PPerfectMode::Relative] {
            let m = aggregate_metrics(&records, &tasks, mode);
            ensure(m.perfect_replication.count <= m.partial_replication.count, || format!("set {set}: perfect > partial"))?;
            for (r, t) in records.iter().zip(&tasks) {
                if classify_replication(r, &t.expected, mode) == ReplicationClass::Perfect {
                    let got = r.extracted.unwrap();
                    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
                    ensure(
                        rel(got.coefficient, t.expected.coefficient) < 0.05
                            && rel(got.standard_error, t.expected.standard_error) < 0.05,
                        || format!("set {set}: perfect record {} is not partial", r.task_id),
                    )?;
                }
            }
        }
    }
    Ok(Verdict::Pass("6-record tally 2/3/4 of 6, 12 boundary p-values, 200 random sets".into()))
}

// ---- 8: robustness ----

fn random_value(rng: &mut ChaCha8Rng) -> Value {
    match rng.random_range(0..9) {
        0 => Value::Null,
        1 => json!(rng.random_bool(0.5)),
        2 => json!(rng.random_range(-1e6..1e6)),
        3 => json!(rng.random_range(-3i64..40)),
        4 => json!(["x", "y", "s", "nope", ""][rng.random_range(0..5)]),
        5 => json!(["x", "y"]),
        6 => json!({"nested": [1, "a"]}),
        7 => json!(f64::MAX),
        _ => json!(""),
    }
}

fn criterion_8() -> Outcome {
    let registry = Registry::builtin();
    let mut ctx = ToolContext::new(std::env::temp_dir());
    ctx.tables.insert(
        "data".into(),
        DataTable::new(
            "data",
            vec![
                Column::real("x", vec![1.0, 2.0, 3.0, 4.0]),
                Column::real("y", vec![3.0, 5.0, 7.0, 9.5]),
                Column::text("s", vec!["a", "b", "a", "c"]),
            ],
        )
        .unwrap(),
    );
    let keys = [
        "data", "outcome", "regressors", "treatment", "covariates", "vcov", "cluster", "instruments", "endogenous",
        "running", "cutoff", "bandwidth", "ratio", "see_back", "see_forward", "unit", "time", "column", "path",
    ];
    let tools = registry.list_tools();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut errors = 0;
    for case in 0..500 {
        let tool = &tools[rng.random_range(0..tools.len())];
        let args: serde_json::Map<String, Value> =
            (0..rng.random_range(0..6)).map(|_| (keys[rng.random_range(0..keys.len())].to_string(), random_value(&mut rng))).collect();
        let args = if case % 50 == 0 { json!([1, 2]) } else { Value::Object(args) };
        let out = catch_unwind(AssertUnwindSafe(|| registry.invoke_tool(tool, &args, &ctx)))
            .map_err(|_| format!("invoke_tool panicked: {tool} {args}"))?;
        if out.status == OutcomeStatus::Error {
            errors += 1;
            let msg = out.error_message.unwrap_or_default();
            ensure(!msg.is_empty() && !msg.starts_with("internal error"), || format!("{tool} {args}: {msg}"))?;
        }
    }

    let bin = env!("CARGO_BIN_EXE_econ");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{ not a corpus").unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec![],
        vec!["nonsense".into()],
        vec!["run".into()],
        vec!["run".into(), "".into()],
        vec!["run".into(), "effect of x on y. You could load the corresponding data from /no/such.csv.".into()],
        vec!["--backend".into(), "carrier-pigeon".into(), "tools".into()],
        vec!["--max-retries".into(), "-4".into(), "tools".into()],
        vec!["--max-retries".into(), "0".into(), "run".into(), "x".into()],
        vec!["eval".into(), garbage.display().to_string()],
        vec!["eval".into(), "/no/such/corpus.json".into()],
        vec!["eval".into(), garbage.display().to_string(), "--runner".into(), "ghost".into()],
        vec!["--format".into(), "xml".into(), "eval".into(), garbage.display().to_string()],
        vec!["serve".into(), "--bind".into(), "not-an-address".into()],
        vec!["run".into(), "--prompt-file".into(), "/no/such/prompt.txt".into()],
        vec!["--backend".into(), "scripted".into(), "run".into(), "x".into()],
        vec!["\u{ffff}".into(), "--\u{202e}".into()],
    ];
    for args in &cases {
        let out = Command::new(bin)
            .args(args)
            .current_dir(dir.path())
            .stdin(Stdio::null())
            .output()
            .map_err(|e| e.to_string())?;
        let code = out.status.code().ok_or_else(|| format!("{args:?} killed by a signal"))?;
        let stderr = String::from_utf8_lossy(&out.stderr);
        ensure(code == 1 || code == 2, || format!("{args:?} exited {code}: {stderr}"))?;
        ensure(!stderr.contains("panicked"), || format!("{args:?} panicked: {stderr}"))?;
        ensure(!stderr.trim().is_empty(), || format!("{args:?} gave no message"))?;
    }
    let mut child = Command::new(bin)
        .args(["chat"])
        .current_dir(dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    {
        use std::io::Write;
        let mut stdin = child.stdin.take().unwrap();
        let _ = stdin.write_all(b"\n\x01\x02{]\nuse ols for nothing from missing.csv\n:tools\nzzz\n");
    }
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    ensure(out.status.code() == Some(0), || format!("chat exited {:?}", out.status))?;
    ensure(String::from_utf8_lossy(&out.stdout).contains("error"), || "chat did not report errors".into())?;
    Ok(Verdict::Pass(format!("500 tool calls ({errors} structured errors), {} CLI cases, piped chat", cases.len())))
}

#[test]
fn acceptance() {
    let criteria: [(u8, fn() -> Outcome, Duration); 8] = [
        (1, criterion_1, Duration::from_secs(5)),
        (2, criterion_2, Duration::from_secs(10)),
        (3, criterion_3, Duration::from_secs(30)),
        (4, criterion_4, Duration::from_secs(60)),
        (5, criterion_5, Duration::from_secs(5)),
        (6, criterion_6, Duration::from_secs(10)),
        (7, criterion_7, Duration::from_secs(10)),
        (8, criterion_8, Duration::from_secs(60)),
    ];
    let suite = Instant::now();
    let mut failed = vec![];
    for (id, run, limit) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(Verdict::Pass(_)) if elapsed > limit => Err(format!("took {elapsed:.1?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(Verdict::Pass(detail)) => println!("criterion {id} PASS ({elapsed:.2?}) {detail}"),
            Ok(Verdict::Skip(why)) => println!("criterion {id} SKIP {why}"),
            Err(why) => {
                println!("criterion {id} FAIL ({elapsed:.2?}) {why}");
                failed.push(id);
            }
        }
    }
    let total = suite.elapsed();
    println!("suite finished in {total:.2?}");
    assert!(total < Duration::from_secs(120), "suite took {total:?}");
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
