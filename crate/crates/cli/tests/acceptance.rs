//! End-to-end acceptance checks. Each test prints one `criterion NN [PASS|FAIL]`
//! line straight to stderr (so it shows without `--nocapture`) and then
//! asserts the outcome.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_4, PI};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use local_reservoir::ctmc::{self, closed_form, CtmcModel, Rates, N1_STATE_ORDER};
use local_reservoir::fit::{self, LookupCurve, LookupParams};
use local_reservoir::photon::{self, PhotonAveraging, PhotonConfig};
use local_reservoir::reservoir::{run_trial, Outcome, ReservoirConfig, StallPolicy};
use local_reservoir::stats::{self, ReservoirAnalysis};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "\ncriterion {id:02} [{verdict}] {detail}");
    assert!(pass, "criterion {id} failed: {detail}");
}

fn reservoir(n: usize, lifetime: u64, t0: u64, cycles: u64, trials: u64) -> ReservoirConfig {
    ReservoirConfig {
        n_levels: n,
        lifetime,
        total_cycles: cycles,
        t0,
        trials,
        seed: 42,
        stall_policy: StallPolicy::default(),
    }
}

fn random_rates(seed: u64, count: usize) -> Vec<Rates> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            Rates::new(rng.random_range(0.05..20.0), rng.random_range(0.05..20.0), rng.random_range(0.05..20.0))
                .unwrap()
        })
        .collect()
}

#[test]
fn criterion_01_lifetime_one_is_chance() {
    let mut values = Vec::new();
    for n in [4, 100] {
        let curve = stats::consistency_curve(&reservoir(n, 1, 500, 700, 50_000), 200).unwrap();
        values.push((n, stats::max_consistency(&curve).unwrap()));
    }
    let pass = values.iter().all(|&(_, m)| (0.49..=0.51).contains(&m));
    report(1, pass, &format!("lifetime 1 max consistency {values:?} within [0.49, 0.51]"));
}

/// Lifetime-10 size grid shared by criteria 2, 3 and 11.
fn size_grid() -> &'static Vec<(usize, ReservoirAnalysis)> {
    static GRID: OnceLock<Vec<(usize, ReservoirAnalysis)>> = OnceLock::new();
    GRID.get_or_init(|| {
        [4, 10, 20, 50, 100]
            .into_iter()
            .map(|n| (n, stats::analyze(&reservoir(n, 10, 1000, 1200, 20_000), 200).unwrap()))
            .collect()
    })
}

#[test]
fn criterion_02_size_ordering() {
    let maxes: Vec<(usize, f64)> = size_grid()
        .iter()
        .map(|(n, a)| (*n, stats::max_consistency(&a.curve).unwrap()))
        .collect();
    let steps_ok = maxes.windows(2).all(|w| w[0].1 - w[1].1 >= 0.005);
    let span = maxes[0].1 - maxes[maxes.len() - 1].1;
    let detail = maxes.iter().map(|(n, m)| format!("N={n}:{m:.4}")).collect::<Vec<_>>().join(" ");
    report(2, steps_ok && span >= 0.05, &format!("max consistency {detail}; span {span:.4}"));
}

#[test]
fn criterion_03_convergence() {
    let tails: Vec<(usize, f64)> = size_grid()
        .iter()
        .map(|(n, a)| (*n, a.curve.average_over(100, 200).unwrap()))
        .collect();
    let pass = tails.iter().all(|&(_, v)| (v - 0.5).abs() <= 0.01);
    let detail = tails.iter().map(|(n, m)| format!("N={n}:{m:.4}")).collect::<Vec<_>>().join(" ");
    report(3, pass, &format!("mean over t in [100, 200]: {detail}"));
}

fn default_lookup() -> &'static LookupCurve {
    static CURVE: OnceLock<LookupCurve> = OnceLock::new();
    CURVE.get_or_init(|| fit::build_lookup(LookupParams::default(), &fit::default_grid()).unwrap())
}

#[test]
fn criterion_04_lookup_anchor() {
    let params = LookupParams { trials: 50_000, ..LookupParams::default() };
    let at = |n: usize| {
        let curve = stats::consistency_curve(&params.config_for(n), params.offset as usize).unwrap();
        curve.mean(params.offset).unwrap()
    };
    let (c2, c50) = (at(2), at(50));
    let smoothed = &default_lookup().smoothed;
    let monotone = smoothed.windows(2).all(|w| w[0] >= w[1]);
    let pass = (0.63..=0.75).contains(&c2) && (0.48..=0.55).contains(&c50) && monotone;
    report(4, pass, &format!("offset 8: N=2 {c2:.4}, N=50 {c50:.4}; smoothed non-increasing: {monotone}"));
}

/// The 8x8 rate matrix written out entry by entry, indexed by 1-based state.
fn reference_rate_matrix(r: &Rates) -> [[f64; 8]; 8] {
    let (gi, gu, go) = (r.gamma_in, r.gamma_up, r.gamma_out);
    [
        [-gi, 0., go, go, 0., 0., 0., 0.],
        [gi, -2. * gu, 0., 0., go, go, 0., 0.],
        [0., gu, -gi - go, 0., 0., 0., go, 0.],
        [0., gu, 0., -gi - go, 0., 0., go, 0.],
        [0., 0., gi, 0., -go - gu, 0., 0., go],
        [0., 0., 0., gi, 0., -go - gu, 0., go],
        [0., 0., 0., 0., gu, gu, -gi - 2. * go, 0.],
        [0., 0., 0., 0., 0., 0., gi, -2. * go],
    ]
}

#[test]
fn criterion_05_single_level_generator() {
    let mut worst = 0.0f64;
    for rates in random_rates(5, 10) {
        let q = CtmcModel::build(1, rates).unwrap().generator_dense();
        let reference = reference_rate_matrix(&rates);
        for (r, &mr) in N1_STATE_ORDER.iter().enumerate() {
            for (c, &mc) in N1_STATE_ORDER.iter().enumerate() {
                let want = reference[r][c];
                let rel = (q[mr][mc] - want).abs() / want.abs().max(f64::MIN_POSITIVE);
                worst = worst.max(if want == 0.0 { q[mr][mc].abs() } else { rel });
            }
        }
    }
    report(5, worst <= 1e-12, &format!("worst relative entry error {worst:e} over 10 rate triples"));
}

/// Dense steady-state oracle: nalgebra LU with the first balance row replaced
/// by the normalisation constraint.
fn oracle_pi(q: &[Vec<f64>]) -> Vec<f64> {
    let m = q.len();
    let mut a = DMatrix::from_fn(m, m, |r, c| q[r][c]);
    a.row_mut(0).fill(1.0);
    let mut b = DVector::zeros(m);
    b[0] = 1.0;
    a.lu().solve(&b).unwrap().iter().copied().collect()
}

#[test]
fn criterion_06_steady_state_quality() {
    let (mut res, mut sum_err, mut oracle_err) = (0.0f64, 0.0f64, 0.0f64);
    for n in 1..=3 {
        for rates in random_rates(60 + n as u64, 10) {
            let model = CtmcModel::build(n, rates).unwrap();
            let ss = ctmc::steady_state(&model).unwrap();
            let qpi = model.apply(&ss.pi);
            res = res.max(qpi.iter().fold(0.0, |m, v| m.max(v.abs())));
            sum_err = sum_err.max((ss.pi.iter().sum::<f64>() - 1.0).abs());
            for (a, b) in ss.pi.iter().zip(oracle_pi(&model.generator_dense())) {
                oracle_err = oracle_err.max((a - b).abs());
            }
        }
    }
    let pass = res <= 1e-10 && sum_err <= 1e-12 && oracle_err <= 1e-10;
    report(6, pass, &format!("max |Q pi| {res:e}, |sum - 1| {sum_err:e}, oracle diff {oracle_err:e}"));
}

#[test]
fn criterion_07_imbalance_signs() {
    let imb = |n, r: (f64, f64, f64)| ctmc::analyze(n, Rates::new(r.0, r.1, r.2).unwrap()).unwrap().imbalance;
    let two_slow_decay = imb(2, (1.0, 1.0, 10.0));
    let two_fast_up = imb(2, (1.0, 10.0, 1.0));
    let one: Vec<f64> = [(1.0, 1.0, 1.0), (10.0, 1.0, 1.0), (1.0, 10.0, 1.0), (1.0, 1.0, 10.0)]
        .into_iter()
        .map(|r| imb(1, r))
        .collect();
    let pass = two_slow_decay > 0.0 && two_fast_up <= 0.02 && one.iter().all(|&v| v <= 0.0);
    report(
        7,
        pass,
        &format!("N=2 (1,1,10) {two_slow_decay:.5}, (1,10,1) {two_fast_up:.5}; N=1 {one:.5?}"),
    );
}

/// Closed form evaluated term by term on a stationary vector in
/// 1-based state order.
fn closed_form_by_hand(r: &Rates, p: &[f64; 9]) -> f64 {
    let (gi, gu, go) = (r.gamma_in, r.gamma_up, r.gamma_out);
    let prefactor = gi * gu / ((gi + go) * (gu + go));
    let first = (p[1] + p[2]) / 2.0;
    let second = (gi * go + go * (gu + go)) / (2.0 * (gi + go) * (gu + go)) * (p[3] + p[4]);
    let third = (2.0 * (2.0 * gi + go) * (gu + go) * go.powi(2) + gi * go * (gi + go).powi(2))
        / (2.0 * (gi + 2.0 * go) * (gi + go).powi(2) * (gu + go))
        * p[7];
    let fourth = go / (2.0 * (gu + go)) * (p[5] + p[6] + p[8]);
    prefactor * (first + second + third + fourth)
}

#[test]
fn criterion_08_closed_form_report() {
    let mut worst = 0.0f64;
    for rates in random_rates(8, 20) {
        let reference = reference_rate_matrix(&rates);
        let q: Vec<Vec<f64>> = reference.iter().map(|row| row.to_vec()).collect();
        let pi = oracle_pi(&q);
        let mut p = [0.0; 9];
        p[1..].copy_from_slice(&pi);
        let by_hand = closed_form_by_hand(&rates, &p);
        let model = CtmcModel::build(1, rates).unwrap();
        let ours = closed_form::closed_form_value(&rates, &ctmc::steady_state(&model).unwrap()).unwrap();
        worst = worst.max((ours - by_hand).abs());
    }
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR"));
    let artifact = dir.join("closed_form_report.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_reservoir"))
        .args(["closed-form", "--out", artifact.to_str().unwrap()])
        .status()
        .unwrap();
    let written = status.success() && fs::read_to_string(&artifact).map(|t| t.lines().count() == 5).unwrap_or(false);
    report(
        8,
        worst <= 1e-12 && written,
        &format!("max |ours - hand-coded| {worst:e} over 20 triples; report at {}", artifact.display()),
    );
}

#[test]
fn criterion_09_photon_first_step() {
    let mut rows = Vec::new();
    let mut pass = true;
    for r in [5u32, 10, 50, 100] {
        let cfg = PhotonConfig { resolution: r, cycles: 2, trials: 100_000, seed: 42 };
        let got = photon::photon_consistency_curve(&cfg, PhotonAveraging::ZeroFill).unwrap().curve.mean(1).unwrap();
        let want = (FRAC_PI_4 - PI / r as f64).cos().powi(2);
        pass &= (got - want).abs() <= 0.01;
        rows.push(format!("R={r}: {got:.4} vs {want:.4}"));
    }
    report(9, pass, &rows.join(", "));
}

#[test]
fn criterion_10_photon_shape() {
    let run = |r| {
        let cfg = PhotonConfig { resolution: r, cycles: 500, trials: 20_000, seed: 42 };
        photon::photon_consistency_curve(&cfg, PhotonAveraging::ZeroFill).unwrap()
    };
    let (c5, c50) = (run(5), run(50));
    let max5 = stats::max_consistency(&c5.curve).unwrap();
    let max50 = stats::max_consistency(&c50.curve).unwrap();
    let (first, at50) = (c5.curve.mean(1).unwrap(), c5.curve.mean(50).unwrap());
    report(
        10,
        max5 > max50 && at50 < first,
        &format!("max R=5 {max5:.4} vs R=50 {max50:.4}; R=5 offset 50 {at50:.4} vs offset 1 {first:.4}"),
    );
}

#[test]
fn criterion_11_active_portions() {
    let by_size: Vec<f64> = size_grid().iter().map(|(_, a)| a.active_portion.mean_fraction).collect();
    let size_ok = by_size.windows(2).all(|w| w[0] > w[1]);

    let by_lifetime: Vec<f64> = [1u64, 5, 10, 15, 20]
        .into_iter()
        .map(|l| stats::active_portion(&reservoir(4, l, 1000, 1200, 20_000)).unwrap().mean_fraction)
        .collect();
    let lifetime_ok = by_lifetime[0] == 0.0
        && by_lifetime.windows(2).all(|w| w[0] <= w[1])
        && by_lifetime[1] > by_lifetime[0];

    let by_resolution: Vec<f64> = [5u32, 10, 50, 100, 500]
        .into_iter()
        .map(|r| {
            let cfg = PhotonConfig { resolution: r, cycles: 500, trials: 20_000, seed: 42 };
            photon::photon_active_portion(&cfg).unwrap().mean_fraction
        })
        .collect();
    let photon_ok = by_resolution.windows(2).all(|w| w[0] > w[1]);
    report(
        11,
        size_ok && lifetime_ok && photon_ok,
        &format!("by N {by_size:.4?}; by lifetime {by_lifetime:.4?}; photon by R {by_resolution:.4?}"),
    );
}

#[test]
fn criterion_12_fit_round_trip() {
    let curve = default_lookup();
    let mut pass = true;
    let mut rows = Vec::new();
    for n in [4usize, 10, 20, 40] {
        let cfg = ReservoirConfig { seed: 777, ..curve.params.config_for(n) };
        let c = stats::consistency_curve(&cfg, curve.params.offset as usize).unwrap().mean(curve.params.offset).unwrap();
        let (est, flag) = fit::estimate_reservoir_size(c, curve).unwrap();
        let tol = 3usize.max((0.2 * n as f64).floor() as usize);
        let ok = est.is_some_and(|e| e.abs_diff(n) <= tol);
        pass &= ok;
        rows.push(format!("N={n}: c={c:.4} -> {est:?} ({}), tol {tol}", flag.as_str()));
    }
    report(12, pass, &rows.join("; "));
}

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_reservoir")).args(args).env_remove("RESERVOIR_SEED").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn criterion_13_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let people = dir.path().join("people.csv");
    fs::write(&people, "participant_id,consistency\np01,0.7\np02,0.52\np03,0.9\n").unwrap();
    let people = people.to_str().unwrap().to_string();
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("sim.csv", vec!["sim", "--n", "4", "--trials", "2000", "--max-offset", "100"]),
        ("sim.svg", vec!["sim", "--n", "4,10,20", "--trials", "1000", "--max-offset", "50"]),
        ("sweep.csv", vec!["sweep", "--n", "4,10,20", "--trials", "1000", "--max-offset", "50"]),
        ("walk.json", vec!["walk", "--n", "10", "--traces", "5", "--trials", "100"]),
        ("ctmc.json", vec!["ctmc", "--n", "2", "--gin", "1", "--gup", "1", "--gout", "10"]),
        ("closed_form.csv", vec!["closed-form"]),
        ("photon.csv", vec!["photon", "--resolution", "10", "--cycles", "200", "--trials", "2000"]),
        ("photon_summary.svg", vec!["photon", "--resolution", "5,10,50", "--cycles", "100", "--trials", "1000", "--summary"]),
        ("lookup.csv", vec!["lookup", "--grid", "2,10,50", "--trials", "1000"]),
        ("fit.csv", vec!["fit", "--input", &people, "--grid", "2,10,50", "--trials", "1000"]),
    ];
    let mut digests: HashMap<&str, Vec<Vec<u8>>> = HashMap::new();
    for run in ["a", "b"] {
        let sub = dir.path().join(run);
        fs::create_dir_all(&sub).unwrap();
        for (file, args) in &commands {
            let out = sub.join(file);
            let mut full = args.clone();
            full.extend(["--out", out.to_str().unwrap()]);
            run_cli(&full);
            digests.entry(file).or_default().push(fs::read(&out).unwrap());
        }
    }
    let differing: Vec<&str> = digests.iter().filter(|(_, v)| v[0] != v[1]).map(|(k, _)| *k).collect();
    report(
        13,
        differing.is_empty(),
        &format!("{} commands run twice with the same seed; differing outputs: {differing:?}", commands.len()),
    );
}

/// Exact distribution of the discrete-cycle chain by exhaustive enumeration.
///
/// A state holds, for each level, the cycles left until it recovers (0 means
/// at rest: lower full, upper empty). Each cycle first counts every timer
/// down, then picks uniformly among arrows whose lower level is at rest and
/// whose upper level is at rest, and sets both timers to `lifetime`.
struct ExactChain {
    n: usize,
    lifetime: u8,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Step {
    L,
    R,
    Stall,
}

type Timers = Vec<u8>;

impl ExactChain {
    /// Arrow `i` of kind L goes lower `i` -> upper `i + 1`; kind R goes lower `i` -> upper `i`.
    fn successors(&self, timers: &Timers) -> Vec<(f64, Step, Timers)> {
        let mut t: Timers = timers.iter().map(|&x| x.saturating_sub(1)).collect();
        let mut arrows = Vec::new();
        for i in 0..self.n {
            if t[i] == 0 {
                if t[self.n + i + 1] == 0 {
                    arrows.push((Step::L, i, i + 1));
                }
                if t[self.n + i] == 0 {
                    arrows.push((Step::R, i, i));
                }
            }
        }
        if arrows.is_empty() {
            return vec![(1.0, Step::Stall, t)];
        }
        let p = 1.0 / arrows.len() as f64;
        let out = arrows
            .into_iter()
            .map(|(kind, lower, upper)| {
                let mut next = t.clone();
                next[lower] = self.lifetime;
                next[self.n + upper] = self.lifetime;
                (p, kind, next)
            })
            .collect();
        t.clear();
        out
    }

    /// Joint law of the outcomes of the first `cycles` cycles.
    fn paths(&self, cycles: usize) -> HashMap<Vec<Step>, f64> {
        let mut frontier: HashMap<(Vec<Step>, Timers), f64> = HashMap::new();
        frontier.insert((Vec::new(), vec![0; 2 * self.n + 1]), 1.0);
        for _ in 0..cycles {
            let mut next = HashMap::new();
            for ((path, timers), p) in frontier {
                for (q, step, t) in self.successors(&timers) {
                    let mut path = path.clone();
                    path.push(step);
                    *next.entry((path, t)).or_insert(0.0) += p * q;
                }
            }
            frontier = next;
        }
        let mut law = HashMap::new();
        for ((path, _), p) in frontier {
            *law.entry(path).or_insert(0.0) += p;
        }
        law
    }
}

#[test]
fn criterion_14_exact_chain() {
    let cycles = 8;
    let exact = ExactChain { n: 1, lifetime: 2 }.paths(cycles);
    let total: f64 = exact.values().sum();
    assert!((total - 1.0).abs() < 1e-12);

    let samples = 100_000u64;
    let cfg = ReservoirConfig {
        n_levels: 1,
        lifetime: 2,
        total_cycles: cycles as u64,
        t0: 1,
        trials: samples,
        seed: 42,
        stall_policy: StallPolicy::Skip,
    };
    let mut counts: HashMap<Vec<Step>, u64> = HashMap::new();
    for i in 0..samples {
        let path: Vec<Step> = run_trial(&cfg, i)
            .unwrap()
            .iter()
            .map(|e| match e.outcome {
                Outcome::L => Step::L,
                Outcome::R => Step::R,
                Outcome::Stall => Step::Stall,
            })
            .collect();
        *counts.entry(path).or_insert(0) += 1;
    }

    // Per-cycle marginals and full-path frequencies against the exact law.
    let mut checks = 0;
    let mut worst_z = 0.0f64;
    let mut impossible = 0u64;
    let mut compare = |p: f64, k: u64| {
        checks += 1;
        if p == 0.0 || p == 1.0 {
            if k != (p as u64) * samples {
                impossible += 1;
            }
            return;
        }
        let sigma = (p * (1.0 - p) / samples as f64).sqrt();
        worst_z = worst_z.max((k as f64 / samples as f64 - p).abs() / sigma);
    };
    for c in 0..cycles {
        for step in [Step::L, Step::R, Step::Stall] {
            let p: f64 = exact.iter().filter(|(path, _)| path[c] == step).map(|(_, p)| p).sum();
            let k: u64 = counts.iter().filter(|(path, _)| path[c] == step).map(|(_, k)| k).sum();
            compare(p, k);
        }
    }
    for (path, &p) in &exact {
        compare(p, counts.get(path).copied().unwrap_or(0));
    }
    let unseen = counts.keys().filter(|k| !exact.contains_key(*k)).count() as u64;
    // Bonferroni-free 3 sigma per statistic, as stated for the step statistics.
    let pass = worst_z <= 3.0 && impossible == 0 && unseen == 0;
    report(
        14,
        pass,
        &format!(
            "{checks} statistics over {cycles} cycles, {} exact paths; worst |z| {worst_z:.2}; impossible {impossible}; unseen paths {unseen}",
            exact.len()
        ),
    );
}
