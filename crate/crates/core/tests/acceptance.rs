//! Acceptance suite. Each criterion writes one `PASS`/`FAIL` line straight to
//! the process stderr (visible without `--nocapture`), prints its detail
//! table through the captured stdout, then asserts.

use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use fwer_core::bounds::{line_bound, simplified_bound};
use fwer_core::exact::{
    asymptotic_diagnostics, h_exact, h_prime, h_second, h_second_with_form, lemma_ladder,
};
use fwer_core::mc::{
    binomial_se, replication_exceeds, replication_exceeds_full, REFERENCE_FWER_HAT, TABLE1_ALPHA,
    TABLE1_RHO,
};
use fwer_core::model::{AForm, ModelConfig};
use fwer_core::quadrature::QuadratureSpec;
use fwer_core::special::{
    std_normal_cdf, std_normal_quantile, std_normal_sf, std_normal_upper_quantile,
};

fn verdict(id: u32, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "[acceptance] criterion {id:>2} {} {title}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn fwer_bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fwer"))
        .args(args)
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .expect("run binary")
}

/// Header and data rows of a CSV artifact.
fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines
        .next()
        .expect("header")
        .split(',')
        .map(String::from)
        .collect();
    (
        header,
        lines
            .map(|l| l.split(',').map(String::from).collect())
            .collect(),
    )
}

fn field(header: &[String], row: &[String], name: &str) -> f64 {
    row[header.iter().position(|h| h == name).expect(name)]
        .parse()
        .expect(name)
}

fn quad() -> QuadratureSpec {
    QuadratureSpec::default()
}

fn h(n: u64, alpha: f64, rho: f64) -> f64 {
    h_exact(&ModelConfig::bonferroni(n, alpha, rho).unwrap(), &quad())
        .unwrap()
        .h
}

const GRID_ALPHA: [f64; 4] = [0.01, 0.05, 0.1, 0.4];

fn grid_rho() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

#[test]
fn criterion_01_table1_reproduction() {
    let reps = 10_000u64;
    let start = Instant::now();
    let out = fwer_bin(&[
        "table1", "--seed", "20240607", "--reps", "10000", "--n", "10000",
    ]);
    let elapsed = start.elapsed();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let (hd, rows) = csv_rows(&text);
    assert_eq!(rows.len(), 36);

    let mut worst_exact: f64 = 0.0;
    let mut worst_ref: f64 = 0.0;
    let mut bad = Vec::new();
    let mut near_violation = false;
    println!("rho alpha fwer_hat fwer_exact z_exact reference z_reference");
    for row in &rows {
        let (rho, alpha) = (field(&hd, row, "rho"), field(&hd, row, "alpha"));
        let hat = field(&hd, row, "fwer_hat");
        let exact = field(&hd, row, "fwer_exact");
        let i = TABLE1_RHO.iter().position(|&r| r == rho).unwrap();
        let j = TABLE1_ALPHA.iter().position(|&a| a == alpha).unwrap();
        let reference = REFERENCE_FWER_HAT[i][j];
        let z_exact = (hat - exact).abs() / binomial_se(exact, reps);
        let pooled = ((hat * (1.0 - hat) + reference * (1.0 - reference)) / reps as f64).sqrt();
        let z_ref = (hat - reference).abs() / pooled;
        println!("{rho} {alpha} {hat} {exact:.6e} {z_exact:.2} {reference} {z_ref:.2}");
        worst_exact = worst_exact.max(z_exact);
        worst_ref = worst_ref.max(z_ref);
        if z_exact > 4.0 || z_ref > 4.0 {
            bad.push(format!("({rho},{alpha})"));
        }
        if rho == 0.1 && alpha == 0.01 {
            near_violation = (hat - 0.009).abs() <= 4.0 * binomial_se(exact, reps);
        }
    }
    let within = text.lines().last().unwrap_or_default().to_string();
    let pass = bad.is_empty() && near_violation && elapsed < Duration::from_secs(300);
    verdict(
        1,
        "Table-1 reproduction",
        pass,
        &format!(
            "max |z| vs quadrature {worst_exact:.2}, max pooled |z| vs reference {worst_ref:.2} (limit 4); \
             cells off: {bad:?}; (0.1,0.01) within noise of 0.009: {near_violation}; {}; runtime {:.1}s",
            within.trim_start_matches("# summary: "),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_endpoint_identities() {
    let mut worst: f64 = 0.0;
    for line in include_str!("fixtures/endpoints.csv").lines().skip(1) {
        let v: Vec<&str> = line.split(',').collect();
        let n: u64 = v[0].parse().unwrap();
        let alpha: f64 = v[1].parse().unwrap();
        let (rho0, rho1): (f64, f64) = (v[2].parse().unwrap(), v[3].parse().unwrap());
        let f0 = h_exact(&ModelConfig::bonferroni(n, alpha, 0.0).unwrap(), &quad())
            .unwrap()
            .fwer;
        let f1 = h_exact(&ModelConfig::bonferroni(n, alpha, 1.0).unwrap(), &quad())
            .unwrap()
            .fwer;
        let e0 = ((f0 - rho0) / rho0).abs();
        let e1 = ((f1 - rho1) / rho1).abs();
        println!("n {n} alpha {alpha}: rel err rho=0 {e0:.2e}, rho=1 {e1:.2e}");
        worst = worst.max(e0).max(e1);
    }
    verdict(
        2,
        "endpoint identities",
        worst <= 1e-12,
        &format!("max relative error {worst:.2e} (limit 1e-12) over 9 (n, alpha) pairs"),
    );
}

#[test]
fn criterion_03_derivative_gate() {
    let tol = |v: f64| 1e-5f64.max(1e-2 * v.abs());
    let mut worst_prime: f64 = 0.0;
    let mut worst_second: f64 = 0.0;
    let mut worst_alternative: f64 = 0.0;
    for n in [100u64, 10_000] {
        for alpha in [0.05, 0.4] {
            for rho in [0.2, 0.35, 0.5, 0.65, 0.8] {
                let c = ModelConfig::bonferroni(n, alpha, rho).unwrap();
                let hp = h_prime(&c, &quad()).unwrap().value;
                let s1 = 1e-4;
                let fd1 = (h(n, alpha, rho + s1) - h(n, alpha, rho - s1)) / (2.0 * s1);
                let s2 = 1e-3;
                let fd2 = (h(n, alpha, rho + s2) - 2.0 * h(n, alpha, rho) + h(n, alpha, rho - s2))
                    / (s2 * s2);
                let hs = h_second(&c, &quad()).unwrap().total;
                let alt = h_second_with_form(&c, &quad(), AForm::TailWeighted)
                    .unwrap()
                    .total;
                println!("n {n} alpha {alpha} rho {rho}: H' {hp:.6e} fd {fd1:.6e}; H'' {hs:.6e} fd {fd2:.6e}; tail-weighted {alt:.6e}");
                worst_prime = worst_prime.max((hp - fd1).abs() / tol(fd1));
                worst_second = worst_second.max((hs - fd2).abs() / tol(fd2));
                worst_alternative = worst_alternative.max((alt - fd2).abs() / tol(fd2));
            }
        }
    }
    verdict(
        3,
        "derivative gate",
        worst_prime <= 1.0 && worst_second <= 1.0,
        &format!(
            "worst |analytic - fd| / tolerance: H' {worst_prime:.3}, H'' {worst_second:.3} (limit 1); \
             tail-weighted a-form reaches {worst_alternative:.1} and is rejected"
        ),
    );
}

#[test]
fn criterion_04_convexity() {
    let mut violations = Vec::new();
    let mut max_h2 = f64::NEG_INFINITY;
    for alpha in GRID_ALPHA {
        for rho in grid_rho() {
            let s = h_second(
                &ModelConfig::bonferroni(10_000, alpha, rho).unwrap(),
                &quad(),
            )
            .unwrap();
            println!(
                "alpha {alpha} rho {rho}: H'' {:.6e} (quadrature error {:.1e})",
                s.total, s.quad_error_estimate
            );
            max_h2 = max_h2.max(s.total);
            if s.total > s.quad_error_estimate {
                violations.push(format!("({alpha},{rho}): {:.3e}", s.total));
            }
        }
    }
    verdict(
        4,
        "convexity at n = 10^4",
        violations.is_empty(),
        &format!(
            "{} of 36 grid points have H'' above the quadrature error; max H'' {max_h2:.3e}; positive at {violations:?}",
            violations.len()
        ),
    );
}

#[test]
fn criterion_05_bound_dominance() {
    let n = 10_000;
    let mut violations = Vec::new();
    let mut min_slack_line = f64::INFINITY;
    let mut min_slack_simplified = f64::INFINITY;
    for alpha in GRID_ALPHA {
        for rho in grid_rho() {
            let c = ModelConfig::bonferroni(n, alpha, rho).unwrap();
            let f = h_exact(&c, &quad()).unwrap().fwer;
            let l = line_bound(rho, n, c.alpha_n()).unwrap();
            let s = simplified_bound(rho, n, c.alpha_n()).unwrap().value;
            println!("alpha {alpha} rho {rho}: fwer {f:.6e} line {l:.6e} (slack {:.3e}) simplified {s:.6e} (slack {:.3e})", l - f, s - l);
            min_slack_line = min_slack_line.min(l - f);
            min_slack_simplified = min_slack_simplified.min(s - l);
            if f > l || l > s {
                violations.push(format!("({alpha},{rho}): fwer-line {:+.2e}", f - l));
            }
        }
    }
    verdict(
        5,
        "bound dominance",
        violations.is_empty(),
        &format!(
            "min slack line - fwer {min_slack_line:.3e}, simplified - line {min_slack_simplified:.3e}; \
             {} violations {violations:?}",
            violations.len()
        ),
    );
}

#[test]
fn criterion_06_lemma_ladder() {
    let mut notes = Vec::new();
    let mut pass = true;
    for (rho, alpha) in [(0.5, 0.05), (0.3, 0.1)] {
        let rows = lemma_ladder(&[100, 1_000, 10_000], alpha, rho, &quad()).unwrap();
        let strictly_down = |v: Vec<f64>| v.windows(2).all(|w| w[1] < w[0]);
        let t2: Vec<f64> = rows.iter().map(|r| r.term2.abs()).collect();
        let t3: Vec<f64> = rows.iter().map(|r| r.term3.abs()).collect();
        let res: Vec<f64> = rows.iter().map(|r| r.lemma2_residual).collect();
        println!("rho {rho} alpha {alpha}: |term2| {t2:?} |term3| {t3:?} residual {res:?}");
        let flags = [
            strictly_down(t2.clone()),
            strictly_down(t3.clone()),
            strictly_down(res.clone()),
        ];
        pass &= flags.iter().all(|&f| f);
        notes.push(format!(
            "({rho},{alpha}) |term2| {} |term3| {} residual {}",
            fmt_seq(&t2, flags[0]),
            fmt_seq(&t3, flags[1]),
            fmt_seq(&res, flags[2])
        ));
    }
    verdict(6, "lemma ladder n = 10^2..10^4", pass, &notes.join("; "));
}

fn fmt_seq(v: &[f64], decreasing: bool) -> String {
    let s: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!(
        "[{}]{}",
        s.join(" "),
        if decreasing { "" } else { " not decreasing" }
    )
}

#[test]
fn criterion_07_asymptotic_diagnostics() {
    let ladder = [1_000u64, 10_000, 100_000, 1_000_000, 10_000_000];
    let rows = asymptotic_diagnostics(&ladder, 0.05, 0.5).unwrap();
    for r in &rows {
        println!(
            "n {}: c {:.6} c^2/log n {:.4} mills {:.6} z0 {:.6} z0+cT {:+.6} z0+c*sqrt(rho)*T {:+.6}",
            r.n, r.cutoff, r.cutoff_sq_over_log_n, r.mills_ratio, r.z0, r.z0_plus_c_t, r.z0_plus_c_sqrt_rho_t
        );
    }
    let ratio: Vec<f64> = rows.iter().map(|r| r.cutoff_sq_over_log_n).collect();
    let bracket = ratio.iter().all(|&x| (1.0..=3.0).contains(&x));
    let gap: Vec<f64> = rows.iter().map(|r| r.z0_plus_c_t.abs()).collect();
    let gap_down = gap.windows(2).all(|w| w[1] < w[0]);
    let mills: Vec<f64> = rows.iter().map(|r| r.mills_ratio).collect();
    let mills_up = mills.windows(2).all(|w| w[1] > w[0]) && mills.iter().all(|&m| m < 1.0);
    let mills_final = *mills.last().unwrap();
    let pass = bracket && gap_down && mills_up && mills_final > 0.99;
    verdict(
        7,
        "asymptotic diagnostics (rho 0.5, alpha 0.05)",
        pass,
        &format!(
            "c^2/log n in [{:.3}, {:.3}] bracket [1,3] {bracket}; |z0+cT| {} ; Mills {} increasing {mills_up}, \
             at 10^7 {mills_final:.4} > 0.99 {}",
            ratio.iter().cloned().fold(f64::INFINITY, f64::min),
            ratio.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            fmt_seq(&gap, gap_down),
            fmt_seq(&mills, mills_up),
            mills_final > 0.99
        ),
    );
}

#[test]
fn criterion_08_mc_determinism() {
    let dir = std::env::temp_dir().join(format!("fwer-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut files = Vec::new();
    let mut slowest = Duration::ZERO;
    for (k, streams) in ["1", "1", "8", "8"].iter().enumerate() {
        let path = dir.join(format!("run{k}.csv"));
        let start = Instant::now();
        let o = fwer_bin(&[
            "simulate",
            "--n",
            "10000",
            "--alpha",
            "0.05",
            "--rho",
            "0.5",
            "--reps",
            "10000",
            "--seed",
            "42",
            "--streams",
            streams,
            "--out",
            path.to_str().unwrap(),
        ]);
        slowest = slowest.max(start.elapsed());
        assert_eq!(o.status.code(), Some(0));
        files.push(std::fs::read(&path).unwrap());
    }
    let identical = files.windows(2).all(|w| w[0] == w[1]);
    verdict(
        8,
        "MC determinism",
        identical && slowest < Duration::from_secs(60),
        &format!(
            "4 runs (streams 1,1,8,8) byte-identical {identical}; slowest run {:.2}s (limit 60s)",
            slowest.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_09_brute_force_equivalence() {
    let mut mismatches = 0;
    let mut exceedances = Vec::new();
    for (rho, alpha) in [(0.5, 0.05), (0.0, 0.5), (0.9, 0.5)] {
        let c = ModelConfig::bonferroni(10, alpha, rho).unwrap();
        let mut hits = 0;
        for r in 0..10_000 {
            let fast = replication_exceeds(&c, 777, r);
            mismatches += usize::from(fast != replication_exceeds_full(&c, 777, r));
            hits += usize::from(fast);
        }
        exceedances.push(format!("({rho},{alpha}): {hits}"));
    }
    verdict(
        9,
        "brute-force equivalence at n = 10",
        mismatches == 0,
        &format!("{mismatches} mismatching flags over 3 x 10^4 replications; exceedances {exceedances:?}"),
    );
}

#[test]
fn criterion_10_special_functions() {
    let mut worst_tail: f64 = 0.0;
    let mut points = 0;
    for line in include_str!("fixtures/normal_tail.csv").lines().skip(1) {
        let (x, q) = line.split_once(',').unwrap();
        let (x, q): (f64, f64) = (x.parse().unwrap(), q.parse().unwrap());
        worst_tail = worst_tail.max(((std_normal_sf(x) - q) / q).abs());
        points += 1;
    }
    let mut worst_round: f64 = 0.0;
    let mut probes: Vec<f64> = (1..=300).map(|k| 10f64.powf(-(k as f64))).collect();
    probes.extend((1..1000).map(|k| k as f64 / 1000.0));
    probes.extend((1..=15).map(|k| 1.0 - 10f64.powf(-(k as f64))));
    for &p in &probes {
        let x = std_normal_quantile(p).unwrap();
        worst_round = worst_round.max((std_normal_cdf(x) - p).abs() / p.max(1.0 - p));
        if p < 0.5 {
            // upper-tail variant keeps relative precision of tiny masses
            let u = std_normal_upper_quantile(p).unwrap();
            worst_round = worst_round.max((std_normal_sf(u) - p).abs() / p);
        }
    }
    let pass = worst_tail <= 1e-12 && worst_round <= 1e-12;
    verdict(
        10,
        "special-function accuracy",
        pass,
        &format!(
            "upper tail max rel error {worst_tail:.2e} over {points} points on [0, 38]; \
             quantile round-trip max scaled error {worst_round:.2e} over {} probes (limits 1e-12)",
            probes.len()
        ),
    );
}
