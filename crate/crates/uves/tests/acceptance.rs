//! End-to-end acceptance runs. Each test re-derives one stage of the
//! worked design study, prints its pass/fail line, and asserts the
//! stated tolerance and runtime.

use uves::pipeline::{cmd_reproduce_paper, study, AcceptanceMatrix, EXIT_OK};

#[test]
fn criterion_1_synthesis_reproduction() {
    let (outcome, design) = study::criterion_synthesis(None).unwrap();
    println!("{}", outcome.line());
    assert!(outcome.pass, "{}", outcome.details);
    assert!(outcome.elapsed_s < 5.0, "took {:.2} s", outcome.elapsed_s);
    assert!(design.rho.unwrap() > 0.0);
}

#[test]
fn criterion_2_average_reaching_bound() {
    let (_, design) = study::criterion_synthesis(None).unwrap();
    let outcome = study::criterion_average_reaching(&design, None).unwrap();
    println!("{}", outcome.line());
    assert!(outcome.pass, "{}", outcome.details);
    assert!(outcome.elapsed_s < 5.0, "took {:.2} s", outcome.elapsed_s);
}

#[test]
fn criterion_3_full_loop_convergence() {
    let gain = study::sim_gain().unwrap();
    let outcome = study::criterion_full_convergence(&gain.k, None).unwrap();
    println!("{}", outcome.line());
    assert!(outcome.pass, "{}", outcome.details);
    assert!(outcome.elapsed_s < 30.0, "took {:.2} s", outcome.elapsed_s);
}

#[test]
fn criterion_4_averaging_order() {
    let gain = study::sim_gain().unwrap();
    let outcome = study::criterion_averaging_order(&gain.k, None).unwrap();
    println!("{}", outcome.line());
    assert!(outcome.pass, "{}", outcome.details);
}

#[test]
fn criterion_5_dither_identities() {
    let outcome = study::criterion_dither_identities().unwrap();
    println!("{}", outcome.line());
    assert!(outcome.pass, "{}", outcome.details);
    assert!(outcome.elapsed_s < 1.0, "took {:.2} s", outcome.elapsed_s);
}

#[test]
fn criterion_6_scalar_oracle_equivalence() {
    let outcome = study::criterion_scalar_oracle().unwrap();
    println!("{}", outcome.line());
    assert!(outcome.pass, "{}", outcome.details);
    assert!(outcome.elapsed_s < 5.0, "took {:.2} s", outcome.elapsed_s);
}

#[test]
fn full_bundle_passes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let code = cmd_reproduce_paper(Some(dir.path())).unwrap();
    assert!(start.elapsed().as_secs_f64() < 60.0);
    assert_eq!(code, EXIT_OK);

    let read = |name: &str| std::fs::read_to_string(dir.path().join(name)).unwrap();
    let matrix: AcceptanceMatrix = serde_json::from_str(&read("acceptance_matrix.json")).unwrap();
    assert!(matrix.pass);
    assert_eq!(matrix.criteria.len(), 6);
    for c in &matrix.criteria {
        println!("{}", c.line());
        assert!(c.pass, "{}", c.details);
    }

    // Stage artifacts exist and carry verifier margins.
    let report = read("synthesis_report.json");
    assert!(report.contains("\"margin\""));
    assert!(read("printed_gain_diagnostic.json").contains("\"within_tolerance\": true"));
    let gaps = read("averaging_gaps.json");
    assert!(gaps.contains("40.0"));
    for seed in 0..3 {
        let trace = read(&format!("trace_full_seed{seed}.csv"));
        assert!(trace.starts_with("t,theta_hat_1"));
    }

    // A second run differs only in volatile timestamp headers.
    let first = read("reaching_times.json");
    let dir2 = tempfile::tempdir().unwrap();
    assert_eq!(cmd_reproduce_paper(Some(dir2.path())).unwrap(), EXIT_OK);
    let second = std::fs::read_to_string(dir2.path().join("reaching_times.json")).unwrap();
    assert_eq!(first, second);
}
