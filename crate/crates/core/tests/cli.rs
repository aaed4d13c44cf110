use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use paired_ate::cli::fmt12;
use paired_ate::simulation::{simulate_dataset, ModelSpec};
use paired_ate::{estimate, AdjustmentKind, AdjustmentSpec, PsiSource};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paired-ate"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_is_deterministic_and_reports_every_kind() {
    let args = [
        "simulate", "--model", "3", "--pairs", "30", "--reps", "25", "--seed", "9",
    ];
    let a = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&run(&args)));
    let text = stdout(&a);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("model_id,n,delta,kind,replications,rejection_rate,mean_se,se_reduction_pct")
    );
    let kinds: Vec<&str> = lines.map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(kinds, ["unadjusted", "naive", "naive2", "pfe", "refit"]);
}

#[test]
fn simulate_thread_count_does_not_change_output() {
    let base = ["simulate", "--model", "12", "--pairs", "20", "--reps", "6"];
    let one = run(&[&base[..], &["--threads", "1"]].concat());
    let two = run(&[&base[..], &["--threads", "2"]].concat());
    assert_eq!(stdout(&one), stdout(&two));
}

#[test]
fn simulate_rejects_unknown_model() {
    assert_eq!(run(&["simulate", "--model", "99"]).status.code(), Some(2));
    assert_eq!(
        run(&["simulate", "--model", "1", "--pairs", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn match_assign_pairs_nearest_units() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "u.csv", "unit_id,a\nu1,0\nu2,10\nu3,1\nu4,11\n");
    let out = run(&["match-assign", "--data", &data, "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert!(err.contains("mean_within_pair_dist_r1=1 "), "{err}");
    let text = stdout(&out);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let pair_of = |id: &str| rows.iter().find(|r| r[0] == id).unwrap()[1];
    assert_eq!(pair_of("u1"), pair_of("u3"));
    assert_eq!(pair_of("u2"), pair_of("u4"));
    assert_ne!(pair_of("u1"), pair_of("u2"));
    for pair in ["1", "2"] {
        let treated: u32 = rows
            .iter()
            .filter(|r| r[1] == pair)
            .map(|r| r[3].parse::<u32>().unwrap())
            .sum();
        assert_eq!(treated, 1);
    }
    assert_eq!(text, stdout(&run(&["match-assign", "--data", &data, "--seed", "3"])));
}

#[test]
fn match_assign_rejects_odd_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "u.csv", "unit_id,a\nu1,0\nu2,10\nu3,1\n");
    assert_eq!(run(&["match-assign", "--data", &data]).status.code(), Some(1));
}

const HAND: &str = "pair,y,d,x,w\np1,3,1,0,1\np1,1,0,0,2\np2,5,1,1,0\np2,3,0,1,4\n";

#[test]
fn analyze_hand_example() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "e.csv", HAND);
    let out = run(&[
        "analyze",
        "--data",
        &data,
        "--outcome",
        "y",
        "--treatment",
        "d",
        "--pair-id",
        "pair",
        "--x",
        "x",
        "--methods",
        "unadjusted",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "unadjusted");
    assert_eq!(row[1], "2");
    assert_eq!(row[9], "2");
}

#[test]
fn analyze_json_matches_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "e.csv", HAND);
    let base = [
        "analyze",
        "--data",
        &data,
        "--outcome",
        "y",
        "--treatment",
        "d",
        "--pair-id",
        "pair",
        "--x",
        "x",
    ];
    let out = run(&[&base[..], &["--format", "json", "--methods", "unadjusted"]].concat());
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v[0]["method"], "unadjusted");
    assert_eq!(v[0]["delta_hat"], 2.0);
}

#[test]
fn analyze_usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "e.csv", HAND);
    let base = [
        "analyze",
        "--data",
        &data,
        "--treatment",
        "d",
        "--pair-id",
        "pair",
        "--x",
        "x",
    ];
    let code = |extra: &[&str]| run(&[&base[..], extra].concat()).status.code();
    assert_eq!(code(&["--outcome", "nope"]), Some(2));
    assert_eq!(code(&["--outcome", "y", "--methods", "magic"]), Some(2));
    assert_eq!(code(&["--outcome", "y", "--methods", "pfe"]), Some(2));
    assert_eq!(code(&["--outcome", "y", "--w", "x"]), Some(2));
    let bad = write(dir.path(), "bad.csv", "pair,y,d,x\np1,3,1,0\np1,1,1,0\n");
    let out = run(&[
        "analyze",
        "--data",
        &bad,
        "--outcome",
        "y",
        "--treatment",
        "d",
        "--pair-id",
        "pair",
        "--x",
        "x",
        "--methods",
        "unadjusted",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("p1"));
}

#[test]
fn dumped_simulation_reanalyzes_to_library_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("sim.csv");
    let dump = dump.to_str().unwrap();
    let sim = run(&[
        "simulate",
        "--model",
        "7",
        "--pairs",
        "40",
        "--reps",
        "1",
        "--seed",
        "5",
        "--dump-data",
        dump,
    ]);
    assert_eq!(sim.status.code(), Some(0));
    let out = run(&[
        "analyze",
        "--data",
        dump,
        "--outcome",
        "y",
        "--treatment",
        "d",
        "--pair-id",
        "pair_id",
        "--x",
        "x1,x2",
        "--w",
        "w1,w2",
        "--methods",
        "unadjusted,naive,pfe,int_pfe,refit",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let data = simulate_dataset(&ModelSpec::new(7, 40, 0.0, 5).unwrap(), 0).unwrap();
    let kinds = [
        AdjustmentKind::Unadjusted,
        AdjustmentKind::Naive,
        AdjustmentKind::Pfe,
        AdjustmentKind::IntPfe,
        AdjustmentKind::Refit,
    ];
    let text = stdout(&out);
    for (line, kind) in text.lines().skip(1).zip(kinds) {
        let psi = if kind.is_lasso() { PsiSource::XW } else { PsiSource::W };
        let r = estimate(&data, &AdjustmentSpec::new(kind, psi), 0.05, 0.0).unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], kind.name());
        assert_eq!(fields[1], fmt12(r.delta_hat), "{kind}");
        assert_eq!(fields[2], fmt12(r.std_error), "{kind}");
    }
}
