use std::path::Path;
use std::process::{Command, Output};

use nonconf_core::harness::StudyResult;
use nonconf_core::{build_structured_square, uniform_refine};

fn nonconf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nonconf")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("study.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out/bih");
    let cfg = write_config(
        dir.path(),
        &format!(
            "name = \"bih\"\nproblem = \"biharmonic\"\nscheme = \"morley\"\nmesh = \"square\"\nlevels = [1, 3]\n\
             solution = \"sin2\"\noutput = {:?}\n",
            out.to_str().unwrap()
        ),
    );
    let o = nonconf(&["run", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    let json = std::fs::read_to_string(out.with_extension("json")).unwrap();
    let a = StudyResult::from_csv(&csv).unwrap();
    let b = StudyResult::from_json(&json).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.levels.len(), 3);
    assert!(a.levels.iter().all(|l| l.newton_iterations == 0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("rate energy_pw"));
}

#[test]
fn compare_on_small_levels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    let cfg = write_config(
        dir.path(),
        &format!(
            "name = \"cmp\"\nproblem = \"navier_stokes\"\nscheme = \"morley\"\nmesh = \"square\"\nlevels = [1, 2]\n\
             solution = \"sin2\"\noutput = {:?}\n",
            out.to_str().unwrap()
        ),
    );
    let o = nonconf(&["compare", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    assert!(csv.starts_with("level,h_max,morley,dg,c0ip,oscillation,interpolation"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn config_errors_are_classified() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "name = \"x\"\nproblem = \"navier_stokes\"\nscheme = \"morley\"\nmesh = \"square\"\nlevels = [3, 2]\nsolution = \"sin2\"\n",
    );
    let o = nonconf(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[config]"), "{}", stderr(&o));

    let cfg = write_config(
        dir.path(),
        "name = \"x\"\nproblem = \"navier_stokes\"\nscheme = \"hermite\"\nmesh = \"square\"\nlevels = [1, 2]\nsolution = \"sin2\"\n",
    );
    let o = nonconf(&["run", "--config", &cfg]);
    assert!(stderr(&o).starts_with("error[config]"), "{}", stderr(&o));

    let o = nonconf(&["run", "--config", "/nonexistent/study.toml"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error[io]"));
}

#[test]
fn mesh_info_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("square.mesh");
    let m = uniform_refine(&build_structured_square(2).unwrap());
    m.save(&path).unwrap();
    let o = nonconf(&["mesh-info", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("triangles       32"), "{text}");
    assert!(text.contains(&m.hash()));

    std::fs::write(&path, "not a mesh\n").unwrap();
    let o = nonconf(&["mesh-info", path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error[mesh]"), "{}", stderr(&o));
}
