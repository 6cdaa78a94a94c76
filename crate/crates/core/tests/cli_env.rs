use condflow::cli::{run, OUT_DIR_ENV};

#[test]
fn output_directory_override() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("elsewhere");
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[world]\nlatent_dim = 5\nattr_dim = 2\n[data]\nsize = 3\n[output]\ndir = \"unused\"\n").unwrap();
    // Single test in this binary, so the variable cannot race with others.
    std::env::set_var(OUT_DIR_ENV, &target);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(["condflow", "gen-data", "--config", cfg.to_str().unwrap()], &mut out, &mut err);
    std::env::remove_var(OUT_DIR_ENV);
    assert_eq!(code, 0, "{}", String::from_utf8_lossy(&err));
    assert!(target.join("dataset.cfds").exists());
    assert!(!dir.path().join("unused").exists());
}
