use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn taxomap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taxomap")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TAXONOMY: &str = "\
01\tlive animals
01.1\tlive horses
01.2\tlive cattle
02\tmeat of bovine animals
02.1\tfresh beef
02.2\tfrozen beef
";

fn write_config(dir: &Path, extra: &str) -> String {
    fs::write(dir.join("src.tsv"), TAXONOMY).unwrap();
    fs::write(dir.join("tgt.tsv"), TAXONOMY).unwrap();
    let cfg = format!(
        "seed = 1\nout_dir = \"out\"\n[source]\ntaxonomy = \"src.tsv\"\nscheme = \"dotted\"\n\
         [target]\ntaxonomy = \"tgt.tsv\"\nscheme = \"dotted\"\n{extra}"
    );
    let path = dir.join("pipeline.toml");
    fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = taxomap(&["--config", "/definitely/not/here.toml", "run"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/definitely/not/here.toml"), "{}", stderr(&o));
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(taxomap(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(taxomap(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_taxonomy_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[match]\nmethod = \"string\"\n");
    fs::write(dir.path().join("src.tsv"), "01\tok\nnot a code\tbroken\n").unwrap();
    let o = taxomap(&["--config", &cfg, "ingest"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("src.tsv"));
}

#[test]
fn rank_deficient_whitening_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let codes = ["01", "01.1", "01.2", "02", "02.1", "02.2"];
    let mut vecs = format!("{} 3\n", codes.len());
    for (i, c) in codes.iter().enumerate() {
        // last column is constant zero
        vecs.push_str(&format!("{c} {} {} 0\n", i as f64 + 1.0, (i * i) as f64 * 0.5 - 1.0));
    }
    fs::write(dir.path().join("src.vec"), &vecs).unwrap();
    fs::write(dir.path().join("tgt.vec"), &vecs).unwrap();
    fs::write(dir.path().join("seed.tsv"), codes.map(|c| format!("{c}\t{c}\n")).concat()).unwrap();
    let cfg = write_config(
        dir.path(),
        "[vectors]\nsource = \"category\"\n[align]\nmethod = \"procrustes\"\ndictionary = \"seed.tsv\"\n\
         whitening = true\nnormalization = []\n",
    );
    let text = fs::read_to_string(&cfg).unwrap();
    let text = text
        .replace("scheme = \"dotted\"\n[target]", "scheme = \"dotted\"\nvectors = \"src.vec\"\n[target]")
        .replace("taxonomy = \"tgt.tsv\"\nscheme = \"dotted\"\n", "taxonomy = \"tgt.tsv\"\nscheme = \"dotted\"\nvectors = \"tgt.vec\"\n");
    fs::write(&cfg, text).unwrap();
    let o = taxomap(&["--config", &cfg, "align"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn string_run_writes_matches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[match]\nmethod = \"string\"\n");
    let out = dir.path().join("elsewhere");
    let o = taxomap(&["--config", &cfg, "--out", out.to_str().unwrap(), "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let matches = fs::read_to_string(out.join("matches.tsv")).unwrap();
    assert!(matches.starts_with("# manifest=manifest.json"));
    assert!(matches.contains("02.2\t02.2"), "{matches}");
    assert!(out.join("manifest.json").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn fisher_on_a_table() {
    let o = taxomap(&["eval", "fisher", "--table", "48,183,126,105"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let p: f64 = stdout.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(p < 0.001, "{stdout}");
}
