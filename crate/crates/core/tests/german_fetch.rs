use std::path::PathBuf;
use std::process::Command;

use xaistudy::data::{load_dataset, Codebook, Value};

#[test]
fn fetch_script_converts_raw_rows() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../datasets/german_credit");
    let out = tempfile::tempdir().unwrap();
    let status = Command::new("python3")
        .arg(dir.join("fetch.py"))
        .arg("--source")
        .arg(dir.join("sample.data"))
        .arg("--out")
        .arg(out.path())
        .status();
    let Ok(status) = status else {
        eprintln!("python3 not available; skipped");
        return;
    };
    assert!(status.success());

    let written = Codebook::from_path(out.path().join("codebook.json")).unwrap();
    assert_eq!(written, Codebook::from_path(dir.join("codebook.json")).unwrap());
    let ds = load_dataset(out.path().join("german_credit.csv"), out.path().join("codebook.json")).unwrap();
    assert_eq!(ds.instances.len(), 2);
    // First row: A93 is a single male with a good outcome; second: A92, bad.
    assert_eq!(ds.instances.iter().map(|i| i.label).collect::<Vec<_>>(), [1, 0]);
    let sex: Vec<_> = ds.instances.iter().map(|i| i.values["sex"].clone()).collect();
    // Binary codes index the codebook categories: 0 = male, 1 = female.
    assert_eq!(sex, [Value::Number(0.0), Value::Number(1.0)]);
}
