use std::path::Path;

use fisheripm::harness::emit_plots;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

// Set UPDATE_GOLDEN=1 to rewrite the expected files after a deliberate change.
#[test]
fn metrics_panels_match_golden_svg() {
    let dir = tempfile::tempdir().unwrap();
    let written = emit_plots(&Path::new(FIXTURES).join("metrics.csv"), dir.path()).unwrap();
    assert!(!written.is_empty());
    let golden = Path::new(FIXTURES).join("golden");
    for path in written {
        let name = path.file_name().unwrap();
        let got = std::fs::read(&path).unwrap();
        let want_path = golden.join(name);
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::create_dir_all(&golden).unwrap();
            std::fs::write(&want_path, &got).unwrap();
            continue;
        }
        let want =
            std::fs::read(&want_path).unwrap_or_else(|_| panic!("missing {}", want_path.display()));
        assert!(
            got == want,
            "{} differs from golden output",
            name.to_string_lossy()
        );
    }
}

#[test]
fn plots_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let csv = Path::new(FIXTURES).join("metrics.csv");
    let wa = emit_plots(&csv, a.path()).unwrap();
    let wb = emit_plots(&csv, b.path()).unwrap();
    for (x, y) in wa.iter().zip(&wb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}
