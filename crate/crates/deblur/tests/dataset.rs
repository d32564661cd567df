mod support;

use std::collections::BTreeSet;
use std::fs;

use deblur::dataset::{scan_pairs, Layout};
use deblur::CliError;
use support::{quantized_image, synthetic_tree, write_ppm};

#[test]
fn orphans_are_reported_not_paired() {
    let dir = tempfile::tempdir().unwrap();
    let root = synthetic_tree(dir.path(), 3, 8, 1);
    write_ppm(&root.join("blur/zz_orphan.ppm"), &quantized_image(8, 8, 2));
    fs::write(root.join("sharp/notes.txt"), "ignored").unwrap();
    let ds = scan_pairs(&root, &Layout::ParallelDirs).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.warnings.len(), 1);
    assert!(ds.warnings[0].contains("zz_orphan"));
    let ids: Vec<&str> = ds.pairs.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["p0", "p1", "p2"]);
    assert_eq!(ds.load().unwrap().len(), 3);
}

#[test]
fn ordering_and_checksum_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for name in ["b", "c10", "a", "c2"] {
        write_ppm(&root.join("blur").join(format!("{name}.ppm")), &quantized_image(4, 4, 0));
        write_ppm(&root.join("sharp").join(format!("{name}.ppm")), &quantized_image(4, 4, 1));
    }
    let first = scan_pairs(root, &Layout::ParallelDirs).unwrap();
    let second = scan_pairs(root, &Layout::ParallelDirs).unwrap();
    assert_eq!(first, second);
    let ids: Vec<&str> = first.pairs.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c10", "c2"]);
    assert_eq!(first.checksum.len(), 64);
    write_ppm(&root.join("blur/d.ppm"), &quantized_image(4, 4, 0));
    write_ppm(&root.join("sharp/d.ppm"), &quantized_image(4, 4, 0));
    assert_ne!(scan_pairs(root, &Layout::ParallelDirs).unwrap().checksum, first.checksum);
}

#[test]
fn manifest_resolves_absolute_and_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let root = synthetic_tree(dir.path(), 2, 8, 3);
    let abs_blur = root.join("blur/p1.ppm");
    let abs_sharp = root.join("sharp/p1.ppm");
    let manifest = root.join("list.tsv");
    fs::write(
        &manifest,
        format!(
            "# id\tblur\tsharp\nsecond\t{}\t{}\n\nfirst\tblur/p0.ppm\tsharp/p0.ppm\n",
            abs_blur.display(),
            abs_sharp.display()
        ),
    )
    .unwrap();
    let ds = scan_pairs(&root, &Layout::Manifest(manifest)).unwrap();
    assert_eq!(ds.pairs[0].id, "first");
    assert_eq!(ds.pairs[0].blur, root.join("blur/p0.ppm"));
    assert_eq!(ds.pairs[1].id, "second");
    assert_eq!(ds.pairs[1].sharp, abs_sharp);
}

#[test]
fn manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    let root = synthetic_tree(dir.path(), 1, 8, 4);
    let m = root.join("m.tsv");
    for (text, needle) in [
        ("a\tblur/p0.ppm\n", "expected id"),
        ("a\tblur/p0.ppm\tsharp/missing.ppm\n", "missing.ppm"),
        ("a\tblur/p0.ppm\tsharp/p0.ppm\na\tblur/p0.ppm\tsharp/p0.ppm\n", "duplicate"),
    ] {
        fs::write(&m, text).unwrap();
        let err = scan_pairs(&root, &Layout::Manifest(m.clone())).unwrap_err();
        assert!(matches!(err, CliError::Data(_)));
        assert!(err.to_string().contains(needle), "{err}");
    }
}

#[test]
fn empty_missing_and_mismatched_sets_fail() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let err = scan_pairs(root, &Layout::ParallelDirs).unwrap_err();
    assert!(err.to_string().contains("blur"), "{err}");
    fs::create_dir_all(root.join("blur")).unwrap();
    fs::create_dir_all(root.join("sharp")).unwrap();
    assert!(scan_pairs(root, &Layout::ParallelDirs).unwrap_err().to_string().contains("no image pairs"));
    write_ppm(&root.join("blur/x.ppm"), &quantized_image(4, 6, 0));
    write_ppm(&root.join("sharp/x.ppm"), &quantized_image(4, 5, 0));
    let err = scan_pairs(root, &Layout::ParallelDirs).unwrap_err();
    assert!(err.to_string().contains("6x4") && err.to_string().contains("5x4"), "{err}");
}

#[test]
fn split_holds_out_listed_ids() {
    let dir = tempfile::tempdir().unwrap();
    let root = synthetic_tree(dir.path(), 4, 8, 5);
    let ds = scan_pairs(&root, &Layout::ParallelDirs).unwrap();
    let held: BTreeSet<String> = ["p1".to_string(), "p3".to_string()].into();
    let (train, val) = ds.clone().split(&held).unwrap();
    let ids = |d: &deblur::dataset::PairedDataset| d.pairs.iter().map(|p| p.id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&train), ["p0", "p2"]);
    assert_eq!(ids(&val), ["p1", "p3"]);
    let unknown: BTreeSet<String> = ["nope".to_string()].into();
    assert!(ds.split(&unknown).is_err());
}
