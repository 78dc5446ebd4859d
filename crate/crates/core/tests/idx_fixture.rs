//! A four-image 2×2 IDX fixture written by an independent encoder.

use std::path::PathBuf;

use concrete_core::data::{binarize_fixed, encode_idx, load_idx, parse_idx, DataError, BINARIZATION_SEED};

fn fixture(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "tests", "data", name].iter().collect()
}

#[test]
fn images_parse_with_expected_shape_and_pixels() {
    let a = load_idx(&fixture("four_2x2-images-idx3-ubyte")).unwrap();
    assert_eq!(a.dims, vec![4, 2, 2]);
    assert_eq!((a.items(), a.item_len()), (4, 4));
    assert_eq!(&a.data[..4], &[0, 255, 128, 64]);
    assert_eq!(&a.data[12..], &[200, 100, 50, 25]);
}

#[test]
fn labels_parse() {
    let a = load_idx(&fixture("four-labels-idx1-ubyte")).unwrap();
    assert_eq!(a.dims, vec![4]);
    assert_eq!(a.data, vec![3, 1, 4, 1]);
}

#[test]
fn encoder_reproduces_fixture_bytes() {
    for name in ["four_2x2-images-idx3-ubyte", "four-labels-idx1-ubyte"] {
        let bytes = std::fs::read(fixture(name)).unwrap();
        assert_eq!(encode_idx(&parse_idx(&bytes).unwrap()), bytes);
    }
}

#[test]
fn truncated_fixture_reports_offset() {
    let bytes = std::fs::read(fixture("four_2x2-images-idx3-ubyte")).unwrap();
    match parse_idx(&bytes[..20]) {
        Err(DataError::Truncated { offset: 16, expected: 16, found: 4 }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn binarization_respects_saturated_pixels_and_caches() {
    let raw = load_idx(&fixture("four_2x2-images-idx3-ubyte")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("bin.idx");
    let b = binarize_fixed(&raw, BINARIZATION_SEED, Some(&cache)).unwrap();
    assert_eq!((b.rows(), b.cols()), (4, 4));
    // 0 never fires, 255 always does.
    assert_eq!(b.row(0)[0], 0);
    assert_eq!(b.row(0)[1], 1);
    assert_eq!(b.row(1), &[1, 1, 0, 0]);
    assert!(cache.exists());
    let again = binarize_fixed(&raw, BINARIZATION_SEED, Some(&cache)).unwrap();
    assert_eq!(again, b);
    assert_eq!(binarize_fixed(&raw, BINARIZATION_SEED, None).unwrap(), b);
}
