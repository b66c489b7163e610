//! Golden files written by `fixtures/make_fixtures.py` with Python's `struct`.

use std::fs;
use std::path::PathBuf;

use nand_core::binio::FormatError;
use nand_core::detectors::ProjectionSpec;
use nand_core::embedding::{decode_embedding_file, encode_embedding_file, read_embedding_file};
use nand_core::map::{load_external_map, AnomalyMap, MapError};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn bytes(name: &str) -> Vec<u8> {
    fs::read(fixture(name)).unwrap()
}

#[test]
fn naeb_golden_decodes_and_reencodes_identically() {
    let raw = bytes("tiny.naeb");
    let set = decode_embedding_file(&raw).unwrap();
    assert_eq!(set.image_id(), "fixture/0");
    assert_eq!(set.layers().len(), 2);
    let l0 = &set.layers()[0];
    assert_eq!((l0.height(), l0.width(), l0.dim()), (2, 3, 4));
    assert_eq!(l0.patch(0, 0), &[-1.0, -0.875, -0.75, -0.625]);
    assert_eq!(l0.patch(1, 2), &[1.5, 1.625, 1.75, 1.875]);
    assert_eq!(set.layers()[1].patch(0, 0), &[0.5, -0.25]);
    assert_eq!(set.global().unwrap().as_slice(), &[1.0, 2.0, -3.5]);
    assert_eq!(encode_embedding_file(&set).unwrap(), raw);
    assert_eq!(read_embedding_file(fixture("tiny.naeb")).unwrap(), set);
}

#[test]
fn naam_golden_roundtrip() {
    let raw = bytes("tiny.naam");
    let map = load_external_map(fixture("tiny.naam")).unwrap();
    assert_eq!(map.size(), (2, 3));
    assert_eq!(map.scores(), &[0.0, 0.25, 0.5, 0.75, 1.0, 1.5]);
    assert_eq!(map.get(1, 2), 1.5);
    assert_eq!(map.to_bytes().unwrap(), raw);
}

#[test]
fn napj_golden_roundtrip() {
    let raw = bytes("tiny.napj");
    let spec = ProjectionSpec::from_bytes(&raw).unwrap();
    assert!(spec.for_layer(0).is_none());
    let a = spec.for_layer(1).unwrap();
    assert_eq!((a.in_dim(), a.out_dim()), (3, 2));
    // [1 0 -1; .5 .5 .5]·[2 4 6] + [.125 -2]
    assert_eq!(a.apply(&[2.0, 4.0, 6.0]).unwrap(), vec![-3.875, 4.0]);
    assert_eq!(spec.to_bytes().unwrap(), raw);
}

fn naeb_err(name: &str) -> FormatError {
    decode_embedding_file(&bytes(name)).unwrap_err()
}

fn naam_err(name: &str) -> FormatError {
    match AnomalyMap::from_bytes(&bytes(name), "external") {
        Err(MapError::Format(e)) => e,
        other => panic!("{name}: expected a format error, got {other:?}"),
    }
}

fn napj_err(name: &str) -> FormatError {
    ProjectionSpec::from_bytes(&bytes(name)).unwrap_err()
}

#[test]
fn corrupted_fixtures_have_distinct_categories() {
    for err in [naeb_err("bad_magic.naeb"), naam_err("bad_magic.naam"), napj_err("bad_magic.napj")] {
        assert!(matches!(err, FormatError::BadMagic { .. }), "{err}");
    }
    for err in [naeb_err("truncated.naeb"), naam_err("truncated.naam"), napj_err("truncated.napj")] {
        assert!(matches!(err, FormatError::Truncated { .. }), "{err}");
    }
    for err in [naeb_err("trailing.naeb"), naam_err("trailing.naam"), napj_err("trailing.napj")] {
        assert!(matches!(err, FormatError::DimensionMismatch(_)), "{err}");
    }
}

#[test]
fn bad_magic_message_names_the_problem() {
    assert!(naeb_err("bad_magic.naeb").to_string().starts_with("bad magic"));
    assert!(naeb_err("truncated.naeb").to_string().starts_with("truncated payload"));
}

#[test]
fn version_bump_is_rejected() {
    let mut raw = bytes("tiny.naeb");
    raw[4] = 2;
    assert!(matches!(
        decode_embedding_file(&raw),
        Err(FormatError::VersionMismatch { expected: 1, found: 2 })
    ));
}
