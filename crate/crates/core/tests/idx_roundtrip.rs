use proptest::prelude::*;

use uda_calib::data::{load_idx, load_idx_labels, parse_idx};
use uda_calib::Error;

/// Test-only IDX writer for unsigned-byte payloads.
fn write_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

fn shaped() -> impl Strategy<Value = (Vec<usize>, Vec<u8>)> {
    prop::collection::vec(1usize..6, 1..4).prop_flat_map(|dims| {
        let n: usize = dims.iter().product();
        (Just(dims), prop::collection::vec(any::<u8>(), n))
    })
}

proptest! {
    #[test]
    fn parse_inverts_writer((dims, data) in shaped()) {
        let arr = parse_idx(&write_idx(&dims, &data)).unwrap();
        prop_assert_eq!(&arr.dims, &dims);
        prop_assert_eq!(&arr.data, &data);
    }

    #[test]
    fn file_round_trip((dims, data) in shaped()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.idx");
        std::fs::write(&path, write_idx(&dims, &data)).unwrap();
        let t = load_idx(&path).unwrap();
        prop_assert_eq!(t.shape(), &dims[..]);
        let back: Vec<u8> = t.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn truncated_files_are_format_errors((dims, data) in shaped(), cut in 1usize..8) {
        let bytes = write_idx(&dims, &data);
        let short = &bytes[..bytes.len().saturating_sub(cut)];
        prop_assert!(
            matches!(parse_idx(short), Err(Error::Format { .. })),
            "cutting {} bytes was accepted",
            cut
        );
    }
}

#[test]
fn label_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("labels.idx");
    std::fs::write(&path, write_idx(&[5], &[3, 0, 9, 1, 1])).unwrap();
    assert_eq!(load_idx_labels(&path).unwrap(), vec![3, 0, 9, 1, 1]);

    std::fs::write(&path, write_idx(&[1, 5], &[3, 0, 9, 1, 1])).unwrap();
    assert!(matches!(load_idx_labels(&path), Err(Error::Format { .. })));
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_idx(dir.path().join("absent")), Err(Error::Io { .. })));
}
