mod common;

use ltadapt::feature_store::{l2_normalize, read_pack, write_pack, FeaturePack, PackKind};
use ltadapt::rng::Rng;
use ltadapt::Error;
use proptest::prelude::*;

fn bytes_of(pack: &FeaturePack) -> Vec<u8> {
    let mut out = Vec::new();
    write_pack(pack, &mut out).unwrap();
    out
}

/// Payload bytes laid out by hand: features as f32 LE, then labels as u32 LE.
fn expected_payload(pack: &FeaturePack) -> Vec<u8> {
    let mut out = Vec::new();
    for v in &pack.features {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    for l in &pack.labels {
        out.extend_from_slice(&[*l as u8, (*l >> 8) as u8, (*l >> 16) as u8, (*l >> 24) as u8]);
    }
    out
}

#[test]
fn hundred_random_packs_round_trip_byte_identically() {
    let mut rng = Rng::new(2024);
    for _ in 0..100 {
        let pack = common::random_image_pack(&mut rng);
        let bytes = bytes_of(&pack);
        assert_eq!(&bytes[..4], b"CNDP");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + header_len]).unwrap();
        assert_eq!(header["count"], pack.labels.len());
        assert_eq!(header["dim"], pack.dim);
        assert_eq!(header["num_classes"], pack.class_names.len());
        assert_eq!(&bytes[12 + header_len..], expected_payload(&pack).as_slice());

        let back = read_pack(bytes.as_slice()).unwrap();
        assert_eq!(back, pack);
        assert_eq!(bytes_of(&back), bytes);
    }
}

fn sample_bytes() -> Vec<u8> {
    bytes_of(&common::random_image_pack(&mut Rng::new(5)))
}

fn format_offset(err: Error) -> (u64, String) {
    match err {
        Error::Format { offset, message } => (offset, message),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn bad_magic_is_a_format_error_at_offset_zero() {
    let mut bytes = sample_bytes();
    bytes[..4].copy_from_slice(b"XXXX");
    let (offset, _) = format_offset(read_pack(bytes.as_slice()).unwrap_err());
    assert_eq!(offset, 0);
}

#[test]
fn unsupported_version_is_rejected() {
    let mut bytes = sample_bytes();
    bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
    let (offset, message) = format_offset(read_pack(bytes.as_slice()).unwrap_err());
    assert_eq!(offset, 4);
    assert!(message.contains("version"));
}

#[test]
fn truncated_payload_names_expected_and_actual_length() {
    let bytes = sample_bytes();
    let cut = &bytes[..bytes.len() - 6];
    let (_, message) = format_offset(read_pack(cut).unwrap_err());
    assert!(message.contains("expected"), "{message}");
    assert!(message.contains(&format!("found {}", {
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        cut.len() - 12 - header_len
    })));
}

#[test]
fn trailing_bytes_and_oversized_header_length_are_rejected() {
    let mut extra = sample_bytes();
    extra.extend_from_slice(&[0, 0, 0, 0]);
    format_offset(read_pack(extra.as_slice()).unwrap_err());

    let mut long = sample_bytes();
    long[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
    format_offset(read_pack(long.as_slice()).unwrap_err());

    format_offset(read_pack(&b"CND"[..]).unwrap_err());
}

#[test]
fn label_out_of_range_is_a_validation_error_on_write() {
    let mut pack = common::random_image_pack(&mut Rng::new(9));
    pack.labels[0] = pack.class_names.len() as u32;
    let err = write_pack(&pack, Vec::new()).unwrap_err();
    assert!(matches!(err, Error::Validation { field: "labels", .. }), "{err:?}");
}

#[test]
fn text_pack_requires_one_row_per_class_in_order() {
    let mut pack = common::random_image_pack(&mut Rng::new(3));
    let k = pack.class_names.len();
    pack.kind = PackKind::Text;
    pack.features.truncate(k * pack.dim);
    pack.labels = (0..k as u32).collect();
    assert!(pack.validate().is_ok());
    pack.labels.swap(0, 1);
    assert!(pack.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_any_seed(seed in any::<u64>()) {
        let pack = common::random_image_pack(&mut Rng::new(seed));
        let bytes = bytes_of(&pack);
        let back = read_pack(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &pack);
    }

    #[test]
    fn normalization_gives_unit_rows_and_is_idempotent(seed in any::<u64>()) {
        let pack = common::random_image_pack(&mut Rng::new(seed));
        let once = l2_normalize(&pack).unwrap();
        prop_assert!(once.normalized);
        prop_assert_eq!(&once.labels, &pack.labels);
        for i in 0..once.labels.len() {
            let n: f64 = once.row(i).iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-5);
        }
        let twice = l2_normalize(&once).unwrap();
        for (a, b) in once.features.iter().zip(&twice.features) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn single_byte_corruption_never_panics(seed in any::<u64>(), pos in any::<usize>(), byte in any::<u8>()) {
        let mut bytes = bytes_of(&common::random_image_pack(&mut Rng::new(seed)));
        let p = pos % bytes.len();
        bytes[p] = byte;
        let _ = read_pack(bytes.as_slice());
    }
}
