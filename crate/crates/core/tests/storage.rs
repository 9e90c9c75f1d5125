//! SCTR files and CSV exports seen from the outside.

use ndarray::Array2;
use proptest::prelude::*;
use scawb_core::cpa_engine::correlate_position;
use scawb_core::leakage_sim::{default_config, random_plaintexts, synthesize};
use scawb_core::trace_store::{
    decode, encode, export_surface_csv, read_trace_file, write_trace_file, StoreError, HEADER_LEN,
};
use scawb_core::{Channel, TraceSet};

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::POSITIVE | prop::num::f64::NEGATIVE | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL
}

fn trace_sets() -> impl Strategy<Value = TraceSet> {
    (1usize..6, 1usize..12, any::<bool>(), any::<bool>()).prop_flat_map(|(m, s, power, keyed)| {
        (
            prop::collection::vec(finite(), m * s),
            prop::collection::vec(any::<[u8; 16]>(), m),
            any::<[u8; 16]>(),
            finite(),
            finite(),
            any::<u32>(),
        )
            .prop_map(move |(values, plaintexts, key, start, step, reps)| {
                TraceSet::new(
                    if power { Channel::Power } else { Channel::Impedance },
                    Array2::from_shape_vec((m, s), values).unwrap(),
                    start,
                    step,
                    plaintexts,
                    keyed.then_some(key),
                    reps,
                    String::new(),
                )
                .unwrap()
            })
    })
}

fn bits(set: &TraceSet) -> Vec<u64> {
    set.samples().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn files_round_trip_bit_exactly(set in trace_sets()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sctr");
        write_trace_file(&set, &path).unwrap();
        let back = read_trace_file(&path).unwrap();
        prop_assert_eq!(bits(&back), bits(&set));
        prop_assert_eq!(back.axis_start().to_bits(), set.axis_start().to_bits());
        prop_assert_eq!(back.axis_step().to_bits(), set.axis_step().to_bits());
        prop_assert_eq!(back.plaintexts(), set.plaintexts());
        prop_assert_eq!(back.true_key(), set.true_key());
        prop_assert_eq!(back.repetitions(), set.repetitions());
        prop_assert_eq!(back.channel(), set.channel());
        // and the bytes themselves are stable
        prop_assert_eq!(encode(&back).unwrap(), std::fs::read(&path).unwrap());
    }

    #[test]
    fn size_follows_from_header(set in trace_sets()) {
        let bytes = encode(&set).unwrap();
        let key = if set.true_key().is_some() { 16 } else { 0 };
        let expected = HEADER_LEN + set.trace_count() * (8 * set.sample_count() + 16) + key;
        prop_assert_eq!(bytes.len(), expected);
    }

    #[test]
    fn every_shortened_buffer_is_rejected(set in trace_sets(), cut in 1usize..64) {
        let bytes = encode(&set).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode(&bytes[..keep]).is_err());
        let mut longer = bytes.clone();
        longer.extend(std::iter::repeat_n(0u8, cut));
        let is_length_mismatch = matches!(decode(&longer), Err(StoreError::LengthMismatch { .. }));
        prop_assert!(is_length_mismatch);
    }
}

#[test]
fn simulated_set_survives_file_round_trip() {
    let cfg = default_config(Channel::Impedance).with_sample_count(500);
    let set = synthesize(&cfg, &random_plaintexts(64, 2), &[0x11; 16]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("z.sctr");
    write_trace_file(&set, &path).unwrap();
    assert_eq!(read_trace_file(&path).unwrap(), set.with_provenance(""));
}

#[test]
fn surface_export_round_trips_through_text() {
    let cfg = default_config(Channel::Power).with_sample_count(30);
    let set = synthesize(&cfg, &random_plaintexts(40, 3), &[0x42; 16]).unwrap();
    let surface = correlate_position(&set, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    export_surface_csv(&surface, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 31);
    assert_eq!(header[2].parse::<f64>().unwrap(), surface.axis_value(1));
    for (g, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], format!("0x{g:02X}"));
        for (s, cell) in cells[1..].iter().enumerate() {
            let v: f64 = cell.parse().unwrap();
            assert_eq!(v.to_bits(), surface.values()[[g, s]].to_bits());
        }
    }
}
