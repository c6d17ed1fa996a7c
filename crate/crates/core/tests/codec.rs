//! Codec and fragmentation properties over generated frames.

use std::collections::HashSet;

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::sample::Index;

use dualmesh::protocol::{
    decode_frame, encode_frame, fragment_message, BleFrame, Frame, NodeId, Radio, Reassembler, Reassembly,
    BLE_MAX_FRAME, LORA_MAX_FRAME, MAX_FRAGMENTS, MAX_MESSAGE_PAYLOAD,
};
use dualmesh::time::SimTime;

mod common;
use common::{frame, BATCH};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn every_frame_round_trips(frames in vec(frame(), BATCH)) {
        for f in &frames {
            let bytes = encode_frame(f).unwrap();
            match f.radio() {
                Radio::Ble => prop_assert!(bytes.len() <= BLE_MAX_FRAME, "{} B BLE frame", bytes.len()),
                Radio::Lora => prop_assert!(bytes.len() <= LORA_MAX_FRAME),
            }
            if let Frame::Lora(l) = f {
                prop_assert_eq!(bytes.len(), l.encoded_len());
            }
            prop_assert_eq!(&decode_frame(f.radio(), &bytes).unwrap(), f);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(5000))]

    #[test]
    fn decoding_arbitrary_bytes_never_panics(bytes in vec(any::<u8>(), 0..300)) {
        for radio in [Radio::Ble, Radio::Lora] {
            if let Ok(f) = decode_frame(radio, &bytes) {
                prop_assert_eq!(encode_frame(&f).unwrap(), bytes.clone());
            }
        }
    }

    #[test]
    fn truncated_frames_are_rejected(f in frame(), cut in any::<Index>()) {
        let bytes = encode_frame(&f).unwrap();
        let keep = cut.index(bytes.len());
        prop_assert!(decode_frame(f.radio(), &bytes[..keep]).is_err());
    }

    #[test]
    fn reassembly_survives_reordering_and_duplicates(
        payload in vec(any::<u8>(), 1..=MAX_MESSAGE_PAYLOAD),
        order in Just(()).prop_perturb(|_, mut rng| {
            let mut picks: Vec<usize> = (0..64).map(|_| rng.random_range(0..usize::from(MAX_FRAGMENTS))).collect();
            picks.extend(0..usize::from(MAX_FRAGMENTS));
            picks
        }),
        shuffle_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let frags = fragment_message(NodeId(7), NodeId(9), 42, 16, &payload).unwrap();
        let n = frags.len();
        let mut arrivals: Vec<usize> = order.into_iter().map(|k| k % n).collect();
        arrivals.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
        let mut r = Reassembler::new();
        let mut seen = HashSet::new();
        for (step, &k) in arrivals.iter().enumerate() {
            seen.insert(k);
            match r.push(&frags[k], SimTime::from_millis(step as u64)).unwrap() {
                Reassembly::Complete(out) => {
                    prop_assert_eq!(seen.len(), n);
                    prop_assert_eq!(out, payload);
                    return Ok(());
                }
                Reassembly::Pending => prop_assert!(seen.len() < n),
            }
        }
        prop_assert!(false, "message never completed");
    }
}

#[test]
fn maximum_message_fills_eight_fragments() {
    let frags = fragment_message(NodeId(1), NodeId(2), 0, 16, &[0; MAX_MESSAGE_PAYLOAD]).unwrap();
    assert_eq!(frags.len(), 8);
    for f in &frags {
        let bytes = BleFrame::Data(f.clone()).encode().unwrap();
        assert!(bytes.len() <= BLE_MAX_FRAME);
    }
    assert!(fragment_message(NodeId(1), NodeId(2), 0, 16, &[0; MAX_MESSAGE_PAYLOAD + 1]).is_err());
    assert!(fragment_message(NodeId(1), NodeId(2), 0, 16, &[]).is_err());
}
