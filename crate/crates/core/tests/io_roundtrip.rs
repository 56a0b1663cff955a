use proptest::prelude::*;
use set2box::baselines::bin::BinSketch;
use set2box::io::{
    embeddings_from_bytes, embeddings_to_bytes, pack_codes, sketches_from_bytes, sketches_to_bytes, unpack_codes,
};
use set2box::EntityEmbeddings;

proptest! {
    #[test]
    fn codes_survive_packing(width in 1u32..=16, raw in prop::collection::vec(any::<u32>(), 0..300)) {
        let codes: Vec<u32> = raw.iter().map(|c| c & ((1u32 << width) - 1)).collect();
        let bytes = pack_codes(&codes, width);
        prop_assert_eq!(bytes.len(), (codes.len() * width as usize).div_ceil(8));
        prop_assert_eq!(unpack_codes(&bytes, width, codes.len()).unwrap(), codes);
    }

    #[test]
    fn sketches_survive_bytes(d in 1usize..200, bits in prop::collection::vec(any::<bool>(), 0..2000)) {
        let sketches: Vec<BinSketch> = bits.chunks(d).filter(|c| c.len() == d).map(BinSketch::from_bits).collect();
        let (d2, back) = sketches_from_bytes(&sketches_to_bytes(d, &sketches)).unwrap();
        prop_assert_eq!(d2, d);
        prop_assert_eq!(back.len(), sketches.len());
        for (a, b) in sketches.iter().zip(&back) {
            prop_assert!((0..d).all(|i| a.get(i) == b.get(i)));
        }
    }
}

#[test]
fn embeddings_round_trip_bit_exactly() {
    let emb = EntityEmbeddings::new(37, 8, 2.0, 11);
    let bytes = embeddings_to_bytes(&emb);
    let back = embeddings_from_bytes(&bytes).unwrap();
    assert_eq!(back.dim(), 8);
    assert_eq!(back.num_entities(), 37);
    assert_eq!(back.beta(), 2.0);
    assert_eq!(back.centers_raw(), emb.centers_raw());
    assert_eq!(back.offsets_raw(), emb.offsets_raw());
    assert_eq!(embeddings_to_bytes(&back), bytes);
}

#[test]
fn truncated_or_mislabelled_bytes_are_rejected() {
    let bytes = embeddings_to_bytes(&EntityEmbeddings::new(5, 4, 1.0, 0));
    for cut in [0, 3, 4, bytes.len() / 2, bytes.len() - 1] {
        assert!(embeddings_from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut wrong = bytes.clone();
    wrong[..4].copy_from_slice(b"S2BQ");
    assert!(embeddings_from_bytes(&wrong).is_err());
    assert!(unpack_codes(&[0u8; 3], 5, 10).is_err());
}
