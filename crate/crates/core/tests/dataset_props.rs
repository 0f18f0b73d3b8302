use image::{Rgb, RgbImage};
use proptest::prelude::*;
use trace_core::cor::Point;
use trace_core::dataset::{group_by_length, pad_to_square, LengthItem, DEFAULT_PAD};
use trace_core::mask::MaskImage;

proptest! {
    #[test]
    fn padded_point_names_same_pixel(w in 1u32..80, h in 1u32..80, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let img = RgbImage::from_fn(w, h, |c, r| Rgb([c as u8, r as u8, 1]));
        let padded = pad_to_square(&img, DEFAULT_PAD);
        let p = Point::new(x, y).unwrap();
        let probe = MaskImage::filled(w, h, false).unwrap();
        let (c, r) = probe.pixel_of(p);
        let q = padded.map_point(p);
        let side = MaskImage::filled(padded.side(), padded.side(), false).unwrap();
        prop_assert_eq!(side.pixel_of(q), (c + padded.offset_x, r + padded.offset_y));
        prop_assert_eq!(padded.image.get_pixel(c + padded.offset_x, r + padded.offset_y), img.get_pixel(c, r));
    }

    #[test]
    fn grouping_is_a_permutation(lengths in proptest::collection::vec((0usize..500, any::<bool>()), 0..120), batch in 1usize..16, seed in any::<u64>()) {
        let items: Vec<LengthItem> = lengths.iter().map(|&(length, has_image)| LengthItem { length, has_image }).collect();
        let batches = group_by_length(&items, batch, seed);
        let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..items.len()).collect::<Vec<_>>());
        for b in &batches {
            prop_assert!(!b.is_empty() && b.len() <= batch);
            prop_assert!(b.iter().all(|&i| items[i].has_image == items[b[0]].has_image));
        }
    }
}
