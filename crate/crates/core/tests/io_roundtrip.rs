use proptest::prelude::*;
use stereo_costvol::io::{
    generate_stereogram, read_kitti_disp_png, read_pfm, write_kitti_disp_png, write_pfm, DisparitySpec,
    StereogramSpec,
};
use stereo_costvol::metrics::EvalMask;
use stereo_costvol::volume::DisparityMap;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pfm_round_trip_is_bitwise(h in 1usize..12, w in 1usize..12, bits in prop::collection::vec(any::<u32>(), 144)) {
        let data: Vec<f32> = bits[..h * w].iter().map(|b| f32::from_bits(*b)).collect();
        let map = DisparityMap::new(h, w, data.clone()).unwrap();
        let back = read_pfm(&write_pfm(&map)).unwrap();
        let got: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!((back.height(), back.width()), (h, w));
    }

    #[test]
    fn kitti_round_trip_with_invalid_pixels(h in 1usize..10, w in 1usize..10, raw in prop::collection::vec(0u16..=u16::MAX, 100)) {
        let raw = &raw[..h * w];
        let map = DisparityMap::new(h, w, raw.iter().map(|&r| r as f32 / 256.0).collect()).unwrap();
        let mask = EvalMask::new(h, w, raw.iter().map(|&r| r != 0).collect()).unwrap();
        let (d, m) = read_kitti_disp_png(&write_kitti_disp_png(&map, &mask).unwrap()).unwrap();
        prop_assert_eq!(d.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), map.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(m, mask);
    }

    #[test]
    fn stereogram_photometric_consistency(seed in any::<u64>(), density in 0.05f32..=1.0, split in 1usize..40) {
        let (h, w) = (6usize, 48usize);
        let map: Vec<u32> = (0..h * w).map(|i| if i % w < split { 3 } else { ((i / w) % 2) as u32 * 7 + 2 }).collect();
        let spec = StereogramSpec { height: h, width: w, disparity: DisparitySpec::Map(map), dot_density: density, seed };
        let s = generate_stereogram(&spec).unwrap();
        for y in 0..h {
            for x in 0..w {
                if s.mask.is_valid(y, x) {
                    let d = s.gt.get(y, x) as usize;
                    prop_assert_eq!(s.left.get(y, x), s.right.get(y, x - d));
                }
            }
        }
        prop_assert_eq!(generate_stereogram(&spec).unwrap(), s);
    }
}

#[test]
fn written_valid_pixels_never_become_invalid() {
    let map = DisparityMap::new(1, 2, vec![0.0, 0.001]).unwrap();
    let mask = EvalMask::all_valid(1, 2);
    let (_, m) = read_kitti_disp_png(&write_kitti_disp_png(&map, &mask).unwrap()).unwrap();
    assert_eq!(m, mask);
}
