#![no_main]

use libfuzzer_sys::fuzz_target;
use mixtrack::features::{decode_voxel_mask, encode_voxel_mask, tumor_volume};

fuzz_target!(|data: &[u8]| {
    if let Ok(mask) = decode_voxel_mask(data) {
        assert_eq!(encode_voxel_mask(&mask).unwrap(), data);
        let _ = tumor_volume(&mask);
    }
});
