#![no_main]

use libfuzzer_sys::fuzz_target;
use mixtrack::features::{decode_displacement_field, encode_displacement_field, jacobian_stats, JacobianMode, VoxelMask};

fuzz_target!(|data: &[u8]| {
    if let Ok(field) = decode_displacement_field(data) {
        // Every component came from an f32, so re-encoding is lossless.
        assert_eq!(encode_displacement_field(&field).unwrap(), data);
        let grid = *field.grid();
        if grid.len() <= 1 << 16 {
            let mask = VoxelMask::from_fn(grid, |_, _, _| true);
            let _ = jacobian_stats(&field, &mask, JacobianMode::Determinant);
        }
    }
});
