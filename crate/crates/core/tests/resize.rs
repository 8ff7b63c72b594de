mod common;

use cafcn::eval::{test_size, test_width_exact, TEST_HEIGHT};
use common::is_nearest;

#[test]
fn resize_rule_is_exact_over_the_full_grid() {
    for h in 16..=128usize {
        for w in 16..=1024usize {
            let (wt, wide) = test_width_exact(h, w);
            assert_eq!(wide, w > 4 * h, "{h}x{w}");
            if wide {
                assert!(is_nearest(wt, (w * 64) as u128, h as u128), "{h}x{w}: {wt}");
            } else {
                assert_eq!(wt, 256.0, "{h}x{w}");
            }
            // nearest multiple of 8 with halves rounded up
            let (p, q) = if wide { (w * 64, h) } else { (256, 1) };
            let expected = ((2 * p + 8 * q) / (16 * q)).max(1) * 8;
            assert_eq!(test_size(h, w), (TEST_HEIGHT, expected), "{h}x{w}");
        }
    }
}

#[test]
fn resize_examples() {
    assert_eq!(test_size(32, 100), (64, 256));
    assert_eq!(test_size(32, 128), (64, 256));
    assert_eq!(test_size(32, 129), (64, 256));
    assert_eq!(test_size(20, 300), (64, 960));
    assert_eq!(test_size(64, 1024), (64, 1024));
}
