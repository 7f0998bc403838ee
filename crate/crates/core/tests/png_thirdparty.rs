//! Decodes PNG fixtures produced by an independent third-party encoder
//! (Pillow). Pixel values follow a fixed formula, committed alongside
//! the bytes. The fixtures cover fixed-Huffman and dynamic-Huffman
//! deflate blocks; the stored-block path is exercised by this crate's
//! own encoder.

use aeolab::data::png_decode;

fn formula_pixel(x: usize, y: usize) -> [u8; 3] {
    [
        ((x * 37 + y * 11) % 256) as u8,
        ((x * 5 + y * 79) % 256) as u8,
        ((x * 97 + y * 3) % 256) as u8,
    ]
}

fn check_formula_image(bytes: &[u8], width: usize, height: usize) {
    let img = png_decode(bytes).expect("fixture should decode");
    assert_eq!(img.width(), width);
    assert_eq!(img.height(), height);
    assert_eq!(img.channels(), 3);
    for y in 0..height {
        for x in 0..width {
            let base = (y * width + x) * 3;
            let got = &img.samples()[base..base + 3];
            assert_eq!(got, formula_pixel(x, y), "pixel ({x},{y})");
        }
    }
}

#[test]
fn decodes_pillow_fixed_huffman_fixture() {
    check_formula_image(include_bytes!("fixtures/reference_rgb.png"), 16, 11);
}

#[test]
fn decodes_pillow_dynamic_huffman_fixture() {
    check_formula_image(include_bytes!("fixtures/reference_dynamic.png"), 48, 32);
}

#[test]
fn decodes_pillow_uniform_fixture() {
    let img = png_decode(include_bytes!("fixtures/reference_small.png")).unwrap();
    assert_eq!((img.width(), img.height()), (4, 3));
    assert!(img.samples().chunks(3).all(|p| p == [10, 200, 30]));
}
