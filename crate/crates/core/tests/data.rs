use caglow::autodiff::{Real, Tensor};
use caglow::data::{
    check_attribute, dequantize, gen_glyphs, gen_toy2d, glyph_templates, load_idx, read_idx_images, read_idx_labels,
    render_glyph, write_idx_images, write_idx_labels, GlyphInstance, IdxImages, GLYPH_ATTRIBUTES,
};
use caglow::{Dataset, Error, SeedStream};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn synthetic_idx(count: usize, rows: usize, cols: usize, seed: u64) -> IdxImages {
    let mut state = seed;
    let pixels = (0..count * rows * cols)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 56) as u8
        })
        .collect();
    IdxImages { count, rows, cols, pixels }
}

#[test]
fn toy2d_empty_and_deterministic() {
    let (empty, _) = gen_toy2d(SeedStream::new(4), 5, 0);
    assert_eq!(empty.len(), 0);
    let (a, _) = gen_toy2d(SeedStream::new(4), 5, 300);
    let (b, _) = gen_toy2d(SeedStream::new(4), 5, 300);
    assert_eq!(a, b);
    let (c, _) = gen_toy2d(SeedStream::new(5), 5, 300);
    assert_ne!(a.x, c.x);
}

#[test]
fn glyphs_same_seed_same_bits() {
    let attrs = ["thick", "invert", "frame"];
    let a = gen_glyphs(SeedStream::new(9), 6, &attrs, 200, 14).unwrap();
    let b = gen_glyphs(SeedStream::new(9), 6, &attrs, 200, 14).unwrap();
    let bits = |d: &Dataset| d.x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.identities, b.identities);
    assert_eq!(a.attributes, b.attributes);
}

#[test]
fn same_instance_renders_identically() {
    let t = glyph_templates(3).unwrap();
    let inst = GlyphInstance::from_stream(SeedStream::new(17), 16);
    let a = render_glyph(&t[2], &GLYPH_ATTRIBUTES, &[1, 0, 1], inst, 16);
    let b = render_glyph(&t[2], &GLYPH_ATTRIBUTES, &[1, 0, 1], inst, 16);
    assert_eq!(a, b);
}

#[test]
fn inversion_mirrors_mean_pixel() {
    let templates = glyph_templates(20).unwrap();
    for (k, t) in templates.iter().enumerate() {
        let inst = GlyphInstance::from_stream(SeedStream::new(100 + k as u64), 14);
        let plain = render_glyph(t, &GLYPH_ATTRIBUTES, &[0, 0, 1], inst, 14);
        let inv = render_glyph(t, &GLYPH_ATTRIBUTES, &[0, 1, 1], inst, 14);
        let mean = |v: &[Real]| v.iter().sum::<Real>() / v.len() as Real;
        assert!((mean(&inv) - (1.0 - mean(&plain))).abs() <= 1.0 / 255.0, "template {k}");
    }
}

#[test]
fn checker_agrees_with_every_generated_label() {
    for size in [8, 14, 16] {
        let d = gen_glyphs(SeedStream::new(size as u64), 20, &GLYPH_ATTRIBUTES, 1500, size).unwrap();
        for i in 0..d.len() {
            for (a, name) in GLYPH_ATTRIBUTES.iter().enumerate() {
                let got = check_attribute(d.x.row(i), size, name).unwrap();
                assert_eq!(got, d.attribute_row(i)[a] == 1, "size {size} sample {i} attribute {name}");
            }
        }
    }
}

#[test]
fn glyph_pixels_are_8bit_levels_in_unit_range() {
    let d = gen_glyphs(SeedStream::new(2), 20, &GLYPH_ATTRIBUTES, 100, 14).unwrap();
    assert!(d.quantized);
    for &v in d.x.data() {
        assert!((0.0..=1.0).contains(&v));
        assert_eq!((v * 255.0).round() / 255.0, v);
    }
}

#[test]
fn unknown_glyph_attribute_is_rejected() {
    let err = gen_glyphs(SeedStream::new(0), 4, &["thick", "bold"], 10, 14).unwrap_err();
    assert!(matches!(err, Error::UnknownAttribute(ref a) if a == "bold"));
    assert!(gen_glyphs(SeedStream::new(0), 4, &["thick"], 10, 12).is_err());
}

#[test]
fn idx_roundtrip_is_bit_identical() {
    let img = synthetic_idx(7, 5, 3, 11);
    let bytes = write_idx_images(&img);
    assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
    assert_eq!(bytes.len(), 16 + 7 * 15);
    let back = read_idx_images(&bytes).unwrap();
    assert_eq!(back, img);
    assert_eq!(write_idx_images(&back), bytes);

    let labels: Vec<u8> = (0..7).map(|i| (i * 3 % 10) as u8).collect();
    let lb = write_idx_labels(&labels);
    assert_eq!(&lb[..8], &[0, 0, 8, 1, 0, 0, 0, 7]);
    assert_eq!(read_idx_labels(&lb).unwrap(), labels);
}

#[test]
fn idx_errors_carry_offsets() {
    let mut bytes = write_idx_images(&synthetic_idx(2, 2, 2, 1));
    bytes[2] = 9;
    match read_idx_images(&bytes) {
        Err(Error::Parse { offset, message }) => {
            assert_eq!(offset, 0);
            assert!(message.contains("magic"), "{message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    let good = write_idx_images(&synthetic_idx(2, 2, 2, 1));
    assert!(matches!(read_idx_images(&good[..10]), Err(Error::Parse { offset: 10, .. })));
    let mut long = good.clone();
    long.push(0);
    assert!(matches!(read_idx_images(&long), Err(Error::Parse { offset: 24, .. })));
}

#[test]
fn load_idx_scales_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = synthetic_idx(4, 28, 28, 3);
    img.pixels[0] = 255;
    img.pixels[1] = 0;
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    std::fs::write(&ip, write_idx_images(&img)).unwrap();
    std::fs::write(&lp, write_idx_labels(&[3, 1, 4, 1])).unwrap();

    let full = load_idx(&ip, &lp, None).unwrap();
    assert_eq!(full.x.shape(), &[4, 784]);
    assert_eq!(full.x.data()[0], 1.0);
    assert_eq!(full.x.data()[1], 0.0);
    for (v, p) in full.x.data().iter().zip(&img.pixels) {
        assert_eq!(*v, *p as Real / 255.0);
    }
    assert_eq!(full.identities, vec![3, 1, 4, 1]);
    assert_eq!(full.num_identities, 10);
    assert_eq!(full.num_attributes(), 0);

    let small = load_idx(&ip, &lp, Some(14)).unwrap();
    assert_eq!(small.x.shape(), &[4, 196]);
    let px = |r: usize, c: usize| img.pixels[r * 28 + c] as Real / 255.0;
    let block = (px(0, 0) + px(0, 1) + px(1, 0) + px(1, 1)) / 4.0;
    assert!((small.x.data()[0] - block).abs() <= 0.5 / 255.0 + 1e-12);

    std::fs::write(&lp, write_idx_labels(&[1, 2])).unwrap();
    assert!(matches!(load_idx(&ip, &lp, None), Err(Error::Parse { .. })));
}

#[test]
fn load_idx_header_only_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
    std::fs::write(&ip, write_idx_images(&synthetic_idx(0, 28, 28, 0))).unwrap();
    std::fs::write(&lp, write_idx_labels(&[])).unwrap();
    assert!(load_idx(&ip, &lp, Some(14)).unwrap().is_empty());
}

#[test]
fn dataset_cache_roundtrip() {
    let d = gen_glyphs(SeedStream::new(6), 5, &["thick", "frame"], 40, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("glyphs.ckpt");
    d.save_cache(&p, 6).unwrap();
    assert_eq!(Dataset::load_cache(&p).unwrap(), d);

    let (t, _) = gen_toy2d(SeedStream::new(1), 3, 25);
    assert_eq!(Dataset::from_checkpoint(&t.to_checkpoint(1)).unwrap(), t);
}

#[test]
fn dequantize_expectation() {
    let x = Tensor::new(vec![1, 3], vec![0.0, 100.0 / 255.0, 1.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 20_000;
    let mut sums = [0.0; 3];
    for _ in 0..n {
        let y = dequantize(&x, &mut rng);
        for (s, v) in sums.iter_mut().zip(y.data()) {
            *s += v;
        }
    }
    // u ~ U[0,1) has standard deviation 1/sqrt(12); the mean shrinks it by 256·sqrt(n)
    let se = (1.0 / 12.0f64).sqrt() / 256.0 / (n as Real).sqrt();
    for (s, v) in sums.iter().zip(x.data()) {
        let expected = (255.0 * v + 0.5) / 256.0;
        assert!((s / n as Real - expected).abs() < 5.0 * se);
    }
}

proptest! {
    #[test]
    fn dequantize_stays_in_level_cell(levels in prop::collection::vec(0u8..=255, 1..40), seed in any::<u64>()) {
        let x = Tensor::new(vec![1, levels.len()], levels.iter().map(|&l| l as Real / 255.0).collect()).unwrap();
        let y = dequantize(&x, &mut ChaCha8Rng::seed_from_u64(seed));
        for (&l, &v) in levels.iter().zip(y.data()) {
            prop_assert!(v < 1.0 && v >= 0.0);
            prop_assert!(v >= l as Real / 256.0 - 1e-12 && v < (l as Real + 1.0) / 256.0);
        }
    }

    #[test]
    fn idx_labels_roundtrip(labels in prop::collection::vec(any::<u8>(), 0..200)) {
        prop_assert_eq!(read_idx_labels(&write_idx_labels(&labels)).unwrap(), labels);
    }
}
