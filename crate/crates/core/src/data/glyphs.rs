use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{quantize, Dataset};
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::flow::Layout;
use crate::rng::SeedStream;

/// Attribute names understood by [`gen_glyphs`].
pub const GLYPH_ATTRIBUTES: [&str; 3] = ["thick", "invert", "frame"];

const SIZES: [usize; 3] = [8, 14, 16];
const TEMPLATE_SEED: u64 = 0x6779_7068_7320_0001;
/// Pixels farther than this from the background level count as "on".
const ON_THRESHOLD: Real = 0.3;
/// Minimum number of fully-on 2×2 blocks that marks a thick stroke.
const THICK_BLOCKS: usize = 2;

/// Segments between points of a 3×3 lattice: 6 horizontal, 6 vertical, 8 diagonal.
fn segments() -> Vec<((usize, usize), (usize, usize))> {
    let mut s = Vec::with_capacity(20);
    for r in 0..3 {
        for c in 0..2 {
            s.push(((r, c), (r, c + 1)));
            s.push(((c, r), (c + 1, r)));
        }
    }
    for r in 0..2 {
        for c in 0..2 {
            s.push(((r, c), (r + 1, c + 1)));
            s.push(((r, c + 1), (r + 1, c)));
        }
    }
    s
}

/// Per-image nuisance variation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlyphInstance {
    pub shift: (i32, i32),
    pub intensity: Real,
    pub background: Real,
}

const BACKGROUND: Real = 0.1;

impl GlyphInstance {
    pub fn from_stream(stream: SeedStream, size: usize) -> Self {
        let mut rng = stream.rng();
        let s = max_shift(size);
        Self {
            shift: (rng.random_range(-s..=s), rng.random_range(-s..=s)),
            intensity: rng.random_range(0.65..0.9),
            background: BACKGROUND,
        }
    }

    /// Unit-intensity strokes on a zero background.
    pub fn plain() -> Self {
        Self {
            shift: (0, 0),
            intensity: 1.0,
            background: 0.0,
        }
    }
}

fn max_shift(size: usize) -> i32 {
    if size >= 12 {
        1
    } else {
        0
    }
}

fn lattice(size: usize) -> [i32; 3] {
    let s = max_shift(size);
    let lo = 2 + s;
    let hi = size as i32 - 4 - s;
    [lo, (lo + hi) / 2, hi]
}

fn stroke_pixels(template: &[usize], size: usize, shift: (i32, i32)) -> Vec<(i32, i32)> {
    let segs = segments();
    let pos = lattice(size);
    let mut out = Vec::new();
    for &k in template {
        let ((r0, c0), (r1, c1)) = segs[k];
        let (y0, x0) = (pos[r0] + shift.0, pos[c0] + shift.1);
        let (y1, x1) = (pos[r1] + shift.0, pos[c1] + shift.1);
        let steps = (y1 - y0).abs().max((x1 - x0).abs());
        for t in 0..=steps {
            out.push((y0 + (y1 - y0).signum() * t, x0 + (x1 - x0).signum() * t));
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Draws one glyph. `attributes` are flags aligned with `names`.
pub fn render_glyph(
    template: &[usize],
    names: &[&str],
    attributes: &[u8],
    instance: GlyphInstance,
    size: usize,
) -> Vec<Real> {
    let flag = |name: &str| {
        names
            .iter()
            .position(|n| *n == name)
            .is_some_and(|i| attributes[i] != 0)
    };
    let (thick, invert, frame) = (flag("thick"), flag("invert"), flag("frame"));
    let mut img = vec![instance.background; size * size];
    let v = instance.intensity;
    let mut set = |y: i32, x: i32| img[y as usize * size + x as usize] = v;
    for (y, x) in stroke_pixels(template, size, instance.shift) {
        set(y, x);
        if thick {
            set(y, x + 1);
            set(y + 1, x);
            set(y + 1, x + 1);
        }
    }
    if frame {
        for i in 0..size {
            for (y, x) in [(0, i), (size - 1, i), (i, 0), (i, size - 1)] {
                img[y * size + x] = v;
            }
        }
    }
    img.iter()
        .map(|&p| quantize(if invert { 1.0 - p } else { p }))
        .collect()
}

fn fully_on_blocks(on: &[bool], size: usize) -> usize {
    let mut count = 0;
    for y in 1..size - 2 {
        for x in 1..size - 2 {
            let i = y * size + x;
            if on[i] && on[i + 1] && on[i + size] && on[i + size + 1] {
                count += 1;
            }
        }
    }
    count
}

/// Decides an attribute from pixels alone.
pub fn check_attribute(image: &[Real], size: usize, name: &str) -> Result<bool> {
    if image.len() != size * size || size < 6 {
        return Err(Error::InvalidShape(format!("{} pixels for size {size}", image.len())));
    }
    // ring 1 never carries strokes or frame, so it is pure background
    let ring1: Vec<Real> = (1..size - 1)
        .flat_map(|i| [(1, i), (size - 2, i), (i, 1), (i, size - 2)])
        .map(|(y, x)| image[y * size + x])
        .collect();
    let background = ring1.iter().sum::<Real>() / ring1.len() as Real;
    let inverted = background > 0.5;
    let on: Vec<bool> = image.iter().map(|&p| (p - background).abs() > ON_THRESHOLD).collect();
    match name {
        "invert" => Ok(inverted),
        "frame" => {
            let ring0: Vec<bool> = (0..size)
                .flat_map(|i| [(0, i), (size - 1, i), (i, 0), (i, size - 1)])
                .map(|(y, x)| on[y * size + x])
                .collect();
            Ok(ring0.iter().filter(|&&b| b).count() * 2 > ring0.len())
        }
        "thick" => Ok(fully_on_blocks(&on, size) >= THICK_BLOCKS),
        other => Err(Error::UnknownAttribute(other.to_string())),
    }
}

fn template_ok(t: &[usize]) -> bool {
    SIZES.iter().all(|&size| {
        let mask = |thick: u8| {
            let img = render_glyph(t, &["thick"], &[thick], GlyphInstance::plain(), size);
            img.iter().map(|&p| p > ON_THRESHOLD).collect::<Vec<_>>()
        };
        fully_on_blocks(&mask(0), size) == 0 && fully_on_blocks(&mask(1), size) >= 2 * THICK_BLOCKS
    })
}

/// The first `m` base shapes: 3–5 lattice segments each, pairwise differing
/// in at least three segments. Independent of any dataset seed.
pub fn glyph_templates(m: usize) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(TEMPLATE_SEED);
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(m);
    let mut tries = 0;
    while out.len() < m {
        tries += 1;
        if tries > 200_000 {
            return Err(Error::InvalidArgument(format!("cannot build {m} distinct glyph templates")));
        }
        let k = rng.random_range(3..=5);
        let mut t: Vec<usize> = rand::seq::index::sample(&mut rng, 20, k).into_vec();
        t.sort_unstable();
        let hamming = |a: &[usize], b: &[usize]| {
            a.iter().filter(|s| !b.contains(s)).count() + b.iter().filter(|s| !a.contains(s)).count()
        };
        if out.iter().all(|o| hamming(o, &t) >= 3) && template_ok(&t) {
            out.push(t);
        }
    }
    Ok(out)
}

/// `n` procedural glyph images of `size × size` pixels. Identity picks one of
/// `m` templates; each named attribute is an independent fair coin.
pub fn gen_glyphs(stream: SeedStream, m: usize, attrs: &[&str], n: usize, size: usize) -> Result<Dataset> {
    if !SIZES.contains(&size) {
        return Err(Error::InvalidArgument(format!("glyph size {size} not in {SIZES:?}")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("glyphs need at least one identity".into()));
    }
    if let Some(bad) = attrs.iter().find(|a| !GLYPH_ATTRIBUTES.contains(a)) {
        return Err(Error::UnknownAttribute(bad.to_string()));
    }
    let templates = glyph_templates(m)?;
    let mut rng = stream.split("labels").rng();
    let instances = stream.split("instance");
    let l = attrs.len();
    let mut x = Vec::with_capacity(n * size * size);
    let mut ids = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n * l);
    for i in 0..n {
        let id = rng.random_range(0..m);
        let a: Vec<u8> = (0..l).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let inst = GlyphInstance::from_stream(instances.split_index(i as u64), size);
        x.extend(render_glyph(&templates[id], attrs, &a, inst, size));
        ids.push(id);
        flags.extend(a);
    }
    Dataset::new(
        Tensor::new(vec![n, size * size], x)?,
        Layout::image(size, size, 1),
        ids,
        m,
        flags,
        attrs.iter().map(|s| s.to_string()).collect(),
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn there_are_twenty_segments() {
        let s = segments();
        assert_eq!(s.len(), 20);
        let mut d = s.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 20);
    }

    #[test]
    fn strokes_stay_inside_the_background_ring() {
        for size in SIZES {
            let s = max_shift(size);
            let all: Vec<usize> = (0..20).collect();
            for dy in -s..=s {
                for dx in -s..=s {
                    for (y, x) in stroke_pixels(&all, size, (dy, dx)) {
                        // thick strokes extend one pixel right and down
                        assert!(y >= 2 && x >= 2 && y + 1 <= size as i32 - 3 && x + 1 <= size as i32 - 3);
                    }
                }
            }
        }
    }

    #[test]
    fn checker_is_exact_for_every_template_shift_and_flag() {
        let templates = glyph_templates(20).unwrap();
        for size in SIZES {
            let s = max_shift(size);
            for t in &templates {
                for bits in 0..8u8 {
                    let flags = [bits & 1, (bits >> 1) & 1, (bits >> 2) & 1];
                    for dy in -s..=s {
                        for dx in -s..=s {
                            let inst = GlyphInstance {
                                shift: (dy, dx),
                                intensity: 0.65,
                                background: BACKGROUND,
                                ..GlyphInstance::plain()
                            };
                            let img = render_glyph(t, &GLYPH_ATTRIBUTES, &flags, inst, size);
                            for (k, name) in GLYPH_ATTRIBUTES.iter().enumerate() {
                                assert_eq!(check_attribute(&img, size, name).unwrap(), flags[k] == 1, "{name} {t:?}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn unknown_attribute_is_rejected() {
        let err = gen_glyphs(SeedStream::new(0), 4, &["smile"], 5, 14).unwrap_err();
        assert!(matches!(err, Error::UnknownAttribute(a) if a == "smile"));
    }

    #[test]
    fn bad_size_is_rejected() {
        assert!(gen_glyphs(SeedStream::new(0), 4, &[], 5, 12).is_err());
    }
}
