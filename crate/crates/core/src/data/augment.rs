use rand::Rng as _;
use rand::RngCore;

pub const MAX_SHIFT: i32 = 4;

/// Mirrors each row of an `h x w x c` image.
pub fn flip_horizontal(img: &[f32], h: usize, w: usize, c: usize) -> Vec<f32> {
    let mut out = vec![0.0; img.len()];
    for y in 0..h {
        for x in 0..w {
            let src = (y * w + (w - 1 - x)) * c;
            let dst = (y * w + x) * c;
            out[dst..dst + c].copy_from_slice(&img[src..src + c]);
        }
    }
    out
}

/// Translates content by `(dx, dy)`; positive `dx` moves it right, positive
/// `dy` down. Vacated pixels are zero.
pub fn shift(img: &[f32], h: usize, w: usize, c: usize, dx: i32, dy: i32) -> Vec<f32> {
    let mut out = vec![0.0; img.len()];
    for y in 0..h as i32 {
        let sy = y - dy;
        if sy < 0 || sy >= h as i32 {
            continue;
        }
        for x in 0..w as i32 {
            let sx = x - dx;
            if sx < 0 || sx >= w as i32 {
                continue;
            }
            let src = (sy as usize * w + sx as usize) * c;
            let dst = (y as usize * w + x as usize) * c;
            out[dst..dst + c].copy_from_slice(&img[src..src + c]);
        }
    }
    out
}

/// Random horizontal flip (probability 1/2) followed by a shift with `dx`, `dy`
/// uniform in `[-4, 4]`.
pub fn augment(img: &[f32], h: usize, w: usize, c: usize, rng: &mut impl RngCore) -> Vec<f32> {
    let flip = rng.random_bool(0.5);
    let dx = rng.random_range(-MAX_SHIFT..=MAX_SHIFT);
    let dy = rng.random_range(-MAX_SHIFT..=MAX_SHIFT);
    let base = if flip {
        flip_horizontal(img, h, w, c)
    } else {
        img.to_vec()
    };
    shift(&base, h, w, c, dx, dy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::Rng;

    fn img() -> Vec<f32> {
        (0..8 * 8 * 3).map(|k| k as f32 + 1.0).collect()
    }

    #[test]
    fn zero_shift_is_identity() {
        assert_eq!(shift(&img(), 8, 8, 3, 0, 0), img());
    }

    #[test]
    fn positive_dx_clears_left_columns() {
        let out = shift(&img(), 8, 8, 3, 4, 0);
        for y in 0..8 {
            for x in 0..8 {
                let px = &out[(y * 8 + x) * 3..(y * 8 + x) * 3 + 3];
                if x < 4 {
                    assert!(px.iter().all(|&v| v == 0.0));
                } else {
                    assert_eq!(px, &img()[(y * 8 + x - 4) * 3..(y * 8 + x - 4) * 3 + 3]);
                }
            }
        }
    }

    #[test]
    fn double_flip_is_identity() {
        assert_eq!(flip_horizontal(&flip_horizontal(&img(), 8, 8, 3), 8, 8, 3), img());
    }

    #[test]
    fn augmentation_keeps_shape_and_range() {
        let src = img();
        let mut rng = Rng::new(1).stream(0);
        for _ in 0..200 {
            let out = augment(&src, 8, 8, 3, &mut rng);
            assert_eq!(out.len(), src.len());
            assert!(out.iter().all(|v| *v == 0.0 || src.contains(v)));
        }
    }
}
